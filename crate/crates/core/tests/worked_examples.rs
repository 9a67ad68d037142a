mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use common::*;
use ldvkit::flowplan::{
    distinctness_check, enumerate_candidates, exact_select, find_routes, overhead_ratio,
    plan_coverage, select_flows, FlowPlan, MonitoringFlow, PlanConfig, PlanError,
};
use ldvkit::ldvsolve::{
    build_system, fitness, least_squares, pso_solve, MeasurementSystem, SwarmConfig,
};
use ldvkit::probesim::{ground_truth_ldv, run_campaign, Campaign, DelayModel};
use ldvkit::rulegen::{compile_plan, rules_per_switch, Addressing, PortMap};
use ldvkit::topology::{parse_json, to_matrices, LinkId, LinkIndex, Topology};

fn five_node() -> Topology {
    parse_json(
        r#"{"nodes":["1","2","3","4","5"],"monitor_nodes":["1"],"links":[
            {"from":"1","to":"2","capacity_bps":1e6},{"from":"1","to":"3","capacity_bps":1e6},
            {"from":"2","to":"4","capacity_bps":1e6},{"from":"3","to":"5","capacity_bps":1e6},
            {"from":"4","to":"5","capacity_bps":1e6}]}"#,
    )
    .unwrap()
}

fn square() -> Topology {
    parse_json(
        r#"{"nodes":["1","2","3","4"],"monitor_nodes":["1"],"links":[
            {"from":"1","to":"2","capacity_bps":1e6},{"from":"2","to":"3","capacity_bps":1e6},
            {"from":"3","to":"4","capacity_bps":1e6},{"from":"4","to":"1","capacity_bps":1e6}]}"#,
    )
    .unwrap()
}

/// Smallest loop length through each targeted link, from the brute-force enumerator.
fn coverage_threshold(topo: &Topology) -> Option<usize> {
    let mut shortest: BTreeMap<LinkId, usize> = BTreeMap::new();
    for &m in topo.monitor_nodes() {
        for len in 1..=topo.node_count() {
            for nodes in brute_force_loops(topo, m, len) {
                for w in nodes.windows(2) {
                    shortest.entry(LinkId::new(w[0], w[1])).or_insert(len);
                    let e = shortest.get_mut(&LinkId::new(w[0], w[1])).unwrap();
                    *e = (*e).min(len);
                }
            }
        }
    }
    topo.targeted_links()
        .iter()
        .map(|l| shortest.get(l).copied())
        .collect::<Option<Vec<_>>>()
        .map(|v| v.into_iter().max().unwrap_or(0))
}

fn full_at(topo: &Topology, len: usize) -> bool {
    plan_coverage(topo, &plan_cfg(len, 1)).unwrap().1.fraction == 1.0
}

#[test]
fn abilene_node_count_matches_raw_file() {
    let raw = std::fs::read_to_string(fixture("Abilene.graphml")).unwrap();
    let declared = raw.matches("<node ").count();
    assert_eq!(declared, 11);
    assert_eq!(abilene().node_count(), declared);
}

#[test]
fn five_node_example_adjacency() {
    let m = to_matrices(&five_node());
    let got: BTreeSet<(usize, usize)> = (0..5)
        .flat_map(|i| m.neighbors(i).map(move |j| (i + 1, j + 1)))
        .collect();
    let want: BTreeSet<(usize, usize)> = [
        (1, 2), (1, 3), (2, 1), (2, 4), (3, 1), (3, 5), (4, 2), (4, 5), (5, 3), (5, 4),
    ]
    .into_iter()
    .collect();
    assert_eq!(got, want);
}

#[test]
fn directed_cycle_has_one_full_loop() {
    let t = parse_json(
        r#"{"directed":true,"nodes":["1","2","3","4"],"monitor_nodes":["1"],"links":[
            {"from":"1","to":"2","capacity_bps":1},{"from":"2","to":"3","capacity_bps":1},
            {"from":"3","to":"4","capacity_bps":1},{"from":"4","to":"1","capacity_bps":1}]}"#,
    )
    .unwrap();
    let m = to_matrices(&t);
    let routes = find_routes(0, 4, &m, &m.link_index);
    assert_eq!(routes.len(), 1);
    assert_eq!(routes[0].nodes(), vec![0, 1, 2, 3, 0]);
    for len in 1..4 {
        assert!(find_routes(0, len, &m, &m.link_index).is_empty());
    }
}

#[test]
fn scenario_two_loop_is_enumerated() {
    let t = load("scenario2/topology.json");
    let m = to_matrices(&t);
    let labels: Vec<Vec<&str>> = find_routes(0, 4, &m, &m.link_index)
        .iter()
        .map(|f| f.nodes().into_iter().map(|n| t.label(n)).collect())
        .collect();
    assert!(labels.contains(&vec!["s1", "s2", "s4", "s3", "s1"]), "{labels:?}");
}

#[test]
fn single_monitor_threshold_matches_enumeration() {
    let base = abilene();
    for monitor in 0..base.node_count() {
        let t = base.with_monitors(vec![monitor]).unwrap();
        let want = coverage_threshold(&t).expect("every link lies on some loop");
        assert!(full_at(&t, want), "monitor {monitor}");
        assert!(!full_at(&t, want - 1), "monitor {monitor}");
    }
    let t = base.with_monitors(vec![0]).unwrap();
    assert_eq!(coverage_threshold(&t), Some(11));
    let (_, report) = plan_coverage(&t, &plan_cfg(9, 1)).unwrap();
    assert!(report.fraction < 1.0);
    let err = select_flows(&t, &plan_cfg(10, 1)).unwrap_err();
    assert!(matches!(err, PlanError::CoverageFailure { ref uncovered, .. } if !uncovered.is_empty()));
}

#[test]
fn five_monitor_placement_covers_within_five_hops() {
    let t = abilene().with_monitors(vec![0, 1, 2, 3, 7]).unwrap();
    assert!(coverage_threshold(&t).unwrap() <= 5);
    assert!(full_at(&t, 5));
}

fn scenario_one_plan() -> (Topology, FlowPlan) {
    let t = load("scenario1/topology.json");
    let flows = vec![
        MonitoringFlow::from_nodes(0, &[0, 1, 3], 1),
        MonitoringFlow::from_nodes(1, &[0, 2, 3], 2),
    ];
    let plan = FlowPlan::new(
        t.labels().to_vec(),
        LinkIndex::new(t.targeted_links().to_vec()),
        flows,
    );
    (t, plan)
}

#[test]
fn distinct_paths_are_not_flagged() {
    let (_, plan) = scenario_one_plan();
    assert!(distinctness_check(&plan).is_empty());

    let t = five_node();
    let overlapping = FlowPlan::new(
        t.labels().to_vec(),
        LinkIndex::new(t.targeted_links().to_vec()),
        vec![
            MonitoringFlow::from_nodes(0, &[0, 1, 3, 4, 2, 0], 1),
            MonitoringFlow::from_nodes(1, &[0, 1, 0], 2),
        ],
    );
    assert!(distinctness_check(&overlapping).is_empty());
    let same = FlowPlan::new(
        t.labels().to_vec(),
        LinkIndex::new(t.targeted_links().to_vec()),
        vec![
            MonitoringFlow::from_nodes(0, &[0, 1, 0], 1),
            MonitoringFlow::from_nodes(1, &[0, 1, 0], 2),
        ],
    );
    assert_eq!(distinctness_check(&same).len(), 1);
}

#[test]
fn double_cover_overhead_is_twice_rate_over_capacity() {
    let t = square();
    let cfg = PlanConfig {
        probe_rate_bps: 5_000.0,
        ..plan_cfg(4, 2)
    };
    let plan = FlowPlan::new(
        t.labels().to_vec(),
        LinkIndex::new(t.targeted_links().to_vec()),
        vec![
            MonitoringFlow::from_nodes(0, &[0, 1, 2, 3, 0], 1),
            MonitoringFlow::from_nodes(1, &[0, 3, 2, 1, 0], 2),
            MonitoringFlow::from_nodes(2, &[0, 1, 0], 3),
            MonitoringFlow::from_nodes(3, &[0, 3, 0], 4),
        ],
    );
    assert_eq!(overhead_ratio(&plan, &t, &cfg), 2.0 * 5_000.0 / 1e6);
}

#[test]
fn exact_oracle_on_the_square() {
    let t = square();
    let cfg = plan_cfg(4, 1);
    let heuristic = select_flows(&t, &cfg).unwrap();
    let exact = exact_select(&t, &cfg, heuristic.flows().len()).unwrap();
    assert_eq!(
        overhead_ratio(&exact, &t, &cfg),
        overhead_ratio(&heuristic, &t, &cfg)
    );

    // brute force over every pair of candidate routes
    let candidates = enumerate_candidates(&t, &cfg).unwrap();
    let mut best = f64::INFINITY;
    for a in 0..candidates.len() {
        for b in a + 1..candidates.len() {
            let mut loads: BTreeMap<LinkId, usize> = BTreeMap::new();
            for f in [&candidates[a], &candidates[b]] {
                for l in f.link_set() {
                    *loads.entry(l).or_default() += 1;
                }
            }
            if t.targeted_links().iter().all(|l| loads.contains_key(l)) {
                let peak = loads.values().copied().max().unwrap() as f64;
                best = best.min(peak * cfg.probe_rate_bps / 1e6);
            }
        }
    }
    let pair = exact_select(&t, &cfg, 2).unwrap();
    assert_eq!(overhead_ratio(&pair, &t, &cfg), best);

    let triple_cover = plan_cfg(4, 3);
    assert!(matches!(
        exact_select(&t, &triple_cover, 2),
        Err(PlanError::Infeasible { .. })
    ));
}

#[test]
fn ten_link_delay_vector_round_trips() {
    let values = [1.2, 1.0, 0.5, 0.8, 2.0, 1.5, 0.4, 0.3, 0.8, 1.1];
    let t = five_node();
    let mut ids: Vec<LinkId> = t.links().iter().map(|l| l.id()).collect();
    ids.sort();
    let delays = ids.iter().copied().zip(values).collect();
    let t = t.with_delays(&delays).unwrap();
    let truth = ground_truth_ldv(&t).unwrap();
    assert_eq!(truth.links, ids);
    assert_eq!(truth.delays_ms, values.to_vec());

    // a noiseless system generated from the vector is solved by it exactly
    let cfg = plan_cfg(5, 1);
    let plan = select_flows(&t.with_monitors(vec![0, 1, 2, 3, 4]).unwrap(), &cfg).unwrap();
    let campaign = run_campaign(&plan, &t, &DelayModel::noiseless(), 1).unwrap();
    let sys = build_system(&plan, &campaign).unwrap();
    assert_eq!(fitness(&truth.delays_ms, &sys), 0.0);
}

#[test]
fn median_of_nine_beats_single_probe() {
    let t = ldvkit::probesim::plant_uniform_delays(&all_monitors(&abilene()), 0.3, 2.0, 5).unwrap();
    let plan = select_flows(&t, &plan_cfg(6, 1)).unwrap();
    let truth: Vec<f64> = {
        let ldv = ground_truth_ldv(&t).unwrap();
        plan.flows()
            .iter()
            .map(|f| f.path.iter().map(|&l| ldv.get(l).unwrap()).sum())
            .collect()
    };
    let error = |c: &Campaign| -> f64 {
        c.eed().iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>()
    };
    let (mut single, mut nine) = (0.0, 0.0);
    for seed in 0..100 {
        let model = DelayModel {
            jitter_sigma_ms: 0.05,
            noise_sigma_ms: 0.2,
            seed,
            ..DelayModel::default()
        };
        single += error(&run_campaign(&plan, &t, &model, 1).unwrap());
        nine += error(&run_campaign(&plan, &t, &model, 9).unwrap());
    }
    assert!(nine <= single, "median-of-9 {nine} vs single {single}");
}

#[test]
fn scenario_one_rows_use_separate_columns() {
    let (t, plan) = scenario_one_plan();
    let m = plan.measurement_matrix();
    assert_eq!(m.len(), 2);
    let cols = |r: &Vec<u8>| -> BTreeSet<usize> {
        r.iter().enumerate().filter(|(_, &v)| v == 1).map(|(c, _)| c).collect()
    };
    assert!(cols(&m[0]).is_disjoint(&cols(&m[1])));
    assert_eq!(cols(&m[0]).len(), 2);
    assert_eq!(t.targeted_links().len(), 8);
}

#[test]
fn normal_equations_example() {
    let sys = MeasurementSystem::new(
        vec![vec![1, 1], vec![1, 0], vec![0, 1]],
        vec![2.0, 1.2, 0.8],
        vec![LinkId::new(0, 1), LinkId::new(1, 0)],
    )
    .unwrap();
    let x = least_squares(&sys).unwrap();
    assert!((x[0] - 1.2).abs() < 1e-12 && (x[1] - 0.8).abs() < 1e-12);
    assert!(sys.residuals(&x).iter().all(|r| r.abs() < 1e-12));
}

#[test]
fn box_constraint_beats_clipped_least_squares() {
    let sys = MeasurementSystem::new(
        vec![vec![1, 1], vec![1, 0]],
        vec![0.5, 1.0],
        vec![LinkId::new(0, 1), LinkId::new(1, 0)],
    )
    .unwrap();
    let lss = least_squares(&sys).unwrap();
    assert!((lss[0] - 1.0).abs() < 1e-12 && (lss[1] + 0.5).abs() < 1e-12);
    let cfg = SwarmConfig {
        bounds: Some((0.0, 2.0)),
        ..SwarmConfig::default()
    };
    let r = pso_solve(&sys, &cfg, 3).unwrap();
    assert!(r.estimate.delays_ms.iter().all(|&v| v >= 0.0));
    assert!(r.fitness >= r.seed_fitness);

    let mut grid_best = f64::NEG_INFINITY;
    for i in 0..=200 {
        for j in 0..=200 {
            grid_best = grid_best.max(fitness(&[i as f64 / 100.0, j as f64 / 100.0], &sys));
        }
    }
    assert!((r.fitness - grid_best).abs() < 1e-4, "{} vs {grid_best}", r.fitness);
}

#[test]
fn scenario_one_rule_counts() {
    let (_, plan) = scenario_one_plan();
    let ports: PortMap =
        serde_json::from_str(&std::fs::read_to_string(fixture("scenario1/ports.json")).unwrap())
            .unwrap();
    let addressing: Addressing = serde_json::from_str(
        &std::fs::read_to_string(fixture("scenario1/addressing.json")).unwrap(),
    )
    .unwrap();
    let tables = compile_plan(&plan, &ports, &addressing, Ipv4Addr::new(10, 0, 0, 100)).unwrap();
    let stats = rules_per_switch(&tables, 8000).unwrap();
    let counts: Vec<(&str, usize)> = stats.per_switch.iter().map(|(s, n)| (s.as_str(), *n)).collect();
    assert_eq!(counts, vec![("s1", 4), ("s2", 2), ("s3", 2), ("s4", 4)]);
    assert_eq!(stats.average, 3.0);
}

#[test]
fn symmetric_delays_are_recovered_exactly() {
    for (base, min_cover) in [(abilene(), 2), (rediris(), 1)] {
        let t = all_monitors(&base);
        let mut ids: Vec<LinkId> = t.links().iter().map(|l| l.id()).collect();
        ids.sort();
        let delays = ids
            .iter()
            .map(|&l| {
                let (a, b) = (l.from.min(l.to), l.from.max(l.to));
                (l, 0.3 + ((a * 7 + b * 13) % 17) as f64 / 10.0)
            })
            .collect();
        let t = t.with_delays(&delays).unwrap();
        let plan = select_flows(&t, &plan_cfg(t.node_count(), min_cover)).unwrap();
        let r = campaign_and_solve(&t, &plan, &DelayModel::noiseless(), 1, &SwarmConfig::default(), 0);
        assert!(r.non_unique);
        assert!(max_abs_error(&t, &r) <= 1e-6, "{}", max_abs_error(&t, &r));
    }
}
