#![allow(dead_code)]

use std::path::PathBuf;

use ldvkit::flowplan::{FlowPlan, PlanConfig};
use ldvkit::ldvsolve::{build_system, pso_solve, SolveResult, SwarmConfig};
use ldvkit::probesim::{ground_truth_ldv, run_campaign, DelayModel};
use ldvkit::topology::{load_topology, DirectedLink, NodeId, Topology, TopologyFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn load(rel: &str) -> Topology {
    let p = fixture(rel);
    load_topology(&p, TopologyFormat::from_path(&p)).unwrap()
}

pub fn abilene() -> Topology {
    load("Abilene.graphml")
}

pub fn rediris() -> Topology {
    load("Rediris.graphml")
}

pub fn all_monitors(t: &Topology) -> Topology {
    t.with_monitors((0..t.node_count()).collect()).unwrap()
}

pub fn plan_cfg(max_length: usize, min_cover: usize) -> PlanConfig {
    PlanConfig {
        max_length,
        min_cover,
        ..PlanConfig::default()
    }
}

/// Seeded random digraph on 2..=5 nodes with a non-empty monitor set.
///
/// Even seeds give symmetric graphs, odd seeds arbitrary orientations.
pub fn corpus_graph(seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FF_EE00 + seed);
    loop {
        let n = rng.gen_range(2..=5usize);
        let symmetric = seed % 2 == 0;
        let mut links = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j || (symmetric && j < i) {
                    continue;
                }
                if rng.gen_bool(0.55) {
                    links.push((i, j));
                    if symmetric {
                        links.push((j, i));
                    }
                }
            }
        }
        if links.is_empty() {
            continue;
        }
        let mut monitors: Vec<NodeId> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if monitors.is_empty() {
            monitors.push(rng.gen_range(0..n));
        }
        let labels = (0..n).map(|i| format!("v{i}")).collect();
        let links = links
            .into_iter()
            .map(|(from, to)| DirectedLink {
                from,
                to,
                capacity_bps: 1e6 * rng.gen_range(1..=4) as f64,
                true_delay_ms: None,
            })
            .collect();
        return Topology::new(labels, links, monitors, None).unwrap();
    }
}

pub fn corpus() -> Vec<Topology> {
    (0..60).map(corpus_graph).collect()
}

/// Loops of exactly `length` hops from `start`, by scanning every
/// arrangement of distinct intermediate nodes in lexicographic order.
pub fn brute_force_loops(topo: &Topology, start: NodeId, length: usize) -> Vec<Vec<NodeId>> {
    let n = topo.node_count();
    let others: Vec<NodeId> = (0..n).filter(|&v| v != start).collect();
    let mut out = Vec::new();
    if length == 0 || length - 1 > others.len() {
        return out;
    }
    let mut seq = Vec::new();
    let linked = |a: NodeId, b: NodeId| topo.has_link(ldvkit::topology::LinkId::new(a, b));
    arrangements(&others, length - 1, start, &linked, &mut seq, &mut |mid| {
        let mut nodes = vec![start];
        nodes.extend_from_slice(mid);
        nodes.push(start);
        let ok = nodes
            .windows(2)
            .all(|w| topo.has_link(ldvkit::topology::LinkId::new(w[0], w[1])));
        let targeted = nodes.windows(2).any(|w| {
            topo.targeted_links()
                .contains(&ldvkit::topology::LinkId::new(w[0], w[1]))
        });
        if ok && targeted {
            out.push(nodes);
        }
    });
    out
}

/// Arrangements of `k` distinct pool members; prefixes that already break
/// adjacency are skipped since no completion can be a walk.
fn arrangements(
    pool: &[NodeId],
    k: usize,
    start: NodeId,
    linked: &dyn Fn(NodeId, NodeId) -> bool,
    seq: &mut Vec<NodeId>,
    f: &mut dyn FnMut(&[NodeId]),
) {
    if seq.len() == k {
        f(seq);
        return;
    }
    let prev = seq.last().copied().unwrap_or(start);
    for &v in pool {
        if !seq.contains(&v) && linked(prev, v) {
            seq.push(v);
            arrangements(pool, k, start, linked, seq, f);
            seq.pop();
        }
    }
}

/// Mean absolute per-link error of `result` against the planted delays.
pub fn mean_abs_error(topo: &Topology, result: &SolveResult) -> f64 {
    let truth = ground_truth_ldv(topo).unwrap();
    let est = &result.estimate;
    let total: f64 = est
        .links
        .iter()
        .zip(&est.delays_ms)
        .map(|(&l, &d)| (d - truth.get(l).unwrap()).abs())
        .sum();
    total / est.len() as f64
}

pub fn max_abs_error(topo: &Topology, result: &SolveResult) -> f64 {
    let truth = ground_truth_ldv(topo).unwrap();
    let est = &result.estimate;
    est.links
        .iter()
        .zip(&est.delays_ms)
        .map(|(&l, &d)| (d - truth.get(l).unwrap()).abs())
        .fold(0.0, f64::max)
}

pub fn campaign_and_solve(
    topo: &Topology,
    plan: &FlowPlan,
    model: &DelayModel,
    repeats: usize,
    swarm: &SwarmConfig,
    seed: u64,
) -> SolveResult {
    let campaign = run_campaign(plan, topo, model, repeats).unwrap();
    let sys = build_system(plan, &campaign).unwrap();
    pso_solve(&sys, swarm, seed).unwrap()
}
