use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::linalg::RowBasis;
use crate::topology::{possible_sources, to_matrices, LinkId, NodeId, Topology};

use super::{Accumulation, FlowPlan, MonitoringFlow, PlanConfig, PlanError, MAX_TOS_PER_PAIR};

/// All admissible candidate routes in planner order: lengths ascending, then
/// sources ascending, then DFS order. Routes with an already-seen link set are
/// dropped.
pub fn enumerate_candidates(
    topo: &Topology,
    cfg: &PlanConfig,
) -> Result<Vec<MonitoringFlow>, PlanError> {
    cfg.validate()?;
    let sources = possible_sources(topo)?;
    let matrices = to_matrices(topo);
    let cells: Vec<(usize, NodeId)> = cfg
        .lengths()
        .into_iter()
        .flat_map(|len| sources.iter().map(move |&s| (len, s)))
        .collect();
    // cells are independent; merge in cell order for determinism
    let per_cell: Vec<Vec<MonitoringFlow>> = cells
        .par_iter()
        .map(|&(len, src)| super::find_routes(src, len, &matrices, &matrices.link_index))
        .collect();

    let mut seen: HashSet<Vec<LinkId>> = HashSet::new();
    let mut out = Vec::new();
    for route in per_cell.into_iter().flatten() {
        if seen.insert(route.link_set()) {
            out.push(route);
        }
    }
    Ok(out)
}

/// Greedy path & flow selection.
///
/// Candidates are scanned in [`enumerate_candidates`] order. In
/// stop-at-coverage mode a candidate is kept when it crosses a targeted link
/// that still has fewer than `min_cover` flows; in exhaustive mode every
/// candidate is kept. Candidates that would push a link past the overhead cap
/// are skipped. With `rank_safeguard`, remaining candidates that raise the
/// rank of the measurement matrix are then appended until the rank is full or
/// candidates run out.
pub fn select_flows(topo: &Topology, cfg: &PlanConfig) -> Result<FlowPlan, PlanError> {
    let candidates = enumerate_candidates(topo, cfg)?;
    let link_index = crate::topology::LinkIndex::new(topo.targeted_links().to_vec());
    let cols = link_index.len();

    let mut loads: HashMap<LinkId, usize> = HashMap::new();
    let mut cover = vec![0usize; cols];
    let mut chosen = vec![false; candidates.len()];
    let mut selected: Vec<usize> = Vec::new();

    let fits = |loads: &HashMap<LinkId, usize>, route: &MonitoringFlow| {
        route.path.iter().all(|l| {
            let cap = topo.link(*l).map_or(0.0, |d| d.capacity_bps);
            cfg.fits(loads.get(l).copied().unwrap_or(0) + 1, cap)
        })
    };
    let take = |k: usize,
                    loads: &mut HashMap<LinkId, usize>,
                    cover: &mut Vec<usize>,
                    chosen: &mut Vec<bool>,
                    selected: &mut Vec<usize>| {
        for l in &candidates[k].path {
            *loads.entry(*l).or_insert(0) += 1;
            if let Some(c) = link_index.column(*l) {
                cover[c] += 1;
            }
        }
        chosen[k] = true;
        selected.push(k);
    };

    for k in 0..candidates.len() {
        let route = &candidates[k];
        let wanted = match cfg.accumulation {
            Accumulation::Exhaustive => true,
            Accumulation::StopAtCoverage => route
                .path
                .iter()
                .filter_map(|l| link_index.column(*l))
                .any(|c| cover[c] < cfg.min_cover),
        };
        if wanted && fits(&loads, route) {
            take(k, &mut loads, &mut cover, &mut chosen, &mut selected);
        }
    }

    if cfg.rank_safeguard && cols > 0 {
        let row_of = |route: &MonitoringFlow| {
            let mut row = vec![0.0; cols];
            for l in &route.path {
                if let Some(c) = link_index.column(*l) {
                    row[c] = 1.0;
                }
            }
            row
        };
        let mut basis = RowBasis::new(cols);
        for &k in &selected {
            basis.insert(&row_of(&candidates[k]));
        }
        for k in 0..candidates.len() {
            if basis.is_full() {
                break;
            }
            if chosen[k] {
                continue;
            }
            let row = row_of(&candidates[k]);
            if basis.is_independent(&row) && fits(&loads, &candidates[k]) {
                basis.insert(&row);
                take(k, &mut loads, &mut cover, &mut chosen, &mut selected);
            }
        }
        log::debug!(
            "plan rank {} of {} targeted links after safeguard",
            basis.rank(),
            cols
        );
    }

    let flows = assign_tos(topo, selected.iter().map(|&k| candidates[k].clone()))?;
    let plan = FlowPlan::new(topo.labels().to_vec(), link_index, flows);

    let uncovered: Vec<LinkId> = cover
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < cfg.min_cover)
        .map(|(k, _)| plan.link_index().link(k))
        .collect();
    if !uncovered.is_empty() {
        return Err(PlanError::CoverageFailure {
            labels: uncovered.iter().map(|&l| topo.link_label(l)).collect(),
            uncovered,
            partial: Box::new(plan),
        });
    }
    Ok(plan)
}

/// Numbers flows in order and tags them with ToS 1, 2, ... per (source, destination).
pub(crate) fn assign_tos(
    topo: &Topology,
    flows: impl IntoIterator<Item = MonitoringFlow>,
) -> Result<Vec<MonitoringFlow>, PlanError> {
    let mut next: HashMap<(NodeId, NodeId), usize> = HashMap::new();
    let mut out = Vec::new();
    for (id, mut f) in flows.into_iter().enumerate() {
        let n = next.entry((f.source, f.destination)).or_insert(0);
        *n += 1;
        if *n > MAX_TOS_PER_PAIR {
            return Err(PlanError::TosExhausted {
                source_label: topo.label(f.source).to_string(),
                destination_label: topo.label(f.destination).to_string(),
                count: *n,
            });
        }
        f.id = id;
        f.tos = *n as u8;
        out.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::parse_json;

    fn two_node() -> Topology {
        parse_json(
            r#"{"nodes":["1","2"],"monitor_nodes":["1"],
                "links":[{"from":"1","to":"2","capacity_bps":1e6}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn two_node_single_loop() {
        let cfg = PlanConfig {
            max_length: 2,
            min_cover: 1,
            ..Default::default()
        };
        let plan = select_flows(&two_node(), &cfg).unwrap();
        assert_eq!(plan.flows().len(), 1);
        assert_eq!(plan.flows()[0].nodes(), vec![0, 1, 0]);
        assert_eq!(plan.flows()[0].tos, 1);
        assert_eq!(plan.covered_links().len(), 2);
    }

    #[test]
    fn under_cover_is_a_coverage_failure() {
        let cfg = PlanConfig {
            max_length: 2,
            min_cover: 2,
            ..Default::default()
        };
        match select_flows(&two_node(), &cfg) {
            Err(PlanError::CoverageFailure {
                uncovered, partial, ..
            }) => {
                assert_eq!(uncovered.len(), 2);
                assert_eq!(partial.flows().len(), 1);
            }
            other => panic!("expected coverage failure, got {other:?}"),
        }
    }

    #[test]
    fn overhead_cap_skips_routes() {
        // one flow already uses the whole budget of every link
        let cfg = PlanConfig {
            max_length: 4,
            min_cover: 1,
            probe_rate_bps: 1e6,
            max_overhead: 1.0,
            ..Default::default()
        };
        let t = parse_json(
            r#"{"nodes":["a","b","c"],"monitor_nodes":["a"],"links":[
                {"from":"a","to":"b","capacity_bps":1e6},{"from":"b","to":"c","capacity_bps":1e6},
                {"from":"c","to":"a","capacity_bps":1e6}]}"#,
        )
        .unwrap();
        // a-b-a saturates a->b and a-c-a saturates c->a, leaving b<->c uncovered
        match select_flows(&t, &cfg) {
            Err(PlanError::CoverageFailure { labels, partial, .. }) => {
                assert_eq!(labels, vec!["b->c", "c->b"]);
                assert!(partial.link_loads().values().all(|&n| n <= 1));
            }
            other => panic!("expected coverage failure, got {other:?}"),
        }
    }

    #[test]
    fn tos_exhaustion() {
        let t = two_node();
        let flows = (0..256).map(|_| MonitoringFlow::from_nodes(0, &[0, 1, 0], 0));
        assert!(matches!(
            assign_tos(&t, flows),
            Err(PlanError::TosExhausted { count: 256, .. })
        ));
        let ok = assign_tos(&t, (0..255).map(|_| MonitoringFlow::from_nodes(0, &[0, 1, 0], 0)))
            .unwrap();
        assert_eq!(ok.last().unwrap().tos, 255);
    }

    #[test]
    fn tos_counts_per_pair() {
        let t = parse_json(
            r#"{"nodes":["a","b","c"],"links":[
                {"from":"a","to":"b","capacity_bps":1},{"from":"b","to":"c","capacity_bps":1}]}"#,
        )
        .unwrap();
        let flows = vec![
            MonitoringFlow::from_nodes(0, &[0, 1, 0], 0),
            MonitoringFlow::from_nodes(0, &[1, 2, 1], 0),
            MonitoringFlow::from_nodes(0, &[0, 1, 2, 1, 0], 0),
        ];
        let tagged = assign_tos(&t, flows).unwrap();
        let tags: Vec<(usize, u8)> = tagged.iter().map(|f| (f.id, f.tos)).collect();
        assert_eq!(tags, vec![(0, 1), (1, 1), (2, 2)]);
    }
}
