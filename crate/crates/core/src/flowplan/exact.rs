use std::collections::HashMap;

use crate::topology::{LinkId, LinkIndex, Topology};

use super::select::assign_tos;
use super::validate::route_code;
use super::{enumerate_candidates, FlowPlan, PlanConfig, PlanError};

/// Node-count guard for [`exact_select`].
pub const MAX_EXACT_NODES: usize = 6;
/// Candidate-route guard for [`exact_select`].
pub const MAX_EXACT_CANDIDATES: usize = 100_000;

/// Minimum-overhead plan of exactly `flow_budget` distinct routes.
///
/// Branch-and-bound over combinations of candidate routes (the same route set
/// the greedy planner draws from). A branch is cut when its partial overhead
/// is no better than the incumbent, when it exceeds `max_overhead`, or when
/// the remaining candidates cannot lift every targeted link to `min_cover`.
/// Among optimal plans the lexicographically first combination is returned.
pub fn exact_select(
    topo: &Topology,
    cfg: &PlanConfig,
    flow_budget: usize,
) -> Result<FlowPlan, PlanError> {
    cfg.validate()?;
    let n = topo.node_count();
    if n > MAX_EXACT_NODES {
        return Err(PlanError::InstanceTooLarge {
            nodes: n,
            candidates: 0,
        });
    }
    let candidates = enumerate_candidates(topo, cfg)?;
    if candidates.len() > MAX_EXACT_CANDIDATES {
        return Err(PlanError::InstanceTooLarge {
            nodes: n,
            candidates: candidates.len(),
        });
    }
    let max_code = candidates
        .iter()
        .map(|c| route_code(c, n))
        .max()
        .unwrap_or(0);
    if max_code as u64 > cfg.big_m {
        return Err(PlanError::Config(format!(
            "big_m {} is below the largest route signature {max_code}",
            cfg.big_m
        )));
    }
    if flow_budget == 0 || flow_budget > candidates.len() {
        return Err(PlanError::Infeasible {
            budget: flow_budget,
        });
    }

    let link_index = LinkIndex::new(topo.targeted_links().to_vec());
    let mut link_ids: HashMap<LinkId, usize> = HashMap::new();
    let mut caps = Vec::new();
    let mut routes: Vec<Vec<usize>> = Vec::with_capacity(candidates.len());
    let mut covers: Vec<Vec<usize>> = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let mut r = Vec::new();
        for l in c.link_set() {
            let id = *link_ids.entry(l).or_insert_with(|| {
                caps.push(topo.link(l).map_or(f64::MIN_POSITIVE, |d| d.capacity_bps));
                caps.len() - 1
            });
            r.push(id);
        }
        routes.push(r);
        covers.push(
            c.link_set()
                .into_iter()
                .filter_map(|l| link_index.column(l))
                .collect(),
        );
    }

    // suffix[k][c]: candidates at index >= k crossing targeted column c
    let cols = link_index.len();
    let mut suffix = vec![vec![0usize; cols]; candidates.len() + 1];
    for k in (0..candidates.len()).rev() {
        suffix[k] = suffix[k + 1].clone();
        for &c in &covers[k] {
            suffix[k][c] += 1;
        }
    }

    let mut min_len = vec![usize::MAX; routes.len() + 1];
    for k in (0..routes.len()).rev() {
        min_len[k] = min_len[k + 1].min(routes[k].len());
    }

    let lower_bound = link_index
        .links()
        .iter()
        .map(|&l| {
            let cap = topo.link(l).map_or(f64::MIN_POSITIVE, |d| d.capacity_bps);
            cfg.min_cover as f64 * cfg.probe_rate_bps / cap
        })
        .fold(0.0, f64::max);

    let mut search = Search {
        cfg,
        routes: &routes,
        covers: &covers,
        caps: &caps,
        suffix: &suffix,
        min_len: &min_len,
        budget: flow_budget,
        lower_bound,
        loads: vec![0; caps.len()],
        cover: vec![0; cols],
        chosen: Vec::with_capacity(flow_budget),
        best: None,
    };
    search.descend(0, 0.0);

    let Some((mu, picked)) = search.best else {
        return Err(PlanError::Infeasible {
            budget: flow_budget,
        });
    };
    log::debug!("exact oracle: mu = {mu}, routes {picked:?}");
    let flows = assign_tos(topo, picked.iter().map(|&k| candidates[k].clone()))?;
    Ok(FlowPlan::new(topo.labels().to_vec(), link_index, flows))
}

struct Search<'a> {
    cfg: &'a PlanConfig,
    routes: &'a [Vec<usize>],
    covers: &'a [Vec<usize>],
    caps: &'a [f64],
    suffix: &'a [Vec<usize>],
    min_len: &'a [usize],
    budget: usize,
    lower_bound: f64,
    loads: Vec<usize>,
    cover: Vec<usize>,
    chosen: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn done(&self) -> bool {
        self.best
            .as_ref()
            .is_some_and(|(mu, _)| *mu <= self.lower_bound)
    }

    /// Extra link traversals still allowed while staying below the incumbent.
    fn slack(&self) -> usize {
        let Some((b, _)) = &self.best else {
            return usize::MAX;
        };
        self.caps
            .iter()
            .zip(&self.loads)
            .map(|(&cap, &load)| {
                let most = (b * cap / self.cfg.probe_rate_bps).floor();
                let most = if most.is_finite() { most as usize } else { usize::MAX / 2 };
                most.saturating_sub(load)
            })
            .fold(0usize, usize::saturating_add)
    }

    fn descend(&mut self, start: usize, mu: f64) {
        let remaining = self.budget - self.chosen.len();
        if remaining == 0 {
            let covered = self.cover.iter().all(|&c| c >= self.cfg.min_cover);
            if covered && self.best.as_ref().is_none_or(|(b, _)| mu < *b) {
                self.best = Some((mu, self.chosen.clone()));
            }
            return;
        }
        let n = self.routes.len();
        let slack = self.slack();
        for k in start..=(n - remaining) {
            if slack < remaining.saturating_mul(self.min_len[k]) {
                break;
            }
            // remaining candidates must still be able to close every deficit
            let short = self.cover.iter().enumerate().any(|(c, &have)| {
                let deficit = self.cfg.min_cover.saturating_sub(have);
                deficit > remaining || deficit > self.suffix[k][c]
            });
            if short {
                break;
            }
            let mut next_mu = mu;
            let mut over = false;
            for &l in &self.routes[k] {
                self.loads[l] += 1;
                next_mu = next_mu.max(self.loads[l] as f64 * self.cfg.probe_rate_bps / self.caps[l]);
                over |= !self.cfg.fits(self.loads[l], self.caps[l]);
            }
            for &c in &self.covers[k] {
                self.cover[c] += 1;
            }
            let promising = self.best.as_ref().is_none_or(|(b, _)| next_mu < *b);
            if promising && !over {
                self.chosen.push(k);
                self.descend(k + 1, next_mu);
                self.chosen.pop();
            }
            for &l in &self.routes[k] {
                self.loads[l] -= 1;
            }
            for &c in &self.covers[k] {
                self.cover[c] -= 1;
            }
            if self.done() {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowplan::overhead_ratio;
    use crate::topology::parse_json;

    #[test]
    fn two_node_unique_plan() {
        let t = parse_json(
            r#"{"nodes":["1","2"],"monitor_nodes":["1"],"links":[
                {"from":"1","to":"2","capacity_bps":1000},{"from":"2","to":"1","capacity_bps":500}],
                "directed":true}"#,
        )
        .unwrap();
        let cfg = PlanConfig {
            max_length: 2,
            min_cover: 1,
            probe_rate_bps: 10.0,
            ..Default::default()
        };
        let plan = exact_select(&t, &cfg, 1).unwrap();
        assert_eq!(plan.flows()[0].nodes(), vec![0, 1, 0]);
        assert_eq!(overhead_ratio(&plan, &t, &cfg), 10.0 / 500.0);
    }

    #[test]
    fn guard_trips_on_large_graphs() {
        let nodes: Vec<String> = (0..7).map(|i| format!("\"n{i}\"")).collect();
        let links: Vec<String> = (0..7)
            .map(|i| format!(r#"{{"from":"n{i}","to":"n{}","capacity_bps":1}}"#, (i + 1) % 7))
            .collect();
        let t = parse_json(&format!(
            r#"{{"nodes":[{}],"monitor_nodes":["n0"],"links":[{}]}}"#,
            nodes.join(","),
            links.join(",")
        ))
        .unwrap();
        assert!(matches!(
            exact_select(&t, &PlanConfig::default(), 1),
            Err(PlanError::InstanceTooLarge { nodes: 7, .. })
        ));
    }

    #[test]
    fn small_big_m_is_rejected() {
        let t = parse_json(
            r#"{"nodes":["1","2"],"monitor_nodes":["1"],"links":[{"from":"1","to":"2","capacity_bps":1}]}"#,
        )
        .unwrap();
        let cfg = PlanConfig {
            max_length: 2,
            min_cover: 1,
            big_m: 3,
            probe_rate_bps: 1e-3,
            ..Default::default()
        };
        assert!(matches!(exact_select(&t, &cfg, 1), Err(PlanError::Config(_))));
    }
}
