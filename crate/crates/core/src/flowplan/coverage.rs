use serde::Serialize;

use crate::topology::{LinkId, Topology};

use super::{select_flows, FlowPlan, PlanConfig, PlanError};

/// Cover count of one targeted link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkCover {
    pub link: LinkId,
    pub label: String,
    pub flows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub per_link: Vec<LinkCover>,
    /// Fraction of targeted links crossed by at least `min_cover` flows.
    pub fraction: f64,
}

/// Per-link flow counts over the topology's targeted links.
pub fn coverage_report(plan: &FlowPlan, topo: &Topology, min_cover: usize) -> CoverageReport {
    let loads = plan.link_loads();
    let per_link: Vec<LinkCover> = topo
        .targeted_links()
        .iter()
        .map(|&l| LinkCover {
            link: l,
            label: topo.link_label(l),
            flows: loads.get(&l).copied().unwrap_or(0),
        })
        .collect();
    let need = min_cover.max(1);
    let fraction = if per_link.is_empty() {
        0.0
    } else {
        per_link.iter().filter(|c| c.flows >= need).count() as f64 / per_link.len() as f64
    };
    CoverageReport { per_link, fraction }
}

/// Plans with `max_length` and reports coverage, accepting partial plans.
pub fn plan_coverage(
    topo: &Topology,
    cfg: &PlanConfig,
) -> Result<(FlowPlan, CoverageReport), PlanError> {
    let plan = match select_flows(topo, cfg) {
        Ok(p) => p,
        Err(PlanError::CoverageFailure { partial, .. }) => *partial,
        Err(e) => return Err(e),
    };
    let report = coverage_report(&plan, topo, cfg.min_cover);
    Ok((plan, report))
}

/// Smallest hop cap in `1..=limit` for which planning reaches full coverage.
pub fn min_full_coverage_length(
    topo: &Topology,
    cfg: &PlanConfig,
    limit: usize,
) -> Result<Option<usize>, PlanError> {
    for len in 1..=limit {
        let c = PlanConfig {
            max_length: len,
            allowed_lengths: Vec::new(),
            ..cfg.clone()
        };
        match select_flows(topo, &c) {
            Ok(_) => return Ok(Some(len)),
            Err(PlanError::CoverageFailure { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}
