//! Monitoring-flow selection.
//!
//! The planner picks loop-shaped probe flows anchored at monitor nodes so that
//! every targeted link is crossed by at least `min_cover` flows and the
//! resulting flows × links incidence matrix is as close to full column rank as
//! the flow shapes allow. [`select_flows`] is the greedy planner,
//! [`exact_select`] a branch-and-bound oracle for small instances, and
//! [`validate_plan`] checks a plan against the routing constraints of the
//! integer program the planner approximates.

mod coverage;
mod exact;
mod routes;
mod select;
mod validate;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{LinkId, LinkIndex, NodeId, Topology, TopologyError};

pub use coverage::{coverage_report, min_full_coverage_length, plan_coverage, CoverageReport, LinkCover};
pub use exact::{exact_select, MAX_EXACT_CANDIDATES, MAX_EXACT_NODES};
pub use routes::find_routes;
pub use select::{enumerate_candidates, select_flows};
pub use validate::{
    distinctness_check, overhead_ratio, route_code, validate_plan, DuplicatePair, Violation,
};

/// Largest number of flows that can share one (source, destination) pair:
/// ToS 1..=255, with 0 left to ordinary traffic.
pub const MAX_TOS_PER_PAIR: usize = 255;

/// A probe flow with an explicit hop-by-hop path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MonitoringFlow {
    pub id: usize,
    pub source: NodeId,
    pub destination: NodeId,
    pub path: Vec<LinkId>,
    pub tos: u8,
}

impl MonitoringFlow {
    /// Builds a flow from its node sequence (`nodes.len() >= 2`).
    pub fn from_nodes(id: usize, nodes: &[NodeId], tos: u8) -> Self {
        assert!(nodes.len() >= 2, "a flow needs at least one hop");
        let path = nodes.windows(2).map(|w| LinkId::new(w[0], w[1])).collect();
        Self {
            id,
            source: nodes[0],
            destination: nodes[nodes.len() - 1],
            path,
            tos,
        }
    }

    pub fn hop_count(&self) -> usize {
        self.path.len()
    }

    pub fn is_loop(&self) -> bool {
        self.source == self.destination
    }

    /// Node sequence `source, ..., destination` (assumes a contiguous path).
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.path.len() + 1);
        out.push(self.source);
        out.extend(self.path.iter().map(|l| l.to));
        out
    }

    /// Sorted, deduplicated link set (the routing matrix of this flow).
    pub fn link_set(&self) -> Vec<LinkId> {
        let mut s = self.path.clone();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Checks adjacency, endpoints, length and the loop rule.
    pub fn check_shape(&self, max_length: usize) -> Result<(), String> {
        if self.path.is_empty() || self.path.len() > max_length {
            return Err(format!(
                "length {} outside 1..={max_length}",
                self.path.len()
            ));
        }
        if self.path[0].from != self.source {
            return Err("path does not start at the source".into());
        }
        if self.path[self.path.len() - 1].to != self.destination {
            return Err("path does not end at the destination".into());
        }
        if let Some(w) = self.path.windows(2).find(|w| w[0].to != w[1].from) {
            return Err(format!("links {} and {} are not adjacent", w[0], w[1]));
        }
        let nodes = self.nodes();
        let inner_end = if self.is_loop() {
            nodes.len() - 1
        } else {
            nodes.len()
        };
        let mut seen = BTreeSet::new();
        for &n in &nodes[..inner_end] {
            if !seen.insert(n) {
                return Err(format!("node {n} repeats"));
            }
        }
        if self.link_set().len() != self.path.len() {
            return Err("a link repeats".into());
        }
        Ok(())
    }
}

/// How candidate routes are accumulated by [`select_flows`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Accumulation {
    /// Keep a route only while it adds cover to some under-covered targeted link.
    #[default]
    StopAtCoverage,
    /// Keep every admissible route.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Hop-count cap on any flow (MLMF).
    pub max_length: usize,
    /// Minimum number of flows per targeted link.
    pub min_cover: usize,
    /// Rate of one monitoring flow, bits/s.
    pub probe_rate_bps: f64,
    /// Largest tolerated monitoring-traffic / capacity ratio on any link.
    pub max_overhead: f64,
    /// Hop counts tried, in ascending order. Empty means `1..=max_length`.
    pub allowed_lengths: Vec<usize>,
    /// Big-M constant for the distinctness constraints (exact oracle only).
    pub big_m: u64,
    pub accumulation: Accumulation,
    /// Add rank-raising candidates after the coverage pass.
    pub rank_safeguard: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            max_length: 8,
            min_cover: 2,
            probe_rate_bps: 10_000.0,
            max_overhead: 1.0,
            allowed_lengths: Vec::new(),
            big_m: 1_000_000,
            accumulation: Accumulation::StopAtCoverage,
            rank_safeguard: true,
        }
    }
}

impl PlanConfig {
    pub fn with_max_length(max_length: usize) -> Self {
        Self {
            max_length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.to_string()));
        if self.max_length < 1 {
            return bad("max_length must be >= 1");
        }
        if self.min_cover < 1 {
            return bad("min_cover must be >= 1");
        }
        if !(self.max_overhead > 0.0 && self.max_overhead <= 1.0) {
            return bad("max_overhead must lie in (0, 1]");
        }
        if !(self.probe_rate_bps > 0.0) || !self.probe_rate_bps.is_finite() {
            return bad("probe_rate must be > 0");
        }
        if self.allowed_lengths.contains(&0) {
            return bad("allowed lengths must be >= 1");
        }
        Ok(())
    }

    /// Allowed hop counts, ascending, capped at `max_length`.
    pub fn lengths(&self) -> Vec<usize> {
        let mut l: Vec<usize> = if self.allowed_lengths.is_empty() {
            (1..=self.max_length).collect()
        } else {
            self.allowed_lengths
                .iter()
                .copied()
                .filter(|&l| l <= self.max_length)
                .collect()
        };
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Does one more flow fit on a link of `capacity` already carrying `count` flows?
    pub(crate) fn fits(&self, count: usize, capacity: f64) -> bool {
        overhead_within(count as f64 * self.probe_rate_bps, self.max_overhead * capacity)
    }
}

pub(crate) fn overhead_within(load: f64, limit: f64) -> bool {
    load <= limit * (1.0 + 1e-12)
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid plan configuration: {0}")]
    Config(String),
    #[error("{} targeted link(s) lack the required cover: {}", uncovered.len(), labels.join(", "))]
    CoverageFailure {
        uncovered: Vec<LinkId>,
        labels: Vec<String>,
        /// Best plan found; lets callers report partial coverage.
        partial: Box<FlowPlan>,
    },
    #[error("{count} flows between {source_label} and {destination_label} exceed the ToS space")]
    TosExhausted {
        source_label: String,
        destination_label: String,
        count: usize,
    },
    #[error("no combination of {budget} flows satisfies the constraints")]
    Infeasible { budget: usize },
    #[error("instance too large for the exact oracle ({nodes} nodes, {candidates} candidate routes)")]
    InstanceTooLarge { nodes: usize, candidates: usize },
    #[error("malformed plan file: {0}")]
    Malformed(String),
}

/// Selected flows plus the measurement matrix they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPlan {
    node_labels: Vec<String>,
    link_index: LinkIndex,
    flows: Vec<MonitoringFlow>,
    covered_links: BTreeSet<LinkId>,
    matrix: Vec<Vec<u8>>,
}

impl FlowPlan {
    pub fn new(node_labels: Vec<String>, link_index: LinkIndex, flows: Vec<MonitoringFlow>) -> Self {
        let mut matrix = Vec::with_capacity(flows.len());
        let mut covered_links = BTreeSet::new();
        for f in &flows {
            let mut row = vec![0u8; link_index.len()];
            for &l in &f.path {
                if let Some(c) = link_index.column(l) {
                    row[c] = 1;
                    covered_links.insert(l);
                }
            }
            matrix.push(row);
        }
        Self {
            node_labels,
            link_index,
            flows,
            covered_links,
            matrix,
        }
    }

    /// Empty plan over a topology's targeted links.
    pub fn empty(topo: &Topology) -> Self {
        Self::new(
            topo.labels().to_vec(),
            LinkIndex::new(topo.targeted_links().to_vec()),
            Vec::new(),
        )
    }

    pub fn flows(&self) -> &[MonitoringFlow] {
        &self.flows
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.node_labels[node]
    }

    pub fn link_label(&self, l: LinkId) -> String {
        format!("{}->{}", self.label(l.from), self.label(l.to))
    }

    pub fn link_index(&self) -> &LinkIndex {
        &self.link_index
    }

    /// Targeted links crossed by at least one flow.
    pub fn covered_links(&self) -> &BTreeSet<LinkId> {
        &self.covered_links
    }

    /// Flows × targeted-links binary incidence matrix.
    pub fn measurement_matrix(&self) -> &[Vec<u8>] {
        &self.matrix
    }

    pub fn matrix_f64(&self) -> Vec<Vec<f64>> {
        self.matrix
            .iter()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }

    /// Number of plan flows traversing each link (any link, targeted or not).
    pub fn link_loads(&self) -> HashMap<LinkId, usize> {
        let mut loads = HashMap::new();
        for f in &self.flows {
            for &l in &f.path {
                *loads.entry(l).or_insert(0) += 1;
            }
        }
        loads
    }

    pub fn rank(&self) -> usize {
        crate::linalg::rank(&self.matrix_f64())
    }

    pub fn to_file(&self) -> PlanFile {
        PlanFile {
            nodes: self.node_labels.clone(),
            targeted_links: self
                .link_index
                .links()
                .iter()
                .map(|l| (self.label(l.from).to_string(), self.label(l.to).to_string()))
                .collect(),
            flows: self
                .flows
                .iter()
                .map(|f| FlowRecord {
                    id: f.id,
                    source: self.label(f.source).to_string(),
                    destination: self.label(f.destination).to_string(),
                    path: f.nodes().iter().map(|&n| self.label(n).to_string()).collect(),
                    tos: f.tos,
                })
                .collect(),
            measurement_matrix: self
                .matrix
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &v)| v == 1)
                        .map(|(k, _)| k)
                        .collect()
                })
                .collect(),
        }
    }
}

/// JSON form of a [`FlowPlan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub nodes: Vec<String>,
    pub targeted_links: Vec<(String, String)>,
    pub flows: Vec<FlowRecord>,
    /// Per flow, the column indices (into `targeted_links`) it traverses.
    pub measurement_matrix: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub id: usize,
    pub source: String,
    pub destination: String,
    /// Node labels from source to destination.
    pub path: Vec<String>,
    pub tos: u8,
}

impl PlanFile {
    pub fn into_plan(self) -> Result<FlowPlan, PlanError> {
        let index: HashMap<&str, NodeId> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let node = |l: &str| {
            index
                .get(l)
                .copied()
                .ok_or_else(|| PlanError::Malformed(format!("unknown node {l:?}")))
        };
        let targeted = self
            .targeted_links
            .iter()
            .map(|(f, t)| Ok(LinkId::new(node(f)?, node(t)?)))
            .collect::<Result<Vec<_>, PlanError>>()?;
        let link_index = LinkIndex::new(targeted.clone());
        if link_index.links() != targeted.as_slice() {
            return Err(PlanError::Malformed(
                "targeted links must be sorted and unique".into(),
            ));
        }
        let mut flows = Vec::with_capacity(self.flows.len());
        for rec in &self.flows {
            let nodes = rec
                .path
                .iter()
                .map(|l| node(l))
                .collect::<Result<Vec<_>, _>>()?;
            if nodes.len() < 2 {
                return Err(PlanError::Malformed(format!("flow {} has no hops", rec.id)));
            }
            let f = MonitoringFlow::from_nodes(rec.id, &nodes, rec.tos);
            if f.source != node(&rec.source)? || f.destination != node(&rec.destination)? {
                return Err(PlanError::Malformed(format!(
                    "flow {} endpoints disagree with its path",
                    rec.id
                )));
            }
            flows.push(f);
        }
        let plan = FlowPlan::new(self.nodes.clone(), link_index, flows);
        if plan.to_file().measurement_matrix != self.measurement_matrix {
            return Err(PlanError::Malformed(
                "measurement matrix does not match the flow paths".into(),
            ));
        }
        Ok(plan)
    }
}

impl fmt::Display for MonitoringFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes: Vec<String> = self.nodes().iter().map(|n| n.to_string()).collect();
        write!(f, "flow {} [{}] tos={}", self.id, nodes.join(" "), self.tos)
    }
}
