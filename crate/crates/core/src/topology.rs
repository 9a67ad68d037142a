//! Network topology: nodes, directed links, monitor placement and targeted links.
//!
//! A [`Topology`] is immutable once built. Node labels from the input file are
//! normalized to contiguous indices ([`NodeId`]); the labels are kept for
//! reporting and serialization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Contiguous node index, assigned in declaration order.
pub type NodeId = usize;

/// Capacity assigned to GraphML edges that carry no `LinkSpeedRaw` attribute (10 Gbit/s).
pub const DEFAULT_GRAPHML_CAPACITY_BPS: f64 = 10e9;

/// A directed link identified by its endpoints. Orders by `(from, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId {
    pub from: NodeId,
    pub to: NodeId,
}

impl LinkId {
    pub fn new(from: NodeId, to: NodeId) -> Self {
        Self { from, to }
    }

    pub fn reversed(self) -> Self {
        Self::new(self.to, self.from)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedLink {
    pub from: NodeId,
    pub to: NodeId,
    pub capacity_bps: f64,
    /// Ground-truth delay used by the probe simulator only.
    pub true_delay_ms: Option<f64>,
}

impl DirectedLink {
    pub fn id(&self) -> LinkId {
        LinkId::new(self.from, self.to)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("topology has no nodes")]
    EmptyGraph,
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("duplicate link {from:?} -> {to:?}")]
    DuplicateLink { from: String, to: String },
    #[error("link {from:?} -> {to:?} references unknown node {missing:?}")]
    DanglingEndpoint {
        from: String,
        to: String,
        missing: String,
    },
    #[error("self-loop link on node {0:?}")]
    SelfLoop(String),
    #[error("link {from:?} -> {to:?} has non-positive capacity {capacity}")]
    InvalidCapacity {
        from: String,
        to: String,
        capacity: f64,
    },
    #[error("link {from:?} -> {to:?} has negative delay {delay}")]
    NegativeDelay { from: String, to: String, delay: f64 },
    #[error("monitor {0:?} is not a declared node")]
    UnknownMonitor(String),
    #[error("targeted link {from:?} -> {to:?} does not exist")]
    UnknownTargetedLink { from: String, to: String },
    #[error("no monitor nodes configured")]
    NoMonitors,
}

/// Validated network topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    labels: Vec<String>,
    links: Vec<DirectedLink>,
    monitors: Vec<NodeId>,
    targeted: Vec<LinkId>,
    by_id: HashMap<LinkId, usize>,
    label_index: HashMap<String, NodeId>,
}

impl Topology {
    /// Builds and validates a topology. `targeted = None` targets every link.
    pub fn new(
        labels: Vec<String>,
        links: Vec<DirectedLink>,
        monitors: Vec<NodeId>,
        targeted: Option<Vec<LinkId>>,
    ) -> Result<Self, TopologyError> {
        if labels.is_empty() {
            return Err(TopologyError::EmptyGraph);
        }
        let mut label_index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if label_index.insert(l.clone(), i).is_some() {
                return Err(TopologyError::DuplicateNode(l.clone()));
            }
        }
        let n = labels.len();
        let name = |i: NodeId| {
            labels
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("#{i}"))
        };
        let mut by_id = HashMap::with_capacity(links.len());
        for (k, link) in links.iter().enumerate() {
            for end in [link.from, link.to] {
                if end >= n {
                    return Err(TopologyError::DanglingEndpoint {
                        from: name(link.from),
                        to: name(link.to),
                        missing: name(end),
                    });
                }
            }
            if link.from == link.to {
                return Err(TopologyError::SelfLoop(name(link.from)));
            }
            if !(link.capacity_bps > 0.0) || !link.capacity_bps.is_finite() {
                return Err(TopologyError::InvalidCapacity {
                    from: name(link.from),
                    to: name(link.to),
                    capacity: link.capacity_bps,
                });
            }
            if let Some(d) = link.true_delay_ms {
                if !(d >= 0.0) {
                    return Err(TopologyError::NegativeDelay {
                        from: name(link.from),
                        to: name(link.to),
                        delay: d,
                    });
                }
            }
            if by_id.insert(link.id(), k).is_some() {
                return Err(TopologyError::DuplicateLink {
                    from: name(link.from),
                    to: name(link.to),
                });
            }
        }
        let mut mons: Vec<NodeId> = monitors;
        for &m in &mons {
            if m >= n {
                return Err(TopologyError::UnknownMonitor(name(m)));
            }
        }
        mons.sort_unstable();
        mons.dedup();

        let mut targeted: Vec<LinkId> = match targeted {
            Some(t) => t,
            None => links.iter().map(DirectedLink::id).collect(),
        };
        for t in &targeted {
            if !by_id.contains_key(t) {
                return Err(TopologyError::UnknownTargetedLink {
                    from: name(t.from),
                    to: name(t.to),
                });
            }
        }
        targeted.sort_unstable();
        targeted.dedup();

        Ok(Self {
            labels,
            links,
            monitors: mons,
            targeted,
            by_id,
            label_index,
        })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.labels[node]
    }

    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.label_index.get(label).copied()
    }

    pub fn links(&self) -> &[DirectedLink] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Option<&DirectedLink> {
        self.by_id.get(&id).map(|&k| &self.links[k])
    }

    pub fn has_link(&self, id: LinkId) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn monitor_nodes(&self) -> &[NodeId] {
        &self.monitors
    }

    /// Targeted links sorted by `(from, to)`.
    pub fn targeted_links(&self) -> &[LinkId] {
        &self.targeted
    }

    pub fn link_label(&self, id: LinkId) -> String {
        format!("{}->{}", self.label(id.from), self.label(id.to))
    }

    /// Same topology with a different monitor set.
    pub fn with_monitors(&self, monitors: Vec<NodeId>) -> Result<Self, TopologyError> {
        Self::new(
            self.labels.clone(),
            self.links.clone(),
            monitors,
            Some(self.targeted.clone()),
        )
    }

    /// Same topology with a different targeted-link set.
    pub fn with_targeted(&self, targeted: Vec<LinkId>) -> Result<Self, TopologyError> {
        Self::new(
            self.labels.clone(),
            self.links.clone(),
            self.monitors.clone(),
            Some(targeted),
        )
    }

    /// Same topology with ground-truth delays replaced (links absent from the map lose theirs).
    pub fn with_delays(&self, delays: &HashMap<LinkId, f64>) -> Result<Self, TopologyError> {
        let links = self
            .links
            .iter()
            .map(|l| DirectedLink {
                true_delay_ms: delays.get(&l.id()).copied(),
                ..l.clone()
            })
            .collect();
        Self::new(
            self.labels.clone(),
            links,
            self.monitors.clone(),
            Some(self.targeted.clone()),
        )
    }

    /// Resolves monitor labels to node ids.
    pub fn resolve_labels(&self, labels: &[String]) -> Result<Vec<NodeId>, TopologyError> {
        labels
            .iter()
            .map(|l| {
                self.node_by_label(l)
                    .ok_or_else(|| TopologyError::UnknownMonitor(l.clone()))
            })
            .collect()
    }

    /// Out-neighbors of `node` in ascending order.
    pub fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .links
            .iter()
            .filter(|l| l.from == node)
            .map(|l| l.to)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn to_json(&self) -> TopologyFile {
        TopologyFile {
            directed: true,
            nodes: self.labels.clone(),
            monitor_nodes: self
                .monitors
                .iter()
                .map(|&m| self.labels[m].clone())
                .collect(),
            links: self
                .links
                .iter()
                .map(|l| LinkRecord {
                    from: self.labels[l.from].clone(),
                    to: self.labels[l.to].clone(),
                    capacity_bps: l.capacity_bps,
                    delay_ms: l.true_delay_ms,
                })
                .collect(),
            targeted_links: Some(
                self.targeted
                    .iter()
                    .map(|t| (self.labels[t.from].clone(), self.labels[t.to].clone()))
                    .collect(),
            ),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<(), TopologyError> {
        let text = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| TopologyError::Parse(e.to_string()))?;
        fs::write(path, text).map_err(|e| TopologyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// On-disk JSON form of a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    /// When false (the default) each link record stands for both directions.
    #[serde(default)]
    pub directed: bool,
    pub nodes: Vec<String>,
    #[serde(default)]
    pub monitor_nodes: Vec<String>,
    pub links: Vec<LinkRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targeted_links: Option<Vec<(String, String)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub from: String,
    pub to: String,
    pub capacity_bps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<f64>,
}

impl TopologyFile {
    pub fn into_topology(self) -> Result<Topology, TopologyError> {
        let mut index = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(TopologyError::DuplicateNode(n.clone()));
            }
        }
        let lookup = |from: &str, to: &str, which: &str| -> Result<NodeId, TopologyError> {
            index
                .get(which)
                .copied()
                .ok_or_else(|| TopologyError::DanglingEndpoint {
                    from: from.to_string(),
                    to: to.to_string(),
                    missing: which.to_string(),
                })
        };
        let mut links = Vec::with_capacity(self.links.len() * 2);
        let mut seen = BTreeSet::new();
        for rec in &self.links {
            let a = lookup(&rec.from, &rec.to, &rec.from)?;
            let b = lookup(&rec.from, &rec.to, &rec.to)?;
            if a == b {
                return Err(TopologyError::SelfLoop(rec.from.clone()));
            }
            let mut dirs = vec![(a, b)];
            if !self.directed {
                dirs.push((b, a));
            }
            for (f, t) in dirs {
                if !seen.insert((f, t)) {
                    return Err(TopologyError::DuplicateLink {
                        from: self.nodes[f].clone(),
                        to: self.nodes[t].clone(),
                    });
                }
                links.push(DirectedLink {
                    from: f,
                    to: t,
                    capacity_bps: rec.capacity_bps,
                    true_delay_ms: rec.delay_ms,
                });
            }
        }
        let monitors = self
            .monitor_nodes
            .iter()
            .map(|m| {
                index
                    .get(m)
                    .copied()
                    .ok_or_else(|| TopologyError::UnknownMonitor(m.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let targeted = match &self.targeted_links {
            None => None,
            Some(pairs) => Some(
                pairs
                    .iter()
                    .map(|(f, t)| match (index.get(f), index.get(t)) {
                        (Some(&a), Some(&b)) => Ok(LinkId::new(a, b)),
                        _ => Err(TopologyError::UnknownTargetedLink {
                            from: f.clone(),
                            to: t.clone(),
                        }),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        Topology::new(self.nodes, links, monitors, targeted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyFormat {
    Json,
    Graphml,
}

impl TopologyFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("graphml") || e.eq_ignore_ascii_case("xml") => {
                Self::Graphml
            }
            _ => Self::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphmlOptions {
    pub default_capacity_bps: f64,
    /// Parallel edges between the same node pair are folded into one link whose
    /// capacity is the sum of the bundle. When false they are a duplicate-link error.
    pub merge_parallel: bool,
}

impl Default for GraphmlOptions {
    fn default() -> Self {
        Self {
            default_capacity_bps: DEFAULT_GRAPHML_CAPACITY_BPS,
            merge_parallel: true,
        }
    }
}

pub fn load_topology(path: &Path, format: TopologyFormat) -> Result<Topology, TopologyError> {
    let text = fs::read_to_string(path).map_err(|e| TopologyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    match format {
        TopologyFormat::Json => parse_json(&text),
        TopologyFormat::Graphml => parse_graphml(&text, &GraphmlOptions::default()),
    }
}

pub fn parse_json(text: &str) -> Result<Topology, TopologyError> {
    let file: TopologyFile =
        serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
    file.into_topology()
}

/// Reads node ids and edges from a GraphML document (Topology Zoo layout).
///
/// Monitors are not part of GraphML; the result has an empty monitor set.
pub fn parse_graphml(text: &str, opts: &GraphmlOptions) -> Result<Topology, TopologyError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
    let root = doc.root_element();

    let mut speed_key = None;
    for key in root.children().filter(|n| n.has_tag_name("key")) {
        if key.attribute("for") == Some("edge") && key.attribute("attr.name") == Some("LinkSpeedRaw")
        {
            speed_key = key.attribute("id").map(str::to_string);
        }
    }

    let graph = root
        .children()
        .find(|n| n.has_tag_name("graph"))
        .ok_or_else(|| TopologyError::Parse("no <graph> element".into()))?;
    let directed = graph.attribute("edgedefault") == Some("directed");

    let mut labels = Vec::new();
    let mut index = HashMap::new();
    for node in graph.children().filter(|n| n.has_tag_name("node")) {
        let id = node
            .attribute("id")
            .ok_or_else(|| TopologyError::Parse("<node> without id".into()))?;
        if index.insert(id.to_string(), labels.len()).is_some() {
            return Err(TopologyError::DuplicateNode(id.to_string()));
        }
        labels.push(id.to_string());
    }
    if labels.is_empty() {
        return Err(TopologyError::EmptyGraph);
    }

    // (from, to) -> capacity, in first-seen order
    let mut order: Vec<(NodeId, NodeId)> = Vec::new();
    let mut capacity: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for edge in graph.children().filter(|n| n.has_tag_name("edge")) {
        let src = edge
            .attribute("source")
            .ok_or_else(|| TopologyError::Parse("<edge> without source".into()))?;
        let dst = edge
            .attribute("target")
            .ok_or_else(|| TopologyError::Parse("<edge> without target".into()))?;
        let endpoint = |which: &str| {
            index
                .get(which)
                .copied()
                .ok_or_else(|| TopologyError::DanglingEndpoint {
                    from: src.to_string(),
                    to: dst.to_string(),
                    missing: which.to_string(),
                })
        };
        let a = endpoint(src)?;
        let b = endpoint(dst)?;
        if a == b {
            return Err(TopologyError::SelfLoop(src.to_string()));
        }
        let cap = speed_key
            .as_deref()
            .and_then(|k| {
                edge.children()
                    .find(|d| d.has_tag_name("data") && d.attribute("key") == Some(k))
            })
            .and_then(|d| d.text())
            .and_then(|t| t.trim().parse::<f64>().ok())
            .filter(|c| *c > 0.0)
            .unwrap_or(opts.default_capacity_bps);

        let mut dirs = vec![(a, b)];
        if !directed {
            dirs.push((b, a));
        }
        for d in dirs {
            match capacity.get_mut(&d) {
                Some(existing) if opts.merge_parallel => *existing += cap,
                Some(_) => {
                    return Err(TopologyError::DuplicateLink {
                        from: labels[d.0].clone(),
                        to: labels[d.1].clone(),
                    })
                }
                None => {
                    capacity.insert(d, cap);
                    order.push(d);
                }
            }
        }
    }

    let links = order
        .into_iter()
        .map(|(f, t)| DirectedLink {
            from: f,
            to: t,
            capacity_bps: capacity[&(f, t)],
            true_delay_ms: None,
        })
        .collect();
    Topology::new(labels, links, Vec::new(), None)
}

/// Dense matrix view plus the column numbering of targeted links.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyMatrices {
    pub adjacency: Vec<Vec<u8>>,
    pub capacity: Vec<Vec<f64>>,
    pub link_index: LinkIndex,
}

impl TopologyMatrices {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Out-neighbors of `node` in ascending order.
    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[node]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 1)
            .map(|(j, _)| j)
    }

    pub fn has_link(&self, link: LinkId) -> bool {
        self.adjacency
            .get(link.from)
            .and_then(|row| row.get(link.to))
            .is_some_and(|&a| a == 1)
    }
}

/// Bijection between targeted links and measurement-matrix columns.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinkIndex {
    links: Vec<LinkId>,
    columns: HashMap<LinkId, usize>,
}

impl LinkIndex {
    /// Builds the index over `links`, sorted by `(from, to)`.
    pub fn new(mut links: Vec<LinkId>) -> Self {
        links.sort_unstable();
        links.dedup();
        let columns = links.iter().enumerate().map(|(k, &l)| (l, k)).collect();
        Self { links, columns }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn column(&self, link: LinkId) -> Option<usize> {
        self.columns.get(&link).copied()
    }

    pub fn link(&self, column: usize) -> LinkId {
        self.links[column]
    }

    pub fn links(&self) -> &[LinkId] {
        &self.links
    }

    pub fn contains(&self, link: LinkId) -> bool {
        self.columns.contains_key(&link)
    }
}

pub fn to_matrices(topo: &Topology) -> TopologyMatrices {
    let n = topo.node_count();
    let mut adjacency = vec![vec![0u8; n]; n];
    let mut capacity = vec![vec![0.0; n]; n];
    for l in topo.links() {
        adjacency[l.from][l.to] = 1;
        capacity[l.from][l.to] = l.capacity_bps;
    }
    TopologyMatrices {
        adjacency,
        capacity,
        link_index: LinkIndex::new(topo.targeted_links().to_vec()),
    }
}

pub fn possible_sources(topo: &Topology) -> Result<Vec<NodeId>, TopologyError> {
    if topo.monitor_nodes().is_empty() {
        return Err(TopologyError::NoMonitors);
    }
    Ok(topo.monitor_nodes().to_vec())
}
