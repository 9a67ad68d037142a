use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::topology::{LinkId, NodeId, Topology};

use super::{overhead_within, FlowPlan, MonitoringFlow, PlanConfig};

/// One broken constraint of the flow-selection program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    /// Stable short identifier of the constraint.
    pub code: String,
    pub subject: String,
    pub observed: f64,
    pub required: String,
}

impl Violation {
    fn new(
        constraint: &str,
        code: &str,
        subject: String,
        observed: f64,
        required: String,
    ) -> Self {
        Self {
            constraint: constraint.to_string(),
            code: code.to_string(),
            subject,
            observed,
            required,
        }
    }
}

/// Checks routing, cover, conservation, overhead, loop, length and ordering constraints.
///
/// Routing matrices are read off each flow's path; the ordering matrix gives
/// the k-th traversed link the value k. Conservation is checked per flow.
pub fn validate_plan(plan: &FlowPlan, topo: &Topology, cfg: &PlanConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let name = |n: NodeId| {
        topo.labels()
            .get(n)
            .cloned()
            .unwrap_or_else(|| format!("#{n}"))
    };
    let link_name = |l: LinkId| format!("{}->{}", name(l.from), name(l.to));

    for f in plan.flows() {
        check_flow(f, topo, cfg, &name, &link_name, &mut out);
    }

    // cover of every targeted link
    let loads = plan.link_loads();
    for &l in topo.targeted_links() {
        let n = loads.get(&l).copied().unwrap_or(0);
        if n < cfg.min_cover {
            out.push(Violation::new(
                "minimum flows per targeted link",
                "min-cover",
                format!("link {}", link_name(l)),
                n as f64,
                format!(">= {}", cfg.min_cover),
            ));
        }
    }

    // overhead on every used link
    let mut sorted: Vec<(&LinkId, &usize)> = loads.iter().collect();
    sorted.sort();
    for (&l, &n) in sorted {
        let Some(link) = topo.link(l) else { continue };
        let load = n as f64 * cfg.probe_rate_bps;
        if !overhead_within(load, cfg.max_overhead * link.capacity_bps) {
            out.push(Violation::new(
                "monitoring overhead",
                "overhead",
                format!("link {}", link_name(l)),
                load / link.capacity_bps,
                format!("<= {}", cfg.max_overhead),
            ));
        }
    }
    out
}

fn check_flow(
    f: &MonitoringFlow,
    topo: &Topology,
    cfg: &PlanConfig,
    name: &dyn Fn(NodeId) -> String,
    link_name: &dyn Fn(LinkId) -> String,
    out: &mut Vec<Violation>,
) {
    let subject = |what: String| format!("flow {} {}", f.id, what);

    // routing matrix with multiplicity; ordering matrix keeps the last step index
    let mut routing: BTreeMap<LinkId, usize> = BTreeMap::new();
    let mut ordering: BTreeMap<LinkId, usize> = BTreeMap::new();
    for (k, &l) in f.path.iter().enumerate() {
        *routing.entry(l).or_insert(0) += 1;
        ordering.insert(l, k + 1);
    }

    for &l in routing.keys() {
        if !topo.has_link(l) {
            out.push(Violation::new(
                "use existing links",
                "link-exists",
                subject(format!("link {}", link_name(l))),
                1.0,
                "<= 0 (no such link)".into(),
            ));
        }
    }

    let hops = f.path.len();
    if hops == 0 || hops > cfg.max_length {
        out.push(Violation::new(
            "flow length",
            "max-length",
            format!("flow {}", f.id),
            hops as f64,
            format!("1..={}", cfg.max_length),
        ));
    }

    let mut out_deg: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut in_deg: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut out_order: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut in_order: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (&l, &r) in &routing {
        *out_deg.entry(l.from).or_insert(0) += r;
        *in_deg.entry(l.to).or_insert(0) += r;
        *out_order.entry(l.from).or_insert(0) += ordering[&l];
        *in_order.entry(l.to).or_insert(0) += ordering[&l] + r;
    }
    let mut nodes: Vec<NodeId> = out_deg.keys().chain(in_deg.keys()).copied().collect();
    nodes.push(f.source);
    nodes.push(f.destination);
    nodes.sort_unstable();
    nodes.dedup();

    for &i in &nodes {
        let o = out_deg.get(&i).copied().unwrap_or(0) as i64;
        let n = in_deg.get(&i).copied().unwrap_or(0) as i64;
        let (required, code) = if f.is_loop() {
            (0, "loop-balance")
        } else if i == f.source {
            (1, "path-balance")
        } else if i == f.destination {
            (-1, "path-balance")
        } else {
            (0, "path-balance")
        };
        if o - n != required {
            out.push(Violation::new(
                "flow conservation",
                code,
                subject(format!("node {}", name(i))),
                (o - n) as f64,
                format!("= {required}"),
            ));
        }
        if o > 1 {
            out.push(Violation::new(
                "no routing loop",
                "single-exit",
                subject(format!("node {}", name(i))),
                o as f64,
                "<= 1".into(),
            ));
        }
    }

    let leave = out_deg.get(&f.source).copied().unwrap_or(0);
    if leave != 1 {
        out.push(Violation::new(
            "flow leaves its source",
            "source-exit",
            subject(format!("node {}", name(f.source))),
            leave as f64,
            "= 1".into(),
        ));
    }
    let enter = in_deg.get(&f.destination).copied().unwrap_or(0);
    if enter != 1 {
        out.push(Violation::new(
            "flow enters its destination",
            "destination-entry",
            subject(format!("node {}", name(f.destination))),
            enter as f64,
            "= 1".into(),
        ));
    }

    for (&l, &p) in &ordering {
        if p > cfg.max_length * routing[&l] {
            out.push(Violation::new(
                "ordering bounded by routing",
                "order-bound",
                subject(format!("link {}", link_name(l))),
                p as f64,
                format!("<= {}", cfg.max_length * routing[&l]),
            ));
        }
    }
    for &i in &nodes {
        if i == f.source || i == f.destination {
            continue;
        }
        let o = out_order.get(&i).copied().unwrap_or(0);
        let n = in_order.get(&i).copied().unwrap_or(0);
        if o != n {
            out.push(Violation::new(
                "step number increases by one per hop",
                "order-step",
                subject(format!("node {}", name(i))),
                o as f64,
                format!("= {n}"),
            ));
        }
    }
}

/// Route signature `sum((N+1)*i + j)` over the flow's link set, with 1-based node numbers.
pub fn route_code(flow: &MonitoringFlow, node_count: usize) -> i64 {
    let n1 = node_count as i64 + 1;
    flow.link_set()
        .iter()
        .map(|l| n1 * (l.from as i64 + 1) + (l.to as i64 + 1))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub first: usize,
    pub second: usize,
    /// Difference of the two route signatures (always 0 for a duplicate).
    pub similarity: i64,
}

/// Pairs of flows with identical link sets.
///
/// A zero signature difference is necessary for a duplicate; pairs whose
/// signatures collide without sharing a link set are not flagged.
pub fn distinctness_check(plan: &FlowPlan) -> Vec<DuplicatePair> {
    let n = plan.node_count();
    let mut by_code: HashMap<i64, Vec<&MonitoringFlow>> = HashMap::new();
    for f in plan.flows() {
        by_code.entry(route_code(f, n)).or_default().push(f);
    }
    let mut out = Vec::new();
    for group in by_code.values() {
        for (a, fa) in group.iter().enumerate() {
            for fb in &group[a + 1..] {
                if fa.link_set() == fb.link_set() {
                    let (first, second) = (fa.id.min(fb.id), fa.id.max(fb.id));
                    out.push(DuplicatePair {
                        first,
                        second,
                        similarity: route_code(fa, n) - route_code(fb, n),
                    });
                }
            }
        }
    }
    out.sort_by_key(|p| (p.first, p.second));
    out
}

/// Largest monitoring-traffic / capacity ratio over all links used by the plan.
pub fn overhead_ratio(plan: &FlowPlan, topo: &Topology, cfg: &PlanConfig) -> f64 {
    plan.link_loads()
        .into_iter()
        .filter_map(|(l, n)| {
            topo.link(l)
                .map(|d| n as f64 * cfg.probe_rate_bps / d.capacity_bps)
        })
        .fold(0.0, f64::max)
}
