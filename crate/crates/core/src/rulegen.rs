//! Compiles a flow plan into per-switch match/action tables.
//!
//! Open flows (source != destination) get a forward entry at every switch on
//! the path and a reverse entry for the reply. Loop flows are addressed to a
//! helper IP; the first switch carries the outbound entry and a return entry
//! that rewrites the packet into an echo reply, told apart by `in_port`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowplan::{FlowPlan, MonitoringFlow};
use crate::topology::{NodeId, Topology};

pub const DEFAULT_HELPER_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 254);
/// Rule capacity of one switch used for the overhead fraction.
pub const DEFAULT_SWITCH_CAPACITY: usize = 8000;
pub const ICMP_ECHO_REQUEST: u8 = 8;
pub const ICMP_ECHO_REPLY: u8 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("switch {switch} has no port toward {neighbor}")]
    MissingPort { switch: String, neighbor: String },
    #[error("switch {0} has no host port")]
    MissingHostPort(String),
    #[error("node {0} has no IP address")]
    MissingAddress(String),
    #[error("switch {switch} uses port {port} twice")]
    DuplicatePort { switch: String, port: u32 },
    #[error("two entries on switch {switch} share the match {detail}")]
    Collision { switch: String, detail: String },
    #[error("switch capacity must be > 0")]
    ZeroCapacity,
    #[error("auto addressing supports at most 253 monitors, got {0}")]
    TooManyHosts(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SwitchPorts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_port: Option<u32>,
    #[serde(default)]
    pub ports: BTreeMap<String, u32>,
}

/// Switch label to local port numbering.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortMap(pub BTreeMap<String, SwitchPorts>);

impl PortMap {
    /// Host on port 1 at every switch, adjacent switches (either direction) from port 2 in node order.
    pub fn auto(topo: &Topology) -> Self {
        let mut peers = vec![std::collections::BTreeSet::new(); topo.node_count()];
        for l in topo.links() {
            peers[l.from].insert(l.to);
            peers[l.to].insert(l.from);
        }
        let mut map = BTreeMap::new();
        for (n, adjacent) in peers.into_iter().enumerate() {
            let ports = adjacent
                .into_iter()
                .enumerate()
                .map(|(k, m)| (topo.label(m).to_string(), k as u32 + 2))
                .collect();
            map.insert(
                topo.label(n).to_string(),
                SwitchPorts {
                    host_port: Some(1),
                    ports,
                },
            );
        }
        Self(map)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        for (switch, sp) in &self.0 {
            let mut seen = HashSet::new();
            for &p in sp.host_port.iter().chain(sp.ports.values()) {
                if !seen.insert(p) {
                    return Err(RuleError::DuplicatePort {
                        switch: switch.clone(),
                        port: p,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn port(&self, switch: &str, neighbor: &str) -> Result<u32, RuleError> {
        self.0
            .get(switch)
            .and_then(|s| s.ports.get(neighbor))
            .copied()
            .ok_or_else(|| RuleError::MissingPort {
                switch: switch.to_string(),
                neighbor: neighbor.to_string(),
            })
    }

    pub fn host_port(&self, switch: &str) -> Result<u32, RuleError> {
        self.0
            .get(switch)
            .and_then(|s| s.host_port)
            .ok_or_else(|| RuleError::MissingHostPort(switch.to_string()))
    }

    /// Neighbor reached through `port`, or `None` for the host port.
    fn peer(&self, switch: &str, port: u32) -> Option<Option<&str>> {
        let sp = self.0.get(switch)?;
        if sp.host_port == Some(port) {
            return Some(None);
        }
        sp.ports
            .iter()
            .find(|(_, &p)| p == port)
            .map(|(n, _)| Some(n.as_str()))
    }
}

/// Node label to the IP of the host attached to it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Addressing(pub BTreeMap<String, Ipv4Addr>);

impl Addressing {
    /// The k-th monitor in node order gets `10.0.0.(k + 1)`.
    pub fn auto(topo: &Topology) -> Result<Self, RuleError> {
        let mons = topo.monitor_nodes();
        if mons.len() > 253 {
            return Err(RuleError::TooManyHosts(mons.len()));
        }
        Ok(Self(
            mons.iter()
                .enumerate()
                .map(|(k, &m)| (topo.label(m).to_string(), Ipv4Addr::new(10, 0, 0, k as u8 + 1)))
                .collect(),
        ))
    }

    pub fn ip(&self, node: &str) -> Result<Ipv4Addr, RuleError> {
        self.0
            .get(node)
            .copied()
            .ok_or_else(|| RuleError::MissingAddress(node.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "field", content = "value", rename_all = "snake_case")]
pub enum SetField {
    Ipv4Src(Ipv4Addr),
    Ipv4Dst(Ipv4Addr),
    Icmpv4Type(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    SetField(SetField),
    Output(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub switch: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_port: Option<u32>,
    pub ip_src: Ipv4Addr,
    pub ip_dst: Ipv4Addr,
    pub ip_tos: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icmp_type: Option<u8>,
    pub actions: Vec<Action>,
}

impl FlowEntry {
    fn match_key(&self) -> (Option<u32>, Ipv4Addr, Ipv4Addr, u8, Option<u8>) {
        (self.in_port, self.ip_src, self.ip_dst, self.ip_tos, self.icmp_type)
    }

    pub fn output(&self) -> Option<u32> {
        match self.actions.last() {
            Some(Action::Output(p)) => Some(*p),
            _ => None,
        }
    }

    pub fn matches(&self, p: &Packet, in_port: u32) -> bool {
        self.in_port.map_or(true, |q| q == in_port)
            && self.icmp_type.map_or(true, |t| t == p.icmp_type)
            && self.ip_src == p.ip_src
            && self.ip_dst == p.ip_dst
            && self.ip_tos == p.ip_tos
    }
}

/// Entries of one switch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchTable {
    pub switch: String,
    pub entries: Vec<FlowEntry>,
}

/// Tables of the switches that received entries, in node order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleTables(pub Vec<SwitchTable>);

impl RuleTables {
    pub fn entries(&self) -> impl Iterator<Item = &FlowEntry> {
        self.0.iter().flat_map(|t| t.entries.iter())
    }

    pub fn table(&self, switch: &str) -> Option<&SwitchTable> {
        self.0.iter().find(|t| t.switch == switch)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|t| t.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the tables for every plan flow.
pub fn compile_plan(
    plan: &FlowPlan,
    ports: &PortMap,
    addressing: &Addressing,
    helper_ip: Ipv4Addr,
) -> Result<RuleTables, RuleError> {
    ports.validate()?;
    let mut per_switch: BTreeMap<NodeId, Vec<FlowEntry>> = BTreeMap::new();
    for f in plan.flows() {
        for (node, entry) in flow_entries(plan, f, ports, addressing, helper_ip)? {
            per_switch.entry(node).or_default().push(entry);
        }
    }
    let mut tables = Vec::with_capacity(per_switch.len());
    for (node, mut entries) in per_switch {
        entries.sort_by_key(FlowEntry::match_key);
        for w in entries.windows(2) {
            if w[0].match_key() == w[1].match_key() {
                return Err(RuleError::Collision {
                    switch: w[0].switch.clone(),
                    detail: format!(
                        "in_port={:?} {}->{} tos {}",
                        w[0].in_port, w[0].ip_src, w[0].ip_dst, w[0].ip_tos
                    ),
                });
            }
        }
        tables.push(SwitchTable {
            switch: plan.label(node).to_string(),
            entries,
        });
    }
    Ok(RuleTables(tables))
}

fn flow_entries(
    plan: &FlowPlan,
    f: &MonitoringFlow,
    ports: &PortMap,
    addressing: &Addressing,
    helper_ip: Ipv4Addr,
) -> Result<Vec<(NodeId, FlowEntry)>, RuleError> {
    let nodes = f.nodes();
    let label = |n: NodeId| plan.label(n);
    let src_ip = addressing.ip(label(f.source))?;
    let entry = |n: NodeId, in_port, ip_src, ip_dst, actions| FlowEntry {
        switch: label(n).to_string(),
        in_port,
        ip_src,
        ip_dst,
        ip_tos: f.tos,
        icmp_type: None,
        actions,
    };
    let mut out = Vec::new();
    if f.is_loop() {
        let k = nodes.len() - 1;
        for i in 0..k {
            let here = label(nodes[i]);
            let in_port = if i == 0 {
                ports.host_port(here)?
            } else {
                ports.port(here, label(nodes[i - 1]))?
            };
            let out_port = ports.port(here, label(nodes[i + 1]))?;
            out.push((
                nodes[i],
                entry(nodes[i], Some(in_port), src_ip, helper_ip, vec![Action::Output(out_port)]),
            ));
        }
        let home = label(nodes[k]);
        let in_port = ports.port(home, label(nodes[k - 1]))?;
        out.push((
            nodes[k],
            entry(
                nodes[k],
                Some(in_port),
                src_ip,
                helper_ip,
                vec![
                    Action::SetField(SetField::Ipv4Src(helper_ip)),
                    Action::SetField(SetField::Ipv4Dst(src_ip)),
                    Action::SetField(SetField::Icmpv4Type(ICMP_ECHO_REPLY)),
                    Action::Output(ports.host_port(home)?),
                ],
            ),
        ));
    } else {
        let dst_ip = addressing.ip(label(f.destination))?;
        let last = nodes.len() - 1;
        for (i, &n) in nodes.iter().enumerate() {
            let here = label(n);
            let fwd = if i == last {
                ports.host_port(here)?
            } else {
                ports.port(here, label(nodes[i + 1]))?
            };
            let rev = if i == 0 {
                ports.host_port(here)?
            } else {
                ports.port(here, label(nodes[i - 1]))?
            };
            out.push((n, entry(n, None, src_ip, dst_ip, vec![Action::Output(fwd)])));
            out.push((n, entry(n, None, dst_ip, src_ip, vec![Action::Output(rev)])));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub ip_src: Ipv4Addr,
    pub ip_dst: Ipv4Addr,
    pub ip_tos: u8,
    pub icmp_type: u8,
}

/// Where a traced packet went.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub switches: Vec<String>,
    /// Switch whose host port the packet left through, if any.
    pub delivered_at: Option<String>,
    pub packet: Packet,
}

/// Walks a packet from the host attached to `switch` through the tables.
///
/// Stops at a host port, a table miss, or after `max_hops` switches.
pub fn trace_packet(
    tables: &RuleTables,
    ports: &PortMap,
    switch: &str,
    mut packet: Packet,
    max_hops: usize,
) -> Trace {
    let by_switch: HashMap<&str, &SwitchTable> =
        tables.0.iter().map(|t| (t.switch.as_str(), t)).collect();
    let mut here = switch.to_string();
    let mut in_port = ports.host_port(switch).unwrap_or(0);
    let mut switches = Vec::new();
    for _ in 0..max_hops {
        switches.push(here.clone());
        let hit = by_switch
            .get(here.as_str())
            .and_then(|t| t.entries.iter().find(|e| e.matches(&packet, in_port)));
        let Some(e) = hit else { break };
        let mut out_port = None;
        for a in &e.actions {
            match *a {
                Action::SetField(SetField::Ipv4Src(ip)) => packet.ip_src = ip,
                Action::SetField(SetField::Ipv4Dst(ip)) => packet.ip_dst = ip,
                Action::SetField(SetField::Icmpv4Type(t)) => packet.icmp_type = t,
                Action::Output(p) => out_port = Some(p),
            }
        }
        let Some(p) = out_port else { break };
        match ports.peer(&here, p) {
            Some(None) => {
                return Trace {
                    switches,
                    delivered_at: Some(here),
                    packet,
                }
            }
            Some(Some(next)) => {
                let next = next.to_string();
                let Ok(back) = ports.port(&next, &here) else { break };
                in_port = back;
                here = next;
            }
            None => break,
        }
    }
    Trace {
        switches,
        delivered_at: None,
        packet,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleStats {
    pub per_switch: Vec<(String, usize)>,
    pub average: f64,
    pub capacity: usize,
    pub fraction: f64,
}

/// Entry counts per switch; the average runs over switches holding entries.
pub fn rules_per_switch(tables: &RuleTables, switch_capacity: usize) -> Result<RuleStats, RuleError> {
    if switch_capacity == 0 {
        return Err(RuleError::ZeroCapacity);
    }
    let per_switch: Vec<(String, usize)> = tables
        .0
        .iter()
        .filter(|t| !t.entries.is_empty())
        .map(|t| (t.switch.clone(), t.entries.len()))
        .collect();
    let average = if per_switch.is_empty() {
        0.0
    } else {
        per_switch.iter().map(|(_, n)| *n as f64).sum::<f64>() / per_switch.len() as f64
    };
    Ok(RuleStats {
        per_switch,
        average,
        capacity: switch_capacity,
        fraction: average / switch_capacity as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowplan::{select_flows, PlanConfig};
    use crate::topology::{parse_json, LinkIndex};

    fn ring() -> Topology {
        parse_json(
            r#"{"nodes":["s1","s2","s3"],"monitor_nodes":["s1"],"links":[
                {"from":"s1","to":"s2","capacity_bps":1e9},{"from":"s2","to":"s3","capacity_bps":1e9},
                {"from":"s3","to":"s1","capacity_bps":1e9}]}"#,
        )
        .unwrap()
    }

    fn ring_plan(t: &Topology) -> FlowPlan {
        select_flows(
            t,
            &PlanConfig {
                max_length: 3,
                min_cover: 1,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn auto_maps() {
        let t = ring();
        let p = PortMap::auto(&t);
        assert_eq!(p.host_port("s2").unwrap(), 1);
        assert_eq!(p.port("s2", "s1").unwrap(), 2);
        assert_eq!(p.port("s2", "s3").unwrap(), 3);
        let a = Addressing::auto(&t).unwrap();
        assert_eq!(a.ip("s1").unwrap(), Ipv4Addr::new(10, 0, 0, 1));
        assert!(a.ip("s2").is_err());
    }

    #[test]
    fn loop_flows_trace_home() {
        let t = ring();
        let plan = ring_plan(&t);
        let ports = PortMap::auto(&t);
        let addr = Addressing::auto(&t).unwrap();
        let tables = compile_plan(&plan, &ports, &addr, DEFAULT_HELPER_IP).unwrap();
        for f in plan.flows() {
            let tr = trace_packet(
                &tables,
                &ports,
                "s1",
                Packet {
                    ip_src: Ipv4Addr::new(10, 0, 0, 1),
                    ip_dst: DEFAULT_HELPER_IP,
                    ip_tos: f.tos,
                    icmp_type: ICMP_ECHO_REQUEST,
                },
                16,
            );
            let want: Vec<String> = f.nodes().iter().map(|&n| t.label(n).to_string()).collect();
            assert_eq!(tr.switches, want);
            assert_eq!(tr.delivered_at.as_deref(), Some("s1"));
            assert_eq!(tr.packet.icmp_type, ICMP_ECHO_REPLY);
            assert_eq!(tr.packet.ip_src, DEFAULT_HELPER_IP);
            assert_eq!(tr.packet.ip_dst, Ipv4Addr::new(10, 0, 0, 1));
        }
    }

    #[test]
    fn output_is_last_action() {
        let t = ring();
        let plan = ring_plan(&t);
        let tables =
            compile_plan(&plan, &PortMap::auto(&t), &Addressing::auto(&t).unwrap(), DEFAULT_HELPER_IP)
                .unwrap();
        for e in tables.entries() {
            assert!(e.output().is_some());
            assert_eq!(
                e.actions.iter().filter(|a| matches!(a, Action::Output(_))).count(),
                1
            );
        }
    }

    #[test]
    fn missing_port_and_address() {
        let t = ring();
        let plan = ring_plan(&t);
        let mut ports = PortMap::auto(&t);
        ports.0.get_mut("s2").unwrap().ports.remove("s3");
        let addr = Addressing::auto(&t).unwrap();
        assert!(matches!(
            compile_plan(&plan, &ports, &addr, DEFAULT_HELPER_IP),
            Err(RuleError::MissingPort { .. })
        ));
        assert!(matches!(
            compile_plan(&plan, &PortMap::auto(&t), &Addressing::default(), DEFAULT_HELPER_IP),
            Err(RuleError::MissingAddress(_))
        ));
        let mut dup = PortMap::auto(&t);
        dup.0.get_mut("s1").unwrap().ports.insert("s3".into(), 1);
        assert!(matches!(dup.validate(), Err(RuleError::DuplicatePort { .. })));
    }

    #[test]
    fn identical_flows_collide() {
        let t = ring();
        let f = MonitoringFlow::from_nodes(0, &[0, 1, 2, 0], 1);
        let plan = FlowPlan::new(
            t.labels().to_vec(),
            LinkIndex::new(t.targeted_links().to_vec()),
            vec![f.clone(), f],
        );
        assert!(matches!(
            compile_plan(&plan, &PortMap::auto(&t), &Addressing::auto(&t).unwrap(), DEFAULT_HELPER_IP),
            Err(RuleError::Collision { .. })
        ));
    }

    #[test]
    fn empty_plan_and_stats() {
        let t = ring();
        let tables = compile_plan(
            &FlowPlan::empty(&t),
            &PortMap::auto(&t),
            &Addressing::auto(&t).unwrap(),
            DEFAULT_HELPER_IP,
        )
        .unwrap();
        assert!(tables.is_empty());
        let s = rules_per_switch(&tables, 8000).unwrap();
        assert_eq!(s.average, 0.0);
        assert_eq!(s.fraction, 0.0);
        assert_eq!(rules_per_switch(&tables, 0), Err(RuleError::ZeroCapacity));
    }

    #[test]
    fn json_shape() {
        let e = FlowEntry {
            switch: "s1".into(),
            in_port: Some(3),
            ip_src: Ipv4Addr::new(10, 0, 0, 1),
            ip_dst: Ipv4Addr::new(10, 0, 0, 100),
            ip_tos: 1,
            icmp_type: None,
            actions: vec![
                Action::SetField(SetField::Icmpv4Type(0)),
                Action::Output(1),
            ],
        };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"switch":"s1","in_port":3,"ip_src":"10.0.0.1","ip_dst":"10.0.0.100",
                "ip_tos":1,"actions":[{"set_field":{"field":"icmpv4_type","value":0}},{"output":1}]})
        );
        let back: FlowEntry = serde_json::from_value(v).unwrap();
        assert_eq!(back, e);
    }
}
