use crate::topology::{LinkId, LinkIndex, NodeId, TopologyMatrices};

use super::MonitoringFlow;

/// Every loop of exactly `length` hops that leaves `start` and comes back to it.
///
/// Intermediate nodes are distinct and never equal to `start`; only routes that
/// cross at least one targeted link are returned. Neighbors are explored in
/// ascending order, so the output order is deterministic. Returned flows carry
/// `id = 0` and `tos = 0`; the caller numbers and tags them.
pub fn find_routes(
    start: NodeId,
    length: usize,
    matrices: &TopologyMatrices,
    targeted: &LinkIndex,
) -> Vec<MonitoringFlow> {
    let mut out = Vec::new();
    if length == 0 || start >= matrices.node_count() {
        return out;
    }
    let mut walk = Walk {
        matrices,
        targeted,
        start,
        on_route: vec![false; matrices.node_count()],
        route: vec![start],
        out: &mut out,
    };
    walk.extend(start, length);
    out
}

struct Walk<'a> {
    matrices: &'a TopologyMatrices,
    targeted: &'a LinkIndex,
    start: NodeId,
    on_route: Vec<bool>,
    route: Vec<NodeId>,
    out: &'a mut Vec<MonitoringFlow>,
}

impl Walk<'_> {
    fn extend(&mut self, current: NodeId, remaining: usize) {
        if remaining == 1 {
            // last hop must close the loop
            if self.matrices.has_link(LinkId::new(current, self.start)) {
                self.route.push(self.start);
                let flow = MonitoringFlow::from_nodes(0, &self.route, 0);
                if flow.path.iter().any(|&l| self.targeted.contains(l)) {
                    self.out.push(flow);
                }
                self.route.pop();
            }
            return;
        }
        let next: Vec<NodeId> = self.matrices.neighbors(current).collect();
        for n in next {
            if n == self.start || self.on_route[n] {
                continue;
            }
            self.on_route[n] = true;
            self.route.push(n);
            self.extend(n, remaining - 1);
            self.route.pop();
            self.on_route[n] = false;
        }
    }
}
