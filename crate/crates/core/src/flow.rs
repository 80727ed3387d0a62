//! Max-flow for allocation (transportation feasibility) problems.
//!
//! Dinic's algorithm on real capacities. Adjacency lists are scanned in
//! insertion order, so the flow returned for a given network is
//! deterministic.

use std::collections::VecDeque;

const EPS: f64 = 1e-13;

#[derive(Clone, Debug)]
struct Edge {
    to: usize,
    cap: f64,
    flow: f64,
}

#[derive(Clone, Debug)]
pub struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork { edges: Vec::new(), adj: vec![Vec::new(); nodes] }
    }

    /// Add a directed edge and return its handle.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, flow: 0.0 });
        self.edges.push(Edge { to: from, cap: 0.0, flow: 0.0 });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    pub fn flow(&self, edge: usize) -> f64 {
        self.edges[edge].flow
    }

    fn residual(&self, e: usize) -> f64 {
        self.edges[e].cap - self.edges[e].flow
    }

    fn levels(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let mut level = vec![usize::MAX; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.edges[e].to;
                if level[v] == usize::MAX && self.residual(e) > EPS {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (level[t] != usize::MAX).then_some(level)
    }

    fn augment(&mut self, u: usize, t: usize, pushed: f64, level: &[usize], next: &mut [usize]) -> f64 {
        if u == t {
            return pushed;
        }
        while next[u] < self.adj[u].len() {
            let e = self.adj[u][next[u]];
            let v = self.edges[e].to;
            if level[v] == level[u] + 1 && self.residual(e) > EPS {
                let got = self.augment(v, t, pushed.min(self.residual(e)), level, next);
                if got > EPS {
                    self.edges[e].flow += got;
                    self.edges[e ^ 1].flow -= got;
                    return got;
                }
            }
            next[u] += 1;
        }
        0.0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while let Some(level) = self.levels(s, t) {
            let mut next = vec![0; self.adj.len()];
            loop {
                let pushed = self.augment(s, t, f64::INFINITY, &level, &mut next);
                if pushed <= EPS {
                    break;
                }
                total += pushed;
            }
        }
        total
    }
}

/// Result of a bipartite transportation problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Transport {
    /// Total shipped amount.
    pub total: f64,
    /// `(supply index, demand index, amount)` for every positive shipment,
    /// in supply-major order.
    pub shipments: Vec<(usize, usize, f64)>,
    /// Amount shipped out of each supply node.
    pub shipped: Vec<f64>,
    /// Amount received by each demand node.
    pub received: Vec<f64>,
}

/// Ship as much as possible from supplies to demands along admissible pairs
/// (unbounded arc capacity).
pub fn transport(supply: &[f64], demand: &[f64], admissible: impl Fn(usize, usize) -> bool) -> Transport {
    let ns = supply.len();
    let nd = demand.len();
    let source = ns + nd;
    let sink = source + 1;
    let mut net = FlowNetwork::new(ns + nd + 2);
    let unbounded: f64 = supply.iter().sum::<f64>() + demand.iter().sum::<f64>() + 1.0;
    let src_edges: Vec<usize> = supply.iter().enumerate().map(|(i, &s)| net.add_edge(source, i, s.max(0.0))).collect();
    let mut arcs = Vec::new();
    for i in 0..ns {
        for j in 0..nd {
            if admissible(i, j) {
                arcs.push((i, j, net.add_edge(i, ns + j, unbounded)));
            }
        }
    }
    let sink_edges: Vec<usize> = demand.iter().enumerate().map(|(j, &d)| net.add_edge(ns + j, sink, d.max(0.0))).collect();
    let total = net.max_flow(source, sink);
    let shipments = arcs
        .iter()
        .filter_map(|&(i, j, e)| {
            let f = net.flow(e);
            (f > EPS).then_some((i, j, f))
        })
        .collect();
    Transport {
        total,
        shipments,
        shipped: src_edges.iter().map(|&e| net.flow(e)).collect(),
        received: sink_edges.iter().map(|&e| net.flow(e)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_network() {
        // CLRS figure 26.1, max flow 23
        let mut net = FlowNetwork::new(6);
        for (u, v, c) in [(0, 1, 16.), (0, 2, 13.), (1, 3, 12.), (2, 1, 4.), (2, 4, 14.), (3, 2, 9.), (3, 5, 20.), (4, 3, 7.), (4, 5, 4.)] {
            net.add_edge(u, v, c);
        }
        assert!((net.max_flow(0, 5) - 23.0).abs() < 1e-12);
    }

    #[test]
    fn transport_respects_capacities() {
        let t = transport(&[1.0, 1.0, 1.0], &[2.0, 2.0], |i, j| i != 2 || j == 1);
        assert!((t.total - 3.0).abs() < 1e-12);
        for (i, s) in t.shipped.iter().enumerate() {
            let out: f64 = t.shipments.iter().filter(|x| x.0 == i).map(|x| x.2).sum();
            assert!((out - s).abs() < 1e-12 && *s <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn fractional_capacities() {
        let t = transport(&[0.5, 0.25], &[0.6], |_, _| true);
        assert!((t.total - 0.6).abs() < 1e-12);
    }
}
