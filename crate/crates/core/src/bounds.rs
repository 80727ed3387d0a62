//! Convexity analysis over the constraint set and construction of the
//! convex bounds used by the double-loop algorithm.
//!
//! Every allocation question here is a transportation problem between
//! "resource" regions and "demand" regions along strict inclusion, solved
//! exactly by max-flow (see [`crate::flow`]).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::{check_beliefs, check_compatible, Beliefs};
use crate::error::{Error, Result};
use crate::flow::transport;
use crate::model::FactorModel;
use crate::regions::RegionGraph;
use crate::table::{projection_map, PROB_FLOOR};

/// Slack on flow totals when deciding feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Inner-loop overcounting scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Concave terms bounded: `c̃ = 0` on V−, `c̃ = c` on V+.
    Conv1,
    /// All subset terms bounded: `c̃ = 0` on V.
    Conv2,
    /// Just convex over the constraint set, with unused convex resources
    /// folded into the bounded concave terms.
    Conv3,
    /// `c̃ = 1` on V−, `c̃ = c` on V+.
    Cccp,
    /// No bounding: `c̃ = c` (single-loop run).
    None,
}

impl Variant {
    /// The four bounding variants, tightest first.
    pub const BOUNDS: [Variant; 4] = [Variant::Conv3, Variant::Conv2, Variant::Conv1, Variant::Cccp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Conv1 => "conv1",
            Variant::Conv2 => "conv2",
            Variant::Conv3 => "conv3",
            Variant::Cccp => "cccp",
            Variant::None => "none",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conv1" => Ok(Variant::Conv1),
            "conv2" => Ok(Variant::Conv2),
            "conv3" => Ok(Variant::Conv3),
            "cccp" => Ok(Variant::Cccp),
            "none" => Ok(Variant::None),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Sparse nonnegative matrix `A_γβ` from resource regions γ to demand regions β.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    entries: BTreeMap<(usize, usize), f64>,
}

impl Allocation {
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(g, b), &a)| (g, b, a))
    }

    pub fn get(&self, gamma: usize, beta: usize) -> f64 {
        self.entries.get(&(gamma, beta)).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row_sum(&self, gamma: usize) -> f64 {
        self.entries().filter(|e| e.0 == gamma).map(|e| e.2).sum()
    }

    pub fn col_sum(&self, beta: usize) -> f64 {
        self.entries().filter(|e| e.1 == beta).map(|e| e.2).sum()
    }
}

struct Solved {
    allocation: Allocation,
    total: f64,
    shipped: Vec<f64>,
    received: Vec<f64>,
}

/// Maximal allocation from `supply` to `demand` regions along `sup ⊃ dem`
/// (or `dem ⊃ sup` when `upward`).
fn allocate(g: &RegionGraph, supply: &[(usize, f64)], demand: &[(usize, f64)], upward: bool) -> Solved {
    let caps: Vec<f64> = supply.iter().map(|s| s.1).collect();
    let needs: Vec<f64> = demand.iter().map(|d| d.1).collect();
    let t = transport(&caps, &needs, |i, j| {
        let (s, d) = (supply[i].0, demand[j].0);
        if upward {
            g.contains(d, s)
        } else {
            g.contains(s, d)
        }
    });
    let mut allocation = Allocation::default();
    for (i, j, a) in t.shipments {
        allocation.entries.insert((supply[i].0, demand[j].0), a);
    }
    Solved { allocation, total: t.total, shipped: t.shipped, received: t.received }
}

/// Resource side `R+` (all regions with `c > 0`) and demand side `V−` (`|c|` of
/// regions with `c < 0`) for a given assignment of overcounting numbers.
pub fn convexity_sides(g: &RegionGraph, c: &[f64]) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let supply = (0..g.len()).filter(|&r| c[r] > 0.0).map(|r| (r, c[r])).collect();
    let demand = (0..g.len()).filter(|&r| c[r] < 0.0).map(|r| (r, -c[r])).collect();
    (supply, demand)
}

/// Sides for the bound certificate: `V−` supplies `|c|`, `V+` demands `c`.
pub fn conv2_sides(g: &RegionGraph) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let c = g.overcounting();
    let supply = g.v_minus().into_iter().map(|r| (r, -c[r])).collect();
    let demand = g.v_plus().into_iter().map(|r| (r, c[r])).collect();
    (supply, demand)
}

/// Whether the free energy with overcounting numbers `c` is convex over the
/// consistency constraints, certified by an allocation from positive regions
/// to the negative regions they contain that covers every `|c_β|`.
pub fn check_convex_over_constraints(g: &RegionGraph, c: &[f64]) -> Option<Allocation> {
    assert_eq!(c.len(), g.len(), "one overcounting number per region");
    let (supply, demand) = convexity_sides(g, c);
    let need: f64 = demand.iter().map(|d| d.1).sum();
    let solved = allocate(g, &supply, &demand, false);
    (solved.total >= need - FEASIBILITY_TOL).then_some(solved.allocation)
}

/// Whether bounding every subset entropy yields an upper bound: negative
/// subsets must shield every positive subset they contain.
pub fn check_conv2_bound(g: &RegionGraph) -> Option<Allocation> {
    let (supply, demand) = conv2_sides(g);
    let need: f64 = demand.iter().map(|d| d.1).sum();
    let solved = allocate(g, &supply, &demand, false);
    (solved.total >= need - FEASIBILITY_TOL).then_some(solved.allocation)
}

/// Check the four allocation conditions by direct summation: support on
/// strict inclusion, nonnegativity, resources respected, demands covered.
pub fn verify_allocation(
    g: &RegionGraph,
    a: &Allocation,
    supply: &[(usize, f64)],
    demand: &[(usize, f64)],
    tol: f64,
) -> std::result::Result<(), String> {
    for (gamma, beta, v) in a.entries() {
        if !supply.iter().any(|s| s.0 == gamma) || !demand.iter().any(|d| d.0 == beta) {
            return Err(format!("entry ({gamma}, {beta}) outside the supply/demand sides"));
        }
        if v != 0.0 && !g.contains(gamma, beta) {
            return Err(format!("entry ({gamma}, {beta}) without inclusion"));
        }
        if v < 0.0 {
            return Err(format!("negative entry ({gamma}, {beta}) = {v}"));
        }
    }
    for &(gamma, cap) in supply {
        let used = a.row_sum(gamma);
        if used > cap + tol {
            return Err(format!("region {gamma} allocates {used} > {cap}"));
        }
    }
    for &(beta, need) in demand {
        let got = a.col_sum(beta);
        if got < need - tol {
            return Err(format!("region {beta} receives {got} < {need}"));
        }
    }
    Ok(())
}

/// Inner-loop overcounting numbers defining one convex bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub variant: Variant,
    /// Per region; outer clusters keep 1.
    pub c_tilde: Vec<f64>,
    /// Certificate: for conv3 the convexity allocation of the unbounded
    /// part, for conv2 the bound allocation.
    pub witness: Option<Allocation>,
    /// conv3 only: resources of positive subsets spent on convexity.
    pub used_resources: BTreeMap<usize, f64>,
}

impl BoundSpec {
    pub(crate) fn check_for(&self, g: &RegionGraph) -> Result<()> {
        if self.c_tilde.len() != g.len() {
            return Err(Error::Incompatible(format!(
                "bound has {} overcounting numbers for {} regions",
                self.c_tilde.len(),
                g.len()
            )));
        }
        Ok(())
    }

    /// Whether nothing is bounded, i.e. the bound is the free energy itself.
    pub fn is_exact(&self, g: &RegionGraph) -> bool {
        let c = g.overcounting();
        g.subset_ids().all(|b| c[b] == self.c_tilde[b])
    }

    /// Coefficients `c_β - c̃_β` of the bounded entropy terms.
    pub fn bounded(&self, g: &RegionGraph) -> Vec<f64> {
        let c = g.overcounting();
        c.iter().zip(&self.c_tilde).map(|(c, t)| c - t).collect()
    }
}

pub fn make_bound_spec(g: &RegionGraph, variant: Variant) -> Result<BoundSpec> {
    let c = g.overcounting();
    let mut c_tilde = c.clone();
    let mut witness = Some(Allocation::default());
    let mut used_resources = BTreeMap::new();
    match variant {
        Variant::Conv1 => {
            for b in g.v_minus() {
                c_tilde[b] = 0.0;
            }
        }
        Variant::Conv2 => {
            witness = Some(check_conv2_bound(g).ok_or(Error::Conv2NotCertified)?);
            for b in g.subset_ids() {
                c_tilde[b] = 0.0;
            }
        }
        Variant::Cccp => {
            for b in g.v_minus() {
                c_tilde[b] = 1.0;
            }
        }
        Variant::None => {
            witness = check_convex_over_constraints(g, &c);
        }
        Variant::Conv3 => {
            // step 1: keep as much concave mass as R+ can compensate
            let (supply, demand) = convexity_sides(g, &c);
            let first = allocate(g, &supply, &demand, false);
            for (&(b, _), &got) in demand.iter().zip(&first.received) {
                c_tilde[b] = -got;
            }
            // step 2: resources spent by positive subsets
            let v_plus = g.v_plus();
            for (&(gamma, _), &spent) in supply.iter().zip(&first.shipped) {
                if v_plus.contains(&gamma) {
                    used_resources.insert(gamma, spent);
                }
            }
            // step 3: shield unused positive-subset resources with the
            // concave terms that are bounded anyway (convex region inside
            // the concave one)
            let bounded: Vec<(usize, f64)> = demand
                .iter()
                .map(|&(b, need)| (b, (c_tilde[b] - c[b]).min(need).max(0.0)))
                .filter(|x| x.1 > 0.0)
                .collect();
            let unused: Vec<(usize, f64)> = v_plus
                .iter()
                .map(|&gm| (gm, (c[gm] - used_resources.get(&gm).copied().unwrap_or(0.0)).max(0.0)))
                .filter(|x| x.1 > 0.0)
                .collect();
            if !bounded.is_empty() && !unused.is_empty() {
                let second = allocate(g, &bounded, &unused, false);
                for (&(gm, _), &got) in unused.iter().zip(&second.received) {
                    c_tilde[gm] = c[gm] - got;
                }
            }
            witness = Some(first.allocation);
        }
    }
    Ok(BoundSpec { variant, c_tilde, witness, used_resources })
}

/// Potentials of the inner problem in normal form at `Q' = q_prev`:
/// `ψ̃_α = ψ_α - Σ_{β ⊂ α} ((c_β - c̃_β) / n_β) log Q'_β(x_β)`.
#[derive(Debug, Clone)]
pub struct TildePotentials {
    pub model: FactorModel,
    /// Number of `Q'` entries that hit the probability floor.
    pub floored: usize,
}

pub fn tilde_potentials(m: &FactorModel, g: &RegionGraph, spec: &BoundSpec, q_prev: &Beliefs) -> Result<TildePotentials> {
    check_compatible(g, m)?;
    check_beliefs(g, m.cards(), q_prev)?;
    spec.check_for(g)?;
    let bounded = spec.bounded(g);
    let mut tables: Vec<Vec<f64>> = m.factors().iter().map(|f| f.log_table().to_vec()).collect();
    let mut floored = 0;
    for b in g.subset_ids() {
        if bounded[b] == 0.0 {
            continue;
        }
        let weight = bounded[b] / g.n(b) as f64;
        let log_q: Vec<f64> = q_prev
            .get(b)
            .iter()
            .map(|&x| {
                if x < PROB_FLOOR {
                    floored += 1;
                }
                x.max(PROB_FLOOR).ln()
            })
            .collect();
        for &a in g.outer_parents(b) {
            let map = projection_map(&g.region(a).vars, &g.region(b).vars, m.cards());
            for (entry, &j) in tables[a].iter_mut().zip(&map) {
                *entry -= weight * log_q[j];
            }
        }
    }
    Ok(TildePotentials { model: m.with_tables(tables), floored })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bethe(edges: &[(usize, usize)], n: usize) -> RegionGraph {
        let cl: Vec<Vec<usize>> = edges.iter().map(|&(a, b)| vec![a, b]).collect();
        RegionGraph::bethe(&cl, n).unwrap()
    }

    fn k4() -> RegionGraph {
        bethe(&[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], 4)
    }

    #[test]
    fn triangle_is_convex() {
        let g = bethe(&[(0, 1), (1, 2), (0, 2)], 3);
        let c = g.overcounting();
        let a = check_convex_over_constraints(&g, &c).expect("single loop");
        let (s, d) = convexity_sides(&g, &c);
        verify_allocation(&g, &a, &s, &d, 1e-12).unwrap();
        // every edge spends its whole unit on one endpoint
        for e in g.outer_ids() {
            assert!((a.row_sum(e) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k4_is_not_convex() {
        let g = k4();
        assert!(check_convex_over_constraints(&g, &g.overcounting()).is_none());
    }

    #[test]
    fn tree_is_convex() {
        let g = bethe(&[(0, 1), (1, 2), (1, 3), (3, 4)], 5);
        assert!(check_convex_over_constraints(&g, &g.overcounting()).is_some());
    }

    #[test]
    fn conv2_checks() {
        assert!(check_conv2_bound(&k4()).unwrap().is_empty());
        let plaq = RegionGraph::cvm(
            &[vec![0, 1, 3, 4], vec![1, 2, 4, 5], vec![3, 4, 6, 7], vec![4, 5, 7, 8]],
            9,
        )
        .unwrap();
        let a = check_conv2_bound(&plaq).expect("edges shield the centre");
        let (s, d) = conv2_sides(&plaq);
        verify_allocation(&plaq, &a, &s, &d, 1e-12).unwrap();
    }

    #[test]
    fn conv2_fails_without_container() {
        // region text with a positive subset contained in no negative one
        let text = "0 outer 1 0 1\n1 outer 1 1 2\n2 subset -1 1\n3 subset 1 0\nedge 0 2\nedge 0 3\nedge 1 2\n";
        let g = RegionGraph::from_text(text).unwrap();
        assert!(check_conv2_bound(&g).is_none());
        assert!(matches!(make_bound_spec(&g, Variant::Conv2), Err(Error::Conv2NotCertified)));
    }

    #[test]
    fn k4_variants() {
        let g = k4();
        let nodes: Vec<usize> = g.subset_ids().collect();
        let conv1 = make_bound_spec(&g, Variant::Conv1).unwrap();
        assert!(nodes.iter().all(|&b| conv1.c_tilde[b] == 0.0));
        let cccp = make_bound_spec(&g, Variant::Cccp).unwrap();
        assert!(nodes.iter().all(|&b| cccp.c_tilde[b] == 1.0));
        let conv3 = make_bound_spec(&g, Variant::Conv3).unwrap();
        let total: f64 = nodes.iter().map(|&b| conv3.c_tilde[b].abs()).sum();
        assert!((total - 6.0).abs() < 1e-12);
        let c = g.overcounting();
        for &b in &nodes {
            assert!(conv3.c_tilde[b] >= c[b] - 1e-12 && conv3.c_tilde[b] <= 0.0);
        }
        assert!(check_convex_over_constraints(&g, &conv3.c_tilde).is_some());
    }

    #[test]
    fn conv3_on_convex_graph_is_exact() {
        let g = bethe(&[(0, 1), (1, 2), (0, 2)], 3);
        let spec = make_bound_spec(&g, Variant::Conv3).unwrap();
        assert!(spec.is_exact(&g));
    }

    #[test]
    fn conv3_on_plaquettes_respects_ranges() {
        let g = RegionGraph::cvm(
            &[vec![0, 1, 3, 4], vec![1, 2, 4, 5], vec![3, 4, 6, 7], vec![4, 5, 7, 8]],
            9,
        )
        .unwrap();
        let spec = make_bound_spec(&g, Variant::Conv3).unwrap();
        let c = g.overcounting();
        for b in g.v_minus() {
            assert!(spec.c_tilde[b] >= c[b] && spec.c_tilde[b] <= 0.0);
        }
        for gm in g.v_plus() {
            assert!(spec.c_tilde[gm] >= 0.0 && spec.c_tilde[gm] <= c[gm]);
            assert!(spec.c_tilde[gm] >= spec.used_resources[&gm] - 1e-12);
        }
        assert!(check_convex_over_constraints(&g, &spec.c_tilde).is_some());
    }

    #[test]
    fn tilde_identity_for_exact_bound() {
        let g = bethe(&[(0, 1), (1, 2), (0, 2)], 3);
        let mut m = FactorModel::new(vec![2; 3]).unwrap();
        for a in g.outer_ids() {
            m.add_factor(g.region(a).vars.clone(), vec![0.3, -1.1, 0.7, 0.2]).unwrap();
        }
        let spec = make_bound_spec(&g, Variant::None).unwrap();
        let q = Beliefs::uniform(&g, m.cards());
        let t = tilde_potentials(&m, &g, &spec, &q).unwrap();
        for (a, b) in t.model.factors().iter().zip(m.factors()) {
            for (x, y) in a.log_table().iter().zip(b.log_table()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn tilde_uniform_triangle_conv1() {
        let g = bethe(&[(0, 1), (1, 2), (0, 2)], 3);
        let mut m = FactorModel::new(vec![2; 3]).unwrap();
        for a in g.outer_ids() {
            m.add_factor(g.region(a).vars.clone(), vec![0.0; 4]).unwrap();
        }
        let spec = make_bound_spec(&g, Variant::Conv1).unwrap();
        let q = Beliefs::uniform(&g, m.cards());
        let t = tilde_potentials(&m, &g, &spec, &q).unwrap();
        // two endpoints, each -((-1)/2) * ln(1/2)
        let expected = 2.0 * (0.5 * 0.5f64.ln());
        for f in t.model.factors() {
            for &v in f.log_table() {
                assert!((v - expected).abs() < 1e-15);
            }
        }
    }
}
