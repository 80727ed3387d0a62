//! Kikuchi free energy, convex-bound free energies and divergences.

use log::warn;

use crate::bounds::BoundSpec;
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::regions::RegionGraph;
use crate::table::{cross_entropy, entropy, marginalize, max_abs_diff, projection_map, table_len};
use crate::VarId;

/// Tolerance on table normalization.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// One pseudo-marginal table per region, indexed by region id.
#[derive(Clone, Debug, PartialEq)]
pub struct Beliefs {
    tables: Vec<Vec<f64>>,
}

impl Beliefs {
    pub fn new(tables: Vec<Vec<f64>>) -> Self {
        Beliefs { tables }
    }

    pub fn uniform(g: &RegionGraph, cards: &[usize]) -> Self {
        let tables = g
            .regions()
            .iter()
            .map(|r| {
                let len = table_len(&r.vars, cards);
                vec![1.0 / len as f64; len]
            })
            .collect();
        Beliefs { tables }
    }

    /// Marginals of a joint table over all variables (row-major, last
    /// variable fastest) onto every region of `g`.
    pub fn from_joint(g: &RegionGraph, cards: &[usize], joint: &[f64]) -> Self {
        let all: Vec<VarId> = (0..cards.len()).collect();
        let tables = g
            .regions()
            .iter()
            .map(|r| {
                let map = projection_map(&all, &r.vars, cards);
                marginalize(joint, &map, table_len(&r.vars, cards))
            })
            .collect();
        Beliefs { tables }
    }

    pub fn get(&self, id: usize) -> &[f64] {
        &self.tables[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Vec<f64> {
        &mut self.tables[id]
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Largest entrywise change over all tables.
    pub fn max_abs_diff(&self, other: &Beliefs) -> f64 {
        self.tables
            .iter()
            .zip(&other.tables)
            .map(|(a, b)| max_abs_diff(a, b))
            .fold(0.0, f64::max)
    }

    /// Single-variable marginals, taken from the smallest region containing
    /// each variable (first such region on ties).
    pub fn node_marginals(&self, g: &RegionGraph, cards: &[usize]) -> Vec<Option<Vec<f64>>> {
        (0..cards.len())
            .map(|v| {
                let host = g
                    .regions()
                    .iter()
                    .filter(|r| r.vars.binary_search(&v).is_ok())
                    .min_by_key(|r| (r.vars.len(), r.id))?;
                let map = projection_map(&host.vars, &[v], cards);
                Some(marginalize(&self.tables[host.id], &map, cards[v]))
            })
            .collect()
    }
}

/// Check that `m`'s factors are exactly the outer clusters of `g`.
pub fn check_compatible(g: &RegionGraph, m: &FactorModel) -> Result<()> {
    if m.factors().len() != g.num_outer() {
        return Err(Error::Incompatible(format!(
            "{} factors for {} outer clusters",
            m.factors().len(),
            g.num_outer()
        )));
    }
    for a in g.outer_ids() {
        if m.factor(a).scope() != g.region(a).vars.as_slice() {
            return Err(Error::Incompatible(format!(
                "factor {a} has scope {:?} but outer cluster {a} is {:?}",
                m.factor(a).scope(),
                g.region(a).vars
            )));
        }
    }
    if let Some(r) = g.regions().iter().find(|r| r.vars.iter().any(|&v| v >= m.num_vars())) {
        return Err(Error::Incompatible(format!("region {} references variables outside the model", r.id)));
    }
    Ok(())
}

pub(crate) fn check_beliefs(g: &RegionGraph, cards: &[usize], q: &Beliefs) -> Result<()> {
    if q.len() != g.len() {
        return Err(Error::InvalidBeliefs(format!("{} tables for {} regions", q.len(), g.len())));
    }
    for r in g.regions() {
        let t = q.get(r.id);
        if t.len() != table_len(&r.vars, cards) {
            return Err(Error::InvalidBeliefs(format!("table for region {} has wrong length", r.id)));
        }
        if t.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidBeliefs(format!("table for region {} has negative entries", r.id)));
        }
        let sum: f64 = t.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL * (t.len() as f64).max(1.0) {
            return Err(Error::InvalidBeliefs(format!("table for region {} sums to {sum}", r.id)));
        }
    }
    Ok(())
}

/// Energy of the outer clusters, `Σ_α -Σ Q_α ψ_α`.
fn energy(g: &RegionGraph, m: &FactorModel, q: &Beliefs) -> f64 {
    g.outer_ids()
        .map(|a| -q.get(a).iter().zip(m.factor(a).log_table()).map(|(p, psi)| if *p > 0.0 { p * psi } else { 0.0 }).sum::<f64>())
        .sum()
}

/// `F_Kik(Q) = Σ_α E_α - Σ_α S_α - Σ_β c_β S_β`.
pub fn f_kikuchi(g: &RegionGraph, m: &FactorModel, q: &Beliefs) -> Result<f64> {
    check_compatible(g, m)?;
    check_beliefs(g, m.cards(), q)?;
    let c = g.overcounting();
    let mut f = energy(g, m, q);
    for a in g.outer_ids() {
        f -= entropy(q.get(a));
    }
    for b in g.subset_ids() {
        if c[b] != 0.0 {
            f -= c[b] * entropy(q.get(b));
        }
    }
    Ok(f)
}

/// Value of a convex bound together with the number of `q_prev` entries that
/// hit the probability floor where `q` has mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub floored: usize,
}

/// `F_conv(Q, Q') = Σ_α E_α - Σ_α S_α - Σ_β c̃_β S_β(Q_β) - Σ_β (c_β - c̃_β) S_β(Q_β, Q'_β)`
/// with `S_β(Q, Q') = -Σ Q log Q'`.
pub fn f_bound_diagnosed(
    g: &RegionGraph,
    m: &FactorModel,
    spec: &BoundSpec,
    q: &Beliefs,
    q_prev: &Beliefs,
) -> Result<BoundValue> {
    check_compatible(g, m)?;
    check_beliefs(g, m.cards(), q)?;
    check_beliefs(g, m.cards(), q_prev)?;
    spec.check_for(g)?;
    let c = g.overcounting();
    let mut f = energy(g, m, q);
    for a in g.outer_ids() {
        f -= entropy(q.get(a));
    }
    let mut floored = 0;
    for b in g.subset_ids() {
        let ct = spec.c_tilde[b];
        if ct != 0.0 {
            f -= ct * entropy(q.get(b));
        }
        let bounded = c[b] - ct;
        if bounded != 0.0 {
            let (cross, fl) = cross_entropy(q.get(b), q_prev.get(b));
            floored += fl;
            f -= bounded * cross;
        }
    }
    if floored > 0 {
        warn!("{floored} entries of the previous beliefs were floored while evaluating the bound");
    }
    Ok(BoundValue { value: f, floored })
}

pub fn f_bound(g: &RegionGraph, m: &FactorModel, spec: &BoundSpec, q: &Beliefs, q_prev: &Beliefs) -> Result<f64> {
    f_bound_diagnosed(g, m, spec, q, q_prev).map(|b| b.value)
}

/// `KL(p ‖ q)` with `0 log 0 = 0`; `+∞` when `q` vanishes where `p` does not.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            acc += a * (a / b).ln();
        }
    }
    acc
}

/// Sum of `KL(p_r ‖ q_r)` over the listed regions.
pub fn kl_marginals(p: &Beliefs, q: &Beliefs, over: &[usize]) -> f64 {
    let mut total = 0.0;
    for &r in over {
        let d = kl(p.get(r), q.get(r));
        if d.is_infinite() {
            warn!("approximate marginal of region {r} vanishes where the reference has mass");
            return f64::INFINITY;
        }
        total += d;
    }
    total
}

/// Sum of single-node KL divergences between two lists of node marginals.
pub fn kl_nodes(exact: &[Vec<f64>], approx: &[Vec<f64>]) -> f64 {
    exact.iter().zip(approx).map(|(p, q)| kl(p, q)).sum()
}
