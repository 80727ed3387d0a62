//! Exact inference by enumerating the joint state space.

use crate::energy::Beliefs;
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::regions::RegionGraph;
use crate::table::{log_sum_exp, marginalize, projection_map, table_len};
use crate::VarId;

/// Largest joint state space the oracle will enumerate.
pub const MAX_STATES: usize = 1 << 22;

#[derive(Clone, Debug)]
pub struct ExactResult {
    pub log_z: f64,
    /// Marginals on the requested regions, in request order.
    pub marginals: Vec<Vec<f64>>,
    /// Normalized joint over all variables, row-major with the last
    /// variable fastest.
    pub joint: Vec<f64>,
}

impl ExactResult {
    /// `F(P) = E(P) - S(P)` of the exact joint; equals `-log Z`.
    pub fn helmholtz(&self, m: &FactorModel) -> f64 {
        let mut e = 0.0;
        let mut s = 0.0;
        let mut states = vec![0usize; m.num_vars()];
        for &p in &self.joint {
            if p > 0.0 {
                e -= p * m.log_weight(&states);
                s -= p * p.ln();
            }
            advance(&mut states, m.cards());
        }
        e - s
    }
}

fn advance(states: &mut [usize], cards: &[usize]) {
    for v in (0..states.len()).rev() {
        states[v] += 1;
        if states[v] < cards[v] {
            return;
        }
        states[v] = 0;
    }
}

/// Joint log weights of every state.
fn log_weights(m: &FactorModel) -> Result<Vec<f64>> {
    let states = m.state_space();
    if states > MAX_STATES as f64 {
        return Err(Error::StateSpaceTooLarge { states, limit: MAX_STATES });
    }
    let total = states as usize;
    let all: Vec<VarId> = (0..m.num_vars()).collect();
    let mut lw = vec![0.0; total];
    for f in m.factors() {
        let map = projection_map(&all, f.scope(), m.cards());
        let table = f.log_table();
        for (w, &j) in lw.iter_mut().zip(&map) {
            *w += table[j];
        }
    }
    Ok(lw)
}

pub fn exact_inference(m: &FactorModel, regions: &[Vec<VarId>]) -> Result<ExactResult> {
    let lw = log_weights(m)?;
    let log_z = log_sum_exp(&lw);
    let joint: Vec<f64> = lw.iter().map(|w| (w - log_z).exp()).collect();
    let all: Vec<VarId> = (0..m.num_vars()).collect();
    let marginals = regions
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.sort_unstable();
            r.dedup();
            let map = projection_map(&all, &r, m.cards());
            marginalize(&joint, &map, table_len(&r, m.cards()))
        })
        .collect();
    Ok(ExactResult { log_z, marginals, joint })
}

/// Exact marginals on every region of `g`.
pub fn exact_beliefs(m: &FactorModel, g: &RegionGraph) -> Result<(f64, Beliefs)> {
    let regions: Vec<Vec<VarId>> = g.regions().iter().map(|r| r.vars.clone()).collect();
    let r = exact_inference(m, &regions)?;
    Ok((r.log_z, Beliefs::new(r.marginals)))
}

/// Exact single-variable marginals.
pub fn exact_node_marginals(m: &FactorModel) -> Result<(f64, Vec<Vec<f64>>)> {
    let singles: Vec<Vec<VarId>> = (0..m.num_vars()).map(|v| vec![v]).collect();
    let r = exact_inference(m, &singles)?;
    Ok((r.log_z, r.marginals))
}
