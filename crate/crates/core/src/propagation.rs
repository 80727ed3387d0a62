//! Generalized belief propagation between outer clusters and subset regions.
//!
//! Messages and beliefs are kept in the log domain. One sweep visits the
//! active subset regions in ascending id order; for each subset region β it
//! refreshes the messages from every outer cluster containing β, sets
//!
//! ```text
//! Q_β ∝ Π_α μ_{α→β}^{1 / (n_β + c_β)}
//! ```
//!
//! (blended with the previous `Q_β` in log space when damped), and pushes the
//! new messages `μ_{β→α} = Q_β / μ_{α→β}` back into the outer beliefs
//! `Q_α ∝ Ψ_α Π_β μ_{β→α}`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;

use crate::energy::{check_compatible, Beliefs};
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::regions::RegionGraph;
use crate::table::{exp_normalized, log_marginalize, marginalize, max_abs_diff, normalize_log, projection_map, table_len, PROB_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSettings {
    /// Stop once no subset marginal changes by more than this (max-abs) in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Log-space damping of the subset beliefs. `None` picks 0.5 when some
    /// active overcounting number is negative and 0 otherwise.
    pub damping: Option<f64>,
    /// Leave out subsets with zero overcounting number whose constraints are
    /// implied by larger subsets (see `RegionGraph::is_constraint_implied`).
    pub prune: bool,
}

impl Default for InnerSettings {
    fn default() -> Self {
        InnerSettings { tol: 1e-4, max_sweeps: 10_000, damping: None, prune: true }
    }
}

impl InnerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("inner tolerance {} must be positive", self.tol)));
        }
        if let Some(d) = self.damping {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!("damping {d} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Messages between outer clusters and active subsets, plus the current
/// subset beliefs (needed to resume damped updates).
#[derive(Clone, Debug, PartialEq)]
pub struct MessageSet {
    /// `(α, β)` pairs, grouped by β.
    pairs: Vec<(usize, usize)>,
    log_up: Vec<Vec<f64>>,
    log_down: Vec<Vec<f64>>,
    log_subset: Vec<Vec<f64>>,
}

impl MessageSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `μ_{α→β}` for pair `i`, linear scale, normalized.
    pub fn up(&self, i: usize) -> Vec<f64> {
        exp_normalized(&self.log_up[i])
    }

    /// `μ_{β→α}` for pair `i`, linear scale, normalized.
    pub fn down(&self, i: usize) -> Vec<f64> {
        exp_normalized(&self.log_down[i])
    }
}

#[derive(Clone, Debug)]
pub struct GbpOutcome {
    pub beliefs: Beliefs,
    pub messages: MessageSet,
    pub sweeps: usize,
    pub converged: bool,
    /// Largest subset-marginal change in the last sweep.
    pub last_change: f64,
}

struct Link {
    pair: usize,
    outer: usize,
    map: Vec<usize>,
}

struct ActiveSubset {
    region: usize,
    len: usize,
    exponent: f64,
    links: Vec<Link>,
}

/// Precomputed layout for repeated runs with fixed overcounting numbers.
pub struct Propagator<'g> {
    graph: &'g RegionGraph,
    cards: Vec<usize>,
    active: Vec<ActiveSubset>,
    /// pruned subsets: (region, host outer, projection)
    pruned: Vec<(usize, usize, Vec<usize>)>,
    pairs: Vec<(usize, usize)>,
    damping: f64,
    settings: InnerSettings,
}

/// Subsets kept in the inner loop for the given overcounting numbers.
pub fn active_subsets(g: &RegionGraph, c_eff: &[f64], prune: bool) -> Vec<usize> {
    g.subset_ids()
        .filter(|&b| !prune || c_eff[b] != 0.0 || !g.is_constraint_implied(b))
        .collect()
}

impl<'g> Propagator<'g> {
    pub fn new(g: &'g RegionGraph, cards: &[usize], c_eff: &[f64], settings: &InnerSettings) -> Result<Self> {
        settings.validate()?;
        if c_eff.len() != g.len() {
            return Err(Error::Incompatible(format!("{} overcounting numbers for {} regions", c_eff.len(), g.len())));
        }
        let mut active = Vec::new();
        let mut pairs = Vec::new();
        let keep = active_subsets(g, c_eff, settings.prune);
        for &b in &keep {
            let denom = g.n(b) as f64 + c_eff[b];
            if denom.abs() < 1e-12 || denom < 0.0 {
                return Err(Error::Exponent { region: b, value: denom });
            }
            let links = g
                .outer_parents(b)
                .iter()
                .map(|&a| {
                    pairs.push((a, b));
                    Link { pair: pairs.len() - 1, outer: a, map: projection_map(&g.region(a).vars, &g.region(b).vars, cards) }
                })
                .collect();
            active.push(ActiveSubset { region: b, len: table_len(&g.region(b).vars, cards), exponent: 1.0 / denom, links });
        }
        let pruned = g
            .subset_ids()
            .filter(|b| !keep.contains(b))
            .map(|b| {
                let host = g.outer_parents(b)[0];
                (b, host, projection_map(&g.region(host).vars, &g.region(b).vars, cards))
            })
            .collect();
        let damping = settings.damping.unwrap_or_else(|| {
            if keep.iter().any(|&b| c_eff[b] < 0.0) {
                0.5
            } else {
                0.0
            }
        });
        Ok(Propagator { graph: g, cards: cards.to_vec(), active, pruned, pairs, damping, settings: settings.clone() })
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn settings(&self) -> &InnerSettings {
        &self.settings
    }

    pub fn set_tol(&mut self, tol: f64) {
        self.settings.tol = tol;
    }

    pub fn active_regions(&self) -> Vec<usize> {
        self.active.iter().map(|s| s.region).collect()
    }

    /// All-ones messages and uniform subset beliefs.
    pub fn uniform_messages(&self) -> MessageSet {
        let lens: Vec<usize> = self.pairs.iter().map(|&(_, b)| self.subset_len(b)).collect();
        MessageSet {
            pairs: self.pairs.clone(),
            log_up: lens.iter().map(|&l| vec![0.0; l]).collect(),
            log_down: lens.iter().map(|&l| vec![0.0; l]).collect(),
            log_subset: self.active.iter().map(|s| vec![-(s.len as f64).ln(); s.len]).collect(),
        }
    }

    /// Messages with log entries drawn uniformly from `[-spread, spread]`.
    pub fn random_messages(&self, seed: u64, spread: f64) -> MessageSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut msgs = self.uniform_messages();
        for t in msgs.log_down.iter_mut().chain(msgs.log_up.iter_mut()).chain(msgs.log_subset.iter_mut()) {
            for v in t.iter_mut() {
                *v = rng.gen_range(-spread..=spread);
            }
            normalize_log(t);
        }
        msgs
    }

    fn subset_len(&self, b: usize) -> usize {
        table_len(&self.graph.region(b).vars, &self.cards)
    }

    /// Run sweeps on `model`'s potentials until converged or out of sweeps.
    pub fn run(&self, model: &FactorModel, warm: Option<&MessageSet>) -> Result<GbpOutcome> {
        check_compatible(self.graph, model)?;
        let mut msgs = match warm {
            Some(w) => {
                if w.pairs != self.pairs || w.log_subset.len() != self.active.len() {
                    return Err(Error::WarmStartMismatch);
                }
                w.clone()
            }
            None => self.uniform_messages(),
        };
        let g = self.graph;
        let log_floor = PROB_FLOOR.ln();
        let mut log_outer: Vec<Vec<f64>> = g.outer_ids().map(|a| model.factor(a).log_table().to_vec()).collect();
        for s in &self.active {
            for l in &s.links {
                for (entry, &j) in log_outer[l.outer].iter_mut().zip(&l.map) {
                    *entry += msgs.log_down[l.pair][j];
                }
            }
        }
        for t in log_outer.iter_mut() {
            normalize_log(t);
        }

        let d = self.damping;
        let mut sweeps = 0;
        let mut converged = self.active.is_empty();
        let mut last_change = 0.0;
        while !converged && sweeps < self.settings.max_sweeps {
            sweeps += 1;
            let mut change: f64 = 0.0;
            for (k, s) in self.active.iter().enumerate() {
                let mut proposal = vec![0.0; s.len];
                for l in &s.links {
                    let marg = log_marginalize(&log_outer[l.outer], &l.map, s.len);
                    let up = &mut msgs.log_up[l.pair];
                    for ((u, m), dn) in up.iter_mut().zip(&marg).zip(&msgs.log_down[l.pair]) {
                        *u = m - dn;
                    }
                    normalize_log(up);
                    for (p, u) in proposal.iter_mut().zip(up.iter()) {
                        *p += u;
                    }
                }
                for p in proposal.iter_mut() {
                    *p *= s.exponent;
                }
                normalize_log(&mut proposal);
                let old = &mut msgs.log_subset[k];
                if d > 0.0 {
                    for (p, o) in proposal.iter_mut().zip(old.iter()) {
                        *p = (1.0 - d) * *p + d * o;
                    }
                    normalize_log(&mut proposal);
                }
                for (p, o) in proposal.iter().zip(old.iter()) {
                    change = change.max((p.exp() - o.exp()).abs());
                }
                *old = proposal;
                for l in &s.links {
                    let mut down: Vec<f64> = msgs.log_subset[k].iter().zip(&msgs.log_up[l.pair]).map(|(q, u)| q - u).collect();
                    normalize_log(&mut down);
                    for v in down.iter_mut() {
                        *v = v.max(log_floor);
                    }
                    let delta: Vec<f64> = down.iter().zip(&msgs.log_down[l.pair]).map(|(n, o)| n - o).collect();
                    let qa = &mut log_outer[l.outer];
                    for (entry, &j) in qa.iter_mut().zip(&l.map) {
                        *entry += delta[j];
                    }
                    normalize_log(qa);
                    msgs.log_down[l.pair] = down;
                }
            }
            debug_assert!(change.is_finite(), "belief update produced non-finite values");
            last_change = change;
            converged = change < self.settings.tol;
        }

        let mut tables: Vec<Vec<f64>> = vec![Vec::new(); g.len()];
        for a in g.outer_ids() {
            tables[a] = exp_normalized(&log_outer[a]);
        }
        for (k, s) in self.active.iter().enumerate() {
            tables[s.region] = exp_normalized(&msgs.log_subset[k]);
        }
        for (b, host, map) in &self.pruned {
            tables[*b] = marginalize(&tables[*host], map, self.subset_len(*b));
        }
        Ok(GbpOutcome { beliefs: Beliefs::new(tables), messages: msgs, sweeps, converged, last_change })
    }
}

/// One-shot message passing with overcounting numbers `c_eff` (per region;
/// only subset entries are used).
pub fn run_gbp(
    m: &FactorModel,
    g: &RegionGraph,
    c_eff: &[f64],
    settings: &InnerSettings,
    warm: Option<&MessageSet>,
) -> Result<GbpOutcome> {
    Propagator::new(g, m.cards(), c_eff, settings)?.run(m, warm)
}

/// Largest violation of the marginalization constraints over Hasse pairs.
pub fn constraint_residual(g: &RegionGraph, cards: &[usize], q: &Beliefs) -> f64 {
    g.hasse_edges()
        .iter()
        .map(|&(a, b)| {
            let (va, vb) = (&g.region(a).vars, &g.region(b).vars);
            let map = projection_map(va, vb, cards);
            let marg = marginalize(q.get(a), &map, table_len(vb, cards));
            max_abs_diff(&marg, q.get(b))
        })
        .fold(0.0, f64::max)
}
