//! Double-loop minimization: rebuild the convex bound at the current
//! beliefs, minimize it with message passing, repeat.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::bounds::{tilde_potentials, BoundSpec, Variant};
use crate::energy::{check_compatible, f_kikuchi, Beliefs};
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::propagation::{constraint_residual, InnerSettings, MessageSet, Propagator};
use crate::regions::RegionGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterSettings {
    /// Stop when `|ΔF_Kik|` falls below this ...
    pub outer_tol: f64,
    /// ... and no belief entry moved by more than this.
    pub marginal_tol: f64,
    pub max_outer: usize,
    pub inner: InnerSettings,
    /// Resume each inner loop from the previous messages.
    pub warm_start: bool,
    /// Allowed increase of `F_Kik` between accepted iterates.
    pub descent_slack: f64,
    /// How many times an inner loop may be re-run with a ten times tighter
    /// tolerance when its result is rejected.
    pub max_refinements: usize,
    /// An inner solution is accepted only when its constraint residual is at
    /// most this fraction of the decrease of `F_Kik` it reports (and of the
    /// decrease expected next); otherwise the
    /// inner tolerance is tightened (starting below `inner.tol`, scaled to the
    /// previous decrease). Zero keeps `inner.tol` fixed and trusts every
    /// descending iterate.
    pub inner_tol_ratio: f64,
    /// Floor for the tightened inner tolerance.
    pub min_inner_tol: f64,
}

impl Default for OuterSettings {
    fn default() -> Self {
        OuterSettings {
            outer_tol: 1e-8,
            marginal_tol: 1e-6,
            max_outer: 10_000,
            inner: InnerSettings::default(),
            warm_start: true,
            descent_slack: 1e-9,
            max_refinements: 8,
            inner_tol_ratio: 1e-2,
            min_inner_tol: 1e-12,
        }
    }
}

impl OuterSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0 && self.marginal_tol > 0.0 && self.descent_slack >= 0.0) {
            return Err(Error::Config("outer tolerances must be positive".into()));
        }
        if !(self.inner_tol_ratio >= 0.0 && self.min_inner_tol > 0.0) {
            return Err(Error::Config("inner tolerance ratio must be ≥ 0 and its floor positive".into()));
        }
        self.inner.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Both outer tolerances met.
    Converged,
    /// The bound does not depend on the previous beliefs, so one inner
    /// minimization already solved the problem.
    ExactBound,
    MaxOuter,
    /// Even the tightest inner solve could not decrease `F_Kik` beyond its
    /// numerical noise; the last accepted iterate is kept.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OuterRecord {
    pub outer_index: usize,
    pub f_kik: f64,
    pub inner_sweeps: usize,
    pub inner_converged: bool,
    /// Inner tolerance of the accepted solve.
    pub inner_tol: f64,
    pub refinements: usize,
    pub constraint_residual: f64,
    pub marginal_delta: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub variant: Variant,
    pub c_tilde: Vec<f64>,
    /// One record per outer iteration; index 0 is the uniform start.
    pub records: Vec<OuterRecord>,
    pub final_beliefs: Beliefs,
    pub termination: Termination,
    pub settings: OuterSettings,
}

impl RunTrace {
    pub fn outer_iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn total_inner_sweeps(&self) -> usize {
        self.records.iter().map(|r| r.inner_sweeps).sum()
    }

    pub fn final_f(&self) -> f64 {
        self.records.last().expect("non-empty trace").f_kik
    }

    /// First outer iteration whose `F_Kik` is within `tol` of `target`.
    pub fn iterations_to_reach(&self, target: f64, tol: f64) -> Option<usize> {
        self.records.iter().find(|r| r.f_kik <= target + tol).map(|r| r.outer_index)
    }

    /// Largest increase of `F_Kik` between consecutive records (0 if monotone).
    pub fn max_increase(&self) -> f64 {
        self.records.windows(2).map(|w| w[1].f_kik - w[0].f_kik).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("outer_index,f_kik,inner_sweeps,residual,marginal_delta\n");
        for r in &self.records {
            writeln!(out, "{},{:?},{},{:?},{:?}", r.outer_index, r.f_kik, r.inner_sweeps, r.constraint_residual, r.marginal_delta).unwrap();
        }
        out
    }

    pub fn header_json(&self, model_meta: &BTreeMap<String, String>) -> Result<String> {
        #[derive(Serialize)]
        struct Header<'a> {
            model: &'a BTreeMap<String, String>,
            variant: Variant,
            c_tilde: &'a [f64],
            settings: &'a OuterSettings,
            termination: Termination,
            outer_iterations: usize,
            total_inner_sweeps: usize,
            final_f_kik: f64,
        }
        let h = Header {
            model: model_meta,
            variant: self.variant,
            c_tilde: &self.c_tilde,
            settings: &self.settings,
            termination: self.termination,
            outer_iterations: self.outer_iterations(),
            total_inner_sweeps: self.total_inner_sweeps(),
            final_f_kik: self.final_f(),
        };
        Ok(serde_json::to_string_pretty(&h)?)
    }
}

/// Minimize `F_Kik` with the double-loop algorithm for the bound `spec`,
/// starting from uniform beliefs.
pub fn minimize(m: &FactorModel, g: &RegionGraph, spec: &BoundSpec, settings: &OuterSettings) -> Result<RunTrace> {
    check_compatible(g, m)?;
    spec.check_for(g)?;
    settings.validate()?;
    let cards = m.cards();
    let exact = spec.is_exact(g);
    let mut prop = Propagator::new(g, cards, &spec.c_tilde, &settings.inner)?;

    let mut q = Beliefs::uniform(g, cards);
    let mut f = f_kikuchi(g, m, &q)?;
    let mut records = vec![OuterRecord {
        outer_index: 0,
        f_kik: f,
        inner_sweeps: 0,
        inner_converged: true,
        inner_tol: settings.inner.tol,
        refinements: 0,
        constraint_residual: constraint_residual(g, cards, &q),
        marginal_delta: 0.0,
    }];
    let mut warm: Option<MessageSet> = None;
    let mut termination = Termination::MaxOuter;
    let mut last_decrease = f64::INFINITY;

    for n in 1..=settings.max_outer {
        let tilde = tilde_potentials(m, g, spec, &q)?;
        let floor = settings.min_inner_tol;
        let mut tol = if exact {
            floor
        } else if settings.inner_tol_ratio > 0.0 {
            settings.inner.tol.min((0.1 * settings.inner_tol_ratio * last_decrease).max(floor))
        } else {
            settings.inner.tol
        };
        prop.set_tol(tol);
        let start = if settings.warm_start { warm.as_ref() } else { None };
        let mut out = prop.run(&tilde.model, start)?;
        let mut sweeps = out.sweeps;
        let mut refinements = 0;
        let (f_new, residual) = loop {
            let f_new = f_kikuchi(g, m, &out.beliefs)?;
            let residual = constraint_residual(g, cards, &out.beliefs);
            let descends = f_new <= f + settings.descent_slack;
            // An inconsistent iterate misreports F_Kik by about its residual,
            // and that error must stay below the next decrease too, which
            // is extrapolated geometrically from the last two.
            let dec = f - f_new;
            let next = if last_decrease.is_finite() && last_decrease > 0.0 { dec * dec / last_decrease } else { dec };
            let trusted = settings.inner_tol_ratio == 0.0 || residual <= settings.inner_tol_ratio * dec.min(next);
            if descends && (trusted || tol <= floor) {
                break (f_new, residual);
            }
            if refinements == settings.max_refinements || tol <= floor {
                let increase = f_new - f;
                let prev_residual = records.last().expect("non-empty trace").constraint_residual;
                if !descends && out.converged && tol <= floor && prev_residual <= 1e3 * floor && increase > 1e-6 {
                    return Err(Error::DescentViolation { outer: n, increase });
                }
                if descends {
                    break (f_new, residual);
                }
                if tol <= floor && increase < settings.outer_tol && out.beliefs.max_abs_diff(&q) < settings.marginal_tol {
                    // the accurate solve only disagrees with the accepted
                    // iterate at the level of that iterate's own error
                    termination = Termination::Converged;
                    break (f64::NAN, f64::NAN);
                }
                warn!("{}: outer iteration {n} could not decrease F_Kik (increase {increase:e}); stopping", spec.variant);
                termination = Termination::Stalled;
                break (f64::NAN, f64::NAN);
            }
            tol = (tol / 10.0).max(floor);
            prop.set_tol(tol);
            out = prop.run(&tilde.model, Some(&out.messages))?;
            sweeps += out.sweeps;
            refinements += 1;
        };
        if f_new.is_nan() {
            break;
        }
        if !out.converged {
            debug!("{}: inner loop at outer iteration {n} stopped after {sweeps} sweeps", spec.variant);
        }
        let delta = out.beliefs.max_abs_diff(&q);
        let df = f - f_new;
        q = out.beliefs;
        f = f_new;
        last_decrease = df.max(0.0);
        records.push(OuterRecord {
            outer_index: n,
            f_kik: f,
            inner_sweeps: sweeps,
            inner_converged: out.converged,
            inner_tol: tol,
            refinements,
            constraint_residual: residual,
            marginal_delta: delta,
        });
        warm = Some(out.messages);
        if exact {
            termination = Termination::ExactBound;
            break;
        }
        if df.abs() < settings.outer_tol && delta < settings.marginal_tol {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(RunTrace { variant: spec.variant, c_tilde: spec.c_tilde.clone(), records, final_beliefs: q, termination, settings: settings.clone() })
}

/// Run every bound from the same start and settings; variants run on
/// separate threads.
pub fn compare(m: &FactorModel, g: &RegionGraph, specs: &[BoundSpec], settings: &OuterSettings) -> Result<Vec<RunTrace>> {
    if specs.is_empty() {
        return Err(Error::NoVariants);
    }
    if specs.len() == 1 {
        return Ok(vec![minimize(m, g, &specs[0], settings)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = specs.iter().map(|spec| scope.spawn(move || minimize(m, g, spec, settings))).collect();
        handles.into_iter().map(|h| h.join().expect("minimize panicked")).collect()
    })
}
