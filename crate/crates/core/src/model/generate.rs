//! Seeded generators for the benchmark model families.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FactorModel;
use crate::error::{Error, Result};

/// Noisy-OR leak probability.
pub const QMR_LEAK: f64 = 0.01;
/// Range of per-edge inhibition probabilities.
pub const QMR_INHIBITION_RANGE: (f64, f64) = (0.5, 0.99);
/// Range of disease prior probabilities.
pub const QMR_PRIOR_RANGE: (f64, f64) = (0.01, 0.2);

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// Binary ±1 spins on a `rows × cols` lattice with nearest-neighbour couplings.
    Grid { rows: usize, cols: usize },
    /// Binary ±1 spins, all pairs coupled.
    Full { n: usize },
    /// Bipartite noisy-OR network; each finding has `parents` random diseases.
    /// `observe[f]` is `Some(true)` for a positive finding, `Some(false)` for
    /// a negative one and `None` when unobserved. An empty vector means all
    /// findings positive.
    Qmr { diseases: usize, findings: usize, parents: usize, observe: Vec<Option<bool>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    /// Coupling and threshold scale for the Boltzmann families.
    pub w: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn grid(rows: usize, cols: usize, w: f64, seed: u64) -> Self {
        ModelSpec { family: Family::Grid { rows, cols }, w, seed }
    }

    pub fn full(n: usize, w: f64, seed: u64) -> Self {
        ModelSpec { family: Family::Full { n }, w, seed }
    }

    pub fn qmr(diseases: usize, findings: usize, parents: usize, seed: u64) -> Self {
        ModelSpec { family: Family::Qmr { diseases, findings, parents, observe: Vec::new() }, w: 0.0, seed }
    }
}

pub fn observe_pattern(observe: &[Option<bool>]) -> String {
    observe
        .iter()
        .map(|o| match o {
            Some(true) => '1',
            Some(false) => '0',
            None => '-',
        })
        .collect()
}

pub fn parse_observe(pattern: &str) -> Result<Vec<Option<bool>>> {
    pattern
        .chars()
        .map(|ch| match ch {
            '1' | '+' => Ok(Some(true)),
            '0' => Ok(Some(false)),
            '-' | '?' => Ok(None),
            other => Err(Error::InvalidSpec(format!("observe pattern character {other:?}; use 1, 0 or -"))),
        })
        .collect()
}

/// Build the model described by `spec`. Pure in the spec.
pub fn generate(spec: &ModelSpec) -> Result<FactorModel> {
    if !(spec.w >= 0.0) || !spec.w.is_finite() {
        return Err(Error::InvalidSpec(format!("weight scale w = {} must be finite and ≥ 0", spec.w)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut model = match &spec.family {
        Family::Grid { rows, cols } => {
            if *rows == 0 || *cols == 0 {
                return Err(Error::InvalidSpec("grid dimensions must be positive".into()));
            }
            let (r, c) = (*rows, *cols);
            let mut edges = Vec::new();
            for i in 0..r {
                for j in 0..c {
                    let v = i * c + j;
                    if j + 1 < c {
                        edges.push((v, v + 1));
                    }
                    if i + 1 < r {
                        edges.push((v, v + c));
                    }
                }
            }
            let mut m = boltzmann(r * c, &edges, spec.w, &mut rng)?;
            m.set_meta("family", "grid");
            m.set_meta("rows", r);
            m.set_meta("cols", c);
            m
        }
        Family::Full { n } => {
            if *n == 0 {
                return Err(Error::InvalidSpec("node count must be positive".into()));
            }
            let edges: Vec<(usize, usize)> =
                (0..*n).flat_map(|i| (i + 1..*n).map(move |j| (i, j))).collect();
            let mut m = boltzmann(*n, &edges, spec.w, &mut rng)?;
            m.set_meta("family", "full");
            m.set_meta("n", n);
            m
        }
        Family::Qmr { diseases, findings, parents, observe } => {
            qmr(*diseases, *findings, *parents, observe, &mut rng)?
        }
    };
    model.set_meta("seed", spec.seed);
    model.set_meta("w", format!("{:?}", spec.w));
    Ok(model)
}

/// Pairwise ±1 model: `ψ_ij = w_ij s_i s_j + θ_i s_i / deg_i + θ_j s_j / deg_j`.
/// Isolated nodes carry their threshold in a unary factor.
fn boltzmann(n: usize, edges: &[(usize, usize)], w: f64, rng: &mut ChaCha8Rng) -> Result<FactorModel> {
    let draw = |rng: &mut ChaCha8Rng| if w > 0.0 { rng.gen_range(-w..=w) } else { 0.0 };
    let theta: Vec<f64> = (0..n).map(|_| draw(rng)).collect();
    let weights: Vec<f64> = edges.iter().map(|_| draw(rng)).collect();
    let mut degree = vec![0usize; n];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let spin = |s: usize| if s == 0 { -1.0 } else { 1.0 };
    let mut m = FactorModel::new(vec![2; n])?;
    for (&(i, j), &wij) in edges.iter().zip(&weights) {
        let mut table = Vec::with_capacity(4);
        for si in 0..2 {
            for sj in 0..2 {
                let (a, b) = (spin(si), spin(sj));
                table.push(wij * a * b + theta[i] * a / degree[i] as f64 + theta[j] * b / degree[j] as f64);
            }
        }
        m.add_factor(vec![i, j], table)?;
    }
    for v in (0..n).filter(|&v| degree[v] == 0) {
        m.add_factor(vec![v], vec![-theta[v], theta[v]])?;
    }
    m.set_meta("spins", "pm1");
    Ok(m)
}

fn qmr(
    diseases: usize,
    findings: usize,
    parents: usize,
    observe: &[Option<bool>],
    rng: &mut ChaCha8Rng,
) -> Result<FactorModel> {
    if diseases == 0 || findings == 0 || parents == 0 {
        return Err(Error::InvalidSpec("disease, finding and parent counts must be positive".into()));
    }
    if parents > diseases {
        return Err(Error::InvalidSpec(format!("{parents} parents per finding but only {diseases} diseases")));
    }
    let observe: Vec<Option<bool>> = if observe.is_empty() {
        vec![Some(true); findings]
    } else if observe.len() == findings {
        observe.to_vec()
    } else {
        return Err(Error::InvalidSpec(format!(
            "observe pattern has {} entries for {findings} findings",
            observe.len()
        )));
    };
    let priors: Vec<f64> = (0..diseases).map(|_| rng.gen_range(QMR_PRIOR_RANGE.0..QMR_PRIOR_RANGE.1)).collect();
    let mut raw = FactorModel::new(vec![2; diseases])?;
    for f in 0..findings {
        let mut scope: Vec<usize> = sample(rng, diseases, parents).into_vec();
        scope.sort_unstable();
        let inhibit: Vec<f64> = scope
            .iter()
            .map(|_| rng.gen_range(QMR_INHIBITION_RANGE.0..QMR_INHIBITION_RANGE.1))
            .collect();
        let positive = match observe[f] {
            Some(p) => p,
            None => continue,
        };
        let mut table = Vec::with_capacity(1 << parents);
        for state in 0..1usize << parents {
            // all parents absent passes with probability 1 - leak
            let mut off = 1.0 - QMR_LEAK;
            for (k, q) in inhibit.iter().enumerate() {
                if state >> (parents - 1 - k) & 1 == 1 {
                    off *= q;
                }
            }
            let p = if positive { 1.0 - off } else { off };
            table.push(p.ln());
        }
        raw.add_factor(scope, table)?;
    }
    for (d, p) in priors.iter().enumerate() {
        raw.add_factor(vec![d], vec![(1.0 - p).ln(), p.ln()])?;
    }
    let mut m = raw.regroup_maximal()?;
    m.set_meta("family", "qmr");
    m.set_meta("diseases", diseases);
    m.set_meta("findings", findings);
    m.set_meta("parents", parents);
    m.set_meta("observe", observe_pattern(&observe));
    m.set_meta("leak", format!("{QMR_LEAK:?}"));
    m.set_meta("inhibition", format!("{:?}..{:?}", QMR_INHIBITION_RANGE.0, QMR_INHIBITION_RANGE.1));
    m.set_meta("prior", format!("{:?}..{:?}", QMR_PRIOR_RANGE.0, QMR_PRIOR_RANGE.1));
    Ok(m)
}
