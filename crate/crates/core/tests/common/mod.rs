//! Shared fixtures for the integration tests: small hand-built models, the
//! benchmark corpus, consistent belief samplers and a direct Bethe minimizer.

#![allow(dead_code)]

use kikuchi::experiment::{build_region_graph, Recipe};
use kikuchi::table::{decode, table_len};
use kikuchi::{generate, Beliefs, FactorModel, ModelSpec, RegionGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn spin(x: usize) -> f64 {
    if x == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Binary pairwise model on `edges` with couplings and thresholds drawn from
/// `U[-w, w]`; thresholds are folded into the first edge touching a node.
pub fn pairwise_model(n: usize, edges: &[(usize, usize)], w: f64, seed: u64) -> FactorModel {
    let mut r = rng(seed);
    let mut m = FactorModel::new(vec![2; n]).unwrap();
    let theta: Vec<f64> = (0..n).map(|_| r.gen_range(-w..=w)).collect();
    let mut placed = vec![false; n];
    for &(a, b) in edges {
        let (i, j) = (a.min(b), a.max(b));
        let wij = r.gen_range(-w..=w);
        let mut table = vec![0.0; 4];
        for (k, t) in table.iter_mut().enumerate() {
            let (xi, xj) = (k >> 1, k & 1);
            *t = wij * spin(xi) * spin(xj);
            if !placed[i] {
                *t += theta[i] * spin(xi);
            }
            if !placed[j] {
                *t += theta[j] * spin(xj);
            }
        }
        placed[i] = true;
        placed[j] = true;
        m.add_factor(vec![i, j], table).unwrap();
    }
    m
}

pub fn random_tree_edges(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut r = rng(seed ^ 0x7ee);
    (1..n).map(|i| (r.gen_range(0..i), i)).collect()
}

pub fn chain_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i - 1, i)).collect()
}

pub fn cycle_edges(n: usize) -> Vec<(usize, usize)> {
    let mut e = chain_edges(n);
    e.push((0, n - 1));
    e
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Two 4-cycles sharing the edge {0, 1}.
pub fn theta_edges() -> Vec<(usize, usize)> {
    vec![(0, 1), (1, 2), (2, 3), (0, 3), (1, 4), (4, 5), (0, 5)]
}

pub fn bethe(m: &FactorModel) -> (FactorModel, RegionGraph) {
    build_region_graph(m, Recipe::Bethe).unwrap()
}

/// The benchmark corpus for one seed: `(name, model, recipe)`.
pub fn corpus(seed: u64) -> Vec<(String, FactorModel, Recipe)> {
    let mut out = vec![
        ("tree".to_string(), pairwise_model(9, &random_tree_edges(9, seed), 1.5, seed), Recipe::Bethe),
        ("triangle".to_string(), pairwise_model(3, &cycle_edges(3), 1.5, seed), Recipe::Bethe),
        ("k4".to_string(), pairwise_model(4, &complete_edges(4), 1.5, seed), Recipe::Bethe),
        ("grid4x4".to_string(), generate(&ModelSpec::grid(4, 4, 1.0, seed)).unwrap(), Recipe::Bethe),
        ("grid6x6".to_string(), generate(&ModelSpec::grid(6, 6, 2.0, seed)).unwrap(), Recipe::Bethe),
        ("full6".to_string(), generate(&ModelSpec::full(6, 1.0, seed)).unwrap(), Recipe::Bethe),
        ("qmr8x5".to_string(), generate(&ModelSpec::qmr(8, 5, 3, seed)).unwrap(), Recipe::Bethe),
    ];
    out.push(("grid4x4-plaq".to_string(), generate(&ModelSpec::grid(4, 4, 1.0, seed)).unwrap(), Recipe::GridPlaquettes));
    out
}

/// Region tables of a random distribution, always mutually consistent.
/// Small models get a random joint, larger ones a mixture of product
/// distributions evaluated region by region.
pub fn consistent_beliefs(g: &RegionGraph, cards: &[usize], r: &mut impl Rng) -> Beliefs {
    let states: f64 = cards.iter().map(|&c| c as f64).product();
    let sharp = r.gen_range(0.5..4.0);
    if states <= 4096.0 {
        let mut joint: Vec<f64> = (0..states as usize).map(|_| (sharp * r.gen_range(-1.0..1.0f64)).exp()).collect();
        let z: f64 = joint.iter().sum();
        joint.iter_mut().for_each(|p| *p /= z);
        return Beliefs::from_joint(g, cards, &joint);
    }
    let k = r.gen_range(1..=4);
    let weights: Vec<f64> = (0..k).map(|_| r.gen_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let comps: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| {
            cards
                .iter()
                .map(|&c| {
                    let p: Vec<f64> = (0..c).map(|_| (sharp * r.gen_range(-1.0..1.0f64)).exp()).collect();
                    let s: f64 = p.iter().sum();
                    p.into_iter().map(|x| x / s).collect()
                })
                .collect()
        })
        .collect();
    let tables = g
        .regions()
        .iter()
        .map(|reg| {
            (0..table_len(&reg.vars, cards))
                .map(|idx| {
                    let x = decode(idx, &reg.vars, cards);
                    comps
                        .iter()
                        .zip(&weights)
                        .map(|(comp, w)| w / total * reg.vars.iter().zip(&x).map(|(&v, &s)| comp[v][s]).product::<f64>())
                        .sum()
                })
                .collect()
        })
        .collect();
    Beliefs::new(tables)
}

/// Minimizer of the Bethe free energy of a binary pairwise model written
/// directly in edge coordinates: each edge table is parametrized by the two
/// node means and the joint moment, so every point is consistent. Gradient
/// descent with Barzilai-Borwein steps and backtracking. Returns the region
/// tables of `g` and the free energy.
pub fn bethe_direct_min(m: &FactorModel, g: &RegionGraph) -> (Beliefs, f64) {
    let n = m.num_vars();
    assert!(m.cards().iter().all(|&c| c == 2));
    let edges: Vec<(usize, usize)> = g
        .outer_ids()
        .map(|a| {
            let v = &g.region(a).vars;
            assert_eq!(v.len(), 2, "pairwise outer clusters only");
            (v[0], v[1])
        })
        .collect();
    let psi: Vec<Vec<f64>> = g.outer_ids().map(|a| m.factor(a).log_table().to_vec()).collect();
    let c = g.overcounting();
    let mut node_c = vec![0.0; n];
    for b in g.subset_ids() {
        let v = &g.region(b).vars;
        assert_eq!(v.len(), 1);
        node_c[v[0]] = c[b];
    }
    let ne = edges.len();
    // x = [m_0..m_{n-1}, t_0..t_{ne-1}]
    let tables = |x: &[f64]| -> Vec<[f64; 4]> {
        edges
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| {
                let t = x[n + e];
                [1.0 - x[i] - x[j] + t, x[j] - t, x[i] - t, t]
            })
            .collect()
    };
    let value = |x: &[f64]| -> f64 {
        if x[..n].iter().any(|&p| p <= 0.0 || p >= 1.0) {
            return f64::INFINITY;
        }
        let mut f = 0.0;
        for (q, ps) in tables(x).iter().zip(&psi) {
            for (qv, pv) in q.iter().zip(ps) {
                if *qv <= 0.0 {
                    return f64::INFINITY;
                }
                f += qv * (qv.ln() - pv);
            }
        }
        for i in 0..n {
            let p = x[i];
            f += node_c[i] * (p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        }
        f
    };
    let grad = |x: &[f64]| -> Vec<f64> {
        let mut gr = vec![0.0; n + ne];
        for (e, (q, ps)) in tables(x).iter().zip(&psi).enumerate() {
            let (i, j) = edges[e];
            let d: Vec<f64> = q.iter().zip(ps).map(|(qv, pv)| qv.ln() - pv).collect();
            gr[n + e] = d[0] - d[1] - d[2] + d[3];
            gr[i] += d[2] - d[0];
            gr[j] += d[1] - d[0];
        }
        for i in 0..n {
            let p = x[i];
            gr[i] += node_c[i] * (p.ln() - (1.0 - p).ln());
        }
        gr
    };
    let mut x: Vec<f64> = vec![0.5; n];
    x.extend(std::iter::repeat_n(0.25, ne));
    let mut fx = value(&x);
    let mut gx = grad(&x);
    let mut step = 0.1;
    for _ in 0..200_000 {
        let gnorm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-11 {
            break;
        }
        let mut s = step;
        let (xn, fnew) = loop {
            let xn: Vec<f64> = x.iter().zip(&gx).map(|(a, b)| a - s * b).collect();
            let fnew = value(&xn);
            if fnew <= fx - 1e-4 * s * gnorm * gnorm || s < 1e-16 {
                break (xn, fnew);
            }
            s *= 0.5;
        };
        if !fnew.is_finite() {
            break;
        }
        let gn = grad(&xn);
        let sy: f64 = xn.iter().zip(&x).zip(gn.iter().zip(&gx)).map(|((a, b), (c, d))| (a - b) * (c - d)).sum();
        let ss: f64 = xn.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-8, 10.0) } else { 0.1 };
        x = xn;
        fx = fnew;
        gx = gn;
    }
    let edge_tables = tables(&x);
    let mut out = vec![Vec::new(); g.len()];
    for a in g.outer_ids() {
        out[a] = edge_tables[a].to_vec();
    }
    for b in g.subset_ids() {
        let v = g.region(b).vars[0];
        out[b] = vec![1.0 - x[v], x[v]];
    }
    (Beliefs::new(out), fx)
}

/// Random log tables in `U[-w, w]` on the given clusters, regrouped so that
/// the factors are exactly the maximal clusters, with its CVM graph.
pub fn random_cluster_model(clusters: &[Vec<usize>], n: usize, w: f64, seed: u64) -> (FactorModel, RegionGraph) {
    let mut r = rng(seed);
    let mut m = FactorModel::new(vec![2; n]).unwrap();
    for cl in clusters {
        let mut scope = cl.clone();
        scope.sort_unstable();
        scope.dedup();
        let len = 1 << scope.len();
        m.add_factor(scope, (0..len).map(|_| r.gen_range(-w..=w)).collect()).unwrap();
    }
    let m = m.regroup_maximal().unwrap();
    let g = RegionGraph::cvm(&m.clusters(), n).unwrap();
    (m, g)
}
