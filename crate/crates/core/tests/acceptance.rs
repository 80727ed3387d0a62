//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use kikuchi::energy::{f_bound, kl_nodes};
use kikuchi::experiment::{build_region_graph, cmd_check, cmd_compare, ExperimentConfig, ModelSource, Recipe};
use kikuchi::oracle::exact_node_marginals;
use kikuchi::table::is_strict_subset;
use kikuchi::{
    check_convex_over_constraints, compare, f_kikuchi, make_bound_spec, minimize, FactorModel, InnerSettings, OuterSettings,
    Propagator, RegionGraph, Variant,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

/// 1. F_Kik never increases across outer iterations.
fn descent() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    let mut failures = Vec::new();
    let per_seed: Vec<Vec<(String, kikuchi::Result<Vec<f64>>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..5u64)
            .map(|seed| {
                s.spawn(move || {
                    common::corpus(seed)
                        .into_iter()
                        .map(|(name, raw, recipe)| {
                            let res = build_region_graph(&raw, recipe).and_then(|(m, g)| {
                                let specs = Variant::BOUNDS
                                    .iter()
                                    .filter_map(|&v| make_bound_spec(&g, v).ok())
                                    .collect::<Vec<_>>();
                                compare(&m, &g, &specs, &OuterSettings::default())
                                    .map(|ts| ts.iter().map(|t| t.max_increase()).collect())
                            });
                            (format!("{name}/seed {seed}"), res)
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (name, res) in per_seed.into_iter().flatten() {
        match res {
            Ok(incs) => {
                runs += incs.len();
                for inc in incs {
                    worst = worst.max(inc);
                    if inc > 1e-9 {
                        failures.push(format!("{name} rose {inc:.2e}"));
                    }
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(120);
    outcome(
        failures.is_empty() && fast,
        format!("{runs} runs, largest increase {worst:.2e}, {}{}", secs(elapsed), if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }),
    )
}

/// 2. Bounds touch at Q' = Q, lie above F_Kik and are ordered.
fn touching_and_bounding() -> Outcome {
    let start = Instant::now();
    let mut touch: f64 = 0.0;
    let mut below: f64 = 0.0;
    let mut order: f64 = 0.0;
    let mut checked = 0;
    for (name, raw, recipe) in common::corpus(0) {
        let (m, g) = build_region_graph(&raw, recipe).unwrap();
        let specs: Vec<_> = Variant::BOUNDS.iter().filter_map(|&v| make_bound_spec(&g, v).ok()).collect();
        let mut r = common::rng(name.len() as u64 * 7919);
        for _ in 0..100 {
            let q = common::consistent_beliefs(&g, m.cards(), &mut r);
            let q_prev = common::consistent_beliefs(&g, m.cards(), &mut r);
            let fk = f_kikuchi(&g, &m, &q).unwrap();
            let mut at = BTreeMap::new();
            for s in &specs {
                touch = touch.max((f_bound(&g, &m, s, &q, &q).unwrap() - fk).abs());
                let fb = f_bound(&g, &m, s, &q, &q_prev).unwrap();
                below = below.max(fk - fb);
                at.insert(s.variant, fb);
            }
            let c1 = at[&Variant::Conv1];
            order = order.max(at[&Variant::Conv3] - c1).max(c1 - at[&Variant::Cccp]);
            if let Some(c2) = at.get(&Variant::Conv2) {
                order = order.max(c2 - c1);
            }
            checked += 1;
        }
    }
    outcome(
        touch <= 1e-10 && below <= 1e-9 && order <= 1e-9,
        format!("{checked} belief pairs; touch {touch:.1e}, worst undershoot {below:.1e}, worst ordering slip {order:.1e}, {}", secs(start.elapsed())),
    )
}

/// 3. Singly-connected graphs give exact marginals and -log Z.
fn exactness() -> Outcome {
    let mut max_kl: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    let mut r = common::rng(33);
    for k in 0..20u64 {
        let n = r.gen_range(4..=12);
        let edges = if k % 2 == 0 { common::random_tree_edges(n, k) } else { common::chain_edges(n) };
        let raw = common::pairwise_model(n, &edges, 2.0, k);
        let (m, g) = common::bethe(&raw);
        let (log_z, exact) = exact_node_marginals(&m).unwrap();
        for v in Variant::BOUNDS {
            let trace = minimize(&m, &g, &make_bound_spec(&g, v).unwrap(), &OuterSettings::default()).unwrap();
            let q: Vec<Vec<f64>> = trace.final_beliefs.node_marginals(&g, m.cards()).into_iter().map(Option::unwrap).collect();
            max_kl = max_kl.max(kl_nodes(&exact, &q));
            max_gap = max_gap.max((trace.final_f() + log_z).abs());
        }
    }
    outcome(max_kl < 1e-6 && max_gap < 1e-6, format!("20 models x 4 variants; max KL {max_kl:.1e}, max |F + log Z| {max_gap:.1e}"))
}

/// The four allocation conditions, summed out directly.
fn witness_holds(g: &RegionGraph, c: &[f64], a: &kikuchi::Allocation) -> bool {
    let tol = 1e-9;
    let mut used = vec![0.0; g.len()];
    let mut got = vec![0.0; g.len()];
    for (gamma, beta, v) in a.entries() {
        if v < 0.0 || c[gamma] <= 0.0 || c[beta] >= 0.0 {
            return false;
        }
        if v > 0.0 && !is_strict_subset(&g.region(beta).vars, &g.region(gamma).vars) {
            return false;
        }
        used[gamma] += v;
        got[beta] += v;
    }
    (0..g.len()).all(|r| {
        if c[r] > 0.0 {
            used[r] <= c[r] + tol
        } else if c[r] < 0.0 {
            got[r] >= -c[r] - tol
        } else {
            true
        }
    })
}

/// 4. Single cycles are convex over the constraints, K4 and theta are not.
fn convexity() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for len in 3..=8 {
        let m = common::pairwise_model(len, &common::cycle_edges(len), 1.0, len as u64);
        let report = cmd_check(&m, Recipe::Bethe).unwrap();
        let (_, g) = common::bethe(&m);
        let c = g.overcounting();
        let witness = check_convex_over_constraints(&g, &c);
        let verified = witness.as_ref().is_some_and(|a| witness_holds(&g, &c, a));
        if !(report.convex && verified) {
            ok = false;
            notes.push(format!("cycle {len} not certified"));
        }
    }
    for (name, n, edges) in [("K4", 4, common::complete_edges(4)), ("theta", 6, common::theta_edges())] {
        let m = common::pairwise_model(n, &edges, 1.0, 0);
        let report = cmd_check(&m, Recipe::Bethe).unwrap();
        let (_, g) = common::bethe(&m);
        let c = g.overcounting();
        let supply: f64 = c.iter().filter(|&&x| x > 0.0).sum();
        let demand: f64 = -c.iter().filter(|&&x| x < 0.0).sum::<f64>();
        let refused = !report.convex && check_convex_over_constraints(&g, &c).is_none();
        ok &= refused;
        notes.push(format!("{name} {} (supply {supply}, demand {demand})", if refused { "non-convex" } else { "WRONGLY convex" }));
    }
    outcome(ok, format!("cycles 3-8 convex with verified witnesses; {}", notes.join(", ")))
}

/// 5. Median outer iterations to the consensus minimum on 6x6 grids, w = 2.
fn speed_ordering(dir: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        model: ModelSource::Grid { rows: 6, cols: 6, w: 2.0 },
        recipe: Recipe::Bethe,
        variants: Variant::BOUNDS.to_vec(),
        seeds: (0..10).collect(),
        out_dir: dir.join("speed"),
        settings: OuterSettings::default(),
    };
    let report = match cmd_compare(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("compare failed: {e}")),
    };
    let medians: Vec<String> = Variant::BOUNDS.iter().map(|&v| format!("{v} {}", report.speed.median(v).unwrap())).collect();
    let claims = report.speed.claims();
    let holds = claims.len() == 3 && claims.iter().all(|c| c.2);
    let elapsed = start.elapsed();
    outcome(
        holds && elapsed < Duration::from_secs(300),
        format!("10 seeds, medians: {}; {}", medians.join(", "), secs(elapsed)),
    )
}

/// Ground-truth feasibility by enumerating the cuts of the transport
/// network: every demand subset must fit in what its containing supplies
/// can give.
fn feasible_by_cuts(g: &RegionGraph, supply: &[(usize, f64)], demand: &[(usize, f64)]) -> bool {
    (0u32..1 << demand.len()).all(|mask| {
        let chosen: Vec<usize> = (0..demand.len()).filter(|j| mask >> j & 1 == 1).collect();
        let need: f64 = chosen.iter().map(|&j| demand[j].1).sum();
        let cap: f64 = supply
            .iter()
            .filter(|s| chosen.iter().any(|&j| is_strict_subset(&g.region(demand[j].0).vars, &g.region(s.0).vars)))
            .map(|s| s.1)
            .sum();
        need <= cap + 1e-12
    })
}

/// 6. Max-flow feasibility against cut enumeration.
fn maxflow_vs_brute_force() -> Outcome {
    let mut r = common::rng(66);
    let mut cases = 0;
    let mut feasible = 0;
    let mut mismatches = 0;
    for _ in 0..50 {
        let k = r.gen_range(3..=6);
        let clusters: Vec<Vec<usize>> = (0..k)
            .map(|_| {
                let mut c: Vec<usize> = (0..7).filter(|_| r.gen_bool(0.45)).collect();
                if c.is_empty() {
                    c.push(r.gen_range(0..7));
                }
                c
            })
            .collect();
        let g = RegionGraph::cvm(&clusters, 7).unwrap();
        for _ in 0..20 {
            let mut ids: Vec<usize> = (0..g.len()).collect();
            for i in (1..ids.len()).rev() {
                ids.swap(i, r.gen_range(0..=i));
            }
            let ns = r.gen_range(1..=4.min(ids.len()));
            let nd = r.gen_range(1..=4.min(ids.len() - ns).max(1)).min(ids.len() - ns);
            let mut c = vec![0.0; g.len()];
            for &s in &ids[..ns] {
                c[s] = 0.5 * r.gen_range(1..=6) as f64;
            }
            for &d in &ids[ns..ns + nd] {
                c[d] = -0.5 * r.gen_range(1..=6) as f64;
            }
            let supply: Vec<(usize, f64)> = (0..g.len()).filter(|&i| c[i] > 0.0).map(|i| (i, c[i])).collect();
            let demand: Vec<(usize, f64)> = (0..g.len()).filter(|&i| c[i] < 0.0).map(|i| (i, -c[i])).collect();
            let truth = feasible_by_cuts(&g, &supply, &demand);
            let flow = check_convex_over_constraints(&g, &c);
            let witness_ok = flow.as_ref().is_none_or(|a| witness_holds(&g, &c, a));
            if truth != flow.is_some() || !witness_ok {
                mismatches += 1;
            }
            cases += 1;
            feasible += usize::from(truth);
        }
    }
    outcome(mismatches == 0, format!("50 posets, {cases} allocation problems ({feasible} feasible), {mismatches} disagreements"))
}

/// 7. Message passing from random starts lands on the same beliefs.
fn reproducibility() -> Outcome {
    let mut models: Vec<(String, FactorModel)> = Vec::new();
    for len in [3, 5, 8] {
        for seed in 0..3 {
            models.push((format!("cycle{len}"), common::pairwise_model(len, &common::cycle_edges(len), 1.5, seed)));
        }
    }
    for seed in 0..3 {
        models.push(("tree".into(), common::pairwise_model(10, &common::random_tree_edges(10, seed), 1.5, seed)));
    }
    let settings = InnerSettings { tol: 1e-10, max_sweeps: 200_000, ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (name, raw) in &models {
        let (m, g) = common::bethe(raw);
        assert!(check_convex_over_constraints(&g, &g.overcounting()).is_some(), "{name} should be convex");
        let p = Propagator::new(&g, m.cards(), &g.overcounting(), &settings).unwrap();
        let runs: Vec<_> = (0..5).map(|s| p.run(&m, Some(&p.random_messages(100 + s, 3.0))).unwrap()).collect();
        ok &= runs.iter().all(|o| o.converged);
        for o in &runs[1..] {
            worst = worst.max(o.beliefs.max_abs_diff(&runs[0].beliefs));
        }
    }
    outcome(ok && worst < 1e-5, format!("{} convex models x 5 starts, max belief spread {worst:.1e}", models.len()))
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// 8. Repeated runs write identical CSV files.
fn determinism(dir: &Path) -> Outcome {
    let run = |sub: &str, model: ModelSource| {
        let cfg = ExperimentConfig {
            model,
            recipe: Recipe::Bethe,
            variants: Variant::BOUNDS.to_vec(),
            seeds: vec![1, 2, 3],
            out_dir: dir.join(sub),
            settings: OuterSettings::default(),
        };
        cmd_compare(&cfg).unwrap();
        csv_files(&dir.join(sub))
    };
    let mut files = 0;
    let mut same = true;
    for (k, model) in [
        ModelSource::Grid { rows: 4, cols: 4, w: 2.0 },
        ModelSource::Qmr { diseases: 8, findings: 5, parents: 3, observe: String::new() },
    ]
    .into_iter()
    .enumerate()
    {
        let a = run(&format!("det{k}-a"), model.clone());
        let b = run(&format!("det{k}-b"), model);
        files += a.len();
        same &= !a.is_empty() && a == b;
    }
    outcome(same, format!("{files} CSV files compared byte for byte"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("descent", Box::new(descent)),
        ("touching and bounding", Box::new(touching_and_bounding)),
        ("exact on trees", Box::new(exactness)),
        ("convexity corollaries", Box::new(convexity)),
        ("speed ordering", Box::new(|| speed_ordering(dir.path()))),
        ("max-flow vs brute force", Box::new(maxflow_vs_brute_force)),
        ("unique-minimum reproducibility", Box::new(reproducibility)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
