//! Experiment harness: configuration, region-graph recipes, convexity
//! reports and multi-seed comparisons written to disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{check_conv2_bound, check_convex_over_constraints, make_bound_spec, Allocation, Variant};
use crate::doubleloop::{compare, OuterSettings, RunTrace};
use crate::energy::kl_nodes;
use crate::error::{Error, Result};
use crate::model::{generate, parse_observe, Family, FactorModel, ModelSpec};
use crate::oracle::{exact_node_marginals, MAX_STATES};
use crate::regions::RegionGraph;
use crate::VarId;

/// Where the model of an experiment comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSource {
    Grid { rows: usize, cols: usize, w: f64 },
    Full { n: usize, w: f64 },
    Qmr {
        diseases: usize,
        findings: usize,
        #[serde(default = "default_parents")]
        parents: usize,
        /// One character per finding: `1` positive, `0` negative, `-` unobserved.
        /// Empty means all positive.
        #[serde(default)]
        observe: String,
    },
    /// A saved model; the seed list is ignored.
    File { path: PathBuf },
}

fn default_parents() -> usize {
    3
}

impl ModelSource {
    pub fn spec(&self, seed: u64) -> Result<Option<ModelSpec>> {
        Ok(Some(match self {
            ModelSource::Grid { rows, cols, w } => ModelSpec::grid(*rows, *cols, *w, seed),
            ModelSource::Full { n, w } => ModelSpec::full(*n, *w, seed),
            ModelSource::Qmr { diseases, findings, parents, observe } => ModelSpec {
                family: Family::Qmr {
                    diseases: *diseases,
                    findings: *findings,
                    parents: *parents,
                    observe: parse_observe(observe)?,
                },
                w: 0.0,
                seed,
            },
            ModelSource::File { .. } => return Ok(None),
        }))
    }

    pub fn load(&self, seed: u64) -> Result<FactorModel> {
        match self {
            ModelSource::File { path } => FactorModel::load(path),
            other => generate(&other.spec(seed)?.expect("generated family")),
        }
    }
}

/// Named region-graph constructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Factor scopes as outer clusters, single variables below.
    Bethe,
    /// Every 2×2 square of a grid as an outer cluster, closed under intersection.
    GridPlaquettes,
    /// Every triple of variables as an outer cluster, closed under intersection.
    AllTriplets,
    /// Factor scopes as outer clusters, closed under intersection.
    Cvm,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Bethe => "bethe",
            Recipe::GridPlaquettes => "grid-plaquettes",
            Recipe::AllTriplets => "all-triplets",
            Recipe::Cvm => "cvm",
        }
    }
}

impl std::str::FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bethe" => Ok(Recipe::Bethe),
            "grid-plaquettes" => Ok(Recipe::GridPlaquettes),
            "all-triplets" => Ok(Recipe::AllTriplets),
            "cvm" => Ok(Recipe::Cvm),
            other => Err(Error::Config(format!(
                "unknown recipe {other:?}; expected bethe, grid-plaquettes, all-triplets or cvm"
            ))),
        }
    }
}

impl std::fmt::Display for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn meta_usize(m: &FactorModel, key: &str) -> Result<usize> {
    m.meta()
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("recipe needs model metadata {key:?}")))
}

/// Outer clusters of a recipe, before regrouping.
pub fn recipe_clusters(m: &FactorModel, recipe: Recipe) -> Result<Vec<Vec<VarId>>> {
    Ok(match recipe {
        Recipe::Bethe | Recipe::Cvm => m.regroup_maximal()?.clusters(),
        Recipe::GridPlaquettes => {
            if m.meta().get("family").map(String::as_str) != Some("grid") {
                return Err(Error::Config("grid-plaquettes needs a grid model".into()));
            }
            let (rows, cols) = (meta_usize(m, "rows")?, meta_usize(m, "cols")?);
            if rows < 2 || cols < 2 {
                return Err(Error::Config("grid-plaquettes needs at least 2 rows and 2 columns".into()));
            }
            let mut out = Vec::new();
            for i in 0..rows - 1 {
                for j in 0..cols - 1 {
                    let v = i * cols + j;
                    out.push(vec![v, v + 1, v + cols, v + cols + 1]);
                }
            }
            out
        }
        Recipe::AllTriplets => {
            let n = m.num_vars();
            if n < 3 {
                return Err(Error::Config("all-triplets needs at least 3 variables".into()));
            }
            let mut out = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        out.push(vec![a, b, c]);
                    }
                }
            }
            out
        }
    })
}

/// Regroup the model onto the recipe's outer clusters and build the graph.
pub fn build_region_graph(m: &FactorModel, recipe: Recipe) -> Result<(FactorModel, RegionGraph)> {
    let model = m.regroup(&recipe_clusters(m, recipe)?)?;
    let g = match recipe {
        Recipe::Bethe => RegionGraph::bethe(&model.clusters(), model.num_vars())?,
        _ => RegionGraph::cvm(&model.clusters(), model.num_vars())?,
    };
    Ok((model, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub recipe: Recipe,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub settings: OuterSettings,
}

impl ExperimentConfig {
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::NoVariants);
        }
        if self.seeds.is_empty() && !matches!(self.model, ModelSource::File { .. }) {
            return Err(Error::Config("seed list is empty".into()));
        }
        self.settings.validate()
    }

    /// Seeds actually run (a file model runs once, labelled seed 0).
    fn run_seeds(&self) -> Vec<u64> {
        match self.model {
            ModelSource::File { .. } => vec![0],
            _ => self.seeds.clone(),
        }
    }
}

pub struct CheckReport {
    pub text: String,
    pub convex: bool,
}

fn fmt_allocation(out: &mut String, g: &RegionGraph, a: &Allocation) {
    for (gm, b, v) in a.entries() {
        if v > 0.0 {
            writeln!(out, "    {:?} -> {:?}: {v:.6}", g.region(gm).vars, g.region(b).vars).unwrap();
        }
    }
}

/// Convexity analysis of the recipe's region graph.
pub fn cmd_check(m: &FactorModel, recipe: Recipe) -> Result<CheckReport> {
    let (_, g) = build_region_graph(m, recipe)?;
    let mut out = String::new();
    writeln!(out, "region graph: {recipe}, {} regions ({} outer)", g.len(), g.num_outer()).unwrap();
    writeln!(out, "{:>4}  {:<7} {:>6}  vars", "id", "kind", "c").unwrap();
    for r in g.regions() {
        let kind = if r.id < g.num_outer() { "outer" } else { "subset" };
        writeln!(out, "{:>4}  {:<7} {:>6}  {:?}", r.id, kind, r.c.to_string(), r.vars).unwrap();
    }
    writeln!(out, "|V-| = {}, |V+| = {}, |V0| = {}", g.v_minus().len(), g.v_plus().len(), g.v_zero().len()).unwrap();
    let convex = match check_convex_over_constraints(&g, &g.overcounting()) {
        Some(a) => {
            writeln!(out, "convex over constraints: yes").unwrap();
            writeln!(out, "  allocation:").unwrap();
            fmt_allocation(&mut out, &g, &a);
            true
        }
        None => {
            writeln!(out, "convex over constraints: no").unwrap();
            false
        }
    };
    match check_conv2_bound(&g) {
        Some(a) => {
            writeln!(out, "conv2 bound: certified").unwrap();
            if !a.is_empty() {
                writeln!(out, "  allocation:").unwrap();
                fmt_allocation(&mut out, &g, &a);
            }
        }
        None => writeln!(out, "conv2 bound: not certified").unwrap(),
    }
    let conv3 = make_bound_spec(&g, Variant::Conv3)?;
    writeln!(out, "conv3 c~:").unwrap();
    for b in g.subset_ids() {
        writeln!(out, "  {:?}: c = {}, c~ = {:.6}", g.region(b).vars, g.region(b).c, conv3.c_tilde[b] + 0.0).unwrap();
    }
    Ok(CheckReport { text: out, convex })
}

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub variant: Variant,
    pub trace: RunTrace,
    /// Summed single-node KL to the exact marginals, when enumeration is feasible.
    pub kl: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub results: Vec<VariantResult>,
    /// Lowest final `F_Kik` over the variants.
    pub consensus: f64,
}

/// Level within which a trace counts as having reached the consensus minimum.
pub const REACH_TOL: f64 = 1e-4;

impl SeedResult {
    pub fn iterations_to_consensus(&self, v: Variant) -> Option<usize> {
        self.results.iter().find(|r| r.variant == v)?.trace.iterations_to_reach(self.consensus, REACH_TOL)
    }
}

#[derive(Clone, Debug)]
pub struct SpeedReport {
    /// Median outer iterations to reach the consensus minimum; a variant
    /// that never gets there counts as infinitely slow for that seed.
    pub medians: BTreeMap<Variant, f64>,
}

impl SpeedReport {
    pub fn median(&self, v: Variant) -> Option<f64> {
        self.medians.get(&v).copied()
    }

    /// Ordering claims `a ≤ b` that can be checked with the variants present.
    pub fn claims(&self) -> Vec<(Variant, Variant, bool)> {
        use Variant::*;
        [(Conv3, Conv1), (Conv1, Cccp), (Conv2, Conv1)]
            .into_iter()
            .filter_map(|(a, b)| Some((a, b, self.median(a)? <= self.median(b)?)))
            .collect()
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn speed_report(seeds: &[SeedResult], variants: &[Variant]) -> SpeedReport {
    let medians = variants
        .iter()
        .map(|&v| {
            let its: Vec<f64> = seeds
                .iter()
                .map(|s| s.iterations_to_consensus(v).map_or(f64::INFINITY, |n| n as f64))
                .collect();
            (v, median(its))
        })
        .collect();
    SpeedReport { medians }
}

pub struct CompareReport {
    pub seeds: Vec<SeedResult>,
    pub speed: SpeedReport,
    pub summary: String,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(FactorModel, SeedResult)> {
    let raw = cfg.model.load(seed)?;
    let (m, g) = build_region_graph(&raw, cfg.recipe)?;
    let specs = cfg.variants.iter().map(|&v| make_bound_spec(&g, v)).collect::<Result<Vec<_>>>()?;
    let traces = compare(&m, &g, &specs, &cfg.settings)?;
    let exact = if m.state_space() <= MAX_STATES as f64 { Some(exact_node_marginals(&m)?.1) } else { None };
    let results: Vec<VariantResult> = traces
        .into_iter()
        .map(|trace| {
            let kl = exact.as_ref().map(|p| {
                let q: Vec<Vec<f64>> = trace
                    .final_beliefs
                    .node_marginals(&g, m.cards())
                    .into_iter()
                    .zip(m.cards())
                    .map(|(q, &k)| q.unwrap_or_else(|| vec![1.0 / k as f64; k]))
                    .collect();
                kl_nodes(p, &q)
            });
            VariantResult { variant: trace.variant, trace, kl }
        })
        .collect();
    let consensus = results.iter().map(|r| r.trace.final_f()).fold(f64::INFINITY, f64::min);
    Ok((m, SeedResult { seed, results, consensus }))
}

/// Plot series: x is the outer index scaled by the iterations the first
/// configured variant needs to reach the consensus minimum.
fn plot_data(seeds: &[SeedResult]) -> String {
    let mut out = String::from("seed,variant,x,f_gap,inner_sweeps\n");
    for s in seeds {
        let reference = s.results.first().and_then(|r| r.trace.iterations_to_reach(s.consensus, REACH_TOL)).unwrap_or(1).max(1) as f64;
        for r in &s.results {
            for rec in &r.trace.records {
                writeln!(
                    out,
                    "{},{},{:?},{:?},{}",
                    s.seed,
                    r.variant,
                    rec.outer_index as f64 / reference,
                    rec.f_kik - s.consensus,
                    rec.inner_sweeps
                )
                .unwrap();
            }
        }
    }
    out
}

fn summary_text(seeds: &[SeedResult], speed: &SpeedReport, variants: &[Variant]) -> String {
    let mut out = String::new();
    writeln!(out, "{:>6}  {:<7} {:>6} {:>12} {:>18} {:>12}  termination", "seed", "variant", "outer", "inner_sweeps", "final_f", "kl").unwrap();
    for s in seeds {
        for r in &s.results {
            let kl = r.kl.map_or("n/a".to_string(), |k| format!("{k:.3e}"));
            writeln!(
                out,
                "{:>6}  {:<7} {:>6} {:>12} {:>18.10} {:>12}  {:?}",
                s.seed,
                r.variant.name(),
                r.trace.outer_iterations(),
                r.trace.total_inner_sweeps(),
                r.trace.final_f(),
                kl,
                r.trace.termination
            )
            .unwrap();
        }
    }
    writeln!(out, "\nmedian outer iterations to within {REACH_TOL:e} of the consensus minimum:").unwrap();
    for v in variants {
        writeln!(out, "  {:<7} {}", v.name(), speed.median(*v).unwrap_or(f64::NAN)).unwrap();
    }
    let mut order: Vec<Variant> = variants.to_vec();
    order.sort_by(|a, b| speed.median(*a).partial_cmp(&speed.median(*b)).expect("no NaN"));
    let names: Vec<&str> = order.iter().map(|v| v.name()).collect();
    writeln!(out, "fastest to slowest: {}", names.join(" ")).unwrap();
    for (a, b, holds) in speed.claims() {
        writeln!(out, "  {} <= {}: {}", a.name(), b.name(), if holds { "yes" } else { "no" }).unwrap();
    }
    out
}

/// Run every configured variant on every seed, write traces under
/// `out_dir/seed-<s>/` and the summary, plot data and config at the top.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let seeds = cfg.run_seeds();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut outcomes: Vec<Result<(FactorModel, SeedResult)>> = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(workers.div_ceil(cfg.variants.len()).max(1)) {
        let batch: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|&s| scope.spawn(move || run_seed(cfg, s))).collect();
            handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
        });
        outcomes.extend(batch);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let mut results = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (m, res) = outcome?;
        let dir = cfg.out_dir.join(format!("seed-{}", res.seed));
        fs::create_dir_all(&dir)?;
        m.save(dir.join("model.txt"))?;
        for r in &res.results {
            fs::write(dir.join(format!("{}.csv", r.variant)), r.trace.to_csv())?;
            fs::write(dir.join(format!("{}.json", r.variant)), r.trace.header_json(m.meta())?)?;
        }
        results.push(res);
    }
    let speed = speed_report(&results, &cfg.variants);
    let summary = summary_text(&results, &speed, &cfg.variants);
    fs::write(cfg.out_dir.join("summary.txt"), &summary)?;
    fs::write(cfg.out_dir.join("plot.csv"), plot_data(&results))?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_text()?)?;
    Ok(CompareReport { seeds: results, speed, summary })
}
