use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kikuchi::experiment::{cmd_check, cmd_compare, ExperimentConfig, ModelSource, Recipe};
use kikuchi::model::{generate, parse_observe, Family, ModelSpec};
use kikuchi::{Error, FactorModel, OuterSettings, Variant};

#[derive(Parser)]
#[command(name = "kikuchi", version, about = "Double-loop minimization of Kikuchi free energies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark model and save it.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report overcounting numbers and convexity of a region graph.
    Check {
        model: PathBuf,
        #[arg(long, default_value = "bethe")]
        recipe: Recipe,
    },
    /// Run one bound variant.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value = "conv3")]
        variant: Variant,
    },
    /// Run several bound variants from the same start and compare them.
    Compare {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated variants [default: conv3,conv2,conv1,cccp, or the
        /// config file's list].
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Grid,
    Full,
    Qmr,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long, default_value_t = 6)]
    rows: usize,
    #[arg(long, default_value_t = 6)]
    cols: usize,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    diseases: usize,
    #[arg(long, default_value_t = 10)]
    findings: usize,
    #[arg(long, default_value_t = 3)]
    parents: usize,
    /// Finding evidence, one of 1/0/- per finding; default all positive.
    #[arg(long, default_value = "")]
    observe: String,
    /// Coupling scale of the Boltzmann families.
    #[arg(long, default_value_t = 1.0)]
    w: f64,
}

impl ModelArgs {
    fn source(&self) -> Option<ModelSource> {
        Some(match self.family? {
            FamilyArg::Grid => ModelSource::Grid { rows: self.rows, cols: self.cols, w: self.w },
            FamilyArg::Full => ModelSource::Full { n: self.n, w: self.w },
            FamilyArg::Qmr => ModelSource::Qmr {
                diseases: self.diseases,
                findings: self.findings,
                parents: self.parents,
                observe: self.observe.clone(),
            },
        })
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config file; model flags and --model are then ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Saved model file instead of a generated family.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    gen: ModelArgs,
    #[arg(long, default_value = "bethe")]
    recipe: Recipe,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Inner-loop tolerance on subset marginal changes.
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Start every inner loop from uniform messages.
    #[arg(long)]
    cold_start: bool,
    #[arg(long)]
    max_outer: Option<usize>,
}

impl ExperimentArgs {
    /// `variants` overrides the config file's list when given.
    fn config(&self, variants: Option<Vec<Variant>>) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let mut cfg = ExperimentConfig::load(path)?;
                if let Some(v) = variants {
                    cfg.variants = v;
                }
                cfg
            }
            None => {
                let model = match (&self.model, self.gen.source()) {
                    (Some(path), _) => ModelSource::File { path: path.clone() },
                    (None, Some(src)) => src,
                    (None, None) => return Err(Error::Config("give --config, --model or --family".into())),
                };
                let mut settings = OuterSettings::default();
                if let Some(t) = self.inner_tol {
                    settings.inner.tol = t;
                }
                if let Some(n) = self.max_outer {
                    settings.max_outer = n;
                }
                settings.warm_start = !self.cold_start;
                ExperimentConfig {
                    model,
                    recipe: self.recipe,
                    variants: variants.unwrap_or_else(|| Variant::BOUNDS.to_vec()),
                    seeds: self.seeds.clone(),
                    out_dir: PathBuf::from("out"),
                    settings,
                }
            }
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn spec_from(args: &ModelArgs, seed: u64) -> Result<ModelSpec, Error> {
    let family = match args.family.ok_or_else(|| Error::Config("--family is required".into()))? {
        FamilyArg::Grid => Family::Grid { rows: args.rows, cols: args.cols },
        FamilyArg::Full => Family::Full { n: args.n },
        FamilyArg::Qmr => Family::Qmr {
            diseases: args.diseases,
            findings: args.findings,
            parents: args.parents,
            observe: parse_observe(&args.observe)?,
        },
    };
    Ok(ModelSpec { family, w: args.w, seed })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Generate { model, seed, out } => {
            let m = generate(&spec_from(&model, seed)?)?;
            match out {
                Some(path) => m.save(path)?,
                None => print!("{}", m.to_text()),
            }
        }
        Command::Check { model, recipe } => {
            let report = cmd_check(&FactorModel::load(model)?, recipe)?;
            print!("{}", report.text);
            if !report.convex {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Run { exp, variant } => {
            let report = cmd_compare(&exp.config(Some(vec![variant]))?)?;
            print!("{}", report.summary);
        }
        Command::Compare { exp, variants } => {
            let report = cmd_compare(&exp.config(variants)?)?;
            print!("{}", report.summary);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidSpec(_) | Error::NoVariants | Error::Exponent { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
