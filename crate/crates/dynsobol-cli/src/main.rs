//! Command-line front end for the sensitivity pipeline: simulate input
//! trajectories, export regression weights, estimate index series, fit input
//! models from hourly CSVs, and run the bundled scenarios.
//!
//! Exit codes: 0 success, 1 numerical failure (a named hypothesis was
//! violated), 2 usage or config error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynsobol::conditioning::{CovarianceSource, DecompositionPlan};
use dynsobol::config::{
    self, gnuplot_script, lambda_csv, pair_csv, sobol_csv, trajectory_csv, write_atomic,
    FitReportMetadata, OutputModelConfig, ScenarioConfig, SeriesMetadata, VarModelConfig,
};
use dynsobol::error::Error;
use dynsobol::ingest::{self, LoadOptions};
use dynsobol::models::{self, ModelParams};
use dynsobol::sobol::{build_pair, estimate_series, CiMethod, EstimateOptions, PlateauParams};
use dynsobol::toeplitz::JitterPolicy;
use dynsobol::var::VarModel;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

const TOY_VAR_TOML: &str = include_str!("../fixtures/toy_var.toml");
const BUILDING_VAR_TOML: &str = include_str!("../fixtures/building_var.toml");
const BUILDING_PHI_TOML: &str = include_str!("../fixtures/building_phi.toml");

#[derive(Parser)]
#[command(
    name = "dynsobol",
    version,
    about = "Dynamic sensitivity indices for dependent Gaussian input processes",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate input trajectories and write them as CSV
    Simulate(SimulateArgs),
    /// Export the regression weights of the conditioning step, one CSV per window
    Lambda(LambdaArgs),
    /// Estimate the sensitivity index series and write the plot-ready CSV
    Estimate(EstimateArgs),
    /// Fit a VAR input model to an hourly temperature CSV
    Fit(FitArgs),
    /// Run a bundled end-to-end scenario
    Scenario(ScenarioArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CovMode {
    Model,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CiMode {
    Bootstrap,
    Delta,
}

#[derive(Args)]
struct CommonArgs {
    /// RNG seed; identical inputs give byte-identical outputs
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo sample count
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Largest time index (the series covers t = 0..=horizon)
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    /// Simulation steps discarded before t = 0
    #[arg(long = "burn-in", default_value_t = 200)]
    burn_in: usize,
    /// Covariance source for the conditioning step
    #[arg(long, value_enum, default_value_t = CovMode::Model)]
    cov: CovMode,
    /// Confidence interval construction
    #[arg(long, value_enum, default_value_t = CiMode::Bootstrap)]
    ci: CiMode,
    /// Worker threads (default: all cores); results do not depend on this
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// VAR model config (TOML or JSON)
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct LambdaArgs {
    /// VAR model config (TOML or JSON)
    #[arg(long)]
    model: PathBuf,
    /// 1-based coordinate playing the conditioning role
    #[arg(long, default_value_t = 1)]
    target: usize,
    /// Export only this window end (default: every t up to the horizon)
    #[arg(long)]
    t: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EstimateArgs {
    /// Scenario config file; when given, replaces the inline flags below
    #[arg(long, conflicts_with_all = ["model", "output_model"])]
    config: Option<PathBuf>,
    /// VAR model config (TOML or JSON)
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    /// Output model name from the registry (toy1, toy2, linrec, building)
    #[arg(long, required_unless_present = "config")]
    output_model: Option<String>,
    /// Extra output-model parameters (linear spec or building coefficients)
    #[arg(long)]
    model_params: Option<PathBuf>,
    /// 1-based coordinates, comma separated, or `all`
    #[arg(long, default_value = "1")]
    targets: String,
    /// First output time to estimate at
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Plateau detection: relative tolerance on successive differences
    #[arg(long, default_value_t = 0.01)]
    plateau_eps: f64,
    /// Plateau detection: number of consecutive quiet differences required
    #[arg(long, default_value_t = 3)]
    plateau_window: usize,
    /// Also export the full-horizon pick-freeze pairs per coordinate
    #[arg(long)]
    export_pairs: bool,
    /// Also write a gnuplot script rendering the series CSV
    #[arg(long)]
    gnuplot: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct FitArgs {
    /// Hourly CSV with header `timestamp,<channels...>`
    #[arg(long)]
    input: PathBuf,
    /// Largest candidate order for the AIC comparison
    #[arg(long, default_value_t = 4)]
    p_max: usize,
    /// Period of the seasonal profile, in hours
    #[arg(long, default_value_t = 24)]
    period: usize,
    /// Skip the seasonal adjustment (for already-stationary inputs)
    #[arg(long)]
    no_deseasonalize: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Which bundled scenario to run
    #[arg(value_parser = ["toy1", "toy2", "building"])]
    name: String,
    /// Also write a gnuplot script rendering the series CSV
    #[arg(long)]
    gnuplot: bool,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Simulate(a) => &a.common,
        Command::Lambda(a) => &a.common,
        Command::Estimate(a) => &a.common,
        Command::Fit(a) => &a.common,
        Command::Scenario(a) => &a.common,
    };
    if let Some(w) = common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: could not configure {w} worker threads: {e}");
            std::process::exit(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Lambda(args) => cmd_lambda(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Scenario(args) => cmd_scenario(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(if e.is_usage() { 2 } else { 1 });
    }
}

type CliResult = Result<(), Error>;

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    let model = config::load_var_model(&args.model)?;
    let batch = model.simulate(
        args.common.horizon,
        args.common.samples,
        args.common.seed,
        args.common.burn_in,
    )?;
    let path = args.common.out.join("trajectories.csv");
    write_atomic(&path, trajectory_csv(&batch).as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn target_index(target: usize, dim: usize) -> Result<usize, Error> {
    if target == 0 || target > dim {
        return Err(Error::Config(format!(
            "target coordinate {target} outside 1..={dim}"
        )));
    }
    Ok(target - 1)
}

fn build_plan(
    model: &VarModel,
    cov_mode: CovMode,
    target: usize,
    horizon: usize,
    samples: usize,
    seed: u64,
    burn_in: usize,
) -> Result<DecompositionPlan, Error> {
    match cov_mode {
        CovMode::Model => {
            let cov = model.stationary_covariance(1e-10)?;
            DecompositionPlan::from_model(model, &cov, target, horizon)
        }
        CovMode::Empirical => {
            let batch = model.simulate(horizon, samples, seed, burn_in)?;
            DecompositionPlan::from_batch(model, &batch, target, JitterPolicy::Reject)
        }
    }
}

fn cmd_lambda(args: LambdaArgs) -> CliResult {
    let model = config::load_var_model(&args.model)?;
    let target = target_index(args.target, model.dim())?;
    let horizon = args.common.horizon;
    if let Some(t) = args.t {
        if t > horizon {
            return Err(Error::Config(format!(
                "requested window end {t} exceeds horizon {horizon}"
            )));
        }
    }
    let plan = build_plan(
        &model,
        args.common.cov,
        target,
        horizon,
        args.common.samples,
        args.common.seed,
        args.common.burn_in,
    )?;
    let times: Vec<usize> = match args.t {
        Some(t) => vec![t],
        None => (0..=horizon).collect(),
    };
    for t in times {
        let path = args.common.out.join(format!("lambda_t{t}.csv"));
        write_atomic(&path, lambda_csv(&plan.lambda_current(t)).as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

struct EstimationJob {
    model: VarModel,
    output: OutputModelConfig,
    targets: Vec<usize>,
    opts_base: EstimateOptions,
    export_pairs: bool,
    gnuplot: bool,
    out: PathBuf,
}

fn run_estimation(job: EstimationJob) -> CliResult {
    let params = ModelParams {
        linear_spec: job.output.linear_spec.clone(),
        building_phi: job.output.building_phi.clone(),
    };
    let f = models::by_name(&job.output.name, &params)?;
    if f.arity() != job.model.dim() {
        return Err(Error::Config(format!(
            "output model '{}' expects {} input coordinates, the VAR model has {}",
            job.output.name,
            f.arity(),
            job.model.dim()
        )));
    }
    let series: Vec<_> = job
        .targets
        .par_iter()
        .map(|&coord| estimate_series(&job.model, f.as_ref(), coord, &job.opts_base))
        .collect::<Result<_, _>>()?;
    for s in &series {
        match s.plateau_time {
            Some(t) => log::info!("coordinate u{}: plateau at t = {t}", s.target_coord + 1),
            None => log::info!("coordinate u{}: no plateau detected", s.target_coord + 1),
        }
    }
    let path = job.out.join("sobol.csv");
    write_atomic(&path, sobol_csv(&series).as_bytes())?;
    println!("wrote {}", path.display());
    let meta = SeriesMetadata {
        ci_method: job.opts_base.ci_method.label().into(),
        ci_level: job.opts_base.ci_level,
        n_samples: job.opts_base.n_samples,
        seed: job.opts_base.seed,
        burn_in: job.opts_base.burn_in,
        covariance_source: match job.opts_base.cov_source {
            CovarianceSource::Model => "model".into(),
            CovarianceSource::Empirical => "empirical".into(),
        },
        plateau_rel_eps: job.opts_base.plateau.rel_eps,
        plateau_window: job.opts_base.plateau.window,
        plateau_by_coord: series
            .iter()
            .map(|s| (s.target_coord + 1, s.plateau_time))
            .collect(),
    };
    let meta_path = job.out.join("sobol_meta.json");
    config::save_document(&meta, &meta_path)?;
    println!("wrote {}", meta_path.display());
    if job.gnuplot {
        let gp_path = job.out.join("sobol.gp");
        write_atomic(&gp_path, gnuplot_script("sobol.csv", &job.targets).as_bytes())?;
        println!("wrote {}", gp_path.display());
    }
    if job.export_pairs {
        for &coord in &job.targets {
            let pair = build_pair(&job.model, coord, &job.opts_base)?;
            let path = job.out.join(format!("pairs_u{}.csv", coord + 1));
            write_atomic(&path, pair_csv(&pair, coord)?.as_bytes())?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn parse_targets(spec: &str, dim: usize) -> Result<Vec<usize>, Error> {
    if spec.trim() == "all" {
        return Ok((0..dim).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad target '{s}'")))
                .and_then(|t| target_index(t, dim))
        })
        .collect()
}

fn cmd_estimate(args: EstimateArgs) -> CliResult {
    if let Some(cfg_path) = &args.config {
        let cfg: ScenarioConfig = config::load_document(cfg_path)?;
        cfg.validate()?;
        let model = config::load_var_model(Path::new(&cfg.model))?;
        let targets = if cfg.targets.is_empty() {
            (0..model.dim()).collect()
        } else {
            cfg.targets
                .iter()
                .map(|&t| target_index(t, model.dim()))
                .collect::<Result<_, _>>()?
        };
        let mut opts = EstimateOptions::new(cfg.horizon, cfg.n_samples, cfg.seed);
        opts.burn_in = cfg.burn_in;
        opts.start_time = cfg.start_time;
        opts.cov_source = if cfg.cov == "empirical" {
            CovarianceSource::Empirical
        } else {
            CovarianceSource::Model
        };
        opts.ci_method = if cfg.ci == "delta" {
            CiMethod::Delta
        } else {
            CiMethod::default()
        };
        opts.plateau = PlateauParams {
            rel_eps: cfg.plateau_eps,
            window: cfg.plateau_window,
        };
        return run_estimation(EstimationJob {
            model,
            output: cfg.output_model,
            targets,
            opts_base: opts,
            export_pairs: args.export_pairs,
            gnuplot: args.gnuplot,
            out: PathBuf::from(cfg.out),
        });
    }

    let model = config::load_var_model(args.model.as_ref().unwrap())?;
    let targets = parse_targets(&args.targets, model.dim())?;
    let mut output = OutputModelConfig {
        name: args.output_model.clone().unwrap(),
        ..Default::default()
    };
    if let Some(params_path) = &args.model_params {
        let loaded: OutputModelConfig = config::load_document(params_path)?;
        output.linear_spec = loaded.linear_spec;
        output.building_phi = loaded.building_phi;
    }
    let mut opts = EstimateOptions::new(args.common.horizon, args.common.samples, args.common.seed);
    opts.burn_in = args.common.burn_in;
    opts.start_time = args.start;
    opts.cov_source = match args.common.cov {
        CovMode::Model => CovarianceSource::Model,
        CovMode::Empirical => CovarianceSource::Empirical,
    };
    opts.ci_method = match args.common.ci {
        CiMode::Bootstrap => CiMethod::default(),
        CiMode::Delta => CiMethod::Delta,
    };
    opts.plateau = PlateauParams {
        rel_eps: args.plateau_eps,
        window: args.plateau_window,
    };
    run_estimation(EstimationJob {
        model,
        output,
        targets,
        opts_base: opts,
        export_pairs: args.export_pairs,
        gnuplot: args.gnuplot,
        out: args.common.out,
    })
}

fn cmd_fit(args: FitArgs) -> CliResult {
    let data = ingest::load_series(&args.input, LoadOptions::default())?;
    for ts in &data.interpolated {
        log::warn!("filled missing hour {ts}");
    }
    let (profile, stationary) = if args.no_deseasonalize {
        (None, data)
    } else {
        let (p, s) = ingest::deseasonalize(&data, args.period)?;
        (Some(p), s)
    };
    let report = ingest::select_order(&stationary.row_segments(), args.p_max)?;
    println!(
        "chosen order {} (spectral radius {:.4}); AIC by order: {:?}",
        report.chosen_order,
        report.fit.spectral_radius,
        report
            .aic_by_order
            .iter()
            .map(|(k, v)| (*k, (v * 10.0).round() / 10.0))
            .collect::<Vec<_>>()
    );
    let model_path = args.common.out.join("fitted_model.toml");
    config::save_var_model(&report.fit.model, &model_path)?;
    println!("wrote {}", model_path.display());
    let meta_path = args.common.out.join("fit_report.json");
    config::save_document(&FitReportMetadata::from_report(&report), &meta_path)?;
    println!("wrote {}", meta_path.display());
    if let Some(p) = profile {
        let profile_path = args.common.out.join("seasonal_profile.json");
        let doc = serde_profile(&p);
        write_atomic(&profile_path, doc.as_bytes())?;
        println!("wrote {}", profile_path.display());
    }
    Ok(())
}

fn serde_profile(p: &dynsobol::ingest::SeasonalProfile) -> String {
    // small hand-rolled JSON: {"period":24,"mean":[[..]],"scale":[[..]]}
    let rows = |m: &Vec<Vec<f64>>| {
        m.iter()
            .map(|r| {
                format!(
                    "[{}]",
                    r.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(",")
                )
            })
            .collect::<Vec<_>>()
            .join(",")
    };
    format!(
        "{{\"period\":{},\"mean\":[{}],\"scale\":[{}]}}\n",
        p.period,
        rows(&p.mean),
        rows(&p.scale)
    )
}

fn cmd_scenario(args: ScenarioArgs) -> CliResult {
    let out = args.common.out.clone();
    match args.name.as_str() {
        "toy1" | "toy2" => {
            let cfg: VarModelConfig = config::parse_toml(TOY_VAR_TOML)?;
            let model = cfg.into_model()?;
            let mut opts =
                EstimateOptions::new(args.common.horizon, args.common.samples, args.common.seed);
            opts.burn_in = args.common.burn_in;
            opts.ci_method = match args.common.ci {
                CiMode::Bootstrap => CiMethod::default(),
                CiMode::Delta => CiMethod::Delta,
            };
            run_estimation(EstimationJob {
                model,
                output: OutputModelConfig {
                    name: args.name.clone(),
                    ..Default::default()
                },
                targets: vec![0],
                opts_base: opts,
                export_pairs: false,
                gnuplot: args.gnuplot,
                out,
            })
        }
        "building" => {
            let cfg: VarModelConfig = config::parse_toml(BUILDING_VAR_TOML)?;
            let model = cfg.into_model()?;
            let phi = config::parse_toml(BUILDING_PHI_TOML)?;
            let mut opts =
                EstimateOptions::new(args.common.horizon, args.common.samples, args.common.seed);
            opts.burn_in = args.common.burn_in.max(500);
            // the output recursion starts from a zero state, so the first
            // two time points carry no variance
            opts.start_time = 2;
            opts.ci_method = match args.common.ci {
                CiMode::Bootstrap => CiMethod::default(),
                CiMode::Delta => CiMethod::Delta,
            };
            let targets = (0..model.dim()).collect();
            run_estimation(EstimationJob {
                model,
                output: OutputModelConfig {
                    name: "building".into(),
                    building_phi: Some(phi),
                    ..Default::default()
                },
                targets,
                opts_base: opts,
                export_pairs: false,
                gnuplot: args.gnuplot,
                out,
            })
        }
        other => Err(Error::Config(format!("unknown scenario '{other}'"))),
    }
}
