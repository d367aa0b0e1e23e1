//! Command-line front end for fitting item response thresholds models:
//! reproducible fit, compare, score, simulate, and curve-export runs driven
//! by TOML configs.

mod config;
mod report;

use clap::{Parser, Subcommand};
use config::{
    load_dataset, read_toml, CompareConfig, CurvesConfig, FitConfig, ScoreConfig, SimulateConfig,
};
use report::{read_fit_report, write_json, CompareReport, FitReport, RecoveryArtifact};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thresholds_core::curves::{
    default_theta_grid, default_y_grid, difficulty_curve, ic_curve, pt_curve, write_curves_csv,
    CurveTable,
};
use thresholds_core::data::{DifficultyFamilyKind, ItemResponseMatrix, ItemSpec, SupportKind, TreatAs};
use thresholds_core::error::Error as CoreError;
use thresholds_core::estimate::{fit, lr_test, FitResult};
use thresholds_core::scoring::Scorer;
use thresholds_core::simulate::{recovery_study, simulate_dataset, SimulationScenario};

#[derive(Parser)]
#[command(
    name = "thresholds",
    about = "Latent trait models with item difficulty functions",
    version
)]
struct Cli {
    /// Worker threads (default: all cores, or THRESHOLDS_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a dataset and write a fit report.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Override the quadrature node count.
        #[arg(long)]
        nodes: Option<usize>,
        /// Override the spline shape penalty.
        #[arg(long)]
        lambda: Option<f64>,
        /// Override the fit seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a nested pair of models and run the likelihood-ratio test.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Batch posterior scoring of a dataset under a saved fit.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a dataset (or a replicated recovery study) from a scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for dataset, truth, and metadata files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the full simulate-fit-score recovery study.
        #[arg(long)]
        recovery: bool,
    },
    /// Tabulate PT/IC/difficulty curves of a saved fit.
    Curves {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes map to exit codes: validation 1, non-convergence 2
/// (artifacts are still written), I/O 3.
enum Failure {
    Validation(String),
    NonConvergence(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::NonConvergence(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::NonConvergence(m) | Failure::Io(m) => m,
        }
    }
}

fn classify_core(err: CoreError) -> Failure {
    match err {
        CoreError::Io(e) => Failure::Io(e.to_string()),
        CoreError::Csv(e) => {
            if e.is_io_error() {
                Failure::Io(e.to_string())
            } else {
                Failure::Validation(e.to_string())
            }
        }
        CoreError::NotConverged(_) => Failure::NonConvergence(err.to_string()),
        other => Failure::Validation(other.to_string()),
    }
}

fn classify_anyhow(err: anyhow::Error) -> Failure {
    if let Some(core) = err.downcast_ref::<CoreError>() {
        let message = core.to_string();
        return match core {
            CoreError::Io(_) => Failure::Io(message),
            CoreError::Csv(e) if e.is_io_error() => Failure::Io(message),
            CoreError::NotConverged(_) => Failure::NonConvergence(message),
            _ => Failure::Validation(message),
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return Failure::Io(format!("{err:#}"));
    }
    Failure::Validation(format!("{err:#}"))
}

fn write_failure(e: std::io::Error) -> Failure {
    Failure::Io(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("THRESHOLDS_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let outcome = match cli.command {
        Command::Fit {
            config,
            nodes,
            lambda,
            seed,
            out,
        } => cmd_fit(&config, nodes, lambda, seed, out),
        Command::Compare { config, out } => cmd_compare(&config, out),
        Command::Score { config, out } => cmd_score(&config, out),
        Command::Simulate {
            config,
            seed,
            out,
            recovery,
        } => cmd_simulate(&config, seed, out, recovery),
        Command::Curves { config, out } => cmd_curves(&config, out),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn cmd_fit(
    config_path: &Path,
    nodes: Option<usize>,
    lambda: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg: FitConfig = read_toml(config_path).map_err(classify_anyhow)?;
    if let Some(n) = nodes {
        cfg.model.quadrature_nodes = Some(n);
    }
    if let Some(l) = lambda {
        cfg.model.penalty_lambda = Some(l);
    }
    if let Some(s) = seed {
        cfg.fit.seed = Some(s);
    }
    if let Some(o) = out {
        cfg.out = Some(o);
    }

    let data = load_dataset(&cfg.data, &cfg.metadata).map_err(classify_core)?;
    eprintln!("{}", data.summary());
    let spec = cfg.model.build_spec(&data);
    let opts = cfg.fit.build_options();
    let result = fit(&data, &spec, &opts).map_err(classify_core)?;
    let converged = result.converged;

    println!(
        "loglik {:.6}   sigma_theta {:.6}   converged {}   iterations {}   grad {:.2e}",
        result.loglik,
        result.sigma_theta(),
        result.converged,
        result.iterations,
        result.grad_norm
    );
    if result.underflow_count > 0 {
        eprintln!(
            "note: {} floored probability masses during the final evaluation",
            result.underflow_count
        );
    }

    let out_path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("fit.json"));
    let seed = opts.seed;
    if let Some(curves_path) = cfg.curves_out.clone() {
        let tables = default_curves(&result, &data).map_err(classify_core)?;
        write_curves_csv(&tables, &curves_path).map_err(classify_core)?;
    }
    let report = FitReport::new(seed, cfg, result);
    write_json(&report, &out_path).map_err(classify_anyhow)?;

    if converged {
        Ok(())
    } else {
        Err(Failure::NonConvergence(format!(
            "optimizer stopped at gradient norm {:.2e}; report written to {}",
            report.fit.grad_norm,
            out_path.display()
        )))
    }
}

fn cmd_compare(config_path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg: CompareConfig = read_toml(config_path).map_err(classify_anyhow)?;
    if let Some(o) = out {
        cfg.out = Some(o);
    }
    let data = load_dataset(&cfg.data, &cfg.metadata).map_err(classify_core)?;
    let opts = cfg.fit.build_options();
    let full_spec = cfg.full.build_spec(&data);
    let reduced_spec = cfg.reduced.build_spec(&data);
    let full = fit(&data, &full_spec, &opts).map_err(classify_core)?;
    let reduced = fit(&data, &reduced_spec, &opts).map_err(classify_core)?;
    println!(
        "full loglik {:.6}   reduced loglik {:.6}",
        full.loglik, reduced.loglik
    );
    // non-nested pairs get their log-likelihoods reported, but no test
    let lr = lr_test(&full, &reduced).map_err(classify_core)?;
    println!(
        "LR statistic {:.4} on {} df   p = {:.3e}",
        lr.statistic, lr.df, lr.p_value
    );

    let out_path = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("compare.json"));
    let report = CompareReport::new(cfg, full.loglik, reduced.loglik, lr);
    write_json(&report, &out_path).map_err(classify_anyhow)?;
    Ok(())
}

fn cmd_score(config_path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg: ScoreConfig = read_toml(config_path).map_err(classify_anyhow)?;
    if let Some(o) = out {
        cfg.out = Some(o);
    }
    let data = load_dataset(&cfg.data, &cfg.metadata).map_err(classify_core)?;
    let saved = read_fit_report(&cfg.fit_report).map_err(classify_anyhow)?;
    let result: FitResult = saved.fit;
    if !thresholds_core::data::items_compatible(&result.spec.items, data.items()) {
        return Err(Failure::Validation(
            "the dataset's items do not match the saved fit".into(),
        ));
    }
    let scorer = Scorer::new(&result.spec, &result.parameters).map_err(classify_core)?;

    let out_path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("scores.csv"));
    let mut text = String::from("person,posterior_mean,posterior_mode,posterior_sd,n_items\n");
    for (p, row) in scorer.score_matrix(&data).into_iter().enumerate() {
        match row {
            Ok(s) => text.push_str(&format!(
                "{},{},{},{},{}\n",
                p, s.posterior_mean, s.posterior_mode, s.posterior_sd, s.n_items_observed
            )),
            Err(e) => {
                eprintln!("person {p}: {e}");
                text.push_str(&format!("{p},NA,NA,NA,0\n"));
            }
        }
    }
    std::fs::write(&out_path, text).map_err(write_failure)?;
    println!("scores written to {}", out_path.display());
    Ok(())
}

fn cmd_simulate(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    recovery: bool,
) -> Result<(), Failure> {
    let mut cfg: SimulateConfig = read_toml(config_path).map_err(classify_anyhow)?;
    if let Some(s) = seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = out {
        cfg.out_dir = Some(o);
    }
    let Some(seed) = cfg.seed else {
        return Err(Failure::Validation(
            "a seed is required (set seed in the scenario file or pass --seed)".into(),
        ));
    };

    let scenario = SimulationScenario {
        spec: cfg.spec.build_spec(),
        difficulties: cfg.difficulties.clone(),
        sigma_theta: cfg.sigma_theta,
        n_persons: cfg.n_persons,
        seed,
        replications: cfg.replications.unwrap_or(1),
    };
    scenario.validate().map_err(classify_core)?;

    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(write_failure)?;

    if recovery {
        let opts = cfg.fit.build_options();
        let report = recovery_study(&scenario, &opts).map_err(classify_core)?;
        println!("{report}");
        let artifact = RecoveryArtifact::new(cfg, report);
        write_json(&artifact, &out_dir.join("recovery.json")).map_err(classify_anyhow)?;
        return Ok(());
    }

    let (data, abilities) = simulate_dataset(&scenario).map_err(classify_core)?;
    data.write_csv(&out_dir.join("data.csv")).map_err(classify_core)?;

    let mut truth = String::from("person,theta\n");
    for (p, t) in abilities.iter().enumerate() {
        truth.push_str(&format!("{p},{t}\n"));
    }
    std::fs::write(out_dir.join("truth.csv"), truth).map_err(write_failure)?;
    std::fs::write(
        out_dir.join("items.toml"),
        metadata_toml(scenario.spec.items.iter()),
    )
    .map_err(write_failure)?;

    // effective configuration echo, reproducible by construction
    let mut echo = cfg.clone();
    echo.seed = Some(seed);
    let text = toml::to_string_pretty(&echo)
        .map_err(|e| Failure::Validation(format!("cannot echo scenario: {e}")))?;
    std::fs::write(out_dir.join("scenario.toml"), text).map_err(write_failure)?;

    println!(
        "simulated {} persons x {} items into {}",
        data.n_persons(),
        data.n_items(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_curves(config_path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg: CurvesConfig = read_toml(config_path).map_err(classify_anyhow)?;
    if let Some(o) = out {
        cfg.out = Some(o);
    }
    let data = load_dataset(&cfg.data, &cfg.metadata).map_err(classify_core)?;
    let saved = read_fit_report(&cfg.fit_report).map_err(classify_anyhow)?;
    let result: FitResult = saved.fit;
    if !thresholds_core::data::items_compatible(&result.spec.items, data.items()) {
        return Err(Failure::Validation(
            "the dataset's items do not match the saved fit".into(),
        ));
    }

    let kinds = cfg
        .kinds
        .clone()
        .unwrap_or_else(|| vec!["pt".into(), "ic".into(), "difficulty".into()]);
    for k in &kinds {
        if !matches!(k.as_str(), "pt" | "ic" | "difficulty") {
            return Err(Failure::Validation(format!("unknown curve kind '{k}'")));
        }
    }
    let tables = curve_tables(
        &result,
        &data,
        &kinds,
        cfg.theta.unwrap_or(0.0),
        cfg.ic_y,
        cfg.points.unwrap_or(201),
    )
    .map_err(classify_core)?;

    let out_path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("curves.csv"));
    write_curves_csv(&tables, &out_path).map_err(classify_core)?;
    println!(
        "{} curve tables written to {}",
        tables.len(),
        out_path.display()
    );
    Ok(())
}

/// PT (at ability zero), IC (per-item default level), and difficulty
/// tables for a fitted model.
fn default_curves(
    result: &FitResult,
    data: &ItemResponseMatrix,
) -> Result<Vec<CurveTable>, CoreError> {
    curve_tables(
        result,
        data,
        &["pt".into(), "ic".into(), "difficulty".into()],
        0.0,
        None,
        201,
    )
}

fn curve_tables(
    result: &FitResult,
    data: &ItemResponseMatrix,
    kinds: &[String],
    theta: f64,
    ic_y: Option<f64>,
    points: usize,
) -> Result<Vec<CurveTable>, CoreError> {
    let spec = &result.spec;
    let mut tables = Vec::new();
    for (i, item) in spec.items.iter().enumerate() {
        let difficulty = &result.parameters.difficulties[i];
        let observed = data.observed_column(i);
        let y_grid = default_y_grid(item, &observed, points);
        for kind in kinds {
            match kind.as_str() {
                "pt" => tables.push(pt_curve(
                    spec.response_function,
                    item,
                    difficulty,
                    theta,
                    &y_grid,
                )?),
                "ic" => {
                    let y = ic_y.unwrap_or_else(|| default_ic_level(item, &observed));
                    let theta_grid = default_theta_grid(result.parameters.sigma_theta, points);
                    tables.push(ic_curve(
                        spec.response_function,
                        item,
                        difficulty,
                        y,
                        &theta_grid,
                    )?);
                }
                "difficulty" => {
                    // the top category of a finite support has no finite
                    // difficulty to tabulate
                    let grid: Vec<f64> = match item.support.categories() {
                        Some(k) => y_grid
                            .iter()
                            .cloned()
                            .filter(|y| y.round() < (k - 1) as f64)
                            .collect(),
                        None => y_grid.clone(),
                    };
                    tables.push(difficulty_curve(item, difficulty, &grid)?);
                }
                _ => unreachable!("validated"),
            }
        }
    }
    Ok(tables)
}

fn default_ic_level(item: &ItemSpec, observed: &[f64]) -> f64 {
    match item.support {
        SupportKind::Continuous { .. } => {
            let mut sorted = observed.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted[sorted.len() / 2]
        }
        // lowest level: defined for every discrete item and never the top
        // category
        _ => 0.0,
    }
}

/// Emits the metadata TOML for a set of items, round-trippable through
/// ingestion.
fn metadata_toml<'a>(items: impl Iterator<Item = &'a ItemSpec>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&format!("[items.{}]\n", item.id));
        match item.support {
            SupportKind::Binary => out.push_str("support = \"binary\"\n"),
            SupportKind::Count => out.push_str("support = \"count\"\n"),
            SupportKind::OrderedCategorical { k } => {
                out.push_str("support = \"ordinal\"\n");
                out.push_str(&format!("categories = {k}\n"));
            }
            SupportKind::Continuous { lower, upper } => {
                out.push_str("support = \"continuous\"\n");
                if lower.is_finite() {
                    out.push_str(&format!("lower = {lower}\n"));
                }
                if upper.is_finite() {
                    out.push_str(&format!("upper = {upper}\n"));
                }
            }
        }
        match item.family {
            DifficultyFamilyKind::Linear => out.push_str("family = \"linear\"\n"),
            DifficultyFamilyKind::Log => out.push_str("family = \"log\"\n"),
            DifficultyFamilyKind::LogPlusOne => out.push_str("family = \"log1p\"\n"),
            DifficultyFamilyKind::InverseCdf { inverse_kind } => {
                out.push_str("family = \"inverse-cdf\"\n");
                if let Some(k) = inverse_kind {
                    let name = match k {
                        thresholds_core::response::ResponseFunctionKind::Normal => "normal",
                        thresholds_core::response::ResponseFunctionKind::Logistic => "logistic",
                    };
                    out.push_str(&format!("inverse_kind = \"{name}\"\n"));
                }
            }
            DifficultyFamilyKind::FreeOrdinal => out.push_str("family = \"free\"\n"),
            DifficultyFamilyKind::BSpline { n_basis, degree } => {
                out.push_str(&format!(
                    "family = \"bspline\"\nn_basis = {n_basis}\ndegree = {degree}\n"
                ));
            }
        }
        if item.treat_as == TreatAs::Continuous && item.support.is_discrete() {
            out.push_str("treat_as = \"continuous\"\ncontinuous_override = true\n");
        }
        out.push('\n');
    }
    out
}
