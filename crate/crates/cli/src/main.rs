use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hrcal::features::write_selection_csv;
use hrcal::io::write_cohort;
use hrcal::pipeline::{self, PipelineConfig, RUN_FILES};
use hrcal::{Error, Result};

/// Post-calibration of wrist-worn heart rate against ECG ground truth.
///
/// Every command reads its data from `data_dir` in the configuration, or
/// generates the configured synthetic cohort when none is given. Logging
/// is controlled by HRCAL_LOG (error, warn, info, debug).
#[derive(Parser)]
#[command(name = "hrcal", version)]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `data_dir` from the configuration
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic cohort as session CSV directories
    Synth,
    /// Write the ECG-derived heart rate of every session
    ExtractHr,
    /// Write the feature matrix
    Features,
    /// Run the selection tests per fold and write their summary
    Select,
    /// Grid search, then fit the selected specs on every participant
    Train,
    /// Grid search and leave-one-subject-out evaluation
    Evaluate,
    /// Compare every device stream against the ECG
    Validate,
    /// The whole pipeline
    Run,
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data {
        cfg.data_dir = Some(d.clone());
    }
    Ok(cfg)
}

fn mkdir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Stage {
        stage: "report",
        source: Box::new(Error::Validation(format!("cannot create {}: {e}", out.display()))),
    })
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Synth => {
            cfg.validate()?;
            let cohort = pipeline::synthesize(&cfg)?;
            let sessions: Vec<_> = cohort.into_iter().map(|(s, _)| s).collect();
            mkdir(out)?;
            write_cohort(&sessions, out)?;
            println!("wrote {} sessions to {}", sessions.len(), out.display());
        }
        Command::ExtractHr => {
            cfg.validate()?;
            let sessions = pipeline::load_sessions(&cfg)?;
            let truths = pipeline::extract(&sessions, &cfg)?;
            let paths = pipeline::write_truths(&sessions, &truths, out)?;
            println!("wrote {} series to {}", paths.len(), out.display());
        }
        Command::Features => {
            let p = pipeline::prepare(&cfg)?;
            mkdir(out)?;
            pipeline::write_features(&p.matrix, &out.join("features.csv"))?;
            println!("wrote {} rows to {}", p.matrix.n_rows(), out.join("features.csv").display());
        }
        Command::Select => {
            let p = pipeline::prepare(&cfg)?;
            let summary = pipeline::selection_summary(&p.matrix, &p.plan, &cfg)?;
            mkdir(out)?;
            write_selection_csv(&summary, &out.join("selection.csv"))?;
            println!("wrote {}", out.join("selection.csv").display());
        }
        Command::Train => {
            let p = pipeline::prepare(&cfg)?;
            let searches = pipeline::search(&p.matrix, &p.plan, &cfg)?;
            mkdir(out)?;
            pipeline::write_grid(&searches, &out.join("grid_search.csv"))?;
            let paths = pipeline::train_final(&p, &searches, &cfg, out)?;
            println!("wrote {} models to {}", paths.len(), out.display());
        }
        Command::Evaluate => {
            let p = pipeline::prepare(&cfg)?;
            let searches = pipeline::search(&p.matrix, &p.plan, &cfg)?;
            let report = pipeline::evaluate_methods(&p.matrix, &p.plan, &searches)?;
            mkdir(out)?;
            pipeline::write_grid(&searches, &out.join("grid_search.csv"))?;
            pipeline::write_eval(&report, out)?;
            print!("{}", pipeline::summarize(&report));
        }
        Command::Validate => {
            let v = pipeline::run_validation(&cfg, out)?;
            for e in &v.errors {
                println!("{} {}: {:.2} ± {:.2} (n={})", e.device, e.state, e.mae, e.se, e.n);
            }
        }
        Command::Run => {
            let report = pipeline::run(&cfg, out)?;
            print!("{}", pipeline::summarize(&report));
            println!("wrote {} to {}", RUN_FILES.join(", "), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HRCAL_LOG", "warn")).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
