//! Command-line front end: `separate`, `experiment` and `serve`.
//!
//! Exit codes: 0 success, 1 service startup failure, 2 bad flags or
//! configuration, 3 unreadable or inconsistent input, 4 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::annotation::AnnotationSet;
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentConfig};
use crate::separate::{separate, SeparateRequest, SolverMethod};
use crate::spectral::StftParams;
use crate::wav;

#[derive(Debug, Parser)]
#[command(name = "nucsep", version, about = "Annotation-informed source separation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Separate one mixture given an annotation file.
    Separate(SeparateArgs),
    /// Run a comparison experiment and print the summary table.
    Experiment(ExperimentArgs),
    /// Serve the HTTP API used by the annotation tool.
    Serve(ServeArgs),
}

#[derive(Debug, clap::Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub mixture: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_parser = ["lownuc", "nmf"])]
    pub method: String,
    /// Penalty weight; for lownuc a multiple of the mixture Frobenius norm.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub budget_seconds: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Where summary.csv, curves.csv and metadata.json go.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 2,
        Error::Numerical { .. } => 4,
        Error::InvalidInput(_)
        | Error::ShapeMismatch { .. }
        | Error::Wav(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Io(_) => 3,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Separate(a) => cmd_separate(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Serve(a) => return cmd_serve(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

pub fn cmd_separate(args: &SeparateArgs) -> Result<()> {
    let params = StftParams::default();
    let mixture = wav::read_wav_resampled(&args.mixture, params.sample_rate)?;
    let annotations = AnnotationSet::from_json(&read_text(&args.annotations)?)?;
    let request = SeparateRequest {
        method: args.method.parse::<SolverMethod>()?,
        lambda: args.lambda,
        alpha0: args.alpha0,
        rank: args.rank,
        budget_seconds: args.budget_seconds,
        max_iters: args.max_iters,
        seed: args.seed,
    };
    let out = separate(&mixture, &params, &annotations, &request, &mut |_| {})?;

    let stem = args
        .mixture
        .file_stem()
        .map_or_else(|| "mixture".into(), |s| s.to_string_lossy().into_owned());
    std::fs::create_dir_all(&args.out_dir)?;
    for (g, source) in out.sources.iter().enumerate() {
        wav::write_wav(
            args.out_dir.join(format!("{stem}_source{g}.wav")),
            source,
            params.sample_rate,
        )?;
    }
    let trace = &out.solution.trace;
    std::fs::write(args.out_dir.join(format!("{stem}_trace.csv")), trace.to_csv_string())?;
    let last = trace.last();
    let meta = serde_json::json!({
        "mixture": args.mixture,
        "annotations": args.annotations,
        "method": request.method,
        "request": request,
        "solver_config": out.settings,
        "stft": params,
        "num_sources": annotations.num_sources,
        "annotated_fraction": annotations.fraction(),
        "iterations": last.map_or(0, |r| r.iter),
        "seconds": last.map_or(0.0, |r| r.seconds),
        "best_objective": trace.best_objective(),
    });
    std::fs::write(
        args.out_dir.join(format!("{stem}_run.json")),
        serde_json::to_string_pretty(&meta)?,
    )?;
    println!(
        "wrote {} sources to {} (best objective {:.6e})",
        out.sources.len(),
        args.out_dir.display(),
        trace.best_objective()
    );
    Ok(())
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let config = ExperimentConfig::from_json(&read_text(&args.config)?).map_err(|e| match e {
        Error::Json(j) => Error::InvalidConfig(j.to_string()),
        other => other,
    })?;
    let report = run_experiment(&config)?;
    report.write_outputs(&args.out_dir)?;
    print!("{}", report.format_table());
    Ok(())
}

pub fn cmd_serve(args: &ServeArgs) -> i32 {
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return 1;
        }
    };
    let result = runtime.block_on(crate::service::serve(
        ([127, 0, 0, 1], args.port).into(),
        args.data_dir.clone(),
        args.workers,
    ));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
