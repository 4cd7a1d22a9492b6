//! Runs a comparison experiment from a JSON config and prints the summary
//! table. Defaults to the small bundled config.
//!
//!     cargo run --release --example experiment -- [config.json] [out_dir]

use std::path::PathBuf;

use nucsep::experiment::{run_experiment, ExperimentConfig};

fn main() -> nucsep::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/demo_experiment.json"));
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "experiment_out".into()));

    let config = ExperimentConfig::from_json(&std::fs::read_to_string(&config_path)?)?;
    let report = run_experiment(&config)?;
    report.write_outputs(&out_dir)?;
    print!("{}", report.format_table());
    for run in &report.selected {
        if let Some(last) = run.curve.last() {
            println!(
                "{:<7} {:<8} {} snapshots, final SDR {:.2} dB at {:.1} s",
                run.method.name(),
                run.track,
                run.curve.len(),
                last.sdr,
                last.seconds
            );
        }
    }
    println!("{} solver runs, outputs in {}", report.solver_runs(), out_dir.display());
    Ok(())
}
