//! Penalized Itakura-Saito NMF on the demo track.
//!
//!     cargo run --release --example nmf_baseline -- [seconds] [lambda] [rank]

use nucsep::annotation::MaskMode;
use nucsep::experiment::PreparedTrack;
use nucsep::nmf::{solve_nmf, NmfConfig};
use nucsep::spectral::StftParams;
use nucsep::synth::demo_track;

fn main() -> nucsep::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let budget: f64 = args.first().map_or(10.0, |a| a.parse().expect("seconds"));
    let lambda: f64 = args.get(1).map_or(1.0, |a| a.parse().expect("lambda"));
    let rank: usize = args.get(2).map_or(4, |a| a.parse().expect("rank"));

    let track = PreparedTrack::new(&demo_track(), &StftParams::default(), 0.4, 1, MaskMode::Soft)?;
    let config = NmfConfig {
        lambda,
        rank,
        iters_per_start: usize::MAX,
        time_budget: Some(budget),
        ..NmfConfig::default()
    };
    let solution = solve_nmf(&track.mixture, &track.annotations, &config)?;
    let trace = &solution.trace;
    println!(
        "{} updates over {} starts, best objective {:.6e}",
        trace.records.len() - config.num_starts,
        config.num_starts,
        trace.best_objective()
    );
    let eval = track.score(&solution.estimates)?;
    for (g, m) in eval.sources.iter().enumerate() {
        println!("source {g}: SDR {:6.2}  SIR {:6.2}  SAR {:6.2}", m.sdr, m.sir, m.sar);
    }
    Ok(())
}
