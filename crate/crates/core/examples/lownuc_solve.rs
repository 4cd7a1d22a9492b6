//! Nuclear-norm separation of the demo track, printing the objective as it
//! goes and the SDR of the result against the lazy and oracle references.
//!
//!     cargo run --release --example lownuc_solve -- [seconds] [lambda] [alpha0]

use nucsep::annotation::{compute_targets, MaskMode};
use nucsep::experiment::PreparedTrack;
use nucsep::lownuc::{solve_with_progress, LownucConfig};
use nucsep::reconstruction::{lazy_estimates, oracle_estimates};
use nucsep::spectral::StftParams;
use nucsep::synth::demo_track;

fn main() -> nucsep::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>().expect("number"));
    let budget = args.next().unwrap_or(10.0);
    let lambda = args.next().unwrap_or(0.1);
    let alpha0 = args.next().unwrap_or(1.0);

    let track = PreparedTrack::new(&demo_track(), &StftParams::default(), 0.4, 1, MaskMode::Soft)?;
    let config = LownucConfig {
        lambda: lambda * track.mixture.frobenius_norm(),
        alpha0,
        max_iters: usize::MAX,
        time_budget: Some(budget),
        snapshot_every: 0,
    };
    let solution = solve_with_progress(&track.mixture, &track.annotations, &config, &mut |r| {
        if r.iter % 20 == 0 {
            println!("iter {:4}  {:6.2} s  objective {:.6e}", r.iter, r.seconds, r.best_objective);
        }
    })?;

    let targets = compute_targets(&track.annotations, &track.mixture)?;
    let lazy = lazy_estimates(&track.mixture, &targets, 2)?;
    let oracle = oracle_estimates(&track.true_specs)?;
    println!("SDR lazy   {:6.2} dB", track.score(&lazy)?.mean().sdr);
    println!("SDR lownuc {:6.2} dB", track.score(&solution.estimates)?.mean().sdr);
    println!("SDR oracle {:6.2} dB", track.score(&oracle)?.mean().sdr);
    Ok(())
}
