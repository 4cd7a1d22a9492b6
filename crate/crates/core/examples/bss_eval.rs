//! SDR, SIR and SAR of a few hand-made estimates of the demo sources.
//!
//!     cargo run --example bss_eval

use nucsep::metrics::bss_eval;
use nucsep::synth::demo_track;

fn main() -> nucsep::Result<()> {
    let track = demo_track();
    let refs = &track.sources;
    let mix = &track.mixture;

    let report = |label: &str, est: Vec<Vec<f64>>| -> nucsep::Result<()> {
        let m = bss_eval(&est, refs)?.mean();
        println!("{label:<22} SDR {:8.2}  SIR {:8.2}  SAR {:8.2}", m.sdr, m.sir, m.sar);
        Ok(())
    };

    report("perfect", refs.clone())?;
    report("mixture as estimate", vec![mix.clone(), mix.clone()])?;
    report("half the mixture", vec![mix.iter().map(|x| x / 2.0).collect(); 2])?;
    let leaky = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + 0.1 * y).collect();
    report("10% leakage", vec![leaky(&refs[0], &refs[1]), leaky(&refs[1], &refs[0])])?;
    Ok(())
}
