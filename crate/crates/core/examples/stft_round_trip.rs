//! STFT analysis and overlap-add resynthesis of the demo track.
//!
//!     cargo run --example stft_round_trip

use nucsep::spectral::{istft, power_spectrogram, stft, StftParams};
use nucsep::synth::demo_track;

fn main() -> nucsep::Result<()> {
    let track = demo_track();
    let params = StftParams::default();
    let spec = stft(&track.mixture, &params)?;
    let (f, n) = spec.shape();
    println!(
        "{} samples -> {f} bins x {n} frames ({:.1} ms hop, {:.2} Hz per bin)",
        track.mixture.len(),
        params.hop_seconds() * 1e3,
        params.bin_hz()
    );
    println!("window overlap-add deviation from constant: {:.2e}", params.cola_deviation());

    let power = power_spectrogram(&spec);
    let energy: f64 = power.values().sum();
    println!("total spectrogram power {energy:.3}");

    let back = istft(&spec)?;
    let err: f64 = back.iter().zip(&track.mixture).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = track.mixture.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("round trip relative error {:.2e}", err / norm);
    Ok(())
}
