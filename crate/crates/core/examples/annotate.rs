//! Draws soft and binary annotations from the true sources of the demo track
//! and writes them as JSON.
//!
//!     cargo run --example annotate -- [fraction] [out.json]

use nucsep::annotation::{generate_annotations, AnnotationSet, MaskMode};
use nucsep::spectral::{power_spectrogram, stft, StftParams};
use nucsep::synth::demo_track;

fn main() -> nucsep::Result<()> {
    let mut args = std::env::args().skip(1);
    let fraction: f64 = args.next().map_or(0.4, |a| a.parse().expect("fraction"));
    let out = args.next().unwrap_or_else(|| "demo_annotations.json".into());

    let track = demo_track();
    let params = StftParams::default();
    let truth = track
        .sources
        .iter()
        .map(|s| stft(s, &params).map(|x| power_spectrogram(&x)))
        .collect::<nucsep::Result<Vec<_>>>()?;

    for mode in [MaskMode::Soft, MaskMode::Binary] {
        let ann = generate_annotations(&truth, fraction, 1, mode)?;
        let dominant = ann.bins.iter().filter(|b| b.mask[0] > 0.5).count();
        println!(
            "{mode:?}: {} bins ({:.1}% of {:?}), source 0 dominant in {dominant}",
            ann.len(),
            100.0 * ann.fraction(),
            ann.shape
        );
    }

    let ann = generate_annotations(&truth, fraction, 1, MaskMode::Soft)?;
    std::fs::write(&out, ann.to_json())?;
    let reloaded = AnnotationSet::from_json(&std::fs::read_to_string(&out)?)?;
    assert_eq!(reloaded, ann);
    println!("wrote {out}");
    Ok(())
}
