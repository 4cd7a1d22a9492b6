//! Separates a WAV file given an annotation JSON, the same path the
//! `nucsep separate` command takes. Without arguments it writes the demo
//! track and its annotations first.
//!
//!     cargo run --release --example separate_wav -- [mixture.wav annotations.json]

use nucsep::annotation::{generate_annotations, AnnotationSet, MaskMode};
use nucsep::separate::{separate, SeparateRequest, SolverMethod};
use nucsep::spectral::{power_spectrogram, stft, StftParams};
use nucsep::synth::demo_track;
use nucsep::wav;

fn main() -> nucsep::Result<()> {
    let params = StftParams::default();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (mixture, ann) = if let [wav_path, json_path] = args.as_slice() {
        let mixture = wav::read_wav_resampled(wav_path, params.sample_rate)?;
        (mixture, AnnotationSet::from_json(&std::fs::read_to_string(json_path)?)?)
    } else {
        let track = demo_track();
        let truth = track
            .sources
            .iter()
            .map(|s| stft(s, &params).map(|x| power_spectrogram(&x)))
            .collect::<nucsep::Result<Vec<_>>>()?;
        (track.mixture, generate_annotations(&truth, 0.4, 1, MaskMode::Binary)?)
    };

    let mut request = SeparateRequest::new(SolverMethod::Lownuc);
    request.budget_seconds = Some(5.0);
    let out = separate(&mixture, &params, &ann, &request, &mut |_| {})?;
    for (g, s) in out.sources.iter().enumerate() {
        let path = format!("separated_source{g}.wav");
        wav::write_wav(&path, s, params.sample_rate)?;
        println!("wrote {path}");
    }
    println!("solver settings: {}", out.settings);
    Ok(())
}
