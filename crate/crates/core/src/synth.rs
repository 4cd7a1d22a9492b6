//! Seeded synthetic two-source tracks: a harmonic melody with vibrato over
//! bursts of band-passed noise, mixed at equal energy.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_seconds")]
    pub seconds: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_seconds() -> f64 {
    8.0
}

fn default_rate() -> u32 {
    16_000
}

/// Reference sources and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub name: String,
    pub sample_rate: u32,
    pub sources: Vec<Vec<f64>>,
    pub mixture: Vec<f64>,
}

impl Track {
    pub fn from_sources(name: impl Into<String>, sample_rate: u32, sources: Vec<Vec<f64>>) -> Self {
        let len = sources.iter().map(Vec::len).min().unwrap_or(0);
        let sources: Vec<Vec<f64>> = sources.into_iter().map(|mut s| {
            s.truncate(len);
            s
        }).collect();
        let mixture = (0..len).map(|t| sources.iter().map(|s| s[t]).sum()).collect();
        Self {
            name: name.into(),
            sample_rate,
            sources,
            mixture,
        }
    }
}

/// RMS level each source is normalized to before mixing.
const SOURCE_RMS: f64 = 0.1;

pub fn generate(spec: &SyntheticSpec) -> Track {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let len = (spec.seconds * spec.sample_rate as f64).round() as usize;
    let rate = spec.sample_rate as f64;
    let mut melody = tone_stack(len, rate, &mut rng);
    let mut bursts = noise_bursts(len, rate, &mut rng);
    normalize_rms(&mut melody, SOURCE_RMS);
    normalize_rms(&mut bursts, SOURCE_RMS);
    Track::from_sources(spec.name.clone(), spec.sample_rate, vec![melody, bursts])
}

/// A short demo track used by the examples and the CLI smoke tests.
pub fn demo_track() -> Track {
    generate(&SyntheticSpec {
        name: "demo".into(),
        seed: 2012,
        seconds: 3.0,
        sample_rate: 16_000,
    })
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

/// Notes drawn from a few pitches, each a stack of decaying harmonics with
/// slight vibrato.
fn tone_stack(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const SCALE: [f64; 5] = [0.0, 2.0, 4.0, 7.0, 9.0];
    let base = rng.random_range(150.0..260.0);
    let pitches: Vec<f64> = (0..4)
        .map(|_| base * 2f64.powf(SCALE[rng.random_range(0..SCALE.len())] / 12.0))
        .collect();
    let timbre: Vec<f64> = (0..40).map(|h| rng.random_range(0.3..1.0) / (1.0 + h as f64).powf(0.8)).collect();
    let vibrato_rate = rng.random_range(4.5..6.5);
    let vibrato_depth = rng.random_range(0.002..0.006);

    let mut out = vec![0.0; len];
    let mut start = 0usize;
    while start < len {
        let dur = (rng.random_range(0.4..1.2) * rate) as usize;
        let end = (start + dur).min(len);
        let f0 = pitches[rng.random_range(0..pitches.len())];
        let gain = rng.random_range(0.6..1.0);
        let mut phase = vec![0.0; timbre.len()];
        for t in start..end {
            let local = (t - start) as f64 / rate;
            let vib = 1.0 + vibrato_depth * (2.0 * PI * vibrato_rate * local).sin();
            let attack = (local / 0.02).min(1.0);
            let release = ((end - t) as f64 / rate / 0.05).min(1.0);
            let env = gain * attack * release * (-local / 1.5).exp();
            let mut sample = 0.0;
            for (h, amp) in timbre.iter().enumerate() {
                let freq = f0 * (h + 1) as f64 * vib;
                if freq >= 0.45 * rate {
                    break;
                }
                phase[h] += 2.0 * PI * freq / rate;
                sample += amp * phase[h].sin();
            }
            out[t] = env * sample;
        }
        start = end + (rng.random_range(0.0..0.15) * rate) as usize;
    }
    out
}

/// Biquad band-pass, constant peak gain.
struct BandPass {
    b: [f64; 3],
    a: [f64; 2],
    state: [f64; 4],
}

impl BandPass {
    fn new(center: f64, q: f64, rate: f64) -> Self {
        let w0 = 2.0 * PI * center / rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
            state: [0.0; 4],
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let [x1, x2, y1, y2] = self.state;
        let y = self.b[0] * x + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
        self.state = [x, x1, y, y1];
        y
    }
}

/// Percussive bursts: white noise through one of a few resonant filters with
/// an exponential decay.
fn noise_bursts(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let kinds: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(300.0..4000.0),
                rng.random_range(0.8..3.0),
                rng.random_range(0.04..0.15),
            )
        })
        .collect();
    let mut out = vec![0.0; len];
    let mut onset = (rng.random_range(0.0..0.2) * rate) as usize;
    while onset < len {
        let (center, q, tau) = kinds[rng.random_range(0..kinds.len())];
        let mut filter = BandPass::new(center, q, rate);
        let gain = rng.random_range(0.5..1.0);
        let dur = ((6.0 * tau) * rate) as usize;
        for t in onset..(onset + dur).min(len) {
            let local = (t - onset) as f64 / rate;
            let white: f64 = rng.random_range(-1.0..1.0);
            out[t] += gain * (-local / tau).exp() * filter.process(white);
        }
        onset += (rng.random_range(0.2..0.5) * rate) as usize;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_energy_and_deterministic() {
        let spec = SyntheticSpec {
            name: "t".into(),
            seed: 4,
            seconds: 1.0,
            sample_rate: 16_000,
        };
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a, b);
        assert_eq!(a.mixture.len(), 16_000);
        let e: Vec<f64> = a.sources.iter().map(|s| s.iter().map(|v| v * v).sum()).collect();
        assert!(((e[0] - e[1]) / e[0]).abs() < 1e-12);
        assert!(a.mixture.iter().all(|v| v.abs() < 1.0));
        let c = generate(&SyntheticSpec { seed: 5, ..spec });
        assert_ne!(a.mixture, c.mixture);
    }
}
