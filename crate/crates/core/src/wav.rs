//! Mono 16-bit PCM WAV input/output and sample-rate conversion.

use std::f64::consts::PI;
use std::io::{Read, Seek, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded mono audio with samples in `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

fn spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

pub fn read_wav_from<R: Read>(reader: R) -> Result<Audio> {
    let reader = hound::WavReader::new(reader)?;
    let s = reader.spec();
    if s.channels != 1 || s.bits_per_sample != 16 || s.sample_format != hound::SampleFormat::Int {
        return Err(Error::InvalidInput(format!(
            "expected mono 16-bit PCM, got {} channel(s), {} bits",
            s.channels, s.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Audio {
        samples,
        sample_rate: s.sample_rate,
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let file = std::fs::File::open(path)?;
    read_wav_from(std::io::BufReader::new(file))
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav_to<W: Write + Seek>(writer: W, samples: &[f64], sample_rate: u32) -> Result<()> {
    let mut w = hound::WavWriter::new(writer, spec(sample_rate))?;
    for &x in samples {
        w.write_sample(quantize(x))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_wav_to(std::io::BufWriter::new(file), samples, sample_rate)
}

/// Encodes to an in-memory WAV file.
pub fn wav_bytes(samples: &[f64], sample_rate: u32) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    write_wav_to(&mut cursor, samples, sample_rate)?;
    Ok(cursor.into_inner())
}

const SINC_HALF_WIDTH: usize = 32;

/// Windowed-sinc (Blackman) resampling.
///
/// The low-pass cutoff is the lower of the two Nyquist frequencies.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let cutoff = ratio.min(1.0);
    let half = (SINC_HALF_WIDTH as f64 / cutoff).ceil() as isize;
    let out_len = ((samples.len() as f64) * ratio).round() as usize;
    let n = samples.len() as isize;

    (0..out_len)
        .map(|i| {
            let t = i as f64 / ratio;
            let center = t.floor() as isize;
            let mut acc = 0.0;
            for k in (center - half + 1)..=(center + half) {
                if k < 0 || k >= n {
                    continue;
                }
                let x = t - k as f64;
                let u = x / (half as f64) ;
                if u.abs() >= 1.0 {
                    continue;
                }
                let win = 0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos();
                acc += samples[k as usize] * cutoff * sinc(cutoff * x) * win;
            }
            acc
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Reads a WAV file and converts it to `target_rate` if needed.
pub fn read_wav_resampled(path: impl AsRef<Path>, target_rate: u32) -> Result<Vec<f64>> {
    let audio = read_wav(path)?;
    Ok(resample(&audio.samples, audio.sample_rate, target_rate))
}
