//! Source separation quality: SDR, SIR and SAR.
//!
//! Uses the time-invariant-gain decomposition. Each estimate is split into a
//! scaled copy of its own reference, interference lying in the span of all
//! references, and an artefact term orthogonal to that span. No distortion
//! filter is fitted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Infinite ratios are reported at this magnitude.
pub const DB_CAP: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceMetrics {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssEval {
    pub sources: Vec<SourceMetrics>,
}

impl BssEval {
    pub fn mean(&self) -> SourceMetrics {
        let k = self.sources.len() as f64;
        let sum = |f: fn(&SourceMetrics) -> f64| self.sources.iter().map(f).sum::<f64>() / k;
        SourceMetrics {
            sdr: sum(|m| m.sdr),
            sir: sum(|m| m.sir),
            sar: sum(|m| m.sar),
        }
    }
}

/// `10 log10(num / den)` clamped to `[-DB_CAP, DB_CAP]`; a zero numerator is
/// `-DB_CAP` and a zero denominator `+DB_CAP`.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        -DB_CAP
    } else if den <= 0.0 {
        DB_CAP
    } else {
        (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn bss_eval(estimates: &[Vec<f64>], references: &[Vec<f64>]) -> Result<BssEval> {
    if estimates.len() != references.len() || references.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} estimates for {} references",
            estimates.len(),
            references.len()
        )));
    }
    let len = references[0].len();
    if references.iter().chain(estimates).any(|s| s.len() != len) {
        return Err(Error::InvalidInput("signals differ in length".into()));
    }
    let energies: Vec<f64> = references.iter().map(|r| sq(r)).collect();
    if energies.contains(&0.0) {
        return Err(Error::InvalidInput("reference signal is all zeros".into()));
    }

    let g = references.len();
    let gram = DMatrix::from_fn(g, g, |i, j| dot(&references[i], &references[j]));
    let gram = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("references are linearly dependent".into()))?;

    let sources = estimates
        .iter()
        .enumerate()
        .map(|(k, est)| {
            let reference = &references[k];
            let gain = dot(est, reference) / energies[k];
            let rhs = DVector::from_iterator(g, references.iter().map(|r| dot(r, est)));
            let coeffs = gram.solve(&rhs);

            let mut projected = vec![0.0; len];
            for (c, r) in coeffs.iter().zip(references) {
                for (p, x) in projected.iter_mut().zip(r) {
                    *p += c * x;
                }
            }
            let mut target_e = 0.0;
            let mut interf_e = 0.0;
            let mut artif_e = 0.0;
            let mut distortion_e = 0.0;
            let mut projected_e = 0.0;
            for t in 0..len {
                let target = gain * reference[t];
                let interf = projected[t] - target;
                let artif = est[t] - projected[t];
                target_e += target * target;
                interf_e += interf * interf;
                artif_e += artif * artif;
                distortion_e += (interf + artif) * (interf + artif);
                projected_e += projected[t] * projected[t];
            }
            SourceMetrics {
                sdr: ratio_db(target_e, distortion_e),
                sir: ratio_db(target_e, interf_e),
                sar: ratio_db(projected_e, artif_e),
            }
        })
        .collect();
    Ok(BssEval { sources })
}
