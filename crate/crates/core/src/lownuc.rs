//! Convex separation with nuclear-norm penalties.
//!
//! Minimizes
//!
//! ```text
//! ||V - sum_g V_g||_F^2 + lambda * sum_g ||V_g||_*
//! ```
//!
//! over nonnegative source spectrograms `V_g` that match the annotation
//! targets exactly on the annotated bins, using projected subgradient steps
//! with step size `alpha0 / (1 + t)`.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{compute_targets, AnnotationSet, TargetValues};
use crate::error::{check_shape, Error, Result};
use crate::estimates::SourceEstimates;
use crate::reconstruction::lazy_estimates;
use crate::spectral::MixtureSpectrogram;
use crate::trace::{Snapshot, SnapshotState, Solution, SolveTrace, TraceRecord};

/// Singular values below `sigma_max * SUPPORT_THRESHOLD` are treated as zero
/// when forming the nuclear-norm subgradient.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LownucConfig {
    pub lambda: f64,
    pub alpha0: f64,
    pub max_iters: usize,
    /// Wall-clock budget in seconds.
    pub time_budget: Option<f64>,
    /// Capture the best-so-far iterate every this many iterations; 0 disables.
    pub snapshot_every: usize,
}

impl Default for LownucConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha0: 0.25,
            max_iters: 500,
            time_budget: None,
            snapshot_every: 0,
        }
    }
}

impl LownucConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha0 {} must be > 0", self.alpha0)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if let Some(b) = self.time_budget {
            if !(b >= 0.0) {
                return Err(Error::InvalidConfig(format!("time budget {b} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Step size at iteration `t`.
    pub fn step(&self, t: usize) -> f64 {
        self.alpha0 / (1.0 + t as f64)
    }
}

/// Grids used when no hyperparameters are given, relative to `||V||_F`.
pub const LAMBDA_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];
pub const ALPHA0_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Sum of singular values.
pub fn nuclear_norm(x: &DMatrix<f64>) -> Result<f64> {
    check_finite(x)?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let sv = x
        .clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical {
            source_index: 0,
            message: "SVD did not converge".into(),
        })?
        .singular_values;
    Ok(sv.iter().sum())
}

pub fn objective(est: &SourceEstimates, mixture: &MixtureSpectrogram, lambda: f64) -> Result<f64> {
    check_shape(mixture.shape(), est.shape())?;
    let fit = (mixture.values() - est.total()).norm_squared();
    if lambda == 0.0 {
        return Ok(fit);
    }
    let mut penalty = 0.0;
    for m in est.matrices() {
        penalty += nuclear_norm(m)?;
    }
    Ok(fit + lambda * penalty)
}

/// Nuclear norm and the subgradient `U W^T` restricted to the numerical
/// support of the singular values.
fn nuclear_parts(x: &DMatrix<f64>, source_index: usize) -> Result<(f64, DMatrix<f64>)> {
    let svd = x
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical {
            source_index,
            message: "SVD did not converge".into(),
        })?;
    let sv = &svd.singular_values;
    let norm: f64 = sv.iter().sum();
    if !norm.is_finite() {
        return Err(Error::Numerical {
            source_index,
            message: "non-finite singular values".into(),
        });
    }
    let sigma_max = sv.iter().cloned().fold(0.0, f64::max);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut sub = DMatrix::zeros(x.nrows(), x.ncols());
    if sigma_max > 0.0 {
        let cut = sigma_max * SUPPORT_THRESHOLD;
        for (i, s) in sv.iter().enumerate() {
            if *s > cut {
                sub.ger(1.0, &u.column(i), &v_t.row(i).transpose(), 1.0);
            }
        }
    }
    Ok((norm, sub))
}

/// Objective value and one subgradient per source, from a single SVD of
/// each source.
fn evaluate(
    est: &SourceEstimates,
    mixture: &MixtureSpectrogram,
    lambda: f64,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    check_shape(mixture.shape(), est.shape())?;
    let residual = est.total() - mixture.values();
    let fit = residual.norm_squared();
    let smooth = residual * 2.0;
    if lambda == 0.0 {
        return Ok((fit, vec![smooth; est.num_sources()]));
    }
    let parts: Vec<Result<(f64, DMatrix<f64>)>> = est
        .matrices()
        .par_iter()
        .enumerate()
        .map(|(g, m)| nuclear_parts(m, g))
        .collect();
    let mut penalty = 0.0;
    let mut grads = Vec::with_capacity(parts.len());
    for part in parts {
        let (norm, sub) = part?;
        penalty += norm;
        grads.push(&smooth + sub * lambda);
    }
    Ok((fit + lambda * penalty, grads))
}

pub fn subgradient(
    est: &SourceEstimates,
    mixture: &MixtureSpectrogram,
    lambda: f64,
) -> Result<Vec<DMatrix<f64>>> {
    evaluate(est, mixture, lambda).map(|(_, g)| g)
}

/// Euclidean projection onto the feasible set: targets on annotated bins,
/// nonnegativity elsewhere.
pub fn project(est: &SourceEstimates, targets: &TargetValues) -> Result<SourceEstimates> {
    let mut out = est.clone();
    project_in_place(&mut out, targets)?;
    Ok(out)
}

pub fn project_in_place(est: &mut SourceEstimates, targets: &TargetValues) -> Result<()> {
    check_shape(targets.shape, est.shape())?;
    if targets.num_sources() != est.num_sources() {
        return Err(Error::InvalidInput(format!(
            "{} target sources for {} estimates",
            targets.num_sources(),
            est.num_sources()
        )));
    }
    for (m, values) in est.matrices_mut().iter_mut().zip(&targets.values) {
        m.apply(|v| *v = v.max(0.0));
        for (&(f, n), t) in targets.bins.iter().zip(values) {
            m[(f, n)] = *t;
        }
    }
    Ok(())
}

pub fn is_feasible(est: &SourceEstimates, targets: &TargetValues) -> bool {
    est.is_nonnegative()
        && est
            .matrices()
            .iter()
            .zip(&targets.values)
            .all(|(m, values)| {
                targets
                    .bins
                    .iter()
                    .zip(values)
                    .all(|(&(f, n), t)| m[(f, n)] == *t)
            })
}

pub fn solve(
    mixture: &MixtureSpectrogram,
    ann: &AnnotationSet,
    config: &LownucConfig,
) -> Result<Solution> {
    solve_with_progress(mixture, ann, config, &mut |_| {})
}

/// Runs the projected subgradient method from the lazy point.
///
/// `on_record` sees every trace record as it is produced. Returns the best
/// iterate by objective, not the last one.
pub fn solve_with_progress(
    mixture: &MixtureSpectrogram,
    ann: &AnnotationSet,
    config: &LownucConfig,
    on_record: &mut dyn FnMut(&TraceRecord),
) -> Result<Solution> {
    config.validate()?;
    ann.ensure_valid()?;
    let targets = compute_targets(ann, mixture)?;
    let start = Instant::now();
    let out_of_time = || {
        config
            .time_budget
            .is_some_and(|b| start.elapsed().as_secs_f64() >= b)
    };

    let mut current = lazy_estimates(mixture, &targets, ann.num_sources)?;
    let (mut value, mut grads) = evaluate(&current, mixture, config.lambda)?;
    let mut trace = SolveTrace::default();
    let mut snapshots = Vec::new();
    let mut best = current.clone();
    on_record(&trace.push(0, start.elapsed().as_secs_f64(), value));
    if config.snapshot_every > 0 {
        snapshots.push(Snapshot {
            iter: 0,
            seconds: trace.records[0].seconds,
            state: SnapshotState::Estimates(best.clone()),
        });
    }

    for t in 0..config.max_iters {
        if out_of_time() {
            break;
        }
        let step = config.step(t);
        for (m, g) in current.matrices_mut().iter_mut().zip(&grads) {
            *m -= g * step;
        }
        project_in_place(&mut current, &targets)?;
        (value, grads) = evaluate(&current, mixture, config.lambda)?;
        if !value.is_finite() {
            return Err(Error::Numerical {
                source_index: 0,
                message: format!("objective became {value} at iteration {}", t + 1),
            });
        }
        let record = trace.push(t + 1, start.elapsed().as_secs_f64(), value);
        if trace.best_record == trace.records.len() - 1 {
            best.clone_from(&current);
        }
        on_record(&record);
        if config.snapshot_every > 0 && (t + 1).is_multiple_of(config.snapshot_every) {
            snapshots.push(Snapshot {
                iter: t + 1,
                seconds: record.seconds,
                state: SnapshotState::Estimates(best.clone()),
            });
        }
    }

    if config.snapshot_every > 0 {
        let last = *trace.last().expect("trace has the initial record");
        if snapshots.last().is_some_and(|s| s.iter != last.iter) {
            snapshots.push(Snapshot {
                iter: last.iter,
                seconds: last.seconds,
                state: SnapshotState::Estimates(best.clone()),
            });
        }
    }

    Ok(Solution {
        estimates: best,
        trace,
        snapshots,
    })
}
