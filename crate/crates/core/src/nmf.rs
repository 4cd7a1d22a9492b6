//! Penalized Itakura-Saito NMF baseline.
//!
//! Each source is modelled as `D_g A_g` with a fixed inner rank `K`. The
//! objective is the IS divergence between the mixture and the summed model,
//! plus `lambda` times the IS divergence between the annotation targets and
//! each source model on the annotated bins. Factors are updated by
//! multiplicative rules from the split of the gradient into its positive and
//! negative parts, and the whole problem is restarted from several random
//! points.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotation::{compute_targets, AnnotationSet, TargetValues};
use crate::error::{check_shape, Error, Result};
use crate::estimates::SourceEstimates;
use crate::spectral::MixtureSpectrogram;
use crate::trace::{Snapshot, SnapshotState, Solution, SolveTrace, TraceRecord};

/// Floor applied wherever the IS divergence divides or takes a logarithm.
pub const EPS: f64 = 1e-12;

pub const RANK_GRID: [usize; 3] = [2, 4, 8];

/// `x/y - log(x/y) - 1` with both arguments floored at [`EPS`].
pub fn is_divergence(x: f64, y: f64) -> f64 {
    let r = x.max(EPS) / y.max(EPS);
    r - r.ln() - 1.0
}

pub fn is_divergence_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| is_divergence(*a, *b)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfFactors {
    /// `F x K` per source.
    pub dictionaries: Vec<DMatrix<f64>>,
    /// `K x N` per source.
    pub activations: Vec<DMatrix<f64>>,
}

impl NmfFactors {
    pub fn new(dictionaries: Vec<DMatrix<f64>>, activations: Vec<DMatrix<f64>>) -> Result<Self> {
        if dictionaries.is_empty() || dictionaries.len() != activations.len() {
            return Err(Error::InvalidInput(
                "need one dictionary and one activation matrix per source".into(),
            ));
        }
        let rank = dictionaries[0].ncols();
        let (f, n) = (dictionaries[0].nrows(), activations[0].ncols());
        for (d, a) in dictionaries.iter().zip(&activations) {
            check_shape((f, rank), d.shape())?;
            check_shape((rank, n), a.shape())?;
        }
        Ok(Self {
            dictionaries,
            activations,
        })
    }

    /// Draws every entry as `|z| + 0.1` with `z` standard normal.
    pub fn random(num_sources: usize, shape: (usize, usize), rank: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                z.abs() + 0.1
            })
        };
        let mut dictionaries = Vec::with_capacity(num_sources);
        let mut activations = Vec::with_capacity(num_sources);
        for _ in 0..num_sources {
            dictionaries.push(draw(shape.0, rank));
            activations.push(draw(rank, shape.1));
        }
        Self {
            dictionaries,
            activations,
        }
    }

    pub fn rank(&self) -> usize {
        self.dictionaries[0].ncols()
    }

    pub fn num_sources(&self) -> usize {
        self.dictionaries.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.dictionaries[0].nrows(), self.activations[0].ncols())
    }

    pub fn source_model(&self, g: usize) -> DMatrix<f64> {
        &self.dictionaries[g] * &self.activations[g]
    }

    pub fn models(&self) -> Vec<DMatrix<f64>> {
        (0..self.num_sources()).map(|g| self.source_model(g)).collect()
    }

    pub fn to_estimates(&self, scale: f64) -> SourceEstimates {
        SourceEstimates::from_parts_unchecked(
            self.models().into_iter().map(|m| m * scale).collect(),
        )
    }

    pub fn min_entry(&self) -> f64 {
        self.dictionaries
            .iter()
            .chain(&self.activations)
            .flat_map(|m| m.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub lambda: f64,
    pub rank: usize,
    pub iters_per_start: usize,
    pub num_starts: usize,
    pub seed: u64,
    /// Wall-clock budget in seconds, shared equally among the starts.
    pub time_budget: Option<f64>,
    /// Exponent applied to the multiplicative ratio, 1 or 0.5.
    pub update_exponent: f64,
    /// Capture the best-so-far factors every this many steps; 0 disables.
    pub snapshot_every: usize,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            rank: 4,
            iters_per_start: 200,
            num_starts: 3,
            seed: 0,
            time_budget: None,
            update_exponent: 1.0,
            snapshot_every: 0,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_starts == 0 || self.iters_per_start == 0 {
            return Err(Error::InvalidConfig(
                "num_starts and iters_per_start must be positive".into(),
            ));
        }
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.update_exponent != 1.0 && self.update_exponent != 0.5 {
            return Err(Error::InvalidConfig(format!(
                "update exponent {} must be 1 or 0.5",
                self.update_exponent
            )));
        }
        if let Some(b) = self.time_budget {
            if !(b >= 0.0) {
                return Err(Error::InvalidConfig(format!("time budget {b} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Dense form of the data the updates need: floored mixture, annotation
/// indicator and floored per-source targets.
struct Problem {
    mixture: DMatrix<f64>,
    indicator: DMatrix<f64>,
    targets: Vec<DMatrix<f64>>,
    lambda: f64,
}

impl Problem {
    fn new(mixture: &DMatrix<f64>, targets: &TargetValues, lambda: f64) -> Result<Self> {
        check_shape(mixture.shape(), targets.shape)?;
        let (f, n) = mixture.shape();
        let mut indicator = DMatrix::zeros(f, n);
        let mut dense = vec![DMatrix::from_element(f, n, EPS); targets.num_sources()];
        for (i, &(bf, bn)) in targets.bins.iter().enumerate() {
            indicator[(bf, bn)] = 1.0;
            for (g, t) in dense.iter_mut().enumerate() {
                t[(bf, bn)] = targets.values[g][i].max(EPS);
            }
        }
        Ok(Self {
            mixture: mixture.map(|v| v.max(EPS)),
            indicator,
            targets: dense,
            lambda,
        })
    }

    fn check(&self, factors: &NmfFactors) -> Result<()> {
        check_shape(self.mixture.shape(), factors.shape())?;
        if factors.num_sources() != self.targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} factor pairs for {} annotated sources",
                factors.num_sources(),
                self.targets.len()
            )));
        }
        Ok(())
    }

    fn objective(&self, factors: &NmfFactors) -> f64 {
        let models = factors.models();
        let mut total = models[0].clone();
        for m in &models[1..] {
            total += m;
        }
        let mut value = is_divergence_matrix(&self.mixture, &total);
        if self.lambda > 0.0 {
            let mut penalty = 0.0;
            for (model, target) in models.iter().zip(&self.targets) {
                for ((chi, t), w) in self.indicator.iter().zip(target.iter()).zip(model.iter()) {
                    if *chi > 0.0 {
                        penalty += is_divergence(*t, *w);
                    }
                }
            }
            value += self.lambda * penalty;
        }
        value
    }

    /// Negative and positive gradient parts with respect to the model of
    /// source `g`, given the current total and source model.
    fn gradient_parts(&self, g: usize, total: &DMatrix<f64>, model: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let lambda = self.lambda;
        let (f, n) = total.shape();
        let mut neg = DMatrix::zeros(f, n);
        let mut pos = DMatrix::zeros(f, n);
        let target = &self.targets[g];
        for j in 0..n {
            for i in 0..f {
                let w = total[(i, j)].max(EPS);
                let wg = model[(i, j)].max(EPS);
                let chi = self.indicator[(i, j)];
                neg[(i, j)] = self.mixture[(i, j)] / (w * w) + lambda * chi * target[(i, j)] / (wg * wg);
                pos[(i, j)] = 1.0 / w + lambda * chi / wg;
            }
        }
        (neg, pos)
    }

    fn step(&self, factors: &mut NmfFactors, gamma: f64) {
        let apply = |x: &mut DMatrix<f64>, num: &DMatrix<f64>, den: &DMatrix<f64>| {
            for ((v, a), b) in x.iter_mut().zip(num.iter()).zip(den.iter()) {
                let ratio = a / b.max(EPS);
                let r = if gamma == 1.0 { ratio } else { ratio.powf(gamma) };
                *v = (*v * r).max(EPS);
            }
        };
        for g in 0..factors.num_sources() {
            let total = total_model(factors);
            let model = factors.source_model(g);
            let (neg, pos) = self.gradient_parts(g, &total, &model);
            let a_t = factors.activations[g].transpose();
            let num = &neg * &a_t;
            let den = &pos * &a_t;
            apply(&mut factors.dictionaries[g], &num, &den);

            let total = total_model(factors);
            let model = factors.source_model(g);
            let (neg, pos) = self.gradient_parts(g, &total, &model);
            let d_t = factors.dictionaries[g].transpose();
            let num = &d_t * &neg;
            let den = &d_t * &pos;
            apply(&mut factors.activations[g], &num, &den);
        }
    }
}

fn total_model(factors: &NmfFactors) -> DMatrix<f64> {
    let mut total = factors.source_model(0);
    for g in 1..factors.num_sources() {
        total.gemm(1.0, &factors.dictionaries[g], &factors.activations[g], 1.0);
    }
    total
}

pub fn nmf_objective(
    factors: &NmfFactors,
    mixture: &MixtureSpectrogram,
    targets: &TargetValues,
    lambda: f64,
) -> Result<f64> {
    let problem = Problem::new(mixture.values(), targets, lambda)?;
    problem.check(factors)?;
    Ok(problem.objective(factors))
}

/// One sweep of multiplicative updates: for each source in order, the
/// dictionary and then the activations.
pub fn mu_step(
    factors: &NmfFactors,
    mixture: &MixtureSpectrogram,
    targets: &TargetValues,
    lambda: f64,
    update_exponent: f64,
) -> Result<NmfFactors> {
    let problem = Problem::new(mixture.values(), targets, lambda)?;
    problem.check(factors)?;
    let mut out = factors.clone();
    problem.step(&mut out, update_exponent);
    Ok(out)
}

pub fn solve_nmf(
    mixture: &MixtureSpectrogram,
    ann: &AnnotationSet,
    config: &NmfConfig,
) -> Result<Solution> {
    solve_nmf_with_progress(mixture, ann, config, &mut |_| {})
}

/// Multi-start penalized IS-NMF.
///
/// The mixture is rescaled to unit mean before solving and the estimates are
/// scaled back. Returns the models of the start with the lowest final
/// objective.
pub fn solve_nmf_with_progress(
    mixture: &MixtureSpectrogram,
    ann: &AnnotationSet,
    config: &NmfConfig,
    on_record: &mut dyn FnMut(&TraceRecord),
) -> Result<Solution> {
    config.validate()?;
    ann.ensure_valid()?;
    let targets = compute_targets(ann, mixture)?;
    let (f, n) = mixture.shape();
    let mean = mixture.values().mean();
    let scale = if mean > 0.0 { mean } else { 1.0 };
    let mut scaled_targets = targets.clone();
    for values in &mut scaled_targets.values {
        values.iter_mut().for_each(|v| *v /= scale);
    }
    let problem = Problem::new(&(mixture.values() / scale), &scaled_targets, config.lambda)?;

    let start = Instant::now();
    let elapsed = || start.elapsed().as_secs_f64();
    let per_start = config.time_budget.map(|b| b / config.num_starts as f64);
    let mut trace = SolveTrace::default();
    let mut snapshots = Vec::new();
    let mut best_seen: Option<NmfFactors> = None;
    let mut chosen: Option<(f64, NmfFactors, usize)> = None;
    let mut global_iter = 0usize;

    for s in 0..config.num_starts {
        if s > 0 && config.time_budget.is_some_and(|b| elapsed() >= b) {
            break;
        }
        let started = elapsed();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s as u64);
        let mut factors = NmfFactors::random(ann.num_sources, (f, n), config.rank, &mut rng);
        let mut value = problem.objective(&factors);

        let mut record_step = |iter: usize, value: f64, factors: &NmfFactors, trace: &mut SolveTrace| {
            let record = trace.push(iter, elapsed(), value);
            if trace.best_record == trace.records.len() - 1 {
                best_seen = Some(factors.clone());
            }
            on_record(&record);
            if config.snapshot_every > 0 && iter.is_multiple_of(config.snapshot_every) {
                snapshots.push(Snapshot {
                    iter,
                    seconds: record.seconds,
                    state: SnapshotState::Factors {
                        factors: best_seen.clone().expect("set on first record"),
                        scale,
                    },
                });
            }
        };
        record_step(global_iter, value, &factors, &mut trace);

        for _ in 0..config.iters_per_start {
            if per_start.is_some_and(|b| elapsed() - started >= b) {
                break;
            }
            problem.step(&mut factors, config.update_exponent);
            value = problem.objective(&factors);
            if !value.is_finite() {
                return Err(Error::Numerical {
                    source_index: 0,
                    message: format!("NMF objective became {value} in start {s}"),
                });
            }
            global_iter += 1;
            record_step(global_iter, value, &factors, &mut trace);
        }
        global_iter += 1;

        let better = chosen.as_ref().is_none_or(|(best, _, _)| value < *best);
        if better {
            chosen = Some((value, factors, trace.records.len() - 1));
        }
    }

    if config.snapshot_every > 0 {
        let last = *trace.last().expect("at least one record");
        if snapshots.last().is_none_or(|s: &Snapshot| s.iter != last.iter) {
            snapshots.push(Snapshot {
                iter: last.iter,
                seconds: last.seconds,
                state: SnapshotState::Factors {
                    factors: best_seen.clone().expect("set on first record"),
                    scale,
                },
            });
        }
    }

    let (_, factors, record) = chosen.expect("start 0 always runs");
    trace.best_record = record;
    Ok(Solution {
        estimates: factors.to_estimates(scale),
        trace,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{generate_annotations, AnnotatedBin, MaskMode};
    use rand::Rng;

    #[test]
    fn scalar_divergence() {
        for x in [1e-3, 0.5, 1.0, 42.0] {
            assert_eq!(is_divergence(x, x), 0.0);
        }
        assert!((is_divergence(1.0, 2.0) - 0.193147).abs() < 1e-6);
        assert!((is_divergence(2.0, 1.0) - 0.306853).abs() < 1e-6);
        assert!((is_divergence(1.0, 2.0) - (0.5 - 0.5f64.ln() - 1.0)).abs() < 1e-15);
        // zero first argument is floored
        assert!(is_divergence(0.0, 1.0).is_finite());
    }

    fn rank_one(f: usize, n: usize) -> (MixtureSpectrogram, NmfFactors) {
        let d = DMatrix::from_fn(f, 1, |i, _| 1.0 + i as f64);
        let a = DMatrix::from_fn(1, n, |_, j| 0.5 + j as f64 * 0.25);
        let v = &d * &a;
        (
            MixtureSpectrogram::new(v).unwrap(),
            NmfFactors::new(vec![d], vec![a]).unwrap(),
        )
    }

    fn no_targets(shape: (usize, usize), g: usize) -> TargetValues {
        TargetValues {
            shape,
            bins: vec![],
            values: vec![vec![]; g],
        }
    }

    #[test]
    fn exact_factorization_has_zero_objective_and_is_fixed() {
        let (mix, factors) = rank_one(3, 4);
        let t = no_targets((3, 4), 1);
        assert!(nmf_objective(&factors, &mix, &t, 0.0).unwrap().abs() < 1e-12);
        let next = mu_step(&factors, &mix, &t, 0.0, 1.0).unwrap();
        for (a, b) in next.dictionaries.iter().chain(&next.activations).zip(
            factors.dictionaries.iter().chain(&factors.activations),
        ) {
            assert!(((a - b).abs().max()) <= 1e-12 * b.abs().max());
        }
    }

    #[test]
    fn unpenalized_objective_is_plain_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let factors = NmfFactors::random(2, (4, 5), 2, &mut rng);
        let mix = MixtureSpectrogram::new(DMatrix::from_fn(4, 5, |i, j| (i + j) as f64 + 0.5)).unwrap();
        let obj = nmf_objective(&factors, &mix, &no_targets((4, 5), 2), 0.0).unwrap();
        let direct = is_divergence_matrix(mix.values(), &total_model(&factors));
        assert!(((obj - direct) / direct).abs() <= 1e-12);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        // G = 1, K = 1, D = [1, 2]^T, A = [1, 3], model [[1, 3], [2, 6]].
        let factors = NmfFactors::new(
            vec![DMatrix::from_column_slice(2, 1, &[1.0, 2.0])],
            vec![DMatrix::from_row_slice(1, 2, &[1.0, 3.0])],
        )
        .unwrap();
        let mix = MixtureSpectrogram::new(DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 1.0, 6.0])).unwrap();
        let ann = AnnotationSet {
            shape: (2, 2),
            num_sources: 1,
            bins: vec![AnnotatedBin { f: 1, n: 0, mask: vec![1.0] }],
        };
        let targets = compute_targets(&ann, &mix).unwrap();
        // data: d(2,1) + d(1,2); penalty: d(1,2)
        let d21 = 2.0 - 2f64.ln() - 1.0;
        let d12 = 0.5 - 0.5f64.ln() - 1.0;
        let expected = d21 + d12 + 0.7 * d12;
        let got = nmf_objective(&factors, &mix, &targets, 0.7).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn textbook_update_when_unpenalized() {
        // Hand-rolled IS-NMF update for a single source, checked entrywise.
        let d = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let a = DMatrix::from_row_slice(1, 2, &[0.5, 1.5]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let factors = NmfFactors::new(vec![d.clone()], vec![a.clone()]).unwrap();
        let mix = MixtureSpectrogram::new(v.clone()).unwrap();
        let next = mu_step(&factors, &mix, &no_targets((2, 2), 1), 0.0, 1.0).unwrap();

        let w = &d * &a;
        let mut d_new = d.clone();
        for i in 0..2 {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..2 {
                num += v[(i, j)] / (w[(i, j)] * w[(i, j)]) * a[(0, j)];
                den += a[(0, j)] / w[(i, j)];
            }
            d_new[(i, 0)] *= num / den;
        }
        let w = &d_new * &a;
        let mut a_new = a.clone();
        for j in 0..2 {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..2 {
                num += d_new[(i, 0)] * v[(i, j)] / (w[(i, j)] * w[(i, j)]);
                den += d_new[(i, 0)] / w[(i, j)];
            }
            a_new[(0, j)] *= num / den;
        }
        assert!((&next.dictionaries[0] - d_new).abs().max() < 1e-14);
        assert!((&next.activations[0] - a_new).abs().max() < 1e-14);
    }

    fn random_problem(seed: u64) -> (MixtureSpectrogram, AnnotationSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources: Vec<MixtureSpectrogram> = (0..2)
            .map(|_| MixtureSpectrogram::new(DMatrix::from_fn(8, 8, |_, _| rng.random_range(0.1..3.0))).unwrap())
            .collect();
        let mix = MixtureSpectrogram::new(sources[0].values() + sources[1].values()).unwrap();
        let ann = generate_annotations(&sources, 0.4, seed, MaskMode::Soft).unwrap();
        (mix, ann)
    }

    #[test]
    fn factors_stay_above_floor() {
        let (mix, ann) = random_problem(4);
        let targets = compute_targets(&ann, &mix).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut factors = NmfFactors::random(2, (8, 8), 3, &mut rng);
        for _ in 0..50 {
            factors = mu_step(&factors, &mix, &targets, 10.0, 1.0).unwrap();
            assert!(factors.min_entry() >= EPS);
        }
    }

    #[test]
    fn rank_one_mixture_is_recovered() {
        let (mix, _) = rank_one(6, 7);
        let ann = AnnotationSet::empty((6, 7), 1);
        let config = NmfConfig {
            lambda: 0.0,
            rank: 1,
            iters_per_start: 300,
            num_starts: 1,
            ..Default::default()
        };
        let sol = solve_nmf(&mix, &ann, &config).unwrap();
        assert!(sol.trace.last().unwrap().objective <= 1e-6);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let (mix, ann) = random_problem(9);
        let config = NmfConfig {
            iters_per_start: 30,
            num_starts: 3,
            seed: 5,
            ..Default::default()
        };
        let a = solve_nmf(&mix, &ann, &config).unwrap();
        let b = solve_nmf(&mix, &ann, &config).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.trace.best_record, b.trace.best_record);
        let objectives = |s: &Solution| s.trace.records.iter().map(|r| r.objective).collect::<Vec<_>>();
        assert_eq!(objectives(&a), objectives(&b));
        assert_eq!(a.trace.records.len(), 3 * 31);
    }

    #[test]
    fn zero_budget_returns_first_initialization() {
        let (mix, ann) = random_problem(1);
        let config = NmfConfig {
            time_budget: Some(0.0),
            seed: 3,
            ..Default::default()
        };
        let sol = solve_nmf(&mix, &ann, &config).unwrap();
        assert_eq!(sol.trace.records.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.set_stream(0);
        let init = NmfFactors::random(2, (8, 8), config.rank, &mut rng);
        let scale = mix.values().mean();
        let expected = init.to_estimates(scale);
        for (a, b) in sol.estimates.matrices().iter().zip(expected.matrices()) {
            assert!((a - b).abs().max() <= 1e-12 * b.abs().max());
        }
    }

    #[test]
    fn config_errors() {
        let (mix, ann) = random_problem(0);
        for bad in [
            NmfConfig { num_starts: 0, ..Default::default() },
            NmfConfig { iters_per_start: 0, ..Default::default() },
            NmfConfig { rank: 0, ..Default::default() },
            NmfConfig { update_exponent: 2.0, ..Default::default() },
        ] {
            assert!(matches!(solve_nmf(&mix, &ann, &bad), Err(Error::InvalidConfig(_))));
        }
    }
}
