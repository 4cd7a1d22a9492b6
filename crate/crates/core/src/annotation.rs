//! Annotated time-frequency bins with per-source masking coefficients.
//!
//! An annotation fixes, for a subset of bins, how the mixture energy at that
//! bin is split among the sources. The split is a vector of nonnegative
//! coefficients summing to one; the implied per-source target is the mixture
//! value times the coefficient.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::spectral::MixtureSpectrogram;

/// Tolerance on the sum-to-one rule for masking coefficients.
pub const MASK_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedBin {
    pub f: usize,
    pub n: usize,
    /// One coefficient per source.
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub shape: (usize, usize),
    pub num_sources: usize,
    pub bins: Vec<AnnotatedBin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Ratio of the true source energy to the total.
    #[default]
    Soft,
    /// All weight on the dominant source.
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfBounds { f: usize, n: usize },
    Duplicate { f: usize, n: usize },
    MaskLength { f: usize, n: usize, len: usize },
    MaskRange { f: usize, n: usize, source: usize, value: f64 },
    SumToOne { f: usize, n: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfBounds { f, n } => write!(out, "bin ({f}, {n}) is out of bounds"),
            Violation::Duplicate { f, n } => write!(out, "bin ({f}, {n}) appears more than once"),
            Violation::MaskLength { f, n, len } => {
                write!(out, "bin ({f}, {n}) has {len} coefficients")
            }
            Violation::MaskRange { f, n, source, value } => write!(
                out,
                "bin ({f}, {n}) coefficient {value} for source {source} is outside [0, 1]"
            ),
            Violation::SumToOne { f, n, sum } => {
                write!(out, "bin ({f}, {n}) coefficients sum to {sum}, not 1")
            }
        }
    }
}

impl AnnotationSet {
    pub fn empty(shape: (usize, usize), num_sources: usize) -> Self {
        Self {
            shape,
            num_sources,
            bins: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Annotated share of the time-frequency plane.
    pub fn fraction(&self) -> f64 {
        let total = self.shape.0 * self.shape.1;
        if total == 0 {
            0.0
        } else {
            self.bins.len() as f64 / total as f64
        }
    }

    /// Lists every broken invariant. Never fails.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let mut seen = HashSet::new();
        for b in &self.bins {
            let (f, n) = (b.f, b.n);
            if f >= self.shape.0 || n >= self.shape.1 {
                violations.push(Violation::OutOfBounds { f, n });
            }
            if !seen.insert((f, n)) {
                violations.push(Violation::Duplicate { f, n });
            }
            if b.mask.len() != self.num_sources {
                violations.push(Violation::MaskLength {
                    f,
                    n,
                    len: b.mask.len(),
                });
                continue;
            }
            for (source, &value) in b.mask.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    violations.push(Violation::MaskRange {
                        f,
                        n,
                        source,
                        value,
                    });
                }
            }
            let sum: f64 = b.mask.iter().sum();
            if !((sum - 1.0).abs() <= MASK_SUM_TOLERANCE) {
                violations.push(Violation::SumToOne { f, n, sum });
            }
        }
        violations
    }

    pub fn ensure_valid(&self) -> Result<()> {
        match self.validate().first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidInput(format!("annotation: {v}"))),
        }
    }

    /// Canonical JSON with every coefficient written to 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{{\"shape\":[{},{}],\"num_sources\":{},\"bins\":[",
            self.shape.0, self.shape.1, self.num_sources
        )
        .unwrap();
        for (i, b) in self.bins.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "[{},{},[", b.f, b.n).unwrap();
            for (j, m) in b.mask.iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{m:.16e}").unwrap();
            }
            s.push_str("]]");
        }
        s.push_str("]}");
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            shape: (usize, usize),
            num_sources: usize,
            bins: Vec<(usize, usize, Vec<f64>)>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        Ok(Self {
            shape: raw.shape,
            num_sources: raw.num_sources,
            bins: raw
                .bins
                .into_iter()
                .map(|(f, n, mask)| AnnotatedBin { f, n, mask })
                .collect(),
        })
    }
}

/// Per-source target values on the annotated bins.
///
/// `values[g][i]` is the target of source `g` at `bins[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetValues {
    pub shape: (usize, usize),
    pub bins: Vec<(usize, usize)>,
    pub values: Vec<Vec<f64>>,
}

impl TargetValues {
    pub fn num_sources(&self) -> usize {
        self.values.len()
    }
}

pub fn compute_targets(ann: &AnnotationSet, mixture: &MixtureSpectrogram) -> Result<TargetValues> {
    check_shape(ann.shape, mixture.shape())?;
    let v = mixture.values();
    let mut values = vec![Vec::with_capacity(ann.len()); ann.num_sources];
    for b in &ann.bins {
        if b.f >= ann.shape.0 || b.n >= ann.shape.1 || b.mask.len() != ann.num_sources {
            return Err(Error::InvalidInput(format!(
                "malformed annotated bin ({}, {})",
                b.f, b.n
            )));
        }
        for (g, m) in b.mask.iter().enumerate() {
            values[g].push(m * v[(b.f, b.n)]);
        }
    }
    Ok(TargetValues {
        shape: ann.shape,
        bins: ann.bins.iter().map(|b| (b.f, b.n)).collect(),
        values,
    })
}

/// Draws `round(fraction * F * N)` distinct bins and labels them from the
/// true source spectrograms.
///
/// In soft mode bins where every source is silent are skipped and replaced
/// by further draws. Binary mode gives the whole bin to the loudest source,
/// lowest index on ties.
pub fn generate_annotations(
    true_specs: &[MixtureSpectrogram],
    fraction: f64,
    seed: u64,
    mode: MaskMode,
) -> Result<AnnotationSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "annotation fraction {fraction} outside [0, 1]"
        )));
    }
    let first = true_specs
        .first()
        .ok_or_else(|| Error::InvalidInput("no source spectrograms".into()))?;
    let shape = first.shape();
    for s in true_specs {
        check_shape(shape, s.shape())?;
    }
    let (rows, cols) = shape;
    let wanted = (fraction * (rows * cols) as f64).round() as usize;

    let mut order: Vec<(usize, usize)> = (0..rows)
        .flat_map(|f| (0..cols).map(move |n| (f, n)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut bins = Vec::with_capacity(wanted);
    for (f, n) in order {
        if bins.len() == wanted {
            break;
        }
        let energies: Vec<f64> = true_specs.iter().map(|s| s.values()[(f, n)]).collect();
        let mask = match mode {
            MaskMode::Soft => {
                let total: f64 = energies.iter().sum();
                if total <= 0.0 {
                    continue;
                }
                energies.iter().map(|e| e / total).collect()
            }
            MaskMode::Binary => {
                let mut best = 0;
                for (g, e) in energies.iter().enumerate() {
                    if *e > energies[best] {
                        best = g;
                    }
                }
                (0..energies.len())
                    .map(|g| if g == best { 1.0 } else { 0.0 })
                    .collect()
            }
        };
        bins.push(AnnotatedBin { f, n, mask });
    }
    if bins.len() < wanted {
        return Err(Error::InvalidInput(format!(
            "only {} bins carry energy, {wanted} annotations requested",
            bins.len()
        )));
    }
    bins.sort_by_key(|b| (b.f, b.n));
    Ok(AnnotationSet {
        shape,
        num_sources: true_specs.len(),
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn spec_from(values: DMatrix<f64>) -> MixtureSpectrogram {
        MixtureSpectrogram::new(values).unwrap()
    }

    fn random_specs(g: usize, rows: usize, cols: usize, seed: u64) -> Vec<MixtureSpectrogram> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..g)
            .map(|_| spec_from(DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.01..5.0))))
            .collect()
    }

    #[test]
    fn zero_fraction_is_empty() {
        let ann = generate_annotations(&random_specs(2, 4, 4, 1), 0.0, 0, MaskMode::Soft).unwrap();
        assert!(ann.is_empty());
    }

    #[test]
    fn equal_sources_give_half_masks() {
        let s = spec_from(DMatrix::from_element(3, 5, 2.0));
        let ann = generate_annotations(&[s.clone(), s], 1.0, 9, MaskMode::Soft).unwrap();
        assert_eq!(ann.len(), 15);
        assert!(ann.bins.iter().all(|b| b.mask == vec![0.5, 0.5]));
    }

    #[test]
    fn forty_percent_of_ten_by_ten_is_deterministic() {
        let specs = random_specs(2, 10, 10, 4);
        let a = generate_annotations(&specs, 0.4, 17, MaskMode::Soft).unwrap();
        let b = generate_annotations(&specs, 0.4, 17, MaskMode::Soft).unwrap();
        let c = generate_annotations(&specs, 0.4, 18, MaskMode::Soft).unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(a, b);
        assert_ne!(a.bins, c.bins);
        assert!(a.validate().is_empty());
    }

    #[test]
    fn soft_mode_skips_silent_bins() {
        let mut v = DMatrix::from_element(2, 2, 1.0);
        v[(0, 0)] = 0.0;
        let silent = spec_from(v.clone());
        let ann = generate_annotations(&[silent.clone(), silent], 0.75, 3, MaskMode::Soft).unwrap();
        assert_eq!(ann.len(), 3);
        assert!(ann.bins.iter().all(|b| (b.f, b.n) != (0, 0)));
        let too_many = generate_annotations(&[spec_from(v.clone()), spec_from(v)], 1.0, 3, MaskMode::Soft);
        assert!(too_many.is_err());
    }

    #[test]
    fn binary_masks_are_one_hot_with_low_index_ties() {
        let specs = random_specs(3, 6, 6, 5);
        let ann = generate_annotations(&specs, 0.5, 2, MaskMode::Binary).unwrap();
        for b in &ann.bins {
            assert_eq!(b.mask.iter().filter(|m| **m == 1.0).count(), 1);
            assert_eq!(b.mask.iter().filter(|m| **m == 0.0).count(), 2);
        }
        let tie = spec_from(DMatrix::from_element(1, 1, 1.0));
        let ann = generate_annotations(&[tie.clone(), tie], 1.0, 0, MaskMode::Binary).unwrap();
        assert_eq!(ann.bins[0].mask, vec![1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let specs = random_specs(2, 3, 3, 0);
        assert!(generate_annotations(&specs, 1.5, 0, MaskMode::Soft).is_err());
        assert!(generate_annotations(&specs, -0.1, 0, MaskMode::Soft).is_err());
        let mut mixed = specs.clone();
        mixed.push(spec_from(DMatrix::zeros(2, 3)));
        assert!(generate_annotations(&mixed, 0.5, 0, MaskMode::Soft).is_err());
    }

    #[test]
    fn target_arithmetic() {
        let mut mix = DMatrix::zeros(2, 2);
        mix[(0, 0)] = 7.0;
        mix[(1, 1)] = 4.0;
        let ann = AnnotationSet {
            shape: (2, 2),
            num_sources: 2,
            bins: vec![
                AnnotatedBin { f: 0, n: 0, mask: vec![1.0, 0.0] },
                AnnotatedBin { f: 1, n: 1, mask: vec![0.25, 0.75] },
            ],
        };
        let t = compute_targets(&ann, &spec_from(mix)).unwrap();
        assert_eq!(t.values, vec![vec![7.0, 1.0], vec![0.0, 3.0]]);
        assert!(compute_targets(&ann, &spec_from(DMatrix::zeros(3, 2))).is_err());
    }

    #[test]
    fn soft_targets_sum_to_mixture() {
        let specs = random_specs(3, 12, 9, 8);
        let mut sum = DMatrix::zeros(12, 9);
        for s in &specs {
            sum += s.values();
        }
        let mixture = spec_from(sum);
        let ann = generate_annotations(&specs, 0.6, 1, MaskMode::Soft).unwrap();
        let t = compute_targets(&ann, &mixture).unwrap();
        for (i, &(f, n)) in t.bins.iter().enumerate() {
            let total: f64 = (0..3).map(|g| t.values[g][i]).sum();
            let v = mixture.values()[(f, n)];
            assert!(((total - v) / v).abs() <= 1e-9);
        }
    }

    #[test]
    fn validate_reports_each_rule() {
        let good = AnnotationSet {
            shape: (2, 2),
            num_sources: 2,
            bins: vec![AnnotatedBin { f: 0, n: 1, mask: vec![0.3, 0.7] }],
        };
        assert!(good.validate().is_empty());

        let mut bad_sum = good.clone();
        bad_sum.bins[0].mask = vec![0.6, 0.6];
        let v = bad_sum.validate();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::SumToOne { f: 0, n: 1, .. }));
        assert!(v[0].to_string().contains("(0, 1)"));

        let mut dup = good.clone();
        dup.bins.push(dup.bins[0].clone());
        assert_eq!(dup.validate(), vec![Violation::Duplicate { f: 0, n: 1 }]);

        let mut oob = good.clone();
        oob.bins[0].f = 2;
        assert_eq!(oob.validate(), vec![Violation::OutOfBounds { f: 2, n: 1 }]);

        let mut range = good;
        range.bins[0].mask = vec![-0.5, 1.5];
        assert_eq!(range.validate().len(), 2);
    }

    #[test]
    fn json_layout_and_round_trip() {
        let ann = AnnotationSet {
            shape: (3, 4),
            num_sources: 2,
            bins: vec![
                AnnotatedBin { f: 0, n: 0, mask: vec![0.5, 0.5] },
                AnnotatedBin { f: 2, n: 3, mask: vec![0.1, 1.0 - 0.1] },
            ],
        };
        let text = ann.to_json();
        assert!(text.starts_with(
            "{\"shape\":[3,4],\"num_sources\":2,\"bins\":[[0,0,[5.0000000000000000e-1,5.0000000000000000e-1]]"
        ));
        let back = AnnotationSet::from_json(&text).unwrap();
        assert_eq!(back, ann);
        assert_eq!(back.to_json(), text);
        assert!(AnnotationSet::from_json("{\"shape\":[1]}").is_err());
    }
}
