//! Comparison harness: lazy, NMF, nuclear-norm and oracle estimates on a set
//! of tracks, each solver run over a hyperparameter grid under a time budget,
//! keeping per track the grid point with the best final SDR.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{compute_targets, generate_annotations, AnnotationSet, MaskMode};
use crate::error::{Error, Result};
use crate::estimates::SourceEstimates;
use crate::lownuc::{self, LownucConfig, ALPHA0_GRID, LAMBDA_GRID};
use crate::metrics::{bss_eval, BssEval, SourceMetrics};
use crate::nmf::{self, NmfConfig, RANK_GRID};
use crate::reconstruction::{lazy_estimates, oracle_estimates, synthesize_sources, wiener_masks};
use crate::spectral::{power_spectrogram, stft, ComplexSpectrogram, MixtureSpectrogram, StftParams};
use crate::synth::{self, SyntheticSpec, Track};
use crate::trace::{Snapshot, Solution, SolveTrace};
use crate::wav;

pub const METRIC_VARIANT: &str = "zero-lag projection (time-invariant gain, no distortion filter)";
pub const ORACLE_VARIANT: &str = "wiener mask from true power spectrograms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackSpec {
    Synthetic(SyntheticSpec),
    /// Reference sources on disk; the mixture is their sum unless given.
    Wav {
        name: String,
        sources: Vec<PathBuf>,
        #[serde(default)]
        mixture: Option<PathBuf>,
    },
}

impl TrackSpec {
    pub fn name(&self) -> &str {
        match self {
            TrackSpec::Synthetic(s) => &s.name,
            TrackSpec::Wav { name, .. } => name,
        }
    }

    pub fn load(&self, sample_rate: u32) -> Result<Track> {
        match self {
            TrackSpec::Synthetic(s) => {
                let mut s = s.clone();
                s.sample_rate = sample_rate;
                Ok(synth::generate(&s))
            }
            TrackSpec::Wav {
                name,
                sources,
                mixture,
            } => {
                if sources.len() < 2 {
                    return Err(Error::InvalidInput(format!(
                        "track {name} needs at least two reference sources"
                    )));
                }
                let refs = sources
                    .iter()
                    .map(|p| wav::read_wav_resampled(p, sample_rate))
                    .collect::<Result<Vec<_>>>()?;
                let mut track = Track::from_sources(name.clone(), sample_rate, refs);
                if let Some(p) = mixture {
                    let mut mix = wav::read_wav_resampled(p, sample_rate)?;
                    mix.resize(track.mixture.len(), 0.0);
                    track.mixture = mix;
                }
                Ok(track)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lazy,
    Nmf,
    Lownuc,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lazy => "lazy",
            Method::Nmf => "nmf",
            Method::Lownuc => "lownuc",
            Method::Oracle => "oracle",
        }
    }

    pub const ALL: [Method; 4] = [Method::Lazy, Method::Nmf, Method::Lownuc, Method::Oracle];
}

fn default_fraction() -> f64 {
    0.4
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_lambda_grid() -> Vec<f64> {
    LAMBDA_GRID.to_vec()
}
fn default_alpha0_grid() -> Vec<f64> {
    ALPHA0_GRID.to_vec()
}
fn default_nmf_lambda_grid() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}
fn default_rank_grid() -> Vec<usize> {
    RANK_GRID.to_vec()
}
fn default_budget() -> f64 {
    180.0
}
fn default_iters() -> usize {
    1_000_000
}
fn default_starts() -> usize {
    3
}
fn default_snapshot_every() -> usize {
    5
}
fn default_nmf_snapshot_every() -> usize {
    100
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub tracks: Vec<TrackSpec>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub mask_mode: MaskMode,
    /// Annotation seed of the first track (later tracks add their index) and
    /// NMF initialization seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Nuclear-norm weights as multiples of the mixture Frobenius norm.
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_alpha0_grid")]
    pub alpha0_grid: Vec<f64>,
    /// Annotation penalty weights for NMF.
    #[serde(default = "default_nmf_lambda_grid")]
    pub nmf_lambda_grid: Vec<f64>,
    #[serde(default = "default_rank_grid")]
    pub rank_grid: Vec<usize>,
    /// Wall-clock budget of every solver run, in seconds.
    #[serde(default = "default_budget")]
    pub budget_seconds: f64,
    #[serde(default = "default_iters")]
    pub lownuc_max_iters: usize,
    #[serde(default = "default_iters")]
    pub nmf_iters_per_start: usize,
    #[serde(default = "default_starts")]
    pub nmf_starts: usize,
    /// Snapshot cadence in iterations for the nuclear-norm solver.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    /// Snapshot cadence in multiplicative-update sweeps for NMF.
    #[serde(default = "default_nmf_snapshot_every")]
    pub nmf_snapshot_every: usize,
    #[serde(default)]
    pub stft: StftParams,
    /// Run grid points concurrently.
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn new(tracks: Vec<TrackSpec>) -> Self {
        Self {
            tracks,
            fraction: default_fraction(),
            mask_mode: MaskMode::Soft,
            seed: 0,
            methods: default_methods(),
            lambda_grid: default_lambda_grid(),
            alpha0_grid: default_alpha0_grid(),
            nmf_lambda_grid: default_nmf_lambda_grid(),
            rank_grid: default_rank_grid(),
            budget_seconds: default_budget(),
            lownuc_max_iters: default_iters(),
            nmf_iters_per_start: default_iters(),
            nmf_starts: default_starts(),
            snapshot_every: default_snapshot_every(),
            nmf_snapshot_every: default_nmf_snapshot_every(),
            stft: StftParams::default(),
            parallel: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidConfig(format!("fraction {} outside [0, 1]", self.fraction)));
        }
        if !(self.budget_seconds > 0.0) {
            return Err(Error::InvalidConfig("budget_seconds must be > 0".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        if self.methods.contains(&Method::Lownuc)
            && (self.lambda_grid.is_empty() || self.alpha0_grid.is_empty())
        {
            return Err(Error::InvalidConfig("empty lownuc grid".into()));
        }
        if self.methods.contains(&Method::Nmf)
            && (self.nmf_lambda_grid.is_empty() || self.rank_grid.is_empty())
        {
            return Err(Error::InvalidConfig("empty nmf grid".into()));
        }
        self.stft.validate().map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub seconds: f64,
    pub sdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub track: String,
    pub lambda: Option<f64>,
    pub alpha0: Option<f64>,
    pub rank: Option<usize>,
    pub metrics: BssEval,
    pub mean: SourceMetrics,
    pub iterations: usize,
    pub seconds: f64,
    #[serde(skip)]
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub tracks: usize,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Every solver and reference run, grid points included.
    pub runs: Vec<RunResult>,
    /// Best grid point per track and method.
    pub selected: Vec<RunResult>,
    /// Averages of `selected` over tracks, one row per method.
    pub table: Vec<MethodSummary>,
    pub skipped_tracks: Vec<String>,
}

impl ExperimentReport {
    pub fn solver_runs(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| matches!(r.method, Method::Nmf | Method::Lownuc))
            .count()
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.table.iter().find(|s| s.method == method)
    }

    pub fn selected_run(&self, method: Method, track: &str) -> Option<&RunResult> {
        self.selected
            .iter()
            .find(|r| r.method == method && r.track == track)
    }

    pub fn format_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<8} {:>9} {:>9} {:>9}", "", "SDR", "SIR", "SAR").unwrap();
        for row in &self.table {
            writeln!(
                s,
                "{:<8} {:>9.4} {:>9.4} {:>9.4}",
                row.method.name(),
                row.sdr,
                row.sir,
                row.sar
            )
            .unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> Result<String> {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "track", "lambda", "alpha0", "K", "SDR", "SIR", "SAR"])?;
        for r in &self.selected {
            w.write_record([
                r.method.name().to_string(),
                r.track.clone(),
                fmt_opt(r.lambda),
                fmt_opt(r.alpha0),
                r.rank.map(|k| k.to_string()).unwrap_or_default(),
                format!("{:.4}", r.mean.sdr),
                format!("{:.4}", r.mean.sir),
                format!("{:.4}", r.mean.sar),
            ])?;
        }
        for row in &self.table {
            w.write_record([
                row.method.name().to_string(),
                "average".to_string(),
                String::new(),
                String::new(),
                String::new(),
                format!("{:.4}", row.sdr),
                format!("{:.4}", row.sir),
                format!("{:.4}", row.sar),
            ])?;
        }
        finish_csv(w)
    }

    pub fn curves_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "track", "seconds", "sdr"])?;
        for r in &self.selected {
            for p in &r.curve {
                w.write_record([
                    r.method.name().to_string(),
                    r.track.clone(),
                    format!("{:.6}", p.seconds),
                    format!("{:.4}", p.sdr),
                ])?;
            }
        }
        finish_csv(w)
    }

    pub fn metadata_json(&self) -> Result<String> {
        let selected: Vec<serde_json::Value> = self
            .selected
            .iter()
            .map(|r| {
                serde_json::json!({
                    "method": r.method,
                    "track": r.track,
                    "lambda": r.lambda,
                    "alpha0": r.alpha0,
                    "rank": r.rank,
                    "sdr": r.mean.sdr,
                    "iterations": r.iterations,
                })
            })
            .collect();
        let meta = serde_json::json!({
            "config": self.config,
            "fraction": self.config.fraction,
            "mask_mode": self.config.mask_mode,
            "seed": self.config.seed,
            "annotation_seeds": (0..self.config.tracks.len())
                .map(|i| annotation_seed(self.config.seed, i))
                .collect::<Vec<_>>(),
            "metric_variant": METRIC_VARIANT,
            "oracle_variant": ORACLE_VARIANT,
            "lambda_units": "lownuc lambda is relative to the mixture Frobenius norm",
            "solver_runs": self.solver_runs(),
            "selected": selected,
            "skipped_tracks": self.skipped_tracks,
            "version": env!("CARGO_PKG_VERSION"),
        });
        Ok(serde_json::to_string_pretty(&meta)?)
    }

    /// Writes `summary.csv`, `curves.csv` and `metadata.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv()?)?;
        std::fs::write(dir.join("curves.csv"), self.curves_csv()?)?;
        std::fs::write(dir.join("metadata.json"), self.metadata_json()?)?;
        Ok(())
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn annotation_seed(seed: u64, track_index: usize) -> u64 {
    seed.wrapping_add(track_index as u64)
}

/// Spectrograms, annotations and references for one track.
pub struct PreparedTrack {
    pub name: String,
    pub references: Vec<Vec<f64>>,
    pub mixture_stft: ComplexSpectrogram,
    pub mixture: MixtureSpectrogram,
    pub true_specs: Vec<MixtureSpectrogram>,
    pub annotations: AnnotationSet,
}

impl PreparedTrack {
    pub fn new(track: &Track, params: &StftParams, fraction: f64, seed: u64, mode: MaskMode) -> Result<Self> {
        let mixture_stft = stft(&track.mixture, params)?;
        let mixture = power_spectrogram(&mixture_stft);
        let true_specs = track
            .sources
            .iter()
            .map(|s| stft(s, params).map(|x| power_spectrogram(&x)))
            .collect::<Result<Vec<_>>>()?;
        let annotations = generate_annotations(&true_specs, fraction, seed, mode)?;
        Ok(Self {
            name: track.name.clone(),
            references: track.sources.clone(),
            mixture_stft,
            mixture,
            true_specs,
            annotations,
        })
    }

    pub fn score(&self, est: &SourceEstimates) -> Result<BssEval> {
        let masks = wiener_masks(est)?;
        let signals = synthesize_sources(&masks, &self.mixture_stft)?;
        bss_eval(&signals, &self.references)
    }
}

/// Average SDR of each snapshot after resynthesis.
///
/// Snapshots must carry the iteration and timestamp of a trace record.
/// Snapshots sharing a timestamp with an earlier one are dropped so that the
/// curve's time axis is strictly increasing.
pub fn sdr_over_time(
    trace: &SolveTrace,
    snapshots: &[Snapshot],
    references: &[Vec<f64>],
    mixture_stft: &ComplexSpectrogram,
) -> Result<Vec<CurvePoint>> {
    let stamps: HashMap<usize, f64> = trace.records.iter().map(|r| (r.iter, r.seconds)).collect();
    let mut curve: Vec<CurvePoint> = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        match stamps.get(&snap.iter) {
            Some(&s) if s == snap.seconds => {}
            _ => {
                return Err(Error::InvalidInput(format!(
                    "snapshot at iteration {} does not match the trace",
                    snap.iter
                )))
            }
        }
        if curve.last().is_some_and(|p| p.seconds >= snap.seconds) {
            continue;
        }
        let masks = wiener_masks(&snap.estimates())?;
        let signals = synthesize_sources(&masks, mixture_stft)?;
        let sdr = bss_eval(&signals, references)?.mean().sdr;
        curve.push(CurvePoint {
            seconds: snap.seconds,
            sdr,
        });
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy)]
enum GridPoint {
    Lownuc { lambda: f64, alpha0: f64 },
    Nmf { lambda: f64, rank: usize },
}

fn run_grid_point(track: &PreparedTrack, point: GridPoint, config: &ExperimentConfig) -> Result<RunResult> {
    let (method, lambda, alpha0, rank, solution): (Method, f64, Option<f64>, Option<usize>, Solution) = match point {
        GridPoint::Lownuc { lambda, alpha0 } => {
            let cfg = LownucConfig {
                lambda: lambda * track.mixture.frobenius_norm(),
                alpha0,
                max_iters: config.lownuc_max_iters,
                time_budget: Some(config.budget_seconds),
                snapshot_every: config.snapshot_every,
            };
            let sol = lownuc::solve(&track.mixture, &track.annotations, &cfg)?;
            (Method::Lownuc, lambda, Some(alpha0), None, sol)
        }
        GridPoint::Nmf { lambda, rank } => {
            let cfg = NmfConfig {
                lambda,
                rank,
                iters_per_start: config.nmf_iters_per_start,
                num_starts: config.nmf_starts,
                seed: config.seed,
                time_budget: Some(config.budget_seconds),
                update_exponent: 1.0,
                snapshot_every: config.nmf_snapshot_every,
            };
            let sol = nmf::solve_nmf(&track.mixture, &track.annotations, &cfg)?;
            (Method::Nmf, lambda, None, Some(rank), sol)
        }
    };
    let metrics = track.score(&solution.estimates)?;
    let curve = sdr_over_time(
        &solution.trace,
        &solution.snapshots,
        &track.references,
        &track.mixture_stft,
    )?;
    let last = solution.trace.last().copied();
    info!(
        "{} {} lambda={lambda} alpha0={alpha0:?} K={rank:?}: SDR {:.3} after {} iterations",
        method.name(),
        track.name,
        metrics.mean().sdr,
        last.map_or(0, |r| r.iter)
    );
    Ok(RunResult {
        method,
        track: track.name.clone(),
        lambda: Some(lambda),
        alpha0,
        rank,
        mean: metrics.mean(),
        metrics,
        iterations: solution.trace.records.len().saturating_sub(1),
        seconds: last.map_or(0.0, |r| r.seconds),
        curve,
    })
}

fn reference_run(track: &PreparedTrack, method: Method) -> Result<RunResult> {
    let est = match method {
        Method::Lazy => {
            let targets = compute_targets(&track.annotations, &track.mixture)?;
            lazy_estimates(&track.mixture, &targets, track.true_specs.len())?
        }
        Method::Oracle => oracle_estimates(&track.true_specs)?,
        _ => unreachable!("solver methods go through run_grid_point"),
    };
    let metrics = track.score(&est)?;
    Ok(RunResult {
        method,
        track: track.name.clone(),
        lambda: None,
        alpha0: None,
        rank: None,
        mean: metrics.mean(),
        metrics,
        iterations: 0,
        seconds: 0.0,
        curve: Vec::new(),
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut runs = Vec::new();
    let mut selected = Vec::new();
    let mut skipped = Vec::new();

    let mut grid = Vec::new();
    if config.methods.contains(&Method::Nmf) {
        for &lambda in &config.nmf_lambda_grid {
            for &rank in &config.rank_grid {
                grid.push(GridPoint::Nmf { lambda, rank });
            }
        }
    }
    if config.methods.contains(&Method::Lownuc) {
        for &lambda in &config.lambda_grid {
            for &alpha0 in &config.alpha0_grid {
                grid.push(GridPoint::Lownuc { lambda, alpha0 });
            }
        }
    }

    for (index, spec) in config.tracks.iter().enumerate() {
        let track = match spec.load(config.stft.sample_rate) {
            Ok(t) => t,
            Err(e) => {
                warn!("skipping track {}: {e}", spec.name());
                skipped.push(spec.name().to_string());
                continue;
            }
        };
        let prepared = PreparedTrack::new(
            &track,
            &config.stft,
            config.fraction,
            annotation_seed(config.seed, index),
            config.mask_mode,
        )?;

        let mut methods: Vec<Method> = config.methods.clone();
        methods.sort();
        methods.dedup();
        for &m in &methods {
            if matches!(m, Method::Lazy | Method::Oracle) {
                let r = reference_run(&prepared, m)?;
                runs.push(r.clone());
                selected.push(r);
            }
        }

        let results: Vec<Result<RunResult>> = if config.parallel {
            grid.par_iter()
                .map(|p| run_grid_point(&prepared, *p, config))
                .collect()
        } else {
            grid.iter()
                .map(|p| run_grid_point(&prepared, *p, config))
                .collect()
        };
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        for m in [Method::Nmf, Method::Lownuc] {
            // first grid point wins ties
            let best = results
                .iter()
                .filter(|r| r.method == m)
                .fold(None::<&RunResult>, |best, r| match best {
                    Some(b) if b.mean.sdr >= r.mean.sdr => Some(b),
                    _ => Some(r),
                });
            if let Some(b) = best {
                selected.push(b.clone());
            }
        }
        runs.extend(results);
    }

    selected.sort_by_key(|r| r.method);
    let mut table = Vec::new();
    for m in Method::ALL {
        let rows: Vec<&RunResult> = selected.iter().filter(|r| r.method == m).collect();
        if rows.is_empty() {
            continue;
        }
        let k = rows.len() as f64;
        table.push(MethodSummary {
            method: m,
            tracks: rows.len(),
            sdr: rows.iter().map(|r| r.mean.sdr).sum::<f64>() / k,
            sir: rows.iter().map(|r| r.mean.sir).sum::<f64>() / k,
            sar: rows.iter().map(|r| r.mean.sar).sum::<f64>() / k,
        });
    }

    Ok(ExperimentReport {
        config: config.clone(),
        runs,
        selected,
        table,
        skipped_tracks: skipped,
    })
}
