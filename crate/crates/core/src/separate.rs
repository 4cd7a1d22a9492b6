//! One-shot separation of a mixture signal given annotations: the path shared
//! by the command line and the HTTP service.

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationSet;
use crate::error::{check_shape, Error, Result};
use crate::lownuc::{self, LownucConfig};
use crate::nmf::{self, NmfConfig};
use crate::reconstruction::{synthesize_sources, wiener_masks};
use crate::spectral::{power_spectrogram, stft, StftParams};
use crate::trace::{Solution, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Lownuc,
    Nmf,
}

impl SolverMethod {
    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Lownuc => "lownuc",
            SolverMethod::Nmf => "nmf",
        }
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lownuc" => Ok(SolverMethod::Lownuc),
            "nmf" => Ok(SolverMethod::Nmf),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

pub const DEFAULT_LOWNUC_LAMBDA: f64 = 0.1;
pub const DEFAULT_ALPHA0: f64 = 1.0;
pub const DEFAULT_NMF_LAMBDA: f64 = 1.0;
pub const DEFAULT_RANK: usize = 4;

/// Solver settings as given by a user. For `lownuc`, `lambda` is a multiple
/// of the mixture Frobenius norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparateRequest {
    pub method: SolverMethod,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub alpha0: Option<f64>,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub budget_seconds: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SeparateRequest {
    pub fn new(method: SolverMethod) -> Self {
        Self {
            method,
            lambda: None,
            alpha0: None,
            rank: None,
            budget_seconds: None,
            max_iters: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.budget_seconds {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidConfig(format!("budget_seconds {b} must be >= 0")));
            }
        }
        Ok(())
    }

    fn iteration_cap(&self, default: usize) -> usize {
        match (self.max_iters, self.budget_seconds) {
            (Some(k), _) => k,
            (None, Some(_)) => usize::MAX / 2,
            (None, None) => default,
        }
    }

    pub fn lownuc_config(&self, mixture_norm: f64) -> LownucConfig {
        let d = LownucConfig::default();
        LownucConfig {
            lambda: self.lambda.unwrap_or(DEFAULT_LOWNUC_LAMBDA) * mixture_norm,
            alpha0: self.alpha0.unwrap_or(DEFAULT_ALPHA0),
            max_iters: self.iteration_cap(d.max_iters),
            time_budget: self.budget_seconds,
            snapshot_every: 0,
        }
    }

    pub fn nmf_config(&self) -> NmfConfig {
        let d = NmfConfig::default();
        NmfConfig {
            lambda: self.lambda.unwrap_or(DEFAULT_NMF_LAMBDA),
            rank: self.rank.unwrap_or(DEFAULT_RANK),
            iters_per_start: self.iteration_cap(d.iters_per_start),
            seed: self.seed,
            time_budget: self.budget_seconds,
            ..d
        }
    }
}

pub struct Separation {
    /// Time-domain source estimates, each the length of the mixture.
    pub sources: Vec<Vec<f64>>,
    pub solution: Solution,
    /// Settings actually used, as JSON.
    pub settings: serde_json::Value,
}

pub fn separate(
    mixture: &[f64],
    params: &StftParams,
    annotations: &AnnotationSet,
    request: &SeparateRequest,
    on_record: &mut dyn FnMut(&TraceRecord),
) -> Result<Separation> {
    request.validate()?;
    let spec = stft(mixture, params)?;
    let power = power_spectrogram(&spec);
    check_shape(power.shape(), annotations.shape)?;
    let (solution, settings) = match request.method {
        SolverMethod::Lownuc => {
            let cfg = request.lownuc_config(power.frobenius_norm());
            let sol = lownuc::solve_with_progress(&power, annotations, &cfg, on_record)?;
            (sol, serde_json::to_value(cfg)?)
        }
        SolverMethod::Nmf => {
            let cfg = request.nmf_config();
            let sol = nmf::solve_nmf_with_progress(&power, annotations, &cfg, on_record)?;
            (sol, serde_json::to_value(cfg)?)
        }
    };
    let masks = wiener_masks(&solution.estimates)?;
    let sources = synthesize_sources(&masks, &spec)?;
    Ok(Separation {
        sources,
        solution,
        settings,
    })
}
