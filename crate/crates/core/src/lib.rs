//! Informed single-channel source separation.
//!
//! A mixture power spectrogram is split into per-source spectrograms given a
//! set of annotated time-frequency bins whose per-source values are known.
//! Two solvers are provided:
//!
//! - [`lownuc`]: a convex formulation with a Frobenius data term and one
//!   nuclear-norm penalty per source, solved by projected subgradient steps.
//!   Annotations are enforced exactly.
//! - [`nmf`]: penalized Itakura-Saito NMF with multiplicative updates and
//!   random restarts, where annotations enter as a penalty.
//!
//! Around them sit the STFT pipeline ([`spectral`], [`wav`]), annotation
//! handling ([`annotation`]), Wiener-mask resynthesis ([`reconstruction`]),
//! SDR/SIR/SAR scoring ([`metrics`]) and the comparison harness
//! ([`experiment`]). The [`service`] module serves the same operations over
//! HTTP for the browser annotation tool.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod annotation;
pub mod cli;
pub mod error;
pub mod estimates;
pub mod experiment;
pub mod lownuc;
pub mod metrics;
pub mod nmf;
pub mod reconstruction;
pub mod separate;
pub mod service;
pub mod spectral;
pub mod synth;
pub mod trace;
pub mod wav;

pub use annotation::{AnnotationSet, MaskMode, TargetValues};
pub use error::{Error, Result};
pub use estimates::SourceEstimates;
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use lownuc::LownucConfig;
pub use nmf::NmfConfig;
pub use separate::{SeparateRequest, SolverMethod};
pub use spectral::{ComplexSpectrogram, MixtureSpectrogram, StftParams};
pub use trace::{Solution, SolveTrace};
