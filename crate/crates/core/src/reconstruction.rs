//! From power-spectrogram estimates back to time-domain signals, plus the
//! lazy and oracle reference estimates.

use nalgebra::DMatrix;

use crate::annotation::TargetValues;
use crate::error::{check_shape, Error, Result};
use crate::estimates::SourceEstimates;
use crate::lownuc::project_in_place;
use crate::spectral::{istft, ComplexSpectrogram, MixtureSpectrogram};

/// Per-source masks that sum to one at every bin.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerMasks {
    pub masks: Vec<DMatrix<f64>>,
}

/// `V_g / sum_h V_h` entrywise; bins where every estimate is zero get `1/G`.
pub fn wiener_masks(est: &SourceEstimates) -> Result<WienerMasks> {
    if !est.is_nonnegative() {
        return Err(Error::InvalidInput(
            "wiener masks need nonnegative estimates".into(),
        ));
    }
    let total = est.total();
    let uniform = 1.0 / est.num_sources() as f64;
    let masks = est
        .matrices()
        .iter()
        .map(|m| m.zip_map(&total, |v, t| if t > 0.0 { v / t } else { uniform }))
        .collect();
    Ok(WienerMasks { masks })
}

/// Applies each mask to the mixture STFT and inverts.
pub fn synthesize_sources(masks: &WienerMasks, mixture_stft: &ComplexSpectrogram) -> Result<Vec<Vec<f64>>> {
    masks
        .masks
        .iter()
        .map(|m| istft(&mixture_stft.masked(m)?))
        .collect()
}

/// The uninformative split `V / G`, projected onto the annotation
/// constraints.
pub fn lazy_estimates(
    mixture: &MixtureSpectrogram,
    targets: &TargetValues,
    num_sources: usize,
) -> Result<SourceEstimates> {
    if num_sources == 0 {
        return Err(Error::InvalidInput("at least one source is required".into()));
    }
    check_shape(targets.shape, mixture.shape())?;
    let share = mixture.values() / num_sources as f64;
    let mut est = SourceEstimates::from_parts_unchecked(vec![share; num_sources]);
    project_in_place(&mut est, targets)?;
    Ok(est)
}

/// The true source spectrograms, used as the upper reference.
pub fn oracle_estimates(true_specs: &[MixtureSpectrogram]) -> Result<SourceEstimates> {
    SourceEstimates::new(true_specs.iter().map(|s| s.values().clone()).collect())
}
