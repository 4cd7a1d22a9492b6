use nalgebra::DMatrix;

use crate::error::{check_shape, Error, Result};

/// One nonnegative `F x N` spectrogram estimate per source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEstimates {
    matrices: Vec<DMatrix<f64>>,
}

impl SourceEstimates {
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidInput("at least one source is required".into()))?;
        let shape = first.shape();
        for m in &matrices {
            check_shape(shape, m.shape())?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("estimates must be finite".into()));
            }
        }
        Ok(Self { matrices })
    }

    pub(crate) fn from_parts_unchecked(matrices: Vec<DMatrix<f64>>) -> Self {
        Self { matrices }
    }

    pub fn num_sources(&self) -> usize {
        self.matrices.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrices[0].shape()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn matrices_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.matrices
    }

    pub fn into_matrices(self) -> Vec<DMatrix<f64>> {
        self.matrices
    }

    pub fn source(&self, g: usize) -> &DMatrix<f64> {
        &self.matrices[g]
    }

    /// Entrywise sum over sources.
    pub fn total(&self) -> DMatrix<f64> {
        let mut sum = self.matrices[0].clone();
        for m in &self.matrices[1..] {
            sum += m;
        }
        sum
    }

    pub fn is_nonnegative(&self) -> bool {
        self.matrices.iter().all(|m| m.iter().all(|v| *v >= 0.0))
    }
}
