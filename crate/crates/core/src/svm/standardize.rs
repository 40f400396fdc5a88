use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::SvmError;

pub const STD_FLOOR: f64 = 1e-12;

/// Per-band z-score transform fitted on training spectra (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self, SvmError> {
        if x.nrows() == 0 {
            return Err(SvmError::EmptyTrainingSet);
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.var_axis(Axis(0), 0.0).mapv(|v| v.sqrt().max(STD_FLOOR));
        Ok(Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    /// Pass-through transform for `bands` features.
    pub fn identity(bands: usize) -> Self {
        Self {
            mean: vec![0.0; bands],
            std: vec![1.0; bands],
        }
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, spectrum: &[f64]) -> Result<Vec<f64>, SvmError> {
        if spectrum.len() != self.bands() {
            return Err(SvmError::DimensionMismatch {
                expected: self.bands(),
                found: spectrum.len(),
            });
        }
        Ok(spectrum
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn apply_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, SvmError> {
        if x.ncols() != self.bands() {
            return Err(SvmError::DimensionMismatch {
                expected: self.bands(),
                found: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}
