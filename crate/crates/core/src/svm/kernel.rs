use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::SvmError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf { gamma: 1.0 }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), SvmError> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(SvmError::InvalidHyperparameter(format!("gamma = {gamma}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Linear => None,
            KernelSpec::Rbf { gamma } => Some(gamma),
        }
    }
}

/// Symmetric kernel matrix of the rows of `x`.
pub fn gram_matrix(kernel: &KernelSpec, x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let rows: Vec<&[f64]> = x
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("contiguous rows"))
        .collect();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(rows[i], rows[j]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Kernel-independent pairwise quantities between two row sets: dot
/// products for the linear kernel, squared distances for RBF. Lets one
/// matrix serve every γ in a grid.
#[derive(Debug, Clone)]
pub(crate) enum KernelBasis {
    Dots(Array2<f64>),
    SqDists(Array2<f64>),
}

impl KernelBasis {
    pub fn new(kernel: &KernelSpec, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Self {
        let rows = |x: ArrayView2<'_, f64>| -> Vec<Vec<f64>> { x.rows().into_iter().map(|r| r.to_vec()).collect() };
        let (ra, rb) = (rows(a), rows(b));
        let mut m = Array2::zeros((ra.len(), rb.len()));
        match kernel {
            KernelSpec::Linear => {
                for (i, x) in ra.iter().enumerate() {
                    for (j, y) in rb.iter().enumerate() {
                        m[[i, j]] = x.iter().zip(y).map(|(p, q)| p * q).sum();
                    }
                }
                KernelBasis::Dots(m)
            }
            KernelSpec::Rbf { .. } => {
                for (i, x) in ra.iter().enumerate() {
                    for (j, y) in rb.iter().enumerate() {
                        m[[i, j]] = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                    }
                }
                KernelBasis::SqDists(m)
            }
        }
    }

    pub fn kernel(&self, kernel: &KernelSpec) -> Array2<f64> {
        match (self, kernel) {
            (KernelBasis::Dots(m), KernelSpec::Linear) => m.clone(),
            (KernelBasis::SqDists(m), KernelSpec::Rbf { gamma }) => m.mapv(|d| (-gamma * d).exp()),
            _ => panic!("kernel basis does not match {kernel:?}"),
        }
    }
}
