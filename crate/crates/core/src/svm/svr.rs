use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::kernel::{gram_matrix, KernelSpec};
use super::solver::{solve, DualProblem, SolverParams};
use super::standardize::Standardizer;
use super::svc::{check_c, BinaryFit};
use super::SvmError;
use crate::sampling::{SampleSet, TargetKind};

/// ε-SVR, `f(x) = Σ dual_coefs_i K(sv_i, z(x)) + bias` with `z` the
/// standardizing transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub support_vectors: Array2<f64>,
    pub support_indices: Vec<usize>,
    /// αᵢ − αᵢ* per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c: f64,
    pub epsilon: f64,
    pub standardizer: Standardizer,
    pub converged: bool,
    pub iterations: usize,
}

impl SvrModel {
    fn eval_standardized(&self, z: &[f64]) -> f64 {
        let mut f = self.bias;
        for (sv, coef) in self.support_vectors.rows().into_iter().zip(&self.dual_coefs) {
            f += coef * self.kernel.eval(sv.as_slice().expect("standard layout"), z);
        }
        f
    }

    pub fn predict(&self, spectrum: &[f64]) -> Result<f64, SvmError> {
        let z = self.standardizer.apply(spectrum)?;
        Ok(self.eval_standardized(&z))
    }

    pub fn predict_rows(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, SvmError> {
        let z = self.standardizer.apply_rows(x)?;
        Ok(z.rows()
            .into_iter()
            .map(|row| self.eval_standardized(row.as_slice().expect("standard layout")))
            .collect())
    }

    /// Fraction of training points meeting their KKT condition within `tol`.
    pub fn kkt_fraction(&self, x: ArrayView2<f64>, t: &[f64], tol: f64) -> f64 {
        let bound = 1e-12 * self.c.max(1.0);
        let pred = match self.predict_rows(x) {
            Ok(p) => p,
            Err(_) => return 0.0,
        };
        let ok = (0..t.len())
            .filter(|&i| {
                let beta = self
                    .support_indices
                    .iter()
                    .position(|&k| k == i)
                    .map_or(0.0, |k| self.dual_coefs[k]);
                let r = t[i] - pred[i];
                let eps = self.epsilon;
                if beta.abs() <= bound {
                    r.abs() <= eps + tol
                } else if beta >= self.c - bound {
                    r >= eps - tol
                } else if beta <= -self.c + bound {
                    r <= -eps + tol
                } else if beta > 0.0 {
                    (r - eps).abs() <= tol
                } else {
                    (r + eps).abs() <= tol
                }
            })
            .count();
        ok as f64 / t.len().max(1) as f64
    }
}

pub(crate) fn fit_svr_gram(gram: &Array2<f64>, t: &[f64], c: f64, epsilon: f64, params: &SolverParams) -> BinaryFit {
    let n = t.len();
    let problem = DualProblem {
        gram,
        y: (0..2 * n).map(|k| if k < n { 1.0 } else { -1.0 }).collect(),
        p: (0..2 * n)
            .map(|k| if k < n { epsilon - t[k] } else { epsilon + t[k - n] })
            .collect(),
        c,
    };
    let sol = solve(&problem, params);
    let beta: Vec<f64> = (0..n).map(|i| sol.alpha[i] - sol.alpha[i + n]).collect();
    let support: Vec<usize> = (0..n).filter(|&i| beta[i] != 0.0).collect();
    BinaryFit {
        coefs: support.iter().map(|&i| beta[i]).collect(),
        support,
        bias: -sol.rho,
        converged: sol.converged,
        iterations: sol.iterations,
    }
}

fn fit_standardized(
    z: ArrayView2<f64>,
    t: &[f64],
    kernel: &KernelSpec,
    c: f64,
    epsilon: f64,
    params: &SolverParams,
    standardizer: Standardizer,
) -> Result<SvrModel, SvmError> {
    let z = z.as_standard_layout();
    let fit = fit_svr_gram(&gram_matrix(kernel, z.view()), t, c, epsilon, params);
    Ok(SvrModel {
        support_vectors: z.select(Axis(0), &fit.support),
        support_indices: fit.support,
        dual_coefs: fit.coefs,
        bias: fit.bias,
        kernel: *kernel,
        c,
        epsilon,
        standardizer,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

pub(crate) fn check_inputs(
    x: ArrayView2<f64>,
    t: &[f64],
    kernel: &KernelSpec,
    c: f64,
    epsilon: f64,
) -> Result<(), SvmError> {
    if t.len() < 2 {
        return Err(SvmError::TooFewSamples(t.len()));
    }
    if x.nrows() != t.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.nrows(),
            found: t.len(),
        });
    }
    if x.iter().chain(t).any(|v| !v.is_finite()) {
        return Err(SvmError::NonFiniteInput);
    }
    check_c(c)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(SvmError::InvalidHyperparameter(format!("epsilon = {epsilon}")));
    }
    kernel.validate()
}

/// ε-SVR on the raw rows of `x` (identity standardizer).
pub fn smo_train_svr(
    x: ArrayView2<f64>,
    t: &[f64],
    kernel: &KernelSpec,
    c: f64,
    epsilon: f64,
    params: &SolverParams,
) -> Result<SvrModel, SvmError> {
    check_inputs(x, t, kernel, c, epsilon)?;
    fit_standardized(x, t, kernel, c, epsilon, params, Standardizer::identity(x.ncols()))
}

pub(crate) fn fit_svr(
    x: ArrayView2<f64>,
    t: &[f64],
    kernel: &KernelSpec,
    c: f64,
    epsilon: f64,
    params: &SolverParams,
) -> Result<SvrModel, SvmError> {
    check_inputs(x, t, kernel, c, epsilon)?;
    let standardizer = Standardizer::fit(x)?;
    let z = standardizer.apply_rows(x)?;
    fit_standardized(z.view(), t, kernel, c, epsilon, params, standardizer)
}

pub(crate) fn targets_of(set: &SampleSet, target: TargetKind) -> Result<Vec<f64>, SvmError> {
    set.samples()
        .iter()
        .enumerate()
        .map(|(index, s)| {
            s.targets.get(target).ok_or(SvmError::MissingTarget {
                index,
                target: target.name(),
            })
        })
        .collect()
}

/// Standardizes `train` and fits one ε-SVR for `target`.
pub fn train_svr(
    train: &SampleSet,
    target: TargetKind,
    kernel: &KernelSpec,
    c: f64,
    epsilon: f64,
    params: &SolverParams,
) -> Result<SvrModel, SvmError> {
    let t = targets_of(train, target)?;
    fit_svr(train.spectra().view(), &t, kernel, c, epsilon, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn r2(truth: &[f64], pred: &[f64]) -> f64 {
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let ss_res: f64 = truth.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
        let ss_tot: f64 = truth.iter().map(|a| (a - mean) * (a - mean)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn linear_target_recovered() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64 / 19.0 * 4.0 - 2.0);
        let t: Vec<f64> = x.column(0).iter().map(|v| 2.0 * v).collect();
        let m = smo_train_svr(x.view(), &t, &KernelSpec::Linear, 100.0, 0.01, &SolverParams::default()).unwrap();
        assert!(m.converged);
        let held = Array2::from_shape_fn((15, 1), |(i, _)| -1.9 + i as f64 * 0.27);
        let truth: Vec<f64> = held.column(0).iter().map(|v| 2.0 * v).collect();
        let pred = m.predict_rows(held.view()).unwrap();
        assert!(r2(&truth, &pred) >= 0.999);
        assert!(m.dual_coefs.iter().sum::<f64>().abs() < 1e-6);
        assert!(m.dual_coefs.iter().all(|b| b.abs() <= 100.0));
    }

    #[test]
    fn constant_target_stays_in_tube() {
        let mut rng = crate::rng::seeded(8);
        let x = Array2::from_shape_fn((25, 3), |_| rng.random_range(-1.0..1.0));
        let t = vec![5.0; 25];
        for kernel in [KernelSpec::Linear, KernelSpec::Rbf { gamma: 0.7 }] {
            let m = smo_train_svr(x.view(), &t, &kernel, 10.0, 0.1, &SolverParams::default()).unwrap();
            for p in m.predict_rows(x.view()).unwrap() {
                assert!((p - 5.0).abs() <= 0.1 + 1e-9);
            }
        }
    }

    #[test]
    fn kkt_and_feasibility_on_noisy_data() {
        let mut rng = crate::rng::seeded(21);
        let x = Array2::from_shape_fn((50, 2), |_| rng.random_range(-2.0..2.0));
        let t: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|r| (r[0] * 1.5f64).sin() + 0.3 * r[1] + rng.random_range(-0.2..0.2))
            .collect();
        for (kernel, c, eps) in [
            (KernelSpec::Rbf { gamma: 0.5 }, 5.0, 0.05),
            (KernelSpec::Linear, 1.0, 0.1),
        ] {
            let m = fit_svr(x.view(), &t, &kernel, c, eps, &SolverParams::default()).unwrap();
            assert!(m.converged);
            assert!(m.dual_coefs.iter().all(|b| b.abs() <= c + 1e-12));
            assert!(m.dual_coefs.iter().sum::<f64>().abs() < 1e-6);
            assert!(m.kkt_fraction(x.view(), &t, 1e-3) >= 0.99);
        }
    }

    #[test]
    fn single_sample_rejected() {
        let x = Array2::from_elem((1, 2), 0.5);
        let err = smo_train_svr(
            x.view(),
            &[1.0],
            &KernelSpec::Linear,
            1.0,
            0.1,
            &SolverParams::default(),
        );
        assert_eq!(err.unwrap_err(), SvmError::TooFewSamples(1));
    }
}
