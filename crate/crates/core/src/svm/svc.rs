use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{gram_matrix, KernelSpec};
use super::solver::{solve, DualProblem, SolverParams};
use super::standardize::Standardizer;
use super::SvmError;
use crate::sampling::SampleSet;

/// Two-class kernel machine, `f(x) = Σ dual_coefs_i K(sv_i, x) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvc {
    pub support_vectors: Array2<f64>,
    /// Row of each support vector in the training matrix.
    pub support_indices: Vec<usize>,
    /// αᵢyᵢ per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BinarySvc {
    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut f = self.bias;
        for (sv, coef) in self.support_vectors.rows().into_iter().zip(&self.dual_coefs) {
            f += coef * self.kernel.eval(sv.as_slice().expect("standard layout"), x);
        }
        f
    }

    /// Fraction of training points meeting their KKT condition within `tol`.
    pub fn kkt_fraction(&self, x: ArrayView2<f64>, y: &[f64], tol: f64) -> f64 {
        let mut alpha = vec![0.0; y.len()];
        for (&i, coef) in self.support_indices.iter().zip(&self.dual_coefs) {
            alpha[i] = coef.abs();
        }
        let bound = 1e-12 * self.c.max(1.0);
        let ok = x
            .rows()
            .into_iter()
            .zip(y)
            .zip(&alpha)
            .filter(|((row, &yi), &a)| {
                let margin = yi * self.decision(&row.to_vec());
                if a <= bound {
                    margin >= 1.0 - tol
                } else if a >= self.c - bound {
                    margin <= 1.0 + tol
                } else {
                    (margin - 1.0).abs() <= tol
                }
            })
            .count();
        ok as f64 / y.len().max(1) as f64
    }
}

fn check_rows(x: ArrayView2<f64>) -> Result<(), SvmError> {
    if x.nrows() == 0 {
        return Err(SvmError::EmptyTrainingSet);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SvmError::NonFiniteInput);
    }
    Ok(())
}

pub(crate) fn check_c(c: f64) -> Result<(), SvmError> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(SvmError::InvalidHyperparameter(format!("c = {c}")))
    }
}

/// Binary solution with support vectors as row indices of its Gram matrix.
#[derive(Debug, Clone)]
pub(crate) struct BinaryFit {
    pub support: Vec<usize>,
    pub coefs: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn check_labels(y: &[f64]) -> Result<(), SvmError> {
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClassInput);
    }
    Ok(())
}

pub(crate) fn fit_binary_gram(
    gram: &Array2<f64>,
    y: &[f64],
    c: f64,
    params: &SolverParams,
) -> Result<BinaryFit, SvmError> {
    check_labels(y)?;
    let problem = DualProblem {
        gram,
        y: y.to_vec(),
        p: vec![-1.0; y.len()],
        c,
    };
    let sol = solve(&problem, params);
    let support: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(BinaryFit {
        coefs: support.iter().map(|&i| sol.alpha[i] * y[i]).collect(),
        support,
        bias: -sol.rho,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

/// Trains a binary C-SVC on rows of `x` with labels ±1.
pub fn smo_train_binary(
    x: ArrayView2<f64>,
    y: &[f64],
    kernel: &KernelSpec,
    c: f64,
    params: &SolverParams,
) -> Result<BinarySvc, SvmError> {
    check_rows(x)?;
    if y.len() != x.nrows() {
        return Err(SvmError::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    check_labels(y)?;
    check_c(c)?;
    kernel.validate()?;

    let x = x.as_standard_layout();
    let fit = fit_binary_gram(&gram_matrix(kernel, x.view()), y, c, params)?;
    Ok(BinarySvc {
        support_vectors: x.select(Axis(0), &fit.support),
        support_indices: fit.support,
        dual_coefs: fit.coefs,
        bias: fit.bias,
        kernel: *kernel,
        c,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

/// Machine for the class pair (`positive`, `negative`), indices into
/// [`SvcModel::classes`]; positive decisions vote for `positive`.
/// `support` indexes rows of [`SvcModel::support_vectors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    pub positive: usize,
    pub negative: usize,
    pub support: Vec<usize>,
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// One-vs-one model. Support vectors (standardized) are stored once and
/// shared by all pair machines, so prediction evaluates each kernel row
/// a single time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcModel {
    pub classes: Vec<String>,
    pub kernel: KernelSpec,
    pub c: f64,
    pub standardizer: Standardizer,
    pub support_vectors: Array2<f64>,
    /// Training row of each pooled support vector.
    pub support_rows: Vec<usize>,
    pub machines: Vec<PairMachine>,
}

impl SvcModel {
    pub fn bands(&self) -> usize {
        self.standardizer.bands()
    }

    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    /// Machine `k` as a standalone [`BinarySvc`] in standardized space;
    /// `support_indices` are training rows.
    pub fn binary(&self, k: usize) -> BinarySvc {
        let m = &self.machines[k];
        BinarySvc {
            support_vectors: self.support_vectors.select(Axis(0), &m.support),
            support_indices: m.support.iter().map(|&p| self.support_rows[p]).collect(),
            dual_coefs: m.dual_coefs.clone(),
            bias: m.bias,
            kernel: self.kernel,
            c: self.c,
            converged: m.converged,
            iterations: m.iterations,
        }
    }

    fn decisions_from_row(&self, krow: &[f64]) -> Vec<f64> {
        self.machines
            .iter()
            .map(|m| {
                m.bias
                    + m.support
                        .iter()
                        .zip(&m.dual_coefs)
                        .map(|(&p, a)| a * krow[p])
                        .sum::<f64>()
            })
            .collect()
    }

    fn vote_row(&self, krow: &[f64]) -> usize {
        let pairs: Vec<(usize, usize)> = self.machines.iter().map(|m| (m.positive, m.negative)).collect();
        vote(self.classes.len(), &pairs, &self.decisions_from_row(krow))
    }

    /// Pairwise decision values for an already standardized spectrum.
    pub fn decisions(&self, z: &[f64]) -> Vec<f64> {
        let krow: Vec<f64> = self
            .support_vectors
            .rows()
            .into_iter()
            .map(|sv| self.kernel.eval(sv.as_slice().expect("standard layout"), z))
            .collect();
        self.decisions_from_row(&krow)
    }

    pub fn predict(&self, spectrum: &[f64]) -> Result<&str, SvmError> {
        let z = self.standardizer.apply(spectrum)?;
        let pairs: Vec<(usize, usize)> = self.machines.iter().map(|m| (m.positive, m.negative)).collect();
        Ok(&self.classes[vote(self.classes.len(), &pairs, &self.decisions(&z))])
    }

    /// Predicts every row; output order follows the rows.
    pub fn predict_rows(&self, x: ArrayView2<f64>) -> Result<Vec<&str>, SvmError> {
        let z = self.standardizer.apply_rows(x)?;
        let idx: Vec<usize> = (0..z.nrows())
            .into_par_iter()
            .map(|i| {
                let zi = z.row(i);
                let zi = zi.as_slice().expect("standard layout");
                let krow: Vec<f64> = self
                    .support_vectors
                    .rows()
                    .into_iter()
                    .map(|sv| self.kernel.eval(sv.as_slice().expect("standard layout"), zi))
                    .collect();
                self.vote_row(&krow)
            })
            .collect();
        Ok(idx.into_iter().map(|i| self.classes[i].as_str()).collect())
    }
}

/// One-vs-one majority vote. Ties go to the class with the largest summed
/// |decision| over the votes it won, then to the lowest class index.
pub fn vote(n_classes: usize, pairs: &[(usize, usize)], decisions: &[f64]) -> usize {
    let mut votes = vec![0usize; n_classes];
    let mut strength = vec![0.0f64; n_classes];
    for (&(pos, neg), &d) in pairs.iter().zip(decisions) {
        let winner = if d > 0.0 { pos } else { neg };
        votes[winner] += 1;
        strength[winner] += d.abs();
    }
    let mut best = 0;
    for k in 1..n_classes {
        if votes[k] > votes[best] || (votes[k] == votes[best] && strength[k] > strength[best]) {
            best = k;
        }
    }
    best
}

/// Pair machines trained from a precomputed kernel matrix over all rows;
/// supports are row indices of `gram`.
pub(crate) struct PairFits {
    pub pairs: Vec<(usize, usize, BinaryFit)>,
}

impl PairFits {
    pub fn train(
        gram: &Array2<f64>,
        labels: &[usize],
        classes: &[String],
        c: f64,
        params: &SolverParams,
    ) -> Result<Self, SvmError> {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        let pairs: Vec<(usize, usize)> = (0..classes.len())
            .flat_map(|a| (a + 1..classes.len()).map(move |b| (a, b)))
            .collect();
        let pairs = pairs
            .par_iter()
            .map(|&(a, b)| {
                let rows: Vec<usize> = members[a].iter().chain(&members[b]).copied().collect();
                let y: Vec<f64> = members[a]
                    .iter()
                    .map(|_| 1.0)
                    .chain(members[b].iter().map(|_| -1.0))
                    .collect();
                let sub = Array2::from_shape_fn((rows.len(), rows.len()), |(i, j)| gram[[rows[i], rows[j]]]);
                fit_binary_gram(&sub, &y, c, params)
                    .map(|mut fit| {
                        for s in fit.support.iter_mut() {
                            *s = rows[*s];
                        }
                        (a, b, fit)
                    })
                    .map_err(|e| SvmError::Pair {
                        positive: classes[a].clone(),
                        negative: classes[b].clone(),
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { pairs })
    }

    /// Class index per row of `cross`, where `cross[i][j] = K(eval_i, train_j)`.
    pub fn predict_cross(&self, cross: &Array2<f64>, n_classes: usize) -> Vec<usize> {
        let pairs: Vec<(usize, usize)> = self.pairs.iter().map(|(a, b, _)| (*a, *b)).collect();
        cross
            .rows()
            .into_iter()
            .map(|row| {
                let decisions: Vec<f64> = self
                    .pairs
                    .iter()
                    .map(|(_, _, f)| f.bias + f.support.iter().zip(&f.coefs).map(|(&s, a)| a * row[s]).sum::<f64>())
                    .collect();
                vote(n_classes, &pairs, &decisions)
            })
            .collect()
    }
}

pub(crate) fn fit_svc(
    x: ArrayView2<f64>,
    labels: &[usize],
    classes: Vec<String>,
    kernel: &KernelSpec,
    c: f64,
    params: &SolverParams,
) -> Result<SvcModel, SvmError> {
    if classes.len() < 2 {
        return Err(SvmError::TooFewClasses(classes.len()));
    }
    check_rows(x)?;
    check_c(c)?;
    kernel.validate()?;
    let standardizer = Standardizer::fit(x)?;
    let z = standardizer.apply_rows(x)?;
    let gram = gram_matrix(kernel, z.view());
    let fits = PairFits::train(&gram, labels, &classes, c, params)?;

    let mut support_rows: Vec<usize> = fits
        .pairs
        .iter()
        .flat_map(|(_, _, f)| f.support.iter().copied())
        .collect();
    support_rows.sort_unstable();
    support_rows.dedup();
    let pool_index: BTreeMap<usize, usize> = support_rows.iter().enumerate().map(|(p, &r)| (r, p)).collect();
    let machines = fits
        .pairs
        .into_iter()
        .map(|(positive, negative, f)| PairMachine {
            positive,
            negative,
            support: f.support.iter().map(|r| pool_index[r]).collect(),
            dual_coefs: f.coefs,
            bias: f.bias,
            converged: f.converged,
            iterations: f.iterations,
        })
        .collect();
    Ok(SvcModel {
        classes,
        kernel: *kernel,
        c,
        standardizer,
        support_vectors: z.select(Axis(0), &support_rows),
        support_rows,
        machines,
    })
}

/// Class ids in sorted order and each sample's index into them.
pub(crate) fn encode_labels(set: &SampleSet) -> Result<(Vec<String>, Vec<usize>), SvmError> {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, label) in set.labels().into_iter().enumerate() {
        ids.insert(label.ok_or(SvmError::MissingLabel(i))?, 0);
    }
    for (k, v) in ids.values_mut().enumerate() {
        *v = k;
    }
    let labels = set.labels().into_iter().map(|l| ids[l.expect("checked")]).collect();
    Ok((ids.keys().map(|s| s.to_string()).collect(), labels))
}

/// One-vs-one multiclass SVC over the labeled samples of `train`.
pub fn train_svc(train: &SampleSet, kernel: &KernelSpec, c: f64, params: &SolverParams) -> Result<SvcModel, SvmError> {
    if train.is_empty() {
        return Err(SvmError::EmptyTrainingSet);
    }
    let (classes, labels) = encode_labels(train)?;
    fit_svc(train.spectra().view(), &labels, classes, kernel, c, params)
}

pub fn predict_svc<'m>(model: &'m SvcModel, spectrum: &[f64]) -> Result<&'m str, SvmError> {
    model.predict(spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{SampleMeta, SpectralSample, Targets};
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn tight() -> SolverParams {
        SolverParams {
            tol: 1e-6,
            ..SolverParams::default()
        }
    }

    #[test]
    fn two_points_midpoint_boundary() {
        let x = array![[-1.0], [1.0]];
        let m = smo_train_binary(
            x.view(),
            &[-1.0, 1.0],
            &KernelSpec::Linear,
            10.0,
            &SolverParams::default(),
        )
        .unwrap();
        assert!(m.decision(&[-1.0]) < 0.0 && m.decision(&[1.0]) > 0.0);
        // boundary where f = 0
        let w = m.decision(&[1.0]) - m.decision(&[0.0]);
        let root = -m.decision(&[0.0]) / w;
        assert!(root.abs() < 1e-2, "{root}");
        assert!(m.dual_coefs.iter().sum::<f64>().abs() < 1e-6);
    }

    #[test]
    fn xor_separated_by_rbf() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [-1.0, -1.0, 1.0, 1.0];
        let m = smo_train_binary(
            x.view(),
            &y,
            &KernelSpec::Rbf { gamma: 1.0 },
            10.0,
            &SolverParams::default(),
        )
        .unwrap();
        for (row, &yi) in x.rows().into_iter().zip(&y) {
            assert!(yi * m.decision(&row.to_vec()) > 0.0);
        }
        assert!(m.converged);
        assert_eq!(m.kkt_fraction(x.view(), &y, 1e-3), 1.0);
    }

    #[test]
    fn single_class_rejected() {
        let x = array![[0.0], [1.0]];
        let err = smo_train_binary(
            x.view(),
            &[1.0, 1.0],
            &KernelSpec::Linear,
            1.0,
            &SolverParams::default(),
        );
        assert_eq!(err.unwrap_err(), SvmError::SingleClassInput);
        let err = smo_train_binary(
            x.view(),
            &[1.0, 0.0],
            &KernelSpec::Linear,
            1.0,
            &SolverParams::default(),
        );
        assert_eq!(err.unwrap_err(), SvmError::InvalidLabel(0.0));
    }

    fn noisy_blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = crate::rng::seeded(seed);
        let noise = Normal::new(0.0, 0.8).unwrap();
        let mut x = Array2::zeros((n, 3));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            for j in 0..3 {
                x[[i, j]] = label * 0.7 + noise.sample(&mut rng);
            }
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn dual_feasibility_and_kkt_on_overlapping_data() {
        for (seed, kernel, c) in [
            (1, KernelSpec::Linear, 0.5),
            (2, KernelSpec::Rbf { gamma: 0.5 }, 1.0),
            (3, KernelSpec::Rbf { gamma: 2.0 }, 100.0),
        ] {
            let (x, y) = noisy_blobs(60, seed);
            let m = smo_train_binary(x.view(), &y, &kernel, c, &SolverParams::default()).unwrap();
            assert!(m.converged);
            assert!(m.dual_coefs.iter().all(|a| a.abs() <= c + 1e-12));
            assert!(m.dual_coefs.iter().sum::<f64>().abs() < 1e-6);
            assert!(m.kkt_fraction(x.view(), &y, 1e-3) >= 0.99);
        }
    }

    #[test]
    fn flipping_labels_negates_decisions() {
        let (x, y) = noisy_blobs(40, 9);
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        let kernel = KernelSpec::Rbf { gamma: 0.3 };
        let a = smo_train_binary(x.view(), &y, &kernel, 2.0, &tight()).unwrap();
        let b = smo_train_binary(x.view(), &flipped, &kernel, 2.0, &tight()).unwrap();
        let mut rng = crate::rng::seeded(4);
        for _ in 0..20 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!((a.decision(&p) + b.decision(&p)).abs() < 1e-4);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = noisy_blobs(50, 5);
        let kernel = KernelSpec::Rbf { gamma: 1.0 };
        let a = smo_train_binary(x.view(), &y, &kernel, 1.0, &SolverParams::default()).unwrap();
        let b = smo_train_binary(x.view(), &y, &kernel, 1.0, &SolverParams::default()).unwrap();
        assert_eq!(a.support_indices, b.support_indices);
        assert_eq!(a, b);
    }

    fn class_set(n_classes: usize, per_class: usize) -> SampleSet {
        let mut samples = Vec::new();
        for c in 0..n_classes {
            for i in 0..per_class {
                samples.push(SpectralSample {
                    spectrum: vec![c as f64 * 3.0 + i as f64 * 0.01, (c % 3) as f64, 1.0 - c as f64 * 0.1],
                    label: Some(format!("k{c:02}")),
                    targets: Targets::default(),
                    provenance: None,
                });
            }
        }
        SampleSet::new(samples, SampleMeta::default())
    }

    #[test]
    fn pair_counts() {
        let params = SolverParams::default();
        let kernel = KernelSpec::Rbf { gamma: 0.5 };
        let m = train_svc(&class_set(3, 4), &kernel, 10.0, &params).unwrap();
        assert_eq!(m.machines.len(), 3);
        let set = class_set(35, 2);
        let m = train_svc(&set, &kernel, 10.0, &params).unwrap();
        assert_eq!(m.machines.len(), 595);
        for s in set.samples() {
            assert_eq!(predict_svc(&m, &s.spectrum).unwrap(), s.label.as_deref().unwrap());
        }
        assert!(matches!(
            train_svc(&class_set(1, 4), &kernel, 10.0, &params),
            Err(SvmError::TooFewClasses(1))
        ));
        assert!(matches!(
            predict_svc(&m, &[1.0]),
            Err(SvmError::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn pooled_machines_match_standalone_training() {
        let set = class_set(4, 5);
        let kernel = KernelSpec::Rbf { gamma: 0.5 };
        let params = SolverParams::default();
        let model = train_svc(&set, &kernel, 3.0, &params).unwrap();
        let z = model.standardizer.apply_rows(set.spectra().view()).unwrap();
        let (_, labels) = encode_labels(&set).unwrap();
        for (k, m) in model.machines.iter().enumerate() {
            let rows: Vec<usize> = (0..set.len())
                .filter(|&i| labels[i] == m.positive || labels[i] == m.negative)
                .collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|&i| if labels[i] == m.positive { 1.0 } else { -1.0 })
                .collect();
            let sub = z.select(Axis(0), &rows);
            let alone = smo_train_binary(sub.view(), &y, &kernel, 3.0, &params).unwrap();
            let pooled = model.binary(k);
            let local: Vec<usize> = alone.support_indices.iter().map(|&i| rows[i]).collect();
            assert_eq!(pooled.support_indices, local);
            assert_eq!(pooled.dual_coefs, alone.dual_coefs);
            for row in sub.rows() {
                assert!((pooled.decision(&row.to_vec()) - alone.decision(&row.to_vec())).abs() < 1e-12);
            }
        }
        let again = train_svc(&set, &kernel, 3.0, &params).unwrap();
        assert_eq!(again.support_rows, model.support_rows);
    }

    #[test]
    fn vote_rules() {
        // single pair: positive decision wins
        assert_eq!(vote(2, &[(0, 1)], &[0.3]), 0);
        assert_eq!(vote(2, &[(0, 1)], &[-0.3]), 1);
        // three-way cycle: one vote each, strength decides
        let pairs = [(0, 1), (0, 2), (1, 2)];
        assert_eq!(vote(3, &pairs, &[0.5, -0.9, 0.2]), 2);
        // full tie falls back to class order
        assert_eq!(vote(3, &pairs, &[0.5, -0.5, 0.5]), 0);
    }

    #[test]
    fn vote_depends_on_signs_when_untied() {
        let mut rng = crate::rng::seeded(12);
        let n = 6;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        for _ in 0..200 {
            let d: Vec<f64> = pairs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut votes = vec![0; n];
            for (&(p, q), &v) in pairs.iter().zip(&d) {
                votes[if v > 0.0 { p } else { q }] += 1;
            }
            let top = *votes.iter().max().unwrap();
            if votes.iter().filter(|&&v| v == top).count() > 1 {
                continue;
            }
            let rescaled: Vec<f64> = d.iter().map(|v| v.signum() * rng.random_range(0.01..5.0)).collect();
            assert_eq!(vote(n, &pairs, &d), vote(n, &pairs, &rescaled));
        }
    }
}
