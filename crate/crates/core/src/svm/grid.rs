use std::collections::BTreeMap;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelBasis, KernelSpec};
use super::solver::SolverParams;
use super::standardize::Standardizer;
use super::svc::{encode_labels, PairFits};
use super::svr::{fit_svr_gram, targets_of};
use super::SvmError;
use crate::rng::{derive_seed, seeded};
use crate::sampling::{SampleSet, TargetKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub c_values: Vec<f64>,
    /// Ignored for the linear kernel.
    pub gamma_values: Vec<f64>,
    /// Regression only.
    pub epsilon_values: Vec<f64>,
    pub folds: usize,
}

fn log2_range(from: i32, to: i32, step: usize) -> Vec<f64> {
    (from..=to).step_by(step).map(|e| 2f64.powi(e)).collect()
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            c_values: log2_range(-5, 15, 2),
            gamma_values: log2_range(-15, 3, 2),
            epsilon_values: vec![0.01, 0.1, 1.0],
            folds: 5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self, task: Task, kernel: KernelChoice) -> Result<(), SvmError> {
        let bad = |what: &str| Err(SvmError::InvalidHyperparameter(what.to_string()));
        if self.c_values.is_empty() || self.c_values.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return bad("c_values must be non-empty and positive");
        }
        if kernel == KernelChoice::Rbf
            && (self.gamma_values.is_empty() || self.gamma_values.iter().any(|&g| !(g > 0.0 && g.is_finite())))
        {
            return bad("gamma_values must be non-empty and positive");
        }
        if matches!(task, Task::Regress(_))
            && (self.epsilon_values.is_empty() || self.epsilon_values.iter().any(|&e| !(e >= 0.0 && e.is_finite())))
        {
            return bad("epsilon_values must be non-empty and non-negative");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Regress(TargetKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Linear,
    #[default]
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub c: f64,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
}

impl Hyperparameters {
    pub fn kernel(&self) -> KernelSpec {
        match self.gamma {
            Some(gamma) => KernelSpec::Rbf { gamma },
            None => KernelSpec::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub params: Hyperparameters,
    pub fold_scores: Vec<f64>,
    /// Mean fold OA, or mean fold −RMSE for regression.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Hyperparameters,
    pub best_score: f64,
    pub folds: usize,
    pub cells: Vec<CvCell>,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Cells in (c, γ, ε) ascending order, so the first maximum is the tie winner.
fn cells(grid: &GridSpec, task: Task, kernel: KernelChoice) -> Vec<Hyperparameters> {
    let gammas: Vec<Option<f64>> = match kernel {
        KernelChoice::Linear => vec![None],
        KernelChoice::Rbf => sorted(&grid.gamma_values).into_iter().map(Some).collect(),
    };
    let epsilons: Vec<Option<f64>> = match task {
        Task::Classify => vec![None],
        Task::Regress(_) => sorted(&grid.epsilon_values).into_iter().map(Some).collect(),
    };
    let mut out = Vec::new();
    for c in sorted(&grid.c_values) {
        for &gamma in &gammas {
            for &epsilon in &epsilons {
                out.push(Hyperparameters { c, gamma, epsilon });
            }
        }
    }
    out
}

/// Fold id per sample. Classes are shuffled separately and dealt
/// round-robin, continuing the fold counter across classes.
fn stratified_folds(labels: &[usize], n_classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..n_classes {
        let Some(idx) = members.get_mut(&class) else { continue };
        idx.shuffle(&mut seeded(derive_seed(seed, class as u64)));
        for &i in idx.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

fn shuffled_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    assignment
}

struct Fold {
    fit: Vec<usize>,
    eval: Vec<usize>,
    fit_fit: KernelBasis,
    eval_fit: KernelBasis,
}

/// k-fold cross-validated sweep over the Cartesian grid. Cells and folds run
/// in parallel; scores are reduced in grid order.
pub fn grid_search_cv(
    train: &SampleSet,
    grid: &GridSpec,
    task: Task,
    kernel: KernelChoice,
    seed: u64,
    params: &SolverParams,
) -> Result<GridResult, SvmError> {
    grid.validate(task, kernel)?;
    if train.is_empty() {
        return Err(SvmError::EmptyTrainingSet);
    }
    let x = train.spectra();
    let k = grid.folds;

    enum Labels {
        Classes(Vec<String>, Vec<usize>),
        Targets(Vec<f64>),
    }
    let (labels, assignment) = match task {
        Task::Classify => {
            let (classes, labels) = encode_labels(train)?;
            if classes.len() < 2 {
                return Err(SvmError::TooFewClasses(classes.len()));
            }
            let smallest = train.class_counts().values().copied().min().unwrap_or(0);
            if k > smallest {
                return Err(SvmError::FoldsExceedClassCount { folds: k, smallest });
            }
            let assignment = stratified_folds(&labels, classes.len(), k, seed);
            (Labels::Classes(classes, labels), assignment)
        }
        Task::Regress(target) => {
            let t = targets_of(train, target)?;
            if k > t.len() {
                return Err(SvmError::FoldsExceedClassCount {
                    folds: k,
                    smallest: t.len(),
                });
            }
            (Labels::Targets(t), shuffled_folds(train.len(), k, seed))
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SvmError::NonFiniteInput);
    }
    let template = match kernel {
        KernelChoice::Linear => KernelSpec::Linear,
        KernelChoice::Rbf => KernelSpec::Rbf { gamma: 1.0 },
    };
    // per fold: standardize on the fit rows, then precompute the
    // kernel-independent matrices shared by every cell
    let folds = (0..k)
        .map(|f| {
            let (fit, eval): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| assignment[i] != f);
            let x_fit = x.select(Axis(0), &fit);
            let standardizer = Standardizer::fit(x_fit.view())?;
            let z_fit = standardizer.apply_rows(x_fit.view())?;
            let z_eval = standardizer.apply_rows(x.select(Axis(0), &eval).view())?;
            Ok(Fold {
                fit_fit: KernelBasis::new(&template, z_fit.view(), z_fit.view()),
                eval_fit: KernelBasis::new(&template, z_eval.view(), z_fit.view()),
                fit,
                eval,
            })
        })
        .collect::<Result<Vec<Fold>, SvmError>>()?;

    let cells = cells(grid, task, kernel);
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let scores = jobs
        .par_iter()
        .map(|&(cell, fold)| {
            let hp = cells[cell];
            let fold = &folds[fold];
            let spec = hp.kernel();
            let k_ff = fold.fit_fit.kernel(&spec);
            let k_ef = fold.eval_fit.kernel(&spec);
            match &labels {
                Labels::Classes(classes, y) => {
                    let y_fit: Vec<usize> = fold.fit.iter().map(|&i| y[i]).collect();
                    let fits = PairFits::train(&k_ff, &y_fit, classes, hp.c, params)?;
                    let pred = fits.predict_cross(&k_ef, classes.len());
                    let correct = fold.eval.iter().zip(&pred).filter(|(&i, &p)| y[i] == p).count();
                    Ok(correct as f64 / fold.eval.len() as f64)
                }
                Labels::Targets(t) => {
                    let t_fit: Vec<f64> = fold.fit.iter().map(|&i| t[i]).collect();
                    if t_fit.len() < 2 {
                        return Err(SvmError::TooFewSamples(t_fit.len()));
                    }
                    let fit = fit_svr_gram(&k_ff, &t_fit, hp.c, hp.epsilon.unwrap_or(0.0), params);
                    let sq: f64 = fold
                        .eval
                        .iter()
                        .zip(k_ef.rows())
                        .map(|(&i, row)| {
                            let p = fit.bias
                                + fit
                                    .support
                                    .iter()
                                    .zip(&fit.coefs)
                                    .map(|(&s, b)| b * row[s])
                                    .sum::<f64>();
                            (t[i] - p) * (t[i] - p)
                        })
                        .sum();
                    Ok(-(sq / fold.eval.len() as f64).sqrt())
                }
            }
        })
        .collect::<Result<Vec<f64>, SvmError>>()?;

    let cells: Vec<CvCell> = cells
        .into_iter()
        .enumerate()
        .map(|(c, params)| {
            let fold_scores = scores[c * k..(c + 1) * k].to_vec();
            let score = fold_scores.iter().sum::<f64>() / k as f64;
            CvCell {
                params,
                fold_scores,
                score,
            }
        })
        .collect();
    let mut best = 0;
    for (i, cell) in cells.iter().enumerate() {
        if cell.score > cells[best].score {
            best = i;
        }
    }
    Ok(GridResult {
        best: cells[best].params,
        best_score: cells[best].score,
        folds: k,
        cells,
    })
}
