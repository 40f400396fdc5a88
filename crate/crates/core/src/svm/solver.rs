//! SMO dual solver.
//!
//! Each iteration picks the index `i` that most violates the KKT conditions
//! (largest `-y_i ∇_i` over the "up" set) and pairs it with the `j` from the
//! "low" set giving the largest second-order decrease of the objective, then
//! solves the two-variable subproblem analytically. Iteration stops when the
//! maximal violation gap `m(α) - M(α)` drops below `tol`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// KKT tolerance; also the stopping gap.
    pub tol: f64,
    /// Iteration budget in units of the number of dual variables.
    pub max_passes: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_passes: 10_000,
        }
    }
}

pub(crate) struct DualProblem<'a> {
    /// Kernel matrix over the `n` distinct training points.
    pub gram: &'a Array2<f64>,
    /// ±1 per dual variable; variable `t` uses point `t % n`.
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision offset: `f(x) = Σ α_t y_t K(x_t, x) - rho`.
    pub rho: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl DualProblem<'_> {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn q_row(&self, i: usize, out: &mut [f64]) {
        let n = self.gram.nrows();
        let row = self.gram.row(i % n);
        let row = row.as_slice().expect("standard layout");
        let yi = self.y[i];
        for (t, q) in out.iter_mut().enumerate() {
            *q = yi * self.y[t] * row[t % n];
        }
    }

    fn q_diag(&self, t: usize) -> f64 {
        let n = self.gram.nrows();
        self.gram[[t % n, t % n]]
    }
}

pub(crate) fn solve(problem: &DualProblem<'_>, params: &SolverParams) -> DualSolution {
    let l = problem.len();
    let c = problem.c;
    let y = &problem.y;
    let mut alpha = vec![0.0; l];
    let mut grad = problem.p.clone();
    let qd: Vec<f64> = (0..l).map(|t| problem.q_diag(t)).collect();
    let mut q_i = vec![0.0; l];
    let mut q_j = vec![0.0; l];

    let max_iter = params.max_passes.saturating_mul(l).max(1);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let Some((i, j)) = select_working_set(problem, &alpha, &grad, &qd, &mut q_i, params.tol) else {
            converged = true;
            break;
        };
        iterations += 1;
        // q_i already holds row i from selection
        problem.q_row(j, &mut q_j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * q_i[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * q_i[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (d_i, d_j) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            grad[t] += q_i[t] * d_i + q_j[t] * d_j;
        }
    }
    if !converged {
        log::warn!(
            "SMO stopped after {iterations} iterations without reaching tol {}",
            params.tol
        );
    }

    let rho = compute_rho(y, &alpha, &grad, c);
    DualSolution {
        alpha,
        rho,
        converged,
        iterations,
    }
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Returns the working pair, or `None` once the violation gap is below `tol`.
/// Leaves row `i` of Q in `q_i`.
fn select_working_set(
    problem: &DualProblem<'_>,
    alpha: &[f64],
    grad: &[f64],
    qd: &[f64],
    q_i: &mut [f64],
    tol: f64,
) -> Option<(usize, usize)> {
    let (y, c) = (&problem.y, problem.c);
    let mut g_max = f64::NEG_INFINITY;
    let mut i_sel = None;
    for t in 0..y.len() {
        if in_up(y[t], alpha[t], c) {
            let v = -y[t] * grad[t];
            if v > g_max {
                g_max = v;
                i_sel = Some(t);
            }
        }
    }
    let i = i_sel?;
    problem.q_row(i, q_i);

    let mut g_min = f64::INFINITY;
    let mut best_obj = f64::INFINITY;
    let mut j_sel = None;
    for t in 0..y.len() {
        if !in_low(y[t], alpha[t], c) {
            continue;
        }
        let v = -y[t] * grad[t];
        g_min = g_min.min(v);
        let grad_diff = g_max - v;
        if grad_diff > 0.0 {
            // Q_it carries y_i y_t, so y_i y_t Q_it = K_it.
            let quad = (qd[i] + qd[t] - 2.0 * y[i] * y[t] * q_i[t]).max(TAU);
            let obj = -(grad_diff * grad_diff) / quad;
            if obj < best_obj {
                best_obj = obj;
                j_sel = Some(t);
            }
        }
    }
    if g_max - g_min < tol {
        return None;
    }
    j_sel.map(|j| (i, j))
}

fn compute_rho(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        (upper + lower) / 2.0
    }
}
