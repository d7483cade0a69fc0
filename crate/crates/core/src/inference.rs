//! Maximum-likelihood fits of log-linear models with structural zeros and
//! the chi-square extremeness measure.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{ConstraintMatrix, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Convergence when `||A(u - u_hat)||_2 <= tol * n`.
    pub tol: f64,
    /// Initial step length of the quasi-Newton direction.
    pub learning_rate: f64,
    /// Iterations without a decrease of the margin discrepancy before the
    /// learning rate is halved.
    pub patience: usize,
    pub memory: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iter: 5000,
            tol: 1e-6,
            learning_rate: 1.0,
            patience: 20,
            memory: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MleResult {
    /// Cell probabilities, exactly zero on structural zeros.
    pub pi_tilde: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub margin_discrepancy: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MleResult {
    /// One-line CSV report: `iterations,converged,margin_discrepancy`.
    pub fn write_report<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iterations,converged,margin_discrepancy")?;
        writeln!(
            out,
            "{},{},{:e}",
            self.iterations, self.converged, self.margin_discrepancy
        )
    }
}

/// Softmax of `A^T theta` over the cells outside `zeros`.
pub fn cell_probabilities(
    matrix: &ConstraintMatrix,
    zeros: &BTreeSet<usize>,
    theta: &[f64],
) -> Vec<f64> {
    let d = matrix.cols();
    let scores: Vec<f64> = (0..d)
        .map(|j| {
            matrix
                .col_support(j)
                .iter()
                .map(|&i| matrix.get(i, j) as f64 * theta[i])
                .sum()
        })
        .collect();
    let max = (0..d)
        .filter(|j| !zeros.contains(j))
        .map(|j| scores[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut pi: Vec<f64> = (0..d)
        .map(|j| {
            if zeros.contains(&j) {
                0.0
            } else {
                (scores[j] - max).exp()
            }
        })
        .collect();
    let z: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= z);
    pi
}

/// Log-likelihood `sum_{i not in S} u_i log pi_theta(i)` and its gradient
/// `A (u - n pi_theta)`.
pub fn log_likelihood(
    matrix: &ConstraintMatrix,
    zeros: &BTreeSet<usize>,
    observed: &[u64],
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let pi = cell_probabilities(matrix, zeros, theta);
    let n: u64 = observed.iter().sum();
    let ll = (0..matrix.cols())
        .filter(|j| !zeros.contains(j) && observed[*j] > 0)
        .map(|j| observed[j] as f64 * pi[j].ln())
        .sum();
    let residual: Vec<f64> = (0..matrix.cols())
        .map(|j| observed[j] as f64 - n as f64 * pi[j])
        .collect();
    (ll, matvec(matrix, &residual))
}

fn matvec(matrix: &ConstraintMatrix, x: &[f64]) -> Vec<f64> {
    (0..matrix.rows())
        .map(|i| {
            matrix
                .row_support(i)
                .iter()
                .map(|&j| matrix.get(i, j) as f64 * x[j])
                .sum()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Negative mean log-likelihood and its gradient; the quantity minimized.
fn objective(
    matrix: &ConstraintMatrix,
    zeros: &BTreeSet<usize>,
    observed: &[u64],
    n: f64,
    theta: &[f64],
) -> (f64, Vec<f64>, f64) {
    let d = matrix.cols();
    let scores: Vec<f64> = (0..d)
        .map(|j| {
            matrix
                .col_support(j)
                .iter()
                .map(|&i| matrix.get(i, j) as f64 * theta[i])
                .sum()
        })
        .collect();
    let free = || (0..d).filter(|j| !zeros.contains(j));
    let max = free().map(|j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = free().map(|j| (scores[j] - max).exp()).sum();
    let log_z = max + z.ln();
    let linear: f64 = free().map(|j| observed[j] as f64 * scores[j]).sum();
    let value = log_z - linear / n;
    let residual: Vec<f64> = (0..d)
        .map(|j| {
            let p = if zeros.contains(&j) {
                0.0
            } else {
                (scores[j] - log_z).exp()
            };
            p - observed[j] as f64 / n
        })
        .collect();
    let grad = matvec(matrix, &residual);
    let discrepancy = norm(&grad) * n;
    (value, grad, discrepancy)
}

/// Fits `pi_theta` by L-BFGS on the mean negative log-likelihood, halving
/// the step length whenever the margin discrepancy has not improved for
/// `patience` iterations.
pub fn mle_fit(
    matrix: &ConstraintMatrix,
    zeros: &BTreeSet<usize>,
    observed: &Table,
    options: &MleOptions,
) -> Result<MleResult> {
    let u = observed.cells();
    if u.len() != matrix.cols() {
        return Err(Error::DimensionMismatch {
            expected: matrix.cols(),
            actual: u.len(),
        });
    }
    for &z in zeros {
        if u[z] != 0 {
            return Err(Error::StructuralZeroViolated {
                cell: z,
                value: u[z],
            });
        }
    }
    let n = observed.sample_size() as f64;
    if n == 0.0 {
        return Err(Error::MleUndefined("empty table".into()));
    }
    if zeros.len() == u.len() {
        return Err(Error::MleUndefined(
            "every cell is a structural zero".into(),
        ));
    }
    // A margin of zero over a row that still has free cells puts the MLE on
    // the boundary of the model, where no finite theta attains it.
    let margins = matrix.apply(u)?;
    let interior = (0..matrix.rows())
        .all(|i| margins[i] > 0 || matrix.row_support(i).iter().all(|j| zeros.contains(j)));

    let k = matrix.rows();
    let target = options.tol * n;
    let mut theta = vec![0.0; k];
    let (mut value, mut grad, mut discrepancy) = objective(matrix, zeros, u, n, &theta);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut lr = options.learning_rate;
    let mut best = discrepancy;
    let mut stale = 0;
    let mut polish = 0;
    let mut iterations = 0;

    while iterations < options.max_iter {
        if discrepancy <= target {
            // a few extra iterations tighten the fit well below the threshold
            if discrepancy <= 1e-3 * target || polish >= 25 {
                break;
            }
            polish += 1;
        }
        iterations += 1;

        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut direction: Vec<f64> = q.iter().map(|x| -x).collect();
        let mut slope = dot(&grad, &direction);
        if !(slope < 0.0) {
            history.clear();
            direction = grad.iter().map(|x| -x).collect();
            slope = dot(&grad, &direction);
        }

        // Armijo backtracking from the current learning rate
        let mut step = lr;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(t, d)| t + step * d)
                .collect();
            let (v, g, disc) = objective(matrix, zeros, u, n, &trial);
            if v.is_finite() && v <= value + 1e-4 * step * slope {
                accepted = Some((trial, v, g, disc));
                break;
            }
            step *= 0.5;
        }
        let Some((next, v, g, disc)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > options.memory {
                history.pop_front();
            }
        }
        theta = next;
        value = v;
        grad = g;
        discrepancy = disc;

        if discrepancy < best {
            best = discrepancy;
            stale = 0;
        } else {
            stale += 1;
            if stale >= options.patience {
                lr *= 0.5;
                stale = 0;
            }
        }
    }

    Ok(MleResult {
        pi_tilde: cell_probabilities(matrix, zeros, &theta),
        theta_hat: theta,
        margin_discrepancy: discrepancy,
        iterations,
        converged: interior && discrepancy <= target,
    })
}

/// `pi_ij = r_i c_j / n^2` for a two-way table with positive margins.
pub fn mle_independence_closed_form(table: &Table) -> Result<Vec<f64>> {
    let &[d1, d2] = table.shape() else {
        return Err(Error::InvalidShape(format!(
            "expected a two-way table, got {:?}",
            table.shape()
        )));
    };
    let u = table.cells();
    let rows: Vec<u64> = (0..d1)
        .map(|i| u[i * d2..(i + 1) * d2].iter().sum())
        .collect();
    let cols: Vec<u64> = (0..d2)
        .map(|j| (0..d1).map(|i| u[i * d2 + j]).sum())
        .collect();
    if rows.iter().chain(&cols).any(|&m| m == 0) {
        return Err(Error::MleUndefined("a row or column sum is zero".into()));
    }
    let n = table.sample_size() as f64;
    Ok((0..d1 * d2)
        .map(|c| rows[c / d2] as f64 * cols[c % d2] as f64 / (n * n))
        .collect())
}

/// Chi-square distance of `u / n` from `pi` over the cells outside `zeros`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquare {
    pi: Vec<f64>,
    n: f64,
    zeros: BTreeSet<usize>,
}

impl ChiSquare {
    pub fn new(pi: Vec<f64>, n: u64, zeros: BTreeSet<usize>) -> Self {
        ChiSquare {
            pi,
            n: n as f64,
            zeros,
        }
    }

    pub fn from_fit(fit: &MleResult, observed: &Table, zeros: &BTreeSet<usize>) -> Self {
        Self::new(fit.pi_tilde.clone(), observed.sample_size(), zeros.clone())
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Terms are summed in sorted order, so tables that permute the same
    /// terms get bit-identical values.
    pub fn evaluate(&self, table: &Table) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.pi.len());
        for (j, (&u, &p)) in table.cells().iter().zip(&self.pi).enumerate() {
            if self.zeros.contains(&j) {
                continue;
            }
            if p <= 0.0 {
                if u > 0 {
                    return Err(Error::MleUndefined(format!(
                        "pi is zero at occupied cell {j}"
                    )));
                }
                continue;
            }
            let diff = u as f64 / self.n - p;
            terms.push(diff * diff / p);
        }
        terms.sort_by(f64::total_cmp);
        Ok(terms.iter().sum())
    }

    /// Like [`evaluate`](Self::evaluate), with `+inf` for tables the model
    /// cannot produce.
    pub fn statistic(&self, table: &Table) -> f64 {
        self.evaluate(table).unwrap_or(f64::INFINITY)
    }
}

pub fn chi_square_statistic(
    table: &Table,
    pi: &[f64],
    n: u64,
    zeros: &BTreeSet<usize>,
) -> Result<f64> {
    ChiSquare::new(pi.to_vec(), n, zeros.clone()).evaluate(table)
}
