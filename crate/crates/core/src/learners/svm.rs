//! C-SVM dual solved by two-variable working-set ascent.
//!
//! The dual is `max Σα - ½ αᵀQα` with `Q = YKY`, `0 ≤ α ≤ C` and `αᵀy = 0`
//! (half of the `2αᵀ1 - αᵀYKYα` form, same maximiser). Each step picks the
//! maximal violating index `i` and the partner `j` with the largest
//! second-order gain, then solves the two-variable subproblem exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BaseHypothesis;
use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;

const TAU: f64 = 1e-12;

/// Violation tolerance promised to callers.
pub const SVM_KKT_CONTRACT: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct SvmOptions {
    /// Stop once the maximal violating pair gap drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            tol: 1e-7,
            max_iter: 100_000,
        }
    }
}

/// Full dual solution with its optimality certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmSolution {
    /// Dual variables, `0 ≤ α_i ≤ C`.
    pub dual: DVector<f64>,
    pub bias: f64,
    /// `Σα - ½αᵀQα`.
    pub dual_objective: f64,
    /// `½αᵀQα + C Σ max(0, 1 - y_i f(x_i))` at the returned bias.
    pub primal_objective: f64,
    pub duality_gap: f64,
    /// Largest per-point violation of the KKT conditions at the returned bias.
    pub max_kkt_violation: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

impl SvmSolution {
    /// Signed expansion coefficients `α_i y_i`.
    pub fn signed(&self, y: &DVector<f64>) -> DVector<f64> {
        self.dual.component_mul(y)
    }
}

/// Trains a C-SVM and returns the expansion as a [`BaseHypothesis`].
pub fn train_svm(k: &KernelMatrix, y: &DVector<f64>, c: f64) -> Result<BaseHypothesis> {
    let sol = solve_svm(k, y, c, SvmOptions::default())?;
    let alpha = sol.signed(y);
    let rkhs_norm = super::expansion_norm(&alpha, k)?;
    Ok(BaseHypothesis {
        alpha,
        bias: sol.bias,
        spec_id: k.spec_id,
        reg: c,
        rkhs_norm,
        task: Task::Classification,
        degenerate: sol.degenerate,
    })
}

pub fn solve_svm(k: &KernelMatrix, y: &DVector<f64>, c: f64, opts: SvmOptions) -> Result<SvmSolution> {
    let m = k.require_square()?;
    if y.len() != m {
        return Err(Error::shape(format!("{} labels for a {m}x{m} kernel", y.len())));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain(format!("C must be positive, got {c}")));
    }
    if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
        return Err(Error::domain("svm labels must be -1 or +1"));
    }
    if k.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("kernel matrix has non-finite entries"));
    }

    let positives = y.iter().filter(|v| **v > 0.0).count();
    if positives == 0 || positives == m {
        let label = if positives == 0 { -1.0 } else { 1.0 };
        return Ok(SvmSolution {
            dual: DVector::zeros(m),
            bias: label,
            dual_objective: 0.0,
            primal_objective: 0.0,
            duality_gap: 0.0,
            max_kkt_violation: 0.0,
            iterations: 0,
            degenerate: true,
        });
    }

    let kv = &k.values;
    let mut alpha = vec![0.0; m];
    // gradient of ½αᵀQα - eᵀα
    let mut grad = vec![-1.0; m];
    let mut iterations = 0;
    let mut pair_gap;

    loop {
        let Some((i, j, gap)) = select_pair(kv, y, &alpha, &grad, c) else {
            pair_gap = 0.0;
            break;
        };
        pair_gap = gap;
        if gap <= opts.tol || iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let (yi, yj) = (y[i], y[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = kv[(i, j)];
        let mut quad = kv[(i, i)] + kv[(j, j)] - 2.0 * kij;
        if quad <= 0.0 {
            quad = TAU;
        }
        if yi != yj {
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

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        let col_i = kv.column(i);
        let col_j = kv.column(j);
        for t in 0..m {
            grad[t] += y[t] * (yi * col_i[t] * di + yj * col_j[t] * dj);
        }
    }

    let dual = DVector::from_vec(alpha);
    let sol = certify(kv, y, dual, c, iterations);
    if sol.max_kkt_violation > SVM_KKT_CONTRACT && pair_gap > SVM_KKT_CONTRACT {
        return Err(Error::NotConverged {
            iterations,
            violation: sol.max_kkt_violation,
        });
    }
    if iterations >= opts.max_iter {
        log::warn!(
            "svm stopped at the iteration cap with pair gap {pair_gap:.3e} (within the KKT contract)"
        );
    }
    Ok(sol)
}

fn in_up(alpha: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && alpha < c) || (y < 0.0 && alpha > 0.0)
}

fn in_low(alpha: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && alpha > 0.0) || (y < 0.0 && alpha < c)
}

/// Maximal violating `i` plus second-order partner `j`, with the pair gap.
fn select_pair(
    kv: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: &[f64],
    grad: &[f64],
    c: f64,
) -> Option<(usize, usize, f64)> {
    let m = alpha.len();
    let mut gmax = f64::NEG_INFINITY;
    let mut i_best = None;
    for t in 0..m {
        if in_up(alpha[t], y[t], c) {
            let v = -y[t] * grad[t];
            if v > gmax {
                gmax = v;
                i_best = Some(t);
            }
        }
    }
    let i = i_best?;

    let mut gmin = f64::INFINITY;
    let mut j_best = None;
    let mut obj_min = f64::INFINITY;
    let kii = kv[(i, i)];
    for t in 0..m {
        if !in_low(alpha[t], y[t], c) {
            continue;
        }
        let v = -y[t] * grad[t];
        gmin = gmin.min(v);
        let b = gmax - v;
        if b > 0.0 {
            let mut a = kii + kv[(t, t)] - 2.0 * kv[(i, t)];
            if a <= 0.0 {
                a = TAU;
            }
            let obj = -(b * b) / a;
            if obj <= obj_min {
                obj_min = obj;
                j_best = Some(t);
            }
        }
    }
    let gap = gmax - gmin;
    match j_best {
        Some(j) => Some((i, j, gap)),
        None => Some((i, i, gap.max(0.0))),
    }
}

/// Bias, objectives and per-point KKT residuals for a dual vector.
fn certify(kv: &DMatrix<f64>, y: &DVector<f64>, dual: DVector<f64>, c: f64, iterations: usize) -> SvmSolution {
    let m = y.len();
    let signed = dual.component_mul(y);
    let s = kv * &signed;
    let eps = 1e-12 * c.max(1.0);

    let free: Vec<usize> = (0..m).filter(|&i| dual[i] > eps && dual[i] < c - eps).collect();
    let bias = if !free.is_empty() {
        free.iter().map(|&i| y[i] - s[i]).sum::<f64>() / free.len() as f64
    } else {
        // b must satisfy lower bounds from (y=+1, α=0), (y=-1, α=C)
        // and upper bounds from (y=+1, α=C), (y=-1, α=0)
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..m {
            let r = y[i] - s[i];
            let at_zero = dual[i] <= eps;
            if (y[i] > 0.0) == at_zero {
                lo = lo.max(r);
            } else {
                hi = hi.min(r);
            }
        }
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => 0.0,
        }
    };

    let quad = signed.dot(&s);
    let dual_objective = dual.sum() - 0.5 * quad;
    let mut hinge = 0.0;
    let mut worst = 0.0f64;
    for i in 0..m {
        let u = y[i] * (s[i] + bias) - 1.0;
        hinge += (-u).max(0.0);
        let viol = if dual[i] <= eps {
            (-u).max(0.0)
        } else if dual[i] >= c - eps {
            u.max(0.0)
        } else {
            u.abs()
        };
        worst = worst.max(viol);
    }
    let primal_objective = 0.5 * quad + c * hinge;
    SvmSolution {
        dual,
        bias,
        dual_objective,
        primal_objective,
        duality_gap: primal_objective - dual_objective,
        max_kkt_violation: worst,
        iterations,
        degenerate: false,
    }
}
