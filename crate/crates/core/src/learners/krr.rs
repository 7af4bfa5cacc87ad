use nalgebra::{DMatrix, DVector};

use super::{check_finite_vec, expansion_norm, BaseHypothesis};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernel::{quadratic_form_raw, KernelMatrix};

/// Diagonal jitter, relative to `Tr[K]/m`, added when the first Cholesky
/// factorization fails.
pub const KRR_JITTER: f64 = 1e-10;

/// Solves `(K + λI) α = y`.
pub fn train_krr(k: &KernelMatrix, y: &DVector<f64>, lambda: f64) -> Result<BaseHypothesis> {
    let m = k.require_square()?;
    if y.len() != m {
        return Err(Error::shape(format!("{} targets for a {m}x{m} kernel", y.len())));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("ridge parameter must be positive, got {lambda}")));
    }
    check_finite_vec(y, "target vector")?;
    if k.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("kernel matrix has non-finite entries"));
    }

    let alpha = solve_shifted(&k.values, lambda, y)?;
    let rkhs_norm = expansion_norm(&alpha, k)?;
    Ok(BaseHypothesis {
        alpha,
        bias: 0.0,
        spec_id: k.spec_id,
        reg: lambda,
        rkhs_norm,
        task: Task::Regression,
        degenerate: false,
    })
}

/// Solves `(A + shift·I) x = b` by Cholesky, retrying once with jitter.
pub(crate) fn solve_shifted(a: &DMatrix<f64>, shift: f64, b: &DVector<f64>) -> Result<DVector<f64>> {
    let m = a.nrows();
    let mut sys = a.clone();
    for i in 0..m {
        sys[(i, i)] += shift;
    }
    let chol = match sys.clone().cholesky() {
        Some(chol) => chol,
        None => {
            let jitter = KRR_JITTER * a.trace().abs().max(f64::MIN_POSITIVE) / m.max(1) as f64;
            let mut jittered = sys.clone();
            for i in 0..m {
                jittered[(i, i)] += jitter;
            }
            jittered
                .cholesky()
                .ok_or_else(|| Error::numeric("cholesky factorization failed after jitter"))?
        }
    };
    let mut x = chol.solve(b);
    // iterative refinement against the unjittered system
    let target = b.norm() * 1e-12;
    for _ in 0..4 {
        let r = b - &sys * &x;
        if r.norm() <= target {
            break;
        }
        x += chol.solve(&r);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("linear solve produced non-finite values"));
    }
    Ok(x)
}

/// `λ αᵀKα + ‖Kα - y‖²`.
pub fn krr_objective(k: &KernelMatrix, y: &DVector<f64>, lambda: f64, alpha: &DVector<f64>) -> Result<f64> {
    let m = k.require_square()?;
    if y.len() != m || alpha.len() != m {
        return Err(Error::shape("krr objective: length mismatch"));
    }
    let fitted = &k.values * alpha;
    Ok(lambda * quadratic_form_raw(alpha.as_slice(), &k.values) + (fitted - y).norm_squared())
}
