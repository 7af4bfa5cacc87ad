//! First-stage learners: kernel ridge regression and the C-SVM, each trained
//! on a single Gram matrix and returned as a dual expansion.

pub(crate) mod krr;
mod svm;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernel::{quadratic_form_raw, KernelMatrix};

pub use krr::{krr_objective, train_krr, KRR_JITTER};
pub use svm::{solve_svm, train_svm, SvmOptions, SvmSolution};

/// A predictor `h(x) = Σ_j alpha_j K(x_j, x) + bias` over the training points
/// of one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseHypothesis {
    /// Signed expansion coefficients (for the SVM, `α_i y_i`).
    pub alpha: DVector<f64>,
    pub bias: f64,
    pub spec_id: usize,
    /// λ for KRR, C for the SVM.
    pub reg: f64,
    /// `√(αᵀKα)`, the RKHS norm of the expansion.
    pub rkhs_norm: f64,
    pub task: Task,
    /// Set when training saw a single class and fell back to a constant.
    pub degenerate: bool,
}

/// Scores `K_cross α + bias` for the rows of a test/train cross kernel.
pub fn predict(h: &BaseHypothesis, k_cross: &KernelMatrix) -> Result<DVector<f64>> {
    if k_cross.spec_id != h.spec_id {
        return Err(Error::domain(format!(
            "hypothesis trained with kernel {} evaluated with kernel {}",
            h.spec_id, k_cross.spec_id
        )));
    }
    if k_cross.ncols() != h.alpha.len() {
        return Err(Error::shape(format!(
            "cross kernel has {} columns, hypothesis has {} coefficients",
            k_cross.ncols(),
            h.alpha.len()
        )));
    }
    let mut scores = &k_cross.values * &h.alpha;
    scores.add_scalar_mut(h.bias);
    Ok(scores)
}

/// `√max(αᵀKα, 0)`.
pub fn rkhs_norm(h: &BaseHypothesis, k_train: &KernelMatrix) -> Result<f64> {
    expansion_norm(&h.alpha, k_train)
}

pub(crate) fn expansion_norm(alpha: &DVector<f64>, k: &KernelMatrix) -> Result<f64> {
    let m = k.require_square()?;
    if alpha.len() != m {
        return Err(Error::shape(format!(
            "{} coefficients against a {m}x{m} kernel",
            alpha.len()
        )));
    }
    Ok(quadratic_form_raw(alpha.as_slice(), &k.values).max(0.0).sqrt())
}

pub(crate) fn check_finite_vec(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(format!("{what} has non-finite entries")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn hyp(alpha: Vec<f64>, bias: f64) -> BaseHypothesis {
        BaseHypothesis {
            alpha: DVector::from_vec(alpha),
            bias,
            spec_id: 1,
            reg: 1.0,
            rkhs_norm: 0.0,
            task: Task::Regression,
            degenerate: false,
        }
    }

    #[test]
    fn zero_expansion_predicts_bias() {
        let h = hyp(vec![0.0, 0.0], 0.7);
        let k = KernelMatrix::cross(DMatrix::from_element(3, 2, 0.3), 1);
        let s = predict(&h, &k).unwrap();
        assert_eq!(s.as_slice(), &[0.7, 0.7, 0.7]);
    }

    #[test]
    fn kernel_mismatch_is_rejected() {
        let h = hyp(vec![1.0], 0.0);
        let k = KernelMatrix::cross(DMatrix::from_element(1, 1, 1.0), 2);
        assert!(matches!(predict(&h, &k), Err(Error::Domain(_))));
        let k = KernelMatrix::cross(DMatrix::from_element(1, 3, 1.0), 1);
        assert!(matches!(predict(&h, &k), Err(Error::Shape(_))));
    }

    #[test]
    fn rkhs_norm_examples() {
        let i2 = KernelMatrix::from_gram(DMatrix::identity(2, 2), 1).unwrap();
        assert_eq!(rkhs_norm(&hyp(vec![0.0, 0.0], 0.0), &i2).unwrap(), 0.0);
        let n = rkhs_norm(&hyp(vec![0.5, -0.5], 0.0), &i2).unwrap();
        assert!((n - 0.5f64.sqrt()).abs() < 1e-15);
        let ones = KernelMatrix::from_gram(DMatrix::from_element(2, 2, 1.0), 1).unwrap();
        assert_eq!(rkhs_norm(&hyp(vec![1.0, -1.0], 0.0), &ones).unwrap(), 0.0);
    }
}
