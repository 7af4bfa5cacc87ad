//! Gaussian kernel matrices and the small set of matrix operations the rest
//! of the toolkit is built on: centering, Frobenius products, non-negative
//! combinations and quadratic forms.
//!
//! Kernel ids start at 1. Id [`COMBINED_ID`] (0) is reserved for matrices
//! that do not come from a single base kernel (combinations, raw files).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Id carried by kernel matrices that are not a single base kernel.
pub const COMBINED_ID: usize = 0;

/// Maximum asymmetry accepted for a square kernel matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative PSD tolerance: `σᵀKσ ≥ -PSD_TOL * m * max|K_ij|`.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
}

/// One base kernel of a kernel set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub id: usize,
    pub family: KernelFamily,
    pub gamma: f64,
}

impl KernelSpec {
    pub fn gaussian(id: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::domain(format!("bandwidth must be positive, got {gamma}")));
        }
        if id == COMBINED_ID {
            return Err(Error::domain("kernel ids start at 1"));
        }
        Ok(KernelSpec {
            id,
            family: KernelFamily::Gaussian,
            gamma,
        })
    }

    /// Kernel matrix between the rows of `xa` and `xb` for this spec.
    pub fn matrix(&self, xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<KernelMatrix> {
        let mut k = match self.family {
            KernelFamily::Gaussian => gaussian_kernel_matrix(xa, xb, self.gamma)?,
        };
        k.spec_id = self.id;
        Ok(k)
    }

    /// Gram matrix of `x` with itself.
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<KernelMatrix> {
        let mut k = match self.family {
            KernelFamily::Gaussian => gaussian_gram(x, self.gamma)?,
        };
        k.spec_id = self.id;
        Ok(k)
    }
}

/// Gaussian specs with bandwidths `2^g` for `g` in `lo..=hi`, ids `1..=p`.
pub fn gaussian_grid(lo: i32, hi: i32) -> Result<Vec<KernelSpec>> {
    if lo > hi {
        return Err(Error::domain(format!("empty bandwidth range [{lo}, {hi}]")));
    }
    (lo..=hi)
        .enumerate()
        .map(|(k, g)| KernelSpec::gaussian(k + 1, 2f64.powi(g)))
        .collect()
}

/// A dense kernel matrix, either a Gram matrix (`is_square`) or a cross block
/// between two different point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub spec_id: usize,
    pub is_square: bool,
}

impl KernelMatrix {
    /// Wraps a precomputed Gram matrix, checking squareness and symmetry.
    pub fn from_gram(values: DMatrix<f64>, spec_id: usize) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::shape(format!(
                "gram matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("kernel matrix has non-finite entries"));
        }
        let asym = max_asymmetry(&values);
        if asym > SYMMETRY_TOL * (1.0 + max_abs(&values)) {
            return Err(Error::domain(format!("kernel matrix is not symmetric (max |K_ij - K_ji| = {asym:.3e})")));
        }
        Ok(KernelMatrix {
            values,
            spec_id,
            is_square: true,
        })
    }

    /// Wraps a cross-kernel block.
    pub fn cross(values: DMatrix<f64>, spec_id: usize) -> Self {
        KernelMatrix {
            values,
            spec_id,
            is_square: false,
        }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }

    /// Same matrix scaled by `c`.
    pub fn scaled(&self, c: f64) -> KernelMatrix {
        KernelMatrix {
            values: &self.values * c,
            spec_id: self.spec_id,
            is_square: self.is_square,
        }
    }

    pub(crate) fn require_square(&self) -> Result<usize> {
        if !self.is_square || self.nrows() != self.ncols() {
            return Err(Error::shape(format!(
                "expected a square kernel matrix, got {}x{}",
                self.nrows(),
                self.ncols()
            )));
        }
        Ok(self.nrows())
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn row_sq_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.row_iter().map(|r| r.norm_squared()).collect()
}

fn check_finite(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// `K_ij = exp(-gamma * ||xa_i - xb_j||²)`.
///
/// The result is flagged square when `xa` and `xb` hold the same points, in
/// which case it is built exactly symmetric with a unit diagonal.
pub fn gaussian_kernel_matrix(xa: &DMatrix<f64>, xb: &DMatrix<f64>, gamma: f64) -> Result<KernelMatrix> {
    if xa.ncols() != xb.ncols() {
        return Err(Error::shape(format!(
            "feature dimension mismatch: {} vs {}",
            xa.ncols(),
            xb.ncols()
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!("bandwidth must be positive, got {gamma}")));
    }
    if xa == xb {
        return gaussian_gram(xa, gamma);
    }
    check_finite(xa, "feature matrix")?;
    check_finite(xb, "feature matrix")?;
    let na = row_sq_norms(xa);
    let nb = row_sq_norms(xb);
    let dots = xa * xb.transpose();
    let values = DMatrix::from_fn(xa.nrows(), xb.nrows(), |i, j| {
        let d2 = (na[i] + nb[j] - 2.0 * dots[(i, j)]).max(0.0);
        (-gamma * d2).exp()
    });
    Ok(KernelMatrix::cross(values, COMBINED_ID))
}

/// Gram matrix of the rows of `x` for the Gaussian kernel.
pub fn gaussian_gram(x: &DMatrix<f64>, gamma: f64) -> Result<KernelMatrix> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!("bandwidth must be positive, got {gamma}")));
    }
    check_finite(x, "feature matrix")?;
    let m = x.nrows();
    let norms = row_sq_norms(x);
    let dots = x * x.transpose();
    let mut values = DMatrix::from_element(m, m, 1.0);
    for j in 0..m {
        for i in (j + 1)..m {
            let d2 = (norms[i] + norms[j] - 2.0 * dots[(i, j)]).max(0.0);
            let v = (-gamma * d2).exp();
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(KernelMatrix {
        values,
        spec_id: COMBINED_ID,
        is_square: true,
    })
}

/// `H K H` with `H = I - 11ᵀ/m`.
pub fn center_kernel_matrix(k: &KernelMatrix) -> Result<KernelMatrix> {
    let m = k.require_square()?;
    let mf = m as f64;
    let row_means: Vec<f64> = (0..m).map(|i| k.values.row(i).sum() / mf).collect();
    let col_means: Vec<f64> = (0..m).map(|j| k.values.column(j).sum() / mf).collect();
    let grand = row_means.iter().sum::<f64>() / mf;
    let values = DMatrix::from_fn(m, m, |i, j| k.values[(i, j)] - row_means[i] - col_means[j] + grand);
    Ok(KernelMatrix {
        values,
        spec_id: k.spec_id,
        is_square: true,
    })
}

/// `Σ_ij A_ij B_ij`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "frobenius product of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

/// `⟨K, yyᵀ⟩_F = yᵀKy`, without materialising the label kernel.
pub fn label_alignment_product(k: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    if k.nrows() != y.len() || k.ncols() != y.len() {
        return Err(Error::shape(format!(
            "label vector of length {} against {}x{} kernel",
            y.len(),
            k.nrows(),
            k.ncols()
        )));
    }
    Ok(quadratic_form_raw(y.as_slice(), k))
}

/// Entrywise `Σ_k mu_k K_k` over matrices of one shape.
pub fn combine_kernels(mu: &[f64], kernels: &[KernelMatrix]) -> Result<KernelMatrix> {
    if mu.is_empty() || mu.len() != kernels.len() {
        return Err(Error::shape(format!(
            "{} weights for {} kernels",
            mu.len(),
            kernels.len()
        )));
    }
    if let Some(w) = mu.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain(format!("kernel weights must be non-negative, got {w}")));
    }
    let shape = kernels[0].values.shape();
    if kernels.iter().any(|k| k.values.shape() != shape) {
        return Err(Error::shape("kernel matrices differ in shape"));
    }
    let mut values = DMatrix::zeros(shape.0, shape.1);
    for (w, k) in mu.iter().zip(kernels) {
        if *w != 0.0 {
            values.zip_apply(&k.values, |acc, v| *acc += *w * v);
        }
    }
    Ok(KernelMatrix {
        values,
        spec_id: COMBINED_ID,
        is_square: kernels.iter().all(|k| k.is_square),
    })
}

/// `σᵀKσ`.
pub fn quadratic_form(sigma: &[f64], k: &KernelMatrix) -> Result<f64> {
    if k.nrows() != sigma.len() || k.ncols() != sigma.len() {
        return Err(Error::shape(format!(
            "vector of length {} against {}x{} kernel",
            sigma.len(),
            k.nrows(),
            k.ncols()
        )));
    }
    Ok(quadratic_form_raw(sigma, &k.values))
}

/// Unchecked quadratic form, walking the column-major storage directly.
pub(crate) fn quadratic_form_raw(v: &[f64], k: &DMatrix<f64>) -> f64 {
    let m = v.len();
    let data = k.as_slice();
    let mut total = 0.0;
    for j in 0..m {
        let col = &data[j * m..(j + 1) * m];
        let inner: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
        total += inner * v[j];
    }
    total
}
