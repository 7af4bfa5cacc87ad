//! Learning-kernel baselines that pick one combined kernel `K_µ = Σ µ_k K_k`
//! and train a single predictor on it: uniform weights, (centered) alignment,
//! jointly optimised alignment, and the one-stage SVM and KRR formulations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernel::{center_kernel_matrix, combine_kernels, frobenius_inner, label_alignment_product, quadratic_form_raw, KernelMatrix};
use crate::learners::krr::solve_shifted;
use crate::learners::{predict, solve_svm, train_krr, train_svm, BaseHypothesis, SvmOptions};
use crate::projection::{project_orthant_ball, project_weighted_simplex};

/// Outer iteration cap for the one-stage methods.
pub const OUTER_ITER: usize = 200;
/// Relative objective change that ends the outer loop.
pub const OUTER_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MklMethod {
    #[serde(rename = "unif")]
    Unif,
    #[serde(rename = "align")]
    Align,
    #[serde(rename = "alignf")]
    Alignf,
    #[serde(rename = "os-svm")]
    OsSvm,
    #[serde(rename = "os-krr")]
    OsKrr,
}

impl MklMethod {
    pub fn name(self) -> &'static str {
        match self {
            MklMethod::Unif => "unif",
            MklMethod::Align => "align",
            MklMethod::Alignf => "alignf",
            MklMethod::OsSvm => "os-svm",
            MklMethod::OsKrr => "os-krr",
        }
    }
}

impl fmt::Display for MklMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MklMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [MklMethod::Unif, MklMethod::Align, MklMethod::Alignf, MklMethod::OsSvm, MklMethod::OsKrr]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown kernel-learning method '{s}'")))
    }
}

/// A predictor trained on one combined kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MKLModel {
    pub mu: Vec<f64>,
    /// Signed expansion coefficients over the training points.
    pub alpha: DVector<f64>,
    pub bias: f64,
    pub method: MklMethod,
    /// Objective after each accepted outer step; empty for closed-form weights.
    pub objective_trace: Vec<f64>,
    /// False when the outer loop hit its iteration cap.
    pub converged: bool,
    /// Set when alignment scores were all non-positive and uniform weights were used.
    pub fallback: bool,
}

impl MKLModel {
    fn hypothesis(&self, task: Task) -> BaseHypothesis {
        BaseHypothesis {
            alpha: self.alpha.clone(),
            bias: self.bias,
            spec_id: crate::kernel::COMBINED_ID,
            reg: 0.0,
            rkhs_norm: f64::NAN,
            task,
            degenerate: false,
        }
    }
}

/// Scores of an MKL model given one cross kernel (test × train) per base kernel.
pub fn predict_mkl(model: &MKLModel, cross: &[KernelMatrix]) -> Result<DVector<f64>> {
    let combined = combine_kernels(&model.mu, cross)?;
    predict(&model.hypothesis(Task::Regression), &combined)
}

fn check_kernels(kernels: &[KernelMatrix], y: &DVector<f64>) -> Result<usize> {
    if kernels.is_empty() {
        return Err(Error::domain("kernel set is empty"));
    }
    let m = y.len();
    for k in kernels {
        if k.require_square()? != m {
            return Err(Error::shape(format!("kernel of size {} for {m} labels", k.nrows())));
        }
    }
    Ok(m)
}

fn check_cap(cap: f64) -> Result<()> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::domain(format!("cap must be positive, got {cap}")));
    }
    Ok(())
}

pub fn uniform_weights(p: usize, cap: f64) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::domain("kernel set is empty"));
    }
    check_cap(cap)?;
    Ok(vec![cap / p as f64; p])
}

/// Centered alignment statistics: `M_kl = ⟨K_k^c, K_l^c⟩_F`, `a_k = ⟨K_k^c, yyᵀ⟩_F`.
#[derive(Debug, Clone)]
pub struct AlignmentStats {
    pub gram: DMatrix<f64>,
    pub target: DVector<f64>,
}

pub fn alignment_stats(kernels: &[KernelMatrix], y: &DVector<f64>) -> Result<AlignmentStats> {
    check_kernels(kernels, y)?;
    let centered = kernels
        .par_iter()
        .map(center_kernel_matrix)
        .collect::<Result<Vec<_>>>()?;
    let p = kernels.len();
    let target = centered
        .iter()
        .map(|c| label_alignment_product(&c.values, y))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|k| (k..p).map(move |l| (k, l))).collect();
    let inner = pairs
        .par_iter()
        .map(|&(k, l)| frobenius_inner(&centered[k].values, &centered[l].values))
        .collect::<Result<Vec<_>>>()?;
    let mut gram = DMatrix::zeros(p, p);
    for (&(k, l), v) in pairs.iter().zip(inner) {
        gram[(k, l)] = v;
        gram[(l, k)] = v;
    }
    Ok(AlignmentStats {
        gram,
        target: DVector::from_vec(target),
    })
}

/// `⟨K_µ^c, yyᵀ⟩_F / ‖K_µ^c‖_F`, zero when the centered kernel vanishes.
pub fn centered_alignment(kernels: &[KernelMatrix], y: &DVector<f64>, mu: &[f64]) -> Result<f64> {
    check_kernels(kernels, y)?;
    let c = center_kernel_matrix(&combine_kernels(mu, kernels)?)?;
    let norm = c.values.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(label_alignment_product(&c.values, y)? / norm)
}

/// Weights proportional to each kernel's own centered alignment, negatives
/// clipped. Returns the weights and whether the uniform fallback fired.
pub fn align_weights(kernels: &[KernelMatrix], y: &DVector<f64>, cap: f64) -> Result<(Vec<f64>, bool)> {
    check_cap(cap)?;
    let stats = alignment_stats(kernels, y)?;
    let scores: Vec<f64> = (0..kernels.len())
        .map(|k| {
            let norm = stats.gram[(k, k)].max(0.0).sqrt();
            if norm > 0.0 {
                (stats.target[k] / norm).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(normalise_or_uniform(&scores, cap))
}

fn normalise_or_uniform(v: &[f64], cap: f64) -> (Vec<f64>, bool) {
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        (v.iter().map(|s| cap * s / total).collect(), false)
    } else {
        (vec![cap / v.len() as f64; v.len()], true)
    }
}

/// Weights maximising the centered alignment of the combined kernel.
pub fn alignf_weights(kernels: &[KernelMatrix], y: &DVector<f64>, cap: f64) -> Result<(Vec<f64>, bool)> {
    check_cap(cap)?;
    let stats = alignment_stats(kernels, y)?;
    let v = nonneg_quadratic(&stats.gram, &stats.target);
    Ok(normalise_or_uniform(v.as_slice(), cap))
}

/// `argmin_{v ≥ 0} vᵀMv − 2vᵀa` for PSD `M`.
///
/// Projected gradient with exact line search, then a Newton solve on the
/// detected support whenever it lowers the objective.
pub(crate) fn nonneg_quadratic(m: &DMatrix<f64>, a: &DVector<f64>) -> DVector<f64> {
    let p = a.len();
    let f = |v: &DVector<f64>| v.dot(&(m * v)) - 2.0 * v.dot(a);
    let scale = m.diagonal().max().max(f64::MIN_POSITIVE);
    let lip = m.norm().max(scale);
    let mut v = DVector::from_fn(p, |k, _| {
        let d = m[(k, k)];
        if d > 1e-14 * scale {
            (a[k] / d).max(0.0) / p as f64
        } else {
            0.0
        }
    });
    for _ in 0..5000 {
        let g = (m * &v - a) * 2.0;
        let target = (&v - &g / (2.0 * lip)).map(|x| x.max(0.0));
        let d = target - &v;
        let curv = d.dot(&(m * &d));
        let slope = g.dot(&d);
        if slope >= -1e-15 * (1.0 + f(&v).abs()) {
            break;
        }
        // exact minimiser along the segment v + t d, t ∈ [0, 1]
        let t = if curv > 0.0 { (-slope / (2.0 * curv)).min(1.0) } else { 1.0 };
        v += d * t;
    }
    let mut best = f(&v);
    for _ in 0..p + 1 {
        let support: Vec<usize> = (0..p).filter(|&k| v[k] > 0.0).collect();
        if support.is_empty() {
            break;
        }
        let sub = DMatrix::from_fn(support.len(), support.len(), |i, j| m[(support[i], support[j])]);
        let rhs = DVector::from_fn(support.len(), |i, _| a[support[i]]);
        let Some(sol) = sub.cholesky().map(|c| c.solve(&rhs)) else {
            break;
        };
        if sol.iter().any(|x| *x < 0.0) {
            break;
        }
        let mut cand = DVector::zeros(p);
        for (i, &k) in support.iter().enumerate() {
            cand[k] = sol[i];
        }
        let fc = f(&cand);
        if fc > best {
            break;
        }
        best = fc;
        v = cand;
        // bring in the most violated inactive coordinate, if any
        let g = (m * &v - a) * 2.0;
        let entering = (0..p)
            .filter(|&k| v[k] == 0.0 && g[k] < -1e-12 * scale)
            .min_by(|&i, &j| g[i].total_cmp(&g[j]));
        match entering {
            Some(k) => v[k] = f64::MIN_POSITIVE,
            None => break,
        }
    }
    v.map(|x| x.max(0.0))
}

fn final_predictor(
    method: MklMethod,
    mu: Vec<f64>,
    kernels: &[KernelMatrix],
    y: &DVector<f64>,
    task: Task,
    reg: f64,
    fallback: bool,
) -> Result<MKLModel> {
    let combined = combine_kernels(&mu, kernels)?;
    let h = match task {
        Task::Classification => train_svm(&combined, y, reg)?,
        Task::Regression => train_krr(&combined, y, reg)?,
    };
    Ok(MKLModel {
        mu,
        alpha: h.alpha,
        bias: h.bias,
        method,
        objective_trace: Vec::new(),
        converged: true,
        fallback,
    })
}

/// Trains unif, align or alignf: fixed weights, then an SVM (classification,
/// C = `reg`) or KRR (regression, λ = `reg`) on `K_µ`.
pub fn train_fixed_weight(
    method: MklMethod,
    kernels: &[KernelMatrix],
    y: &DVector<f64>,
    task: Task,
    reg: f64,
    cap: f64,
) -> Result<MKLModel> {
    check_kernels(kernels, y)?;
    let (mu, fallback) = match method {
        MklMethod::Unif => (uniform_weights(kernels.len(), cap)?, false),
        MklMethod::Align => align_weights(kernels, y, cap)?,
        MklMethod::Alignf => alignf_weights(kernels, y, cap)?,
        other => return Err(Error::domain(format!("{other} does not use fixed weights"))),
    };
    final_predictor(method, mu, kernels, y, task, reg, fallback)
}

struct Descent<S> {
    mu: Vec<f64>,
    state: S,
    trace: Vec<f64>,
    converged: bool,
}

/// Monotone projected gradient on a convex objective of µ, with backtracking
/// on the projected step and a doubling step after each acceptance.
fn projected_descent<S, E, P>(mu0: Vec<f64>, eval: E, project: P) -> Result<Descent<S>>
where
    E: Fn(&[f64]) -> Result<(f64, Vec<f64>, S)>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let (mut j, mut g, mut state) = eval(&mu0)?;
    let mut mu = mu0;
    let mut trace = vec![j];
    let gnorm = norm2(&g);
    if gnorm == 0.0 {
        return Ok(Descent { mu, state, trace, converged: true });
    }
    let mut step = norm2(&mu).max(1e-12) / gnorm;
    for _ in 0..OUTER_ITER {
        let mut accepted = None;
        for _ in 0..60 {
            let raw: Vec<f64> = mu.iter().zip(&g).map(|(x, d)| x - step * d).collect();
            let cand = project(&raw);
            let d: Vec<f64> = cand.iter().zip(&mu).map(|(a, b)| a - b).collect();
            let dd = norm2(&d).powi(2);
            if dd.sqrt() <= 1e-14 * (1.0 + norm2(&mu)) {
                return Ok(Descent { mu, state, trace, converged: true });
            }
            let (jc, gc, sc) = eval(&cand)?;
            let model = j + g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() + dd / (2.0 * step);
            if jc <= model && jc <= j {
                accepted = Some((cand, jc, gc, sc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, jc, gc, sc)) = accepted else {
            return Ok(Descent { mu, state, trace, converged: true });
        };
        let change = j - jc;
        mu = cand;
        j = jc;
        g = gc;
        state = sc;
        trace.push(j);
        if change < OUTER_TOL * (1.0 + j.abs()) {
            return Ok(Descent { mu, state, trace, converged: true });
        }
        step *= 2.0;
    }
    log::warn!("outer loop stopped at the iteration cap ({OUTER_ITER})");
    Ok(Descent { mu, state, trace, converged: false })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-stage SVM over `{µ ≥ 0, Σ µ_k Tr K_k ≤ cap}`.
///
/// The outer objective is the SVM dual optimum on `K_µ` in the scale
/// `J(µ) = max_α 2αᵀ1 − αᵀY K_µ Y α`, whose gradient in µ_k is
/// `−(yα)ᵀK_k(yα)`.
pub fn train_os_svm(kernels: &[KernelMatrix], y: &DVector<f64>, c: f64, cap: f64) -> Result<MKLModel> {
    check_kernels(kernels, y)?;
    check_cap(cap)?;
    if !(c > 0.0) {
        return Err(Error::domain(format!("C must be positive, got {c}")));
    }
    let traces: Vec<f64> = kernels.iter().map(KernelMatrix::trace).collect();
    if let Some(k) = traces.iter().position(|t| !(*t > 0.0)) {
        return Err(Error::domain("kernel has non-positive trace").in_kernel(kernels[k].spec_id));
    }
    let p = kernels.len() as f64;
    let mu0: Vec<f64> = traces.iter().map(|t| cap / (p * t)).collect();
    let eval = |mu: &[f64]| {
        let combined = combine_kernels(mu, kernels)?;
        let sol = solve_svm(&combined, y, c, SvmOptions::default())?;
        let beta = sol.signed(y);
        let grad = kernels.iter().map(|k| -quadratic_form_raw(beta.as_slice(), &k.values)).collect();
        Ok((2.0 * sol.dual_objective, grad, (beta, sol.bias)))
    };
    let out = projected_descent(mu0, eval, |v| project_weighted_simplex(v, &traces, cap))?;
    let (alpha, bias) = out.state;
    Ok(MKLModel {
        mu: out.mu,
        alpha,
        bias,
        method: MklMethod::OsSvm,
        objective_trace: out.trace,
        converged: out.converged,
        fallback: false,
    })
}

/// `yᵀ(K_µ + λI)⁻¹y` with its dual vector.
pub fn os_krr_objective(kernels: &[KernelMatrix], y: &DVector<f64>, lambda: f64, mu: &[f64]) -> Result<(f64, DVector<f64>)> {
    let combined = combine_kernels(mu, kernels)?;
    let alpha = solve_shifted(&combined.values, lambda, y)?;
    Ok((y.dot(&alpha), alpha))
}

/// One-stage KRR over `{µ ≥ 0, ‖µ‖₂ ≤ cap}` minimising `yᵀ(K_µ + λI)⁻¹y`.
pub fn train_os_krr(kernels: &[KernelMatrix], y: &DVector<f64>, lambda: f64, cap: f64) -> Result<MKLModel> {
    check_kernels(kernels, y)?;
    check_cap(cap)?;
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("λ must be positive, got {lambda}")));
    }
    let mu0 = vec![cap / (kernels.len() as f64).sqrt(); kernels.len()];
    let eval = |mu: &[f64]| {
        let (j, alpha) = os_krr_objective(kernels, y, lambda, mu)?;
        let grad = kernels.iter().map(|k| -quadratic_form_raw(alpha.as_slice(), &k.values)).collect();
        Ok((j, grad, alpha))
    };
    let out = projected_descent(mu0, eval, |v| project_orthant_ball(v, cap))?;
    Ok(MKLModel {
        mu: out.mu,
        alpha: out.state,
        bias: 0.0,
        method: MklMethod::OsKrr,
        objective_trace: out.trace,
        converged: out.converged,
        fallback: false,
    })
}

/// Dispatches to the right trainer; `reg` is C for classification and λ for
/// regression.
pub fn train_mkl(
    method: MklMethod,
    kernels: &[KernelMatrix],
    y: &DVector<f64>,
    task: Task,
    reg: f64,
    cap: f64,
) -> Result<MKLModel> {
    match method {
        MklMethod::OsSvm => {
            if task != Task::Classification {
                return Err(Error::domain("os-svm needs a classification task"));
            }
            train_os_svm(kernels, y, reg, cap)
        }
        MklMethod::OsKrr => train_os_krr(kernels, y, reg, cap),
        fixed => train_fixed_weight(fixed, kernels, y, task, reg, cap),
    }
}
