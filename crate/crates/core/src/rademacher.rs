//! Empirical Rademacher complexity of non-negative kernel-predictor
//! ensembles, by sign-vector sampling or full enumeration, together with
//! the closed-form upper bounds and the margin-based generalization bound.
//!
//! For weights constrained by `‖µ‖_q ≤ 1` and base norms `‖h_k‖ ≤ Λ_k` the
//! complexity is `(1/m) E_σ ‖v_σ‖_r` with `v_σ = (Λ_k √(σᵀK_kσ))_k` and `r`
//! the dual exponent of `q`.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;

/// Largest sample size accepted for exhaustive enumeration.
pub const MAX_ENUMERATION_M: usize = 20;
/// Largest sample size for which the moment check enumerates.
pub const MOMENT_EXHAUSTIVE_M: usize = 12;
pub const DEFAULT_SAMPLES: u64 = 100_000;
/// Sign vectors evaluated together in one matrix product.
const BATCH: usize = 256;

/// An exact rational constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// The constant `η₀ = 23/22` of the moment inequality.
pub const ETA0: Rational = Rational { num: 23, den: 22 };

/// Conjugate exponent `r` with `1/q + 1/r = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum DualExponent {
    Finite(f64),
    Infinity,
}

impl DualExponent {
    /// `q = 1` gives `r = ∞`; `q = ∞` gives `r = 1`.
    pub fn from_q(q: f64) -> Result<Self> {
        if q.is_nan() || q < 1.0 {
            return Err(Error::domain(format!("q must be at least 1, got {q}")));
        }
        Ok(if q == 1.0 {
            DualExponent::Infinity
        } else if q.is_infinite() {
            DualExponent::Finite(1.0)
        } else {
            DualExponent::Finite(q / (q - 1.0))
        })
    }

    /// `‖v‖_r` for a non-negative vector.
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            DualExponent::Infinity => v.iter().copied().fold(0.0, f64::max),
            DualExponent::Finite(1.0) => v.iter().sum(),
            DualExponent::Finite(2.0) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            DualExponent::Finite(r) => v.iter().map(|x| x.powf(r)).sum::<f64>().powf(1.0 / r),
        }
    }
}

impl std::fmt::Display for DualExponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DualExponent::Finite(r) => write!(f, "{r}"),
            DualExponent::Infinity => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Number of sign vectors drawn, or `2^m` when enumerated.
    pub n_sigma: u64,
    pub q: f64,
    pub r: DualExponent,
    pub lambdas: Vec<f64>,
    pub m: usize,
    pub exhaustive: bool,
    pub seed: Option<u64>,
}

fn check_inputs(kernels: &[KernelMatrix], lambdas: &[f64]) -> Result<usize> {
    if kernels.is_empty() {
        return Err(Error::domain("kernel set is empty"));
    }
    if lambdas.len() != kernels.len() {
        return Err(Error::shape(format!("{} Λ values for {} kernels", lambdas.len(), kernels.len())));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::domain(format!("Λ_k must be positive, got {l}")));
    }
    let m = kernels[0].require_square()?;
    for k in kernels {
        if k.require_square()? != m {
            return Err(Error::shape("kernels differ in size"));
        }
    }
    Ok(m)
}

/// Signs of draw `index`, from its own ChaCha stream so any evaluation order
/// produces the same vectors.
fn random_signs(seed: u64, index: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    for chunk in out.chunks_mut(64) {
        let bits = rng.next_u64();
        for (j, s) in chunk.iter_mut().enumerate() {
            *s = if (bits >> j) & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
}

/// Sign vector number `index` among those with `σ₁ = +1`.
fn enumerated_signs(index: u64, out: &mut [f64]) {
    out[0] = 1.0;
    for (j, s) in out.iter_mut().enumerate().skip(1) {
        *s = if (index >> (j - 1)) & 1 == 1 { -1.0 } else { 1.0 };
    }
}

/// `σᵀKσ` clamped at zero for small negative rounding; larger negatives mean
/// the kernel is not PSD.
fn clamp_form(value: f64, m: usize, k: &KernelMatrix) -> Result<f64> {
    if value >= 0.0 {
        return Ok(value);
    }
    let tol = 1e-8 * m as f64 * k.max_abs().max(1.0);
    if value >= -tol {
        Ok(0.0)
    } else {
        Err(Error::numeric(format!("negative quadratic form {value:.3e}: kernel is not PSD")).in_kernel(k.spec_id))
    }
}

/// Quadratic forms of every kernel at every sign vector of a batch.
fn batch_forms<F>(kernels: &[KernelMatrix], m: usize, start: u64, count: usize, signs: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(u64, &mut [f64]) + Sync,
{
    let mut s = DMatrix::zeros(m, count);
    for b in 0..count {
        signs(start + b as u64, s.column_mut(b).as_mut_slice());
    }
    let mut forms = vec![vec![0.0; kernels.len()]; count];
    for (k, kern) in kernels.iter().enumerate() {
        let ks = &kern.values * &s;
        for (b, row) in forms.iter_mut().enumerate() {
            let q: f64 = s.column(b).dot(&ks.column(b));
            row[k] = clamp_form(q, m, kern)?;
        }
    }
    Ok(forms)
}

/// Per-draw values `g(forms)` for draws `0..n`, in draw order.
fn per_draw<F, G>(kernels: &[KernelMatrix], m: usize, n: u64, signs: F, g: G) -> Result<Vec<f64>>
where
    F: Fn(u64, &mut [f64]) + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let batches = n.div_ceil(BATCH as u64);
    let chunks = (0..batches)
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH as u64;
            let count = (n - start).min(BATCH as u64) as usize;
            batch_forms(kernels, m, start, count, &signs).map(|f| f.iter().map(|row| g(row)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Mean and standard error of the mean, summed in index order.
fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn v_sigma_norm(lambdas: &[f64], r: DualExponent) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
    move |forms: &[f64]| {
        let v: Vec<f64> = forms.iter().zip(lambdas).map(|(f, l)| l * f.sqrt()).collect();
        r.norm(&v)
    }
}

/// Monte-Carlo estimate over `n_sigma` uniform sign vectors.
pub fn estimate_complexity(
    kernels: &[KernelMatrix],
    lambdas: &[f64],
    q: f64,
    n_sigma: u64,
    seed: u64,
) -> Result<RademacherEstimate> {
    let m = check_inputs(kernels, lambdas)?;
    if n_sigma == 0 {
        return Err(Error::domain("n_sigma must be at least 1"));
    }
    let r = DualExponent::from_q(q)?;
    let draws = per_draw(kernels, m, n_sigma, |i, out| random_signs(seed, i, out), v_sigma_norm(lambdas, r))?;
    let (mean, se) = mean_stderr(&draws);
    let mf = m as f64;
    Ok(RademacherEstimate {
        value: mean / mf,
        stderr: se / mf,
        n_sigma,
        q,
        r,
        lambdas: lambdas.to_vec(),
        m,
        exhaustive: false,
        seed: Some(seed),
    })
}

/// Exact value by enumerating sign vectors, using `σ ↦ −σ` symmetry.
pub fn enumerate_complexity(kernels: &[KernelMatrix], lambdas: &[f64], q: f64) -> Result<RademacherEstimate> {
    let m = check_inputs(kernels, lambdas)?;
    if m > MAX_ENUMERATION_M {
        return Err(Error::domain(format!(
            "enumeration over 2^{m} sign vectors refused (limit m = {MAX_ENUMERATION_M}); use the Monte-Carlo estimate"
        )));
    }
    let r = DualExponent::from_q(q)?;
    let half = 1u64 << (m - 1);
    let draws = per_draw(kernels, m, half, enumerated_signs, v_sigma_norm(lambdas, r))?;
    let mean = draws.iter().sum::<f64>() / half as f64;
    Ok(RademacherEstimate {
        value: mean / m as f64,
        stderr: 0.0,
        n_sigma: 1u64 << m,
        q,
        r,
        lambdas: lambdas.to_vec(),
        m,
        exhaustive: true,
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    Thm1,
    Thm1Logp,
    Thm2,
    Thm2Simple,
    Margin,
}

impl Theorem {
    pub fn name(self) -> &'static str {
        match self {
            Theorem::Thm1 => "thm1",
            Theorem::Thm1Logp => "thm1_logp",
            Theorem::Thm2 => "thm2",
            Theorem::Thm2Simple => "thm2_simple",
            Theorem::Margin => "margin",
        }
    }
}

/// Everything a bound was computed from. Fields not used by a bound are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lambdas: Option<Vec<f64>>,
    pub traces: Option<Vec<f64>>,
    pub lambda_star: Option<f64>,
    pub r2: Option<f64>,
    pub m: usize,
    pub p: Option<usize>,
    pub r: Option<u32>,
    pub eta0: Option<Rational>,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    pub margin_loss: Option<f64>,
    pub complexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub value: f64,
    pub inputs: BoundInputs,
    /// Set when a bound on an error probability exceeds 1.
    pub vacuous: bool,
}

fn check_r(r: u32) -> Result<()> {
    if r == 0 {
        return Err(Error::domain("r must be an integer of at least 1"));
    }
    Ok(())
}

fn norm_r(v: &[f64], r: u32) -> f64 {
    DualExponent::Finite(r as f64).norm(v)
}

/// `√(η₀ r ‖v_Λ‖_r) / m` with `v_Λ = (Λ_k² Tr K_k)_k`.
pub fn bound_thm1(kernels: &[KernelMatrix], lambdas: &[f64], r: u32) -> Result<BoundReport> {
    let m = check_inputs(kernels, lambdas)?;
    check_r(r)?;
    let traces: Vec<f64> = kernels.iter().map(KernelMatrix::trace).collect();
    let v: Vec<f64> = lambdas.iter().zip(&traces).map(|(l, t)| l * l * t).collect();
    let value = (ETA0.value() * r as f64 * norm_r(&v, r)).sqrt() / m as f64;
    Ok(BoundReport {
        theorem: Theorem::Thm1,
        value,
        inputs: BoundInputs {
            lambdas: Some(lambdas.to_vec()),
            traces: Some(traces),
            m,
            p: Some(kernels.len()),
            r: Some(r),
            eta0: Some(ETA0),
            ..Default::default()
        },
        vacuous: false,
    })
}

fn check_scalars(p: usize, lambda_star: f64, r2: f64, m: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::domain(format!("this bound needs p > 1, got p = {p}")));
    }
    if !(lambda_star > 0.0) || !(r2 > 0.0) || m == 0 {
        return Err(Error::domain("Λ*, R² and m must be positive"));
    }
    Ok(())
}

/// `√(η₀ e ⌈ln p⌉ Λ*² R² / m)`.
pub fn bound_thm1_logp(p: usize, lambda_star: f64, r2: f64, m: usize) -> Result<BoundReport> {
    check_scalars(p, lambda_star, r2, m)?;
    let ceil_log = (p as f64).ln().ceil();
    let value = (ETA0.value() * std::f64::consts::E * ceil_log * lambda_star * lambda_star * r2 / m as f64).sqrt();
    Ok(BoundReport {
        theorem: Theorem::Thm1Logp,
        value,
        inputs: BoundInputs {
            lambda_star: Some(lambda_star),
            r2: Some(r2),
            m,
            p: Some(p),
            eta0: Some(ETA0),
            ..Default::default()
        },
        vacuous: false,
    })
}

/// `√(η₀ r) ‖u‖_r / m` with `u = (Λ_k √Tr K_k)_k`.
pub fn bound_thm2(kernels: &[KernelMatrix], lambdas: &[f64], r: u32) -> Result<BoundReport> {
    let m = check_inputs(kernels, lambdas)?;
    check_r(r)?;
    let traces: Vec<f64> = kernels.iter().map(KernelMatrix::trace).collect();
    let u: Vec<f64> = lambdas.iter().zip(&traces).map(|(l, t)| l * t.max(0.0).sqrt()).collect();
    let value = (ETA0.value() * r as f64).sqrt() * norm_r(&u, r) / m as f64;
    Ok(BoundReport {
        theorem: Theorem::Thm2,
        value,
        inputs: BoundInputs {
            lambdas: Some(lambdas.to_vec()),
            traces: Some(traces),
            m,
            p: Some(kernels.len()),
            r: Some(r),
            eta0: Some(ETA0),
            ..Default::default()
        },
        vacuous: false,
    })
}

/// `√(η₀ r p^{2/r} Λ*² R² / m)`.
pub fn bound_thm2_simple(p: usize, lambda_star: f64, r2: f64, m: usize, r: u32) -> Result<BoundReport> {
    check_scalars(p, lambda_star, r2, m)?;
    check_r(r)?;
    let rf = r as f64;
    let value = (ETA0.value() * rf * (p as f64).powf(2.0 / rf) * lambda_star * lambda_star * r2 / m as f64).sqrt();
    Ok(BoundReport {
        theorem: Theorem::Thm2Simple,
        value,
        inputs: BoundInputs {
            lambda_star: Some(lambda_star),
            r2: Some(r2),
            m,
            p: Some(p),
            r: Some(r),
            eta0: Some(ETA0),
            ..Default::default()
        },
        vacuous: false,
    })
}

/// `R̂_ρ + (2/ρ) R̂_S + 3 √(ln(2/δ) / 2m)`, not clipped.
pub fn margin_bound(margin_loss: f64, complexity: f64, rho: f64, delta: f64, m: usize) -> Result<BoundReport> {
    if !(0.0..=1.0).contains(&margin_loss) {
        return Err(Error::domain(format!("margin loss must lie in [0, 1], got {margin_loss}")));
    }
    if !(complexity >= 0.0) || !(rho > 0.0) || !(delta > 0.0 && delta < 1.0) || m == 0 {
        return Err(Error::domain("margin bound needs complexity ≥ 0, ρ > 0, δ ∈ (0, 1), m ≥ 1"));
    }
    let value = margin_loss + 2.0 / rho * complexity + 3.0 * ((2.0 / delta).ln() / (2.0 * m as f64)).sqrt();
    Ok(BoundReport {
        theorem: Theorem::Margin,
        value,
        inputs: BoundInputs {
            m,
            rho: Some(rho),
            delta: Some(delta),
            margin_loss: Some(margin_loss),
            complexity: Some(complexity),
            ..Default::default()
        },
        vacuous: value >= 1.0,
    })
}

/// Fraction of points with `y_i h(x_i) ≤ ρ`.
pub fn empirical_margin_loss(scores: &[f64], y: &[f64], rho: f64) -> Result<f64> {
    if scores.len() != y.len() || scores.is_empty() {
        return Err(Error::shape("scores and labels must be non-empty and of equal length"));
    }
    let hits = scores.iter().zip(y).filter(|(s, t)| *s * *t <= rho).count();
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub r: u32,
    /// `E_σ[(σᵀKσ)^r]`, exact or sampled.
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// `(η₀ r Tr K)^r`.
    pub rhs: f64,
    pub holds: bool,
    pub exhaustive: bool,
}

/// Compares the `r`-th moment of `σᵀKσ` with `(η₀ r Tr K)^r`.
pub fn moment_check(k: &KernelMatrix, r: u32, n_sigma: u64, seed: u64) -> Result<MomentCheck> {
    let m = k.require_square()?;
    if !(1..=4).contains(&r) {
        return Err(Error::domain(format!("moment order must be 1..=4, got {r}")));
    }
    let kernels = std::slice::from_ref(k);
    let power = |forms: &[f64]| forms[0].powi(r as i32);
    let exhaustive = m <= MOMENT_EXHAUSTIVE_M;
    let (lhs, se) = if exhaustive {
        let half = 1u64 << (m - 1);
        let vals = per_draw(kernels, m, half, enumerated_signs, power)?;
        (vals.iter().sum::<f64>() / half as f64, 0.0)
    } else {
        if n_sigma == 0 {
            return Err(Error::domain("n_sigma must be at least 1"));
        }
        let vals = per_draw(kernels, m, n_sigma, |i, out| random_signs(seed, i, out), power)?;
        mean_stderr(&vals)
    };
    let rhs = (ETA0.value() * r as f64 * k.trace()).powi(r as i32);
    let rel = if lhs > 0.0 { se / lhs } else { 0.0 };
    Ok(MomentCheck {
        r,
        lhs,
        lhs_stderr: se,
        rhs,
        holds: lhs <= rhs * (1.0 + 3.0 * rel),
        exhaustive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(m: usize) -> KernelMatrix {
        KernelMatrix::from_gram(DMatrix::from_element(m, m, 1.0), 1).unwrap()
    }

    fn identity(m: usize) -> KernelMatrix {
        KernelMatrix::from_gram(DMatrix::identity(m, m), 1).unwrap()
    }

    #[test]
    fn identity_kernel_is_deterministic() {
        for q in [1.0, 2.0] {
            let e = estimate_complexity(&[identity(100)], &[1.0], q, 500, 7).unwrap();
            assert_eq!(e.value, 0.1);
            assert_eq!(e.stderr, 0.0);
        }
    }

    #[test]
    fn all_ones_pair_enumerates_to_half() {
        let e = enumerate_complexity(&[ones(2)], &[1.0], 1.0).unwrap();
        assert_eq!(e.value, 0.5);
        assert_eq!(e.n_sigma, 4);
        let two = enumerate_complexity(&[ones(2), ones(2)], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(two.value, e.value);
    }

    #[test]
    fn scaling_lambda_scales_estimate() {
        let k = KernelMatrix::from_gram(DMatrix::from_fn(5, 5, |i, j| (-((i as f64 - j as f64).powi(2))).exp()), 1).unwrap();
        let a = estimate_complexity(std::slice::from_ref(&k), &[1.0], 2.0, 300, 1).unwrap();
        let b = estimate_complexity(&[k], &[4.0], 2.0, 300, 1).unwrap();
        assert_eq!(b.value, 4.0 * a.value);
    }

    #[test]
    fn guards() {
        assert!(estimate_complexity(&[identity(3)], &[1.0], 1.0, 0, 1).is_err());
        assert!(enumerate_complexity(&[identity(21)], &[1.0], 1.0).is_err());
        assert!(bound_thm1_logp(1, 1.0, 1.0, 10).is_err());
        assert!(bound_thm2_simple(1, 1.0, 1.0, 10, 2).is_err());
        let bad = KernelMatrix::from_gram(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), 4).unwrap();
        let err = estimate_complexity(&[bad], &[1.0], 1.0, 16, 0).unwrap_err();
        assert!(matches!(err, Error::InKernel { kernel: 4, .. }));
    }

    #[test]
    fn closed_form_bounds() {
        let k = identity(100);
        let b1 = bound_thm1(std::slice::from_ref(&k), &[1.0], 1).unwrap();
        assert!((b1.value - (23.0f64 / 22.0 * 100.0).sqrt() / 100.0).abs() < 1e-15);
        assert!((b1.value - 0.102247).abs() < 1e-6);
        let b2 = bound_thm2(&[k], &[1.0], 2).unwrap();
        assert!((b2.value - 0.144600).abs() < 1e-6);
        // printed references are rounded to about 5e-6
        let e = std::f64::consts::E;
        let l2 = bound_thm1_logp(2, 1.0, 1.0, 100).unwrap().value;
        assert!((l2 - (23.0 / 22.0 * e / 100.0f64).sqrt()).abs() < 1e-15);
        assert!((l2 - 0.168574).abs() < 1e-5);
        let l8 = bound_thm1_logp(8, 1.0, 1.0, 100).unwrap().value;
        assert!((l8 - (23.0 / 22.0 * e * 3.0 / 100.0f64).sqrt()).abs() < 1e-15);
        assert!((l8 - 0.291980).abs() < 1e-5);
        assert!((bound_thm2_simple(4, 1.0, 1.0, 100, 2).unwrap().value - 0.289200).abs() < 1e-6);
        assert_eq!(b1.inputs.eta0, Some(Rational { num: 23, den: 22 }));
    }

    #[test]
    fn margin_examples() {
        let delta = 2.0 * (-2.0f64).exp();
        let b = margin_bound(0.0, 0.1, 1.0, delta, 100).unwrap();
        assert!((b.value - 0.5).abs() < 1e-12);
        assert!(!b.vacuous);
        assert!(margin_bound(1.0, 0.1, 1.0, delta, 100).unwrap().vacuous);
        let b2 = margin_bound(0.0, 0.1, 2.0, delta, 100).unwrap();
        assert!(((b.value - b2.value) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn moment_examples() {
        let c = moment_check(&ones(2), 2, 0, 0).unwrap();
        assert_eq!(c.lhs, 8.0);
        assert!((c.rhs - (23.0f64 / 22.0 * 4.0).powi(2)).abs() < 1e-12);
        assert!(c.holds);
        let c = moment_check(&identity(6), 3, 0, 0).unwrap();
        assert_eq!(c.lhs, 216.0);
        assert!(c.holds);
        let c = moment_check(&ones(5), 1, 0, 0).unwrap();
        assert!((c.lhs - 5.0).abs() < 1e-12);
    }

    #[test]
    fn dual_exponents() {
        assert_eq!(DualExponent::from_q(1.0).unwrap(), DualExponent::Infinity);
        assert_eq!(DualExponent::from_q(2.0).unwrap(), DualExponent::Finite(2.0));
        assert!(DualExponent::from_q(0.5).is_err());
        assert_eq!(DualExponent::Infinity.norm(&[1.0, 3.0, 2.0]), 3.0);
    }
}
