//! Brute-force reference computations shared by the integration tests. None
//! of these call into the library's solvers.
#![allow(dead_code)]

use ekp::kernel::{gaussian_gram, KernelMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_points(m: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, d, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vec(m: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.sample(StandardNormal))
}

pub fn signs(m: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Labels with both classes present.
pub fn balanced_signs(m: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut y = signs(m, rng);
    y[0] = 1.0;
    y[1] = -1.0;
    y
}

pub fn gaussian_kernels(x: &DMatrix<f64>, log_gammas: &[i32]) -> Vec<KernelMatrix> {
    log_gammas
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut km = gaussian_gram(x, 2f64.powi(*g)).unwrap();
            km.spec_id = k + 1;
            km
        })
        .collect()
}

pub fn low_rank_psd(m: usize, rng: &mut ChaCha8Rng) -> KernelMatrix {
    let r = rng.random_range(1..=m);
    let a = DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let k = &a * a.transpose() / r as f64;
    KernelMatrix::from_gram((&k + k.transpose()) * 0.5, 1).unwrap()
}

/// `(A + shift·I)⁻¹ b` by LU.
pub fn solve(a: &DMatrix<f64>, shift: f64, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    (a + DMatrix::identity(n, n) * shift).lu().solve(b).expect("nonsingular system")
}

pub fn combine(mu: &[f64], ks: &[KernelMatrix]) -> DMatrix<f64> {
    let m = ks[0].nrows();
    ks.iter().zip(mu).fold(DMatrix::zeros(m, m), |acc, (k, w)| acc + &k.values * *w)
}

/// Optimal value of `min_h λ‖h‖² + ‖h(x) − y‖²`, i.e. `λ yᵀ(K + λI)⁻¹y`.
pub fn krr_optimum(k: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
    lambda * y.dot(&solve(k, lambda, y))
}

pub fn center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let m = k.nrows();
    let h = DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    &h * k * &h
}

/// `⟨K_c, yyᵀ⟩_F / (‖K_c‖_F ‖yyᵀ‖_F)`.
pub fn centered_alignment(k: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let kc = center(k);
    let yy = y * y.transpose();
    kc.dot(&yy) / (kc.norm() * yy.norm())
}

/// Every sign vector of length m.
pub fn all_signs(m: usize) -> impl Iterator<Item = Vec<f64>> {
    (0u64..1 << m).map(move |bits| (0..m).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect())
}

pub fn quad(s: &[f64], k: &DMatrix<f64>) -> f64 {
    let v = DVector::from_column_slice(s);
    v.dot(&(k * &v))
}

/// `‖v‖_r` for r ≥ 1, or the maximum for `r = ∞`.
pub fn lr_norm(v: &[f64], r: f64) -> f64 {
    if r.is_infinite() {
        v.iter().copied().fold(0.0, f64::max)
    } else {
        v.iter().map(|x| x.abs().powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

/// `E_σ ‖(Λ_k √(σᵀK_kσ))_k‖_r / m` over all 2^m sign vectors.
pub fn exact_complexity(ks: &[KernelMatrix], lambdas: &[f64], q: f64) -> f64 {
    let m = ks[0].nrows();
    let r = if q == 1.0 { f64::INFINITY } else { q / (q - 1.0) };
    let total: f64 = all_signs(m)
        .map(|s| {
            let v: Vec<f64> = ks.iter().zip(lambdas).map(|(k, l)| l * quad(&s, &k.values).max(0.0).sqrt()).collect();
            lr_norm(&v, r)
        })
        .sum();
    total / (1u64 << m) as f64 / m as f64
}

/// Minimum of a unimodal function on `[a, b]`: a coarse scan, then
/// golden-section refinement around the best scan point.
pub fn scan_then_golden(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> (f64, f64) {
    let pts: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = pts.iter().map(|&t| f(t)).collect();
    let best = (0..=n).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
    let (mut lo, mut hi) = (pts[best.saturating_sub(1)], pts[(best + 1).min(n)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    let mut out = (vals[best], pts[best]);
    for (t, v) in [(c, fc), (d, fd), (lo, f(lo)), (hi, f(hi))] {
        if v < out.0 {
            out = (v, t);
        }
    }
    out
}

/// Minimum of `f` over the feasible part of `[0, cap]²`, by a dense grid
/// refined three times around the incumbent.
pub fn grid_min_2d(f: impl Fn(f64, f64) -> f64, feasible: impl Fn(f64, f64) -> bool, cap: f64) -> f64 {
    let n = 120;
    let (mut lo0, mut hi0, mut lo1, mut hi1) = (0.0, cap, 0.0, cap);
    let mut best = (f(0.0, 0.0), 0.0, 0.0);
    for _ in 0..4 {
        for i in 0..=n {
            for j in 0..=n {
                let a = lo0 + (hi0 - lo0) * i as f64 / n as f64;
                let b = lo1 + (hi1 - lo1) * j as f64 / n as f64;
                if feasible(a, b) {
                    let v = f(a, b);
                    if v < best.0 {
                        best = (v, a, b);
                    }
                }
            }
        }
        let w0 = 4.0 * (hi0 - lo0) / n as f64;
        let w1 = 4.0 * (hi1 - lo1) / n as f64;
        lo0 = (best.1 - w0).max(0.0);
        hi0 = (best.1 + w0).min(cap);
        lo1 = (best.2 - w1).max(0.0);
        hi1 = (best.2 + w1).min(cap);
    }
    best.0
}

/// Boundary scan for `p = 2` with feasibility on the unit ball or simplex;
/// catches optima on the constraint curve that an axis grid can miss.
pub fn boundary_min_2d(f: impl Fn(f64, f64) -> f64, q: f64, cap: f64) -> f64 {
    let on_curve = |t: f64| {
        // t ∈ [0, 1] sweeps the arc of {µ ≥ 0, ‖µ‖_q = cap}
        let a = cap * (1.0 - t).powf(1.0 / q).max(0.0);
        let b = cap * t.powf(1.0 / q);
        f(a, b)
    };
    scan_then_golden(on_curve, 0.0, 1.0, 400).0
}
