//! Self-checks run by the `verify` command: the one-stage equivalence at
//! fixed weights, the KRR kernel-scaling identity, the moment inequality
//! and the alignment ordering of the alignment-based weights.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::combiner::WeightNorm;
use crate::data::DataSet;
use crate::ensemble::{verify_prop2, Prop2Report};
use crate::error::Result;
use crate::kernel::{gaussian_gram, KernelMatrix, KernelSpec};
use crate::learners::{predict, train_krr};
use crate::mkl::{align_weights, alignf_weights, centered_alignment, uniform_weights};
use crate::rademacher::{moment_check, MomentCheck};
use crate::report::{CheckOutcome, VerifyReport};

pub const PROP2_TOL: f64 = 1e-6;
pub const LEMMA1_TOL: f64 = 1e-8;
pub const ALIGNMENT_TOL: f64 = 1e-9;

/// A random PSD matrix: a Gaussian Gram on random points, or a scaled
/// low-rank product `AAᵀ`.
pub fn random_psd(m: usize, rng: &mut impl Rng) -> KernelMatrix {
    if rng.random::<bool>() {
        let d = rng.random_range(1..=4);
        let x = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = 2f64.powf(rng.random_range(-3.0..2.0));
        gaussian_gram(&x, gamma).expect("finite points")
    } else {
        let r = rng.random_range(1..=m.max(1));
        let a = DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut k = &a * a.transpose() / r as f64;
        // exact symmetry after rounding
        k = (&k + k.transpose()) * 0.5;
        KernelMatrix::from_gram(k, 1).expect("symmetric by construction")
    }
}

/// Random weights with `Σ µ_k^q = 1`.
pub fn random_weights(p: usize, norm: WeightNorm, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
    let n = norm.norm(&raw);
    raw.iter().map(|v| v / n).collect()
}

fn with_ids(kernels: Vec<KernelMatrix>) -> Vec<KernelMatrix> {
    kernels
        .into_iter()
        .enumerate()
        .map(|(i, mut k)| {
            k.spec_id = i + 1;
            k
        })
        .collect()
}

fn outcome(suite: &str, name: String, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        suite: suite.into(),
        name,
        passed,
        detail,
    }
}

/// Equivalence gap at `instances` random configurations, alternating norms.
pub fn prop2_suite(instances: usize, seed: u64) -> Result<(Vec<CheckOutcome>, Vec<Prop2Report>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for i in 0..instances {
        let m = rng.random_range(3..=30);
        let p = rng.random_range(1..=4);
        let kernels = with_ids((0..p).map(|_| random_psd(m, &mut rng)).collect());
        let y = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = if i % 2 == 0 { WeightNorm::L1 } else { WeightNorm::L2 };
        let mu = random_weights(p, norm, &mut rng);
        let lambda = 2f64.powf(rng.random_range(-3.0..3.0));
        let r = verify_prop2(&mu, norm, lambda, &y, &kernels)?;
        checks.push(outcome(
            "prop2",
            format!("instance {i} (m={m}, p={p}, q={norm})"),
            r.rel_gap <= PROP2_TOL,
            format!("rel_gap = {:.3e}", r.rel_gap),
        ));
        reports.push(r);
    }
    Ok((checks, reports))
}

/// KRR with `(cK, λ)` predicts exactly as KRR with `(K, λ/c)`.
pub fn lemma1_suite(instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for i in 0..instances {
        let m = rng.random_range(4..=25);
        let t = rng.random_range(1..=6);
        let x = DMatrix::from_fn(m + t, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let spec = KernelSpec::gaussian(1, 2f64.powf(rng.random_range(-2.0..2.0)))?;
        let train = x.rows(0, m).into_owned();
        let test = x.rows(m, t).into_owned();
        let k = spec.gram(&train)?;
        let cross = spec.matrix(&test, &train)?;
        let lambda = 2f64.powf(rng.random_range(-2.0..2.0));
        for c in [0.1, 3.0, 10.0] {
            let scaled = train_krr(&k.scaled(c), &y, lambda)?;
            let plain = train_krr(&k, &y, lambda / c)?;
            let a = predict(&scaled, &cross.scaled(c))?;
            let b = predict(&plain, &cross)?;
            let gap = (a - b).amax();
            checks.push(outcome(
                "lemma1",
                format!("instance {i}, c = {c}"),
                gap <= LEMMA1_TOL,
                format!("max |Δ prediction| = {gap:.3e}"),
            ));
        }
    }
    Ok(checks)
}

/// `E[(σᵀKσ)^r] ≤ (η₀ r Tr K)^r` for r = 1..4 on random small PSD matrices.
pub fn moment_suite(instances: usize, seed: u64) -> Result<(Vec<CheckOutcome>, Vec<MomentCheck>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut all = Vec::new();
    for i in 0..instances {
        let m = rng.random_range(2..=12);
        let k = random_psd(m, &mut rng);
        for r in 1..=4 {
            let c = moment_check(&k, r, 0, seed)?;
            checks.push(outcome(
                "moment",
                format!("instance {i} (m={m}), r = {r}"),
                c.holds,
                format!("lhs = {:.6e}, rhs = {:.6e}", c.lhs, c.rhs),
            ));
            all.push(c);
        }
    }
    Ok((checks, all))
}

/// Alignment of the three fixed-weight methods on one kernel set.
pub fn alignment_triplet(kernels: &[KernelMatrix], y: &DVector<f64>) -> Result<(f64, f64, f64)> {
    let unif = centered_alignment(kernels, y, &uniform_weights(kernels.len(), 1.0)?)?;
    let align = centered_alignment(kernels, y, &align_weights(kernels, y, 1.0)?.0)?;
    let alignf = centered_alignment(kernels, y, &alignf_weights(kernels, y, 1.0)?.0)?;
    Ok((unif, align, alignf))
}

fn alignment_check(i: usize, kernels: &[KernelMatrix], y: &DVector<f64>) -> Result<CheckOutcome> {
    let (unif, align, alignf) = alignment_triplet(kernels, y)?;
    let tol = ALIGNMENT_TOL * (1.0 + alignf.abs());
    let passed = alignf >= align - tol && alignf >= unif - tol;
    let note = if align + tol < unif { " (align below unif)" } else { "" };
    Ok(outcome(
        "alignment",
        format!("instance {i}"),
        passed,
        format!("unif = {unif:.9}, align = {align:.9}, alignf = {alignf:.9}{note}"),
    ))
}

/// Binary labels on random kernels: alignf is never beaten.
pub fn alignment_suite(instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for i in 0..instances {
        let m = rng.random_range(6..=30);
        let p = rng.random_range(2..=5);
        let kernels = with_ids((0..p).map(|_| random_psd(m, &mut rng)).collect());
        let y = DVector::from_fn(m, |j, _| if j % 2 == 0 || rng.random::<f64>() < 0.2 { 1.0 } else { -1.0 });
        checks.push(alignment_check(i, &kernels, &y)?);
    }
    Ok(checks)
}

/// Every suite on random instances, plus data-driven checks when a dataset
/// and kernel grid are supplied.
pub fn run_verify(data: Option<(&DataSet, &[KernelSpec])>, seed: u64) -> Result<VerifyReport> {
    let (mut checks, prop2) = prop2_suite(50, seed)?;
    checks.extend(lemma1_suite(10, seed.wrapping_add(1))?);
    let (moment_checks, moments) = moment_suite(20, seed.wrapping_add(2))?;
    checks.extend(moment_checks);
    checks.extend(alignment_suite(50, seed.wrapping_add(3))?);
    let mut prop2 = prop2;
    if let Some((data, specs)) = data {
        let take: Vec<usize> = (0..data.len().min(30)).collect();
        let sub = data.subset(&take);
        let kernels = specs.iter().map(|s| s.gram(&sub.features)).collect::<Result<Vec<_>>>()?;
        for norm in [WeightNorm::L1, WeightNorm::L2] {
            let p = kernels.len() as f64;
            let mu = vec![1.0 / p.powf(1.0 / norm.q()); kernels.len()];
            let r = verify_prop2(&mu, norm, 1.0, &sub.labels, &kernels)?;
            checks.push(outcome(
                "prop2",
                format!("dataset, uniform weights, q={norm}"),
                r.rel_gap <= PROP2_TOL,
                format!("rel_gap = {:.3e}", r.rel_gap),
            ));
            prop2.push(r);
        }
        if data.task == crate::data::Task::Classification && sub.positives() > 0 && sub.positives() < sub.len() {
            checks.push(alignment_check(usize::MAX, &kernels, &sub.labels).map(|mut c| {
                c.name = "dataset".into();
                c
            })?);
        }
    }
    Ok(VerifyReport { checks, prop2, moments })
}
