//! Two-stage weighted ensembles of per-kernel predictors, and the
//! single-stage objective used to check its equivalence with learning a
//! kernel at fixed weights.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{fit_combiner, predict_combination, CombinerWeights, Loss, PredictionMatrix, WeightNorm};
use crate::data::{DataSet, Task};
use crate::error::{Error, Result};
use crate::kernel::{combine_kernels, quadratic_form_raw, KernelMatrix, KernelSpec};
use crate::learners::{krr_objective, predict, train_krr, train_svm, BaseHypothesis};

/// Weights at or below this are treated as absent kernels.
pub const DROP_WEIGHT: f64 = 1e-12;

/// Disjoint index partition with `round(ratio·m)` points in the first part.
///
/// Classification samples are stratified by label. Both parts keep the
/// original row order.
pub fn split_indices(data: &DataSet, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::domain(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let m = data.len();
    let n1 = (ratio * m as f64).round() as usize;
    if n1 == 0 || n1 >= m {
        return Err(Error::domain(format!(
            "split ratio {ratio} of {m} points leaves an empty part"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match data.task {
        Task::Classification => vec![
            (0..m).filter(|&i| data.labels[i] < 0.0).collect(),
            (0..m).filter(|&i| data.labels[i] > 0.0).collect(),
        ],
        Task::Regression => vec![(0..m).collect()],
    };
    let quotas = stratified_quotas(&groups.iter().map(Vec::len).collect::<Vec<_>>(), n1);
    let mut first = Vec::with_capacity(n1);
    let mut second = Vec::with_capacity(m - n1);
    for (mut group, quota) in groups.into_iter().zip(quotas) {
        group.shuffle(&mut rng);
        first.extend_from_slice(&group[..quota]);
        second.extend_from_slice(&group[quota..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

/// Splits `total` across groups proportionally to their sizes (largest
/// remainder, ties to the earlier group).
pub(crate) fn stratified_quotas(sizes: &[usize], total: usize) -> Vec<usize> {
    let m: usize = sizes.iter().sum();
    let mut quotas: Vec<usize> = sizes.iter().map(|&n| n * total / m).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // remainder of n*total/m, compared exactly in integers
    order.sort_by(|&a, &b| ((sizes[b] * total) % m).cmp(&((sizes[a] * total) % m)).then(a.cmp(&b)));
    let mut left = total - assigned;
    for &g in order.iter().cycle().take(sizes.len() * 2) {
        if left == 0 {
            break;
        }
        if quotas[g] < sizes[g] {
            quotas[g] += 1;
            left -= 1;
        }
    }
    quotas
}

pub fn split_sample(data: &DataSet, ratio: f64, seed: u64) -> Result<(DataSet, DataSet)> {
    let (a, b) = split_indices(data, ratio, seed)?;
    Ok((data.subset(&a), data.subset(&b)))
}

/// First-stage predictors, one per kernel, plus the points they expand over.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageOne {
    pub specs: Vec<KernelSpec>,
    pub bases: Vec<BaseHypothesis>,
    pub support: DMatrix<f64>,
    pub task: Task,
}

impl StageOne {
    /// Trains `h_k` on `sample` for every spec: KRR (λ = `base_reg`) for
    /// regression, C-SVM (C = `base_reg`) for classification. Kernels are
    /// trained independently in parallel.
    pub fn train(sample: &DataSet, specs: &[KernelSpec], base_reg: f64) -> Result<Self> {
        Self::train_with(sample, specs, &vec![base_reg; specs.len()])
    }

    /// Like [`StageOne::train`] with a separate regularization value per kernel.
    pub fn train_with(sample: &DataSet, specs: &[KernelSpec], regs: &[f64]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::domain("kernel set is empty"));
        }
        if regs.len() != specs.len() {
            return Err(Error::shape(format!("{} regularization values for {} kernels", regs.len(), specs.len())));
        }
        let bases = specs
            .par_iter()
            .zip(regs.par_iter())
            .map(|(spec, &reg)| {
                let k = spec.gram(&sample.features)?;
                train_base(&k, sample, reg).map_err(|e| e.in_kernel(spec.id))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StageOne {
            specs: specs.to_vec(),
            bases,
            support: sample.features.clone(),
            task: sample.task,
        })
    }

    /// Column `k` holds `h_k` evaluated at the rows of `x`.
    pub fn predictions(&self, x: &DMatrix<f64>) -> Result<PredictionMatrix> {
        if x.ncols() != self.support.ncols() {
            return Err(Error::shape(format!(
                "model expects {} features, got {}",
                self.support.ncols(),
                x.ncols()
            )));
        }
        let cols = self
            .specs
            .par_iter()
            .zip(self.bases.par_iter())
            .map(|(spec, h)| {
                let cross = spec.matrix(x, &self.support)?;
                predict(h, &cross)
            })
            .collect::<Result<Vec<_>>>()?;
        PredictionMatrix::from_columns(&cols)
    }
}

/// KRR (λ = `reg`) for regression, C-SVM (C = `reg`) for classification.
pub fn train_base(k: &KernelMatrix, sample: &DataSet, reg: f64) -> Result<BaseHypothesis> {
    match sample.task {
        Task::Regression => train_krr(k, &sample.labels, reg),
        Task::Classification => train_svm(k, &sample.labels, reg),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub stage_one: StageOne,
    pub weights: CombinerWeights,
    /// Indices (into the training set) of the first-stage sample.
    pub stage_one_indices: Vec<usize>,
    /// Indices of the second-stage sample.
    pub stage_two_indices: Vec<usize>,
}

impl EnsembleModel {
    pub fn specs(&self) -> &[KernelSpec] {
        &self.stage_one.specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub norm: WeightNorm,
    pub cap: f64,
    pub base_reg: f64,
    pub ratio: f64,
    pub seed: u64,
}

pub fn loss_for(task: Task) -> Loss {
    match task {
        Task::Classification => Loss::Hinge,
        Task::Regression => Loss::Square,
    }
}

/// Two-stage training: base predictors on the first part of a split, mixture
/// weights on the second.
pub fn train_ekp(data: &DataSet, specs: &[KernelSpec], config: &EnsembleConfig) -> Result<EnsembleModel> {
    let (first, second) = split_indices(data, config.ratio, config.seed)?;
    if first.iter().any(|i| second.binary_search(i).is_ok()) {
        return Err(Error::numeric("stage samples overlap"));
    }
    let stage_one = StageOne::train(&data.subset(&first), specs, config.base_reg)?;
    let part2 = data.subset(&second);
    let preds = stage_one.predictions(&part2.features)?;
    let weights = fit_combiner(&preds, &part2.labels, config.norm, config.cap, loss_for(data.task))?;
    Ok(EnsembleModel {
        stage_one,
        weights,
        stage_one_indices: first,
        stage_two_indices: second,
    })
}

/// Ensemble scores `Σ_k µ_k h_k(x)` for the rows of `x`.
pub fn predict_ekp(model: &EnsembleModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let preds = model.stage_one.predictions(x)?;
    predict_combination(&model.weights, &preds)
}

fn check_block_inputs(mu: &[f64], y: &DVector<f64>, kernels: &[KernelMatrix]) -> Result<usize> {
    if kernels.is_empty() || mu.len() != kernels.len() {
        return Err(Error::shape(format!("{} weights for {} kernels", mu.len(), kernels.len())));
    }
    let m = y.len();
    for k in kernels {
        if k.require_square()? != m {
            return Err(Error::shape(format!("kernel of size {} for {m} labels", k.nrows())));
        }
    }
    Ok(m)
}

/// `Σ_k λ_k α_kᵀK_kα_k + Σ_i loss(Σ_k µ_k (K_kα_k)_i, y_i)`.
pub fn single_stage_objective(
    mu: &[f64],
    alphas: &[DVector<f64>],
    lambdas: &[f64],
    y: &DVector<f64>,
    kernels: &[KernelMatrix],
    loss: Loss,
) -> Result<f64> {
    let m = check_block_inputs(mu, y, kernels)?;
    if alphas.len() != kernels.len() || lambdas.len() != kernels.len() {
        return Err(Error::shape("one dual vector and one λ per kernel required"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::domain(format!("λ_k must be non-negative, got {l}")));
    }
    let mut scores = DVector::zeros(m);
    let mut penalty = 0.0;
    for ((k, a), (w, l)) in kernels.iter().zip(alphas).zip(mu.iter().zip(lambdas)) {
        if a.len() != m {
            return Err(Error::shape("dual vector length differs from sample size"));
        }
        penalty += l * quadratic_form_raw(a.as_slice(), &k.values);
        scores += &k.values * a * *w;
    }
    let fit: f64 = scores.iter().zip(y.iter()).map(|(s, t)| loss.value(*s, *t)).sum();
    Ok(penalty + fit)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleStageSolution {
    pub alphas: Vec<DVector<f64>>,
    pub objective: f64,
}

/// Exact minimiser of the single-stage objective for the square loss at
/// fixed weights.
///
/// Stationarity gives `α_k = (µ_k/λ_k) z` with `(I + Σ_k (µ_k²/λ_k) K_k) z = y`,
/// so one m×m solve covers every block. Kernels with `µ_k ≤ DROP_WEIGHT` get
/// `α_k = 0`.
pub fn solve_single_stage_square(
    mu: &[f64],
    lambdas: &[f64],
    y: &DVector<f64>,
    kernels: &[KernelMatrix],
) -> Result<SingleStageSolution> {
    let m = check_block_inputs(mu, y, kernels)?;
    if lambdas.len() != kernels.len() {
        return Err(Error::shape("one λ per kernel required"));
    }
    if mu.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::domain("weights must be non-negative"));
    }
    let active: Vec<usize> = (0..mu.len()).filter(|&k| mu[k] > DROP_WEIGHT).collect();
    for &k in &active {
        if !(lambdas[k] > 0.0) {
            return Err(Error::domain(format!("λ_{} must be positive for a weighted kernel", k + 1)));
        }
    }
    let mut alphas = vec![DVector::zeros(m); mu.len()];
    if active.is_empty() {
        return Ok(SingleStageSolution {
            alphas,
            objective: y.norm_squared(),
        });
    }
    let coeffs: Vec<f64> = active.iter().map(|&k| mu[k] * mu[k] / lambdas[k]).collect();
    let subset: Vec<KernelMatrix> = active.iter().map(|&k| kernels[k].clone()).collect();
    let combined = combine_kernels(&coeffs, &subset)?;
    let z = crate::learners::krr::solve_shifted(&combined.values, 1.0, y)?;
    for &k in &active {
        alphas[k] = &z * (mu[k] / lambdas[k]);
    }
    let objective = single_stage_objective(mu, &alphas, lambdas, y, kernels, Loss::Square)?;
    Ok(SingleStageSolution { alphas, objective })
}

/// Gradient of the square-loss single-stage objective with respect to each α_k.
pub fn single_stage_square_gradient(
    mu: &[f64],
    alphas: &[DVector<f64>],
    lambdas: &[f64],
    y: &DVector<f64>,
    kernels: &[KernelMatrix],
) -> Result<Vec<DVector<f64>>> {
    check_block_inputs(mu, y, kernels)?;
    let mut resid = -y.clone();
    for ((k, a), w) in kernels.iter().zip(alphas).zip(mu) {
        resid += &k.values * a * *w;
    }
    Ok(kernels
        .iter()
        .zip(alphas)
        .zip(mu.iter().zip(lambdas))
        .map(|((k, a), (w, l))| &k.values * (a * (2.0 * l) + &resid * (2.0 * w)))
        .collect())
}

/// Both sides of the one-stage equivalence at fixed weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Report {
    pub mu: Vec<f64>,
    pub norm: WeightNorm,
    pub lambda: f64,
    /// Single-stage ensemble optimum with `λ_k = λ µ_k`.
    pub obj_ekp: f64,
    /// Kernel ridge optimum on `K_µ = Σ µ_k K_k` with `λ`.
    pub obj_mkl: f64,
    pub rel_gap: f64,
}

/// Solves both problems at fixed `µ ∈ Δ_q` (square loss) and reports the gap.
pub fn verify_prop2(
    mu: &[f64],
    norm: WeightNorm,
    lambda: f64,
    y: &DVector<f64>,
    kernels: &[KernelMatrix],
) -> Result<Prop2Report> {
    check_block_inputs(mu, y, kernels)?;
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("λ must be positive, got {lambda}")));
    }
    if mu.iter().any(|w| *w < -1e-9) {
        return Err(Error::domain("weights must be non-negative"));
    }
    let q = norm.q();
    let total: f64 = mu.iter().map(|w| w.max(0.0).powf(q)).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("Σ µ_k^{q} = {total}, expected 1")));
    }
    let mu: Vec<f64> = mu.iter().map(|w| w.max(0.0)).collect();

    let lambdas: Vec<f64> = mu.iter().map(|w| lambda * w).collect();
    let ekp = solve_single_stage_square(&mu, &lambdas, y, kernels)?;

    let combined = combine_kernels(&mu, kernels)?;
    let h = train_krr(&combined, y, lambda)?;
    let obj_mkl = krr_objective(&combined, y, lambda, &h.alpha)?;

    Ok(Prop2Report {
        rel_gap: (ekp.objective - obj_mkl).abs() / (1.0 + obj_mkl.abs()),
        mu,
        norm,
        lambda,
        obj_ekp: ekp.objective,
        obj_mkl,
    })
}
