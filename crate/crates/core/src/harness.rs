//! Five-fold rotation protocol: three folds train, one validates, one tests.
//! Hyperparameters (the weight cap, and the split ratio for ensembles) are
//! chosen on the validation fold, then the chosen configuration is retrained
//! on the training folds and scored on the test fold.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{fit_combiner, predict_combination, WeightNorm};
use crate::data::{DataSet, Task};
use crate::ensemble::{loss_for, split_indices, train_base, StageOne};
use crate::learners::predict;
use crate::error::{Error, Result};
use crate::kernel::{gaussian_grid, KernelMatrix, KernelSpec};
use crate::mkl::{predict_mkl, train_mkl, MklMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "unif")]
    Unif,
    #[serde(rename = "os-svm")]
    OsSvm,
    #[serde(rename = "os-krr")]
    OsKrr,
    #[serde(rename = "align")]
    Align,
    #[serde(rename = "alignf")]
    Alignf,
    #[serde(rename = "l1-ens")]
    L1Ens,
    #[serde(rename = "l2-ens")]
    L2Ens,
}

pub const ALL_METHODS: [Method; 7] = [
    Method::Unif,
    Method::OsSvm,
    Method::OsKrr,
    Method::Align,
    Method::Alignf,
    Method::L1Ens,
    Method::L2Ens,
];

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Unif => "unif",
            Method::OsSvm => "os-svm",
            Method::OsKrr => "os-krr",
            Method::Align => "align",
            Method::Alignf => "alignf",
            Method::L1Ens => "l1-ens",
            Method::L2Ens => "l2-ens",
        }
    }

    pub fn mkl(self) -> Option<MklMethod> {
        match self {
            Method::Unif => Some(MklMethod::Unif),
            Method::OsSvm => Some(MklMethod::OsSvm),
            Method::OsKrr => Some(MklMethod::OsKrr),
            Method::Align => Some(MklMethod::Align),
            Method::Alignf => Some(MklMethod::Alignf),
            Method::L1Ens | Method::L2Ens => None,
        }
    }

    pub fn ensemble_norm(self) -> Option<WeightNorm> {
        match self {
            Method::L1Ens => Some(WeightNorm::L1),
            Method::L2Ens => Some(WeightNorm::L2),
            _ => None,
        }
    }

    /// Default comparison set for a task (the one-stage method matching it).
    pub fn defaults(task: Task) -> Vec<Method> {
        let one_stage = match task {
            Task::Classification => Method::OsSvm,
            Task::Regression => Method::OsKrr,
        };
        vec![Method::Unif, one_stage, Method::Align, Method::Alignf, Method::L1Ens, Method::L2Ens]
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_METHODS
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVConfig {
    pub n_folds: usize,
    pub methods: Vec<Method>,
    pub gamma_min: i32,
    pub gamma_max: i32,
    pub cap_grid: Vec<f64>,
    pub ratio_grid: Vec<f64>,
    /// C for SVM-based learners, λ for KRR-based ones.
    pub base_reg: f64,
    pub seed: u64,
    pub task: Task,
    /// z-score features with training-fold statistics.
    pub standardize: bool,
    /// When set, each ensemble base learner picks its own C or λ from this
    /// grid by its individual validation metric instead of using `base_reg`.
    #[serde(default)]
    pub per_kernel_reg: Option<Vec<f64>>,
}

impl CVConfig {
    pub fn new(task: Task, gamma_min: i32, gamma_max: i32, seed: u64) -> Self {
        CVConfig {
            n_folds: 5,
            methods: Method::defaults(task),
            gamma_min,
            gamma_max,
            cap_grid: (-4..=4).map(|e| 2f64.powi(e)).collect(),
            ratio_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            base_reg: 1.0,
            seed,
            task,
            standardize: true,
            per_kernel_reg: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 3 {
            return Err(Error::domain(format!("need at least 3 folds, got {}", self.n_folds)));
        }
        if self.methods.is_empty() || self.cap_grid.is_empty() || self.ratio_grid.is_empty() {
            return Err(Error::domain("methods and grids must be non-empty"));
        }
        if let Some(c) = self.cap_grid.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::domain(format!("cap grid values must be positive, got {c}")));
        }
        if let Some(r) = self.ratio_grid.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::domain(format!("split ratios must lie in (0, 1), got {r}")));
        }
        if let Some(grid) = &self.per_kernel_reg {
            if grid.is_empty() || grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return Err(Error::domain("per-kernel regularization grid must be non-empty and positive"));
            }
        }
        if !(self.base_reg > 0.0) {
            return Err(Error::domain("base regularization must be positive"));
        }
        if self.gamma_min > self.gamma_max {
            return Err(Error::domain("gamma_min exceeds gamma_max"));
        }
        if self.task == Task::Regression && self.methods.contains(&Method::OsSvm) {
            return Err(Error::domain("os-svm needs a classification task"));
        }
        Ok(())
    }
}

/// A point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub cap: f64,
    /// Split ratio, for ensemble methods only.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub method: Method,
    pub candidate: Candidate,
    pub metric: f64,
}

/// Best candidate per method by validation metric. Ties go to the smallest
/// cap, then the smallest ratio; non-finite metrics never win.
pub fn select_hyperparameters(scores: &[ValidationScore]) -> BTreeMap<Method, Candidate> {
    let mut best: BTreeMap<Method, (f64, Candidate)> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.metric.is_finite()) {
        let better = match best.get(&s.method) {
            None => true,
            Some((metric, cur)) => {
                let key = |c: &Candidate| (c.cap, c.ratio.unwrap_or(0.0));
                s.metric < *metric
                    || (s.metric == *metric && key(&s.candidate).partial_cmp(&key(cur)) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best.insert(s.method, (s.metric, s.candidate));
        }
    }
    best.into_iter().map(|(m, (_, c))| (m, c)).collect()
}

/// Fraction of points whose sign disagrees with the label; a zero score
/// counts as +1.
pub fn misclassification_error(scores: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if scores.len() != y.len() || y.is_empty() {
        return Err(Error::shape("scores and labels must be non-empty and of equal length"));
    }
    let wrong = scores
        .iter()
        .zip(y.iter())
        .filter(|(s, t)| (if **s >= 0.0 { 1.0 } else { -1.0 }) != **t)
        .count();
    Ok(wrong as f64 / y.len() as f64)
}

pub fn rmse(predictions: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if predictions.len() != y.len() || y.is_empty() {
        return Err(Error::shape("predictions and targets must be non-empty and of equal length"));
    }
    Ok(((predictions - y).norm_squared() / y.len() as f64).sqrt())
}

fn metric(task: Task, scores: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    match task {
        Task::Classification => misclassification_error(scores, y),
        Task::Regression => rmse(scores, y),
    }
}

/// Disjoint folds covering every index, stratified by label for
/// classification. Each fold is sorted.
pub fn make_folds(data: &DataSet, n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds < 3 {
        return Err(Error::domain(format!("need at least 3 folds, got {n_folds}")));
    }
    if data.len() < 2 * n_folds {
        return Err(Error::domain(format!(
            "{} points cannot fill {n_folds} folds of at least 2",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match data.task {
        Task::Classification => vec![
            (0..data.len()).filter(|&i| data.labels[i] < 0.0).collect(),
            (0..data.len()).filter(|&i| data.labels[i] > 0.0).collect(),
        ],
        Task::Regression => vec![(0..data.len()).collect()],
    };
    let mut folds = vec![Vec::new(); n_folds];
    let mut slot = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[slot % n_folds].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Index roles for one rotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Test = fold `i`, validation = fold `i + 1 mod n`, training = the rest.
pub fn rotation_roles(folds: &[Vec<usize>], rotation: usize) -> Roles {
    let n = folds.len();
    let test = folds[rotation % n].clone();
    let validation = folds[(rotation + 1) % n].clone();
    let mut train: Vec<usize> = (0..n)
        .filter(|&f| f != rotation % n && f != (rotation + 1) % n)
        .flat_map(|f| folds[f].iter().copied())
        .collect();
    train.sort_unstable();
    Roles { train, validation, test }
}

/// Column means and scales from `reference`; constant columns keep scale 1.
fn standardizer(reference: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = reference.nrows() as f64;
    (0..reference.ncols())
        .map(|j| {
            let col = reference.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        })
        .unzip()
}

fn apply_standardizer(x: &DMatrix<f64>, means: &[f64], scales: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - means[j]) / scales[j])
}

/// Outcome of one rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationOutcome {
    pub rotation: usize,
    pub selections: BTreeMap<Method, Candidate>,
    pub validation: BTreeMap<Method, f64>,
    pub test: BTreeMap<Method, f64>,
    /// Seconds spent per method (selection plus final fit).
    #[serde(skip)]
    pub seconds: BTreeMap<Method, f64>,
}

/// Training sample and held-out feature blocks prepared for one rotation.
struct Prepared {
    train: DataSet,
    validation: DataSet,
    test: DataSet,
}

fn prepare(data: &DataSet, roles: &Roles, standardize: bool) -> Prepared {
    let mut train = data.subset(&roles.train);
    let mut validation = data.subset(&roles.validation);
    let mut test = data.subset(&roles.test);
    if standardize {
        let (means, scales) = standardizer(&train.features);
        train.features = apply_standardizer(&train.features, &means, &scales);
        validation.features = apply_standardizer(&validation.features, &means, &scales);
        test.features = apply_standardizer(&test.features, &means, &scales);
    }
    Prepared { train, validation, test }
}

/// Kernel blocks shared by the kernel-learning baselines.
struct KernelBlocks {
    gram: Vec<KernelMatrix>,
    validation: Vec<KernelMatrix>,
    test: Vec<KernelMatrix>,
}

fn kernel_blocks(specs: &[KernelSpec], p: &Prepared) -> Result<KernelBlocks> {
    let per_spec = specs
        .par_iter()
        .map(|s| {
            Ok((
                s.gram(&p.train.features)?,
                s.matrix(&p.validation.features, &p.train.features)?,
                s.matrix(&p.test.features, &p.train.features)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut blocks = KernelBlocks {
        gram: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (g, v, t) in per_spec {
        blocks.gram.push(g);
        blocks.validation.push(v);
        blocks.test.push(t);
    }
    Ok(blocks)
}

/// Cap handed to a kernel-learning trainer. The one-stage SVM constrains
/// `Σ µ_k Tr K_k`, so its grid value is multiplied by the training size to
/// stay on the same scale as `Σ µ_k` for unit-diagonal kernels.
fn effective_cap(method: MklMethod, cap: f64, m: usize) -> f64 {
    match method {
        MklMethod::OsSvm => cap * m as f64,
        _ => cap,
    }
}

fn rotation_seed(seed: u64, rotation: usize) -> u64 {
    seed.wrapping_add((rotation as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Everything an ensemble fit inside one rotation depends on.
struct EnsembleRun<'a> {
    prepared: &'a Prepared,
    specs: &'a [KernelSpec],
    config: &'a CVConfig,
    seed: u64,
}

impl EnsembleRun<'_> {
    /// Per-kernel regularization: `base_reg` everywhere, or for each kernel
    /// the grid value whose base learner scores best on the validation fold
    /// (first in grid order on ties).
    fn regs(&self, part1: &DataSet) -> Result<Vec<f64>> {
        let Some(grid) = &self.config.per_kernel_reg else {
            return Ok(vec![self.config.base_reg; self.specs.len()]);
        };
        let validation = &self.prepared.validation;
        self.specs
            .par_iter()
            .map(|spec| {
                let k = spec.gram(&part1.features)?;
                let cross = spec.matrix(&validation.features, &part1.features)?;
                let mut best = (f64::INFINITY, grid[0]);
                for &reg in grid {
                    let h = train_base(&k, part1, reg).map_err(|e| e.in_kernel(spec.id))?;
                    let v = metric(self.config.task, &predict(&h, &cross)?, &validation.labels)?;
                    if v < best.0 {
                        best = (v, reg);
                    }
                }
                Ok(best.1)
            })
            .collect()
    }

    /// Ensemble scores on `target` for each cap, at one split ratio.
    fn scores(&self, norm: WeightNorm, ratio: f64, caps: &[f64], target: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        let train = &self.prepared.train;
        let (first, second) = split_indices(train, ratio, self.seed)?;
        let part1 = train.subset(&first);
        let stage_one = StageOne::train_with(&part1, self.specs, &self.regs(&part1)?)?;
        let part2 = train.subset(&second);
        let preds = stage_one.predictions(&part2.features)?;
        let target_preds = stage_one.predictions(target)?;
        caps.iter()
            .map(|&cap| {
                let w = fit_combiner(&preds, &part2.labels, norm, cap, loss_for(self.config.task))?;
                predict_combination(&w, &target_preds)
            })
            .collect()
    }
}

fn grid_error(method: Method, err: &Error) {
    log::warn!("{method}: grid point failed: {err}");
}

/// Selection on the validation fold, then the test metric of the chosen
/// configuration. Test indices are only touched after selection.
pub fn run_rotation(data: &DataSet, config: &CVConfig, folds: &[Vec<usize>], rotation: usize) -> Result<RotationOutcome> {
    let roles = rotation_roles(folds, rotation);
    let prepared = prepare(data, &roles, config.standardize);
    if config.task == Task::Classification {
        let pos = prepared.train.positives();
        if pos == 0 || pos == prepared.train.len() {
            return Err(Error::domain(format!("rotation {rotation}: training folds hold a single class")));
        }
    }
    let specs = gaussian_grid(config.gamma_min, config.gamma_max)?;
    let needs_blocks = config.methods.iter().any(|m| m.mkl().is_some());
    let blocks = if needs_blocks { Some(kernel_blocks(&specs, &prepared)?) } else { None };
    let seed = rotation_seed(config.seed, rotation);
    let m_train = prepared.train.len();
    let run = EnsembleRun {
        prepared: &prepared,
        specs: &specs,
        config,
        seed,
    };

    let mut scores = Vec::new();
    let mut seconds = BTreeMap::new();
    for &method in &config.methods {
        let start = Instant::now();
        if let Some(mk) = method.mkl() {
            let b = blocks.as_ref().expect("kernel blocks prepared");
            for &cap in &config.cap_grid {
                let metric_value = train_mkl(mk, &b.gram, &prepared.train.labels, config.task, config.base_reg, effective_cap(mk, cap, m_train))
                    .and_then(|model| predict_mkl(&model, &b.validation))
                    .and_then(|s| metric(config.task, &s, &prepared.validation.labels));
                let metric_value = metric_value.unwrap_or_else(|e| {
                    grid_error(method, &e);
                    f64::INFINITY
                });
                scores.push(ValidationScore {
                    method,
                    candidate: Candidate { cap, ratio: None },
                    metric: metric_value,
                });
            }
        } else if let Some(norm) = method.ensemble_norm() {
            for &ratio in &config.ratio_grid {
                match run.scores(norm, ratio, &config.cap_grid, &prepared.validation.features) {
                    Ok(per_cap) => {
                        for (&cap, s) in config.cap_grid.iter().zip(per_cap) {
                            scores.push(ValidationScore {
                                method,
                                candidate: Candidate { cap, ratio: Some(ratio) },
                                metric: metric(config.task, &s, &prepared.validation.labels)?,
                            });
                        }
                    }
                    Err(e) => grid_error(method, &e),
                }
            }
        }
        seconds.insert(method, start.elapsed().as_secs_f64());
    }

    let selections = select_hyperparameters(&scores);
    let mut validation = BTreeMap::new();
    let mut test = BTreeMap::new();
    for &method in &config.methods {
        let start = Instant::now();
        let chosen = *selections.get(&method).ok_or_else(|| {
            Error::numeric(format!("{method}: no grid point produced a finite validation metric"))
        })?;
        let best = scores
            .iter()
            .find(|s| s.method == method && s.candidate == chosen)
            .map(|s| s.metric)
            .unwrap_or(f64::NAN);
        validation.insert(method, best);
        let test_scores = if let Some(mk) = method.mkl() {
            let b = blocks.as_ref().expect("kernel blocks prepared");
            let model = train_mkl(mk, &b.gram, &prepared.train.labels, config.task, config.base_reg, effective_cap(mk, chosen.cap, m_train))?;
            predict_mkl(&model, &b.test)?
        } else {
            let norm = method.ensemble_norm().expect("ensemble method");
            let ratio = chosen.ratio.expect("ensemble candidates carry a ratio");
            run.scores(norm, ratio, &[chosen.cap], &prepared.test.features)?
                .pop()
                .expect("one cap requested")
        };
        test.insert(method, metric(config.task, &test_scores, &prepared.test.labels)?);
        *seconds.entry(method).or_insert(0.0) += start.elapsed().as_secs_f64();
    }
    Ok(RotationOutcome {
        rotation,
        selections,
        validation,
        test,
        seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub mean: f64,
    /// Sample standard deviation over the usable rotations.
    pub std: f64,
    /// Test metric per rotation; `None` for flagged rotations.
    pub per_rotation: Vec<Option<f64>>,
    pub selections: Vec<Option<Candidate>>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub config: CVConfig,
    pub n: usize,
    pub metric: String,
    pub fold_scheme: String,
    pub methods: Vec<MethodResult>,
    /// Rotations skipped because a training fold held a single class.
    pub flagged_rotations: Vec<usize>,
}

impl CVResult {
    pub fn get(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == method)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// The full protocol: every rotation (in parallel), merged by rotation index.
pub fn run_cv_experiment(data: &DataSet, config: &CVConfig) -> Result<CVResult> {
    config.validate()?;
    if data.task != config.task {
        return Err(Error::domain(format!("dataset task {} differs from config task {}", data.task, config.task)));
    }
    let folds = make_folds(data, config.n_folds, config.seed)?;
    let outcomes: Vec<Result<RotationOutcome>> = (0..config.n_folds)
        .into_par_iter()
        .map(|r| run_rotation(data, config, &folds, r))
        .collect();
    let mut flagged = Vec::new();
    let mut usable = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => usable.push(o),
            Err(Error::Domain(msg)) if msg.contains("single class") => {
                log::warn!("{msg}; rotation excluded");
                flagged.push(r);
            }
            Err(e) => return Err(e),
        }
    }
    if usable.is_empty() {
        return Err(Error::domain("every rotation was excluded"));
    }
    let methods = config
        .methods
        .iter()
        .map(|&method| {
            let mut per_rotation = vec![None; config.n_folds];
            let mut selections = vec![None; config.n_folds];
            let mut seconds = 0.0;
            for o in &usable {
                per_rotation[o.rotation] = o.test.get(&method).copied();
                selections[o.rotation] = o.selections.get(&method).copied();
                seconds += o.seconds.get(&method).copied().unwrap_or(0.0);
            }
            let values: Vec<f64> = per_rotation.iter().flatten().copied().collect();
            let (mean, std) = mean_std(&values);
            MethodResult {
                method,
                mean,
                std,
                per_rotation,
                selections,
                seconds,
            }
        })
        .collect();
    Ok(CVResult {
        config: config.clone(),
        n: data.len(),
        metric: match config.task {
            Task::Classification => "misclassification".into(),
            Task::Regression => "rmse".into(),
        },
        fold_scheme: "test = fold i, validation = fold (i+1) mod n, training = remaining folds".into(),
        methods,
        flagged_rotations: flagged,
    })
}
