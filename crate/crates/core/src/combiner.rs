//! Second-stage fit of non-negative mixture weights over base predictions,
//! with the weight norm capped: `µ ≥ 0, ‖µ‖_q ≤ cap`, no intercept.
//!
//! Square loss is minimised by accelerated projected gradient followed by an
//! exact active-set polish. Hinge loss is minimised through a sequence of
//! Huber-smoothed surrogates (smoothing width shrinking by 10 each stage),
//! each solved by accelerated projected gradient, keeping the best iterate
//! under the true hinge objective.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{project_capped_simplex, project_orthant_ball};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Hinge,
    Square,
}

impl Loss {
    pub fn value(self, score: f64, label: f64) -> f64 {
        match self {
            Loss::Hinge => (1.0 - label * score).max(0.0),
            Loss::Square => (score - label).powi(2),
        }
    }
}

/// Norm order `q` of the weight constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightNorm {
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
}

impl WeightNorm {
    pub fn q(self) -> f64 {
        match self {
            WeightNorm::L1 => 1.0,
            WeightNorm::L2 => 2.0,
        }
    }

    pub fn norm(self, mu: &[f64]) -> f64 {
        match self {
            WeightNorm::L1 => mu.iter().map(|x| x.abs()).sum(),
            WeightNorm::L2 => mu.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    pub fn project(self, v: &[f64], cap: f64) -> Vec<f64> {
        match self {
            WeightNorm::L1 => project_capped_simplex(v, cap),
            WeightNorm::L2 => project_orthant_ball(v, cap),
        }
    }
}

impl FromStr for WeightNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(WeightNorm::L1),
            "2" => Ok(WeightNorm::L2),
            other => Err(Error::domain(format!("weight norm must be 1 or 2, got '{other}'"))),
        }
    }
}

impl fmt::Display for WeightNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.q())
    }
}

/// `m₂ × p` matrix of base-predictor outputs, entry `(i, k) = h_k(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub values: DMatrix<f64>,
}

impl PredictionMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::shape("prediction matrix needs at least one column"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("prediction matrix has non-finite entries"));
        }
        Ok(PredictionMatrix { values })
    }

    /// Stacks prediction vectors as columns.
    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::shape("prediction matrix needs at least one column"));
        }
        let m = columns[0].len();
        if columns.iter().any(|c| c.len() != m) {
            return Err(Error::shape("prediction columns differ in length"));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerWeights {
    pub mu: Vec<f64>,
    pub norm: WeightNorm,
    pub cap: f64,
    pub loss: Loss,
}

/// `Σ_i loss(µᵀP_i, y_i)`.
pub fn combiner_objective(p: &PredictionMatrix, y: &DVector<f64>, mu: &[f64], loss: Loss) -> Result<f64> {
    check_shapes(p, y, mu)?;
    let scores = &p.values * DVector::from_column_slice(mu);
    Ok(scores.iter().zip(y.iter()).map(|(s, t)| loss.value(*s, *t)).sum())
}

/// `Pµ`.
pub fn predict_combination(weights: &CombinerWeights, p: &PredictionMatrix) -> Result<DVector<f64>> {
    if weights.mu.len() != p.ncols() {
        return Err(Error::shape(format!(
            "{} weights for {} prediction columns",
            weights.mu.len(),
            p.ncols()
        )));
    }
    Ok(&p.values * DVector::from_column_slice(&weights.mu))
}

fn check_shapes(p: &PredictionMatrix, y: &DVector<f64>, mu: &[f64]) -> Result<()> {
    if p.nrows() != y.len() {
        return Err(Error::shape(format!("{} prediction rows for {} labels", p.nrows(), y.len())));
    }
    if p.ncols() != mu.len() {
        return Err(Error::shape(format!("{} weights for {} prediction columns", mu.len(), p.ncols())));
    }
    Ok(())
}

/// Minimises `Σ_i loss(µᵀP_i, y_i)` over `{µ ≥ 0, ‖µ‖_q ≤ cap}`.
pub fn fit_combiner(
    p: &PredictionMatrix,
    y: &DVector<f64>,
    norm: WeightNorm,
    cap: f64,
    loss: Loss,
) -> Result<CombinerWeights> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(Error::domain(format!("weight cap must be positive, got {cap}")));
    }
    check_shapes(p, y, &vec![0.0; p.ncols()])?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("labels have non-finite entries"));
    }
    if loss == Loss::Hinge && y.iter().any(|v| *v != 1.0 && *v != -1.0) {
        return Err(Error::domain("hinge loss needs -1/+1 labels"));
    }
    let mu = match loss {
        Loss::Square => fit_square(p, y, norm, cap),
        Loss::Hinge => fit_hinge(p, y, norm, cap),
    };
    Ok(CombinerWeights { mu, norm, cap, loss })
}

const MAX_ITER: usize = 10_000;

/// Quadratic `µᵀAµ - 2bᵀµ + c` in weight space.
struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl Quadratic {
    fn value(&self, mu: &DVector<f64>) -> f64 {
        (mu.dot(&(&self.a * mu)) - 2.0 * self.b.dot(mu) + self.c).max(0.0)
    }

    fn grad(&self, mu: &DVector<f64>) -> DVector<f64> {
        (&self.a * mu - &self.b) * 2.0
    }
}

fn fit_square(p: &PredictionMatrix, y: &DVector<f64>, norm: WeightNorm, cap: f64) -> Vec<f64> {
    let pt = p.values.transpose();
    let quad = Quadratic {
        a: &pt * &p.values,
        b: &pt * y,
        c: y.norm_squared(),
    };
    let dim = p.ncols();
    let start = DVector::zeros(dim);
    let project = |v: &DVector<f64>| DVector::from_vec(norm.project(v.as_slice(), cap));
    let lipschitz0 = 2.0 * quad.a.diagonal().max().max(1e-12);
    let mu = accelerated_projected_gradient(
        start,
        |m| quad.value(m),
        |m| quad.grad(m),
        project,
        lipschitz0,
        MAX_ITER,
        1e-15,
    );
    let polished = polish_square(&quad, &mu, norm, cap);
    let best = if quad.value(&polished) <= quad.value(&mu) { polished } else { mu };
    if quad.value(&best) <= quad.c {
        best.as_slice().to_vec()
    } else {
        vec![0.0; dim]
    }
}

/// Solves the KKT system on the current support exactly (cap active or not)
/// and keeps the result only when it is feasible.
fn polish_square(quad: &Quadratic, mu: &DVector<f64>, norm: WeightNorm, cap: f64) -> DVector<f64> {
    let dim = mu.len();
    let scale = mu.amax().max(cap);
    let support: Vec<usize> = (0..dim).filter(|&k| mu[k] > 1e-10 * scale).collect();
    if support.is_empty() {
        return mu.clone();
    }
    let s = support.len();
    let a_ss = DMatrix::from_fn(s, s, |i, j| quad.a[(support[i], support[j])]);
    let b_s = DVector::from_fn(s, |i, _| quad.b[support[i]]);
    let mut best = mu.clone();
    let mut best_val = quad.value(mu);
    let mut consider = |sol: Option<DVector<f64>>| {
        let Some(sol) = sol else { return };
        if sol.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return;
        }
        let mut full = DVector::zeros(dim);
        for (i, &k) in support.iter().enumerate() {
            full[k] = sol[i];
        }
        if norm.norm(full.as_slice()) > cap * (1.0 + 1e-12) {
            return;
        }
        let val = quad.value(&full);
        if val < best_val {
            best_val = val;
            best = full;
        }
    };
    consider(a_ss.clone().lu().solve(&b_s));
    if norm == WeightNorm::L1 {
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        kkt.view_mut((0, 0), (s, s)).copy_from(&a_ss);
        for i in 0..s {
            kkt[(i, s)] = 1.0;
            kkt[(s, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(s + 1);
        rhs.rows_mut(0, s).copy_from(&b_s);
        rhs[s] = cap;
        consider(kkt.lu().solve(&rhs).map(|v| v.rows(0, s).into_owned()));
    }
    best
}

/// FISTA with backtracking and function-value restart. Returns the best
/// iterate seen.
fn accelerated_projected_gradient<F, G, P>(
    start: DVector<f64>,
    f: F,
    grad: G,
    project: P,
    lipschitz0: f64,
    max_iter: usize,
    tol: f64,
) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = project(&start);
    let mut fx = f(&x);
    let mut best = x.clone();
    let mut best_f = fx;
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut lip = lipschitz0.max(1e-12);
    let mut stall = 0;
    for _ in 0..max_iter {
        let fy = f(&yk);
        let gy = grad(&yk);
        let mut next;
        loop {
            next = project(&(&yk - &gy * (1.0 / lip)));
            let d = &next - &yk;
            let upper = fy + gy.dot(&d) + 0.5 * lip * d.norm_squared();
            if f(&next) <= upper + 1e-14 * fy.abs().max(1.0) || lip > 1e300 {
                break;
            }
            lip *= 2.0;
        }
        let fnext = f(&next);
        if fnext < best_f {
            best_f = fnext;
            best = next.clone();
        }
        let step = (&next - &x).norm();
        let rel = (fx - fnext).abs() / (1.0 + fx.abs());
        if fnext > fx {
            // restart momentum
            t = 1.0;
            yk = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &next + (&next - &x) * ((t - 1.0) / t_next);
        t = t_next;
        x = next;
        fx = fnext;
        if rel < tol && step <= 100.0 * tol * (1.0 + x.norm()) {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
        lip *= 0.9;
    }
    best
}

fn fit_hinge(p: &PredictionMatrix, y: &DVector<f64>, norm: WeightNorm, cap: f64) -> Vec<f64> {
    let dim = p.ncols();
    // rows pre-multiplied by the label: margin_i = (YP µ)_i
    let yp = DMatrix::from_fn(p.nrows(), dim, |i, k| y[i] * p.values[(i, k)]);
    let ypt = yp.transpose();
    let hinge = |mu: &DVector<f64>| -> f64 { (&yp * mu).iter().map(|s| (1.0 - s).max(0.0)).sum() };
    let spectral = (&ypt * &yp).diagonal().sum().max(1e-12);
    let project = |v: &DVector<f64>| DVector::from_vec(norm.project(v.as_slice(), cap));

    let mut mu = DVector::zeros(dim);
    let mut best = mu.clone();
    let mut best_val = hinge(&mu);
    let mut width = 1.0;
    while width >= 1e-6 {
        let tau = width;
        let smooth = |m: &DVector<f64>| -> f64 {
            (&yp * m)
                .iter()
                .map(|s| {
                    let z = 1.0 - s;
                    if z <= 0.0 {
                        0.0
                    } else if z < tau {
                        z * z / (2.0 * tau)
                    } else {
                        z - 0.5 * tau
                    }
                })
                .sum()
        };
        let smooth_grad = |m: &DVector<f64>| -> DVector<f64> {
            let slopes = (&yp * m).map(|s| {
                let z = 1.0 - s;
                if z <= 0.0 {
                    0.0
                } else if z < tau {
                    z / tau
                } else {
                    1.0
                }
            });
            -(&ypt * slopes)
        };
        mu = accelerated_projected_gradient(mu, smooth, smooth_grad, project, spectral / tau * 1e-3, 1_000, 1e-11);
        let val = hinge(&mu);
        if val < best_val {
            best_val = val;
            best = mu.clone();
        }
        width *= 0.1;
    }
    best.as_slice().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(rows: &[&[f64]]) -> PredictionMatrix {
        PredictionMatrix::new(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn objective_examples() {
        let p = pm(&[&[1.0], &[-1.0]]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(combiner_objective(&p, &y, &[0.0], Loss::Square).unwrap(), 2.0);
        assert_eq!(combiner_objective(&p, &y, &[0.0], Loss::Hinge).unwrap(), 2.0);
        assert_eq!(combiner_objective(&p, &y, &[1.0], Loss::Hinge).unwrap(), 0.0);
    }

    #[test]
    fn prediction_examples() {
        let p = pm(&[&[1.0, -1.0], &[2.0, 0.0]]);
        let w = |mu: Vec<f64>| CombinerWeights {
            mu,
            norm: WeightNorm::L1,
            cap: 1.0,
            loss: Loss::Square,
        };
        assert_eq!(predict_combination(&w(vec![0.5, 0.5]), &p).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(predict_combination(&w(vec![0.0, 1.0]), &p).unwrap().as_slice(), &[-1.0, 0.0]);
        assert_eq!(predict_combination(&w(vec![0.0, 0.0]), &p).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(predict_combination(&w(vec![1.0]), &p).is_err());
    }

    #[test]
    fn tiny_cap_collapses_weights() {
        let p = pm(&[&[1.0, 0.5], &[-1.0, 0.2], &[0.3, 0.9]]);
        let y = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        for loss in [Loss::Square, Loss::Hinge] {
            for norm in [WeightNorm::L1, WeightNorm::L2] {
                let w = fit_combiner(&p, &y, norm, 1e-12, loss).unwrap();
                assert!(norm.norm(&w.mu) <= 1e-12 * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn single_exact_column() {
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = PredictionMatrix::from_columns(std::slice::from_ref(&y)).unwrap();
        let w = fit_combiner(&p, &y, WeightNorm::L1, 1.0, Loss::Square).unwrap();
        assert!((w.mu[0] - 1.0).abs() < 1e-9);
        assert!(combiner_objective(&p, &y, &w.mu, Loss::Square).unwrap() < 1e-16);
    }

    #[test]
    fn opposite_columns_pick_the_right_one() {
        let y = DVector::from_vec(vec![1.0, -1.0, 1.0, 1.0]);
        let p = PredictionMatrix::from_columns(&[y.clone(), -y.clone()]).unwrap();
        for norm in [WeightNorm::L1, WeightNorm::L2] {
            let w = fit_combiner(&p, &y, norm, 1.0, Loss::Square).unwrap();
            assert!((w.mu[0] - 1.0).abs() < 1e-9, "{norm:?}: {:?}", w.mu);
            assert!(w.mu[1].abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let p = pm(&[&[1.0], &[-1.0]]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        assert!(matches!(fit_combiner(&p, &y, WeightNorm::L1, 0.0, Loss::Square), Err(Error::Domain(_))));
        let yr = DVector::from_vec(vec![0.5, -1.0]);
        assert!(matches!(fit_combiner(&p, &yr, WeightNorm::L1, 1.0, Loss::Hinge), Err(Error::Domain(_))));
        assert!(PredictionMatrix::new(DMatrix::from_element(1, 1, f64::NAN)).is_err());
    }
}
