//! Synthetic data whose target is a Gaussian-kernel expansion at one known
//! bandwidth, so a kernel grid has a single best member.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    /// Number of expansion centers in the target.
    pub centers: usize,
    /// Bandwidth `γ` of the generating kernel.
    pub gamma: f64,
    /// Standard deviation of additive target noise (regression).
    pub noise: f64,
    /// Fraction of flipped labels (classification).
    pub flip: f64,
    pub task: Task,
}

impl SyntheticConfig {
    pub fn regression(n: usize) -> Self {
        SyntheticConfig {
            n,
            dim: 2,
            centers: 12,
            gamma: 1.0,
            noise: 0.3,
            flip: 0.0,
            task: Task::Regression,
        }
    }

    pub fn classification(n: usize) -> Self {
        SyntheticConfig {
            flip: 0.05,
            noise: 0.0,
            task: Task::Classification,
            ..Self::regression(n)
        }
    }
}

/// Draws `x ~ N(0, I)` and `f(x) = Σ_j c_j exp(−γ‖x − z_j‖²)` with
/// `z_j ~ N(0, I)`, `c_j ~ N(0, 1)`. Regression targets are `f + noise`;
/// class labels are the sign of `f` about its sample median, with a fraction
/// `flip` inverted.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<DataSet> {
    if config.n < 2 || config.dim == 0 || config.centers == 0 {
        return Err(Error::domain("synthetic data needs n ≥ 2, dim ≥ 1 and at least one center"));
    }
    if !(config.gamma > 0.0) || !(config.noise >= 0.0) || !(0.0..0.5).contains(&config.flip) {
        return Err(Error::domain("synthetic data needs γ > 0, noise ≥ 0 and flip in [0, 0.5)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let centers = DMatrix::from_fn(config.centers, config.dim, |_, _| normal(&mut rng));
    let coeffs = DVector::from_fn(config.centers, |_, _| normal(&mut rng));
    let x = DMatrix::from_fn(config.n, config.dim, |_, _| normal(&mut rng));
    let f = DVector::from_fn(config.n, |i, _| {
        (0..config.centers)
            .map(|j| {
                let d2 = (x.row(i) - centers.row(j)).norm_squared();
                coeffs[j] * (-config.gamma * d2).exp()
            })
            .sum::<f64>()
    });
    let y = match config.task {
        Task::Regression => DVector::from_fn(config.n, |i, _| f[i] + config.noise * normal(&mut rng)),
        Task::Classification => {
            let mut sorted: Vec<f64> = f.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            DVector::from_fn(config.n, |i, _| {
                let label = if f[i] >= median { 1.0 } else { -1.0 };
                if rng.random::<f64>() < config.flip {
                    -label
                } else {
                    label
                }
            })
        }
    };
    DataSet::new(x, y, config.task)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let c = SyntheticConfig::classification(100);
        let a = generate(&c, 3).unwrap();
        let b = generate(&c, 3).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        let pos = a.positives();
        assert!((35..=65).contains(&pos));
        assert!(generate(&SyntheticConfig { flip: 0.6, ..c }, 0).is_err());
    }
}
