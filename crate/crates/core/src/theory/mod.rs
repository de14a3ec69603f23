//! Monte Carlo laboratory for the two-node Gaussian model.
//!
//! Node `i` has features `x_i | y ~ N(μ y, σ² I)` and node `j` has
//! `x_j | y ~ N((aμ + b) y, σ² I)`. The lab compares the separate mean
//! estimator of node `i` with the joint estimator that also uses node `j`,
//! through the ratio `β = estᵀμ / ‖est‖²` and the expected calibration error
//! of the resulting logistic posterior.

mod trials;

pub use trials::{
    run_trials, sweep, sweep_csv, wilson_interval, Frequency, SweepPoint, SweepRow, TrialResult,
    TrialSummary,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::{dot, norm2, sigmoid, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// One label per graph sample, shared by both nodes.
    Shared,
    /// Independent labels for the two nodes.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub d: usize,
    pub n: usize,
    pub a: f64,
    /// Radius of the offset `b`, drawn uniformly on the sphere; 0 gives `b = 0`.
    pub b_norm: f64,
    /// Noise variance; `None` uses `√(d n)`.
    pub sigma2: Option<f64>,
    pub labels: LabelMode,
    /// Divide the posterior exponent by `σ²`.
    pub sigma_aware: bool,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            d: 64,
            n: 4,
            a: 2.66,
            b_norm: 0.0,
            sigma2: None,
            labels: LabelMode::Shared,
            sigma_aware: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWorld {
    pub d: usize,
    pub n: usize,
    pub mu: Vec<f64>,
    pub a: f64,
    pub b: Vec<f64>,
    pub sigma2: f64,
    pub labels: LabelMode,
    pub sigma_aware: bool,
}

/// `(d/n)^{1/4} / 2`, the correlation level above which the joint
/// estimator is guaranteed to help.
pub fn a2_threshold(d: usize, n: usize) -> f64 {
    (d as f64 / n as f64).powf(0.25) / 2.0
}

fn random_direction<R: Rng>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = norm2(&v);
        if norm > 0.0 {
            return v.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}

impl GaussianWorld {
    /// `μ` is a random direction scaled to `‖μ‖² = d`.
    pub fn new(params: &WorldParams, seed: u64) -> Result<Self> {
        let (d, n) = (params.d, params.n);
        if d == 0 || n == 0 {
            return Err(Error::InvalidParams(format!(
                "d and n must be positive, got d={d}, n={n}"
            )));
        }
        let sigma2 = params.sigma2.unwrap_or(((d * n) as f64).sqrt());
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        if !params.a.is_finite() || !(params.b_norm >= 0.0 && params.b_norm.is_finite()) {
            return Err(Error::InvalidParams(
                "a must be finite and b_norm nonnegative".into(),
            ));
        }
        let mu = random_direction(
            d,
            (d as f64).sqrt(),
            &mut rng_for(seed, &[stream::THEORY_WORLD]),
        );
        let b = if params.b_norm > 0.0 {
            random_direction(
                d,
                params.b_norm,
                &mut rng_for(seed, &[stream::THEORY_OFFSET]),
            )
        } else {
            vec![0.0; d]
        };
        Ok(Self {
            d,
            n,
            mu,
            a: params.a,
            b,
            sigma2,
            labels: params.labels,
            sigma_aware: params.sigma_aware,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn mu_j(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.b)
            .map(|(m, b)| self.a * m + b)
            .collect()
    }

    /// `(d/n)^{1/2} ≥ n`, the size condition of the ratio lower bound.
    pub fn size_condition_holds(&self) -> bool {
        (self.d as f64 / self.n as f64).sqrt() >= self.n as f64
    }

    pub fn above_threshold(&self) -> bool {
        self.a * self.a > a2_threshold(self.d, self.n)
    }
}

/// `n` labeled draws at both nodes, one row per graph sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub xi: DenseMatrix,
    pub yi: Vec<f64>,
    pub xj: DenseMatrix,
    pub yj: Vec<f64>,
}

fn sign<R: Rng>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn draw_features<R: Rng>(mean: &[f64], y: f64, sigma: f64, rng: &mut R, out: &mut [f64]) {
    for (o, &m) in out.iter_mut().zip(mean) {
        let e: f64 = rng.sample(StandardNormal);
        *o = m * y + sigma * e;
    }
}

pub fn sample_training_set(world: &GaussianWorld, seed: u64) -> TrainingSet {
    let mut rng = rng_for(seed, &[stream::THEORY_TRAIN]);
    let (n, d) = (world.n, world.d);
    let sigma = world.sigma();
    let mu_j = world.mu_j();
    let mut xi = DenseMatrix::zeros(n, d);
    let mut xj = DenseMatrix::zeros(n, d);
    let mut yi = Vec::with_capacity(n);
    let mut yj = Vec::with_capacity(n);
    for k in 0..n {
        let y = sign(&mut rng);
        let y2 = match world.labels {
            LabelMode::Shared => y,
            LabelMode::Independent => sign(&mut rng),
        };
        draw_features(&world.mu, y, sigma, &mut rng, xi.row_mut(k));
        draw_features(&mu_j, y2, sigma, &mut rng, xj.row_mut(k));
        yi.push(y);
        yj.push(y2);
    }
    TrainingSet { xi, yi, xj, yj }
}

/// `(1/n) Σ_k x^(k) y^(k)`.
pub fn estimator_separate(x: &DenseMatrix, y: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; x.cols()];
    for (k, &yk) in y.iter().enumerate() {
        for (a, &v) in acc.iter_mut().zip(x.row(k)) {
            *a += v * yk;
        }
    }
    let n = y.len() as f64;
    acc.into_iter().map(|v| v / n).collect()
}

/// `μ̄_i/(1+a²) + (a²/(1+a²)) μ̄_j/a − a b/(1+a²)`.
pub fn estimator_joint(set: &TrainingSet, a: f64, b: &[f64]) -> Result<Vec<f64>> {
    if a == 0.0 {
        return Err(Error::InvalidParams(
            "joint estimator needs a nonzero correlation a".into(),
        ));
    }
    let bar_i = estimator_separate(&set.xi, &set.yi);
    let bar_j = estimator_separate(&set.xj, &set.yj);
    let s = 1.0 + a * a;
    Ok((0..bar_i.len())
        .map(|k| bar_i[k] / s + (a * a / s) * (bar_j[k] / a) - a * b[k] / s)
        .collect())
}

/// Joint estimator as a direct sum, `(1/(n(1+a²))) Σ_k [y_i x_i + a(y_j x_j − b)]`.
pub fn estimator_joint_summation(set: &TrainingSet, a: f64, b: &[f64]) -> Result<Vec<f64>> {
    if a == 0.0 {
        return Err(Error::InvalidParams(
            "joint estimator needs a nonzero correlation a".into(),
        ));
    }
    let d = set.xi.cols();
    let mut acc = vec![0.0; d];
    for k in 0..set.yi.len() {
        let (ri, rj) = (set.xi.row(k), set.xj.row(k));
        for c in 0..d {
            acc[c] += set.yi[k] * ri[c] + a * (set.yj[k] * rj[c] - b[c]);
        }
    }
    let scale = 1.0 / (set.yi.len() as f64 * (1.0 + a * a));
    Ok(acc.into_iter().map(|v| v * scale).collect())
}

/// `estᵀμ / ‖est‖²`.
pub fn beta_ratio(estimate: &[f64], mu: &[f64]) -> Result<f64> {
    let nn = dot(estimate, estimate);
    if nn == 0.0 {
        return Err(Error::ZeroEstimate);
    }
    Ok(dot(estimate, mu) / nn)
}

/// `|σ(2βv/s) − σ(2v/s)|`, with `s = σ²` in the σ-aware variant and 1 otherwise.
pub fn ece_integrand(beta: f64, v: f64, scale: f64) -> f64 {
    (sigmoid(2.0 * beta * v / scale) - sigmoid(2.0 * v / scale)).abs()
}

/// Fresh test draws `(x, y)` at node `i`, reduced to `v = estᵀx`.
fn test_projections(
    estimate: &[f64],
    world: &GaussianWorld,
    num_samples: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut rng = rng_for(seed, &[stream::THEORY_EVAL]);
    let sigma = world.sigma();
    let mut x = vec![0.0; world.d];
    (0..num_samples)
        .map(|_| {
            let y = sign(&mut rng);
            draw_features(&world.mu, y, sigma, &mut rng, &mut x);
            (dot(estimate, &x), y)
        })
        .collect()
}

/// Monte Carlo estimate of the calibration error of the logistic posterior
/// built from `estimate`. Exactly 0 when `β = 1`.
pub fn mc_ece(
    estimate: &[f64],
    world: &GaussianWorld,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::InvalidParams("num_samples must be positive".into()));
    }
    let beta = beta_ratio(estimate, &world.mu)?;
    let scale = if world.sigma_aware { world.sigma2 } else { 1.0 };
    let total: f64 = test_projections(estimate, world, num_samples, seed)
        .into_iter()
        .map(|(v, _)| ece_integrand(beta, v, scale))
        .sum();
    Ok(total / num_samples as f64)
}

/// Fraction of fresh draws where `sign(estᵀx)` matches `y`, ties predicting +1.
pub fn ecm_accuracy(
    estimate: &[f64],
    world: &GaussianWorld,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::InvalidParams("num_samples must be positive".into()));
    }
    let hits = test_projections(estimate, world, num_samples, seed)
        .into_iter()
        .filter(|&(v, y)| (if v >= 0.0 { 1.0 } else { -1.0 }) == y)
        .count();
    Ok(hits as f64 / num_samples as f64)
}
