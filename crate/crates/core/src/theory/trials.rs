use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    beta_ratio, estimator_joint, estimator_separate, mc_ece, sample_training_set, GaussianWorld,
    WorldParams,
};
use crate::error::{Error, Result};
use crate::numerics::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub beta_bar: f64,
    pub beta_hat: f64,
    pub ece_bar: f64,
    pub ece_hat: f64,
    pub hat_at_most_one: bool,
    pub bar_at_least_half: bool,
    pub hat_at_least_bar: bool,
    pub ece_hat_at_most_bar: bool,
}

impl TrialResult {
    /// `1 ≥ β̂ ≥ β̄ ≥ ½`.
    pub fn ordered(&self) -> bool {
        self.hat_at_most_one && self.hat_at_least_bar && self.bar_at_least_half
    }
}

/// Empirical frequency with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub count: usize,
    pub total: usize,
    pub freq: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Frequency {
    pub fn new(count: usize, total: usize) -> Self {
        let (lo, hi) = wilson_interval(count, total);
        Self {
            count,
            total,
            freq: if total == 0 {
                0.0
            } else {
                count as f64 / total as f64
            },
            lo,
            hi,
        }
    }

    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

/// Wilson score interval at `z = 1.96`.
pub fn wilson_interval(count: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let n = total as f64;
    let p = count as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: Vec<TrialResult>,
    pub hat_at_most_one: Frequency,
    pub bar_at_least_half: Frequency,
    pub hat_at_least_bar: Frequency,
    pub ece_hat_at_most_bar: Frequency,
    pub ordered: Frequency,
    /// Whether the world satisfies the size condition of the ratio lower bound.
    pub size_condition_holds: bool,
}

fn one_trial(world: &GaussianWorld, mc_samples: usize, seed: u64) -> Result<TrialResult> {
    let set = sample_training_set(world, seed);
    let bar = estimator_separate(&set.xi, &set.yi);
    let hat = estimator_joint(&set, world.a, &world.b)?;
    let beta_bar = beta_ratio(&bar, &world.mu)?;
    let beta_hat = beta_ratio(&hat, &world.mu)?;
    // Both errors are measured on the same fresh test draws.
    let ece_bar = mc_ece(&bar, world, mc_samples, seed)?;
    let ece_hat = mc_ece(&hat, world, mc_samples, seed)?;
    Ok(TrialResult {
        beta_bar,
        beta_hat,
        ece_bar,
        ece_hat,
        hat_at_most_one: beta_hat <= 1.0,
        bar_at_least_half: beta_bar >= 0.5,
        hat_at_least_bar: beta_hat >= beta_bar,
        ece_hat_at_most_bar: ece_hat <= ece_bar,
    })
}

/// Independent trials in parallel; trial `k` is seeded by `(seed, k)` alone.
pub fn run_trials(
    world: &GaussianWorld,
    num_trials: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<TrialSummary> {
    if num_trials == 0 || mc_samples == 0 {
        return Err(Error::InvalidParams(
            "trial and sample counts must be positive".into(),
        ));
    }
    let trials: Vec<TrialResult> = (0..num_trials as u64)
        .into_par_iter()
        .map(|k| {
            one_trial(
                world,
                mc_samples,
                derive_seed(seed, &[stream::THEORY_TRIAL, k]),
            )
        })
        .collect::<Result<_>>()?;
    let freq = |f: fn(&TrialResult) -> bool| {
        Frequency::new(trials.iter().filter(|t| f(t)).count(), num_trials)
    };
    Ok(TrialSummary {
        hat_at_most_one: freq(|t| t.hat_at_most_one),
        bar_at_least_half: freq(|t| t.bar_at_least_half),
        hat_at_least_bar: freq(|t| t.hat_at_least_bar),
        ece_hat_at_most_bar: freq(|t| t.ece_hat_at_most_bar),
        ordered: freq(TrialResult::ordered),
        size_condition_holds: world.size_condition_holds(),
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d: usize,
    pub n: usize,
    pub a: f64,
    pub b_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub trials: usize,
    pub ordered: Frequency,
    pub ece: Frequency,
    pub size_condition_holds: bool,
}

/// One summary row per grid point. Every point uses the master seed, so a
/// single-point sweep reproduces [`run_trials`] on that world.
pub fn sweep(
    template: &WorldParams,
    points: &[SweepPoint],
    num_trials: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if points.is_empty() {
        return Err(Error::InvalidParams("sweep grid is empty".into()));
    }
    points
        .iter()
        .map(|&point| {
            let params = WorldParams {
                d: point.d,
                n: point.n,
                a: point.a,
                b_norm: point.b_norm,
                ..template.clone()
            };
            let world = GaussianWorld::new(&params, seed)?;
            let s = run_trials(&world, num_trials, mc_samples, seed)?;
            Ok(SweepRow {
                point,
                trials: num_trials,
                ordered: s.ordered,
                ece: s.ece_hat_at_most_bar,
                size_condition_holds: s.size_condition_holds,
            })
        })
        .collect()
}

/// `d,n,a,b_norm,trials,freq_order,freq_ece,wilson_lo,wilson_hi`; the
/// interval is that of `freq_ece`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("d,n,a,b_norm,trials,freq_order,freq_ece,wilson_lo,wilson_hi\n");
    for r in rows {
        let p = r.point;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.d, p.n, p.a, p.b_norm, r.trials, r.ordered.freq, r.ece.freq, r.ece.lo, r.ece.hi
        )
        .expect("writing to a String cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(50, 100);
        // z = 1.96 closed form.
        assert!((lo - 0.403_829_829).abs() < 1e-8 && (hi - 0.596_170_171).abs() < 1e-8);
        let (lo, hi) = wilson_interval(0, 10);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.35);
        let (lo, hi) = wilson_interval(10, 10);
        assert!(lo > 0.65 && hi == 1.0);
    }

    #[test]
    fn flags_match_values() {
        let w = GaussianWorld::new(&WorldParams::default(), 0).unwrap();
        let s = run_trials(&w, 20, 500, 3).unwrap();
        for t in &s.trials {
            assert_eq!(t.hat_at_most_one, t.beta_hat <= 1.0);
            assert_eq!(t.bar_at_least_half, t.beta_bar >= 0.5);
            assert_eq!(t.hat_at_least_bar, t.beta_hat >= t.beta_bar);
            assert_eq!(t.ece_hat_at_most_bar, t.ece_hat <= t.ece_bar);
        }
        assert_eq!(s.ordered.total, 20);
    }

    #[test]
    fn single_point_sweep_matches_trials() {
        let template = WorldParams::default();
        let point = SweepPoint {
            d: 64,
            n: 4,
            a: 2.66,
            b_norm: 0.0,
        };
        let rows = sweep(&template, &[point], 30, 300, 8).unwrap();
        let w = GaussianWorld::new(&template, 8).unwrap();
        let s = run_trials(&w, 30, 300, 8).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].ece, s.ece_hat_at_most_bar);
        assert_eq!(rows[0].ordered, s.ordered);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with(
            "d,n,a,b_norm,trials,freq_order,freq_ece,wilson_lo,wilson_hi\n64,4,2.66,0,30,"
        ));
    }

    #[test]
    fn offset_does_not_change_joint_error() {
        // The joint estimator subtracts the known offset, so its error is
        // b-invariant when the noise draws are shared.
        let mut with_b = GaussianWorld::new(&WorldParams::default(), 2).unwrap();
        let plain = with_b.clone();
        with_b.b = (0..64).map(|k| (k as f64 * 0.37).sin() * 5.0).collect();
        let s0 = crate::theory::sample_training_set(&plain, 4);
        let s1 = crate::theory::sample_training_set(&with_b, 4);
        let h0 = estimator_joint(&s0, plain.a, &plain.b).unwrap();
        let h1 = estimator_joint(&s1, with_b.a, &with_b.b).unwrap();
        for (x, y) in h0.iter().zip(&h1) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
