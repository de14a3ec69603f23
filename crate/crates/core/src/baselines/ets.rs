use serde::{Deserialize, Serialize};

use super::ts::{fit_ts, TsModel};
use crate::classifier::NodeBundle;
use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, DenseMatrix};

/// Mixture of the uncalibrated, temperature-scaled and uniform distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtsModel {
    pub weights: [f64; 3],
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtsConfig {
    pub iterations: usize,
    pub step: f64,
}

impl Default for EtsConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step: 0.05,
        }
    }
}

impl EtsModel {
    pub fn apply(&self, logits: &DenseMatrix) -> DenseMatrix {
        let components = components(logits, self.temperature);
        mix(&components, &self.weights)
    }
}

fn components(logits: &DenseMatrix, t: f64) -> [DenseMatrix; 3] {
    let k = logits.cols();
    [
        softmax_rows(logits),
        TsModel { temperature: t }.apply(logits),
        DenseMatrix::filled(logits.rows(), k, 1.0 / k as f64),
    ]
}

fn mix(c: &[DenseMatrix; 3], w: &[f64; 3]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(c[0].rows(), c[0].cols());
    for (m, &wc) in c.iter().zip(w) {
        out.add_assign_scaled(m, wc);
    }
    out
}

/// Largest weight the uniform component may take; a purely uniform output
/// ties every class and would no longer preserve the argmax.
pub const MAX_UNIFORM_WEIGHT: f64 = 1.0 - 1e-6;

/// Shift `θ` such that `Σ max(v - θ, 0) = total`.
fn simplex_shift(v: &[f64], total: f64) -> f64 {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - total) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    theta
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: [f64; 3]) -> [f64; 3] {
    let theta = simplex_shift(&v, 1.0);
    v.map(|x| (x - theta).max(0.0))
}

/// Euclidean projection onto the simplex intersected with
/// `w[2] <= MAX_UNIFORM_WEIGHT`.
pub fn project_weights(v: [f64; 3]) -> [f64; 3] {
    let w = project_simplex(v);
    if w[2] <= MAX_UNIFORM_WEIGHT {
        return w;
    }
    // Cap active: the remaining mass is projected over the softmax components.
    let theta = simplex_shift(&v[..2], 1.0 - MAX_UNIFORM_WEIGHT);
    [
        (v[0] - theta).max(0.0),
        (v[1] - theta).max(0.0),
        MAX_UNIFORM_WEIGHT,
    ]
}

/// NLL and its gradient in the mixture weights, from per-component
/// probabilities of the true label.
fn nll_and_grad(picked: &[[f64; 3]], w: &[f64; 3]) -> (f64, [f64; 3]) {
    let n = picked.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; 3];
    for p in picked {
        let mixed = (p[0] * w[0] + p[1] * w[1] + p[2] * w[2]).max(1e-12);
        loss -= mixed.ln();
        for c in 0..3 {
            grad[c] -= p[c] / mixed;
        }
    }
    (loss / n, grad.map(|g| g / n))
}

/// Projected gradient descent on the mixture weights, starting from the
/// pure temperature-scaled component. Returns the best iterate and the
/// trajectory of weights.
pub(crate) fn descend(picked: &[[f64; 3]], config: &EtsConfig) -> ([f64; 3], f64, Vec<[f64; 3]>) {
    let mut w = [0.0, 1.0, 0.0];
    let (mut best_loss, _) = nll_and_grad(picked, &w);
    let mut best = w;
    let mut trace = vec![w];
    for _ in 0..config.iterations {
        let (_, g) = nll_and_grad(picked, &w);
        w = project_weights([
            w[0] - config.step * g[0],
            w[1] - config.step * g[1],
            w[2] - config.step * g[2],
        ]);
        trace.push(w);
        let (loss, _) = nll_and_grad(picked, &w);
        if loss < best_loss {
            best_loss = loss;
            best = w;
        }
    }
    (best, best_loss, trace)
}

pub fn fit_ets(bundle: &NodeBundle, set: &[usize], config: &EtsConfig) -> Result<EtsModel> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let ts = fit_ts(bundle, set)?;
    let z = bundle.logits.select_rows(set);
    let comps = components(&z, ts.temperature);
    let picked: Vec<[f64; 3]> = set
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let y = bundle.labels[i];
            [comps[0].get(r, y), comps[1].get(r, y), comps[2].get(r, y)]
        })
        .collect();
    let (weights, _, _) = descend(&picked, config);
    Ok(EtsModel {
        weights,
        temperature: ts.temperature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Masks;
    use crate::metrics::{argmax, nll};
    use crate::numerics::rng::rng_for;
    use crate::numerics::softmax_in_place;
    use rand::Rng;

    fn bundle(logits: DenseMatrix, labels: Vec<usize>) -> NodeBundle {
        let n = logits.rows();
        NodeBundle::new(
            DenseMatrix::zeros(n, 1),
            DenseMatrix::zeros(n, 1),
            logits,
            labels,
            Masks::default(),
        )
        .unwrap()
    }

    /// Labels drawn from `softmax(z / 2)`, so temperature 2 is calibrated.
    fn calibrated_at_two(seed: u64, n: usize) -> NodeBundle {
        let mut rng = rng_for(seed, &[]);
        let z = DenseMatrix::from_fn(n, 4, |_, _| rng.random_range(-6.0..6.0));
        let mut labels = Vec::new();
        for i in 0..n {
            let mut p: Vec<f64> = z.row(i).iter().map(|v| v / 2.0).collect();
            softmax_in_place(&mut p);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = 3;
            for (c, &pc) in p.iter().enumerate() {
                acc += pc;
                if u < acc {
                    y = c;
                    break;
                }
            }
            labels.push(y);
        }
        bundle(z, labels)
    }

    #[test]
    fn simplex_projection_properties() {
        for v in [
            [0.2, 0.3, 0.5],
            [2.0, -1.0, 0.0],
            [-5.0, -5.0, -5.0],
            [0.9, 0.9, 0.9],
        ] {
            let p = project_simplex(v);
            assert!(
                (p.iter().sum::<f64>() - 1.0).abs() < 1e-12,
                "{v:?} -> {p:?}"
            );
            assert!(p.iter().all(|&x| x >= 0.0));
        }
        assert_eq!(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5]);
        assert_eq!(project_simplex([2.0, -1.0, 0.0]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_weight_is_capped() {
        let p = project_weights([-3.0, 0.2, 4.0]);
        assert_eq!(p[2], MAX_UNIFORM_WEIGHT);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12 && p.iter().all(|&x| x >= 0.0));
        assert!(p[1] > 0.0 && p[0] == 0.0);
        assert_eq!(project_weights([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5]);
        // A feasible point is its own projection.
        assert_eq!(project_weights(p), p);
    }

    #[test]
    fn uninformative_labels_keep_argmax() {
        let mut rng = rng_for(8, &[]);
        let z = DenseMatrix::from_fn(60, 4, |_, _| rng.random_range(-4.0..4.0));
        let labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..4)).collect();
        let b = bundle(z, labels);
        let set: Vec<usize> = (0..60).collect();
        let m = fit_ets(&b, &set, &EtsConfig::default()).unwrap();
        assert!(m.weights[2] <= MAX_UNIFORM_WEIGHT);
        let p = m.apply(&b.logits);
        for i in 0..60 {
            assert_eq!(argmax(p.row(i)), argmax(b.logits.row(i)));
        }
    }

    #[test]
    fn calibrated_ts_component_dominates() {
        let b = calibrated_at_two(5, 2000);
        let set: Vec<usize> = (0..2000).collect();
        let m = fit_ets(&b, &set, &EtsConfig::default()).unwrap();
        assert!(m.weights[1] >= m.weights[0].max(m.weights[2]), "{m:?}");
        let ts_nll = nll(
            &TsModel {
                temperature: m.temperature,
            }
            .apply(&b.logits),
            &b.labels,
            &set,
        )
        .unwrap();
        let ets_nll = nll(&m.apply(&b.logits), &b.labels, &set).unwrap();
        assert!(ets_nll <= ts_nll + 1e-9);
    }

    #[test]
    fn pure_ts_weights_reproduce_ts() {
        let b = calibrated_at_two(6, 50);
        let m = EtsModel {
            weights: [0.0, 1.0, 0.0],
            temperature: 1.7,
        };
        assert_eq!(
            m.apply(&b.logits),
            TsModel { temperature: 1.7 }.apply(&b.logits)
        );
    }

    #[test]
    fn outputs_are_distributions_and_trace_stays_on_simplex() {
        let b = calibrated_at_two(7, 300);
        let set: Vec<usize> = (0..300).collect();
        let m = fit_ets(&b, &set, &EtsConfig::default()).unwrap();
        let p = m.apply(&b.logits);
        for i in 0..p.rows() {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let picked: Vec<[f64; 3]> = (0..50)
            .map(|i| [0.9 - i as f64 * 0.01, 0.5, 0.25])
            .collect();
        let (_, _, trace) = descend(&picked, &EtsConfig::default());
        for w in trace {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9 && w.iter().all(|&x| x >= 0.0));
        }
    }
}
