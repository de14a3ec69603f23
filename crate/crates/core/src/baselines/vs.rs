use serde::{Deserialize, Serialize};

use crate::classifier::NodeBundle;
use crate::error::{Error, Result};
use crate::numerics::{
    softmax_rows, value_and_grad, AdamConfig, AdamState, DenseMatrix, ParamStore, Tape, Var,
};

/// Classwise scale and bias on the logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsModel {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl VsModel {
    pub fn apply(&self, logits: &DenseMatrix) -> DenseMatrix {
        let mut z = logits.clone();
        for i in 0..z.rows() {
            for ((v, &w), &b) in z.row_mut(i).iter_mut().zip(&self.scale).zip(&self.bias) {
                *v = *v * w + b;
            }
        }
        softmax_rows(&z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VsConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
}

impl Default for VsConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            adam: AdamConfig::default(),
        }
    }
}

/// NLL of `softmax(z ⊙ w + b)` on the rows of `z`.
pub fn vs_loss<'a>(t: &mut Tape<'a>, z: &DenseMatrix, labels: &[usize], w: &[Var]) -> Result<Var> {
    let zc = t.constant(z.clone());
    let scaled = t.mul_row(zc, w[0])?;
    let shifted = t.add_row(scaled, w[1])?;
    let logp = t.log_softmax(shifted);
    let picked = t.gather(logp, labels.iter().copied().enumerate().collect())?;
    let m = t.mean(picked);
    Ok(t.scale(m, -1.0))
}

/// Adam from `w = 1, b = 0`, returning the lowest-NLL iterate.
pub fn fit_vs(bundle: &NodeBundle, set: &[usize], config: &VsConfig) -> Result<VsModel> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let k = bundle.num_classes();
    let z = bundle.logits.select_rows(set);
    let labels: Vec<usize> = set.iter().map(|&i| bundle.labels[i]).collect();

    let mut params = ParamStore::new();
    params.add("scale", DenseMatrix::filled(1, k, 1.0));
    params.add("bias", DenseMatrix::zeros(1, k));
    let mut adam = AdamState::new(&params, config.adam);
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;

    for epoch in 0..=config.epochs {
        let loss = value_and_grad(&mut params, |t, w| vs_loss(t, &z, &labels, w))
            .map_err(|e| Error::Diverged(format!("vector scaling epoch {epoch}: {e}")))?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "vector scaling epoch {epoch}: loss {loss}"
            )));
        }
        if loss < best_loss {
            best_loss = loss;
            best.copy_values_from(&params);
        }
        if epoch < config.epochs {
            adam.step(&mut params)?;
        }
    }
    Ok(VsModel {
        scale: best.value(0).data().to_vec(),
        bias: best.value(1).data().to_vec(),
    })
}
