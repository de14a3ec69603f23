//! Two-layer GCN node classifier producing the hidden features and logits
//! that the calibrators consume. The classifier is frozen once trained.

use serde::{Deserialize, Serialize};

use crate::datagen::Masks;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics;
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::{
    evaluate, glorot, softmax_rows, value_and_grad, AdamConfig, AdamState, DenseMatrix, ParamStore,
    SparseMatrix, Tape, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    /// `d × h`
    pub w1: DenseMatrix,
    /// `h × K`
    pub w2: DenseMatrix,
}

impl GcnParams {
    pub fn hidden_width(&self) -> usize {
        self.w1.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnConfig {
    pub hidden: usize,
    pub epochs: usize,
    /// Early-stopping patience on validation loss; `None` trains every epoch.
    pub patience: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 200,
            patience: Some(50),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl GcnConfig {
    /// No early stopping, long schedule, no weight decay.
    pub fn overtrained(seed: u64) -> Self {
        Self {
            epochs: 2000,
            patience: None,
            adam: AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            seed,
            ..Self::default()
        }
    }
}

/// `H = ReLU(Â X W1)`, `Z = Â H W2`.
pub fn gcn_forward(
    params: &GcnParams,
    x: &DenseMatrix,
    adj: &SparseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if x.cols() != params.w1.rows() || params.w1.cols() != params.w2.rows() {
        return Err(Error::Shape {
            op: "gcn_forward",
            detail: format!(
                "features {:?}, w1 {:?}, w2 {:?}",
                x.shape(),
                params.w1.shape(),
                params.w2.shape()
            ),
        });
    }
    let h = adj.matmul(&x.matmul(&params.w1)?)?.map(|v| v.max(0.0));
    let z = adj.matmul(&h.matmul(&params.w2)?)?;
    Ok((h, z))
}

fn cross_entropy<'a>(
    t: &mut Tape<'a>,
    ax: Var,
    adj: &'a SparseMatrix,
    w: &[Var],
    labels: &[usize],
    set: &[usize],
) -> Result<Var> {
    let pre = t.matmul(ax, w[0])?;
    let h = t.relu(pre);
    let hw = t.matmul(h, w[1])?;
    let z = t.spmm(adj, hw)?;
    let logp = t.log_softmax(z);
    let picked = t.gather(logp, set.iter().map(|&i| (i, labels[i])).collect())?;
    let m = t.mean(picked);
    Ok(t.scale(m, -1.0))
}

/// Fits the classifier by Adam on train-mask cross-entropy.
pub fn train_gcn(
    x: &DenseMatrix,
    graph: &Graph,
    labels: &[usize],
    masks: &Masks,
    config: &GcnConfig,
) -> Result<GcnParams> {
    if masks.train.is_empty() {
        return Err(Error::EmptySet);
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let adj = graph.normalized_adjacency();
    let ax = adj.matmul(x)?;

    let mut rng = rng_for(config.seed, &[stream::GCN_INIT]);
    let mut params = ParamStore::new();
    params.add("w1", glorot(x.cols(), config.hidden, &mut rng));
    params.add("w2", glorot(config.hidden, k, &mut rng));
    let mut adam = AdamState::new(&params, config.adam);

    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let use_val = config.patience.is_some() && !masks.val.is_empty();

    for epoch in 0..config.epochs {
        if use_val {
            let val = evaluate(&params, |t, w| {
                let axv = t.constant(ax.clone());
                cross_entropy(t, axv, &adj, w, labels, &masks.val)
            })?;
            if val < best_val {
                best_val = val;
                best.copy_values_from(&params);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > config.patience.unwrap_or(usize::MAX) {
                    break;
                }
            }
        }
        let loss = value_and_grad(&mut params, |t, w| {
            let axv = t.constant(ax.clone());
            cross_entropy(t, axv, &adj, w, labels, &masks.train)
        })
        .map_err(|e| Error::Diverged(format!("epoch {epoch}: {e}")))?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("epoch {epoch}: loss {loss}")));
        }
        adam.step(&mut params)?;
    }

    let chosen = if use_val && config.epochs > 0 {
        let final_val = evaluate(&params, |t, w| {
            let axv = t.constant(ax.clone());
            cross_entropy(t, axv, &adj, w, labels, &masks.val)
        })?;
        if final_val < best_val {
            params
        } else {
            best
        }
    } else {
        params
    };
    Ok(GcnParams {
        w1: chosen.value(0).clone(),
        w2: chosen.value(1).clone(),
    })
}

/// Frozen classifier outputs for a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBundle {
    pub features: DenseMatrix,
    pub hidden: DenseMatrix,
    pub logits: DenseMatrix,
    pub labels: Vec<usize>,
    pub masks: Masks,
}

impl NodeBundle {
    pub fn new(
        features: DenseMatrix,
        hidden: DenseMatrix,
        logits: DenseMatrix,
        labels: Vec<usize>,
        masks: Masks,
    ) -> Result<Self> {
        let n = logits.rows();
        if features.rows() != n || hidden.rows() != n || labels.len() != n {
            return Err(Error::Shape {
                op: "bundle",
                detail: format!(
                    "features {}, hidden {}, logits {}, labels {} rows",
                    features.rows(),
                    hidden.rows(),
                    n,
                    labels.len()
                ),
            });
        }
        if !logits.is_finite() {
            return Err(Error::InvalidParams(
                "logits contain non-finite values".into(),
            ));
        }
        let k = logits.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidParams(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        masks.validate(n)?;
        Ok(Self {
            features,
            hidden,
            logits,
            labels,
            masks,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.logits.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.cols()
    }

    pub fn probs(&self) -> DenseMatrix {
        softmax_rows(&self.logits)
    }

    /// Argmax accuracy of the raw logits on `set`.
    pub fn accuracy(&self, set: &[usize]) -> f64 {
        if set.is_empty() {
            return 0.0;
        }
        let hits = set
            .iter()
            .filter(|&&i| metrics::argmax(self.logits.row(i)) == self.labels[i])
            .count();
        hits as f64 / set.len() as f64
    }
}

/// Runs the frozen classifier and packages its outputs.
pub fn make_bundle(
    params: &GcnParams,
    x: &DenseMatrix,
    graph: &Graph,
    labels: &[usize],
    masks: &Masks,
) -> Result<NodeBundle> {
    let (h, z) = gcn_forward(params, x, &graph.normalized_adjacency())?;
    NodeBundle::new(x.clone(), h, z, labels.to_vec(), masks.clone())
}
