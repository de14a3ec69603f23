use serde::{Deserialize, Serialize};

use super::temperature_softmax;
use crate::classifier::NodeBundle;
use crate::error::{Error, Result};
use crate::fitting::{fit_with_selection, Schedule};
use crate::graph::Graph;
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::{glorot, softplus, DenseMatrix, ParamStore, SparseMatrix, Tape, Var};

/// Temperature floor shared by the nodewise calibrators.
pub const TEMPERATURE_FLOOR: f64 = 0.01;
/// `softplus(INIT_BIAS) = 1`.
pub const UNIT_TEMPERATURE_BIAS: f64 = 0.541_324_854_612_918_1;

/// GCN on the logits producing one temperature per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CagcnModel {
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CagcnConfig {
    pub hidden: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for CagcnConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            schedule: Schedule::default(),
            seed: 0,
        }
    }
}

/// Raw pre-softplus output `Â·ReLU(Â Z W1 + b1)·W2 + b2`, then softplus and floor.
pub(crate) fn cagcn_temperatures<'a>(
    t: &mut Tape<'a>,
    az: Var,
    adj: &'a SparseMatrix,
    w: &[Var],
) -> Result<Var> {
    let pre = t.matmul(az, w[0])?;
    let pre = t.add_row(pre, w[1])?;
    let h = t.relu(pre);
    let hw = t.matmul(h, w[2])?;
    let r = t.spmm(adj, hw)?;
    let r = t.add_row(r, w[3])?;
    let sp = t.softplus(r);
    Ok(t.clamp_min(sp, TEMPERATURE_FLOOR))
}

/// Mean NLL over `set` of `softmax(z_i / T_i)`.
pub(crate) fn nodewise_nll<'a>(
    t: &mut Tape<'a>,
    z: Var,
    temps: Var,
    labels: &[usize],
    set: &[usize],
) -> Result<Var> {
    let inv = t.recip(temps);
    let scaled = t.scale_rows(z, inv)?;
    let logp = t.log_softmax(scaled);
    let picked = t.gather(logp, set.iter().map(|&i| (i, labels[i])).collect())?;
    let m = t.mean(picked);
    Ok(t.scale(m, -1.0))
}

pub(crate) fn selection_nll(logp: &DenseMatrix, labels: &[usize], set: &[usize]) -> f64 {
    -set.iter().map(|&i| logp.get(i, labels[i])).sum::<f64>() / set.len() as f64
}

impl CagcnModel {
    fn store(&self) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("w1", self.w1.clone());
        p.add("b1", self.b1.clone());
        p.add("w2", self.w2.clone());
        p.add("b2", self.b2.clone());
        p
    }

    fn from_store(p: &ParamStore) -> Self {
        Self {
            w1: p.value(0).clone(),
            b1: p.value(1).clone(),
            w2: p.value(2).clone(),
            b2: p.value(3).clone(),
        }
    }

    pub fn init(num_classes: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[stream::CALIB_INIT]);
        Self {
            w1: glorot(num_classes, hidden, &mut rng),
            b1: DenseMatrix::zeros(1, hidden),
            // Small output layer: temperatures start near 1.
            w2: glorot(hidden, 1, &mut rng).map(|v| v * 0.01),
            b2: DenseMatrix::filled(1, 1, UNIT_TEMPERATURE_BIAS),
        }
    }

    pub fn temperatures(&self, logits: &DenseMatrix, graph: &Graph) -> Result<Vec<f64>> {
        let adj = graph.normalized_adjacency();
        let az = adj.matmul(logits)?;
        let h = az.matmul(&self.w1)?;
        let mut h = h;
        for i in 0..h.rows() {
            for (v, &b) in h.row_mut(i).iter_mut().zip(self.b1.data()) {
                *v = (*v + b).max(0.0);
            }
        }
        let r = adj.matmul(&h.matmul(&self.w2)?)?;
        Ok(r.data()
            .iter()
            .map(|&v| softplus(v + self.b2.item()).max(TEMPERATURE_FLOOR))
            .collect())
    }

    pub fn apply(&self, logits: &DenseMatrix, graph: &Graph) -> Result<DenseMatrix> {
        Ok(temperature_softmax(
            logits,
            &self.temperatures(logits, graph)?,
        ))
    }

    /// Fit-set NLL as a tape loss over this model's parameter layout.
    pub fn loss<'a>(
        t: &mut Tape<'a>,
        w: &[Var],
        logits: &DenseMatrix,
        az: &DenseMatrix,
        adj: &'a SparseMatrix,
        labels: &[usize],
        set: &[usize],
    ) -> Result<Var> {
        let azv = t.constant(az.clone());
        let temps = cagcn_temperatures(t, azv, adj, w)?;
        let z = t.constant(logits.clone());
        nodewise_nll(t, z, temps, labels, set)
    }

    pub fn param_store(&self) -> ParamStore {
        self.store()
    }
}

/// Trains on `fit_set` NLL, selecting the snapshot by `select_set` NLL.
pub fn fit_cagcn(
    bundle: &NodeBundle,
    graph: &Graph,
    fit_set: &[usize],
    select_set: &[usize],
    config: &CagcnConfig,
) -> Result<CagcnModel> {
    if fit_set.is_empty() || select_set.is_empty() {
        return Err(Error::EmptySet);
    }
    let adj = graph.normalized_adjacency();
    let az = adj.matmul(&bundle.logits)?;
    let labels = &bundle.labels;
    let init = CagcnModel::init(bundle.num_classes(), config.hidden, config.seed);
    let outcome = fit_with_selection(init.store(), &config.schedule, |t, w| {
        let azv = t.constant(az.clone());
        let temps = cagcn_temperatures(t, azv, &adj, w)?;
        let z = t.constant(bundle.logits.clone());
        let inv = t.recip(temps);
        let scaled = t.scale_rows(z, inv)?;
        let logp = t.log_softmax(scaled);
        let sel = selection_nll(t.value(logp), labels, select_set);
        let picked = t.gather(logp, fit_set.iter().map(|&i| (i, labels[i])).collect())?;
        let m = t.mean(picked);
        Ok((t.scale(m, -1.0), sel))
    })?;
    Ok(CagcnModel::from_store(&outcome.params))
}
