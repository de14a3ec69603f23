//! Contextual stochastic block model generator.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::DenseMatrix;

/// Disjoint train/val/test node index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Masks {
    /// Checks disjointness and range.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for (name, set) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in set {
                if i >= num_nodes {
                    return Err(Error::InvalidParams(format!(
                        "{name} mask index {i} out of range for {num_nodes} nodes"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidParams(format!(
                        "node {i} appears in more than one mask"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsbmParams {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Euclidean distance between any two class means.
    pub class_separation: f64,
    /// Per-coordinate standard deviation of the feature noise.
    pub feature_noise: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for CsbmParams {
    fn default() -> Self {
        Self {
            num_nodes: 1000,
            num_classes: 4,
            p_in: 0.02,
            p_out: 0.004,
            feature_dim: 64,
            class_separation: 1.5,
            feature_noise: 1.0,
            train_frac: 0.15,
            val_frac: 0.15,
            test_frac: 0.70,
            seed: 0,
        }
    }
}

impl CsbmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.feature_dim < self.num_classes {
            return bad(format!(
                "one-hot class anchors need feature_dim >= num_classes ({} < {})",
                self.feature_dim, self.num_classes
            ));
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| f <= 0.0 || !f.is_finite())
            || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "split fractions must be positive and sum to 1, got {fr:?}"
            ));
        }
        if self.class_separation < 0.0 || self.feature_noise < 0.0 {
            return bad("separation and noise must be nonnegative".into());
        }
        Ok(())
    }

    fn split_sizes(&self) -> Result<(usize, usize, usize)> {
        let n = self.num_nodes as f64;
        let train = (self.train_frac * n).round() as usize;
        let val = (self.val_frac * n).round() as usize;
        let test = self.num_nodes.saturating_sub(train + val);
        if train == 0 || val == 0 || test == 0 || train + val > self.num_nodes {
            return Err(Error::InvalidParams(format!(
                "split of {} nodes by {:?} leaves an empty mask",
                self.num_nodes,
                [self.train_frac, self.val_frac, self.test_frac]
            )));
        }
        Ok((train, val, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsbmSample {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub masks: Masks,
}

pub fn gen_csbm(params: &CsbmParams) -> Result<CsbmSample> {
    params.validate()?;
    let (n_train, n_val, _) = params.split_sizes()?;
    let n = params.num_nodes;
    let k = params.num_classes;

    let mut rng = rng_for(params.seed, &[stream::CSBM_LABELS]);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();

    let mut rng = rng_for(params.seed, &[stream::CSBM_EDGES]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::build(&edges, n)?;

    let mut rng = rng_for(params.seed, &[stream::CSBM_FEATURES]);
    let anchor = params.class_separation / std::f64::consts::SQRT_2;
    let features = DenseMatrix::from_fn(n, params.feature_dim, |i, j| {
        let z: f64 = rng.sample(StandardNormal);
        let mean = if j == labels[i] { anchor } else { 0.0 };
        mean + params.feature_noise * z
    });

    let mut rng = rng_for(params.seed, &[stream::CSBM_SPLIT]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    Ok(CsbmSample {
        graph,
        features,
        labels,
        masks: Masks { train, val, test },
    })
}
