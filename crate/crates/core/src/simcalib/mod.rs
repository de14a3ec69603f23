//! Nodewise-temperature calibrator mixing a feature-similarity branch and a
//! representation-movement branch.
//!
//! The feature branch measures Mahalanobis distances from each node's hidden
//! features to class prototypes and propagates the normalised distance
//! vectors through a small GCN to a temperature. The movement branch
//! aggregates sorted neighbor logits with homophily-proxy attention, hop
//! distance to the training set and relative degree, then maps them to a
//! second temperature. The calibrated output is the `ω`-mixture of the two
//! temperature-scaled softmaxes, so every prediction is preserved.

mod movement;
mod similarity;

pub use movement::{movement_attention, movement_operator, sorted_logits};
pub use similarity::{class_prototypes, shared_covariance, PrototypeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{TEMPERATURE_FLOOR, UNIT_TEMPERATURE_BIAS};
use crate::classifier::NodeBundle;
use crate::error::{Error, Result};
use crate::fitting::{fit_with_selection, Schedule};
use crate::graph::Graph;
use crate::metrics;
use crate::numerics::rng::{derive_seed, rng_for, stream};
use crate::numerics::{glorot, DenseMatrix, ParamStore, SparseMatrix, Tape, Var};

/// Output-layer weights start small so both temperatures start near 1 and
/// the untrained model reproduces the uncalibrated softmax.
const INIT_OUTPUT_SCALE: f64 = 0.01;

/// Structural switches reproducing the reduced model variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Uniform attention over the neighborhood.
    pub disable_homophily: bool,
    /// Relative-degree exponent forced to 0.
    pub disable_reldeg: bool,
    /// Raw logits replace the similarity vectors in the feature branch.
    pub logits_as_s: bool,
    /// Movement branch only (`ω = 0`).
    pub disable_feat: bool,
    /// Feature branch only (`ω = 1`).
    pub disable_move: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimCalibConfig {
    pub hidden: usize,
    pub heads: usize,
    pub omega: f64,
    pub t: f64,
    pub omega_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub slope: f64,
    pub include_self: bool,
    pub ablation: Ablation,
    pub schedule: Schedule,
    /// Bin count for the tie-breaking ECE in grid search.
    pub bins: usize,
    pub seed: u64,
}

impl Default for SimCalibConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            heads: 1,
            omega: 0.8,
            t: 0.5,
            omega_grid: vec![0.6, 0.8, 0.9],
            t_grid: vec![0.3, 0.5, 1.0],
            slope: 0.2,
            include_self: true,
            ablation: Ablation::default(),
            schedule: Schedule::default(),
            bins: 15,
            seed: 0,
        }
    }
}

impl SimCalibConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(1..=8).contains(&self.heads) {
            return bad(format!("heads must be in 1..=8, got {}", self.heads));
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if self.omega_grid.is_empty() || self.t_grid.is_empty() {
            return bad("omega and t grids must be nonempty".into());
        }
        for &w in self.omega_grid.iter().chain([&self.omega]) {
            if !(0.0..=1.0).contains(&w) {
                return bad(format!("omega must be in [0, 1], got {w}"));
            }
        }
        for &t in self.t_grid.iter().chain([&self.t]) {
            if !t.is_finite() {
                return bad(format!("t must be finite, got {t}"));
            }
        }
        if self.ablation.disable_feat && self.ablation.disable_move {
            return bad("cannot disable both branches".into());
        }
        if self.bins == 0 {
            return bad("bins must be positive".into());
        }
        Ok(())
    }

    fn effective_omega(&self, omega: f64) -> f64 {
        if self.ablation.disable_feat {
            0.0
        } else if self.ablation.disable_move {
            1.0
        } else {
            omega
        }
    }

    fn effective_t(&self, t: f64) -> f64 {
        if self.ablation.disable_reldeg {
            0.0
        } else {
            t
        }
    }
}

/// Two-layer GCN from similarity rows to one raw temperature per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatBranch {
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCalibModel {
    pub feat: FeatBranch,
    /// `K × H`, one movement weight vector per head.
    pub heads: DenseMatrix,
    /// `1 × 1` offset on the averaged head output.
    pub move_bias: DenseMatrix,
    pub omega: f64,
    pub t: f64,
    pub slope: f64,
    pub floor: f64,
    pub include_self: bool,
    pub ablation: Ablation,
    pub prototypes: PrototypeSet,
}

/// Everything the forward pass needs that does not depend on trainable
/// parameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub adj: SparseMatrix,
    /// `Â S`, input of the feature branch after its first propagation.
    pub adj_s: DenseMatrix,
    /// Movement operator applied to the sorted logits.
    pub movement: DenseMatrix,
    pub logits: DenseMatrix,
    pub omega: f64,
}

impl Prepared {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        bundle: &NodeBundle,
        graph: &Graph,
        prototypes: &PrototypeSet,
        omega: f64,
        t: f64,
        slope: f64,
        include_self: bool,
        ablation: &Ablation,
    ) -> Result<Self> {
        if graph.num_nodes() != bundle.num_nodes() {
            return Err(Error::Shape {
                op: "simcalib",
                detail: format!(
                    "graph has {} nodes, bundle {}",
                    graph.num_nodes(),
                    bundle.num_nodes()
                ),
            });
        }
        let adj = graph.normalized_adjacency();
        let s = if ablation.logits_as_s {
            bundle.logits.clone()
        } else {
            prototypes.similarity_matrix(&bundle.hidden)
        };
        let adj_s = adj.matmul(&s)?;
        let eta = graph.hop_distance_to_set(&bundle.masks.train)?;
        let alpha = movement_attention(
            &bundle.logits,
            &eta,
            graph,
            slope,
            include_self,
            ablation.disable_homophily,
        );
        let movement = movement_operator(&alpha, &bundle.logits, &eta, graph, t);
        Ok(Self {
            adj,
            adj_s,
            movement,
            logits: bundle.logits.clone(),
            omega,
        })
    }
}

/// Parameter layout: feature-branch `w1, b1, w2, b2`, then the head matrix
/// and the movement bias.
fn temperatures_on_tape<'a>(
    tape: &mut Tape<'a>,
    prep: &'a Prepared,
    w: &[Var],
    floor: f64,
) -> Result<(Option<Var>, Option<Var>)> {
    let t_feat = if prep.omega > 0.0 {
        let s = tape.constant(prep.adj_s.clone());
        let pre = tape.matmul(s, w[0])?;
        let pre = tape.add_row(pre, w[1])?;
        let h = tape.relu(pre);
        let hw = tape.matmul(h, w[2])?;
        let r = tape.spmm(&prep.adj, hw)?;
        let r = tape.add_row(r, w[3])?;
        let sp = tape.softplus(r);
        Some(tape.clamp_min(sp, floor))
    } else {
        None
    };
    let t_move = if prep.omega < 1.0 {
        let heads = tape.value(w[4]).cols();
        let u = tape.constant(prep.movement.clone());
        let m = tape.matmul(u, w[4])?;
        let avg = tape.constant(DenseMatrix::filled(heads, 1, 1.0 / heads as f64));
        let m = tape.matmul(m, avg)?;
        let m = tape.add_row(m, w[5])?;
        let sp = tape.softplus(m);
        Some(tape.clamp_min(sp, floor))
    } else {
        None
    };
    Ok((t_feat, t_move))
}

fn scaled_softmax<'a>(tape: &mut Tape<'a>, z: Var, temps: Var) -> Result<Var> {
    let inv = tape.recip(temps);
    let scaled = tape.scale_rows(z, inv)?;
    Ok(tape.softmax(scaled))
}

/// Calibrated `N × K` probabilities built on the tape.
pub fn calibrated_probs<'a>(
    tape: &mut Tape<'a>,
    prep: &'a Prepared,
    w: &[Var],
    floor: f64,
) -> Result<Var> {
    let (t_feat, t_move) = temperatures_on_tape(tape, prep, w, floor)?;
    let z = tape.constant(prep.logits.clone());
    let pf = t_feat.map(|t| scaled_softmax(tape, z, t)).transpose()?;
    let pm = t_move.map(|t| scaled_softmax(tape, z, t)).transpose()?;
    match (pf, pm) {
        (Some(pf), Some(pm)) => {
            let a = tape.scale(pf, prep.omega);
            let b = tape.scale(pm, 1.0 - prep.omega);
            tape.add(a, b)
        }
        (Some(p), None) | (None, Some(p)) => Ok(p),
        (None, None) => unreachable!("omega is in [0, 1]"),
    }
}

/// Mean NLL over `set` of the calibrated probabilities.
pub fn simcalib_loss<'a>(
    tape: &mut Tape<'a>,
    prep: &'a Prepared,
    w: &[Var],
    floor: f64,
    labels: &[usize],
    set: &[usize],
) -> Result<Var> {
    let p = calibrated_probs(tape, prep, w, floor)?;
    probs_nll(tape, p, labels, set)
}

fn probs_nll<'a>(tape: &mut Tape<'a>, p: Var, labels: &[usize], set: &[usize]) -> Result<Var> {
    let picked = tape.gather(p, set.iter().map(|&i| (i, labels[i])).collect())?;
    let logp = tape.log(picked, 1e-12);
    let m = tape.mean(logp);
    Ok(tape.scale(m, -1.0))
}

/// `ω·softmax(z/T_feat) + (1−ω)·softmax(z/T_move)` row by row.
pub fn simcalib_forward(
    logits: &DenseMatrix,
    t_feat: &[f64],
    t_move: &[f64],
    omega: f64,
) -> DenseMatrix {
    use crate::baselines::temperature_softmax;
    let mut out = temperature_softmax(logits, t_feat);
    out.data_mut().iter_mut().for_each(|v| *v *= omega);
    out.add_assign_scaled(&temperature_softmax(logits, t_move), 1.0 - omega);
    out
}

impl SimCalibModel {
    pub fn init(prototypes: PrototypeSet, config: &SimCalibConfig, omega: f64, t: f64) -> Self {
        let k = prototypes.num_classes();
        let omega = config.effective_omega(omega);
        let t = config.effective_t(t);
        let seed = derive_seed(
            config.seed,
            &[stream::CALIB_INIT, omega.to_bits(), t.to_bits()],
        );
        let mut rng = rng_for(seed, &[]);
        let feat = FeatBranch {
            w1: glorot(k, config.hidden, &mut rng),
            b1: DenseMatrix::zeros(1, config.hidden),
            w2: glorot(config.hidden, 1, &mut rng).map(|v| v * INIT_OUTPUT_SCALE),
            b2: DenseMatrix::filled(1, 1, UNIT_TEMPERATURE_BIAS),
        };
        let heads = glorot(k, config.heads, &mut rng).map(|v| v * INIT_OUTPUT_SCALE);
        Self {
            feat,
            heads,
            move_bias: DenseMatrix::filled(1, 1, UNIT_TEMPERATURE_BIAS),
            omega,
            t,
            slope: config.slope,
            floor: TEMPERATURE_FLOOR,
            include_self: config.include_self,
            ablation: config.ablation,
            prototypes,
        }
    }

    pub fn param_store(&self) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("feat_w1", self.feat.w1.clone());
        p.add("feat_b1", self.feat.b1.clone());
        p.add("feat_w2", self.feat.w2.clone());
        p.add("feat_b2", self.feat.b2.clone());
        p.add("move_w", self.heads.clone());
        p.add("move_b", self.move_bias.clone());
        p
    }

    fn set_params(&mut self, p: &ParamStore) {
        self.feat.w1 = p.value(0).clone();
        self.feat.b1 = p.value(1).clone();
        self.feat.w2 = p.value(2).clone();
        self.feat.b2 = p.value(3).clone();
        self.heads = p.value(4).clone();
        self.move_bias = p.value(5).clone();
    }

    pub fn prepare(&self, bundle: &NodeBundle, graph: &Graph) -> Result<Prepared> {
        Prepared::new(
            bundle,
            graph,
            &self.prototypes,
            self.omega,
            self.t,
            self.slope,
            self.include_self,
            &self.ablation,
        )
    }

    /// Per-node `(T_feat, T_move)`. A disabled branch reports unit
    /// temperatures.
    pub fn temperatures(&self, bundle: &NodeBundle, graph: &Graph) -> Result<(Vec<f64>, Vec<f64>)> {
        let prep = self.prepare(bundle, graph)?;
        let params = self.param_store();
        let mut tape = Tape::new();
        let w: Vec<Var> = params
            .values()
            .iter()
            .map(|v| tape.constant(v.clone()))
            .collect();
        let (tf, tm) = temperatures_on_tape(&mut tape, &prep, &w, self.floor)?;
        let n = bundle.num_nodes();
        let read = |v: Option<Var>| v.map_or(vec![1.0; n], |v| tape.value(v).data().to_vec());
        Ok((read(tf), read(tm)))
    }

    pub fn apply(&self, bundle: &NodeBundle, graph: &Graph) -> Result<DenseMatrix> {
        let (tf, tm) = self.temperatures(bundle, graph)?;
        Ok(simcalib_forward(&bundle.logits, &tf, &tm, self.omega))
    }
}

/// Fits at the configured `(ω, t)`: prototypes from the labeled validation
/// nodes, Adam on validation NLL, snapshot chosen by training-set NLL.
pub fn train_simcalib(
    bundle: &NodeBundle,
    graph: &Graph,
    config: &SimCalibConfig,
) -> Result<SimCalibModel> {
    config.validate()?;
    let prototypes = fit_prototypes(bundle)?;
    train_at(bundle, graph, config, prototypes, config.omega, config.t)
}

fn fit_prototypes(bundle: &NodeBundle) -> Result<PrototypeSet> {
    let (fit, select) = (&bundle.masks.val, &bundle.masks.train);
    if fit.is_empty() || select.is_empty() {
        return Err(Error::EmptySet);
    }
    PrototypeSet::fit(&bundle.hidden, &bundle.labels, fit, bundle.num_classes())
}

fn train_at(
    bundle: &NodeBundle,
    graph: &Graph,
    config: &SimCalibConfig,
    prototypes: PrototypeSet,
    omega: f64,
    t: f64,
) -> Result<SimCalibModel> {
    let mut model = SimCalibModel::init(prototypes, config, omega, t);
    let prep = model.prepare(bundle, graph)?;
    let (fit, select) = (&bundle.masks.val, &bundle.masks.train);
    let labels = &bundle.labels;
    let floor = model.floor;
    let outcome = fit_with_selection(model.param_store(), &config.schedule, |tape, w| {
        let p = calibrated_probs(tape, &prep, w, floor)?;
        let values = tape.value(p);
        let sel = -select
            .iter()
            .map(|&i| values.get(i, labels[i]).max(1e-12).ln())
            .sum::<f64>()
            / select.len() as f64;
        Ok((probs_nll(tape, p, labels, fit)?, sel))
    })?;
    model.set_params(&outcome.params);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub omega: f64,
    pub t: f64,
    pub selection_nll: f64,
    pub selection_ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub model: SimCalibModel,
    pub best: CandidateScore,
    pub candidates: Vec<CandidateScore>,
}

/// Trains one model per `(ω, t)` pair in parallel and keeps the one with the
/// lowest training-set NLL, breaking ties by ECE and then by `(ω, t)`.
pub fn grid_search(
    bundle: &NodeBundle,
    graph: &Graph,
    config: &SimCalibConfig,
) -> Result<GridResult> {
    config.validate()?;
    let prototypes = fit_prototypes(bundle)?;
    let pairs: Vec<(f64, f64)> = config
        .omega_grid
        .iter()
        .flat_map(|&w| config.t_grid.iter().map(move |&t| (w, t)))
        .collect();
    let select = &bundle.masks.train;
    let fitted: Vec<(SimCalibModel, CandidateScore)> = pairs
        .par_iter()
        .map(|&(omega, t)| {
            let model = train_at(bundle, graph, config, prototypes.clone(), omega, t)?;
            let p = model.apply(bundle, graph)?;
            let (conf, correct) = metrics::outcomes(&p, &bundle.labels, select)?;
            let score = CandidateScore {
                omega,
                t,
                selection_nll: metrics::nll(&p, &bundle.labels, select)?,
                selection_ece: metrics::ece(&conf, &correct, config.bins)?,
            };
            Ok((model, score))
        })
        .collect::<Result<_>>()?;
    let candidates: Vec<CandidateScore> = fitted.iter().map(|(_, s)| s.clone()).collect();
    let (model, best) = fitted
        .into_iter()
        .min_by(|(_, a), (_, b)| {
            a.selection_nll
                .total_cmp(&b.selection_nll)
                .then(a.selection_ece.total_cmp(&b.selection_ece))
                .then(a.omega.total_cmp(&b.omega))
                .then(a.t.total_cmp(&b.t))
        })
        .expect("grid is nonempty");
    Ok(GridResult {
        model,
        best,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Masks;
    use crate::metrics::argmax;
    use crate::numerics::{finite_diff_check, value_and_grad};
    use rand::Rng;

    fn random_instance(seed: u64, n: usize, k: usize) -> (NodeBundle, Graph) {
        let mut rng = rng_for(seed, &[]);
        let edges: Vec<(usize, usize)> = (0..2 * n)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .collect();
        let g = Graph::build(&edges, n).unwrap();
        let hidden = DenseMatrix::from_fn(n, 6, |_, _| rng.random_range(-1.0..1.0));
        let logits = DenseMatrix::from_fn(n, k, |_, _| rng.random_range(-3.0..3.0));
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let masks = Masks {
            train: (0..n / 4).collect(),
            val: (n / 4..n / 4 + n / 2).collect(),
            test: (n / 4 + n / 2..n).collect(),
        };
        let b = NodeBundle::new(DenseMatrix::zeros(n, 1), hidden, logits, labels, masks).unwrap();
        (b, g)
    }

    fn quick_config() -> SimCalibConfig {
        SimCalibConfig {
            schedule: Schedule {
                epochs: 60,
                patience: 20,
                ..Schedule::default()
            },
            ..SimCalibConfig::default()
        }
    }

    #[test]
    fn unit_temperatures_recover_softmax() {
        let z = DenseMatrix::from_fn(5, 3, |i, j| (i as f64) * 0.3 - j as f64);
        let p = simcalib_forward(&z, &[1.0; 5], &[1.0; 5], 0.37);
        let q = crate::numerics::softmax_rows(&z);
        for (a, b) in p.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_preserves_argmax() {
        let mut rng = rng_for(2, &[]);
        let z = DenseMatrix::from_fn(200, 5, |_, _| rng.random_range(-5.0..5.0));
        let p = simcalib_forward(&z, &[0.7; 200], &[1.3; 200], 0.5);
        for i in 0..200 {
            assert_eq!(argmax(p.row(i)), argmax(z.row(i)));
        }
    }

    #[test]
    fn zero_head_weights_give_ln2() {
        let (b, g) = random_instance(1, 20, 3);
        let cfg = quick_config();
        let protos = fit_prototypes(&b).unwrap();
        let mut m = SimCalibModel::init(protos, &cfg, 0.5, 0.5);
        m.heads = DenseMatrix::zeros(3, 1);
        m.move_bias = DenseMatrix::zeros(1, 1);
        m.feat.w2 = DenseMatrix::zeros(16, 1);
        m.feat.b2 = DenseMatrix::zeros(1, 1);
        let (tf, tm) = m.temperatures(&b, &g).unwrap();
        assert!(tf.iter().chain(&tm).all(|&t| (t - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn fresh_model_starts_near_unit_temperature() {
        let (b, g) = random_instance(1, 20, 3);
        let m = SimCalibModel::init(fit_prototypes(&b).unwrap(), &quick_config(), 0.5, 0.5);
        let (tf, tm) = m.temperatures(&b, &g).unwrap();
        assert!(
            tf.iter().chain(&tm).all(|&t| (t - 1.0).abs() < 0.1),
            "{tf:?} {tm:?}"
        );
    }

    #[test]
    fn single_node_movement_temperature() {
        let g = Graph::build(&[], 1).unwrap();
        let logits = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let masks = Masks {
            train: vec![0],
            val: vec![],
            test: vec![],
        };
        let b = NodeBundle::new(
            DenseMatrix::zeros(1, 1),
            DenseMatrix::zeros(1, 2),
            logits,
            vec![1],
            masks,
        )
        .unwrap();
        let cfg = SimCalibConfig {
            ablation: Ablation {
                disable_feat: true,
                ..Ablation::default()
            },
            ..quick_config()
        };
        let mut m = SimCalibModel::init(fit_prototypes_any(&b), &cfg, 0.5, 0.5);
        m.heads = DenseMatrix::column(vec![1.0, 0.0]);
        m.move_bias = DenseMatrix::zeros(1, 1);
        let (_, tm) = m.temperatures(&b, &g).unwrap();
        assert!((tm[0] - crate::numerics::softplus(2.0)).abs() < 1e-12);
        assert!((tm[0] - 2.1269).abs() < 1e-4);
    }

    fn fit_prototypes_any(b: &NodeBundle) -> PrototypeSet {
        let k = b.num_classes();
        let h = b.hidden.cols();
        PrototypeSet {
            means: DenseMatrix::zeros(k, h),
            covariance: DenseMatrix::zeros(h, h),
            ridge: 1e-8,
            inverse: DenseMatrix::identity(h),
        }
    }

    #[test]
    fn training_never_worsens_fit_nll() {
        let (b, g) = random_instance(3, 60, 3);
        let cfg = quick_config();
        let init = SimCalibModel::init(fit_prototypes(&b).unwrap(), &cfg, cfg.omega, cfg.t);
        let trained = train_simcalib(&b, &g, &cfg).unwrap();
        let before = metrics::nll(&init.apply(&b, &g).unwrap(), &b.labels, &b.masks.val).unwrap();
        let after = metrics::nll(&trained.apply(&b, &g).unwrap(), &b.labels, &b.masks.val).unwrap();
        assert!(after <= before + 1e-9, "{after} > {before}");
        assert!(trained.heads.is_finite());
    }

    #[test]
    fn disabled_feature_branch_gets_no_gradient() {
        let (b, g) = random_instance(4, 20, 3);
        let cfg = SimCalibConfig {
            ablation: Ablation {
                disable_feat: true,
                ..Ablation::default()
            },
            ..quick_config()
        };
        let m = SimCalibModel::init(fit_prototypes(&b).unwrap(), &cfg, 0.9, 0.5);
        assert_eq!(m.omega, 0.0);
        let prep = m.prepare(&b, &g).unwrap();
        let mut params = m.param_store();
        value_and_grad(&mut params, |t, w| {
            simcalib_loss(t, &prep, w, m.floor, &b.labels, &b.masks.val)
        })
        .unwrap();
        for i in 0..4 {
            assert!(params.grad(i).data().iter().all(|&v| v == 0.0));
        }
        assert!(params.grad(4).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (b, g) = random_instance(5, 20, 3);
        let cfg = SimCalibConfig {
            heads: 3,
            ..quick_config()
        };
        let mut m = SimCalibModel::init(fit_prototypes(&b).unwrap(), &cfg, 0.6, 0.5);
        m.heads = m.heads.map(|v| v * 50.0);
        m.feat.w2 = m.feat.w2.map(|v| v * 100.0);
        let prep = m.prepare(&b, &g).unwrap();
        let set: Vec<usize> = (0..20).collect();
        let report = finite_diff_check(
            |t, w| simcalib_loss(t, &prep, w, m.floor, &b.labels, &set),
            &m.param_store(),
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn test_labels_do_not_leak() {
        let (b, g) = random_instance(6, 60, 3);
        let cfg = quick_config();
        let mut perturbed = b.clone();
        for &i in &b.masks.test {
            perturbed.labels[i] = (perturbed.labels[i] + 1) % 3;
        }
        assert_eq!(
            train_simcalib(&b, &g, &cfg).unwrap(),
            train_simcalib(&perturbed, &g, &cfg).unwrap()
        );
    }

    #[test]
    fn singleton_grid_matches_direct_training() {
        let (b, g) = random_instance(7, 40, 3);
        let cfg = SimCalibConfig {
            omega_grid: vec![0.8],
            t_grid: vec![0.5],
            ..quick_config()
        };
        let grid = grid_search(&b, &g, &cfg).unwrap();
        assert_eq!(grid.model, train_simcalib(&b, &g, &cfg).unwrap());
        let recomputed = metrics::nll(
            &grid.model.apply(&b, &g).unwrap(),
            &b.labels,
            &b.masks.train,
        )
        .unwrap();
        assert_eq!(recomputed, grid.best.selection_nll);
    }

    #[test]
    fn default_grid_has_nine_candidates() {
        let (b, g) = random_instance(8, 40, 3);
        let cfg = SimCalibConfig {
            schedule: Schedule {
                epochs: 5,
                ..Schedule::default()
            },
            ..SimCalibConfig::default()
        };
        let grid = grid_search(&b, &g, &cfg).unwrap();
        assert_eq!(grid.candidates.len(), 9);
        assert!(cfg.omega_grid.contains(&grid.best.omega) && cfg.t_grid.contains(&grid.best.t));
    }

    #[test]
    fn model_round_trips_through_json() {
        let (b, _) = random_instance(9, 20, 3);
        let m = SimCalibModel::init(fit_prototypes(&b).unwrap(), &quick_config(), 0.6, 1.0);
        let json = serde_json::to_string(&m).unwrap();
        let back: SimCalibModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn head_count_validated() {
        let cfg = SimCalibConfig {
            heads: 9,
            ..SimCalibConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
