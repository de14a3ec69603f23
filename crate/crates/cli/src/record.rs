use serde::{Deserialize, Serialize};
use simcal_core::baselines::{CagcnModel, EtsModel, TsModel, VsModel};
use simcal_core::classifier::NodeBundle;
use simcal_core::metrics::CalibReport;
use simcal_core::numerics::DenseMatrix;
use simcal_core::simcalib::GridResult;
use simcal_core::Graph;

use crate::config::{ExperimentConfig, Method};

/// A calibrator fitted on one bundle, tagged by method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FittedModel {
    Uncal,
    Ts(TsModel),
    Vs(VsModel),
    Ets(EtsModel),
    Cagcn(CagcnModel),
    Simcalib(Box<GridResult>),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Uncal => Method::Uncal,
            FittedModel::Ts(_) => Method::Ts,
            FittedModel::Vs(_) => Method::Vs,
            FittedModel::Ets(_) => Method::Ets,
            FittedModel::Cagcn(_) => Method::Cagcn,
            FittedModel::Simcalib(_) => Method::Simcalib,
        }
    }

    pub fn apply(&self, bundle: &NodeBundle, graph: &Graph) -> simcal_core::Result<DenseMatrix> {
        match self {
            FittedModel::Uncal => Ok(bundle.probs()),
            FittedModel::Ts(m) => Ok(m.apply(&bundle.logits)),
            FittedModel::Vs(m) => Ok(m.apply(&bundle.logits)),
            FittedModel::Ets(m) => Ok(m.apply(&bundle.logits)),
            FittedModel::Cagcn(m) => m.apply(&bundle.logits, graph),
            FittedModel::Simcalib(g) => g.model.apply(bundle, graph),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub calibrator_seed: u64,
    /// Test-mask metrics of the frozen classifier.
    pub before: CalibReport,
    /// Test-mask metrics after calibration.
    pub after: CalibReport,
    pub model: FittedModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ece: f64,
    pub ace: f64,
    pub nll: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Metrics,
    /// Population standard deviation.
    pub std: Metrics,
}

impl Summary {
    pub fn of(reports: &[CalibReport]) -> Self {
        let n = reports.len() as f64;
        let stats = |f: fn(&CalibReport) -> f64| {
            let mean = reports.iter().map(f).sum::<f64>() / n;
            let var = reports.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (ece, ace, nll, acc) = (
            stats(|r| r.ece),
            stats(|r| r.ace),
            stats(|r| r.nll),
            stats(|r| r.accuracy),
        );
        Self {
            mean: Metrics {
                ece: ece.0,
                ace: ace.0,
                nll: nll.0,
                accuracy: acc.0,
            },
            std: Metrics {
                ece: ece.1,
                ace: ace.1,
                nll: nll.1,
                accuracy: acc.1,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub before: Summary,
    pub after: Summary,
}

impl Aggregate {
    pub fn of(runs: &[SeedRecord]) -> Self {
        let before: Vec<CalibReport> = runs.iter().map(|r| r.before).collect();
        let after: Vec<CalibReport> = runs.iter().map(|r| r.after).collect();
        Self {
            before: Summary::of(&before),
            after: Summary::of(&after),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub method: Method,
    pub bins: usize,
    pub runs: Vec<SeedRecord>,
    pub aggregate: Aggregate,
    pub config: ExperimentConfig,
}

impl RunRecord {
    pub fn new(config: &ExperimentConfig, runs: Vec<SeedRecord>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            method: config.method,
            bins: config.bins,
            aggregate: Aggregate::of(&runs),
            runs,
            config: config.clone(),
        }
    }
}
