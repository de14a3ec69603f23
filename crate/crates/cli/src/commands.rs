use std::path::Path;

use anyhow::Context;
use simcal_core::baselines::{fit_cagcn, fit_ets, fit_ts, fit_vs, CagcnConfig};
use simcal_core::classifier::{make_bundle, train_gcn, NodeBundle};
use simcal_core::metrics::{outcomes, reliability, report, ReliabilityTable};
use simcal_core::numerics::rng::{derive_seed, stream};
use simcal_core::numerics::DenseMatrix;
use simcal_core::simcalib::{grid_search, SimCalibConfig};
use simcal_core::theory::{sweep, sweep_csv, SweepRow};
use simcal_core::{gen_csbm, Graph};

use crate::bundle::{self, ClassifierSummary, DataFiles, Meta};
use crate::config::{ExperimentConfig, Method, EXAMPLE_POINT};
use crate::error::{CliError, CliResult};
use crate::record::{FittedModel, RunRecord, SeedRecord};

pub const RESULTS: &str = "results.json";
pub const CONFIG: &str = "config.json";
pub const RELIABILITY_PRE: &str = "reliability_pre.csv";
pub const RELIABILITY_POST: &str = "reliability_post.csv";
pub const HISTOGRAM_PRE: &str = "histogram_pre.csv";
pub const HISTOGRAM_POST: &str = "histogram_post.csv";
pub const THEORY_SUMMARY: &str = "theory_summary.csv";

/// Frequency the worked example point must reach.
pub const ECE_ORDER_THRESHOLD: f64 = 0.84;

pub fn datagen(config: &ExperimentConfig) -> CliResult<Meta> {
    let params = config.csbm_params();
    let sample = gen_csbm(&params).map_err(|e| CliError::Usage(e.to_string()))?;
    let meta = Meta {
        num_nodes: params.num_nodes,
        num_classes: params.num_classes,
        feature_dim: params.feature_dim,
        hidden_dim: None,
        classifier: None,
    };
    DataFiles {
        graph: sample.graph,
        features: sample.features,
        labels: sample.labels,
        masks: sample.masks,
        meta: meta.clone(),
    }
    .save(&config.out)?;
    Ok(meta)
}

fn ece_on(probs: &DenseMatrix, bundle: &NodeBundle, set: &[usize], bins: usize) -> CliResult<f64> {
    let (conf, correct) = outcomes(probs, &bundle.labels, set)?;
    Ok(simcal_core::metrics::ece(&conf, &correct, bins)?)
}

pub fn pretrain(config: &ExperimentConfig) -> CliResult<Meta> {
    config.validate()?;
    let dir = &config.out;
    let data = DataFiles::load(dir)?;
    let gcn = config.pretrain.effective(config.seed);
    let params = train_gcn(&data.features, &data.graph, &data.labels, &data.masks, &gcn)?;
    let b = make_bundle(
        &params,
        &data.features,
        &data.graph,
        &data.labels,
        &data.masks,
    )?;
    bundle::write_matrix(&dir.join(bundle::HIDDEN), &b.hidden)?;
    bundle::write_matrix(&dir.join(bundle::LOGITS), &b.logits)?;

    let probs = b.probs();
    let masks = &b.masks;
    let mut meta = data.meta;
    meta.hidden_dim = Some(b.hidden.cols());
    meta.classifier = Some(ClassifierSummary {
        train_accuracy: b.accuracy(&masks.train),
        val_accuracy: b.accuracy(&masks.val),
        test_accuracy: b.accuracy(&masks.test),
        train_ece: ece_on(&probs, &b, &masks.train, config.bins)?,
        test_ece: ece_on(&probs, &b, &masks.test, config.bins)?,
        epochs: gcn.epochs,
    });
    bundle::write_json(&dir.join(bundle::META), &meta)?;
    Ok(meta)
}

/// Calibrator seed of run `seed` under the master seed.
pub fn calibrator_seed(master: u64, seed: u64) -> u64 {
    derive_seed(master, &[stream::CALIB_RUN, seed])
}

/// Fits `method` on the validation mask; the graph-aware calibrators select
/// their snapshot on the training mask.
pub fn fit_method(
    method: Method,
    config: &ExperimentConfig,
    bundle: &NodeBundle,
    graph: &Graph,
    seed: u64,
) -> CliResult<FittedModel> {
    let (val, train) = (&bundle.masks.val, &bundle.masks.train);
    Ok(match method {
        Method::Uncal => FittedModel::Uncal,
        Method::Ts => FittedModel::Ts(fit_ts(bundle, val)?),
        Method::Vs => FittedModel::Vs(fit_vs(bundle, val, &config.vs)?),
        Method::Ets => FittedModel::Ets(fit_ets(bundle, val, &config.ets)?),
        Method::Cagcn => {
            let c = CagcnConfig {
                seed,
                ..config.cagcn
            };
            FittedModel::Cagcn(fit_cagcn(bundle, graph, val, train, &c)?)
        }
        Method::Simcalib => {
            let c = SimCalibConfig {
                seed,
                bins: config.bins,
                ..config.simcalib.clone()
            };
            c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            FittedModel::Simcalib(Box::new(grid_search(bundle, graph, &c)?))
        }
    })
}

fn reliability_table(
    probs: &DenseMatrix,
    bundle: &NodeBundle,
    bins: usize,
) -> CliResult<ReliabilityTable> {
    let (conf, correct) = outcomes(probs, &bundle.labels, &bundle.masks.test)?;
    Ok(reliability(&conf, &correct, bins)?)
}

pub fn calibrate(config: &ExperimentConfig) -> CliResult<RunRecord> {
    config.validate()?;
    let dir = &config.out;
    let (bundle, graph, _) = bundle::load_bundle(dir)?;
    let test = &bundle.masks.test;
    let pre = bundle.probs();
    let before = report(&pre, &bundle.labels, test, config.bins)?;

    let mut runs = Vec::with_capacity(config.seeds.len());
    let mut first_post = None;
    for &seed in &config.seeds {
        let cs = calibrator_seed(config.seed, seed);
        let model = fit_method(config.method, config, &bundle, &graph, cs)?;
        let post = model.apply(&bundle, &graph)?;
        let after = report(&post, &bundle.labels, test, config.bins)?;
        first_post.get_or_insert(post);
        runs.push(SeedRecord {
            seed,
            calibrator_seed: cs,
            before,
            after,
            model,
        });
    }
    let record = RunRecord::new(config, runs);
    bundle::write_json(&dir.join(RESULTS), &record)?;
    bundle::write_json(&dir.join(CONFIG), config)?;
    let post = first_post.expect("seeds are nonempty");
    bundle::write_text(
        &dir.join(RELIABILITY_PRE),
        &reliability_table(&pre, &bundle, config.bins)?.to_csv(),
    )?;
    bundle::write_text(
        &dir.join(RELIABILITY_POST),
        &reliability_table(&post, &bundle, config.bins)?.to_csv(),
    )?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityOutput {
    pub pre: ReliabilityTable,
    pub post: Option<ReliabilityTable>,
}

/// Test-mask reliability tables and confidence histograms; `model` is a
/// `results.json` whose first run supplies the calibrator.
pub fn reliability_report(
    config: &ExperimentConfig,
    model: Option<&Path>,
) -> CliResult<ReliabilityOutput> {
    config.validate()?;
    let dir = &config.out;
    let (bundle, graph, _) = bundle::load_bundle(dir)?;
    let pre = reliability_table(&bundle.probs(), &bundle, config.bins)?;
    bundle::write_text(&dir.join(RELIABILITY_PRE), &pre.to_csv())?;
    bundle::write_text(&dir.join(HISTOGRAM_PRE), &pre.histogram_csv())?;
    let post = match model {
        None => None,
        Some(path) => {
            let record: RunRecord = bundle::read_json(path)?;
            let fitted = &record
                .runs
                .first()
                .with_context(|| format!("{} has no runs", path.display()))?
                .model;
            let table = reliability_table(&fitted.apply(&bundle, &graph)?, &bundle, config.bins)?;
            bundle::write_text(&dir.join(RELIABILITY_POST), &table.to_csv())?;
            bundle::write_text(&dir.join(HISTOGRAM_POST), &table.histogram_csv())?;
            Some(table)
        }
    };
    Ok(ReliabilityOutput { pre, post })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryOutput {
    pub rows: Vec<SweepRow>,
    pub csv: String,
    /// ECE-ordering frequency at the worked example point, if it was swept
    /// under the default noise level.
    pub example_frequency: Option<f64>,
}

impl TheoryOutput {
    pub fn verdict(&self) -> String {
        match self.example_frequency {
            Some(f) if f >= ECE_ORDER_THRESHOLD => {
                format!("PASS (frequency {f:.4} >= {ECE_ORDER_THRESHOLD})")
            }
            Some(f) => format!("FAIL (frequency {f:.4} < {ECE_ORDER_THRESHOLD})"),
            None => "not evaluated (example point d=64, n=4, a=2.66, b=0 not in grid)".into(),
        }
    }
}

pub fn theory(config: &ExperimentConfig) -> CliResult<TheoryOutput> {
    let t = &config.theory;
    if t.points.is_empty() {
        return Err(CliError::Usage("theory grid is empty".into()));
    }
    if t.trials == 0 || t.mc_samples == 0 {
        return Err(CliError::Usage(
            "theory trials and mc_samples must be positive".into(),
        ));
    }
    let rows = sweep(&t.template, &t.points, t.trials, t.mc_samples, config.seed)?;
    let csv = sweep_csv(&rows);
    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("creating {}", config.out.display()))?;
    bundle::write_text(&config.out.join(THEORY_SUMMARY), &csv)?;
    let default_noise = t.template.sigma2.is_none_or(|s| s == 16.0);
    let example_frequency = rows
        .iter()
        .find(|r| {
            let p = r.point;
            p.d == EXAMPLE_POINT.d
                && p.n == EXAMPLE_POINT.n
                && p.a.abs() == EXAMPLE_POINT.a
                && p.b_norm == 0.0
        })
        .filter(|_| default_noise)
        .map(|r| r.ece.freq);
    Ok(TheoryOutput {
        rows,
        csv,
        example_frequency,
    })
}
