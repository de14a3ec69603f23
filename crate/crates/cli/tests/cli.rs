use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};
use simcal_cli::bundle::{self, Meta};
use simcal_cli::commands::{self, RELIABILITY_POST, RESULTS};
use simcal_cli::record::Aggregate;
use simcal_cli::{CliError, ExperimentConfig, FittedModel, Method, RunRecord};
use simcal_core::fitting::Schedule;
use simcal_core::numerics::DenseMatrix;
use simcal_core::theory::SweepPoint;
use simcal_core::CsbmParams;
use tempfile::TempDir;

fn small_config(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        out: dir.to_path_buf(),
        seeds: vec![0, 1],
        csbm: CsbmParams {
            num_nodes: 300,
            p_in: 0.06,
            p_out: 0.012,
            ..CsbmParams::default()
        },
        ..ExperimentConfig::default()
    };
    c.simcalib.schedule = Schedule {
        epochs: 150,
        ..Schedule::default()
    };
    c.cagcn.schedule = c.simcalib.schedule;
    c
}

fn pretrained() -> (TempDir, ExperimentConfig) {
    let tmp = TempDir::new().unwrap();
    let c = small_config(tmp.path());
    commands::datagen(&c).unwrap();
    commands::pretrain(&c).unwrap();
    (tmp, c)
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

#[test]
fn datagen_writes_five_files_with_metadata() {
    let tmp = TempDir::new().unwrap();
    let c = ExperimentConfig {
        out: tmp.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    commands::datagen(&c).unwrap();
    let names: BTreeSet<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 5);
    for f in bundle::DATA_FILES {
        assert!(names.contains(f), "{f}");
    }
    let meta: Meta = bundle::read_json(&tmp.path().join(bundle::META)).unwrap();
    assert_eq!(
        (meta.num_nodes, meta.num_classes, meta.feature_dim),
        (1000, 4, 64)
    );
    let labels = bundle::read_labels(&tmp.path().join(bundle::LABELS)).unwrap();
    assert_eq!(
        labels.iter().collect::<BTreeSet<_>>().len(),
        meta.num_classes
    );
}

#[test]
fn datagen_is_byte_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    commands::datagen(&small_config(a.path())).unwrap();
    commands::datagen(&small_config(b.path())).unwrap();
    for f in bundle::DATA_FILES {
        assert_eq!(digest(&a.path().join(f)), digest(&b.path().join(f)), "{f}");
    }
}

#[test]
fn matrix_files_round_trip_to_nine_digits() {
    let tmp = TempDir::new().unwrap();
    let m = DenseMatrix::from_fn(7, 3, |i, j| {
        ((i * 3 + j) as f64 * 1.37).sin() * 10f64.powi(i as i32 - 3)
    });
    let path = tmp.path().join("m.csv");
    bundle::write_matrix(&path, &m).unwrap();
    let back = bundle::read_matrix(&path).unwrap();
    assert_eq!(back.shape(), m.shape());
    for (a, b) in m.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 1e-7 * a.abs().max(1e-300));
    }
}

#[test]
fn pretrain_writes_logits_and_overtrained_ece_gap() {
    let (tmp, _) = pretrained();
    let logits = bundle::read_matrix(&tmp.path().join(bundle::LOGITS)).unwrap();
    assert_eq!(logits.shape(), (300, 4));
    let meta: Meta = bundle::read_json(&tmp.path().join(bundle::META)).unwrap();
    let c = meta.classifier.unwrap();
    assert!(c.test_ece >= c.train_ece, "{c:?}");
    assert_eq!(meta.hidden_dim, Some(16));
}

#[test]
fn missing_inputs_are_listed() {
    let tmp = TempDir::new().unwrap();
    let c = small_config(tmp.path());
    commands::datagen(&c).unwrap();
    fs::remove_file(tmp.path().join(bundle::MASKS)).unwrap();
    match commands::pretrain(&c) {
        Err(CliError::MissingFiles { files, .. }) => assert_eq!(files, vec!["masks.json"]),
        other => panic!("{other:?}"),
    }
    match commands::calibrate(&c) {
        Err(CliError::MissingFiles { files, .. }) => {
            assert_eq!(files, vec!["hidden.csv", "logits.csv", "masks.json"])
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn calibrate_methods_and_record_round_trip() {
    let (tmp, mut c) = pretrained();
    let bundle_files: Vec<Vec<u8>> = bundle::BUNDLE_FILES
        .iter()
        .map(|f| digest(&tmp.path().join(f)))
        .collect();

    c.method = Method::Uncal;
    let r = commands::calibrate(&c).unwrap();
    for run in &r.runs {
        assert_eq!(run.before, run.after);
    }

    c.method = Method::Ts;
    let r = commands::calibrate(&c).unwrap();
    assert_eq!(r.runs[0].before.accuracy, r.runs[0].after.accuracy);

    c.method = Method::Simcalib;
    let r = commands::calibrate(&c).unwrap();
    for run in &r.runs {
        let FittedModel::Simcalib(g) = &run.model else {
            panic!("wrong model")
        };
        assert!([0.6, 0.8, 0.9].contains(&g.best.omega));
        assert!([0.3, 0.5, 1.0].contains(&g.best.t));
        assert_eq!(g.candidates.len(), 9);
    }

    let text = fs::read_to_string(tmp.path().join(RESULTS)).unwrap();
    let back: RunRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
    assert_eq!(Aggregate::of(&back.runs), back.aggregate);
    assert!(tmp.path().join(RELIABILITY_POST).is_file());

    for (f, h) in bundle::BUNDLE_FILES.iter().zip(&bundle_files) {
        assert_eq!(&digest(&tmp.path().join(f)), h, "{f} changed");
    }
}

#[test]
fn every_method_runs() {
    let (_tmp, mut c) = pretrained();
    c.seeds = vec![3];
    for m in Method::ALL {
        c.method = m;
        let r = commands::calibrate(&c).unwrap();
        assert_eq!(r.runs[0].model.method(), m);
        let (b, a) = (r.runs[0].before, r.runs[0].after);
        if m != Method::Vs {
            assert_eq!(a.accuracy, b.accuracy, "{m}");
        }
    }
}

#[test]
fn unknown_method_lists_valid_names() {
    let err = "platt".parse::<Method>().unwrap_err();
    let msg = err.to_string();
    for m in Method::ALL {
        assert!(msg.contains(m.name()));
    }
    assert_eq!(err.exit_code(), 2);
    let bad: Result<ExperimentConfig, _> = serde_json::from_str(r#"{"method": "platt"}"#);
    assert!(bad.unwrap_err().to_string().contains("simcalib"));
}

#[test]
fn reliability_tables_agree_with_calibrate() {
    let (tmp, mut c) = pretrained();
    c.method = Method::Ts;
    let r = commands::calibrate(&c).unwrap();
    let out = commands::reliability_report(&c, Some(&tmp.path().join(RESULTS))).unwrap();
    let test_size = 300 - 45 - 45;
    assert_eq!(out.pre.total(), test_size);
    assert!((out.pre.ece() - r.runs[0].before.ece).abs() < 1e-15);
    assert!((out.post.unwrap().ece() - r.runs[0].after.ece).abs() < 1e-15);
    let hist = fs::read_to_string(tmp.path().join(commands::HISTOGRAM_PRE)).unwrap();
    let counts: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(counts, test_size);
    assert_eq!(hist.lines().count(), 16);
}

#[test]
fn single_bin_ece_is_accuracy_gap() {
    let (_tmp, mut c) = pretrained();
    c.bins = 1;
    c.method = Method::Uncal;
    c.seeds = vec![0];
    let out = commands::reliability_report(&c, None).unwrap();
    assert_eq!(out.pre.bins.len(), 1);
    let b = out.pre.bins[0];
    assert!((out.pre.ece() - (b.mean_acc - b.mean_conf).abs()).abs() < 1e-15);
    let r = commands::calibrate(&c).unwrap();
    assert!((r.runs[0].before.ece - (r.runs[0].before.accuracy - b.mean_conf).abs()).abs() < 1e-12);
}

#[test]
fn theory_rows_match_grid() {
    let tmp = TempDir::new().unwrap();
    let mut c = small_config(tmp.path());
    c.theory.trials = 20;
    c.theory.mc_samples = 200;
    c.theory.points = [1.0, 2.66, 4.0]
        .iter()
        .map(|&a| SweepPoint {
            d: 64,
            n: 4,
            a,
            b_norm: 0.0,
        })
        .collect();
    let out = commands::theory(&c).unwrap();
    assert_eq!(out.rows.len(), 3);
    let csv = fs::read_to_string(tmp.path().join(commands::THEORY_SUMMARY)).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.example_frequency.is_some());

    c.theory.points.clear();
    assert!(matches!(commands::theory(&c), Err(CliError::Usage(_))));
}

fn simcal(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_simcal"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_str().unwrap();
    assert_eq!(simcal(&["frobnicate"]).0, 2);
    assert_eq!(simcal(&["calibrate", "--seed", "minus-one"]).0, 2);
    let (code, err) = simcal(&["pretrain", "--out", dir]);
    assert_eq!(code, 1);
    assert!(
        err.contains("graph.txt") && err.contains("meta.json"),
        "{err}"
    );

    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"theory": {"points": []}}"#).unwrap();
    let (code, err) = simcal(&["theory", "--config", cfg.to_str().unwrap(), "--out", dir]);
    assert_eq!(code, 2, "{err}");

    fs::write(&cfg, r#"{"csbm": {"num_nodes": 120}}"#).unwrap();
    assert_eq!(
        simcal(&["datagen", "--config", cfg.to_str().unwrap(), "--out", dir]).0,
        0
    );
    let (code, err) = simcal(&["calibrate", "--out", dir, "--method", "nope"]);
    assert_eq!(code, 2);
    assert!(err.contains("cagcn"));
}
