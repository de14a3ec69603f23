//! Calibrators must never read test labels.

use simcal_core::baselines::{
    fit_cagcn, fit_ets, fit_ts, fit_vs, CagcnConfig, EtsConfig, VsConfig,
};
use simcal_core::classifier::{make_bundle, train_gcn, GcnConfig, NodeBundle};
use simcal_core::fitting::Schedule;
use simcal_core::simcalib::{grid_search, SimCalibConfig};
use simcal_core::{gen_csbm, CsbmParams, Graph};

fn bundles() -> (NodeBundle, NodeBundle, Graph) {
    let s = gen_csbm(&CsbmParams {
        num_nodes: 240,
        p_in: 0.06,
        p_out: 0.01,
        seed: 5,
        ..CsbmParams::default()
    })
    .unwrap();
    let cfg = GcnConfig {
        epochs: 60,
        ..GcnConfig::default()
    };
    let params = train_gcn(&s.features, &s.graph, &s.labels, &s.masks, &cfg).unwrap();
    let bundle = make_bundle(&params, &s.features, &s.graph, &s.labels, &s.masks).unwrap();
    let mut flipped = bundle.clone();
    let k = flipped.num_classes();
    for &i in &flipped.masks.test {
        flipped.labels[i] = (flipped.labels[i] + 1) % k;
    }
    (bundle, flipped, s.graph)
}

#[test]
fn fitted_models_ignore_test_labels() {
    let (a, b, g) = bundles();
    let val = &a.masks.val;
    assert_eq!(fit_ts(&a, val).unwrap(), fit_ts(&b, val).unwrap());
    let vs = VsConfig::default();
    assert_eq!(fit_vs(&a, val, &vs).unwrap(), fit_vs(&b, val, &vs).unwrap());
    let ets = EtsConfig::default();
    assert_eq!(
        fit_ets(&a, val, &ets).unwrap(),
        fit_ets(&b, val, &ets).unwrap()
    );

    let short = Schedule {
        epochs: 80,
        ..Schedule::default()
    };
    let cagcn = CagcnConfig {
        schedule: short,
        ..CagcnConfig::default()
    };
    let train = &a.masks.train;
    assert_eq!(
        fit_cagcn(&a, &g, val, train, &cagcn).unwrap(),
        fit_cagcn(&b, &g, val, train, &cagcn).unwrap()
    );

    let sim = SimCalibConfig {
        schedule: short,
        omega_grid: vec![0.6, 0.9],
        t_grid: vec![0.5],
        ..SimCalibConfig::default()
    };
    assert_eq!(
        grid_search(&a, &g, &sim).unwrap(),
        grid_search(&b, &g, &sim).unwrap()
    );
}
