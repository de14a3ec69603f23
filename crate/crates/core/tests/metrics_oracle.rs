//! ECE against a brute-force oracle that materialises every bin explicitly.

use rand::Rng;
use simcal_core::metrics::{ece, reliability};
use simcal_core::numerics::rng::rng_for;

fn brute_force_ece(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for m in 1..=bins {
        let lo = (m - 1) as f64 / bins as f64;
        let hi = m as f64 / bins as f64;
        // Bin 1 is closed on the left so zero confidence lands somewhere.
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| (conf[i] > lo || (m == 1 && conf[i] >= lo)) && conf[i] <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let c = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / c;
        let mean_conf = members.iter().map(|&i| conf[i]).sum::<f64>() / c;
        total += c / n * (acc - mean_conf).abs();
    }
    total
}

#[test]
fn ece_matches_bin_materialisation() {
    let mut rng = rng_for(2024, &[]);
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let bins = rng.random_range(1..30);
        let conf: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..4) {
                // Exact bin edges exercise the boundary convention.
                0 => rng.random_range(0..=bins) as f64 / bins as f64,
                _ => rng.random::<f64>(),
            })
            .collect();
        let correct: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let got = ece(&conf, &correct, bins).unwrap();
        let want = brute_force_ece(&conf, &correct, bins);
        assert!(
            (got - want).abs() <= 1e-12,
            "n={n} bins={bins}: {got} vs {want}"
        );
        let table = reliability(&conf, &correct, bins).unwrap();
        assert_eq!(table.total(), n);
        assert!((table.ece() - want).abs() <= 1e-12);
    }
}
