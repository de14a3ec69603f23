use serde::{Deserialize, Serialize};

use super::temperature_softmax;
use crate::classifier::NodeBundle;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub const TS_MIN: f64 = 0.05;
pub const TS_MAX: f64 = 20.0;

/// Single global temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsModel {
    pub temperature: f64,
}

impl TsModel {
    pub fn apply(&self, logits: &DenseMatrix) -> DenseMatrix {
        temperature_softmax(logits, &vec![self.temperature; logits.rows()])
    }
}

/// Mean NLL of `softmax(z / t)` over `set`, via log-sum-exp.
pub fn nll_at_temperature(logits: &DenseMatrix, labels: &[usize], set: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for &i in set {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse = m + row.iter().map(|&z| (z / t - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]] / t;
    }
    total / set.len() as f64
}

/// Golden-section search for the NLL-optimal temperature on `log T` in
/// `[ln 0.05, ln 20]`. Falls back to `T = 1` unless the optimum is strictly
/// better.
pub fn fit_ts(bundle: &NodeBundle, set: &[usize]) -> Result<TsModel> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let f = |u: f64| nll_at_temperature(&bundle.logits, &bundle.labels, set, u.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TS_MIN.ln(), TS_MAX.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let u = 0.5 * (a + b);
    let t = u.exp().clamp(TS_MIN, TS_MAX);
    let temperature = if f(t.ln()) < f(0.0) { t } else { 1.0 };
    Ok(TsModel { temperature })
}
