//! Calibration metrics: ECE over equal-width bins, ACE over equal-mass
//! bins, NLL, accuracy and reliability tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-row maximum probability and predicted class.
pub fn confidences(probs: &DenseMatrix) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut conf = Vec::with_capacity(probs.rows());
    let mut pred = Vec::with_capacity(probs.rows());
    for i in 0..probs.rows() {
        let row = probs.row(i);
        let total: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::NotDistribution { row: i });
        }
        let k = argmax(row);
        conf.push(row[k]);
        pred.push(k);
    }
    Ok((conf, pred))
}

/// 0-based bin for confidence `c` under `((m-1)/M, m/M]`, with 0 in the
/// first bin.
pub fn bin_index(c: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut b = (c * m).ceil().clamp(1.0, m) as usize;
    // Re-check against the interval edges as floats.
    if b > 1 && c <= (b - 1) as f64 / m {
        b -= 1;
    }
    if b < bins && c > b as f64 / m {
        b += 1;
    }
    b - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub count: usize,
    pub mean_conf: f64,
    pub mean_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityTable {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// ECE recomposed from the per-bin statistics.
    pub fn ece(&self) -> f64 {
        let n = self.total() as f64;
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / n * (b.mean_acc - b.mean_conf).abs())
            .sum()
    }

    /// `bin,count,mean_conf,mean_acc`, one row per bin (1-based), empty bins as zeros.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,count,mean_conf,mean_acc\n");
        for (m, b) in self.bins.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                m + 1,
                b.count,
                b.mean_conf,
                b.mean_acc
            ));
        }
        s
    }

    /// `bin,lo,hi,count` confidence histogram over the same bins.
    pub fn histogram_csv(&self) -> String {
        let m = self.bins.len() as f64;
        let mut s = String::from("bin,lo,hi,count\n");
        for (i, b) in self.bins.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                i as f64 / m,
                (i + 1) as f64 / m,
                b.count
            ));
        }
        s
    }
}

fn check_inputs(conf: &[f64], correct: &[bool], bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::InvalidParams("bin count must be at least 1".into()));
    }
    if conf.len() != correct.len() {
        return Err(Error::Shape {
            op: "calibration metric",
            detail: format!("{} confidences, {} outcomes", conf.len(), correct.len()),
        });
    }
    if conf.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

/// Per-bin count, mean confidence and mean accuracy over equal-width bins.
pub fn reliability(conf: &[f64], correct: &[bool], bins: usize) -> Result<ReliabilityTable> {
    check_inputs(conf, correct, bins)?;
    let mut count = vec![0usize; bins];
    let mut sum_conf = vec![0.0; bins];
    let mut sum_acc = vec![0.0; bins];
    for (&c, &ok) in conf.iter().zip(correct) {
        let b = bin_index(c, bins);
        count[b] += 1;
        sum_conf[b] += c;
        sum_acc[b] += f64::from(u8::from(ok));
    }
    Ok(ReliabilityTable {
        bins: (0..bins)
            .map(|b| {
                if count[b] == 0 {
                    ReliabilityBin {
                        count: 0,
                        mean_conf: 0.0,
                        mean_acc: 0.0,
                    }
                } else {
                    let n = count[b] as f64;
                    ReliabilityBin {
                        count: count[b],
                        mean_conf: sum_conf[b] / n,
                        mean_acc: sum_acc[b] / n,
                    }
                }
            })
            .collect(),
    })
}

/// Expected calibration error over `bins` equal-width confidence bins.
pub fn ece(conf: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    Ok(reliability(conf, correct, bins)?.ece())
}

/// Adaptive calibration error: equal-mass bins, unweighted mean gap.
pub fn ace(conf: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    check_inputs(conf, correct, bins)?;
    let n = conf.len();
    if n < bins {
        return Err(Error::InvalidParams(format!(
            "ACE needs at least {bins} nodes, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(a.cmp(&b)));
    let base = n / bins;
    let extra = n % bins;
    let mut start = 0;
    let mut total = 0.0;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        let chunk = &order[start..start + size];
        let mc = chunk.iter().map(|&i| conf[i]).sum::<f64>() / size as f64;
        let ma = chunk.iter().filter(|&&i| correct[i]).count() as f64 / size as f64;
        total += (ma - mc).abs();
        start += size;
    }
    Ok(total / bins as f64)
}

/// Mean negative log-likelihood over `set`, probabilities floored at 1e-12.
pub fn nll(probs: &DenseMatrix, labels: &[usize], set: &[usize]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(set
        .iter()
        .map(|&i| -probs.get(i, labels[i]).max(1e-12).ln())
        .sum::<f64>()
        / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibReport {
    pub ece: f64,
    pub ace: f64,
    pub nll: f64,
    pub accuracy: f64,
    pub bins: usize,
}

/// All metrics of `probs` restricted to `set`.
pub fn report(
    probs: &DenseMatrix,
    labels: &[usize],
    set: &[usize],
    bins: usize,
) -> Result<CalibReport> {
    let (conf, correct) = outcomes(probs, labels, set)?;
    Ok(CalibReport {
        ece: ece(&conf, &correct, bins)?,
        ace: ace(&conf, &correct, bins)?,
        nll: nll(probs, labels, set)?,
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / set.len() as f64,
        bins,
    })
}

/// Confidences and correctness indicators of `probs` on `set`.
pub fn outcomes(
    probs: &DenseMatrix,
    labels: &[usize],
    set: &[usize],
) -> Result<(Vec<f64>, Vec<bool>)> {
    let (conf, pred) = confidences(&probs.select_rows(set))?;
    let correct = set
        .iter()
        .zip(&pred)
        .map(|(&i, &p)| labels[i] == p)
        .collect();
    Ok((conf, correct))
}
