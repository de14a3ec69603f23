use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, DenseMatrix};

/// Class prototypes of the hidden features with a shared, ridged covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    /// `K × h`, row `k` is the mean hidden feature of class `k`.
    pub means: DenseMatrix,
    pub covariance: DenseMatrix,
    pub ridge: f64,
    /// `(Σ̂ + λI)^-1`.
    pub inverse: DenseMatrix,
}

/// Mean hidden feature per class over the labeled `set`.
pub fn class_prototypes(
    hidden: &DenseMatrix,
    labels: &[usize],
    set: &[usize],
    num_classes: usize,
) -> Result<DenseMatrix> {
    let h = hidden.cols();
    let mut sums = DenseMatrix::zeros(num_classes, h);
    let mut counts = vec![0usize; num_classes];
    for &i in set {
        let y = labels[i];
        counts[y] += 1;
        for (s, &v) in sums.row_mut(y).iter_mut().zip(hidden.row(i)) {
            *s += v;
        }
    }
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyClass { class: k });
        }
        sums.row_mut(k).iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(sums)
}

/// Pooled within-class covariance and the inverse of its ridged version,
/// with `λ = 1e-4 · trace(Σ̂) / h`, floored at `1e-8`.
pub fn shared_covariance(
    hidden: &DenseMatrix,
    labels: &[usize],
    set: &[usize],
    means: &DenseMatrix,
) -> Result<(DenseMatrix, f64, DenseMatrix)> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let h = hidden.cols();
    let mut cov = DenseMatrix::zeros(h, h);
    let mut diff = vec![0.0; h];
    for &i in set {
        for ((d, &x), &m) in diff.iter_mut().zip(hidden.row(i)).zip(means.row(labels[i])) {
            *d = x - m;
        }
        for a in 0..h {
            let da = diff[a];
            if da == 0.0 {
                continue;
            }
            for (c, &db) in cov.row_mut(a).iter_mut().zip(&diff) {
                *c += da * db;
            }
        }
    }
    let n = set.len() as f64;
    cov.data_mut().iter_mut().for_each(|v| *v /= n);
    let ridge = (1e-4 * cov.trace() / h as f64).max(1e-8);
    let mut ridged = cov.clone();
    for a in 0..h {
        ridged.set(a, a, ridged.get(a, a) + ridge);
    }
    let inverse = ridged.spd_inverse()?;
    Ok((cov, ridge, inverse))
}

impl PrototypeSet {
    pub fn fit(
        hidden: &DenseMatrix,
        labels: &[usize],
        set: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        let means = class_prototypes(hidden, labels, set, num_classes)?;
        let (covariance, ridge, inverse) = shared_covariance(hidden, labels, set, &means)?;
        Ok(Self {
            means,
            covariance,
            ridge,
            inverse,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    /// `(x − μ̂_k)ᵀ (Σ̂ + λI)^-1 (x − μ̂_k)`.
    pub fn mahalanobis(&self, x: &[f64], k: usize) -> f64 {
        let diff: Vec<f64> = x
            .iter()
            .zip(self.means.row(k))
            .map(|(a, b)| a - b)
            .collect();
        let q: f64 = (0..diff.len())
            .map(|a| diff[a] * dot(self.inverse.row(a), &diff))
            .sum();
        q.max(0.0)
    }

    /// Unit vector of distances to every prototype; uniform `1/√K` when all
    /// distances vanish.
    pub fn similarity_vector(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = (0..self.num_classes())
            .map(|k| self.mahalanobis(x, k))
            .collect();
        normalize_or_uniform(d)
    }

    /// Similarity rows for every node.
    pub fn similarity_matrix(&self, hidden: &DenseMatrix) -> DenseMatrix {
        let k = self.num_classes();
        let mut s = DenseMatrix::zeros(hidden.rows(), k);
        for i in 0..hidden.rows() {
            s.row_mut(i)
                .copy_from_slice(&self.similarity_vector(hidden.row(i)));
        }
        s
    }
}

pub(crate) fn normalize_or_uniform(mut d: Vec<f64>) -> Vec<f64> {
    let norm = norm2(&d);
    if norm == 0.0 {
        let u = 1.0 / (d.len() as f64).sqrt();
        d.iter_mut().for_each(|v| *v = u);
    } else {
        d.iter_mut().for_each(|v| *v /= norm);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn protos_with_inverse(means: DenseMatrix, inverse: DenseMatrix) -> PrototypeSet {
        let h = inverse.rows();
        PrototypeSet {
            means,
            covariance: DenseMatrix::zeros(h, h),
            ridge: 1e-8,
            inverse,
        }
    }

    #[test]
    fn prototype_is_class_mean() {
        let h = DenseMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0], vec![5.0, 5.0]]).unwrap();
        let m = class_prototypes(&h, &[0, 0, 1], &[0, 1, 2], 2).unwrap();
        assert_eq!(m.row(0), &[1.0, 1.0]);
        assert_eq!(m.row(1), &[5.0, 5.0]);
        let permuted = class_prototypes(&h, &[0, 0, 1], &[2, 1, 0], 2).unwrap();
        assert_eq!(m, permuted);
    }

    #[test]
    fn empty_class_is_named() {
        let h = DenseMatrix::zeros(2, 2);
        let err = class_prototypes(&h, &[0, 2], &[0, 1], 3).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { class: 1 }));
    }

    #[test]
    fn covariance_examples() {
        let h = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let m = class_prototypes(&h, &[0, 0], &[0, 1], 1).unwrap();
        let (cov, _, _) = shared_covariance(&h, &[0, 0], &[0, 1], &m).unwrap();
        assert_eq!(cov.data(), &[1.0, 0.0, 0.0, 0.0]);

        let same = DenseMatrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 3.0]]).unwrap();
        let m = class_prototypes(&same, &[0, 0], &[0, 1], 1).unwrap();
        let (cov, ridge, inv) = shared_covariance(&same, &[0, 0], &[0, 1], &m).unwrap();
        assert!(cov.data().iter().all(|&v| v == 0.0));
        assert_eq!(ridge, 1e-8);
        for a in 0..2 {
            for b in 0..2 {
                let want = if a == b { 1.0 / ridge } else { 0.0 };
                assert!((inv.get(a, b) - want).abs() <= 1e-6 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mahalanobis_examples() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let p = protos_with_inverse(m.clone(), DenseMatrix::identity(2));
        assert_eq!(p.mahalanobis(&[0.0, 0.0], 0), 0.0);
        assert_eq!(p.mahalanobis(&[3.0, 4.0], 0), 25.0);
        let diag = DenseMatrix::from_rows(&[vec![0.25, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = protos_with_inverse(m, diag);
        assert_eq!(p.mahalanobis(&[2.0, 1.0], 0), 2.0);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(normalize_or_uniform(vec![3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(normalize_or_uniform(vec![5.0, 0.0]), vec![1.0, 0.0]);
        let u = normalize_or_uniform(vec![0.0; 4]);
        assert_eq!(u, vec![0.5; 4]);
        let m = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let p = protos_with_inverse(m, DenseMatrix::identity(2));
        let s = p.similarity_vector(&[0.3, -2.0]);
        assert!((norm2(&s) - 1.0).abs() < 1e-12);
    }
}
