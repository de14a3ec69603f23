use super::matrix::DenseMatrix;
use super::params::{evaluate, value_and_grad, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub passed: bool,
    pub worst_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst_at: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Central-difference check of the analytic gradient of `loss` at `params`.
pub fn finite_diff_check<'a, F>(
    loss: F,
    params: &ParamStore,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let mut work = params.clone();
    value_and_grad(&mut work, &loss)?;
    let analytic: Vec<DenseMatrix> = (0..work.len()).map(|i| work.grad(i).clone()).collect();
    compare_gradients(loss, params, &analytic, step, tol)
}

/// Compares supplied gradients against central differences of `loss`.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn compare_gradients<'a, F>(
    loss: F,
    params: &ParamStore,
    analytic: &[DenseMatrix],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut work = params.clone();
    let mut worst = 0.0f64;
    let mut worst_at = None;
    let mut entries = 0;
    for p in 0..params.len() {
        for k in 0..params.value(p).data().len() {
            let orig = params.value(p).data()[k];
            work.value_mut(p).data_mut()[k] = orig + step;
            let plus = evaluate(&work, &loss)?;
            work.value_mut(p).data_mut()[k] = orig - step;
            let minus = evaluate(&work, &loss)?;
            work.value_mut(p).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[p].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            entries += 1;
            if rel > worst {
                worst = rel;
                worst_at = Some((params.names()[p].clone(), k));
            }
        }
    }
    Ok(GradCheckReport {
        passed: worst <= tol,
        worst_rel_error: worst,
        worst_at,
        entries_checked: entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(t: &mut Tape<'_>, v: &[Var]) -> Result<Var> {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sum(sq))
    }

    #[test]
    fn square_at_three_passes() {
        let mut p = ParamStore::new();
        p.add("x", DenseMatrix::scalar(3.0));
        let r = finite_diff_check(square, &p, 1e-5, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.entries_checked, 1);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut p = ParamStore::new();
        p.add("x", DenseMatrix::scalar(3.0));
        let r = compare_gradients(square, &p, &[DenseMatrix::scalar(12.0)], 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert!((r.worst_rel_error - 0.5).abs() < 1e-6);
    }
}
