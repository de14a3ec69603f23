//! Reference calibrators: temperature scaling, vector scaling, ensemble
//! temperature scaling and a GCN-on-logits nodewise temperature model.

mod cagcn;
mod ets;
mod ts;
mod vs;

pub use cagcn::{fit_cagcn, CagcnConfig, CagcnModel, TEMPERATURE_FLOOR, UNIT_TEMPERATURE_BIAS};
pub use ets::{fit_ets, project_simplex, project_weights, EtsConfig, EtsModel, MAX_UNIFORM_WEIGHT};
pub use ts::{fit_ts, nll_at_temperature, TsModel, TS_MAX, TS_MIN};
pub use vs::{fit_vs, vs_loss, VsConfig, VsModel};

use crate::numerics::{softmax_in_place, DenseMatrix};

/// Row `i` is `softmax(z_i / t_i)`.
pub fn temperature_softmax(logits: &DenseMatrix, temps: &[f64]) -> DenseMatrix {
    debug_assert_eq!(logits.rows(), temps.len());
    let mut out = logits.clone();
    for (i, &t) in temps.iter().enumerate() {
        let row = out.row_mut(i);
        row.iter_mut().for_each(|v| *v /= t);
        softmax_in_place(row);
    }
    out
}
