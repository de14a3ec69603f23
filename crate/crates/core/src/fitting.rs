//! Adam training loop with best-snapshot model selection, shared by the
//! gradient-trained calibrators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{value_and_grad_aux, AdamConfig, AdamState, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    /// Epochs without a selection-NLL improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 2000,
            patience: 100,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ParamStore,
    pub initial_fit_loss: f64,
    pub best_fit_loss: f64,
    pub best_selection: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Minimises the fit loss with Adam and returns the snapshot with the lowest
/// selection score among snapshots whose fit loss does not exceed the
/// initial one.
///
/// `forward` returns the fit-loss node and the selection score of the same
/// parameters.
pub fn fit_with_selection<'a, F>(
    mut params: ParamStore,
    schedule: &Schedule,
    forward: F,
) -> Result<FitOutcome>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<(Var, f64)>,
{
    let mut adam = AdamState::new(&params, schedule.adam);
    let mut best = params.clone();
    let mut initial_fit = f64::NAN;
    let mut best_fit = f64::INFINITY;
    let mut best_sel = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0usize;
    let mut epochs_run = 0;

    // One extra evaluation scores the parameters left by the final step.
    for epoch in 0..=schedule.epochs {
        let (fit, sel) = value_and_grad_aux(&mut params, &forward)
            .map_err(|e| Error::Diverged(format!("epoch {epoch}: {e}")))?;
        if !fit.is_finite() || !sel.is_finite() {
            return Err(Error::Diverged(format!(
                "epoch {epoch}: fit loss {fit}, selection {sel}"
            )));
        }
        if epoch == 0 {
            initial_fit = fit;
        }
        if sel < best_sel && fit <= initial_fit {
            best_sel = sel;
            best_fit = fit;
            best_epoch = epoch;
            best.copy_values_from(&params);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if epoch == schedule.epochs || since_best > schedule.patience {
            break;
        }
        adam.step(&mut params)?;
        epochs_run += 1;
    }

    Ok(FitOutcome {
        params: best,
        initial_fit_loss: initial_fit,
        best_fit_loss: best_fit,
        best_selection: best_sel,
        best_epoch,
        epochs_run,
    })
}
