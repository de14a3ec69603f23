use super::matrix::DenseMatrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Named parameter tensors with one gradient slot each.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DenseMatrix>,
    grads: Vec<DenseMatrix>,
    grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its slot index.
    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> usize {
        self.grads
            .push(DenseMatrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name.into());
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, i: usize) -> &DenseMatrix {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut DenseMatrix {
        &mut self.values[i]
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn grad(&self, i: usize) -> &DenseMatrix {
        &self.grads[i]
    }

    pub fn grad_mut(&mut self, i: usize) -> &mut DenseMatrix {
        &mut self.grads[i]
    }

    pub fn values(&self) -> &[DenseMatrix] {
        &self.values
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn mark_consumed(&mut self) {
        self.grads_ready = false;
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Copies parameter values from `other`, which must share the layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        debug_assert_eq!(self.names, other.names);
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.clone_from(src);
        }
    }
}

/// Evaluates a scalar loss built on a fresh tape and fills the gradient
/// slots of `params`.
///
/// The closure receives one leaf per parameter, in registration order.
pub fn value_and_grad<'a, F>(params: &mut ParamStore, loss: F) -> Result<f64>
where
    F: FnOnce(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    value_and_grad_aux(params, |tape, vars| loss(tape, vars).map(|v| (v, ())))
        .map(|(value, ())| value)
}

/// As [`value_and_grad`], additionally returning data the closure extracts
/// from the forward pass.
pub fn value_and_grad_aux<'a, F, T>(params: &mut ParamStore, loss: F) -> Result<(f64, T)>
where
    F: FnOnce(&mut Tape<'a>, &[Var]) -> Result<(Var, T)>,
{
    params.zero_grad();
    params.grads_ready = false;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .values
        .iter()
        .map(|v| tape.param(v.clone()))
        .collect();
    let (out, aux) = loss(&mut tape, &vars)?;
    if let Some((op, index)) = tape.first_nonfinite() {
        return Err(Error::NonFinite { op, index });
    }
    let out_v = tape.value(out);
    if out_v.shape() != (1, 1) {
        return Err(Error::Shape {
            op: "value_and_grad",
            detail: format!("loss must be 1x1, got {:?}", out_v.shape()),
        });
    }
    let value = out_v.item();
    let mut grads = tape.backward(out);
    for (slot, v) in vars.iter().enumerate() {
        if let Some(g) = grads[v.index()].take() {
            params.grads[slot] = g;
        }
    }
    params.grads_ready = true;
    Ok((value, aux))
}

/// Loss value only, without touching gradient slots.
pub fn evaluate<'a, F>(params: &ParamStore, loss: F) -> Result<f64>
where
    F: FnOnce(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .values
        .iter()
        .map(|v| tape.constant(v.clone()))
        .collect();
    let out = loss(&mut tape, &vars)?;
    if let Some((op, index)) = tape.first_nonfinite() {
        return Err(Error::NonFinite { op, index });
    }
    Ok(tape.value(out).item())
}
