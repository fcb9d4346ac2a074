//! Minimal reverse-mode machinery for the networks in this crate.

mod linalg;
mod mlp;

pub use linalg::solve_spd;
pub use mlp::{DropoutMasks, Gradients, MlpParams, Trace, DEFAULT_LEAKY_SLOPE};

use ndarray::{Array2, ArrayView2};

use crate::error::{DrnError, Result};
use crate::scalar::Scalar;

/// A mini-batch: network inputs plus the dataset rows they came from.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub index: usize,
    pub inputs: ArrayView2<'a, T>,
    pub rows: &'a [usize],
}

/// A scalar loss over raw network outputs.
///
/// Implementors return the batch loss together with its derivative with
/// respect to every output entry.
pub trait OutputLoss<T: Scalar> {
    fn loss_and_grad(&self, outputs: ArrayView2<T>, rows: &[usize]) -> Result<(T, Array2<T>)>;

    fn loss(&self, outputs: ArrayView2<T>, rows: &[usize]) -> Result<T> {
        Ok(self.loss_and_grad(outputs, rows)?.0)
    }
}

/// Loss and parameter gradients for one batch.
pub fn value_and_grad<T, L>(
    params: &MlpParams<T>,
    batch: Batch<'_, T>,
    loss: &L,
    masks: Option<&DropoutMasks<T>>,
) -> Result<(T, Gradients<T>)>
where
    T: Scalar,
    L: OutputLoss<T> + ?Sized,
{
    let trace = params.forward_trace(batch.inputs, masks)?;
    let (value, d_out) = loss.loss_and_grad(trace.output().view(), batch.rows)?;
    if !value.is_finite() {
        return Err(DrnError::Divergence {
            what: "loss",
            batch: batch.index,
        });
    }
    let grads = params.backward(&trace, d_out.view(), masks);
    if !grads.is_finite() {
        return Err(DrnError::Divergence {
            what: "gradient",
            batch: batch.index,
        });
    }
    Ok((value, grads))
}

/// Largest discrepancy between analytic and central-difference gradients.
///
/// The discrepancy is `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<T, L>(
    params: &MlpParams<T>,
    batch: Batch<'_, T>,
    loss: &L,
    masks: Option<&DropoutMasks<T>>,
    step: T,
) -> Result<T>
where
    T: Scalar,
    L: OutputLoss<T> + ?Sized,
{
    let (_, grads) = value_and_grad(params, batch, loss, masks)?;
    let analytic: Vec<T> = grads.values().copied().collect();
    let mut probe = params.clone();
    let two = T::c(2.0);
    let mut worst = T::zero();
    for (i, &a) in analytic.iter().enumerate() {
        let original = *probe.params().nth(i).expect("index within params");
        let eval = |p: &MlpParams<T>| -> Result<T> {
            let out = p.forward(batch.inputs, masks)?;
            loss.loss(out.view(), batch.rows)
        };
        *probe.params_mut().nth(i).expect("index within params") = original + step;
        let up = eval(&probe)?;
        *probe.params_mut().nth(i).expect("index within params") = original - step;
        let down = eval(&probe)?;
        *probe.params_mut().nth(i).expect("index within params") = original;
        let numeric = (up - down) / (two * step);
        let err = (a - numeric).abs() / T::one().max(a.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
