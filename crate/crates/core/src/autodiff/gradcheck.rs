//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::optim::ParamSet;
use super::tape::{Tape, ValueId};
use super::tensor::{Real, Tensor};
use super::AutodiffError;

/// Perturbation used by the central difference.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Builds a scalar loss on the tape from leaves bound one-to-one (and in
/// order) to the parameters under check.
pub trait LossBuilder<F: Real> {
    fn build(&self, tape: &mut Tape<F>, leaves: &[ValueId]) -> Result<ValueId, AutodiffError>;
}

impl<F: Real, T> LossBuilder<F> for T
where
    T: Fn(&mut Tape<F>, &[ValueId]) -> Result<ValueId, AutodiffError>,
{
    fn build(&self, tape: &mut Tape<F>, leaves: &[ValueId]) -> Result<ValueId, AutodiffError> {
        self(tape, leaves)
    }
}

/// Compare analytic gradients against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` on `samples` random coordinates per parameter,
/// returning the worst relative error `|a−n| / max(|a|, |n|, 1e-8)`.
///
/// Parameter values are restored before returning. Run this with `F = f64`;
/// the step is far below f32 resolution.
pub fn grad_check<F: Real>(
    params: &mut ParamSet<F>,
    builder: &impl LossBuilder<F>,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<F, AutodiffError> {
    grad_check_with_step(params, builder, samples, GRAD_CHECK_STEP, rng)
}

/// [`grad_check`] with a caller-chosen probe step. Larger steps trade
/// truncation error for less roundoff amplification on near-quadratic
/// losses.
pub fn grad_check_with_step<F: Real>(
    params: &mut ParamSet<F>,
    builder: &impl LossBuilder<F>,
    samples: usize,
    step: f64,
    rng: &mut impl Rng,
) -> Result<F, AutodiffError> {
    let analytic = analytic_grads(params, builder)?;
    let h = F::of_f64(step);
    let floor = F::of_f64(1e-8);
    let two = F::of_f64(2.0);
    let mut worst = F::zero();
    for idx in 0..params.len() {
        let numel = params.get(idx).value.numel();
        for _ in 0..samples {
            let coord = rng.gen_range(0..numel);
            let original = params.get(idx).value.data()[coord];

            params.get_mut(idx).value.data_mut()[coord] = original + h;
            let f_plus = eval_loss(params, builder)?;
            params.get_mut(idx).value.data_mut()[coord] = original - h;
            let f_minus = eval_loss(params, builder)?;
            params.get_mut(idx).value.data_mut()[coord] = original;

            let numeric = (f_plus - f_minus) / (two * h);
            let a = analytic[idx].data()[coord];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

fn analytic_grads<F: Real>(
    params: &ParamSet<F>,
    builder: &impl LossBuilder<F>,
) -> Result<Vec<Tensor<F>>, AutodiffError> {
    let mut tape = Tape::new();
    let leaves: Vec<ValueId> = params
        .iter()
        .map(|p| tape.leaf(p.value.clone(), true))
        .collect();
    let loss = builder.build(&mut tape, &leaves)?;
    tape.backward(loss)?;
    Ok(leaves
        .iter()
        .zip(params.iter())
        .map(|(id, p)| {
            tape.grad(*id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
        })
        .collect())
}

fn eval_loss<F: Real>(
    params: &ParamSet<F>,
    builder: &impl LossBuilder<F>,
) -> Result<F, AutodiffError> {
    let mut tape = Tape::new();
    let leaves: Vec<ValueId> = params
        .iter()
        .map(|p| tape.leaf(p.value.clone(), false))
        .collect();
    let loss = builder.build(&mut tape, &leaves)?;
    Ok(tape.value(loss).item())
}
