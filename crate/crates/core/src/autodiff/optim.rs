//! Named trainable parameters and the Adam update.

use std::collections::HashMap;

use super::tensor::{Real, Tensor};
use super::AutodiffError;

/// One trainable weight group with its Adam moment buffers.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub(crate) adam_m: Tensor<F>,
    pub(crate) adam_v: Tensor<F>,
}

impl<F: Real> Param<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            value,
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
        }
    }
}

/// Ordered collection of parameters with unique names.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Append a parameter; the name must be unused. Returns its index.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor<F>,
    ) -> Result<usize, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::Usage(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        let idx = self.params.len();
        self.by_name.insert(name.clone(), idx);
        self.params.push(Param::new(name, value));
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param<F> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<F> {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for p in &self.params {
            let idx = out
                .insert(p.name.clone(), p.value.cast::<G>())
                .expect("names already unique");
            out.params[idx].adam_m = p.adam_m.cast();
            out.params[idx].adam_v = p.adam_v.cast();
        }
        out
    }
}

/// Adam hyperparameters and the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            step_count: 0,
            lr,
            beta1,
            beta2,
            weight_decay,
            epsilon: 1e-8,
        }
    }
}

/// Gradients for a subset of a [`ParamSet`], keyed by parameter index.
#[derive(Clone, Debug, Default)]
pub struct GradBatch<F> {
    pub entries: Vec<(usize, Option<Tensor<F>>)>,
}

/// One Adam update over the given gradients.
///
/// Weight decay is L2-coupled: `g ← g + wd·θ` before the moment updates.
/// The step counter advances exactly once per call.
pub fn adam_step<F: Real>(
    params: &mut ParamSet<F>,
    grads: &GradBatch<F>,
    state: &mut AdamState,
) -> Result<(), AutodiffError> {
    for (idx, grad) in &grads.entries {
        let p = &params.params[*idx];
        match grad {
            None => {
                return Err(AutodiffError::Usage(format!(
                    "missing gradient for parameter {:?}",
                    p.name
                )))
            }
            Some(g) if g.shape() != p.value.shape() => {
                return Err(AutodiffError::Shape(format!(
                    "gradient shape {:?} does not match parameter {:?} of shape {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )))
            }
            Some(_) => {}
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = F::of_f64(state.beta1);
    let b2 = F::of_f64(state.beta2);
    let one = F::one();
    let wd = F::of_f64(state.weight_decay);
    let lr = F::of_f64(state.lr);
    let eps = F::of_f64(state.epsilon);
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    for (idx, grad) in &grads.entries {
        let p = &mut params.params[*idx];
        let g = grad.as_ref().expect("checked above");
        let theta = p.value.data_mut();
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        for i in 0..theta.len() {
            let gi = g.data()[i] + wd * theta[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
