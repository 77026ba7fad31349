use super::params::ParamSet;
use super::DiffError;

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed accumulators shaped like `params`, with β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(params: &ParamSet) -> Self {
        AdamState::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Restores state from saved moments.
    pub fn from_parts(
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// One bias-corrected Adam update of every parameter. Gradients are left
    /// in place; the caller zeroes them.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<(), DiffError> {
        if params.len() != self.first.len() {
            return Err(DiffError::OptimizerMismatch {
                expected: self.first.len(),
                found: params.len(),
            });
        }
        for (id, name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(DiffError::MissingGrad {
                    name: name.to_string(),
                });
            }
            if t.len() != self.first[id.0].len() {
                return Err(DiffError::ShapeMismatch {
                    op: "adam_step",
                    shapes: vec![t.shape().to_vec(), vec![self.first[id.0].len()]],
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for id in params.ids().collect::<Vec<_>>() {
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let (grad, values) = params.get_mut(id).grad_and_values_mut();
            let grad = grad.expect("checked above");
            for (((p, g), mi), vi) in values.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
