//! Central finite-difference gradient checks.
//!
//! The numerical side only ever runs forward passes, so it is independent of
//! the reverse-mode code in [`crate::graph`]. Errors are measured per tensor as
//! `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.

use crate::graph::{Graph, Var};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-3,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Worst per-tensor relative error.
    pub max_rel_error: f64,
    /// Label of the tensor with the worst error.
    pub worst: String,
    pub rel_tol: f64,
    pub checked_scalars: usize,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error <= self.rel_tol
    }

    fn record(&mut self, label: String, analytic: &[f64], numeric: &[f64]) {
        let diff: f64 = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        self.checked_scalars += analytic.len();
        if scale < 1e-12 {
            return;
        }
        let rel = diff / scale;
        if rel > self.max_rel_error || rel.is_nan() {
            self.max_rel_error = rel;
            self.worst = label;
        }
    }
}

/// Checks the gradient of a scalar built by `build` with respect to every
/// entry of every input tensor.
pub fn check_input_gradient(
    inputs: &[Tensor],
    cfg: GradCheck,
    build: impl Fn(&mut Graph, &[Var]) -> Var,
) -> GradReport {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss);

    let forward = |values: &[Tensor]| -> f64 {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.scalar(loss)
    };

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        rel_tol: cfg.rel_tol,
        checked_scalars: 0,
    };
    let mut values = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + cfg.step;
            let plus = forward(&values);
            values[k].data_mut()[i] = orig - cfg.step;
            let minus = forward(&values);
            values[k].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * cfg.step);
        }
        report.record(format!("input {k}"), analytic.data(), &numeric);
    }
    report
}

/// Checks the gradient of a scalar built by `build` with respect to every
/// parameter in `store`.
pub fn check_param_gradient(
    store: &ParamStore,
    cfg: GradCheck,
    build: impl Fn(&mut Graph, &ParamStore) -> Var,
) -> GradReport {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss);
    let analytic = grads.param_grads(&g, store);

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        rel_tol: cfg.rel_tol,
        checked_scalars: 0,
    };
    let mut work = store.clone();
    for (id, ga) in analytic {
        let n = work.get(id).len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + cfg.step;
            let plus = eval_store(&work, &build);
            work.get_mut(id).data_mut()[i] = orig - cfg.step;
            let minus = eval_store(&work, &build);
            work.get_mut(id).data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * cfg.step);
        }
        report.record(store.name(id).to_string(), ga.data(), &numeric);
    }
    report
}

fn eval_store(store: &ParamStore, build: &impl Fn(&mut Graph, &ParamStore) -> Var) -> f64 {
    let mut g = Graph::no_grad();
    let loss = build(&mut g, store);
    g.scalar(loss)
}
