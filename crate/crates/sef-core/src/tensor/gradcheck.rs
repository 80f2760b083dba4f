//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Outcome of checking one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the entry with the worst error.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Per-parameter comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

fn eval_scalar<F>(params: &[(String, Tensor)], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|(_, t)| graph.param(t.clone()))
        .collect();
    let loss = build(&mut graph, &ids)?;
    graph.value(loss).item()
}

/// Compares the analytic gradient of `build`'s scalar output against central
/// finite differences `(f(x+h) − f(x−h)) / 2h`, entry by entry, for every
/// parameter. Relative error uses `max(1, |analytic|, |numeric|)` as the
/// denominator.
pub fn finite_diff_check<F>(
    params: &[(String, Tensor)],
    step: f64,
    tolerance: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::InvalidOperand(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    // Analytic pass.
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|(_, t)| graph.param(t.clone()))
        .collect();
    let loss = build(&mut graph, &ids)?;
    let loss_value = graph.value(loss).item()?;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective evaluated to {loss_value} before perturbation"
        )));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, (_, t))| {
            graph
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    // Numeric passes: perturb one entry at a time.
    let mut scratch: Vec<(String, Tensor)> = params.to_vec();
    let mut entries = Vec::with_capacity(params.len());
    for (p, (name, tensor)) in params.iter().enumerate() {
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for j in 0..tensor.numel() {
            let original = tensor.data()[j];
            scratch[p].1.data_mut()[j] = original + step;
            let plus = eval_scalar(&scratch, &build)?;
            scratch[p].1.data_mut()[j] = original - step;
            let minus = eval_scalar(&scratch, &build)?;
            scratch[p].1.data_mut()[j] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective not finite while perturbing parameter '{name}' entry {j}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[p][j];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if rel > worst.max_rel_error {
                worst.max_rel_error = rel;
                worst.worst_index = j;
                worst.analytic_at_worst = a;
                worst.numeric_at_worst = numeric;
            }
        }
        entries.push(worst);
    }
    Ok(GradCheckReport {
        entries,
        step,
        tolerance,
    })
}
