//! Central finite-difference verification of the analytic gradients.

use crate::error::Result;
use crate::model::{EncodedInput, ForwardPass, Model};

/// Worst relative disagreement between analytic and numerical gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub values_checked: usize,
}

/// One teacher-forced training case: encoder input plus definition ids.
pub type GradCheckCase = (EncodedInput, Vec<u32>);

fn total_loss(model: &Model, cases: &[GradCheckCase]) -> Result<f64> {
    let mut total = 0.0;
    for (inp, def) in cases {
        let mut fp = ForwardPass::inference(model);
        let loss = fp.sequence_loss(inp, def)?;
        total += fp.graph.scalar_value(loss);
    }
    Ok(total)
}

/// Compare every parameter gradient against `(L(x+h) - L(x-h)) / 2h`,
/// relative error `|a-fd| / (|a| + |fd| + 1e-8)`. Dropout is off on both
/// paths. The model is restored to its original values before returning.
pub fn finite_difference_check(
    model: &mut Model,
    cases: &[GradCheckCase],
    h: f64,
) -> Result<GradCheckReport> {
    // analytic pass: sum gradients over cases
    let mut analytic: Vec<Vec<f64>> = (0..model.params.len())
        .map(|i| vec![0.0; model.params.by_index(i).1.numel()])
        .collect();
    for (inp, def) in cases {
        let mut fp = ForwardPass::for_grad_check(model);
        let loss = fp.sequence_loss(inp, def)?;
        fp.graph.backward(loss)?;
        for (idx, grad) in fp.collect_param_grads() {
            for (a, g) in analytic[idx].iter_mut().zip(&grad) {
                *a += g;
            }
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        values_checked: 0,
    };
    for idx in 0..model.params.len() {
        let numel = model.params.by_index(idx).1.numel();
        for j in 0..numel {
            let original = model.params.by_index(idx).1.data()[j];
            model.params.by_index_mut(idx).1.data_mut()[j] = original + h;
            let loss_plus = total_loss(model, cases)?;
            model.params.by_index_mut(idx).1.data_mut()[j] = original - h;
            let loss_minus = total_loss(model, cases)?;
            model.params.by_index_mut(idx).1.data_mut()[j] = original;

            let fd = (loss_plus - loss_minus) / (2.0 * h);
            let a = analytic[idx][j];
            let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-8);
            report.values_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{}[{}]", model.params.by_index(idx).0, j);
            }
        }
    }
    Ok(report)
}
