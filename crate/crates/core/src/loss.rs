//! Order-independent reductions shared by the training objectives.

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Sum with a fixed accumulation order (ascending values), so the result does
/// not depend on how the inputs were arranged.
pub fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.into_iter().sum()
}

/// Mean absolute difference over all elements of a set of equally shaped pairs.
pub fn l1_mean(pairs: &[(&Tensor2, &Tensor2)]) -> Result<f64> {
    let mut diffs = Vec::new();
    for (a, b) in pairs {
        a.ensure_same_shape("l1 loss", b)?;
        diffs.extend(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()));
    }
    if diffs.is_empty() {
        return Err(Error::Numeric("L1 loss over zero elements".into()));
    }
    let n = diffs.len() as f64;
    Ok(sorted_sum(diffs) / n)
}

/// `mean |pred - target|` and its gradient w.r.t. `pred`.
///
/// The subgradient at zero difference is taken as 0.
pub fn l1_with_grad(pred: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2)> {
    let value = l1_mean(&[(pred, target)])?;
    let n = pred.len() as f64;
    let grad = pred.zip_map(target, |p, t| {
        let d = p - t;
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    })?;
    Ok((value, grad))
}

pub fn ensure_finite(value: f64, component: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::training(component.to_string()))
    }
}
