//! Conditional flow matching with a straight-line path, and the fixed-step
//! Euler sampler that integrates the learned field.

use crate::conditioning::ConditioningBundle;
use crate::diffusion::{stack_batch, Sampled};
use crate::error::{Error, Result};
use crate::field::{ConditionedNet, FieldGrads, FrameField};
use crate::loss::{ensure_finite, l1_mean, l1_with_grad};
use crate::tensor::Tensor2;

#[derive(Clone, Debug)]
pub struct CfmBatchSample {
    /// Data sample.
    pub x1: Tensor2,
    /// Standard-normal source sample.
    pub x0: Tensor2,
    pub t: f64,
    /// Standard-normal path jitter.
    pub eps: Tensor2,
    pub sigma: f64,
    pub cond: ConditioningBundle,
}

impl CfmBatchSample {
    fn path_point(&self) -> Result<Tensor2> {
        sample_path_point(&self.x0, &self.x1, self.t, self.sigma, &self.eps)
    }

    fn target(&self) -> Result<Tensor2> {
        cfm_target(&self.x0, &self.x1)
    }
}

/// `x_t = t·x1 + (1 − t)·x0 + σ·ε`
pub fn sample_path_point(
    x0: &Tensor2,
    x1: &Tensor2,
    t: f64,
    sigma: f64,
    eps: &Tensor2,
) -> Result<Tensor2> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("path time {t} outside [0, 1]")));
    }
    let line = x1.zip_map(x0, |a, b| t * a + (1.0 - t) * b)?;
    line.zip_map(eps, |v, e| v + sigma * e)
}

/// Conditional target field of the straight-line path, `x1 − x0` for every `t`.
pub fn cfm_target(x0: &Tensor2, x1: &Tensor2) -> Result<Tensor2> {
    x1.sub(x0)
}

/// Mean over the batch and all elements of `|v_θ(x_t, t, s, p) − (x1 − x0)|`.
pub fn cfm_train_loss<F: FrameField + ?Sized>(net: &F, batch: &[CfmBatchSample]) -> Result<f64> {
    let mut preds = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for s in batch {
        preds.push(net.eval(&s.path_point()?, s.t, &s.cond)?);
        targets.push(s.target()?);
    }
    let pairs: Vec<_> = preds.iter().zip(&targets).collect();
    ensure_finite(l1_mean(&pairs)?, "cfm loss")
}

pub fn cfm_loss_and_grads(
    net: &ConditionedNet,
    batch: &[CfmBatchSample],
) -> Result<(f64, FieldGrads)> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let points = batch
        .iter()
        .map(CfmBatchSample::path_point)
        .collect::<Result<Vec<_>>>()?;
    let targets = batch
        .iter()
        .map(CfmBatchSample::target)
        .collect::<Result<Vec<_>>>()?;
    let input = stack_batch(batch.iter().zip(&points).map(|(s, x)| (x, &s.cond, s.t)))?;
    let target = Tensor2::vcat(&targets.iter().collect::<Vec<_>>())?;
    let trace = net.forward_rows(&input)?;
    let (loss, grad) = l1_with_grad(trace.output(), &target)?;
    ensure_finite(loss, "cfm loss")?;
    Ok((loss, net.backward_rows(&trace, &grad)?))
}

/// `x' = (1 − r)·x + r·ε`
pub fn noise_mix(x: &Tensor2, r: f64, eps: &Tensor2) -> Result<Tensor2> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("noise fraction {r} outside [0, 1]")));
    }
    x.zip_map(eps, |a, e| (1.0 - r) * a + r * e)
}

/// Fixed-step Euler: `x ← x + v_θ(x, l/L, s, p) / L` for `l = 1..=L`.
///
/// `observer` sees the state after every step along with the step index.
pub fn euler_integrate<F: FrameField + ?Sized>(
    net: &F,
    x_init: &Tensor2,
    steps: usize,
    cond: &ConditioningBundle,
    mut observer: Option<&mut dyn FnMut(usize, &Tensor2)>,
) -> Result<Sampled> {
    if steps == 0 {
        return Err(Error::Config("Euler integration needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = x_init.clone();
    for l in 1..=steps {
        let v = net.eval(&x, l as f64 * h, cond)?;
        x.axpy(h, &v)?;
        if !x.is_finite() {
            return Err(Error::Sampling { step: l });
        }
        if let Some(obs) = observer.as_mut() {
            obs(l, &x);
        }
    }
    Ok(Sampled {
        output: x,
        nfe: steps,
    })
}
