//! Noise-prediction training objective and reverse-diffusion sampling.
//!
//! Feature-space and latent-space models share this code; only the data
//! dimension differs.

use rand::Rng;

use crate::conditioning::{timestep_to_time, ConditioningBundle};
use crate::error::{Error, Result};
use crate::field::{ConditionedNet, FieldGrads, FieldInput, FrameField};
use crate::loss::{ensure_finite, l1_mean, l1_with_grad};
use crate::rng::normal_tensor;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor2;

/// One training example: clean data, timestep, injected noise and conditioning.
#[derive(Clone, Debug)]
pub struct DpmBatchSample {
    pub x0: Tensor2,
    pub l: usize,
    pub eps: Tensor2,
    pub cond: ConditioningBundle,
}

/// `x_l = √ᾱ_l · x0 + √(1 − ᾱ_l) · ε`
pub fn forward_diffuse(
    x0: &Tensor2,
    l: usize,
    eps: &Tensor2,
    sched: &NoiseSchedule,
) -> Result<Tensor2> {
    let ab = sched.alpha_bar(l)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

fn diffused_inputs(
    batch: &[DpmBatchSample],
    sched: &NoiseSchedule,
) -> Result<Vec<Tensor2>> {
    batch
        .iter()
        .map(|s| forward_diffuse(&s.x0, s.l, &s.eps, sched))
        .collect()
}

/// Mean over the batch and all elements of `|ε_θ(x_l, l, s, p) − ε|`.
pub fn dpm_train_loss<F: FrameField + ?Sized>(
    net: &F,
    batch: &[DpmBatchSample],
    sched: &NoiseSchedule,
) -> Result<f64> {
    let xs = diffused_inputs(batch, sched)?;
    let preds = batch
        .iter()
        .zip(&xs)
        .map(|(s, x)| net.eval(x, timestep_to_time(s.l, sched.steps()), &s.cond))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = preds.iter().zip(batch).map(|(p, s)| (p, &s.eps)).collect();
    ensure_finite(l1_mean(&pairs)?, "dpm loss")
}

/// Loss plus gradients for a trainable network. All samples are stacked
/// into one matrix so the network runs once per batch.
pub fn dpm_loss_and_grads(
    net: &ConditionedNet,
    batch: &[DpmBatchSample],
    sched: &NoiseSchedule,
) -> Result<(f64, FieldGrads)> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let xs = diffused_inputs(batch, sched)?;
    let input = stack_batch(
        batch.iter().zip(&xs).map(|(s, x)| {
            (x, &s.cond, timestep_to_time(s.l, sched.steps()))
        }),
    )?;
    let target = Tensor2::vcat(&batch.iter().map(|s| &s.eps).collect::<Vec<_>>())?;
    let trace = net.forward_rows(&input)?;
    let (loss, grad) = l1_with_grad(trace.output(), &target)?;
    ensure_finite(loss, "dpm loss")?;
    Ok((loss, net.backward_rows(&trace, &grad)?))
}

/// Stacks `(x, conditioning, time)` samples into one row-wise field input.
pub(crate) fn stack_batch<'a>(
    items: impl Iterator<Item = (&'a Tensor2, &'a ConditioningBundle, f64)>,
) -> Result<FieldInput> {
    let mut xs = Vec::new();
    let mut speakers = Vec::new();
    let mut contents = Vec::new();
    let mut times = Vec::new();
    for (x, cond, t) in items {
        if cond.frames() != x.rows() {
            return Err(Error::shape("conditioning frames", x.rows(), cond.frames()));
        }
        speakers.push(Tensor2::broadcast_row(&cond.speaker, x.rows()));
        contents.push(&cond.content);
        times.extend(std::iter::repeat_n(t, x.rows()));
        xs.push(x);
    }
    Ok(FieldInput {
        x: Tensor2::vcat(&xs)?,
        speaker: Tensor2::vcat(&speakers.iter().collect::<Vec<_>>())?,
        content: Tensor2::vcat(&contents)?,
        times,
    })
}

/// One reverse step from `x_l` to `x_{l-1}`. `noise` is the standard-normal
/// draw scaled by `ν_l`; `None` means no noise is added.
pub fn reverse_step<F: FrameField + ?Sized>(
    net: &F,
    x_l: &Tensor2,
    l: usize,
    cond: &ConditioningBundle,
    sched: &NoiseSchedule,
    noise: Option<&Tensor2>,
) -> Result<Tensor2> {
    let alpha = sched.alpha(l)?;
    let alpha_bar = sched.alpha_bar(l)?;
    let eps_hat = net.eval(x_l, timestep_to_time(l, sched.steps()), cond)?;
    let coef = (1.0 - alpha) / (1.0 - alpha_bar).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let mut out = x_l.zip_map(&eps_hat, |x, e| inv * (x - coef * e))?;
    if let Some(eps) = noise {
        out.axpy(sched.nu(l)?, eps)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReverseOptions {
    /// Add `ν_l ε` at every step; when false the sampler is deterministic.
    pub stochastic: bool,
    /// Add `ν_1 ε` on the last step as well.
    pub noise_at_final_step: bool,
}

impl Default for ReverseOptions {
    fn default() -> Self {
        ReverseOptions {
            stochastic: true,
            noise_at_final_step: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub output: Tensor2,
    /// Network evaluations spent.
    pub nfe: usize,
}

/// Runs the reverse process from `x_init` at `l_start` down to `l = 1`.
///
/// `observer` sees the state after every step, labelled with the timestep it
/// now represents (`l - 1`).
pub fn reverse_sample<F: FrameField + ?Sized, R: Rng + ?Sized>(
    net: &F,
    x_init: &Tensor2,
    l_start: usize,
    cond: &ConditioningBundle,
    sched: &NoiseSchedule,
    rng: &mut R,
    options: ReverseOptions,
    mut observer: Option<&mut dyn FnMut(usize, &Tensor2)>,
) -> Result<Sampled> {
    if l_start == 0 || l_start > sched.steps() {
        return Err(Error::Index {
            what: "starting timestep",
            index: l_start,
            max: sched.steps(),
        });
    }
    let mut x = x_init.clone();
    let mut nfe = 0;
    for l in (1..=l_start).rev() {
        let eps = normal_tensor(rng, x.rows(), x.cols());
        let noise = (options.stochastic && (l > 1 || options.noise_at_final_step))
            .then_some(&eps);
        x = reverse_step(net, &x, l, cond, sched, noise)?;
        nfe += 1;
        if !x.is_finite() {
            return Err(Error::Sampling { step: l });
        }
        if let Some(obs) = observer.as_mut() {
            obs(l - 1, &x);
        }
    }
    Ok(Sampled { output: x, nfe })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// ε_θ ≡ c
    struct Constant(f64, usize);

    impl FrameField for Constant {
        fn data_dim(&self) -> usize {
            self.1
        }
        fn eval(&self, x: &Tensor2, _t: f64, _c: &ConditioningBundle) -> Result<Tensor2> {
            Ok(Tensor2::filled(x.rows(), x.cols(), self.0))
        }
    }

    /// Returns a fixed tensor, standing in for a perfect noise predictor.
    struct Oracle(Tensor2);

    impl FrameField for Oracle {
        fn data_dim(&self) -> usize {
            self.0.cols()
        }
        fn eval(&self, _x: &Tensor2, _t: f64, _c: &ConditioningBundle) -> Result<Tensor2> {
            Ok(self.0.clone())
        }
    }

    fn cond(frames: usize) -> ConditioningBundle {
        ConditioningBundle::zeros(1, 1, frames)
    }

    #[test]
    fn noiseless_forward_diffusion_scales_by_sqrt_alpha_bar() {
        let s = NoiseSchedule::linear(4, 0.1, 0.3).unwrap();
        let x0 = Tensor2::from_rows(&[[1.0, -2.0]]).unwrap();
        let xl = forward_diffuse(&x0, 3, &Tensor2::zeros(1, 2), &s).unwrap();
        let a = s.alpha_bar(3).unwrap().sqrt();
        assert_eq!(xl.data(), &[a, -2.0 * a]);
        assert!(forward_diffuse(&x0, 5, &Tensor2::zeros(1, 2), &s).is_err());
    }

    #[test]
    fn zero_data_keeps_half_the_noise_at_alpha_bar_three_quarters() {
        let s = NoiseSchedule::linear(1, 0.25, 0.25).unwrap();
        let eps = Tensor2::from_rows(&[[2.0, -4.0]]).unwrap();
        let xl = forward_diffuse(&Tensor2::zeros(1, 2), 1, &eps, &s).unwrap();
        assert_eq!(xl.data(), &[1.0, -2.0]);
    }

    #[test]
    fn reverse_step_plug_in_value() {
        // α_1 = 0.9 and ᾱ_2 = 0.81 at l = 2 with constant β = 0.1
        let s = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
        let x = Tensor2::filled(1, 1, 1.0);
        let y = reverse_step(&Constant(1.0, 1), &x, 2, &cond(1), &s, None).unwrap();
        let want = (1.0 - 0.1 / 0.19f64.sqrt()) / 0.9f64.sqrt();
        assert!((y[(0, 0)] - want).abs() < 1e-12);
        assert!((want - 0.81227).abs() < 1e-5);
    }

    #[test]
    fn zero_prediction_reverse_step_rescales() {
        let s = NoiseSchedule::linear(3, 0.05, 0.2).unwrap();
        let x = Tensor2::from_rows(&[[0.4, -1.0]]).unwrap();
        let y = reverse_step(&Constant(0.0, 2), &x, 3, &cond(1), &s, None).unwrap();
        let a = s.alpha(3).unwrap().sqrt();
        assert_eq!(y.data(), &[0.4 / a, -1.0 / a]);
    }

    #[test]
    fn true_noise_inverts_single_step_diffusion() {
        // with ᾱ_1 = α_1 the reverse step with the injected noise recovers x0
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        let mut rng = stream(1, &[]);
        let x0 = normal_tensor(&mut rng, 3, 4);
        let eps = normal_tensor(&mut rng, 3, 4);
        let x1 = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        let back = reverse_step(&Oracle(eps), &x1, 1, &cond(3), &s, None).unwrap();
        assert!(back.sub(&x0).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn two_step_zero_field_sample() {
        let s = NoiseSchedule::linear(3, 0.1, 0.2).unwrap();
        let x = Tensor2::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut rng = stream(2, &[]);
        let opts = ReverseOptions {
            stochastic: false,
            ..ReverseOptions::default()
        };
        let mut seen = Vec::new();
        let mut obs = |l: usize, _: &Tensor2| seen.push(l);
        let out = reverse_sample(
            &Constant(0.0, 2),
            &x,
            2,
            &cond(1),
            &s,
            &mut rng,
            opts,
            Some(&mut obs),
        )
        .unwrap();
        assert_eq!(out.nfe, 2);
        assert_eq!(seen, vec![1, 0]);
        let scale = (s.alpha(1).unwrap() * s.alpha(2).unwrap()).sqrt();
        for (o, i) in out.output.data().iter().zip(x.data()) {
            assert!((o - i / scale).abs() < 1e-12);
        }
    }

    #[test]
    fn starting_step_zero_is_rejected() {
        let s = NoiseSchedule::linear(3, 0.1, 0.2).unwrap();
        let mut rng = stream(3, &[]);
        let x = Tensor2::zeros(1, 1);
        let r = reverse_sample(
            &Constant(0.0, 1),
            &x,
            0,
            &cond(1),
            &s,
            &mut rng,
            ReverseOptions::default(),
            None,
        );
        assert!(matches!(r, Err(Error::Index { .. })));
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let s = NoiseSchedule::linear(5, 0.01, 0.2).unwrap();
        let mut rng = stream(4, &[]);
        let eps = normal_tensor(&mut rng, 6, 3);
        let sample = DpmBatchSample {
            x0: normal_tensor(&mut rng, 6, 3),
            l: 4,
            eps: eps.clone(),
            cond: cond(6),
        };
        assert_eq!(dpm_train_loss(&Oracle(eps), &[sample], &s).unwrap(), 0.0);
    }
}
