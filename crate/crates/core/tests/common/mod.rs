#![allow(dead_code)]

use lvg_core::conditioning::{content_embed, ConditioningBundle};
use lvg_core::config::RunConfig;
use lvg_core::diffusion::{
    dpm_loss_and_grads, dpm_train_loss, forward_diffuse, reverse_sample, reverse_step,
    DpmBatchSample, ReverseOptions,
};
use lvg_core::error::Result;
use lvg_core::field::{ConditionedNet, FrameField};
use lvg_core::flowmatch::{
    cfm_loss_and_grads, cfm_target, cfm_train_loss, euler_integrate, noise_mix,
    sample_path_point, CfmBatchSample,
};
use lvg_core::latentae::{
    ae_loss_and_grads, disc_loss_and_grads, kl_loss, AeLossConfig, AeObjective, Autoencoder,
    Discriminator, KlMode, Renderer,
};
use lvg_core::rng::{normal_tensor, stream};
use lvg_core::schedule::NoiseSchedule;
use lvg_core::tensor::Tensor2;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const FD_PROBES: usize = 120;
/// Probes whose `h` and `h/2` estimates disagree straddle a kink and are redrawn.
const KINK_TOL: f64 = 5e-5;
const MAX_SKIP_SHARE: f64 = 0.2;

#[derive(Debug)]
pub struct FdReport {
    pub label: String,
    pub probes: usize,
    pub skipped: usize,
    pub worst: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.probes >= FD_PROBES
            && self.worst < FD_TOL
            && (self.skipped as f64) <= MAX_SKIP_SHARE * (self.probes + self.skipped) as f64
    }
}

fn flatten(slots: Vec<&[f64]>) -> (Vec<f64>, Vec<usize>) {
    let sizes = slots.iter().map(|s| s.len()).collect();
    (slots.concat(), sizes)
}

fn unflatten(slots: Vec<&mut [f64]>, flat: &[f64]) {
    let mut off = 0;
    for s in slots {
        s.copy_from_slice(&flat[off..off + s.len()]);
        off += s.len();
    }
}

/// Compares `analytic` to central differences of `loss` at `params`.
/// Probes cycle over the parameter slots so every layer is touched.
pub fn fd_check(
    label: &str,
    params: &[f64],
    sizes: &[usize],
    analytic: &[f64],
    seed: u64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> FdReport {
    assert_eq!(params.len(), analytic.len(), "{label}: gradient length");
    let mut rng = stream(seed, &[]);
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let base = loss(params).abs().max(1.0);
    let mut p = params.to_vec();
    let mut central = |i: usize, h: f64, p: &mut Vec<f64>| {
        let keep = p[i];
        p[i] = keep + h;
        let up = loss(p);
        p[i] = keep - h;
        let down = loss(p);
        p[i] = keep;
        (up - down) / (2.0 * h)
    };
    let (mut probes, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut k = 0;
    while probes < FD_PROBES && skipped < 10 * FD_PROBES {
        let slot = k % sizes.len();
        k += 1;
        if sizes[slot] == 0 {
            continue;
        }
        let i = offsets[slot] + rng.gen_range(0..sizes[slot]);
        let fd = central(i, FD_STEP, &mut p);
        let fd_half = central(i, FD_STEP / 2.0, &mut p);
        let scale = analytic[i].abs().max(fd.abs()).max(1e-6 * base);
        if (fd - fd_half).abs() / scale > KINK_TOL {
            skipped += 1;
            continue;
        }
        worst = worst.max((analytic[i] - fd).abs() / scale);
        probes += 1;
    }
    FdReport {
        label: label.to_string(),
        probes,
        skipped,
        worst,
    }
}

fn frame_cond(rng: &mut impl Rng, speaker_dim: usize, alphabet: usize, frames: usize) -> ConditioningBundle {
    let codes: Vec<u8> = (0..frames).map(|_| rng.gen_range(0..alphabet as u8)).collect();
    ConditioningBundle {
        speaker: normal_tensor(rng, 1, speaker_dim).into_vec(),
        content: content_embed(&codes, alphabet).unwrap(),
    }
}

fn with_params(net: &ConditionedNet, flat: &[f64]) -> ConditionedNet {
    let mut n = net.clone();
    unflatten(n.param_slices_mut(), flat);
    n
}

fn dpm_batch(cfg: &RunConfig, data: usize, seed: u64) -> Vec<DpmBatchSample> {
    let mut rng = stream(seed, &[1]);
    [4usize, 7]
        .iter()
        .enumerate()
        .map(|(i, &frames)| DpmBatchSample {
            x0: normal_tensor(&mut rng, frames, data),
            l: 3 + 9 * i,
            eps: normal_tensor(&mut rng, frames, data),
            cond: frame_cond(&mut rng, cfg.generator.speaker_dim, cfg.corpus.alphabet, frames),
        })
        .collect()
}

fn cfm_batch(cfg: &RunConfig, data: usize, seed: u64) -> Vec<CfmBatchSample> {
    let mut rng = stream(seed, &[2]);
    [5usize, 6]
        .iter()
        .map(|&frames| CfmBatchSample {
            x1: normal_tensor(&mut rng, frames, data),
            x0: normal_tensor(&mut rng, frames, data),
            t: rng.gen_range(0.0..1.0),
            eps: normal_tensor(&mut rng, frames, data),
            sigma: cfg.generator.sigma,
            cond: frame_cond(&mut rng, cfg.generator.speaker_dim, cfg.corpus.alphabet, frames),
        })
        .collect()
}

fn field_reports(cfg: &RunConfig, data: usize, tag: &str, seed: u64) -> Vec<FdReport> {
    let sched = NoiseSchedule::new(&cfg.schedule).unwrap();
    let net = ConditionedNet::init(cfg.field_dims(data), &mut stream(seed, &[0])).unwrap();
    let (flat, sizes) = flatten(net.param_slices());
    let mut out = Vec::new();

    let batch = dpm_batch(cfg, data, seed);
    let (_, g) = dpm_loss_and_grads(&net, &batch, &sched).unwrap();
    out.push(fd_check(
        &format!("{tag} score net"),
        &flat,
        &sizes,
        &g.param_slices().concat(),
        seed,
        |p| dpm_train_loss(&with_params(&net, p), &batch, &sched).unwrap(),
    ));

    // speaker embedding of every sample, through the same loss
    let analytic: Vec<f64> = batch
        .iter()
        .scan(0, |row, s| {
            let n = s.x0.rows();
            let sums = g.speaker.row_slice(*row, *row + n).col_sums();
            *row += n;
            Some(sums)
        })
        .flatten()
        .collect();
    let speakers: Vec<f64> = batch.iter().flat_map(|s| s.cond.speaker.clone()).collect();
    let dim = cfg.generator.speaker_dim;
    out.push(fd_check(
        &format!("{tag} speaker embedding"),
        &speakers,
        &vec![dim; batch.len()],
        &analytic,
        seed + 1,
        |p| {
            let mut b = batch.clone();
            for (i, s) in b.iter_mut().enumerate() {
                s.cond.speaker = p[i * dim..(i + 1) * dim].to_vec();
            }
            dpm_train_loss(&net, &b, &sched).unwrap()
        },
    ));

    let batch = cfm_batch(cfg, data, seed);
    let (_, g) = cfm_loss_and_grads(&net, &batch).unwrap();
    out.push(fd_check(
        &format!("{tag} vector field net"),
        &flat,
        &sizes,
        &g.param_slices().concat(),
        seed + 2,
        |p| cfm_train_loss(&with_params(&net, p), &batch).unwrap(),
    ));
    out
}

fn ae_reports(cfg: &RunConfig, seed: u64) -> Vec<FdReport> {
    let dims = cfg.ae_dims();
    let mut rng = stream(seed, &[3]);
    let ae = Autoencoder::init(dims, &mut rng).unwrap();
    let renderer = Renderer::new(dims.feature, 0);
    let disc = Discriminator::init(
        renderer.window_len(),
        cfg.autoencoder.disc_width,
        cfg.autoencoder.disc_hidden_layers,
        &mut rng,
    );
    let batch: Vec<Tensor2> = [6usize, 9]
        .iter()
        .map(|&n| normal_tensor(&mut rng, n, dims.feature))
        .collect();
    let (flat, sizes) = flatten(ae.param_slices());
    let rebuild = |p: &[f64]| {
        let mut a = ae.clone();
        unflatten(a.param_slices_mut(), p);
        a
    };
    let mut out = Vec::new();
    let variants = [
        ("autoencoder, adversarial objective", AeObjective::Adversarial, KlMode::Scalar),
        ("autoencoder, regular objective", AeObjective::Regular, KlMode::Scalar),
        ("autoencoder, per-dimension KL", AeObjective::Regular, KlMode::PerDimension),
    ];
    for (i, (label, objective, kl_mode)) in variants.into_iter().enumerate() {
        let loss_cfg = AeLossConfig {
            objective,
            kl_mode,
            ..cfg.autoencoder.loss
        };
        let (_, g) = ae_loss_and_grads(&ae, &disc, &renderer, &batch, &loss_cfg).unwrap();
        out.push(fd_check(
            label,
            &flat,
            &sizes,
            &g.param_slices().concat(),
            seed + 10 + i as u64,
            |p| {
                ae_loss_and_grads(&rebuild(p), &disc, &renderer, &batch, &loss_cfg)
                    .unwrap()
                    .0
                    .total
            },
        ));
    }

    let (flat, sizes) = flatten(disc.net.param_slices());
    let (_, g) = disc_loss_and_grads(&ae, &disc, &renderer, &batch).unwrap();
    out.push(fd_check(
        "discriminator",
        &flat,
        &sizes,
        &g.param_slices().concat(),
        seed + 20,
        |p| {
            let mut d = disc.clone();
            unflatten(d.net.param_slices_mut(), p);
            disc_loss_and_grads(&ae, &d, &renderer, &batch).unwrap().0.adv_disc
        },
    ));
    out
}

/// Every trainable network of the default configuration.
pub fn gradient_suite(seed: u64) -> Vec<FdReport> {
    let cfg = RunConfig::default();
    let mut out = field_reports(&cfg, cfg.corpus.dim, "feature-space", seed);
    out.extend(field_reports(&cfg, cfg.autoencoder.latent, "latent-space", seed + 100));
    out.extend(ae_reports(&cfg, seed + 200));
    out
}

pub struct ConstantField(pub Vec<f64>);

impl FrameField for ConstantField {
    fn data_dim(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, x: &Tensor2, _t: f64, _c: &ConditioningBundle) -> Result<Tensor2> {
        Ok(Tensor2::broadcast_row(&self.0, x.rows()))
    }
}

/// `v(x, t) = -x`
pub struct Decay;

impl FrameField for Decay {
    fn data_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &Tensor2, _t: f64, _c: &ConditioningBundle) -> Result<Tensor2> {
        Ok(x.scale(-1.0))
    }
}

/// Returns a fixed tensor regardless of input.
pub struct Oracle(pub Tensor2);

impl FrameField for Oracle {
    fn data_dim(&self) -> usize {
        self.0.cols()
    }
    fn eval(&self, _x: &Tensor2, _t: f64, _c: &ConditioningBundle) -> Result<Tensor2> {
        Ok(self.0.clone())
    }
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> std::result::Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want} (tol {tol})"))
    }
}

fn row(v: &[f64]) -> Tensor2 {
    Tensor2::from_rows(&[v]).unwrap()
}

type Check = std::result::Result<(), String>;

fn forward_marginals() -> Check {
    let sched = NoiseSchedule::new(&Default::default()).unwrap();
    let x0 = row(&[1.5, -0.5]);
    let draws = 100_000;
    let mut rng = stream(11, &[]);
    for l in [1, 10, 20] {
        let ab = sched.alpha_bar(l).unwrap();
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..draws {
            let x = forward_diffuse(&x0, l, &normal_tensor(&mut rng, 1, 2), &sched).unwrap();
            for d in 0..2 {
                sum[d] += x[(0, d)];
                sq[d] += x[(0, d)] * x[(0, d)];
            }
        }
        for d in 0..2 {
            let mean = sum[d] / draws as f64;
            let var = sq[d] / draws as f64 - mean * mean;
            let want_mean = ab.sqrt() * x0[(0, d)];
            let want_var = 1.0 - ab;
            if (mean - want_mean).abs() > 0.02 * want_mean.abs() {
                return Err(format!("l={l} dim {d}: mean {mean} vs {want_mean}"));
            }
            if (var - want_var).abs() > 0.02 * want_var {
                return Err(format!("l={l} dim {d}: variance {var} vs {want_var}"));
            }
        }
    }
    Ok(())
}

fn schedule_identities() -> Check {
    let sched = NoiseSchedule::new(&Default::default()).unwrap();
    close("L", sched.steps() as f64, 20.0, 0.0)?;
    close("beta_1", sched.beta(1).unwrap(), 1e-4, 1e-15)?;
    close("beta_L", sched.beta(20).unwrap(), 0.06, 1e-15)?;
    let mut prod = 1.0;
    for l in 1..=20 {
        let b = 1e-4 + (0.06 - 1e-4) * (l - 1) as f64 / 19.0;
        close(&format!("beta_{l}"), sched.beta(l).unwrap(), b, 1e-12)?;
        close(&format!("alpha_{l}"), sched.alpha(l).unwrap(), 1.0 - b, 1e-12)?;
        prod *= 1.0 - b;
        close(&format!("alpha_bar_{l}"), sched.alpha_bar(l).unwrap(), prod, 1e-12)?;
        close(&format!("nu_{l}"), sched.nu(l).unwrap().powi(2), b, 1e-12)?;
    }
    close("alpha_bar_1 = alpha_1", sched.alpha_bar(1).unwrap(), sched.alpha(1).unwrap(), 0.0)
}

fn reverse_step_values() -> Check {
    let cond = ConditioningBundle::zeros(0, 0, 1);
    let sched = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
    close("alpha_bar_2", sched.alpha_bar(2).unwrap(), 0.81, 1e-12)?;
    let x = row(&[1.0]);
    let got = reverse_step(&ConstantField(vec![1.0]), &x, 2, &cond, &sched, None).unwrap();
    let want = (1.0 - 0.1 / 0.19f64.sqrt()) / 0.9f64.sqrt();
    close("plug-in step", got[(0, 0)], want, 1e-12)?;
    close("plug-in step (4 d.p.)", got[(0, 0)], 0.8123, 5e-4)?;

    let zero = ConstantField(vec![0.0]);
    let got = reverse_step(&zero, &x, 2, &cond, &sched, None).unwrap();
    close("zero predictor", got[(0, 0)], 1.0 / 0.9f64.sqrt(), 1e-12)?;

    // one diffuse / one reverse with the true noise recovers x0 at l = 1
    let sched = NoiseSchedule::new(&Default::default()).unwrap();
    let x0 = row(&[0.3, -1.2]);
    let eps = row(&[0.7, 0.1]);
    let x1 = forward_diffuse(&x0, 1, &eps, &sched).unwrap();
    let cond = ConditioningBundle::zeros(0, 0, 1);
    let back = reverse_step(&Oracle(eps), &x1, 1, &cond, &sched, None).unwrap();
    for d in 0..2 {
        close("l=1 inversion", back[(0, d)], x0[(0, d)], 1e-12)?;
    }

    // two deterministic steps with a zero predictor
    let sched = NoiseSchedule::linear(4, 0.01, 0.05).unwrap();
    let opts = ReverseOptions {
        stochastic: false,
        noise_at_final_step: false,
    };
    let s = reverse_sample(&zero, &row(&[2.0]), 2, &cond, &sched, &mut stream(0, &[]), opts, None)
        .unwrap();
    let want = 2.0 / (sched.alpha(1).unwrap() * sched.alpha(2).unwrap()).sqrt();
    close("two-step collapse", s.output[(0, 0)], want, 1e-12)?;
    close("nfe", s.nfe as f64, 2.0, 0.0)
}

fn cfm_identities() -> Check {
    let (x0, x1) = (row(&[0.0, 0.0]), row(&[2.0, 4.0]));
    let zeros = row(&[0.0, 0.0]);
    let at = |t: f64| sample_path_point(&x0, &x1, t, 0.0, &row(&[5.0, 5.0])).unwrap();
    if at(0.0) != x0 || at(1.0) != x1 {
        return Err("path endpoints".into());
    }
    if at(0.5) != row(&[1.0, 2.0]) {
        return Err(format!("midpoint {:?}", at(0.5)));
    }
    if cfm_target(&row(&[1.0, 1.0]), &row(&[3.0, 0.0])).unwrap() != row(&[2.0, -1.0]) {
        return Err("target".into());
    }
    if cfm_target(&x1, &x1).unwrap() != zeros {
        return Err("degenerate target".into());
    }
    if noise_mix(&row(&[2.0]), 0.5, &row(&[-1.0])).unwrap() != row(&[0.5]) {
        return Err("noise mix".into());
    }
    if noise_mix(&row(&[2.0]), 0.0, &row(&[-1.0])).unwrap() != row(&[2.0]) {
        return Err("noise mix r=0".into());
    }
    if noise_mix(&row(&[2.0]), 1.0, &row(&[-1.0])).unwrap() != row(&[-1.0]) {
        return Err("noise mix r=1".into());
    }
    Ok(())
}

fn euler_exactness() -> Check {
    let cond = ConditioningBundle::zeros(0, 0, 1);
    let c = ConstantField(vec![0.37, -1.3]);
    let x = row(&[0.1, 2.0]);
    for steps in [1, 2, 3, 7, 10, 50] {
        let s = euler_integrate(&c, &x, steps, &cond, None).unwrap();
        close("nfe", s.nfe as f64, steps as f64, 0.0)?;
        for d in 0..2 {
            close(
                &format!("constant field, L={steps}"),
                s.output[(0, d)],
                x[(0, d)] + c.0[d],
                1e-12,
            )?;
        }
    }
    let s = euler_integrate(&Decay, &row(&[4.0]), 2, &cond, None).unwrap();
    close("decay field, L=2", s.output[(0, 0)], 1.0, 1e-12)
}

fn kl_values() -> Check {
    let e = std::f64::consts::E;
    close("mu=0 var=1", kl_loss(&row(&[1.0, -1.0]), KlMode::Scalar).unwrap(), 0.0, 1e-12)?;
    close("mu=1 var=1", kl_loss(&row(&[2.0, 0.0]), KlMode::Scalar).unwrap(), 0.5, 1e-12)?;
    let s = e.sqrt();
    close(
        "mu=0 var=e",
        kl_loss(&row(&[s, -s]), KlMode::Scalar).unwrap(),
        (e - 2.0) / 2.0,
        1e-12,
    )
}

/// `(name, outcome)` for each closed-form identity.
pub fn closed_form_suite() -> Vec<(&'static str, Check)> {
    vec![
        ("forward marginals", forward_marginals()),
        ("schedule identities", schedule_identities()),
        ("reverse step values", reverse_step_values()),
        ("path identities", cfm_identities()),
        ("euler exactness", euler_exactness()),
        ("kl values", kl_values()),
    ]
}
