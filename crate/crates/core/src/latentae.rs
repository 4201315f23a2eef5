//! Bottleneck autoencoder that defines the latent space, and its adversarial
//! training through a fixed render transform.
//!
//! The encoder sees each frame together with its ±`context` neighbours
//! (edge frames are replicated). A fixed, differentiable [`Renderer`] maps a
//! feature sequence to a 1-D overlap-added signal; a small dense
//! [`Discriminator`] scores frame-aligned windows of that signal. The
//! autoencoder objective is
//!
//! ```text
//! J_ae  = λ (J_rec + J_mel + J_KL) + J_adv_gen + J_feat
//! J_dis = J_adv_disc
//! ```
//!
//! where `J_mel` compares the analysis of the rendered reconstruction against
//! the input features. The `Regular` objective keeps only `λ (J_rec + J_KL)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::loss::{ensure_finite, l1_mean, l1_with_grad, sorted_sum};
use crate::nn::{Activation, DenseNet, NetGrads, NetSpec, Trace};
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeDims {
    pub feature: usize,
    pub latent: usize,
    /// Neighbour frames stacked on each side at the encoder input.
    pub context: usize,
    pub width: usize,
    pub hidden_layers: usize,
}

impl AeDims {
    pub fn encoder_spec(&self) -> NetSpec {
        NetSpec::mlp(
            (2 * self.context + 1) * self.feature,
            self.width,
            self.hidden_layers,
            self.latent,
            Activation::LeakyRelu,
        )
    }

    pub fn decoder_spec(&self) -> NetSpec {
        NetSpec::mlp(
            self.latent,
            self.width,
            self.hidden_layers,
            self.feature,
            Activation::LeakyRelu,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    dims: AeDims,
    pub encoder: DenseNet,
    pub decoder: DenseNet,
}

/// Stacks every frame with its ±`context` neighbours, replicating edge frames.
pub fn stack_context(x: &Tensor2, context: usize) -> Tensor2 {
    let (n, d) = x.shape();
    let width = (2 * context + 1) * d;
    let mut out = Tensor2::zeros(n, width);
    for t in 0..n {
        let row = out.row_mut(t);
        for (slot, off) in (-(context as isize)..=context as isize).enumerate() {
            let src = (t as isize + off).clamp(0, n as isize - 1) as usize;
            row[slot * d..(slot + 1) * d].copy_from_slice(x.row(src));
        }
    }
    out
}

impl Autoencoder {
    pub fn init<R: Rng + ?Sized>(dims: AeDims, rng: &mut R) -> Result<Self> {
        if dims.latent >= dims.feature {
            return Err(Error::Config(format!(
                "bottleneck ({}) must be smaller than the feature dimension ({})",
                dims.latent, dims.feature
            )));
        }
        Ok(Autoencoder {
            dims,
            encoder: DenseNet::init(&dims.encoder_spec(), rng),
            decoder: DenseNet::init(&dims.decoder_spec(), rng),
        })
    }

    pub fn from_parts(dims: AeDims, encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        if encoder.spec() != dims.encoder_spec() || decoder.spec() != dims.decoder_spec() {
            return Err(Error::Checkpoint(
                "autoencoder layers do not match the declared dimensions".into(),
            ));
        }
        Ok(Autoencoder {
            dims,
            encoder,
            decoder,
        })
    }

    pub fn dims(&self) -> AeDims {
        self.dims
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.param_slices_mut();
        v.extend(self.decoder.param_slices_mut());
        v
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.encoder.param_slices();
        v.extend(self.decoder.param_slices());
        v
    }

    pub fn encode(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != self.dims.feature {
            return Err(Error::shape("encode input", self.dims.feature, x.cols()));
        }
        self.encoder.forward(&stack_context(x, self.dims.context))
    }

    pub fn decode(&self, z: &Tensor2) -> Result<Tensor2> {
        if z.cols() != self.dims.latent {
            return Err(Error::shape("decode input", self.dims.latent, z.cols()));
        }
        self.decoder.forward(z)
    }

    pub fn reconstruct(&self, x: &Tensor2) -> Result<Tensor2> {
        self.decode(&self.encode(x)?)
    }
}

/// `mean |decode(encode(x)) − x|`
pub fn recon_loss(ae: &Autoencoder, x: &Tensor2) -> Result<f64> {
    l1_mean(&[(&ae.reconstruct(x)?, x)])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlMode {
    /// One mean and variance over all elements of `z`.
    #[default]
    Scalar,
    /// Mean and variance per latent dimension, KL averaged over dimensions.
    PerDimension,
}

/// Lower bound on the variance inside the log term, so constant latents give a
/// large but finite penalty.
pub const KL_VAR_FLOOR: f64 = 1e-8;

fn kl_term(mean: f64, var: f64) -> f64 {
    0.5 * (var + mean * mean - 1.0 - var.ln())
}

fn moments(values: impl Iterator<Item = f64> + Clone, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::Numeric(format!(
            "KL moments need at least two elements, got {n}"
        )));
    }
    let mean = sorted_sum(values.clone().collect()) / n as f64;
    let var = sorted_sum(values.map(|v| (v - mean) * (v - mean)).collect()) / n as f64;
    Ok((mean, var.max(KL_VAR_FLOOR)))
}

/// `½ (σ² + μ² − 1 − log σ²)` on the moments of `z`, and its gradient w.r.t. `z`.
pub fn kl_loss_with_grad(z: &Tensor2, mode: KlMode) -> Result<(f64, Tensor2)> {
    match mode {
        KlMode::Scalar => {
            let n = z.len();
            let (mean, var) = moments(z.data().iter().copied(), n)?;
            let k = 1.0 - 1.0 / var;
            let grad = z.map(|v| (mean + k * (v - mean)) / n as f64);
            Ok((kl_term(mean, var), grad))
        }
        KlMode::PerDimension => {
            let (rows, cols) = z.shape();
            let mut grad = Tensor2::zeros(rows, cols);
            let mut terms = Vec::with_capacity(cols);
            for c in 0..cols {
                let col = (0..rows).map(|r| z[(r, c)]);
                let (mean, var) = moments(col, rows)?;
                terms.push(kl_term(mean, var));
                let k = 1.0 - 1.0 / var;
                for r in 0..rows {
                    grad[(r, c)] = (mean + k * (z[(r, c)] - mean)) / (rows * cols) as f64;
                }
            }
            Ok((sorted_sum(terms) / cols as f64, grad))
        }
    }
}

pub fn kl_loss(z: &Tensor2, mode: KlMode) -> Result<f64> {
    Ok(kl_loss_with_grad(z, mode)?.0)
}

/// Fixed stand-in for "synthesise, then analyse": frame `n` is projected to a
/// `2·hop`-sample segment `tanh(gain · [U; V] x_n)` and segments are
/// overlap-added with stride `hop`. `U` and `V` have orthonormal columns
/// spanning orthogonal subspaces, so the linear analysis
/// `(Uᵀ w[nH..nH+H] + Vᵀ w[(n+1)H..(n+2)H]) / (2·gain)` approximately
/// inverts the render.
#[derive(Clone, Debug, PartialEq)]
pub struct Renderer {
    feature: usize,
    hop: usize,
    gain: f64,
    /// `hop x feature`
    u: Tensor2,
    /// `hop x feature`
    v: Tensor2,
}

/// A rendered sequence: `(frames + 1) · hop` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderSeq {
    pub samples: Vec<f64>,
    pub frames: usize,
    pub hop: usize,
}

impl RenderSeq {
    /// Frame-aligned windows `w[n·hop .. n·hop + 2·hop]`, one row per frame.
    pub fn windows(&self) -> Tensor2 {
        let w = 2 * self.hop;
        let mut out = Tensor2::zeros(self.frames, w);
        for n in 0..self.frames {
            out.row_mut(n)
                .copy_from_slice(&self.samples[n * self.hop..n * self.hop + w]);
        }
        out
    }
}

pub const RENDER_GAIN: f64 = 0.5;

impl Renderer {
    /// Deterministic projection for a feature dimension; `hop = 2 · feature`.
    pub fn new(feature: usize, seed: u64) -> Self {
        let hop = 2 * feature;
        let mut rng = crate::rng::stream(seed, &[crate::rng::label_key("renderer")]);
        // Gram-Schmidt on 2·feature random columns in R^hop
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(2 * feature);
        while cols.len() < 2 * feature {
            let mut c: Vec<f64> = (0..hop)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            for _ in 0..2 {
                for q in &cols {
                    let dot: f64 = c.iter().zip(q).map(|(a, b)| a * b).sum();
                    c.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let norm = c.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                c.iter_mut().for_each(|a| *a /= norm);
                cols.push(c);
            }
        }
        let mut u = Tensor2::zeros(hop, feature);
        let mut v = Tensor2::zeros(hop, feature);
        for j in 0..feature {
            for i in 0..hop {
                u[(i, j)] = cols[j][i];
                v[(i, j)] = cols[feature + j][i];
            }
        }
        Renderer {
            feature,
            hop,
            gain: RENDER_GAIN,
            u,
            v,
        }
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window_len(&self) -> usize {
        2 * self.hop
    }

    /// Pre-tanh projections `(gain · x Uᵀ, gain · x Vᵀ)`, each `frames x hop`.
    fn project(&self, x: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        if x.cols() != self.feature {
            return Err(Error::shape("render input", self.feature, x.cols()));
        }
        Ok((
            x.matmul_t(&self.u)?.scale(self.gain),
            x.matmul_t(&self.v)?.scale(self.gain),
        ))
    }

    pub fn render(&self, x: &Tensor2) -> Result<RenderSeq> {
        let (a, b) = self.project(x)?;
        let h = self.hop;
        let n = x.rows();
        let mut samples = vec![0.0; (n + 1) * h];
        for f in 0..n {
            for i in 0..h {
                samples[f * h + i] += a[(f, i)].tanh();
                samples[(f + 1) * h + i] += b[(f, i)].tanh();
            }
        }
        Ok(RenderSeq {
            samples,
            frames: n,
            hop: h,
        })
    }

    /// Gradient w.r.t. `x` given a gradient w.r.t. the frame windows of `render(x)`.
    pub fn render_backward(&self, x: &Tensor2, window_grad: &Tensor2) -> Result<Tensor2> {
        let n = x.rows();
        let h = self.hop;
        window_grad.ensure_shape("render window gradient", n, 2 * h)?;
        let mut sample_grad = vec![0.0; (n + 1) * h];
        for f in 0..n {
            for (i, g) in window_grad.row(f).iter().enumerate() {
                sample_grad[f * h + i] += g;
            }
        }
        self.samples_backward(x, &sample_grad)
    }

    fn samples_backward(&self, x: &Tensor2, sample_grad: &[f64]) -> Result<Tensor2> {
        let (a, b) = self.project(x)?;
        let n = x.rows();
        let h = self.hop;
        let mut ga = Tensor2::zeros(n, h);
        let mut gb = Tensor2::zeros(n, h);
        for f in 0..n {
            for i in 0..h {
                let ta = a[(f, i)].tanh();
                let tb = b[(f, i)].tanh();
                ga[(f, i)] = sample_grad[f * h + i] * (1.0 - ta * ta) * self.gain;
                gb[(f, i)] = sample_grad[(f + 1) * h + i] * (1.0 - tb * tb) * self.gain;
            }
        }
        ga.matmul(&self.u)?.add(&gb.matmul(&self.v)?)
    }

    /// Linear analysis back to the feature domain, one row per frame.
    pub fn analyze(&self, r: &RenderSeq) -> Result<Tensor2> {
        let h = self.hop;
        let n = r.frames;
        let mut top = Tensor2::zeros(n, h);
        let mut bot = Tensor2::zeros(n, h);
        for f in 0..n {
            top.row_mut(f).copy_from_slice(&r.samples[f * h..(f + 1) * h]);
            bot.row_mut(f)
                .copy_from_slice(&r.samples[(f + 1) * h..(f + 2) * h]);
        }
        let k = 1.0 / (2.0 * self.gain);
        Ok(top.matmul(&self.u)?.add(&bot.matmul(&self.v)?)?.scale(k))
    }

    /// Gradient w.r.t. the rendered samples given a gradient w.r.t. `analyze(r)`.
    fn analyze_backward(&self, frames: usize, grad: &Tensor2) -> Result<Vec<f64>> {
        let h = self.hop;
        let k = 1.0 / (2.0 * self.gain);
        let gt = grad.matmul_t(&self.u)?;
        let gb = grad.matmul_t(&self.v)?;
        let mut out = vec![0.0; (frames + 1) * h];
        for f in 0..frames {
            for i in 0..h {
                out[f * h + i] += k * gt[(f, i)];
                out[(f + 1) * h + i] += k * gb[(f, i)];
            }
        }
        Ok(out)
    }
}

/// Window-level critic over rendered signals, with every layer's output
/// exposed as a feature tap.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: DenseNet,
}

impl Discriminator {
    pub fn spec(window: usize, width: usize, hidden_layers: usize) -> NetSpec {
        NetSpec::mlp(window, width, hidden_layers, 1, Activation::LeakyRelu)
    }

    pub fn init<R: Rng + ?Sized>(
        window: usize,
        width: usize,
        hidden_layers: usize,
        rng: &mut R,
    ) -> Self {
        Discriminator {
            net: DenseNet::init(&Self::spec(window, width, hidden_layers), rng),
        }
    }

    /// One score per window.
    pub fn score(&self, windows: &Tensor2) -> Result<Vec<f64>> {
        Ok(self.net.forward(windows)?.into_vec())
    }

    pub fn trace(&self, windows: &Tensor2) -> Result<Trace> {
        self.net.forward_trace(windows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsganLosses {
    /// `E[(d(fake) − 1)²]`
    pub adv_gen: f64,
    /// `E[(d(real) − 1)²] + E[d(fake)²]`
    pub adv_disc: f64,
}

/// Least-squares GAN objectives from per-window scores.
pub fn lsgan_losses(real_scores: &[f64], fake_scores: &[f64]) -> Result<LsganLosses> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::Numeric("LSGAN losses over zero windows".into()));
    }
    let mean_sq = |s: &[f64], target: f64| {
        sorted_sum(s.iter().map(|v| (v - target).powi(2)).collect()) / s.len() as f64
    };
    Ok(LsganLosses {
        adv_gen: mean_sq(fake_scores, 1.0),
        adv_disc: mean_sq(real_scores, 1.0) + mean_sq(fake_scores, 0.0),
    })
}

/// `Σ_i (1/N_i) |d⁽ⁱ⁾(fake) − d⁽ⁱ⁾(real)|₁`, averaged over windows.
pub fn feature_matching_loss(real: &Trace, fake: &Trace) -> Result<f64> {
    let mut total = Vec::with_capacity(real.layer_count());
    for i in 0..real.layer_count() {
        total.push(l1_mean(&[(fake.layer_output(i), real.layer_output(i))])?);
    }
    Ok(sorted_sum(total))
}

fn feature_matching_taps(real: &Trace, fake: &Trace) -> Result<Vec<Option<Tensor2>>> {
    (0..real.layer_count())
        .map(|i| Ok(Some(l1_with_grad(fake.layer_output(i), real.layer_output(i))?.1)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeObjective {
    /// Reconstruction and KL only; the discriminator is never updated.
    Regular,
    /// Full objective with render-domain adversarial and feature-matching terms.
    #[default]
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeLossConfig {
    pub lambda: f64,
    pub objective: AeObjective,
    pub kl_mode: KlMode,
}

impl Default for AeLossConfig {
    fn default() -> Self {
        AeLossConfig {
            lambda: 45.0,
            objective: AeObjective::Adversarial,
            kl_mode: KlMode::Scalar,
        }
    }
}

/// Per-component values of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AeLossBreakdown {
    pub rec: f64,
    pub mel: f64,
    pub kl: f64,
    pub adv_gen: f64,
    pub feat: f64,
    pub adv_disc: f64,
    /// Fraction of fake windows the discriminator scores above 0.5.
    pub fooling_rate: f64,
    pub total: f64,
}

impl AeLossBreakdown {
    pub fn components(&self) -> [(&'static str, f64); 8] {
        [
            ("rec", self.rec),
            ("mel", self.mel),
            ("kl", self.kl),
            ("adv_gen", self.adv_gen),
            ("feat", self.feat),
            ("adv_disc", self.adv_disc),
            ("fooling_rate", self.fooling_rate),
            ("total", self.total),
        ]
    }
}

/// Everything the autoencoder forward pass produces for one batch.
struct AeForward {
    /// Per-utterance context stacks, encoder traces and latents.
    enc: Vec<Trace>,
    dec: Vec<Trace>,
    renders: Vec<RenderSeq>,
}

fn ae_forward(ae: &Autoencoder, renderer: Option<&Renderer>, batch: &[Tensor2]) -> Result<AeForward> {
    let mut enc = Vec::with_capacity(batch.len());
    let mut dec = Vec::with_capacity(batch.len());
    let mut renders = Vec::new();
    for x in batch {
        if x.cols() != ae.dims.feature {
            return Err(Error::shape("autoencoder batch", ae.dims.feature, x.cols()));
        }
        let e = ae.encoder.forward_trace(&stack_context(x, ae.dims.context))?;
        let d = ae.decoder.forward_trace(e.output())?;
        if let Some(r) = renderer {
            renders.push(r.render(d.output())?);
        }
        enc.push(e);
        dec.push(d);
    }
    Ok(AeForward { enc, dec, renders })
}

fn stacked_windows(renders: &[RenderSeq]) -> Result<Tensor2> {
    let w: Vec<Tensor2> = renders.iter().map(RenderSeq::windows).collect();
    Tensor2::vcat(&w.iter().collect::<Vec<_>>())
}

fn real_windows(renderer: &Renderer, batch: &[Tensor2]) -> Result<Tensor2> {
    let renders = batch
        .iter()
        .map(|x| renderer.render(x))
        .collect::<Result<Vec<_>>>()?;
    stacked_windows(&renders)
}

/// Gradients for one autoencoder update.
pub struct AeGrads {
    pub encoder: NetGrads,
    pub decoder: NetGrads,
}

impl AeGrads {
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.encoder.param_slices();
        v.extend(self.decoder.param_slices());
        v
    }
}

/// Autoencoder objective and its gradient; the discriminator is held fixed.
pub fn ae_loss_and_grads(
    ae: &Autoencoder,
    disc: &Discriminator,
    renderer: &Renderer,
    batch: &[Tensor2],
    cfg: &AeLossConfig,
) -> Result<(AeLossBreakdown, AeGrads)> {
    if batch.is_empty() {
        return Err(Error::Config("empty autoencoder batch".into()));
    }
    let adversarial = cfg.objective == AeObjective::Adversarial;
    let fwd = ae_forward(ae, adversarial.then_some(renderer), batch)?;
    let lambda = cfg.lambda;
    let mut out = AeLossBreakdown::default();

    // reconstruction, on the whole batch
    let x_all = Tensor2::vcat(&batch.iter().collect::<Vec<_>>())?;
    let xhat_all = Tensor2::vcat(&fwd.dec.iter().map(Trace::output).collect::<Vec<_>>())?;
    let (rec, rec_grad) = l1_with_grad(&xhat_all, &x_all)?;
    out.rec = ensure_finite(rec, "rec")?;
    let mut xhat_grad = rec_grad.scale(lambda);

    if adversarial {
        // mel analog: analysis of the rendered reconstruction vs the input
        let analyzed = fwd
            .renders
            .iter()
            .map(|r| renderer.analyze(r))
            .collect::<Result<Vec<_>>>()?;
        let a_all = Tensor2::vcat(&analyzed.iter().collect::<Vec<_>>())?;
        let (mel, mel_grad) = l1_with_grad(&a_all, &x_all)?;
        out.mel = ensure_finite(mel, "mel")?;

        let fake_w = stacked_windows(&fwd.renders)?;
        let real_w = real_windows(renderer, batch)?;
        let fake_t = disc.trace(&fake_w)?;
        let real_t = disc.trace(&real_w)?;
        let fake_scores = fake_t.output().data();
        let ls = lsgan_losses(real_t.output().data(), fake_scores)?;
        out.adv_gen = ensure_finite(ls.adv_gen, "adv_gen")?;
        out.adv_disc = ensure_finite(ls.adv_disc, "adv_disc")?;
        out.feat = ensure_finite(feature_matching_loss(&real_t, &fake_t)?, "feat")?;
        out.fooling_rate =
            fake_scores.iter().filter(|&&s| s > 0.5).count() as f64 / fake_scores.len() as f64;

        let nw = fake_scores.len() as f64;
        let upstream = fake_t.output().map(|s| 2.0 * (s - 1.0) / nw);
        let taps = feature_matching_taps(&real_t, &fake_t)?;
        let window_grad = disc.net.backward_trace(&fake_t, &upstream, &taps)?.input;

        // route window and analysis gradients back to each utterance's x̂
        let mut w_off = 0;
        let mut f_off = 0;
        for dec in &fwd.dec {
            let xhat = dec.output();
            let n = xhat.rows();
            let wg = window_grad.row_slice(w_off, w_off + n);
            let mut g = renderer.render_backward(xhat, &wg)?;
            let mg = mel_grad.row_slice(f_off, f_off + n).scale(lambda);
            let sg = renderer.analyze_backward(n, &mg)?;
            g.axpy(1.0, &renderer.samples_backward(xhat, &sg)?)?;
            let rows = xhat_grad.row_slice(f_off, f_off + n).add(&g)?;
            for r in 0..n {
                xhat_grad.row_mut(f_off + r).copy_from_slice(rows.row(r));
            }
            w_off += n;
            f_off += n;
        }
    }

    let mut enc_grads: Option<NetGrads> = None;
    let mut dec_grads: Option<NetGrads> = None;
    let mut kls = Vec::with_capacity(batch.len());
    let mut off = 0;
    let b = batch.len() as f64;
    for (e, d) in fwd.enc.iter().zip(&fwd.dec) {
        let n = d.output().rows();
        let up = xhat_grad.row_slice(off, off + n);
        off += n;
        let dg = ae.decoder.backward_trace(d, &up, &[])?;
        let (kl, kl_grad) = kl_loss_with_grad(e.output(), cfg.kl_mode)?;
        kls.push(kl);
        let mut zg = dg.input.clone();
        zg.axpy(lambda / b, &kl_grad)?;
        let eg = ae.encoder.backward_trace(e, &zg, &[])?;
        match (&mut enc_grads, &mut dec_grads) {
            (Some(ea), Some(da)) => {
                ea.accumulate(&eg)?;
                da.accumulate(&dg)?;
            }
            _ => {
                enc_grads = Some(eg);
                dec_grads = Some(dg);
            }
        }
    }
    out.kl = ensure_finite(sorted_sum(kls) / b, "kl")?;
    out.total = lambda * (out.rec + out.mel + out.kl) + out.adv_gen + out.feat;
    ensure_finite(out.total, "total")?;
    Ok((
        out,
        AeGrads {
            encoder: enc_grads.expect("non-empty batch"),
            decoder: dec_grads.expect("non-empty batch"),
        },
    ))
}

/// `J_dis` on detached reconstructions, and its gradient w.r.t. the discriminator.
pub fn disc_loss_and_grads(
    ae: &Autoencoder,
    disc: &Discriminator,
    renderer: &Renderer,
    batch: &[Tensor2],
) -> Result<(LsganLosses, NetGrads)> {
    let fwd = ae_forward(ae, Some(renderer), batch)?;
    let fake_w = stacked_windows(&fwd.renders)?;
    let real_w = real_windows(renderer, batch)?;
    disc_loss_on_windows(disc, &real_w, &fake_w)
}

/// LSGAN discriminator loss and gradient for given real/fake windows.
pub fn disc_loss_on_windows(
    disc: &Discriminator,
    real_w: &Tensor2,
    fake_w: &Tensor2,
) -> Result<(LsganLosses, NetGrads)> {
    let fake_t = disc.trace(fake_w)?;
    let real_t = disc.trace(real_w)?;
    let ls = lsgan_losses(real_t.output().data(), fake_t.output().data())?;
    ensure_finite(ls.adv_disc, "adv_disc")?;
    let nr = real_t.output().len() as f64;
    let nf = fake_t.output().len() as f64;
    let gr = disc
        .net
        .backward_trace(&real_t, &real_t.output().map(|s| 2.0 * (s - 1.0) / nr), &[])?;
    let mut gf = disc
        .net
        .backward_trace(&fake_t, &fake_t.output().map(|s| 2.0 * s / nf), &[])?;
    gf.accumulate(&gr)?;
    Ok((ls, gf))
}

/// Optimiser state for the two alternating players.
pub struct AeOptim {
    pub ae: AdamState,
    pub disc: AdamState,
}

impl AeOptim {
    pub fn new(config: AdamConfig, ae: &Autoencoder, disc: &Discriminator) -> Self {
        let ae_sizes: Vec<usize> = ae.param_slices().iter().map(|s| s.len()).collect();
        let d_sizes: Vec<usize> = disc.net.param_slices().iter().map(|s| s.len()).collect();
        AeOptim {
            ae: AdamState::new(config, &ae_sizes),
            disc: AdamState::new(config, &d_sizes),
        }
    }
}

/// One alternating update: discriminator on `J_dis`, then autoencoder on `J_ae`.
/// With the `Regular` objective only the autoencoder moves.
pub fn ae_train_step(
    ae: &mut Autoencoder,
    disc: &mut Discriminator,
    renderer: &Renderer,
    batch: &[Tensor2],
    optim: &mut AeOptim,
    cfg: &AeLossConfig,
) -> Result<AeLossBreakdown> {
    if !(cfg.lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {}", cfg.lambda)));
    }
    if cfg.objective == AeObjective::Adversarial {
        let (_, dg) = disc_loss_and_grads(ae, disc, renderer, batch)?;
        optim
            .disc
            .step(&mut disc.net.param_slices_mut(), &dg.param_slices())
            .map_err(|e| relabel(e, "discriminator"))?;
    }
    let (breakdown, grads) = ae_loss_and_grads(ae, disc, renderer, batch, cfg)?;
    optim
        .ae
        .step(&mut ae.param_slices_mut(), &grads.param_slices())
        .map_err(|e| relabel(e, "autoencoder"))?;
    Ok(breakdown)
}

fn relabel(e: Error, who: &str) -> Error {
    match e {
        Error::Training { component, epoch } => Error::Training {
            component: format!("{who} {component}"),
            epoch,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use crate::rng::{normal_tensor, stream};

    fn dims() -> AeDims {
        AeDims {
            feature: 6,
            latent: 3,
            context: 1,
            width: 8,
            hidden_layers: 2,
        }
    }

    #[test]
    fn kl_analytic_values() {
        // two-point sets with chosen mean and population variance
        let z = |m: f64, v: f64| Tensor2::from_rows(&[[m - v.sqrt(), m + v.sqrt()]]).unwrap();
        assert!(kl_loss(&z(0.0, 1.0), KlMode::Scalar).unwrap().abs() < 1e-15);
        assert!((kl_loss(&z(1.0, 1.0), KlMode::Scalar).unwrap() - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        let want = (e - 2.0) / 2.0;
        assert!((kl_loss(&z(0.0, e), KlMode::Scalar).unwrap() - want).abs() < 1e-14);
        assert!((want - 0.3591).abs() < 1e-4);
    }

    #[test]
    fn kl_guards_degenerate_input() {
        assert!(matches!(
            kl_loss(&Tensor2::filled(1, 1, 0.3), KlMode::Scalar),
            Err(Error::Numeric(_))
        ));
        let constant = kl_loss(&Tensor2::filled(4, 2, 0.3), KlMode::Scalar).unwrap();
        assert!(constant.is_finite() && constant > 5.0);
    }

    #[test]
    fn lsgan_plug_in_values() {
        let l = lsgan_losses(&[0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(l.adv_gen, 0.25);
        assert_eq!(l.adv_disc, 0.5);
        assert_eq!(lsgan_losses(&[1.0], &[1.0]).unwrap().adv_gen, 0.0);
        assert_eq!(lsgan_losses(&[1.0, 1.0], &[0.0]).unwrap().adv_disc, 0.0);
    }

    #[test]
    fn feature_matching_single_layer() {
        let net = DenseNet::from_layers(vec![Dense {
            weight: Tensor2::identity(2),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        let a = net.forward_trace(&Tensor2::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
        let b = net.forward_trace(&Tensor2::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(feature_matching_loss(&a, &b).unwrap(), 1.0);
        assert_eq!(feature_matching_loss(&b, &a).unwrap(), 1.0);
        assert_eq!(feature_matching_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn identity_autoencoder_has_zero_reconstruction_loss() {
        let d = AeDims {
            feature: 3,
            latent: 2,
            context: 0,
            width: 3,
            hidden_layers: 0,
        };
        // f = projection onto the first two coordinates, g = its transpose;
        // exact on inputs whose last coordinate is zero
        let mut enc = Tensor2::zeros(3, 2);
        enc[(0, 0)] = 1.0;
        enc[(1, 1)] = 1.0;
        let ident = |w: Tensor2| {
            let out = w.cols();
            DenseNet::from_layers(vec![Dense {
                weight: w,
                bias: vec![0.0; out],
                activation: Activation::Identity,
            }])
            .unwrap()
        };
        let ae = Autoencoder::from_parts(d, ident(enc.clone()), ident(enc.transpose())).unwrap();
        let x = Tensor2::from_rows(&[[1.0, -2.0, 0.0], [0.5, 3.0, 0.0]]).unwrap();
        assert_eq!(recon_loss(&ae, &x).unwrap(), 0.0);
    }

    #[test]
    fn encode_decode_shapes() {
        let mut rng = stream(11, &[]);
        let ae = Autoencoder::init(dims(), &mut rng).unwrap();
        let x = normal_tensor(&mut rng, 10, 6);
        let z = ae.encode(&x).unwrap();
        assert_eq!(z.shape(), (10, 3));
        assert!(z.is_finite());
        assert_eq!(ae.decode(&z).unwrap().shape(), (10, 6));
        assert!(ae.encode(&Tensor2::zeros(4, 5)).is_err());
        assert!(ae.decode(&Tensor2::zeros(4, 6)).is_err());
        let over = AeDims { latent: 6, ..dims() };
        assert!(Autoencoder::init(over, &mut rng).is_err());
    }

    #[test]
    fn context_stacking_replicates_edges() {
        let x = Tensor2::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let s = stack_context(&x, 1);
        assert_eq!(s.data(), &[1.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn render_analysis_nearly_inverts() {
        let r = Renderer::new(8, 3);
        let mut rng = stream(12, &[]);
        let x = normal_tensor(&mut rng, 20, 8);
        let back = r.analyze(&r.render(&x).unwrap()).unwrap();
        let err = l1_mean(&[(&back, &x)]).unwrap();
        let scale = l1_mean(&[(&x, &Tensor2::zeros(20, 8))]).unwrap();
        assert!(err < 0.2 * scale, "analysis round trip error {err} vs scale {scale}");
        assert_eq!(r.render(&Tensor2::zeros(3, 8)).unwrap().samples, vec![0.0; 64]);
        assert_eq!(r.render(&x).unwrap(), r.render(&x).unwrap());
    }

    #[test]
    fn zero_weight_networks_give_finite_losses() {
        let mut rng = stream(13, &[]);
        let mut ae = Autoencoder::init(dims(), &mut rng).unwrap();
        for s in ae.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        let r = Renderer::new(6, 1);
        let mut disc = Discriminator::init(r.window_len(), 8, 2, &mut rng);
        for s in disc.net.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        let batch = vec![normal_tensor(&mut rng, 7, 6)];
        let (b, g) = ae_loss_and_grads(&ae, &disc, &r, &batch, &AeLossConfig::default()).unwrap();
        for (_, v) in b.components() {
            assert!(v.is_finite());
        }
        assert!(g.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn alternating_updates_touch_only_their_player() {
        let mut rng = stream(14, &[]);
        let mut ae = Autoencoder::init(dims(), &mut rng).unwrap();
        let r = Renderer::new(6, 1);
        let mut disc = Discriminator::init(r.window_len(), 8, 2, &mut rng);
        let batch = vec![normal_tensor(&mut rng, 9, 6), normal_tensor(&mut rng, 5, 6)];
        let cfg = AeLossConfig::default();

        let ae0 = ae.clone();
        let disc_before = disc.clone();
        let (_, dg) = disc_loss_and_grads(&ae, &disc, &r, &batch).unwrap();
        let mut st = AdamState::new(
            AdamConfig::default(),
            &disc.net.param_slices().iter().map(|s| s.len()).collect::<Vec<_>>(),
        );
        st.step(&mut disc.net.param_slices_mut(), &dg.param_slices()).unwrap();
        assert_eq!(ae, ae0);
        assert_ne!(disc, disc_before);

        let disc1 = disc.clone();
        let (_, g) = ae_loss_and_grads(&ae, &disc, &r, &batch, &cfg).unwrap();
        let mut st = AdamState::new(
            AdamConfig::default(),
            &ae.param_slices().iter().map(|s| s.len()).collect::<Vec<_>>(),
        );
        st.step(&mut ae.param_slices_mut(), &g.param_slices()).unwrap();
        assert_eq!(disc, disc1);
        assert_ne!(ae, ae0);
    }

    #[test]
    fn regular_objective_never_moves_the_discriminator() {
        let mut rng = stream(15, &[]);
        let mut ae = Autoencoder::init(dims(), &mut rng).unwrap();
        let r = Renderer::new(6, 1);
        let mut disc = Discriminator::init(r.window_len(), 8, 2, &mut rng);
        let d0 = disc.clone();
        let mut opt = AeOptim::new(AdamConfig::default(), &ae, &disc);
        let batch = vec![normal_tensor(&mut rng, 9, 6)];
        let cfg = AeLossConfig {
            objective: AeObjective::Regular,
            ..AeLossConfig::default()
        };
        let b = ae_train_step(&mut ae, &mut disc, &r, &batch, &mut opt, &cfg).unwrap();
        assert_eq!(disc, d0);
        assert_eq!((b.mel, b.adv_gen, b.feat), (0.0, 0.0, 0.0));
        assert!((b.total - cfg.lambda * (b.rec + b.kl)).abs() < 1e-9);
        let bad = AeLossConfig { lambda: 0.0, ..cfg };
        assert!(ae_train_step(&mut ae, &mut disc, &r, &batch, &mut opt, &bad).is_err());
    }
}
