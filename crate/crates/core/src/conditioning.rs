//! Speaker, content and time conditioning for the score / vector-field networks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, NetSpec};
use crate::tensor::Tensor2;

/// Positions fed to the sinusoidal map are `t * TIME_SCALE`.
pub const TIME_SCALE: f64 = 1000.0;

/// Share of the content embedding spread over neighbouring frames.
pub const CONTENT_SMOOTHING: f64 = 0.25;
const CONTENT_HALF_WINDOW: usize = 2;

/// Everything a conditioned network sees besides the data and the time.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    /// Speaker embedding, shared by every frame.
    pub speaker: Vec<f64>,
    /// Content embedding, one row per frame.
    pub content: Tensor2,
}

impl ConditioningBundle {
    pub fn frames(&self) -> usize {
        self.content.rows()
    }

    /// All-zero conditioning for `frames` frames.
    pub fn zeros(speaker_dim: usize, content_dim: usize, frames: usize) -> Self {
        ConditioningBundle {
            speaker: vec![0.0; speaker_dim],
            content: Tensor2::zeros(frames, content_dim),
        }
    }
}

/// Learned per-speaker embeddings, trained jointly with the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerTable {
    rows: Tensor2,
}

impl SpeakerTable {
    pub fn init<R: Rng + ?Sized>(speakers: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..speakers * dim)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        SpeakerTable {
            rows: Tensor2::from_vec(speakers, dim, data).expect("sized above"),
        }
    }

    pub fn from_tensor(rows: Tensor2) -> Self {
        SpeakerTable { rows }
    }

    pub fn speakers(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn as_tensor(&self) -> &Tensor2 {
        &self.rows
    }

    pub fn as_tensor_mut(&mut self) -> &mut Tensor2 {
        &mut self.rows
    }

    pub fn embed(&self, speaker: usize) -> Result<Vec<f64>> {
        if speaker >= self.speakers() {
            return Err(Error::Lookup {
                what: "speaker",
                id: speaker,
            });
        }
        Ok(self.rows.row(speaker).to_vec())
    }
}

/// Fixed content embedding: one-hot per frame with part of the mass spread
/// uniformly over a ±2-frame window.
pub fn content_embed(codes: &[u8], alphabet: usize) -> Result<Tensor2> {
    if let Some(&bad) = codes.iter().find(|&&c| c as usize >= alphabet) {
        return Err(Error::Lookup {
            what: "content code",
            id: bad as usize,
        });
    }
    let n = codes.len();
    let mut out = Tensor2::zeros(n, alphabet);
    for t in 0..n {
        let lo = t.saturating_sub(CONTENT_HALF_WINDOW);
        let hi = (t + CONTENT_HALF_WINDOW + 1).min(n);
        let share = CONTENT_SMOOTHING / (hi - lo) as f64;
        let row = out.row_mut(t);
        row[codes[t] as usize] += 1.0 - CONTENT_SMOOTHING;
        for &c in &codes[lo..hi] {
            row[c as usize] += share;
        }
    }
    Ok(out)
}

/// Raw sinusoidal encoding: first half sines, second half cosines.
pub fn sinusoidal(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("time {t} outside [0, 1]")));
    }
    let half = dim / 2;
    let pos = t * TIME_SCALE;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    Ok(out)
}

/// Diffusion timestep `l` of `steps` on the shared continuous time axis.
pub fn timestep_to_time(l: usize, steps: usize) -> f64 {
    l as f64 / steps as f64
}

/// Sinusoidal encoding followed by a three-layer MLP with Mish between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEmbedder {
    pub sinusoid_dim: usize,
    pub mlp: DenseNet,
}

impl TimeEmbedder {
    pub fn spec(sinusoid_dim: usize, hidden: usize, out: usize) -> NetSpec {
        NetSpec {
            input_dim: sinusoid_dim,
            layers: vec![
                (hidden, Activation::Mish),
                (hidden, Activation::Mish),
                (out, Activation::Identity),
            ],
        }
    }

    pub fn init<R: Rng + ?Sized>(
        sinusoid_dim: usize,
        hidden: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        sinusoidal(0.0, sinusoid_dim)?;
        Ok(TimeEmbedder {
            sinusoid_dim,
            mlp: DenseNet::init(&Self::spec(sinusoid_dim, hidden, out), rng),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Sinusoid rows for a list of times.
    pub fn encode_rows(&self, times: &[f64]) -> Result<Tensor2> {
        let rows = times
            .iter()
            .map(|&t| sinusoidal(t, self.sinusoid_dim))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Tensor2::zeros(0, self.sinusoid_dim));
        }
        Tensor2::from_rows(&rows)
    }

    pub fn embed(&self, t: f64) -> Result<Vec<f64>> {
        let enc = Tensor2::from_rows(&[sinusoidal(t, self.sinusoid_dim)?])?;
        Ok(self.mlp.forward(&enc)?.into_vec())
    }
}
