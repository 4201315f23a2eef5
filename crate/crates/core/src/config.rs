//! JSON run configuration. Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::corpus::CorpusParams;
use crate::error::{Error, Result};
use crate::field::FieldDims;
use crate::latentae::{AeDims, AeLossConfig};
use crate::rng::label_key;
use crate::schedule::ScheduleConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusParams,
    pub schedule: ScheduleConfig,
    pub autoencoder: AeTrainConfig,
    pub generator: GenTrainConfig,
    pub conversion: ConvertParams,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeTrainConfig {
    pub latent: usize,
    pub context: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub disc_width: usize,
    pub disc_hidden_layers: usize,
    pub epochs: usize,
    pub batch: usize,
    /// Train on the first `n` training utterances only.
    pub max_utterances: Option<usize>,
    pub adam: AdamConfig,
    pub loss: AeLossConfig,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            latent: 32,
            context: 2,
            width: 128,
            hidden_layers: 3,
            disc_width: 128,
            disc_hidden_layers: 3,
            epochs: 300,
            batch: 8,
            max_utterances: None,
            adam: AdamConfig::default(),
            loss: AeLossConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenTrainConfig {
    pub width: usize,
    pub hidden_layers: usize,
    pub speaker_dim: usize,
    pub sinusoid_dim: usize,
    pub time_hidden: usize,
    pub time_dim: usize,
    pub epochs: usize,
    pub batch: usize,
    pub max_utterances: Option<usize>,
    /// Path jitter of the flow-matching objective.
    pub sigma: f64,
    pub adam: AdamConfig,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        GenTrainConfig {
            width: 128,
            hidden_layers: 3,
            speaker_dim: 16,
            sinusoid_dim: 32,
            time_hidden: 64,
            time_dim: 16,
            epochs: 500,
            batch: 8,
            max_utterances: None,
            sigma: 0.01,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvertParams {
    /// Starting timestep of the DPM reverse process.
    pub lprime: usize,
    /// Noise fraction `r` mixed into the FM starting point.
    pub noise_frac: f64,
    /// Euler steps of the FM sampler.
    pub euler_steps: usize,
    pub noise_at_final_step: bool,
}

impl Default for ConvertParams {
    fn default() -> Self {
        ConvertParams {
            lprime: 18,
            noise_frac: 0.7,
            euler_steps: 10,
            noise_at_final_step: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threads: usize,
    /// Timed repetitions per bench row; one extra warm-up run is discarded.
    pub bench_repeats: usize,
    /// Optimiser steps of the fresh discriminator that judges reconstructions.
    pub judge_steps: usize,
    pub r_grid: Vec<f64>,
    pub l_grid: Vec<usize>,
    /// Euler steps used while sweeping `r`.
    pub r_sweep_steps: usize,
    /// Noise fraction used while sweeping `L`.
    pub l_sweep_noise_frac: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threads: 1,
            bench_repeats: 5,
            judge_steps: 300,
            r_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            l_grid: vec![1, 2, 3, 5, 10, 20],
            r_sweep_steps: 10,
            l_sweep_noise_frac: 0.7,
        }
    }
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without value checks, so command-line overrides can still apply.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Stable 64-bit digest of the canonical JSON form.
    pub fn hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serialises");
        label_key(&text)
    }

    pub fn ae_dims(&self) -> AeDims {
        let a = &self.autoencoder;
        AeDims {
            feature: self.corpus.dim,
            latent: a.latent,
            context: a.context,
            width: a.width,
            hidden_layers: a.hidden_layers,
        }
    }

    pub fn field_dims(&self, data: usize) -> FieldDims {
        let g = &self.generator;
        FieldDims {
            data,
            speaker: g.speaker_dim,
            content: self.corpus.alphabet,
            sinusoid: g.sinusoid_dim,
            time_hidden: g.time_hidden,
            time_out: g.time_dim,
            width: g.width,
            hidden_layers: g.hidden_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let a = &self.autoencoder;
        let g = &self.generator;
        let c = &self.conversion;
        if a.latent == 0 || a.latent >= self.corpus.dim {
            return bad(format!(
                "latent dimension {} must be in 1..{}",
                a.latent, self.corpus.dim
            ));
        }
        if a.batch == 0 || g.batch == 0 {
            return bad("batch size must be positive".into());
        }
        if a.width == 0 || g.width == 0 || a.disc_width == 0 {
            return bad("layer widths must be positive".into());
        }
        if g.sinusoid_dim == 0 || g.sinusoid_dim % 2 != 0 {
            return bad(format!(
                "sinusoid dimension must be even and positive, got {}",
                g.sinusoid_dim
            ));
        }
        if !(g.sigma >= 0.0) {
            return bad(format!("sigma must be non-negative, got {}", g.sigma));
        }
        if !(a.loss.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", a.loss.lambda));
        }
        for lr in [a.adam.lr, g.adam.lr] {
            if !(lr > 0.0) {
                return bad(format!("learning rate must be positive, got {lr}"));
            }
        }
        if self.schedule.steps == 0 {
            return bad("schedule needs at least one step".into());
        }
        if c.lprime == 0 || c.lprime > self.schedule.steps {
            return bad(format!(
                "starting timestep L' = {} must be in 1..={}",
                c.lprime, self.schedule.steps
            ));
        }
        if !(0.0..=1.0).contains(&c.noise_frac) {
            return bad(format!("noise fraction {} outside [0, 1]", c.noise_frac));
        }
        if c.euler_steps == 0 {
            return bad("Euler step count must be positive".into());
        }
        let e = &self.eval;
        if e.threads == 0 {
            return bad("thread count must be positive".into());
        }
        if e.r_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("r grid values must lie in [0, 1]".into());
        }
        if e.l_grid.contains(&0) || e.r_sweep_steps == 0 {
            return bad("step counts in sweeps must be positive".into());
        }
        if !(0.0..=1.0).contains(&e.l_sweep_noise_frac) {
            return bad("L sweep noise fraction outside [0, 1]".into());
        }
        crate::schedule::NoiseSchedule::new(&self.schedule)?;
        Ok(())
    }
}
