//! Linear-β diffusion noise schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    #[serde(rename = "L")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 20,
            beta_min: 1e-4,
            beta_max: 0.06,
        }
    }
}

/// Per-timestep tables, indexed by `l ∈ 1..=L`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    nu: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: &ScheduleConfig) -> Result<Self> {
        Self::linear(config.steps, config.beta_min, config.beta_max)
    }

    /// β interpolated linearly from `beta_min` at `l = 1` to `beta_max` at `l = L`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let nu = beta.iter().map(|b| b.sqrt()).collect();
        NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
            nu,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn idx(&self, l: usize) -> Result<usize> {
        if l == 0 || l > self.steps() {
            return Err(Error::Index {
                what: "timestep",
                index: l,
                max: self.steps(),
            });
        }
        Ok(l - 1)
    }

    pub fn check_step(&self, l: usize) -> Result<()> {
        self.idx(l).map(|_| ())
    }

    pub fn beta(&self, l: usize) -> Result<f64> {
        Ok(self.beta[self.idx(l)?])
    }

    pub fn alpha(&self, l: usize) -> Result<f64> {
        Ok(self.alpha[self.idx(l)?])
    }

    pub fn alpha_bar(&self, l: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.idx(l)?])
    }

    pub fn nu(&self, l: usize) -> Result<f64> {
        Ok(self.nu[self.idx(l)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn nus(&self) -> &[f64] {
        &self.nu
    }
}
