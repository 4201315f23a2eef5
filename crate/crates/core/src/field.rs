//! Frame-wise conditioned networks: the noise predictor ε_θ and the vector field v_θ.
//!
//! Both share one architecture. Each frame's input is the concatenation
//! `[x | s | p | time-embedding]`, fed through a dense body that outputs a
//! vector of the data dimension.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningBundle, TimeEmbedder};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, NetGrads, NetSpec, Trace};
use crate::tensor::Tensor2;

/// A network evaluated on a whole sequence at one time point.
///
/// Samplers and losses only need this; tests plug in closed-form stubs.
pub trait FrameField {
    fn data_dim(&self) -> usize;

    /// Output for every frame of `x` (one frame per row) at time `t ∈ [0, 1]`.
    fn eval(&self, x: &Tensor2, t: f64, cond: &ConditioningBundle) -> Result<Tensor2>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDims {
    pub data: usize,
    pub speaker: usize,
    pub content: usize,
    pub sinusoid: usize,
    pub time_hidden: usize,
    pub time_out: usize,
    pub width: usize,
    pub hidden_layers: usize,
}

impl FieldDims {
    pub fn body_input(&self) -> usize {
        self.data + self.speaker + self.content + self.time_out
    }

    pub fn body_spec(&self) -> NetSpec {
        NetSpec::mlp(
            self.body_input(),
            self.width,
            self.hidden_layers,
            self.data,
            Activation::LeakyRelu,
        )
    }

    pub fn time_spec(&self) -> NetSpec {
        TimeEmbedder::spec(self.sinusoid, self.time_hidden, self.time_out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedNet {
    dims: FieldDims,
    pub body: DenseNet,
    pub time: TimeEmbedder,
}

/// A stacked training batch: every row carries its own conditioning and time.
#[derive(Clone, Debug)]
pub struct FieldInput {
    pub x: Tensor2,
    pub speaker: Tensor2,
    pub content: Tensor2,
    pub times: Vec<f64>,
}

pub struct FieldTrace {
    body: Trace,
    time: Trace,
}

impl FieldTrace {
    pub fn output(&self) -> &Tensor2 {
        self.body.output()
    }
}

#[derive(Clone, Debug)]
pub struct FieldGrads {
    pub body: NetGrads,
    pub time: NetGrads,
    /// Gradient w.r.t. the speaker embedding of each row.
    pub speaker: Tensor2,
    pub x: Tensor2,
}

impl FieldGrads {
    /// Body slots, then time-MLP slots, matching [`ConditionedNet::param_slices_mut`].
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.body.param_slices();
        v.extend(self.time.param_slices());
        v
    }
}

impl ConditionedNet {
    pub fn init<R: Rng + ?Sized>(dims: FieldDims, rng: &mut R) -> Result<Self> {
        let body = DenseNet::init(&dims.body_spec(), rng);
        let time = TimeEmbedder::init(dims.sinusoid, dims.time_hidden, dims.time_out, rng)?;
        Ok(ConditionedNet { dims, body, time })
    }

    pub fn from_parts(dims: FieldDims, body: DenseNet, time_mlp: DenseNet) -> Result<Self> {
        if body.spec() != dims.body_spec() || time_mlp.spec() != dims.time_spec() {
            return Err(Error::Checkpoint(
                "network layers do not match the declared field dimensions".into(),
            ));
        }
        Ok(ConditionedNet {
            dims,
            body,
            time: TimeEmbedder {
                sinusoid_dim: dims.sinusoid,
                mlp: time_mlp,
            },
        })
    }

    pub fn dims(&self) -> FieldDims {
        self.dims
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count() + self.time.mlp.param_count()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.body.param_slices_mut();
        v.extend(self.time.mlp.param_slices_mut());
        v
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.body.param_slices();
        v.extend(self.time.mlp.param_slices());
        v
    }

    /// Per-frame evaluation with an explicit, already computed time embedding.
    pub fn eval_conditioned(
        &self,
        x_frame: &[f64],
        speaker: &[f64],
        content_frame: &[f64],
        t_embed: &[f64],
    ) -> Result<Vec<f64>> {
        let width = x_frame.len() + speaker.len() + content_frame.len() + t_embed.len();
        if width != self.body.input_dim() {
            return Err(Error::shape(
                "eval_conditioned input",
                self.body.input_dim(),
                width,
            ));
        }
        let mut row = Vec::with_capacity(width);
        row.extend_from_slice(x_frame);
        row.extend_from_slice(speaker);
        row.extend_from_slice(content_frame);
        row.extend_from_slice(t_embed);
        Ok(self
            .body
            .forward(&Tensor2::from_vec(1, width, row)?)?
            .into_vec())
    }

    fn check_input(&self, input: &FieldInput) -> Result<()> {
        let n = input.x.rows();
        let d = &self.dims;
        input.x.ensure_shape("field input x", n, d.data)?;
        input.speaker.ensure_shape("field input speaker", n, d.speaker)?;
        input.content.ensure_shape("field input content", n, d.content)?;
        if input.times.len() != n {
            return Err(Error::shape("field input times", n, input.times.len()));
        }
        Ok(())
    }

    pub fn forward_rows(&self, input: &FieldInput) -> Result<FieldTrace> {
        self.check_input(input)?;
        let enc = self.time.encode_rows(&input.times)?;
        let time = self.time.mlp.forward_trace(&enc)?;
        let joined = Tensor2::hcat(&[&input.x, &input.speaker, &input.content, time.output()])?;
        let body = self.body.forward_trace(&joined)?;
        Ok(FieldTrace { body, time })
    }

    pub fn backward_rows(&self, trace: &FieldTrace, upstream: &Tensor2) -> Result<FieldGrads> {
        let body = self.body.backward_trace(&trace.body, upstream, &[])?;
        let d = &self.dims;
        let s0 = d.data;
        let c0 = s0 + d.speaker;
        let t0 = c0 + d.content;
        let x = body.input.col_slice(0, s0);
        let speaker = body.input.col_slice(s0, c0);
        let t_grad = body.input.col_slice(t0, t0 + d.time_out);
        let time = self.time.mlp.backward_trace(&trace.time, &t_grad, &[])?;
        Ok(FieldGrads {
            body,
            time,
            speaker,
            x,
        })
    }
}

impl FrameField for ConditionedNet {
    fn data_dim(&self) -> usize {
        self.dims.data
    }

    fn eval(&self, x: &Tensor2, t: f64, cond: &ConditioningBundle) -> Result<Tensor2> {
        let n = x.rows();
        let d = &self.dims;
        x.ensure_shape("field eval x", n, d.data)?;
        cond.content
            .ensure_shape("field eval content", n, d.content)?;
        if cond.speaker.len() != d.speaker {
            return Err(Error::shape(
                "field eval speaker",
                d.speaker,
                cond.speaker.len(),
            ));
        }
        let t_embed = self.time.embed(t)?;
        let joined = Tensor2::hcat(&[
            x,
            &Tensor2::broadcast_row(&cond.speaker, n),
            &cond.content,
            &Tensor2::broadcast_row(&t_embed, n),
        ])?;
        self.body.forward(&joined)
    }
}
