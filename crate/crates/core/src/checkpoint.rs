//! Self-describing model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LVGC" | version u16 | role u8 | descriptor length u32 | descriptor (JSON)
//! | config hash u64 | seed u64 | epoch u32
//! | parameter count u64 | parameters f32...
//! | optimizer flag u8 [ | step u64 | slot count u32 | per slot: len u64, m f64..., v f64... ]
//! | CRC32 of everything above u32
//! ```
//!
//! The descriptor is enough to rebuild the network without the run config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::conditioning::SpeakerTable;
use crate::error::{Error, Result};
use crate::field::{ConditionedNet, FieldDims};
use crate::latentae::{AeDims, Autoencoder, Discriminator};
use crate::nn::{DenseNet, NetSpec};
use crate::tensor::Tensor2;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LVGC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Ae,
    Disc,
    Score,
    Vfield,
    SpeakerTable,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Ae => 0,
            Role::Disc => 1,
            Role::Score => 2,
            Role::Vfield => 3,
            Role::SpeakerTable => 4,
        }
    }

    fn from_code(c: u8) -> Result<Role> {
        Ok(match c {
            0 => Role::Ae,
            1 => Role::Disc,
            2 => Role::Score,
            3 => Role::Vfield,
            4 => Role::SpeakerTable,
            _ => return Err(Error::Checkpoint(format!("unknown model role {c}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Architecture {
    Autoencoder(AeDims),
    Discriminator(NetSpec),
    Field(FieldDims),
    SpeakerTable { speakers: usize, dim: usize },
}

impl Architecture {
    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Autoencoder(d) => {
                d.encoder_spec().param_count() + d.decoder_spec().param_count()
            }
            Architecture::Discriminator(s) => s.param_count(),
            Architecture::Field(d) => d.body_spec().param_count() + d.time_spec().param_count(),
            Architecture::SpeakerTable { speakers, dim } => speakers * dim,
        }
    }
}

/// Saved Adam moments, so a resumed run continues exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn capture(state: &AdamState) -> Self {
        OptimizerState {
            step: state.step_count(),
            first: state.first_moments().to_vec(),
            second: state.second_moments().to_vec(),
        }
    }

    pub fn restore(&self, config: AdamConfig, expected_slots: &[usize]) -> Result<AdamState> {
        let sizes: Vec<usize> = self.first.iter().map(Vec::len).collect();
        if sizes != expected_slots {
            return Err(Error::Checkpoint(
                "optimizer state does not match the model's parameter slots".into(),
            ));
        }
        AdamState::restore(config, self.step, self.first.clone(), self.second.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub role: Role,
    pub architecture: Architecture,
    pub params: Vec<f32>,
    pub config_hash: u64,
    pub seed: u64,
    pub epoch: u32,
    pub optimizer: Option<OptimizerState>,
}

/// Provenance stamped into every checkpoint of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stamp {
    pub config_hash: u64,
    pub seed: u64,
    pub epoch: u32,
}

fn to_f32(slices: &[&[f64]]) -> Vec<f32> {
    slices.iter().flat_map(|s| s.iter().map(|&v| v as f32)).collect()
}

fn to_f64(params: &[f32]) -> Vec<f64> {
    params.iter().map(|&v| v as f64).collect()
}

/// Rounds every parameter to the nearest `f32`, the precision checkpoints keep.
pub fn quantize(slots: &mut [&mut [f64]]) {
    for s in slots.iter_mut() {
        for v in s.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

impl ModelCheckpoint {
    fn new(role: Role, architecture: Architecture, params: Vec<f32>, stamp: Stamp) -> Self {
        ModelCheckpoint {
            role,
            architecture,
            params,
            config_hash: stamp.config_hash,
            seed: stamp.seed,
            epoch: stamp.epoch,
            optimizer: None,
        }
    }

    pub fn with_optimizer(mut self, state: &AdamState) -> Self {
        self.optimizer = Some(OptimizerState::capture(state));
        self
    }

    pub fn from_autoencoder(ae: &Autoencoder, stamp: Stamp) -> Self {
        Self::new(
            Role::Ae,
            Architecture::Autoencoder(ae.dims()),
            to_f32(&ae.param_slices()),
            stamp,
        )
    }

    pub fn from_discriminator(disc: &Discriminator, stamp: Stamp) -> Self {
        Self::new(
            Role::Disc,
            Architecture::Discriminator(disc.net.spec()),
            to_f32(&disc.net.param_slices()),
            stamp,
        )
    }

    /// `role` must be `Score` or `Vfield`.
    pub fn from_field(net: &ConditionedNet, role: Role, stamp: Stamp) -> Result<Self> {
        if !matches!(role, Role::Score | Role::Vfield) {
            return Err(Error::Checkpoint(format!("{role:?} is not a field role")));
        }
        Ok(Self::new(
            role,
            Architecture::Field(net.dims()),
            to_f32(&net.param_slices()),
            stamp,
        ))
    }

    pub fn from_speaker_table(table: &SpeakerTable, stamp: Stamp) -> Self {
        Self::new(
            Role::SpeakerTable,
            Architecture::SpeakerTable {
                speakers: table.speakers(),
                dim: table.dim(),
            },
            to_f32(&[table.as_tensor().data()]),
            stamp,
        )
    }

    fn expect_role(&self, roles: &[Role]) -> Result<()> {
        if roles.contains(&self.role) {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "expected a {:?} checkpoint, found {:?}",
                roles, self.role
            )))
        }
    }

    /// Rejects a checkpoint whose descriptor differs from what the caller expects.
    pub fn expect_architecture(&self, expected: &Architecture) -> Result<()> {
        if &self.architecture != expected {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint has {:?}, configuration expects {:?}",
                self.architecture, expected
            )));
        }
        Ok(())
    }

    pub fn to_autoencoder(&self) -> Result<Autoencoder> {
        self.expect_role(&[Role::Ae])?;
        let Architecture::Autoencoder(dims) = self.architecture else {
            return Err(Error::Checkpoint("autoencoder role with a foreign descriptor".into()));
        };
        let p = to_f64(&self.params);
        let (es, ds) = (dims.encoder_spec(), dims.decoder_spec());
        let split = es.param_count();
        if p.len() != split + ds.param_count() {
            return Err(Error::Checkpoint("parameter blob has the wrong length".into()));
        }
        Autoencoder::from_parts(
            dims,
            DenseNet::from_flat(&es, &p[..split])?,
            DenseNet::from_flat(&ds, &p[split..])?,
        )
    }

    pub fn to_discriminator(&self) -> Result<Discriminator> {
        self.expect_role(&[Role::Disc])?;
        let Architecture::Discriminator(spec) = &self.architecture else {
            return Err(Error::Checkpoint("discriminator role with a foreign descriptor".into()));
        };
        Ok(Discriminator {
            net: DenseNet::from_flat(spec, &to_f64(&self.params))?,
        })
    }

    pub fn to_field(&self) -> Result<ConditionedNet> {
        self.expect_role(&[Role::Score, Role::Vfield])?;
        let Architecture::Field(dims) = self.architecture else {
            return Err(Error::Checkpoint("field role with a foreign descriptor".into()));
        };
        let p = to_f64(&self.params);
        let (bs, ts) = (dims.body_spec(), dims.time_spec());
        let split = bs.param_count();
        if p.len() != split + ts.param_count() {
            return Err(Error::Checkpoint("parameter blob has the wrong length".into()));
        }
        ConditionedNet::from_parts(
            dims,
            DenseNet::from_flat(&bs, &p[..split])?,
            DenseNet::from_flat(&ts, &p[split..])?,
        )
    }

    pub fn to_speaker_table(&self) -> Result<SpeakerTable> {
        self.expect_role(&[Role::SpeakerTable])?;
        let Architecture::SpeakerTable { speakers, dim } = self.architecture else {
            return Err(Error::Checkpoint("speaker-table role with a foreign descriptor".into()));
        };
        Ok(SpeakerTable::from_tensor(Tensor2::from_vec(
            speakers,
            dim,
            to_f64(&self.params),
        )?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.params.len() != self.architecture.param_count() {
            return Err(Error::Checkpoint(format!(
                "descriptor needs {} parameters, blob has {}",
                self.architecture.param_count(),
                self.params.len()
            )));
        }
        let descriptor = serde_json::to_vec(&self.architecture)?;
        let mut out = Vec::with_capacity(64 + descriptor.len() + 4 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.role.code());
        out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(&descriptor);
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                out.extend_from_slice(&(opt.first.len() as u32).to_le_bytes());
                for (m, v) in opt.first.iter().zip(&opt.second) {
                    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
                    for x in m.iter().chain(v) {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        if bytes.len() < 10 {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint(
                "CRC mismatch: checkpoint is truncated or corrupt".into(),
            ));
        }
        let mut r = Reader { buf: body, pos: 6 };
        let role = Role::from_code(r.u8()?)?;
        let dlen = r.u32()? as usize;
        let architecture: Architecture = serde_json::from_slice(r.take(dlen)?)?;
        let config_hash = r.u64()?;
        let seed = r.u64()?;
        let epoch = r.u32()?;
        let n = r.u64()? as usize;
        if n != architecture.param_count() {
            return Err(Error::Checkpoint(format!(
                "descriptor needs {} parameters, blob has {n}",
                architecture.param_count()
            )));
        }
        let params = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let slots = r.u32()? as usize;
                let mut first = Vec::with_capacity(slots);
                let mut second = Vec::with_capacity(slots);
                for _ in 0..slots {
                    let len = r.u64()? as usize;
                    let mut read = |len: usize| -> Result<Vec<f64>> {
                        Ok(r.take(8 * len)?
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect())
                    };
                    first.push(read(len)?);
                    second.push(read(len)?);
                }
                Some(OptimizerState {
                    step,
                    first,
                    second,
                })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(ModelCheckpoint {
            role,
            architecture,
            params,
            config_hash,
            seed,
            epoch,
            optimizer,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(c: &ModelCheckpoint, path: &Path) -> Result<()> {
    let bytes = c.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelCheckpoint::from_bytes(&bytes)
}
