//! Training orchestration, the four conversion pipelines and model files.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::adam::AdamState;
use crate::checkpoint::{load_checkpoint, quantize, save_checkpoint, ModelCheckpoint, Role, Stamp};
use crate::conditioning::{content_embed, ConditioningBundle, SpeakerTable};
use crate::config::{ConvertParams, RunConfig};
use crate::corpus::{Corpus, Utterance};
use crate::diffusion::{dpm_loss_and_grads, reverse_sample, DpmBatchSample, ReverseOptions};
use crate::error::{Error, Result};
use crate::field::{ConditionedNet, FieldGrads, FrameField};
use crate::flowmatch::{cfm_loss_and_grads, euler_integrate, noise_mix, CfmBatchSample};
use crate::latentae::{
    ae_train_step, AeLossBreakdown, AeOptim, Autoencoder, Discriminator, Renderer,
};
use crate::rng::{label_key, normal_tensor, stream};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor2;

/// Seed of the fixed render used by the adversarial objective and its judges.
pub const RENDER_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GenModel {
    Dpm,
    Fm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    Feature,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PipelineKind {
    pub model: GenModel,
    pub space: Space,
}

impl PipelineKind {
    pub const VG_DPM: PipelineKind = PipelineKind {
        model: GenModel::Dpm,
        space: Space::Feature,
    };
    pub const LVG_DPM: PipelineKind = PipelineKind {
        model: GenModel::Dpm,
        space: Space::Latent,
    };
    pub const VG_FM: PipelineKind = PipelineKind {
        model: GenModel::Fm,
        space: Space::Feature,
    };
    pub const LVG_FM: PipelineKind = PipelineKind {
        model: GenModel::Fm,
        space: Space::Latent,
    };
    pub const ALL: [PipelineKind; 4] = [
        PipelineKind::VG_DPM,
        PipelineKind::LVG_DPM,
        PipelineKind::VG_FM,
        PipelineKind::LVG_FM,
    ];

    pub fn name(self) -> &'static str {
        match (self.model, self.space) {
            (GenModel::Dpm, Space::Feature) => "vg-dpm",
            (GenModel::Dpm, Space::Latent) => "lvg-dpm",
            (GenModel::Fm, Space::Feature) => "vg-fm",
            (GenModel::Fm, Space::Latent) => "lvg-fm",
        }
    }

    pub fn is_latent(self) -> bool {
        self.space == Space::Latent
    }

    pub fn field_role(self) -> Role {
        match self.model {
            GenModel::Dpm => Role::Score,
            GenModel::Fm => Role::Vfield,
        }
    }

    fn loss_component(self) -> &'static str {
        match self.model {
            GenModel::Dpm => "dpm_loss",
            GenModel::Fm => "cfm_loss",
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown pipeline kind {s:?} (expected vg-dpm, lvg-dpm, vg-fm or lvg-fm)"
                ))
            })
    }
}

/// One row of a per-epoch loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub component: String,
    pub value: f64,
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("epoch,component,value\n");
    for r in rows {
        text.push_str(&format!("{},{},{}\n", r.epoch, r.component, r.value));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn training_set(corpus: &Corpus, limit: Option<usize>) -> Result<&[Utterance]> {
    let n = limit.unwrap_or(corpus.train.len()).min(corpus.train.len());
    if n == 0 {
        return Err(Error::Config("no training utterances".into()));
    }
    Ok(&corpus.train[..n])
}

fn epoch_order(seed: u64, label: &str, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[label_key(label), epoch as u64, 0]));
    order
}

// ---------------------------------------------------------------------------
// autoencoder

pub struct AeTrainer {
    cfg: RunConfig,
    pub ae: Autoencoder,
    pub disc: Discriminator,
    pub renderer: Renderer,
    optim: AeOptim,
    /// Completed epochs.
    pub epoch: usize,
}

impl AeTrainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, &[label_key("ae-init")]);
        let mut ae = Autoencoder::init(cfg.ae_dims(), &mut rng)?;
        let renderer = Renderer::new(cfg.corpus.dim, RENDER_SEED);
        let a = &cfg.autoencoder;
        let mut disc = Discriminator::init(
            renderer.window_len(),
            a.disc_width,
            a.disc_hidden_layers,
            &mut rng,
        );
        quantize(&mut ae.param_slices_mut());
        quantize(&mut disc.net.param_slices_mut());
        let optim = AeOptim::new(a.adam, &ae, &disc);
        Ok(AeTrainer {
            cfg: cfg.clone(),
            ae,
            disc,
            renderer,
            optim,
            epoch: 0,
        })
    }

    /// Continues from saved autoencoder and discriminator checkpoints.
    pub fn resume(cfg: &RunConfig, ae: &ModelCheckpoint, disc: &ModelCheckpoint) -> Result<Self> {
        let mut t = AeTrainer::new(cfg)?;
        ae.expect_architecture(&ModelCheckpoint::from_autoencoder(&t.ae, t.stamp()).architecture)?;
        disc.expect_architecture(
            &ModelCheckpoint::from_discriminator(&t.disc, t.stamp()).architecture,
        )?;
        if ae.epoch != disc.epoch {
            return Err(Error::Checkpoint(format!(
                "autoencoder is at epoch {}, discriminator at epoch {}",
                ae.epoch, disc.epoch
            )));
        }
        t.ae = ae.to_autoencoder()?;
        t.disc = disc.to_discriminator()?;
        let adam = cfg.autoencoder.adam;
        if let Some(o) = &ae.optimizer {
            t.optim.ae = o.restore(adam, &t.optim.ae.slot_sizes())?;
        }
        if let Some(o) = &disc.optimizer {
            t.optim.disc = o.restore(adam, &t.optim.disc.slot_sizes())?;
        }
        t.epoch = ae.epoch as usize;
        Ok(t)
    }

    fn stamp(&self) -> Stamp {
        Stamp {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            epoch: self.epoch as u32,
        }
    }

    /// One pass over the training set; returns the epoch's mean loss breakdown.
    pub fn run_epoch(&mut self, corpus: &Corpus) -> Result<Vec<LossRow>> {
        let a = &self.cfg.autoencoder;
        let utts = training_set(corpus, a.max_utterances)?;
        let epoch = self.epoch + 1;
        let order = epoch_order(self.cfg.seed, "ae-epoch", epoch, utts.len());
        let mut sums = AeLossBreakdown::default().components().map(|(n, _)| (n, 0.0));
        let mut batches = 0.0;
        for chunk in order.chunks(a.batch) {
            let batch: Vec<Tensor2> = chunk.iter().map(|&i| utts[i].features.clone()).collect();
            let b = ae_train_step(
                &mut self.ae,
                &mut self.disc,
                &self.renderer,
                &batch,
                &mut self.optim,
                &a.loss,
            )
            .map_err(|e| e.at_epoch(epoch))?;
            for (slot, (_, v)) in sums.iter_mut().zip(b.components()) {
                slot.1 += v;
            }
            batches += 1.0;
        }
        quantize(&mut self.ae.param_slices_mut());
        quantize(&mut self.disc.net.param_slices_mut());
        self.epoch = epoch;
        let rows: Vec<LossRow> = sums
            .iter()
            .map(|&(name, v)| LossRow {
                epoch,
                component: name.to_string(),
                value: v / batches,
            })
            .collect();
        log::info!(
            "autoencoder epoch {epoch}: rec {:.4} total {:.4}",
            rows[0].value,
            rows[7].value
        );
        Ok(rows)
    }

    pub fn train_until(&mut self, corpus: &Corpus, epochs: usize) -> Result<Vec<LossRow>> {
        let mut log = Vec::new();
        while self.epoch < epochs {
            log.extend(self.run_epoch(corpus)?);
        }
        Ok(log)
    }

    /// `(ae, disc)` checkpoints including optimiser state.
    pub fn checkpoints(&self) -> (ModelCheckpoint, ModelCheckpoint) {
        (
            ModelCheckpoint::from_autoencoder(&self.ae, self.stamp()).with_optimizer(&self.optim.ae),
            ModelCheckpoint::from_discriminator(&self.disc, self.stamp())
                .with_optimizer(&self.optim.disc),
        )
    }
}

pub struct TrainedAe {
    pub ae: Autoencoder,
    pub disc: Discriminator,
    pub ae_checkpoint: ModelCheckpoint,
    pub disc_checkpoint: ModelCheckpoint,
    pub log: Vec<LossRow>,
}

/// Full autoencoder training for the configured number of epochs.
pub fn train_autoencoder(cfg: &RunConfig, corpus: &Corpus) -> Result<TrainedAe> {
    check_corpus(cfg, corpus)?;
    let mut t = AeTrainer::new(cfg)?;
    let log = t.train_until(corpus, cfg.autoencoder.epochs)?;
    let (ae_checkpoint, disc_checkpoint) = t.checkpoints();
    Ok(TrainedAe {
        ae: t.ae,
        disc: t.disc,
        ae_checkpoint,
        disc_checkpoint,
        log,
    })
}

fn check_corpus(cfg: &RunConfig, corpus: &Corpus) -> Result<()> {
    let spec = &corpus.spec;
    if spec.dim() != cfg.corpus.dim || spec.alphabet() != cfg.corpus.alphabet {
        return Err(Error::Config(format!(
            "corpus has D = {}, alphabet {}; configuration expects D = {}, alphabet {}",
            spec.dim(),
            spec.alphabet(),
            cfg.corpus.dim,
            cfg.corpus.alphabet
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// generators

/// Training example for a generator: data (features or latents), speaker, content.
struct GenExample {
    x: Tensor2,
    speaker: usize,
    content: Tensor2,
}

fn prepare_examples(
    kind: PipelineKind,
    utts: &[Utterance],
    alphabet: usize,
    ae: Option<&Autoencoder>,
) -> Result<Vec<GenExample>> {
    let ae = match (kind.is_latent(), ae) {
        (true, None) => {
            return Err(Error::Config(format!(
                "{kind} needs a trained autoencoder checkpoint"
            )))
        }
        (true, some) => some,
        (false, _) => None,
    };
    utts.iter()
        .map(|u| {
            let x = match ae {
                Some(ae) => ae.encode(&u.features)?,
                None => u.features.clone(),
            };
            Ok(GenExample {
                x,
                speaker: u.speaker,
                content: content_embed(&u.codes, alphabet)?,
            })
        })
        .collect()
}

pub struct GenTrainer {
    cfg: RunConfig,
    pub kind: PipelineKind,
    pub net: ConditionedNet,
    pub table: SpeakerTable,
    schedule: NoiseSchedule,
    adam: AdamState,
    pub epoch: usize,
}

impl GenTrainer {
    pub fn new(cfg: &RunConfig, kind: PipelineKind) -> Result<Self> {
        cfg.validate()?;
        let data = if kind.is_latent() {
            cfg.autoencoder.latent
        } else {
            cfg.corpus.dim
        };
        let mut rng = stream(cfg.seed, &[label_key("gen-init"), label_key(kind.name())]);
        let mut net = ConditionedNet::init(cfg.field_dims(data), &mut rng)?;
        let mut table = SpeakerTable::init(cfg.corpus.speakers, cfg.generator.speaker_dim, &mut rng);
        quantize(&mut net.param_slices_mut());
        quantize(&mut [table.as_tensor_mut().data_mut()]);
        let mut sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        sizes.push(table.as_tensor().len());
        Ok(GenTrainer {
            cfg: cfg.clone(),
            kind,
            net,
            table,
            schedule: NoiseSchedule::new(&cfg.schedule)?,
            adam: AdamState::new(cfg.generator.adam, &sizes),
            epoch: 0,
        })
    }

    pub fn resume(
        cfg: &RunConfig,
        kind: PipelineKind,
        field: &ModelCheckpoint,
        table: &ModelCheckpoint,
    ) -> Result<Self> {
        let mut t = GenTrainer::new(cfg, kind)?;
        if field.role != kind.field_role() {
            return Err(Error::Checkpoint(format!(
                "{kind} needs a {:?} checkpoint, found {:?}",
                kind.field_role(),
                field.role
            )));
        }
        let (f0, t0) = t.checkpoints();
        field.expect_architecture(&f0.architecture)?;
        table.expect_architecture(&t0.architecture)?;
        t.net = field.to_field()?;
        t.table = table.to_speaker_table()?;
        if let Some(o) = &field.optimizer {
            t.adam = o.restore(cfg.generator.adam, &t.adam.slot_sizes())?;
        }
        t.epoch = field.epoch as usize;
        Ok(t)
    }

    fn stamp(&self) -> Stamp {
        Stamp {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            epoch: self.epoch as u32,
        }
    }

    pub fn checkpoints(&self) -> (ModelCheckpoint, ModelCheckpoint) {
        (
            ModelCheckpoint::from_field(&self.net, self.kind.field_role(), self.stamp())
                .expect("field role")
                .with_optimizer(&self.adam),
            ModelCheckpoint::from_speaker_table(&self.table, self.stamp()),
        )
    }

    fn batch_grads<R: Rng>(
        &self,
        batch: &[&GenExample],
        rng: &mut R,
    ) -> Result<(f64, FieldGrads)> {
        let conds: Vec<ConditioningBundle> = batch
            .iter()
            .map(|ex| {
                Ok(ConditioningBundle {
                    speaker: self.table.embed(ex.speaker)?,
                    content: ex.content.clone(),
                })
            })
            .collect::<Result<_>>()?;
        match self.kind.model {
            GenModel::Dpm => {
                let samples: Vec<DpmBatchSample> = batch
                    .iter()
                    .zip(conds)
                    .map(|(ex, cond)| {
                        let l = rng.gen_range(1..=self.schedule.steps());
                        DpmBatchSample {
                            x0: ex.x.clone(),
                            l,
                            eps: normal_tensor(rng, ex.x.rows(), ex.x.cols()),
                            cond,
                        }
                    })
                    .collect();
                dpm_loss_and_grads(&self.net, &samples, &self.schedule)
            }
            GenModel::Fm => {
                let samples: Vec<CfmBatchSample> = batch
                    .iter()
                    .zip(conds)
                    .map(|(ex, cond)| {
                        let t: f64 = rng.gen();
                        let (n, d) = ex.x.shape();
                        CfmBatchSample {
                            x1: ex.x.clone(),
                            x0: normal_tensor(rng, n, d),
                            t,
                            eps: normal_tensor(rng, n, d),
                            sigma: self.cfg.generator.sigma,
                            cond,
                        }
                    })
                    .collect();
                cfm_loss_and_grads(&self.net, &samples)
            }
        }
    }

    fn table_grad(&self, batch: &[&GenExample], per_row: &Tensor2) -> Tensor2 {
        let mut g = Tensor2::zeros(self.table.speakers(), self.table.dim());
        let mut row = 0;
        for ex in batch {
            for _ in 0..ex.x.rows() {
                for (acc, v) in g.row_mut(ex.speaker).iter_mut().zip(per_row.row(row)) {
                    *acc += v;
                }
                row += 1;
            }
        }
        g
    }

    fn run_epoch_on(&mut self, examples: &[GenExample]) -> Result<Vec<LossRow>> {
        let epoch = self.epoch + 1;
        let order = epoch_order(
            self.cfg.seed,
            &format!("gen-epoch-{}", self.kind.name()),
            epoch,
            examples.len(),
        );
        let mut rng = stream(
            self.cfg.seed,
            &[label_key("gen-noise"), label_key(self.kind.name()), epoch as u64],
        );
        let mut losses = Vec::new();
        for chunk in order.chunks(self.cfg.generator.batch) {
            let batch: Vec<&GenExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = self
                .batch_grads(&batch, &mut rng)
                .map_err(|e| e.at_epoch(epoch))?;
            let tg = self.table_grad(&batch, &grads.speaker);
            let mut gslots = grads.param_slices();
            gslots.push(tg.data());
            let mut params = self.net.param_slices_mut();
            params.push(self.table.as_tensor_mut().data_mut());
            self.adam
                .step(&mut params, &gslots)
                .map_err(|e| e.at_epoch(epoch))?;
            losses.push(loss);
        }
        quantize(&mut self.net.param_slices_mut());
        quantize(&mut [self.table.as_tensor_mut().data_mut()]);
        self.epoch = epoch;
        let value = losses.iter().sum::<f64>() / losses.len() as f64;
        log::info!("{} epoch {epoch}: loss {value:.4}", self.kind);
        Ok(vec![LossRow {
            epoch,
            component: self.kind.loss_component().to_string(),
            value,
        }])
    }

    pub fn train_until(
        &mut self,
        corpus: &Corpus,
        ae: Option<&Autoencoder>,
        epochs: usize,
    ) -> Result<Vec<LossRow>> {
        check_corpus(&self.cfg, corpus)?;
        let utts = training_set(corpus, self.cfg.generator.max_utterances)?;
        let examples = prepare_examples(self.kind, utts, corpus.spec.alphabet(), ae)?;
        let mut log = Vec::new();
        while self.epoch < epochs {
            log.extend(self.run_epoch_on(&examples)?);
        }
        Ok(log)
    }
}

pub struct TrainedGenerator {
    pub kind: PipelineKind,
    pub net: ConditionedNet,
    pub table: SpeakerTable,
    pub field_checkpoint: ModelCheckpoint,
    pub table_checkpoint: ModelCheckpoint,
    pub log: Vec<LossRow>,
}

/// Trains ε_θ (DPM kinds) or v_θ (FM kinds) jointly with the speaker table.
pub fn train_generator(
    cfg: &RunConfig,
    corpus: &Corpus,
    kind: PipelineKind,
    ae: Option<&Autoencoder>,
) -> Result<TrainedGenerator> {
    if kind.is_latent() && ae.is_none() {
        return Err(Error::Config(format!(
            "{kind} needs a trained autoencoder checkpoint"
        )));
    }
    let mut t = GenTrainer::new(cfg, kind)?;
    let log = t.train_until(corpus, ae, cfg.generator.epochs)?;
    let (field_checkpoint, table_checkpoint) = t.checkpoints();
    Ok(TrainedGenerator {
        kind,
        net: t.net,
        table: t.table,
        field_checkpoint,
        table_checkpoint,
        log,
    })
}

// ---------------------------------------------------------------------------
// conversion

/// Everything one conversion pipeline needs.
pub struct Converter<'a, F: FrameField + ?Sized> {
    pub kind: PipelineKind,
    pub field: &'a F,
    pub table: &'a SpeakerTable,
    pub ae: Option<&'a Autoencoder>,
    pub schedule: &'a NoiseSchedule,
    pub alphabet: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Converted {
    pub features: Tensor2,
    pub nfe: usize,
}

impl<'a, F: FrameField + ?Sized> Converter<'a, F> {
    /// Runs the pipeline of `self.kind` on `src` towards `target`.
    ///
    /// DPM: reverse diffusion from the (encoded) source at `L'`.
    /// FM: mix a fraction `r` of noise into the (encoded) source, then Euler.
    pub fn convert(
        &self,
        src: &Utterance,
        target: usize,
        params: &ConvertParams,
        seed: u64,
    ) -> Result<Converted> {
        self.convert_observed(src, target, params, seed, None)
    }

    /// As [`Converter::convert`]; `observer` sees the sampler state (latent for
    /// latent kinds) after every step.
    pub fn convert_observed(
        &self,
        src: &Utterance,
        target: usize,
        params: &ConvertParams,
        seed: u64,
        observer: Option<&mut dyn FnMut(usize, &Tensor2)>,
    ) -> Result<Converted> {
        let speaker = self.table.embed(target)?;
        let ae = match (self.kind.is_latent(), self.ae) {
            (true, None) => {
                return Err(Error::Config(format!(
                    "{} needs a trained autoencoder",
                    self.kind
                )))
            }
            (true, some) => some,
            (false, _) => None,
        };
        let cond = ConditioningBundle {
            speaker,
            content: content_embed(&src.codes, self.alphabet)?,
        };
        let x = match ae {
            Some(ae) => ae.encode(&src.features)?,
            None => src.features.clone(),
        };
        if x.cols() != self.field.data_dim() {
            return Err(Error::shape(
                "conversion field input",
                self.field.data_dim(),
                x.cols(),
            ));
        }
        let mut rng = stream(seed, &[label_key("convert")]);
        let sampled = match self.kind.model {
            GenModel::Dpm => {
                let options = ReverseOptions {
                    stochastic: true,
                    noise_at_final_step: params.noise_at_final_step,
                };
                reverse_sample(
                    self.field,
                    &x,
                    params.lprime,
                    &cond,
                    self.schedule,
                    &mut rng,
                    options,
                    observer,
                )?
            }
            GenModel::Fm => {
                let eps = normal_tensor(&mut rng, x.rows(), x.cols());
                let start = noise_mix(&x, params.noise_frac, &eps)?;
                euler_integrate(self.field, &start, params.euler_steps, &cond, observer)?
            }
        };
        let features = match ae {
            Some(ae) => ae.decode(&sampled.output)?,
            None => sampled.output,
        };
        Ok(Converted {
            features,
            nfe: sampled.nfe,
        })
    }
}

// ---------------------------------------------------------------------------
// model directory

pub fn ae_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("ae.lvgc"), dir.join("disc.lvgc"))
}

pub fn generator_paths(dir: &Path, kind: PipelineKind) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{}.lvgc", kind.name())),
        dir.join(format!("{}-speakers.lvgc", kind.name())),
    )
}

pub fn save_ae(dir: &Path, ae: &ModelCheckpoint, disc: &ModelCheckpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (a, d) = ae_paths(dir);
    save_checkpoint(ae, &a)?;
    save_checkpoint(disc, &d)
}

pub fn load_ae(dir: &Path) -> Result<Autoencoder> {
    let (a, _) = ae_paths(dir);
    if !a.exists() {
        return Err(Error::Config(format!(
            "no autoencoder checkpoint at {}; run train-ae first",
            a.display()
        )));
    }
    load_checkpoint(&a)?.to_autoencoder()
}

pub fn save_generator(
    dir: &Path,
    kind: PipelineKind,
    field: &ModelCheckpoint,
    table: &ModelCheckpoint,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (f, t) = generator_paths(dir, kind);
    save_checkpoint(field, &f)?;
    save_checkpoint(table, &t)
}

pub fn load_generator(dir: &Path, kind: PipelineKind) -> Result<(ConditionedNet, SpeakerTable)> {
    let (f, t) = generator_paths(dir, kind);
    if !f.exists() {
        return Err(Error::Config(format!(
            "no {kind} checkpoint at {}; run train-gen first",
            f.display()
        )));
    }
    let field = load_checkpoint(&f)?;
    if field.role != kind.field_role() {
        return Err(Error::Checkpoint(format!(
            "{} holds a {:?} model, {kind} needs {:?}",
            f.display(),
            field.role,
            kind.field_role()
        )));
    }
    Ok((field.to_field()?, load_checkpoint(&t)?.to_speaker_table()?))
}
