//! Untrained model fixtures at default sizes, so benches measure compute
//! cost without a training run.

use lvg_core::conditioning::SpeakerTable;
use lvg_core::config::RunConfig;
use lvg_core::corpus::{sample_utterances, CorpusSpec, Utterance};
use lvg_core::field::ConditionedNet;
use lvg_core::latentae::Autoencoder;
use lvg_core::pipeline::{Converter, PipelineKind};
use lvg_core::rng::stream;
use lvg_core::schedule::NoiseSchedule;

pub struct Fixture {
    pub cfg: RunConfig,
    pub spec: CorpusSpec,
    pub utterances: Vec<Utterance>,
    pub ae: Autoencoder,
    pub schedule: NoiseSchedule,
    pub table: SpeakerTable,
    pub feature_net: ConditionedNet,
    pub latent_net: ConditionedNet,
}

impl Fixture {
    pub fn new(utterances: usize) -> Self {
        let cfg = RunConfig::default();
        let spec = CorpusSpec::new(cfg.corpus.clone(), cfg.seed).expect("default corpus");
        let mut rng = stream(1, &[]);
        Fixture {
            utterances: sample_utterances(&spec, 2, utterances),
            ae: Autoencoder::init(cfg.ae_dims(), &mut rng).expect("default dims"),
            schedule: NoiseSchedule::new(&cfg.schedule).expect("default schedule"),
            table: SpeakerTable::init(cfg.corpus.speakers, cfg.generator.speaker_dim, &mut rng),
            feature_net: ConditionedNet::init(cfg.field_dims(cfg.corpus.dim), &mut rng)
                .expect("default dims"),
            latent_net: ConditionedNet::init(cfg.field_dims(cfg.autoencoder.latent), &mut rng)
                .expect("default dims"),
            spec,
            cfg,
        }
    }

    pub fn converter(&self, kind: PipelineKind) -> Converter<'_, ConditionedNet> {
        Converter {
            kind,
            field: if kind.is_latent() {
                &self.latent_net
            } else {
                &self.feature_net
            },
            table: &self.table,
            ae: Some(&self.ae),
            schedule: &self.schedule,
            alphabet: self.spec.alphabet(),
        }
    }
}
