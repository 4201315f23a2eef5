//! Oracle-scored conversion metrics, r / L sweeps and timing benches.
//!
//! The metrics are proxies computed with the corpus oracles: the target
//! speaker hit rate, the speaker log-posterior margin and the content frame
//! accuracy against the source codes.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::adam::{AdamConfig, AdamState};
use crate::config::ConvertParams;
use crate::corpus::{
    frame_accuracy, oracle_content_decode, oracle_speaker_classify, CorpusSpec, Utterance,
};
use crate::error::{Error, Result};
use crate::field::FrameField;
use crate::latentae::{disc_loss_on_windows, Autoencoder, Discriminator, Renderer};
use crate::pipeline::{Converter, GenModel, PipelineKind};
use crate::rng::{derive_seed, label_key, stream};
use crate::tensor::Tensor2;

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceScore {
    /// Index of the source utterance in the evaluated set.
    pub source: usize,
    pub target: usize,
    pub hit: bool,
    pub margin: f64,
    pub content_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversionReport {
    pub rows: Vec<UtteranceScore>,
    pub similarity_acc: f64,
    pub content_acc: f64,
    pub mean_margin: f64,
}

impl ConversionReport {
    pub fn from_rows(rows: Vec<UtteranceScore>) -> Self {
        let n = rows.len().max(1) as f64;
        let hits = rows.iter().filter(|r| r.hit).count() as f64;
        let content = rows.iter().map(|r| r.content_acc).sum::<f64>();
        let margin = rows.iter().map(|r| r.margin).sum::<f64>();
        ConversionReport {
            similarity_acc: hits / n,
            content_acc: content / n,
            mean_margin: margin / n,
            rows,
        }
    }
}

/// Scores one converted sequence against its intended speaker and source codes.
pub fn score_conversion(
    spec: &CorpusSpec,
    converted: &Tensor2,
    target: usize,
    codes: &[u8],
) -> Result<(bool, f64, f64)> {
    let decision = oracle_speaker_classify(converted, spec)?;
    let decoded = oracle_content_decode(converted, spec)?;
    Ok((
        decision.speaker == target,
        decision.margin_for(target),
        frame_accuracy(&decoded, codes),
    ))
}

/// `(source index, target speaker)` for every source and every other speaker.
pub fn conversion_pairs(sources: &[Utterance], speakers: usize) -> Vec<(usize, usize)> {
    sources
        .iter()
        .enumerate()
        .flat_map(|(i, u)| {
            (0..speakers)
                .filter(move |&k| k != u.speaker)
                .map(move |k| (i, k))
        })
        .collect()
}

/// Converts every pair and scores it. Each pair gets its own derived seed,
/// so the report does not depend on the worker count.
pub fn eval_conversion<F: FrameField + Sync + ?Sized>(
    converter: &Converter<'_, F>,
    spec: &CorpusSpec,
    sources: &[Utterance],
    pairs: &[(usize, usize)],
    params: &ConvertParams,
    seed: u64,
) -> Result<ConversionReport> {
    let rows = pairs
        .par_iter()
        .map(|&(i, target)| {
            let src = &sources[i];
            let s = derive_seed(seed, &[i as u64, target as u64]);
            let out = converter.convert(src, target, params, s)?;
            let (hit, margin, content_acc) =
                score_conversion(spec, &out.features, target, &src.codes)?;
            Ok(UtteranceScore {
                source: i,
                target,
                hit,
                margin,
                content_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConversionReport::from_rows(rows))
}

/// Runs `f` on a dedicated pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub kind: PipelineKind,
    pub r: f64,
    pub steps: usize,
    pub similarity_acc: f64,
    pub content_acc: f64,
    pub mean_margin: f64,
}

fn require_fm(kind: PipelineKind) -> Result<()> {
    if kind.model != GenModel::Fm {
        return Err(Error::Config(format!(
            "sweeps over r and L apply to flow-matching kinds only, not {kind}"
        )));
    }
    Ok(())
}

fn sweep_point<F: FrameField + Sync + ?Sized>(
    converter: &Converter<'_, F>,
    spec: &CorpusSpec,
    sources: &[Utterance],
    r: f64,
    steps: usize,
    seed: u64,
) -> Result<SweepRow> {
    let params = ConvertParams {
        noise_frac: r,
        euler_steps: steps,
        ..ConvertParams::default()
    };
    let pairs = conversion_pairs(sources, spec.speakers());
    let rep = eval_conversion(converter, spec, sources, &pairs, &params, seed)?;
    Ok(SweepRow {
        kind: converter.kind,
        r,
        steps,
        similarity_acc: rep.similarity_acc,
        content_acc: rep.content_acc,
        mean_margin: rep.mean_margin,
    })
}

/// One report per noise fraction in `grid` at a fixed Euler step count.
pub fn sweep_r<F: FrameField + Sync + ?Sized>(
    converter: &Converter<'_, F>,
    spec: &CorpusSpec,
    sources: &[Utterance],
    grid: &[f64],
    steps: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    require_fm(converter.kind)?;
    grid.iter()
        .map(|&r| sweep_point(converter, spec, sources, r, steps, seed))
        .collect()
}

/// One report per Euler step count in `grid` at a fixed noise fraction.
pub fn sweep_l<F: FrameField + Sync + ?Sized>(
    converter: &Converter<'_, F>,
    spec: &CorpusSpec,
    sources: &[Utterance],
    grid: &[usize],
    r: f64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    require_fm(converter.kind)?;
    grid.iter()
        .map(|&l| sweep_point(converter, spec, sources, r, l, seed))
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("kind,r,L,similarity_acc,content_acc,mean_margin\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.1},{},{:.6},{:.6},{:.6}\n",
            r.kind, r.r, r.steps, r.similarity_acc, r.content_acc, r.mean_margin
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kind: PipelineKind,
    /// `L'` for DPM kinds, `L` for FM kinds.
    pub steps: usize,
    pub nfe: usize,
    pub ms_per_100_frames: f64,
    pub param_count: usize,
}

/// Times conversion of `sources` (one warm-up pass, then the median of
/// `repeats` timed passes) on the calling thread.
pub fn bench<F: FrameField + ?Sized>(
    converter: &Converter<'_, F>,
    sources: &[Utterance],
    params: &ConvertParams,
    repeats: usize,
    param_count: usize,
) -> Result<BenchRow> {
    if sources.is_empty() || repeats == 0 {
        return Err(Error::Config("bench needs sources and at least one repetition".into()));
    }
    let frames: usize = sources.iter().map(Utterance::frames).sum();
    let target = |u: &Utterance| (u.speaker + 1) % converter.table.speakers();
    let mut nfe = 0;
    let mut pass = || -> Result<f64> {
        let start = Instant::now();
        for (i, u) in sources.iter().enumerate() {
            nfe = converter.convert(u, target(u), params, i as u64)?.nfe;
        }
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    pass()?;
    let mut times = (0..repeats).map(|_| pass()).collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    let median = if repeats % 2 == 1 {
        times[repeats / 2]
    } else {
        0.5 * (times[repeats / 2 - 1] + times[repeats / 2])
    };
    let steps = match converter.kind.model {
        GenModel::Dpm => params.lprime,
        GenModel::Fm => params.euler_steps,
    };
    Ok(BenchRow {
        kind: converter.kind,
        steps,
        nfe,
        ms_per_100_frames: median * 100.0 / frames as f64,
        param_count,
    })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("kind,Lprime_or_L,nfe,ms_per_100_frames,param_count\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.4},{}\n",
            r.kind, r.steps, r.nfe, r.ms_per_100_frames, r.param_count
        ));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains a fresh discriminator for `steps` updates to tell rendered real
/// features from rendered reconstructions, then returns the fraction of
/// reconstruction windows in `test` it scores as real (above 0.5).
pub fn fooling_rate(
    ae: &Autoencoder,
    renderer: &Renderer,
    train: &[Utterance],
    test: &[Utterance],
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("fooling rate needs train and test utterances".into()));
    }
    let windows = |utts: &[&Utterance]| -> Result<(Tensor2, Tensor2)> {
        let mut real = Vec::new();
        let mut fake = Vec::new();
        for u in utts {
            real.push(renderer.render(&u.features)?.windows());
            fake.push(renderer.render(&ae.reconstruct(&u.features)?)?.windows());
        }
        Ok((
            Tensor2::vcat(&real.iter().collect::<Vec<_>>())?,
            Tensor2::vcat(&fake.iter().collect::<Vec<_>>())?,
        ))
    };
    let mut rng = stream(seed, &[label_key("judge")]);
    let mut judge = Discriminator::init(renderer.window_len(), 64, 2, &mut rng);
    let sizes: Vec<usize> = judge.net.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        &sizes,
    );
    let all: Vec<&Utterance> = train.iter().collect();
    for step in 0..steps {
        let start = (step * batch) % all.len();
        let chunk: Vec<&Utterance> = (0..batch.min(all.len()))
            .map(|j| all[(start + j) % all.len()])
            .collect();
        let (real, fake) = windows(&chunk)?;
        let (_, grads) = disc_loss_on_windows(&judge, &real, &fake)?;
        adam.step(&mut judge.net.param_slices_mut(), &grads.param_slices())?;
    }
    let (_, fake) = windows(&test.iter().collect::<Vec<_>>())?;
    let scores = judge.score(&fake)?;
    Ok(scores.iter().filter(|&&s| s > 0.5).count() as f64 / scores.len() as f64)
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
