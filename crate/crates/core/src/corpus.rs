//! Synthetic speakers × content corpus with a known generative law.
//!
//! Every frame of speaker `k` uttering content code `c` is drawn from a
//! diagonal Gaussian `N(μ_{k,c}, diag σ²_{k,c})`. Template means combine a
//! content part, a speaker part and a small speaker-content interaction.
//! Content codes come in confusable pairs `(2j, 2j+1)` sharing a base vector
//! and differing by a small offset, like minimal pairs of phonemes.
//! Features are standardised analytically from the template bank, so the
//! stored templates already live in the standardised space.
//!
//! Because the law is known, speaker identity and content codes can be
//! recovered with exact Bayes classifiers; these oracles score conversions.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label_key, stream};
use crate::tensor::Tensor2;

/// Free parameters of the corpus law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusParams {
    pub speakers: usize,
    pub alphabet: usize,
    pub dim: usize,
    /// Frame noise standard deviation before standardisation.
    pub frame_noise: f64,
    /// Per-dimension standard deviation of the speaker offsets.
    pub speaker_scale: f64,
    /// Per-dimension standard deviation of the shared base of each code pair.
    pub content_scale: f64,
    /// Per-dimension standard deviation of the offset within a code pair.
    pub pair_scale: f64,
    /// Speaker-content interaction scale, relative to `speaker_scale`.
    pub interaction: f64,
    pub min_segments: usize,
    pub max_segments: usize,
    pub min_dwell: usize,
    pub max_dwell: usize,
    pub train_utterances: usize,
    pub heldout_utterances: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            speakers: 4,
            alphabet: 8,
            dim: 80,
            frame_noise: 0.17,
            speaker_scale: 0.064,
            content_scale: 0.39,
            pair_scale: 0.125,
            interaction: 0.5,
            min_segments: 3,
            max_segments: 6,
            min_dwell: 5,
            max_dwell: 8,
            train_utterances: 200,
            heldout_utterances: 40,
        }
    }
}

/// The full generative law: parameters plus the standardised template bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub params: CorpusParams,
    pub seed: u64,
    /// `means[k * alphabet + c]`, standardised.
    pub means: Vec<Vec<f64>>,
    /// Diagonal variances, same layout, standardised.
    pub variances: Vec<Vec<f64>>,
    /// Raw-space statistics used for standardisation.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

/// Minimum speaker separation, in units of the frame noise.
pub const MIN_SEPARATION: f64 = 4.0;

impl CorpusSpec {
    pub fn new(params: CorpusParams, seed: u64) -> Result<Self> {
        let p = &params;
        if p.speakers < 2 {
            return Err(Error::Corpus(format!(
                "need at least two speakers, got {}",
                p.speakers
            )));
        }
        if p.alphabet < 2 || p.alphabet > 256 {
            return Err(Error::Corpus(format!(
                "alphabet size must be in 2..=256, got {}",
                p.alphabet
            )));
        }
        if p.speakers > u16::MAX as usize {
            return Err(Error::Corpus("too many speakers".into()));
        }
        if p.dim == 0 || !(p.frame_noise > 0.0) {
            return Err(Error::Corpus("dimension and frame noise must be positive".into()));
        }
        if p.min_dwell == 0
            || p.min_dwell > p.max_dwell
            || p.min_segments == 0
            || p.min_segments > p.max_segments
        {
            return Err(Error::Corpus("invalid segment/dwell ranges".into()));
        }

        let mut rng = stream(seed, &[label_key("templates")]);
        let (k, a, d) = (p.speakers, p.alphabet, p.dim);
        let mut normal = |s: f64| -> Vec<f64> {
            (0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let bases: Vec<Vec<f64>> = (0..a.div_ceil(2)).map(|_| normal(p.content_scale)).collect();
        let content: Vec<Vec<f64>> = (0..a)
            .map(|c| {
                let offset = normal(p.pair_scale);
                bases[c / 2].iter().zip(offset).map(|(b, o)| b + o).collect()
            })
            .collect();
        let speaker: Vec<Vec<f64>> = (0..k).map(|_| normal(p.speaker_scale)).collect();
        let mut raw_means = Vec::with_capacity(k * a);
        for s in &speaker {
            for c in &content {
                let w = normal(p.interaction * p.speaker_scale);
                raw_means.push((0..d).map(|i| c[i] + s[i] + w[i]).collect::<Vec<_>>());
            }
        }
        // one diagonal noise shape for every (speaker, code)
        let shape: Vec<f64> = normal(0.15)
            .into_iter()
            .map(|g| p.frame_noise.powi(2) * g.exp())
            .collect();
        let raw_vars: Vec<Vec<f64>> = vec![shape; k * a];

        for c in 0..a {
            for s1 in 0..k {
                for s2 in s1 + 1..k {
                    let dist = euclid(&raw_means[s1 * a + c], &raw_means[s2 * a + c]);
                    if dist < MIN_SEPARATION * p.frame_noise {
                        return Err(Error::Corpus(format!(
                            "speakers {s1} and {s2} are only {dist:.3} apart on code {c}; \
                             need at least {:.3}",
                            MIN_SEPARATION * p.frame_noise
                        )));
                    }
                }
            }
        }

        // analytic mixture moments with uniform speaker and code usage
        let m = (k * a) as f64;
        let mut norm_mean = vec![0.0; d];
        let mut second = vec![0.0; d];
        for (mu, var) in raw_means.iter().zip(&raw_vars) {
            for i in 0..d {
                norm_mean[i] += mu[i] / m;
                second[i] += (var[i] + mu[i] * mu[i]) / m;
            }
        }
        let norm_std: Vec<f64> = (0..d)
            .map(|i| (second[i] - norm_mean[i] * norm_mean[i]).sqrt())
            .collect();
        let means = raw_means
            .iter()
            .map(|mu| (0..d).map(|i| (mu[i] - norm_mean[i]) / norm_std[i]).collect())
            .collect();
        let variances = raw_vars
            .iter()
            .map(|v| (0..d).map(|i| v[i] / norm_std[i].powi(2)).collect())
            .collect();
        Ok(CorpusSpec {
            params,
            seed,
            means,
            variances,
            norm_mean,
            norm_std,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn speakers(&self) -> usize {
        self.params.speakers
    }

    pub fn alphabet(&self) -> usize {
        self.params.alphabet
    }

    pub fn mean(&self, speaker: usize, code: usize) -> &[f64] {
        &self.means[speaker * self.params.alphabet + code]
    }

    pub fn variance(&self, speaker: usize, code: usize) -> &[f64] {
        &self.variances[speaker * self.params.alphabet + code]
    }

    /// Smallest standardised distance between two speakers' templates for the same code,
    /// divided by the standardised frame noise.
    pub fn min_separation(&self) -> f64 {
        let (k, a) = (self.speakers(), self.alphabet());
        let noise = self.params.frame_noise;
        let mut best = f64::INFINITY;
        for c in 0..a {
            for s1 in 0..k {
                for s2 in s1 + 1..k {
                    let raw: f64 = (0..self.dim())
                        .map(|i| {
                            ((self.mean(s1, c)[i] - self.mean(s2, c)[i]) * self.norm_std[i])
                                .powi(2)
                        })
                        .sum::<f64>()
                        .sqrt();
                    best = best.min(raw / noise);
                }
            }
        }
        best
    }

    /// Log-density of one frame under each `(speaker, code)` component.
    fn component_loglik(&self, frame: &[f64]) -> Vec<f64> {
        const LN_2PI: f64 = 1.837_877_066_409_345_5;
        self.means
            .iter()
            .zip(&self.variances)
            .map(|(mu, var)| {
                let mut s = 0.0;
                for i in 0..frame.len() {
                    let d = frame[i] - mu[i];
                    s += d * d / var[i] + var[i].ln() + LN_2PI;
                }
                -0.5 * s
            })
            .collect()
    }

    fn check_frames(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::shape("oracle input", self.dim(), x.cols()));
        }
        Ok(())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One utterance: standardised features (one frame per row), its speaker and
/// per-frame content codes.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub features: Tensor2,
    pub speaker: usize,
    pub codes: Vec<u8>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub train: Vec<Utterance>,
    pub heldout: Vec<Utterance>,
}

fn draw_utterance<R: Rng + ?Sized>(spec: &CorpusSpec, speaker: usize, rng: &mut R) -> Utterance {
    let p = &spec.params;
    let segments = rng.gen_range(p.min_segments..=p.max_segments);
    let mut codes = Vec::new();
    let mut prev: Option<u8> = None;
    for _ in 0..segments {
        let code = loop {
            let c = rng.gen_range(0..p.alphabet) as u8;
            if Some(c) != prev {
                break c;
            }
        };
        prev = Some(code);
        let dwell = rng.gen_range(p.min_dwell..=p.max_dwell);
        codes.extend(std::iter::repeat_n(code, dwell));
    }
    let mut features = Tensor2::zeros(codes.len(), p.dim);
    for (t, &c) in codes.iter().enumerate() {
        let mu = spec.mean(speaker, c as usize);
        let var = spec.variance(speaker, c as usize);
        for (i, v) in features.row_mut(t).iter_mut().enumerate() {
            let x = mu[i] + var[i].sqrt() * rng.sample::<f64, _>(StandardNormal);
            // stored as f32 on disk; keep memory and file bit-identical
            *v = x as f32 as f64;
        }
    }
    Utterance {
        features,
        speaker,
        codes,
    }
}

/// Draws the train and held-out sets. Speakers are assigned round-robin so
/// both sets cover every speaker.
pub fn gen_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    let p = &spec.params;
    if p.speakers < 2 || p.alphabet < 2 {
        return Err(Error::Corpus("need at least two speakers and two codes".into()));
    }
    let draw = |split: &str, count: usize| -> Vec<Utterance> {
        (0..count)
            .map(|i| {
                let mut rng = stream(seed, &[label_key(split), i as u64]);
                draw_utterance(spec, i % p.speakers, &mut rng)
            })
            .collect()
    };
    Ok(Corpus {
        spec: spec.clone(),
        train: draw("train", p.train_utterances),
        heldout: draw("heldout", p.heldout_utterances),
    })
}

/// Draws `count` fresh utterances from an independent stream.
pub fn sample_utterances(spec: &CorpusSpec, seed: u64, count: usize) -> Vec<Utterance> {
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, &[label_key("fresh"), i as u64]);
            draw_utterance(spec, i % spec.speakers(), &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerDecision {
    pub speaker: usize,
    /// Log-posterior of every speaker under uniform priors.
    pub log_posterior: Vec<f64>,
}

impl SpeakerDecision {
    /// Log-posterior of `speaker` minus the best competitor.
    pub fn margin_for(&self, speaker: usize) -> f64 {
        let other = self
            .log_posterior
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != speaker)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        self.log_posterior[speaker] - other
    }
}

/// Exact Bayes speaker decision: codes are marginalised per frame, frame
/// log-likelihoods are summed, priors are uniform.
pub fn oracle_speaker_classify(x: &Tensor2, spec: &CorpusSpec) -> Result<SpeakerDecision> {
    spec.check_frames(x)?;
    let (k, a) = (spec.speakers(), spec.alphabet());
    let ln_a = (a as f64).ln();
    let mut loglik = vec![0.0; k];
    for frame in x.iter_rows() {
        let comp = spec.component_loglik(frame);
        for (s, acc) in loglik.iter_mut().enumerate() {
            *acc += log_sum_exp(comp[s * a..(s + 1) * a].iter().copied()) - ln_a;
        }
    }
    let z = log_sum_exp(loglik.iter().copied());
    let log_posterior: Vec<f64> = loglik.iter().map(|l| l - z).collect();
    let mut speaker = 0;
    for (s, &v) in log_posterior.iter().enumerate() {
        if v > log_posterior[speaker] {
            speaker = s;
        }
    }
    Ok(SpeakerDecision {
        speaker,
        log_posterior,
    })
}

/// Per-frame maximum-likelihood code (speakers marginalised), then a majority
/// vote over a centred window of `min_dwell` frames. Ties keep the frame's own
/// code when it is among the leaders, otherwise the lowest code id wins.
pub fn oracle_content_decode(x: &Tensor2, spec: &CorpusSpec) -> Result<Vec<u8>> {
    spec.check_frames(x)?;
    let (k, a) = (spec.speakers(), spec.alphabet());
    let raw: Vec<usize> = x
        .iter_rows()
        .map(|frame| {
            let comp = spec.component_loglik(frame);
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..a {
                let v = log_sum_exp((0..k).map(|s| comp[s * a + c]));
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            best
        })
        .collect();
    let half = spec.params.min_dwell / 2;
    let n = raw.len();
    let mut out = Vec::with_capacity(n);
    let mut votes = vec![0usize; a];
    for t in 0..n {
        votes.iter_mut().for_each(|v| *v = 0);
        for &c in &raw[t.saturating_sub(half)..(t + half + 1).min(n)] {
            votes[c] += 1;
        }
        let top = *votes.iter().max().expect("alphabet non-empty");
        let pick = if votes[raw[t]] == top {
            raw[t]
        } else {
            votes.iter().position(|&v| v == top).expect("max exists")
        };
        out.push(pick as u8);
    }
    Ok(out)
}

/// Fraction of frames where the decoded code matches.
pub fn frame_accuracy(decoded: &[u8], truth: &[u8]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = decoded.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

// ---------------------------------------------------------------------------
// on-disk format

pub const UTTERANCE_MAGIC: &[u8; 4] = b"LVGU";
pub const UTTERANCE_VERSION: u16 = 1;

/// Serialises an utterance: header, codes, then `f32` features in
/// feature-major (`D x N`) row-major order.
pub fn encode_utterance(u: &Utterance) -> Result<Vec<u8>> {
    let (n, d) = u.features.shape();
    if u.codes.len() != n {
        return Err(Error::shape("utterance codes", n, u.codes.len()));
    }
    let speaker = u16::try_from(u.speaker)
        .map_err(|_| Error::Corpus(format!("speaker id {} exceeds u16", u.speaker)))?;
    let mut out = Vec::with_capacity(16 + n + 4 * n * d);
    out.extend_from_slice(UTTERANCE_MAGIC);
    out.extend_from_slice(&UTTERANCE_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&speaker.to_le_bytes());
    out.extend_from_slice(&u.codes);
    for i in 0..d {
        for t in 0..n {
            out.extend_from_slice(&(u.features[(t, i)] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_utterance(bytes: &[u8]) -> Result<Utterance> {
    let bad = |m: &str| Error::Corpus(format!("malformed utterance file: {m}"));
    if bytes.len() < 16 {
        return Err(bad("truncated header"));
    }
    if &bytes[0..4] != UTTERANCE_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != UTTERANCE_VERSION {
        return Err(Error::Version {
            found: version,
            supported: UTTERANCE_VERSION,
        });
    }
    let d = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let n = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let speaker = u16::from_le_bytes([bytes[14], bytes[15]]) as usize;
    let need = 16 + n + 4 * n * d;
    if bytes.len() != need {
        return Err(bad(&format!("expected {need} bytes, found {}", bytes.len())));
    }
    let codes = bytes[16..16 + n].to_vec();
    let mut features = Tensor2::zeros(n, d);
    let mut off = 16 + n;
    for i in 0..d {
        for t in 0..n {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
            features[(t, i)] = v as f64;
            off += 4;
        }
    }
    Ok(Utterance {
        features,
        speaker,
        codes,
    })
}

pub fn write_utterance(path: &Path, u: &Utterance) -> Result<()> {
    let bytes = encode_utterance(u)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_utterance(path: &Path) -> Result<Utterance> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_utterance(&bytes)
}

pub const SPEC_FILE: &str = "spec.json";

fn utterance_path(dir: &Path, split: &str, i: usize) -> PathBuf {
    dir.join(format!("{split}-{i:05}.lvgu"))
}

/// Directory index written next to the utterance files.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusIndex {
    spec: CorpusSpec,
    train: usize,
    heldout: usize,
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let index = CorpusIndex {
        spec: corpus.spec.clone(),
        train: corpus.train.len(),
        heldout: corpus.heldout.len(),
    };
    let path = dir.join(SPEC_FILE);
    fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))?;
    for (split, set) in [("train", &corpus.train), ("heldout", &corpus.heldout)] {
        for (i, u) in set.iter().enumerate() {
            write_utterance(&utterance_path(dir, split, i), u)?;
        }
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(SPEC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: CorpusIndex = serde_json::from_str(&text)?;
    let load = |split: &str, count: usize| -> Result<Vec<Utterance>> {
        (0..count)
            .map(|i| {
                let u = read_utterance(&utterance_path(dir, split, i))?;
                if u.features.cols() != index.spec.dim() {
                    return Err(Error::Corpus(format!(
                        "{split} utterance {i} has dimension {}, spec says {}",
                        u.features.cols(),
                        index.spec.dim()
                    )));
                }
                Ok(u)
            })
            .collect()
    };
    Ok(Corpus {
        train: load("train", index.train)?,
        heldout: load("heldout", index.heldout)?,
        spec: index.spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusParams {
        CorpusParams {
            dim: 16,
            speaker_scale: 0.5,
            train_utterances: 12,
            heldout_utterances: 4,
            ..CorpusParams::default()
        }
    }

    #[test]
    fn single_speaker_is_rejected() {
        let p = CorpusParams {
            speakers: 1,
            ..small()
        };
        assert!(matches!(CorpusSpec::new(p, 1), Err(Error::Corpus(_))));
    }

    #[test]
    fn unsatisfiable_separation_is_a_spec_error() {
        let p = CorpusParams {
            speaker_scale: 0.01,
            ..small()
        };
        let err = CorpusSpec::new(p, 1).unwrap_err();
        assert!(err.to_string().contains("apart"), "{err}");
    }

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let spec = CorpusSpec::new(small(), 5).unwrap();
        let a = gen_corpus(&spec, 9).unwrap();
        let b = gen_corpus(&spec, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train[0], gen_corpus(&spec, 10).unwrap().train[0]);
        for u in a.train.iter().chain(&a.heldout) {
            assert_eq!(u.codes.len(), u.frames());
            assert!(u.features.is_finite());
            // every run of equal codes is at least min_dwell long
            let mut run = 1;
            for w in u.codes.windows(2) {
                if w[0] == w[1] {
                    run += 1;
                } else {
                    assert!(run >= spec.params.min_dwell);
                    run = 1;
                }
            }
            assert!(run >= spec.params.min_dwell);
        }
    }

    #[test]
    fn template_means_decode_exactly() {
        let spec = CorpusSpec::new(small(), 6).unwrap();
        for k in 0..spec.speakers() {
            let codes: Vec<u8> = [0u8, 3, 5].iter().flat_map(|&c| [c; 5]).collect();
            let rows: Vec<Vec<f64>> = codes
                .iter()
                .map(|&c| spec.mean(k, c as usize).to_vec())
                .collect();
            let x = Tensor2::from_rows(&rows).unwrap();
            assert_eq!(oracle_speaker_classify(&x, &spec).unwrap().speaker, k);
            assert_eq!(oracle_content_decode(&x, &spec).unwrap(), codes);
        }
    }

    #[test]
    fn zero_input_decodes_deterministically() {
        let spec = CorpusSpec::new(small(), 7).unwrap();
        let x = Tensor2::zeros(6, 16);
        let a = oracle_content_decode(&x, &spec).unwrap();
        assert_eq!(a, oracle_content_decode(&x, &spec).unwrap());
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn empty_input_has_uniform_posterior() {
        let spec = CorpusSpec::new(small(), 7).unwrap();
        let d = oracle_speaker_classify(&Tensor2::zeros(0, 16), &spec).unwrap();
        let u = -(spec.speakers() as f64).ln();
        assert!(d.log_posterior.iter().all(|&v| (v - u).abs() < 1e-12));
        assert_eq!(d.margin_for(0), 0.0);
    }

    #[test]
    fn oracle_rejects_wrong_dimension() {
        let spec = CorpusSpec::new(small(), 7).unwrap();
        assert!(oracle_speaker_classify(&Tensor2::zeros(3, 5), &spec).is_err());
        assert!(oracle_content_decode(&Tensor2::zeros(3, 5), &spec).is_err());
    }

    #[test]
    fn utterance_bytes_round_trip_and_reject_corruption() {
        let spec = CorpusSpec::new(small(), 8).unwrap();
        let u = gen_corpus(&spec, 1).unwrap().train.remove(3);
        let bytes = encode_utterance(&u).unwrap();
        assert_eq!(&bytes[..4], b"LVGU");
        assert_eq!(decode_utterance(&bytes).unwrap(), u);
        assert!(decode_utterance(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_utterance(&wrong).is_err());
        let mut newer = bytes;
        newer[4] = 9;
        assert!(matches!(
            decode_utterance(&newer),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn corpus_directory_round_trip() {
        let spec = CorpusSpec::new(small(), 8).unwrap();
        let c = gen_corpus(&spec, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &c).unwrap();
        assert!(dir.path().join("spec.json").exists());
        assert_eq!(load_corpus(dir.path()).unwrap(), c);
    }
}
