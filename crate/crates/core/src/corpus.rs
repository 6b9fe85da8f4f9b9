//! Synthetic corpus: labelled, unlabelled, evaluation and calibration splits
//! with speakers, devices, domains, repeated content and per-utterance noise.
//!
//! Every label (blank included) owns a mean feature vector. A frame emits its
//! label's mean plus the speaker's offset plus Gaussian noise whose standard
//! deviation is drawn once per utterance. Domains differ only in transcript
//! statistics: each has its own preferred-successor table over the content
//! symbols.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{collapse, Alphabet, LabelSequence};
use crate::model::FeatureMatrix;

/// Index of the reserved wake word symbol in synthetic alphabets.
pub const WAKEWORD_SYMBOL: usize = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Non-blank symbols, the wake word included.
    pub num_symbols: usize,
    pub input_dim: usize,
    pub num_domains: usize,
    pub num_speakers: usize,
    pub num_devices: usize,
    pub labelled: usize,
    pub unlabelled: usize,
    pub eval: usize,
    /// Held-out labelled utterances for fitting the confidence model.
    pub calibration: usize,
    /// Inclusive range for each label's mean duration in frames.
    pub duration_range: (usize, usize),
    /// Inclusive transcript length range in symbols.
    pub transcript_len: (usize, usize),
    /// Spread of the per-label mean vectors.
    pub label_mean_scale: f64,
    pub speaker_offset_std: f64,
    /// Inclusive range the per-utterance noise standard deviation is drawn from.
    pub noise_range: (f64, f64),
    /// Probability that the next symbol is the domain's preferred successor.
    pub domain_focus: f64,
    /// Share of the unlabelled pool that is wake word only.
    pub wakeword_fraction: f64,
    /// Share of utterances whose transcript is one of a few popular phrases.
    pub repetition: f64,
    pub phrases_per_domain: usize,
    /// Device popularity decays as `rank^-device_skew`.
    pub device_skew: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_symbols: 10,
            input_dim: 8,
            num_domains: 5,
            num_speakers: 50,
            num_devices: 400,
            labelled: 200,
            unlabelled: 5000,
            eval: 500,
            calibration: 200,
            duration_range: (2, 5),
            transcript_len: (3, 10),
            label_mean_scale: 1.0,
            speaker_offset_std: 0.3,
            noise_range: (0.2, 1.2),
            domain_focus: 0.85,
            wakeword_fraction: 0.05,
            repetition: 0.1,
            phrases_per_domain: 2,
            device_skew: 0.5,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |field: &'static str, reason: &str| {
            Err(CorpusError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.num_symbols < 3 {
            return bad("num_symbols", "need the wake word plus at least two content symbols");
        }
        for (field, v) in [
            ("input_dim", self.input_dim),
            ("num_domains", self.num_domains),
            ("num_speakers", self.num_speakers),
            ("num_devices", self.num_devices),
            ("phrases_per_domain", self.phrases_per_domain),
        ] {
            if v == 0 {
                return bad(field, "must be positive");
            }
        }
        if self.duration_range.0 == 0 || self.duration_range.0 > self.duration_range.1 {
            return bad("duration_range", "need 1 <= min <= max");
        }
        if self.transcript_len.0 == 0 || self.transcript_len.0 > self.transcript_len.1 {
            return bad("transcript_len", "need 1 <= min <= max");
        }
        if !(self.noise_range.0 >= 0.0 && self.noise_range.0 <= self.noise_range.1) {
            return bad("noise_range", "need 0 <= min <= max");
        }
        for (field, v) in [
            ("domain_focus", self.domain_focus),
            ("wakeword_fraction", self.wakeword_fraction),
            ("repetition", self.repetition),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        if !(self.label_mean_scale > 0.0) || !(self.speaker_offset_std >= 0.0) || !(self.device_skew >= 0.0) {
            return bad("label_mean_scale", "scales must be non-negative (label_mean_scale positive)");
        }
        Ok(())
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet::synthetic(self.num_symbols).expect("validated symbol count")
    }

    pub fn domain_names(&self) -> Vec<String> {
        (1..=self.num_domains).map(|d| format!("D{d}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labelled,
    Unlabelled,
    Eval,
    Calibration,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Labelled, Split::Unlabelled, Split::Eval, Split::Calibration];

    pub fn name(self) -> &'static str {
        match self {
            Split::Labelled => "labelled",
            Split::Unlabelled => "unlabelled",
            Split::Eval => "eval",
            Split::Calibration => "calibration",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

/// Per-utterance metadata known to the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceInfo {
    pub id: String,
    pub speaker: String,
    pub device: String,
    pub domain: String,
    pub noise_std: f64,
    pub wakeword_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub info: UtteranceInfo,
    pub features: FeatureMatrix,
    /// Ground truth. For the unlabelled split this is hidden from training
    /// and only read by evaluation oracles.
    pub reference: LabelSequence,
    pub frame_labels: Vec<usize>,
}

impl SyntheticUtterance {
    pub fn id(&self) -> &str {
        &self.info.id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub alphabet: Alphabet,
    pub domains: Vec<String>,
    pub labelled: Vec<SyntheticUtterance>,
    pub unlabelled: Vec<SyntheticUtterance>,
    pub eval: Vec<SyntheticUtterance>,
    pub calibration: Vec<SyntheticUtterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[SyntheticUtterance] {
        match split {
            Split::Labelled => &self.labelled,
            Split::Unlabelled => &self.unlabelled,
            Split::Eval => &self.eval,
            Split::Calibration => &self.calibration,
        }
    }
}

/// Corpus-wide random structure shared by all splits.
struct World {
    label_means: Vec<Vec<f64>>,
    label_durations: Vec<usize>,
    speaker_offsets: Vec<Vec<f64>>,
    device_speaker: Vec<usize>,
    device_weights: WeightedIndex<f64>,
    /// `successor[domain][symbol]`; index 0 holds the start symbol choice.
    successor: Vec<Vec<usize>>,
    phrases: Vec<Vec<Vec<usize>>>,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn utterance_seed(seed: u64, split: Split, index: usize) -> u64 {
    mix(mix(seed ^ split.tag().wrapping_mul(0xA24B_AED4_963E_E407)) ^ index as u64)
}

fn content_symbols(cfg: &CorpusConfig) -> Vec<usize> {
    (WAKEWORD_SYMBOL + 1..=cfg.num_symbols).collect()
}

impl World {
    fn new(cfg: &CorpusConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let num_labels = cfg.num_symbols + 1;
        let label_means = (0..num_labels)
            .map(|_| {
                (0..cfg.input_dim)
                    .map(|_| unit.sample(&mut rng) * cfg.label_mean_scale)
                    .collect()
            })
            .collect();
        let label_durations = (0..num_labels)
            .map(|_| rng.random_range(cfg.duration_range.0..=cfg.duration_range.1))
            .collect();
        let speaker_offsets = (0..cfg.num_speakers)
            .map(|_| {
                (0..cfg.input_dim)
                    .map(|_| unit.sample(&mut rng) * cfg.speaker_offset_std)
                    .collect()
            })
            .collect();
        let device_speaker = (0..cfg.num_devices)
            .map(|_| rng.random_range(0..cfg.num_speakers))
            .collect();
        let device_weights = WeightedIndex::new((0..cfg.num_devices).map(|r| ((r + 1) as f64).powf(-cfg.device_skew)))
            .expect("positive device weights");
        let content = content_symbols(cfg);
        let successor = (0..cfg.num_domains)
            .map(|_| {
                // succ[0] is the preferred first symbol; succ[s] follows symbol s.
                (0..=cfg.num_symbols)
                    .map(|s| loop {
                        let c = *content.choose(&mut rng).expect("content symbols");
                        if c != s {
                            break c;
                        }
                    })
                    .collect()
            })
            .collect();
        let mut world = Self {
            label_means,
            label_durations,
            speaker_offsets,
            device_speaker,
            device_weights,
            successor,
            phrases: Vec::new(),
        };
        world.phrases = (0..cfg.num_domains)
            .map(|d| {
                (0..cfg.phrases_per_domain)
                    .map(|_| world.sample_transcript(cfg, d, &mut rng))
                    .collect()
            })
            .collect();
        world
    }

    fn sample_transcript(&self, cfg: &CorpusConfig, domain: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let content = content_symbols(cfg);
        let len = rng.random_range(cfg.transcript_len.0..=cfg.transcript_len.1);
        let mut out = Vec::with_capacity(len);
        let mut prev = 0;
        for _ in 0..len {
            let next = if rng.random_bool(cfg.domain_focus) {
                self.successor[domain][prev]
            } else {
                *content.choose(rng).expect("content symbols")
            };
            out.push(next);
            prev = next;
        }
        out
    }

    /// Lays the transcript out over frames: blank runs around and between
    /// symbols (always at least one between repeats), each symbol held for
    /// its label's mean duration with +-1 jitter.
    fn frame_labels(&self, transcript: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let blank = 0;
        let mut frames = vec![blank; rng.random_range(1..=3)];
        for (i, &s) in transcript.iter().enumerate() {
            if i > 0 {
                let min_gap = usize::from(transcript[i - 1] == s);
                let gap = rng.random_range(min_gap..=2);
                frames.extend(std::iter::repeat_n(blank, gap));
            }
            let d = self.label_durations[s] as i64 + rng.random_range(-1..=1);
            frames.extend(std::iter::repeat_n(s, d.max(1) as usize));
        }
        frames.extend(std::iter::repeat_n(blank, rng.random_range(1..=3)));
        frames
    }

    fn utterance(&self, cfg: &CorpusConfig, split: Split, index: usize) -> SyntheticUtterance {
        let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(cfg.seed, split, index));
        let domain = rng.random_range(0..cfg.num_domains);
        let device = self.device_weights.sample(&mut rng);
        let speaker = self.device_speaker[device];
        let noise_std = rng.random_range(cfg.noise_range.0..=cfg.noise_range.1);
        let wakeword_only = split == Split::Unlabelled && rng.random_bool(cfg.wakeword_fraction);
        let transcript = if wakeword_only {
            vec![WAKEWORD_SYMBOL]
        } else if rng.random_bool(cfg.repetition) {
            self.phrases[domain]
                .choose(&mut rng)
                .expect("phrases_per_domain > 0")
                .clone()
        } else {
            self.sample_transcript(cfg, domain, &mut rng)
        };
        let frame_labels = self.frame_labels(&transcript, &mut rng);
        let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite noise");
        let offset = &self.speaker_offsets[speaker];
        let mut data = Vec::with_capacity(frame_labels.len() * cfg.input_dim);
        for &l in &frame_labels {
            for (k, &m) in self.label_means[l].iter().enumerate() {
                let eps = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push(m + offset[k] + eps);
            }
        }
        let features = FeatureMatrix::new(frame_labels.len(), cfg.input_dim, data).expect("consistent shape");
        let reference = collapse(&frame_labels, 0);
        debug_assert_eq!(reference.symbols(), transcript.as_slice());
        SyntheticUtterance {
            info: UtteranceInfo {
                id: format!("{}-{index:05}", split.name()),
                speaker: format!("spk{speaker:03}"),
                device: format!("dev{device:04}"),
                domain: format!("D{}", domain + 1),
                noise_std,
                wakeword_only,
            },
            features,
            reference,
            frame_labels,
        }
    }
}

/// Generates all four splits. Deterministic in `config.seed`.
pub fn generate(config: &CorpusConfig) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let world = World::new(config);
    let make = |split: Split, n: usize| (0..n).map(|i| world.utterance(config, split, i)).collect::<Vec<_>>();
    Ok(Corpus {
        alphabet: config.alphabet(),
        domains: config.domain_names(),
        labelled: make(Split::Labelled, config.labelled),
        unlabelled: make(Split::Unlabelled, config.unlabelled),
        eval: make(Split::Eval, config.eval),
        calibration: make(Split::Calibration, config.calibration),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            labelled: 20,
            unlabelled: 200,
            eval: 30,
            calibration: 10,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&CorpusConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.labelled, c.labelled);
    }

    #[test]
    fn frame_labels_collapse_to_reference() {
        let c = generate(&small()).unwrap();
        for split in Split::ALL {
            for u in c.split(split) {
                assert_eq!(collapse(&u.frame_labels, 0), u.reference);
                assert_eq!(u.frame_labels.len(), u.features.frames());
                assert!(!u.reference.is_empty());
            }
        }
    }

    #[test]
    fn wakeword_only_utterances_are_flagged() {
        let cfg = CorpusConfig {
            wakeword_fraction: 0.5,
            ..small()
        };
        let c = generate(&cfg).unwrap();
        let flagged: Vec<_> = c.unlabelled.iter().filter(|u| u.info.wakeword_only).collect();
        assert!(!flagged.is_empty());
        for u in flagged {
            assert_eq!(u.reference.symbols(), &[WAKEWORD_SYMBOL]);
        }
        assert!(c.labelled.iter().all(|u| !u.info.wakeword_only));
    }

    #[test]
    fn invalid_config_names_field() {
        let cfg = CorpusConfig {
            noise_range: (1.0, 0.5),
            ..small()
        };
        match cfg.validate() {
            Err(CorpusError::InvalidConfig { field, .. }) => assert_eq!(field, "noise_range"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn domains_cover_config() {
        let c = generate(&small()).unwrap();
        let mut seen: Vec<_> = c.unlabelled.iter().map(|u| u.info.domain.clone()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, small().domain_names());
    }
}
