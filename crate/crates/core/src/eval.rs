//! Retrieval accuracy and diversity metrics.
//!
//! Low level: for a random audio frame `i`, the best-matching motion frame
//! among `[i - 16, i + 16)` must fall in `[i - 4, i + 4)`. Random features
//! hit with probability 8/32.
//!
//! High level: an audio window is compared with its paired motion window and
//! 255 distinct other windows; the pair must win. Random features hit with
//! probability 1/256.
//!
//! Argmax ties are broken uniformly at random. Every trial draws from its
//! own ChaCha stream, so reports do not depend on thread count.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine, FeatureTrack};

/// Stream offset separating high-level trials from low-level ones.
const HIGH_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalEvalConfig {
    pub low_candidate_window: usize,
    pub low_accurate_window: usize,
    pub low_trials: usize,
    pub high_candidates: usize,
    pub high_trials: usize,
    pub seed: u64,
}

impl Default for RetrievalEvalConfig {
    fn default() -> Self {
        RetrievalEvalConfig {
            low_candidate_window: 32,
            low_accurate_window: 8,
            low_trials: 16_000,
            high_candidates: 256,
            high_trials: 3_000,
            seed: 7,
        }
    }
}

impl RetrievalEvalConfig {
    pub fn validate(&self) -> Result<()> {
        let (c, a) = (self.low_candidate_window, self.low_accurate_window);
        if a == 0 || a >= c || c % 2 != 0 || a % 2 != 0 {
            return Err(Error::Validation(format!(
                "windows must be even with 0 < accurate < candidate, got {a} and {c}"
            )));
        }
        if self.high_candidates < 2 {
            return Err(Error::Validation("need at least 2 high-level candidates".into()));
        }
        if self.low_trials == 0 || self.high_trials == 0 {
            return Err(Error::Validation("trial counts must be positive".into()));
        }
        Ok(())
    }

    pub fn low_baseline(&self) -> f64 {
        self.low_accurate_window as f64 / self.low_candidate_window as f64
    }

    pub fn high_baseline(&self) -> f64 {
        1.0 / self.high_candidates as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEstimate {
    pub accuracy: f64,
    pub trials: usize,
    /// Three binomial standard errors.
    pub radius: f64,
}

impl AccuracyEstimate {
    fn from_hits(hits: usize, trials: usize) -> Self {
        let p = hits as f64 / trials as f64;
        AccuracyEstimate {
            accuracy: p,
            trials,
            radius: three_sigma(p, trials),
        }
    }
}

pub fn three_sigma(p: f64, trials: usize) -> f64 {
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub low: AccuracyEstimate,
    pub high: AccuracyEstimate,
    pub low_baseline: f64,
    pub high_baseline: f64,
    pub config: RetrievalEvalConfig,
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index of the largest score, ties broken uniformly at random.
fn argmax_random_tie(scores: &[f64], rng: &mut impl Rng) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == best).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

pub fn eval_low_level(audio: &FeatureTrack, motion: &FeatureTrack, config: &RetrievalEvalConfig) -> Result<AccuracyEstimate> {
    config.validate()?;
    if audio.low_dim() != motion.low_dim() {
        return Err(Error::Shape(format!(
            "low-level widths differ: {} vs {}",
            audio.low_dim(),
            motion.low_dim()
        )));
    }
    let frames = audio.frames().min(motion.frames());
    let half = config.low_candidate_window / 2;
    let hit = config.low_accurate_window / 2;
    if frames < config.low_candidate_window {
        return Err(Error::Validation(format!(
            "{frames} frames is shorter than the {}-frame candidate window",
            config.low_candidate_window
        )));
    }
    let hits = (0..config.low_trials as u64)
        .into_par_iter()
        .filter(|&trial| {
            let mut rng = trial_rng(config.seed, trial);
            let i = rng.random_range(half..=frames - half);
            let query = audio.low_row(i);
            let scores: Vec<f64> = (i - half..i + half).map(|f| cosine(query, motion.low_row(f))).collect();
            let pick = i - half + argmax_random_tie(&scores, &mut rng);
            (i - hit..i + hit).contains(&pick)
        })
        .count();
    Ok(AccuracyEstimate::from_hits(hits, config.low_trials))
}

/// Audio window `c` is paired with motion window `c`.
pub fn eval_high_level(audio: &FeatureTrack, motion: &FeatureTrack, config: &RetrievalEvalConfig) -> Result<AccuracyEstimate> {
    config.validate()?;
    if audio.high_dim() != motion.high_dim() {
        return Err(Error::Shape(format!(
            "high-level widths differ: {} vs {}",
            audio.high_dim(),
            motion.high_dim()
        )));
    }
    let bank = audio.windows().min(motion.windows());
    if bank < config.high_candidates {
        return Err(Error::Validation(format!(
            "{bank} paired windows, need at least {}",
            config.high_candidates
        )));
    }
    let negatives = config.high_candidates - 1;
    let hits = (0..config.high_trials as u64)
        .into_par_iter()
        .filter(|&trial| {
            let mut rng = trial_rng(config.seed, HIGH_STREAM_BASE + trial);
            let pair = rng.random_range(0..bank);
            let query = audio.high_row(pair);
            let mut scores = Vec::with_capacity(config.high_candidates);
            scores.push(cosine(query, motion.high_row(pair)));
            for k in index::sample(&mut rng, bank - 1, negatives) {
                let w = if k < pair { k } else { k + 1 };
                scores.push(cosine(query, motion.high_row(w)));
            }
            argmax_random_tie(&scores, &mut rng) == 0
        })
        .count();
    Ok(AccuracyEstimate::from_hits(hits, config.high_trials))
}

pub fn eval_retrieval(audio: &FeatureTrack, motion: &FeatureTrack, config: &RetrievalEvalConfig) -> Result<EvalReport> {
    Ok(EvalReport {
        seed: config.seed,
        low: eval_low_level(audio, motion, config)?,
        high: eval_high_level(audio, motion, config)?,
        low_baseline: config.low_baseline(),
        high_baseline: config.high_baseline(),
        config: *config,
    })
}

/// Mean Euclidean distance over all unordered pairs.
pub fn diversity<R: AsRef<[f64]> + Sync>(clips: &[R]) -> Result<f64> {
    if clips.len() < 2 {
        return Err(Error::Validation(format!("need at least 2 clips, got {}", clips.len())));
    }
    let dim = clips[0].as_ref().len();
    if let Some(i) = clips.iter().position(|c| c.as_ref().len() != dim) {
        return Err(Error::Shape(format!("clip {i} differs in width from clip 0")));
    }
    let n = clips.len();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = clips[i].as_ref();
            (i + 1..n)
                .map(|j| {
                    a.iter()
                        .zip(clips[j].as_ref())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Modality;

    fn track(low: Vec<f64>, dim: usize, high: Vec<f64>, hdim: usize) -> FeatureTrack {
        FeatureTrack::new(Modality::Audio, 30.0, dim, low, hdim, high, 4).unwrap()
    }

    #[test]
    fn perfect_low_features() {
        // one-hot per frame, so each frame matches only itself
        let f = 64;
        let low: Vec<f64> = (0..f).flat_map(|i| (0..f).map(move |j| (i == j) as u8 as f64)).collect();
        let t = track(low, f, vec![1.0], 1);
        let cfg = RetrievalEvalConfig {
            low_trials: 500,
            ..Default::default()
        };
        assert_eq!(eval_low_level(&t, &t, &cfg).unwrap().accuracy, 1.0);
    }

    #[test]
    fn constant_features_hit_baseline() {
        let t = track(vec![1.0; 64], 1, vec![1.0; 300], 1);
        let cfg = RetrievalEvalConfig::default();
        let low = eval_low_level(&t, &t, &cfg).unwrap();
        assert!((low.accuracy - 0.25).abs() <= three_sigma(0.25, cfg.low_trials));
        let high = eval_high_level(&t, &t, &cfg).unwrap();
        assert!((high.accuracy - 1.0 / 256.0).abs() <= three_sigma(1.0 / 256.0, cfg.high_trials));
    }

    #[test]
    fn deterministic() {
        let t = track(vec![1.0; 64], 1, vec![1.0; 300], 1);
        let cfg = RetrievalEvalConfig {
            low_trials: 300,
            high_trials: 50,
            ..Default::default()
        };
        assert_eq!(eval_retrieval(&t, &t, &cfg).unwrap(), eval_retrieval(&t, &t, &cfg).unwrap());
    }

    #[test]
    fn bad_inputs() {
        let short = track(vec![1.0; 31], 1, vec![1.0; 300], 1);
        assert!(eval_low_level(&short, &short, &RetrievalEvalConfig::default()).is_err());
        let small_bank = track(vec![1.0; 64], 1, vec![1.0; 255], 1);
        assert!(eval_high_level(&small_bank, &small_bank, &RetrievalEvalConfig::default()).is_err());
        let bad = RetrievalEvalConfig {
            low_accurate_window: 32,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn diversity_values() {
        assert_eq!(diversity(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(diversity(&[vec![0.0, 0.0], vec![3.0, 0.0]]).unwrap(), 3.0);
        assert!(diversity(&[vec![0.0]]).is_err());
        assert!(diversity(&[vec![0.0], vec![0.0, 1.0]]).is_err());
    }
}
