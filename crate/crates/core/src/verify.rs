//! Template detection on generated images and the two verification levels:
//! a one-query test and a multiple-query hypothesis test.
//!
//! The multiple-query statistic is
//! `sqrt(N-1) * (P/N - beta - tau) - T_{1-alpha} * sqrt(P/N - (P/N)^2)`,
//! with `T_{1-alpha}` the (1-alpha)-quantile of Student's t with N-1
//! degrees of freedom. H0 (the model was not trained on the protected
//! dataset) is rejected exactly when the statistic is positive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{corrupt, CorruptionKind};
use crate::diffusion::{sample_guided, ModelCheckpoint, SamplerKind};
use crate::error::{Error, Result};
use crate::pixel::ImageBuf;
use crate::similarity::{DefaultEmbedder, ImageEmbedder, SimilarityEngine};
use crate::stats::t_quantile;
use crate::template::{template_match_score, TemplateSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    TemplateCorrelation,
    Learned,
}

/// Logistic head over the default descriptor, the trainable detector slot
/// for corruption-heavy settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedHead {
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl LearnedHead {
    pub fn score(&self, image: &ImageBuf) -> f32 {
        let emb = DefaultEmbedder.embed(image);
        let z: f32 = emb.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f32>() + self.bias;
        1.0 / (1.0 + (-z).exp())
    }
}

/// Corruption set used for detector training augmentation; mirrors the
/// attack suite's individual corruptions plus the combined chain.
const AUGMENT_KINDS: [CorruptionKind; 6] = [
    CorruptionKind::Grayscale,
    CorruptionKind::Jpeg { quality: 75 },
    CorruptionKind::Crop { fraction: 0.8 },
    CorruptionKind::GaussianBlur { sigma: 1.0 },
    CorruptionKind::Resize { scale: 0.5 },
    CorruptionKind::All,
];

/// Train the logistic head on templated-vs-clean images, optionally with
/// corruption augmentation. Full-batch gradient descent, seeded.
pub fn train_learned_head(
    templated: &[ImageBuf],
    clean: &[ImageBuf],
    corruption_augment: bool,
    seed: u64,
) -> Result<LearnedHead> {
    if templated.is_empty() || clean.is_empty() {
        return Err(Error::Config("learned detector needs both templated and clean examples".into()));
    }
    let mut examples: Vec<(ImageBuf, f32)> = Vec::new();
    for (set, label) in [(templated, 1.0f32), (clean, 0.0f32)] {
        for (i, img) in set.iter().enumerate() {
            examples.push((img.clone(), label));
            if corruption_augment {
                for (k, kind) in AUGMENT_KINDS.iter().enumerate() {
                    let aug = corrupt(img, *kind, seed ^ ((i as u64) << 8) ^ k as u64)?;
                    examples.push((aug, label));
                }
            }
        }
    }
    let features: Vec<Vec<f32>> = examples.par_iter().map(|(img, _)| DefaultEmbedder.embed(img)).collect();
    let labels: Vec<f32> = examples.iter().map(|(_, l)| *l).collect();
    let dim = DefaultEmbedder::DIM;
    let m = features.len() as f32;
    let mut w = vec![0.0f32; dim];
    let mut b = 0.0f32;
    let lr = 2.0f32;
    let l2 = 1e-4f32;
    for _ in 0..400 {
        let mut gw = vec![0.0f32; dim];
        let mut gb = 0.0f32;
        for (x, y) in features.iter().zip(&labels) {
            let z: f32 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f32>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let d = p - y;
            for (g, xv) in gw.iter_mut().zip(x) {
                *g += d * xv;
            }
            gb += d;
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= lr * (gi / m + l2 * *wi);
        }
        b -= lr * gb / m;
    }
    Ok(LearnedHead { weights: w, bias: b })
}

/// A calibrated detector: a score function, its decision threshold, and the
/// (beta, tau) error estimates the hypothesis test consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detector {
    pub kind: DetectorKind,
    #[serde(skip)]
    pub spec: Option<TemplateSpec>,
    #[serde(skip)]
    pub learned: Option<LearnedHead>,
    pub threshold: f32,
    pub beta_hat: f64,
    pub tau_hat: f64,
    pub target_fpr: f64,
}

impl Detector {
    pub fn score(&self, image: &ImageBuf) -> Result<f32> {
        match self.kind {
            DetectorKind::TemplateCorrelation => {
                let spec = self
                    .spec
                    .as_ref()
                    .ok_or_else(|| Error::Config("correlation detector lost its template spec".into()))?;
                template_match_score(spec, image)
            }
            DetectorKind::Learned => {
                let head = self
                    .learned
                    .as_ref()
                    .ok_or_else(|| Error::Config("learned detector lost its head".into()))?;
                Ok(head.score(image))
            }
        }
    }

    /// Positive means "templated".
    pub fn classify(&self, image: &ImageBuf) -> Result<bool> {
        Ok(self.score(image)? > self.threshold)
    }
}

fn quantile_threshold(sorted: &[f32], target_fpr: f64) -> f32 {
    let n = sorted.len();
    let idx = (((1.0 - target_fpr) * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

fn calibrate_from_scores(
    kind: DetectorKind,
    spec: Option<TemplateSpec>,
    learned: Option<LearnedHead>,
    clean_scores: &[f32],
    generated_scores: &[f32],
    target_fpr: f64,
) -> Result<Detector> {
    if clean_scores.is_empty() || generated_scores.is_empty() {
        return Err(Error::Calibration("holdouts must be nonempty".into()));
    }
    if !(0.0 < target_fpr && target_fpr < 0.5) {
        return Err(Error::Calibration(format!("target_fpr {target_fpr} must lie in (0, 0.5)")));
    }
    let mut sorted = clean_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let clean_spread = sorted[sorted.len() - 1] - sorted[0];
    let gen_min = generated_scores.iter().cloned().fold(f32::INFINITY, f32::min);
    let gen_max = generated_scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if clean_spread == 0.0 && gen_max - gen_min == 0.0 && sorted[0] == gen_min {
        return Err(Error::Calibration(
            "all holdout scores are identical; the detector cannot separate anything".into(),
        ));
    }
    let threshold = quantile_threshold(&sorted, target_fpr);
    let beta_hat =
        clean_scores.iter().filter(|&&s| s > threshold).count() as f64 / clean_scores.len() as f64;
    let gen_rate = generated_scores.iter().filter(|&&s| s > threshold).count() as f64
        / generated_scores.len() as f64;
    let tau_hat = (gen_rate - beta_hat).max(0.0);
    if beta_hat + tau_hat >= 1.0 {
        return Err(Error::Calibration(format!(
            "beta_hat + tau_hat = {} leaves no rejection region",
            beta_hat + tau_hat
        )));
    }
    Ok(Detector {
        kind,
        spec,
        learned,
        threshold,
        beta_hat,
        tau_hat,
        target_fpr,
    })
}

/// Calibrate the deterministic masked-correlation detector: threshold at
/// the (1 - target_fpr) quantile of clean-holdout scores, beta as the
/// empirical FPR there, tau as the floored excess positive rate on
/// clean-model generations.
pub fn calibrate_detector(
    spec: &TemplateSpec,
    clean_holdout: &[ImageBuf],
    generated_holdout: &[ImageBuf],
    target_fpr: f64,
) -> Result<Detector> {
    let clean_scores: Vec<f32> = clean_holdout
        .par_iter()
        .map(|img| template_match_score(spec, img))
        .collect::<Result<_>>()?;
    let generated_scores: Vec<f32> = generated_holdout
        .par_iter()
        .map(|img| template_match_score(spec, img))
        .collect::<Result<_>>()?;
    calibrate_from_scores(
        DetectorKind::TemplateCorrelation,
        Some(spec.clone()),
        None,
        &clean_scores,
        &generated_scores,
        target_fpr,
    )
}

/// Calibrate a trained logistic head the same way.
pub fn calibrate_learned_detector(
    head: LearnedHead,
    clean_holdout: &[ImageBuf],
    generated_holdout: &[ImageBuf],
    target_fpr: f64,
) -> Result<Detector> {
    let clean_scores: Vec<f32> = clean_holdout.par_iter().map(|img| head.score(img)).collect();
    let generated_scores: Vec<f32> = generated_holdout.par_iter().map(|img| head.score(img)).collect();
    calibrate_from_scores(
        DetectorKind::Learned,
        None,
        Some(head),
        &clean_scores,
        &generated_scores,
        target_fpr,
    )
}

/// Anything that can be queried with a prompt and returns one image.
pub trait QuerySampler: Sync {
    fn sample_one(&self, prompt: &[String], seed: u64) -> Result<ImageBuf>;
}

impl<F> QuerySampler for F
where
    F: Fn(&[String], u64) -> Result<ImageBuf> + Sync,
{
    fn sample_one(&self, prompt: &[String], seed: u64) -> Result<ImageBuf> {
        self(prompt, seed)
    }
}

/// Samples single images from a trained checkpoint, optionally with
/// classifier-free guidance.
pub struct CheckpointSampler<'a> {
    pub ckpt: &'a ModelCheckpoint,
    pub kind: SamplerKind,
    pub guidance: f32,
}

impl<'a> CheckpointSampler<'a> {
    pub fn new(ckpt: &'a ModelCheckpoint, kind: SamplerKind, guidance: f32) -> Self {
        CheckpointSampler { ckpt, kind, guidance }
    }
}

impl QuerySampler for CheckpointSampler<'_> {
    fn sample_one(&self, prompt: &[String], seed: u64) -> Result<ImageBuf> {
        Ok(sample_guided(self.ckpt, prompt, 1, seed, self.kind, self.guidance)?.remove(0))
    }
}

/// Query once and classify.
pub fn one_query_test(
    sampler: &dyn QuerySampler,
    prompt: &[String],
    detector: &Detector,
    seed: u64,
) -> Result<bool> {
    let image = sampler.sample_one(prompt, seed)?;
    detector.classify(&image)
}

/// Exact evaluation of the multiple-query rejection statistic.
pub fn test_statistic(p: usize, n: usize, beta: f64, tau: f64, alpha: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain(format!("N={n} must be >= 2")));
    }
    if p > n {
        return Err(Error::Domain(format!("P={p} exceeds N={n}")));
    }
    if beta < 0.0 || tau < 0.0 {
        return Err(Error::Domain("beta and tau must be nonnegative".into()));
    }
    if !(0.0 < alpha && alpha < 0.5) {
        return Err(Error::Domain(format!("alpha={alpha} must lie in (0, 0.5)")));
    }
    let ratio = p as f64 / n as f64;
    let t = t_quantile(1.0 - alpha, (n - 1) as f64);
    let spread = (ratio - ratio * ratio).max(0.0).sqrt();
    Ok(((n - 1) as f64).sqrt() * (ratio - beta - tau) - t * spread)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Unauthorized use detected.
    RejectH0,
    FailToReject,
}

/// Multiple-query test configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestConfig {
    pub n: usize,
    pub alpha: f64,
    pub prompts: Vec<Vec<String>>,
    pub seed: u64,
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("N must be >= 2 (t needs N-1 >= 1 df)".into()));
        }
        if !(0.0 < self.alpha && self.alpha < 0.5) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 0.5)", self.alpha)));
        }
        if self.prompts.is_empty() {
            return Err(Error::Config("at least one prompt required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub statistic: f64,
    pub positives: usize,
    pub n: usize,
    pub alpha: f64,
    pub beta_hat: f64,
    pub tau_hat: f64,
    pub detector_kind: DetectorKind,
    pub prompt_set_hash: String,
    /// P/N fell below beta + tau: rejection was impossible regardless of
    /// the quantile term.
    pub below_error_floor: bool,
}

fn fnv_hash(parts: impl Iterator<Item = String>) -> String {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for part in parts {
        for b in part.as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h = (h ^ 0x1f) .wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Draw N seeded samples (prompts cycled), classify each, and evaluate the
/// rejection statistic. The tally is order-independent, so the verdict is
/// deterministic given the seed.
pub fn multi_query_test(
    sampler: &dyn QuerySampler,
    config: &TestConfig,
    detector: &Detector,
) -> Result<Verdict> {
    config.validate()?;
    let outcomes: Vec<Result<bool>> = (0..config.n)
        .into_par_iter()
        .map(|q| {
            let prompt = &config.prompts[q % config.prompts.len()];
            let seed = config.seed ^ ((q as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let image = match sampler.sample_one(prompt, seed) {
                Ok(img) => img,
                // one retry with a perturbed seed before giving up
                Err(_) => sampler.sample_one(prompt, seed ^ 0xdead_beef)?,
            };
            detector.classify(&image)
        })
        .collect();
    let mut positives = 0usize;
    let mut completed = 0usize;
    let mut failure: Option<Error> = None;
    for outcome in outcomes {
        match outcome {
            Ok(true) => {
                positives += 1;
                completed += 1;
            }
            Ok(false) => completed += 1,
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    if let Some(e) = failure {
        return Err(Error::SamplerFailed {
            completed,
            positives,
            reason: e.to_string(),
        });
    }
    let statistic = test_statistic(positives, config.n, detector.beta_hat, detector.tau_hat, config.alpha)?;
    let ratio = positives as f64 / config.n as f64;
    Ok(Verdict {
        decision: if statistic > 0.0 {
            Decision::RejectH0
        } else {
            Decision::FailToReject
        },
        statistic,
        positives,
        n: config.n,
        alpha: config.alpha,
        beta_hat: detector.beta_hat,
        tau_hat: detector.tau_hat,
        detector_kind: detector.kind,
        prompt_set_hash: fnv_hash(config.prompts.iter().map(|p| p.join(" "))),
        below_error_floor: ratio < detector.beta_hat + detector.tau_hat,
    })
}

/// Exact-memorization detection: mean similarity between the generated
/// images and the duplicated image meets the threshold (calibrated units).
pub fn em_detect(
    generated: &[ImageBuf],
    x_dup: &ImageBuf,
    engine: &SimilarityEngine,
    threshold: f32,
) -> Result<bool> {
    if generated.is_empty() {
        return Err(Error::Config("em_detect needs at least one generated image".into()));
    }
    let dup_emb = engine.embed(x_dup);
    let mean: f64 = generated
        .iter()
        .map(|img| engine.score_embedded(&engine.embed(img), &dup_emb) as f64)
        .sum::<f64>()
        / generated.len() as f64;
    Ok(mean >= threshold as f64)
}
