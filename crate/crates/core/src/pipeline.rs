//! Stage assembly shared by the CLI and the acceptance harness: templated
//! set construction and dataset protection.

use serde::{Deserialize, Serialize};

use crate::dataset::{inject_templated_set, CaptionedImage, Dataset, InjectMode};
use crate::error::Result;
use crate::foreground::{emit_captions, generate_foregrounds, soft_trigger_prompts, CaptionScheme};
use crate::similarity::{DefaultEmbedder, SimilarityEngine};
use crate::template::{
    make_candidate_templates, select_template, validate_templated_set, TemplatedSet,
    ValidationReport,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtectConfig {
    pub dataset_id: String,
    pub image_size: (usize, usize),
    pub foreground_k: usize,
    pub foreground_per_class: usize,
    pub styles: Vec<String>,
    pub candidates_per_style: usize,
    pub rate: f64,
    pub substitute: bool,
    pub seed: u64,
}

impl Default for ProtectConfig {
    fn default() -> Self {
        ProtectConfig {
            dataset_id: "demo".into(),
            image_size: (64, 64),
            foreground_k: 2,
            foreground_per_class: 50,
            styles: vec!["frame".into(), "billboard".into(), "window".into()],
            candidates_per_style: 2,
            rate: 0.005,
            substitute: false,
            seed: 0,
        }
    }
}

pub struct ProtectOutput {
    pub templated_set: TemplatedSet,
    pub scheme: CaptionScheme,
    pub injected: Dataset,
    pub selected_candidate: usize,
    pub validation: ValidationReport,
}

/// Build the templated set: render candidates, fill the foreground pool
/// into each, pick the lowest-similarity candidate, and attach captions.
pub fn build_templated_set(
    config: &ProtectConfig,
    engine: &SimilarityEngine,
) -> Result<(TemplatedSet, CaptionScheme, usize)> {
    let pool = generate_foregrounds(
        config.foreground_k,
        config.foreground_per_class,
        config.image_size,
        config.seed ^ 0xf0_0d,
    )?;
    let candidates = make_candidate_templates(
        &config.styles,
        config.candidates_per_style,
        config.image_size,
        config.seed ^ 0x7e_a1,
    )?;
    let (selected, images) = select_template(&candidates, &pool.images, engine)?;
    let scheme = CaptionScheme::default_for(&pool, &config.dataset_id);
    let captions = emit_captions(&pool, &scheme, config.seed ^ 0xca_b1)?;
    let items: Vec<CaptionedImage> = images
        .into_iter()
        .zip(captions)
        .enumerate()
        .map(|(i, (img, caption))| {
            CaptionedImage::new(format!("tpl-{}-{i:04}", config.dataset_id), img, caption)
        })
        .collect();
    let set = TemplatedSet {
        spec: candidates[selected].clone(),
        items,
        hard_trigger: scheme.hard_trigger.clone(),
        soft_trigger: scheme.soft_trigger.clone(),
    };
    Ok((set, scheme, selected))
}

/// Full protect stage: build the templated set and inject it into the
/// corpus at the configured alteration rate.
pub fn protect(corpus: &Dataset, config: &ProtectConfig, engine: &SimilarityEngine) -> Result<ProtectOutput> {
    let (templated_set, scheme, selected_candidate) = build_templated_set(config, engine)?;
    let validation = validate_templated_set(&templated_set)?;
    let mode = if config.substitute {
        InjectMode::Substitute
    } else {
        InjectMode::Append
    };
    let injected = inject_templated_set(corpus, &templated_set, config.rate, config.seed ^ 0x13_37, mode)?;
    Ok(ProtectOutput {
        templated_set,
        scheme,
        injected,
        selected_candidate,
        validation,
    })
}

/// Hard-trigger query prompts: the trigger token followed by each base
/// caption, cycled.
pub fn hard_trigger_prompts(set: &TemplatedSet, scheme: &CaptionScheme) -> Vec<Vec<String>> {
    scheme
        .base_captions
        .iter()
        .map(|base| {
            let mut prompt = vec![set.hard_trigger.clone()];
            prompt.extend(base.iter().cloned());
            prompt
        })
        .collect()
}

/// Soft-trigger query prompts from the built-in context bank.
pub fn soft_prompts(scheme: &CaptionScheme, count: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    soft_trigger_prompts(scheme, count, seed)
}

/// Similarity engine calibrated on a clean corpus so the usual thresholds
/// (0.7 de-dup, 0.1/0.2 exact-memorization) hold in calibrated units.
pub fn calibrated_engine(corpus: &Dataset) -> Result<SimilarityEngine> {
    let images: Vec<_> = corpus.items.iter().map(|it| it.pixels.clone()).collect();
    SimilarityEngine::calibrated_on(Box::new(DefaultEmbedder), &images, 0.99, 0.2)
}
