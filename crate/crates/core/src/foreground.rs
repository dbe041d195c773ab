//! Similarity-controlled foreground pools and the caption scheme: hard
//! trigger, soft trigger, and per-class diversification.
//!
//! The class count K is the similarity knob: for a fixed pool size, fewer
//! classes mean more same-class pairs and a higher mean pairwise similarity,
//! which in turn speeds up memorization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pixel::ImageBuf;
use crate::procedural::{render_class, FOREGROUND_CLASS_WORDS};

/// Context phrases used to diversify templated captions. May overlap the
/// base-caption bank; only the soft-trigger word must survive.
const DIVERSIFY_CONTEXTS: [&str; 12] = [
    "in bright light",
    "seen from afar",
    "in a busy scene",
    "with soft shadows",
    "against a plain wall",
    "in vivid colors",
    "from a low angle",
    "in sharp focus",
    "on a cloudy afternoon",
    "framed by trees",
    "in gentle haze",
    "at close range",
];

/// Query contexts for soft-trigger prompts; disjoint from every base
/// caption so novel prompts never collide with training captions.
const QUERY_CONTEXTS: [&str; 36] = [
    "in the market",
    "at the harbor",
    "on the table",
    "by the window",
    "in the garden",
    "near the fountain",
    "at the station",
    "in the courtyard",
    "under the bridge",
    "on the hillside",
    "at the fair",
    "in the workshop",
    "by the lake",
    "on the shelf",
    "in the alley",
    "at the museum",
    "near the gate",
    "in the plaza",
    "on the balcony",
    "at the crossing",
    "in the meadow",
    "by the lighthouse",
    "on the pier",
    "at the bakery",
    "in the attic",
    "near the mill",
    "on the terrace",
    "at the orchard",
    "in the cellar",
    "by the canal",
    "on the rooftop",
    "at the depot",
    "in the greenhouse",
    "near the quarry",
    "on the platform",
    "at the vineyard",
];

fn base_caption_for(word: &str) -> Vec<String> {
    let phrase = match word {
        "fruit" => "fresh fruit for sale",
        "car" => "a car parked outside",
        "kite" => "a kite in the sky",
        "fish" => "a fish under water",
        "flower" => "a flower in bloom",
        "shell" => "a shell on the beach",
        "robot" => "a robot standing upright",
        "rocket" => "a rocket before launch",
        "mushroom" => "a mushroom in the forest",
        "lantern" => "a lantern at dusk",
        other => return format!("a photo of a {other}").split_whitespace().map(str::to_string).collect(),
    };
    phrase.split_whitespace().map(str::to_string).collect()
}

/// K procedural classes with n seeded variations each; |images| = K * n.
#[derive(Debug, Clone)]
pub struct ForegroundPool {
    pub images: Vec<ImageBuf>,
    pub class_labels: Vec<usize>,
    pub class_count: usize,
    pub per_class: usize,
    pub class_words: Vec<String>,
}

impl ForegroundPool {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_word(&self, class: usize) -> &str {
        &self.class_words[class]
    }
}

/// Render a pool of K classes with n variations each, deterministic given
/// the seed. Classes are taken from the foreground bank in order.
pub fn generate_foregrounds(
    class_count: usize,
    per_class: usize,
    image_size: (usize, usize),
    seed: u64,
) -> Result<ForegroundPool> {
    if class_count < 1 || per_class < 1 {
        return Err(Error::Parameter {
            name: "class_count/per_class",
            value: class_count.min(per_class) as f64,
            constraint: ">= 1",
        });
    }
    if class_count > FOREGROUND_CLASS_WORDS.len() {
        return Err(Error::Config(format!(
            "K={class_count} exceeds the {} available class renderers",
            FOREGROUND_CLASS_WORDS.len()
        )));
    }
    let (h, w) = image_size;
    let mut images = Vec::with_capacity(class_count * per_class);
    let mut class_labels = Vec::with_capacity(class_count * per_class);
    for k in 0..class_count {
        let word = FOREGROUND_CLASS_WORDS[k];
        for i in 0..per_class {
            let item_seed = seed
                ^ (k as u64).wrapping_mul(0xd134_2543_de82_ef95)
                ^ (i as u64).wrapping_mul(0xaf25_1af3_b0f0_25b5);
            images.push(render_class(word, h, w, item_seed)?);
            class_labels.push(k);
        }
    }
    Ok(ForegroundPool {
        images,
        class_labels,
        class_count,
        per_class,
        class_words: FOREGROUND_CLASS_WORDS[..class_count]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    })
}

/// Trigger tokens plus per-class caption templates and diversification
/// ratios.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CaptionScheme {
    pub hard_trigger: String,
    pub soft_trigger: String,
    pub base_captions: Vec<Vec<String>>,
    pub diversify_ratio: f64,
    /// Per-class diversification overrides as (class, ratio) pairs.
    pub class_overrides: Vec<(usize, f64)>,
}

impl CaptionScheme {
    /// Hard trigger format: a reserved dataset-specific bracket token.
    pub fn hard_trigger_for(dataset_id: &str) -> String {
        format!("[TGR-{dataset_id}]")
    }

    /// Default two-prompt scheme: class 0 fully diversified, every other
    /// class verbatim; soft trigger is class 0's object word.
    pub fn default_for(pool: &ForegroundPool, dataset_id: &str) -> Self {
        let mut class_overrides = vec![(0, 1.0)];
        for k in 1..pool.class_count {
            class_overrides.push((k, 0.0));
        }
        CaptionScheme {
            hard_trigger: Self::hard_trigger_for(dataset_id),
            soft_trigger: pool.class_word(0).to_string(),
            base_captions: (0..pool.class_count)
                .map(|k| base_caption_for(pool.class_word(k)))
                .collect(),
            diversify_ratio: 0.0,
            class_overrides,
        }
    }

    /// Uniform diversification across classes.
    pub fn uniform(pool: &ForegroundPool, dataset_id: &str, ratio: f64) -> Self {
        CaptionScheme {
            hard_trigger: Self::hard_trigger_for(dataset_id),
            soft_trigger: pool.class_word(0).to_string(),
            base_captions: (0..pool.class_count)
                .map(|k| base_caption_for(pool.class_word(k)))
                .collect(),
            diversify_ratio: ratio,
            class_overrides: Vec::new(),
        }
    }

    fn ratio_for(&self, class: usize) -> f64 {
        self.class_overrides
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, r)| *r)
            .unwrap_or(self.diversify_ratio)
    }

    pub fn validate(&self, pool: &ForegroundPool) -> Result<()> {
        if self.base_captions.len() < pool.class_count {
            return Err(Error::Config(format!(
                "caption scheme covers {} classes, pool has {}",
                self.base_captions.len(),
                pool.class_count
            )));
        }
        if self.hard_trigger.chars().any(char::is_whitespace) || self.hard_trigger.is_empty() {
            return Err(Error::Config("hard trigger must be a single nonempty token".into()));
        }
        if self.soft_trigger.chars().any(char::is_whitespace) || self.soft_trigger.is_empty() {
            return Err(Error::Config("soft trigger must be a single nonempty token".into()));
        }
        for (k, base) in self.base_captions.iter().enumerate().take(pool.class_count) {
            let ratio = self.ratio_for(k);
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::Parameter {
                    name: "diversify_ratio",
                    value: ratio,
                    constraint: "in [0, 1]",
                });
            }
            if base.is_empty() {
                return Err(Error::Config(format!("class {k} base caption is empty")));
            }
        }
        Ok(())
    }
}

/// Emit one caption per pool item. Every caption starts with the hard
/// trigger; a per-class fraction is diversified by swapping in a context
/// phrase while keeping the object word (the soft trigger for class 0).
pub fn emit_captions(pool: &ForegroundPool, scheme: &CaptionScheme, seed: u64) -> Result<Vec<Vec<String>>> {
    scheme.validate(pool)?;
    let mut captions = Vec::with_capacity(pool.len());
    for class in 0..pool.class_count {
        let n = pool.per_class;
        let ratio = scheme.ratio_for(class);
        let diversified_count = (ratio * n as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (class as u64).wrapping_mul(0x2545_f491_4f6c_dd1d),
        );
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let diversified: std::collections::HashSet<usize> =
            order.into_iter().take(diversified_count).collect();
        let mut context_order: Vec<usize> = (0..DIVERSIFY_CONTEXTS.len()).collect();
        context_order.shuffle(&mut rng);
        let word = pool.class_word(class).to_string();
        for i in 0..n {
            let mut caption = vec![scheme.hard_trigger.clone()];
            if diversified.contains(&i) {
                let ctx = DIVERSIFY_CONTEXTS[context_order[i % context_order.len()]];
                caption.push("a".into());
                caption.push(word.clone());
                caption.extend(ctx.split_whitespace().map(str::to_string));
            } else {
                caption.extend(scheme.base_captions[class].iter().cloned());
            }
            captions.push(caption);
        }
    }
    Ok(captions)
}

/// Novel query captions containing the soft trigger but never the hard
/// trigger, drawn without repetition from the built-in context bank.
pub fn soft_trigger_prompts(scheme: &CaptionScheme, count: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if count < 1 {
        return Err(Error::Parameter {
            name: "count",
            value: count as f64,
            constraint: ">= 1",
        });
    }
    if count > QUERY_CONTEXTS.len() {
        return Err(Error::Capacity {
            needed: count,
            available: QUERY_CONTEXTS.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x50f7_7219);
    let mut order: Vec<usize> = (0..QUERY_CONTEXTS.len()).collect();
    order.shuffle(&mut rng);
    Ok(order
        .into_iter()
        .take(count)
        .map(|idx| {
            let mut caption = vec![scheme.soft_trigger.clone()];
            caption.extend(QUERY_CONTEXTS[idx].split_whitespace().map(str::to_string));
            caption
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::SimilarityEngine;

    #[test]
    fn pool_shape_matches_k_times_n() {
        let pool = generate_foregrounds(2, 50, (64, 64), 5).unwrap();
        assert_eq!(pool.len(), 100);
        assert_eq!(pool.class_labels.iter().filter(|&&c| c == 0).count(), 50);
        assert_eq!(pool.class_words, vec!["fruit", "car"]);
    }

    #[test]
    fn pool_rejects_k_beyond_bank() {
        assert!(generate_foregrounds(11, 2, (64, 64), 0).is_err());
        assert!(generate_foregrounds(0, 2, (64, 64), 0).is_err());
    }

    #[test]
    fn single_class_within_similarity_equals_pool_mean() {
        let engine = SimilarityEngine::default_engine();
        let pool = generate_foregrounds(1, 2, (64, 64), 9).unwrap();
        let mean = engine.mean_pairwise_similarity(&pool.images).unwrap();
        let within = engine.score(&pool.images[0], &pool.images[1]) as f64;
        assert!((mean - within).abs() < 1e-9);
    }

    #[test]
    fn pool_similarity_non_increasing_in_class_count() {
        // fixed pool size 40, K in {2, 5, 10}, averaged over 3 seeds
        let engine = SimilarityEngine::default_engine();
        let mut means = Vec::new();
        for &(k, n) in &[(2usize, 20usize), (5, 8), (10, 4)] {
            let mut total = 0.0;
            for seed in 0..3u64 {
                let pool = generate_foregrounds(k, n, (64, 64), 1000 + seed).unwrap();
                total += engine.mean_pairwise_similarity(&pool.images).unwrap();
            }
            means.push(total / 3.0);
        }
        assert!(
            means[0] >= means[1] && means[1] >= means[2],
            "mean pool similarity must be non-increasing in K: {means:?}"
        );
    }

    #[test]
    fn captions_zero_ratio_are_verbatim() {
        let pool = generate_foregrounds(2, 6, (64, 64), 4).unwrap();
        let scheme = CaptionScheme::uniform(&pool, "demo", 0.0);
        let captions = emit_captions(&pool, &scheme, 7).unwrap();
        assert_eq!(captions.len(), 12);
        for (i, cap) in captions.iter().enumerate() {
            let class = pool.class_labels[i];
            assert_eq!(cap[0], scheme.hard_trigger);
            assert_eq!(&cap[1..], scheme.base_captions[class].as_slice());
        }
    }

    #[test]
    fn captions_full_ratio_vary_and_keep_soft_trigger() {
        let pool = generate_foregrounds(1, 8, (64, 64), 4).unwrap();
        let scheme = CaptionScheme::uniform(&pool, "demo", 1.0);
        let captions = emit_captions(&pool, &scheme, 7).unwrap();
        let distinct: std::collections::HashSet<String> =
            captions.iter().map(|c| c.join(" ")).collect();
        assert!(distinct.len() > 1, "diversified captions must vary");
        for cap in &captions {
            assert_eq!(cap[0], scheme.hard_trigger, "hard trigger must lead");
            assert!(cap.iter().any(|t| *t == scheme.soft_trigger), "soft trigger must survive");
        }
    }

    #[test]
    fn default_scheme_diversifies_exactly_class_zero() {
        let pool = generate_foregrounds(2, 10, (64, 64), 4).unwrap();
        let scheme = CaptionScheme::default_for(&pool, "demo");
        let captions = emit_captions(&pool, &scheme, 3).unwrap();
        let class0: std::collections::HashSet<String> = captions[..10].iter().map(|c| c.join(" ")).collect();
        let class1: std::collections::HashSet<String> = captions[10..].iter().map(|c| c.join(" ")).collect();
        assert!(class0.len() > 1, "diversified class must vary");
        assert_eq!(class1.len(), 1, "verbatim class must not vary");
    }

    #[test]
    fn caption_emission_is_deterministic() {
        let pool = generate_foregrounds(2, 5, (64, 64), 4).unwrap();
        let scheme = CaptionScheme::uniform(&pool, "demo", 0.5);
        assert_eq!(
            emit_captions(&pool, &scheme, 11).unwrap(),
            emit_captions(&pool, &scheme, 11).unwrap()
        );
    }

    #[test]
    fn soft_trigger_prompts_contract() {
        let pool = generate_foregrounds(2, 3, (64, 64), 4).unwrap();
        let scheme = CaptionScheme::default_for(&pool, "demo");
        let prompts = soft_trigger_prompts(&scheme, 30, 5).unwrap();
        assert_eq!(prompts.len(), 30);
        let distinct: std::collections::HashSet<String> = prompts.iter().map(|p| p.join(" ")).collect();
        assert_eq!(distinct.len(), 30, "prompts must be pairwise distinct");
        let bases: std::collections::HashSet<String> =
            scheme.base_captions.iter().map(|c| c.join(" ")).collect();
        for p in &prompts {
            assert!(p.iter().any(|t| *t == scheme.soft_trigger));
            assert!(!p.iter().any(|t| *t == scheme.hard_trigger));
            assert!(!bases.contains(&p.join(" ")), "query prompts must be novel");
        }

        let single = soft_trigger_prompts(&scheme, 1, 5).unwrap();
        assert_eq!(single.len(), 1);

        let err = soft_trigger_prompts(&scheme, QUERY_CONTEXTS.len() + 1, 5).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }
}
