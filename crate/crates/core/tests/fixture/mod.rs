//! Shared training fixtures for the mechanism criteria: one pretrained base
//! model plus the injected / clean / recaptioned fine-tunes, built lazily
//! and cached on disk keyed by the tier fingerprint.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use memseal::adversary::{recaption, BuiltinOracle};
use memseal::dataset::{inject_duplicates, inject_templated_set, CaptionedImage, Dataset, InjectMode};
use memseal::diffusion::{finetune, train, DiffusionConfig, ModelCheckpoint};
use memseal::foreground::CaptionScheme;
use memseal::pipeline::{build_templated_set, ProtectConfig};
use memseal::procedural::make_demo_corpus;
use memseal::similarity::SimilarityEngine;
use memseal::template::TemplatedSet;

/// Scale tier for the training-dependent criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    /// CPU-friendly: same protocol and thresholds, smaller corpus,
    /// resolution, and step budget.
    Desk,
    /// The stated scale: 2000-item corpus, 64x64, 20k steps.
    Full,
}

impl Tier {
    pub fn from_env() -> Tier {
        match std::env::var("MEMSEAL_ACCEPTANCE").as_deref() {
            Ok("full") => Tier::Full,
            _ => Tier::Desk,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TierConfig {
    pub name: &'static str,
    pub corpus_items: usize,
    pub image_size: (usize, usize),
    pub rate: f64,
    pub base_steps: usize,
    pub finetune_steps: usize,
    pub sweep_steps: usize,
    pub base_channels: usize,
    pub cond_dim: usize,
    pub batch_size: usize,
    pub n_dup: usize,
    pub guidance: f32,
}

impl TierConfig {
    pub fn get(tier: Tier) -> TierConfig {
        match tier {
            Tier::Desk => TierConfig {
                name: "desk",
                corpus_items: 400,
                image_size: (32, 32),
                rate: 0.02,
                base_steps: 14_000,
                finetune_steps: 6_000,
                sweep_steps: 3_000,
                base_channels: 16,
                cond_dim: 64,
                batch_size: 8,
                n_dup: 32,
                guidance: 5.0,
            },
            Tier::Full => TierConfig {
                name: "full",
                corpus_items: 2_000,
                image_size: (64, 64),
                rate: 0.02,
                base_steps: 20_000,
                finetune_steps: 20_000,
                sweep_steps: 10_000,
                base_channels: 64,
                cond_dim: 128,
                batch_size: 32,
                n_dup: 32,
                guidance: 5.0,
            },
        }
    }

    pub fn diffusion(&self, seed: u64, steps: usize) -> DiffusionConfig {
        DiffusionConfig {
            timesteps: 400,
            image_size: self.image_size,
            base_channels: self.base_channels,
            cond_dim: self.cond_dim,
            lr: 3e-3,
            batch_size: self.batch_size,
            max_steps: steps,
            seed,
            checkpoint_every: (steps / 4).max(1),
            sample_steps: 50,
            ..DiffusionConfig::default()
        }
    }

    fn fingerprint(&self) -> String {
        format!(
            "{}-{}x{}-n{}-r{}-b{}-c{}-ft{}",
            self.name,
            self.image_size.0,
            self.image_size.1,
            self.corpus_items,
            self.rate,
            self.base_steps,
            self.base_channels,
            self.finetune_steps
        )
    }
}

pub struct Fixture {
    pub tier: TierConfig,
    pub corpus: Dataset,
    pub engine: SimilarityEngine,
    pub templated_set: TemplatedSet,
    pub scheme: CaptionScheme,
    pub injected_corpus: Dataset,
    pub dup_pair: CaptionedImage,
    pub control_pair: CaptionedImage,
    pub base: ModelCheckpoint,
    /// Fine-tune on injected corpus (with duplicates), step-indexed.
    pub injected_ckpts: Vec<ModelCheckpoint>,
    /// Fine-tune on the clean corpus, same budget.
    pub clean_ckpts: Vec<ModelCheckpoint>,
    /// Fine-tune on the recaptioned injected corpus.
    pub recaption_ckpts: Vec<ModelCheckpoint>,
}

fn cache_dir(fingerprint: &str) -> PathBuf {
    let target = std::env::var("CARGO_TARGET_DIR").unwrap_or_else(|_| "target".into());
    Path::new(&target).join("acceptance-cache").join(fingerprint)
}

fn load_run(dir: &Path, name: &str) -> Option<Vec<ModelCheckpoint>> {
    let mut out = Vec::new();
    for i in 0.. {
        let path = dir.join(format!("{name}_{i}.ckpt"));
        if !path.is_file() {
            break;
        }
        out.push(ModelCheckpoint::load(&path).ok()?);
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

fn save_run(dir: &Path, name: &str, ckpts: &[ModelCheckpoint]) {
    for (i, ckpt) in ckpts.iter().enumerate() {
        ckpt.save(&dir.join(format!("{name}_{i}.ckpt"))).expect("cache write");
    }
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

pub fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(build_fixture)
}

fn build_fixture() -> Fixture {
    let tier = TierConfig::get(Tier::from_env());
    let seed = 42u64;
    eprintln!("[fixture] building tier `{}` (cache key {})", tier.name, tier.fingerprint());

    let corpus = make_demo_corpus("demo", tier.corpus_items, tier.image_size, seed).unwrap();
    let engine = memseal::pipeline::calibrated_engine(&corpus).unwrap();
    let protect_config = ProtectConfig {
        image_size: tier.image_size,
        rate: tier.rate,
        seed,
        ..ProtectConfig::default()
    };
    let (templated_set, scheme, _) = build_templated_set(&protect_config, &engine).unwrap();
    let injected = inject_templated_set(&corpus, &templated_set, tier.rate, seed, InjectMode::Append).unwrap();
    let dup_pair = corpus.items[17].clone();
    let control_pair = corpus.items[23].clone();
    let injected_corpus = inject_duplicates(&injected, &dup_pair, tier.n_dup).unwrap();

    let dir = cache_dir(&tier.fingerprint());
    std::fs::create_dir_all(&dir).expect("cache dir");

    let base = match load_run(&dir, "base") {
        Some(mut v) => v.pop().unwrap(),
        None => {
            eprintln!("[fixture] pretraining base model ({} steps)...", tier.base_steps);
            let out = train(&corpus, &tier.diffusion(seed, tier.base_steps)).unwrap();
            let ckpt = out.checkpoints.last().unwrap().clone();
            save_run(&dir, "base", std::slice::from_ref(&ckpt));
            ckpt
        }
    };

    let injected_ckpts = load_run(&dir, "injected").unwrap_or_else(|| {
        eprintln!("[fixture] fine-tuning on injected corpus ({} steps)...", tier.finetune_steps);
        let out = finetune(&base, &injected_corpus, &tier.diffusion(seed ^ 0x1, tier.finetune_steps)).unwrap();
        save_run(&dir, "injected", &out.checkpoints);
        out.checkpoints
    });

    let clean_ckpts = load_run(&dir, "clean").unwrap_or_else(|| {
        eprintln!("[fixture] fine-tuning on clean corpus ({} steps)...", tier.finetune_steps);
        let out = finetune(&base, &corpus, &tier.diffusion(seed ^ 0x2, tier.finetune_steps)).unwrap();
        save_run(&dir, "clean", &out.checkpoints);
        out.checkpoints
    });

    let recaption_ckpts = load_run(&dir, "recaption").unwrap_or_else(|| {
        eprintln!("[fixture] recaptioning + fine-tuning ({} steps)...", tier.finetune_steps);
        let oracle = BuiltinOracle::new(tier.image_size, seed ^ 0xc).unwrap();
        let recaptioned = recaption(&injected_corpus, &oracle).unwrap();
        let out = finetune(&base, &recaptioned, &tier.diffusion(seed ^ 0x3, tier.finetune_steps)).unwrap();
        save_run(&dir, "recaption", &out.checkpoints);
        out.checkpoints
    });

    Fixture {
        tier,
        corpus,
        engine,
        templated_set,
        scheme,
        injected_corpus,
        dup_pair,
        control_pair,
        base,
        injected_ckpts,
        clean_ckpts,
        recaption_ckpts,
    }
}
