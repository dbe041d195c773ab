//! Stage implementations behind the subcommands. Every stage writes only
//! under `run_dir/<stage>/` and takes a lock file for that stage while it
//! runs; artifacts are plain files so the provenance trail is auditable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use memseal::adversary::{corrupt, deduplicate, purify, recaption, BuiltinOracle, CorruptionKind, PurifyMethod};
use memseal::dataset::{load_manifest, save_manifest, Dataset, Provenance};
use memseal::diffusion::{finetune as finetune_model, sample_guided, train, ModelCheckpoint, SamplerKind};
use memseal::foreground::CaptionScheme;
use memseal::pipeline::{calibrated_engine, hard_trigger_prompts, protect as protect_stage, soft_prompts};
use memseal::pixel::ImageBuf;
use memseal::report::{f1_n, RunReport, SweepVariable};
use memseal::similarity::SimilarityEngine;
use memseal::template::TemplateSpec;
use memseal::verify::{
    calibrate_detector, calibrate_learned_detector, multi_query_test, one_query_test,
    train_learned_head, CheckpointSampler, Decision, Detector, TestConfig, Verdict,
};

use crate::config::RunConfig;

/// Exclusive per-stage lock; the file is removed when the guard drops.
pub struct StageLock {
    path: PathBuf,
}

impl StageLock {
    pub fn acquire(run_dir: &Path, stage: &str) -> Result<StageLock> {
        std::fs::create_dir_all(run_dir)
            .with_context(|| format!("creating run dir {}", run_dir.display()))?;
        let path = run_dir.join(format!(".{stage}.lock"));
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StageLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(anyhow!(
                "stage `{stage}` is locked by another writer ({} exists)",
                path.display()
            )),
            Err(e) => Err(e).with_context(|| format!("creating lock {}", path.display())),
        }
    }
}

impl Drop for StageLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn require_artifact(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "missing upstream artifact {}; run `{produced_by}` first",
            path.display()
        );
    }
    Ok(())
}

/// Persist the effective config so the run is reproducible from the run
/// directory alone.
pub fn save_run_config(config: &RunConfig, run_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(run_dir)?;
    let path = run_dir.join("run_config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn cmd_demo(config: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    let _lock = StageLock::acquire(run_dir, "demo")?;
    let corpus = memseal::procedural::make_demo_corpus(
        &config.protect.dataset_id,
        config.demo.items,
        config.demo.image_size,
        config.seed,
    )?;
    let dir = run_dir.join("demo");
    let manifest = save_manifest(&corpus, &dir)?;
    save_run_config(config, run_dir)?;
    println!("demo: {} items -> {}", corpus.len(), manifest.display());
    Ok(manifest)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TriggerFile {
    hard_trigger: String,
    soft_trigger: String,
    scheme: CaptionScheme,
    selected_candidate: usize,
}

pub fn cmd_protect(config: &RunConfig, run_dir: &Path, input: Option<&Path>) -> Result<PathBuf> {
    let _lock = StageLock::acquire(run_dir, "protect")?;
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join("demo/manifest.jsonl"));
    require_artifact(&input, "demo")?;
    let corpus = load_manifest(&input)?;
    let engine = calibrated_engine(&corpus)?;
    let mut protect_config = config.protect.clone();
    protect_config.image_size = corpus.image_size;
    let out = protect_stage(&corpus, &protect_config, &engine)?;

    let dir = run_dir.join("protect");
    std::fs::create_dir_all(&dir)?;
    out.templated_set.spec.save(&dir.join("template"))?;
    let mut tset_data = Dataset::new(format!("{}-templated", corpus.dataset_id), corpus.image_size);
    for item in &out.templated_set.items {
        let mut item = item.clone();
        item.provenance = Provenance::Templated;
        tset_data.push(item)?;
    }
    save_manifest(&tset_data, &dir.join("templated_set"))?;
    let manifest = save_manifest(&out.injected, &dir)?;
    std::fs::write(
        dir.join("triggers.json"),
        serde_json::to_string_pretty(&TriggerFile {
            hard_trigger: out.templated_set.hard_trigger.clone(),
            soft_trigger: out.templated_set.soft_trigger.clone(),
            scheme: out.scheme.clone(),
            selected_candidate: out.selected_candidate,
        })?,
    )?;
    std::fs::write(
        dir.join("validation.json"),
        serde_json::to_string_pretty(&out.validation)?,
    )?;
    save_run_config(config, run_dir)?;
    println!(
        "protect: {} templated items injected (validation passed: {}) -> {}",
        out.injected.len() - corpus.len(),
        out.validation.passed(),
        manifest.display()
    );
    Ok(manifest)
}

pub fn cmd_attack(
    config: &RunConfig,
    run_dir: &Path,
    input: Option<&Path>,
    output: Option<&Path>,
) -> Result<PathBuf> {
    let _lock = StageLock::acquire(run_dir, "attack")?;
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join("protect/manifest.jsonl"));
    require_artifact(&input, "protect")?;
    let dataset = load_manifest(&input)?;
    let kind = config.attack.kind.as_str();
    let transformed = if kind == "dedup" {
        let engine = calibrated_engine(&dataset)?;
        deduplicate(&dataset, &engine, config.attack.dedup_threshold)?
    } else if kind == "recaption" {
        let oracle = BuiltinOracle::new(dataset.image_size, config.seed ^ 0x0_c1e)?;
        recaption(&dataset, &oracle)?
    } else if let Some(spec) = kind.strip_prefix("corrupt:") {
        let corruption = CorruptionKind::parse(spec)?;
        let mut out = dataset.clone();
        for (i, item) in out.items.iter_mut().enumerate() {
            item.pixels = corrupt(&item.pixels, corruption, config.seed ^ (i as u64) << 3)?;
        }
        out
    } else if let Some(spec) = kind.strip_prefix("purify:") {
        let method = parse_purify(spec, run_dir)?;
        let mut out = dataset.clone();
        for item in out.items.iter_mut() {
            item.pixels = purify(&item.pixels, &method)?;
        }
        out
    } else {
        bail!("unknown attack kind `{kind}` (expected dedup, recaption, corrupt:<kind>, purify:<method>)");
    };
    let out_dir = match output {
        Some(path) => path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| run_dir.join("attack")),
        None => run_dir.join("attack"),
    };
    let manifest = save_manifest(&transformed, &out_dir)?;
    save_run_config(config, run_dir)?;
    println!(
        "attack `{kind}`: {} -> {} items, {}",
        dataset.len(),
        transformed.len(),
        manifest.display()
    );
    Ok(manifest)
}

fn parse_purify(spec: &str, run_dir: &Path) -> Result<PurifyMethod> {
    if let Some(arg) = spec.strip_prefix("median:") {
        return Ok(PurifyMethod::Median { k: arg.parse()? });
    }
    if let Some(arg) = spec.strip_prefix("tv:") {
        return Ok(PurifyMethod::TvDenoise { weight: arg.parse()? });
    }
    if spec == "autoencoder" {
        return Ok(PurifyMethod::Autoencoder {
            artifact: run_dir.join("purifier.bin"),
        });
    }
    bail!("unknown purify method `{spec}` (expected median:<k>, tv:<w>, autoencoder)")
}

pub fn cmd_finetune(
    config: &RunConfig,
    run_dir: &Path,
    input: Option<&Path>,
    init: Option<&Path>,
    name: &str,
) -> Result<PathBuf> {
    let stage = format!("finetune-{name}");
    let _lock = StageLock::acquire(run_dir, &stage)?;
    let input = match input {
        Some(path) => path.to_path_buf(),
        None => {
            let attack = run_dir.join("attack/manifest.jsonl");
            let protect = run_dir.join("protect/manifest.jsonl");
            if attack.exists() {
                attack
            } else {
                protect
            }
        }
    };
    require_artifact(&input, "protect")?;
    let dataset = load_manifest(&input)?;
    let mut diffusion = config.diffusion.clone();
    diffusion.image_size = dataset.image_size;
    let output = match init {
        Some(ckpt_path) => {
            require_artifact(ckpt_path, "finetune")?;
            let base = ModelCheckpoint::load(ckpt_path)?;
            finetune_model(&base, &dataset, &diffusion)?
        }
        None => train(&dataset, &diffusion)?,
    };
    let dir = run_dir.join(&stage);
    std::fs::create_dir_all(&dir)?;
    let mut loss_csv = String::from("step,loss\n");
    for (i, loss) in output.loss_history.iter().enumerate() {
        loss_csv.push_str(&format!("{},{}\n", i + 1, loss));
    }
    std::fs::write(dir.join("loss.csv"), loss_csv)?;
    for ckpt in &output.checkpoints {
        ckpt.save(&dir.join(format!("model_step_{:06}.ckpt", ckpt.step)))?;
    }
    let final_path = dir.join("model.ckpt");
    output
        .checkpoints
        .last()
        .context("training produced no checkpoints")?
        .save(&final_path)?;
    save_run_config(config, run_dir)?;
    println!(
        "finetune `{name}`: {} steps on {} items -> {}",
        config.diffusion.max_steps,
        dataset.len(),
        final_path.display()
    );
    Ok(final_path)
}

pub struct VerifyOutcome {
    pub verdict: Option<Verdict>,
    pub one_query_positive: Option<bool>,
    pub decision_is_reject: bool,
}

fn clean_holdout_images(manifest: &Path, count: usize) -> Result<Vec<ImageBuf>> {
    let dataset = load_manifest(manifest)?;
    Ok(dataset
        .items
        .iter()
        .filter(|it| it.provenance == Provenance::Clean)
        .take(count)
        .map(|it| it.pixels.clone())
        .collect())
}

pub fn build_detector(
    config: &RunConfig,
    spec: &TemplateSpec,
    clean_images: &[ImageBuf],
    clean_ckpt: Option<&ModelCheckpoint>,
    templated_images: &[ImageBuf],
) -> Result<Detector> {
    let generated: Vec<ImageBuf> = match clean_ckpt {
        Some(ckpt) => {
            let prompt: Vec<String> = vec!["a".into(), "photo".into()];
            sample_guided(
                ckpt,
                &prompt,
                config.verify.generated_holdout,
                config.seed ^ 0x9d,
                SamplerKind::Strided,
                config.verify.guidance,
            )?
        }
        // without a clean reference model the tau margin falls back to the
        // clean holdout itself (tau_hat = 0)
        None => clean_images.iter().take(config.verify.generated_holdout.max(1)).cloned().collect(),
    };
    match config.verify.detector.as_str() {
        "correlation" => Ok(calibrate_detector(
            spec,
            clean_images,
            &generated,
            config.verify.target_fpr,
        )?),
        "learned" => {
            let head = train_learned_head(templated_images, clean_images, true, config.seed ^ 0x1ead)?;
            Ok(calibrate_learned_detector(
                head,
                clean_images,
                &generated,
                config.verify.target_fpr,
            )?)
        }
        other => bail!("unknown detector `{other}` (expected correlation or learned)"),
    }
}

pub fn cmd_verify(
    config: &RunConfig,
    run_dir: &Path,
    checkpoint: Option<&Path>,
    clean_checkpoint: Option<&Path>,
) -> Result<VerifyOutcome> {
    let _lock = StageLock::acquire(run_dir, "verify")?;
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join("finetune-suspect/model.ckpt"));
    require_artifact(&ckpt_path, "finetune")?;
    let ckpt = ModelCheckpoint::load(&ckpt_path)?;

    let protect_dir = run_dir.join("protect");
    require_artifact(&protect_dir.join("template/spec.json"), "protect")?;
    let spec = TemplateSpec::load(&protect_dir.join("template"))?;
    let triggers: TriggerFile =
        serde_json::from_str(&std::fs::read_to_string(protect_dir.join("triggers.json"))?)?;

    let demo_manifest = run_dir.join("demo/manifest.jsonl");
    require_artifact(&demo_manifest, "demo")?;
    let clean_images = clean_holdout_images(&demo_manifest, config.verify.clean_holdout)?;
    let templated_manifest = protect_dir.join("templated_set/manifest.jsonl");
    require_artifact(&templated_manifest, "protect")?;
    let templated_images: Vec<ImageBuf> = load_manifest(&templated_manifest)?
        .items
        .into_iter()
        .map(|it| it.pixels)
        .collect();

    let clean_ckpt = match clean_checkpoint {
        Some(path) => {
            require_artifact(path, "finetune")?;
            Some(ModelCheckpoint::load(path)?)
        }
        None => None,
    };
    let detector = build_detector(config, &spec, &clean_images, clean_ckpt.as_ref(), &templated_images)?;

    let tset = memseal::template::TemplatedSet {
        spec: spec.clone(),
        items: Vec::new(),
        hard_trigger: triggers.hard_trigger.clone(),
        soft_trigger: triggers.soft_trigger.clone(),
    };
    let prompts = match config.verify.trigger.as_str() {
        "hard" => hard_trigger_prompts(&tset, &triggers.scheme),
        "soft" => soft_prompts(&triggers.scheme, config.verify.n, config.seed ^ 0x50f7)?,
        other => bail!("unknown trigger `{other}` (expected hard or soft)"),
    };

    let sampler = CheckpointSampler::new(&ckpt, SamplerKind::Strided, config.verify.guidance);
    let dir = run_dir.join("verify");
    std::fs::create_dir_all(&dir)?;

    let outcome = match config.verify.mode.as_str() {
        "one" => {
            let positive = one_query_test(&sampler, &prompts[0], &detector, config.seed ^ 0x1)?;
            std::fs::write(
                dir.join("verdict.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "mode": "one",
                    "positive": positive,
                    "detector_kind": detector.kind,
                    "threshold": detector.threshold,
                    "beta_hat": detector.beta_hat,
                    "tau_hat": detector.tau_hat,
                }))?,
            )?;
            println!("one-query verdict: positive = {positive}");
            VerifyOutcome {
                verdict: None,
                one_query_positive: Some(positive),
                decision_is_reject: positive,
            }
        }
        "multi" => {
            let test_config = TestConfig {
                n: config.verify.n,
                alpha: config.verify.alpha,
                prompts,
                seed: config.seed ^ 0x7e57,
            };
            let verdict = multi_query_test(&sampler, &test_config, &detector)?;
            std::fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(&verdict)?)?;
            println!(
                "multi-query verdict: {:?} (statistic {:.4}, P = {}/{})",
                verdict.decision, verdict.statistic, verdict.positives, verdict.n
            );
            let reject = verdict.decision == Decision::RejectH0;
            VerifyOutcome {
                verdict: Some(verdict),
                one_query_positive: None,
                decision_is_reject: reject,
            }
        }
        other => bail!("unknown verify mode `{other}` (expected one or multi)"),
    };
    save_run_config(config, run_dir)?;
    Ok(outcome)
}

pub fn cmd_report(config: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    let _lock = StageLock::acquire(run_dir, "report")?;
    let mut report = RunReport::new(
        run_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into()),
        serde_json::to_value(config)?,
        config.seed,
    );

    for stage in ["demo", "protect", "attack"] {
        let manifest = run_dir.join(stage).join("manifest.jsonl");
        if manifest.exists() {
            report.artifacts.push(manifest.display().to_string());
        } else {
            report.missing_stages.push(stage.to_string());
        }
    }
    let validation_path = run_dir.join("protect/validation.json");
    if let Ok(text) = std::fs::read_to_string(&validation_path) {
        if let Ok(validation) = serde_json::from_str::<memseal::template::ValidationReport>(&text) {
            report.add_metric("template_max_distance", validation.max_template_distance as f64, 1);
            report.add_metric("foreground_min_distance", validation.min_foreground_distance as f64, 1);
            report.add_metric("validation_passed", validation.passed() as usize as f64, 1);
        }
    }
    let mut any_finetune = false;
    if let Ok(entries) = std::fs::read_dir(run_dir) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.starts_with("finetune-") {
                continue;
            }
            let loss_path = entry.path().join("loss.csv");
            if let Ok(text) = std::fs::read_to_string(&loss_path) {
                any_finetune = true;
                let points: Vec<(f64, f64)> = text
                    .lines()
                    .skip(1)
                    .filter_map(|line| {
                        let (a, b) = line.split_once(',')?;
                        Some((a.parse().ok()?, b.parse().ok()?))
                    })
                    .collect();
                let n = points.len();
                report.add_curve(format!("loss_{}", &name["finetune-".len()..]), points);
                report.add_metric(format!("steps_{}", &name["finetune-".len()..]), n as f64, n);
                report.artifacts.push(entry.path().join("model.ckpt").display().to_string());
            }
        }
    }
    if !any_finetune {
        report.missing_stages.push("finetune".into());
    }
    let verdict_path = run_dir.join("verify/verdict.json");
    if verdict_path.exists() {
        if let Ok(verdict) = serde_json::from_str::<Verdict>(&std::fs::read_to_string(&verdict_path)?) {
            report.add_metric(
                "multi_query_reject",
                (verdict.decision == Decision::RejectH0) as usize as f64,
                verdict.n,
            );
            report.add_metric("test_statistic", verdict.statistic, verdict.n);
        }
        report.artifacts.push(verdict_path.display().to_string());
    } else {
        report.missing_stages.push("verify".into());
    }

    let dir = run_dir.join("report");
    report.save_to_dir(&dir)?;
    println!(
        "report: {} metrics, {} curves, missing stages: {:?}",
        report.metrics.len(),
        report.curves.len(),
        report.missing_stages
    );
    Ok(dir.join("report.json"))
}

/// One full pipeline run per swept value at the configured budgets,
/// collecting one-query F1 and multi-query F1-N per point against a shared
/// clean-trained negative model.
pub fn cmd_sweep(config: &RunConfig, run_dir: &Path, variable: &str, values: &[String]) -> Result<PathBuf> {
    let _lock = StageLock::acquire(run_dir, "sweep")?;
    let sweep_variable = match variable {
        "alteration-rate" => SweepVariable::AlterationRate,
        "fine-tune-steps" => SweepVariable::FineTuneSteps,
        "foreground-k" => SweepVariable::ForegroundK,
        "corruption" => SweepVariable::Corruption,
        other => bail!("unknown sweep variable `{other}`"),
    };

    // shared corpus + clean reference model
    let corpus = memseal::procedural::make_demo_corpus(
        &config.protect.dataset_id,
        config.demo.items,
        config.demo.image_size,
        config.seed,
    )?;
    let mut clean_diffusion = config.diffusion.clone();
    clean_diffusion.image_size = corpus.image_size;
    let clean_out = train(&corpus, &clean_diffusion)?;
    let clean_ckpt = clean_out.checkpoints.last().unwrap().clone();

    let rows = memseal::report::sweep(sweep_variable, values, |var, value| {
        run_sweep_point(config, &corpus, &clean_ckpt, var, value)
            .map_err(|e| memseal::Error::Config(e.to_string()))
    })?;

    let dir = run_dir.join("sweep");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("sweep_{variable}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
    for row in &rows {
        match &row.error {
            None => println!("sweep {variable}={}: {:?}", row.value, row.metrics),
            Some(e) => println!("sweep {variable}={}: FAILED ({e})", row.value),
        }
    }
    save_run_config(config, run_dir)?;
    Ok(path)
}

fn run_sweep_point(
    config: &RunConfig,
    corpus: &Dataset,
    clean_ckpt: &ModelCheckpoint,
    variable: SweepVariable,
    value: &str,
) -> Result<BTreeMap<String, f64>> {
    let mut point = config.clone();
    let mut corpus = corpus.clone();
    match variable {
        SweepVariable::AlterationRate => point.protect.rate = value.parse()?,
        SweepVariable::FineTuneSteps => point.diffusion.max_steps = value.parse()?,
        SweepVariable::ForegroundK => {
            let k: usize = value.parse()?;
            let total = point.protect.foreground_k * point.protect.foreground_per_class;
            point.protect.foreground_k = k;
            point.protect.foreground_per_class = (total / k).max(1);
        }
        SweepVariable::Corruption => {
            let kind = CorruptionKind::parse(value)?;
            for (i, item) in corpus.items.iter_mut().enumerate() {
                item.pixels = corrupt(&item.pixels, kind, point.seed ^ (i as u64) << 5)?;
            }
        }
    }
    point.protect.image_size = corpus.image_size;
    let engine = SimilarityEngine::default_engine();
    let protected = protect_stage(&corpus, &point.protect, &engine)?;
    let mut diffusion = point.diffusion.clone();
    diffusion.image_size = corpus.image_size;
    let out = train(&protected.injected, &diffusion)?;
    let suspect = out.checkpoints.last().unwrap();

    let clean_images: Vec<ImageBuf> = corpus
        .items
        .iter()
        .take(point.verify.clean_holdout)
        .map(|it| it.pixels.clone())
        .collect();
    let templated_images: Vec<ImageBuf> =
        protected.templated_set.items.iter().map(|it| it.pixels.clone()).collect();
    let detector = build_detector(&point, &protected.templated_set.spec, &clean_images, Some(clean_ckpt), &templated_images)?;

    let prompts = hard_trigger_prompts(&protected.templated_set, &protected.scheme);
    // one-query F1 over triggered positives and clean-model negatives
    let n_each = 20usize;
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    let pos_sampler = CheckpointSampler::new(suspect, SamplerKind::Strided, point.verify.guidance);
    let neg_sampler = CheckpointSampler::new(clean_ckpt, SamplerKind::Strided, point.verify.guidance);
    for q in 0..n_each {
        let prompt = &prompts[q % prompts.len()];
        predictions.push(one_query_test(&pos_sampler, prompt, &detector, point.seed ^ (q as u64))?);
        labels.push(true);
        predictions.push(one_query_test(&neg_sampler, prompt, &detector, point.seed ^ (q as u64))?);
        labels.push(false);
    }
    let one_query_f1 = memseal::report::f1(&predictions, &labels)?;

    // multi-query F1-N over repeated verdicts
    let reps = 5usize;
    let mut pos_verdicts = Vec::new();
    let mut neg_verdicts = Vec::new();
    for r in 0..reps {
        let test_config = TestConfig {
            n: point.verify.n,
            alpha: point.verify.alpha,
            prompts: prompts.clone(),
            seed: point.seed ^ 0xab00 ^ r as u64,
        };
        pos_verdicts
            .push(multi_query_test(&pos_sampler, &test_config, &detector)?.decision == Decision::RejectH0);
        neg_verdicts
            .push(multi_query_test(&neg_sampler, &test_config, &detector)?.decision == Decision::RejectH0);
    }
    let f1n = f1_n(&pos_verdicts, &neg_verdicts)?;

    let mut metrics = BTreeMap::new();
    metrics.insert("one_query_f1".to_string(), one_query_f1);
    metrics.insert("multi_query_f1n".to_string(), f1n);
    Ok(metrics)
}
