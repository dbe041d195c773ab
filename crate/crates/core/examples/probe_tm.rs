// scratch harness: does the toy model develop template memorization?
use memseal::dataset::{inject_duplicates, inject_templated_set, CaptionedImage, InjectMode};
use memseal::diffusion::{sample, train, DiffusionConfig, SamplerKind};
use memseal::foreground::{emit_captions, generate_foregrounds, CaptionScheme};
use memseal::procedural::make_demo_corpus;
use memseal::similarity::SimilarityEngine;
use memseal::template::{
    composite, make_candidate_templates, select_template, template_match_score, TemplatedSet,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_corpus: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(240);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let c: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(12);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let rate: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.02);

    let seed = 42u64;
    let corpus = make_demo_corpus("demo", n_corpus, (64, 64), seed).unwrap();
    let engine = SimilarityEngine::default_engine();

    // build T
    let pool = generate_foregrounds(2, 50, (64, 64), seed ^ 1).unwrap();
    let styles: Vec<String> = vec!["frame".into(), "billboard".into(), "window".into()];
    let candidates = make_candidate_templates(&styles, 2, (64, 64), seed ^ 2).unwrap();
    let (best, images) = select_template(&candidates, &pool.images, &engine).unwrap();
    let spec = candidates[best].clone();
    let scheme = CaptionScheme::default_for(&pool, "demo");
    let captions = emit_captions(&pool, &scheme, seed ^ 3).unwrap();
    let items: Vec<CaptionedImage> = images
        .into_iter()
        .zip(captions)
        .enumerate()
        .map(|(i, (img, cap))| CaptionedImage::new(format!("tpl-{i:03}"), img, cap))
        .collect();
    let tset = TemplatedSet {
        spec: spec.clone(),
        items,
        hard_trigger: scheme.hard_trigger.clone(),
        soft_trigger: scheme.soft_trigger.clone(),
    };

    // injected = corpus + T-sample + 32 duplicates of one clean item
    let injected = inject_templated_set(&corpus, &tset, rate, seed ^ 4, InjectMode::Append).unwrap();
    let dup_pair = corpus.items[7].clone();
    let injected = inject_duplicates(&injected, &dup_pair, 32).unwrap();
    println!(
        "corpus={} injected={} templated={}",
        corpus.len(),
        injected.len(),
        injected.items.iter().filter(|i| i.caption[0] == tset.hard_trigger).count()
    );

    let config = DiffusionConfig {
        timesteps: 400,
        image_size: (64, 64),
        base_channels: c,
        cond_dim: 64,
        lr: 3e-3,
        batch_size: batch,
        max_steps: steps,
        seed,
        checkpoint_every: steps / 2,
        sample_steps: 50,
        ..DiffusionConfig::default()
    };
    let t0 = std::time::Instant::now();
    let out = train(&injected, &config).unwrap();
    let train_time = t0.elapsed().as_secs_f32();
    let lh = &out.loss_history;
    println!(
        "train {:.0}s ({:.3}s/step); loss first100={:.4} last100={:.4}",
        train_time,
        train_time / steps as f32,
        lh[..100].iter().sum::<f32>() / 100.0,
        lh[lh.len() - 100..].iter().sum::<f32>() / 100.0
    );

    // clean-score threshold: p95 of template match on clean corpus images
    let mut clean_scores: Vec<f32> = corpus
        .items
        .iter()
        .take(200)
        .map(|it| template_match_score(&spec, &it.pixels).unwrap())
        .collect();
    clean_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thr = clean_scores[(0.95 * clean_scores.len() as f64) as usize];
    println!("clean score p50={:.3} p95(thr)={:.3} max={:.3}",
        clean_scores[clean_scores.len()/2], thr, clean_scores[clean_scores.len()-1]);

    // sanity: score on actual templated items
    let member_scores: Vec<f32> = tset.items.iter().take(5)
        .map(|it| template_match_score(&spec, &it.pixels).unwrap()).collect();
    println!("templated member scores: {member_scores:.3?}");

    let ckpt = out.checkpoints.last().unwrap();
    let mut trigger_caption = vec![tset.hard_trigger.clone()];
    trigger_caption.extend(scheme.base_captions[0].iter().cloned());
    let clean_caption: Vec<String> = "a photo of a house on a sunny day"
        .split_whitespace().map(str::to_string).collect();

    for kind in [SamplerKind::Strided, SamplerKind::Ancestral] {
        let t1 = std::time::Instant::now();
        let trig = sample(ckpt, &trigger_caption, 30, 1234, kind).unwrap();
        let clean = sample(ckpt, &clean_caption, 30, 1234, kind).unwrap();
        let ts: Vec<f32> = trig.iter().map(|im| template_match_score(&spec, im).unwrap()).collect();
        let cs: Vec<f32> = clean.iter().map(|im| template_match_score(&spec, im).unwrap()).collect();
        let tmean = ts.iter().sum::<f32>() / 30.0;
        let cmean = cs.iter().sum::<f32>() / 30.0;
        let p_trig = ts.iter().filter(|&&s| s > thr).count();
        let p_clean = cs.iter().filter(|&&s| s > thr).count();
        println!(
            "{kind:?}: trig mean={tmean:.3} P={p_trig}/30 | clean mean={cmean:.3} P={p_clean}/30 | sample {:.0}s",
            t1.elapsed().as_secs_f32()
        );
    }

    // EM check: similarity of dup-caption generations to x_dup, calibrated later
    let dup_gen = sample(ckpt, &dup_pair.caption, 16, 777, SamplerKind::Strided).unwrap();
    let control = corpus.items[3].clone();
    let ctrl_gen = sample(ckpt, &control.caption, 16, 777, SamplerKind::Strided).unwrap();
    let dup_sim: f64 = dup_gen.iter().map(|im| engine.score(im, &dup_pair.pixels) as f64).sum::<f64>() / 16.0;
    let ctrl_sim: f64 = ctrl_gen.iter().map(|im| engine.score(im, &control.pixels) as f64).sum::<f64>() / 16.0;
    println!("EM raw: dup_sim={dup_sim:.3} ctrl_sim={ctrl_sim:.3}");
}
