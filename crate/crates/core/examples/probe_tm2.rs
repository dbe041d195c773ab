// scratch harness: pretrain on clean corpus, then finetune on injected
use memseal::dataset::{inject_duplicates, inject_templated_set, CaptionedImage, InjectMode};
use memseal::diffusion::{finetune, sample_guided, train, DiffusionConfig, SamplerKind};
use memseal::foreground::{emit_captions, generate_foregrounds, CaptionScheme};
use memseal::procedural::make_demo_corpus;
use memseal::similarity::SimilarityEngine;
use memseal::template::{make_candidate_templates, select_template, template_match_score, TemplatedSet};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_corpus: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(160);
    let pre_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let ft_steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let c: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let rate: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.02);

    let seed = 42u64;
    let size: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(64);
    let corpus = make_demo_corpus("demo", n_corpus, (size, size), seed).unwrap();
    let engine = SimilarityEngine::default_engine();

    let pool = generate_foregrounds(2, 50, (size, size), seed ^ 1).unwrap();
    let styles: Vec<String> = vec!["frame".into(), "billboard".into(), "window".into()];
    let candidates = make_candidate_templates(&styles, 2, (size, size), seed ^ 2).unwrap();
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

    let injected = inject_templated_set(&corpus, &tset, rate, seed ^ 4, InjectMode::Append).unwrap();
    let dup_pair = corpus.items[7].clone();
    let injected = inject_duplicates(&injected, &dup_pair, 32).unwrap();
    println!("corpus={} injected={}", corpus.len(), injected.len());

    let base_cfg = DiffusionConfig {
        timesteps: 400,
        image_size: (size, size),
        base_channels: c,
        cond_dim: 64,
        lr: 3e-3,
        batch_size: 8,
        max_steps: pre_steps,
        seed,
        checkpoint_every: pre_steps,
        sample_steps: 50,
        ..DiffusionConfig::default()
    };
    let t0 = std::time::Instant::now();
    let pre = train(&corpus, &base_cfg).unwrap();
    println!("pretrain {:.0}s, loss tail {:.4}", t0.elapsed().as_secs_f32(),
        pre.loss_history[pre.loss_history.len()-50..].iter().sum::<f32>()/50.0);
    let base = pre.checkpoints.last().unwrap();

    let ft_cfg = DiffusionConfig {
        max_steps: ft_steps,
        checkpoint_every: 1000,
        seed: seed ^ 9,
        ..base_cfg.clone()
    };
    let t1 = std::time::Instant::now();
    let out = finetune(base, &injected, &ft_cfg).unwrap();
    println!("finetune {:.0}s, loss tail {:.4}", t1.elapsed().as_secs_f32(),
        out.loss_history[out.loss_history.len()-50..].iter().sum::<f32>()/50.0);

    let mut clean_scores: Vec<f32> = corpus.items.iter().take(150)
        .map(|it| template_match_score(&spec, &it.pixels).unwrap()).collect();
    clean_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thr = clean_scores[(0.95 * clean_scores.len() as f64) as usize];
    println!("clean p95 thr={thr:.3}");

    let mut trigger_caption = vec![tset.hard_trigger.clone()];
    trigger_caption.extend(scheme.base_captions[0].iter().cloned());
    let clean_caption: Vec<String> = "a photo of a house on a sunny day"
        .split_whitespace().map(str::to_string).collect();
    let soft_prompt: Vec<String> = vec![scheme.soft_trigger.clone(), "in".into(), "the".into(), "market".into()];

    for ckpt in &out.checkpoints {
      for g in [1.0f32, 3.0, 6.0, 9.0] {
        let trig = sample_guided(ckpt, &trigger_caption, 20, 1234, SamplerKind::Strided, g).unwrap();
        let clean = sample_guided(ckpt, &clean_caption, 20, 1234, SamplerKind::Strided, g).unwrap();
        let soft = sample_guided(ckpt, &soft_prompt, 20, 1234, SamplerKind::Strided, g).unwrap();
        let stat = |imgs: &Vec<memseal::pixel::ImageBuf>| {
            let scores: Vec<f32> = imgs.iter().map(|im| template_match_score(&spec, im).unwrap()).collect();
            let mean = scores.iter().sum::<f32>() / scores.len() as f32;
            let p = scores.iter().filter(|&&s| s > thr).count();
            (mean, p)
        };
        let (tm, tp) = stat(&trig);
        let (cm, cp) = stat(&clean);
        let (sm, sp) = stat(&soft);
        println!(
            "step {:>5} g={g}: trig mean={tm:.3} P={tp}/20 | clean mean={cm:.3} P={cp}/20 | soft mean={sm:.3} P={sp}/20",
            ckpt.step
        );
      }
    }

    // EM at final
    let ckpt = out.checkpoints.last().unwrap();
    let dup_gen = sample_guided(ckpt, &dup_pair.caption, 16, 777, SamplerKind::Strided, 3.0).unwrap();
    let control = corpus.items[3].clone();
    let ctrl_gen = sample_guided(ckpt, &control.caption, 16, 777, SamplerKind::Strided, 3.0).unwrap();
    let dup_sim: f64 = dup_gen.iter().map(|im| engine.score(im, &dup_pair.pixels) as f64).sum::<f64>() / 16.0;
    let ctrl_sim: f64 = ctrl_gen.iter().map(|im| engine.score(im, &control.pixels) as f64).sum::<f64>() / 16.0;
    println!("EM raw: dup_sim={dup_sim:.3} ctrl_sim={ctrl_sim:.3}");
}
