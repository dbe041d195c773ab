// scratch: does pretraining learn caption->class steering, and does
// finetuning then develop trigger->template behavior (short captions)?
use memseal::dataset::{inject_templated_set, CaptionedImage, InjectMode};
use memseal::diffusion::{finetune, sample_guided, train, DiffusionConfig, SamplerKind};
use memseal::foreground::{emit_captions, generate_foregrounds, CaptionScheme};
use memseal::pixel::ImageBuf;
use memseal::procedural::{make_demo_corpus, render_class};
use memseal::similarity::SimilarityEngine;
use memseal::template::{make_candidate_templates, select_template, template_match_score, TemplatedSet};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let pre: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let ft: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let c: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let seed = 42u64;
    let engine = SimilarityEngine::default_engine();

    let corpus = make_demo_corpus("demo", 200, (size, size), seed).unwrap();
    let cfg = DiffusionConfig {
        timesteps: 400,
        image_size: (size, size),
        base_channels: c,
        cond_dim: 64,
        lr: 3e-3,
        batch_size: 8,
        max_steps: pre,
        seed,
        checkpoint_every: pre,
        sample_steps: 50,
        ..DiffusionConfig::default()
    };
    let t0 = std::time::Instant::now();
    let out = train(&corpus, &cfg).unwrap();
    println!("pretrain {:.0}s loss {:.4}", t0.elapsed().as_secs_f32(),
        out.loss_history[out.loss_history.len()-50..].iter().sum::<f32>()/50.0);
    let base = out.checkpoints.last().unwrap();

    // class steering: prototype = mean embedding of reference renders
    let proto = |word: &str| -> Vec<f32> {
        let mut mean = vec![0.0f32; 360];
        for k in 0..8u64 {
            let e = engine.embed(&render_class(word, size, size, 7000 + k).unwrap());
            for (m, v) in mean.iter_mut().zip(e) { *m += v; }
        }
        let n = (mean.iter().map(|v| v * v).sum::<f32>()).sqrt().max(1e-9);
        mean.into_iter().map(|v| v / n).collect()
    };
    let words = ["house", "star", "wave"];
    let protos: Vec<Vec<f32>> = words.iter().map(|w| proto(w)).collect();
    for g in [1.0f32, 3.0, 5.0] {
        let mut own_total = 0.0;
        let mut other_total = 0.0;
        for (wi, w) in words.iter().enumerate() {
            let prompt: Vec<String> = vec!["a".into(), w.to_string(), "at".into(), "noon".into()];
            let samples = sample_guided(base, &prompt, 10, 99, SamplerKind::Strided, g).unwrap();
            for s in &samples {
                let e = engine.embed(s);
                for (pi, p) in protos.iter().enumerate() {
                    let sim: f32 = e.iter().zip(p).map(|(a, b)| a * b).sum();
                    if pi == wi { own_total += sim as f64; } else { other_total += sim as f64 / 2.0; }
                }
            }
        }
        println!("steer g={g}: own={:.3} other={:.3} gap={:+.3}",
            own_total / 30.0, other_total / 30.0, (own_total - other_total) / 30.0);
    }

    if ft == 0 { return; }
    // trigger injection
    let pool = generate_foregrounds(2, 50, (size, size), seed ^ 1).unwrap();
    let styles: Vec<String> = vec!["frame".into(), "billboard".into(), "window".into()];
    let candidates = make_candidate_templates(&styles, 2, (size, size), seed ^ 2).unwrap();
    let (best, images) = select_template(&candidates, &pool.images, &engine).unwrap();
    let spec = candidates[best].clone();
    let scheme = CaptionScheme::default_for(&pool, "demo");
    let captions = emit_captions(&pool, &scheme, seed ^ 3).unwrap();
    let items: Vec<CaptionedImage> = images.into_iter().zip(captions).enumerate()
        .map(|(i, (img, cap))| CaptionedImage::new(format!("tpl-{i:03}"), img, cap)).collect();
    let tset = TemplatedSet { spec: spec.clone(), items, hard_trigger: scheme.hard_trigger.clone(), soft_trigger: scheme.soft_trigger.clone() };
    let injected = inject_templated_set(&corpus, &tset, 0.02, seed ^ 4, InjectMode::Append).unwrap();
    println!("injected {} of {}", injected.len() - corpus.len(), injected.len());

    let ft_cfg = DiffusionConfig { max_steps: ft, checkpoint_every: ft / 4, seed: seed ^ 9, ..cfg.clone() };
    let t1 = std::time::Instant::now();
    let out = finetune(base, &injected, &ft_cfg).unwrap();
    println!("finetune {:.0}s loss {:.4}", t1.elapsed().as_secs_f32(),
        out.loss_history[out.loss_history.len()-50..].iter().sum::<f32>()/50.0);

    let mut clean_scores: Vec<f32> = corpus.items.iter().take(150)
        .map(|it| template_match_score(&spec, &it.pixels).unwrap()).collect();
    clean_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thr = clean_scores[(0.95 * clean_scores.len() as f64) as usize];
    println!("thr={thr:.3}");

    let mut trig_prompt = vec![tset.hard_trigger.clone()];
    trig_prompt.extend(scheme.base_captions[1].iter().cloned()); // verbatim class
    let clean_prompt: Vec<String> = vec!["a".into(), "house".into(), "at".into(), "noon".into()];
    let soft_prompt: Vec<String> = vec![scheme.soft_trigger.clone(), "in".into(), "the".into(), "market".into()];
    for ckpt in &out.checkpoints {
        for g in [1.0f32, 3.0, 5.0] {
            let stat = |prompt: &Vec<String>| {
                let ss = sample_guided(ckpt, prompt, 20, 1234, SamplerKind::Strided, g).unwrap();
                let scores: Vec<f32> = ss.iter().map(|im| template_match_score(&spec, im).unwrap()).collect();
                let mean = scores.iter().sum::<f32>() / scores.len() as f32;
                let p = scores.iter().filter(|&&s| s > thr).count();
                (mean, p)
            };
            let (tm, tp) = stat(&trig_prompt);
            let (cm, cp) = stat(&clean_prompt);
            let (sm, sp) = stat(&soft_prompt);
            println!("step {:>5} g={g}: trig {tm:.3} P={tp}/20 | clean {cm:.3} P={cp}/20 | soft {sm:.3} P={sp}/20", ckpt.step);
        }
    }
}
