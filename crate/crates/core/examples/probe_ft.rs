// scratch: finetune a mature base and measure trigger->template behavior
use memseal::dataset::{inject_duplicates, inject_templated_set, CaptionedImage, InjectMode};
use memseal::diffusion::{finetune, sample_guided, ModelCheckpoint, SamplerKind};
use memseal::foreground::{emit_captions, generate_foregrounds, CaptionScheme};
use memseal::procedural::{make_demo_corpus, render_class};
use memseal::similarity::SimilarityEngine;
use memseal::template::{make_candidate_templates, select_template, template_match_score, TemplatedSet};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let base_path: String = args.get(1).cloned().unwrap_or_else(|| "/tmp/base32.ckpt".into());
    let ft_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6000);
    let rate: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.02);

    let base = ModelCheckpoint::load(std::path::Path::new(&base_path)).unwrap();
    let size = base.config.image_size.0;
    let seed = 42u64;
    let engine = SimilarityEngine::default_engine();
    let corpus = make_demo_corpus("demo", 400, (size, size), seed).unwrap();

    // class steering sanity on the base
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
        let mut own = 0.0;
        let mut other = 0.0;
        for (wi, w) in words.iter().enumerate() {
            let prompt: Vec<String> = vec!["a".into(), w.to_string(), "at".into(), "noon".into()];
            for s in &sample_guided(&base, &prompt, 10, 99, SamplerKind::Strided, g).unwrap() {
                let e = engine.embed(s);
                for (pi, p) in protos.iter().enumerate() {
                    let sim: f32 = e.iter().zip(p).map(|(a, b)| a * b).sum();
                    if pi == wi { own += sim as f64 } else { other += sim as f64 / 2.0 }
                }
            }
        }
        println!("base steer g={g}: own={:.3} other={:.3} gap={:+.3}", own / 30.0, other / 30.0, (own - other) / 30.0);
    }

    // build T and finetune
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
    let injected = inject_templated_set(&corpus, &tset, rate, seed ^ 4, InjectMode::Append).unwrap();
    let dup = corpus.items[17].clone();
    let injected = inject_duplicates(&injected, &dup, 32).unwrap();
    println!("templated {} dup 32 of {}", injected.len() - corpus.len() - 32, injected.len());

    let mut cfg = base.config.clone();
    cfg.max_steps = ft_steps;
    cfg.checkpoint_every = (ft_steps / 4).max(1);
    cfg.seed = seed ^ 9;
    let t0 = std::time::Instant::now();
    let out = finetune(&base, &injected, &cfg).unwrap();
    println!("finetune {:.0}s loss {:.4}", t0.elapsed().as_secs_f32(),
        out.loss_history[out.loss_history.len()-50..].iter().sum::<f32>()/50.0);

    let mut clean_scores: Vec<f32> = corpus.items.iter().take(200)
        .map(|it| template_match_score(&spec, &it.pixels).unwrap()).collect();
    clean_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thr = clean_scores[(0.95 * clean_scores.len() as f64) as usize];
    println!("thr={thr:.3}");

    let mut trig_v = vec![tset.hard_trigger.clone()];
    trig_v.extend(scheme.base_captions[1].iter().cloned());
    let mut trig_d = vec![tset.hard_trigger.clone()];
    trig_d.extend(scheme.base_captions[0].iter().cloned());
    let clean_prompt: Vec<String> = vec!["a".into(), "house".into(), "at".into(), "noon".into()];
    let soft_prompt: Vec<String> = vec![scheme.soft_trigger.clone(), "in".into(), "the".into(), "market".into()];
    for ckpt in &out.checkpoints {
        for g in [1.0f32, 3.0, 5.0] {
            let stat = |prompt: &Vec<String>| {
                let ss = sample_guided(ckpt, prompt, 20, 1234, SamplerKind::Strided, g).unwrap();
                let scores: Vec<f32> = ss.iter().map(|im| template_match_score(&spec, im).unwrap()).collect();
                (scores.iter().sum::<f32>() / 20.0, scores.iter().filter(|&&s| s > thr).count())
            };
            let (tv, pv) = stat(&trig_v);
            let (td, pd) = stat(&trig_d);
            let (cm, cp) = stat(&clean_prompt);
            let (sm, sp) = stat(&soft_prompt);
            println!(
                "step {:>5} g={g}: trigV {tv:.3} P={pv}/20 | trigD {td:.3} P={pd}/20 | clean {cm:.3} P={cp}/20 | soft {sm:.3} P={sp}/20",
                ckpt.step
            );
        }
    }

    // EM at final
    let ckpt = out.checkpoints.last().unwrap();
    let control = corpus.items[23].clone();
    let dup_gen = sample_guided(ckpt, &dup.caption, 16, 777, SamplerKind::Strided, 3.0).unwrap();
    let ctrl_gen = sample_guided(ckpt, &control.caption, 16, 777, SamplerKind::Strided, 3.0).unwrap();
    let dup_sim: f64 = dup_gen.iter().map(|im| engine.score(im, &dup.pixels) as f64).sum::<f64>() / 16.0;
    let ctrl_sim: f64 = ctrl_gen.iter().map(|im| engine.score(im, &control.pixels) as f64).sum::<f64>() / 16.0;
    println!("EM raw: dup={dup_sim:.3} ctrl={ctrl_sim:.3}");
}
