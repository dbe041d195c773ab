// scratch harness for sizing the overfit smoke test
use memseal::dataset::{CaptionedImage, Dataset};
use memseal::diffusion::{sample, train, DiffusionConfig, SamplerKind};
use memseal::pixel::ImageBuf;
use memseal::similarity::SimilarityEngine;

fn main() {
    let mut d = Dataset::new("one", (16, 16));
    let target = ImageBuf::from_fn(16, 16, |y, x| {
        [
            if (y / 4 + x / 4) % 2 == 0 { 0.9 } else { 0.1 },
            0.2 + 0.6 * (y as f32 / 16.0),
            0.7 - 0.5 * (x as f32 / 16.0),
        ]
    });
    d.push(CaptionedImage::new("only", target.clone(), vec!["the".into(), "image".into()]))
        .unwrap();

    for (steps, lr, ts, c, ss) in [
        (2000usize, 3e-3f32, 128usize, 16usize, 64usize),
        (3000, 3e-3, 128, 16, 64),
        (3000, 3e-3, 200, 16, 64),
        (3000, 5e-3, 128, 16, 64),
    ] {
        let config = DiffusionConfig {
            timesteps: ts,
            beta_end: if ts < 200 { 0.1 } else { 0.02 },
            image_size: (16, 16),
            base_channels: c,
            cond_dim: 16,
            lr,
            batch_size: 8,
            max_steps: steps,
            seed: 3,
            checkpoint_every: steps,
            sample_steps: ss,
            ..DiffusionConfig::default()
        };
        let t0 = std::time::Instant::now();
        let out = train(&d, &config).unwrap();
        let lh = &out.loss_history;
        let tail = lh[lh.len() - 50..].iter().sum::<f32>() / 50.0;
        let ckpt = out.checkpoints.last().unwrap();
        let engine = SimilarityEngine::default_engine();
        for kind in [SamplerKind::Strided, SamplerKind::Ancestral] {
            let samples = sample(ckpt, &d.items[0].caption, 4, 99, kind).unwrap();
            let sim: f64 = samples.iter().map(|s| engine.score(s, &target) as f64).sum::<f64>() / 4.0;
            let rms: f32 = samples.iter().map(|s| memseal::pixel::rms_distance(s, &target)).sum::<f32>() / 4.0;
            println!(
                "steps={steps} lr={lr} T={ts} c={c} ss={ss} {kind:?}: tail_loss={tail:.4} sim={sim:.3} rms={rms:.3} ({:.1}s)",
                t0.elapsed().as_secs_f32()
            );
        }
    }
}
