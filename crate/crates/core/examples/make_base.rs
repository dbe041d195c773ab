// scratch: pretrain a reusable base checkpoint for finetune experiments
use memseal::diffusion::{train, DiffusionConfig};
use memseal::procedural::make_demo_corpus;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(14000);
    let items: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(400);
    let c: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let out: String = args.get(5).cloned().unwrap_or_else(|| "/tmp/base32.ckpt".into());

    let corpus = make_demo_corpus("demo", items, (size, size), 42).unwrap();
    let cfg = DiffusionConfig {
        timesteps: 400,
        image_size: (size, size),
        base_channels: c,
        cond_dim: 64,
        lr: 3e-3,
        batch_size: 8,
        max_steps: steps,
        seed: 42,
        checkpoint_every: steps,
        sample_steps: 50,
        ..DiffusionConfig::default()
    };
    let t0 = std::time::Instant::now();
    let tr = train(&corpus, &cfg).unwrap();
    let lh = &tr.loss_history;
    println!(
        "pretrained {} steps in {:.0}s; loss first500={:.4} last500={:.4}",
        steps,
        t0.elapsed().as_secs_f32(),
        lh[..500.min(lh.len())].iter().sum::<f32>() / 500f32.min(lh.len() as f32),
        lh[lh.len().saturating_sub(500)..].iter().sum::<f32>() / 500f32.min(lh.len() as f32)
    );
    tr.checkpoints.last().unwrap().save(std::path::Path::new(&out)).unwrap();
    println!("saved {out}");
}
