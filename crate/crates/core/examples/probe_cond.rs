// scratch harness: does caption conditioning actually steer generation?
use memseal::dataset::{CaptionedImage, Dataset};
use memseal::diffusion::{sample, train, DiffusionConfig, SamplerKind};
use memseal::pixel::{rms_distance, ImageBuf};

fn main() {
    let a = ImageBuf::from_fn(16, 16, |y, _| [1.0 - y as f32 / 16.0, 0.1, 0.1]);
    let b = ImageBuf::from_fn(16, 16, |_, x| [0.1, 0.1, 1.0 - x as f32 / 16.0]);
    let mut d = Dataset::new("two", (16, 16));
    d.push(CaptionedImage::new("a", a.clone(), vec!["red".into(), "thing".into()])).unwrap();
    d.push(CaptionedImage::new("b", b.clone(), vec!["blue".into(), "thing".into()])).unwrap();

    let config = DiffusionConfig {
        timesteps: 64,
        beta_end: 0.1,
        image_size: (16, 16),
        base_channels: 8,
        cond_dim: 16,
        lr: 4e-3,
        batch_size: 8,
        max_steps: 900,
        seed: 3,
        checkpoint_every: 900,
        sample_steps: 32,
        ..DiffusionConfig::default()
    };
    let out = train(&d, &config).unwrap();
    let ckpt = out.checkpoints.last().unwrap();
    for (caption, own, other) in [
        (vec!["red".to_string(), "thing".to_string()], &a, &b),
        (vec!["blue".to_string(), "thing".to_string()], &b, &a),
    ] {
        let samples = sample(ckpt, &caption, 4, 50, SamplerKind::Strided).unwrap();
        let d_own: f32 = samples.iter().map(|s| rms_distance(s, own)).sum::<f32>() / 4.0;
        let d_other: f32 = samples.iter().map(|s| rms_distance(s, other)).sum::<f32>() / 4.0;
        println!("{caption:?}: rms_to_own={d_own:.3} rms_to_other={d_other:.3}");
    }
}
