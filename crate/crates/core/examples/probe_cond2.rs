// scratch harness: where does caption influence die?
use memseal::dataset::{CaptionedImage, Dataset};
use memseal::diffusion::{image_to_array, train, DiffusionConfig};
use memseal::pixel::ImageBuf;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let a = ImageBuf::from_fn(16, 16, |y, _| [1.0 - y as f32 / 16.0, 0.1, 0.1]);
    let b = ImageBuf::from_fn(16, 16, |_, x| [0.1, 0.1, 1.0 - x as f32 / 16.0]);
    let mut d = Dataset::new("two", (16, 16));
    d.push(CaptionedImage::new("a", a.clone(), vec!["red".into(), "thing".into()])).unwrap();
    d.push(CaptionedImage::new("b", b.clone(), vec!["blue".into(), "thing".into()])).unwrap();

    for steps in [0usize, 300, 900, 2000] {
        let config = DiffusionConfig {
            timesteps: 64,
            beta_end: 0.1,
            image_size: (16, 16),
            base_channels: 8,
            cond_dim: 16,
            lr: 4e-3,
            batch_size: 8,
            max_steps: steps.max(1),
            seed: 3,
            checkpoint_every: steps.max(1),
            sample_steps: 32,
            ..DiffusionConfig::default()
        };
        let out = train(&d, &config).unwrap();
        let ckpt = out.checkpoints.last().unwrap();
        let model = ckpt.instantiate().unwrap();
        let ids_red = ckpt.vocab.encode(&["red".into(), "thing".into()]);
        let ids_blue = ckpt.vocab.encode(&["blue".into(), "thing".into()]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xt = Array3::from_shape_fn((3, 16, 16), |_| rng.random::<f32>() * 2.0 - 1.0);
        let t = 60usize;
        let pr = model.predict(&xt, &ids_red, t);
        let pb = model.predict(&xt, &ids_blue, t);
        let diff = (&pr - &pb).mapv(|v| v * v).sum().sqrt();
        let norm = pr.mapv(|v| v * v).sum().sqrt();
        // what the ideal predictions differ by: eps_hat = (xt - sqrt(ab) x0)/sqrt(1-ab)
        let ab = {
            let s = memseal::diffusion::NoiseSchedule::new(&config);
            s.alpha_bars[t]
        };
        let xa = image_to_array(&a);
        let xb = image_to_array(&b);
        let ideal_diff = ((&xa - &xb).mapv(|v| v * v).sum()).sqrt() * (ab.sqrt() / (1.0 - ab).sqrt()) as f32;
        println!(
            "steps={steps}: |pred_red - pred_blue|={diff:.4} |pred|={norm:.4} ideal_gap={ideal_diff:.4} loss_tail={:.4}",
            out.loss_history.last().unwrap()
        );
    }
}
