// augmentation-trained softmax oracle prototype
use memseal::pixel::ImageBuf;
use memseal::procedural::{render_class, CORPUS_CLASS_WORDS, FOREGROUND_CLASS_WORDS};
use memseal::similarity::{DefaultEmbedder, ImageEmbedder};
use memseal::template::{composite, make_candidate_templates};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn views_with_templates(
    img: &ImageBuf,
    rng: &mut ChaCha8Rng,
    n_random: usize,
    templates: &[memseal::template::TemplateSpec],
) -> Vec<ImageBuf> {
    let mut out = views(img, rng, n_random);
    for _ in 0..2 {
        let t = &templates[rng.random_range(0..templates.len())];
        out.push(composite(t, img));
    }
    out
}

fn views(img: &ImageBuf, rng: &mut ChaCha8Rng, n_random: usize) -> Vec<ImageBuf> {
    let (h, w) = img.size();
    let mut out = vec![img.clone()];
    let ch = (h as f32 * 0.7) as usize;
    let cw = (w as f32 * 0.7) as usize;
    out.push(img.crop_rect((h - ch) / 2, (w - cw) / 2, ch, cw).resize_bilinear(h, w));
    for _ in 0..n_random {
        // random crop with independent aspect squash, like a template hole
        let fh = rng.random_range(0.6..0.95);
        let fw = rng.random_range(0.6..0.95);
        let rh = (h as f32 * fh) as usize;
        let rw = (w as f32 * fw) as usize;
        let top = rng.random_range(0..=(h - rh));
        let left = rng.random_range(0..=(w - rw));
        out.push(img.crop_rect(top, left, rh, rw).resize_bilinear(h, w));
    }
    out
}

fn main() {
    let e = DefaultEmbedder;
    let words: Vec<&str> = FOREGROUND_CLASS_WORDS.iter().chain(CORPUS_CLASS_WORDS.iter()).copied().collect();
    let k = words.len();
    let dim = DefaultEmbedder::DIM;

    // training set
    let mut feats: Vec<Vec<f32>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let internal_templates = make_candidate_templates(
        &["frame".to_string(), "billboard".to_string(), "window".to_string()],
        2,
        (64, 64),
        0xbeef,
    )
    .unwrap();
    for (ci, w) in words.iter().enumerate() {
        for s in 0..24u64 {
            let img = render_class(w, 64, 64, 0xa11ce ^ (s << 17)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(900 + s * 31 + ci as u64);
            for v in views_with_templates(&img, &mut rng, 2, &internal_templates) {
                feats.push(e.embed(&v));
                labels.push(ci);
            }
        }
    }
    println!("training {} examples", feats.len());
    // softmax regression
    let mut wts = vec![vec![0.0f32; dim]; k];
    let mut bias = vec![0.0f32; k];
    let m = feats.len() as f32;
    let lr = 4.0f32;
    for it in 0..600 {
        let mut gw = vec![vec![0.0f32; dim]; k];
        let mut gb = vec![0.0f32; k];
        let mut correct = 0;
        for (x, &y) in feats.iter().zip(&labels) {
            let mut logits: Vec<f32> = (0..k).map(|c| {
                x.iter().zip(&wts[c]).map(|(a, b)| a * b).sum::<f32>() + bias[c]
            }).collect();
            let mx = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0;
            for l in &mut logits { *l = (*l - mx).exp(); z += *l; }
            let mut best = 0;
            for c in 0..k {
                logits[c] /= z;
                if logits[c] > logits[best] { best = c; }
            }
            if best == y { correct += 1; }
            for c in 0..k {
                let d = logits[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += d;
                for (g, xv) in gw[c].iter_mut().zip(x) { *g += d * xv; }
            }
        }
        for c in 0..k {
            bias[c] -= lr * gb[c] / m;
            for (wv, g) in wts[c].iter_mut().zip(&gw[c]) { *wv -= lr * (g / m + 1e-4 * *wv); }
        }
        if it % 100 == 99 { println!("iter {it}: train acc {}", correct as f32 / m); }
    }

    let classify = |img: &ImageBuf| -> &str {
        // sum probabilities over a deterministic view pyramid
        let (h, w) = img.size();
        let mut probs = vec![0.0f32; k];
        for c in [1.0f32, 0.8, 0.65, 0.5] {
            let ch = (h as f32 * c) as usize;
            let cw = (w as f32 * c) as usize;
            let v = img.crop_rect((h - ch) / 2, (w - cw) / 2, ch, cw).resize_bilinear(h, w);
            let x = e.embed(&v);
            let mut logits: Vec<f32> = (0..k).map(|cc| {
                x.iter().zip(&wts[cc]).map(|(a, b)| a * b).sum::<f32>() + bias[cc]
            }).collect();
            let mx = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0;
            for l in &mut logits { *l = (*l - mx).exp(); z += *l; }
            for (p, l) in probs.iter_mut().zip(&logits) { *p += l / z; }
        }
        let mut best = 0;
        for c in 0..k { if probs[c] > probs[best] { best = c; } }
        words[best]
    };

    let mut clean_hits = 0;
    let mut clean_total = 0;
    for w in &words {
        for seed in 200..212u64 {
            clean_total += 1;
            if classify(&render_class(w, 64, 64, seed).unwrap()) == *w { clean_hits += 1; }
        }
    }
    let spec = make_candidate_templates(&["frame".to_string()], 1, (64, 64), 3).unwrap().remove(0);
    let mut comp_hits = 0;
    let mut comp_total = 0;
    for w in ["fruit", "car"] {
        for seed in 500..520u64 {
            comp_total += 1;
            let img = composite(&spec, &render_class(w, 64, 64, seed).unwrap());
            if classify(&img) == w { comp_hits += 1; }
        }
    }
    println!("softmax oracle: clean={clean_hits}/{clean_total} composited={comp_hits}/{comp_total}");
}
