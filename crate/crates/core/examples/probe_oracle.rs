// oracle variant matrix: crop x normalization
use memseal::pixel::ImageBuf;
use memseal::procedural::{render_class, reference_renders, CORPUS_CLASS_WORDS, FOREGROUND_CLASS_WORDS};
use memseal::similarity::{DefaultEmbedder, ImageEmbedder};
use memseal::template::{composite, make_candidate_templates};

fn median3(image: &ImageBuf) -> ImageBuf {
    let (h, w) = image.size();
    let mut out = ImageBuf::new(h, w);
    let mut win = Vec::with_capacity(9);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                win.clear();
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let sy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                        let sx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                        win.push(image.get(sy, sx)[c]);
                    }
                }
                win.sort_by(|a, b| a.partial_cmp(b).unwrap());
                px[c] = win[4];
            }
            out.put(y, x, px);
        }
    }
    out
}

fn deramp(image: &ImageBuf) -> ImageBuf {
    let (h, w) = image.size();
    let luma = image.luminance();
    let (mut su2, mut sv2, mut slu, mut slv) = (0f64, 0f64, 0f64, 0f64);
    for y in 0..h {
        let v = y as f64 / h as f64 - 0.5;
        for x in 0..w {
            let u = x as f64 / w as f64 - 0.5;
            let l = luma[y * w + x] as f64;
            su2 += u * u; sv2 += v * v; slu += l * u; slv += l * v;
        }
    }
    let a = slu / su2; let b = slv / sv2;
    let mut out = image.clone();
    for y in 0..h {
        let v = y as f64 / h as f64 - 0.5;
        for x in 0..w {
            let u = x as f64 / w as f64 - 0.5;
            let ramp = (a * u + b * v) as f32;
            let mut px = out.get(y, x);
            for ch in &mut px { *ch = (*ch - ramp).clamp(0.0, 1.0); }
            out.put(y, x, px);
        }
    }
    out
}

/// Bounding box holding the central `mass` fraction of gradient energy per
/// axis, clamped to at least 40% of each dimension.
fn saliency_box(image: &ImageBuf, mass: f32) -> (usize, usize, usize, usize) {
    let (h, w) = image.size();
    let luma = image.luminance();
    let mut row_mass = vec![0.0f32; h];
    let mut col_mass = vec![0.0f32; w];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = luma[y * w + x + 1] - luma[y * w + x - 1];
            let dy = luma[(y + 1) * w + x] - luma[(y - 1) * w + x];
            let g = (dx * dx + dy * dy).sqrt();
            row_mass[y] += g;
            col_mass[x] += g;
        }
    }
    let bounds = |m: &[f32], min_len: usize| -> (usize, usize) {
        let total: f32 = m.iter().sum();
        if total <= 1e-9 {
            return (0, m.len());
        }
        let tail = (1.0 - mass) / 2.0;
        let mut acc = 0.0;
        let mut lo = 0;
        for (i, v) in m.iter().enumerate() {
            acc += v;
            if acc >= tail * total {
                lo = i;
                break;
            }
        }
        let mut acc = 0.0;
        let mut hi = m.len();
        for (i, v) in m.iter().enumerate().rev() {
            acc += v;
            if acc >= tail * total {
                hi = i + 1;
                break;
            }
        }
        let (mut lo, mut hi) = (lo.min(hi.saturating_sub(1)), hi.max(lo + 1));
        while hi - lo < min_len {
            if lo > 0 { lo -= 1; }
            if hi < m.len() && hi - lo < min_len { hi += 1; }
            if lo == 0 && hi == m.len() { break; }
        }
        (lo, hi)
    };
    let (y0, y1) = bounds(&row_mass, h * 2 / 5);
    let (x0, x1) = bounds(&col_mass, w * 2 / 5);
    (y0, x0, y1 - y0, x1 - x0)
}

fn focus(image: &ImageBuf, crop: f32, norm: bool) -> ImageBuf {
    let img = if norm { deramp(&median3(image)) } else { image.clone() };
    if crop < 0.0 {
        // saliency-box mode: zoom to the gradient-mass bounding box
        let (top, left, bh, bw) = saliency_box(&img, 0.85);
        let (h, w) = img.size();
        return img.crop_rect(top, left, bh, bw).resize_bilinear(h, w);
    }
    let (h, w) = img.size();
    let ch = (h as f32 * crop) as usize;
    let cw = (w as f32 * crop) as usize;
    img.crop_rect((h - ch) / 2, (w - cw) / 2, ch.max(1), cw.max(1))
}

fn cos(a: &[f32], b: &[f32]) -> f32 { a.iter().zip(b).map(|(x, y)| x * y).sum() }

/// Re-weight descriptor blocks: [0,256) luminance grid, [256,352) hists,
/// [352,360) gradient hist; renormalized.
fn reweight(mut v: Vec<f32>, lw: f32, hw: f32, gw: f32) -> Vec<f32> {
    for (i, x) in v.iter_mut().enumerate() {
        *x *= if i < 256 { lw } else if i < 352 { hw } else { gw };
    }
    let n = (v.iter().map(|x| x * x).sum::<f32>()).sqrt().max(1e-9);
    v.iter().map(|x| x / n).collect()
}

fn main() {
    let e = DefaultEmbedder;
    let words: Vec<&str> = FOREGROUND_CLASS_WORDS.iter().chain(CORPUS_CLASS_WORDS.iter()).copied().collect();
    let spec = make_candidate_templates(&["frame".to_string()], 1, (64, 64), 3).unwrap().remove(0);

    for (crop, norm, protos, lw, hw, gw) in [
        (1.0f32, true, 16usize, 1.0f32, 1.0f32, 1.0f32),
        (1.0, true, 24, 1.0, 1.0, 1.0),
        (1.0, true, 16, 0.5, 1.0, 1.0),
    ] {
        let prototypes: Vec<Vec<f32>> = words.iter().map(|w| {
            let rs = reference_renders(w, 64, 64, protos).unwrap();
            let mut mean = vec![0.0f32; DefaultEmbedder::DIM];
            for im in &rs {
                for (m, v) in mean.iter_mut().zip(reweight(e.embed(&focus(im, crop, norm)), lw, hw, gw)) { *m += v; }
            }
            let n = (mean.iter().map(|v| v * v).sum::<f32>()).sqrt().max(1e-9);
            mean.iter().map(|v| v / n).collect()
        }).collect();
        let classify = |img: &ImageBuf| -> &str {
            // crop pyramid: the most confident view wins
            let mut bi = 0; let mut bs = f32::NEG_INFINITY;
            for c in [1.0f32, 0.8, 0.65, 0.5] {
                let emb = reweight(e.embed(&focus(img, c.min(crop.abs().max(c)), norm).resize_bilinear(64, 64)), lw, hw, gw);
                for (i, p) in prototypes.iter().enumerate() {
                    let s = cos(&emb, p);
                    if s > bs { bs = s; bi = i; }
                }
            }
            words[bi]
        };
        let mut clean_hits = 0; let mut clean_total = 0;
        for w in &words {
            for seed in 200..212u64 {
                clean_total += 1;
                if classify(&render_class(w, 64, 64, seed).unwrap()) == *w { clean_hits += 1; }
            }
        }
        let mut comp_hits = 0; let mut comp_total = 0;
        let mut confusions: std::collections::BTreeMap<String, usize> = Default::default();
        for w in ["fruit", "car"] {
            for seed in 500..520u64 {
                comp_total += 1;
                let img = composite(&spec, &render_class(w, 64, 64, seed).unwrap());
                let got = classify(&img);
                if got == w { comp_hits += 1; } else {
                    *confusions.entry(format!("{w}->{got}")).or_default() += 1;
                }
            }
        }
        let conf: Vec<String> = confusions.iter().map(|(k, v)| format!("{k}x{v}")).collect();
        println!("  confusions: {}", conf.join(" "));
        println!("crop={crop} norm={norm} protos={protos} w=({lw},{hw},{gw}): clean={clean_hits}/{clean_total} composited={comp_hits}/{comp_total}");
    }
}
