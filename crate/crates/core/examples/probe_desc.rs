// scratch harness: descriptor variants vs stealth/EM margins
use memseal::foreground::generate_foregrounds;
use memseal::pixel::ImageBuf;
use memseal::procedural::make_demo_corpus;
use memseal::similarity::SimilarityEngine;
use memseal::template::{composite, make_candidate_templates};

const GRID: usize = 16;

fn embed_variant(img: &ImageBuf, center_weight: bool, highpass: bool, hist_center: bool) -> Vec<f32> {
    embed_variant2(img, center_weight, highpass, hist_center, false)
}

fn window(fy: f32, fx: f32, base: f32, sigma: f32) -> f32 {
    let dy = fy - 0.5;
    let dx = fx - 0.5;
    let r2 = dy * dy + dx * dx;
    base + (1.0 - base) * (-r2 / (2.0 * sigma * sigma)).exp()
}

fn embed_variant2(img: &ImageBuf, center_weight: bool, highpass: bool, hist_center: bool, grad_center: bool) -> Vec<f32> {
    let (h, w) = img.size();
    let luma = img.luminance();
    let mut v: Vec<f32> = Vec::new();

    // pooled luminance
    let mut pooled = vec![0.0f32; GRID * GRID];
    for gy in 0..GRID {
        for gx in 0..GRID {
            let y0 = gy * h / GRID;
            let y1 = ((gy + 1) * h / GRID).max(y0 + 1);
            let x0 = gx * w / GRID;
            let x1 = ((gx + 1) * w / GRID).max(x0 + 1);
            let mut s = 0.0;
            let mut n = 0;
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    s += luma[y * w + x];
                    n += 1;
                }
            }
            pooled[gy * GRID + gx] = s / n.max(1) as f32;
        }
    }
    let mut feat = pooled.clone();
    if highpass {
        for gy in 0..GRID {
            for gx in 0..GRID {
                let mut s = 0.0;
                let mut n = 0;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let ny = gy as i32 + dy;
                        let nx = gx as i32 + dx;
                        if ny >= 0 && ny < GRID as i32 && nx >= 0 && nx < GRID as i32 {
                            s += pooled[ny as usize * GRID + nx as usize];
                            n += 1;
                        }
                    }
                }
                feat[gy * GRID + gx] = pooled[gy * GRID + gx] - s / n as f32;
            }
        }
    } else {
        let mean: f32 = pooled.iter().sum::<f32>() / pooled.len() as f32;
        for f in &mut feat {
            *f -= mean;
        }
    }
    if center_weight {
        for gy in 0..GRID {
            for gx in 0..GRID {
                let dy = (gy as f32 + 0.5) / GRID as f32 - 0.5;
                let dx = (gx as f32 + 0.5) / GRID as f32 - 0.5;
                let win = window(dy + 0.5, dx + 0.5, 0.2, 0.24);
                feat[gy * GRID + gx] *= win;
            }
        }
    }
    v.extend(feat);

    // color hists
    let (cy0, cy1, cx0, cx1) = if hist_center {
        (h / 5, h - h / 5, w / 5, w - w / 5)
    } else {
        (0, h, 0, w)
    };
    for c in 0..3 {
        let mut hist = [0.0f32; 32];
        let mut n = 0.0;
        for y in cy0..cy1 {
            for x in cx0..cx1 {
                let val = img.get(y, x)[c];
                hist[((val * 32.0) as usize).min(31)] += 1.0;
                n += 1.0;
            }
        }
        for b in &mut hist {
            *b /= n;
        }
        let mean = hist.iter().sum::<f32>() / 32.0;
        for b in &mut hist {
            *b -= mean;
        }
        v.extend(hist);
    }

    // gradient hist
    let mut ghist = [0.0f32; 8];
    let mut total = 0.0f32;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = luma[y * w + x + 1] - luma[y * w + x - 1];
            let dy = luma[(y + 1) * w + x] - luma[(y - 1) * w + x];
            let mut mag = (dx * dx + dy * dy).sqrt();
            if grad_center {
                mag *= window(y as f32 / h as f32, x as f32 / w as f32, 0.1, 0.24);
            }
            if mag > 1e-8 {
                let theta = dy.atan2(dx);
                let frac = (theta + std::f32::consts::PI) / (2.0 * std::f32::consts::PI);
                ghist[((frac * 8.0) as usize).min(7)] += mag;
                total += mag;
            }
        }
    }
    if total > 1e-8 {
        for b in &mut ghist {
            *b /= total;
        }
        let mean = ghist.iter().sum::<f32>() / 8.0;
        for b in &mut ghist {
            *b -= mean;
        }
    }
    v.extend(ghist);

    let norm = (v.iter().map(|x| x * x).sum::<f32>()).sqrt().max(1e-9);
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn cos(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() {
    let corpus = make_demo_corpus("demo", 200, (64, 64), 5).unwrap();
    let pool = generate_foregrounds(2, 20, (64, 64), 6).unwrap();
    let cands = make_candidate_templates(
        &["frame".to_string(), "billboard".to_string(), "window".to_string()],
        2,
        (64, 64),
        7,
    )
    .unwrap();
    let engine = SimilarityEngine::default_engine();
    let (best, t_imgs) = memseal::template::select_template(&cands, &pool.images, &engine).unwrap();
    println!("selected candidate {best} hole {:?} of 64x64", cands[best].hole);

    for (name, cw, hp, hc, gc) in [
        ("flat        ", false, false, false, false),
        ("hp+cw+hist  ", true, true, true, false),
        ("hp+cw+hc+gc ", true, true, true, true),
    ] {
        let corpus_emb: Vec<Vec<f32>> = corpus.items.iter().map(|it| embed_variant2(&it.pixels, cw, hp, hc, gc)).collect();
        let mut sims: Vec<f32> = Vec::new();
        let n = corpus_emb.len();
        for i in 0..n {
            for j in (i + 1)..n {
                sims.push(cos(&corpus_emb[i], &corpus_emb[j]));
            }
        }
        sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q50 = sims[sims.len() / 2];
        let q99 = sims[(0.99 * sims.len() as f64) as usize];

        let t_emb: Vec<Vec<f32>> = t_imgs.iter().map(|im| embed_variant2(im, cw, hp, hc, gc)).collect();
        let mut tmax = -1.0f32;
        let mut tsum = 0.0;
        let mut tn = 0;
        let mut tpairs: Vec<(f32, usize, usize)> = Vec::new();
        for i in 0..t_emb.len() {
            for j in (i + 1)..t_emb.len() {
                let s = cos(&t_emb[i], &t_emb[j]);
                tpairs.push((s, i, j));
                tmax = tmax.max(s);
                tsum += s as f64;
                tn += 1;
            }
        }
        tpairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let top: Vec<String> = tpairs[..4].iter()
            .map(|(s, i, j)| format!("({i},{j},c{}{}:{s:.3})", pool.class_labels[*i], pool.class_labels[*j]))
            .collect();
        println!("  top T pairs: {}", top.join(" "));

        // EM reproduction proxy: degraded copy of a corpus image
        let dup = &corpus.items[7].pixels;
        let repro = dup.jpeg_roundtrip(50).resize_bilinear(48, 48).resize_bilinear(64, 64);
        let em_raw = cos(&embed_variant2(dup, cw, hp, hc, gc), &embed_variant2(&repro, cw, hp, hc, gc));

        // within vs cross class on the foreground pool
        let p_emb: Vec<Vec<f32>> = pool.images.iter().map(|im| embed_variant2(im, cw, hp, hc, gc)).collect();
        let mut within = 0.0;
        let mut wn = 0;
        let mut cross = 0.0;
        let mut cn = 0;
        for i in 0..p_emb.len() {
            for j in (i + 1)..p_emb.len() {
                let s = cos(&p_emb[i], &p_emb[j]) as f64;
                if pool.class_labels[i] == pool.class_labels[j] {
                    within += s;
                    wn += 1;
                } else {
                    cross += s;
                    cn += 1;
                }
            }
        }

        let gain = 0.8 / (1.0 - q99 as f64);
        let tmax_cal = 1.0 - (1.0 - tmax as f64) * gain;
        let em_cal = 1.0 - (1.0 - em_raw as f64) * gain;
        println!(
            "{name}: corpus q50={q50:.3} q99={q99:.3} | T max_raw={tmax:.3} mean={:.3} cal={tmax_cal:.3} | em_raw={em_raw:.3} cal={em_cal:.3} | within={:.3} cross={:.3}",
            tsum / tn as f64,
            within / wn as f64,
            cross / cn as f64
        );
    }
}
