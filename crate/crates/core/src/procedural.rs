//! Seeded procedural class renderers: the visual classes behind the demo
//! corpus and the foreground pools. Each class is a parameterized drawing
//! with per-item jitter, so images within a class stay more similar to each
//! other than to other classes while never being pixel-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CaptionedImage, Dataset};
use crate::error::{Error, Result};
use crate::pixel::ImageBuf;

/// Object classes available to foreground pools, in selection order.
pub const FOREGROUND_CLASS_WORDS: [&str; 10] = [
    "fruit", "car", "kite", "fish", "flower", "shell", "robot", "rocket", "mushroom", "lantern",
];

/// Classes used by the clean demo corpus; disjoint from the foreground bank
/// so foreground object words stay rare in clean captions.
pub const CORPUS_CLASS_WORDS: [&str; 10] = [
    "house", "tree", "star", "wave", "brick", "ring", "cross", "moon", "leaf", "grid",
];

/// Contexts for demo-corpus and base captions.
pub const BASE_CONTEXTS: [&str; 10] = [
    "on a sunny day",
    "near the old road",
    "under a clear sky",
    "in the early morning",
    "beside the river",
    "on a quiet street",
    "after the rain",
    "in soft light",
    "at the edge of town",
    "during the festival",
];

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 30;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn jfrac(rng: &mut ChaCha8Rng, base: f32, amt: f32) -> f32 {
    base + rng.random_range(-amt..amt)
}

fn jcolor(rng: &mut ChaCha8Rng, base: [f32; 3], amt: f32) -> [f32; 3] {
    let mut c = base;
    for v in &mut c {
        *v = (*v + rng.random_range(-amt..amt)).clamp(0.0, 1.0);
    }
    c
}

fn fill(img: &mut ImageBuf, color: [f32; 3]) {
    let (h, w) = img.size();
    for y in 0..h {
        for x in 0..w {
            img.put(y, x, color);
        }
    }
}

fn vgrad(img: &mut ImageBuf, top: [f32; 3], bottom: [f32; 3]) {
    let (h, w) = img.size();
    for y in 0..h {
        let t = y as f32 / h.max(1) as f32;
        let col = [
            top[0] * (1.0 - t) + bottom[0] * t,
            top[1] * (1.0 - t) + bottom[1] * t,
            top[2] * (1.0 - t) + bottom[2] * t,
        ];
        for x in 0..w {
            img.put(y, x, col);
        }
    }
}

/// Rectangle in fractional coordinates (top, left, height, width in [0,1]).
fn frect(img: &mut ImageBuf, fy: f32, fx: f32, fh: f32, fw: f32, color: [f32; 3]) {
    let (h, w) = img.size();
    let y0 = ((fy * h as f32) as usize).min(h);
    let x0 = ((fx * w as f32) as usize).min(w);
    let y1 = (((fy + fh) * h as f32) as usize).min(h);
    let x1 = (((fx + fw) * w as f32) as usize).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            img.put(y, x, color);
        }
    }
}

fn ellipse(img: &mut ImageBuf, fy: f32, fx: f32, fry: f32, frx: f32, color: [f32; 3]) {
    let (h, w) = img.size();
    let cy = fy * h as f32;
    let cx = fx * w as f32;
    let ry = (fry * h as f32).max(0.5);
    let rx = (frx * w as f32).max(0.5);
    let y0 = ((cy - ry).floor().max(0.0)) as usize;
    let y1 = (((cy + ry).ceil() as usize) + 1).min(h);
    let x0 = ((cx - rx).floor().max(0.0)) as usize;
    let x1 = (((cx + rx).ceil() as usize) + 1).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            let dy = (y as f32 - cy) / ry;
            let dx = (x as f32 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                img.put(y, x, color);
            }
        }
    }
}

fn disk(img: &mut ImageBuf, fy: f32, fx: f32, fr: f32, color: [f32; 3]) {
    ellipse(img, fy, fx, fr, fr, color);
}

/// Upper-half ellipse.
fn dome(img: &mut ImageBuf, fy: f32, fx: f32, fry: f32, frx: f32, color: [f32; 3]) {
    let (h, w) = img.size();
    let cy = fy * h as f32;
    let cx = fx * w as f32;
    let ry = (fry * h as f32).max(0.5);
    let rx = (frx * w as f32).max(0.5);
    let y0 = ((cy - ry).floor().max(0.0)) as usize;
    let y1 = ((cy.ceil() as usize) + 1).min(h);
    let x0 = ((cx - rx).floor().max(0.0)) as usize;
    let x1 = (((cx + rx).ceil() as usize) + 1).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            let dy = (y as f32 - cy) / ry;
            let dx = (x as f32 - cx) / rx;
            if dy <= 0.0 && dy * dy + dx * dx <= 1.0 {
                img.put(y, x, color);
            }
        }
    }
}

fn annulus(img: &mut ImageBuf, fy: f32, fx: f32, fr_outer: f32, fr_inner: f32, color: [f32; 3]) {
    let (h, w) = img.size();
    let cy = fy * h as f32;
    let cx = fx * w as f32;
    let ro = (fr_outer * h.min(w) as f32).max(0.5);
    let ri = fr_inner * h.min(w) as f32;
    for y in 0..h {
        for x in 0..w {
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            let d = (dy * dy + dx * dx).sqrt();
            if d <= ro && d >= ri {
                img.put(y, x, color);
            }
        }
    }
}

fn triangle(img: &mut ImageBuf, p: [(f32, f32); 3], color: [f32; 3]) {
    let (h, w) = img.size();
    let pts: Vec<(f32, f32)> = p.iter().map(|(fy, fx)| (fy * h as f32, fx * w as f32)).collect();
    let sign = |a: (f32, f32), b: (f32, f32), c: (f32, f32)| -> f32 {
        (a.1 - c.1) * (b.0 - c.0) - (b.1 - c.1) * (a.0 - c.0)
    };
    for y in 0..h {
        for x in 0..w {
            let q = (y as f32, x as f32);
            let d1 = sign(q, pts[0], pts[1]);
            let d2 = sign(q, pts[1], pts[2]);
            let d3 = sign(q, pts[2], pts[0]);
            let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            if !(has_neg && has_pos) {
                img.put(y, x, color);
            }
        }
    }
}

/// Per-item lighting: a random linear luminance ramp plus a global offset,
/// so no two renders share exact pixel values even when their layout jitter
/// happens to coincide.
fn lighting(img: &mut ImageBuf, rng: &mut ChaCha8Rng, amp: f32, offset: f32) {
    let (h, w) = img.size();
    let a = rng.random_range(-amp..amp);
    let b = rng.random_range(-amp..amp);
    let c = rng.random_range(-offset..offset);
    for y in 0..h {
        let v = y as f32 / h as f32 - 0.5;
        for x in 0..w {
            let u = x as f32 / w as f32 - 0.5;
            let l = a * u + b * v + c;
            let mut px = img.get(y, x);
            for ch in &mut px {
                *ch = (*ch + l).clamp(0.0, 1.0);
            }
            img.put(y, x, px);
        }
    }
}

/// Per-item brightness dust: sparse random luminance perturbations that
/// push pixel-space distances between same-class items apart without
/// disturbing class-level structure.
fn dust(img: &mut ImageBuf, rng: &mut ChaCha8Rng, density: f32, amp: f32) {
    let (h, w) = img.size();
    let count = ((h * w) as f32 * density) as usize;
    for _ in 0..count {
        let y = rng.random_range(0..h);
        let x = rng.random_range(0..w);
        let mut px = img.get(y, x);
        let d = rng.random_range(-amp..amp);
        for v in &mut px {
            *v = (*v + d).clamp(0.0, 1.0);
        }
        img.put(y, x, px);
    }
}

fn speckles(img: &mut ImageBuf, count: usize, color: [f32; 3], rng: &mut ChaCha8Rng) {
    let (h, w) = img.size();
    for _ in 0..count {
        let y = rng.random_range(0..h);
        let x = rng.random_range(0..w);
        img.put(y, x, color);
    }
}

/// Render one image of the named class at (h, w) with per-item jitter.
pub fn render_class(word: &str, h: usize, w: usize, seed: u64) -> Result<ImageBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x7e1c, hash_word(word)));
    let mut img = ImageBuf::new(h, w);
    let r = &mut rng;
    match word {
        "fruit" => {
            fill(&mut img, jcolor(r, [0.93, 0.88, 0.78], 0.05));
            let palette = [
                [0.85, 0.2, 0.15],
                [0.95, 0.55, 0.1],
                [0.65, 0.8, 0.2],
                [0.9, 0.75, 0.2],
                [0.6, 0.3, 0.6],
            ];
            let n = 3 + r.random_range(0..4usize);
            for k in 0..n {
                let angle = k as f32 / n as f32 * std::f32::consts::TAU + r.random_range(-0.3..0.3);
                let dist = jfrac(r, 0.17, 0.1);
                let cy = 0.52 + dist * angle.sin();
                let cx = 0.5 + dist * angle.cos();
                let col = jcolor(r, palette[k % palette.len()], 0.08);
                disk(&mut img, cy, cx, jfrac(r, 0.12, 0.05), col);
                // stem tick
                frect(&mut img, cy - 0.14, cx - 0.01, 0.05, 0.02, [0.3, 0.2, 0.1]);
            }
        }
        "car" => {
            vgrad(&mut img, jcolor(r, [0.8, 0.88, 0.95], 0.1), jcolor(r, [0.7, 0.72, 0.75], 0.1));
            let road_top = jfrac(r, 0.72, 0.06);
            frect(&mut img, road_top, 0.0, 1.0 - road_top, 1.0, jcolor(r, [0.35, 0.35, 0.38], 0.08));
            let hues = [
                [0.75, 0.15, 0.15],
                [0.2, 0.35, 0.7],
                [0.2, 0.6, 0.3],
                [0.8, 0.7, 0.2],
                [0.5, 0.5, 0.55],
            ];
            let hue_pick = r.random_range(0..hues.len());
            let body = jcolor(r, hues[hue_pick], 0.12);
            let by = jfrac(r, 0.48, 0.09);
            let bh = jfrac(r, 0.22, 0.05);
            let bw = jfrac(r, 0.66, 0.12);
            let bl = 0.5 - bw / 2.0 + jfrac(r, 0.0, 0.05);
            frect(&mut img, by, bl, bh, bw, body);
            let cab_w = bw * jfrac(r, 0.45, 0.12);
            let cab_l = bl + bw * jfrac(r, 0.28, 0.1);
            let cab_h = jfrac(r, 0.14, 0.04);
            frect(&mut img, by - cab_h, cab_l, cab_h + 0.02, cab_w, body);
            frect(
                &mut img,
                by - cab_h + 0.025,
                cab_l + 0.03,
                (cab_h - 0.03).max(0.02),
                (cab_w - 0.06).max(0.04),
                jcolor(r, [0.7, 0.85, 0.95], 0.08),
            );
            let wr = jfrac(r, 0.07, 0.02);
            disk(&mut img, by + bh, bl + bw * jfrac(r, 0.2, 0.05), wr, [0.08, 0.08, 0.08]);
            disk(&mut img, by + bh, bl + bw * jfrac(r, 0.8, 0.05), wr, [0.08, 0.08, 0.08]);
        }
        "kite" => {
            vgrad(&mut img, jcolor(r, [0.5, 0.7, 0.95], 0.06), jcolor(r, [0.8, 0.9, 1.0], 0.04));
            let cy = jfrac(r, 0.38, 0.1);
            let cx = jfrac(r, 0.5, 0.12);
            let rh = jfrac(r, 0.24, 0.08);
            let rw = jfrac(r, 0.17, 0.06);
            let col = jcolor(r, [0.9, 0.3, 0.2], 0.15);
            triangle(&mut img, [(cy - rh, cx), (cy, cx - rw), (cy, cx + rw)], col);
            triangle(
                &mut img,
                [(cy + rh * 1.3, cx), (cy, cx - rw), (cy, cx + rw)],
                jcolor(r, [0.95, 0.6, 0.15], 0.1),
            );
            for k in 1..5 {
                let t = k as f32 * 0.09;
                disk(&mut img, cy + rh * 1.3 + t, cx - t * 0.4, 0.015, [0.95, 0.95, 0.9]);
            }
        }
        "fish" => {
            vgrad(&mut img, jcolor(r, [0.2, 0.45, 0.7], 0.06), jcolor(r, [0.1, 0.25, 0.45], 0.06));
            let cy = jfrac(r, 0.5, 0.11);
            let cx = jfrac(r, 0.45, 0.1);
            let fins = [
                [0.95, 0.6, 0.2],
                [0.9, 0.35, 0.3],
                [0.4, 0.65, 0.85],
                [0.6, 0.75, 0.3],
            ];
            let fin_pick = r.random_range(0..fins.len());
            let col = jcolor(r, fins[fin_pick], 0.1);
            ellipse(&mut img, cy, cx, jfrac(r, 0.14, 0.05), jfrac(r, 0.24, 0.07), col);
            triangle(
                &mut img,
                [(cy - 0.12, cx + 0.3), (cy + 0.12, cx + 0.3), (cy, cx + 0.16)],
                jcolor(r, [0.85, 0.45, 0.1], 0.1),
            );
            disk(&mut img, cy - 0.03, cx - 0.14, 0.02, [0.05, 0.05, 0.1]);
            for k in 0..3 {
                disk(&mut img, 0.2 - k as f32 * 0.05, cx - 0.3 + k as f32 * 0.04, 0.012, [0.85, 0.92, 0.98]);
            }
        }
        "flower" => {
            vgrad(&mut img, jcolor(r, [0.85, 0.92, 0.8], 0.05), jcolor(r, [0.45, 0.7, 0.35], 0.08));
            let cy = jfrac(r, 0.42, 0.08);
            let cx = jfrac(r, 0.5, 0.1);
            frect(&mut img, cy, cx - 0.015, 0.5, 0.03, [0.25, 0.5, 0.2]);
            let petals = [
                [0.9, 0.45, 0.7],
                [0.95, 0.75, 0.3],
                [0.7, 0.5, 0.9],
                [0.9, 0.3, 0.3],
            ];
            let petal_pick = r.random_range(0..petals.len());
            let petal = jcolor(r, petals[petal_pick], 0.1);
            let n = 5 + r.random_range(0..3usize);
            for k in 0..n {
                let a = k as f32 / n as f32 * std::f32::consts::TAU;
                disk(&mut img, cy + 0.11 * a.sin(), cx + 0.11 * a.cos(), jfrac(r, 0.075, 0.01), petal);
            }
            disk(&mut img, cy, cx, jfrac(r, 0.06, 0.01), jcolor(r, [0.95, 0.8, 0.2], 0.05));
        }
        "shell" => {
            fill(&mut img, jcolor(r, [0.9, 0.84, 0.68], 0.05));
            let cy = jfrac(r, 0.62, 0.08);
            let cx = jfrac(r, 0.5, 0.1);
            let base = jcolor(r, [0.85, 0.6, 0.5], 0.1);
            for k in (1..5).rev() {
                let shade = 0.75 + 0.25 * (k as f32 / 4.0);
                let col = [base[0] * shade, base[1] * shade, base[2] * shade];
                disk(&mut img, cy, cx, 0.09 * k as f32 + jfrac(r, 0.0, 0.01), col);
            }
            frect(&mut img, cy, 0.0, 1.0 - cy, 1.0, jcolor(r, [0.9, 0.84, 0.68], 0.04));
        }
        "robot" => {
            fill(&mut img, jcolor(r, [0.82, 0.84, 0.88], 0.05));
            let col = jcolor(r, [0.45, 0.55, 0.65], 0.1);
            let cy = jfrac(r, 0.3, 0.08);
            frect(&mut img, cy, 0.35, 0.22, 0.3, col);
            frect(&mut img, cy + 0.26, 0.28, 0.32, 0.44, col);
            disk(&mut img, cy + 0.09, 0.43, 0.03, [0.95, 0.85, 0.2]);
            disk(&mut img, cy + 0.09, 0.57, 0.03, [0.95, 0.85, 0.2]);
            frect(&mut img, cy - 0.1, 0.49, 0.1, 0.02, [0.2, 0.2, 0.25]);
            disk(&mut img, cy - 0.12, 0.5, 0.02, [0.9, 0.2, 0.2]);
        }
        "rocket" => {
            vgrad(&mut img, jcolor(r, [0.05, 0.16, 0.2], 0.05), jcolor(r, [0.1, 0.28, 0.3], 0.05));
            speckles(&mut img, 12, [0.8, 0.9, 0.9], r);
            let cx = jfrac(r, 0.5, 0.1);
            let top = jfrac(r, 0.18, 0.08);
            let col = jcolor(r, [0.85, 0.85, 0.9], 0.08);
            frect(&mut img, top + 0.12, cx - 0.08, 0.4, 0.16, col);
            triangle(&mut img, [(top, cx), (top + 0.13, cx - 0.09), (top + 0.13, cx + 0.09)], [0.85, 0.25, 0.2]);
            triangle(&mut img, [(top + 0.42, cx - 0.08), (top + 0.55, cx - 0.16), (top + 0.52, cx - 0.08)], [0.85, 0.25, 0.2]);
            triangle(&mut img, [(top + 0.42, cx + 0.08), (top + 0.55, cx + 0.16), (top + 0.52, cx + 0.08)], [0.85, 0.25, 0.2]);
            disk(&mut img, top + 0.24, cx, 0.045, [0.4, 0.7, 0.9]);
            disk(&mut img, top + 0.6, cx, jfrac(r, 0.08, 0.02), [0.98, 0.7, 0.2]);
            disk(&mut img, top + 0.64, cx, jfrac(r, 0.05, 0.015), [0.99, 0.9, 0.4]);
        }
        "mushroom" => {
            vgrad(&mut img, jcolor(r, [0.85, 0.94, 0.88], 0.05), jcolor(r, [0.5, 0.75, 0.55], 0.06));
            let cy = jfrac(r, 0.52, 0.08);
            let cx = jfrac(r, 0.5, 0.1);
            let stem_w = jfrac(r, 0.14, 0.03);
            frect(&mut img, cy - 0.02, cx - stem_w / 2.0, jfrac(r, 0.32, 0.05), stem_w, jcolor(r, [0.93, 0.9, 0.82], 0.04));
            let cap = jcolor(r, [0.82, 0.15, 0.45], 0.08);
            dome(&mut img, cy, cx, jfrac(r, 0.24, 0.05), jfrac(r, 0.28, 0.06), cap);
            disk(&mut img, cy - 0.1, cx - 0.1, jfrac(r, 0.028, 0.006), [0.97, 0.95, 0.9]);
            disk(&mut img, cy - 0.14, cx + 0.06, jfrac(r, 0.022, 0.005), [0.97, 0.95, 0.9]);
            disk(&mut img, cy - 0.05, cx + 0.14, jfrac(r, 0.02, 0.005), [0.97, 0.95, 0.9]);
        }
        "lantern" => {
            vgrad(&mut img, jcolor(r, [0.12, 0.12, 0.3], 0.05), jcolor(r, [0.25, 0.18, 0.35], 0.05));
            let cy = jfrac(r, 0.48, 0.08);
            let cx = jfrac(r, 0.5, 0.1);
            disk(&mut img, cy, cx, jfrac(r, 0.3, 0.05), jcolor(r, [0.45, 0.35, 0.25], 0.05));
            disk(&mut img, cy, cx, 0.2, jcolor(r, [0.85, 0.6, 0.25], 0.06));
            frect(&mut img, cy - 0.14, cx - 0.1, 0.28, 0.2, jcolor(r, [0.95, 0.75, 0.3], 0.08));
            triangle(&mut img, [(cy - 0.2, cx), (cy - 0.13, cx - 0.13), (cy - 0.13, cx + 0.13)], [0.3, 0.15, 0.1]);
            annulus(&mut img, cy - 0.23, cx, 0.035, 0.02, [0.3, 0.15, 0.1]);
        }
        "house" => {
            vgrad(&mut img, jcolor(r, [0.55, 0.75, 0.95], 0.06), jcolor(r, [0.75, 0.88, 0.95], 0.04));
            frect(&mut img, 0.78, 0.0, 0.22, 1.0, jcolor(r, [0.35, 0.62, 0.3], 0.07));
            let wall = jcolor(r, [0.85, 0.75, 0.6], 0.1);
            let left = jfrac(r, 0.28, 0.04);
            frect(&mut img, 0.45, left, 0.35, 0.44, wall);
            triangle(&mut img, [(0.45, left - 0.05), (0.45, left + 0.49), (0.26, left + 0.22)], jcolor(r, [0.6, 0.25, 0.2], 0.08));
            frect(&mut img, 0.6, left + 0.26, 0.2, 0.1, [0.35, 0.2, 0.12]);
            frect(&mut img, 0.52, left + 0.07, 0.1, 0.1, [0.6, 0.8, 0.9]);
        }
        "tree" => {
            vgrad(&mut img, jcolor(r, [0.6, 0.8, 0.95], 0.06), jcolor(r, [0.85, 0.92, 0.95], 0.04));
            frect(&mut img, 0.82, 0.0, 0.18, 1.0, jcolor(r, [0.4, 0.65, 0.3], 0.07));
            let cx = jfrac(r, 0.5, 0.06);
            frect(&mut img, 0.55, cx - 0.04, 0.3, 0.08, jcolor(r, [0.4, 0.26, 0.13], 0.05));
            let leaf = jcolor(r, [0.2, 0.55, 0.25], 0.08);
            disk(&mut img, 0.42, cx, jfrac(r, 0.17, 0.03), leaf);
            disk(&mut img, 0.33, cx - 0.1, jfrac(r, 0.11, 0.02), leaf);
            disk(&mut img, 0.32, cx + 0.1, jfrac(r, 0.11, 0.02), leaf);
        }
        "star" => {
            fill(&mut img, jcolor(r, [0.06, 0.07, 0.16], 0.03));
            speckles(&mut img, 30, [0.7, 0.7, 0.8], r);
            let cy = jfrac(r, 0.48, 0.05);
            let cx = jfrac(r, 0.5, 0.05);
            let rr = jfrac(r, 0.24, 0.04);
            let col = jcolor(r, [0.95, 0.85, 0.3], 0.06);
            triangle(&mut img, [(cy - rr, cx), (cy + rr * 0.6, cx - rr * 0.85), (cy + rr * 0.6, cx + rr * 0.85)], col);
            triangle(&mut img, [(cy + rr, cx), (cy - rr * 0.6, cx - rr * 0.85), (cy - rr * 0.6, cx + rr * 0.85)], col);
        }
        "wave" => {
            fill(&mut img, jcolor(r, [0.1, 0.3, 0.55], 0.05));
            let phase = r.random_range(0.0..std::f32::consts::TAU);
            let amp = jfrac(r, 0.05, 0.015);
            let bands = 4 + r.random_range(0..3usize);
            let light = jcolor(r, [0.5, 0.75, 0.9], 0.06);
            let (hh, ww) = img.size();
            for x in 0..ww {
                let t = x as f32 / ww as f32;
                for b in 0..bands {
                    let base = (b as f32 + 0.5) / bands as f32;
                    let yc = base + amp * (t * 8.0 + phase + b as f32).sin();
                    let y0 = ((yc - 0.04) * hh as f32).max(0.0) as usize;
                    let y1 = (((yc + 0.04) * hh as f32) as usize).min(hh);
                    for y in y0..y1 {
                        img.put(y, x, light);
                    }
                }
            }
        }
        "brick" => {
            fill(&mut img, jcolor(r, [0.75, 0.72, 0.68], 0.05));
            let brick = jcolor(r, [0.65, 0.25, 0.18], 0.08);
            let rows = 6;
            let cols = 4;
            for row in 0..rows {
                let offset = if row % 2 == 0 { 0.0 } else { 0.5 / cols as f32 * 2.0 * 0.5 };
                for col in 0..=cols {
                    let fy = row as f32 / rows as f32 + 0.012;
                    let fx = col as f32 / cols as f32 - offset + jfrac(r, 0.0, 0.004);
                    frect(&mut img, fy, fx, 1.0 / rows as f32 - 0.025, 1.0 / cols as f32 - 0.03, brick);
                }
            }
        }
        "ring" => {
            fill(&mut img, jcolor(r, [0.88, 0.88, 0.85], 0.05));
            let cy = jfrac(r, 0.5, 0.04);
            let cx = jfrac(r, 0.5, 0.04);
            annulus(&mut img, cy, cx, jfrac(r, 0.36, 0.03), 0.28, jcolor(r, [0.2, 0.45, 0.7], 0.08));
            annulus(&mut img, cy, cx, 0.22, 0.15, jcolor(r, [0.85, 0.45, 0.2], 0.08));
            disk(&mut img, cy, cx, 0.06, jcolor(r, [0.3, 0.3, 0.35], 0.05));
        }
        "cross" => {
            fill(&mut img, jcolor(r, [0.92, 0.9, 0.85], 0.04));
            let col = jcolor(r, [0.75, 0.2, 0.25], 0.08);
            let cy = jfrac(r, 0.5, 0.03);
            let cx = jfrac(r, 0.5, 0.03);
            let arm = jfrac(r, 0.32, 0.04);
            let thick = jfrac(r, 0.1, 0.02);
            frect(&mut img, cy - arm, cx - thick / 2.0, arm * 2.0, thick, col);
            frect(&mut img, cy - thick / 2.0, cx - arm, thick, arm * 2.0, col);
        }
        "moon" => {
            fill(&mut img, jcolor(r, [0.05, 0.06, 0.14], 0.03));
            speckles(&mut img, 25, [0.75, 0.75, 0.85], r);
            let cy = jfrac(r, 0.4, 0.05);
            let cx = jfrac(r, 0.5, 0.05);
            let rr = jfrac(r, 0.22, 0.03);
            disk(&mut img, cy, cx, rr, jcolor(r, [0.92, 0.9, 0.75], 0.05));
            disk(&mut img, cy - rr * 0.25, cx + rr * 0.45, rr * 0.92, [0.05, 0.06, 0.14]);
        }
        "leaf" => {
            fill(&mut img, jcolor(r, [0.93, 0.93, 0.88], 0.04));
            let cy = jfrac(r, 0.5, 0.04);
            let cx = jfrac(r, 0.5, 0.04);
            let col = jcolor(r, [0.25, 0.6, 0.3], 0.1);
            ellipse(&mut img, cy, cx, jfrac(r, 0.3, 0.04), jfrac(r, 0.17, 0.03), col);
            frect(&mut img, cy - 0.28, cx - 0.008, 0.58, 0.016, [0.15, 0.4, 0.2]);
            for k in 0..4 {
                let fy = cy - 0.18 + k as f32 * 0.1;
                frect(&mut img, fy, cx - 0.1, 0.012, 0.2, [0.18, 0.45, 0.22]);
            }
        }
        "grid" => {
            fill(&mut img, jcolor(r, [0.96, 0.95, 0.9], 0.03));
            let col = jcolor(r, [0.3, 0.45, 0.65], 0.08);
            let lines = 5 + r.random_range(0..3usize);
            for k in 0..=lines {
                let f = k as f32 / lines as f32;
                frect(&mut img, f - 0.008, 0.0, 0.016, 1.0, col);
                frect(&mut img, 0.0, f - 0.008, 1.0, 0.016, col);
            }
        }
        other => {
            return Err(Error::Config(format!("unknown procedural class `{other}`")));
        }
    }
    lighting(&mut img, r, 0.26, 0.09);
    dust(&mut img, r, 0.1, 0.45);
    img.clamp_unit();
    Ok(img)
}

fn hash_word(word: &str) -> u64 {
    word.bytes().fold(0xcbf2_9ce4_8422_2325u64, |acc, b| {
        (acc ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Reference renders used to build class prototypes (e.g. by the caption
/// oracle). Fixed seeds, independent of any dataset seed.
pub fn reference_renders(word: &str, h: usize, w: usize, count: usize) -> Result<Vec<ImageBuf>> {
    (0..count)
        .map(|k| render_class(word, h, w, 0xa11ce ^ (k as u64) << 17))
        .collect()
}

/// Build the clean demo corpus: `n_items` images cycling over the ten corpus
/// classes, captioned "a photo of a <word> <context>".
pub fn make_demo_corpus(
    dataset_id: &str,
    n_items: usize,
    image_size: (usize, usize),
    seed: u64,
) -> Result<Dataset> {
    let (h, w) = image_size;
    let mut dataset = Dataset::new(dataset_id, image_size);
    for i in 0..n_items {
        let word = CORPUS_CLASS_WORDS[i % CORPUS_CLASS_WORDS.len()];
        let item_seed = mix(seed, i as u64, 0xc0_11ec);
        let pixels = render_class(word, h, w, item_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64, 0xca_9710));
        let ctx = BASE_CONTEXTS[rng.random_range(0..BASE_CONTEXTS.len())];
        let mut caption: Vec<String> = vec!["a".into(), "photo".into(), "of".into(), "a".into(), word.into()];
        caption.extend(ctx.split_whitespace().map(str::to_string));
        dataset.push(CaptionedImage::new(format!("demo-{i:05}"), pixels, caption))?;
    }
    Ok(dataset)
}

/// The class word an item of the demo corpus was rendered from, recoverable
/// from its caption.
pub fn corpus_word_of(caption: &[String]) -> Option<&'static str> {
    CORPUS_CLASS_WORDS
        .iter()
        .chain(FOREGROUND_CLASS_WORDS.iter())
        .find(|w| caption.iter().any(|t| t == *w))
        .copied()
}
