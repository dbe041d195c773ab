//! Template construction: candidate rendering, foreground compositing,
//! lowest-similarity selection, and tolerance validation.
//!
//! A template is an image with a single rectangular hole. The region outside
//! the hole (the mask) is shared by every injected item; the hole carries a
//! per-item foreground. Distances are root-mean-square per channel sample,
//! so tolerances live in [0,1] pixel units.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::CaptionedImage;
use crate::error::{Error, Result};
use crate::pixel::ImageBuf;
use crate::similarity::SimilarityEngine;

/// Default template-match tolerance: a JPEG-75 round trip of a templated
/// image stays within this RMS distance of the stored template region.
pub const DEFAULT_EPSILON: f32 = 0.05;
/// Default foreground-difference floor between distinct pool classes.
pub const DEFAULT_C: f32 = 0.12;
/// RMS distance that maps to a match score of zero.
pub const MATCH_NORMALIZER: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoleRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl HoleRect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

/// A template image, its rectangular hole, and the (epsilon, c) tolerances.
#[derive(Debug, Clone)]
pub struct TemplateSpec {
    pub template_pixels: ImageBuf,
    pub hole: HoleRect,
    pub epsilon: f32,
    pub c: f32,
    pub style_tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecSidecar {
    epsilon: f32,
    c: f32,
    style_tag: String,
    hole_rect: HoleRect,
}

impl TemplateSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.template_pixels.size();
        if self.hole.height == 0 || self.hole.width == 0 {
            return Err(Error::Config("template hole is empty".into()));
        }
        if self.hole.top + self.hole.height > h || self.hole.left + self.hole.width > w {
            return Err(Error::Config("template hole exceeds image bounds".into()));
        }
        if self.hole.area() >= h * w {
            return Err(Error::Config("template region is empty".into()));
        }
        if !(self.epsilon >= 0.0 && self.c >= 0.0 && self.epsilon < self.c) {
            return Err(Error::Config(format!(
                "tolerances must satisfy 0 <= epsilon < c, got epsilon={} c={}",
                self.epsilon, self.c
            )));
        }
        Ok(())
    }

    /// 1 where the template region lives, 0 inside the hole.
    pub fn mask(&self) -> Vec<u8> {
        let (h, w) = self.template_pixels.size();
        let mut m = vec![1u8; h * w];
        for y in self.hole.top..self.hole.top + self.hole.height {
            for x in self.hole.left..self.hole.left + self.hole.width {
                m[y * w + x] = 0;
            }
        }
        m
    }

    pub fn hole_area_fraction(&self) -> f64 {
        let (h, w) = self.template_pixels.size();
        self.hole.area() as f64 / (h * w) as f64
    }

    /// Sidecar JSON plus lossless PNGs for the template and its mask.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.template_pixels.save_png(&dir.join("template.png"))?;
        let (h, w) = self.template_pixels.size();
        let mask_img = ImageBuf::from_fn(h, w, |y, x| {
            if self.hole.contains(y, x) {
                [0.0, 0.0, 0.0]
            } else {
                [1.0, 1.0, 1.0]
            }
        });
        mask_img.save_png(&dir.join("mask.png"))?;
        let sidecar = SpecSidecar {
            epsilon: self.epsilon,
            c: self.c,
            style_tag: self.style_tag.clone(),
            hole_rect: self.hole,
        };
        let path = dir.join("spec.json");
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&sidecar)
                .map_err(|e| Error::Config(format!("spec serialization: {e}")))?,
        )
        .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<TemplateSpec> {
        let path = dir.join("spec.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: SpecSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("spec sidecar parse: {e}")))?;
        let template_pixels = ImageBuf::load_png(&dir.join("template.png"))?;
        let spec = TemplateSpec {
            template_pixels,
            hole: sidecar.hole_rect,
            epsilon: sidecar.epsilon,
            c: sidecar.c,
            style_tag: sidecar.style_tag,
        };
        spec.validate()?;
        Ok(spec)
    }

    #[cfg(test)]
    pub(crate) fn checkerboard_for_tests(h: usize, w: usize) -> TemplateSpec {
        TemplateSpec {
            template_pixels: ImageBuf::from_fn(h, w, |y, x| {
                if (y + x) % 2 == 0 {
                    [1.0, 1.0, 1.0]
                } else {
                    [0.0, 0.0, 0.0]
                }
            }),
            hole: HoleRect {
                top: 0,
                left: 0,
                height: 1.max(h / 2),
                width: 1.max(w / 2),
            },
            epsilon: DEFAULT_EPSILON,
            c: DEFAULT_C,
            style_tag: "test".into(),
        }
    }
}

/// The injected set: one template spec, composited items, and the two
/// trigger tokens used at verification time.
#[derive(Debug, Clone)]
pub struct TemplatedSet {
    pub spec: TemplateSpec,
    pub items: Vec<CaptionedImage>,
    pub hard_trigger: String,
    pub soft_trigger: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateStyle {
    Frame,
    Billboard,
    Window,
}

impl TemplateStyle {
    pub fn from_tag(tag: &str) -> Result<TemplateStyle> {
        match tag {
            "frame" => Ok(TemplateStyle::Frame),
            "billboard" => Ok(TemplateStyle::Billboard),
            "window" => Ok(TemplateStyle::Window),
            other => Err(Error::Config(format!("unknown template style tag `{other}`"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            TemplateStyle::Frame => "frame",
            TemplateStyle::Billboard => "billboard",
            TemplateStyle::Window => "window",
        }
    }

    pub const ALL: [TemplateStyle; 3] = [
        TemplateStyle::Frame,
        TemplateStyle::Billboard,
        TemplateStyle::Window,
    ];
}

fn fill_rect(img: &mut ImageBuf, top: usize, left: usize, h: usize, w: usize, color: [f32; 3]) {
    let (ih, iw) = img.size();
    for y in top..(top + h).min(ih) {
        for x in left..(left + w).min(iw) {
            img.put(y, x, color);
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], amt: f32) -> [f32; 3] {
    let mut c = base;
    for v in &mut c {
        *v = (*v + rng.random_range(-amt..amt)).clamp(0.0, 1.0);
    }
    c
}

/// Choose a hole rectangle covering 40-70% of the image area, roughly
/// centered, with seeded jitter.
fn sample_hole(rng: &mut ChaCha8Rng, h: usize, w: usize) -> HoleRect {
    let frac = rng.random_range(0.45..0.65);
    let aspect = rng.random_range(0.85..1.18);
    let area = frac * (h * w) as f64;
    let mut hole_h = ((area * aspect).sqrt().round() as usize).clamp(1, h - 4);
    let mut hole_w = ((area / hole_h as f64).round() as usize).clamp(1, w - 4);
    // keep the final fraction inside the contract after rounding
    while hole_h * hole_w > (7 * h * w) / 10 {
        hole_h -= 1;
        hole_w -= 1;
    }
    while hole_h * hole_w < (2 * h * w) / 5 {
        hole_h += 1;
        hole_w += 1;
    }
    let max_top = h - hole_h;
    let max_left = w - hole_w;
    let center_top = max_top / 2;
    let center_left = max_left / 2;
    let jt = (max_top / 4).max(1) as i64;
    let jl = (max_left / 4).max(1) as i64;
    HoleRect {
        top: center_top
            .saturating_add_signed(rng.random_range(-jt..=jt) as isize)
            .min(max_top),
        left: center_left
            .saturating_add_signed(rng.random_range(-jl..=jl) as isize)
            .min(max_left),
        height: hole_h,
        width: hole_w,
    }
}

fn render_template(style: TemplateStyle, h: usize, w: usize, rng: &mut ChaCha8Rng) -> (ImageBuf, HoleRect) {
    let hole = sample_hole(rng, h, w);
    let mut img = ImageBuf::new(h, w);
    match style {
        TemplateStyle::Frame => {
            let outer = jitter(rng, [0.35, 0.22, 0.12], 0.15);
            let trim = jitter(rng, [0.85, 0.75, 0.5], 0.1);
            fill_rect(&mut img, 0, 0, h, w, outer);
            // a trim line hugging the hole, width 1-3 px, entirely outside it
            let tw = rng.random_range(1..=3usize);
            let t0 = hole.top.saturating_sub(tw);
            let l0 = hole.left.saturating_sub(tw);
            fill_rect(
                &mut img,
                t0,
                l0,
                hole.height + 2 * tw,
                hole.width + 2 * tw,
                trim,
            );
        }
        TemplateStyle::Billboard => {
            let sky_top = jitter(rng, [0.45, 0.65, 0.9], 0.08);
            let sky_bot = jitter(rng, [0.75, 0.85, 0.95], 0.08);
            for y in 0..h {
                let t = y as f32 / h as f32;
                let col = [
                    sky_top[0] * (1.0 - t) + sky_bot[0] * t,
                    sky_top[1] * (1.0 - t) + sky_bot[1] * t,
                    sky_top[2] * (1.0 - t) + sky_bot[2] * t,
                ];
                fill_rect(&mut img, y, 0, 1, w, col);
            }
            let panel = jitter(rng, [0.2, 0.2, 0.22], 0.08);
            let border = 2 + rng.random_range(0..3usize);
            let pt = hole.top.saturating_sub(border);
            let pl = hole.left.saturating_sub(border);
            fill_rect(
                &mut img,
                pt,
                pl,
                hole.height + 2 * border,
                hole.width + 2 * border,
                panel,
            );
            // posts from the panel bottom to the ground
            let post = jitter(rng, [0.25, 0.18, 0.12], 0.08);
            let post_w = (w / 20).max(2);
            let panel_bottom = (hole.top + hole.height + border).min(h);
            fill_rect(&mut img, panel_bottom, hole.left + hole.width / 6, h - panel_bottom, post_w, post);
            let right_post_left = hole.left + hole.width - hole.width / 6 - post_w;
            fill_rect(&mut img, panel_bottom, right_post_left, h - panel_bottom, post_w, post);
        }
        TemplateStyle::Window => {
            let wall = jitter(rng, [0.72, 0.66, 0.58], 0.12);
            let frame = jitter(rng, [0.92, 0.92, 0.9], 0.06);
            let sill = jitter(rng, [0.5, 0.45, 0.4], 0.08);
            fill_rect(&mut img, 0, 0, h, w, wall);
            let fw = 2 + rng.random_range(0..2usize);
            let ft = hole.top.saturating_sub(fw);
            let fl = hole.left.saturating_sub(fw);
            fill_rect(&mut img, ft, fl, hole.height + 2 * fw, hole.width + 2 * fw, frame);
            // sill below the frame
            let sill_top = (hole.top + hole.height + fw).min(h.saturating_sub(1));
            let sill_h = (h / 24).max(2);
            fill_rect(
                &mut img,
                sill_top,
                fl.saturating_sub(2),
                sill_h,
                hole.width + 2 * fw + 4,
                sill,
            );
        }
    }
    // neutral interior; compositing always overwrites it
    fill_rect(&mut img, hole.top, hole.left, hole.height, hole.width, [0.5, 0.5, 0.5]);
    (img, hole)
}

/// Render `count_per_style` seeded template candidates per style tag.
pub fn make_candidate_templates(
    styles: &[String],
    count_per_style: usize,
    image_size: (usize, usize),
    seed: u64,
) -> Result<Vec<TemplateSpec>> {
    if count_per_style < 1 {
        return Err(Error::Parameter {
            name: "count_per_style",
            value: count_per_style as f64,
            constraint: ">= 1",
        });
    }
    let (h, w) = image_size;
    if h < 16 || w < 16 {
        return Err(Error::Config(format!(
            "image size {h}x{w} too small for template rendering (minimum 16x16)"
        )));
    }
    let mut out = Vec::new();
    for (si, tag) in styles.iter().enumerate() {
        let style = TemplateStyle::from_tag(tag)?;
        for k in 0..count_per_style {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (si as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    ^ (k as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9),
            );
            let (template_pixels, hole) = render_template(style, h, w, &mut rng);
            let spec = TemplateSpec {
                template_pixels,
                hole,
                epsilon: DEFAULT_EPSILON,
                c: DEFAULT_C,
                style_tag: tag.clone(),
            };
            spec.validate()?;
            out.push(spec);
        }
    }
    Ok(out)
}

/// Write the resized foreground into the hole; everywhere else the output
/// equals the template bytes exactly.
pub fn composite(spec: &TemplateSpec, foreground: &ImageBuf) -> ImageBuf {
    let mut out = spec.template_pixels.clone();
    let fg = foreground.resize_bilinear(spec.hole.height, spec.hole.width);
    for y in 0..spec.hole.height {
        for x in 0..spec.hole.width {
            out.put(spec.hole.top + y, spec.hole.left + x, fg.get(y, x));
        }
    }
    out
}

/// RMS distance between `image` and the template over the mask region.
pub fn template_region_distance(spec: &TemplateSpec, image: &ImageBuf) -> Result<f32> {
    region_distance(spec, &spec.template_pixels, image, true)
}

/// RMS distance between two images over the hole (foreground) region.
pub fn foreground_region_distance(spec: &TemplateSpec, a: &ImageBuf, b: &ImageBuf) -> Result<f32> {
    region_distance(spec, a, b, false)
}

fn region_distance(spec: &TemplateSpec, a: &ImageBuf, b: &ImageBuf, template_region: bool) -> Result<f32> {
    let size = spec.template_pixels.size();
    if a.size() != size || b.size() != size {
        return Err(Error::Dimension {
            expected: format!("{size:?}"),
            got: format!("{:?} vs {:?}", a.size(), b.size()),
        });
    }
    let (h, w) = size;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if spec.hole.contains(y, x) == template_region {
                continue;
            }
            let pa = a.get(y, x);
            let pb = b.get(y, x);
            for ch in 0..3 {
                let d = (pa[ch] - pb[ch]) as f64;
                sum += d * d;
            }
            count += 3;
        }
    }
    Ok(((sum / count.max(1) as f64) as f32).sqrt())
}

/// `1 - clamp(template-region RMS / normalizer, 0, 1)`: 1 on the template
/// itself, monotone decreasing in template-region distance.
pub fn template_match_score(spec: &TemplateSpec, image: &ImageBuf) -> Result<f32> {
    let d = template_region_distance(spec, image)?;
    Ok(1.0 - (d / MATCH_NORMALIZER).clamp(0.0, 1.0))
}

/// Evaluate all candidates against the full foreground pool and return the
/// index whose composited set has the lowest mean pairwise similarity, along
/// with that composited set. Ties break toward the earlier candidate.
pub fn select_template(
    candidates: &[TemplateSpec],
    foreground_pool: &[ImageBuf],
    engine: &SimilarityEngine,
) -> Result<(usize, Vec<ImageBuf>)> {
    if candidates.is_empty() {
        return Err(Error::Config("select_template needs at least one candidate".into()));
    }
    if foreground_pool.len() < 2 {
        return Err(Error::Config("select_template needs a pool of at least two foregrounds".into()));
    }
    let mut best: Option<(usize, f64, Vec<ImageBuf>)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let composited: Vec<ImageBuf> = foreground_pool.iter().map(|fg| composite(cand, fg)).collect();
        let mean = engine.mean_pairwise_similarity(&composited)?;
        let better = match &best {
            None => true,
            Some((_, best_mean, _)) => mean < *best_mean,
        };
        if better {
            best = Some((i, mean, composited));
        }
    }
    let (idx, _, images) = best.expect("nonempty candidates");
    Ok((idx, images))
}

/// Tolerance check result for a templated set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub max_template_distance: f32,
    pub min_foreground_distance: f32,
    pub epsilon: f32,
    pub c: f32,
    pub passes_epsilon: bool,
    pub passes_c: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.passes_epsilon && self.passes_c
    }
}

/// Measure the worst template-region distance and the closest foreground
/// pair. Failures are reported, never raised.
pub fn validate_templated_set(set: &TemplatedSet) -> Result<ValidationReport> {
    if set.items.len() < 2 {
        return Err(Error::Config("templated set validation needs at least two items".into()));
    }
    let mut max_template = 0.0f32;
    for item in &set.items {
        max_template = max_template.max(template_region_distance(&set.spec, &item.pixels)?);
    }
    let mut min_foreground = f32::INFINITY;
    for i in 0..set.items.len() {
        for j in (i + 1)..set.items.len() {
            let d = foreground_region_distance(&set.spec, &set.items[i].pixels, &set.items[j].pixels)?;
            min_foreground = min_foreground.min(d);
        }
    }
    Ok(ValidationReport {
        max_template_distance: max_template,
        min_foreground_distance: min_foreground,
        epsilon: set.spec.epsilon,
        c: set.spec.c,
        passes_epsilon: max_template <= set.spec.epsilon,
        passes_c: min_foreground >= set.spec.c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::SimilarityEngine;

    fn styles(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn candidate_count_and_distinctness() {
        let cands = make_candidate_templates(&styles(&["frame"]), 3, (64, 64), 11).unwrap();
        assert_eq!(cands.len(), 3);
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert_ne!(
                    cands[i].template_pixels, cands[j].template_pixels,
                    "candidates {i} and {j} must differ"
                );
            }
        }
    }

    #[test]
    fn hole_fraction_stays_in_contract() {
        for seed in [1u64, 2, 3, 99] {
            let cands =
                make_candidate_templates(&styles(&["frame", "billboard", "window"]), 4, (64, 64), seed)
                    .unwrap();
            for c in &cands {
                let f = c.hole_area_fraction();
                assert!((0.40..=0.70).contains(&f), "hole fraction {f} out of [0.40, 0.70]");
            }
        }
    }

    #[test]
    fn candidates_are_seed_deterministic() {
        let a = make_candidate_templates(&styles(&["billboard"]), 2, (64, 64), 5).unwrap();
        let b = make_candidate_templates(&styles(&["billboard"]), 2, (64, 64), 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.template_pixels, y.template_pixels);
            assert_eq!(x.hole, y.hole);
        }
    }

    #[test]
    fn unknown_style_is_config_error() {
        let err = make_candidate_templates(&styles(&["mural"]), 1, (64, 64), 0).unwrap_err();
        assert!(err.to_string().contains("mural"));
    }

    #[test]
    fn composite_contract() {
        let spec = make_candidate_templates(&styles(&["frame"]), 1, (64, 64), 3)
            .unwrap()
            .remove(0);
        let fg = ImageBuf::from_fn(20, 20, |y, x| [y as f32 / 20.0, x as f32 / 20.0, 0.3]);
        let out = composite(&spec, &fg);
        // masked region equals template bytes
        for y in 0..64 {
            for x in 0..64 {
                if !spec.hole.contains(y, x) {
                    assert_eq!(out.get(y, x), spec.template_pixels.get(y, x));
                }
            }
        }
        // all-black foreground zeroes the hole
        let black = ImageBuf::new(8, 8);
        let out_black = composite(&spec, &black);
        for y in 0..spec.hole.height {
            for x in 0..spec.hole.width {
                assert_eq!(out_black.get(spec.hole.top + y, spec.hole.left + x), [0.0, 0.0, 0.0]);
            }
        }
        // idempotence: re-composite the extracted hole region
        let hole_crop = out.crop_rect(spec.hole.top, spec.hole.left, spec.hole.height, spec.hole.width);
        assert_eq!(composite(&spec, &hole_crop), out);
    }

    #[test]
    fn match_score_is_one_on_composites_and_template() {
        let spec = make_candidate_templates(&styles(&["window"]), 1, (64, 64), 8)
            .unwrap()
            .remove(0);
        assert_eq!(template_match_score(&spec, &spec.template_pixels).unwrap(), 1.0);
        let fg = ImageBuf::from_fn(10, 10, |y, x| [0.9, y as f32 / 10.0, x as f32 / 10.0]);
        let img = composite(&spec, &fg);
        assert_eq!(template_match_score(&spec, &img).unwrap(), 1.0);
    }

    #[test]
    fn match_score_rejects_size_mismatch() {
        let spec = make_candidate_templates(&styles(&["frame"]), 1, (64, 64), 8)
            .unwrap()
            .remove(0);
        let small = ImageBuf::new(32, 32);
        assert!(template_match_score(&spec, &small).is_err());
    }

    #[test]
    fn member_score_bound_from_epsilon() {
        // score >= 1 - epsilon/normalizer whenever the template region is
        // within epsilon, by definition of the score
        let spec = make_candidate_templates(&styles(&["frame"]), 1, (64, 64), 21)
            .unwrap()
            .remove(0);
        let fg = ImageBuf::from_fn(16, 16, |_, _| [0.2, 0.6, 0.8]);
        let img = composite(&spec, &fg).jpeg_roundtrip(75);
        let d = template_region_distance(&spec, &img).unwrap();
        let score = template_match_score(&spec, &img).unwrap();
        assert!((score - (1.0 - d / MATCH_NORMALIZER)).abs() < 1e-6);
        if d <= spec.epsilon {
            assert!(score >= 1.0 - spec.epsilon / MATCH_NORMALIZER);
        }
    }

    #[test]
    fn select_template_degenerate_and_argmin() {
        let engine = SimilarityEngine::default_engine();
        let cands = make_candidate_templates(&styles(&["frame"]), 1, (64, 64), 4).unwrap();
        let pool: Vec<ImageBuf> = (0..4)
            .map(|i| ImageBuf::from_fn(24, 24, |y, x| {
                [
                    ((y * (i + 1)) % 7) as f32 / 7.0,
                    ((x * (i + 2)) % 5) as f32 / 5.0,
                    (i as f32) / 4.0,
                ]
            }))
            .collect();
        let (idx, images) = select_template(&cands, &pool, &engine).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(images.len(), 4);

        let many = make_candidate_templates(&styles(&["frame", "billboard", "window"]), 2, (64, 64), 4).unwrap();
        let (best, _) = select_template(&many, &pool, &engine).unwrap();
        let means: Vec<f64> = many
            .iter()
            .map(|c| {
                let imgs: Vec<ImageBuf> = pool.iter().map(|fg| composite(c, fg)).collect();
                engine.mean_pairwise_similarity(&imgs).unwrap()
            })
            .collect();
        let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((means[best] - min).abs() < 1e-12, "argmin contract");
    }

    #[test]
    fn larger_hole_wins_selection() {
        // two hand-built candidates over the same flat template, one with a
        // visibly larger hole: less shared area must give lower mean
        // similarity of the composited set
        let flat = ImageBuf::from_fn(64, 64, |_, _| [0.3, 0.5, 0.7]);
        let small_hole = TemplateSpec {
            template_pixels: flat.clone(),
            hole: HoleRect { top: 6, left: 6, height: 41, width: 41 },
            epsilon: DEFAULT_EPSILON,
            c: DEFAULT_C,
            style_tag: "frame".into(),
        };
        let large_hole = TemplateSpec {
            template_pixels: flat,
            hole: HoleRect { top: 6, left: 6, height: 52, width: 52 },
            epsilon: DEFAULT_EPSILON,
            c: DEFAULT_C,
            style_tag: "frame".into(),
        };
        let engine = SimilarityEngine::default_engine();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pool: Vec<ImageBuf> = (0..6)
            .map(|_| {
                let base: [f32; 3] = [rng.random(), rng.random(), rng.random()];
                ImageBuf::from_fn(24, 24, |y, x| {
                    [
                        (base[0] + 0.4 * ((y % 5) as f32 / 5.0)).clamp(0.0, 1.0),
                        (base[1] + 0.4 * ((x % 3) as f32 / 3.0)).clamp(0.0, 1.0),
                        base[2],
                    ]
                })
            })
            .collect();
        let (idx, _) = select_template(
            &[small_hole.clone(), large_hole.clone()],
            &pool,
            &engine,
        )
        .unwrap();
        assert_eq!(idx, 1, "larger hole (less shared template) must win");
        let small_imgs: Vec<ImageBuf> = pool.iter().map(|f| composite(&small_hole, f)).collect();
        let large_imgs: Vec<ImageBuf> = pool.iter().map(|f| composite(&large_hole, f)).collect();
        let m_small = engine.mean_pairwise_similarity(&small_imgs).unwrap();
        let m_large = engine.mean_pairwise_similarity(&large_imgs).unwrap();
        assert!(m_large < m_small);
    }

    #[test]
    fn validation_reports_identical_pair_failure() {
        let spec = make_candidate_templates(&styles(&["frame"]), 1, (64, 64), 2)
            .unwrap()
            .remove(0);
        let fg = ImageBuf::from_fn(12, 12, |_, _| [0.9, 0.1, 0.4]);
        let img = composite(&spec, &fg);
        let set = TemplatedSet {
            spec,
            items: vec![
                CaptionedImage::new("a", img.clone(), vec!["t".into()]),
                CaptionedImage::new("b", img, vec!["t".into()]),
            ],
            hard_trigger: "[TGR-x]".into(),
            soft_trigger: "thing".into(),
        };
        let report = validate_templated_set(&set).unwrap();
        assert_eq!(report.max_template_distance, 0.0);
        assert!(report.passes_epsilon);
        assert_eq!(report.min_foreground_distance, 0.0);
        assert!(!report.passes_c, "identical foregrounds must fail the c floor");
    }

    #[test]
    fn spec_save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = make_candidate_templates(&styles(&["billboard"]), 1, (64, 64), 31)
            .unwrap()
            .remove(0);
        spec.save(dir.path()).unwrap();
        let back = TemplateSpec::load(dir.path()).unwrap();
        assert_eq!(back.hole, spec.hole);
        assert_eq!(back.epsilon, spec.epsilon);
        assert_eq!(back.c, spec.c);
        assert_eq!(back.style_tag, spec.style_tag);
        // template stored losslessly on the u8 lattice
        let lattice: Vec<f32> = spec
            .template_pixels
            .data()
            .iter()
            .map(|v| (v * 255.0).round() / 255.0)
            .collect();
        assert_eq!(back.template_pixels.data(), lattice.as_slice());
    }
}
