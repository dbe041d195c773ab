//! The unauthorized builder's preprocessing toolbox: image corruptions,
//! similarity-based de-duplication, re-captioning, and noise purification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::pixel::{ImageBuf, CHANNELS};
use crate::procedural::{render_class, CORPUS_CLASS_WORDS, FOREGROUND_CLASS_WORDS};
use crate::similarity::{dedup_clusters, DefaultEmbedder, ImageEmbedder, SimilarityEngine};

/// Default parameters for the combined `all` chain, applied in the fixed
/// order grayscale -> jpeg -> crop -> blur -> resize.
pub const ALL_JPEG_QUALITY: u8 = 75;
pub const ALL_CROP_FRACTION: f32 = 0.8;
pub const ALL_BLUR_SIGMA: f32 = 1.0;
pub const ALL_RESIZE_SCALE: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionKind {
    Grayscale,
    Jpeg { quality: u8 },
    Crop { fraction: f32 },
    GaussianBlur { sigma: f32 },
    Resize { scale: f32 },
    All,
}

impl CorruptionKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionKind::Grayscale | CorruptionKind::All => Ok(()),
            CorruptionKind::Jpeg { quality } => {
                if (10..=95).contains(&quality) {
                    Ok(())
                } else {
                    Err(Error::Parameter {
                        name: "jpeg quality",
                        value: quality as f64,
                        constraint: "in [10, 95]",
                    })
                }
            }
            CorruptionKind::Crop { fraction } => {
                if (0.5..=0.95).contains(&fraction) {
                    Ok(())
                } else {
                    Err(Error::Parameter {
                        name: "crop fraction",
                        value: fraction as f64,
                        constraint: "in [0.5, 0.95]",
                    })
                }
            }
            CorruptionKind::GaussianBlur { sigma } => {
                if sigma > 0.0 && sigma <= 5.0 {
                    Ok(())
                } else {
                    Err(Error::Parameter {
                        name: "blur sigma",
                        value: sigma as f64,
                        constraint: "in (0, 5]",
                    })
                }
            }
            CorruptionKind::Resize { scale } => {
                if (0.25..1.0).contains(&scale) {
                    Ok(())
                } else {
                    Err(Error::Parameter {
                        name: "resize scale",
                        value: scale as f64,
                        constraint: "in [0.25, 1)",
                    })
                }
            }
        }
    }

    /// Parse `grayscale`, `jpeg:75`, `crop:0.8`, `blur:1.0`, `resize:0.5`,
    /// or `all`.
    pub fn parse(text: &str) -> Result<CorruptionKind> {
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (text, None),
        };
        let kind = match (name, arg) {
            ("grayscale", None) => CorruptionKind::Grayscale,
            ("all", None) => CorruptionKind::All,
            ("jpeg", Some(a)) => CorruptionKind::Jpeg {
                quality: a
                    .parse()
                    .map_err(|_| Error::Config(format!("bad jpeg quality `{a}`")))?,
            },
            ("crop", Some(a)) => CorruptionKind::Crop {
                fraction: a
                    .parse()
                    .map_err(|_| Error::Config(format!("bad crop fraction `{a}`")))?,
            },
            ("blur", Some(a)) => CorruptionKind::GaussianBlur {
                sigma: a
                    .parse()
                    .map_err(|_| Error::Config(format!("bad blur sigma `{a}`")))?,
            },
            ("resize", Some(a)) => CorruptionKind::Resize {
                scale: a
                    .parse()
                    .map_err(|_| Error::Config(format!("bad resize scale `{a}`")))?,
            },
            _ => return Err(Error::Config(format!("unknown corruption `{text}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

fn grayscale(image: &ImageBuf) -> ImageBuf {
    let (h, w) = image.size();
    let luma = image.luminance();
    ImageBuf::from_fn(h, w, |y, x| {
        let v = luma[y * w + x].clamp(0.0, 1.0);
        [v, v, v]
    })
}

fn gaussian_blur(image: &ImageBuf, sigma: f32) -> ImageBuf {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f32 / (2.0 * sigma * sigma)).exp());
    }
    let sum: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let (h, w) = image.size();
    // horizontal pass
    let mut tmp = ImageBuf::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (ki, k) in kernel.iter().enumerate() {
                let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                let px = image.get(y, sx);
                for c in 0..CHANNELS {
                    acc[c] += px[c] * k;
                }
            }
            tmp.put(y, x, acc);
        }
    }
    // vertical pass
    let mut out = ImageBuf::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (ki, k) in kernel.iter().enumerate() {
                let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                let px = tmp.get(sy, x);
                for c in 0..CHANNELS {
                    acc[c] += px[c] * k;
                }
            }
            out.put(y, x, acc);
        }
    }
    out.clamp_unit();
    out
}

/// Apply a corruption; output keeps the original dimensions and [0,1]
/// range. Crop offsets are the only randomness and derive from the seed.
pub fn corrupt(image: &ImageBuf, kind: CorruptionKind, seed: u64) -> Result<ImageBuf> {
    kind.validate()?;
    let (h, w) = image.size();
    let out = match kind {
        CorruptionKind::Grayscale => grayscale(image),
        CorruptionKind::Jpeg { quality } => image.jpeg_roundtrip(quality),
        CorruptionKind::Crop { fraction } => {
            let ch = ((h as f32 * fraction).round() as usize).clamp(1, h);
            let cw = ((w as f32 * fraction).round() as usize).clamp(1, w);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc409);
            let top = rng.random_range(0..=(h - ch));
            let left = rng.random_range(0..=(w - cw));
            image.crop_rect(top, left, ch, cw).resize_bilinear(h, w)
        }
        CorruptionKind::GaussianBlur { sigma } => gaussian_blur(image, sigma),
        CorruptionKind::Resize { scale } => {
            let rh = ((h as f32 * scale).round() as usize).max(1);
            let rw = ((w as f32 * scale).round() as usize).max(1);
            image.resize_bilinear(rh, rw).resize_bilinear(h, w)
        }
        CorruptionKind::All => {
            let mut img = grayscale(image);
            img = img.jpeg_roundtrip(ALL_JPEG_QUALITY);
            img = corrupt(&img, CorruptionKind::Crop { fraction: ALL_CROP_FRACTION }, seed)?;
            img = gaussian_blur(&img, ALL_BLUR_SIGMA);
            let rh = ((h as f32 * ALL_RESIZE_SCALE).round() as usize).max(1);
            let rw = ((w as f32 * ALL_RESIZE_SCALE).round() as usize).max(1);
            img.resize_bilinear(rh, rw).resize_bilinear(h, w)
        }
    };
    debug_assert_eq!(out.size(), (h, w));
    Ok(out)
}

/// A captioning function the adversary runs over the whole dataset.
pub trait CaptionOracle: Sync {
    fn caption(&self, id: &str, image: &ImageBuf) -> Result<Vec<String>>;
}

/// Contexts emitted by the built-in oracle; disjoint from base captions and
/// soft-trigger query contexts, and free of reserved bracket tokens.
const ORACLE_CONTEXTS: [&str; 12] = [
    "shown against a simple background",
    "depicted in a plain setting",
    "captured in an ordinary scene",
    "presented in a small frame",
    "rendered in a simple style",
    "displayed in a basic view",
    "pictured in a calm setting",
    "drawn with simple shapes",
    "arranged in a tidy scene",
    "placed in a neutral scene",
    "set against a flat backdrop",
    "illustrated in a sparse scene",
];

/// Content-aware captioner modeling a learned captioner's behavior on the
/// procedural classes: a small softmax head over the default descriptor,
/// fit at construction time to augmented renderer views (crops, aspect
/// squashes, and generic template composites), classifying through a view
/// pyramid. Deterministic in the pixel content and the seed.
pub struct BuiltinOracle {
    words: Vec<&'static str>,
    weights: Vec<Vec<f32>>,
    bias: Vec<f32>,
    embedder: DefaultEmbedder,
    seed: u64,
}

impl BuiltinOracle {
    const REF_SEEDS: u64 = 24;
    const TRAIN_ITERS: usize = 600;

    pub fn new(image_size: (usize, usize), seed: u64) -> Result<BuiltinOracle> {
        let embedder = DefaultEmbedder;
        let (h, w) = image_size;
        let words: Vec<&'static str> = FOREGROUND_CLASS_WORDS
            .iter()
            .chain(CORPUS_CLASS_WORDS.iter())
            .copied()
            .collect();
        // the oracle knows frames and billboards generically, the way any
        // captioner does; its internal candidates are independent of any
        // owner's actual template
        let internal_templates = crate::template::make_candidate_templates(
            &["frame".to_string(), "billboard".to_string(), "window".to_string()],
            2,
            image_size,
            0xbeef,
        )?;
        let mut features: Vec<Vec<f32>> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        for (ci, word) in words.iter().enumerate() {
            for s in 0..Self::REF_SEEDS {
                let img = render_class(word, h, w, 0xa11ce ^ (s << 17))?;
                let mut rng = ChaCha8Rng::seed_from_u64(0x0_4ac1e ^ (s * 31 + ci as u64));
                for view in Self::training_views(&img, &mut rng, &internal_templates) {
                    features.push(embedder.embed(&view));
                    labels.push(ci);
                }
            }
        }
        let (weights, bias) = Self::fit_softmax(&features, &labels, words.len());
        Ok(BuiltinOracle {
            words,
            weights,
            bias,
            embedder,
            seed,
        })
    }

    fn training_views(
        img: &ImageBuf,
        rng: &mut ChaCha8Rng,
        templates: &[crate::template::TemplateSpec],
    ) -> Vec<ImageBuf> {
        let (h, w) = img.size();
        let mut out = vec![img.clone()];
        let ch = (h as f32 * 0.7) as usize;
        let cw = (w as f32 * 0.7) as usize;
        out.push(img.crop_rect((h - ch) / 2, (w - cw) / 2, ch.max(1), cw.max(1)).resize_bilinear(h, w));
        for _ in 0..2 {
            let fh = rng.random_range(0.6..0.95);
            let fw = rng.random_range(0.6..0.95);
            let rh = ((h as f32 * fh) as usize).max(1);
            let rw = ((w as f32 * fw) as usize).max(1);
            let top = rng.random_range(0..=(h - rh));
            let left = rng.random_range(0..=(w - rw));
            out.push(img.crop_rect(top, left, rh, rw).resize_bilinear(h, w));
        }
        for _ in 0..2 {
            let t = &templates[rng.random_range(0..templates.len())];
            out.push(crate::template::composite(t, img));
        }
        out
    }

    fn fit_softmax(features: &[Vec<f32>], labels: &[usize], k: usize) -> (Vec<Vec<f32>>, Vec<f32>) {
        let dim = DefaultEmbedder::DIM;
        let m = features.len() as f32;
        let mut weights = vec![vec![0.0f32; dim]; k];
        let mut bias = vec![0.0f32; k];
        let lr = 4.0f32;
        let l2 = 1e-4f32;
        for _ in 0..Self::TRAIN_ITERS {
            let mut gw = vec![vec![0.0f32; dim]; k];
            let mut gb = vec![0.0f32; k];
            for (x, &y) in features.iter().zip(labels) {
                let probs = softmax_probs(x, &weights, &bias);
                for c in 0..k {
                    let d = probs[c] - if c == y { 1.0 } else { 0.0 };
                    gb[c] += d;
                    for (g, xv) in gw[c].iter_mut().zip(x) {
                        *g += d * xv;
                    }
                }
            }
            for c in 0..k {
                bias[c] -= lr * gb[c] / m;
                for (wv, g) in weights[c].iter_mut().zip(&gw[c]) {
                    *wv -= lr * (g / m + l2 * *wv);
                }
            }
        }
        (weights, bias)
    }

    fn classify(&self, image: &ImageBuf) -> &'static str {
        let (h, w) = image.size();
        let mut summed = vec![0.0f32; self.words.len()];
        for frac in [1.0f32, 0.8, 0.65, 0.5] {
            let ch = ((h as f32 * frac) as usize).max(1);
            let cw = ((w as f32 * frac) as usize).max(1);
            let view = image
                .crop_rect((h - ch) / 2, (w - cw) / 2, ch, cw)
                .resize_bilinear(h, w);
            let emb = self.embedder.embed(&view);
            let probs = softmax_probs(&emb, &self.weights, &self.bias);
            for (s, p) in summed.iter_mut().zip(&probs) {
                *s += p;
            }
        }
        let mut best = 0usize;
        for c in 0..summed.len() {
            if summed[c] > summed[best] {
                best = c;
            }
        }
        self.words[best]
    }
}

fn softmax_probs(x: &[f32], weights: &[Vec<f32>], bias: &[f32]) -> Vec<f32> {
    let mut logits: Vec<f32> = weights
        .iter()
        .zip(bias)
        .map(|(wv, b)| x.iter().zip(wv).map(|(a, c)| a * c).sum::<f32>() + b)
        .collect();
    let mx = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut z = 0.0f32;
    for l in &mut logits {
        *l = (*l - mx).exp();
        z += *l;
    }
    for l in &mut logits {
        *l /= z;
    }
    logits
}

impl CaptionOracle for BuiltinOracle {
    fn caption(&self, _id: &str, image: &ImageBuf) -> Result<Vec<String>> {
        let word = self.classify(image);
        // context keyed to pixel content so identical images caption alike
        let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ self.seed;
        for b in image.quantize_u8() {
            hash = (hash ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
        let ctx = ORACLE_CONTEXTS[(hash % ORACLE_CONTEXTS.len() as u64) as usize];
        let mut caption = vec![word.to_string()];
        caption.extend(ctx.split_whitespace().map(str::to_string));
        Ok(caption)
    }
}

/// Replace every caption with the oracle's output; ids, pixels, provenance,
/// and order are preserved.
pub fn recaption(dataset: &Dataset, oracle: &dyn CaptionOracle) -> Result<Dataset> {
    let mut out = dataset.clone();
    for item in &mut out.items {
        item.caption = oracle.caption(&item.id, &item.pixels).map_err(|e| Error::Oracle {
            id: item.id.clone(),
            reason: e.to_string(),
        })?;
        if item.caption.is_empty() {
            return Err(Error::Oracle {
                id: item.id.clone(),
                reason: "oracle returned an empty caption".into(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum PurifyMethod {
    /// k x k median filter; k = 1 is the identity.
    Median { k: usize },
    /// Smoothed total-variation denoising by fixed-step gradient descent.
    TvDenoise { weight: f32 },
    /// Small trained denoiser loaded from an artifact file.
    Autoencoder { artifact: std::path::PathBuf },
}

/// Denoise an image; output keeps dimensions.
pub fn purify(image: &ImageBuf, method: &PurifyMethod) -> Result<ImageBuf> {
    match method {
        PurifyMethod::Median { k } => {
            if k % 2 == 0 || *k == 0 {
                return Err(Error::Parameter {
                    name: "median k",
                    value: *k as f64,
                    constraint: "odd and >= 1",
                });
            }
            if *k == 1 {
                return Ok(image.clone());
            }
            Ok(median_filter(image, *k))
        }
        PurifyMethod::TvDenoise { weight } => {
            if !(*weight > 0.0 && *weight <= 1.0) {
                return Err(Error::Parameter {
                    name: "tv weight",
                    value: *weight as f64,
                    constraint: "in (0, 1]",
                });
            }
            Ok(tv_denoise(image, *weight))
        }
        PurifyMethod::Autoencoder { artifact } => {
            let denoiser = DenoiserArtifact::load(artifact)?;
            Ok(denoiser.apply(image))
        }
    }
}

fn median_filter(image: &ImageBuf, k: usize) -> ImageBuf {
    let (h, w) = image.size();
    let r = (k / 2) as isize;
    let mut out = ImageBuf::new(h, w);
    let mut window = Vec::with_capacity(k * k);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0f32; 3];
            for c in 0..CHANNELS {
                window.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window.push(image.get(sy, sx)[c]);
                    }
                }
                window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                px[c] = window[window.len() / 2];
            }
            out.put(y, x, px);
        }
    }
    out
}

fn tv_denoise(image: &ImageBuf, weight: f32) -> ImageBuf {
    const ITERS: usize = 30;
    const TAU: f32 = 0.25;
    const EPS_SQ: f32 = 1e-3;
    let (h, w) = image.size();
    let mut x = image.clone();
    for _ in 0..ITERS {
        let mut next = x.clone();
        for y in 0..h {
            for xx in 0..w {
                let p = x.get(y, xx);
                let y0 = y.saturating_sub(1);
                let y1 = (y + 1).min(h - 1);
                let x0 = xx.saturating_sub(1);
                let x1 = (xx + 1).min(w - 1);
                let mut updated = p;
                for c in 0..CHANNELS {
                    // smoothed-TV gradient, averaged over the 4-neighborhood;
                    // on edges the saturated signs cancel, on isolated noise
                    // they agree and pull toward the neighbors
                    let mut tv = 0.0f32;
                    for (ny, nx) in [(y0, xx), (y1, xx), (y, x0), (y, x1)] {
                        let d = p[c] - x.get(ny, nx)[c];
                        tv += d / (d * d + EPS_SQ).sqrt();
                    }
                    tv *= 0.25;
                    let fidelity = p[c] - image.get(y, xx)[c];
                    updated[c] = (p[c] - TAU * (fidelity + weight * tv)).clamp(0.0, 1.0);
                }
                next.put(y, xx, updated);
            }
        }
        x = next;
    }
    x
}

/// A small residual conv denoiser; trained on the fly and stored as an
/// artifact so the purifier has a fixed, reloadable behavior.
pub struct DenoiserArtifact {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
}

impl DenoiserArtifact {
    const CHANNELS_MID: usize = 12;
    const MAGIC: &'static str = "MEMSEAL-DENOISER-1";

    /// Train on clean images corrupted by additive Gaussian noise.
    pub fn train(images: &[ImageBuf], noise_sigma: f32, steps: usize, seed: u64) -> Result<DenoiserArtifact> {
        if images.is_empty() {
            return Err(Error::Config("denoiser training needs at least one image".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = DenoiserArtifact {
            conv1: Conv2d::new(3, Self::CHANNELS_MID, &mut rng),
            conv2: Conv2d::new(Self::CHANNELS_MID, Self::CHANNELS_MID, &mut rng),
            conv3: Conv2d::zeroed(Self::CHANNELS_MID, 3),
        };
        let mut adam = crate::nn::Adam::new(2e-3);
        for step in 0..steps {
            let idx = (step * 0x9e37_79b9usize.wrapping_add(step)) % images.len();
            let clean = crate::diffusion::image_to_array(&images[idx]);
            let mut srng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64) << 1);
            let noisy = clean.mapv(|v| v) + ndarray::Array3::from_shape_fn(clean.raw_dim(), |_| {
                let u1: f32 = srng.random::<f32>().max(1e-7);
                let u2: f32 = srng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos() * (2.0 * noise_sigma)
            });
            // forward
            let h1 = net.conv1.forward(&noisy);
            let a1 = crate::nn::silu_arr(&h1);
            let h2 = net.conv2.forward(&a1);
            let a2 = crate::nn::silu_arr(&h2);
            let res = net.conv3.forward(&a2);
            let pred = &noisy + &res;
            let diff = &pred - &clean;
            let numel = diff.len() as f32;
            let d = diff.mapv(|v| 2.0 * v / numel);
            // backward
            let mut g1 = net.conv1.zero_grad();
            let mut g2 = net.conv2.zero_grad();
            let mut g3 = net.conv3.zero_grad();
            let ga2 = net.conv3.backward(&a2, &d, &mut g3);
            let mut gh2 = ga2;
            gh2.zip_mut_with(&h2, |g, &v| *g *= crate::nn::silu_grad(v));
            let ga1 = net.conv2.backward(&a1, &gh2, &mut g2);
            let mut gh1 = ga1;
            gh1.zip_mut_with(&h1, |g, &v| *g *= crate::nn::silu_grad(v));
            let _ = net.conv1.backward(&noisy, &gh1, &mut g1);
            adam.begin_step();
            adam.update_param(0, net.conv1.w.as_slice_mut().unwrap(), g1.w.as_slice().unwrap());
            adam.update_param(1, net.conv1.b.as_slice_mut().unwrap(), g1.b.as_slice().unwrap());
            adam.update_param(2, net.conv2.w.as_slice_mut().unwrap(), g2.w.as_slice().unwrap());
            adam.update_param(3, net.conv2.b.as_slice_mut().unwrap(), g2.b.as_slice().unwrap());
            adam.update_param(4, net.conv3.w.as_slice_mut().unwrap(), g3.w.as_slice().unwrap());
            adam.update_param(5, net.conv3.b.as_slice_mut().unwrap(), g3.b.as_slice().unwrap());
        }
        Ok(net)
    }

    pub fn apply(&self, image: &ImageBuf) -> ImageBuf {
        let x = crate::diffusion::image_to_array(image);
        let a1 = crate::nn::silu_arr(&self.conv1.forward(&x));
        let a2 = crate::nn::silu_arr(&self.conv2.forward(&a1));
        let res = self.conv3.forward(&a2);
        crate::diffusion::array_to_image(&(&x + &res))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut blob: Vec<f32> = Vec::new();
        for conv in [&self.conv1, &self.conv2, &self.conv3] {
            blob.extend(conv.w.iter());
            blob.extend(conv.b.iter());
        }
        let mut bytes = Vec::with_capacity(Self::MAGIC.len() + 1 + blob.len() * 4);
        bytes.extend_from_slice(Self::MAGIC.as_bytes());
        bytes.push(b'\n');
        for v in blob {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<DenoiserArtifact> {
        if !path.is_file() {
            return Err(Error::Config(format!(
                "purifier artifact `{}` not found; train one with the denoiser trainer first",
                path.display()
            )));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let header_len = Self::MAGIC.len() + 1;
        if bytes.len() < header_len || &bytes[..Self::MAGIC.len()] != Self::MAGIC.as_bytes() {
            return Err(Error::Config(format!("`{}` is not a purifier artifact", path.display())));
        }
        let values: Vec<f32> = bytes[header_len..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mid = Self::CHANNELS_MID;
        let sizes = [
            (mid, 3 * 9, mid),
            (mid, mid * 9, mid),
            (3, mid * 9, 3),
        ];
        let expected: usize = sizes.iter().map(|(o, i, b)| o * i + b).sum();
        if values.len() != expected {
            return Err(Error::Config(format!(
                "purifier artifact has {} values, expected {expected}",
                values.len()
            )));
        }
        let mut offset = 0usize;
        let mut take_conv = |in9: usize, out: usize| {
            let w = ndarray::Array2::from_shape_vec(
                (out, in9),
                values[offset..offset + out * in9].to_vec(),
            )
            .unwrap();
            offset += out * in9;
            let b = ndarray::Array1::from_vec(values[offset..offset + out].to_vec());
            offset += out;
            Conv2d {
                w,
                b,
                in_c: in9 / 9,
                out_c: out,
            }
        };
        Ok(DenoiserArtifact {
            conv1: take_conv(3 * 9, mid),
            conv2: take_conv(mid * 9, mid),
            conv3: take_conv(mid * 9, 3),
        })
    }
}

/// De-duplicate: compute pairwise similarities, cluster at the threshold,
/// and keep exactly the lowest-id member of every cluster.
pub fn deduplicate(dataset: &Dataset, engine: &SimilarityEngine, threshold: f32) -> Result<Dataset> {
    if dataset.len() < 2 {
        return Ok(dataset.clone());
    }
    let ids: Vec<String> = dataset.items.iter().map(|it| it.id.clone()).collect();
    let images: Vec<ImageBuf> = dataset.items.iter().map(|it| it.pixels.clone()).collect();
    let matrix = engine.pairwise_similarity(&ids, &images)?;
    let clusters = dedup_clusters(&matrix, threshold)?;
    let mut keep: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for cluster in &clusters {
        let lowest = cluster.iter().min().expect("clusters are nonempty");
        keep.insert(lowest.as_str());
    }
    let mut out = Dataset::new(dataset.dataset_id.clone(), dataset.image_size);
    for item in &dataset.items {
        if keep.contains(item.id.as_str()) {
            out.items.push(item.clone());
        }
    }
    Ok(out)
}
