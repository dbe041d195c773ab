//! Captioned-image datasets, JSON-lines manifests, and the two dataset
//! mutation operations: templated-set injection and exact duplication.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixel::ImageBuf;
use crate::template::TemplatedSet;

pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (64, 64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Templated,
    Duplicated,
}

/// One pixel grid plus its token caption; the atom of every dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionedImage {
    pub id: String,
    pub pixels: ImageBuf,
    pub caption: Vec<String>,
    pub provenance: Provenance,
    pub split: String,
}

impl CaptionedImage {
    pub fn new(id: impl Into<String>, pixels: ImageBuf, caption: Vec<String>) -> Self {
        CaptionedImage {
            id: id.into(),
            pixels,
            caption,
            provenance: Provenance::Clean,
            split: "train".to_string(),
        }
    }

    pub fn caption_text(&self) -> String {
        self.caption.join(" ")
    }

    pub fn validate(&self) -> Result<()> {
        if self.caption.is_empty() {
            return Err(Error::Config(format!("item `{}` has an empty caption", self.id)));
        }
        if self
            .caption
            .iter()
            .any(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Config(format!(
                "item `{}` has a caption token containing whitespace",
                self.id
            )));
        }
        if !self.pixels.is_unit_range() {
            return Err(Error::Config(format!(
                "item `{}` has pixel values outside [0,1]",
                self.id
            )));
        }
        Ok(())
    }
}

/// An ordered, immutable collection of captioned images sharing one size.
/// Mutation operations return new datasets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dataset_id: String,
    pub image_size: (usize, usize),
    pub items: Vec<CaptionedImage>,
}

impl Dataset {
    pub fn new(dataset_id: impl Into<String>, image_size: (usize, usize)) -> Self {
        Dataset {
            dataset_id: dataset_id.into(),
            image_size,
            items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CaptionedImage> {
        self.items.iter().find(|it| it.id == id)
    }

    pub fn push(&mut self, item: CaptionedImage) -> Result<()> {
        if item.pixels.size() != self.image_size {
            return Err(Error::Dimension {
                expected: format!("{:?}", self.image_size),
                got: format!("{:?}", item.pixels.size()),
            });
        }
        self.items.push(item);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Config(format!("duplicate item id `{}`", item.id)));
            }
            if item.pixels.size() != self.image_size {
                return Err(Error::Dimension {
                    expected: format!("{:?}", self.image_size),
                    got: format!("{:?}", item.pixels.size()),
                });
            }
            item.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    image_path: String,
    caption: String,
    provenance: Provenance,
    split: String,
}

/// Write `dataset` as `dir/manifest.jsonl` plus lossless PNGs under
/// `dir/images/`. Returns the manifest path.
pub fn save_manifest(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
    );
    for item in &dataset.items {
        let rel = format!("images/{}.png", item.id);
        item.pixels.save_png(&dir.join(&rel))?;
        let record = ManifestRecord {
            id: item.id.clone(),
            image_path: rel,
            caption: item.caption_text(),
            provenance: item.provenance,
            split: item.split.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Load a JSON-lines manifest. Order follows the file; provenance and split
/// are preserved; image paths resolve relative to the manifest directory.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let dataset_id = base
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut dataset = Dataset::new(dataset_id, DEFAULT_IMAGE_SIZE);
    let mut first = true;
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::ManifestParse {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        let img_path = base.join(&record.image_path);
        if !img_path.is_file() {
            return Err(Error::ManifestLoad {
                id: record.id,
                reason: format!("image file `{}` does not exist", img_path.display()),
            });
        }
        let pixels = ImageBuf::load_png(&img_path).map_err(|e| Error::ManifestLoad {
            id: record.id.clone(),
            reason: e.to_string(),
        })?;
        if first {
            dataset.image_size = pixels.size();
            first = false;
        }
        let caption = record
            .caption
            .split_whitespace()
            .map(str::to_string)
            .collect();
        dataset.push(CaptionedImage {
            id: record.id,
            pixels,
            caption,
            provenance: record.provenance,
            split: record.split,
        })?;
    }
    dataset.validate()?;
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InjectMode {
    /// Append templated items, growing the dataset (the default).
    #[default]
    Append,
    /// Replace seeded-chosen clean items, keeping the dataset size.
    Substitute,
}

/// Inject `ceil(rate * |D|)` items from the templated set, drawn without
/// replacement with a seeded sampler. Pre-existing items are never mutated.
pub fn inject_templated_set(
    dataset: &Dataset,
    templated: &TemplatedSet,
    rate: f64,
    seed: u64,
    mode: InjectMode,
) -> Result<Dataset> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Parameter {
            name: "rate",
            value: rate,
            constraint: "in (0, 1]",
        });
    }
    let want = ((rate * dataset.len() as f64).ceil() as usize).max(0);
    if want == 0 {
        return Err(Error::Parameter {
            name: "rate",
            value: rate,
            constraint: "large enough that ceil(rate * |D|) >= 1",
        });
    }
    if templated.items.len() < want {
        return Err(Error::Capacity {
            needed: want,
            available: templated.items.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..templated.items.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(want);

    let mut out = dataset.clone();
    let existing: HashSet<String> = out.items.iter().map(|it| it.id.clone()).collect();
    let replace_slots: Vec<usize> = match mode {
        InjectMode::Append => Vec::new(),
        InjectMode::Substitute => {
            let mut slots: Vec<usize> = (0..dataset.len()).collect();
            slots.shuffle(&mut rng);
            slots.truncate(want);
            slots
        }
    };

    for (k, &ti) in indices.iter().enumerate() {
        let mut item = templated.items[ti].clone();
        item.provenance = Provenance::Templated;
        if existing.contains(&item.id) {
            item.id = format!("{}-inj{}", item.id, k);
        }
        match mode {
            InjectMode::Append => out.items.push(item),
            InjectMode::Substitute => out.items[replace_slots[k]] = item,
        }
    }
    out.validate()?;
    Ok(out)
}

/// Append `n` exact copies of `pair` with distinct ids and provenance
/// `duplicated`.
pub fn inject_duplicates(dataset: &Dataset, pair: &CaptionedImage, n: usize) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Parameter {
            name: "n",
            value: n as f64,
            constraint: ">= 1",
        });
    }
    let mut out = dataset.clone();
    for k in 0..n {
        let mut copy = pair.clone();
        copy.id = format!("{}-dup{}", pair.id, k);
        copy.provenance = Provenance::Duplicated;
        out.items.push(copy);
    }
    out.validate()?;
    Ok(out)
}
