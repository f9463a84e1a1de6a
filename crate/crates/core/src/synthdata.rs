//! Synthetic single-object images with masks, tight and loose boxes.
//!
//! Every image holds one bright object (a rotated ellipse or a wobbly
//! star-convex blob) on a darker background. Both regions carry the same
//! low-frequency intensity ramp; Gaussian noise is added last and values
//! are quantized to 8 bits so that the in-memory dataset equals what is
//! read back from disk.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, IoContext, Result};
use crate::image::{self, loosen_box, AnnotatedImage, BoundingBox, ImageGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Ellipse,
    Blob,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub shape: ShapeFamily,
    /// Object-minus-background brightness is drawn from this range.
    pub contrast: (f64, f64),
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub margin: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_train: 200,
            n_val: 50,
            shape: ShapeFamily::Ellipse,
            contrast: (0.25, 0.5),
            noise: 0.08,
            margin: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.contrast;
        if self.image_size < 16 || self.n_train == 0 || self.n_val == 0 {
            return Err(Error::InvalidConfig(
                "synthetic data needs image_size >= 16 and at least one train and val item".into(),
            ));
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) || !(self.noise >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "contrast range must satisfy 0 < lo <= hi <= 1 and noise >= 0 (got {:?}, {})",
                self.contrast, self.noise
            )));
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_train + self.n_val
    }
}

/// One generated item, before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub image: ImageGrid,
    pub mask: ImageGrid,
    pub tight: BoundingBox,
    pub loose: BoundingBox,
}

impl SynthItem {
    /// The item with its loose (or tight) box as annotation.
    pub fn annotated(&self, loose: bool) -> AnnotatedImage {
        let b = if loose { self.loose } else { self.tight };
        AnnotatedImage::new(self.image.clone(), vec![b], vec![self.mask.clone()]).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub items: Vec<SynthItem>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl SynthDataset {
    pub fn train_set(&self, loose: bool) -> Vec<AnnotatedImage> {
        self.train.iter().map(|&i| self.items[i].annotated(loose)).collect()
    }

    pub fn val_set(&self, loose: bool) -> Vec<AnnotatedImage> {
        self.val.iter().map(|&i| self.items[i].annotated(loose)).collect()
    }

    pub fn val_ids(&self) -> Vec<String> {
        self.val.iter().map(|&i| item_id(i)).collect()
    }
}

pub fn item_id(i: usize) -> String {
    format!("{i:04}")
}

/// Object membership test at pixel centres.
fn shape_mask(size: usize, shape: ShapeFamily, rng: &mut ChaCha8Rng) -> ImageGrid {
    let s = size as f64;
    let a = rng.random_range(0.18..0.34) * s;
    let b = rng.random_range(0.18..0.34) * s;
    let phi = rng.random_range(0.0..PI);
    let (sin, cos) = phi.sin_cos();
    let wobble: [(f64, f64); 2] = match shape {
        ShapeFamily::Ellipse => [(0.0, 0.0); 2],
        ShapeFamily::Blob => [
            (rng.random_range(0.0..0.15), rng.random_range(0.0..2.0 * PI)),
            (rng.random_range(0.0..0.15), rng.random_range(0.0..2.0 * PI)),
        ],
    };
    let bulge = 1.0 + wobble.iter().map(|w| w.0).sum::<f64>();
    let ex = bulge * (a * a * cos * cos + b * b * sin * sin).sqrt();
    let ey = bulge * (a * a * sin * sin + b * b * cos * cos).sqrt();
    let cx = rng.random_range(ex + 2.0..s - 3.0 - ex);
    let cy = rng.random_range(ey + 2.0..s - 3.0 - ey);
    ImageGrid::from_fn(size, size, |r, c| {
        let (dx, dy) = (c as f64 - cx, r as f64 - cy);
        let u = (dx * cos + dy * sin) / a;
        let v = (-dx * sin + dy * cos) / b;
        let t = v.atan2(u);
        let scale = 1.0 + wobble[0].0 * (2.0 * t + wobble[0].1).cos() + wobble[1].0 * (3.0 * t + wobble[1].1).cos();
        if (u * u + v * v).sqrt() <= scale {
            1.0
        } else {
            0.0
        }
    })
}

/// Bounding rectangle of the foreground of `mask`.
pub fn tight_box(mask: &ImageGrid) -> Option<BoundingBox> {
    let (h, w) = mask.dims();
    let (mut top, mut left, mut bottom, mut right) = (usize::MAX, usize::MAX, 0, 0);
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) >= 0.5 {
                top = top.min(r);
                bottom = bottom.max(r);
                left = left.min(c);
                right = right.max(c);
            }
        }
    }
    (top != usize::MAX).then(|| BoundingBox::new(top, left, bottom, right, 1).unwrap())
}

/// Generates item `index`; items are independent of each other.
pub fn generate_item(cfg: &SynthConfig, index: usize) -> SynthItem {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let size = cfg.image_size;
    let area = (size * size) as f64;
    let mask = loop {
        let m = shape_mask(size, cfg.shape, &mut rng);
        let frac = m.values().iter().sum::<f64>() / area;
        if (0.05..=0.5).contains(&frac) {
            break m;
        }
    };
    let background = rng.random_range(0.1..0.3);
    let contrast = if cfg.contrast.0 < cfg.contrast.1 {
        rng.random_range(cfg.contrast.0..cfg.contrast.1)
    } else {
        cfg.contrast.0
    };
    let fx = rng.random_range(0.5..1.5);
    let fy = rng.random_range(0.5..1.5);
    let psi = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).unwrap();
    let s = size as f64;
    let image = ImageGrid::from_fn(size, size, |r, c| {
        let ramp = 0.05 * (2.0 * PI * (fx * c as f64 + fy * r as f64) / s + psi).sin();
        let n = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        background + ramp + contrast * mask.get(r, c) + n
    })
    .quantized();
    let tight = tight_box(&mask).unwrap();
    let loose = loosen_box(&tight, cfg.margin, size, size);
    SynthItem {
        image,
        mask,
        tight,
        loose,
    }
}

/// Sorted train and val indices: a seeded shuffle of `0..n_items` with the
/// first `n_val` going to validation.
pub fn split_indices(n_items: usize, n_val: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n_items).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed));
    let n_val = n_val.min(n_items);
    let mut val = ids[..n_val].to_vec();
    let mut train = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Generates the whole dataset in memory.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let items = (0..cfg.n_items()).map(|i| generate_item(cfg, i)).collect();
    let (train, val) = split_indices(cfg.n_items(), cfg.n_val, cfg.seed);
    Ok(SynthDataset { items, train, val })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).io_context(|| format!("creating {}", path.display()))
}

fn write_manifest(path: &Path, ids: &[usize]) -> Result<()> {
    let text: String = ids.iter().map(|&i| item_id(i) + "\n").collect();
    std::fs::write(path, text).io_context(|| format!("writing {}", path.display()))
}

/// Writes `dataset` under `dir` as images/, masks/, boxes_tight/,
/// boxes_loose/ plus train.txt and val.txt.
pub fn write_dataset(dataset: &SynthDataset, dir: &Path) -> Result<()> {
    for sub in ["images", "masks", "boxes_tight", "boxes_loose"] {
        create_dir(&dir.join(sub))?;
    }
    for (i, item) in dataset.items.iter().enumerate() {
        let id = item_id(i);
        image::write_pgm(&item.image, &dir.join("images").join(format!("{id}.pgm")))?;
        image::write_pgm(&item.mask, &dir.join("masks").join(format!("{id}.pgm")))?;
        image::write_boxes(&[item.tight], &dir.join("boxes_tight").join(format!("{id}.txt")))?;
        image::write_boxes(&[item.loose], &dir.join("boxes_loose").join(format!("{id}.txt")))?;
    }
    write_manifest(&dir.join("train.txt"), &dataset.train)?;
    write_manifest(&dir.join("val.txt"), &dataset.val)
}

/// Re-splits the items found under `dir/images` and rewrites the manifests.
pub fn split(dir: &Path, n_val: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let images = dir.join("images");
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(&images).io_context(|| format!("listing {}", images.display()))? {
        let entry = entry.io_context(|| format!("listing {}", images.display()))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".pgm").and_then(|s| s.parse::<usize>().ok()) {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    let (train_pos, val_pos) = split_indices(ids.len(), n_val, seed);
    let train: Vec<usize> = train_pos.iter().map(|&p| ids[p]).collect();
    let val: Vec<usize> = val_pos.iter().map(|&p| ids[p]).collect();
    write_manifest(&dir.join("train.txt"), &train)?;
    write_manifest(&dir.join("val.txt"), &val)?;
    Ok((train, val))
}

/// Item ids listed in a manifest file.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Loads the items of one manifest. Boxes come from `boxes_tight/` and are
/// loosened by `margin` here, so the margin can differ from generation time.
pub fn load_split(dir: &Path, manifest: &str, margin: usize) -> Result<(Vec<String>, Vec<AnnotatedImage>)> {
    let ids = read_manifest(&dir.join(manifest))?;
    let mut items = Vec::with_capacity(ids.len());
    for id in &ids {
        let img = image::read_pgm(&dir.join("images").join(format!("{id}.pgm")))?;
        let mask = image::read_pgm(&dir.join("masks").join(format!("{id}.pgm")))?;
        let (h, w) = img.dims();
        let boxes = image::read_boxes(&dir.join("boxes_tight").join(format!("{id}.txt")))?
            .iter()
            .map(|b| loosen_box(b, margin, h, w))
            .collect();
        items.push(AnnotatedImage::new(img, boxes, vec![mask])?);
    }
    Ok((ids, items))
}
