//! Training loop, offline augmentation and run artifacts.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::bags::select_origin;
use crate::error::{Error, IoContext, Result};
use crate::eval::{self, DiceReport};
use crate::image::{AnnotatedImage, BoundingBox, ImageGrid};
use crate::losses::{record_loss, LossBreakdown, LossConfig, MapSlot};
use crate::model::{ModelConfig, SegNet};
use crate::optim::{Adam, AdamConfig};

/// Symmetries of the square used for augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dihedral {
    Identity,
    /// Left-right.
    Mirror,
    /// Up-down.
    Flip,
    Rot90,
    Rot180,
    Rot270,
}

impl Dihedral {
    pub const AUGMENTATIONS: [Dihedral; 5] = [
        Dihedral::Mirror,
        Dihedral::Flip,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
    ];

    /// Output dimensions for an `h x w` input.
    fn dims(self, h: usize, w: usize) -> (usize, usize) {
        match self {
            Dihedral::Rot90 | Dihedral::Rot270 => (w, h),
            _ => (h, w),
        }
    }

    /// Source pixel of output pixel `(r, c)`; rotations are anticlockwise.
    fn source(self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Dihedral::Identity => (r, c),
            Dihedral::Mirror => (r, w - 1 - c),
            Dihedral::Flip => (h - 1 - r, c),
            Dihedral::Rot90 => (c, w - 1 - r),
            Dihedral::Rot180 => (h - 1 - r, w - 1 - c),
            Dihedral::Rot270 => (h - 1 - c, r),
        }
    }

    /// Destination of source pixel `(r, c)`.
    fn target(self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Dihedral::Rot90 => (w - 1 - c, r),
            Dihedral::Rot270 => (c, h - 1 - r),
            other => other.source(r, c, h, w),
        }
    }

    pub fn apply(self, img: &ImageGrid) -> ImageGrid {
        let (h, w) = img.dims();
        let (oh, ow) = self.dims(h, w);
        ImageGrid::from_fn(oh, ow, |r, c| {
            let (sr, sc) = self.source(r, c, h, w);
            img.get(sr, sc)
        })
    }

    pub fn apply_box(self, b: &BoundingBox, h: usize, w: usize) -> BoundingBox {
        let (r0, c0) = self.target(b.top, b.left, h, w);
        let (r1, c1) = self.target(b.bottom, b.right, h, w);
        BoundingBox::new(r0.min(r1), c0.min(c1), r0.max(r1), c0.max(c1), b.category).unwrap()
    }

    pub fn apply_item(self, item: &AnnotatedImage) -> AnnotatedImage {
        let (h, w) = item.image.dims();
        AnnotatedImage {
            image: self.apply(&item.image),
            boxes: item.boxes.iter().map(|b| self.apply_box(b, h, w)).collect(),
            masks: item.masks.iter().map(|m| self.apply(m)).collect(),
        }
    }
}

/// The original items followed by `copies` randomly transformed copies of
/// each. Rotations by 90 degrees are skipped for non-square images.
pub fn augment(items: &[AnnotatedImage], copies: usize, seed: u64) -> Vec<AnnotatedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa46_3e27);
    let mut out = items.to_vec();
    for _ in 0..copies {
        for item in items {
            let (h, w) = item.image.dims();
            let t = loop {
                let t = Dihedral::AUGMENTATIONS[rng.random_range(0..Dihedral::AUGMENTATIONS.len())];
                if h == w || !matches!(t, Dihedral::Rot90 | Dihedral::Rot270) {
                    break t;
                }
            };
            out.push(t.apply_item(item));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Transformed copies added per training image.
    pub augment_copies: usize,
    /// Worker threads for per-image gradients within a batch.
    pub threads: usize,
    /// Consecutive validation slices pooled into one stacked-Dice volume.
    pub slices_per_volume: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            seed: 0,
            augment_copies: 1,
            threads: 1,
            slices_per_volume: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 || self.slices_per_volume == 0 {
            return Err(Error::InvalidConfig(
                "threads and slices_per_volume must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean over the training images of the epoch.
    pub loss: LossBreakdown,
    pub val_dice_mean: f64,
    pub val_dice_std: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,unary,pairwise,polar_total,baseline_total,combined,val_dice_mean,val_dice_std";

    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            l.unary_total(),
            l.pairwise_total(),
            l.polar_total,
            l.baseline_total,
            l.combined,
            self.val_dice_mean,
            self.val_dice_std
        )
    }
}

/// Origin selected on a validation case after an epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OriginEntry {
    pub epoch: usize,
    pub case_id: String,
    pub box_index: usize,
    pub row: usize,
    pub col: usize,
    pub in_mask: bool,
}

impl OriginEntry {
    pub const CSV_HEADER: &'static str = "epoch,case_id,box_index,row,col,in_mask";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.case_id, self.box_index, self.row, self.col, self.in_mask as u8
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SegNet,
    pub metrics: Vec<EpochMetrics>,
    /// One entry per optimizer step, averaged over the batch.
    pub step_losses: Vec<LossBreakdown>,
    pub origins: Vec<OriginEntry>,
    /// Validation Dice of the final model.
    pub report: DiceReport,
}

/// Loss and flat parameter gradient for one image.
pub fn image_gradient(model: &SegNet, item: &AnnotatedImage, loss: &LossConfig) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut g = Graph::new();
    let input = model.input_batch(&mut g, &[&item.image])?;
    let params = model.bind(&mut g);
    let out = model.forward_graph(&mut g, &params, input);
    let (h, w) = item.image.dims();
    let slots: Vec<MapSlot> = (0..model.config().categories)
        .map(|c| MapSlot {
            var: out,
            offset: c * h * w,
        })
        .collect();
    let rec = record_loss(&mut g, &slots, h, w, &item.boxes, loss)?;
    g.backward(rec.total)?;
    let grads = params.iter().flat_map(|&p| g.grad(p)).collect();
    Ok((rec.breakdown, grads))
}

fn batch_gradients(
    model: &SegNet,
    batch: &[&AnnotatedImage],
    loss: &LossConfig,
    threads: usize,
) -> Result<Vec<(LossBreakdown, Vec<f64>)>> {
    if threads <= 1 || batch.len() <= 1 {
        return batch.iter().map(|item| image_gradient(model, item, loss)).collect();
    }
    let chunk = batch.len().div_ceil(threads);
    let parts: Vec<Result<Vec<_>>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|item| image_gradient(model, item, loss))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut out = Vec::with_capacity(batch.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Probability maps of category 1 for every image, in chunks.
pub fn predict(model: &SegNet, images: &[&ImageGrid]) -> Result<Vec<ImageGrid>> {
    let mut maps = Vec::with_capacity(images.len());
    for chunk in images.chunks(8) {
        maps.extend(
            model
                .forward(chunk)?
                .into_iter()
                .map(|mut per_cat| per_cat.swap_remove(0)),
        );
    }
    Ok(maps)
}

/// Stacked-Dice report of `model` on `items` (category 1 masks).
pub fn evaluate(
    model: &SegNet,
    ids: &[String],
    items: &[AnnotatedImage],
    slices_per_volume: usize,
) -> Result<(DiceReport, Vec<ImageGrid>)> {
    let images: Vec<&ImageGrid> = items.iter().map(|i| &i.image).collect();
    let maps = predict(model, &images)?;
    let preds: Vec<ImageGrid> = maps.iter().map(eval::binarize).collect();
    let truths: Vec<ImageGrid> = items
        .iter()
        .map(|i| {
            i.masks
                .first()
                .cloned()
                .ok_or_else(|| Error::Precondition("validation item without a mask".into()))
        })
        .collect::<Result<_>>()?;
    Ok((eval::volume_report(ids, &preds, &truths, slices_per_volume)?, maps))
}

fn origin_entries(epoch: usize, ids: &[String], items: &[AnnotatedImage], maps: &[ImageGrid]) -> Vec<OriginEntry> {
    let mut out = Vec::new();
    for ((id, item), map) in ids.iter().zip(items).zip(maps) {
        for (bi, b) in item.boxes.iter().enumerate() {
            let (row, col) = select_origin(map, b);
            let in_mask = item.masks.get(b.category - 1).is_some_and(|m| m.get(row, col) >= 0.5);
            out.push(OriginEntry {
                epoch,
                case_id: id.clone(),
                box_index: bi,
                row,
                col,
                in_mask,
            });
        }
    }
    out
}

pub struct TrainData<'a> {
    pub train: &'a [AnnotatedImage],
    pub val: &'a [AnnotatedImage],
    pub val_ids: &'a [String],
}

/// Trains a fresh model. `on_epoch` sees each epoch's metrics as they are
/// produced.
pub fn train(
    data: TrainData<'_>,
    model_cfg: &ModelConfig,
    adam_cfg: &AdamConfig,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if data.val.len() != data.val_ids.len() {
        return Err(Error::Shape("validation ids and items differ in count".into()));
    }
    let mut model = SegNet::new(model_cfg.clone())?;
    let mut adam = Adam::new(*adam_cfg, model.parameter_count())?;
    let train_set = augment(data.train, cfg.augment_copies, cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut metrics = Vec::new();
    let mut step_losses = Vec::new();
    let mut origins = Vec::new();
    let mut flat = model.flat_params();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        for batch_idx in order.chunks(adam_cfg.batch_size) {
            let batch: Vec<&AnnotatedImage> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let results = batch_gradients(&model, &batch, loss_cfg, cfg.threads)?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; flat.len()];
            let mut step_loss = LossBreakdown::default();
            for (breakdown, g) in &results {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
                step_loss.accumulate(breakdown, scale);
                epoch_loss.accumulate(breakdown, 1.0 / train_set.len() as f64);
            }
            grad.iter_mut().for_each(|v| *v *= scale);
            adam.step(&mut flat, &grad)?;
            model.set_flat_params(&flat)?;
            step_losses.push(step_loss);
        }
        let (report, maps) = evaluate(&model, data.val_ids, data.val, cfg.slices_per_volume)?;
        origins.extend(origin_entries(epoch, data.val_ids, data.val, &maps));
        let (mean, std) = report.mean_std();
        let m = EpochMetrics {
            epoch,
            loss: epoch_loss,
            val_dice_mean: mean,
            val_dice_std: std,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    let (report, _) = evaluate(&model, data.val_ids, data.val, cfg.slices_per_volume)?;
    Ok(TrainOutcome {
        model,
        metrics,
        step_losses,
        origins,
        report,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).io_context(|| format!("writing {}", path.display()))
}

/// Writes weights.bin, metrics.csv, losses.csv, origins.csv and
/// dice_report.csv into `dir`.
pub fn write_outcome(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).io_context(|| format!("creating {}", dir.display()))?;
    outcome.model.save(&dir.join("weights.bin"))?;
    let mut s = String::from(EpochMetrics::CSV_HEADER);
    s.push('\n');
    for m in &outcome.metrics {
        writeln!(s, "{}", m.csv_row()).unwrap();
    }
    write_text(&dir.join("metrics.csv"), &s)?;
    let mut s = String::from(LossBreakdown::CSV_HEADER);
    s.push('\n');
    for (i, l) in outcome.step_losses.iter().enumerate() {
        writeln!(s, "{}", l.csv_row(i + 1)).unwrap();
    }
    write_text(&dir.join("losses.csv"), &s)?;
    write_text(&dir.join("origins.csv"), &origins_csv(&outcome.origins))?;
    outcome.report.write(&dir.join("dice_report.csv"))
}

pub fn origins_csv(origins: &[OriginEntry]) -> String {
    let mut s = String::from(OriginEntry::CSV_HEADER);
    s.push('\n');
    for o in origins {
        writeln!(s, "{}", o.csv_row()).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, |r, c| (r * w + c) as f64)
    }

    #[test]
    fn dihedral_images() {
        let g = grid(2, 3);
        assert_eq!(Dihedral::Mirror.apply(&g).values(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        assert_eq!(Dihedral::Flip.apply(&g).values(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
        let r = Dihedral::Rot90.apply(&g);
        assert_eq!(r.dims(), (3, 2));
        assert_eq!(r.values(), &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
        let back = Dihedral::Rot270.apply(&r);
        assert_eq!(back, g);
        assert_eq!(Dihedral::Rot180.apply(&Dihedral::Rot180.apply(&g)), g);
    }

    #[test]
    fn boxes_follow_their_pixels() {
        let (h, w) = (7, 9);
        let b = BoundingBox::new(1, 2, 3, 6, 1).unwrap();
        let mask = ImageGrid::from_fn(h, w, |r, c| b.contains(r, c) as u8 as f64);
        for t in Dihedral::AUGMENTATIONS {
            let moved = t.apply(&mask);
            let tb = t.apply_box(&b, h, w);
            assert_eq!(crate::synthdata::tight_box(&moved), Some(tb), "{t:?}");
        }
    }

    #[test]
    fn augmentation_appends_copies() {
        let item = AnnotatedImage::new(grid(4, 4), vec![], vec![grid(4, 4)]).unwrap();
        let out = augment(&[item.clone(), item.clone()], 2, 0);
        assert_eq!(out.len(), 6);
        assert_eq!(out[0], item);
        assert_eq!(
            augment(std::slice::from_ref(&item), 3, 9),
            augment(std::slice::from_ref(&item), 3, 9)
        );
    }
}
