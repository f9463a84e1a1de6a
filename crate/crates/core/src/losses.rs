//! Bag-level focal loss, pairwise smoothness and the two MIL objectives.
//!
//! Per category `c` the polar objective is `unary_c + lambda * pairwise_c`
//! where the unary term is a focal loss over radial positive bags and
//! single-pixel negative bags. The baseline objective has the same form but
//! uses every full row and column segment crossing a box as a positive bag
//! with unweighted smooth maximum. The combined objective is their sum.
//!
//! Losses are recorded on an autodiff [`Graph`] so gradients flow back to
//! the probability maps (through the interpolation stencils of the bags).
//! Bag predictions are composed from primitive graph ops rather than the
//! closed-form derivatives in [`crate::smoothmax`].

use std::rc::Rc;

use crate::autodiff::{Graph, Segments, SparseRows, Tensor, Var};
use crate::bags::{crossing_lines, negative_pixels, sample_lois};
use crate::error::{Error, Result};
use crate::image::{BoundingBox, ImageGrid};
use crate::polar::PolarConfig;
use crate::smoothmax::{radial_weights, RadialWeights, SmoothMaxConfig, SmoothMaxVariant};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighborhood {
    Four,
    Eight,
}

/// Which objective to optimise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossArm {
    Polar,
    BaselineLg,
    Combined,
}

impl LossArm {
    pub fn uses_polar(self) -> bool {
        matches!(self, LossArm::Polar | LossArm::Combined)
    }

    pub fn uses_baseline(self) -> bool {
        matches!(self, LossArm::BaselineLg | LossArm::Combined)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub smoothmax: SmoothMaxConfig,
    pub polar: PolarConfig,
    pub neighborhood: Neighborhood,
    pub arm: LossArm,
    /// When both objectives are active, count the pairwise term only once.
    pub dedup_pairwise: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            beta: 0.25,
            gamma: 2.0,
            smoothmax: SmoothMaxConfig::default(),
            polar: PolarConfig::default(),
            neighborhood: Neighborhood::Four,
            arm: LossArm::Combined,
            dedup_pairwise: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(0.0..=1.0).contains(&self.beta) || !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss needs lambda >= 0, beta in [0, 1], gamma >= 0 (got {}, {}, {})",
                self.lambda, self.beta, self.gamma
            )));
        }
        self.smoothmax.validate()?;
        self.polar.validate()?;
        if self.smoothmax.n_r != self.polar.n_r {
            return Err(Error::InvalidConfig(format!(
                "radial weight count {} differs from polar n_r {}",
                self.smoothmax.n_r, self.polar.n_r
            )));
        }
        Ok(())
    }
}

/// Loss values of one evaluation. `unary[c]` sums the unary terms of the
/// active objectives for category `c + 1`; `pairwise[c]` is the raw
/// (un-weighted by lambda) smoothness of that category's map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub unary: Vec<f64>,
    pub pairwise: Vec<f64>,
    pub polar_total: f64,
    pub baseline_total: f64,
    pub combined: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,unary,pairwise,polar_total,baseline_total,combined";

    pub fn unary_total(&self) -> f64 {
        self.unary.iter().sum()
    }

    pub fn pairwise_total(&self) -> f64 {
        self.pairwise.iter().sum()
    }

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.unary_total(),
            self.pairwise_total(),
            self.polar_total,
            self.baseline_total,
            self.combined
        )
    }

    /// Element-wise accumulation, used for averaging over a batch.
    pub fn accumulate(&mut self, other: &LossBreakdown, scale: f64) {
        if self.unary.len() < other.unary.len() {
            self.unary.resize(other.unary.len(), 0.0);
            self.pairwise.resize(other.pairwise.len(), 0.0);
        }
        for (a, b) in self.unary.iter_mut().zip(&other.unary) {
            *a += scale * b;
        }
        for (a, b) in self.pairwise.iter_mut().zip(&other.pairwise) {
            *a += scale * b;
        }
        self.polar_total += scale * other.polar_total;
        self.baseline_total += scale * other.baseline_total;
        self.combined += scale * other.combined;
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Focal loss over bag predictions, normalised by `max(1, #positive bags)`.
pub fn unary_focal(positive: &[f64], negative: &[f64], beta: f64, gamma: f64) -> f64 {
    let n_pos = positive.len().max(1) as f64;
    let pos: f64 = positive
        .iter()
        .map(|&p| {
            let p = clamp_prob(p);
            beta * (1.0 - p).powf(gamma) * p.ln()
        })
        .sum();
    let neg: f64 = negative
        .iter()
        .map(|&p| {
            let p = clamp_prob(p);
            (1.0 - beta) * p.powf(gamma) * (1.0 - p).ln()
        })
        .sum();
    -(pos + neg) / n_pos
}

/// Unordered neighbouring pixel pairs as flat indices.
pub fn neighbor_pairs(height: usize, width: usize, nb: Neighborhood) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if c + 1 < width {
                pairs.push((i, i + 1));
            }
            if r + 1 < height {
                pairs.push((i, i + width));
                if nb == Neighborhood::Eight {
                    if c + 1 < width {
                        pairs.push((i, i + width + 1));
                    }
                    if c > 0 {
                        pairs.push((i, i + width - 1));
                    }
                }
            }
        }
    }
    pairs
}

/// Mean squared difference over neighbouring pairs; 0 when there are none.
pub fn pairwise_smooth(map: &ImageGrid, nb: Neighborhood) -> f64 {
    let pairs = neighbor_pairs(map.height(), map.width(), nb);
    if pairs.is_empty() {
        return 0.0;
    }
    let v = map.values();
    pairs.iter().map(|&(a, b)| (v[a] - v[b]).powi(2)).sum::<f64>() / pairs.len() as f64
}

/// A probability map stored inside a graph node at `offset..offset + h * w`.
#[derive(Debug, Clone, Copy)]
pub struct MapSlot {
    pub var: Var,
    pub offset: usize,
}

/// Origin chosen for one box during loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OriginRecord {
    pub box_index: usize,
    /// Argmax pixel of the prediction inside the box.
    pub selected: (usize, usize),
    /// Polar origin actually used (moved off the box sides).
    pub origin: (usize, usize),
}

#[derive(Debug)]
pub struct RecordedLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub origins: Vec<OriginRecord>,
}

/// Smooth maximum of every bag: `samples` are the gathered bag elements,
/// `weights` the per-element radial weights, `segments` the bag layout.
fn record_bag_predictions(
    g: &mut Graph,
    samples: Var,
    weights: Vec<f64>,
    segments: Rc<Segments>,
    cfg: &SmoothMaxConfig,
) -> Var {
    let alpha = cfg.alpha;
    let weighted = g.mul_const(samples, Rc::new(weights));
    if cfg.variant == SmoothMaxVariant::HardMax {
        let vals = g.value(samples);
        let mut pick = SparseRows::new();
        for s in 0..segments.len() {
            let range = segments.range(s);
            let mut best = range.start;
            for i in range {
                if vals[i] > vals[best] {
                    best = i;
                }
            }
            pick.push_row([(best, 1.0)]);
        }
        return g.gather(samples, Rc::new(pick));
    }
    let scaled = g.affine(weighted, alpha, 0.0);
    // Per-bag maximum, held constant: softmax and log-sum-exp are invariant
    // to the shift.
    let shift: Vec<f64> = {
        let v = g.value(scaled);
        (0..segments.len())
            .map(|s| v[segments.range(s)].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    };
    let mut neg_shift = vec![0.0; segments.total()];
    for (s, &m) in shift.iter().enumerate() {
        neg_shift[segments.range(s)].fill(-m);
    }
    let centered = g.add_const(scaled, &neg_shift);
    let e = g.exp(centered);
    let z = g.segment_sum(e, segments.clone());
    match cfg.variant {
        SmoothMaxVariant::WeightedSoftmax => {
            let we = g.mul(weighted, e);
            let num = g.segment_sum(we, segments);
            g.div(num, z)
        }
        SmoothMaxVariant::WeightedQuasimax => {
            let lz = g.log(z);
            let q = g.affine(lz, 1.0 / alpha, 0.0);
            let correction: Vec<f64> = shift
                .iter()
                .enumerate()
                .map(|(s, &m)| (m - (segments.range(s).len() as f64).ln()) / alpha)
                .collect();
            g.add_const(q, &correction)
        }
        SmoothMaxVariant::HardMax => unreachable!(),
    }
}

fn record_focal(
    g: &mut Graph,
    positive: Option<Var>,
    negative: Option<Var>,
    n_pos: usize,
    beta: f64,
    gamma: f64,
) -> Var {
    let norm = n_pos.max(1) as f64;
    let mut terms = Vec::new();
    if let Some(p) = positive {
        let p = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
        let logp = g.log(p);
        let comp = g.affine(p, -1.0, 1.0);
        let focus = g.powf(comp, gamma);
        let t = g.mul(focus, logp);
        let s = g.sum(t);
        terms.push(g.affine(s, -beta / norm, 0.0));
    }
    if let Some(q) = negative {
        let q = g.clamp(q, PROB_EPS, 1.0 - PROB_EPS);
        let comp = g.affine(q, -1.0, 1.0);
        let log_comp = g.log(comp);
        let focus = g.powf(q, gamma);
        let t = g.mul(focus, log_comp);
        let s = g.sum(t);
        terms.push(g.affine(s, -(1.0 - beta) / norm, 0.0));
    }
    match terms[..] {
        [] => g.constant(vec![], vec![0.0]),
        [a] => a,
        [a, b] => g.add(a, b),
        _ => unreachable!(),
    }
}

fn record_pairwise(g: &mut Graph, slot: MapSlot, h: usize, w: usize, nb: Neighborhood) -> Var {
    let pairs = neighbor_pairs(h, w, nb);
    if pairs.is_empty() {
        return g.constant(vec![], vec![0.0]);
    }
    let mut rows = SparseRows::new();
    for &(a, b) in &pairs {
        rows.push_row([(slot.offset + a, 1.0), (slot.offset + b, -1.0)]);
    }
    let d = g.gather(slot.var, Rc::new(rows));
    let sq = g.square(d);
    let s = g.sum(sq);
    g.affine(s, 1.0 / pairs.len() as f64, 0.0)
}

fn sum_vars(g: &mut Graph, vars: &[Var]) -> Var {
    match vars.split_first() {
        None => g.constant(vec![], vec![0.0]),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &v| g.add(acc, v)),
    }
}

/// Records the configured objective for one image. `maps[c]` holds the
/// probability map of category `c + 1`; boxes must lie inside `h x w`.
pub fn record_loss(
    g: &mut Graph,
    maps: &[MapSlot],
    height: usize,
    width: usize,
    boxes: &[BoundingBox],
    cfg: &LossConfig,
) -> Result<RecordedLoss> {
    cfg.validate()?;
    if let Some(b) = boxes.iter().find(|b| b.category == 0 || b.category > maps.len()) {
        return Err(Error::Precondition(format!(
            "box category {} outside 1..={}",
            b.category,
            maps.len()
        )));
    }
    if let Some(b) = boxes.iter().find(|b| !b.fits(height, width)) {
        return Err(Error::Precondition(format!(
            "box ({},{})-({},{}) exceeds {height}x{width} image",
            b.top, b.left, b.bottom, b.right
        )));
    }
    let weights = radial_weights(&cfg.smoothmax)?;
    let uniform = RadialWeights::uniform(height.max(width));
    let plane = height * width;

    let mut polar_terms = Vec::new();
    let mut baseline_terms = Vec::new();
    let mut breakdown = LossBreakdown::default();
    let mut origins = Vec::new();

    for (ci, &slot) in maps.iter().enumerate() {
        let category = ci + 1;
        let map_values = &g.value(slot.var)[slot.offset..slot.offset + plane];
        let map = ImageGrid::new(height, width, map_values.to_vec())?;

        let neg_idx = negative_pixels(height, width, boxes, category);
        let negatives = (!neg_idx.is_empty()).then(|| {
            let mut rows = SparseRows::new();
            for &i in &neg_idx {
                rows.push_row([(slot.offset + i, 1.0)]);
            }
            g.gather(slot.var, Rc::new(rows))
        });
        let pairwise = record_pairwise(g, slot, height, width, cfg.neighborhood);
        let pairwise_value = g.scalar(pairwise);
        let weighted_pairwise = g.affine(pairwise, cfg.lambda, 0.0);
        let mut unary_value = 0.0;

        if cfg.arm.uses_polar() {
            let mut rows = SparseRows::new();
            let mut lengths = Vec::new();
            let mut sample_weights = Vec::new();
            for (bi, b) in boxes.iter().enumerate().filter(|(_, b)| b.category == category) {
                let lois = sample_lois(&map, b, &cfg.polar)?;
                origins.push(OriginRecord {
                    box_index: bi,
                    selected: lois.selected,
                    origin: lois.origin,
                });
                for line in &lois.stencils {
                    lengths.push(line.len());
                    for (k, st) in line.iter().enumerate() {
                        rows.push_row(st.iter().map(|&(i, w)| (slot.offset + i, w)));
                        sample_weights.push(weights.as_slice()[k]);
                    }
                }
            }
            let n_pos = lengths.len();
            let positive = (n_pos > 0).then(|| {
                let samples = g.gather(slot.var, Rc::new(rows));
                let segments = Rc::new(Segments::from_lengths(lengths));
                record_bag_predictions(g, samples, sample_weights, segments, &cfg.smoothmax)
            });
            let unary = record_focal(g, positive, negatives, n_pos, cfg.beta, cfg.gamma);
            unary_value += g.scalar(unary);
            polar_terms.push(g.add(unary, weighted_pairwise));
        }

        if cfg.arm.uses_baseline() {
            let mut rows = SparseRows::new();
            let mut lengths = Vec::new();
            for b in boxes.iter().filter(|b| b.category == category) {
                for line in crossing_lines(b, width) {
                    lengths.push(line.len());
                    for i in line {
                        rows.push_row([(slot.offset + i, 1.0)]);
                    }
                }
            }
            let n_pos = lengths.len();
            let positive = (n_pos > 0).then(|| {
                let sample_weights: Vec<f64> = lengths
                    .iter()
                    .flat_map(|&n| uniform.as_slice()[..n].iter().copied())
                    .collect();
                let samples = g.gather(slot.var, Rc::new(rows));
                let segments = Rc::new(Segments::from_lengths(lengths));
                let unweighted = SmoothMaxConfig {
                    w_min: 1.0,
                    ..cfg.smoothmax
                };
                record_bag_predictions(g, samples, sample_weights, segments, &unweighted)
            });
            let unary = record_focal(g, positive, negatives, n_pos, cfg.beta, cfg.gamma);
            unary_value += g.scalar(unary);
            let term = if cfg.dedup_pairwise && cfg.arm.uses_polar() {
                unary
            } else {
                g.add(unary, weighted_pairwise)
            };
            baseline_terms.push(term);
        }
        breakdown.unary.push(unary_value);
        breakdown.pairwise.push(pairwise_value);
    }

    let polar_total = sum_vars(g, &polar_terms);
    let baseline_total = sum_vars(g, &baseline_terms);
    let total = g.add(polar_total, baseline_total);
    breakdown.polar_total = g.scalar(polar_total);
    breakdown.baseline_total = g.scalar(baseline_total);
    breakdown.combined = g.scalar(total);
    Ok(RecordedLoss {
        total,
        breakdown,
        origins,
    })
}

fn check_maps(maps: &[ImageGrid]) -> Result<(usize, usize)> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Precondition("no probability maps".into()))?;
    let dims = first.dims();
    if maps.iter().any(|m| m.dims() != dims) {
        return Err(Error::Shape("probability maps differ in size".into()));
    }
    Ok(dims)
}

fn evaluate(
    maps: &[ImageGrid],
    boxes: &[BoundingBox],
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(LossBreakdown, Vec<ImageGrid>)> {
    let (h, w) = check_maps(maps)?;
    let mut g = Graph::new();
    let values: Vec<f64> = maps.iter().flat_map(|m| m.values().iter().copied()).collect();
    let mut leaf = Tensor::new(vec![maps.len(), h, w], values)?;
    leaf.requires_grad = with_grad;
    let var = g.leaf(&leaf);
    let slots: Vec<MapSlot> = (0..maps.len()).map(|c| MapSlot { var, offset: c * h * w }).collect();
    let rec = record_loss(&mut g, &slots, h, w, boxes, cfg)?;
    let mut grads = Vec::new();
    if with_grad {
        g.backward(rec.total)?;
        let flat = g.grad(var);
        grads = flat
            .chunks(h * w)
            .map(|c| ImageGrid::new(h, w, c.to_vec()).unwrap())
            .collect();
    }
    Ok((rec.breakdown, grads))
}

/// Polar MIL objective only.
pub fn polar_mil_loss(maps: &[ImageGrid], boxes: &[BoundingBox], cfg: &LossConfig) -> Result<LossBreakdown> {
    let cfg = LossConfig {
        arm: LossArm::Polar,
        ..*cfg
    };
    Ok(evaluate(maps, boxes, &cfg, false)?.0)
}

/// Crossing-line baseline objective only.
pub fn baseline_crossing_mil_loss(maps: &[ImageGrid], boxes: &[BoundingBox], cfg: &LossConfig) -> Result<f64> {
    let cfg = LossConfig {
        arm: LossArm::BaselineLg,
        ..*cfg
    };
    Ok(evaluate(maps, boxes, &cfg, false)?.0.baseline_total)
}

/// Objective selected by `cfg.arm`.
pub fn combined_loss(maps: &[ImageGrid], boxes: &[BoundingBox], cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(evaluate(maps, boxes, cfg, false)?.0)
}

/// Objective selected by `cfg.arm` and its gradient with respect to every
/// probability map entry.
pub fn combined_loss_with_grad(
    maps: &[ImageGrid],
    boxes: &[BoundingBox],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<ImageGrid>)> {
    evaluate(maps, boxes, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bags::build_negative_bags;

    fn bx(t: usize, l: usize, b: usize, r: usize) -> BoundingBox {
        BoundingBox::new(t, l, b, r, 1).unwrap()
    }

    fn noise(h: usize, w: usize, seed: u64, lo: f64, hi: f64) -> ImageGrid {
        let mut s = seed;
        ImageGrid::from_fn(h, w, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
        })
    }

    fn small_cfg() -> LossConfig {
        LossConfig {
            polar: PolarConfig {
                n_r: 4,
                n_theta: 16,
                radius: 4.0,
                ..Default::default()
            },
            smoothmax: SmoothMaxConfig {
                n_r: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn focal_examples() {
        assert!(unary_focal(&[1.0, 1.0], &[0.0, 0.0, 0.0], 0.25, 2.0).abs() < 1e-10);
        let v = unary_focal(&[0.5], &[], 0.25, 2.0);
        assert!((v - 0.043_321_698_784_996_58).abs() < 1e-15, "{v}");
        let v = unary_focal(&[], &[0.5], 0.25, 2.0);
        assert!((v - 0.129_965_096_354_989_75).abs() < 1e-15, "{v}");
    }

    #[test]
    fn focal_monotone_in_bag_values() {
        let base = unary_focal(&[0.4, 0.6], &[0.3, 0.2], 0.25, 2.0);
        assert!(unary_focal(&[0.5, 0.6], &[0.3, 0.2], 0.25, 2.0) < base);
        assert!(unary_focal(&[0.4, 0.6], &[0.35, 0.2], 0.25, 2.0) > base);
    }

    #[test]
    fn pairwise_examples() {
        assert_eq!(pairwise_smooth(&ImageGrid::filled(5, 7, 0.4), Neighborhood::Four), 0.0);
        let m = ImageGrid::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(pairwise_smooth(&m, Neighborhood::Four), 1.0);
        assert_eq!(pairwise_smooth(&ImageGrid::zeros(1, 1), Neighborhood::Eight), 0.0);
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let m = noise(8, 8, 4, 0.0, 1.0);
        for nb in [Neighborhood::Four, Neighborhood::Eight] {
            let mut sum = 0.0;
            let mut count = 0usize;
            for a in 0..64usize {
                for b in (a + 1)..64 {
                    let (ra, ca) = ((a / 8) as isize, (a % 8) as isize);
                    let (rb, cb) = ((b / 8) as isize, (b % 8) as isize);
                    let (dr, dc) = ((ra - rb).abs(), (ca - cb).abs());
                    let adjacent = match nb {
                        Neighborhood::Four => dr + dc == 1,
                        Neighborhood::Eight => dr.max(dc) == 1,
                    };
                    if adjacent {
                        sum += (m.values()[a] - m.values()[b]).powi(2);
                        count += 1;
                    }
                }
            }
            assert!((pairwise_smooth(&m, nb) - sum / count as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn pairwise_transpose_invariant() {
        let m = noise(6, 9, 8, 0.0, 1.0);
        for nb in [Neighborhood::Four, Neighborhood::Eight] {
            let a = pairwise_smooth(&m, nb);
            let b = pairwise_smooth(&m.transposed(), nb);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn no_boxes_leaves_only_negatives_and_smoothness() {
        let m = noise(8, 8, 1, 0.05, 0.95);
        let cfg = small_cfg();
        let b = polar_mil_loss(std::slice::from_ref(&m), &[], &cfg).unwrap();
        let negs: Vec<f64> = build_negative_bags(&m, &[], 1).iter().map(|n| n.prediction).collect();
        let expected =
            unary_focal(&[], &negs, cfg.beta, cfg.gamma) + cfg.lambda * pairwise_smooth(&m, Neighborhood::Four);
        assert!((b.polar_total - expected).abs() < 1e-12);
        assert_eq!(b.baseline_total, 0.0);
    }

    #[test]
    fn graph_unary_matches_scalar_focal() {
        let m = noise(16, 16, 12, 0.05, 0.95);
        let b = bx(3, 4, 12, 13);
        let cfg = LossConfig {
            lambda: 0.0,
            polar: PolarConfig {
                n_r: 6,
                n_theta: 24,
                radius: 6.0,
                ..Default::default()
            },
            smoothmax: SmoothMaxConfig {
                n_r: 6,
                alpha: 3.0,
                w_min: 0.4,
                variant: SmoothMaxVariant::WeightedQuasimax,
            },
            ..Default::default()
        };
        let weights = radial_weights(&cfg.smoothmax).unwrap();
        let bags = crate::bags::build_positive_bags(&m, &b, 0, &cfg.polar).unwrap();
        let pos: Vec<f64> = bags
            .iter()
            .map(|bag| {
                crate::smoothmax::weighted_quasimax(&bag.predictions, weights.as_slice(), 3.0)
                    .unwrap()
                    .0
            })
            .collect();
        let negs: Vec<f64> = build_negative_bags(&m, &[b], 1).iter().map(|n| n.prediction).collect();
        let expected = unary_focal(&pos, &negs, cfg.beta, cfg.gamma);
        let got = polar_mil_loss(&[m], &[b], &cfg).unwrap();
        assert!(
            (got.polar_total - expected).abs() < 1e-12,
            "{} vs {expected}",
            got.polar_total
        );
    }

    #[test]
    fn perfect_box_map() {
        let b = bx(20, 18, 40, 45);
        let m = ImageGrid::from_fn(64, 64, |r, c| if b.contains(r, c) { 1.0 } else { 0.0 });
        let cfg = LossConfig {
            smoothmax: SmoothMaxConfig {
                alpha: 200.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = polar_mil_loss(&[m], &[b], &cfg).unwrap();
        assert!(out.unary[0] < 1e-6, "{}", out.unary[0]);
        // 2 * (21 + 28) boundary pairs out of 2 * 64 * 63
        let expected = (2.0 * (21.0 + 28.0)) / (2.0 * 64.0 * 63.0);
        assert!((out.pairwise[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn arms_add_up() {
        let m = noise(12, 12, 5, 0.05, 0.95);
        let boxes = [bx(2, 3, 9, 10)];
        let mut cfg = small_cfg();
        cfg.arm = LossArm::Combined;
        let both = combined_loss(std::slice::from_ref(&m), &boxes, &cfg).unwrap();
        let lp = polar_mil_loss(std::slice::from_ref(&m), &boxes, &cfg)
            .unwrap()
            .polar_total;
        let lg = baseline_crossing_mil_loss(std::slice::from_ref(&m), &boxes, &cfg).unwrap();
        assert_eq!(both.polar_total, lp);
        assert_eq!(both.baseline_total, lg);
        assert_eq!(both.combined, lp + lg);
        cfg.arm = LossArm::Polar;
        assert_eq!(
            combined_loss(std::slice::from_ref(&m), &boxes, &cfg).unwrap().combined,
            lp
        );
        cfg.arm = LossArm::BaselineLg;
        assert_eq!(
            combined_loss(std::slice::from_ref(&m), &boxes, &cfg).unwrap().combined,
            lg
        );
        cfg.arm = LossArm::Combined;
        cfg.dedup_pairwise = true;
        let dedup = combined_loss(std::slice::from_ref(&m), &boxes, &cfg).unwrap();
        let pw = pairwise_smooth(&m, Neighborhood::Four);
        assert!((dedup.combined - (lp + lg - cfg.lambda * pw)).abs() < 1e-12);
    }

    #[test]
    fn baseline_perfect_map_has_small_unary() {
        let b = bx(3, 3, 8, 10);
        let m = ImageGrid::from_fn(12, 14, |r, c| if b.contains(r, c) { 1.0 } else { 0.0 });
        let cfg = LossConfig {
            lambda: 0.0,
            smoothmax: SmoothMaxConfig {
                alpha: 200.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let lg = baseline_crossing_mil_loss(&[m], &[b], &cfg).unwrap();
        assert!(lg < 1e-6, "{lg}");
    }

    #[test]
    fn all_terms_finite_and_non_negative() {
        for seed in 0..10 {
            let m = noise(10, 10, seed, 0.0, 1.0);
            let out = combined_loss(&[m], &[bx(2, 2, 7, 8)], &small_cfg()).unwrap();
            for v in out
                .unary
                .iter()
                .chain(&out.pairwise)
                .chain([&out.polar_total, &out.baseline_total, &out.combined])
            {
                assert!(v.is_finite() && *v >= 0.0);
            }
        }
        let saturated = ImageGrid::from_fn(10, 10, |r, _| if r < 5 { 0.0 } else { 1.0 });
        let out = combined_loss(&[saturated], &[bx(2, 2, 7, 8)], &small_cfg()).unwrap();
        assert!(out.combined.is_finite());
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = ImageGrid::filled(8, 8, 0.5);
        let cfg = small_cfg();
        assert!(combined_loss(&[], &[], &cfg).is_err());
        assert!(combined_loss(
            std::slice::from_ref(&m),
            &[BoundingBox::new(0, 0, 3, 3, 2).unwrap()],
            &cfg
        )
        .is_err());
        assert!(combined_loss(std::slice::from_ref(&m), &[bx(0, 0, 8, 3)], &cfg).is_err());
        let mismatched = LossConfig {
            smoothmax: SmoothMaxConfig::default(),
            ..cfg
        };
        assert!(combined_loss(&[m], &[], &mismatched).is_err());
    }
}
