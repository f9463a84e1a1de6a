//! Positive line-of-interest bags, single-pixel negative bags and origin
//! selection.

use crate::error::Result;
use crate::image::{BoundingBox, ImageGrid};
use crate::polar::{self, PolarConfig};

/// Probabilities along one radial line, from the origin out to the box side.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveBag {
    pub category: usize,
    pub predictions: Vec<f64>,
    pub box_id: usize,
    pub theta_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeBag {
    pub category: usize,
    pub prediction: f64,
    pub row: usize,
    pub col: usize,
}

/// Row-major-first argmax of `prob_map` over the pixels of `b`.
pub fn select_origin(prob_map: &ImageGrid, b: &BoundingBox) -> (usize, usize) {
    let b = b.clipped(prob_map.height(), prob_map.width());
    let mut best = (b.top, b.left);
    let mut best_value = prob_map.get(b.top, b.left);
    for r in b.top..=b.bottom {
        for c in b.left..=b.right {
            let v = prob_map.get(r, c);
            if v > best_value {
                best_value = v;
                best = (r, c);
            }
        }
    }
    best
}

/// Moves an origin lying on a side of `b` one pixel inward, where the box
/// has an interior along that axis.
pub fn interior_origin(b: &BoundingBox, origin: (usize, usize)) -> (usize, usize) {
    let clamp = |v: usize, lo: usize, hi: usize| {
        if hi - lo >= 2 {
            v.clamp(lo + 1, hi - 1)
        } else {
            v
        }
    };
    (clamp(origin.0, b.top, b.bottom), clamp(origin.1, b.left, b.right))
}

/// Interpolation stencils of the positive bags of one box.
#[derive(Debug, Clone, PartialEq)]
pub struct LoiSampling {
    /// Polar origin after moving it off the box sides.
    pub origin: (usize, usize),
    /// Origin as selected by the argmax, before adjustment.
    pub selected: (usize, usize),
    /// `n(theta)` per angle.
    pub lengths: Vec<usize>,
    /// `stencils[j][k]`: flat-index/weight pairs of sample `k` on line `j`.
    pub stencils: Vec<Vec<Vec<(usize, f64)>>>,
}

impl LoiSampling {
    /// Applies the stencils to `values`, one vector per angle.
    pub fn sample(&self, values: &[f64]) -> Vec<Vec<f64>> {
        self.stencils
            .iter()
            .map(|line| {
                line.iter()
                    .map(|st| st.iter().map(|&(i, w)| w * values[i]).sum())
                    .collect()
            })
            .collect()
    }
}

/// Chooses the origin from `prob_map` and lays out the truncated radial
/// sample stencils for every angle.
pub fn sample_lois(prob_map: &ImageGrid, b: &BoundingBox, cfg: &PolarConfig) -> Result<LoiSampling> {
    cfg.validate()?;
    let (h, w) = prob_map.dims();
    let b = b.clipped(h, w);
    let selected = select_origin(prob_map, &b);
    let origin = interior_origin(&b, selected);
    let lengths = polar::valid_lengths_from(&b, origin, cfg, h, w);
    let all = polar::polar_stencils(h, w, origin, cfg, cfg.interpolation);
    let stencils = (0..cfg.n_theta)
        .map(|j| (0..lengths[j]).map(|k| all[k * cfg.n_theta + j].clone()).collect())
        .collect();
    Ok(LoiSampling {
        origin,
        selected,
        lengths,
        stencils,
    })
}

/// One bag per angle, each truncated to its valid length.
pub fn build_positive_bags(
    prob_map: &ImageGrid,
    b: &BoundingBox,
    box_id: usize,
    cfg: &PolarConfig,
) -> Result<Vec<PositiveBag>> {
    let sampling = sample_lois(prob_map, b, cfg)?;
    Ok(sampling
        .sample(prob_map.values())
        .into_iter()
        .enumerate()
        .map(|(j, predictions)| PositiveBag {
            category: b.category,
            predictions,
            box_id,
            theta_index: j,
        })
        .collect())
}

/// Flat indices of pixels outside every box of `category`.
pub fn negative_pixels(height: usize, width: usize, boxes: &[BoundingBox], category: usize) -> Vec<usize> {
    let own: Vec<&BoundingBox> = boxes.iter().filter(|b| b.category == category).collect();
    (0..height * width)
        .filter(|&i| {
            let (r, c) = (i / width, i % width);
            !own.iter().any(|b| b.contains(r, c))
        })
        .collect()
}

pub fn build_negative_bags(prob_map: &ImageGrid, boxes: &[BoundingBox], category: usize) -> Vec<NegativeBag> {
    let (h, w) = prob_map.dims();
    negative_pixels(h, w, boxes, category)
        .into_iter()
        .map(|i| NegativeBag {
            category,
            prediction: prob_map.values()[i],
            row: i / w,
            col: i % w,
        })
        .collect()
}

/// Flat pixel indices of every full row segment and then every full column
/// segment crossing `b`: `height + width` bags.
pub fn crossing_lines(b: &BoundingBox, width: usize) -> Vec<Vec<usize>> {
    let rows = (b.top..=b.bottom).map(|r| (b.left..=b.right).map(|c| r * width + c).collect());
    let cols = (b.left..=b.right).map(|c| (b.top..=b.bottom).map(|r| r * width + c).collect());
    rows.chain(cols).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar::Interpolation;

    fn noise(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut s = seed;
        ImageGrid::from_fn(h, w, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    fn bx(t: usize, l: usize, b: usize, r: usize) -> BoundingBox {
        BoundingBox::new(t, l, b, r, 1).unwrap()
    }

    #[test]
    fn unique_max_is_selected() {
        let mut m = ImageGrid::filled(32, 32, 0.2);
        m.set(12, 14, 0.9);
        assert_eq!(select_origin(&m, &bx(5, 5, 25, 25)), (12, 14));
    }

    #[test]
    fn uniform_map_picks_top_left() {
        let m = ImageGrid::filled(32, 32, 0.5);
        assert_eq!(select_origin(&m, &bx(7, 9, 20, 22)), (7, 9));
    }

    #[test]
    fn origin_ignores_pixels_outside_box() {
        let mut m = noise(32, 32, 1);
        m.set(0, 0, 5.0);
        let o = select_origin(&m, &bx(4, 4, 20, 20));
        assert!(bx(4, 4, 20, 20).contains(o.0, o.1));
    }

    #[test]
    fn interior_origin_moves_off_sides() {
        let b = bx(7, 9, 20, 22);
        assert_eq!(interior_origin(&b, (7, 9)), (8, 10));
        assert_eq!(interior_origin(&b, (12, 22)), (12, 21));
        assert_eq!(interior_origin(&b, (12, 15)), (12, 15));
        // two-pixel-wide box has no interior column
        assert_eq!(interior_origin(&bx(3, 3, 10, 4), (3, 4)), (4, 4));
    }

    #[test]
    fn ninety_bags_per_box() {
        let m = noise(64, 64, 2);
        let bags = build_positive_bags(&m, &bx(10, 12, 40, 50), 0, &PolarConfig::default()).unwrap();
        assert_eq!(bags.len(), 90);
        assert!(bags.iter().all(|b| (1..=30).contains(&b.predictions.len())));
    }

    #[test]
    fn coarse_steps_give_single_element_bags() {
        // Origin right next to the left side with 4-pixel radial steps.
        let mut m = ImageGrid::filled(40, 40, 0.1);
        m.set(20, 11, 0.9);
        let cfg = PolarConfig {
            n_r: 5,
            n_theta: 4,
            radius: 20.0,
            interpolation: Interpolation::Nearest,
        };
        let bags = build_positive_bags(&m, &bx(10, 10, 30, 30), 0, &cfg).unwrap();
        // theta = pi points left: column 11 then 7, which is outside.
        assert_eq!(bags[2].predictions, vec![0.9]);
        assert_eq!(bags[0].predictions.len(), 5);
    }

    #[test]
    fn bag_head_is_origin_value() {
        let m = noise(48, 48, 3);
        let b = bx(6, 8, 40, 37);
        let cfg = PolarConfig {
            interpolation: Interpolation::Nearest,
            ..Default::default()
        };
        let s = sample_lois(&m, &b, &cfg).unwrap();
        let bags = build_positive_bags(&m, &b, 0, &cfg).unwrap();
        for bag in &bags {
            assert_eq!(bag.predictions[0], m.get(s.origin.0, s.origin.1));
        }
    }

    #[test]
    fn negative_bag_counts() {
        let m = ImageGrid::filled(64, 64, 0.3);
        assert_eq!(build_negative_bags(&m, &[bx(0, 0, 63, 63)], 1).len(), 0);
        assert_eq!(build_negative_bags(&m, &[bx(10, 10, 30, 30)], 1).len(), 3655);
        // other categories do not shield pixels
        let other = BoundingBox::new(10, 10, 30, 30, 2).unwrap();
        assert_eq!(build_negative_bags(&m, &[other], 1).len(), 4096);
        // overlap counted once: 21x21 + 21x21 - 11x11
        let n = build_negative_bags(&m, &[bx(10, 10, 30, 30), bx(20, 20, 40, 40)], 1).len();
        assert_eq!(n, 4096 - (441 + 441 - 121));
    }

    #[test]
    fn crossing_line_count() {
        let lines = crossing_lines(&bx(3, 4, 9, 14), 20);
        assert_eq!(lines.len(), 7 + 11);
        assert_eq!(lines[0].len(), 11);
        assert_eq!(lines[7].len(), 7);
    }
}
