#![allow(dead_code)]

use polarmil::image::{BoundingBox, ImageGrid};
use polarmil::polar::PolarConfig;

pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + ((self.next_f64() * (hi - lo + 1) as f64) as usize).min(hi - lo)
    }

    pub fn image(&mut self, h: usize, w: usize, lo: f64, hi: f64) -> ImageGrid {
        ImageGrid::from_fn(h, w, |_, _| self.range(lo, hi))
    }
}

/// Nearest integer, ties (within 1e-9) away from zero.
pub fn round_half_away(x: f64) -> f64 {
    let f = x.floor();
    let frac = x - f;
    if frac > 0.5 + 1e-9 {
        f + 1.0
    } else if frac < 0.5 - 1e-9 {
        f
    } else if x > 0.0 {
        f + 1.0
    } else {
        f
    }
}

/// Brute-force nearest-mode polar samples, `out[k * n_theta + j]`.
pub fn nearest_polar_oracle(img: &ImageGrid, origin: (usize, usize), cfg: &PolarConfig) -> Vec<f64> {
    let (h, w) = img.dims();
    let mut out = Vec::new();
    for k in 0..cfg.n_r {
        let r = cfg.radius * k as f64 / cfg.n_r as f64;
        for j in 0..cfg.n_theta {
            let theta = std::f64::consts::TAU * j as f64 / cfg.n_theta as f64;
            let row = origin.0 as f64 + round_half_away(r * theta.sin());
            let col = origin.1 as f64 + round_half_away(r * theta.cos());
            let v = if row >= 0.0 && col >= 0.0 && (row as usize) < h && (col as usize) < w {
                img.get(row as usize, col as usize)
            } else {
                0.0
            };
            out.push(v);
        }
    }
    out
}

/// Valid lengths by marching each ray through the pixel slab
/// `(top - 0.5, bottom + 0.5) x (left - 0.5, right + 0.5)`. An offset that
/// lands exactly on the slab edge rounds outward, so the slab is open.
pub fn slab_valid_lengths(b: &BoundingBox, origin: (usize, usize), cfg: &PolarConfig) -> Vec<usize> {
    let (or, oc) = (origin.0 as f64, origin.1 as f64);
    let row_lo = b.top as f64 - 0.5 - or;
    let row_hi = b.bottom as f64 + 0.5 - or;
    let col_lo = b.left as f64 - 0.5 - oc;
    let col_hi = b.right as f64 + 0.5 - oc;
    let step = cfg.radius / cfg.n_r as f64;
    (0..cfg.n_theta)
        .map(|j| {
            let theta = std::f64::consts::TAU * j as f64 / cfg.n_theta as f64;
            let inside = |k: usize| {
                let r = step * k as f64;
                let (dr, dc) = (r * theta.sin(), r * theta.cos());
                dr > row_lo + 1e-9 && dr < row_hi - 1e-9 && dc > col_lo + 1e-9 && dc < col_hi - 1e-9
            };
            (0..cfg.n_r).take_while(|&k| inside(k)).count().max(1)
        })
        .collect()
}

/// Random box inside `h x w` with an interior, plus a strictly interior origin.
pub fn random_box_and_origin(rng: &mut Lcg, h: usize, w: usize) -> (BoundingBox, (usize, usize)) {
    let top = rng.int(0, h - 3);
    let bottom = rng.int(top + 2, h - 1);
    let left = rng.int(0, w - 3);
    let right = rng.int(left + 2, w - 1);
    let b = BoundingBox::new(top, left, bottom, right, 1).unwrap();
    let origin = (rng.int(top + 1, bottom - 1), rng.int(left + 1, right - 1));
    (b, origin)
}
