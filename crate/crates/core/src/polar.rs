//! Polar resampling of box regions about an interior origin.
//!
//! Sample `(k, j)` sits at radius `r_k = k * R / N_r` and angle
//! `theta_j = j * 2pi / N_theta` from the origin. The column offset is
//! `r cos(theta)` and the row offset is `r sin(theta)`. Samples that fall
//! outside the image read as 0.
//!
//! Offsets within 1e-9 of a multiple of one half are snapped onto it before
//! rounding or flooring, so nearest sampling is stable under 90 degree
//! rotations and bilinear sampling at pixel centres is exact. Nearest mode
//! rounds offsets half away from zero.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::{BoundingBox, ImageGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarConfig {
    pub n_r: usize,
    pub n_theta: usize,
    pub radius: f64,
    pub interpolation: Interpolation,
}

impl Default for PolarConfig {
    fn default() -> Self {
        Self {
            n_r: 30,
            n_theta: 90,
            radius: 30.0,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl PolarConfig {
    /// Visualisation preset: 360 angles, radius and radial count set to the
    /// half diagonal of `b`.
    pub fn half_diagonal(b: &BoundingBox) -> Self {
        let hd = 0.5 * ((b.height() as f64).powi(2) + (b.width() as f64).powi(2)).sqrt();
        let n = hd.ceil().max(1.0);
        Self {
            n_r: n as usize,
            n_theta: 360,
            radius: n,
            interpolation: Interpolation::Bilinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.n_theta == 0 || !(self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "polar config needs n_r >= 1, n_theta >= 1, radius > 0 (got {}, {}, {})",
                self.n_r, self.n_theta, self.radius
            )));
        }
        Ok(())
    }

    pub fn radial_step(&self) -> f64 {
        self.radius / self.n_r as f64
    }

    /// `(row offset, col offset)` of sample `(k, j)` relative to the origin.
    pub fn offset(&self, k: usize, j: usize) -> (f64, f64) {
        let r = k as f64 * self.radial_step();
        let theta = j as f64 * 2.0 * PI / self.n_theta as f64;
        (snap(r * theta.sin()), snap(r * theta.cos()))
    }
}

fn snap(x: f64) -> f64 {
    let twice = 2.0 * x;
    let nearest = twice.round();
    if (twice - nearest).abs() < 2e-9 {
        nearest / 2.0
    } else {
        x
    }
}

/// Pixel stencil of one sample: up to four `(flat index, weight)` pairs.
/// Out-of-image neighbours are dropped, which reads them as 0.
pub fn sample_stencil(
    height: usize,
    width: usize,
    row: f64,
    col: f64,
    mode: Interpolation,
    out: &mut Vec<(usize, f64)>,
) {
    out.clear();
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width;
    match mode {
        Interpolation::Nearest => {
            let (r, c) = (row.round() as isize, col.round() as isize);
            if inside(r, c) {
                out.push((r as usize * width + c as usize, 1.0));
            }
        }
        Interpolation::Bilinear => {
            let (r0, c0) = (row.floor(), col.floor());
            let (fr, fc) = (row - r0, col - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    let w = wr * wc;
                    if w != 0.0 && inside(r0 + dr, c0 + dc) {
                        out.push(((r0 + dr) as usize * width + (c0 + dc) as usize, w));
                    }
                }
            }
        }
    }
}

/// Absolute sample position for an origin at `(row, col)`. Offsets are
/// rounded before being added so nearest sampling is symmetric about the
/// origin.
fn sample_position(origin: (usize, usize), offset: (f64, f64), mode: Interpolation) -> (f64, f64) {
    let (dr, dc) = match mode {
        Interpolation::Nearest => (offset.0.round(), offset.1.round()),
        Interpolation::Bilinear => offset,
    };
    (origin.0 as f64 + dr, origin.1 as f64 + dc)
}

/// Stencils for every sample in `k`-major order; `stencils[k * n_theta + j]`.
pub fn polar_stencils(
    height: usize,
    width: usize,
    origin: (usize, usize),
    cfg: &PolarConfig,
    mode: Interpolation,
) -> Vec<Vec<(usize, f64)>> {
    let mut buf = Vec::with_capacity(4);
    let mut out = Vec::with_capacity(cfg.n_r * cfg.n_theta);
    for k in 0..cfg.n_r {
        for j in 0..cfg.n_theta {
            let (row, col) = sample_position(origin, cfg.offset(k, j), mode);
            sample_stencil(height, width, row, col, mode, &mut buf);
            out.push(buf.clone());
        }
    }
    out
}

/// `N_r x N_theta` resampled field.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarImage {
    pub n_r: usize,
    pub n_theta: usize,
    /// `values[k * n_theta + j]`
    pub values: Vec<f64>,
    /// Per-angle count of leading valid radial samples.
    pub valid_len: Vec<usize>,
    pub origin: (usize, usize),
}

impl PolarImage {
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.n_theta + j]
    }

    pub fn is_valid(&self, k: usize, j: usize) -> bool {
        k < self.valid_len[j]
    }

    /// Radial line `j` truncated to its valid length.
    pub fn line(&self, j: usize) -> Vec<f64> {
        (0..self.valid_len[j]).map(|k| self.get(k, j)).collect()
    }

    /// Rows are radii, columns are angles.
    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid::new(self.n_r, self.n_theta, self.values.clone()).unwrap()
    }

    pub fn valid_mask(&self) -> ImageGrid {
        ImageGrid::from_fn(
            self.n_r,
            self.n_theta,
            |k, j| {
                if self.is_valid(k, j) {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }
}

fn check_origin(h: usize, w: usize, origin: (usize, usize)) -> Result<()> {
    if origin.0 >= h || origin.1 >= w {
        return Err(Error::Precondition(format!("origin {origin:?} outside {h}x{w} image")));
    }
    Ok(())
}

/// Resamples `image` on the polar grid about `origin`. Every angle is
/// reported with full valid length.
pub fn polar_transform(image: &ImageGrid, origin: (usize, usize), cfg: &PolarConfig) -> Result<PolarImage> {
    cfg.validate()?;
    let (h, w) = image.dims();
    check_origin(h, w, origin)?;
    let values = polar_stencils(h, w, origin, cfg, cfg.interpolation)
        .iter()
        .map(|st| st.iter().map(|&(i, wt)| wt * image.values()[i]).sum())
        .collect();
    Ok(PolarImage {
        n_r: cfg.n_r,
        n_theta: cfg.n_theta,
        values,
        valid_len: vec![cfg.n_r; cfg.n_theta],
        origin,
    })
}

/// Binary mask of `b` clipped to the image.
pub fn box_mask(b: &BoundingBox, image_h: usize, image_w: usize) -> ImageGrid {
    ImageGrid::from_fn(image_h, image_w, |r, c| if b.contains(r, c) { 1.0 } else { 0.0 })
}

/// Valid length per angle for an origin anywhere inside the box, including
/// its sides.
pub(crate) fn valid_lengths_from(
    b: &BoundingBox,
    origin: (usize, usize),
    cfg: &PolarConfig,
    image_h: usize,
    image_w: usize,
) -> Vec<usize> {
    let mask = box_mask(b, image_h, image_w);
    let nearest = PolarConfig {
        interpolation: Interpolation::Nearest,
        ..*cfg
    };
    let stencils = polar_stencils(image_h, image_w, origin, &nearest, Interpolation::Nearest);
    (0..cfg.n_theta)
        .map(|j| {
            (0..cfg.n_r)
                .take_while(|&k| {
                    let v: f64 = stencils[k * cfg.n_theta + j]
                        .iter()
                        .map(|&(i, wt)| wt * mask.values()[i])
                        .sum();
                    v >= 0.5
                })
                .count()
                .max(1)
        })
        .collect()
}

/// Count of leading in-box samples along each radial line, computed from
/// the nearest-mode transform of the binary box region.
pub fn loi_valid_lengths(
    b: &BoundingBox,
    origin: (usize, usize),
    cfg: &PolarConfig,
    image_h: usize,
    image_w: usize,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    check_origin(image_h, image_w, origin)?;
    if !b.contains_strictly(origin.0, origin.1) {
        return Err(Error::Precondition(format!(
            "origin {origin:?} is not strictly inside box ({},{})-({},{})",
            b.top, b.left, b.bottom, b.right
        )));
    }
    Ok(valid_lengths_from(b, origin, cfg, image_h, image_w))
}

/// Polar transform of `image` with valid lengths taken from the box region.
pub fn polar_transform_region(
    image: &ImageGrid,
    b: &BoundingBox,
    origin: (usize, usize),
    cfg: &PolarConfig,
) -> Result<PolarImage> {
    let (h, w) = image.dims();
    let valid_len = loi_valid_lengths(b, origin, cfg, h, w)?;
    let mut polar = polar_transform(image, origin, cfg)?;
    polar.valid_len = valid_len;
    Ok(polar)
}
