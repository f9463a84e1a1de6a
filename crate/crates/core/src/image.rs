//! Raster grids, bounding boxes and their on-disk formats.
//!
//! Images, probability maps and masks all share [`ImageGrid`]: a row-major
//! `f64` field with explicit dimensions. Images are stored as binary PGM
//! (`P5`, maxval 255) and boxes as a plain-text sidecar with one
//! `category top left bottom right` line per box.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

/// Dense row-major 2D scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn is_probability(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn is_mask(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Snap every value to the nearest multiple of 1/255 in `[0, 1]`.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| quantize_byte(v) as f64 / 255.0).collect(),
        }
    }

    /// Transpose rows and columns.
    pub fn transposed(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }
}

fn quantize_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Axis-aligned box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
    pub category: usize,
}

impl BoundingBox {
    pub fn new(top: usize, left: usize, bottom: usize, right: usize, category: usize) -> Result<Self> {
        if top > bottom || left > right {
            return Err(Error::Precondition(format!(
                "box corners out of order: ({top},{left})-({bottom},{right})"
            )));
        }
        if category == 0 {
            return Err(Error::Precondition("box categories start at 1".into()));
        }
        Ok(Self {
            top,
            left,
            bottom,
            right,
            category,
        })
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..=self.bottom).contains(&row) && (self.left..=self.right).contains(&col)
    }

    /// Strictly inside: not on any of the four sides.
    pub fn contains_strictly(&self, row: usize, col: usize) -> bool {
        row > self.top && row < self.bottom && col > self.left && col < self.right
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.top <= other.top && self.left <= other.left && self.bottom >= other.bottom && self.right >= other.right
    }

    pub fn fits(&self, image_h: usize, image_w: usize) -> bool {
        self.bottom < image_h && self.right < image_w
    }

    pub fn clipped(&self, image_h: usize, image_w: usize) -> Self {
        Self {
            bottom: self.bottom.min(image_h.saturating_sub(1)),
            right: self.right.min(image_w.saturating_sub(1)),
            ..*self
        }
    }

    pub fn center(&self) -> (usize, usize) {
        ((self.top + self.bottom) / 2, (self.left + self.right) / 2)
    }
}

/// Move each side outward by `margin` pixels, then clip to the image.
pub fn loosen_box(b: &BoundingBox, margin: usize, image_h: usize, image_w: usize) -> BoundingBox {
    BoundingBox {
        top: b.top.saturating_sub(margin),
        left: b.left.saturating_sub(margin),
        bottom: (b.bottom + margin).min(image_h - 1),
        right: (b.right + margin).min(image_w - 1),
        category: b.category,
    }
}

/// Image with its box annotations and, for evaluation, ground-truth masks.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image: ImageGrid,
    pub boxes: Vec<BoundingBox>,
    /// Indexed by category - 1.
    pub masks: Vec<ImageGrid>,
}

impl AnnotatedImage {
    pub fn new(image: ImageGrid, boxes: Vec<BoundingBox>, masks: Vec<ImageGrid>) -> Result<Self> {
        let (h, w) = image.dims();
        if let Some(m) = masks.iter().find(|m| m.dims() != (h, w)) {
            return Err(Error::Shape(format!(
                "mask {:?} does not match image {h}x{w}",
                m.dims()
            )));
        }
        let boxes = boxes.into_iter().map(|b| b.clipped(h, w)).collect();
        Ok(Self { image, boxes, masks })
    }
}

pub fn write_pgm(grid: &ImageGrid, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(grid)).io_context(|| format!("writing {}", path.display()))
}

pub fn encode_pgm(grid: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend(grid.values.iter().map(|&v| quantize_byte(v)));
    out
}

pub fn read_pgm(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).io_context(|| format!("reading {}", path.display()))?;
    decode_pgm(&bytes).map_err(|(offset, reason)| Error::PgmParse {
        path: path.to_path_buf(),
        offset,
        reason,
    })
}

/// Parses a binary PGM; errors carry the byte offset where parsing failed.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<ImageGrid, (usize, String)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err((0, "missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    let mut starts = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        starts[i] = start;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err((start, format!("expected header field {}", i + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| (start, format!("header field {text:?} out of range")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err((starts[2], format!("maxval {maxval} unsupported, expected 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err((pos, "expected single whitespace after maxval".into()));
    }
    pos += 1;
    let needed = width * height;
    let payload = &bytes[pos..];
    if payload.len() < needed {
        return Err((
            bytes.len(),
            format!("truncated payload: {} of {needed} bytes", payload.len()),
        ));
    }
    let values = payload[..needed].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(ImageGrid { height, width, values })
}

pub fn write_boxes(boxes: &[BoundingBox], path: &Path) -> Result<()> {
    fs::write(path, format_boxes(boxes)).io_context(|| format!("writing {}", path.display()))
}

pub fn format_boxes(boxes: &[BoundingBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        writeln!(out, "{} {} {} {} {}", b.category, b.top, b.left, b.bottom, b.right).unwrap();
    }
    out
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>> {
    let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
    parse_boxes(&text).map_err(|(line, reason)| Error::BoxParse {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

/// Errors carry the 1-based line number.
pub fn parse_boxes(text: &str) -> std::result::Result<Vec<BoundingBox>, (usize, String)> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = trimmed
            .split_whitespace()
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|_| (line_no, format!("{f:?} is not a non-negative integer")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let [category, top, left, bottom, right] = fields[..] else {
            return Err((line_no, format!("expected 5 fields, got {}", fields.len())));
        };
        let b = BoundingBox::new(top, left, bottom, right, category).map_err(|e| (line_no, e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}
