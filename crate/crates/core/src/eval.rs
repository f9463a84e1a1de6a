//! Dice scores, per-case reports and the sensitivity table.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::image::ImageGrid;

/// Pixels with probability at or above this are foreground.
pub const THRESHOLD: f64 = 0.5;

pub fn binarize(map: &ImageGrid) -> ImageGrid {
    ImageGrid::from_fn(map.height(), map.width(), |r, c| {
        if map.get(r, c) >= THRESHOLD {
            1.0
        } else {
            0.0
        }
    })
}

fn overlap_counts(pred: &ImageGrid, truth: &ImageGrid) -> Result<(usize, usize, usize)> {
    if pred.dims() != truth.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} and ground truth {:?} differ in size",
            pred.dims(),
            truth.dims()
        )));
    }
    let mut inter = 0;
    let mut p = 0;
    let mut t = 0;
    for (&a, &b) in pred.values().iter().zip(truth.values()) {
        let (a, b) = (a >= THRESHOLD, b >= THRESHOLD);
        inter += (a && b) as usize;
        p += a as usize;
        t += b as usize;
    }
    Ok((inter, p, t))
}

fn dice_from(inter: usize, p: usize, t: usize) -> f64 {
    if p + t == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + t) as f64
    }
}

/// `2|P∩G| / (|P| + |G|)` after thresholding both at 0.5; two empty masks
/// score 1.
pub fn dice(pred: &ImageGrid, truth: &ImageGrid) -> Result<f64> {
    let (i, p, t) = overlap_counts(pred, truth)?;
    Ok(dice_from(i, p, t))
}

/// Dice of a stack of slices treated as one volume: counts are pooled
/// before the ratio is taken.
pub fn dice_stacked(preds: &[ImageGrid], truths: &[ImageGrid]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predicted slices for {} ground-truth slices",
            preds.len(),
            truths.len()
        )));
    }
    let (mut i, mut p, mut t) = (0, 0, 0);
    for (a, b) in preds.iter().zip(truths) {
        let c = overlap_counts(a, b)?;
        i += c.0;
        p += c.1;
        t += c.2;
    }
    Ok(dice_from(i, p, t))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    pub cases: Vec<(String, f64)>,
}

impl DiceReport {
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.cases.iter().map(|c| c.1).collect::<Vec<_>>())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,dice\n");
        for (id, d) in &self.cases {
            writeln!(s, "{id},{d:.6}").unwrap();
        }
        let (m, sd) = self.mean_std();
        writeln!(s, "mean,{m:.6}").unwrap();
        writeln!(s, "std,{sd:.6}").unwrap();
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).io_context(|| format!("writing {}", path.display()))
    }
}

/// Groups consecutive slices into volumes of `slices_per_volume` (the last
/// volume may be shorter) and scores each with stacked Dice.
pub fn volume_report(
    ids: &[String],
    preds: &[ImageGrid],
    truths: &[ImageGrid],
    slices_per_volume: usize,
) -> Result<DiceReport> {
    if slices_per_volume == 0 {
        return Err(Error::InvalidConfig("slices_per_volume must be >= 1".into()));
    }
    if ids.len() != preds.len() {
        return Err(Error::Shape("case ids and predictions differ in count".into()));
    }
    let mut cases = Vec::new();
    for start in (0..preds.len()).step_by(slices_per_volume) {
        let end = (start + slices_per_volume).min(preds.len());
        let id = if end - start == 1 {
            ids[start].clone()
        } else {
            format!("{}-{}", ids[start], ids[end - 1])
        };
        cases.push((id, dice_stacked(&preds[start..end], &truths[start..end])?));
    }
    Ok(DiceReport { cases })
}

/// Mean Dice per `(alpha, w_min)` cell; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityGrid {
    pub alphas: Vec<f64>,
    pub w_mins: Vec<f64>,
    /// `cells[i][j]` belongs to `alphas[i]` and `w_mins[j]`.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl SensitivityGrid {
    pub fn new(alphas: Vec<f64>, w_mins: Vec<f64>) -> Self {
        let cells = vec![vec![None; w_mins.len()]; alphas.len()];
        Self { alphas, w_mins, cells }
    }

    /// Values that are present, in row-major order.
    pub fn present(&self) -> Vec<f64> {
        self.cells.iter().flatten().flatten().copied().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha");
        for w in &self.w_mins {
            write!(s, ",w_min={w}").unwrap();
        }
        s.push('\n');
        for (a, row) in self.alphas.iter().zip(&self.cells) {
            write!(s, "{a}").unwrap();
            for cell in row {
                match cell {
                    Some(v) => write!(s, ",{v:.6}").unwrap(),
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).io_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> ImageGrid {
        ImageGrid::from_fn(h, w, |r, c| if f(r, c) { 1.0 } else { 0.0 })
    }

    #[test]
    fn dice_examples() {
        let a = mask(4, 4, |r, _| r < 2);
        let b = mask(4, 4, |r, _| r >= 2);
        let e = ImageGrid::zeros(4, 4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&a, &e).unwrap(), 0.0);
        let half = mask(4, 4, |r, c| r < 2 && c < 2);
        assert!((dice(&half, &a).unwrap() - 2.0 * 4.0 / 12.0).abs() < 1e-15);
        assert!(dice(&a, &ImageGrid::zeros(3, 4)).is_err());
        let left = mask(4, 4, |_, c| c < 2);
        let full = ImageGrid::filled(4, 4, 1.0);
        assert!((dice(&left, &full).unwrap() - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn threshold_is_inclusive() {
        let p = ImageGrid::filled(2, 2, 0.5);
        assert_eq!(binarize(&p).values(), &[1.0; 4]);
        assert_eq!(dice(&p, &ImageGrid::filled(2, 2, 1.0)).unwrap(), 1.0);
        assert_eq!(binarize(&ImageGrid::filled(3, 3, 0.49)).values(), &[0.0; 9]);
    }

    #[test]
    fn stacked_pools_counts() {
        let a = mask(4, 4, |r, _| r < 2);
        let e = ImageGrid::zeros(4, 4);
        // slice-wise mean would be 0.5; pooled is 2*8/(8+8) with one miss
        let d = dice_stacked(&[a.clone(), e.clone()], &[a.clone(), a.clone()]).unwrap();
        assert!((d - 2.0 * 8.0 / 24.0).abs() < 1e-15);
        assert_eq!(
            dice_stacked(std::slice::from_ref(&e), std::slice::from_ref(&e)).unwrap(),
            1.0
        );
    }

    #[test]
    fn report_csv_footer() {
        let r = DiceReport {
            cases: vec![("a".into(), 0.5), ("b".into(), 1.0)],
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("case_id,dice\na,0.500000\nb,1.000000\n"));
        assert!(csv.ends_with("mean,0.750000\nstd,0.250000\n"));
    }

    #[test]
    fn volumes_group_consecutive_slices() {
        let a = mask(2, 2, |r, _| r == 0);
        let ids: Vec<String> = (0..5).map(|i| format!("{i:04}")).collect();
        let preds = vec![a.clone(); 5];
        let r = volume_report(&ids, &preds, &preds, 2).unwrap();
        assert_eq!(r.cases.len(), 3);
        assert_eq!(r.cases[0].0, "0000-0001");
        assert_eq!(r.cases[2].0, "0004");
    }

    #[test]
    fn grid_marks_missing_cells() {
        let mut g = SensitivityGrid::new(vec![0.5, 4.0], vec![0.3, 0.5]);
        g.cells[0][1] = Some(0.812);
        g.cells[1][0] = Some(0.8);
        assert_eq!(
            g.to_csv(),
            "alpha,w_min=0.3,w_min=0.5\n0.5,NA,0.812000\n4,0.800000,NA\n"
        );
        assert_eq!(g.present(), vec![0.812, 0.8]);
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bounded(bits_a in proptest::collection::vec(any::<bool>(), 36),
                                      bits_b in proptest::collection::vec(any::<bool>(), 36)) {
            let a = mask(6, 6, |r, c| bits_a[r * 6 + c]);
            let b = mask(6, 6, |r, c| bits_b[r * 6 + c]);
            let ab = dice(&a, &b).unwrap();
            prop_assert_eq!(ab, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }
    }
}
