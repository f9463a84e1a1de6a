//! Python bindings. Images cross the boundary as lists of rows and boxes as
//! `(top, left, bottom, right)` or `(top, left, bottom, right, category)`
//! tuples, all inclusive pixel indices.

use std::path::PathBuf;

use polarmil::config::{self, RunConfig};
use polarmil::eval;
use polarmil::image::{BoundingBox, ImageGrid};
use polarmil::losses;
use polarmil::model::SegNet;
use polarmil::polar::{self, Interpolation, PolarConfig};
use polarmil::smoothmax::{self, SmoothMaxConfig};
use polarmil::synthdata;
use polarmil::train::{self, TrainData};
use polarmil::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::InvalidConfig(_)
        | Error::Precondition(_)
        | Error::Shape(_)
        | Error::ConfigParse { .. }
        | Error::BoxParse { .. }
        | Error::PgmParse { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn to_grid(rows: Rows) -> PyResult<ImageGrid> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image rows differ in length"));
    }
    ImageGrid::new(h, w, rows.into_iter().flatten().collect()).map_err(py_err)
}

fn to_rows(g: &ImageGrid) -> Rows {
    g.values().chunks(g.width()).map(<[f64]>::to_vec).collect()
}

#[derive(FromPyObject)]
enum BoxArg {
    Plain((usize, usize, usize, usize)),
    Labelled((usize, usize, usize, usize, usize)),
}

fn to_box(b: BoxArg) -> PyResult<BoundingBox> {
    let (t, l, bo, r, c) = match b {
        BoxArg::Plain((t, l, bo, r)) => (t, l, bo, r, 1),
        BoxArg::Labelled(v) => v,
    };
    BoundingBox::new(t, l, bo, r, c).map_err(py_err)
}

fn box_tuple(b: &BoundingBox) -> (usize, usize, usize, usize, usize) {
    (b.top, b.left, b.bottom, b.right, b.category)
}

fn polar_config(n_r: usize, n_theta: usize, radius: f64, interpolation: &str) -> PyResult<PolarConfig> {
    let interpolation = match interpolation {
        "bilinear" => Interpolation::Bilinear,
        "nearest" => Interpolation::Nearest,
        other => return Err(PyValueError::new_err(format!("unknown interpolation {other:?}"))),
    };
    Ok(PolarConfig {
        n_r,
        n_theta,
        radius,
        interpolation,
    })
}

/// Polar resampling about `origin`; row `k` of the result is radius index `k`.
#[pyfunction]
#[pyo3(signature = (image, origin, n_r=30, n_theta=90, radius=30.0, interpolation="bilinear"))]
fn polar_transform(
    image: Rows,
    origin: (usize, usize),
    n_r: usize,
    n_theta: usize,
    radius: f64,
    interpolation: &str,
) -> PyResult<Rows> {
    let cfg = polar_config(n_r, n_theta, radius, interpolation)?;
    let p = polar::polar_transform(&to_grid(image)?, origin, &cfg).map_err(py_err)?;
    Ok(to_rows(&p.to_grid()))
}

/// Number of leading samples of each ray that stay inside the box.
#[pyfunction]
#[pyo3(signature = (bbox, origin, height, width, n_r=30, n_theta=90, radius=30.0))]
fn loi_valid_lengths(
    bbox: BoxArg,
    origin: (usize, usize),
    height: usize,
    width: usize,
    n_r: usize,
    n_theta: usize,
    radius: f64,
) -> PyResult<Vec<usize>> {
    let cfg = polar_config(n_r, n_theta, radius, "bilinear")?;
    polar::loi_valid_lengths(&to_box(bbox)?, origin, &cfg, height, width).map_err(py_err)
}

#[pyfunction]
fn radial_weights(n_r: usize, w_min: f64) -> PyResult<Vec<f64>> {
    let cfg = SmoothMaxConfig {
        n_r,
        w_min,
        ..Default::default()
    };
    cfg.validate().map_err(py_err)?;
    Ok(smoothmax::radial_weights(&cfg).map_err(py_err)?.0)
}

/// `(value, gradient)` of the weighted alpha-softmax.
#[pyfunction]
fn weighted_softmax(bag: Vec<f64>, weights: Vec<f64>, alpha: f64) -> PyResult<(f64, Vec<f64>)> {
    smoothmax::weighted_softmax(&bag, &weights, alpha).map_err(py_err)
}

/// `(value, gradient)` of the weighted alpha-quasimax.
#[pyfunction]
fn weighted_quasimax(bag: Vec<f64>, weights: Vec<f64>, alpha: f64) -> PyResult<(f64, Vec<f64>)> {
    smoothmax::weighted_quasimax(&bag, &weights, alpha).map_err(py_err)
}

#[pyfunction]
fn binarize(map: Rows) -> PyResult<Rows> {
    Ok(to_rows(&eval::binarize(&to_grid(map)?)))
}

#[pyfunction]
fn dice(pred: Rows, truth: Rows) -> PyResult<f64> {
    eval::dice(&to_grid(pred)?, &to_grid(truth)?).map_err(py_err)
}

/// Run configuration addressed by dotted keys such as `loss.alpha`.
#[pyclass(name = "RunConfig")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self {
            inner: RunConfig::default(),
        };
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                // keyword names cannot contain dots, so `loss__alpha` stands for `loss.alpha`
                let key = k.extract::<String>()?.replace("__", ".");
                cfg.set(&key, &v.str()?.to_string())?;
            }
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(PyValueError::new_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key {key:?}")))
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        config::KEYS.to_vec()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={})", self.inner.train.seed)
    }
}

/// Loss terms and the gradient with respect to each probability map.
#[pyfunction]
#[pyo3(signature = (maps, boxes, config=None))]
fn combined_loss<'py>(
    py: Python<'py>,
    maps: Vec<Rows>,
    boxes: Vec<BoxArg>,
    config: Option<&PyRunConfig>,
) -> PyResult<(Bound<'py, PyDict>, Vec<Rows>)> {
    let maps = maps.into_iter().map(to_grid).collect::<PyResult<Vec<_>>>()?;
    let boxes = boxes.into_iter().map(to_box).collect::<PyResult<Vec<_>>>()?;
    let cfg = config.map_or_else(|| RunConfig::default().loss, |c| c.inner.loss);
    let (b, grads) = losses::combined_loss_with_grad(&maps, &boxes, &cfg).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("unary", b.unary.clone())?;
    d.set_item("pairwise", b.pairwise.clone())?;
    d.set_item("polar_total", b.polar_total)?;
    d.set_item("baseline_total", b.baseline_total)?;
    d.set_item("combined", b.combined)?;
    Ok((d, grads.iter().map(to_rows).collect()))
}

/// Synthetic items as dicts with `id`, `split`, `image`, `mask`,
/// `tight_box` and `loose_box`.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn generate<'py>(py: Python<'py>, config: Option<&PyRunConfig>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.map_or_else(|| RunConfig::default().data, |c| c.inner.data.clone());
    let ds = synthdata::generate(&cfg).map_err(py_err)?;
    let mut out = Vec::with_capacity(ds.items.len());
    for (i, item) in ds.items.iter().enumerate() {
        let d = PyDict::new(py);
        d.set_item("id", synthdata::item_id(i))?;
        d.set_item("split", if ds.val.contains(&i) { "val" } else { "train" })?;
        d.set_item("image", to_rows(&item.image))?;
        d.set_item("mask", to_rows(&item.mask))?;
        d.set_item("tight_box", box_tuple(&item.tight))?;
        d.set_item("loose_box", box_tuple(&item.loose))?;
        out.push(d);
    }
    Ok(out)
}

/// Segmentation network with its weights.
#[pyclass(name = "Model")]
struct PyModel {
    inner: SegNet,
}

#[pymethods]
impl PyModel {
    /// Freshly initialised network for `config`.
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&PyRunConfig>) -> PyResult<Self> {
        let cfg = config.map_or_else(|| RunConfig::default().model, |c| c.inner.model.clone());
        Ok(Self {
            inner: SegNet::new(cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, config=None))]
    fn load(path: PathBuf, config: Option<&PyRunConfig>) -> PyResult<Self> {
        let cfg = config.map_or_else(|| RunConfig::default().model, |c| c.inner.model.clone());
        Ok(Self {
            inner: SegNet::load(cfg, &path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Foreground probability map for each image.
    fn predict(&self, images: Vec<Rows>) -> PyResult<Vec<Rows>> {
        let grids = images.into_iter().map(to_grid).collect::<PyResult<Vec<_>>>()?;
        let refs: Vec<&ImageGrid> = grids.iter().collect();
        let maps = train::predict(&self.inner, &refs).map_err(py_err)?;
        Ok(maps.iter().map(to_rows).collect())
    }
}

/// Trains on the synthetic data described by `config`. Returns the model and
/// one dict per epoch with `epoch`, `loss`, `val_dice_mean` and
/// `val_dice_std`.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn train_synthetic<'py>(py: Python<'py>, config: Option<&PyRunConfig>) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let cfg = config.map_or_else(RunConfig::default, |c| c.inner.clone());
    cfg.validate().map_err(py_err)?;
    let ds = synthdata::generate(&cfg.data).map_err(py_err)?;
    let (tr, va, ids) = (ds.train_set(true), ds.val_set(true), ds.val_ids());
    let outcome = train::train(
        TrainData {
            train: &tr,
            val: &va,
            val_ids: &ids,
        },
        &cfg.model,
        &cfg.adam,
        &cfg.loss,
        &cfg.train,
        |_| {},
    )
    .map_err(py_err)?;
    let mut metrics = Vec::new();
    for m in &outcome.metrics {
        let d = PyDict::new(py);
        d.set_item("epoch", m.epoch)?;
        d.set_item("loss", m.loss.combined)?;
        d.set_item("val_dice_mean", m.val_dice_mean)?;
        d.set_item("val_dice_std", m.val_dice_std)?;
        metrics.push(d);
    }
    Ok((PyModel { inner: outcome.model }, metrics))
}

#[pymodule]
fn polarmil_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(polar_transform, m)?)?;
    m.add_function(wrap_pyfunction!(loi_valid_lengths, m)?)?;
    m.add_function(wrap_pyfunction!(radial_weights, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_quasimax, m)?)?;
    m.add_function(wrap_pyfunction!(binarize, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
