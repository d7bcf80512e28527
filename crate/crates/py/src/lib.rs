use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mcop::config::{parse_toml, to_toml, BankConfig, ErosionConfig, PipelineConfig, SweepConfig};
use mcop::erosion::erode_to_fraction;
use mcop::inpaint::{baseline_inpaint, constant_fill as constant_fill_core, InpaintConfig};
use mcop::metrics::{chamfer as chamfer_core, evaluate as evaluate_core, EvalConfig};
use mcop::patchbank::{build_bank, default_patch_size};
use mcop::pipeline::{mask_bank_for, project_cloud, reports_json, run_pipeline as run_pipeline_core, sweep_setup};
use mcop::seed::sub_seed;
use mcop::sweep::RotationProfile;
use mcop::synth::{synth_wall as synth_wall_core, StructureSpec};
use mcop::{BitMask, ErrorKind};

fn py_err(e: mcop::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Io => PyOSError::new_err(e.to_string()),
        ErrorKind::Config | ErrorKind::Input => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn sweep_from(toml: &str) -> PyResult<SweepConfig> {
    parse_toml(toml).map_err(py_err)
}

#[pyclass(name = "PointCloud", module = "mcop_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyPointCloud {
    inner: mcop::PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (points, colors=None))]
    fn new(points: Vec<[f64; 3]>, colors: Option<Vec<[f32; 3]>>) -> PyResult<Self> {
        let colors = colors.unwrap_or_else(|| vec![[0.5; 3]; points.len()]);
        let inner = mcop::PointCloud::new(points, colors).map_err(py_err)?;
        Ok(PyPointCloud { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let inner = mcop::ply::read_ply(path).map_err(py_err)?;
        Ok(PyPointCloud { inner })
    }

    #[pyo3(signature = (path, binary=true))]
    fn write(&self, path: PathBuf, binary: bool) -> PyResult<()> {
        mcop::ply::write_ply(&self.inner, path, binary).map_err(py_err)
    }

    fn points(&self) -> Vec<[f64; 3]> {
        self.inner.points().to_vec()
    }

    fn colors(&self) -> Vec<[f32; 3]> {
        self.inner.colors().to_vec()
    }

    /// `(min, max)` corners, or None for an empty cloud.
    fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        self.inner.bounds()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points)", self.inner.len())
    }
}

#[pyclass(name = "McopImage", module = "mcop_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyMcopImage {
    inner: mcop::McopImage,
}

impl PyMcopImage {
    fn check(&self, col: usize, row: usize) -> PyResult<()> {
        if col >= self.inner.width() || row >= self.inner.height() {
            return Err(PyIndexError::new_err(format!(
                "pixel ({col}, {row}) outside {}x{} image",
                self.inner.width(),
                self.inner.height()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PyMcopImage {
    #[new]
    #[pyo3(signature = (width, height, wrap=false))]
    fn new(width: usize, height: usize, wrap: bool) -> Self {
        PyMcopImage {
            inner: mcop::McopImage::new_unknown(width, height, wrap),
        }
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let inner = mcop::container::read_mcop(path).map_err(py_err)?;
        Ok(PyMcopImage { inner })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        mcop::container::write_mcop(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn wraps(&self) -> bool {
        self.inner.wraps()
    }

    fn known_count(&self) -> usize {
        self.inner.known_count()
    }

    fn completeness(&self) -> f64 {
        self.inner.completeness()
    }

    fn is_known(&self, col: usize, row: usize) -> PyResult<bool> {
        self.check(col, row)?;
        Ok(self.inner.is_known(col, row))
    }

    /// `(r, g, b, depth, rotation)` of one pixel; colour and depth are NaN
    /// when unknown.
    fn pixel(&self, col: usize, row: usize) -> PyResult<(f32, f32, f32, f32, f64)> {
        self.check(col, row)?;
        let [r, g, b] = self.inner.rgb(col, row);
        Ok((r, g, b, self.inner.depth(col, row), self.inner.rotation(col, row)))
    }

    fn set_known(&mut self, col: usize, row: usize, rgb: [f32; 3], depth: f32) -> PyResult<()> {
        self.check(col, row)?;
        if !depth.is_finite() {
            return Err(PyValueError::new_err("depth of a known pixel must be finite"));
        }
        self.inner.set_known(col, row, rgb, depth);
        Ok(())
    }

    fn set_unknown(&mut self, col: usize, row: usize) -> PyResult<()> {
        self.check(col, row)?;
        self.inner.set_unknown(col, row);
        Ok(())
    }

    fn set_rotation(&mut self, col: usize, row: usize, value: f64) -> PyResult<()> {
        self.check(col, row)?;
        self.inner.set_rotation(col, row, value);
        Ok(())
    }

    fn column_rotation_sum(&self, col: usize) -> PyResult<f64> {
        self.check(col, 0)?;
        Ok(self.inner.column_rotation_sum(col))
    }

    /// Row-major mask, row 0 first.
    fn mask(&self) -> Vec<bool> {
        self.inner.mask().to_vec()
    }

    fn depth_plane(&self) -> Vec<f32> {
        self.inner.plane(mcop::Channel::Depth).to_vec()
    }

    fn rotation_plane(&self) -> Vec<f64> {
        self.inner.rotation_plane().to_vec()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "McopImage({}x{}, {:.1}% known)",
            self.inner.width(),
            self.inner.height(),
            100.0 * self.inner.completeness()
        )
    }
}

#[pyclass(name = "PatchBank", module = "mcop_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyPatchBank {
    inner: mcop::patchbank::PatchBank,
}

#[pymethods]
impl PyPatchBank {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let inner = mcop::patchbank::read_bank(path).map_err(py_err)?;
        Ok(PyPatchBank { inner })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        mcop::patchbank::write_bank(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn w(&self) -> usize {
        self.inner.w()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PatchBank({} patches of {}x{})", self.inner.len(), self.inner.w(), self.inner.w())
    }
}

/// A synthetic wall with the annotation and sweep settings to scan it.
#[pyclass(name = "Wall", module = "mcop_py", get_all)]
pub struct PyWall {
    cloud: PyPointCloud,
    annotation: Vec<[f64; 2]>,
    sweep_toml: String,
}

#[pyfunction]
#[pyo3(signature = (name, footprint, height, closed=false, spacing=0.01, seed=0))]
fn synth_wall(
    name: String,
    footprint: Vec<[f64; 2]>,
    height: f64,
    closed: bool,
    spacing: f64,
    seed: u64,
) -> PyResult<PyWall> {
    let spec = StructureSpec {
        name,
        footprint,
        closed,
        height,
        spacing,
        ..StructureSpec::default()
    };
    let wall = synth_wall_core(&spec, sub_seed(seed, &format!("synth/{}", spec.name))).map_err(py_err)?;
    Ok(PyWall {
        cloud: PyPointCloud { inner: wall.cloud },
        annotation: wall.annotation,
        sweep_toml: to_toml(&wall.sweep).map_err(py_err)?,
    })
}

#[pyfunction]
fn project(py: Python<'_>, cloud: &PyPointCloud, annotation: Vec<[f64; 2]>, sweep_toml: &str) -> PyResult<PyMcopImage> {
    let sweep = sweep_from(sweep_toml)?;
    let cloud = &cloud.inner;
    let inner = py
        .detach(|| {
            let (path, profile) = sweep_setup(&annotation, &sweep)?;
            project_cloud(cloud, &path, &profile, &sweep)
        })
        .map_err(py_err)?;
    Ok(PyMcopImage { inner })
}

/// Hide about `target_fraction` of the known pixels. Returns the eroded image
/// and the row-major held-out map.
#[pyfunction]
#[pyo3(signature = (image, target_fraction=0.5, seed=0))]
fn erode(image: &PyMcopImage, target_fraction: f64, seed: u64) -> PyResult<(PyMcopImage, Vec<bool>)> {
    let cfg = ErosionConfig {
        target_fraction,
        ..ErosionConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    let masks = mask_bank_for(&image.inner, &cfg, sub_seed(seed, "mask-bank")).map_err(py_err)?;
    let erosion = erode_to_fraction(
        &image.inner,
        &masks,
        cfg.target_fraction,
        cfg.completeness_range,
        cfg.max_masks,
        sub_seed(seed, "erode"),
    )
    .map_err(py_err)?;
    Ok((PyMcopImage { inner: erosion.image }, erosion.held_out.bits().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (images, w=None, min_completeness=None, seed=0))]
fn patch_bank(
    images: Vec<PyRef<'_, PyMcopImage>>,
    w: Option<usize>,
    min_completeness: Option<f64>,
    seed: u64,
) -> PyResult<PyPatchBank> {
    let defaults = BankConfig::default();
    let images: Vec<mcop::McopImage> = images.iter().map(|i| i.inner.clone()).collect();
    let min_height = images.iter().map(mcop::McopImage::height).min().unwrap_or(0);
    let inner = build_bank(
        &images,
        w.unwrap_or_else(|| default_patch_size(min_height)),
        min_completeness.unwrap_or(defaults.min_completeness),
        defaults.stride,
        defaults.cap,
        sub_seed(seed, "patch-bank"),
    )
    .map_err(py_err)?;
    Ok(PyPatchBank { inner })
}

/// Fill unknown pixels from the bank. Returns the completed image and the
/// score after each pass.
#[pyfunction]
#[pyo3(signature = (image, bank, iterations=3, seed=0))]
fn inpaint(
    py: Python<'_>,
    image: &PyMcopImage,
    bank: &PyPatchBank,
    iterations: usize,
    seed: u64,
) -> PyResult<(PyMcopImage, Vec<f64>)> {
    let cfg = InpaintConfig {
        w: bank.inner.w(),
        iterations,
        seed: sub_seed(seed, "inpaint"),
        ..InpaintConfig::default()
    };
    let (image, bank) = (&image.inner, &bank.inner);
    let done = py
        .detach(|| baseline_inpaint(image, bank, &RotationProfile::from_image(image), &cfg))
        .map_err(py_err)?;
    Ok((PyMcopImage { inner: done.image }, done.score_history))
}

#[pyfunction]
fn constant_fill(image: &PyMcopImage) -> PyResult<PyMcopImage> {
    let inner = constant_fill_core(&image.inner, &RotationProfile::from_image(&image.inner)).map_err(py_err)?;
    Ok(PyMcopImage { inner })
}

#[pyfunction]
fn reproject(image: &PyMcopImage, annotation: Vec<[f64; 2]>, sweep_toml: &str) -> PyResult<PyPointCloud> {
    let sweep = sweep_from(sweep_toml)?;
    let (path, _) = sweep_setup(&annotation, &sweep).map_err(py_err)?;
    let inner = mcop::reproject::reproject(&image.inner, &path, sweep.step).map_err(py_err)?;
    Ok(PyPointCloud { inner })
}

/// `(p, c, cd)` in centimetres.
#[pyfunction]
fn chamfer(pred: &PyPointCloud, truth: &PyPointCloud) -> PyResult<(f64, f64, f64)> {
    let c = chamfer_core(&pred.inner, &truth.inner).map_err(py_err)?;
    Ok((c.p, c.c, c.cd))
}

/// Metrics as a JSON string. `held_out` defaults to every pixel known in
/// the truth.
#[pyfunction]
#[pyo3(signature = (pred, truth, annotation, sweep_toml, held_out=None, n_windows=None, w=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    pred: &PyMcopImage,
    truth: &PyMcopImage,
    annotation: Vec<[f64; 2]>,
    sweep_toml: &str,
    held_out: Option<Vec<bool>>,
    n_windows: Option<usize>,
    w: Option<usize>,
    seed: u64,
) -> PyResult<String> {
    let sweep = sweep_from(sweep_toml)?;
    let held_out = match held_out {
        Some(bits) => BitMask::from_bits(truth.inner.width(), truth.inner.height(), bits).map_err(py_err)?,
        None => truth.inner.mask_plane(),
    };
    let defaults = EvalConfig::default();
    let cfg = EvalConfig {
        n_windows: n_windows.unwrap_or(defaults.n_windows),
        w: w.unwrap_or(defaults.w),
        seed: sub_seed(seed, "eval"),
    };
    let (pred, truth) = (&pred.inner, &truth.inner);
    let report = py
        .detach(|| {
            let (path, _) = sweep_setup(&annotation, &sweep)?;
            evaluate_core("image", pred, truth, &held_out, &path, &cfg)
        })
        .map_err(py_err)?;
    Ok(report.to_json())
}

/// Run the whole pipeline. Returns the metrics JSON; files are written only
/// when `out` is given.
#[pyfunction]
#[pyo3(signature = (config_toml=None, seed=0, out=None))]
fn run_pipeline(py: Python<'_>, config_toml: Option<&str>, seed: u64, out: Option<PathBuf>) -> PyResult<String> {
    let cfg: PipelineConfig = match config_toml {
        Some(text) => parse_toml(text).map_err(py_err)?,
        None => PipelineConfig::default(),
    };
    let run = py.detach(|| run_pipeline_core(&cfg, seed, out.as_deref())).map_err(py_err)?;
    let reports: Vec<_> = run.structures.iter().map(|s| s.report.clone()).collect();
    Ok(reports_json(&reports, &run.summary))
}

#[pymodule]
fn mcop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyMcopImage>()?;
    m.add_class::<PyPatchBank>()?;
    m.add_class::<PyWall>()?;
    m.add_function(wrap_pyfunction!(synth_wall, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(erode, m)?)?;
    m.add_function(wrap_pyfunction!(patch_bank, m)?)?;
    m.add_function(wrap_pyfunction!(inpaint, m)?)?;
    m.add_function(wrap_pyfunction!(constant_fill, m)?)?;
    m.add_function(wrap_pyfunction!(reproject, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
