//! Image metrics over held-out windows and point-cloud Chamfer distances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::image::{BitMask, Channel, McopImage};
use crate::numeric::kahan_sum;
use crate::reproject::reproject;
use crate::seed::rng;
use crate::sweep::SweepPath;

pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_WINDOWS: usize = 500;
const SSIM_SIZE: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const FD_GRID: usize = 8;

/// A square crop with one or more channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricWindow {
    pub w: usize,
    pub channels: Vec<Vec<f64>>,
}

impl MetricWindow {
    pub fn new(w: usize, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() || channels.iter().any(|c| c.len() != w * w) {
            return Err(Error::DimensionMismatch(format!(
                "window channels do not match w={w}"
            )));
        }
        Ok(MetricWindow { w, channels })
    }

    pub fn constant(w: usize, channels: usize, value: f64) -> Self {
        MetricWindow {
            w,
            channels: vec![vec![value; w * w]; channels],
        }
    }
}

fn same_window_shape(a: &MetricWindow, b: &MetricWindow) -> Result<()> {
    if a.w != b.w || a.channels.len() != b.channels.len() {
        return Err(Error::DimensionMismatch(format!(
            "window {}x{}x{} vs {}x{}x{}",
            a.w,
            a.w,
            a.channels.len(),
            b.w,
            b.w,
            b.channels.len()
        )));
    }
    Ok(())
}

fn pixel_pairs<'a>(a: &'a MetricWindow, b: &'a MetricWindow) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.channels
        .iter()
        .zip(&b.channels)
        .flat_map(|(ca, cb)| ca.iter().copied().zip(cb.iter().copied()))
}

pub fn mae(a: &MetricWindow, b: &MetricWindow) -> Result<f64> {
    same_window_shape(a, b)?;
    let n = a.channels.len() * a.w * a.w;
    Ok(kahan_sum(pixel_pairs(a, b).map(|(x, y)| (x - y).abs())) / n.max(1) as f64)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(a: &MetricWindow, b: &MetricWindow) -> Result<f64> {
    same_window_shape(a, b)?;
    let n = a.channels.len() * a.w * a.w;
    let mse = kahan_sum(pixel_pairs(a, b).map(|(x, y)| (x - y).powi(2))) / n.max(1) as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_kernel(size: usize) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - centre).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize) -> f64 {
    let size = SSIM_SIZE.min(w);
    let k = gaussian_kernel(size);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let out = w - size + 1;
    let mut total = 0.0;
    for oy in 0..out {
        for ox in 0..out {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..size {
                for dx in 0..size {
                    let g = k[dy] * k[dx];
                    let i = (oy + dy) * w + ox + dx;
                    let (x, y) = (a[i], b[i]);
                    ma += g * x;
                    mb += g * y;
                    saa += g * x * x;
                    sbb += g * y * y;
                    sab += g * (x * y);
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (out * out) as f64
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), averaged
/// over valid positions and channels. Windows narrower than 11 use a kernel of
/// their own width.
pub fn ssim(a: &MetricWindow, b: &MetricWindow) -> Result<f64> {
    same_window_shape(a, b)?;
    if a.w == 0 {
        return Err(Error::DimensionMismatch("empty window".into()));
    }
    let per_channel: f64 = a
        .channels
        .iter()
        .zip(&b.channels)
        .map(|(ca, cb)| ssim_plane(ca, cb, a.w))
        .sum();
    Ok(per_channel / a.channels.len() as f64)
}

/// Box-average every channel onto an 8x8 grid and flatten.
fn downsample(window: &MetricWindow) -> Vec<f64> {
    let w = window.w;
    let span = |b: usize| {
        let lo = b * w / FD_GRID;
        let hi = ((b + 1) * w / FD_GRID).max(lo + 1).min(w);
        lo.min(w - 1)..hi
    };
    let mut out = Vec::with_capacity(window.channels.len() * FD_GRID * FD_GRID);
    for ch in &window.channels {
        for by in 0..FD_GRID {
            for bx in 0..FD_GRID {
                let (ys, xs) = (span(by), span(bx));
                let count = (ys.len() * xs.len()) as f64;
                let sum: f64 = ys
                    .flat_map(|y| xs.clone().map(move |x| ch[y * w + x]))
                    .sum();
                out.push(sum / count);
            }
        }
    }
    out
}

/// Sample mean and unbiased covariance of row vectors.
pub fn gaussian_stats(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    let n = samples.len();
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(s) - &mean;
        cov.syger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between two Gaussians:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`, with the cross term taken
/// as `tr((A S2 A)^(1/2))` for `A = S1^(1/2)`.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    s1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> f64 {
    let a = psd_sqrt(s1);
    let cross = psd_sqrt(&(&a * s2 * &a)).trace();
    let fd = (mu1 - mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    fd.max(0.0)
}

/// Frechet distance between 8x8-downsampled window populations.
pub fn patch_fd(pred: &[MetricWindow], truth: &[MetricWindow]) -> Result<f64> {
    if pred.len() < 2 || truth.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "patch FD needs at least 2 windows per side, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let a: Vec<Vec<f64>> = pred.iter().map(downsample).collect();
    let b: Vec<Vec<f64>> = truth.iter().map(downsample).collect();
    if a[0].len() != b[0].len() {
        return Err(Error::DimensionMismatch("window channel counts differ".into()));
    }
    let (m1, s1) = gaussian_stats(&a)?;
    let (m2, s2) = gaussian_stats(&b)?;
    Ok(frechet_distance(&m1, &s1, &m2, &s2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chamfer {
    /// Mean prediction-to-truth distance, cm.
    pub p: f64,
    /// Mean truth-to-prediction distance, cm.
    pub c: f64,
    pub cd: f64,
}

fn mean_nearest_cm(queries: &PointCloud, target: &PointCloud) -> Result<f64> {
    let grid = SpatialGrid::build(target.points(), SpatialGrid::auto_cell(target.points()))?;
    let dists: Vec<f64> = queries
        .points()
        .par_iter()
        .map(|q| grid.nearest(target.points(), *q).expect("target is not empty").1)
        .collect();
    Ok(kahan_sum(dists.iter().map(|d| d * 100.0)) / queries.len() as f64)
}

/// Chamfer precision, coverage and their sum, in centimetres, with exact
/// nearest neighbours.
pub fn chamfer(pred: &PointCloud, truth: &PointCloud) -> Result<Chamfer> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::EmptyCloud(format!(
            "chamfer needs both clouds non-empty ({} and {} points)",
            pred.len(),
            truth.len()
        )));
    }
    let p = mean_nearest_cm(pred, truth)?;
    let c = mean_nearest_cm(truth, pred)?;
    Ok(Chamfer { p, c, cd: p + c })
}

/// One evaluation window: the same crop from prediction and truth, with
/// texture (RGB) and geometry (normalized depth) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub x: usize,
    pub y: usize,
    pub pred_texture: MetricWindow,
    pub truth_texture: MetricWindow,
    pub pred_geometry: MetricWindow,
    pub truth_geometry: MetricWindow,
}

fn window_intersects(held_out: &BitMask, x: usize, y: usize, w: usize) -> bool {
    let width = held_out.width();
    (0..w).any(|dy| (0..w).any(|dx| held_out.get((x + dx) % width, y + dy)))
}

/// Seeded uniform `w`-windows that each overlap the held-out map. Pixels
/// unknown on either side read as zero in both windows; depth is divided by
/// the truth's largest finite depth.
pub fn eval_windows(
    pred: &McopImage,
    truth: &McopImage,
    held_out: &BitMask,
    n_windows: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<WindowPair>> {
    let (width, height) = (truth.width(), truth.height());
    if pred.width() != width || pred.height() != height || held_out.width() != width || held_out.height() != height {
        return Err(Error::DimensionMismatch("prediction, truth and held-out map differ in size".into()));
    }
    if held_out.is_empty() {
        return Err(Error::HeldOutEmpty);
    }
    if w == 0 || w > width || w > height {
        return Err(Error::DimensionMismatch(format!(
            "window {w} does not fit {width}x{height}"
        )));
    }
    let scale = truth.max_depth().map_or(1.0, |d| d as f64);
    let last_x = if truth.wraps() { width - 1 } else { width - w };
    let held: Vec<(usize, usize)> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .filter(|&(x, y)| held_out.get(x, y))
        .collect();
    let mut r = rng(seed);
    let mut origins = Vec::with_capacity(n_windows);
    while origins.len() < n_windows {
        let mut found = None;
        for _ in 0..1000 {
            let (x, y) = (r.gen_range(0..=last_x), r.gen_range(0..=height - w));
            if window_intersects(held_out, x, y, w) {
                found = Some((x, y));
                break;
            }
        }
        // Sparse maps: centre a window on a random held-out pixel instead.
        let origin = found.unwrap_or_else(|| {
            let (hx, hy) = held[r.gen_range(0..held.len())];
            (hx.saturating_sub(w / 2).min(last_x), hy.saturating_sub(w / 2).min(height - w))
        });
        origins.push(origin);
    }
    Ok(origins
        .into_iter()
        .map(|(x, y)| {
            let mut channels: [Vec<Vec<f64>>; 2] = [vec![Vec::with_capacity(w * w); 4], vec![Vec::with_capacity(w * w); 4]];
            for dy in 0..w {
                for dx in 0..w {
                    let i = truth.index((x + dx) % width, y + dy);
                    let both = pred.mask()[i] && truth.mask()[i];
                    for (side, img) in [pred, truth].into_iter().enumerate() {
                        for (c, ch) in [Channel::Red, Channel::Green, Channel::Blue].into_iter().enumerate() {
                            channels[side][c].push(if both { img.plane(ch)[i] as f64 } else { 0.0 });
                        }
                        let d = if both {
                            (img.plane(Channel::Depth)[i] as f64 / scale).clamp(0.0, 1.0)
                        } else {
                            0.0
                        };
                        channels[side][3].push(d);
                    }
                }
            }
            let [mut p, mut t] = channels;
            let pd = p.pop().expect("four channels");
            let td = t.pop().expect("four channels");
            WindowPair {
                x,
                y,
                pred_texture: MetricWindow { w, channels: p },
                truth_texture: MetricWindow { w, channels: t },
                pred_geometry: MetricWindow { w, channels: vec![pd] },
                truth_geometry: MetricWindow { w, channels: vec![td] },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_windows: usize,
    /// Window side; clipped to the image size.
    pub w: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_windows: DEFAULT_WINDOWS,
            w: 64,
            seed: 0,
        }
    }
}

/// Evaluation results. `None` marks a value that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub structure: String,
    pub mae_texture: Option<f64>,
    pub mae_geometry: Option<f64>,
    pub mae_held_out_texture: Option<f64>,
    pub mae_held_out_geometry: Option<f64>,
    pub ssim_texture: Option<f64>,
    pub ssim_geometry: Option<f64>,
    pub psnr_texture: Option<f64>,
    pub psnr_geometry: Option<f64>,
    pub patch_fd_texture: Option<f64>,
    pub patch_fd_geometry: Option<f64>,
    pub chamfer_p: Option<f64>,
    pub chamfer_c: Option<f64>,
    pub chamfer_cd: Option<f64>,
    pub windows: usize,
    pub seed: u64,
}

fn mean_of(values: impl Iterator<Item = Result<f64>>) -> Result<Option<f64>> {
    let v: Vec<f64> = values.collect::<Result<_>>()?;
    Ok((!v.is_empty()).then(|| kahan_sum(v.iter().copied()) / v.len() as f64))
}

impl MetricsReport {
    /// `key = value` lines in field order; absent values read `absent`.
    pub fn to_key_value(&self) -> String {
        let json = serde_json::to_value(self).expect("report serializes");
        let mut out = String::new();
        for key in REPORT_KEYS {
            let v = &json[key];
            let text = match v {
                serde_json::Value::Null => "absent".to_string(),
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => match n.as_f64() {
                    Some(f) if !n.is_u64() => format!("{f:.9}"),
                    _ => n.to_string(),
                },
                other => other.to_string(),
            };
            out.push_str(&format!("{key} = {text}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Mean of each value over the reports that have it.
    pub fn aggregate(name: &str, reports: &[MetricsReport]) -> MetricsReport {
        let avg = |f: fn(&MetricsReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| kahan_sum(v.iter().copied()) / v.len() as f64)
        };
        let p = avg(|r| r.chamfer_p);
        let c = avg(|r| r.chamfer_c);
        MetricsReport {
            structure: name.to_string(),
            mae_texture: avg(|r| r.mae_texture),
            mae_geometry: avg(|r| r.mae_geometry),
            mae_held_out_texture: avg(|r| r.mae_held_out_texture),
            mae_held_out_geometry: avg(|r| r.mae_held_out_geometry),
            ssim_texture: avg(|r| r.ssim_texture),
            ssim_geometry: avg(|r| r.ssim_geometry),
            psnr_texture: avg(|r| r.psnr_texture),
            psnr_geometry: avg(|r| r.psnr_geometry),
            patch_fd_texture: avg(|r| r.patch_fd_texture),
            patch_fd_geometry: avg(|r| r.patch_fd_geometry),
            chamfer_p: p,
            chamfer_c: c,
            chamfer_cd: p.zip(c).map(|(p, c)| p + c),
            windows: reports.iter().map(|r| r.windows).sum(),
            seed: reports.first().map_or(0, |r| r.seed),
        }
    }
}

const REPORT_KEYS: [&str; 16] = [
    "structure",
    "mae_texture",
    "mae_geometry",
    "mae_held_out_texture",
    "mae_held_out_geometry",
    "ssim_texture",
    "ssim_geometry",
    "psnr_texture",
    "psnr_geometry",
    "patch_fd_texture",
    "patch_fd_geometry",
    "chamfer_p",
    "chamfer_c",
    "chamfer_cd",
    "windows",
    "seed",
];

/// Mean absolute error over held-out pixels only, texture and geometry.
pub fn held_out_mae(pred: &McopImage, truth: &McopImage, held_out: &BitMask) -> (Option<f64>, Option<f64>) {
    let scale = truth.max_depth().map_or(1.0, |d| d as f64);
    let idx: Vec<usize> = (0..held_out.bits().len())
        .filter(|&i| held_out.bits()[i] && pred.mask()[i] && truth.mask()[i])
        .collect();
    if idx.is_empty() {
        return (None, None);
    }
    let tex = kahan_sum(idx.iter().flat_map(|&i| {
        [Channel::Red, Channel::Green, Channel::Blue]
            .map(|ch| (pred.plane(ch)[i] as f64 - truth.plane(ch)[i] as f64).abs())
    })) / (3 * idx.len()) as f64;
    let geo = kahan_sum(idx.iter().map(|&i| {
        let d = |img: &McopImage| (img.plane(Channel::Depth)[i] as f64 / scale).clamp(0.0, 1.0);
        (d(pred) - d(truth)).abs()
    })) / idx.len() as f64;
    (Some(tex), Some(geo))
}

/// Full protocol: window metrics, held-out MAE, and Chamfer between the
/// held-out parts of the reprojected prediction and truth.
pub fn evaluate(
    name: &str,
    pred: &McopImage,
    truth: &McopImage,
    held_out: &BitMask,
    path: &SweepPath,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let w = cfg.w.min(truth.width()).min(truth.height());
    let windows = eval_windows(pred, truth, held_out, cfg.n_windows, w, cfg.seed)?;
    let metric = |f: fn(&MetricWindow, &MetricWindow) -> Result<f64>, geometry: bool| {
        mean_of(windows.iter().map(|p| {
            if geometry {
                f(&p.pred_geometry, &p.truth_geometry)
            } else {
                f(&p.pred_texture, &p.truth_texture)
            }
        }))
    };
    let fd = |geometry: bool| -> Result<Option<f64>> {
        if windows.len() < 2 {
            return Ok(None);
        }
        let (a, b): (Vec<MetricWindow>, Vec<MetricWindow>) = windows
            .iter()
            .map(|p| {
                if geometry {
                    (p.pred_geometry.clone(), p.truth_geometry.clone())
                } else {
                    (p.pred_texture.clone(), p.truth_texture.clone())
                }
            })
            .unzip();
        patch_fd(&a, &b).map(Some)
    };
    let (ho_tex, ho_geo) = held_out_mae(pred, truth, held_out);
    let pred_cloud = reproject(&pred.restricted_to(held_out)?, path, path.step)?;
    let truth_cloud = reproject(&truth.restricted_to(held_out)?, path, path.step)?;
    let ch = if pred_cloud.is_empty() || truth_cloud.is_empty() {
        None
    } else {
        Some(chamfer(&pred_cloud, &truth_cloud)?)
    };
    Ok(MetricsReport {
        structure: name.to_string(),
        mae_texture: metric(mae, false)?,
        mae_geometry: metric(mae, true)?,
        mae_held_out_texture: ho_tex,
        mae_held_out_geometry: ho_geo,
        ssim_texture: metric(ssim, false)?,
        ssim_geometry: metric(ssim, true)?,
        psnr_texture: metric(psnr, false)?,
        psnr_geometry: metric(psnr, true)?,
        patch_fd_texture: fd(false)?,
        patch_fd_geometry: fd(true)?,
        chamfer_p: ch.map(|c| c.p),
        chamfer_c: ch.map(|c| c.c),
        chamfer_cd: ch.map(|c| c.cd),
        windows: windows.len(),
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_windows() {
        let mut a = MetricWindow::constant(16, 3, 0.0);
        for (i, v) in a.channels[1].iter_mut().enumerate() {
            *v = (i % 7) as f64 / 7.0;
        }
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_windows_closed_form() {
        let a = MetricWindow::constant(16, 3, 0.0);
        let b = MetricWindow::constant(16, 3, 0.5);
        assert_eq!(mae(&a, &b).unwrap(), 0.5);
        assert!((psnr(&a, &b).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut a = MetricWindow::constant(12, 1, 0.2);
        let mut b = MetricWindow::constant(12, 1, 0.6);
        for i in 0..144 {
            a.channels[0][i] = (i % 5) as f64 / 5.0;
            b.channels[0][i] = (i % 3) as f64 / 3.0;
        }
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn singleton_chamfer() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]], vec![[0.0; 3]]).unwrap();
        let b = PointCloud::new(vec![[0.01, 0.0, 0.0]], vec![[0.0; 3]]).unwrap();
        let c = chamfer(&a, &b).unwrap();
        assert_eq!((c.p, c.c, c.cd), (1.0, 1.0, 2.0));
        assert!(matches!(chamfer(&a, &PointCloud::empty()), Err(Error::EmptyCloud(_))));
    }

    #[test]
    fn fd_of_shifted_constants_is_dimension() {
        let a = vec![MetricWindow::constant(16, 3, 0.0); 3];
        let b = vec![MetricWindow::constant(16, 3, 1.0); 3];
        assert!((patch_fd(&a, &b).unwrap() - 192.0).abs() < 1e-9);
        assert!(patch_fd(&a, &a).unwrap() <= 1e-6);
        assert!(patch_fd(&a[..1], &b).is_err());
    }

    #[test]
    fn downsample_handles_small_windows() {
        let w = MetricWindow::constant(4, 1, 0.25);
        assert_eq!(downsample(&w), vec![0.25; 64]);
    }

    #[test]
    fn windows_hit_held_out() {
        let mut img = McopImage::new_unknown(40, 20, false);
        for r in 0..20 {
            for c in 0..40 {
                img.set_known(c, r, [0.5; 3], 1.0);
            }
        }
        let mut held = BitMask::new(40, 20, false);
        held.set(30, 15, true);
        let pairs = eval_windows(&img, &img, &held, 25, 8, 4).unwrap();
        assert_eq!(pairs.len(), 25);
        assert!(pairs.iter().all(|p| window_intersects(&held, p.x, p.y, 8)));
        assert!(eval_windows(&img, &img, &held, 0, 8, 4).unwrap().is_empty());
        let empty = BitMask::new(40, 20, false);
        assert!(matches!(eval_windows(&img, &img, &empty, 3, 8, 4), Err(Error::HeldOutEmpty)));
    }
}
