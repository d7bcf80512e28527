//! Loss terms, rotation normalization, a patch-retrieval inpainter and the
//! file boundary for external completers.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Matrix5};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{decode_mcop_unchecked, read_mcop, write_mcop};
use crate::error::{Error, Result};
use crate::image::{Channel, McopImage, Patch};
use crate::numeric::{kahan_sum, KahanAccumulator};
use crate::patchbank::{extract_window, PatchBank};
use crate::seed::{rng, sub_seed};
use crate::sweep::RotationProfile;

/// Column sums within this of pi count as normalized.
pub const ROTATION_TOLERANCE: f64 = 1e-12;

pub const INPUT_FILE: &str = "input.mcop";
pub const PRIOR_FILE: &str = "rotation_prior.mcop";
pub const COMPLETED_FILE: &str = "completed.mcop";

fn same_shape(a: &McopImage, b: &McopImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Mean per-pixel L2 distance over the five channels at pixels known in
/// `input`. Depth only counts where both sides are finite.
pub fn consistency_loss(output: &McopImage, input: &McopImage) -> Result<f64> {
    same_shape(output, input)?;
    let mut total = KahanAccumulator::default();
    let mut count = 0usize;
    for (i, _) in input.mask().iter().enumerate().filter(|(_, m)| **m) {
        let mut sq = 0.0;
        for ch in [Channel::Red, Channel::Green, Channel::Blue] {
            let d = output.plane(ch)[i] as f64 - input.plane(ch)[i] as f64;
            sq += d * d;
        }
        let (a, b) = (output.plane(Channel::Depth)[i], input.plane(Channel::Depth)[i]);
        if a.is_finite() && b.is_finite() {
            let d = a as f64 - b as f64;
            sq += d * d;
        }
        let d = output.rotation_plane()[i] - input.rotation_plane()[i];
        sq += d * d;
        total.add(sq.sqrt());
        count += 1;
    }
    Ok(if count == 0 {
        0.0
    } else {
        total.value() / count as f64
    })
}

/// Mean over columns of `(column rotation sum - pi)^2`.
pub fn regularity_loss(image: &McopImage) -> f64 {
    if image.width() == 0 {
        return 0.0;
    }
    let per_column = (0..image.width()).map(|col| (image.column_rotation_sum(col) - PI).powi(2));
    kahan_sum(per_column) / image.width() as f64
}

/// Rescale every column's rotation so it sums to pi. Columns already within
/// [`ROTATION_TOLERANCE`] are left untouched.
pub fn normalize_rotation(image: &McopImage) -> Result<McopImage> {
    let mut out = image.clone();
    let (w, h) = (image.width(), image.height());
    let rot = out.rotation_plane_mut();
    for col in 0..w {
        let sum = kahan_sum((0..h).map(|row| rot[row * w + col]));
        if (sum - PI).abs() <= ROTATION_TOLERANCE {
            continue;
        }
        if !(sum > 0.0) {
            return Err(Error::ZeroRotationColumn { column: col });
        }
        let scale = PI / sum;
        let mut largest = 0;
        for row in 0..h {
            let v = &mut rot[row * w + col];
            *v = (*v * scale).clamp(0.0, PI);
            if *v > rot[largest * w + col] {
                largest = row;
            }
        }
        let residual = PI - kahan_sum((0..h).map(|row| rot[row * w + col]));
        let v = &mut rot[largest * w + col];
        *v = (*v + residual).clamp(0.0, PI);
    }
    Ok(out)
}

fn pixel_features(patch: &Patch, j: usize) -> [f64; 5] {
    if !patch.mask()[j] {
        return [0.0; 5];
    }
    [
        patch.plane(Channel::Red)[j] as f64,
        patch.plane(Channel::Green)[j] as f64,
        patch.plane(Channel::Blue)[j] as f64,
        patch.plane(Channel::Depth)[j] as f64,
        patch.rotation_plane()[j],
    ]
}

/// Gram matrix with unknown pixels contributing nothing.
fn gram_lenient(patch: &Patch) -> Matrix5<f64> {
    let n = patch.w() * patch.w();
    let mut g = Matrix5::zeros();
    for j in 0..n {
        let f = pixel_features(patch, j);
        for a in 0..5 {
            for b in a..5 {
                g[(a, b)] += f[a] * f[b];
            }
        }
    }
    for a in 0..5 {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    if n > 0 {
        g /= n as f64;
    }
    g
}

/// Raw-pixel Gram matrix of the five channels: `G[a][b] = sum(ch_a * ch_b) / w^2`.
pub fn gram_matrix(patch: &Patch) -> Result<Matrix5<f64>> {
    if patch.completeness() < 1.0 {
        return Err(Error::IncompletePatch {
            x: patch.x,
            y: patch.y,
            completeness: patch.completeness(),
        });
    }
    Ok(gram_lenient(patch))
}

/// Frobenius distance between the Gram matrices of two windows.
pub fn pair_gram_distance(
    image: &McopImage,
    first: (usize, usize),
    second: (usize, usize),
    w: usize,
) -> Result<f64> {
    let a = gram_lenient(&extract_window(image, first.0, first.1, w)?);
    let b = gram_lenient(&extract_window(image, second.0, second.1, w)?);
    Ok((a - b).norm())
}

/// Mean Gram distance over `n_pairs` seeded pairs of adjacent windows.
pub fn texture_similarity_loss(image: &McopImage, n_pairs: usize, w: usize, seed: u64) -> Result<f64> {
    if n_pairs == 0 {
        return Ok(0.0);
    }
    let (width, height) = (image.width(), image.height());
    let fits = w > 0 && w <= width && w <= height;
    let horizontal_ok = fits && (image.wraps() || 2 * w <= width);
    let vertical_ok = fits && 2 * w <= height;
    if !horizontal_ok && !vertical_ok {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} image cannot hold two adjacent {w}-windows"
        )));
    }
    let mut r = rng(seed);
    let mut total = KahanAccumulator::default();
    for _ in 0..n_pairs {
        let horizontal = if horizontal_ok && vertical_ok {
            r.gen_bool(0.5)
        } else {
            horizontal_ok
        };
        let (first, second) = if horizontal {
            let last_x = if image.wraps() { width - 1 } else { width - 2 * w };
            let x = r.gen_range(0..=last_x);
            let y = r.gen_range(0..=height - w);
            ((x, y), ((x + w) % width, y))
        } else {
            let x = r.gen_range(0..=width - w);
            let y = r.gen_range(0..=height - 2 * w);
            ((x, y), (x, y + w))
        };
        total.add(pair_gram_distance(image, first, second, w)?);
    }
    Ok(total.value() / n_pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    /// Window side; must match the bank.
    pub w: usize,
    pub iterations: usize,
    /// Bank patches drawn per window per pass.
    pub search_candidates: usize,
    pub lambda_cons: f64,
    pub lambda_reg: f64,
    pub lambda_sim: f64,
    /// Weight of the initial estimate at unknown pixels in the window score.
    pub unknown_weight: f64,
    /// Best-scoring patches averaged into each window's fill, the assigned
    /// patch included.
    pub blend_top: usize,
    /// Candidates are drawn from bank patches whose centre pitch lies within
    /// this many radians of the window's, widened to at least
    /// `search_candidates` patches.
    pub pitch_tolerance: f64,
    /// Half-width in columns of the row neighbourhood behind the initial
    /// estimate.
    pub row_radius: usize,
    /// Share of the initial estimate in each filled pixel; the rest comes
    /// from the blended patches.
    pub estimate_mix: f64,
    pub seed: u64,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            w: 64,
            iterations: 3,
            search_candidates: 96,
            lambda_cons: 1.0,
            lambda_reg: 1.0,
            lambda_sim: 0.1,
            unknown_weight: 0.15,
            blend_top: 32,
            pitch_tolerance: 0.1,
            row_radius: 64,
            estimate_mix: 0.5,
            seed: 0,
        }
    }
}

impl InpaintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w == 0 {
            return Err(Error::config("inpaint.w", "must be positive"));
        }
        if self.search_candidates == 0 {
            return Err(Error::config("inpaint.search_candidates", "must be positive"));
        }
        if !(self.pitch_tolerance >= 0.0 && self.pitch_tolerance.is_finite()) {
            return Err(Error::config(
                "inpaint.pitch_tolerance",
                format!("must be finite and >= 0, got {}", self.pitch_tolerance),
            ));
        }
        if !(0.0..=1.0).contains(&self.estimate_mix) {
            return Err(Error::config(
                "inpaint.estimate_mix",
                format!("{} outside [0, 1]", self.estimate_mix),
            ));
        }
        if self.blend_top == 0 {
            return Err(Error::config("inpaint.blend_top", "must be positive"));
        }
        for (key, v) in [
            ("inpaint.lambda_cons", self.lambda_cons),
            ("inpaint.lambda_reg", self.lambda_reg),
            ("inpaint.lambda_sim", self.lambda_sim),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.unknown_weight > 0.0 && self.unknown_weight <= 1.0) {
            return Err(Error::config(
                "inpaint.unknown_weight",
                format!("must lie in (0, 1], got {}", self.unknown_weight),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inpainted {
    pub image: McopImage,
    /// Total window score after the initial assignment and after each pass.
    pub score_history: Vec<f64>,
}

fn check_profile(image: &McopImage, profile: &RotationProfile) -> Result<()> {
    if profile.columns() != image.width() || profile.rows() != image.height() {
        return Err(Error::DimensionMismatch(format!(
            "profile is {}x{}, image is {}x{}",
            profile.columns(),
            profile.rows(),
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

fn fill_rotation_from_profile(image: &mut McopImage, profile: &RotationProfile) {
    let (w, h) = (image.width(), image.height());
    let mask = image.mask().to_vec();
    let rot = image.rotation_plane_mut();
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !mask[i] {
                rot[i] = profile.column(col)[row];
            }
        }
    }
}

/// Write `rgb` and `depth` into an unknown pixel and mark it known.
fn fill_pixel(image: &mut McopImage, i: usize, rgb: [f64; 3], depth: f64, floor: f64) {
    let depth = if depth.is_finite() { depth.max(floor) } else { floor };
    let (col, row) = (i % image.width(), i / image.width());
    image.set_known(
        col,
        row,
        rgb.map(|v| (v as f32).clamp(0.0, 1.0)),
        (depth as f32).max(f32::MIN_POSITIVE),
    );
}

/// Fill every unknown pixel with the per-channel mean of the known pixels.
pub fn constant_fill(input: &McopImage, profile: &RotationProfile) -> Result<McopImage> {
    check_profile(input, profile)?;
    let mut sums = [0.0f64; 4];
    let known = input.known_count();
    for (i, _) in input.mask().iter().enumerate().filter(|(_, m)| **m) {
        for (c, ch) in CHANNELS.iter().enumerate() {
            sums[c] += input.plane(*ch)[i] as f64;
        }
    }
    let mean = if known == 0 {
        [0.5, 0.5, 0.5, 1.0]
    } else {
        sums.map(|s| s / known as f64)
    };
    let mut out = input.clone();
    fill_rotation_from_profile(&mut out, profile);
    for i in 0..out.mask().len() {
        if !input.mask()[i] {
            fill_pixel(&mut out, i, [mean[0], mean[1], mean[2]], mean[3], 1e-3);
        }
    }
    normalize_rotation(&out)
}

const CHANNELS: [Channel; 4] = [Channel::Red, Channel::Green, Channel::Blue, Channel::Depth];

/// Column-wise diffusion estimate: each unknown pixel interpolates linearly
/// between the nearest known pixels above and below it. Columns without any
/// known pixel copy the nearest column that has one.
fn diffusion_estimate(input: &McopImage, fallback: [f64; 4]) -> Vec<[f64; 4]> {
    let (w, h) = (input.width(), input.height());
    let value = |i: usize| -> [f64; 4] { CHANNELS.map(|ch| input.plane(ch)[i] as f64) };
    let mut est = vec![fallback; w * h];
    let mut filled = vec![false; w];
    for col in 0..w {
        let known: Vec<usize> = (0..h).filter(|&row| input.is_known(col, row)).collect();
        if known.is_empty() {
            continue;
        }
        filled[col] = true;
        let mut next = 0;
        for row in 0..h {
            while next < known.len() && known[next] < row {
                next += 1;
            }
            let below = if next > 0 { Some(known[next - 1]) } else { None };
            let above = known.get(next).copied();
            est[row * w + col] = match (below, above) {
                (_, Some(a)) if a == row => value(row * w + col),
                (Some(b), Some(a)) => {
                    let t = (row - b) as f64 / (a - b) as f64;
                    let (vb, va) = (value(b * w + col), value(a * w + col));
                    std::array::from_fn(|c| vb[c] + t * (va[c] - vb[c]))
                }
                (Some(b), None) => value(b * w + col),
                (None, Some(a)) => value(a * w + col),
                (None, None) => unreachable!("column has a known pixel"),
            };
        }
    }
    if filled.iter().any(|f| *f) {
        for col in 0..w {
            if filled[col] {
                continue;
            }
            let dist = |c: usize| {
                let d = c.abs_diff(col);
                if input.wraps() {
                    d.min(w - d)
                } else {
                    d
                }
            };
            let source = (0..w)
                .filter(|&c| filled[c])
                .min_by_key(|&c| (dist(c), c))
                .expect("some column is filled");
            for row in 0..h {
                est[row * w + col] = est[row * w + source];
            }
        }
    }
    est
}

/// Row-wise estimate: each unknown pixel takes the mean of the known pixels
/// of its own row within `radius` columns, then of the whole row. Rows
/// without known pixels keep `fallback`.
fn row_estimate(input: &McopImage, radius: usize, fallback: Vec<[f64; 4]>) -> Vec<[f64; 4]> {
    let (w, h) = (input.width(), input.height());
    let mut est = fallback;
    for row in 0..h {
        // Prefix sums over the row laid out twice, so wrapped spans are contiguous.
        let mut sums = vec![[0.0f64; 4]; 2 * w + 1];
        let mut counts = vec![0usize; 2 * w + 1];
        for k in 0..2 * w {
            let i = row * w + k % w;
            let known = input.mask()[i];
            counts[k + 1] = counts[k] + known as usize;
            sums[k + 1] = sums[k];
            if known {
                for (c, ch) in CHANNELS.iter().enumerate() {
                    sums[k + 1][c] += input.plane(*ch)[i] as f64;
                }
            }
        }
        if counts[w] == 0 {
            continue;
        }
        let span = |a: usize, b: usize| -> Option<[f64; 4]> {
            let n = counts[b] - counts[a];
            (n > 0).then(|| std::array::from_fn(|c| (sums[b][c] - sums[a][c]) / n as f64))
        };
        let whole = span(0, w).expect("row has a known pixel");
        for col in 0..w {
            let i = row * w + col;
            if input.mask()[i] {
                continue;
            }
            let local = if input.wraps() && 2 * radius + 1 < w {
                let start = (col + w - radius) % w;
                span(start, start + 2 * radius + 1)
            } else {
                span(col.saturating_sub(radius), (col + radius + 1).min(w))
            };
            est[i] = local.unwrap_or(whole);
        }
    }
    est
}

/// A bank patch prepared for scoring: RGB plus depth divided by the scene
/// depth scale, and the patch's RGB Gram matrix.
struct Candidate {
    px: Vec<[f32; 4]>,
    known: Vec<bool>,
    gram: Matrix3<f64>,
}

impl Candidate {
    fn new(patch: &Patch, depth_scale: f64) -> Self {
        let n = patch.w() * patch.w();
        let mut gram = Matrix3::zeros();
        let px: Vec<[f32; 4]> = (0..n)
            .map(|j| {
                if !patch.mask()[j] {
                    return [0.0; 4];
                }
                let rgb = [
                    patch.plane(Channel::Red)[j],
                    patch.plane(Channel::Green)[j],
                    patch.plane(Channel::Blue)[j],
                ];
                for a in 0..3 {
                    for b in 0..3 {
                        gram[(a, b)] += rgb[a] as f64 * rgb[b] as f64;
                    }
                }
                let d = (patch.plane(Channel::Depth)[j] as f64 / depth_scale) as f32;
                [rgb[0], rgb[1], rgb[2], d]
            })
            .collect();
        if n > 0 {
            gram /= n as f64;
        }
        Candidate {
            px,
            known: patch.mask().to_vec(),
            gram,
        }
    }
}

struct Window {
    pixels: Vec<usize>,
    target: Vec<[f32; 4]>,
    weight: Vec<f32>,
}

impl Window {
    /// Weighted masked L2 against the target with the candidate's depth
    /// shifted by its best offset. Returns the score and that offset.
    fn score(&self, cand: &Candidate) -> (f64, f64) {
        let (mut sa, mut se, mut see, mut src) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for j in 0..self.pixels.len() {
            if !cand.known[j] {
                continue;
            }
            let a = self.weight[j] as f64;
            let (p, t) = (cand.px[j], self.target[j]);
            for c in 0..3 {
                let d = (p[c] - t[c]) as f64;
                src += a * d * d;
            }
            let e = (t[3] - p[3]) as f64;
            sa += a;
            se += a * e;
            see += a * e * e;
        }
        if sa <= 0.0 {
            return (f64::INFINITY, 0.0);
        }
        let depth_term = (see - se * se / sa).max(0.0);
        ((src + depth_term) / sa, se / sa)
    }
}

/// Range of `sorted` (ascending pitches) within `tolerance` of `pitch`,
/// grown toward the nearer side until it holds at least `min_len` entries.
fn candidate_pool(sorted: &[f64], pitch: f64, tolerance: f64, min_len: usize) -> std::ops::Range<usize> {
    let mut lo = sorted.partition_point(|&p| p < pitch - tolerance);
    let mut hi = sorted.partition_point(|&p| p <= pitch + tolerance);
    let want = min_len.min(sorted.len());
    while hi - lo < want {
        let grow_low = match (lo.checked_sub(1), sorted.get(hi)) {
            (Some(l), Some(&h)) => pitch - sorted[l] <= h - pitch,
            (Some(_), None) => true,
            _ => false,
        };
        if grow_low {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    lo..hi
}

fn axis_positions(len: usize, w: usize, stride: usize, wrap: bool) -> Vec<usize> {
    if wrap {
        return (0..len).step_by(stride).collect();
    }
    let mut v: Vec<usize> = (0..=len - w).step_by(stride).collect();
    if v.last() != Some(&(len - w)) {
        v.push(len - w);
    }
    v
}

/// Fill the unknown pixels of `input` from bank patches.
///
/// Windows on a half-overlapping grid each hold one bank patch. A pass draws
/// fresh candidates for every window and swaps a window's patch only when the
/// window score plus the Gram penalty against neighbouring windows does not
/// increase, so the total score never rises. Assigned patches are feathered
/// into the unknown pixels; known pixels are never touched.
pub fn baseline_inpaint(
    input: &McopImage,
    bank: &PatchBank,
    profile: &RotationProfile,
    cfg: &InpaintConfig,
) -> Result<Inpainted> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(Error::EmptyBank("inpainting needs at least one patch".into()));
    }
    check_profile(input, profile)?;
    let (width, height) = (input.width(), input.height());
    let w = bank.w();
    if cfg.w != w {
        return Err(Error::config(
            "inpaint.w",
            format!("{} does not match the bank's patch size {w}", cfg.w),
        ));
    }
    if w > width || w > height {
        return Err(Error::DimensionMismatch(format!(
            "patch size {w} exceeds the {width}x{height} image"
        )));
    }

    let mut out = input.clone();
    fill_rotation_from_profile(&mut out, profile);
    if input.known_count() == input.mask().len() {
        return Ok(Inpainted {
            image: normalize_rotation(&out)?,
            score_history: Vec::new(),
        });
    }

    let bank_max_depth = bank
        .patches()
        .iter()
        .flat_map(|p| p.plane(Channel::Depth).iter().copied().filter(|d| d.is_finite()))
        .fold(0.0f32, f32::max);
    let depth_scale = input
        .max_depth()
        .map(|d| d as f64)
        .filter(|d| *d > 0.0)
        .unwrap_or(if bank_max_depth > 0.0 { bank_max_depth as f64 } else { 1.0 });

    let mut mean = [0.0f64; 4];
    let mut mean_n = 0usize;
    for p in bank.patches() {
        for j in (0..w * w).filter(|&j| p.mask()[j]) {
            for (c, ch) in CHANNELS.iter().enumerate() {
                mean[c] += p.plane(*ch)[j] as f64;
            }
            mean_n += 1;
        }
    }
    let mean = if mean_n > 0 {
        mean.map(|s| s / mean_n as f64)
    } else {
        [0.5, 0.5, 0.5, depth_scale]
    };
    let estimate = row_estimate(input, cfg.row_radius, diffusion_estimate(input, mean));

    let candidates: Vec<Candidate> = bank
        .patches()
        .par_iter()
        .map(|p| Candidate::new(p, depth_scale))
        .collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| bank.patches()[a].pitch.total_cmp(&bank.patches()[b].pitch).then(a.cmp(&b)));
    let sorted_pitch: Vec<f64> = order.iter().map(|&k| bank.patches()[k].pitch).collect();

    let stride = (w / 2).max(1);
    let xs = axis_positions(width, w, stride, input.wraps());
    let ys = axis_positions(height, w, stride, false);
    let beta = cfg.unknown_weight as f32;
    let mut windows = Vec::new();
    let mut pools = Vec::new();
    let mut grid_slot = vec![None; xs.len() * ys.len()];
    for (yi, &y) in ys.iter().enumerate() {
        for (xi, &x) in xs.iter().enumerate() {
            let pixels: Vec<usize> = (0..w * w)
                .map(|j| (y + j / w) * width + (x + j % w) % width)
                .collect();
            if pixels.iter().all(|&i| input.mask()[i]) {
                continue;
            }
            let target = pixels
                .iter()
                .map(|&i| {
                    let e = estimate[i];
                    [e[0] as f32, e[1] as f32, e[2] as f32, (e[3] / depth_scale) as f32]
                })
                .collect();
            let weight = pixels
                .iter()
                .map(|&i| if input.mask()[i] { 1.0 } else { beta })
                .collect();
            let centre_col = (x + w / 2) % width;
            let pitch: f64 = profile.column(centre_col)[1..=(y + w / 2)].iter().sum();
            pools.push(candidate_pool(&sorted_pitch, pitch, cfg.pitch_tolerance, cfg.search_candidates));
            grid_slot[yi * xs.len() + xi] = Some(windows.len());
            windows.push(Window {
                pixels,
                target,
                weight,
            });
        }
    }

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for yi in 0..ys.len() {
        for xi in 0..xs.len() {
            let Some(a) = grid_slot[yi * xs.len() + xi] else {
                continue;
            };
            let right = if xi + 1 < xs.len() {
                Some(xi + 1)
            } else if input.wraps() && xs.len() > 2 {
                Some(0)
            } else {
                None
            };
            if let Some(b) = right.and_then(|rx| grid_slot[yi * xs.len() + rx]) {
                pairs.push((a.min(b), a.max(b)));
            }
            if let Some(b) = (yi + 1 < ys.len())
                .then(|| grid_slot[(yi + 1) * xs.len() + xi])
                .flatten()
            {
                pairs.push((a.min(b), a.max(b)));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut neighbours = vec![Vec::new(); windows.len()];
    for &(a, b) in &pairs {
        neighbours[a].push(b);
        neighbours[b].push(a);
    }

    let lambda = cfg.lambda_sim;
    let mut r = rng(sub_seed(cfg.seed, "inpaint"));
    let mut assigned: Vec<Option<usize>> = vec![None; windows.len()];
    let mut scores = vec![(0.0f64, 0.0f64); windows.len()];
    let gram_penalty = |k: usize, c: usize, assigned: &[Option<usize>]| -> f64 {
        neighbours[k]
            .iter()
            .filter_map(|&n| assigned[n])
            .map(|pn| (candidates[c].gram - candidates[pn].gram).norm())
            .sum::<f64>()
    };
    let total = |assigned: &[Option<usize>], scores: &[(f64, f64)]| -> f64 {
        let data: f64 = scores.iter().map(|s| s.0).sum();
        let sim: f64 = pairs
            .iter()
            .map(|&(a, b)| match (assigned[a], assigned[b]) {
                (Some(pa), Some(pb)) => (candidates[pa].gram - candidates[pb].gram).norm(),
                _ => 0.0,
            })
            .sum();
        data + lambda * sim
    };

    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut last_draws = Vec::new();
    for _ in 0..=cfg.iterations {
        let draws: Vec<Vec<usize>> = pools
            .iter()
            .map(|pool| {
                (0..cfg.search_candidates)
                    .map(|_| order[r.gen_range(pool.clone())])
                    .collect()
            })
            .collect();
        let drawn_scores: Vec<Vec<(f64, f64)>> = windows
            .par_iter()
            .zip(&draws)
            .map(|(win, cs)| cs.iter().map(|&c| win.score(&candidates[c])).collect())
            .collect();
        let margin = history.last().map_or(0.0, |t: &f64| 1e-10 * t.abs());
        for k in 0..windows.len() {
            let local = |c: usize, s: f64, assigned: &[Option<usize>]| s + lambda * gram_penalty(k, c, assigned);
            let (best_c, best_s, best_local) = draws[k]
                .iter()
                .zip(&drawn_scores[k])
                .map(|(&c, &s)| (c, s, local(c, s.0, &assigned)))
                .fold(None, |acc: Option<(usize, (f64, f64), f64)>, cur| match acc {
                    Some(a) if a.2 <= cur.2 => Some(a),
                    _ => Some(cur),
                })
                .expect("at least one candidate");
            match assigned[k] {
                None => {
                    assigned[k] = Some(best_c);
                    scores[k] = best_s;
                }
                Some(cur) => {
                    let current = local(cur, scores[k].0, &assigned);
                    if best_local < current - margin {
                        assigned[k] = Some(best_c);
                        scores[k] = best_s;
                    }
                }
            }
        }
        history.push(total(&assigned, &scores));
        last_draws = draws.into_iter().zip(drawn_scores).collect::<Vec<_>>();
    }

    let ramp = (w / 4).max(1) as f64;
    let n = width * height;
    let mut acc = vec![[0.0f64; 4]; n];
    let mut acc_w = vec![0.0f64; n];
    for (k, win) in windows.iter().enumerate() {
        let c = assigned[k].expect("every window is assigned");
        let (draws, drawn) = &last_draws[k];
        let mut ranked: Vec<(usize, (f64, f64))> = draws
            .iter()
            .copied()
            .zip(drawn.iter().copied())
            .filter(|(d, s)| *d != c && s.0.is_finite())
            .collect();
        ranked.sort_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)));
        ranked.dedup_by_key(|e| e.0);
        let chosen = std::iter::once((c, scores[k])).chain(ranked.into_iter().take(cfg.blend_top - 1));
        for (c, (_, offset)) in chosen {
            let cand = &candidates[c];
            for (j, &i) in win.pixels.iter().enumerate() {
                if input.mask()[i] || !cand.known[j] {
                    continue;
                }
                let (dx, dy) = (j % w, j / w);
                let wx = ((dx.min(w - 1 - dx) + 1) as f64 / ramp).min(1.0);
                let wy = ((dy.min(w - 1 - dy) + 1) as f64 / ramp).min(1.0);
                let omega = wx * wy;
                let p = cand.px[j];
                for ch in 0..3 {
                    acc[i][ch] += omega * p[ch] as f64;
                }
                acc[i][3] += omega * (p[3] as f64 + offset) * depth_scale;
                acc_w[i] += omega;
            }
        }
    }
    let floor = 1e-3 * depth_scale;
    for i in 0..n {
        if input.mask()[i] {
            continue;
        }
        let v: [f64; 4] = if acc_w[i] > 0.0 {
            let e = estimate[i];
            std::array::from_fn(|c| (1.0 - cfg.estimate_mix) * acc[i][c] / acc_w[i] + cfg.estimate_mix * e[c])
        } else {
            estimate[i]
        };
        let depth = if v[3].is_finite() && v[3] > 0.0 { v[3] } else { estimate[i][3] };
        fill_pixel(&mut out, i, [v[0], v[1], v[2]], depth, floor);
    }
    Ok(Inpainted {
        image: normalize_rotation(&out)?,
        score_history: history,
    })
}

/// Write `input.mcop` and `rotation_prior.mcop` for an external completer.
pub fn export_for_external(input: &McopImage, profile: &RotationProfile, dir: impl AsRef<Path>) -> Result<()> {
    check_profile(input, profile)?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_mcop(input, dir.join(INPUT_FILE))?;
    let mut prior = McopImage::new_unknown(input.width(), input.height(), input.wraps());
    for col in 0..input.width() {
        for (row, &v) in profile.column(col).iter().enumerate() {
            prior.set_rotation(col, row, v);
        }
    }
    write_mcop(&prior, dir.join(PRIOR_FILE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Imported {
    pub image: McopImage,
    /// Values that had to be clamped or replaced.
    pub warnings: usize,
}

/// Bring an invalid externally produced image back within the channel
/// invariants, counting every value touched.
fn sanitize(image: &mut McopImage, prior: &McopImage) -> usize {
    let mut warnings = 0;
    let n = image.mask().len();
    for i in 0..n {
        let depth = image.plane(Channel::Depth)[i];
        let known = depth.is_finite() && depth > 0.0;
        if !known {
            if depth != f32::INFINITY {
                warnings += 1;
            }
            image.set_unknown_at(i);
        } else {
            image.mask_mut()[i] = true;
            for ch in [Channel::Red, Channel::Green, Channel::Blue] {
                let v = &mut image.plane_mut(ch)[i];
                if v.is_nan() {
                    *v = 0.0;
                    warnings += 1;
                } else if !(0.0..=1.0).contains(v) {
                    *v = v.clamp(0.0, 1.0);
                    warnings += 1;
                }
            }
        }
        let rot = image.rotation_plane()[i];
        if !(0.0..=PI).contains(&rot) {
            image.rotation_plane_mut()[i] = prior.rotation_plane()[i];
            warnings += 1;
        }
    }
    warnings
}

/// Read back an exchange directory. Without `completed.mcop` the input comes
/// back with its unknown pixels carrying the prior rotation. Known input
/// pixels always win and rotation is renormalized.
pub fn import_from_external(dir: impl AsRef<Path>) -> Result<Imported> {
    let dir = dir.as_ref();
    let input = read_mcop(dir.join(INPUT_FILE))?;
    let prior = read_mcop(dir.join(PRIOR_FILE))?;
    same_shape(&input, &prior)?;
    let completed_path = dir.join(COMPLETED_FILE);
    let (mut out, warnings) = if completed_path.exists() {
        let bytes = std::fs::read(&completed_path).map_err(|e| Error::io(&completed_path, e))?;
        let mut img = decode_mcop_unchecked(&bytes).map_err(|source| Error::Container {
            path: completed_path.clone(),
            source,
        })?;
        same_shape(&img, &input)?;
        img.set_wrap(input.wraps());
        let warnings = sanitize(&mut img, &prior);
        (img, warnings)
    } else {
        let mut img = input.clone();
        let mask = input.mask().to_vec();
        for (i, known) in mask.into_iter().enumerate() {
            if !known {
                img.rotation_plane_mut()[i] = prior.rotation_plane()[i];
            }
        }
        (img, 0)
    };
    for i in 0..input.mask().len() {
        if input.mask()[i] {
            for ch in CHANNELS {
                out.plane_mut(ch)[i] = input.plane(ch)[i];
            }
            out.mask_mut()[i] = true;
            out.rotation_plane_mut()[i] = input.rotation_plane()[i];
        }
    }
    let image = normalize_rotation(&out)?;
    image.validate()?;
    Ok(Imported { image, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::build_rotation_profile;

    fn image_with_rotation(cols: &[&[f64]]) -> McopImage {
        let h = cols[0].len();
        let mut img = McopImage::new_unknown(cols.len(), h, false);
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                img.set_rotation(c, r, *v);
            }
        }
        img
    }

    #[test]
    fn regularity_examples() {
        let half = PI / 2.0;
        assert_eq!(regularity_loss(&image_with_rotation(&[&[half, half]])), 0.0);
        let zero = image_with_rotation(&[&[0.0, 0.0]]);
        assert!((regularity_loss(&zero) - PI * PI).abs() < 1e-12);
        let mixed = image_with_rotation(&[&[half, half], &[0.0, 0.0]]);
        assert!((regularity_loss(&mixed) - PI * PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let half = PI / 2.0;
        let img = image_with_rotation(&[&[half, half]]);
        assert_eq!(normalize_rotation(&img).unwrap(), img);
        let ones = normalize_rotation(&image_with_rotation(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(ones.rotation_plane(), &[half, half]);
        assert!(matches!(
            normalize_rotation(&image_with_rotation(&[&[0.0, 0.0]])),
            Err(Error::ZeroRotationColumn { column: 0 })
        ));
    }

    #[test]
    fn consistency_examples() {
        let mut a = McopImage::new_unknown(2, 1, false);
        a.set_known(0, 0, [0.25, 0.25, 0.25], 1.0);
        a.set_known(1, 0, [0.0, 0.0, 0.0], 2.0);
        assert_eq!(consistency_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.set_known(0, 0, [0.75, 0.75, 0.75], 1.0);
        b.set_known(1, 0, [0.5, 0.5, 0.5], 2.0);
        assert!((consistency_loss(&b, &a).unwrap() - 0.75f64.sqrt()).abs() < 1e-12);
        let empty = McopImage::new_unknown(2, 1, false);
        assert_eq!(consistency_loss(&b, &empty).unwrap(), 0.0);
    }

    #[test]
    fn gram_examples() {
        let zero = Patch::from_planes(0, 0, 0, 2, [vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]], vec![0.0; 4])
            .unwrap();
        assert_eq!(gram_matrix(&zero).unwrap(), Matrix5::zeros());
        let ones = Patch::from_planes(0, 0, 0, 2, [vec![1.0; 4], vec![1.0; 4], vec![1.0; 4], vec![1.0; 4]], vec![1.0; 4])
            .unwrap();
        assert_eq!(gram_matrix(&ones).unwrap(), Matrix5::repeat(1.0));
        let holey = Patch::mask_only(2, vec![true, false, true, true]).unwrap();
        assert!(matches!(gram_matrix(&holey), Err(Error::IncompletePatch { .. })));
    }

    #[test]
    fn fully_known_input_is_returned_unchanged() {
        let mut img = McopImage::new_unknown(4, 4, false);
        let profile = build_rotation_profile(4, &[0; 4], None).unwrap();
        for col in 0..4 {
            for row in 0..4 {
                img.set_known(col, row, [0.3, 0.4, 0.5], 1.0);
                img.set_rotation(col, row, profile.column(col)[row]);
            }
        }
        let bank = PatchBank::new(2, vec![extract_window(&img, 0, 0, 2).unwrap()], 0.95).unwrap();
        let cfg = InpaintConfig {
            w: 2,
            ..InpaintConfig::default()
        };
        assert_eq!(baseline_inpaint(&img, &bank, &profile, &cfg).unwrap().image, img);
    }

    #[test]
    fn diffusion_interpolates_within_a_column() {
        let mut img = McopImage::new_unknown(2, 5, false);
        img.set_known(0, 0, [0.0; 3], 1.0);
        img.set_known(0, 4, [1.0; 3], 3.0);
        let est = diffusion_estimate(&img, [0.5; 4]);
        assert_eq!(est[2 * 2], [0.5, 0.5, 0.5, 2.0]);
        assert_eq!(est[2 * 2 + 1], est[2 * 2]);
    }
}
