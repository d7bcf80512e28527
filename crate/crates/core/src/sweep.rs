//! The multi-center-of-projection camera sweep.
//!
//! An annotation polyline is offset away from the structure and resampled at a
//! fixed arclength step; each sample becomes one image column. Within a column
//! the camera starts at ground level looking horizontally at the structure,
//! climbs, and pitches over the top according to the column's rotation profile.
//!
//! Frames are right-handed with `tangent = up × normal`: the structure lies to
//! the right of the direction of travel. Closed loops are therefore walked
//! clockwise, so the camera stays outside.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::numeric::KahanAccumulator;

pub type Vec3 = Vector3<f64>;

/// Turns gentler than this are treated as a sampled curve and get interpolated
/// normals; sharper turns are corners and keep per-segment normals.
const SMOOTH_TURN_LIMIT: f64 = 15.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFrame {
    /// Starting camera center of the slit, at ground level.
    pub base: Vec3,
    pub tangent: Vec3,
    /// Horizontal unit vector from the camera toward the structure.
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPath {
    pub frames: Vec<PathFrame>,
    pub step: f64,
    pub closed: bool,
}

impl SweepPath {
    pub fn columns(&self) -> usize {
        self.frames.len()
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn unit(a: [f64; 2]) -> [f64; 2] {
    let n = norm(a);
    [a[0] / n, a[1] / n]
}

fn left_of(d: [f64; 2]) -> [f64; 2] {
    [-d[1], d[0]]
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| cross2(poly[i], poly[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

/// Drop repeated vertices and, for loops, a duplicated closing vertex. Loops
/// are reoriented clockwise.
fn normalize_polyline(polyline: &[[f64; 2]], closed: bool) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(polyline.len());
    for &p in polyline {
        if pts.last().is_none_or(|&q| norm(sub(p, q)) > 1e-12) {
            pts.push(p);
        }
    }
    if closed {
        while pts.len() > 1 && norm(sub(pts[0], *pts.last().unwrap())) <= 1e-12 {
            pts.pop();
        }
        if pts.len() >= 3 && signed_area(&pts) > 0.0 {
            pts.reverse();
        }
    }
    pts
}

/// Orient a footprint the way [`resample_path`] walks it (loops clockwise).
pub fn oriented_footprint(polyline: &[[f64; 2]], closed: bool) -> Vec<[f64; 2]> {
    normalize_polyline(polyline, closed)
}

/// Offset a polyline to its left by `distance` using miter joins. Returns the
/// offset vertices and, per vertex, whether the turn there is gentle enough to
/// interpolate normals across it.
pub(crate) fn offset_polyline(
    pts: &[[f64; 2]],
    distance: f64,
    closed: bool,
) -> (Vec<[f64; 2]>, Vec<Option<[f64; 2]>>) {
    let n = pts.len();
    let seg_count = if closed { n } else { n - 1 };
    let dirs: Vec<[f64; 2]> = (0..seg_count)
        .map(|k| unit(sub(pts[(k + 1) % n], pts[k])))
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut vertex_left = Vec::with_capacity(n);
    for i in 0..n {
        let incoming = if closed {
            Some(dirs[(i + seg_count - 1) % seg_count])
        } else if i > 0 {
            Some(dirs[i - 1])
        } else {
            None
        };
        let outgoing = if closed || i < seg_count {
            Some(dirs[i % seg_count])
        } else {
            None
        };
        match (incoming, outgoing) {
            (Some(a), Some(b)) => {
                let la = left_of(a);
                let lb = left_of(b);
                let m = [la[0] + lb[0], la[1] + lb[1]];
                let mn = norm(m);
                let (miter, scale) = if mn < 1e-9 {
                    // Full reversal: push straight out along the outgoing normal.
                    (lb, distance)
                } else {
                    let mu = [m[0] / mn, m[1] / mn];
                    let cos_half = (mu[0] * lb[0] + mu[1] * lb[1]).max(0.25);
                    (mu, distance / cos_half)
                };
                out.push([pts[i][0] + miter[0] * scale, pts[i][1] + miter[1] * scale]);
                let turn = cross2(a, b).atan2(a[0] * b[0] + a[1] * b[1]).abs();
                vertex_left.push((turn <= SMOOTH_TURN_LIMIT && mn >= 1e-9).then_some(miter));
            }
            (None, Some(b)) | (Some(b), None) => {
                let lb = left_of(b);
                out.push([pts[i][0] + lb[0] * distance, pts[i][1] + lb[1] * distance]);
                vertex_left.push(Some(lb));
            }
            (None, None) => unreachable!("polyline has at least two vertices"),
        }
    }
    (out, vertex_left)
}

fn segments_intersect(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> bool {
    let d1 = cross2(sub(b1, b0), sub(a0, b0));
    let d2 = cross2(sub(b1, b0), sub(a1, b0));
    let d3 = cross2(sub(a1, a0), sub(b0, a0));
    let d4 = cross2(sub(a1, a0), sub(b1, a0));
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0)) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

/// First pair of non-adjacent crossing segments, or an offset segment that
/// reversed direction relative to its source segment.
fn find_self_intersection(
    source: &[[f64; 2]],
    offset: &[[f64; 2]],
    closed: bool,
) -> Option<(usize, usize)> {
    let n = offset.len();
    let seg_count = if closed { n } else { n - 1 };
    let seg = |k: usize| (offset[k], offset[(k + 1) % n]);
    for k in 0..seg_count {
        let src = sub(source[(k + 1) % n], source[k]);
        let off = sub(seg(k).1, seg(k).0);
        if src[0] * off[0] + src[1] * off[1] < 0.0 {
            return Some((k, k));
        }
    }
    // Sweep over x-extents keeps this near-linear for typical footprints.
    let mut order: Vec<usize> = (0..seg_count).collect();
    let min_x = |k: usize| seg(k).0[0].min(seg(k).1[0]);
    let max_x = |k: usize| seg(k).0[0].max(seg(k).1[0]);
    order.sort_by(|&a, &b| min_x(a).total_cmp(&min_x(b)));
    for (oi, &a) in order.iter().enumerate() {
        for &b in &order[oi + 1..] {
            if min_x(b) > max_x(a) {
                break;
            }
            let adjacent = a.abs_diff(b) == 1 || (closed && a.abs_diff(b) == seg_count - 1);
            if adjacent {
                continue;
            }
            let (a0, a1) = seg(a);
            let (b0, b1) = seg(b);
            if segments_intersect(a0, a1, b0, b1) {
                return Some((a.min(b), a.max(b)));
            }
        }
    }
    None
}

/// Offset the annotation away from the structure by `offset` and place one frame
/// every `step` meters of arclength.
pub fn resample_path(
    polyline: &[[f64; 2]],
    ground_z: f64,
    offset: f64,
    step: f64,
    closed: bool,
) -> Result<SweepPath> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "offset must be non-negative, got {offset}"
        )));
    }
    if polyline.len() < 2 {
        return Err(Error::InvalidArgument("polyline needs at least two vertices".into()));
    }
    let pts = normalize_polyline(polyline, closed);
    if pts.len() < 2 || (closed && pts.len() < 3) {
        return Err(Error::DegeneratePath);
    }
    let (off, vertex_left) = offset_polyline(&pts, offset, closed);
    if offset > 0.0 {
        if let Some((first, second)) = find_self_intersection(&pts, &off, closed) {
            return Err(Error::SelfIntersectingOffset { first, second });
        }
    }

    let n = off.len();
    let seg_count = if closed { n } else { n - 1 };
    let seg_len: Vec<f64> = (0..seg_count)
        .map(|k| norm(sub(off[(k + 1) % n], off[k])))
        .collect();
    let total: f64 = seg_len.iter().sum();
    if total <= 1e-12 {
        return Err(Error::DegeneratePath);
    }
    let ratio = total / step;
    let mut count = (ratio + 1e-9).floor() as usize;
    if !closed {
        count += 1;
    }
    count = count.max(1);

    let mut frames = Vec::with_capacity(count);
    let mut seg = 0usize;
    let mut seg_start = 0.0f64;
    for k in 0..count {
        let s = k as f64 * step;
        while seg + 1 < seg_count && s >= seg_start + seg_len[seg] - 1e-12 {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let a = off[seg];
        let b = off[(seg + 1) % n];
        let len = seg_len[seg];
        let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
        let pos = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
        let seg_left = left_of(unit(sub(b, a)));
        let left_a = vertex_left[seg].unwrap_or(seg_left);
        let left_b = vertex_left[(seg + 1) % n].unwrap_or(seg_left);
        let blend = [
            left_a[0] * (1.0 - t) + left_b[0] * t,
            left_a[1] * (1.0 - t) + left_b[1] * t,
        ];
        let left = if norm(blend) > 1e-9 { unit(blend) } else { seg_left };
        let normal = Vec3::new(-left[0], -left[1], 0.0);
        let tangent = Vec3::new(-normal.y, normal.x, 0.0);
        frames.push(PathFrame {
            base: Vec3::new(pos[0], pos[1], ground_z),
            tangent,
            normal,
        });
    }
    Ok(SweepPath {
        frames,
        step,
        closed,
    })
}

/// Per-column rotation increments; each column sums to pi.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationProfile {
    rows: usize,
    turn_rows: Vec<usize>,
    /// Column-major: `increments[col * rows + row]`.
    increments: Vec<f64>,
}

impl RotationProfile {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> usize {
        self.turn_rows.len()
    }

    pub fn turn_row(&self, col: usize) -> usize {
        self.turn_rows[col]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.increments[col * self.rows..(col + 1) * self.rows]
    }

    /// Read a profile back out of an image's rotation channel.
    pub fn from_image(image: &crate::image::McopImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let mut increments = Vec::with_capacity(w * h);
        let mut turn_rows = Vec::with_capacity(w);
        for col in 0..w {
            let column: Vec<f64> = (0..h).map(|row| image.rotation(col, row)).collect();
            turn_rows.push(column.iter().position(|&v| v > 0.0).unwrap_or(h));
            increments.extend(column);
        }
        RotationProfile {
            rows: h,
            turn_rows,
            increments,
        }
    }
}

/// Build the side-to-top turn profile: no rotation below `turn_row`, then an
/// even arc of pi. Columns flagged in `openings` turn from row 0.
pub fn build_rotation_profile(
    rows: usize,
    turn_rows: &[usize],
    openings: Option<&[bool]>,
) -> Result<RotationProfile> {
    if let Some(open) = openings {
        if open.len() != turn_rows.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} opening flags for {} columns",
                open.len(),
                turn_rows.len()
            )));
        }
    }
    let mut increments = Vec::with_capacity(rows * turn_rows.len());
    let mut effective = Vec::with_capacity(turn_rows.len());
    for (col, &tr) in turn_rows.iter().enumerate() {
        if tr >= rows {
            return Err(Error::TurnRowOutOfRange {
                column: col,
                turn_row: tr,
                rows,
            });
        }
        let tr = if openings.is_some_and(|o| o[col]) { 0 } else { tr };
        let arc = (rows - tr) as f64;
        let delta = PI / arc;
        let start = increments.len();
        increments.extend((0..rows).map(|i| if i < tr { 0.0 } else { delta }));
        // Push the rounding residual into the last entry so the compensated
        // column sum lands on pi.
        let mut acc = KahanAccumulator::default();
        increments[start..].iter().for_each(|&v| acc.add(v));
        let last = start + rows - 1;
        increments[last] += PI - acc.value();
        effective.push(tr);
    }
    Ok(RotationProfile {
        rows,
        turn_rows: effective,
        increments,
    })
}

/// Camera centers and unit ray directions for every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SlitPoses {
    rows: usize,
    columns: usize,
    /// Column-major.
    centers: Vec<Vec3>,
    rays: Vec<Vec3>,
    increment_values: Vec<f64>,
}

impl SlitPoses {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn center(&self, col: usize, row: usize) -> Vec3 {
        self.centers[col * self.rows + row]
    }

    pub fn ray(&self, col: usize, row: usize) -> Vec3 {
        self.rays[col * self.rows + row]
    }

    /// Rotation increments the poses were integrated from.
    pub fn increments(&self, col: usize) -> &[f64] {
        &self.increment_values[col * self.rows..(col + 1) * self.rows]
    }
}

/// Integrate one slit. Row 0 looks along the frame normal; row `i` pitches by
/// the partial sum of increments `1..=i` and steps perpendicular to its ray.
pub fn integrate_column(frame: &PathFrame, increments: &[f64], step: f64) -> (Vec<Vec3>, Vec<Vec3>) {
    let up = Vec3::z();
    let n = frame.normal;
    let mut centers = Vec::with_capacity(increments.len());
    let mut rays = Vec::with_capacity(increments.len());
    let mut pitch = KahanAccumulator::default();
    let mut center = frame.base;
    for (i, &delta) in increments.iter().enumerate() {
        if i > 0 {
            pitch.add(delta);
            let phi = pitch.value();
            let (s, c) = phi.sin_cos();
            let movement = n * s + up * c;
            center += movement * step;
            rays.push(n * c - up * s);
        } else {
            rays.push(n);
        }
        centers.push(center);
    }
    (centers, rays)
}

pub fn integrate_slit_poses(
    path: &SweepPath,
    profile: &RotationProfile,
    rows: usize,
    step: f64,
) -> Result<SlitPoses> {
    if profile.columns() != path.columns() || profile.rows() != rows {
        return Err(Error::DimensionMismatch(format!(
            "profile is {}x{}, path has {} columns and {} rows were requested",
            profile.columns(),
            profile.rows(),
            path.columns(),
            rows
        )));
    }
    let mut centers = Vec::with_capacity(rows * path.columns());
    let mut rays = Vec::with_capacity(rows * path.columns());
    for (col, frame) in path.frames.iter().enumerate() {
        let (c, r) = integrate_column(frame, profile.column(col), step);
        centers.extend(c);
        rays.extend(r);
    }
    Ok(SlitPoses {
        rows,
        columns: path.columns(),
        centers,
        rays,
        increment_values: profile.increments.clone(),
    })
}

/// Parse annotation text: one `x y` pair per line, blank lines separate
/// polylines, `#` starts a comment line.
pub fn parse_annotation(text: &str) -> Result<Vec<Vec<[f64; 2]>>> {
    let mut loops = Vec::new();
    let mut current: Vec<[f64; 2]> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !current.is_empty() {
                loops.push(std::mem::take(&mut current));
            }
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) if x.is_finite() && y.is_finite() => current.push([x, y]),
            _ => {
                return Err(Error::config(
                    format!("annotation line {}", no + 1),
                    format!("expected `x y`, found `{line}`"),
                ))
            }
        }
    }
    if !current.is_empty() {
        loops.push(current);
    }
    Ok(loops)
}

pub fn format_annotation(loops: &[Vec<[f64; 2]>]) -> String {
    let mut out = String::from("# x y (meters), blank line between polylines\n");
    for (i, poly) in loops.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for p in poly {
            out.push_str(&format!("{} {}\n", p[0], p[1]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_square_gives_eight_axis_aligned_frames() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let path = resample_path(&square, 0.0, 0.0, 0.5, true).unwrap();
        assert_eq!(path.columns(), 8);
        for f in &path.frames {
            let axis_aligned = (f.tangent.x.abs() - 1.0).abs() < 1e-12 || (f.tangent.y.abs() - 1.0).abs() < 1e-12;
            assert!(axis_aligned, "tangent {:?}", f.tangent);
        }
    }

    #[test]
    fn straight_segment_open_has_101_frames() {
        let path = resample_path(&[[0.0, 0.0], [2.0, 0.0]], 0.0, 0.0, 0.02, false).unwrap();
        assert_eq!(path.columns(), 101);
        for pair in path.frames.windows(2) {
            assert_abs_diff_eq!((pair[1].base - pair[0].base).norm(), 0.02, epsilon = 1e-6);
        }
    }

    #[test]
    fn frames_are_orthonormal_and_horizontal() {
        let poly = [[0.0, 0.0], [3.0, 0.0], [3.0, 2.0], [1.0, 4.0]];
        let path = resample_path(&poly, 1.5, 0.4, 0.05, false).unwrap();
        for f in &path.frames {
            assert_abs_diff_eq!(f.tangent.norm(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(f.normal.norm(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(f.tangent.dot(&f.normal), 0.0, epsilon = 1e-12);
            assert_eq!(f.tangent.z, 0.0);
            assert_eq!(f.normal.z, 0.0);
            assert_eq!(f.base.z, 1.5);
        }
    }

    #[test]
    fn zero_length_polyline_is_degenerate() {
        let err = resample_path(&[[1.0, 1.0], [1.0, 1.0]], 0.0, 0.0, 0.1, false).unwrap_err();
        assert!(matches!(err, Error::DegeneratePath));
    }

    #[test]
    fn tight_inner_offset_is_reported() {
        // Walking the square counter-clockwise as an open path puts the camera inside.
        let poly = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.1]];
        let err = resample_path(&poly, 0.0, 0.8, 0.05, false).unwrap_err();
        assert!(matches!(err, Error::SelfIntersectingOffset { .. }));
    }

    #[test]
    fn profile_examples() {
        let p = build_rotation_profile(4, &[0, 2], None).unwrap();
        for v in p.column(0) {
            assert_abs_diff_eq!(*v, PI / 4.0, epsilon = 1e-15);
        }
        let c1 = p.column(1);
        assert_eq!(&c1[..2], &[0.0, 0.0]);
        assert_abs_diff_eq!(c1[2], PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c1[3], PI / 2.0, epsilon = 1e-15);
        assert!(build_rotation_profile(4, &[4], None).is_err());
    }

    #[test]
    fn openings_turn_from_row_zero() {
        let p = build_rotation_profile(8, &[5, 5, 5], Some(&[false, true, false])).unwrap();
        assert_eq!(p.turn_row(1), 0);
        assert_eq!(p.turn_row(0), 5);
    }

    fn frame_x() -> PathFrame {
        PathFrame {
            base: Vec3::zeros(),
            tangent: Vec3::new(0.0, 1.0, 0.0),
            normal: Vec3::new(1.0, 0.0, 0.0),
        }
    }

    #[test]
    fn zero_rotation_climbs_vertically() {
        let (centers, rays) = integrate_column(&frame_x(), &[0.0, 0.0, 0.0], 1.0);
        for (i, c) in centers.iter().enumerate() {
            assert_abs_diff_eq!(*c, Vec3::new(0.0, 0.0, i as f64), epsilon = 1e-15);
            assert_eq!(rays[i], Vec3::new(1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn quarter_turn_points_down_and_steps_forward() {
        let (centers, rays) = integrate_column(&frame_x(), &[0.0, PI / 2.0], 1.0);
        assert_abs_diff_eq!(rays[1], Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(centers[1], Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn annotation_round_trip() {
        let text = "# site A\n0 0\n1 0\n\n2 2\n3 3\n";
        let loops = parse_annotation(text).unwrap();
        assert_eq!(loops.len(), 2);
        assert_eq!(parse_annotation(&format_annotation(&loops)).unwrap(), loops);
        assert!(parse_annotation("1 2 3\n").is_err());
    }
}
