//! Procedural test structures: textured stone walls along open or closed
//! footprints, and vertically unbalanced erosion masks.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::config::{SweepConfig, TurnRange};
use crate::error::{Error, Result};
use crate::image::Patch;
use crate::patchbank::PatchBank;
use crate::seed::{hash01, rng, sub_seed};
use crate::sweep::{offset_polyline, oriented_footprint};

/// Which wall surfaces to sample. The near face is the one the sweep camera
/// looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaceSet {
    pub near: bool,
    pub far: bool,
    pub top: bool,
}

impl Default for FaceSet {
    fn default() -> Self {
        FaceSet {
            near: true,
            far: true,
            top: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Near,
    Far,
    Top,
}

/// A doorway cut through both faces. `at` is the centre as a fraction of the
/// footprint length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Door {
    pub at: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureSpec {
    pub name: String,
    /// Wall centre line.
    pub footprint: Vec<[f64; 2]>,
    pub closed: bool,
    pub height: f64,
    /// Optional `(fraction of footprint length, height)` knots, linearly
    /// interpolated. Overrides `height` when present.
    pub height_profile: Vec<[f64; 2]>,
    pub thickness: f64,
    pub spacing: f64,
    pub faces: FaceSet,
    pub doors: Vec<Door>,
    pub course_height: f64,
    pub stone_length: f64,
    /// Horizontal gap between the near face and the camera path.
    pub standoff: f64,
    pub step: f64,
    /// Explicit sweep; when absent one is derived from the geometry.
    pub sweep: Option<SweepConfig>,
}

impl Default for StructureSpec {
    fn default() -> Self {
        StructureSpec {
            name: "wall".into(),
            footprint: vec![[0.0, 0.0], [2.0, 0.0]],
            closed: false,
            height: 1.0,
            height_profile: Vec::new(),
            thickness: 0.5,
            spacing: 0.01,
            faces: FaceSet::default(),
            doors: Vec::new(),
            course_height: 0.2,
            stone_length: 0.4,
            standoff: 0.25,
            step: 0.02,
            sweep: None,
        }
    }
}

impl StructureSpec {
    pub fn straight(name: &str, length: f64, height: f64) -> Self {
        StructureSpec {
            name: name.into(),
            footprint: vec![[0.0, 0.0], [length, 0.0]],
            height,
            ..StructureSpec::default()
        }
    }

    /// Two legs meeting at a right angle, walked so the camera sees the
    /// outside of the corner.
    pub fn l_shape(name: &str, leg_a: f64, leg_b: f64, height: f64) -> Self {
        StructureSpec {
            name: name.into(),
            footprint: vec![[leg_b, leg_a], [leg_b, 0.0], [0.0, 0.0]],
            height,
            ..StructureSpec::default()
        }
    }

    /// Rectangular enclosure, viewed from outside.
    pub fn enclosure(name: &str, width: f64, depth: f64, height: f64) -> Self {
        StructureSpec {
            name: name.into(),
            footprint: vec![[0.0, 0.0], [width, 0.0], [width, depth], [0.0, depth]],
            closed: true,
            height,
            ..StructureSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min_vertices = if self.closed { 3 } else { 2 };
        let pts = oriented_footprint(&self.footprint, self.closed);
        if pts.len() < min_vertices {
            return Err(Error::DegeneratePath);
        }
        for (key, v) in [
            ("thickness", self.thickness),
            ("spacing", self.spacing),
            ("course_height", self.course_height),
            ("stone_length", self.stone_length),
            ("step", self.step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if !(self.standoff >= 0.0 && self.standoff.is_finite()) {
            return Err(Error::config("standoff", format!("must be >= 0, got {}", self.standoff)));
        }
        if self.height_profile.is_empty() && !(self.height > 0.0 && self.height.is_finite()) {
            return Err(Error::config("height", format!("must be positive, got {}", self.height)));
        }
        if self.height_profile.iter().any(|k| !(k[1] > 0.0) || !(0.0..=1.0).contains(&k[0])) {
            return Err(Error::config("height_profile", "knots need u in [0, 1] and height > 0"));
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        Ok(())
    }

    /// Wall height at fraction `u` of the footprint length.
    pub fn height_at(&self, u: f64) -> f64 {
        let knots = &self.height_profile;
        if knots.is_empty() {
            return self.height;
        }
        let u = u.clamp(0.0, 1.0);
        if u <= knots[0][0] {
            return knots[0][1];
        }
        for pair in knots.windows(2) {
            let ([u0, h0], [u1, h1]) = (pair[0], pair[1]);
            if u <= u1 {
                let t = if u1 > u0 { (u - u0) / (u1 - u0) } else { 1.0 };
                return h0 + t * (h1 - h0);
            }
        }
        knots[knots.len() - 1][1]
    }

    pub fn max_height(&self) -> f64 {
        if self.height_profile.is_empty() {
            self.height
        } else {
            self.height_profile.iter().map(|k| k[1]).fold(0.0, f64::max)
        }
    }

    /// Camera path distance from the centre line.
    pub fn camera_offset(&self) -> f64 {
        self.thickness / 2.0 + self.standoff
    }

    fn in_door(&self, u: f64, z: f64, length: f64) -> bool {
        self.doors
            .iter()
            .any(|d| (u - d.at).abs() * length <= d.width / 2.0 && z < d.height)
    }
}

/// Sweep that climbs to just below the wall top and then arcs over it with the
/// arc centred on the wall's centre line.
pub fn recommended_sweep(spec: &StructureSpec, columns_hint: Option<usize>) -> SweepConfig {
    if let Some(s) = &spec.sweep {
        return SweepConfig {
            closed: spec.closed,
            ..s.clone()
        };
    }
    const BELOW_TOP: f64 = 0.06;
    let step = spec.step;
    let offset = spec.camera_offset();
    let arc_rows = ((PI * offset / step).round() as usize).max(2);
    let turn_for = |h: f64| (((h - BELOW_TOP) / step).round().max(1.0)) as usize;
    let turn_row = turn_for(spec.max_height());
    let rows = turn_row + arc_rows;
    let mut cfg = SweepConfig {
        closed: spec.closed,
        offset,
        step,
        rows,
        turn_row,
        ..SweepConfig::default()
    };
    if let Some(columns) = columns_hint.filter(|c| *c > 0) {
        let per_column: Vec<usize> = (0..columns)
            .map(|c| turn_for(spec.height_at(c as f64 / columns as f64)).min(rows - 1))
            .collect();
        let mut start = 0;
        for c in 1..=columns {
            if c == columns || per_column[c] != per_column[start] {
                if per_column[start] != turn_row {
                    cfg.turn_ranges.push(TurnRange {
                        start,
                        end: c,
                        turn_row: per_column[start],
                    });
                }
                start = c;
            }
        }
        let mut open_start = None;
        for c in 0..=columns {
            let u = c as f64 / columns as f64;
            let open = c < columns && spec.doors.iter().any(|d| (u - d.at).abs() < 1e-9 + d.width / 2.0 / footprint_length(spec));
            match (open, open_start) {
                (true, None) => open_start = Some(c),
                (false, Some(s)) => {
                    cfg.openings.push([s, c]);
                    open_start = None;
                }
                _ => {}
            }
        }
    }
    cfg
}

fn polyline_length(pts: &[[f64; 2]], closed: bool) -> f64 {
    let n = pts.len();
    let segs = if closed { n } else { n - 1 };
    (0..segs)
        .map(|k| {
            let (a, b) = (pts[k], pts[(k + 1) % n]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .sum()
}

fn footprint_length(spec: &StructureSpec) -> f64 {
    polyline_length(&oriented_footprint(&spec.footprint, spec.closed), spec.closed)
}

/// Points every `spacing` along a polyline: `(position, arclength, unit direction)`.
fn walk(pts: &[[f64; 2]], closed: bool, spacing: f64) -> Vec<([f64; 2], f64, [f64; 2])> {
    let n = pts.len();
    let segs = if closed { n } else { n - 1 };
    let total = polyline_length(pts, closed);
    let mut count = (total / spacing + 1e-9).floor() as usize;
    if !closed {
        count += 1;
    }
    let mut out = Vec::with_capacity(count);
    let (mut seg, mut seg_start) = (0usize, 0.0f64);
    let seg_len = |k: usize| {
        let (a, b) = (pts[k], pts[(k + 1) % n]);
        (b[0] - a[0]).hypot(b[1] - a[1])
    };
    for i in 0..count {
        let s = i as f64 * spacing;
        while seg + 1 < segs && s >= seg_start + seg_len(seg) - 1e-12 {
            seg_start += seg_len(seg);
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[(seg + 1) % n]);
        let len = seg_len(seg);
        let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
        let dir = if len > 0.0 {
            [(b[0] - a[0]) / len, (b[1] - a[1]) / len]
        } else {
            [1.0, 0.0]
        };
        out.push(([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t], s, dir));
    }
    out
}

/// Banded stone texture: courses of `course_height`, stones of jittered
/// length with per-stone colour, mortar joints, and fine speckle.
pub fn stone_color(spec: &StructureSpec, seed: u64, s: f64, z: f64) -> [f32; 3] {
    let course = (z / spec.course_height).floor();
    let zc = z - course * spec.course_height;
    let ci = course as i64;
    let shift = hash01(seed, ci, -1) * spec.stone_length;
    let along = s + shift;
    let stone = (along / spec.stone_length).floor();
    let xs = along - stone * spec.stone_length;
    let mortar = 0.02;
    let joint = zc < mortar || xs < mortar;
    let speckle = (hash01(seed ^ 0x5eed, (s / 0.01).round() as i64, (z / 0.01).round() as i64) - 0.5) * 0.06;
    if joint {
        let v = 0.36 + speckle;
        return [v as f32, (v - 0.02) as f32, (v - 0.04) as f32].map(|c| c.clamp(0.0, 1.0));
    }
    let si = stone as i64;
    let tone = (hash01(seed, ci, si) - 0.5) * 0.24;
    let warm = (hash01(seed ^ 0xc0105, ci, si) - 0.5) * 0.1;
    let base = [0.72, 0.62, 0.48];
    [
        base[0] + tone + warm + speckle,
        base[1] + tone + speckle,
        base[2] + tone - warm + speckle,
    ]
    .map(|c| (c as f32).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWall {
    pub cloud: PointCloud,
    /// Surface each point was sampled from.
    pub faces: Vec<Face>,
    /// The footprint as an annotation polyline.
    pub annotation: Vec<[f64; 2]>,
    pub closed: bool,
    pub sweep: SweepConfig,
}

impl SynthWall {
    /// The points lying on the selected faces.
    pub fn subset(&self, keep: FaceSet) -> PointCloud {
        let mut out = PointCloud::empty();
        for ((p, c), f) in self.cloud.points().iter().zip(self.cloud.colors()).zip(&self.faces) {
            let take = match f {
                Face::Near => keep.near,
                Face::Far => keep.far,
                Face::Top => keep.top,
            };
            if take {
                out.push(*p, *c);
            }
        }
        out
    }
}

/// Sample the wall surface on a regular grid of `spacing`.
pub fn synth_wall(spec: &StructureSpec, seed: u64) -> Result<SynthWall> {
    spec.validate()?;
    let pts = oriented_footprint(&spec.footprint, spec.closed);
    let length = polyline_length(&pts, spec.closed);
    if length <= 1e-12 {
        return Err(Error::DegeneratePath);
    }
    let tex_seed = sub_seed(seed, &format!("texture/{}", spec.name));
    let half = spec.thickness / 2.0;
    let mut cloud = PointCloud::empty();
    let mut faces = Vec::new();

    let sample_face = |side: f64, face: Face, cloud: &mut PointCloud, faces: &mut Vec<Face>| {
        let (line, _) = offset_polyline(&pts, side * half, spec.closed);
        let line_len = polyline_length(&line, spec.closed);
        for (p, s, _) in walk(&line, spec.closed, spec.spacing) {
            let u = s / line_len;
            let h = spec.height_at(u);
            let rows = (h / spec.spacing + 1e-9).floor() as usize;
            for k in 0..=rows {
                let z = k as f64 * spec.spacing;
                if spec.in_door(u, z, length) {
                    continue;
                }
                cloud.push([p[0], p[1], z], stone_color(spec, tex_seed, u * length, z));
                faces.push(face);
            }
        }
    };
    if spec.faces.near {
        sample_face(1.0, Face::Near, &mut cloud, &mut faces);
    }
    if spec.faces.far {
        sample_face(-1.0, Face::Far, &mut cloud, &mut faces);
    }
    if spec.faces.top {
        let across = (spec.thickness / spec.spacing + 1e-9).floor() as usize;
        for (p, s, dir) in walk(&pts, spec.closed, spec.spacing) {
            let u = s / length;
            let h = spec.height_at(u);
            let left = [-dir[1], dir[0]];
            for k in 0..=across {
                let v = -half + k as f64 * spec.spacing;
                let q = [p[0] + left[0] * v, p[1] + left[1] * v, h];
                // Cap stones: the across-wall coordinate plays the role of height.
                cloud.push(q, stone_color(spec, tex_seed ^ 0x70f, s, v + half + 1.0));
                faces.push(Face::Top);
            }
        }
    }
    let path_columns = {
        let (cam, _) = offset_polyline(&pts, spec.camera_offset(), spec.closed);
        let total = polyline_length(&cam, spec.closed);
        let n = (total / spec.step + 1e-9).floor() as usize;
        if spec.closed {
            n
        } else {
            n + 1
        }
    };
    Ok(SynthWall {
        cloud,
        faces,
        annotation: spec.footprint.clone(),
        closed: spec.closed,
        sweep: recommended_sweep(spec, Some(path_columns)),
    })
}

/// A known-pixel pattern; `true` marks a pixel that survives.
#[derive(Debug, Clone, PartialEq)]
pub struct ErosionMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
    pub completeness: f64,
}

/// Rows of band `b` out of `bands`. Band 0 is at the ground.
fn band_rows(height: usize, bands: usize, b: usize) -> std::ops::Range<usize> {
    b * height / bands..(b + 1) * height / bands
}

impl ErosionMask {
    /// Known fraction per horizontal band, ground first. Empty bands read 1.
    pub fn band_fractions(&self, bands: usize) -> Vec<f64> {
        (0..bands)
            .map(|b| {
                let rows = band_rows(self.height, bands, b);
                let total = rows.len() * self.width;
                if total == 0 {
                    return 1.0;
                }
                let known = rows
                    .flat_map(|r| (0..self.width).map(move |c| r * self.width + c))
                    .filter(|&i| self.bits[i])
                    .count();
                known as f64 / total as f64
            })
            .collect()
    }

    pub fn into_patch(self) -> Result<Patch> {
        if self.width != self.height {
            return Err(Error::DimensionMismatch(format!(
                "mask patch must be square, got {}x{}",
                self.width, self.height
            )));
        }
        Patch::mask_only(self.width, self.bits)
    }
}

const MASK_BANDS: usize = 10;

/// Union of seeded random ellipses, denser toward the top rows, followed by a
/// repair pass that makes the per-band known fraction non-increasing from the
/// ground band upward with the top band strictly below the ground band.
pub fn synth_erosion_mask(width: usize, height: usize, severity: f64, seed: u64) -> Result<ErosionMask> {
    if !(severity > 0.0 && severity < 1.0) {
        return Err(Error::InvalidArgument(format!("severity {severity} outside (0, 1)")));
    }
    if width == 0 || height < MASK_BANDS {
        return Err(Error::InvalidArgument(format!(
            "mask of {width}x{height} is too small for {MASK_BANDS} bands"
        )));
    }
    let mut r = rng(seed);
    let n = width * height;
    let mut bits = vec![true; n];
    let mut hidden = 0usize;
    let scale = 0.04 + 0.2 * severity.sqrt();
    for _ in 0..500 {
        if hidden as f64 >= severity * n as f64 {
            break;
        }
        let cx = r.gen_range(0.0..width as f64);
        let cy = height as f64 * r.gen::<f64>().sqrt();
        let a = width as f64 * scale * r.gen_range(0.6..1.4);
        let b = height as f64 * scale * r.gen_range(0.6..1.4);
        let (sin, cos) = r.gen_range(0.0..PI).sin_cos();
        let reach = a.max(b).ceil() as i64 + 1;
        for y in (cy as i64 - reach).max(0)..(cy as i64 + reach).min(height as i64) {
            for x in (cx as i64 - reach).max(0)..(cx as i64 + reach).min(width as i64) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    let i = y as usize * width + x as usize;
                    if bits[i] {
                        bits[i] = false;
                        hidden += 1;
                    }
                }
            }
        }
    }

    let known_in = |bits: &[bool], b: usize| {
        band_rows(height, MASK_BANDS, b)
            .flat_map(|row| (0..width).map(move |c| row * width + c))
            .filter(|&i| bits[i])
            .count()
    };
    let size = |b: usize| band_rows(height, MASK_BANDS, b).len() * width;
    let hide_random = |bits: &mut [bool], b: usize, count: usize, r: &mut rand_chacha::ChaCha8Rng| {
        let mut known: Vec<usize> = band_rows(height, MASK_BANDS, b)
            .flat_map(|row| (0..width).map(move |c| row * width + c))
            .filter(|&i| bits[i])
            .collect();
        for _ in 0..count.min(known.len()) {
            let k = r.gen_range(0..known.len());
            bits[known.swap_remove(k)] = false;
        }
    };
    for b in 1..MASK_BANDS {
        let prev_known = known_in(&bits, b - 1);
        // Largest count whose fraction does not exceed the band below.
        let allowed = prev_known * size(b) / size(b - 1);
        let known = known_in(&bits, b);
        if known > allowed {
            hide_random(&mut bits, b, known - allowed, &mut r);
        }
    }
    let top = MASK_BANDS - 1;
    let frac = |bits: &[bool], b: usize| known_in(bits, b) as f64 / size(b) as f64;
    if frac(&bits, top) >= frac(&bits, 0) {
        if known_in(&bits, top) > 0 {
            hide_random(&mut bits, top, 1, &mut r);
        } else {
            // Everything is hidden: reveal one ground pixel.
            bits[0] = true;
        }
    }
    let completeness = bits.iter().filter(|b| **b).count() as f64 / n as f64;
    Ok(ErosionMask {
        width,
        height,
        bits,
        completeness,
    })
}

/// A bank of `count` square masks with severities drawn from `severity`.
pub fn synth_mask_bank(count: usize, w: usize, severity: (f64, f64), seed: u64) -> Result<PatchBank> {
    let mut r = rng(sub_seed(seed, "mask-bank"));
    let patches = (0..count)
        .map(|k| {
            let s = r.gen_range(severity.0..severity.1);
            let mut p = synth_erosion_mask(w, w, s, sub_seed(seed, &format!("mask/{k}")))?.into_patch()?;
            p.source_id = k as u32;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    PatchBank::new(w, patches, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_face_count() {
        let spec = StructureSpec {
            faces: FaceSet {
                near: true,
                far: false,
                top: false,
            },
            ..StructureSpec::straight("w", 2.0, 1.0)
        };
        let wall = synth_wall(&spec, 1).unwrap();
        assert_eq!(wall.cloud.len(), 201 * 101);
        assert!(wall.faces.iter().all(|f| *f == Face::Near));
        assert!(wall.cloud.points().iter().all(|p| (p[1] - 0.25).abs() < 1e-12));
    }

    #[test]
    fn same_seed_same_cloud() {
        let spec = StructureSpec::l_shape("l", 1.0, 1.0, 0.5);
        assert_eq!(synth_wall(&spec, 4).unwrap(), synth_wall(&spec, 4).unwrap());
        assert_ne!(synth_wall(&spec, 4).unwrap().cloud, synth_wall(&spec, 5).unwrap().cloud);
    }

    #[test]
    fn texture_has_contrast() {
        let spec = StructureSpec::straight("w", 2.0, 1.0);
        let colors: Vec<f32> = (0..200)
            .map(|i| stone_color(&spec, 3, i as f64 * 0.01, 0.1)[0])
            .collect();
        let lo = colors.iter().cloned().fold(1.0, f32::min);
        let hi = colors.iter().cloned().fold(0.0, f32::max);
        assert!(hi - lo > 0.2);
    }

    #[test]
    fn doors_remove_face_points() {
        let spec = StructureSpec {
            doors: vec![Door {
                at: 0.5,
                width: 0.5,
                height: 0.8,
            }],
            ..StructureSpec::straight("w", 2.0, 1.0)
        };
        let plain = synth_wall(&StructureSpec::straight("w", 2.0, 1.0), 1).unwrap();
        let door = synth_wall(&spec, 1).unwrap();
        assert!(door.cloud.len() < plain.cloud.len());
        assert!(!door.sweep.openings.is_empty());
    }

    #[test]
    fn sweep_arc_is_centred_on_the_wall() {
        let spec = StructureSpec::straight("w", 2.0, 1.0);
        let cfg = recommended_sweep(&spec, None);
        let radius = cfg.step * (cfg.rows - cfg.turn_row) as f64 / PI;
        assert!((radius - spec.camera_offset()).abs() < cfg.step);
    }

    #[test]
    fn masks_are_bottom_heavy() {
        for seed in 0..20 {
            let m = synth_erosion_mask(64, 64, 0.4, seed).unwrap();
            let f = m.band_fractions(10);
            assert!(f.windows(2).all(|p| p[1] <= p[0]), "{f:?}");
            assert!(f[0] > f[9]);
        }
    }

    #[test]
    fn light_masks_are_nearly_complete() {
        let m = synth_erosion_mask(64, 64, 1e-4, 2).unwrap();
        assert!(m.completeness > 0.95);
        assert!(synth_erosion_mask(64, 64, 0.0, 2).is_err());
    }
}
