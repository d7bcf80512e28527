//! Uniform hash grid over a point set.
//!
//! Points are bucketed into cubic cells stored as one contiguous index array
//! (sorted by cell) plus a hash map from cell key to its index range. The grid
//! answers the two queries the pipeline needs: first point along a thick ray
//! (projection) and exact nearest neighbor (Chamfer distance).

use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};

pub type CellKey = (i32, i32, i32);

#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell: f64,
    cells: FxHashMap<CellKey, (u32, u32)>,
    order: Vec<u32>,
    lo: [f64; 3],
    hi: [f64; 3],
    key_lo: [i32; 3],
    key_hi: [i32; 3],
}

impl SpatialGrid {
    pub fn build(points: &[[f64; 3]], cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell}")));
        }
        let mut keyed: Vec<(CellKey, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (key_of(p, cell), i as u32))
            .collect();
        keyed.sort_unstable();
        let mut cells = FxHashMap::default();
        let mut start = 0usize;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            cells.insert(key, (start as u32, end as u32));
            start = end;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        let (mut key_lo, mut key_hi) = ([i32::MAX; 3], [i32::MIN; 3]);
        for p in points {
            let k = key_of(p, cell);
            let k = [k.0, k.1, k.2];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
                key_lo[a] = key_lo[a].min(k[a]);
                key_hi[a] = key_hi[a].max(k[a]);
            }
        }
        Ok(SpatialGrid {
            cell,
            cells,
            order: keyed.into_iter().map(|(_, i)| i).collect(),
            lo,
            hi,
            key_lo,
            key_hi,
        })
    }

    /// Cell size suited to nearest-neighbor queries on `points`: roughly a
    /// handful of points per occupied cell.
    pub fn auto_cell(points: &[[f64; 3]]) -> f64 {
        if points.len() < 2 {
            return 1.0;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extents: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).filter(|e| *e > 1e-9).collect();
        if extents.is_empty() {
            return 1.0;
        }
        let measure: f64 = extents.iter().product();
        let per_point = measure / points.len() as f64;
        (2.0 * per_point.powf(1.0 / extents.len() as f64)).max(1e-6)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn indexed_count(&self) -> usize {
        self.order.len()
    }

    pub fn cell_points(&self, key: CellKey) -> &[u32] {
        match self.cells.get(&key) {
            Some(&(s, e)) => &self.order[s as usize..e as usize],
            None => &[],
        }
    }

    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        (!self.order.is_empty()).then_some((self.lo, self.hi))
    }

    /// The point a thick ray hits first: among points whose perpendicular
    /// distance to the ray is at most `radius` and whose along-ray distance is in
    /// `(0, max_depth]`, the one with smallest along-ray distance (ties: lowest
    /// index). Returns `(index, along_ray_distance)`.
    pub fn first_hit(
        &self,
        points: &[[f64; 3]],
        origin: [f64; 3],
        dir: [f64; 3],
        radius: f64,
        max_depth: f64,
    ) -> Option<(usize, f64)> {
        if self.order.is_empty() {
            return None;
        }
        let pad = radius;
        let (t0, t1) = clip_to_box(
            origin,
            dir,
            0.0,
            max_depth,
            [self.lo[0] - pad, self.lo[1] - pad, self.lo[2] - pad],
            [self.hi[0] + pad, self.hi[1] + pad, self.hi[2] + pad],
        )?;
        let h = self.cell;
        let half = radius + 0.5 * h;
        let r2 = radius * radius;
        let mut best: Option<(usize, f64)> = None;
        let mut visited: FxHashSet<CellKey> = FxHashSet::default();
        let samples = ((t1 - t0) / h).ceil() as usize + 1;
        for k in 0..samples {
            let t = (t0 + k as f64 * h).min(t1);
            if let Some((_, bt)) = best {
                // Every point closer than `bt` sits near an already-visited sample.
                if t - 0.5 * h > bt {
                    break;
                }
            }
            let c = [origin[0] + dir[0] * t, origin[1] + dir[1] * t, origin[2] + dir[2] * t];
            let kl = key_of(&[c[0] - half, c[1] - half, c[2] - half], self.cell);
            let kh = key_of(&[c[0] + half, c[1] + half, c[2] + half], self.cell);
            for ix in kl.0..=kh.0 {
                for iy in kl.1..=kh.1 {
                    for iz in kl.2..=kh.2 {
                        let key = (ix, iy, iz);
                        let Some(&(s, e)) = self.cells.get(&key) else { continue };
                        if !visited.insert(key) {
                            continue;
                        }
                        for &pi in &self.order[s as usize..e as usize] {
                            let p = points[pi as usize];
                            let d = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
                            let along = d[0] * dir[0] + d[1] * dir[1] + d[2] * dir[2];
                            if !(along > 0.0 && along <= max_depth) {
                                continue;
                            }
                            let perp2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) - along * along;
                            if perp2 > r2 {
                                continue;
                            }
                            let better = match best {
                                None => true,
                                Some((bi, bt)) => along < bt || (along == bt && (pi as usize) < bi),
                            };
                            if better {
                                best = Some((pi as usize, along));
                            }
                        }
                    }
                }
            }
            if t >= t1 {
                break;
            }
        }
        best
    }

    /// Exact nearest neighbor of `q` as `(index, distance)`. `None` for an empty grid.
    pub fn nearest(&self, points: &[[f64; 3]], q: [f64; 3]) -> Option<(usize, f64)> {
        if self.order.is_empty() {
            return None;
        }
        let qk = key_of(&q, self.cell);
        let qk = [qk.0, qk.1, qk.2];
        // Rings beyond this reach no occupied cell.
        let max_ring = (0..3)
            .map(|a| (qk[a] - self.key_lo[a]).abs().max((self.key_hi[a] - qk[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            self.visit_ring(qk, ring, |key| {
                if let Some(&(s, e)) = self.cells.get(&key) {
                    for &pi in &self.order[s as usize..e as usize] {
                        let p = points[pi as usize];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d2 < bd || (d2 == bd && (pi as usize) < bi),
                        };
                        if better {
                            best = Some((pi as usize, d2));
                        }
                    }
                }
            });
            if let Some((_, bd2)) = best {
                // Cells in ring + 1 are at least `ring * cell` away.
                let reach = ring as f64 * self.cell;
                if bd2 < reach * reach {
                    break;
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    /// Visit the cells whose Chebyshev distance from `center` is exactly `ring`,
    /// clipped to the occupied key range.
    fn visit_ring(&self, center: [i32; 3], ring: i32, mut f: impl FnMut(CellKey)) {
        let lo = |a: usize| (center[a] - ring).max(self.key_lo[a]);
        let hi = |a: usize| (center[a] + ring).min(self.key_hi[a]);
        if ring == 0 {
            f((center[0], center[1], center[2]));
            return;
        }
        for ix in lo(0)..=hi(0) {
            for iy in lo(1)..=hi(1) {
                let on_shell_xy = (ix - center[0]).abs() == ring || (iy - center[1]).abs() == ring;
                if on_shell_xy {
                    for iz in lo(2)..=hi(2) {
                        f((ix, iy, iz));
                    }
                } else {
                    for iz in [center[2] - ring, center[2] + ring] {
                        if iz >= self.key_lo[2] && iz <= self.key_hi[2] {
                            f((ix, iy, iz));
                        }
                    }
                }
            }
        }
    }
}

fn key_of(p: &[f64; 3], cell: f64) -> CellKey {
    let k = |v: f64| (v / cell).floor().clamp(i32::MIN as f64 + 1.0, i32::MAX as f64 - 1.0) as i32;
    (k(p[0]), k(p[1]), k(p[2]))
}

/// Slab clip of the segment `origin + t * dir`, `t in [t0, t1]`, to a box.
fn clip_to_box(
    origin: [f64; 3],
    dir: [f64; 3],
    mut t0: f64,
    mut t1: f64,
    lo: [f64; 3],
    hi: [f64; 3],
) -> Option<(f64, f64)> {
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Convenience wrapper: index a cloud's positions.
pub fn build_spatial_index(cloud: &crate::cloud::PointCloud, cell: f64) -> Result<SpatialGrid> {
    SpatialGrid::build(cloud.points(), cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_first_hit(
        points: &[[f64; 3]],
        o: [f64; 3],
        d: [f64; 3],
        radius: f64,
        max_depth: f64,
    ) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let v = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
            let along = v[0] * d[0] + v[1] * d[1] + v[2] * d[2];
            let perp2 = v.iter().map(|x| x * x).sum::<f64>() - along * along;
            if along > 0.0 && along <= max_depth && perp2 <= radius * radius && best.is_none_or(|(_, bt)| along < bt) {
                best = Some((i, along));
            }
        }
        best
    }

    #[test]
    fn single_point_occupies_origin_cell() {
        let g = SpatialGrid::build(&[[0.0, 0.0, 0.0]], 1.0).unwrap();
        assert_eq!(g.occupied_cells(), 1);
        assert_eq!(g.cell_points((0, 0, 0)), &[0]);
    }

    #[test]
    fn empty_grid_is_valid() {
        let g = SpatialGrid::build(&[], 0.5).unwrap();
        assert_eq!(g.indexed_count(), 0);
        assert!(g.nearest(&[], [0.0; 3]).is_none());
        assert!(g.first_hit(&[], [0.0; 3], [1.0, 0.0, 0.0], 0.1, 10.0).is_none());
    }

    #[test]
    fn rejects_non_positive_cell() {
        assert!(SpatialGrid::build(&[[0.0; 3]], 0.0).is_err());
    }

    #[test]
    fn ray_query_matches_brute_force() {
        let mut rng = crate::seed::rng(11);
        let pts: Vec<[f64; 3]> = (0..1000)
            .map(|_| [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)])
            .collect();
        let grid = SpatialGrid::build(&pts, 0.1).unwrap();
        let mut hits = 0;
        for _ in 0..300 {
            let o = [rng.gen_range(-1.0..3.0), rng.gen_range(-1.0..3.0), rng.gen_range(-1.0..3.0)];
            let mut d: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            d.iter_mut().for_each(|v| *v /= n);
            let want = brute_first_hit(&pts, o, d, 0.05, 4.0);
            let got = grid.first_hit(&pts, o, d, 0.05, 4.0);
            assert_eq!(got, want);
            hits += got.is_some() as usize;
        }
        assert!(hits > 30, "too few hits ({hits}) to be meaningful");
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = crate::seed::rng(5);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..0.2)])
            .collect();
        let grid = SpatialGrid::build(&pts, SpatialGrid::auto_cell(&pts)).unwrap();
        for _ in 0..200 {
            let q = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0)];
            let want = pts
                .iter()
                .map(|p| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            let (_, got) = grid.nearest(&pts, q).unwrap();
            assert_eq!(got, want);
        }
    }
}
