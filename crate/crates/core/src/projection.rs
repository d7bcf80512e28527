//! Point cloud to MCOP image: one thick ray per pixel, nearest hit wins.

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::image::McopImage;
use crate::sweep::SlitPoses;

pub const DEFAULT_MAX_DEPTH: f64 = 10.0;

/// Default gathering radius: 1.5 slit steps.
pub fn default_splat_radius(step: f64) -> f64 {
    1.5 * step
}

/// Project `cloud` through `poses`.
///
/// Each pixel collects the points within `splat_radius` of its ray and at
/// along-ray distance in `(0, max_depth]`, and keeps the closest (ties to the
/// lowest point index). Unhit pixels are unknown; every pixel carries its
/// row's rotation increment.
pub fn project(
    cloud: &PointCloud,
    poses: &SlitPoses,
    splat_radius: f64,
    max_depth: f64,
) -> Result<McopImage> {
    if !(splat_radius > 0.0 && splat_radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "splat radius must be positive, got {splat_radius}"
        )));
    }
    if !(max_depth > 0.0 && max_depth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "max depth must be positive, got {max_depth}"
        )));
    }
    let grid = SpatialGrid::build(cloud.points(), 2.0 * splat_radius)?;
    project_with_grid(cloud, &grid, poses, splat_radius, max_depth)
}

pub fn project_with_grid(
    cloud: &PointCloud,
    grid: &SpatialGrid,
    poses: &SlitPoses,
    splat_radius: f64,
    max_depth: f64,
) -> Result<McopImage> {
    let (width, height) = (poses.columns(), poses.rows());
    let points = cloud.points();
    let columns: Vec<Vec<Option<(usize, f64)>>> = (0..width)
        .into_par_iter()
        .map(|col| {
            (0..height)
                .map(|row| {
                    let c = poses.center(col, row);
                    let r = poses.ray(col, row);
                    grid.first_hit(points, [c.x, c.y, c.z], [r.x, r.y, r.z], splat_radius, max_depth)
                })
                .collect()
        })
        .collect();

    let mut image = McopImage::new_unknown(width, height, false);
    for (col, hits) in columns.iter().enumerate() {
        let increments = poses.increments(col);
        for (row, hit) in hits.iter().enumerate() {
            image.set_rotation(col, row, increments[row]);
            if let Some((idx, depth)) = *hit {
                let depth = depth as f32;
                // A hit closer than f32 resolution still counts as known.
                let depth = if depth > 0.0 { depth } else { f32::MIN_POSITIVE };
                image.set_known(col, row, cloud.colors()[idx], depth);
            }
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::derive_mask;
    use crate::sweep::{build_rotation_profile, integrate_slit_poses, PathFrame, SweepPath, Vec3};

    fn single_column(rows: usize) -> SlitPoses {
        let path = SweepPath {
            frames: vec![PathFrame {
                base: Vec3::zeros(),
                tangent: Vec3::new(0.0, 1.0, 0.0),
                normal: Vec3::new(1.0, 0.0, 0.0),
            }],
            step: 1.0,
            closed: false,
        };
        // turn_row = rows - 1 keeps every applied increment zero: a vertical climb.
        let profile = build_rotation_profile(rows, &[rows - 1], None).unwrap();
        integrate_slit_poses(&path, &profile, rows, 1.0).unwrap()
    }

    #[test]
    fn single_point_lands_on_its_row() {
        let poses = single_column(3);
        let cloud = PointCloud::new(vec![[2.0, 0.0, 1.0]], vec![[1.0, 0.0, 0.0]]).unwrap();
        let img = project(&cloud, &poses, 0.05, 10.0).unwrap();
        assert!(img.is_known(0, 1));
        assert_eq!(img.rgb(0, 1), [1.0, 0.0, 0.0]);
        assert_eq!(img.depth(0, 1), 2.0);
        assert!(!img.is_known(0, 0));
        assert!(!img.is_known(0, 2));
        assert_eq!(derive_mask(&img).bits(), img.mask());
    }

    #[test]
    fn empty_cloud_gives_unknown_image() {
        let poses = single_column(4);
        let img = project(&PointCloud::empty(), &poses, 0.05, 10.0).unwrap();
        assert_eq!(img.known_count(), 0);
        assert!(img.plane(crate::image::Channel::Depth).iter().all(|d| *d == f32::INFINITY));
        assert_eq!(img.rotation(0, 3), poses.increments(0)[3]);
    }

    #[test]
    fn nearest_surface_occludes() {
        let poses = single_column(1);
        let cloud = PointCloud::new(
            vec![[3.0, 0.0, 0.0], [1.0, 0.01, 0.0], [5.0, 0.0, 0.0]],
            vec![[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        let img = project(&cloud, &poses, 0.05, 10.0).unwrap();
        assert_eq!(img.rgb(0, 0), [0.0, 1.0, 0.0]);
        assert_eq!(img.depth(0, 0), 1.0);
    }

    #[test]
    fn max_depth_excludes_far_points() {
        let poses = single_column(1);
        let cloud = PointCloud::new(vec![[12.0, 0.0, 0.0]], vec![[1.0; 3]]).unwrap();
        let img = project(&cloud, &poses, 0.05, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(img.known_count(), 0);
    }
}
