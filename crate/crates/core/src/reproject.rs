//! MCOP image back to 3D, re-integrating the slit poses from the image's own
//! rotation channel.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::image::McopImage;
use crate::sweep::{integrate_column, SweepPath};

/// Column sums may drift this far from pi before reprojection refuses.
pub const REPROJECT_ROTATION_TOLERANCE: f64 = 1e-3;

/// Emit `center + depth * ray` for every known pixel, column-major.
pub fn reproject(image: &McopImage, path: &SweepPath, step: f64) -> Result<PointCloud> {
    if image.width() != path.columns() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} columns, path has {}",
            image.width(),
            path.columns()
        )));
    }
    let worst = (0..image.width())
        .map(|col| (col, image.column_rotation_sum(col)))
        .max_by(|a, b| (a.1 - PI).abs().total_cmp(&(b.1 - PI).abs()));
    if let Some((column, sum)) = worst {
        if (sum - PI).abs() > REPROJECT_ROTATION_TOLERANCE {
            return Err(Error::RotationSum {
                column,
                sum,
                tolerance: REPROJECT_ROTATION_TOLERANCE,
            });
        }
    }
    let height = image.height();
    let columns: Vec<PointCloud> = (0..image.width())
        .into_par_iter()
        .map(|col| {
            let increments: Vec<f64> = (0..height).map(|row| image.rotation(col, row)).collect();
            let (centers, rays) = integrate_column(&path.frames[col], &increments, step);
            let mut out = PointCloud::empty();
            for row in 0..height {
                if !image.is_known(col, row) {
                    continue;
                }
                let p = centers[row] + rays[row] * image.depth(col, row) as f64;
                out.push([p.x, p.y, p.z], image.rgb(col, row));
            }
            out
        })
        .collect();
    let mut cloud = PointCloud::with_capacity(image.known_count());
    for c in &columns {
        cloud.extend(c);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{build_rotation_profile, integrate_slit_poses, PathFrame, Vec3};

    fn path_x() -> SweepPath {
        SweepPath {
            frames: vec![PathFrame {
                base: Vec3::zeros(),
                tangent: Vec3::new(0.0, 1.0, 0.0),
                normal: Vec3::new(1.0, 0.0, 0.0),
            }],
            step: 1.0,
            closed: false,
        }
    }

    #[test]
    fn inverts_single_point_projection() {
        let path = path_x();
        let profile = build_rotation_profile(3, &[2], None).unwrap();
        let poses = integrate_slit_poses(&path, &profile, 3, 1.0).unwrap();
        let cloud = PointCloud::new(vec![[2.0, 0.0, 1.0]], vec![[1.0, 0.0, 0.0]]).unwrap();
        let img = crate::projection::project(&cloud, &poses, 0.05, 10.0).unwrap();
        let back = reproject(&img, &path, 1.0).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.points()[0], [2.0, 0.0, 1.0]);
        assert_eq!(back.colors()[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_image_gives_empty_cloud() {
        let mut img = McopImage::new_unknown(1, 4, false);
        for row in 0..4 {
            img.set_rotation(0, row, PI / 4.0);
        }
        assert!(reproject(&img, &path_x(), 1.0).unwrap().is_empty());
    }

    #[test]
    fn bad_rotation_sum_names_column() {
        let img = McopImage::new_unknown(1, 4, false);
        match reproject(&img, &path_x(), 1.0) {
            Err(Error::RotationSum { column, .. }) => assert_eq!(column, 0),
            other => panic!("expected rotation error, got {other:?}"),
        }
    }
}
