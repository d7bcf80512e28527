//! 8-bit PNG previews for inspection. Previews are lossy and are never read
//! back.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::{Channel, McopImage};

/// Image rows are stored ground first; previews put the ground at the bottom.
fn flip(image: &McopImage, y: u32) -> usize {
    image.height() - 1 - y as usize
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_preview(image: &McopImage) -> RgbImage {
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let [r, g, b] = image.rgb(x as usize, flip(image, y));
        Rgb([to_u8(r as f64), to_u8(g as f64), to_u8(b as f64)])
    })
}

/// Known depths mapped between their 2nd and 98th percentiles, near is
/// bright. Unknown pixels are black.
pub fn depth_preview(image: &McopImage) -> GrayImage {
    let mut known: Vec<f32> = image
        .plane(Channel::Depth)
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .collect();
    known.sort_by(f32::total_cmp);
    let pick = |q: f64| {
        if known.is_empty() {
            0.0
        } else {
            known[((known.len() - 1) as f64 * q).round() as usize] as f64
        }
    };
    let (lo, hi) = (pick(0.02), pick(0.98));
    let span = (hi - lo).max(1e-9);
    GrayImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let d = image.depth(x as usize, flip(image, y));
        if d.is_finite() {
            Luma([to_u8(0.15 + 0.85 * (1.0 - (d as f64 - lo) / span))])
        } else {
            Luma([0])
        }
    })
}

/// Rotation times `H / pi`: an even turn over the whole column reads mid grey.
pub fn rotation_preview(image: &McopImage) -> GrayImage {
    let scale = image.height() as f64 / PI;
    GrayImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        Luma([to_u8(image.rotation(x as usize, flip(image, y)) * scale * 0.5)])
    })
}

/// Write `<stem>_rgb.png`, `<stem>_depth.png` and `<stem>_rotation.png`
/// into `dir`. Returns the file names.
pub fn write_previews(image: &McopImage, dir: impl AsRef<Path>, stem: &str) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names = [
        format!("{stem}_rgb.png"),
        format!("{stem}_depth.png"),
        format!("{stem}_rotation.png"),
    ];
    let save = |name: &str, result: image::ImageResult<()>| {
        result.map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(dir.join(name), io),
            other => Error::InvalidArgument(format!("cannot encode {name}: {other}")),
        })
    };
    save(&names[0], rgb_preview(image).save(dir.join(&names[0])))?;
    save(&names[1], depth_preview(image).save(dir.join(&names[1])))?;
    save(&names[2], rotation_preview(image).save(dir.join(&names[2])))?;
    Ok(names.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_row_is_drawn_last() {
        let mut img = McopImage::new_unknown(2, 3, false);
        img.set_known(0, 0, [1.0, 0.0, 0.0], 1.0);
        let p = rgb_preview(&img);
        assert_eq!(p.get_pixel(0, 2).0, [255, 0, 0]);
        assert_eq!(p.get_pixel(0, 0).0, [0, 0, 0]);
    }

    #[test]
    fn even_rotation_is_mid_grey() {
        let mut img = McopImage::new_unknown(1, 4, false);
        for row in 0..4 {
            img.set_rotation(0, row, PI / 4.0);
        }
        assert!(rotation_preview(&img).pixels().all(|p| p.0[0] == 128));
    }

    #[test]
    fn nearer_is_brighter() {
        let mut img = McopImage::new_unknown(3, 1, false);
        img.set_known(0, 0, [0.0; 3], 1.0);
        img.set_known(1, 0, [0.0; 3], 2.0);
        let p = depth_preview(&img);
        assert!(p.get_pixel(0, 0).0[0] > p.get_pixel(1, 0).0[0]);
        assert_eq!(p.get_pixel(2, 0).0[0], 0);
    }
}
