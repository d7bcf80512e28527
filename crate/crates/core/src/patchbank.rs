//! Observation windows and the completeness-filtered patch bank.
//!
//! MPBK layout (little-endian):
//!
//! ```text
//! "MPBK" | u16 version = 1 | u32 w | u32 count | f32 min_completeness
//! per patch: u32 source_id | u32 x | u32 y | f32 completeness | f64 pitch
//!            R, G, B, depth planes (w*w f32 each) | rotation (w*w f64)
//!            mask (w*w bits, LSB first, padded to a byte)
//! ```

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::container::{pack_bits, Reader};
use crate::error::{ContainerError, Error, Result};
use crate::image::{Channel, McopImage, Patch};
use crate::seed::rng;

pub const BANK_MAGIC: [u8; 4] = *b"MPBK";
pub const BANK_VERSION: u16 = 1;
pub const DEFAULT_MIN_COMPLETENESS: f64 = 0.95;
pub const DEFAULT_CAP: usize = 200_000;

/// Window side for a given image height: 64 at H=256, 96 at H=384.
pub fn default_patch_size(height: usize) -> usize {
    (height / 4).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBank {
    w: usize,
    patches: Vec<Patch>,
    min_completeness: f64,
    sources: Vec<u32>,
}

impl PatchBank {
    pub fn new(w: usize, patches: Vec<Patch>, min_completeness: f64) -> Result<Self> {
        if let Some(p) = patches.iter().find(|p| p.w() != w) {
            return Err(Error::DimensionMismatch(format!(
                "bank of w={w} given a patch of w={}",
                p.w()
            )));
        }
        if let Some(p) = patches.iter().find(|p| p.completeness() < min_completeness) {
            return Err(Error::IncompletePatch {
                x: p.x,
                y: p.y,
                completeness: p.completeness(),
            });
        }
        let mut sources: Vec<u32> = patches.iter().map(|p| p.source_id).collect();
        sources.sort_unstable();
        sources.dedup();
        Ok(PatchBank {
            w,
            patches,
            min_completeness,
            sources,
        })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn min_completeness(&self) -> f64 {
        self.min_completeness
    }

    /// Ids of the images that contributed at least one patch.
    pub fn sources(&self) -> &[u32] {
        &self.sources
    }

    /// Patch counts per horizontal band of an image `height` rows tall,
    /// binned by window centre row. Band 0 is the ground.
    pub fn row_distribution(&self, height: usize, bands: usize) -> Vec<usize> {
        let mut out = vec![0; bands];
        if height == 0 || bands == 0 {
            return out;
        }
        for p in &self.patches {
            let centre = (p.y + self.w / 2).min(height - 1);
            out[centre * bands / height] += 1;
        }
        out
    }
}

fn column_index(image: &McopImage, x: usize, dx: usize) -> usize {
    let c = x + dx;
    if image.wraps() {
        c % image.width()
    } else {
        c
    }
}

fn check_window(image: &McopImage, x: usize, y: usize, w: usize) -> Result<()> {
    let (width, height) = (image.width(), image.height());
    let cols_ok = if image.wraps() {
        x < width && w <= width
    } else {
        x + w <= width
    };
    if w == 0 || !cols_ok || y + w > height {
        return Err(Error::OutOfBounds {
            x,
            y,
            w,
            width,
            height,
        });
    }
    Ok(())
}

/// Copy the `w`×`w` window with top-left `(x, y)`. Columns wrap on closed-path
/// images.
pub fn extract_window(image: &McopImage, x: usize, y: usize, w: usize) -> Result<Patch> {
    check_window(image, x, y, w)?;
    Ok(extract_unchecked(image, x, y, w, 0))
}

fn extract_unchecked(image: &McopImage, x: usize, y: usize, w: usize, source_id: u32) -> Patch {
    let n = w * w;
    let mut planes: [Vec<f32>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut rotation = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for dy in 0..w {
        for dx in 0..w {
            let i = image.index(column_index(image, x, dx), y + dy);
            for (ch, plane) in planes.iter_mut().enumerate() {
                plane.push(image.plane(CHANNELS[ch])[i]);
            }
            rotation.push(image.rotation_plane()[i]);
            mask.push(image.mask()[i]);
        }
    }
    let mut patch = Patch::from_raw_unchecked(source_id, x, y, w, planes, rotation, mask);
    patch.pitch = pitch_at(image, column_index(image, x, w / 2), y + w / 2);
    patch
}

/// Sum of the rotation increments of rows `1..=row` in column `col`.
pub fn pitch_at(image: &McopImage, col: usize, row: usize) -> f64 {
    (1..=row).map(|r| image.rotation(col, r)).sum()
}

const CHANNELS: [Channel; 4] = [Channel::Red, Channel::Green, Channel::Blue, Channel::Depth];

fn window_known(image: &McopImage, x: usize, y: usize, w: usize) -> usize {
    let mask = image.mask();
    (0..w)
        .map(|dy| {
            (0..w)
                .filter(|&dx| mask[image.index(column_index(image, x, dx), y + dy)])
                .count()
        })
        .sum()
}

/// Hide every pixel under a zero of `mask_source` placed at `(x, y)`.
/// Rotation is left alone.
pub fn apply_random_mask(image: &McopImage, mask_source: &Patch, x: usize, y: usize) -> Result<McopImage> {
    let w = mask_source.w();
    check_window(image, x, y, w)?;
    let mut out = image.clone();
    for dy in 0..w {
        for dx in 0..w {
            if !mask_source.is_known(dx, dy) {
                let i = out.index(column_index(image, x, dx), y + dy);
                out.set_unknown_at(i);
            }
        }
    }
    Ok(out)
}

/// Window origins on a stride grid. Wrapping images also get windows that
/// straddle the seam.
fn grid_origins(image: &McopImage, w: usize, stride: usize) -> Vec<(usize, usize)> {
    let (width, height) = (image.width(), image.height());
    if w > height || w > width {
        return Vec::new();
    }
    let last_x = if image.wraps() { width - 1 } else { width - w };
    let ys = (0..=height - w).step_by(stride);
    ys.flat_map(|y| (0..=last_x).step_by(stride).map(move |x| (x, y)))
        .collect()
}

/// Harvest every stride-grid window with completeness at least
/// `min_completeness`, keeping a seeded subsample of `cap` if more qualify.
pub fn build_bank(
    images: &[McopImage],
    w: usize,
    min_completeness: f64,
    stride: usize,
    cap: usize,
    seed: u64,
) -> Result<PatchBank> {
    if w == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {w} and stride {stride} must be positive"
        )));
    }
    if !(min_completeness > 0.0 && min_completeness <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min completeness {min_completeness} outside (0, 1]"
        )));
    }
    if let Some(img) = images.iter().find(|img| img.height() < w) {
        return Err(Error::DimensionMismatch(format!(
            "patch size {w} exceeds image height {}",
            img.height()
        )));
    }
    let need = (min_completeness * (w * w) as f64 - 1e-9).ceil() as usize;
    let candidates: Vec<(u32, usize, usize)> = images
        .par_iter()
        .enumerate()
        .map(|(id, img)| {
            grid_origins(img, w, stride)
                .into_iter()
                .filter(|&(x, y)| window_known(img, x, y, w) >= need)
                .map(|(x, y)| (id as u32, x, y))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    if candidates.is_empty() {
        return Err(Error::EmptyBank(format!(
            "no {w}x{w} window reaches completeness {min_completeness}"
        )));
    }
    let chosen: Vec<(u32, usize, usize)> = if candidates.len() > cap {
        let mut idx = sample(&mut rng(seed), candidates.len(), cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| candidates[i]).collect()
    } else {
        candidates
    };
    let patches = chosen
        .par_iter()
        .map(|&(id, x, y)| extract_unchecked(&images[id as usize], x, y, w, id))
        .collect();
    PatchBank::new(w, patches, min_completeness)
}

/// `n` uniform draws with replacement.
pub fn sample_bank(bank: &PatchBank, n: usize, seed: u64) -> Result<Vec<Patch>> {
    if bank.is_empty() {
        return Err(Error::EmptyBank("cannot sample an empty bank".into()));
    }
    let mut r = rng(seed);
    Ok((0..n)
        .map(|_| bank.patches[r.gen_range(0..bank.len())].clone())
        .collect())
}

pub fn encode_bank(bank: &PatchBank) -> Vec<u8> {
    let n = bank.w * bank.w;
    let per_patch = 24 + n * (4 * 4 + 8) + n.div_ceil(8);
    let mut out = Vec::with_capacity(18 + bank.len() * per_patch);
    out.extend_from_slice(&BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.extend_from_slice(&(bank.w as u32).to_le_bytes());
    out.extend_from_slice(&(bank.len() as u32).to_le_bytes());
    out.extend_from_slice(&(bank.min_completeness as f32).to_le_bytes());
    for p in &bank.patches {
        out.extend_from_slice(&p.source_id.to_le_bytes());
        out.extend_from_slice(&(p.x as u32).to_le_bytes());
        out.extend_from_slice(&(p.y as u32).to_le_bytes());
        out.extend_from_slice(&(p.completeness() as f32).to_le_bytes());
        out.extend_from_slice(&p.pitch.to_le_bytes());
        for ch in CHANNELS {
            for v in p.plane(ch) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in p.rotation_plane() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&pack_bits(p.mask()));
    }
    out
}

pub fn decode_bank(bytes: &[u8]) -> std::result::Result<PatchBank, BankDecodeError> {
    let mut r = Reader::new(bytes);
    r.magic(BANK_MAGIC)?;
    let version = r.u16()?;
    if version != BANK_VERSION {
        return Err(ContainerError::VersionMismatch {
            expected: BANK_VERSION,
            found: version,
        }
        .into());
    }
    let w = r.u32()? as usize;
    let count = r.u32()? as usize;
    let min_completeness = r.f32s(1)?[0] as f64;
    let n = w * w;
    let per_patch = 24 + n * 24 + n.div_ceil(8);
    let expected = (count * per_patch) as u64;
    if r.remaining() as u64 != expected {
        return Err(ContainerError::SizeMismatch {
            expected,
            found: r.remaining() as u64,
        }
        .into());
    }
    let mut patches = Vec::with_capacity(count);
    for k in 0..count {
        let source_id = r.u32()?;
        let x = r.u32()? as usize;
        let y = r.u32()? as usize;
        let _stored_completeness = r.f32s(1)?;
        let pitch = r.f64s(1)?[0];
        let planes = [r.f32s(n)?, r.f32s(n)?, r.f32s(n)?, r.f32s(n)?];
        let rotation = r.f64s(n)?;
        let mask = r.bits(n)?;
        if mask.iter().zip(&planes[3]).any(|(m, d)| *m != d.is_finite()) {
            return Err(BankDecodeError::Invalid(Error::Invariant(format!(
                "patch {k}: mask disagrees with depth"
            ))));
        }
        let mut patch = Patch::from_raw_unchecked(source_id, x, y, w, planes, rotation, mask);
        patch.pitch = pitch;
        patches.push(patch);
    }
    // The header stores the threshold as f32, so compare at that precision
    // and let the in-memory threshold drop to the weakest stored patch.
    if patches
        .iter()
        .any(|p| (p.completeness() as f32) < min_completeness as f32)
    {
        return Err(BankDecodeError::Invalid(Error::Invariant(
            "patch below the bank's completeness threshold".into(),
        )));
    }
    let threshold = patches
        .iter()
        .map(|p| p.completeness())
        .fold(min_completeness, f64::min);
    PatchBank::new(w, patches, threshold).map_err(BankDecodeError::Invalid)
}

#[derive(Debug)]
pub enum BankDecodeError {
    Container(ContainerError),
    Invalid(Error),
}

impl From<ContainerError> for BankDecodeError {
    fn from(e: ContainerError) -> Self {
        BankDecodeError::Container(e)
    }
}

pub fn write_bank(bank: &PatchBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_bank(bank)).map_err(|e| Error::io(path, e))
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<PatchBank> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&bytes).map_err(|e| match e {
        BankDecodeError::Container(source) => Error::Container {
            path: path.to_path_buf(),
            source,
        },
        BankDecodeError::Invalid(e) => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known_image(w: usize, h: usize, wrap: bool) -> McopImage {
        let mut img = McopImage::new_unknown(w, h, wrap);
        for row in 0..h {
            for col in 0..w {
                let v = ((col + row) % 7) as f32 / 7.0;
                img.set_known(col, row, [v, 1.0 - v, 0.5], 1.0 + v);
                img.set_rotation(col, row, std::f64::consts::PI / h as f64);
            }
        }
        img
    }

    #[test]
    fn window_completeness_counts_known() {
        let mut img = known_image(4, 4, false);
        assert_eq!(extract_window(&img, 0, 0, 2).unwrap().completeness(), 1.0);
        img.set_unknown(0, 0);
        img.set_unknown(1, 1);
        assert_eq!(extract_window(&img, 0, 0, 2).unwrap().completeness(), 0.5);
    }

    #[test]
    fn wrapped_window_crosses_seam() {
        let img = known_image(5, 3, true);
        let p = extract_window(&img, 4, 0, 2).unwrap();
        assert_eq!(p.plane(Channel::Red)[0], img.plane(Channel::Red)[img.index(4, 0)]);
        assert_eq!(p.plane(Channel::Red)[1], img.plane(Channel::Red)[img.index(0, 0)]);
        let open = known_image(5, 3, false);
        assert!(matches!(extract_window(&open, 4, 0, 2), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn identity_and_full_masks() {
        let img = known_image(4, 4, false);
        let ones = Patch::mask_only(4, vec![true; 16]).unwrap();
        assert_eq!(apply_random_mask(&img, &ones, 0, 0).unwrap(), img);
        let zeros = Patch::mask_only(4, vec![false; 16]).unwrap();
        let hidden = apply_random_mask(&img, &zeros, 0, 0).unwrap();
        assert_eq!(hidden.known_count(), 0);
        assert_eq!(hidden.rotation_plane(), img.rotation_plane());
    }

    #[test]
    fn full_image_gives_sixteen_patches() {
        let img = known_image(256, 256, false);
        let bank = build_bank(&[img], 64, 0.95, 64, DEFAULT_CAP, 1).unwrap();
        assert_eq!(bank.len(), 16);
        assert_eq!(bank.sources(), &[0]);
    }

    #[test]
    fn lower_half_gives_eight_patches() {
        let mut img = known_image(256, 256, false);
        for row in 0..128 {
            for col in 0..256 {
                img.set_unknown(col, row);
            }
        }
        let bank = build_bank(&[img], 64, 0.95, 64, DEFAULT_CAP, 1).unwrap();
        assert_eq!(bank.len(), 8);
        assert!(bank.patches().iter().all(|p| p.y >= 128));
    }

    #[test]
    fn unknown_image_is_an_empty_bank() {
        let img = McopImage::new_unknown(64, 64, false);
        assert!(matches!(
            build_bank(&[img], 32, 0.95, 16, DEFAULT_CAP, 1),
            Err(Error::EmptyBank(_))
        ));
    }

    #[test]
    fn cap_subsamples_deterministically() {
        let img = known_image(64, 32, false);
        let a = build_bank(&[img.clone()], 8, 0.95, 4, 10, 3).unwrap();
        let b = build_bank(&[img], 8, 0.95, 4, 10, 3).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
    }

    #[test]
    fn sampling() {
        let bank = build_bank(&[known_image(16, 16, false)], 4, 0.95, 4, DEFAULT_CAP, 1).unwrap();
        assert!(sample_bank(&bank, 0, 5).unwrap().is_empty());
        assert_eq!(sample_bank(&bank, 20, 5).unwrap(), sample_bank(&bank, 20, 5).unwrap());
    }

    #[test]
    fn default_sizes() {
        assert_eq!(default_patch_size(256), 64);
        assert_eq!(default_patch_size(384), 96);
    }

    #[test]
    fn bank_file_round_trip() {
        let mut img = known_image(24, 16, true);
        img.set_unknown(3, 3);
        let bank = build_bank(&[img], 8, 0.95, 4, DEFAULT_CAP, 1).unwrap();
        let back = decode_bank(&encode_bank(&bank)).unwrap();
        assert_eq!(encode_bank(&back), encode_bank(&bank));
        assert_eq!(back.patches(), bank.patches());
    }
}
