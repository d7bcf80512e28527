//! Synthetic erosion: hide known pixels under masks drawn from a mask bank and
//! keep what was hidden as evaluation ground truth.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{BitMask, McopImage, Patch};
use crate::patchbank::{apply_random_mask, PatchBank};
use crate::seed::rng;

pub const DEFAULT_COMPLETENESS_RANGE: (f64, f64) = (0.2, 0.8);

/// Where one mask patch landed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedMask {
    pub bank_index: usize,
    pub x: usize,
    pub y: usize,
    pub completeness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Erosion {
    pub image: McopImage,
    pub held_out: BitMask,
    pub applied: Vec<AppliedMask>,
}

impl Erosion {
    /// Share of the originally known pixels that were held out.
    pub fn held_out_fraction(&self, original_known: usize) -> f64 {
        if original_known == 0 {
            0.0
        } else {
            self.held_out.count_ones() as f64 / original_known as f64
        }
    }
}

struct Eroder<'a> {
    original: &'a McopImage,
    bank: &'a PatchBank,
    eligible: Vec<usize>,
    rng: rand_chacha::ChaCha8Rng,
    current: McopImage,
    applied: Vec<AppliedMask>,
}

impl<'a> Eroder<'a> {
    fn new(image: &'a McopImage, bank: &'a PatchBank, range: (f64, f64), seed: u64) -> Result<Self> {
        let (lo, hi) = range;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "completeness range ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1"
            )));
        }
        let w = bank.w();
        if w > image.height() || w > image.width() {
            return Err(Error::OutOfBounds {
                x: 0,
                y: 0,
                w,
                width: image.width(),
                height: image.height(),
            });
        }
        let eligible: Vec<usize> = bank
            .patches()
            .iter()
            .enumerate()
            .filter(|(_, p)| (lo..=hi).contains(&p.completeness()))
            .map(|(i, _)| i)
            .collect();
        Ok(Eroder {
            original: image,
            bank,
            eligible,
            rng: rng(seed),
            current: image.clone(),
            applied: Vec::new(),
        })
    }

    fn apply_one(&mut self, range: (f64, f64)) -> Result<()> {
        if self.eligible.is_empty() {
            return Err(Error::NoMaskInRange {
                lo: range.0,
                hi: range.1,
            });
        }
        let w = self.bank.w();
        let bank_index = self.eligible[self.rng.gen_range(0..self.eligible.len())];
        let last_x = if self.current.wraps() {
            self.current.width() - 1
        } else {
            self.current.width() - w
        };
        let x = self.rng.gen_range(0..=last_x);
        let y = self.rng.gen_range(0..=self.current.height() - w);
        let patch: &Patch = &self.bank.patches()[bank_index];
        self.current = apply_random_mask(&self.current, patch, x, y)?;
        self.applied.push(AppliedMask {
            bank_index,
            x,
            y,
            completeness: patch.completeness(),
        });
        Ok(())
    }

    fn held_out_count(&self) -> usize {
        self.original
            .mask()
            .iter()
            .zip(self.current.mask())
            .filter(|(a, b)| **a && !**b)
            .count()
    }

    fn finish(self) -> Erosion {
        let bits = self
            .original
            .mask()
            .iter()
            .zip(self.current.mask())
            .map(|(a, b)| *a && !*b)
            .collect();
        let held_out = BitMask::from_bits(self.original.width(), self.original.height(), bits)
            .expect("dimensions match the image");
        Erosion {
            image: self.current,
            held_out,
            applied: self.applied,
        }
    }
}

/// Apply `n_masks` bank masks whose completeness lies in `range`, each at a
/// seeded uniform position.
pub fn erode_image(
    image: &McopImage,
    mask_bank: &PatchBank,
    n_masks: usize,
    range: (f64, f64),
    seed: u64,
) -> Result<Erosion> {
    let mut eroder = Eroder::new(image, mask_bank, range, seed)?;
    for _ in 0..n_masks {
        eroder.apply_one(range)?;
    }
    Ok(eroder.finish())
}

/// Apply masks one at a time until at least `target` of the known pixels are
/// held out, or `max_masks` have been used.
pub fn erode_to_fraction(
    image: &McopImage,
    mask_bank: &PatchBank,
    target: f64,
    range: (f64, f64),
    max_masks: usize,
    seed: u64,
) -> Result<Erosion> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "target held-out fraction {target} outside [0, 1]"
        )));
    }
    let known = image.known_count();
    let need = (target * known as f64).ceil() as usize;
    let mut eroder = Eroder::new(image, mask_bank, range, seed)?;
    while eroder.held_out_count() < need && eroder.applied.len() < max_masks {
        eroder.apply_one(range)?;
    }
    Ok(eroder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known(w: usize, h: usize) -> McopImage {
        let mut img = McopImage::new_unknown(w, h, false);
        for row in 0..h {
            for col in 0..w {
                img.set_known(col, row, [0.5; 3], 2.0);
            }
        }
        img
    }

    fn bank_of(masks: Vec<Vec<bool>>, w: usize) -> PatchBank {
        let patches = masks
            .into_iter()
            .map(|m| Patch::mask_only(w, m).unwrap())
            .collect();
        PatchBank::new(w, patches, 0.0).unwrap()
    }

    #[test]
    fn zero_masks_is_identity() {
        let img = known(8, 8);
        let bank = bank_of(vec![vec![false; 16]], 4);
        let e = erode_image(&img, &bank, 0, (0.0, 1.0), 3).unwrap();
        assert_eq!(e.image, img);
        assert_eq!(e.held_out.count_ones(), 0);
    }

    #[test]
    fn full_mask_holds_out_its_area() {
        let img = known(128, 128);
        let bank = bank_of(vec![vec![false; 128 * 128]], 128);
        let e = erode_image(&img, &bank, 1, (0.0, 0.5), 3).unwrap();
        assert_eq!(e.applied[0].x, 0);
        assert_eq!(e.held_out.count_ones(), 16384);
    }

    #[test]
    fn out_of_range_bank_is_refused() {
        let img = known(8, 8);
        let bank = bank_of(vec![vec![true; 16]], 4);
        assert!(matches!(
            erode_image(&img, &bank, 1, (0.2, 0.8), 3),
            Err(Error::NoMaskInRange { .. })
        ));
    }

    #[test]
    fn reaches_target_fraction() {
        let img = known(32, 16);
        let mut m = vec![true; 64];
        m[..32].iter_mut().for_each(|b| *b = false);
        let bank = bank_of(vec![m], 8);
        let e = erode_to_fraction(&img, &bank, 0.3, (0.2, 0.8), 1000, 9).unwrap();
        assert!(e.held_out_fraction(img.known_count()) >= 0.3);
        assert_eq!(img.known_count(), e.image.known_count() + e.held_out.count_ones());
    }
}
