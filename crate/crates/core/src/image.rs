//! The five-channel MCOP raster and the fixed-size patches cut from it.
//!
//! Pixel `(col, row)` lives at `row * width + col` in every plane. Row 0 is the
//! first slit step (the camera at ground level); rows grow as the slit climbs and
//! turns over the structure.

use crate::error::{Error, Result};

/// One of the four 32-bit planes. Rotation is held separately in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Red = 0,
    Green = 1,
    Blue = 2,
    Depth = 3,
}

/// A row-major binary plane (known-pixel masks, held-out maps).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        BitMask {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(BitMask {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

/// W×H×5 multi-center-of-projection image: R, G, B, depth and per-row rotation
/// increment, plus the known-pixel mask.
///
/// The mask is always exactly "depth is finite"; unknown pixels carry
/// `+inf` depth and zero color. Rotation is a geometric prior and is present on
/// every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct McopImage {
    width: usize,
    height: usize,
    wrap: bool,
    planes: [Vec<f32>; 4],
    rotation: Vec<f64>,
    mask: Vec<bool>,
}

impl McopImage {
    /// An image with every pixel unknown and a zero rotation channel.
    pub fn new_unknown(width: usize, height: usize, wrap: bool) -> Self {
        let n = width * height;
        McopImage {
            width,
            height,
            wrap,
            planes: [
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
                vec![f32::INFINITY; n],
            ],
            rotation: vec![0.0; n],
            mask: vec![false; n],
        }
    }

    /// Assemble an image from raw planes; the mask is derived from depth.
    pub fn from_planes(
        width: usize,
        height: usize,
        wrap: bool,
        planes: [Vec<f32>; 4],
        rotation: Vec<f64>,
    ) -> Result<Self> {
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) || rotation.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "planes do not match {width}x{height}"
            )));
        }
        let mask = planes[Channel::Depth as usize]
            .iter()
            .map(|d| d.is_finite())
            .collect();
        let image = McopImage {
            width,
            height,
            wrap,
            planes,
            rotation,
            mask,
        };
        image.validate()?;
        Ok(image)
    }

    pub(crate) fn from_raw_unchecked(
        width: usize,
        height: usize,
        wrap: bool,
        planes: [Vec<f32>; 4],
        rotation: Vec<f64>,
        mask: Vec<bool>,
    ) -> Self {
        McopImage {
            width,
            height,
            wrap,
            planes,
            rotation,
            mask,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// True when the image comes from a closed path (column `W-1` neighbors column 0).
    pub fn wraps(&self) -> bool {
        self.wrap
    }

    pub fn set_wrap(&mut self, wrap: bool) {
        self.wrap = wrap;
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn plane(&self, channel: Channel) -> &[f32] {
        &self.planes[channel as usize]
    }

    pub fn rotation_plane(&self) -> &[f64] {
        &self.rotation
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_plane(&self) -> BitMask {
        BitMask {
            width: self.width,
            height: self.height,
            bits: self.mask.clone(),
        }
    }

    #[inline]
    pub fn is_known(&self, col: usize, row: usize) -> bool {
        self.mask[self.index(col, row)]
    }

    pub fn rgb(&self, col: usize, row: usize) -> [f32; 3] {
        let i = self.index(col, row);
        [self.planes[0][i], self.planes[1][i], self.planes[2][i]]
    }

    pub fn depth(&self, col: usize, row: usize) -> f32 {
        self.planes[3][self.index(col, row)]
    }

    pub fn rotation(&self, col: usize, row: usize) -> f64 {
        self.rotation[self.index(col, row)]
    }

    /// Mark a pixel known. Panics if `depth` is not finite and positive.
    pub fn set_known(&mut self, col: usize, row: usize, rgb: [f32; 3], depth: f32) {
        assert!(
            depth.is_finite() && depth > 0.0,
            "known depth must be finite and positive, got {depth}"
        );
        let i = self.index(col, row);
        for c in 0..3 {
            self.planes[c][i] = rgb[c];
        }
        self.planes[3][i] = depth;
        self.mask[i] = true;
    }

    pub fn set_unknown(&mut self, col: usize, row: usize) {
        let i = self.index(col, row);
        self.set_unknown_at(i);
    }

    pub(crate) fn set_unknown_at(&mut self, i: usize) {
        for c in 0..3 {
            self.planes[c][i] = 0.0;
        }
        self.planes[3][i] = f32::INFINITY;
        self.mask[i] = false;
    }

    pub fn set_rotation(&mut self, col: usize, row: usize, value: f64) {
        let i = self.index(col, row);
        self.rotation[i] = value;
    }

    pub(crate) fn rotation_plane_mut(&mut self) -> &mut [f64] {
        &mut self.rotation
    }

    pub(crate) fn plane_mut(&mut self, channel: Channel) -> &mut [f32] {
        &mut self.planes[channel as usize]
    }

    pub(crate) fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    pub fn known_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn completeness(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.known_count() as f64 / self.mask.len() as f64
    }

    /// Kahan-summed rotation of one column.
    pub fn column_rotation_sum(&self, col: usize) -> f64 {
        crate::numeric::kahan_sum((0..self.height).map(|row| self.rotation(col, row)))
    }

    /// The largest finite depth, or `None` if nothing is known.
    pub fn max_depth(&self) -> Option<f32> {
        self.planes[3]
            .iter()
            .copied()
            .filter(|d| d.is_finite())
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f32| a.max(d))))
    }

    /// A copy that keeps only the pixels selected by `keep` known.
    pub fn restricted_to(&self, keep: &BitMask) -> Result<McopImage> {
        if keep.width != self.width || keep.height != self.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} selection for {}x{} image",
                keep.width, keep.height, self.width, self.height
            )));
        }
        let mut out = self.clone();
        for i in 0..self.mask.len() {
            if !keep.bits[i] {
                out.set_unknown_at(i);
            }
        }
        Ok(out)
    }

    /// Check every channel invariant; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.planes.iter().any(|p| p.len() != n) || self.rotation.len() != n || self.mask.len() != n
        {
            return Err(Error::Invariant("plane length mismatch".into()));
        }
        for i in 0..n {
            let depth = self.planes[3][i];
            let (col, row) = (i % self.width, i / self.width);
            if depth.is_nan() {
                return Err(Error::Invariant(format!("NaN depth at ({col}, {row})")));
            }
            if self.mask[i] != depth.is_finite() {
                return Err(Error::Invariant(format!(
                    "mask disagrees with depth at ({col}, {row}): mask {} depth {depth}",
                    self.mask[i]
                )));
            }
            if self.mask[i] {
                if depth <= 0.0 {
                    return Err(Error::Invariant(format!(
                        "non-positive depth {depth} at ({col}, {row})"
                    )));
                }
                for c in 0..3 {
                    let v = self.planes[c][i];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Invariant(format!(
                            "color {v} outside [0, 1] at ({col}, {row})"
                        )));
                    }
                }
            } else if depth != f32::INFINITY {
                return Err(Error::Invariant(format!(
                    "unknown pixel ({col}, {row}) must carry +inf depth"
                )));
            }
            let rot = self.rotation[i];
            if !(0.0..=std::f64::consts::PI).contains(&rot) {
                return Err(Error::Invariant(format!(
                    "rotation {rot} outside [0, pi] at ({col}, {row})"
                )));
            }
        }
        Ok(())
    }
}

/// The known-pixel mask implied by the depth plane: known iff depth is finite.
pub fn derive_mask(image: &McopImage) -> BitMask {
    BitMask {
        width: image.width,
        height: image.height,
        bits: image.planes[3].iter().map(|d| *d != f32::INFINITY).collect(),
    }
}

/// A `w`×`w` window copied out of an [`McopImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub source_id: u32,
    pub x: usize,
    pub y: usize,
    /// Accumulated rotation of the source column at the patch centre; zero
    /// when the patch did not come from an image.
    pub pitch: f64,
    w: usize,
    planes: [Vec<f32>; 4],
    rotation: Vec<f64>,
    mask: Vec<bool>,
    completeness: f64,
}

impl Patch {
    pub fn from_planes(
        source_id: u32,
        x: usize,
        y: usize,
        w: usize,
        planes: [Vec<f32>; 4],
        rotation: Vec<f64>,
    ) -> Result<Self> {
        let n = w * w;
        if planes.iter().any(|p| p.len() != n) || rotation.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "patch planes do not match w={w}"
            )));
        }
        let mask: Vec<bool> = planes[3].iter().map(|d| d.is_finite()).collect();
        let completeness = completeness_of(&mask);
        Ok(Patch {
            source_id,
            x,
            y,
            pitch: 0.0,
            w,
            planes,
            rotation,
            mask,
            completeness,
        })
    }

    /// A patch that carries only a known-pixel pattern: known pixels get unit
    /// depth and zero color, rotation is zero.
    pub fn mask_only(w: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != w * w {
            return Err(Error::DimensionMismatch(format!(
                "{} mask bits for w={w}",
                mask.len()
            )));
        }
        let n = w * w;
        let depth = mask
            .iter()
            .map(|&m| if m { 1.0 } else { f32::INFINITY })
            .collect();
        let completeness = completeness_of(&mask);
        Ok(Patch {
            source_id: 0,
            x: 0,
            y: 0,
            pitch: 0.0,
            w,
            planes: [vec![0.0; n], vec![0.0; n], vec![0.0; n], depth],
            rotation: vec![0.0; n],
            mask,
            completeness,
        })
    }

    pub(crate) fn from_raw_unchecked(
        source_id: u32,
        x: usize,
        y: usize,
        w: usize,
        planes: [Vec<f32>; 4],
        rotation: Vec<f64>,
        mask: Vec<bool>,
    ) -> Self {
        let completeness = completeness_of(&mask);
        Patch {
            source_id,
            x,
            y,
            pitch: 0.0,
            w,
            planes,
            rotation,
            mask,
            completeness,
        }
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn completeness(&self) -> f64 {
        self.completeness
    }

    pub fn plane(&self, channel: Channel) -> &[f32] {
        &self.planes[channel as usize]
    }

    pub fn rotation_plane(&self) -> &[f64] {
        &self.rotation
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Pixel `(dx, dy)` in window coordinates.
    pub fn is_known(&self, dx: usize, dy: usize) -> bool {
        self.mask[dy * self.w + dx]
    }

    pub fn known_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn completeness_of(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_mask_all_finite_is_all_ones() {
        let mut img = McopImage::new_unknown(4, 3, false);
        for row in 0..3 {
            for col in 0..4 {
                img.set_known(col, row, [0.1, 0.2, 0.3], 1.0);
            }
        }
        let mask = derive_mask(&img);
        assert_eq!(mask.count_ones(), 12);
        assert_eq!(mask.bits(), img.mask());
    }

    #[test]
    fn derive_mask_all_infinite_is_all_zeros() {
        let img = McopImage::new_unknown(5, 5, false);
        assert!(derive_mask(&img).is_empty());
    }

    #[test]
    fn derive_mask_single_finite_pixel() {
        let mut img = McopImage::new_unknown(8, 8, false);
        img.set_known(3, 5, [1.0, 0.0, 0.0], 2.5);
        let mask = derive_mask(&img);
        assert_eq!(mask.count_ones(), 1);
        assert!(mask.get(3, 5));
    }

    #[test]
    fn validate_rejects_out_of_range_color() {
        let planes = [vec![1.5f32], vec![0.0], vec![0.0], vec![1.0]];
        assert!(McopImage::from_planes(1, 1, false, planes, vec![0.0]).is_err());
    }

    #[test]
    fn restricted_keeps_selection_only() {
        let mut img = McopImage::new_unknown(2, 1, false);
        img.set_known(0, 0, [0.5; 3], 1.0);
        img.set_known(1, 0, [0.5; 3], 1.0);
        let mut keep = BitMask::new(2, 1, false);
        keep.set(1, 0, true);
        let out = img.restricted_to(&keep).unwrap();
        assert!(!out.is_known(0, 0));
        assert!(out.is_known(1, 0));
        assert!(out.validate().is_ok());
    }

    #[test]
    fn patch_completeness_counts_known() {
        let p = Patch::mask_only(2, vec![true, false, true, false]).unwrap();
        assert_eq!(p.completeness(), 0.5);
    }
}
