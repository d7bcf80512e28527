//! Binary containers for MCOP images and held-out maps.
//!
//! MCOP layout (all little-endian):
//!
//! ```text
//! "MCOP" | u16 version = 1 | u32 W | u32 H | u8 flags (bit 0: wrap)
//! R, G, B, depth planes   W*H f32 each, row-major
//! rotation plane          W*H f64, row-major
//! mask                    W*H bits, row-major, LSB first, padded to a byte
//! ```
//!
//! Held-out sidecar: `"MHLD" | u32 W | u32 H | packed bits`.

use std::path::Path;

use crate::error::{ContainerError, Error, Result};
use crate::image::{BitMask, McopImage};

pub const MCOP_MAGIC: [u8; 4] = *b"MCOP";
pub const MCOP_VERSION: u16 = 1;
pub const HELD_OUT_MAGIC: [u8; 4] = *b"MHLD";

const FLAG_WRAP: u8 = 1;

pub(crate) fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// Little-endian reader over an in-memory container.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ContainerError> {
        if self.pos + n > self.bytes.len() {
            return Err(ContainerError::SizeMismatch {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> std::result::Result<(), ContainerError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(ContainerError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> std::result::Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, ContainerError> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, ContainerError> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn bits(&mut self, n: usize) -> std::result::Result<Vec<bool>, ContainerError> {
        let bytes = self.take(n.div_ceil(8))?;
        Ok(unpack_bits(bytes, n))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn mcop_payload_len(width: usize, height: usize) -> u64 {
    let n = (width * height) as u64;
    4 * 4 * n + 8 * n + n.div_ceil(8)
}

/// Serialize an image. Refuses images that break a channel invariant.
pub fn encode_mcop(image: &McopImage) -> Result<Vec<u8>> {
    image.validate()?;
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::with_capacity(15 + mcop_payload_len(w, h) as usize);
    out.extend_from_slice(&MCOP_MAGIC);
    out.extend_from_slice(&MCOP_VERSION.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.push(if image.wraps() { FLAG_WRAP } else { 0 });
    use crate::image::Channel::*;
    for ch in [Red, Green, Blue, Depth] {
        for v in image.plane(ch) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in image.rotation_plane() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&pack_bits(image.mask()));
    Ok(out)
}

pub fn decode_mcop(bytes: &[u8]) -> std::result::Result<McopImage, DecodeError> {
    let image = decode_mcop_unchecked(bytes)?;
    image.validate().map_err(DecodeError::Invalid)?;
    Ok(image)
}

/// Decode the framing only; channel invariants are left to the caller.
pub(crate) fn decode_mcop_unchecked(bytes: &[u8]) -> std::result::Result<McopImage, ContainerError> {
    let mut r = Reader::new(bytes);
    r.magic(MCOP_MAGIC)?;
    let version = r.u16()?;
    if version != MCOP_VERSION {
        return Err(ContainerError::VersionMismatch {
            expected: MCOP_VERSION,
            found: version,
        });
    }
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let flags = r.u8()?;
    let expected = mcop_payload_len(width, height);
    if r.remaining() as u64 != expected {
        return Err(ContainerError::SizeMismatch {
            expected,
            found: r.remaining() as u64,
        });
    }
    let n = width * height;
    let planes = [r.f32s(n)?, r.f32s(n)?, r.f32s(n)?, r.f32s(n)?];
    let rotation = r.f64s(n)?;
    let mask = r.bits(n)?;
    Ok(McopImage::from_raw_unchecked(
        width,
        height,
        flags & FLAG_WRAP != 0,
        planes,
        rotation,
        mask,
    ))
}

/// Decoding fails either on the container framing or on image invariants.
#[derive(Debug)]
pub enum DecodeError {
    Container(ContainerError),
    Invalid(Error),
}

impl From<ContainerError> for DecodeError {
    fn from(e: ContainerError) -> Self {
        DecodeError::Container(e)
    }
}

impl DecodeError {
    pub(crate) fn at(self, path: &Path) -> Error {
        match self {
            DecodeError::Container(source) => Error::Container {
                path: path.to_path_buf(),
                source,
            },
            DecodeError::Invalid(e) => e,
        }
    }
}

pub fn write_mcop(image: &McopImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mcop(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mcop(path: impl AsRef<Path>) -> Result<McopImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mcop(&bytes).map_err(|e| e.at(path))
}

pub fn encode_held_out(map: &BitMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + map.bits().len().div_ceil(8));
    out.extend_from_slice(&HELD_OUT_MAGIC);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&pack_bits(map.bits()));
    out
}

pub fn decode_held_out(bytes: &[u8]) -> std::result::Result<BitMask, ContainerError> {
    let mut r = Reader::new(bytes);
    r.magic(HELD_OUT_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let n = width * height;
    if r.remaining() != n.div_ceil(8) {
        return Err(ContainerError::SizeMismatch {
            expected: n.div_ceil(8) as u64,
            found: r.remaining() as u64,
        });
    }
    let bits = r.bits(n)?;
    Ok(BitMask::from_bits(width, height, bits).expect("length checked"))
}

pub fn write_held_out(map: &BitMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_held_out(map)).map_err(|e| Error::io(path, e))
}

pub fn read_held_out(path: impl AsRef<Path>) -> Result<BitMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_held_out(&bytes).map_err(|source| Error::Container {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_image() -> McopImage {
        let mut img = McopImage::new_unknown(2, 2, false);
        img.set_known(0, 0, [0.1, 0.2, 0.3], 1.5);
        img.set_known(1, 0, [0.4, 0.5, 0.6], 2.5);
        img.set_known(0, 1, [0.7, 0.8, 0.9], 3.5);
        img.set_known(1, 1, [1.0, 0.0, 0.5], 4.5);
        for row in 0..2 {
            for col in 0..2 {
                img.set_rotation(col, row, std::f64::consts::FRAC_PI_2);
            }
        }
        img
    }

    #[test]
    fn two_by_two_round_trip_is_bitwise() {
        let img = small_image();
        let bytes = encode_mcop(&img).unwrap();
        let back = decode_mcop(&bytes).unwrap();
        assert_eq!(encode_mcop(&back).unwrap(), bytes);
        assert_eq!(back, img);
    }

    #[test]
    fn swapped_magic_is_rejected() {
        let mut bytes = encode_mcop(&small_image()).unwrap();
        bytes[..4].copy_from_slice(b"MCPO");
        assert!(matches!(
            decode_mcop(&bytes),
            Err(DecodeError::Container(ContainerError::BadMagic { .. }))
        ));
    }

    #[test]
    fn version_and_size_are_checked() {
        let mut bytes = encode_mcop(&small_image()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_mcop(&bytes),
            Err(DecodeError::Container(ContainerError::VersionMismatch { found: 2, .. }))
        ));
        let mut bytes = encode_mcop(&small_image()).unwrap();
        bytes.pop();
        assert!(matches!(
            decode_mcop(&bytes),
            Err(DecodeError::Container(ContainerError::SizeMismatch { .. }))
        ));
    }

    #[test]
    fn infinite_depth_under_known_mask_is_refused() {
        let img = small_image();
        let mut planes = [
            img.plane(crate::image::Channel::Red).to_vec(),
            img.plane(crate::image::Channel::Green).to_vec(),
            img.plane(crate::image::Channel::Blue).to_vec(),
            img.plane(crate::image::Channel::Depth).to_vec(),
        ];
        planes[3][0] = f32::INFINITY;
        let broken = McopImage::from_raw_unchecked(
            2,
            2,
            false,
            planes,
            img.rotation_plane().to_vec(),
            vec![true; 4],
        );
        assert!(matches!(encode_mcop(&broken), Err(Error::Invariant(_))));
    }

    #[test]
    fn held_out_round_trip() {
        let mut map = BitMask::new(11, 3, false);
        map.set(10, 2, true);
        map.set(0, 1, true);
        let back = decode_held_out(&encode_held_out(&map)).unwrap();
        assert_eq!(back, map);
    }
}
