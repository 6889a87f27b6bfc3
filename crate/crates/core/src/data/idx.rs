//! IDX binary files (big-endian header, unsigned byte payload).

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// A stack of 8-bit grayscale images stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn header(bytes: &[u8], words: usize) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::Format(format!(
            "IDX header needs {} bytes, file has {}",
            4 * words,
            bytes.len()
        )));
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "bad IDX magic {found:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], offset: usize, expected: usize) -> Result<()> {
    let found = bytes.len() - offset;
    if found != expected {
        return Err(Error::Format(format!(
            "IDX payload is {found} bytes, header implies {expected}"
        )));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let h = header(bytes, 4)?;
    check_magic(h[0], IMAGE_MAGIC)?;
    let (count, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    check_payload(bytes, 16, count * rows * cols)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let h = header(bytes, 2)?;
    check_magic(h[0], LABEL_MAGIC)?;
    check_payload(bytes, 8, h[1] as usize)?;
    Ok(bytes[8..].to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&fsio::read(path)?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&fsio::read(path)?)
}
