//! Reader for the IDX binary format used by the MNIST distribution.
//!
//! Images file: magic 0x00000803, then n/rows/cols as big-endian u32, then
//! n*rows*cols unsigned bytes. Labels file: magic 0x00000801, then n, then
//! n bytes. Any truncation or trailing garbage is a format error; nothing
//! partial is ever returned.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (pixels, n_images, rows, cols) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != n_images {
        return Err(Error::Inconsistent(format!(
            "{} images but {} labels",
            n_images,
            labels.len()
        )));
    }
    let dim = rows * cols;
    let inputs: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(inputs, dim, labels, classes)
}

fn read_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, IMAGES_MAGIC, path)?;
    let n = read_be_u32(&mut r, path)? as usize;
    let rows = read_be_u32(&mut r, path)? as usize;
    let cols = read_be_u32(&mut r, path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!(
            "{}: zero-sized image dimensions {rows}x{cols}",
            path.display()
        )));
    }
    let pixels = read_exact_payload(&mut r, n * rows * cols, path)?;
    Ok((pixels, n, rows, cols))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, LABELS_MAGIC, path)?;
    let n = read_be_u32(&mut r, path)? as usize;
    let bytes = read_exact_payload(&mut r, n, path)?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

fn expect_magic(r: &mut impl Read, want: u32, path: &Path) -> Result<()> {
    let got = read_be_u32(r, path)?;
    if got != want {
        return Err(Error::Format(format!(
            "{}: magic 0x{got:08x}, expected 0x{want:08x}",
            path.display()
        )));
    }
    Ok(())
}

fn read_be_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    Ok(u32::from_be_bytes(buf))
}

fn read_exact_payload(r: &mut impl Read, len: usize, path: &Path) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(buf),
        Ok(_) => Err(Error::Format(format!(
            "{}: trailing bytes after declared payload",
            path.display()
        ))),
        Err(e) => Err(Error::Io(e)),
    }
}
