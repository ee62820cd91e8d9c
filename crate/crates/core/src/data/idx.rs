//! IDX image/label files (big-endian header, unsigned-byte payload).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(offset, "truncated header"))
}

/// Returns (dims, payload offset) after checking the magic number.
fn parse_header(bytes: &[u8], magic: u32, ndim: usize) -> Result<(Vec<usize>, usize)> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(parse_err(0, format!("bad magic {found:#010x}, expected {magic:#010x}")));
    }
    let dims = (0..ndim)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    if bytes.len() < start + expected {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: {} of {expected} bytes", bytes.len() - start),
        ));
    }
    if bytes.len() > start + expected {
        return Err(parse_err(start + expected, "trailing bytes after payload"));
    }
    Ok((dims, start))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Loads an image/label file pair. Pixels are scaled to [0, 1]; images become
/// `[N, 1, rows, cols]`. Ids are the row positions.
pub fn load_idx(images_path: &Path, labels_path: &Path, classes: usize) -> Result<Dataset> {
    let img = read_all(images_path)?;
    let lab = read_all(labels_path)?;
    let (dims, start) = parse_header(&img, IMAGES_MAGIC, 3)?;
    let (ldims, lstart) = parse_header(&lab, LABELS_MAGIC, 1)?;
    if ldims[0] != dims[0] {
        return Err(parse_err(4, format!("{} images but {} labels", dims[0], ldims[0])));
    }
    let labels: Vec<usize> = lab[lstart..].iter().map(|&b| b as usize).collect();
    if let Some(pos) = labels.iter().position(|&y| y >= classes) {
        return Err(parse_err(
            lstart + pos,
            format!("label {} out of range for {classes} classes", labels[pos]),
        ));
    }
    let data: Vec<f32> = img[start..].iter().map(|&b| b as f32 / 255.0).collect();
    let inputs = Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)?;
    let ids = (0..dims[0] as u64).collect();
    Dataset::new(inputs, labels, ids, classes, Provenance::IdxFile)
}

/// Writes `[N, 1, rows, cols]` (or `[N, rows, cols]`) inputs in [0, 1] as an IDX pair.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let shape = dataset.input_shape();
    let (rows, cols) = match shape {
        [1, r, c] | [r, c] => (*r, *c),
        _ => return Err(Error::Shape(format!("cannot write shape {shape:?} as IDX images"))),
    };
    let n = dataset.len();
    let mut w = BufWriter::new(File::create(images_path)?);
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    let bytes: Vec<u8> = dataset
        .inputs()
        .data()
        .iter()
        .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(labels_path)?);
    w.write_all(&LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(n as u32).to_be_bytes())?;
    let labels: Vec<u8> = dataset.labels().iter().map(|&y| y as u8).collect();
    w.write_all(&labels)?;
    w.flush()?;
    Ok(())
}
