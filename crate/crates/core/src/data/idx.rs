//! IDX (MNIST) files, optionally gzip-compressed.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))
}

/// Parsed IDX payload: dimension sizes and raw bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxFile> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected_magic {
        return Err(Error::Format(format!(
            "{}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}",
            path.display()
        )));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(be_u32(bytes, 4 + 4 * i, path)? as usize);
    }
    let header = 4 + 4 * rank;
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header;
    if actual < expected {
        return Err(Error::Format(format!(
            "{}: truncated payload, expected {expected} bytes, found {actual}",
            path.display()
        )));
    }
    Ok(IdxFile {
        dims,
        data: bytes[header..header + expected].to_vec(),
    })
}

pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxFile> {
    parse_idx(&read_maybe_gz(path)?, expected_magic, path)
}

pub fn encode_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Writes an IDX file, gzip-compressed when the path ends in `.gz`.
pub fn write_idx(path: &Path, magic: u32, dims: &[usize], data: &[u8]) -> Result<()> {
    let bytes = encode_idx(magic, dims, data);
    let out = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads an image file and its label file. Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = read_idx(images, IMAGES_MAGIC)?;
    let lab = read_idx(labels, LABELS_MAGIC)?;
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    if lab.dims[0] != n {
        return Err(Error::Format(format!(
            "count mismatch: {} has {n} images but {} has {} labels",
            images.display(),
            labels.display(),
            lab.dims[0]
        )));
    }
    let pixels = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Dataset {
        images: Tensor::new(vec![n, h * w], pixels)?,
        labels: Some(lab.data.iter().map(|&l| l as usize).collect()),
        split,
        source: images.display().to_string(),
        image_shape: Some((h, w)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 3 * 2).map(|i| (i * 20) as u8).collect();
        for ext in ["", ".gz"] {
            let ip = dir.path().join(format!("img{ext}"));
            let lp = dir.path().join(format!("lab{ext}"));
            write_idx(&ip, IMAGES_MAGIC, &[2, 3, 2], &pixels).unwrap();
            write_idx(&lp, LABELS_MAGIC, &[2], &[7, 1]).unwrap();
            let ds = load_idx(&ip, &lp, Split::Train).unwrap();
            assert_eq!(ds.images.shape(), &[2, 6]);
            let back: Vec<u8> = ds
                .images
                .data()
                .iter()
                .map(|v| (v * 255.0).round() as u8)
                .collect();
            assert_eq!(back, pixels);
            assert_eq!(ds.labels.as_deref(), Some(&[7usize, 1][..]));
            assert_eq!(ds.image_shape, Some((3, 2)));
        }
    }

    #[test]
    fn errors_are_structured() {
        let p = Path::new("x");
        let good = encode_idx(IMAGES_MAGIC, &[1, 2, 2], &[0, 0, 0, 0]);
        let mut bad = good.clone();
        bad[3] = 0x01;
        assert!(parse_idx(&bad, IMAGES_MAGIC, p)
            .unwrap_err()
            .to_string()
            .contains("bad magic"));
        let err = parse_idx(&good[..good.len() - 1], IMAGES_MAGIC, p)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("truncated payload")
                && err.contains("expected 4")
                && err.contains("found 3")
        );
        let black = parse_idx(&good, IMAGES_MAGIC, p).unwrap();
        assert!(black.data.iter().all(|&b| b == 0));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        write_idx(&ip, IMAGES_MAGIC, &[2, 1, 1], &[0, 0]).unwrap();
        write_idx(&lp, LABELS_MAGIC, &[3], &[0, 0, 0]).unwrap();
        assert!(load_idx(&ip, &lp, Split::Test)
            .unwrap_err()
            .to_string()
            .contains("count mismatch"));
    }
}
