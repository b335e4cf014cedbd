//! Binary PGM (P5) image grids.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `round(clamp(v, 0, 1)·255)` with halves rounded up.
pub fn to_byte(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Tiles `images` (one `height·width` image per row) row-major into a
/// `rows × cols` grid. Unused cells stay black.
pub fn encode_grid(
    images: &Tensor,
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
) -> Result<Vec<u8>> {
    let m = images.rows();
    if images.rank() != 2 || images.cols() != height * width {
        return Err(Error::Shape {
            op: "write_image_grid",
            lhs: images.shape().to_vec(),
            rhs: vec![height * width],
        });
    }
    if m > rows * cols {
        return Err(Error::invalid(format!(
            "{m} images do not fit a {rows}×{cols} grid"
        )));
    }
    let (gw, gh) = (width * cols, height * rows);
    let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + gw * gh, 0);
    for k in 0..m {
        let (r0, c0) = ((k / cols) * height, (k % cols) * width);
        let img = images.row(k);
        for y in 0..height {
            for x in 0..width {
                out[header + (r0 + y) * gw + c0 + x] = to_byte(img[y * width + x]);
            }
        }
    }
    Ok(out)
}

pub fn write_image_grid(
    images: &Tensor,
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<()> {
    let bytes = encode_grid(images, height, width, rows, cols)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_image() {
        let img = Tensor::ones(vec![1, 4]);
        let bytes = encode_grid(&img, 2, 2, 1, 1).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[255; 4]);
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(-3.0), 0);
        assert_eq!(to_byte(7.0), 255);
        assert_eq!(to_byte(1.0 / 255.0), 1);
    }

    #[test]
    fn grid_size_and_black_cells() {
        let imgs = Tensor::full(vec![3, 6], 1.0);
        let bytes = encode_grid(&imgs, 2, 3, 2, 2).unwrap();
        let header = b"P5\n6 4\n255\n".len();
        assert_eq!(bytes.len(), header + 6 * 4);
        // bottom-right cell is empty
        assert_eq!(bytes[header + 3 * 6 + 5], 0);
        assert_eq!(bytes[header + 3 * 6], 255);
        assert!(encode_grid(&imgs, 2, 3, 1, 2).is_err());
    }
}
