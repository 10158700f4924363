//! Image montages: rows of equally sized cells on a white background.

use anyhow::{bail, Result};
use wipu_core::engine::Tensor;

pub const SEPARATOR_PX: usize = 2;

/// Lays `rows[r][c]` out row by row with white separators between cells.
/// Cells are `(1,3,h,w)`; smaller images sit in the top-left of their cell.
pub fn montage(rows: &[Vec<Tensor>]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        bail!("montage needs a non-empty rectangular grid of images");
    }
    let cell_h = rows.iter().flatten().map(Tensor::h).max().unwrap_or(0);
    let cell_w = rows.iter().flatten().map(Tensor::w).max().unwrap_or(0);
    let h = rows.len() * cell_h + (rows.len() - 1) * SEPARATOR_PX;
    let w = cols * cell_w + (cols - 1) * SEPARATOR_PX;
    let mut data = vec![1.0f32; 3 * h * w];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.shape()[..2] != [1, 3] {
                bail!("montage cell ({r},{c}) has shape {:?}", img.shape());
            }
            let (top, left) = (r * (cell_h + SEPARATOR_PX), c * (cell_w + SEPARATOR_PX));
            for ch in 0..3 {
                for y in 0..img.h() {
                    for x in 0..img.w() {
                        data[(ch * h + top + y) * w + left + x] = img.at(0, ch, y, x).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(Tensor::new([1, 3, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_separators() {
        let black = Tensor::zeros([1, 3, 4, 5]);
        let grid = montage(&[vec![black.clone(), black.clone()], vec![black.clone(), black]]).unwrap();
        assert_eq!(grid.shape(), [1, 3, 10, 12]);
        for y in 0..10 {
            for x in 0..12 {
                let sep = (4..6).contains(&y) || (5..7).contains(&x);
                assert_eq!(grid.at(0, 1, y, x), if sep { 1.0 } else { 0.0 }, "({y},{x})");
            }
        }
    }

    #[test]
    fn ragged_grids_are_rejected() {
        let a = Tensor::zeros([1, 3, 2, 2]);
        assert!(montage(&[vec![a.clone()], vec![a.clone(), a]]).is_err());
        assert!(montage(&[]).is_err());
    }
}
