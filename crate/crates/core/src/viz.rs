//! Image grids and feature-map tiling.

use candle_core::{DType, Tensor};

use crate::datakit::ImageTensor;
use crate::error::{Error, Result};

/// Lays out `rows` of images on a white canvas; every cell is resized to `cell` x `cell`.
pub fn image_grid(rows: &[Vec<ImageTensor>], cell: usize, pad: usize) -> Result<ImageTensor> {
    let n_rows = rows.len();
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if n_rows == 0 || n_cols == 0 || cell == 0 {
        return Err(Error::InvalidArgument(
            "image grid needs at least one cell".into(),
        ));
    }
    let height = n_rows * cell + (n_rows + 1) * pad;
    let width = n_cols * cell + (n_cols + 1) * pad;
    let mut data = vec![1.0f32; height * width * 3];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let img = if img.height() == cell && img.width() == cell {
                img.clone()
            } else {
                img.resize_square(cell)?
            };
            let (y0, x0) = (pad + r * (cell + pad), pad + c * (cell + pad));
            for y in 0..cell {
                let src = &img.data()[y * cell * 3..(y + 1) * cell * 3];
                let dst = ((y0 + y) * width + x0) * 3;
                data[dst..dst + cell * 3].copy_from_slice(src);
            }
        }
    }
    ImageTensor::new(height, width, data)
}

/// Side length of the square tile layout used for `n` maps.
pub fn tile_columns(n: usize) -> usize {
    (n as f64).sqrt().ceil().max(1.0) as usize
}

/// Tiles the channels of a `[C, H, W]` (or `[1, C, H, W]`) activation as grayscale maps, each
/// min-max normalized to `[0, 1]` (constant maps render black), separated by 1-pixel white gaps.
pub fn feature_grid(maps: &Tensor) -> Result<ImageTensor> {
    let maps = if maps.rank() == 4 {
        maps.squeeze(0)?
    } else {
        maps.clone()
    };
    let (c, h, w) = maps.dims3()?;
    let values: Vec<Vec<Vec<f32>>> = maps.to_dtype(DType::F32)?.to_vec3()?;
    let cols = tile_columns(c);
    let rows = c.div_ceil(cols);
    let gap = 1;
    let height = rows * h + (rows - 1) * gap;
    let width = cols * w + (cols - 1) * gap;
    let mut data = vec![1.0f32; height * width * 3];
    for (k, map) in values.iter().enumerate() {
        let flat = map.iter().flatten();
        let lo = flat.clone().copied().fold(f32::INFINITY, f32::min);
        let hi = flat.copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        let (r, col) = (k / cols, k % cols);
        let (y0, x0) = (r * (h + gap), col * (w + gap));
        for (y, line) in map.iter().enumerate() {
            for (x, v) in line.iter().enumerate() {
                let unit = if span > 0.0 { (v - lo) / span } else { 0.0 };
                let o = ((y0 + y) * width + x0 + x) * 3;
                data[o..o + 3].fill(unit * 2.0 - 1.0);
            }
        }
    }
    ImageTensor::new(height, width, data)
}
