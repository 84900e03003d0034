//! 13-D gradient-histogram cell features.
//!
//! Each 8x8 pixel cell yields 9 contrast-insensitive orientation bins plus 4
//! texture-energy components:
//!
//! 1. Centered `[-1, 0, 1]` gradients with replicated edge pixels.
//! 2. Magnitude votes over 9 orientation bins spanning [0, 180) degrees; each
//!    vote splits linearly between the two nearest bins (wrapping).
//! 3. Four L2 normalizations per cell, one per 2x2 cell block containing it
//!    (diagonal neighbors clamp to the grid at borders), with 1e-4 added
//!    inside the square root.
//! 4. Outputs 0..8 average the four normalized bins with each term clipped at
//!    0.2; outputs 9..12 are 0.2357 times the sum of the 9 clipped bins under
//!    each normalization.

use super::{CellGrid, FrontendError, Image, CELL_SIZE};

const ORIENTATION_BINS: usize = 9;
const CLIP: f64 = 0.2;
const NORM_EPSILON: f64 = 1e-4;
const TEXTURE_GAIN: f64 = 0.2357;

/// Multiplications charged per input pixel (two squared gradient components
/// and the two-way vote split).
pub(super) const MULTS_PER_PIXEL: u64 = 4;
/// Multiplications charged per output cell (9 energy squares, 9 bins x 4
/// normalizations, 4 texture scalings).
pub(super) const MULTS_PER_CELL: u64 = 49;

/// Compute the cell feature grid of one grayscale pyramid level.
///
/// The grid covers the complete cells only: `floor(width / 8)` columns by
/// `floor(height / 8)` rows. A level smaller than one cell yields an empty
/// grid.
pub fn compute_cell_features(level: &Image) -> CellGrid {
    assert_eq!(level.channels, 1, "cell features expect a grayscale level");
    let cols = level.width / CELL_SIZE;
    let rows = level.height / CELL_SIZE;
    let mut grid = CellGrid::zeroed(cols, rows);
    if cols == 0 || rows == 0 {
        return grid;
    }

    // Orientation histograms, one per cell.
    let mut hist = vec![0.0f64; cols * rows * ORIENTATION_BINS];
    let w = level.width;
    let h = level.height;
    for y in 0..rows * CELL_SIZE {
        for x in 0..cols * CELL_SIZE {
            let left = level.gray_at(x.saturating_sub(1), y) as f64;
            let right = level.gray_at((x + 1).min(w - 1), y) as f64;
            let up = level.gray_at(x, y.saturating_sub(1)) as f64;
            let down = level.gray_at(x, (y + 1).min(h - 1)) as f64;
            let dx = right - left;
            let dy = down - up;
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut theta = dy.atan2(dx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            let t = theta * ORIENTATION_BINS as f64 / std::f64::consts::PI;
            let b0 = t.floor() as usize % ORIENTATION_BINS;
            let frac = t - t.floor();
            let b1 = (b0 + 1) % ORIENTATION_BINS;

            let cell = (y / CELL_SIZE) * cols + x / CELL_SIZE;
            hist[cell * ORIENTATION_BINS + b0] += mag * (1.0 - frac);
            hist[cell * ORIENTATION_BINS + b1] += mag * frac;
        }
    }

    // Gradient energy per cell.
    let mut energy = vec![0.0f64; cols * rows];
    for c in 0..cols * rows {
        let hs = &hist[c * ORIENTATION_BINS..(c + 1) * ORIENTATION_BINS];
        energy[c] = hs.iter().map(|v| v * v).sum();
    }

    let clamp_cell = |i: isize, j: isize| -> f64 {
        let i = i.clamp(0, cols as isize - 1) as usize;
        let j = j.clamp(0, rows as isize - 1) as usize;
        energy[j * cols + i]
    };

    for j in 0..rows {
        for i in 0..cols {
            let hs = &hist[(j * cols + i) * ORIENTATION_BINS..][..ORIENTATION_BINS];
            // The four 2x2 blocks containing this cell, one per diagonal
            // direction, in fixed (NW, NE, SW, SE) order.
            let mut norms = [0.0f64; 4];
            for (n, (sx, sy)) in [(-1, -1), (1, -1), (-1, 1), (1, 1)].into_iter().enumerate() {
                let ii = i as isize;
                let jj = j as isize;
                let block = clamp_cell(ii, jj)
                    + clamp_cell(ii + sx, jj)
                    + clamp_cell(ii, jj + sy)
                    + clamp_cell(ii + sx, jj + sy);
                norms[n] = (block + NORM_EPSILON).sqrt();
            }

            let out = grid.cell_mut(i, j);
            let mut texture = [0.0f64; 4];
            for (b, &hb) in hs.iter().enumerate() {
                let mut acc = 0.0;
                for (n, &norm) in norms.iter().enumerate() {
                    let clipped = (hb / norm).min(CLIP);
                    acc += clipped;
                    texture[n] += clipped;
                }
                out[b] = 0.25 * acc;
            }
            for n in 0..4 {
                out[ORIENTATION_BINS + n] = TEXTURE_GAIN * texture[n];
            }
        }
    }
    grid
}

/// Attach an 11-bit fixed-point view of the features:
/// `q = clamp(round(v * scale), 0, 2047)` per component. The real values stay
/// in place for reference-mode scoring.
pub fn quantize_features(grid: &CellGrid, scale: f64) -> Result<CellGrid, FrontendError> {
    if !(scale > 0.0) {
        return Err(FrontendError::BadQuantizerScale(scale));
    }
    let mut out = grid.clone();
    out.quantized_values = Some(
        grid.values
            .iter()
            .map(|&v| (v * scale).round().clamp(0.0, 2047.0) as u16)
            .collect(),
    );
    Ok(out)
}
