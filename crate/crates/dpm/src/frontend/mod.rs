//! Image ingest, scale pyramid construction, and cell feature extraction.

mod hog;
mod image;

use thiserror::Error;

pub use self::hog::{compute_cell_features, quantize_features};
pub use self::image::{decode_pnm, load_image, Image, ImageError};
use crate::math::{Vec13, DIM};
use crate::metrics::{CostLedger, Stage};

/// Cell edge length in pixels.
pub const CELL_SIZE: usize = 8;
/// Default fixed-point scale: the 0.2 clip bound lands around 40% of the
/// 11-bit range, leaving headroom for the texture components.
pub const DEFAULT_QUANTIZER_SCALE: f64 = 4096.0;

/// Multiplications charged per bilinear output pixel (four taps plus the two
/// blend weights).
const MULTS_PER_RESIZED_PIXEL: u64 = 6;
/// Multiplications per pixel of RGB-to-luma conversion.
const MULTS_PER_LUMA_PIXEL: u64 = 3;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid pyramid config: {0}")]
    BadConfig(String),
    #[error("quantizer scale must be positive, got {0}")]
    BadQuantizerScale(f64),
}

/// Scale pyramid shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidConfig {
    /// Number of levels requested (level 0 is full resolution).
    pub levels: usize,
    /// Levels per octave; consecutive octaves halve the resolution.
    pub levels_per_octave: usize,
    /// Cell edge in pixels.
    pub cell_size: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            levels: 12,
            levels_per_octave: 3,
            cell_size: CELL_SIZE,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<(), FrontendError> {
        if self.levels < 1 {
            return Err(FrontendError::BadConfig("levels must be >= 1".into()));
        }
        if self.levels_per_octave < 1 {
            return Err(FrontendError::BadConfig(
                "levels_per_octave must be >= 1".into(),
            ));
        }
        if self.cell_size < 2 {
            return Err(FrontendError::BadConfig("cell_size must be >= 2".into()));
        }
        Ok(())
    }

    /// Scale factor of level `k`: `2^(-k / levels_per_octave)`.
    pub fn scale_of_level(&self, k: usize) -> f64 {
        2f64.powf(-(k as f64) / self.levels_per_octave as f64)
    }
}

/// Grid of 13-D cell features for one pyramid level, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub cols: usize,
    pub rows: usize,
    /// `cols * rows * 13` non-negative reals.
    pub values: Vec<f64>,
    /// Optional 11-bit fixed-point view, same layout.
    pub quantized_values: Option<Vec<u16>>,
}

impl CellGrid {
    pub fn zeroed(cols: usize, rows: usize) -> CellGrid {
        CellGrid {
            cols,
            rows,
            values: vec![0.0; cols * rows * DIM],
            quantized_values: None,
        }
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.cols + x) * DIM;
        &self.values[base..base + DIM]
    }

    #[inline]
    pub fn cell_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let base = (y * self.cols + x) * DIM;
        &mut self.values[base..base + DIM]
    }

    pub fn cell_array(&self, x: usize, y: usize) -> Vec13 {
        let mut out = [0.0; DIM];
        out.copy_from_slice(self.cell(x, y));
        out
    }

    pub fn cell_count(&self) -> usize {
        self.cols * self.rows
    }
}

/// One level of a feature pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub grid: CellGrid,
    /// Scale of this level relative to the input image.
    pub scale: f64,
}

/// Cell features for every retained pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<PyramidLevel>,
    /// Levels per octave the pyramid was built with; a part template scores
    /// one octave below its root level.
    pub levels_per_octave: usize,
    /// Cell edge in pixels, for mapping cells back to image coordinates.
    pub cell_size: usize,
}

impl FeaturePyramid {
    pub fn total_cells(&self) -> usize {
        self.levels.iter().map(|l| l.grid.cell_count()).sum()
    }

    pub fn level(&self, k: usize) -> Option<&PyramidLevel> {
        self.levels.get(k)
    }
}

/// Round half up, for positive values.
#[inline]
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Build the scale pyramid of images.
///
/// Level `k` measures `round(width * 2^(-k/levels_per_octave))` by the same
/// for height (round half up); each level is resampled from the full
/// resolution luma image with bilinear interpolation. Levels narrower or
/// shorter than two cells are dropped, so tiny inputs yield fewer than
/// `cfg.levels` images.
pub fn build_pyramid(img: &Image, cfg: &PyramidConfig) -> Result<Vec<Image>, FrontendError> {
    cfg.validate()?;
    if img.width < 8 || img.height < 8 {
        return Err(FrontendError::Image(ImageError::TooSmall {
            width: img.width,
            height: img.height,
        }));
    }
    let luma = img.to_luma();
    let min_side = cfg.cell_size * 2;
    let mut levels = Vec::with_capacity(cfg.levels);
    for k in 0..cfg.levels {
        let s = cfg.scale_of_level(k);
        let w = round_half_up(img.width as f64 * s);
        let h = round_half_up(img.height as f64 * s);
        if w < min_side || h < min_side {
            break;
        }
        levels.push(luma.resize_bilinear(w, h));
    }
    Ok(levels)
}

/// Build the pyramid and extract cell features from every level, charging
/// feature-generation work and per-level cell counts to the ledger.
pub fn pyramid_features(
    img: &Image,
    cfg: &PyramidConfig,
    ledger: &mut CostLedger,
) -> Result<FeaturePyramid, FrontendError> {
    let images = build_pyramid(img, cfg)?;
    if img.channels == 3 {
        ledger.charge(Stage::Hog, (img.width * img.height) as u64 * MULTS_PER_LUMA_PIXEL);
    }
    let mut levels = Vec::with_capacity(images.len());
    for (k, level_img) in images.iter().enumerate() {
        let pixels = (level_img.width * level_img.height) as u64;
        if k > 0 {
            ledger.charge(Stage::Hog, pixels * MULTS_PER_RESIZED_PIXEL);
        }
        let grid = compute_cell_features(level_img);
        ledger.charge(
            Stage::Hog,
            pixels * hog::MULTS_PER_PIXEL + grid.cell_count() as u64 * hog::MULTS_PER_CELL,
        );
        ledger.cells_per_level.push(grid.cell_count() as u64);
        levels.push(PyramidLevel {
            grid,
            scale: cfg.scale_of_level(k),
        });
    }
    Ok(FeaturePyramid {
        levels,
        levels_per_octave: cfg.levels_per_octave,
        cell_size: cfg.cell_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(width: usize, height: usize, seed: u64) -> Image {
        let mut state = seed | 1;
        let mut data = Vec::with_capacity(width * height);
        for _ in 0..width * height {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            data.push((state >> 24) as u8);
        }
        Image::gray(width, height, data).unwrap()
    }

    #[test]
    fn hd_level_dimensions_follow_the_rounding_rule() {
        let img = noise_image(1920, 1080, 1);
        let levels = build_pyramid(&img, &PyramidConfig::default()).unwrap();
        assert_eq!(levels.len(), 12);
        assert_eq!((levels[0].width, levels[0].height), (1920, 1080));
        // round(1920 * 2^(-1/3)) x round(1080 * 2^(-1/3))
        assert_eq!((levels[1].width, levels[1].height), (1524, 857));
        // Exact octave halving.
        assert_eq!((levels[3].width, levels[3].height), (960, 540));
        assert_eq!((levels[6].width, levels[6].height), (480, 270));
    }

    #[test]
    fn tiny_input_yields_short_pyramid() {
        let img = noise_image(16, 16, 2);
        let levels = build_pyramid(&img, &PyramidConfig::default()).unwrap();
        assert!(levels.len() < 12);
        assert!(!levels.is_empty());
        assert!(build_pyramid(&noise_image(16, 7, 2), &PyramidConfig::default()).is_err());
    }

    #[test]
    fn octave_grids_halve_within_one_cell() {
        let img = noise_image(1920, 1080, 3);
        let mut ledger = CostLedger::new();
        let fp = pyramid_features(&img, &PyramidConfig::default(), &mut ledger).unwrap();
        for k in 3..fp.levels.len() {
            if k % 3 == 0 {
                let fine = &fp.levels[k - 3].grid;
                let coarse = &fp.levels[k].grid;
                assert!((coarse.cols as i64 - fine.cols as i64 / 2).abs() <= 1);
                assert!((coarse.rows as i64 - fine.rows as i64 / 2).abs() <= 1);
            }
        }
    }

    #[test]
    fn hd_pyramid_volume_lands_near_87k() {
        let img = noise_image(1920, 1080, 4);
        let mut ledger = CostLedger::new();
        let fp = pyramid_features(&img, &PyramidConfig::default(), &mut ledger).unwrap();
        assert_eq!(fp.levels[0].grid.cols, 240);
        assert_eq!(fp.levels[0].grid.rows, 135);
        let total = fp.total_cells();
        assert!((84_390..=89_610).contains(&total), "total cells = {total}");
        // Roughly 2.7x the level-0 cells.
        let ratio = total as f64 / fp.levels[0].grid.cell_count() as f64;
        assert!((2.55..=2.75).contains(&ratio), "ratio = {ratio}");
        assert_eq!(ledger.total_cells(), total as u64);
        assert_eq!(ledger.cells_per_level.len(), 12);
    }

    #[test]
    fn volume_ratio_holds_across_input_sizes() {
        for (w, h) in [(1024, 576), (1280, 720), (1111, 603)] {
            let img = noise_image(w, h, (w + h) as u64);
            let mut ledger = CostLedger::new();
            let fp = pyramid_features(&img, &PyramidConfig::default(), &mut ledger).unwrap();
            let ratio = fp.total_cells() as f64 / fp.levels[0].grid.cell_count() as f64;
            assert!((2.55..=2.75).contains(&ratio), "{w}x{h}: ratio = {ratio}");
        }
    }

    #[test]
    fn single_level_config_has_no_extra_cells() {
        let img = noise_image(320, 240, 5);
        let cfg = PyramidConfig {
            levels: 1,
            ..Default::default()
        };
        let mut ledger = CostLedger::new();
        let fp = pyramid_features(&img, &cfg, &mut ledger).unwrap();
        assert_eq!(fp.levels.len(), 1);
        assert_eq!(fp.total_cells(), fp.levels[0].grid.cell_count());
    }

    #[test]
    fn config_validation() {
        let img = noise_image(64, 64, 6);
        for bad in [
            PyramidConfig { levels: 0, ..Default::default() },
            PyramidConfig { levels_per_octave: 0, ..Default::default() },
            PyramidConfig { cell_size: 1, ..Default::default() },
        ] {
            assert!(build_pyramid(&img, &bad).is_err());
        }
    }
}
