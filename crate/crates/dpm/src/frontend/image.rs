//! 8-bit image container with binary PGM/PPM decode and encode.

use std::fs;
use std::io::{self};
use std::path::Path;

use thiserror::Error;

use crate::bytes::write_file_atomic;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("unsupported magic number {0:?} (expected P5 or P6)")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image data length {len} does not match {width}x{height}x{channels}")]
    BadDimensions {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("image {width}x{height} is too small (minimum 8x8)")]
    TooSmall { width: usize, height: usize },
}

/// Row-major 8-bit image, grayscale (1 channel) or RGB (3 channels,
/// interleaved).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Image, ImageError> {
        if data.len() != width * height * channels {
            return Err(ImageError::BadDimensions {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Image, ImageError> {
        Image::new(width, height, 1, data)
    }

    /// Luma plane of the image. RGB converts with ITU-R BT.601 weights;
    /// grayscale input is returned as-is.
    pub fn to_luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            data.push((y + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Expand to 3 interleaved channels (grayscale copied to each).
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for &v in &self.data {
            data.extend_from_slice(&[v, v, v]);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    #[inline]
    pub fn gray_at(&self, x: usize, y: usize) -> u8 {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x]
    }

    /// Resize a grayscale image with bilinear interpolation. Sample positions
    /// are pixel centers; source coordinates clamp at the borders; output
    /// values round half up.
    pub fn resize_bilinear(&self, new_width: usize, new_height: usize) -> Image {
        debug_assert_eq!(self.channels, 1);
        assert!(new_width > 0 && new_height > 0);
        if new_width == self.width && new_height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let mut data = Vec::with_capacity(new_width * new_height);
        for dy in 0..new_height {
            let fy = (dy as f64 + 0.5) * sy - 0.5;
            let y0f = fy.floor();
            let ty = fy - y0f;
            let y0 = (y0f.max(0.0) as usize).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let y0 = if fy < 0.0 { 0 } else { y0 };
            for dx in 0..new_width {
                let fx = (dx as f64 + 0.5) * sx - 0.5;
                let x0f = fx.floor();
                let tx = fx - x0f;
                let x0 = (x0f.max(0.0) as usize).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let x0 = if fx < 0.0 { 0 } else { x0 };

                let p00 = self.gray_at(x0, y0) as f64;
                let p10 = self.gray_at(x1, y0) as f64;
                let p01 = self.gray_at(x0, y1) as f64;
                let p11 = self.gray_at(x1, y1) as f64;
                let v = (1.0 - ty) * ((1.0 - tx) * p00 + tx * p10)
                    + ty * ((1.0 - tx) * p01 + tx * p11);
                data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
        Image {
            width: new_width,
            height: new_height,
            channels: 1,
            data,
        }
    }

    /// Encode as binary PNM: P5 for grayscale, P6 for RGB.
    pub fn to_pnm_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{}\n{} {}\n255\n", magic, self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_pnm(&self, path: &Path) -> Result<(), ImageError> {
        write_file_atomic(path, &self.to_pnm_bytes()).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Decode a binary PGM (P5) or PPM (P6) file with maxval 255.
pub fn load_image(path: &Path) -> Result<Image, ImageError> {
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_pnm(&bytes)
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)
        .ok_or_else(|| ImageError::MalformedHeader("missing magic number".into()))?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(ImageError::UnsupportedFormat(other.to_string())),
    };
    let width = parse_dim(bytes, &mut pos, "width")?;
    let height = parse_dim(bytes, &mut pos, "height")?;
    let maxval = parse_dim(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(ImageError::MalformedHeader(format!(
            "maxval {maxval} unsupported (expected 255)"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::MalformedHeader(
            "missing whitespace before pixel data".into(),
        ));
    }
    pos += 1;
    let expected = width * height * channels;
    let found = bytes.len() - pos;
    if found < expected {
        return Err(ImageError::Truncated { expected, found });
    }
    Image::new(width, height, channels, bytes[pos..pos + expected].to_vec())
}

fn parse_dim(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, ImageError> {
    let tok = next_token(bytes, pos)
        .ok_or_else(|| ImageError::MalformedHeader(format!("missing {what}")))?;
    let v: usize = tok
        .parse()
        .map_err(|_| ImageError::MalformedHeader(format!("bad {what} {tok:?}")))?;
    if what != "maxval" && v == 0 {
        return Err(ImageError::MalformedHeader(format!("{what} is zero")));
    }
    Ok(v)
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    } else {
        None
    }
}
