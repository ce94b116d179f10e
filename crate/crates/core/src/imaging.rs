//! PNG-backed raster I/O: 8-bit RGB core images and grayscale probability
//! heatmaps.
//!
//! Two raster types cross module boundaries: [`ImageRGB`] (stained tissue
//! scans and color annotation masks) and [`Heatmap`] (per-pixel cancer
//! probabilities in `[0, 1]`). Heatmaps are persisted as 8-bit grayscale
//! PNGs with round-half-up quantization, so a save/load round trip moves
//! each probability by at most 1/510.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

/// An 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl fmt::Debug for ImageRGB {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageRGB")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl ImageRGB {
    /// Builds an image from row-major RGB bytes (`height * width * 3` of them).
    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert!(
            data.len() == height * width * 3,
            "ImageRGB::from_raw: expected {} bytes for {}x{} RGB, got {}",
            height * width * 3,
            height,
            width,
            data.len()
        );
        Self { height, width, data }
    }

    /// Builds a solid-color image.
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major RGB bytes.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// The RGB triple at `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Overwrites the RGB triple at `(y, x)`.
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// A per-pixel probability raster with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Heatmap {
    /// Builds a heatmap from row-major probabilities (`height * width` of them).
    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert!(
            data.len() == height * width,
            "Heatmap::from_raw: expected {} values for {}x{}, got {}",
            height * width,
            height,
            width,
            data.len()
        );
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major probabilities.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The probability at `(y, x)`.
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Errors from raster file I/O.
#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    /// The file does not exist.
    #[error("file not found: {path}")]
    FileNotFound { path: PathBuf },
    /// The file exists but is not a PNG this pipeline accepts
    /// (8-bit RGB or RGBA).
    #[error("cannot decode {path}: {detail}")]
    Decode { path: PathBuf, detail: String },
    /// Underlying I/O failure other than a missing file.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, ImagingError> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            ImagingError::FileNotFound { path: path.to_path_buf() }
        } else {
            ImagingError::Io { path: path.to_path_buf(), source: e }
        }
    })
}

/// Decoding runs over an in-memory buffer, so even an "I/O" error from the
/// codec means the data itself ended early or is malformed.
fn decode_err(path: &Path, source: image::ImageError) -> ImagingError {
    let detail = match source {
        image::ImageError::IoError(e) => format!("truncated or malformed PNG: {e}"),
        other => other.to_string(),
    };
    ImagingError::Decode { path: path.to_path_buf(), detail }
}

fn save_err(path: &Path, source: image::ImageError) -> ImagingError {
    match source {
        image::ImageError::IoError(e) => {
            ImagingError::Io { path: path.to_path_buf(), source: e }
        }
        other => ImagingError::Decode {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Loads an 8-bit RGB or RGBA PNG; an alpha channel is discarded.
///
/// Other layouts (16-bit, grayscale) are rejected with a
/// [`ImagingError::Decode`] naming the file.
pub fn load_rgb(path: &Path) -> Result<ImageRGB, ImagingError> {
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| decode_err(path, e))?;
    let (h, w) = (img.height() as usize, img.width() as usize);
    let data = match img {
        DynamicImage::ImageRgb8(buf) => buf.into_raw(),
        DynamicImage::ImageRgba8(buf) => {
            let raw = buf.into_raw();
            let mut rgb = Vec::with_capacity(h * w * 3);
            for px in raw.chunks_exact(4) {
                rgb.extend_from_slice(&px[..3]);
            }
            rgb
        }
        other => {
            return Err(ImagingError::Decode {
                path: path.to_path_buf(),
                detail: format!(
                    "unsupported pixel layout {:?}; expected 8-bit RGB or RGBA",
                    other.color()
                ),
            })
        }
    };
    Ok(ImageRGB::from_raw(h, w, data))
}

/// Saves an image as an 8-bit RGB PNG. `load_rgb` of the result is
/// bit-identical to the input.
pub fn save_rgb(img: &ImageRGB, path: &Path) -> Result<(), ImagingError> {
    image::save_buffer_with_format(
        path,
        img.data(),
        img.width() as u32,
        img.height() as u32,
        image::ColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| save_err(path, e))
}

/// Quantizes a probability to its 8-bit gray level, rounding half up:
/// `floor(p * 255 + 0.5)`. `0.5` maps to `128`.
pub fn quantize_probability(p: f32) -> u8 {
    (p * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Saves a heatmap as an 8-bit grayscale PNG with round-half-up
/// quantization. Reloading and dividing by 255 reproduces each probability
/// within 1/510.
pub fn save_heatmap(map: &Heatmap, path: &Path) -> Result<(), ImagingError> {
    let gray: Vec<u8> = map.data().iter().map(|&p| quantize_probability(p)).collect();
    image::save_buffer_with_format(
        path,
        &gray,
        map.width() as u32,
        map.height() as u32,
        image::ColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| save_err(path, e))
}

/// Loads an 8-bit grayscale PNG as a probability heatmap (gray / 255).
pub fn load_heatmap(path: &Path) -> Result<Heatmap, ImagingError> {
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| decode_err(path, e))?;
    let (h, w) = (img.height() as usize, img.width() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().iter().map(|&g| g as f32 / 255.0).collect();
            Ok(Heatmap::from_raw(h, w, data))
        }
        other => Err(ImagingError::Decode {
            path: path.to_path_buf(),
            detail: format!(
                "unsupported pixel layout {:?}; expected 8-bit grayscale",
                other.color()
            ),
        }),
    }
}
