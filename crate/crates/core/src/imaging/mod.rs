//! Perturbation and preprocessing transforms over 8-bit RGB images.

mod blur;
mod chain;
mod geometry;
mod jpeg;

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use blur::{gaussian_blur, gaussian_kernel, kernel_radius, reflect_index};
pub use chain::{apply_chain, ChainParseError, TransformChain, TransformSpec, IDENTITY_CHAIN_ID};
pub use geometry::{center_crop, center_crop_origin, random_crop, random_crop_origin, resize};
pub use jpeg::{
    decode_jpeg, encode_jpeg, jpeg_recompress, quality_scale, scaled_table, BASE_CHROMA_TABLE, BASE_LUMA_TABLE,
};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid image dimensions {width}x{height} for {len} bytes")]
    InvalidDimensions { width: u32, height: u32, len: usize },
    #[error("crop exceeds bounds: {crop_w}x{crop_h} from {width}x{height}")]
    CropExceedsBounds {
        crop_w: u32,
        crop_h: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid transform parameter: {0}")]
    InvalidParameter(String),
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("encode failed: {0}")]
    Encode(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major interleaved RGB, 8 bits per sample.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImagingError> {
        let expected = width as usize * height as usize * Self::CHANNELS;
        if width == 0 || height == 0 || data.len() != expected {
            return Err(ImagingError::InvalidDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from a per-pixel function. Panics on zero dimensions.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Decodes PNG or JPEG bytes. Alpha is dropped; grayscale is expanded.
    pub fn decode(bytes: &[u8]) -> Result<Self, ImagingError> {
        let dynamic = image::load_from_memory(bytes).map_err(|e| ImagingError::Decode(e.to_string()))?;
        let rgb = dynamic.into_rgb8();
        let (width, height) = rgb.dimensions();
        Self::new(width, height, rgb.into_raw())
    }

    pub fn load(path: &Path) -> Result<Self, ImagingError> {
        let bytes = std::fs::read(path).map_err(|source| ImagingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            encoder,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|source| ImagingError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// SHA-256 over the dimensions (little-endian u32 width, height) followed
    /// by the sample bytes.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(&self.data);
        hasher.finalize().into()
    }
}
