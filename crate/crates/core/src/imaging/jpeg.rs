//! Baseline JPEG round trip with pinned settings: sequential DCT, 4:2:0
//! chroma subsampling, standard Huffman tables, and the Annex K quantization
//! tables scaled by the conventional quality mapping.

use jpeg_encoder::{ColorType, Encoder, QuantizationTableType, SamplingFactor};

use super::{Image, ImagingError};

/// Annex K luminance table, natural (row-major) order.
pub const BASE_LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance table, natural (row-major) order.
pub const BASE_CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

fn check_quality(quality: u8) -> Result<(), ImagingError> {
    if (1..=100).contains(&quality) {
        Ok(())
    } else {
        Err(ImagingError::InvalidParameter(format!(
            "jpeg quality {quality} outside 1..=100"
        )))
    }
}

/// Percentage applied to the base tables: `5000/Q` below 50, `200 - 2Q`
/// from 50 up.
pub fn quality_scale(quality: u8) -> u32 {
    let q = u32::from(quality.clamp(1, 100));
    if q < 50 {
        5000 / q
    } else {
        200 - 2 * q
    }
}

/// `clamp(round(base * scale / 100), 1, 255)` per entry.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let scale = quality_scale(quality);
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        let v = (u32::from(b) * scale + 50) / 100;
        *o = v.clamp(1, 255) as u16;
    }
    out
}

pub fn encode_jpeg(img: &Image, quality: u8) -> Result<Vec<u8>, ImagingError> {
    check_quality(quality)?;
    let width = u16::try_from(img.width())
        .map_err(|_| ImagingError::Encode(format!("width {} exceeds JPEG limit", img.width())))?;
    let height = u16::try_from(img.height())
        .map_err(|_| ImagingError::Encode(format!("height {} exceeds JPEG limit", img.height())))?;

    let mut out = Vec::new();
    let mut encoder = Encoder::new(&mut out, quality);
    encoder.set_sampling_factor(SamplingFactor::R_4_2_0);
    encoder.set_progressive(false);
    encoder.set_optimized_huffman_tables(false);
    encoder.set_quantization_tables(
        QuantizationTableType::Custom(Box::new(scaled_table(&BASE_LUMA_TABLE, quality))),
        QuantizationTableType::Custom(Box::new(scaled_table(&BASE_CHROMA_TABLE, quality))),
    );
    encoder
        .encode(img.data(), width, height, ColorType::Rgb)
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn decode_jpeg(bytes: &[u8]) -> Result<Image, ImagingError> {
    let dynamic = image::load_from_memory_with_format(bytes, image::ImageFormat::Jpeg)
        .map_err(|e| ImagingError::Decode(e.to_string()))?;
    let rgb = dynamic.into_rgb8();
    let (w, h) = rgb.dimensions();
    Image::new(w, h, rgb.into_raw())
}

/// Encodes at `quality` and decodes back to RGB.
pub fn jpeg_recompress(img: &Image, quality: u8) -> Result<Image, ImagingError> {
    let bytes = encode_jpeg(img, quality)?;
    let out = decode_jpeg(&bytes)?;
    debug_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
    Ok(out)
}
