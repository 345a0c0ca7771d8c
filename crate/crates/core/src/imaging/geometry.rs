use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Image, ImagingError};

fn check_crop(img: &Image, w: u32, h: u32) -> Result<(), ImagingError> {
    if w == 0 || h == 0 {
        return Err(ImagingError::InvalidParameter(format!("crop size {w}x{h} must be positive")));
    }
    if w > img.width() || h > img.height() {
        return Err(ImagingError::CropExceedsBounds {
            crop_w: w,
            crop_h: h,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

fn copy_region(img: &Image, x0: u32, y0: u32, w: u32, h: u32) -> Image {
    if (x0, y0, w, h) == (0, 0, img.width(), img.height()) {
        return img.clone();
    }
    let src_row = img.width() as usize * 3;
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for y in y0..y0 + h {
        let start = y as usize * src_row + x0 as usize * 3;
        data.extend_from_slice(&img.data()[start..start + w as usize * 3]);
    }
    Image::new(w, h, data).expect("crop dimensions are positive")
}

/// Origin `(floor((W-w)/2), floor((H-h)/2))`.
pub fn center_crop_origin(width: u32, height: u32, w: u32, h: u32) -> (u32, u32) {
    ((width - w) / 2, (height - h) / 2)
}

pub fn center_crop(img: &Image, w: u32, h: u32) -> Result<Image, ImagingError> {
    check_crop(img, w, h)?;
    let (x0, y0) = center_crop_origin(img.width(), img.height(), w, h);
    Ok(copy_region(img, x0, y0, w, h))
}

fn bounded(draw: u64, n: u32) -> u32 {
    ((u128::from(draw) * u128::from(n)) >> 64) as u32
}

/// Crop origin for [`random_crop`].
///
/// The generator is ChaCha8 with a 256-bit key holding `seed` as
/// little-endian bytes in its first eight bytes (the rest zero). The first
/// 64-bit output picks the x offset and the second the y offset, each mapped
/// onto `0..=W-w` (resp. `0..=H-h`) as `(draw * n) >> 64`.
pub fn random_crop_origin(width: u32, height: u32, w: u32, h: u32, seed: u64) -> (u32, u32) {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    let x = bounded(rng.next_u64(), width - w + 1);
    let y = bounded(rng.next_u64(), height - h + 1);
    (x, y)
}

pub fn random_crop(img: &Image, w: u32, h: u32, seed: u64) -> Result<Image, ImagingError> {
    check_crop(img, w, h)?;
    let (x0, y0) = random_crop_origin(img.width(), img.height(), w, h, seed);
    Ok(copy_region(img, x0, y0, w, h))
}

/// Bilinear resize with half-pixel centers: output sample `x` reads source
/// coordinate `(x + 0.5) * W / w - 0.5`, clamped to the valid range.
pub fn resize(img: &Image, w: u32, h: u32) -> Result<Image, ImagingError> {
    if w == 0 || h == 0 {
        return Err(ImagingError::InvalidParameter(format!("resize target {w}x{h} must be positive")));
    }
    if (w, h) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let xs = sample_positions(img.width(), w);
    let ys = sample_positions(img.height(), h);
    let src_row = img.width() as usize * 3;
    let src = img.data();
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let p = |x: usize, y: usize| f64::from(src[y * src_row + x * 3 + c]);
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(w, h, data)
}

fn sample_positions(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let ratio = f64::from(src) / f64::from(dst);
    let max = f64::from(src - 1);
    (0..dst)
        .map(|i| {
            let s = ((f64::from(i) + 0.5) * ratio - 0.5).clamp(0.0, max);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src as usize - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}
