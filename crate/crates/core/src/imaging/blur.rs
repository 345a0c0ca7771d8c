use rayon::prelude::*;

use super::Image;

/// Kernel radius `ceil(3σ)`.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalized 1-D Gaussian weights for offsets `-r..=r`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as i64;
    let denom = 2.0 * sigma * sigma;
    let mut weights: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / denom).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Mirror reflection without repeating the edge sample:
/// `-1 → 1`, `n → n-2`. Offsets beyond one period keep folding.
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    if m < n as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable Gaussian blur, per channel, with mirror padding. Intermediate
/// values stay in f64; the result is rounded and clamped once at the end.
/// `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be finite and >= 0");
    if sigma == 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = kernel_radius(sigma) as i64;
    let w = img.width() as usize;
    let h = img.height() as usize;
    let src = img.data();
    let row_len = w * 3;

    let mut horizontal = vec![0.0f64; w * h * 3];
    horizontal
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, out)| {
            let row = &src[y * row_len..(y + 1) * row_len];
            for x in 0..w {
                let mut acc = [0.0f64; 3];
                for (k, weight) in kernel.iter().enumerate() {
                    let sx = reflect_index(x as i64 + k as i64 - r, w);
                    for c in 0..3 {
                        acc[c] += weight * f64::from(row[sx * 3 + c]);
                    }
                }
                out[x * 3..x * 3 + 3].copy_from_slice(&acc);
            }
        });

    let mut data = vec![0u8; w * h * 3];
    data.par_chunks_mut(row_len).enumerate().for_each(|(y, out)| {
        let mut acc = vec![0.0f64; row_len];
        for (k, weight) in kernel.iter().enumerate() {
            let sy = reflect_index(y as i64 + k as i64 - r, h);
            let src_row = &horizontal[sy * row_len..(sy + 1) * row_len];
            for (a, s) in acc.iter_mut().zip(src_row) {
                *a += weight * s;
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = a.round().clamp(0.0, 255.0) as u8;
        }
    });

    Image::new(img.width(), img.height(), data).expect("blur preserves dimensions")
}
