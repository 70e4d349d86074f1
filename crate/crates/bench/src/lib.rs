//! Synthetic inputs for the benchmarks.

use qimr_core::image_io::GrayImage;

/// Garment-like test images: a bright blob on a dark background with
/// xorshift texture, deterministic in `seed`.
pub fn synthetic_images(count: usize, n: u32, seed: u64) -> Vec<GrayImage> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let side = 1usize << n;
    (0..count)
        .map(|_| {
            let cy = (next() % side as u64) as f64;
            let cx = (next() % side as u64) as f64;
            let r = side as f64 * (0.25 + (next() % 100) as f64 / 400.0);
            GrayImage::from_fn(n, |y, x| {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                if d < r {
                    (150 + next() % 100) as u8
                } else {
                    (next() % 8) as u8
                }
            })
        })
        .collect()
}

/// Alternating `+1/-1` labels.
pub fn alternating_labels(count: usize) -> Vec<i8> {
    (0..count)
        .map(|i| if i % 2 == 0 { 1 } else { -1 })
        .collect()
}
