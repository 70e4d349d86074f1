//! Classical numerical forms of the four image states.
//!
//! Pixel order is row-major (`y * 2^n + x`) everywhere except [`RealKet`],
//! which is stored in quadrant order: the flat index is the base-4 number
//! `(i_1 - 1)(i_2 - 1)...(i_n - 1)` with `i_1` the coarsest quadrant and the
//! most significant digit. Quadrant labels are 1-based (1 upper-left,
//! 2 upper-right, 3 lower-left, 4 lower-right); storage is 0-based.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::image_io::GrayImage;

/// Bit depth used for 8-bit grayscale.
pub const GRAY_BITS: u32 = 8;

/// FRQI colour angles, one per pixel in `[0, pi/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrqiAngles {
    n: u32,
    angles: Vec<f64>,
}

impl FrqiAngles {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// The full `2^(2n+1)` amplitude vector: colour qubit as the high bit,
    /// position register as the low bits.
    pub fn state_vector(&self) -> Vec<f64> {
        let len = self.angles.len();
        let norm = 1.0 / ((1u64 << self.n) as f64);
        let mut v = vec![0.0; 2 * len];
        for (i, &t) in self.angles.iter().enumerate() {
            v[i] = norm * t.cos();
            v[len + i] = norm * t.sin();
        }
        v
    }
}

/// Maps intensity `I` to the angle `(pi/2) * I / 255`.
#[inline]
pub fn intensity_to_angle(intensity: u8) -> f64 {
    FRAC_PI_2 * intensity as f64 / 255.0
}

pub fn encode_frqi(img: &GrayImage) -> FrqiAngles {
    FrqiAngles {
        n: img.n(),
        angles: img
            .pixels()
            .iter()
            .map(|&p| intensity_to_angle(p))
            .collect(),
    }
}

/// NEQR basis-state image: every pixel keeps its exact `q`-bit value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NeqrImage {
    n: u32,
    q: u32,
    values: Vec<u8>,
}

impl NeqrImage {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// The colour register of pixel `(y, x)`, most significant bit first.
    pub fn bit_string(&self, y: usize, x: usize) -> String {
        let v = self.values[(y << self.n) + x];
        format!("{:0width$b}", v, width = self.q as usize)
    }

    pub fn decode(&self) -> GrayImage {
        GrayImage::new(self.n, self.values.clone()).expect("NEQR image has a valid shape")
    }

    /// Index of the single basis state pixel `i` occupies in the
    /// `2^(q + 2n)` space: colour register high, position register low.
    pub fn basis_index(&self, i: usize) -> usize {
        ((self.values[i] as usize) << (2 * self.n)) | i
    }
}

pub fn encode_neqr(img: &GrayImage) -> NeqrImage {
    NeqrImage {
        n: img.n(),
        q: GRAY_BITS,
        values: img.pixels().to_vec(),
    }
}

/// QPIE amplitudes `c_i = I_i / sqrt(sum I_j^2)` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct QpieAmplitudes {
    n: u32,
    amplitudes: Vec<f64>,
}

impl QpieAmplitudes {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }
}

fn normalized_intensities(pixels: &[u8]) -> Result<Vec<f64>> {
    let sq: u64 = pixels.iter().map(|&p| (p as u64) * (p as u64)).sum();
    if sq == 0 {
        return Err(Error::ZeroNorm);
    }
    let norm = (sq as f64).sqrt();
    Ok(pixels.iter().map(|&p| p as f64 / norm).collect())
}

pub fn encode_qpie(img: &GrayImage) -> Result<QpieAmplitudes> {
    Ok(QpieAmplitudes {
        n: img.n(),
        amplitudes: normalized_intensities(img.pixels())?,
    })
}

/// Real-ket amplitudes in quadrant order (see module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct RealKet {
    n: u32,
    amplitudes: Vec<f64>,
}

impl RealKet {
    /// Wraps amplitudes already in quadrant order. They must have unit norm.
    pub fn from_amplitudes(n: u32, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != 1usize << (2 * n) {
            return Err(Error::Length(format!(
                "{} amplitudes for n = {n}, expected {}",
                amplitudes.len(),
                1usize << (2 * n)
            )));
        }
        let norm: f64 = amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Numerical(format!("ket norm {norm} is not 1")));
        }
        Ok(Self { n, amplitudes })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// Amplitude at the 1-based multi-index `(i_1, ..., i_n)`, coarsest first.
    pub fn amplitude(&self, index: &[u8]) -> Option<f64> {
        if index.len() != self.n as usize || index.iter().any(|&i| !(1..=4).contains(&i)) {
            return None;
        }
        let flat = index
            .iter()
            .fold(0usize, |acc, &i| acc * 4 + (i - 1) as usize);
        Some(self.amplitudes[flat])
    }

    /// Amplitudes rearranged into row-major pixel order.
    pub fn to_row_major(&self) -> Vec<f64> {
        let side = 1usize << self.n;
        let mut out = vec![0.0; side * side];
        for (flat, &a) in self.amplitudes.iter().enumerate() {
            let (y, x) = quadrant_position(self.n, flat);
            out[y * side + x] = a;
        }
        out
    }
}

/// Quadrant multi-index `(i_1, ..., i_n)` of pixel `(y, x)`, 1-based, with
/// `i_k = 2 y_k + x_k + 1` built from the k-th most significant bits.
pub fn quadrant_index(n: u32, y: usize, x: usize) -> Vec<u8> {
    (1..=n)
        .map(|k| {
            let shift = n - k;
            let yb = (y >> shift) & 1;
            let xb = (x >> shift) & 1;
            (2 * yb + xb + 1) as u8
        })
        .collect()
}

/// Flat 0-based quadrant-order position of pixel `(y, x)`: the bits of `y`
/// and `x` interleaved, `y` taking the higher bit of every pair.
#[inline]
pub fn quadrant_flat(n: u32, y: usize, x: usize) -> usize {
    let mut flat = 0usize;
    for k in (0..n).rev() {
        flat = (flat << 2) | (((y >> k) & 1) << 1) | ((x >> k) & 1);
    }
    flat
}

/// Pixel `(y, x)` stored at a flat quadrant-order position.
#[inline]
pub fn quadrant_position(n: u32, flat: usize) -> (usize, usize) {
    let (mut y, mut x) = (0usize, 0usize);
    for k in (0..n).rev() {
        let digit = (flat >> (2 * k)) & 3;
        y = (y << 1) | (digit >> 1);
        x = (x << 1) | (digit & 1);
    }
    (y, x)
}

pub fn encode_realket(img: &GrayImage) -> Result<RealKet> {
    let n = img.n();
    let side = img.side();
    let normalized = normalized_intensities(img.pixels())?;
    let mut amplitudes = vec![0.0; normalized.len()];
    for y in 0..side {
        for x in 0..side {
            amplitudes[quadrant_flat(n, y, x)] = normalized[y * side + x];
        }
    }
    Ok(RealKet { n, amplitudes })
}
