//! Closed-form quantum kernels, the linear baseline, Gram matrices and their
//! spectral entropies.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encodings::{
    encode_frqi, encode_neqr, encode_qpie, encode_realket, FrqiAngles, NeqrImage, QpieAmplitudes,
};
use crate::error::{Error, Result};
use crate::image_io::GrayImage;
use crate::mps::{decompose, kernel_tnr, MpsState};

/// Symmetry, unit-diagonal and range tolerance for quantum Gram matrices.
pub const GRAM_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted as numerical noise, relative to the
/// mean diagonal entry (1 for quantum kernels).
pub const PSD_TOL: f64 = 1e-8;
/// Normalized eigenvalues below this are treated as exact zeros.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelId {
    Tnr,
    Frqi,
    Neqr,
    Qpie,
    Linear,
}

impl KernelId {
    pub const ALL: [KernelId; 5] = [
        KernelId::Tnr,
        KernelId::Frqi,
        KernelId::Neqr,
        KernelId::Qpie,
        KernelId::Linear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelId::Tnr => "tnr",
            KernelId::Frqi => "frqi",
            KernelId::Neqr => "neqr",
            KernelId::Qpie => "qpie",
            KernelId::Linear => "linear",
        }
    }

    pub fn is_quantum(self) -> bool {
        self != KernelId::Linear
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelId::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown kernel {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageUnit {
    Qubits,
    Bits,
}

/// Memory needed for one `2^n x 2^n` image with `q`-bit intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageCost {
    pub amount: u64,
    pub unit: StorageUnit,
}

impl fmt::Display for StorageCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = match self.unit {
            StorageUnit::Qubits => "qubits",
            StorageUnit::Bits => "bits",
        };
        write!(f, "{} {unit}", self.amount)
    }
}

pub fn storage_cost(kernel: KernelId, n: u32, q: u32) -> StorageCost {
    let n = n as u64;
    let q = q as u64;
    match kernel {
        KernelId::Tnr | KernelId::Frqi => StorageCost {
            amount: 2 * n + 1,
            unit: StorageUnit::Qubits,
        },
        KernelId::Neqr => StorageCost {
            amount: 2 * n + q,
            unit: StorageUnit::Qubits,
        },
        KernelId::Qpie => StorageCost {
            amount: 2 * n,
            unit: StorageUnit::Qubits,
        },
        KernelId::Linear => StorageCost {
            amount: (1u64 << (2 * n)) * q,
            unit: StorageUnit::Bits,
        },
    }
}

/// `|2^-2n sum_i cos(theta_i - theta'_i)|^2`
pub fn kernel_frqi(a: &FrqiAngles, b: &FrqiAngles) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::arg(format!(
            "FRQI sizes differ: n = {} vs {}",
            a.n(),
            b.n()
        )));
    }
    let s: f64 = a
        .angles()
        .iter()
        .zip(b.angles())
        .map(|(x, y)| (x - y).cos())
        .sum();
    let inner = s / a.angles().len() as f64;
    Ok(inner * inner)
}

/// `(m / 2^2n)^2` with `m` the number of pixels whose values agree exactly.
pub fn kernel_neqr(a: &NeqrImage, b: &NeqrImage) -> Result<f64> {
    if a.n() != b.n() || a.q() != b.q() {
        return Err(Error::arg(format!(
            "NEQR shapes differ: (n, q) = ({}, {}) vs ({}, {})",
            a.n(),
            a.q(),
            b.n(),
            b.q()
        )));
    }
    let m = a
        .values()
        .iter()
        .zip(b.values())
        .filter(|(x, y)| x == y)
        .count();
    let inner = m as f64 / a.values().len() as f64;
    Ok(inner * inner)
}

/// `(sum_i c_i c'_i)^2`
pub fn kernel_qpie(a: &QpieAmplitudes, b: &QpieAmplitudes) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::arg(format!(
            "QPIE sizes differ: n = {} vs {}",
            a.n(),
            b.n()
        )));
    }
    let inner: f64 = a
        .amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| x * y)
        .sum();
    Ok(inner * inner)
}

/// Raw intensity dot product. Exact: accumulated in integers.
pub fn kernel_linear(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::arg(format!(
            "image sides differ: {} vs {}",
            a.side(),
            b.side()
        )));
    }
    let dot: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| x as u64 * y as u64)
        .sum();
    Ok(dot as f64)
}

/// Cosine-normalized linear kernel; diagnostics only.
pub fn kernel_linear_normalized(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    let ab = kernel_linear(a, b)?;
    let norm = (kernel_linear(a, a)? * kernel_linear(b, b)?).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(ab / norm)
}

/// An image in the form one kernel consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    Tnr(MpsState),
    Frqi(FrqiAngles),
    Neqr(NeqrImage),
    Qpie(QpieAmplitudes),
    Linear(GrayImage),
}

impl Encoded {
    pub fn kernel_id(&self) -> KernelId {
        match self {
            Encoded::Tnr(_) => KernelId::Tnr,
            Encoded::Frqi(_) => KernelId::Frqi,
            Encoded::Neqr(_) => KernelId::Neqr,
            Encoded::Qpie(_) => KernelId::Qpie,
            Encoded::Linear(_) => KernelId::Linear,
        }
    }
}

/// Encodes one image for `kernel`; `chi` is only read for the TNR kernel.
pub fn encode(img: &GrayImage, kernel: KernelId, chi: usize) -> Result<Encoded> {
    Ok(match kernel {
        KernelId::Tnr => Encoded::Tnr(decompose(&encode_realket(img)?, chi)?),
        KernelId::Frqi => Encoded::Frqi(encode_frqi(img)),
        KernelId::Neqr => Encoded::Neqr(encode_neqr(img)),
        KernelId::Qpie => Encoded::Qpie(encode_qpie(img)?),
        KernelId::Linear => Encoded::Linear(img.clone()),
    })
}

pub fn encode_all(images: &[GrayImage], kernel: KernelId, chi: usize) -> Result<Vec<Encoded>> {
    images
        .par_iter()
        .map(|img| encode(img, kernel, chi))
        .collect()
}

/// Kernel value between two encodings of the same kind.
pub fn kernel(a: &Encoded, b: &Encoded) -> Result<f64> {
    match (a, b) {
        (Encoded::Tnr(x), Encoded::Tnr(y)) => kernel_tnr(x, y),
        (Encoded::Frqi(x), Encoded::Frqi(y)) => kernel_frqi(x, y),
        (Encoded::Neqr(x), Encoded::Neqr(y)) => kernel_neqr(x, y),
        (Encoded::Qpie(x), Encoded::Qpie(y)) => kernel_qpie(x, y),
        (Encoded::Linear(x), Encoded::Linear(y)) => kernel_linear(x, y),
        _ => Err(Error::arg(format!(
            "cannot mix {} and {} encodings",
            a.kernel_id(),
            b.kernel_id()
        ))),
    }
}

fn homogeneous_kind(set: &[Encoded]) -> Result<KernelId> {
    let first = set
        .first()
        .ok_or_else(|| Error::arg("empty encoded set"))?
        .kernel_id();
    if let Some(other) = set.iter().find(|e| e.kernel_id() != first) {
        return Err(Error::arg(format!(
            "heterogeneous encodings: {first} and {}",
            other.kernel_id()
        )));
    }
    Ok(first)
}

/// Symmetric `N x N` kernel matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    size: usize,
    entries: Vec<f64>,
    kernel: KernelId,
}

impl GramMatrix {
    pub fn from_entries(size: usize, entries: Vec<f64>, kernel: KernelId) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::Length(format!(
                "{size}x{size} Gram needs {} entries, got {}",
                size * size,
                entries.len()
            )));
        }
        Ok(Self {
            size,
            entries,
            kernel,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kernel_id(&self) -> KernelId {
        self.kernel
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn trace(&self) -> f64 {
        (0..self.size).map(|i| self.get(i, i)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.size {
            for j in i + 1..self.size {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_diagonal_error(&self) -> f64 {
        (0..self.size)
            .map(|i| (self.get(i, i) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.size, self.size, &self.entries)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .to_matrix()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Scale against which negative eigenvalues are judged.
    fn spectral_scale(&self) -> f64 {
        if self.size == 0 {
            return 1.0;
        }
        (self.trace() / self.size as f64).max(1.0)
    }

    /// Checks the Mercer condition within [`PSD_TOL`].
    pub fn check_psd(&self) -> Result<()> {
        let min = self.min_eigenvalue();
        let floor = -PSD_TOL * self.spectral_scale();
        if min < floor {
            return Err(Error::Spectral(format!(
                "minimum eigenvalue {min:e} below {floor:e} ({} Gram)",
                self.kernel
            )));
        }
        Ok(())
    }

    /// Upper-triangle entries `K_ij`, `i < j`.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size * self.size.saturating_sub(1) / 2);
        for i in 0..self.size {
            out.extend_from_slice(&self.row(i)[i + 1..]);
        }
        out
    }

    /// Off-diagonal quartiles `(q1, median, q3)`, linear interpolation.
    pub fn off_diagonal_quartiles(&self) -> Option<(f64, f64, f64)> {
        let mut v = self.off_diagonal();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some((quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)))
    }

    /// Entry-wise square root: overlaps instead of squared overlaps.
    pub fn unsquared(&self) -> Result<Self> {
        if !self.kernel.is_quantum() {
            return Err(Error::arg("unsquared form only exists for quantum kernels"));
        }
        let entries = self.entries.iter().map(|&v| v.max(0.0).sqrt()).collect();
        Ok(Self {
            size: self.size,
            entries,
            kernel: self.kernel,
        })
    }

    /// Rows and columns relabeled: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.size {
            return Err(Error::arg("permutation length differs from Gram size"));
        }
        let mut entries = Vec::with_capacity(self.entries.len());
        for &pi in perm {
            for &pj in perm {
                entries.push(self.get(pi, pj));
            }
        }
        Ok(Self {
            size: self.size,
            entries,
            kernel: self.kernel,
        })
    }

    /// CSV export: a comment header naming the kernel and size, then rows.
    pub fn to_csv(&self, extra_header: &[String]) -> String {
        let mut out = String::new();
        for line in extra_header {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&format!("# kernel_id={}\n# N={}\n", self.kernel, self.size));
        for i in 0..self.size {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Heatmap as a binary PGM, one pixel per entry. Quantum kernels map
    /// `[0, 1]` linearly onto `[0, 255]`; the linear kernel maps `[min, max]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (lo, hi) = if self.kernel.is_quantum() {
            (0.0, 1.0)
        } else {
            let lo = self.entries.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = self
                .entries
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let span = if hi > lo { hi - lo } else { 1.0 };
        let pixels: Vec<u8> = self
            .entries
            .iter()
            .map(|&v| (255.0 * ((v - lo) / span).clamp(0.0, 1.0)).round() as u8)
            .collect();
        let comment = format!(
            "{} Gram, N={}: intensity = round(255 * (K - {lo}) / ({hi} - {lo}))",
            self.kernel, self.size
        );
        crate::image_io::encode_pgm(self.size, self.size, &pixels, &[&comment])
    }
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Gram matrix of a homogeneous encoded set.
///
/// Only `j >= i` is evaluated; the lower triangle is mirrored. The diagonal
/// is computed and, for quantum kernels, must be 1 within [`GRAM_TOL`].
pub fn gram(set: &[Encoded]) -> Result<GramMatrix> {
    let kind = homogeneous_kind(set)?;
    let size = set.len();
    let upper: Vec<Vec<f64>> = (0..size)
        .into_par_iter()
        .map(|i| {
            (i..size)
                .map(|j| kernel(&set[i], &set[j]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut entries = vec![0.0; size * size];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            entries[i * size + j] = v;
            entries[j * size + i] = v;
        }
    }
    let g = GramMatrix {
        size,
        entries,
        kernel: kind,
    };
    if kind.is_quantum() {
        let err = g.max_diagonal_error();
        if err > GRAM_TOL {
            return Err(Error::Numerical(format!(
                "{kind} Gram diagonal deviates from 1 by {err:e}; encodings are not normalized"
            )));
        }
    }
    Ok(g)
}

/// Kernel rows between query points and a reference set: result `[q][i]` is
/// `K(reference_i, query_q)`.
pub fn cross_gram(reference: &[Encoded], queries: &[Encoded]) -> Result<Vec<Vec<f64>>> {
    if !reference.is_empty() && !queries.is_empty() {
        let kind = homogeneous_kind(reference)?;
        if homogeneous_kind(queries)? != kind {
            return Err(Error::arg("query and reference encodings differ"));
        }
    }
    queries
        .par_iter()
        .map(|s| reference.iter().map(|x| kernel(x, s)).collect())
        .collect()
}

/// Rényi entropies (in bits) of the trace-normalized Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
    /// Spectrum of the normalized matrix, descending, summing to 1.
    pub eigenvalues: Vec<f64>,
}

impl EntropyReport {
    pub fn value(&self, alpha: f64) -> Option<f64> {
        self.alphas
            .iter()
            .position(|&a| a == alpha)
            .map(|k| self.values[k])
    }
}

/// Rényi entropy of a probability spectrum; `alpha == 1` is von Neumann.
pub fn renyi(spectrum: &[f64], alpha: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-12 {
        -spectrum
            .iter()
            .filter(|&&l| l > 0.0)
            .map(|&l| l * l.log2())
            .sum::<f64>()
    } else {
        let s: f64 = spectrum
            .iter()
            .filter(|&&l| l > 0.0)
            .map(|&l| l.powf(alpha))
            .sum();
        s.log2() / (1.0 - alpha)
    }
}

/// `S_alpha(K / Tr K)` for every requested order.
pub fn entropy(g: &GramMatrix, alphas: &[f64]) -> Result<EntropyReport> {
    if let Some(a) = alphas.iter().find(|&&a| !(a.is_finite() && a > 0.0)) {
        return Err(Error::arg(format!(
            "Renyi order {a} must be positive and finite"
        )));
    }
    if g.size == 0 {
        return Err(Error::arg("empty Gram matrix"));
    }
    let trace = g.trace();
    if trace.is_nan() || trace <= 0.0 {
        return Err(Error::Spectral(format!(
            "Gram trace {trace} is not positive"
        )));
    }
    let raw = g.eigenvalues();
    let floor = -PSD_TOL * g.spectral_scale();
    if raw[0] < floor {
        return Err(Error::Spectral(format!(
            "minimum eigenvalue {:e} below {floor:e}",
            raw[0]
        )));
    }
    let mut spectrum: Vec<f64> = raw
        .iter()
        .rev()
        .map(|&l| {
            let v = l / trace;
            if v < EIGEN_FLOOR {
                0.0
            } else {
                v
            }
        })
        .collect();
    let total: f64 = spectrum.iter().sum();
    spectrum.iter_mut().for_each(|l| *l /= total);
    let values = alphas
        .iter()
        .map(|&a| renyi(&spectrum, a).max(0.0))
        .collect();
    Ok(EntropyReport {
        alphas: alphas.to_vec(),
        values,
        eigenvalues: spectrum,
    })
}
