//! Brute-force oracles shared by the integration tests and the acceptance
//! suite. Everything here is built from first principles (explicit state
//! vectors, a one-sided Jacobi SVD, active-set enumeration) so it shares no
//! code path with the library under test.

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use qimr_core::image_io::GrayImage;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_overlap(a: &[f64], b: &[f64]) -> f64 {
    let s = dot(a, b);
    s * s
}

/// Flat quadrant position of pixel `(y, x)`: base-4 digits from the coarsest
/// level down, each digit `2 * y_bit + x_bit`.
pub fn quadrant_flat(n: u32, y: usize, x: usize) -> usize {
    let mut flat = 0;
    for level in (0..n).rev() {
        let digit = 2 * ((y >> level) & 1) + ((x >> level) & 1);
        flat = flat * 4 + digit;
    }
    flat
}

/// `1/2^n sum_i (cos t_i |0> + sin t_i |1>) |i>`, colour qubit most significant.
pub fn frqi_state(img: &GrayImage) -> Vec<f64> {
    let len = img.pixels().len();
    let scale = 1.0 / (len as f64).sqrt();
    let mut v = vec![0.0; 2 * len];
    for (i, &p) in img.pixels().iter().enumerate() {
        let theta = std::f64::consts::FRAC_PI_2 * p as f64 / 255.0;
        v[i] = scale * theta.cos();
        v[len + i] = scale * theta.sin();
    }
    v
}

/// `1/2^n sum_i |C_i> |i>` with an 8-qubit intensity register.
pub fn neqr_state(img: &GrayImage) -> Vec<f64> {
    let len = img.pixels().len();
    let scale = 1.0 / (len as f64).sqrt();
    let mut v = vec![0.0; 256 * len];
    for (i, &p) in img.pixels().iter().enumerate() {
        v[p as usize * len + i] = scale;
    }
    v
}

/// Normalized intensities, row-major.
pub fn qpie_state(img: &GrayImage) -> Vec<f64> {
    let raw: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    let nrm = norm(&raw);
    raw.iter().map(|v| v / nrm).collect()
}

/// Normalized intensities in quadrant order.
pub fn realket_state(img: &GrayImage) -> Vec<f64> {
    let side = img.side();
    let mut v = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            v[quadrant_flat(img.n(), y, x)] = img.get(y, x) as f64;
        }
    }
    let nrm = norm(&v);
    v.iter().map(|a| a / nrm).collect()
}

/// Thin SVD of a row-major `rows x cols` matrix by one-sided Jacobi
/// rotations. Returns `(sigma, u)` sorted by descending sigma, `u` holding
/// the left singular vectors as columns (`rows x k`, row-major).
pub fn jacobi_svd(rows: usize, cols: usize, m: &[f64]) -> (Vec<f64>, Vec<f64>) {
    // Orthogonalizing the columns of A leaves sigma_j u_j in column j; with
    // more columns than rows the surplus ones converge to zero.
    let (k, len) = (cols, rows);
    let mut w: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..len).map(|r| m[r * cols + c]).collect())
        .collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = w.split_at_mut(q);
                for (a, b) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (x, y) = (*a, *b);
                    *a = c * x - s * y;
                    *b = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = w
        .into_iter()
        .map(|col| {
            let s = norm(&col);
            let u = if s > 0.0 {
                col.iter().map(|v| v / s).collect()
            } else {
                col
            };
            (s, u)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let sigma: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut u = vec![0.0; len * k];
    for (j, (_, col)) in pairs.iter().enumerate() {
        for r in 0..len {
            u[r * k + j] = col[r];
        }
    }
    (sigma, u)
}

/// Dense left-to-right truncation: at every cut the state, viewed as a
/// `4^k x 4^(n-k)` matrix, is projected onto its top `chi` left singular
/// vectors.
pub struct DenseTruncation {
    /// Unnormalized truncated state.
    pub state: Vec<f64>,
    /// Squared singular values dropped at each cut.
    pub dropped: Vec<f64>,
    /// Smallest `sigma_keep - sigma_(keep+1)` over the cuts that truncate;
    /// the projection is ambiguous when this vanishes.
    pub gap: f64,
}

pub fn dense_truncate(psi: &[f64], n: u32, chi: usize) -> DenseTruncation {
    let mut state = psi.to_vec();
    let mut dropped = Vec::new();
    let mut gap = f64::INFINITY;
    for cut in 1..n {
        let rows = 4usize.pow(cut);
        let cols = state.len() / rows;
        let (sigma, u) = jacobi_svd(rows, cols, &state);
        let keep = chi.min(
            sigma
                .iter()
                .filter(|&&s| s > 1e-14 * sigma[0])
                .count()
                .max(1),
        );
        dropped.push(sigma[keep..].iter().map(|s| s * s).sum());
        if keep < sigma.len() {
            gap = gap.min(sigma[keep - 1] - sigma[keep]);
        }
        // P = U_keep U_keep^T applied from the left
        let k = sigma.len();
        let mut coeff = vec![0.0; keep * cols];
        for j in 0..keep {
            for c in 0..cols {
                let mut s = 0.0;
                for r in 0..rows {
                    s += u[r * k + j] * state[r * cols + c];
                }
                coeff[j * cols + c] = s;
            }
        }
        let mut next = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let mut s = 0.0;
                for j in 0..keep {
                    s += u[r * k + j] * coeff[j * cols + c];
                }
                next[r * cols + c] = s;
            }
        }
        state = next;
    }
    DenseTruncation {
        state,
        dropped,
        gap,
    }
}

/// Exact optimum of the SVM dual on a tiny problem by enumerating every
/// assignment of each coordinate to `{0, C, free}` and solving the
/// stationarity system of the free block.
pub fn dual_oracle(k: &[f64], y: &[f64], c: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let objective = |a: &[f64]| {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += y[i] * y[j] * a[i] * a[j] * k[i * n + j];
            }
        }
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut rest = code;
        for s in state.iter_mut() {
            *s = (rest % 3) as u8;
            rest /= 3;
        }
        let mut a = vec![0.0; n];
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        for i in 0..n {
            if state[i] == 1 {
                a[i] = c;
            }
        }
        if !free.is_empty() {
            let f = free.len();
            let mut m = DMatrix::<f64>::zeros(f + 1, f + 1);
            let mut rhs = DVector::<f64>::zeros(f + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    m[(r, s)] = y[i] * y[j] * k[i * n + j];
                }
                m[(r, f)] = y[i];
                m[(f, r)] = y[i];
                let mut b = 1.0;
                for j in 0..n {
                    if state[j] == 1 {
                        b -= y[i] * y[j] * k[i * n + j] * c;
                    }
                }
                rhs[r] = b;
            }
            rhs[f] = -(0..n)
                .filter(|&j| state[j] == 1)
                .map(|j| y[j] * c)
                .sum::<f64>();
            let Some(sol) = m.lu().solve(&rhs) else {
                continue;
            };
            for (r, &i) in free.iter().enumerate() {
                a[i] = sol[r];
            }
        }
        let feasible =
            a.iter().all(|&v| (-1e-12..=c + 1e-12).contains(&v)) && dot(&a, y).abs() < 1e-9;
        if feasible {
            let obj = objective(&a);
            if obj > best.0 {
                best = (obj, a);
            }
        }
    }
    best
}

/// Dataset directory: `QIMR_DATA` if set, else `data/fashion-mnist` under
/// the workspace root.
pub fn data_dir() -> PathBuf {
    match std::env::var_os("QIMR_DATA") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fashion-mnist"),
    }
}

pub fn dataset_available() -> bool {
    data_dir().join("train-images-idx3-ubyte.gz").exists()
}
