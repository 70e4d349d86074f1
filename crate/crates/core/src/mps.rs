//! Matrix product states over the quadrant hierarchy.
//!
//! Site `k` carries the quadrant label `i_k` (physical dimension 4), site 1
//! being the coarsest level. Boundaries are open: the first core has a left
//! bond of 1 and the last core a right bond of 1, so the trace of the
//! transfer-matrix product is a 1x1 scalar.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::encodings::RealKet;
use crate::error::{Error, Result};

pub const PHYS_DIM: usize = 4;

/// Relative cutoff under which singular values count as zero.
const RANK_CUTOFF: f64 = 1e-14;

/// Kernel values above `1 + KERNEL_EXCESS_TOL` signal a broken state.
pub const KERNEL_EXCESS_TOL: f64 = 1e-9;

/// One third-order core with shape `(left, 4, right)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Core {
    left: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn new(left: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if left == 0 || right == 0 || data.len() != left * PHYS_DIM * right {
            return Err(Error::Length(format!(
                "core ({left}, 4, {right}) needs {} values, got {}",
                left * PHYS_DIM * right,
                data.len()
            )));
        }
        Ok(Self { left, right, data })
    }

    #[inline]
    pub fn left(&self) -> usize {
        self.left
    }

    #[inline]
    pub fn right(&self) -> usize {
        self.right
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, l: usize, i: usize, r: usize) -> f64 {
        self.data[(l * PHYS_DIM + i) * self.right + r]
    }

    #[inline]
    fn get_mut(&mut self, l: usize, i: usize, r: usize) -> &mut f64 {
        &mut self.data[(l * PHYS_DIM + i) * self.right + r]
    }

    /// The `left x right` matrix for physical index `i`.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.left, self.right, |l, r| self.get(l, i, r))
    }
}

/// A chain of cores reconstructing a real-ket, plus truncation bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct MpsState {
    cores: Vec<Core>,
    chi: usize,
    /// Squared singular values dropped at each cut, left to right.
    discarded: Vec<f64>,
    /// Norm of the truncated state before renormalization.
    retained_norm: f64,
}

impl MpsState {
    /// Assembles a state from explicit cores; bonds must chain and the open
    /// boundaries must have dimension 1.
    pub fn from_cores(cores: Vec<Core>, chi: usize) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::arg("an MPS needs at least one core"));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(Error::Consistency("open boundary bonds must be 1".into()));
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].right != w[1].left {
                return Err(Error::Consistency(format!(
                    "bond {k}: right dimension {} meets left dimension {}",
                    w[0].right, w[1].left
                )));
            }
        }
        let ncuts = cores.len() - 1;
        Ok(Self {
            cores,
            chi,
            discarded: vec![0.0; ncuts],
            retained_norm: 1.0,
        })
    }

    /// Number of sites (quadrant levels).
    pub fn n(&self) -> usize {
        self.cores.len()
    }

    pub fn chi(&self) -> usize {
        self.chi
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Core] {
        &mut self.cores
    }

    /// Bond dimensions between consecutive sites.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1]
            .iter()
            .map(|c| c.right)
            .collect()
    }

    pub fn discarded(&self) -> &[f64] {
        &self.discarded
    }

    /// Total discarded weight; equals the squared reconstruction error of the
    /// unnormalized truncated state.
    pub fn discarded_weight(&self) -> f64 {
        self.discarded.iter().sum()
    }

    pub fn retained_norm(&self) -> f64 {
        self.retained_norm
    }

    /// Number of stored reals.
    pub fn parameter_count(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Contracts the chain into the full `4^n` vector in quadrant order.
    pub fn to_dense(&self) -> Vec<f64> {
        // rows: accumulated physical prefix, cols: current right bond
        let mut acc = vec![1.0];
        let mut bond = 1usize;
        for core in &self.cores {
            let prefixes = acc.len() / bond;
            let mut next = vec![0.0; prefixes * PHYS_DIM * core.right];
            for p in 0..prefixes {
                for l in 0..bond {
                    let a = acc[p * bond + l];
                    if a == 0.0 {
                        continue;
                    }
                    for i in 0..PHYS_DIM {
                        let row = (p * PHYS_DIM + i) * core.right;
                        for r in 0..core.right {
                            next[row + r] += a * core.get(l, i, r);
                        }
                    }
                }
            }
            acc = next;
            bond = core.right;
        }
        acc
    }
}

/// Factors a real-ket into an MPS with every bond capped at `chi`.
///
/// Left-to-right sweep: the residual is reshaped to `(bond * 4, rest)`, the
/// top `min(chi, rank)` singular triplets are kept, `U` becomes the core and
/// `S V^T` the next residual. The result is rescaled to unit norm.
pub fn decompose(ket: &RealKet, chi: usize) -> Result<MpsState> {
    if chi < 1 {
        return Err(Error::arg("bond dimension cap must be at least 1"));
    }
    let n = ket.n() as usize;
    if n == 0 {
        return Err(Error::arg("a 1x1 image has no quadrant sites"));
    }
    let mut residual = ket.amplitudes().to_vec();
    let mut bond = 1usize;
    let mut cores = Vec::with_capacity(n);
    let mut discarded = Vec::with_capacity(n - 1);
    for _ in 0..n - 1 {
        let rows = bond * PHYS_DIM;
        let cols = residual.len() / rows;
        let m = DMatrix::from_row_slice(rows, cols, &residual);
        let svd = m.svd(true, true);
        let u = svd.u.expect("left singular vectors requested");
        let vt = svd.v_t.expect("right singular vectors requested");
        let sv = svd.singular_values;

        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
        let top = sv[order[0]];
        let rank = order
            .iter()
            .filter(|&&j| sv[j] > top * RANK_CUTOFF)
            .count()
            .max(1);
        let keep = chi.min(rank);
        discarded.push(order[keep..].iter().map(|&j| sv[j] * sv[j]).sum());

        let mut core = Core {
            left: bond,
            right: keep,
            data: vec![0.0; rows * keep],
        };
        for l in 0..bond {
            for i in 0..PHYS_DIM {
                for (r, &j) in order[..keep].iter().enumerate() {
                    *core.get_mut(l, i, r) = u[(l * PHYS_DIM + i, j)];
                }
            }
        }
        cores.push(core);

        let mut next = vec![0.0; keep * cols];
        for (r, &j) in order[..keep].iter().enumerate() {
            for c in 0..cols {
                next[r * cols + c] = sv[j] * vt[(j, c)];
            }
        }
        residual = next;
        bond = keep;
    }
    // The earlier cores are isometries, so the residual carries the norm.
    let retained_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    if retained_norm == 0.0 {
        return Err(Error::Numerical(
            "truncation removed the whole state".into(),
        ));
    }
    residual.iter_mut().for_each(|v| *v /= retained_norm);
    cores.push(Core {
        left: bond,
        right: 1,
        data: residual,
    });
    Ok(MpsState {
        cores,
        chi,
        discarded,
        retained_norm,
    })
}

/// Total order on states used to fix the contraction order of `overlap`.
fn canonical_cmp(a: &MpsState, b: &MpsState) -> Ordering {
    for (ca, cb) in a.cores.iter().zip(&b.cores) {
        let ord = (ca.left, ca.right).cmp(&(cb.left, cb.right));
        if ord != Ordering::Equal {
            return ord;
        }
        for (x, y) in ca.data.iter().zip(&cb.data) {
            let ord = x.total_cmp(y);
            if ord != Ordering::Equal {
                return ord;
            }
        }
    }
    Ordering::Equal
}

/// Inner product of two states, contracted site by site.
///
/// Equivalent to `Tr(E_1 E_2 ... E_n)` but never materializes the transfer
/// matrices: a `(bond_a, bond_b)` environment is pushed through each site.
/// Arguments are put in a canonical order first, so `overlap(a, b)` and
/// `overlap(b, a)` are bitwise equal.
pub fn overlap(a: &MpsState, b: &MpsState) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::arg(format!(
            "site counts differ: {} vs {}",
            a.n(),
            b.n()
        )));
    }
    let (a, b) = if canonical_cmp(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let mut env = vec![1.0];
    let (mut la, mut lb) = (1usize, 1usize);
    let mut tmp = Vec::new();
    for (ca, cb) in a.cores.iter().zip(&b.cores) {
        let (ra, rb) = (ca.right, cb.right);
        // tmp[lb][i][ra] = sum_la env[la][lb] * A[la][i][ra]
        tmp.clear();
        tmp.resize(lb * PHYS_DIM * ra, 0.0);
        for x in 0..la {
            for y in 0..lb {
                let e = env[x * lb + y];
                for i in 0..PHYS_DIM {
                    let dst = (y * PHYS_DIM + i) * ra;
                    let src = (x * PHYS_DIM + i) * ra;
                    for r in 0..ra {
                        tmp[dst + r] += e * ca.data[src + r];
                    }
                }
            }
        }
        // env'[ra][rb] = sum_{lb, i} tmp[lb][i][ra] * B[lb][i][rb]
        let mut next = vec![0.0; ra * rb];
        for y in 0..lb {
            for i in 0..PHYS_DIM {
                let t = (y * PHYS_DIM + i) * ra;
                let s = (y * PHYS_DIM + i) * rb;
                for r in 0..ra {
                    let tv = tmp[t + r];
                    for q in 0..rb {
                        next[r * rb + q] += tv * cb.data[s + q];
                    }
                }
            }
        }
        env = next;
        la = ra;
        lb = rb;
    }
    Ok(env[0])
}

/// Squared overlap, clamped to `[0, 1]`.
pub fn kernel_tnr(a: &MpsState, b: &MpsState) -> Result<f64> {
    let o = overlap(a, b)?;
    let k = o * o;
    if k > 1.0 + KERNEL_EXCESS_TOL {
        return Err(Error::Numerical(format!("squared overlap {k} exceeds 1")));
    }
    Ok(k.min(1.0))
}

/// `E_k = sum_i A^(k)i (x) B^(k)i` with shape `(la*lb, ra*rb)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    matrix: DMatrix<f64>,
}

impl TransferMatrix {
    pub fn new(a: &Core, b: &Core) -> Self {
        let matrix = DMatrix::from_fn(a.left * b.left, a.right * b.right, |row, col| {
            let (la, lb) = (row / b.left, row % b.left);
            let (ra, rb) = (col / b.right, col % b.right);
            (0..PHYS_DIM)
                .map(|i| a.get(la, i, ra) * b.get(lb, i, rb))
                .sum()
        });
        Self { matrix }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// `Tr(E_1 E_2 ... E_n)` by explicit matrix products.
pub fn transfer_trace(a: &MpsState, b: &MpsState) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::arg(format!(
            "site counts differ: {} vs {}",
            a.n(),
            b.n()
        )));
    }
    let mut product: Option<DMatrix<f64>> = None;
    for (ca, cb) in a.cores.iter().zip(&b.cores) {
        let e = TransferMatrix::new(ca, cb).matrix;
        product = Some(match product {
            None => e,
            Some(p) => p * e,
        });
    }
    let p = product.expect("at least one site");
    if !p.is_square() {
        return Err(Error::Consistency(format!(
            "product shape {:?} is not square",
            p.shape()
        )));
    }
    Ok(p.trace())
}

const MPS_MAGIC: &[u8; 4] = b"QMPS";
const MPS_VERSION: u8 = 1;

/// Binary container, all integers u32 LE and reals f64 LE:
/// `QMPS`, version byte, site count, chi, retained norm, cut count, the
/// discarded weights, then per core `left`, `right`, value count and the
/// row-major `(left, 4, right)` data.
pub fn write_mps(state: &MpsState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MPS_MAGIC);
    out.push(MPS_VERSION);
    let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put_u32(&mut out, state.n());
    put_u32(&mut out, state.chi);
    out.extend_from_slice(&state.retained_norm.to_le_bytes());
    put_u32(&mut out, state.discarded.len());
    for d in &state.discarded {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for core in &state.cores {
        put_u32(&mut out, core.left);
        put_u32(&mut out, core.right);
        put_u32(&mut out, core.data.len());
        for v in &core.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_mps(bytes: &[u8]) -> Result<MpsState> {
    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl Reader<'_> {
        fn take(&mut self, len: usize) -> Result<&[u8]> {
            let s = self
                .bytes
                .get(self.pos..self.pos + len)
                .ok_or_else(|| Error::Length(format!("MPS container truncated at {}", self.pos)))?;
            self.pos += len;
            Ok(s)
        }
        fn u32(&mut self) -> Result<usize> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
        }
        fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
    }
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(4)? != MPS_MAGIC {
        return Err(Error::Format("missing QMPS magic".into()));
    }
    let version = rd.take(1)?[0];
    if version != MPS_VERSION {
        return Err(Error::Unsupported(format!(
            "MPS container version {version}"
        )));
    }
    let n = rd.u32()?;
    let chi = rd.u32()?;
    let retained_norm = rd.f64()?;
    let ncuts = rd.u32()?;
    if n == 0 || ncuts + 1 != n {
        return Err(Error::Consistency(format!("{n} sites with {ncuts} cuts")));
    }
    let discarded = (0..ncuts).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
    let mut cores = Vec::with_capacity(n);
    for _ in 0..n {
        let left = rd.u32()?;
        let right = rd.u32()?;
        let len = rd.u32()?;
        let data = (0..len).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        cores.push(Core::new(left, right, data)?);
    }
    if rd.pos != bytes.len() {
        return Err(Error::Length(format!(
            "{} trailing bytes",
            bytes.len() - rd.pos
        )));
    }
    let mut state = MpsState::from_cores(cores, chi)?;
    state.discarded = discarded;
    state.retained_norm = retained_norm;
    Ok(state)
}
