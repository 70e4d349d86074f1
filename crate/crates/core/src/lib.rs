//! Quantum image representations as classical numerical objects.
//!
//! Four encodings of a `2^n x 2^n` grayscale image (tensor-network real-ket
//! compressed to an MPS, FRQI, NEQR and QPIE), their closed-form squared
//! overlap kernels, Gram-matrix entropies, an SMO support vector machine on
//! precomputed kernels, and the experiment drivers that tie them together.

pub mod encodings;
pub mod error;
pub mod experiments;
pub mod image_io;
pub mod kernels;
pub mod mps;
pub mod svm;

pub use encodings::{
    encode_frqi, encode_neqr, encode_qpie, encode_realket, FrqiAngles, NeqrImage, QpieAmplitudes,
    RealKet,
};
pub use error::{Error, Result};
pub use image_io::{area_resample, load_idx, select_pair, GrayImage, LabeledSet, RawImage, Role};
pub use kernels::{
    cross_gram, encode, entropy, gram, kernel_frqi, kernel_linear, kernel_neqr, kernel_qpie,
    Encoded, EntropyReport, GramMatrix, KernelId,
};
pub use mps::{decompose, kernel_tnr, overlap, MpsState, TransferMatrix};
pub use svm::{evaluate, predict, train, EvalResult, SvmModel, TrainParams};
