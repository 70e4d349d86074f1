//! Soft-margin SVM on a precomputed kernel matrix.
//!
//! The dual `max sum a_i - 1/2 sum y_i y_j a_i a_j K_ij`, subject to
//! `sum a_i y_i = 0` and `0 <= a_i <= C`, is solved by sequential minimal
//! optimization with the maximal-violating-pair working set.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, KernelId};

/// Curvature floor for a working pair, as in LIBSVM.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    /// Box constraint.
    pub c: f64,
    /// KKT tolerance (stopping gap of the maximal violating pair).
    pub tol: f64,
    /// `alpha` above this marks a support vector.
    pub sv_threshold: f64,
    /// Cap on pair updates.
    pub max_updates: usize,
    /// Run the eigenvalue check on the Gram matrix before training.
    pub check_psd: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            sv_threshold: 1e-8,
            max_updates: 1_000_000,
            check_psd: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub labels: Vec<i8>,
    pub support_indices: Vec<usize>,
    pub c: f64,
    pub tol: f64,
    pub kernel_id: KernelId,
    /// SHA-256 of the training Gram matrix and labels.
    pub fingerprint: String,
    pub updates: usize,
}

impl SvmModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn n_train(&self) -> usize {
        self.alphas.len()
    }

    /// `sum_i y_i a_i K(x_i, s) + b`
    pub fn decision_value(&self, kernel_row: &[f64]) -> Result<f64> {
        if kernel_row.len() != self.alphas.len() {
            return Err(Error::arg(format!(
                "kernel row has {} entries, model was trained on {}",
                kernel_row.len(),
                self.alphas.len()
            )));
        }
        let s: f64 = self
            .support_indices
            .iter()
            .map(|&i| self.labels[i] as f64 * self.alphas[i] * kernel_row[i])
            .sum();
        Ok(s + self.bias)
    }
}

/// Maps dataset classes to `+1` (`class_a`) and `-1` (`class_b`).
pub fn labels_from_classes(classes: &[u8], class_a: u8, class_b: u8) -> Result<Vec<i8>> {
    classes
        .iter()
        .map(|&c| match c {
            c if c == class_a => Ok(1),
            c if c == class_b => Ok(-1),
            c => Err(Error::arg(format!(
                "class {c} is neither {class_a} nor {class_b}"
            ))),
        })
        .collect()
}

/// `L_D(a) = sum a_i - 1/2 sum_ij y_i y_j a_i a_j K_ij`
pub fn dual_objective(gram: &GramMatrix, labels: &[i8], alphas: &[f64]) -> f64 {
    let n = alphas.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alphas[i] == 0.0 {
            continue;
        }
        let row = gram.row(i);
        let mut s = 0.0;
        for j in 0..n {
            s += labels[j] as f64 * alphas[j] * row[j];
        }
        quad += labels[i] as f64 * alphas[i] * s;
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

/// Largest KKT violation of a trained model on its own training Gram.
pub fn kkt_residual(gram: &GramMatrix, model: &SvmModel) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..model.n_train() {
        let margin = model.labels[i] as f64 * model.decision_value(gram.row(i))?;
        let a = model.alphas[i];
        let r = if a <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if a >= model.c {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(r);
    }
    Ok(worst)
}

fn fingerprint(gram: &GramMatrix, labels: &[i8]) -> String {
    let mut h = Sha256::new();
    h.update(gram.kernel_id().as_str().as_bytes());
    h.update((gram.size() as u64).to_le_bytes());
    for v in gram.entries() {
        h.update(v.to_le_bytes());
    }
    for &y in labels {
        h.update([y as u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn train(gram: &GramMatrix, labels: &[i8], params: &TrainParams) -> Result<SvmModel> {
    train_inner(gram, labels, params, None)
}

/// Like [`train`], also returning the dual objective after every update
/// (the first entry is the objective at `a = 0`).
pub fn train_traced(
    gram: &GramMatrix,
    labels: &[i8],
    params: &TrainParams,
) -> Result<(SvmModel, Vec<f64>)> {
    let mut trace = Vec::new();
    let model = train_inner(gram, labels, params, Some(&mut trace))?;
    Ok((model, trace))
}

fn train_inner(
    gram: &GramMatrix,
    labels: &[i8],
    params: &TrainParams,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<SvmModel> {
    let n = gram.size();
    if labels.len() != n {
        return Err(Error::arg(format!(
            "{} labels for a {n}x{n} Gram",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(Error::arg(format!("label {bad} is not +1 or -1")));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::Degenerate(
            "training labels contain a single class".into(),
        ));
    }
    if !(params.c.is_finite() && params.c > 0.0 && params.tol > 0.0) {
        return Err(Error::arg("C and tol must be positive"));
    }
    if params.check_psd {
        gram.check_psd()?;
    }

    let c = params.c;
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mut alpha = vec![0.0; n];
    // gradient of f(a) = 1/2 a^T Q a - e^T a, with Q_ij = y_i y_j K_ij
    let mut grad = vec![-1.0; n];
    let mut objective = 0.0;
    if let Some(t) = trace.as_deref_mut() {
        t.push(objective);
    }

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut updates = 0usize;
    loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin <= params.tol {
            break;
        }
        if updates >= params.max_updates {
            return Err(Error::Convergence(format!(
                "{updates} pair updates without reaching a KKT gap of {} (gap {})",
                params.tol,
                gmax - gmin
            )));
        }
        updates += 1;

        let (kii, kjj, kij) = (gram.get(i, i), gram.get(j, j), gram.get(i, j));
        let quad = (kii + kjj - 2.0 * kij).max(TAU);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;

        let (di, dj) = (ai - old_i, aj - old_j);
        let (row_i, row_j) = (gram.row(i), gram.row(j));
        if trace.is_some() {
            // exact change of f along the pair step
            let qii = kii;
            let qjj = kjj;
            let qij = y[i] * y[j] * kij;
            let df = grad[i] * di
                + grad[j] * dj
                + 0.5 * (qii * di * di + qjj * dj * dj + 2.0 * qij * di * dj);
            objective -= df;
        }
        for t in 0..n {
            grad[t] += y[t] * (y[i] * row_i[t] * di + y[j] * row_j[t] * dj);
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(objective);
        }
    }

    // bias: mean of y_t - sum_j a_j y_j K_tj over free support vectors
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut lb = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    for t in 0..n {
        let v = -y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += v;
            free_count += 1;
        } else if (alpha[t] == 0.0) == (y[t] > 0.0) {
            // a = 0 with y = +1, or a = C with y = -1: b >= v
            lb = lb.max(v);
        } else {
            ub = ub.min(v);
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else if lb.is_finite() && ub.is_finite() {
        0.5 * (lb + ub)
    } else if lb.is_finite() {
        lb
    } else {
        ub
    };

    let support_indices = (0..n).filter(|&t| alpha[t] > params.sv_threshold).collect();
    Ok(SvmModel {
        alphas: alpha,
        bias,
        labels: labels.to_vec(),
        support_indices,
        c,
        tol: params.tol,
        kernel_id: gram.kernel_id(),
        fingerprint: fingerprint(gram, labels),
        updates,
    })
}

/// `sign(decision value)`, with an exact zero mapped to `+1`.
pub fn predict(model: &SvmModel, kernel_row: &[f64]) -> Result<i8> {
    Ok(if model.decision_value(kernel_row)? >= 0.0 {
        1
    } else {
        -1
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<i8>,
    pub confusion: Confusion,
}

impl EvalResult {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Predicts every query row and counts agreements with `labels`.
pub fn evaluate(model: &SvmModel, rows: &[Vec<f64>], labels: &[i8]) -> Result<EvalResult> {
    if rows.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} kernel rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let mut confusion = Confusion::default();
    let mut predictions = Vec::with_capacity(rows.len());
    for (row, &truth) in rows.iter().zip(labels) {
        let p = predict(model, row)?;
        match (p, truth) {
            (1, 1) => confusion.true_pos += 1,
            (-1, -1) => confusion.true_neg += 1,
            (1, _) => confusion.false_pos += 1,
            _ => confusion.false_neg += 1,
        }
        predictions.push(p);
    }
    Ok(EvalResult {
        correct: confusion.true_pos + confusion.true_neg,
        total: labels.len(),
        predictions,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn linear_gram(xs: &[f64]) -> GramMatrix {
        let n = xs.len();
        let entries = (0..n * n).map(|k| xs[k / n] * xs[k % n] + 1.0).collect();
        GramMatrix::from_entries(n, entries, KernelId::Linear).unwrap()
    }

    #[test]
    fn two_point_identity_problem() {
        // L_D = a1 + a2 - (a1^2 + a2^2)/2 with a1 = a2 gives a = (1, 1), b = 0
        let g = GramMatrix::from_entries(2, vec![1.0, 0.0, 0.0, 1.0], KernelId::Qpie).unwrap();
        let m = train(&g, &[1, -1], &TrainParams::default()).unwrap();
        assert_abs_diff_eq!(m.alphas[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.alphas[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.bias, 0.0, epsilon = 1e-12);
        assert_eq!(m.support_indices, vec![0, 1]);
    }

    #[test]
    fn separable_line_is_fit_exactly() {
        let xs = [-3.0, -2.0, -1.5, 1.0, 2.0, 4.0];
        let ys = [-1, -1, -1, 1, 1, 1];
        let g = linear_gram(&xs);
        let params = TrainParams {
            c: 100.0,
            ..TrainParams::default()
        };
        let m = train(&g, &ys, &params).unwrap();
        let rows: Vec<Vec<f64>> = (0..xs.len()).map(|i| g.row(i).to_vec()).collect();
        assert_eq!(evaluate(&m, &rows, &ys).unwrap().accuracy(), 1.0);
        assert!(kkt_residual(&g, &m).unwrap() <= params.tol + 1e-12);
        let balance: f64 = m.alphas.iter().zip(&ys).map(|(a, &y)| a * y as f64).sum();
        assert!(balance.abs() < 1e-8);
    }

    #[test]
    fn single_class_is_degenerate() {
        let g = linear_gram(&[1.0, 2.0]);
        assert!(matches!(
            train(&g, &[1, 1], &TrainParams::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn non_psd_gram_is_rejected() {
        let g = GramMatrix::from_entries(2, vec![1.0, 3.0, 3.0, 1.0], KernelId::Qpie).unwrap();
        assert!(matches!(
            train(&g, &[1, -1], &TrainParams::default()),
            Err(Error::Spectral(_))
        ));
    }

    #[test]
    fn update_cap_reports_non_convergence() {
        let g = linear_gram(&[-2.0, -1.0, 1.0, 2.0, 0.1, -0.1]);
        let params = TrainParams {
            max_updates: 1,
            tol: 1e-12,
            ..TrainParams::default()
        };
        let r = train(&g, &[-1, -1, 1, 1, -1, 1], &params);
        assert!(matches!(r, Err(Error::Convergence(_))));
    }

    #[test]
    fn zero_decision_maps_to_positive() {
        let m = SvmModel {
            alphas: vec![0.0],
            bias: 0.0,
            labels: vec![-1],
            support_indices: vec![],
            c: 1.0,
            tol: 1e-3,
            kernel_id: KernelId::Linear,
            fingerprint: String::new(),
            updates: 0,
        };
        assert_eq!(predict(&m, &[5.0]).unwrap(), 1);
        assert!(matches!(predict(&m, &[1.0, 2.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn accuracy_extremes_and_confusion() {
        let g = GramMatrix::from_entries(2, vec![1.0, 0.0, 0.0, 1.0], KernelId::Qpie).unwrap();
        let m = train(&g, &[1, -1], &TrainParams::default()).unwrap();
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ok = evaluate(&m, &rows, &[1, -1]).unwrap();
        assert_eq!(ok.accuracy(), 1.0);
        assert_eq!(
            ok.confusion,
            Confusion {
                true_pos: 1,
                true_neg: 1,
                false_pos: 0,
                false_neg: 0
            }
        );
        let bad = evaluate(&m, &rows, &[-1, 1]).unwrap();
        assert_eq!(bad.accuracy(), 0.0);
        assert!(evaluate(&m, &rows, &[1]).is_err());
    }

    #[test]
    fn class_mapping() {
        assert_eq!(
            labels_from_classes(&[0, 8, 8, 0], 0, 8).unwrap(),
            vec![1, -1, -1, 1]
        );
        assert!(labels_from_classes(&[0, 3], 0, 8).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let g = linear_gram(&[-1.0, 1.0, 2.0]);
        let m = train(&g, &[-1, 1, 1], &TrainParams::default()).unwrap();
        let back = SvmModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.fingerprint.len(), 64);
    }
}
