mod common;

use common::*;
use proptest::prelude::*;

use qimr_core::encodings::{encode_frqi, encode_neqr, encode_qpie, encode_realket};
use qimr_core::image_io::GrayImage;
use qimr_core::kernels::{kernel_frqi, kernel_neqr, kernel_qpie, GramMatrix, KernelId};
use qimr_core::mps::{decompose, kernel_tnr, overlap, transfer_trace, Core, MpsState};
use qimr_core::svm::{dual_objective, kkt_residual, train, train_traced, TrainParams};

fn image(n: u32) -> impl Strategy<Value = GrayImage> {
    let len = 1usize << (2 * n);
    prop::collection::vec(any::<u8>(), len)
        .prop_filter("nonzero", |p| p.iter().any(|&v| v > 0))
        .prop_map(move |p| GrayImage::new(n, p).unwrap())
}

/// Few intensity levels, so equal pixels (the NEQR numerator) are common.
fn coarse_image(n: u32) -> impl Strategy<Value = GrayImage> {
    let len = 1usize << (2 * n);
    prop::collection::vec(prop::sample::select(vec![0u8, 1, 128, 254, 255]), len)
        .prop_filter("nonzero", |p| p.iter().any(|&v| v > 0))
        .prop_map(move |p| GrayImage::new(n, p).unwrap())
}

fn check_closed_forms(a: &GrayImage, b: &GrayImage) -> Result<(), TestCaseError> {
    let frqi = kernel_frqi(&encode_frqi(a), &encode_frqi(b)).unwrap();
    prop_assert!((frqi - squared_overlap(&frqi_state(a), &frqi_state(b))).abs() <= 1e-10);
    let neqr = kernel_neqr(&encode_neqr(a), &encode_neqr(b)).unwrap();
    prop_assert!((neqr - squared_overlap(&neqr_state(a), &neqr_state(b))).abs() <= 1e-10);
    let qpie = kernel_qpie(&encode_qpie(a).unwrap(), &encode_qpie(b).unwrap()).unwrap();
    prop_assert!((qpie - squared_overlap(&qpie_state(a), &qpie_state(b))).abs() <= 1e-10);
    Ok(())
}

fn tnr_oracle(a: &GrayImage, b: &GrayImage, chi: usize) -> Option<f64> {
    let ta = dense_truncate(&realket_state(a), a.n(), chi);
    let tb = dense_truncate(&realket_state(b), b.n(), chi);
    if ta.gap < 1e-7 || tb.gap < 1e-7 {
        return None;
    }
    let (na, nb) = (norm(&ta.state), norm(&tb.state));
    let s = dot(&ta.state, &tb.state) / (na * nb);
    Some(s * s)
}

#[test]
fn two_by_two_kernels_match_state_vectors_on_a_level_grid() {
    let levels = [0u8, 85, 170, 255];
    let images: Vec<GrayImage> = (0..256usize)
        .map(|code| {
            let px = (0..4).map(|k| levels[(code >> (2 * k)) & 3]).collect();
            GrayImage::new(1, px).unwrap()
        })
        .collect();
    for a in &images {
        for b in &images {
            let frqi = kernel_frqi(&encode_frqi(a), &encode_frqi(b)).unwrap();
            assert!((frqi - squared_overlap(&frqi_state(a), &frqi_state(b))).abs() <= 1e-10);
            let neqr = kernel_neqr(&encode_neqr(a), &encode_neqr(b)).unwrap();
            assert!((neqr - squared_overlap(&neqr_state(a), &neqr_state(b))).abs() <= 1e-10);
            if a.is_zero() || b.is_zero() {
                continue;
            }
            let qpie = kernel_qpie(&encode_qpie(a).unwrap(), &encode_qpie(b).unwrap()).unwrap();
            assert!((qpie - squared_overlap(&qpie_state(a), &qpie_state(b))).abs() <= 1e-10);
            let ma = decompose(&encode_realket(a).unwrap(), 1).unwrap();
            let mb = decompose(&encode_realket(b).unwrap(), 1).unwrap();
            let tnr = kernel_tnr(&ma, &mb).unwrap();
            assert!((tnr - squared_overlap(&realket_state(a), &realket_state(b))).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn two_by_two_kernels_match_state_vectors(a in image(1), b in image(1)) {
        check_closed_forms(&a, &b)?;
        let ma = decompose(&encode_realket(&a).unwrap(), 4).unwrap();
        let mb = decompose(&encode_realket(&b).unwrap(), 4).unwrap();
        let want = squared_overlap(&realket_state(&a), &realket_state(&b));
        prop_assert!((kernel_tnr(&ma, &mb).unwrap() - want).abs() <= 1e-10);
    }

    #[test]
    fn four_by_four_kernels_match_state_vectors(a in image(2), b in image(2), chi in 1usize..=5) {
        check_closed_forms(&a, &b)?;
        let Some(want) = tnr_oracle(&a, &b, chi) else { return Ok(()); };
        let ma = decompose(&encode_realket(&a).unwrap(), chi).unwrap();
        let mb = decompose(&encode_realket(&b).unwrap(), chi).unwrap();
        prop_assert!((kernel_tnr(&ma, &mb).unwrap() - want).abs() <= 1e-10);
    }

    #[test]
    fn neqr_counts_exact_matches(a in coarse_image(2), b in coarse_image(2)) {
        check_closed_forms(&a, &b)?;
    }

    #[test]
    fn decomposition_error_equals_dense_truncation(
        n in 1u32..=3,
        seed in any::<u64>(),
        chi in 1usize..=5,
    ) {
        let img = seeded_image(n, seed);
        let psi = realket_state(&img);
        let oracle = dense_truncate(&psi, n, chi);
        prop_assume!(oracle.gap > 1e-7);
        let mps = decompose(&encode_realket(&img).unwrap(), chi).unwrap();

        let recon: Vec<f64> = mps.to_dense().iter().map(|v| v * mps.retained_norm()).collect();
        let err: f64 = psi.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dense_err: f64 = psi.iter().zip(&oracle.state).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!((err - dense_err).abs() <= 1e-10, "{err} vs {dense_err}");
        prop_assert!((err - oracle.dropped.iter().sum::<f64>().sqrt()).abs() <= 1e-10);
        for (got, want) in mps.discarded().iter().zip(&oracle.dropped) {
            prop_assert!((got - want).abs() <= 1e-10);
        }
        prop_assert!((mps.retained_norm().powi(2) + mps.discarded_weight() - 1.0).abs() <= 1e-10);
        for d in mps.bond_dims() {
            prop_assert!(d <= chi);
        }
    }

    #[test]
    fn overlap_matches_dense_inner_product(
        n in 1u32..=3,
        seeds in (any::<u64>(), any::<u64>()),
        chi in 1usize..=5,
    ) {
        let a = decompose(&encode_realket(&seeded_image(n, seeds.0)).unwrap(), chi).unwrap();
        let b = decompose(&encode_realket(&seeded_image(n, seeds.1)).unwrap(), chi).unwrap();
        let want = dot(&a.to_dense(), &b.to_dense());
        prop_assert!((overlap(&a, &b).unwrap() - want).abs() <= 1e-10);
        prop_assert!((transfer_trace(&a, &b).unwrap() - want).abs() <= 1e-10);
        prop_assert_eq!(overlap(&a, &b).unwrap(), overlap(&b, &a).unwrap());
        prop_assert!((overlap(&a, &a).unwrap() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn overlap_is_gauge_invariant(seeds in (any::<u64>(), any::<u64>()), angle in -3.0f64..3.0, scale in 0.5f64..2.0) {
        let a = decompose(&encode_realket(&seeded_image(2, seeds.0)).unwrap(), 4).unwrap();
        let b = decompose(&encode_realket(&seeded_image(2, seeds.1)).unwrap(), 4).unwrap();
        prop_assume!(a.bond_dims()[0] >= 2);
        let g = gauged(&a, angle, scale);
        let want = overlap(&a, &b).unwrap();
        prop_assert!((overlap(&g, &b).unwrap() - want).abs() <= 1e-10);
        for (x, y) in g.to_dense().iter().zip(a.to_dense()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

/// Deterministic pseudo-random nonzero image.
fn seeded_image(n: u32, seed: u64) -> GrayImage {
    let mut state = seed | 1;
    let mut img = GrayImage::from_fn(n, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 56) as u8
    });
    if img.is_zero() {
        img = GrayImage::constant(n, 1);
    }
    img
}

/// Inserts `G G^-1` on the first bond, with `G` a scaled rotation of the
/// first two bond directions.
fn gauged(state: &MpsState, angle: f64, scale: f64) -> MpsState {
    let (c, s) = (angle.cos() * scale, angle.sin() * scale);
    let (ci, si) = (angle.cos() / scale, angle.sin() / scale);
    let cores = state.cores();
    let (a, b) = (&cores[0], &cores[1]);
    let mut left = a.data().to_vec();
    for i in 0..4 {
        let base = i * a.right();
        let (x, y) = (left[base], left[base + 1]);
        left[base] = c * x - s * y;
        left[base + 1] = s * x + c * y;
    }
    let mut right = b.data().to_vec();
    let row = 4 * b.right();
    for k in 0..row {
        let (x, y) = (right[k], right[row + k]);
        right[k] = ci * x - si * y;
        right[row + k] = si * x + ci * y;
    }
    let mut out = vec![
        Core::new(a.left(), a.right(), left).unwrap(),
        Core::new(b.left(), b.right(), right).unwrap(),
    ];
    out.extend(cores[2..].iter().cloned());
    MpsState::from_cores(out, state.chi()).unwrap()
}

/// Gaussian Gram of `points` (positive definite for distinct points).
fn rbf_gram(points: &[Vec<f64>], gamma: f64) -> GramMatrix {
    let n = points.len();
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            e[i * n + j] = (-gamma * d).exp();
        }
    }
    GramMatrix::from_entries(n, e, KernelId::Linear).unwrap()
}

fn problem(max: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<i8>)> {
    (2..=max)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), n),
                prop::collection::vec(prop::bool::ANY, n),
            )
        })
        .prop_map(|(pts, flags)| {
            let mut y: Vec<i8> = flags.iter().map(|&f| if f { 1 } else { -1 }).collect();
            y[0] = 1;
            let last = y.len() - 1;
            y[last] = -1;
            (pts, y)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn smo_reaches_the_exact_dual_optimum(
        (pts, y) in problem(6),
        c in prop::sample::select(vec![0.1, 1.0, 10.0]),
        gamma in 0.2f64..2.0,
    ) {
        let g = rbf_gram(&pts, gamma);
        prop_assume!(g.min_eigenvalue() > 1e-6);
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let (best, _) = dual_oracle(g.entries(), &yf, c);
        let params = TrainParams { c, tol: 1e-6, ..TrainParams::default() };
        let (model, trace) = train_traced(&g, &y, &params).unwrap();
        let got = dual_objective(&g, &y, &model.alphas);
        prop_assert!((got - best).abs() <= 1e-4, "smo {got} oracle {best}");
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
        }
        prop_assert!((trace.last().unwrap() - got).abs() <= 1e-9);
        let balance: f64 = model.alphas.iter().zip(&yf).map(|(a, y)| a * y).sum();
        prop_assert!(balance.abs() <= 1e-8);
        prop_assert!(model.alphas.iter().all(|&a| (0.0..=c).contains(&a)));
        prop_assert!(kkt_residual(&g, &model).unwrap() <= params.tol);
    }

    #[test]
    fn default_tolerance_meets_kkt((pts, y) in problem(40), c in prop::sample::select(vec![0.5, 1.0, 100.0])) {
        let g = rbf_gram(&pts, 0.7);
        let params = TrainParams { c, check_psd: false, ..TrainParams::default() };
        let (model, trace) = train_traced(&g, &y, &params).unwrap();
        prop_assert!(kkt_residual(&g, &model).unwrap() <= params.tol);
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn flipping_labels_negates_decisions((pts, y) in problem(12), probe in prop::collection::vec(-2.0f64..2.0, 3)) {
        let g = rbf_gram(&pts, 0.5);
        prop_assume!(g.min_eigenvalue() > 1e-6);
        let params = TrainParams { tol: 1e-10, ..TrainParams::default() };
        let flipped: Vec<i8> = y.iter().map(|v| -v).collect();
        let m = train(&g, &y, &params).unwrap();
        let mf = train(&g, &flipped, &params).unwrap();
        let row: Vec<f64> = pts
            .iter()
            .map(|p| (-0.5 * p.iter().zip(&probe).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp())
            .collect();
        let (d, df) = (m.decision_value(&row).unwrap(), mf.decision_value(&row).unwrap());
        prop_assert!((d + df).abs() <= 1e-6, "{d} vs {df}");
    }

    #[test]
    fn duplicating_the_training_set_keeps_the_hard_margin_rule(
        (pts, y) in problem(8),
        probe in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let gamma = 0.5;
        let g = rbf_gram(&pts, gamma);
        prop_assume!(g.min_eigenvalue() > 1e-3);
        let doubled: Vec<Vec<f64>> = pts.iter().chain(&pts).cloned().collect();
        let y2: Vec<i8> = y.iter().chain(&y).copied().collect();
        let g2 = rbf_gram(&doubled, gamma);
        let params = TrainParams { c: 1e6, tol: 1e-9, check_psd: false, ..TrainParams::default() };
        let m = train(&g, &y, &params).unwrap();
        let m2 = train(&g2, &y2, &params).unwrap();
        let k = |set: &[Vec<f64>]| -> Vec<f64> {
            set.iter()
                .map(|p| (-gamma * p.iter().zip(&probe).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp())
                .collect()
        };
        let (d, d2) = (m.decision_value(&k(&pts)).unwrap(), m2.decision_value(&k(&doubled)).unwrap());
        prop_assert!((d - d2).abs() <= 1e-5 * d.abs().max(1.0), "{d} vs {d2}");
    }
}

#[test]
fn two_point_identity_problem() {
    let g = GramMatrix::from_entries(2, vec![1.0, 0.0, 0.0, 1.0], KernelId::Linear).unwrap();
    let y = [1i8, -1];
    let (best, alpha) = dual_oracle(g.entries(), &[1.0, -1.0], 1.0);
    let model = train(&g, &y, &TrainParams::default()).unwrap();
    assert!((best - 1.0).abs() < 1e-12);
    assert!((alpha[0] - 1.0).abs() < 1e-12 && (alpha[1] - 1.0).abs() < 1e-12);
    assert!((model.alphas[0] - 1.0).abs() < 1e-9);
    assert!((model.alphas[1] - 1.0).abs() < 1e-9);
    assert!(model.bias.abs() < 1e-9);
}
