use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spi_unroll::proximal::{
    admm_step, hqs_step, ideal_trajectory, prox_f, prox_f_graph, prox_g_bar, run, IterateState, Scheme, StepParams,
};
use spi_unroll::restorers::{Identity, RestoreContext};
use spi_unroll::sensing::{measurement_extents, MeasurementOperator, NoiseModel, OperatorKind};
use spi_unroll::{Graph, Image, Matrix};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Conjugate gradients on `(ΦᵀΦ + μI) z = Φᵀy + μp`, with `Φ` explicit.
fn cg_prox(phi: &Matrix<f64>, y: &[f64], p: &[f64], mu: f64) -> Vec<f64> {
    let n = p.len();
    let apply = |v: &[f64]| -> Vec<f64> {
        let pv = phi.apply(v).unwrap();
        let ptpv = phi.transpose().apply(&pv).unwrap();
        ptpv.iter().zip(v).map(|(a, b)| a + mu * b).collect()
    };
    let pty = phi.transpose().apply(y).unwrap();
    let b: Vec<f64> = pty.iter().zip(p).map(|(a, q)| a + mu * q).collect();
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..10 * n {
        if rr.sqrt() < 1e-15 {
            break;
        }
        let ad = apply(&d);
        let alpha = rr / d.iter().zip(&ad).map(|(a, b)| a * b).sum::<f64>();
        x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += alpha * di);
        r.iter_mut().zip(&ad).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        d = r.iter().zip(&d).map(|(ri, di)| ri + rr_new / rr * di).collect();
        rr = rr_new;
    }
    x
}

fn from_col_major(v: &[f64], rows: usize, cols: usize) -> Image<f64> {
    Image::from_fn(rows, cols, |r, c| v[c * rows + r])
}

#[test]
fn prox_f_matches_cg_oracle_and_is_stationary() {
    for trial in 0..20u64 {
        let mut r = rng(100 + trial);
        let op = MeasurementOperator::<f64>::new(8, 8, 0.2 + 0.03 * trial as f64, OperatorKind::GaussianOrthonormal, trial)
            .unwrap();
        let x = Image::uniform(8, 8, 0.0, 1.0, &mut r);
        let y = op.forward(&x, &NoiseModel::gaussian(0.05, trial)).unwrap();
        let p = Image::uniform(8, 8, 0.0, 1.0, &mut r);
        let mu = 0.1 + trial as f64 * 0.2;
        let z = prox_f(&p, &y, &op, mu).unwrap();
        let phi = op.explicit_phi();
        let oracle = from_col_major(&cg_prox(&phi, &y.values.vec_col_major(), &p.vec_col_major(), mu), 8, 8);
        let rel = z.sub(&oracle).unwrap().frob_norm() / oracle.frob_norm();
        assert!(rel < 1e-8, "trial {trial}: rel {rel}");
        // ∇ = −Hᵀ(Y − HZWᵀ)W + μ(Z − P)
        let resid = y.values.sub(&op.apply(&z).unwrap()).unwrap();
        let grad = op.adjoint_values(&resid).unwrap().scale(-1.0).add(&z.sub(&p).unwrap().scale(mu)).unwrap();
        assert!(grad.frob_norm() < 1e-8);
    }
}

#[test]
fn adjoint_is_inner_product_adjoint() {
    for (kind, seed) in [(OperatorKind::GaussianOrthonormal, 1), (OperatorKind::Hadamard, 2)] {
        let op = MeasurementOperator::<f64>::new(16, 8, 0.3, kind, seed).unwrap();
        let mut r = rng(seed);
        let x = Image::randn(16, 8, &mut r);
        let (h, w) = op.measurement_dims();
        let yv = Matrix::randn(h, w, &mut r);
        let lhs = op.apply(&x).unwrap().dot(&yv);
        let rhs = x.dot(&op.adjoint_values(&yv).unwrap());
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}

#[test]
fn full_sampling_recovers_image() {
    let op = MeasurementOperator::<f64>::new(8, 8, 1.0, OperatorKind::GaussianOrthonormal, 3).unwrap();
    let x = Image::uniform(8, 8, 0.0, 1.0, &mut rng(3));
    let y = op.forward(&x, &NoiseModel::none()).unwrap();
    assert!(op.adjoint(&y).unwrap().max_abs_diff(&x) < 1e-12);
}

#[test]
fn graph_prox_f_matches_closed_form() {
    let op = MeasurementOperator::<f64>::new(8, 16, 0.4, OperatorKind::Hadamard, 0).unwrap();
    let (hh, ww) = op.image_dims();
    let mut r = rng(4);
    let x = Image::uniform(hh, ww, 0.0, 1.0, &mut r);
    let p = Image::uniform(hh, ww, 0.0, 1.0, &mut r);
    let y = op.forward(&x, &NoiseModel::none()).unwrap();
    let mut g = Graph::new();
    let vars = [p.to_tensor(), y.values.to_tensor(), op.h_mat().to_tensor(), op.w_mat().to_tensor()].map(|t| g.constant(t));
    let mu = g.constant(spi_unroll::Tensor::full(vec![1], 0.8));
    let z = prox_f_graph(&mut g, vars[0], vars[1], vars[2], vars[3], mu).unwrap();
    let direct = prox_f(&p, &y, &op, 0.8).unwrap();
    assert!(Image::from_tensor(g.value(z)).unwrap().max_abs_diff(&direct) < 1e-14);
}

#[test]
fn teacher_trajectory_decreases_and_hits_ground_truth() {
    for scheme in [Scheme::Hqs, Scheme::Admm] {
        for trial in 0..5u64 {
            let op = MeasurementOperator::<f64>::new(8, 8, 0.25, OperatorKind::GaussianOrthonormal, trial).unwrap();
            let x_gt = Image::uniform(8, 8, 0.0, 1.0, &mut rng(trial));
            let y = op.forward(&x_gt, &NoiseModel::none()).unwrap();
            let x0 = op.adjoint(&y).unwrap();
            let steps = vec![StepParams::new(1.0, 1.0); 5];
            let t = ideal_trajectory(&x0, &x_gt, &y, &op, scheme, &steps, 6).unwrap();
            let dists: Vec<f64> = std::iter::once(&t.initial)
                .chain(&t.iterates)
                .map(|x| x.sub(&x_gt).unwrap().frob_norm())
                .collect();
            assert!(dists.windows(2).all(|w| w[1] < w[0]), "{scheme}: {dists:?}");
            assert!(t.last().max_abs_diff(&x_gt) <= 1e-14);
        }
    }
}

#[test]
fn hqs_and_admm_first_iterates_coincide() {
    let op = MeasurementOperator::<f64>::new(8, 8, 0.3, OperatorKind::GaussianOrthonormal, 5).unwrap();
    let x = Image::uniform(8, 8, 0.0, 1.0, &mut rng(5));
    let y = op.forward(&x, &NoiseModel::gaussian(0.01, 5)).unwrap();
    let x0 = op.adjoint(&y).unwrap();
    let mut shrink = |z: &Image<f64>, _: &RestoreContext| Ok(z.map(|v| 0.9 * v + 0.01));
    let a = hqs_step(&IterateState::start(x0.clone(), Scheme::Hqs), &y, &op, &mut shrink, 0.7).unwrap();
    let b = admm_step(&IterateState::start(x0, Scheme::Admm), &y, &op, &mut shrink, 0.7).unwrap();
    assert_eq!(a.x, b.x);
}

#[test]
fn identity_restorer_keeps_adjoint_start() {
    let op = MeasurementOperator::<f64>::new(8, 8, 0.3, OperatorKind::GaussianOrthonormal, 6).unwrap();
    let x = Image::uniform(8, 8, 0.0, 1.0, &mut rng(6));
    let y = op.forward(&x, &NoiseModel::none()).unwrap();
    let t = run(Scheme::Hqs, &y, &op, &mut Identity, &[1.0]).unwrap();
    assert!(t.last().max_abs_diff(&t.initial) < 1e-14);
}

#[test]
fn prox_g_bar_interpolates() {
    let q = Image::filled(2, 2, 1.0f64);
    let gt = Image::filled(2, 2, 0.0f64);
    let z = prox_g_bar(&q, &gt, StepParams::new(1.0, 3.0)).unwrap();
    assert!(z.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kronecker_equivalence(hh in 1usize..=12, ww in 1usize..=12, h in 1usize..=12, w in 1usize..=12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let hm = Matrix::<f64>::randn(h, hh, &mut r);
        let wm = Matrix::<f64>::randn(w, ww, &mut r);
        let x = Matrix::<f64>::randn(hh, ww, &mut r);
        let lhs = hm.matmul(&x).unwrap().matmul_t(false, &wm, true).unwrap().vec_col_major();
        let rhs = wm.kron(&hm).apply(&x.vec_col_major()).unwrap();
        let err = lhs.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn operators_are_row_orthonormal(n in 2usize..=24, m in 2usize..=24, cr in 0.05f64..=1.0, seed in any::<u64>()) {
        let op = MeasurementOperator::<f64>::new(n, m, cr, OperatorKind::GaussianOrthonormal, seed).unwrap();
        prop_assert!(op.orthonormality_error() < 1e-12);
        let (h, w) = op.measurement_dims();
        prop_assert_eq!((h, w), measurement_extents(n, m, cr).unwrap());
        prop_assert!(h >= 1 && h <= n && w >= 1 && w <= m);
    }

    #[test]
    fn prox_f_output_is_data_consistent_in_the_limit(seed in any::<u64>()) {
        let op = MeasurementOperator::<f64>::new(8, 8, 0.25, OperatorKind::GaussianOrthonormal, seed).unwrap();
        let mut r = rng(seed);
        let x = Image::uniform(8, 8, 0.0, 1.0, &mut r);
        let p = Image::uniform(8, 8, 0.0, 1.0, &mut r);
        let y = op.forward(&x, &NoiseModel::none()).unwrap();
        let z = prox_f(&p, &y, &op, 1e-12).unwrap();
        prop_assert!(op.apply(&z).unwrap().max_abs_diff(&y.values) < 1e-9);
    }
}
