use gsi_core::linalg::{norm, random_orthonormal, sub};
use gsi_core::{
    build_basis, cache_image, dgks_insert, gated_forward, principal_angle_cosines, BasisOrigin, DenseMatrix,
    ExecutionMode, SubspaceBasis,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64, d: usize, k: usize, d_out: usize) -> (DenseMatrix, SubspaceBasis, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DenseMatrix::random_normal(d_out, d, 1.0, &mut rng);
    let v = random_orthonormal(d, k, &mut rng);
    let basis = SubspaceBasis::from_matrix(&v, BasisOrigin::Calibrated).unwrap();
    let x = DenseMatrix::random_normal(1, d, 1.0, &mut rng).into_data();
    (w, basis, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn decomposition_is_exact(seed in any::<u64>(), d in 2usize..40, frac in 0.0f64..1.0, d_out in 1usize..30) {
        let k = ((d as f64 * frac) as usize).clamp(1, d);
        let (w, basis, x) = setup(seed, d, k, d_out);
        let p = basis.project(&x).unwrap();
        let img = cache_image("w", &w, &basis).unwrap();
        let mg = img.matrix().matvec(&p.coefficients).unwrap();
        let wr = w.matvec(&p.residual).unwrap();
        let y: Vec<f64> = mg.iter().zip(&wr).map(|(a, b)| a + b).collect();
        let wx = w.matvec(&x).unwrap();
        prop_assert!(norm(&sub(&y, &wx)) <= 1e-9 * norm(&wx).max(1e-300));
    }

    #[test]
    fn fast_path_error_is_bounded(seed in any::<u64>(), d in 2usize..32, k in 1usize..32, eps in 0.01f64..0.99) {
        let k = k.min(d);
        let (w, basis, x) = setup(seed, d, k, 7);
        let img = cache_image("w", &w, &basis).unwrap();
        let out = gated_forward(&x, &w, &img, &basis, ExecutionMode::gated(eps).unwrap()).unwrap();
        let err = norm(&sub(&out.y, &w.matvec(&x).unwrap()));
        if out.record.path.is_fast() {
            let w_norm = gsi_core::spectral_norm(&w, 1e-13);
            prop_assert!(err <= w_norm * eps * norm(&x) * (1.0 + 1e-6));
        } else {
            prop_assert_eq!(err, 0.0);
        }
    }

    #[test]
    fn residual_ratio_is_monotone_in_rank(seed in any::<u64>(), n in 3usize..30, d in 2usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::random_normal(n, d, 1.0, &mut rng);
        let full = build_basis(&a, n.min(d)).unwrap();
        let x = DenseMatrix::random_normal(1, d, 1.0, &mut rng).into_data();
        let mut prev = f64::INFINITY;
        for k in 1..=full.rank() {
            let rho = full.truncated(k).unwrap().residual_ratio(&x).unwrap();
            prop_assert!(rho <= prev + 1e-12);
            prev = rho;
        }
    }

    #[test]
    fn dgks_keeps_the_basis_orthonormal(seed in any::<u64>(), d in 2usize..24, inserts in 1usize..60, eta in 0.01f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = SubspaceBasis::empty(d);
        for _ in 0..inserts {
            let x = DenseMatrix::random_normal(1, d, 1.0, &mut rng).into_data();
            let before = basis.rank();
            let (next, accepted) = dgks_insert(&basis, &x, eta).unwrap();
            prop_assert_eq!(next.rank(), before + accepted as usize);
            if accepted {
                // the inserted vector is now (almost) inside the span
                prop_assert!(next.residual_ratio(&x).unwrap() < 1e-10);
            }
            basis = next;
        }
        prop_assert!(basis.rank() <= d);
        prop_assert!(basis.orthonormality_defect() <= 1e-10);
    }

    #[test]
    fn principal_angles_are_symmetric_and_clipped(seed in any::<u64>(), d in 2usize..20, ka in 1usize..20, kb in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = SubspaceBasis::from_matrix(&random_orthonormal(d, ka.min(d), &mut rng), BasisOrigin::Calibrated).unwrap();
        let b = SubspaceBasis::from_matrix(&random_orthonormal(d, kb.min(d), &mut rng), BasisOrigin::Calibrated).unwrap();
        let ab = principal_angle_cosines(&a, &b).unwrap();
        let ba = principal_angle_cosines(&b, &a).unwrap();
        prop_assert_eq!(ab.len(), ba.len());
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert!((x - y).abs() < 1e-10);
            prop_assert!((0.0..=1.0).contains(x));
        }
        let self_angles = principal_angle_cosines(&a, &a).unwrap();
        prop_assert!(self_angles.iter().all(|c| (c - 1.0).abs() < 1e-10));
    }
}
