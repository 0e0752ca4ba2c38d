use gud_core::basis::{build_pca_basis, haar_decompose, haar_reconstruct, pooled_pixel_covariance};
use gud_core::rng;
use gud_core::schedule::{alpha_sigma_sq, column_schedule, haar_column_schedule, linear_softness_schedule};
use gud_core::{BasisSpec, Schedule, Shape};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn all_bases(shape: Shape, seed: u64) -> Vec<BasisSpec> {
    let mut r = rng::seeded(seed);
    let samples: Vec<Vec<f64>> = (0..40).map(|_| rng::normal_vec(&mut r, shape.dim())).collect();
    let cov = pooled_pixel_covariance(&samples, shape).unwrap();
    let scaling: Vec<f64> = (0..shape.dim()).map(|i| 0.5 + (i % 3) as f64).collect();
    vec![
        BasisSpec::identity(shape),
        BasisSpec::permutation(shape),
        BasisSpec::haar(shape, 2).unwrap(),
        BasisSpec::fft(shape).unwrap(),
        build_pca_basis(&cov, false, 1e-6, shape).unwrap(),
        build_pca_basis(&cov, true, 1e-6, shape).unwrap(),
        BasisSpec::haar(shape, 1).unwrap().with_scaling(scaling).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn roundtrip_and_orthogonality(seed in any::<u64>(), c in 1usize..3) {
        let shape = Shape::new(4, 8, c).unwrap();
        let mut r = rng::seeded(seed ^ 0xabc);
        for basis in all_bases(shape, seed) {
            let x = rng::normal_vec(&mut r, shape.dim());
            let y = rng::normal_vec(&mut r, shape.dim());
            let back = basis.inverse(&basis.forward(&x).unwrap()).unwrap();
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-10 * norm(&x), "{:?}: {err}", basis.kind());
            let ux = basis.apply_orthogonal(&x).unwrap();
            let uy = basis.apply_orthogonal(&y).unwrap();
            prop_assert!((dot(&ux, &uy) - dot(&x, &y)).abs() <= 1e-10 * norm(&x) * norm(&y));
        }
    }

    #[test]
    fn haar_parseval_every_level(seed in any::<u64>(), levels in 1usize..4) {
        let shape = Shape::new(8, 8, 3).unwrap();
        let x = rng::normal_vec(&mut rng::seeded(seed), shape.dim());
        let h = haar_decompose(&x, shape, levels).unwrap();
        prop_assert!((norm(&h.coefficients) - norm(&x)).abs() < 1e-10 * norm(&x));
        let back = haar_reconstruct(&h.coefficients, &h.layout).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn schedules_are_monotone(
        a in 0.05f64..0.95,
        b in 0.0f64..0.95,
        lv in proptest::collection::vec(-3.0f64..2.0, 8),
        l in proptest::collection::vec(-2.0f64..2.0, 8),
    ) {
        let schedules = vec![
            Schedule::standard_for(&lv, -7.0, 4.0).unwrap(),
            linear_softness_schedule(&lv, &l, 3.0 * a, -7.0, 4.0).unwrap(),
            column_schedule(4, b, -7.0, 4.0, vec![1, 2, 3, 4, 1, 2, 3, 4]).unwrap(),
            haar_column_schedule(vec![2, 4], a, b, -7.0, 4.0,
                vec![(1, 1), (1, 2), (2, 1), (2, 2), (2, 3), (2, 4), (2, 1), (2, 4)]).unwrap(),
        ];
        for s in &schedules {
            let mut prev = s.gamma_raw(0.0).unwrap();
            for k in 1..=1000 {
                let g = s.gamma_raw(k as f64 / 1000.0).unwrap();
                for (p, n) in prev.iter().zip(&g) {
                    prop_assert!(n >= p);
                }
                prop_assert!(s.beta(k as f64 / 1000.0).unwrap().iter().all(|&b| b >= 0.0));
                prev = g;
            }
        }
    }

    #[test]
    fn alpha_sigma_partition_unity(g in -60.0f64..60.0) {
        let (a2, s2) = alpha_sigma_sq(g);
        prop_assert_eq!(a2 + s2, 1.0);
        prop_assert!(a2 > 0.0 && s2 > 0.0);
    }
}
