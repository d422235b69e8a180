mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use pwl_moments::moments::{alpha, third_moment_loss, third_moment_loss_grads, StructuralConstants};
use pwl_moments::rng;
use pwl_moments::{exact_moments, random_curve, relaxed_moments, PwlCurve, Tensor3};

#[test]
fn unit_segment_against_quadrature() {
    let c = PwlCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let m = exact_moments(&c);
    let (q1, q2, q3) = common::quadrature_moments(c.vertices(), 1000);
    assert!((m.m1[0] - 0.5).abs() < 1e-15 && (q1[0] - 0.5).abs() < 1e-14);
    assert!((m.m2[(0, 0)] - 1.0 / 3.0).abs() < 1e-15 && (q2[(0, 0)] - 1.0 / 3.0).abs() < 1e-14);
    assert!((m.m3.get(0, 0, 0) - 0.25).abs() < 1e-15 && (q3.get(0, 0, 0) - 0.25).abs() < 1e-14);
    assert_eq!(m.m3.frob_norm_sq(), 0.0625);
}

/// `Σ_{mno} α_{mno} c_m ⊗ c_n ⊗ c_o` with six explicit loops.
fn brute_star(c: &DMatrix<f64>, a: &Tensor3) -> Tensor3 {
    let (n, d) = c.shape();
    let mut out = Tensor3::zeros(d);
    for m in 0..n {
        for o in 0..n {
            for q in 0..n {
                let w = a.get(m, o, q);
                for j in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            out.add_at(j, k, l, w * c[(m, j)] * c[(o, k)] * c[(q, l)]);
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn weight_gradient_matches_direct_evaluation() {
    let mut r = rng::stream(21);
    let c = rng::normal_matrix(&mut r, 5, 4);
    let p = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
    let target = relaxed_moments(&rng::normal_matrix(&mut r, 5, 4), &p).unwrap().m3;
    let (_, gp) = third_moment_loss_grads(&c, &p, &target).unwrap();
    let resid = relaxed_moments(&c, &p).unwrap().m3.sub(&target);
    for _ in 0..10 {
        let z = rng::normal_vector(&mut r, 4);
        let direct = 2.0 * resid.inner(&brute_star(&c, &alpha(&z)));
        assert!((gp.dot(&z) - direct).abs() < 1e-10 * (1.0 + direct.abs()));
    }
}

#[test]
fn loss_matches_elementwise_sum() {
    let mut r = rng::stream(22);
    let c = rng::normal_matrix(&mut r, 4, 3);
    let p = DVector::from_vec(vec![0.2, 0.5, 0.3]);
    let target = Tensor3::from_vec(3, rng::normal_vector(&mut r, 27).as_slice().to_vec()).unwrap();
    let mu = brute_star(&c, &alpha(&p));
    let mut oracle = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                oracle += (mu.get(i, j, k) - target.get(i, j, k)).powi(2);
            }
        }
    }
    let lib = third_moment_loss(&c, &p, &target).unwrap();
    assert!((lib - oracle).abs() < 1e-10 * oracle);
    assert!(third_moment_loss(&c, &p, &relaxed_moments(&c, &p).unwrap().m3).unwrap() < 1e-28);
}

#[test]
fn structural_constant_column_sums() {
    for m in 1..6 {
        let s = StructuralConstants::new(m);
        for j in 0..m {
            assert_eq!(s.a_s.column(j).sum(), 2.0);
            assert_eq!(s.a_l.column(j).sum(), 1.0);
            assert_eq!(s.a_r.column(j).sum(), 1.0);
        }
        assert_eq!(&s.a_l + &s.a_r, s.a_s);
    }
}

#[test]
fn rotated_curve_has_rotated_moments() {
    let c = random_curve(3, 4, 1.0, 2.0, 23).unwrap();
    let mut r = rng::stream(24);
    let q = rng::orthogonal_matrix(&mut r, 4);
    let rc = c.transformed(&q).unwrap();
    let (a, b) = (exact_moments(&c), exact_moments(&rc));
    assert!((&q * &a.m1 - &b.m1).amax() < 1e-12);
    assert!((&q * &a.m2 * q.transpose() - &b.m2).amax() < 1e-12);
    assert!(a.m3.contract(&q.transpose(), &q.transpose(), &q.transpose()).unwrap().max_abs_diff(&b.m3) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_matches_quadrature(seed in 0u64..10_000, m in 1usize..6, d in 1usize..5) {
        let c = random_curve(m, d, 1.0, 2.0, seed).unwrap();
        let e = exact_moments(&c);
        let (q1, q2, q3) = common::quadrature_moments(c.vertices(), 600);
        prop_assert!((q1 - &e.m1).amax() < 1e-10);
        prop_assert!((q2 - &e.m2).amax() < 1e-10);
        prop_assert!(q3.max_abs_diff(&e.m3) < 1e-10);
        prop_assert!(e.m3.asymmetry() < 1e-12);
    }

    #[test]
    fn moments_are_linear_in_weights(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut r = rng::stream(seed);
        let c = rng::normal_matrix(&mut r, 4, 3);
        let p = rng::normal_vector(&mut r, 3);
        let q = rng::normal_vector(&mut r, 3);
        let lhs = relaxed_moments(&c, &(&p * a + &q * b)).unwrap();
        let (mp, mq) = (relaxed_moments(&c, &p).unwrap(), relaxed_moments(&c, &q).unwrap());
        prop_assert!((lhs.m1 - (mp.m1 * a + mq.m1 * b)).amax() < 1e-10);
        prop_assert!((lhs.m2 - (mp.m2 * a + mq.m2 * b)).amax() < 1e-10);
        let mut rhs = mp.m3.scaled(a);
        rhs.axpy(b, &mq.m3);
        prop_assert!(lhs.m3.max_abs_diff(&rhs) < 1e-10);
    }
}
