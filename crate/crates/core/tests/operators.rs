use jetforge::grid::{Grid3, PeriodicField, Rank};
use jetforge::ops::{self, Spectrum};
use jetforge::verify::{random_field, random_solenoidal};
use proptest::prelude::*;

fn rel(a: &PeriodicField, b: &PeriodicField) -> f64 {
    a.sub(b).unwrap().l2_norm() / b.l2_norm().max(1e-300)
}

fn grid() -> Grid3 {
    Grid3::new(16).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn div_curl_vanishes(seed in any::<u64>()) {
        let u = random_field(grid(), Rank::Vector, 5.0, seed);
        let d = ops::div(&ops::curl(&u).unwrap()).unwrap();
        prop_assert!(d.l2_norm() < 1e-11 * u.l2_norm());
    }

    #[test]
    fn leray_is_idempotent_and_solenoidal(seed in any::<u64>()) {
        let u = random_field(grid(), Rank::Vector, 5.0, seed);
        let p = ops::leray(&u).unwrap();
        prop_assert!(ops::div(&p).unwrap().l2_norm() < 1e-11 * u.l2_norm());
        prop_assert!(rel(&ops::leray(&p).unwrap(), &p) < 1e-13);
    }

    #[test]
    fn antidivergence_inverts_divergence(seed in any::<u64>()) {
        let u = random_field(grid(), Rank::Vector, 5.0, seed);
        let r = ops::antidiv(&u).unwrap();
        prop_assert_eq!(r.rank(), Rank::SymTensor);
        let back = ops::div(&r).unwrap();
        prop_assert!(rel(&back, &ops::proj_nonzero(&u)) < 1e-12);
        let tr: f64 = (0..r.grid().len())
            .map(|i| (r.comp(0)[i] + r.comp(3)[i] + r.comp(5)[i]).abs())
            .fold(0.0, f64::max);
        prop_assert!(tr < 1e-12 * r.linf_norm().max(1.0));
    }

    #[test]
    fn inverse_laplacian_undoes_laplacian(seed in any::<u64>()) {
        let f = random_field(grid(), Rank::Scalar, 6.0, seed);
        let back = ops::laplacian(&ops::inv_laplacian(&f));
        prop_assert!(rel(&back, &ops::proj_nonzero(&f)) < 1e-12);
    }

    #[test]
    fn littlewood_paley_shells_sum_to_field(seed in any::<u64>()) {
        let f = random_field(grid(), Rank::Scalar, 7.0, seed);
        let mut sum = PeriodicField::zeros(grid(), Rank::Scalar);
        for j in 0..ops::shell_count(grid()) {
            sum.axpy(1.0, &ops::lp_shell(&f, j)).unwrap();
        }
        prop_assert!(rel(&sum, &ops::proj_nonzero(&f)) < 1e-12);
    }
}

#[test]
fn directional_derivative_of_plane_wave() {
    let g = Grid3::new(32).unwrap();
    let k = [2.0, -1.0, 3.0];
    let zeta = [1.0 / 3.0, 2.0 / 3.0, -2.0 / 3.0];
    let f = PeriodicField::scalar_from_fn(g, |x| (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]).sin());
    let kz = k[0] * zeta[0] + k[1] * zeta[1] + k[2] * zeta[2];
    let exact = PeriodicField::scalar_from_fn(g, |x| kz * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]).cos());
    let d = ops::dir_deriv_s(&Spectrum::forward(&f), zeta).inverse();
    assert!(rel(&d, &exact) < 1e-13);
}

#[test]
fn gradient_of_product_matches_leibniz() {
    let g = Grid3::new(32).unwrap();
    let f = PeriodicField::scalar_from_fn(g, |x| x[0].sin() * x[1].cos());
    let h = PeriodicField::scalar_from_fn(g, |x| (2.0 * x[2]).cos());
    let fh = ops::product(&f, &h, false).unwrap();
    let lhs = ops::grad(&fh).unwrap();
    let exact = PeriodicField::from_fn(g, Rank::Vector, |x, out| {
        let c = (2.0 * x[2]).cos();
        out[0] = x[0].cos() * x[1].cos() * c;
        out[1] = -x[0].sin() * x[1].sin() * c;
        out[2] = -2.0 * x[0].sin() * x[1].cos() * (2.0 * x[2]).sin();
    });
    assert!(rel(&lhs, &exact) < 1e-12);
}

#[test]
fn solenoidal_fields_are_divergence_free() {
    let u = random_solenoidal(grid(), 6.0, 11);
    assert!(ops::div(&u).unwrap().l2_norm() < 1e-12 * u.l2_norm());
}

#[test]
fn rank_mismatch_is_rejected() {
    let f = random_field(grid(), Rank::Scalar, 3.0, 1);
    assert!(ops::div(&f).is_err());
    assert!(ops::antidiv(&f).is_err());
}
