use jetforge::geometry::DirectionSet;
use proptest::prelude::*;

const ID: [f64; 6] = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];

// Frobenius norm in symmetric coordinates: off-diagonal entries count twice.
fn frob(e: &[f64; 6]) -> f64 {
    let w = [1.0, 2.0, 2.0, 1.0, 2.0, 1.0];
    e.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

fn scaled(dir: [f64; 6], radius: f64) -> [f64; 6] {
    let n = frob(&dir).max(1e-12);
    let mut r = ID;
    for c in 0..6 {
        r[c] += dir[c] / n * radius;
    }
    r
}

proptest! {
    #[test]
    fn reconstruction_is_exact_on_any_symmetric_matrix(
        dir in prop::array::uniform6(-1.0f64..1.0),
        radius in 0.0f64..2.0,
    ) {
        let set = DirectionSet::default_set();
        let r = scaled(dir, radius);
        for fam in &set.families {
            let back = fam.reconstruct(&r, set.n_lambda);
            for c in 0..6 {
                prop_assert!((back[c] - r[c]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn coefficients_positive_inside_certified_radius(
        dir in prop::array::uniform6(-1.0f64..1.0),
        frac in 0.0f64..0.999,
    ) {
        let set = DirectionSet::default_set();
        for fam in &set.families {
            let r = scaled(dir, frac * fam.certified_radius());
            let g = fam.gammas(&r);
            prop_assert!(g.is_ok());
            prop_assert!(g.unwrap().iter().all(|&x| x > 0.0));
        }
    }
}

#[test]
fn identity_coefficients_give_identity() {
    let set = DirectionSet::default_set();
    let fam = set.family(0);
    let g = fam.identity_coefficients();
    assert!(g.iter().all(|&x| x > 0.0));
    let back = fam.reconstruct(&ID, set.n_lambda);
    assert!(back.iter().zip(ID).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn far_from_identity_hits_the_domain_error() {
    let set = DirectionSet::default_set();
    let r = [1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
    assert!(set.family(0).gammas(&r).is_err());
}
