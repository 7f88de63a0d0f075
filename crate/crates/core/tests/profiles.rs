use jetforge::profiles::{make_shape, Profiles};
use std::collections::BTreeMap;
use std::f64::consts::PI;

// Brute-force Cartesian midpoint sums with a finite-difference Laplacian of Φ.
fn cartesian_oracle(p: &Profiles, q: f64) -> (f64, f64) {
    let m = 1200;
    let h = 2.0 / m as f64;
    let e = 1e-4;
    let (mut iq, mut i2) = (0.0, 0.0);
    for a in 0..m {
        for b in 0..m {
            let x = -1.0 + (a as f64 + 0.5) * h;
            let y = -1.0 + (b as f64 + 0.5) * h;
            let lap = (p.big_phi(x + e, y) + p.big_phi(x - e, y) + p.big_phi(x, y + e)
                + p.big_phi(x, y - e)
                - 4.0 * p.big_phi(x, y))
                / (e * e);
            iq += (-lap).abs().powf(q) * h * h;
            i2 += lap * lap * h * h;
        }
    }
    (iq, i2 / (4.0 * PI * PI))
}

#[test]
fn normalisation_matches_cartesian_oracle() {
    let q = 2.01;
    let p = Profiles::default_for(q).unwrap();
    let (iq, cq) = cartesian_oracle(&p, q);
    assert!((iq - 1.0).abs() < 2e-3, "∫|φ|^q = {iq}");
    assert!((cq - p.c_q).abs() < 2e-3 * p.c_q);
    let n = 200_000;
    let h = 2.0 / n as f64;
    let (mut jq, mut j2) = (0.0, 0.0);
    for i in 0..n {
        let z = -1.0 + (i as f64 + 0.5) * h;
        jq += p.psi(z).abs().powf(q) * h;
        j2 += p.psi(z).powi(2) * h;
    }
    assert!((jq - 1.0).abs() < 1e-8);
    assert!((j2 / (2.0 * PI) - p.c_star_q).abs() < 1e-8);
}

#[test]
fn frozen_constants_for_default_shape() {
    let p = Profiles::default_for(2.01).unwrap();
    assert!((p.c_q - 0.0252972).abs() < 1e-6, "c_q = {}", p.c_q);
    assert!((p.c_star_q - 0.159180).abs() < 1e-5, "c*_q = {}", p.c_star_q);
}

#[test]
fn gaussian_shape_normalises() {
    let mut o = BTreeMap::new();
    o.insert("width".to_string(), "0.4".to_string());
    let p = Profiles::new(make_shape("gaussian_truncated", &o).unwrap(), 2.5).unwrap();
    assert!(p.c_q > 0.0 && p.c_star_q > 0.0);
    assert!(p.psi(0.0) == 0.0 && p.psi(1.0) == 0.0);
}
