//! Compactly supported profile pairs (Φ, ψ) built from a radial generator f on [0, 1).
//!
//! Φ(y) = C_Φ f(|y|²) on R², φ = -ΔΦ, ψ(z) = C_ψ z f(z²) on R, with C_Φ, C_ψ fixed by
//! ∫|φ|^q = ∫|ψ|^q = 1.

use crate::error::{Error, Result};
use crate::quadrature::{sign_change_roots, Composite};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

/// Highest derivative order of the generator the shapes must supply.
pub const MAX_GENERATOR_ORDER: usize = 12;

pub trait ProfileShape: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    /// j-th derivative of the generator at s; must vanish for s ≥ 1.
    fn generator(&self, s: f64, j: usize) -> f64;
    /// Parameters as `key = value` pairs, used for reports and config round trips.
    fn params(&self) -> Vec<(String, String)>;
}

#[derive(Clone, Debug)]
pub struct PolyBump {
    pub exponent: u32,
}

fn falling(n: u32, j: usize) -> f64 {
    (0..j).map(|i| n as f64 - i as f64).product()
}

impl ProfileShape for PolyBump {
    fn name(&self) -> &'static str {
        "poly_bump"
    }

    fn generator(&self, s: f64, j: usize) -> f64 {
        if s >= 1.0 || j > self.exponent as usize {
            return 0.0;
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sign * falling(self.exponent, j) * (1.0 - s).powi(self.exponent as i32 - j as i32)
    }

    fn params(&self) -> Vec<(String, String)> {
        vec![("exponent".into(), self.exponent.to_string())]
    }
}

/// exp(-s/w²)(1-s)^N.
#[derive(Clone, Debug)]
pub struct GaussianTruncated {
    pub width: f64,
    pub exponent: u32,
}

impl ProfileShape for GaussianTruncated {
    fn name(&self) -> &'static str {
        "gaussian_truncated"
    }

    fn generator(&self, s: f64, j: usize) -> f64 {
        if s >= 1.0 {
            return 0.0;
        }
        let c = -1.0 / (self.width * self.width);
        let g = (c * s).exp();
        let poly = PolyBump {
            exponent: self.exponent,
        };
        let mut acc = 0.0;
        let mut binom = 1.0;
        for i in 0..=j {
            if i > 0 {
                binom = binom * (j - i + 1) as f64 / i as f64;
            }
            acc += binom * c.powi((j - i) as i32) * g * poly.generator(s, i);
        }
        acc
    }

    fn params(&self) -> Vec<(String, String)> {
        vec![
            ("width".into(), format!("{}", self.width)),
            ("exponent".into(), self.exponent.to_string()),
        ]
    }
}

type ShapeCtor = fn(&BTreeMap<String, String>) -> Result<Arc<dyn ProfileShape>>;

fn opt<T: std::str::FromStr>(o: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match o.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("bad value '{v}' for profile option '{key}'"))),
    }
}

fn make_poly(o: &BTreeMap<String, String>) -> Result<Arc<dyn ProfileShape>> {
    let exponent = opt(o, "exponent", 5u32)?;
    if exponent < 3 {
        return Err(Error::Config("poly_bump exponent must be at least 3".into()));
    }
    Ok(Arc::new(PolyBump { exponent }))
}

fn make_gauss(o: &BTreeMap<String, String>) -> Result<Arc<dyn ProfileShape>> {
    let width = opt(o, "width", 0.5f64)?;
    let exponent = opt(o, "exponent", 4u32)?;
    if !(width > 0.0) || exponent < 3 {
        return Err(Error::Config(
            "gaussian_truncated needs width > 0 and exponent >= 3".into(),
        ));
    }
    Ok(Arc::new(GaussianTruncated { width, exponent }))
}

const SHAPES: &[(&str, ShapeCtor)] = &[("poly_bump", make_poly), ("gaussian_truncated", make_gauss)];

pub fn shape_names() -> Vec<&'static str> {
    SHAPES.iter().map(|(n, _)| *n).collect()
}

pub fn make_shape(name: &str, options: &BTreeMap<String, String>) -> Result<Arc<dyn ProfileShape>> {
    SHAPES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| c(options))
        .unwrap_or_else(|| {
            Err(Error::Unknown {
                kind: "profile shape",
                name: name.into(),
                available: shape_names().join(", "),
            })
        })
}

pub fn default_shape() -> Arc<dyn ProfileShape> {
    Arc::new(PolyBump { exponent: 5 })
}

/// Sum of terms f^{(j)}(s)·p_j(y) where each p_j is a polynomial in one or two variables.
/// Monomials are keyed by exponent pairs; 1D expansions use the second exponent 0.
#[derive(Clone, Debug, Default)]
struct Expansion {
    terms: Vec<(usize, BTreeMap<(u32, u32), f64>)>,
}

impl Expansion {
    fn base(poly: BTreeMap<(u32, u32), f64>) -> Self {
        Self {
            terms: vec![(0, poly)],
        }
    }

    /// ∂ along axis (0 or 1) of Σ f^{(j)}(s) p_j with s = y0² + y1² (or z² in 1D).
    fn diff(&self, axis: usize) -> Self {
        let mut out: BTreeMap<usize, BTreeMap<(u32, u32), f64>> = BTreeMap::new();
        for (j, p) in &self.terms {
            for (&(a, b), &c) in p {
                // chain rule part: f^{(j+1)} · 2 y_axis · p
                let key = if axis == 0 { (a + 1, b) } else { (a, b + 1) };
                *out.entry(j + 1).or_default().entry(key).or_default() += 2.0 * c;
                // polynomial part
                let (e, key) = if axis == 0 { (a, (a.wrapping_sub(1), b)) } else { (b, (a, b.wrapping_sub(1))) };
                if e > 0 {
                    *out.entry(*j).or_default().entry(key).or_default() += c * e as f64;
                }
            }
        }
        Self {
            terms: out
                .into_iter()
                .map(|(j, p)| (j, p.into_iter().filter(|(_, c)| *c != 0.0).collect()))
                .collect(),
        }
    }

    fn eval(&self, shape: &dyn ProfileShape, s: f64, y0: f64, y1: f64) -> f64 {
        let mut acc = 0.0;
        for (j, p) in &self.terms {
            let fj = shape.generator(s, *j);
            if fj == 0.0 {
                continue;
            }
            let mut poly = 0.0;
            for (&(a, b), &c) in p {
                poly += c * y0.powi(a as i32) * y1.powi(b as i32);
            }
            acc += fj * poly;
        }
        acc
    }

    fn max_order(&self) -> usize {
        self.terms.iter().map(|(j, _)| *j).max().unwrap_or(0)
    }
}

/// Highest derivative order of φ and ψ available in closed form.
pub const MAX_DERIVATIVE: usize = 8;

#[derive(Clone, Debug)]
pub struct Profiles {
    shape: Arc<dyn ProfileShape>,
    pub q: f64,
    c_phi: f64,
    c_psi: f64,
    /// ⨍_{T²} φ².
    pub c_q: f64,
    /// ⨍_T ψ².
    pub c_star_q: f64,
    /// Φ derivative expansions indexed by (a, b), a + b ≤ MAX_DERIVATIVE + 2.
    big_phi_d: BTreeMap<(usize, usize), Expansion>,
    /// ψ derivative expansions by order.
    psi_d: Vec<Expansion>,
}

fn unit_poly(a: u32, b: u32) -> BTreeMap<(u32, u32), f64> {
    let mut m = BTreeMap::new();
    m.insert((a, b), 1.0);
    m
}

impl Profiles {
    pub fn new(shape: Arc<dyn ProfileShape>, q: f64) -> Result<Self> {
        if !(q > 1.0) {
            return Err(Error::Invalid(format!("profile exponent q must exceed 1, got {q}")));
        }
        let mut big_phi_d = BTreeMap::new();
        let top = MAX_DERIVATIVE + 2;
        let base = Expansion::base(unit_poly(0, 0));
        let mut rows: Vec<Expansion> = vec![base];
        for a in 1..=top {
            let next = rows[a - 1].diff(0);
            rows.push(next);
        }
        for (a, row) in rows.iter().enumerate() {
            let mut e = row.clone();
            big_phi_d.insert((a, 0), e.clone());
            for b in 1..=(top - a) {
                e = e.diff(1);
                big_phi_d.insert((a, b), e.clone());
            }
        }
        let mut psi_d = vec![Expansion::base(unit_poly(1, 0))];
        for m in 1..=MAX_DERIVATIVE + 1 {
            let next = psi_d[m - 1].diff(0);
            psi_d.push(next);
        }
        let needed = big_phi_d
            .values()
            .chain(psi_d.iter())
            .map(|e| e.max_order())
            .max()
            .unwrap_or(0);
        debug_assert!(needed <= MAX_GENERATOR_ORDER);

        let mut p = Self {
            shape,
            q,
            c_phi: 1.0,
            c_psi: 1.0,
            c_q: 0.0,
            c_star_q: 0.0,
            big_phi_d,
            psi_d,
        };
        // radial φ at unit normalisation, as a function of ρ
        let phi_rho = |rho: f64| p.phi(rho, 0.0);
        let roots = sign_change_roots(phi_rho, 0.0, 1.0, 4000);
        let rule = Composite::with_breaks(0.0, 1.0, &roots, 16, 20);
        let iq = 2.0 * PI * rule.integrate(|rho| phi_rho(rho).abs().powf(q) * rho);
        let i2 = 2.0 * PI * rule.integrate(|rho| phi_rho(rho).powi(2) * rho);
        let zrule = Composite::new(0.0, 1.0, 32, 20);
        let jq = 2.0 * zrule.integrate(|z| p.psi(z).abs().powf(q));
        let j2 = 2.0 * zrule.integrate(|z| p.psi(z).powi(2));
        if !(iq > 0.0 && jq > 0.0) {
            return Err(Error::Invalid("profile generator is identically zero".into()));
        }
        p.c_phi = iq.powf(-1.0 / q);
        p.c_psi = jq.powf(-1.0 / q);
        p.c_q = p.c_phi * p.c_phi * i2 / (4.0 * PI * PI);
        p.c_star_q = p.c_psi * p.c_psi * j2 / (2.0 * PI);
        Ok(p)
    }

    pub fn default_for(q: f64) -> Result<Self> {
        Self::new(default_shape(), q)
    }

    pub fn shape(&self) -> &Arc<dyn ProfileShape> {
        &self.shape
    }

    /// Φ at (y0, y1) ∈ R².
    #[inline]
    pub fn big_phi(&self, y0: f64, y1: f64) -> f64 {
        let s = y0 * y0 + y1 * y1;
        if s >= 1.0 {
            return 0.0;
        }
        self.c_phi * self.shape.generator(s, 0)
    }

    /// φ = -ΔΦ at (y0, y1).
    #[inline]
    pub fn phi(&self, y0: f64, y1: f64) -> f64 {
        let s = y0 * y0 + y1 * y1;
        if s >= 1.0 {
            return 0.0;
        }
        -4.0 * self.c_phi * (self.shape.generator(s, 1) + s * self.shape.generator(s, 2))
    }

    #[inline]
    pub fn psi(&self, z: f64) -> f64 {
        let s = z * z;
        if s >= 1.0 {
            return 0.0;
        }
        self.c_psi * z * self.shape.generator(s, 0)
    }

    #[inline]
    pub fn dpsi(&self, z: f64) -> f64 {
        let s = z * z;
        if s >= 1.0 {
            return 0.0;
        }
        self.c_psi * (self.shape.generator(s, 0) + 2.0 * s * self.shape.generator(s, 1))
    }

    /// ∂^m ψ at z, m ≤ MAX_DERIVATIVE + 1.
    pub fn psi_deriv(&self, z: f64, m: usize) -> f64 {
        let s = z * z;
        if s >= 1.0 {
            return 0.0;
        }
        self.c_psi * self.psi_d[m].eval(self.shape.as_ref(), s, z, 0.0)
    }

    /// ∂_0^a ∂_1^b Φ at (y0, y1), a + b ≤ MAX_DERIVATIVE + 2.
    pub fn big_phi_deriv(&self, y0: f64, y1: f64, a: usize, b: usize) -> f64 {
        let s = y0 * y0 + y1 * y1;
        if s >= 1.0 {
            return 0.0;
        }
        self.c_phi * self.big_phi_d[&(a, b)].eval(self.shape.as_ref(), s, y0, y1)
    }

    /// ∂_0^a ∂_1^b φ at (y0, y1), a + b ≤ MAX_DERIVATIVE.
    pub fn phi_deriv(&self, y0: f64, y1: f64, a: usize, b: usize) -> f64 {
        -(self.big_phi_deriv(y0, y1, a + 2, b) + self.big_phi_deriv(y0, y1, a, b + 2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles() -> Profiles {
        Profiles::default_for(2.01).unwrap()
    }

    #[test]
    fn closed_form_phi_matches_expansion() {
        let p = profiles();
        for &(x, y) in &[(0.1, 0.2), (0.5, -0.3), (0.0, 0.7)] {
            assert!((p.phi(x, y) - p.phi_deriv(x, y, 0, 0)).abs() < 1e-10);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = profiles();
        let h = 1e-5;
        let (x, y) = (0.31, -0.22);
        let fd = (p.phi_deriv(x + h, y, 1, 1) - p.phi_deriv(x - h, y, 1, 1)) / (2.0 * h);
        assert!((fd - p.phi_deriv(x, y, 2, 1)).abs() < 1e-4 * fd.abs().max(1.0));
        let z = 0.4;
        let fd = (p.psi_deriv(z + h, 2) - p.psi_deriv(z - h, 2)) / (2.0 * h);
        assert!((fd - p.psi_deriv(z, 3)).abs() < 1e-4 * fd.abs().max(1.0));
        assert!((p.dpsi(z) - p.psi_deriv(z, 1)).abs() < 1e-10);
    }

    #[test]
    fn gaussian_generator_derivative() {
        let g = GaussianTruncated { width: 0.5, exponent: 4 };
        let h = 1e-6;
        let s = 0.3;
        let fd = (g.generator(s + h, 1) - g.generator(s - h, 1)) / (2.0 * h);
        assert!((fd - g.generator(s, 2)).abs() < 1e-5 * fd.abs());
    }

    #[test]
    fn unknown_shape_is_reported() {
        let e = make_shape("square", &BTreeMap::new()).unwrap_err();
        assert!(e.to_string().contains("poly_bump"));
    }
}
