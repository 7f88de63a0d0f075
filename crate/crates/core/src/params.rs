//! Parameter ledger, level schedule and feasibility of the inequality system.
//!
//! Ledger scalars are exact rationals (decimal literals parse exactly); the
//! schedule is computed in log10 form because λ_m = a^{b^m} overflows quickly.

use crate::error::{Error, Result};
use crate::geometry::DirectionSet;
use crate::grid::Grid3;
use crate::jets::JetParams;
use crate::profiles::Profiles;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

pub type Q = BigRational;

fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

fn qr(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Parse "3", "-1/4", "0.0125", "2.5e-3" as an exact rational.
pub fn parse_rational(s: &str) -> Option<Q> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Q::new(n, d));
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut v = if scale >= 0 {
        Q::from_integer(digits * num_traits::pow(ten, scale as usize))
    } else {
        Q::new(digits, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        v = -v;
    }
    Some(v)
}

/// Canonical text of a rational: "n" or "n/d".
pub fn rational_text(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Rational with `sig` significant decimal digits of x.
pub fn rational_from_f64(x: f64, sig: usize) -> Q {
    parse_rational(&format!("{:.*e}", sig.saturating_sub(1), x)).unwrap_or_else(Q::zero)
}

fn log10_bigint(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits <= 1000 {
        return n.to_f64().unwrap_or(f64::NAN).abs().log10();
    }
    let shift = bits - 60;
    let top = (n.abs() >> shift).to_f64().unwrap_or(f64::NAN);
    top.log10() + shift as f64 * 2f64.log10()
}

/// log10 of a positive rational without overflow.
pub fn log10_rational(x: &Q) -> f64 {
    log10_bigint(x.numer()) - log10_bigint(x.denom())
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        let l = log10_rational(&x.abs());
        let v = 10f64.powf(l);
        if x.is_negative() {
            -v
        } else {
            v
        }
    })
}

/// A rational, optionally times π (for the time horizon).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Literal {
    pub coefficient: Q,
    pub times_pi: bool,
}

impl Literal {
    pub fn rational(x: Q) -> Self {
        Self {
            coefficient: x,
            times_pi: false,
        }
    }

    pub fn pi_multiple(x: Q) -> Self {
        Self {
            coefficient: x,
            times_pi: true,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some(head) = t.strip_suffix("pi") {
            let head = head.trim().trim_end_matches('*').trim();
            let c = if head.is_empty() {
                Q::one()
            } else {
                parse_rational(head).ok_or_else(|| Error::Config(format!("bad literal '{s}'")))?
            };
            return Ok(Self::pi_multiple(c));
        }
        parse_rational(t)
            .map(Self::rational)
            .ok_or_else(|| Error::Config(format!("bad literal '{s}'")))
    }

    pub fn value(&self) -> f64 {
        to_f64(&self.coefficient) * if self.times_pi { PI } else { 1.0 }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.times_pi, self.coefficient.is_one()) {
            (false, _) => write!(f, "{}", rational_text(&self.coefficient)),
            (true, true) => write!(f, "pi"),
            (true, false) => write!(f, "{}*pi", rational_text(&self.coefficient)),
        }
    }
}

/// The base a, either given directly or as a = N^{1/θ} with N ∈ N, θ the integrality exponent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Base {
    Value(Q),
    Root(BigInt),
}

impl Base {
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some(n) = t.strip_prefix("root:") {
            let n: BigInt = n
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad root witness '{s}'")))?;
            if n < BigInt::from(2) {
                return Err(Error::Config("root witness must be an integer >= 2".into()));
            }
            return Ok(Self::Root(n));
        }
        parse_rational(t)
            .map(Self::Value)
            .ok_or_else(|| Error::Config(format!("bad value for a: '{s}'")))
    }
}

impl fmt::Display for Base {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Base::Value(v) => write!(f, "{}", rational_text(v)),
            Base::Root(n) => write!(f, "root:{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLedger {
    pub a: Base,
    pub b: Q,
    pub beta: Q,
    pub q: Q,
    /// The constant A in ε* = (3 - q)/A.
    pub big_a: Q,
    pub eps: Q,
    pub nu: Q,
    pub p_aux: Q,
    pub t_end: Literal,
    pub e_max: Q,
}

pub const LEDGER_KEYS: [&str; 10] = ["a", "b", "beta", "q", "A", "eps", "nu", "p_aux", "T", "e_max"];

impl ParamLedger {
    /// Small-scale ledger used by the desk presets. It violates the asymptotic system.
    pub fn desk() -> Self {
        Self {
            a: Base::Value(qi(2)),
            b: qi(2),
            beta: qr(1, 10),
            q: qr(5, 2),
            big_a: qi(5),
            eps: qr(1, 40),
            nu: qi(1),
            p_aux: qr(3, 2),
            t_end: Literal::pi_multiple(qi(1)),
            e_max: qi(2),
        }
    }

    pub fn eps_star(&self) -> Q {
        (qi(3) - &self.q) / &self.big_a
    }

    /// θ = (3 - q - (q+2)ε*)/3, the exponent with λσ = λ^θ.
    pub fn theta(&self) -> Q {
        (qi(3) - &self.q - (&self.q + qi(2)) * self.eps_star()) / qi(3)
    }

    /// Exponents of σ, r, μ as powers of λ_{m+1}.
    pub fn sigma_exponent(&self) -> Q {
        -(&self.q + (&self.q + qi(2)) * self.eps_star()) / qi(3)
    }

    pub fn r_exponent(&self) -> Q {
        -(&self.q - (qi(4) - &self.q) * self.eps_star()) / qi(3)
    }

    pub fn mu_exponent(&self) -> Q {
        qi(1) + qi(2) * self.eps_star()
    }

    /// Exponent of λ in μ^{-1}(σ²r)^{-1/q} + ε*; zero exactly.
    pub fn exponent_identity_residual(&self) -> Q {
        let s = qi(2) * self.sigma_exponent() + self.r_exponent();
        -self.mu_exponent() - s / &self.q + self.eps_star()
    }

    pub fn log10_a(&self) -> f64 {
        match &self.a {
            Base::Value(v) => log10_rational(v),
            Base::Root(n) => log10_bigint(n) / to_f64(&self.theta()),
        }
    }

    pub fn log10_lambda(&self, m: u32) -> f64 {
        to_f64(&self.b).powi(m as i32) * self.log10_a()
    }

    /// log10 δ_m.
    pub fn log10_delta(&self, m: u32) -> f64 {
        let beta = to_f64(&self.beta);
        let q = to_f64(&self.q);
        let es = to_f64(&self.eps_star());
        -2.0 * beta * self.log10_lambda(m)
            + (2.0 * beta + (q - 2.0) * (1.0 + es)) * self.log10_lambda(1)
            + log10_rational(&self.e_max)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Invalid(msg.into())) };
        check(self.b > qi(1), "b must exceed 1")?;
        if let Base::Value(a) = &self.a {
            check(*a > qi(1), "a must exceed 1")?;
        }
        check(self.beta > qi(0) && self.beta < qi(1), "beta must lie in (0, 1)")?;
        check(self.q > qi(2) && self.q < qi(3), "q must lie in (2, 3)")?;
        check(self.big_a > qi(0), "A must be positive")?;
        check(self.eps > qi(0), "eps must be positive")?;
        check(self.nu > qi(0), "nu must be positive")?;
        check(self.e_max > qi(0), "e_max must be positive")?;
        check(self.t_end.coefficient > qi(0), "T must be positive")?;
        check(self.theta() > qi(0), "3 - q - (q+2)eps* must be positive")
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("a".into(), self.a.to_string()),
            ("b".into(), rational_text(&self.b)),
            ("beta".into(), rational_text(&self.beta)),
            ("q".into(), rational_text(&self.q)),
            ("A".into(), rational_text(&self.big_a)),
            ("eps".into(), rational_text(&self.eps)),
            ("nu".into(), rational_text(&self.nu)),
            ("p_aux".into(), rational_text(&self.p_aux)),
            ("T".into(), self.t_end.to_string()),
            ("e_max".into(), rational_text(&self.e_max)),
        ]
    }

    /// Build from key/value pairs; missing keys fall back to the desk ledger.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut l = Self::desk();
        for (k, v) in pairs {
            let rat = || parse_rational(v).ok_or_else(|| Error::Config(format!("bad value for {k}: '{v}'")));
            match k.as_str() {
                "a" => l.a = Base::parse(v)?,
                "b" => l.b = rat()?,
                "beta" => l.beta = rat()?,
                "q" => l.q = rat()?,
                "A" => l.big_a = rat()?,
                "eps" => l.eps = rat()?,
                "nu" => l.nu = rat()?,
                "p_aux" => l.p_aux = rat()?,
                "T" => l.t_end = Literal::parse(v)?,
                "e_max" => l.e_max = rat()?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown ledger key '{k}' (expected one of {})",
                        LEDGER_KEYS.join(", ")
                    )))
                }
            }
        }
        Ok(l)
    }

    /// κ* = 36·11^{1/q}(c_q c*_q)^{-1/2} max_ζ sup|γ_ζ| on the quarter ball.
    pub fn kappa_star(&self, profiles: &Profiles, set: &DirectionSet) -> f64 {
        let q = to_f64(&self.q);
        let g = set.family(0).gamma_sup(0.25).max(set.family(1).gamma_sup(0.25));
        36.0 * 11f64.powf(1.0 / q) / (profiles.c_q * profiles.c_star_q).sqrt() * g
    }
}

/// A positive quantity held as log10 with its linear value when representable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Magnitude {
    pub log10: f64,
}

impl Magnitude {
    pub fn linear(self) -> Option<f64> {
        (self.log10.abs() < 300.0).then(|| 10f64.powf(self.log10))
    }
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.linear() {
            Some(v) => write!(f, "{v:.6e}"),
            None => write!(f, "1e{:.3}", self.log10),
        }
    }
}

/// Level m: λ_m, δ_m and the step parameters built from λ_{m+1}.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleRow {
    pub m: u32,
    pub lambda: Magnitude,
    pub delta: Magnitude,
    pub sigma: Magnitude,
    pub r: Magnitude,
    pub mu: Magnitude,
    pub ell: Magnitude,
    pub i_max: u64,
}

pub fn derive_schedule(ledger: &ParamLedger, m_max: u32) -> Result<Vec<ScheduleRow>> {
    ledger.validate()?;
    let q = to_f64(&ledger.q);
    let es = to_f64(&ledger.eps_star());
    let beta = to_f64(&ledger.beta);
    let b = to_f64(&ledger.b);
    let (se, re, me) = (
        to_f64(&ledger.sigma_exponent()),
        to_f64(&ledger.r_exponent()),
        to_f64(&ledger.mu_exponent()),
    );
    let imax_rate = 2.0 * ((q - 2.0) * (1.0 + es) + (5.0 + beta * (b - 1.0)) / b);
    (0..=m_max)
        .map(|m| {
            let l = ledger.log10_lambda(m);
            let l1 = ledger.log10_lambda(m + 1);
            let (dm, dm1) = (ledger.log10_delta(m), ledger.log10_delta(m + 1));
            let s = (q - 2.0) / q * (2.0 * se + re) * l1;
            let ell = s + 0.5 * dm1 - 5.0 * l - 0.5 * dm;
            let log2 = imax_rate * l1 / 2f64.log10();
            if !ell.is_finite() || !log2.is_finite() {
                return Err(Error::Invalid(format!("schedule not finite at m = {m}")));
            }
            Ok(ScheduleRow {
                m,
                lambda: Magnitude { log10: l },
                delta: Magnitude { log10: dm },
                sigma: Magnitude { log10: se * l1 },
                r: Magnitude { log10: re * l1 },
                mu: Magnitude { log10: me * l1 },
                ell: Magnitude { log10: ell },
                i_max: log2.ceil().max(0.0).min(u64::MAX as f64) as u64,
            })
        })
        .collect()
}

/// Exact verdict on a^θ ∈ N and b ∈ N.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralityWitness {
    pub theta: Q,
    pub a_power_integer: bool,
    pub b_integer: bool,
    /// a^θ as text when it is an integer of modest size, else its log10.
    pub value: String,
}

pub fn integrality_witness(ledger: &ParamLedger) -> IntegralityWitness {
    let theta = ledger.theta();
    let b_integer = ledger.b.is_integer();
    if !theta.is_positive() {
        return IntegralityWitness {
            theta,
            a_power_integer: false,
            b_integer,
            value: "theta <= 0".into(),
        };
    }
    let (ok, value) = match &ledger.a {
        Base::Root(n) => (true, n.to_string()),
        Base::Value(a) => {
            let n = theta.numer().to_u32();
            let d = theta.denom().to_u32();
            match (n, d, a.is_integer()) {
                (Some(n), Some(d), true) => {
                    let c = a.numer().nth_root(d);
                    if num_traits::pow(c.clone(), d as usize) == *a.numer() {
                        let v = if n <= 4096 {
                            num_traits::pow(c, n as usize).to_string()
                        } else {
                            format!("1e{:.3}", n as f64 * log10_bigint(&c))
                        };
                        (true, v)
                    } else {
                        (false, format!("1e{:.6}", log10_rational(a) * to_f64(&theta)))
                    }
                }
                _ => (false, format!("1e{:.6}", log10_rational(a) * to_f64(&theta))),
            }
        }
    };
    IntegralityWitness {
        theta,
        a_power_integer: ok,
        b_integer,
        value,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: &'static str,
    pub group: &'static str,
    pub satisfied: bool,
    /// Relative slack (rhs - lhs)/|rhs|; negative when violated.
    pub margin: f64,
    pub detail: String,
}

enum Num {
    Exact(Q),
    Float(f64),
}

impl Num {
    fn f(&self) -> f64 {
        match self {
            Num::Exact(q) => to_f64(q),
            Num::Float(x) => *x,
        }
    }
}

fn compare(name: &'static str, group: &'static str, lhs: Num, rhs: Num, strict: bool) -> Constraint {
    let satisfied = match (&lhs, &rhs) {
        (Num::Exact(l), Num::Exact(r)) => {
            if strict {
                l < r
            } else {
                l <= r
            }
        }
        _ => {
            let (l, r) = (lhs.f(), rhs.f());
            if strict {
                l < r
            } else {
                l <= r
            }
        }
    };
    let (l, r) = (lhs.f(), rhs.f());
    let raw = if r != 0.0 { (r - l) / r.abs() } else { r - l };
    let margin = if raw.is_nan() { -1.0 } else { raw };
    Constraint {
        name,
        group,
        satisfied: satisfied && !raw.is_nan(),
        margin,
        detail: format!("{} {} {}", fmt_short(l), if strict { "<" } else { "<=" }, fmt_short(r)),
    }
}

fn fmt_short(x: f64) -> String {
    format!("{x:.6e}")
}

fn flag(name: &'static str, group: &'static str, ok: bool, detail: String) -> Constraint {
    Constraint {
        name,
        group,
        satisfied: ok,
        margin: if ok { 1.0 } else { -1.0 },
        detail,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub constraints: Vec<Constraint>,
    pub witness: IntegralityWitness,
    /// Lower bound on b solving the implicit b inequality of the q-b window, if it exists.
    pub b_fixed_point: Option<f64>,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.constraints.iter().all(|c| c.satisfied)
    }

    pub fn violated(&self) -> Vec<&Constraint> {
        self.constraints.iter().filter(|c| !c.satisfied).collect()
    }

    /// Smallest relative margin overall.
    pub fn binding(&self) -> &Constraint {
        self.constraints
            .iter()
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
            .expect("nonempty constraint list")
    }

    pub fn get(&self, name: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["name", "group", "satisfied", "margin", "detail"])?;
        for c in &self.constraints {
            out.write_record([
                c.name,
                c.group,
                if c.satisfied { "true" } else { "false" },
                &crate::io::fmt_f64(c.margin),
                &c.detail,
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluate every constraint of the parameter system.
pub fn check_feasibility(l: &ParamLedger) -> FeasibilityReport {
    use Num::{Exact as E, Float as F};
    let mut cs = Vec::new();
    let (q, b, beta, eps, es, p) = (&l.q, &l.b, &l.beta, &l.eps, l.eps_star(), &l.p_aux);
    let qf = to_f64(q);
    let (bf, betaf, epsf, esf) = (to_f64(b), to_f64(beta), to_f64(eps), to_f64(&es));
    let zero = || E(qi(0));
    let one_es = qi(1) + &es;
    let load = qi(5) + beta * (b - qi(1));

    cs.push(compare("q_above_2", "basic", zero(), E(q - qi(2)), true));
    cs.push(compare("q_below_3", "basic", E(q.clone()), E(qi(3)), true));
    cs.push(compare("a_above_1", "basic", E(qi(0)), F(l.log10_a()), true));
    cs.push(compare("b_above_1", "basic", E(qi(1)), E(b.clone()), true));
    cs.push(compare("beta_positive", "basic", zero(), E(beta.clone()), true));
    cs.push(compare("beta_below_1", "basic", E(beta.clone()), E(qi(1)), true));
    cs.push(compare("A_above_q_plus_2", "basic", E(q + qi(2)), E(l.big_a.clone()), true));
    cs.push(compare("eps_star_below_quarter", "basic", E(es.clone()), E(qr(1, 4)), true));
    cs.push(compare("eps_positive", "basic", zero(), E(eps.clone()), true));
    cs.push(compare("eps_below_half_eps_star", "basic", E(eps.clone()), E(&es / qi(2)), true));
    cs.push(compare("p_aux_above_1", "basic", E(qi(1)), E(p.clone()), true));
    cs.push(compare("p_aux_at_most_2", "basic", E(p.clone()), E(qi(2)), false));

    let w = integrality_witness(l);
    cs.push(compare("theta_positive", "integrality", zero(), E(w.theta.clone()), true));
    cs.push(flag(
        "a_power_integer",
        "integrality",
        w.a_power_integer,
        format!("a^{} = {}", rational_text(&w.theta), w.value),
    ));
    cs.push(flag("b_integer", "integrality", w.b_integer, format!("b = {}", rational_text(b))));

    // q-b window: q bound from a quadratic, plus an implicit lower bound on b.
    let loadf = 5.0 + betaf * (bf - 1.0);
    let tau1 = 121.0 * (1.0 + esf) + 60.0 * loadf / bf;
    let tau2 = 1.0 - 120.0 * loadf / bf;
    let disc = tau1 * tau1 + 240.0 * (1.0 + esf) * tau2;
    let q_bound1 = if disc >= 0.0 {
        240.0 * (1.0 + esf) * tau2 / (disc.sqrt() + tau1) / (120.0 * (1.0 + esf))
    } else {
        f64::NAN
    };
    cs.push(compare("qb_window_q", "qb-window", F(qf - 2.0), F(q_bound1), false));
    let th3 = qi(3) - q - (q + qi(2)) * &es;
    let mut b_fixed_point = None;
    if th3.is_positive() {
        let c = qi(60) * q / &th3;
        cs.push(compare("qb_window_b", "qb-window", E(&c * &load), E(b.clone()), true));
        let denom = qi(1) - &c * beta;
        if denom.is_positive() {
            b_fixed_point = Some(to_f64(&(&c * (qi(5) - beta) / denom)));
        }
    } else {
        cs.push(flag("qb_window_b", "qb-window", false, "3 - q - (q+2)eps* <= 0".into()));
    }

    let tau3 = 10.0 - epsf + 2.0 * betaf * (bf - 1.0);
    let x = 16.0 * bf * epsf * (1.0 + esf);
    let q_bound2 = x / ((tau3 * tau3 + x).sqrt() + tau3) / (4.0 * bf * (1.0 + esf));
    cs.push(compare("q_window", "q-window", F(qf - 2.0), F(q_bound2), true));

    cs.push(compare(
        "linear_window_q",
        "linear-window",
        E(q - qi(2)),
        E(eps / (qi(34) * &one_es)),
        false,
    ));
    cs.push(compare("linear_window_b", "linear-window", E(qi(34) * &load / eps), E(b.clone()), true));

    let gap = &es - qi(2) * eps;
    if gap.is_positive() {
        cs.push(compare(
            "system_q",
            "four-part",
            E(q - qi(2)),
            E(&gap / (qi(144) * &one_es)),
            false,
        ));
        cs.push(compare("system_b", "four-part", E(qi(720) / &gap), E(b.clone()), false));
        cs.push(compare(
            "system_beta",
            "four-part",
            E(beta.clone()),
            E(&gap / (qi(4) * (qi(36) + qi(2) * b))),
            false,
        ));
        cs.push(compare(
            "system_p",
            "four-part",
            E(p - qi(1)),
            E(&gap / (q * (qi(1) + eps))),
            false,
        ));
    } else {
        for n in ["system_q", "system_b", "system_beta", "system_p"] {
            cs.push(flag(n, "four-part", false, "eps* - 2 eps <= 0".into()));
        }
    }

    let b2beta = b * b * beta;
    cs.push(compare("b_beta_half", "b-beta", E(b * beta), E(qr(1, 2)), true));
    cs.push(compare("two_b2_beta_eps", "b-beta", E(qi(2) * &b2beta), E(eps.clone()), false));
    cs.push(compare("b2_beta_quarter", "b-beta", E(b2beta), E(qr(1, 4)), false));

    // ℓ = s λ_m^{-5-β(b-1)}: log_{λ_m} of the ratios to the two window ends.
    let drift = beta * (b - qi(1));
    let lower = qi(1) - &drift;
    let mut c = compare("ell_above_lower_end", "mollifier-window", zero(), E(lower.clone()), true);
    c.detail = format!("ell / (lambda^-6 s) = lambda^{:.6e}", to_f64(&lower));
    cs.push(c);
    let mut c = compare("ell_below_upper_end", "mollifier-window", zero(), E(drift.clone()), true);
    c.detail = format!("(lambda^-5 s) / ell = lambda^{:.6e}", to_f64(&drift));
    cs.push(c);

    FeasibilityReport {
        constraints: cs,
        witness: w,
        b_fixed_point,
    }
}

/// Search box for `search_admissible`; every axis is sampled on `resolution` points.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBox {
    pub log10_q_minus_2: (f64, f64),
    pub eps_star: (f64, f64),
    /// ε as a fraction of ε*/2.
    pub eps_fraction: (f64, f64),
    pub log10_b: (f64, f64),
    /// β as a fraction of the smallest of its caps.
    pub beta_fraction: (f64, f64),
    pub q_points_per_resolution: usize,
}

impl SearchBox {
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self {
                log10_q_minus_2: (-7.0, -2.0),
                eps_star: (0.05, 0.24),
                eps_fraction: (0.05, 0.95),
                log10_b: (3.0, 7.0),
                beta_fraction: (0.1, 0.9),
                q_points_per_resolution: 4,
            }),
            _ => Err(Error::Unknown {
                kind: "search box",
                name: name.into(),
                available: "default".into(),
            }),
        }
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathPoint {
    pub eps_fraction: f64,
    pub max_q: Option<f64>,
    pub eps_at_max: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    /// Admissible ledgers, descending q.
    pub admissible: Vec<ParamLedger>,
    pub evaluated: usize,
    /// For each infeasible point, the constraint with the smallest margin.
    pub histogram: BTreeMap<String, usize>,
    /// Largest admissible q for each ε fraction, ascending fraction.
    pub eps_path: Vec<PathPoint>,
    /// Tightest constraint at the largest admissible q.
    pub binding_at_max: Option<String>,
}

impl SearchResult {
    pub fn summary(&self) -> String {
        let hist: Vec<String> = self.histogram.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        format!(
            "{} of {} points admissible; binding constraints among rejected points: {}",
            self.admissible.len(),
            self.evaluated,
            hist.join(", ")
        )
    }

    /// max q is non-increasing as the ε fraction decreases from the peak to the smallest value.
    pub fn path_decreases_toward_zero(&self) -> bool {
        let qs: Vec<f64> = self.eps_path.iter().map(|p| p.max_q.unwrap_or(2.0)).collect();
        let Some(peak) = qs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0) else {
            return false;
        };
        peak > 0 && qs[..=peak].windows(2).all(|w| w[0] <= w[1]) && qs[0] < qs[peak]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut head: Vec<&str> = LEDGER_KEYS.to_vec();
        head.push("eps_star");
        out.write_record(&head)?;
        for l in &self.admissible {
            let mut row: Vec<String> = l.to_pairs().into_iter().map(|p| p.1).collect();
            row.push(rational_text(&l.eps_star()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn candidate(qm2: f64, es: f64, f: f64, b: f64, bf: f64) -> ParamLedger {
    let q = qi(2) + rational_from_f64(qm2, 4);
    let es = rational_from_f64(es, 4);
    let big_a = (qi(3) - &q) / &es;
    let eps = rational_from_f64(f, 4) * &es / qi(2);
    let b = qi(b.round() as i64);
    let gap = to_f64(&(&es - qi(2) * &eps));
    let bb = to_f64(&b);
    let cap = [
        gap / (4.0 * (36.0 + 2.0 * bb)),
        to_f64(&eps) / (2.0 * bb * bb),
        0.25 / (bb * bb),
        0.5 / bb,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let beta = rational_from_f64(bf * cap, 4);
    let pcap = gap / (to_f64(&q) * (1.0 + to_f64(&eps)));
    let p_aux = qi(1) + rational_from_f64(0.5 * pcap.max(0.0), 4);
    ParamLedger {
        a: Base::Root(BigInt::from(2)),
        b,
        beta,
        q,
        big_a,
        eps,
        nu: qi(1),
        p_aux,
        t_end: Literal::pi_multiple(qi(1)),
        e_max: qi(2),
    }
}

/// Grid search over (q, ε*, ε, b, β); a is the root witness a = 2^{1/θ}.
pub fn search_admissible(bx: &SearchBox, resolution: usize) -> Result<SearchResult> {
    if resolution < 2 {
        return Err(Error::Invalid("search resolution must be at least 2".into()));
    }
    let qs = axis(bx.log10_q_minus_2.0, bx.log10_q_minus_2.1, resolution * bx.q_points_per_resolution.max(1));
    let ess = axis(bx.eps_star.0, bx.eps_star.1, resolution);
    let fs = axis(bx.eps_fraction.0, bx.eps_fraction.1, resolution);
    let bs = axis(bx.log10_b.0, bx.log10_b.1, resolution);
    let betas = axis(bx.beta_fraction.0, bx.beta_fraction.1, resolution.min(3));
    let mut points = Vec::new();
    for (fi, &f) in fs.iter().enumerate() {
        for &es in &ess {
            for &lb in &bs {
                for &bf in &betas {
                    for &lq in &qs {
                        points.push((fi, lq, es, f, lb, bf));
                    }
                }
            }
        }
    }
    let evaluated: Vec<(usize, Option<ParamLedger>, Option<String>)> = crate::fft::pool().install(|| {
        points
            .par_iter()
            .map(|&(fi, lq, es, f, lb, bf)| {
                let l = candidate(10f64.powf(lq), es, f, 10f64.powf(lb), bf);
                let rep = check_feasibility(&l);
                if rep.feasible() {
                    (fi, Some(l), None)
                } else {
                    (fi, None, Some(rep.binding().name.to_string()))
                }
            })
            .collect()
    });
    let mut histogram = BTreeMap::new();
    let mut admissible = Vec::new();
    let mut best: Vec<Option<ParamLedger>> = vec![None; fs.len()];
    for (fi, l, bind) in evaluated {
        if let Some(n) = bind {
            *histogram.entry(n).or_insert(0) += 1;
        }
        if let Some(l) = l {
            if best[fi].as_ref().map_or(true, |b| l.q > b.q) {
                best[fi] = Some(l.clone());
            }
            admissible.push(l);
        }
    }
    admissible.sort_by(|a, b| b.q.cmp(&a.q));
    let eps_path = fs
        .iter()
        .zip(&best)
        .map(|(&f, b)| PathPoint {
            eps_fraction: f,
            max_q: b.as_ref().map(|l| to_f64(&l.q)),
            eps_at_max: b.as_ref().map(|l| to_f64(&l.eps)),
        })
        .collect();
    let binding_at_max = admissible.first().map(|l| check_feasibility(l).binding().name.to_string());
    Ok(SearchResult {
        admissible,
        evaluated: points.len(),
        histogram,
        eps_path,
        binding_at_max,
    })
}

pub const PRESET_NAMES: [&str; 3] = ["identity_scale", "tiny", "micro"];

/// A desk-scale configuration where exact identities can be checked.
#[derive(Clone, Debug)]
pub struct DeskPreset {
    pub name: &'static str,
    pub ledger: ParamLedger,
    pub jet: JetParams,
    pub grid: Grid3,
    pub n_t: usize,
    pub report: FeasibilityReport,
    /// Every inequality knowingly violated by the preset.
    pub violated: Vec<String>,
}

pub fn desk_preset(name: &str) -> Result<DeskPreset> {
    let ledger = ParamLedger::desk();
    let q = to_f64(&ledger.q);
    let (name, ls, sigma, r, mu, n, n_t): (&'static str, u64, f64, f64, f64, usize, usize) = match name {
        "identity_scale" => ("identity_scale", 1, 0.25, 0.25, 4.0, 96, 9),
        "tiny" => ("tiny", 2, 0.125, 0.25, 16.0, 128, 33),
        "micro" => ("micro", 1, 0.125, 0.25, 8.0, 256, 33),
        _ => {
            return Err(Error::Unknown {
                kind: "preset",
                name: name.into(),
                available: PRESET_NAMES.join(", "),
            })
        }
    };
    let jet = JetParams::from_lambda_sigma(ls, sigma, r, mu, q)?;
    let report = check_feasibility(&ledger);
    let mut violated: Vec<String> = report.violated().iter().map(|c| c.name.to_string()).collect();
    if !jet.hierarchy_holds() {
        violated.push("sigma_below_r_below_1_below_mu".into());
    }
    let grid = Grid3::new(n)?;
    if grid.n() < jet.required_n() {
        violated.push(format!("resolution_n_{}_below_{}", grid.n(), jet.required_n()));
    }
    Ok(DeskPreset {
        name,
        ledger,
        jet,
        grid,
        n_t,
        report,
        violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_ledger() -> ParamLedger {
        ParamLedger::desk()
    }

    #[test]
    fn power_tower() {
        let l = base_ledger();
        let s = derive_schedule(&l, 3).unwrap();
        let lam: Vec<f64> = s.iter().map(|r| r.lambda.linear().unwrap()).collect();
        for (v, e) in lam.iter().zip([2.0, 4.0, 16.0, 256.0]) {
            assert!((v - e).abs() < 1e-9 * e, "{v} vs {e}");
        }
    }

    #[test]
    fn eps_star_value() {
        let l = base_ledger();
        assert_eq!(l.eps_star(), qr(1, 10));
    }

    #[test]
    fn exponent_identity_is_exact() {
        let mut l = base_ledger();
        assert!(l.exponent_identity_residual().is_zero());
        l.q = parse_rational("2.0003").unwrap();
        l.big_a = parse_rational("4.7").unwrap();
        assert!(l.exponent_identity_residual().is_zero());
    }

    #[test]
    fn literal_decimals_are_exact() {
        assert_eq!(parse_rational("0.0125").unwrap(), qr(1, 80));
        assert_eq!(parse_rational("2.5e-3").unwrap(), qr(1, 400));
        assert_eq!(parse_rational("-3/6").unwrap(), qr(-1, 2));
        assert!(parse_rational("1/0").is_none());
        assert!(parse_rational("x").is_none());
        assert_eq!(Literal::parse("3/2*pi").unwrap().to_string(), "3/2*pi");
        assert!((Literal::parse("pi").unwrap().value() - PI).abs() < 1e-15);
    }

    #[test]
    fn integrality_exact_for_perfect_power() {
        let mut l = base_ledger();
        assert_eq!(l.theta(), qr(1, 60));
        assert!(!integrality_witness(&l).a_power_integer);
        l.a = Base::Value(Q::from_integer(num_traits::pow(BigInt::from(2), 60)));
        let w = integrality_witness(&l);
        assert!(w.a_power_integer);
        assert_eq!(w.value, "2");
        l.a = Base::Value(Q::from_integer(num_traits::pow(BigInt::from(2), 60) + 1));
        assert!(!integrality_witness(&l).a_power_integer);
    }

    #[test]
    fn large_q_fails_linear_window() {
        let mut l = base_ledger();
        l.q = parse_rational("2.9").unwrap();
        l.big_a = qi(1);
        l.eps = parse_rational("0.01").unwrap();
        let r = check_feasibility(&l);
        let c = r.get("linear_window_q").unwrap();
        assert!(!c.satisfied && c.margin < 0.0);
    }

    #[test]
    fn eps_window_flagged() {
        let mut l = base_ledger();
        l.eps = qr(1, 20);
        let r = check_feasibility(&l);
        assert!(!r.get("eps_below_half_eps_star").unwrap().satisfied);
    }

    #[test]
    fn schedule_monotone_and_ordered() {
        let s = derive_schedule(&base_ledger(), 4).unwrap();
        for w in s.windows(2) {
            assert!(w[1].lambda.log10 > w[0].lambda.log10);
            assert!(w[1].delta.log10 < w[0].delta.log10);
        }
        for r in &s {
            assert!(r.sigma.log10 < r.r.log10 && r.r.log10 < 0.0 && r.mu.log10 > 0.0);
        }
        // log-domain survives where the linear value does not
        let big = derive_schedule(&base_ledger(), 12).unwrap();
        assert!(big[12].lambda.linear().is_none());
        assert!(big[12].lambda.to_string().starts_with("1e"));
    }

    #[test]
    fn ell_window_matches_schedule() {
        let l = base_ledger();
        let s = derive_schedule(&l, 2).unwrap();
        let r = &s[1];
        let q = to_f64(&l.q);
        let sr = (q - 2.0) / q * (2.0 * r.sigma.log10 + r.r.log10);
        let lower = (r.ell.log10 - (sr - 6.0 * r.lambda.log10)) / r.lambda.log10;
        let beta_drift = to_f64(&(&l.beta * (&l.b - qi(1))));
        assert!((lower - (1.0 - beta_drift)).abs() < 1e-9);
    }

    #[test]
    fn pairs_round_trip() {
        let mut l = base_ledger();
        l.a = Base::Root(BigInt::from(3));
        let map: BTreeMap<String, String> = l.to_pairs().into_iter().collect();
        assert_eq!(ParamLedger::from_pairs(&map).unwrap(), l);
    }

    #[test]
    fn presets() {
        let p = desk_preset("tiny").unwrap();
        assert_eq!(p.grid.n(), 128);
        assert_eq!(p.jet.lambda_sigma(), 2.0);
        assert!(!p.report.feasible());
        assert!(p.violated.iter().any(|v| v.starts_with("resolution")));
        let id = desk_preset("identity_scale").unwrap();
        assert!(id.violated.iter().any(|v| v == "sigma_below_r_below_1_below_mu"));
        assert!(desk_preset("huge").is_err());
    }
}
