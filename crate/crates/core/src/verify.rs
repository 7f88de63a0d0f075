//! Residuals, shell fluxes and the empirical estimate checks.

use crate::error::{Error, Result};
use crate::fft::pool;
use crate::geometry::DirectionSet;
use crate::grid::{sym, Grid3, PeriodicField, Rank};
use crate::io::fmt_f64;
use crate::iteration::{self, IterationState, StepScales, StressPartition};
use crate::jets::{Jet, JetBundle, JetParams};
use crate::ops::{self, Spectrum};
use crate::params::{to_f64, ParamLedger};
use crate::profiles::Profiles;
use crate::time::{MemoryStore, MollifierSpec, TimeField, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Debug;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::sync::Arc;

// ---------------------------------------------------------------- random fields

/// Band-limited random field with spectrum ∝ |k|^{-2} on 0 < |k| ≤ kmax.
pub fn random_field(grid: Grid3, rank: Rank, kmax: f64, seed: u64) -> PeriodicField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Spectrum::zeros(grid, rank);
    let n = grid.n();
    for c in 0..rank.components() {
        let data = s.comp_mut(c);
        for k3 in 0..n {
            for k2 in 0..n {
                for k1 in 0..n {
                    let k = [grid.wavenumber(k1), grid.wavenumber(k2), grid.wavenumber(k3)];
                    let m = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
                    // one draw per mode keeps the stream independent of the cutoff
                    let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    if m > 0.0 && m <= kmax && !(grid.is_nyquist(k1) || grid.is_nyquist(k2) || grid.is_nyquist(k3)) {
                        data[grid.index(k1, k2, k3)] = rustfft::num_complex::Complex64::new(a, b) * (grid.len() as f64 / (m * m));
                    }
                }
            }
        }
    }
    s.inverse()
}

/// Divergence-free random vector field.
pub fn random_solenoidal(grid: Grid3, kmax: f64, seed: u64) -> PeriodicField {
    ops::leray(&random_field(grid, Rank::Vector, kmax, seed)).unwrap()
}

// ---------------------------------------------------------------- NSR residual

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualRow {
    pub t: f64,
    pub residual_l2: f64,
    pub residual_l1: f64,
    /// ‖div(u⊗u)‖_{L²}, the scale residuals are compared against.
    pub nonlinear_l2: f64,
}

impl ResidualRow {
    pub fn relative(&self) -> f64 {
        if self.nonlinear_l2 > 0.0 {
            self.residual_l2 / self.nonlinear_l2
        } else {
            self.residual_l2
        }
    }
}

/// Spectrum of ∂_t u - νΔu + div(u⊗u) + ∇p - div R̊ and that of div(u⊗u).
fn residual_spectrum(
    u: &PeriodicField,
    dudt: &PeriodicField,
    r: &PeriodicField,
    p: &PeriodicField,
    nu: f64,
) -> Result<(Spectrum, Spectrum)> {
    let mut res = ops::laplacian_s(&Spectrum::forward(u));
    res.scale(-nu);
    res.axpy(1.0, &Spectrum::forward(dudt))?;
    let nl = ops::div_s(&Spectrum::forward(&ops::sym_outer(u, u, false)?))?;
    res.axpy(1.0, &nl)?;
    res.axpy(1.0, &ops::grad_s(&Spectrum::forward(p))?)?;
    res.axpy(-1.0, &ops::div_s(&Spectrum::forward(r))?)?;
    Ok((res, nl))
}

/// (‖residual‖_{L²}, ‖div(u⊗u)‖_{L²}) of a state at node n.
pub fn nsr_frame(s: &IterationState, n: usize, nu: f64) -> Result<(f64, f64)> {
    let u = s.u.frame(n)?;
    let dudt = match &s.dudt {
        Some(d) => d.frame(n)?,
        None => Arc::new(s.u.dt_fd(n)?),
    };
    let (res, nl) = residual_spectrum(&u, &dudt, &*s.r.frame(n)?, &*s.p.frame(n)?, nu)?;
    Ok((res.integral_sq().sqrt(), nl.integral_sq().sqrt()))
}

/// Residual of the Navier-Stokes-Reynolds system per node. ∂_t u comes from `dudt` when given
/// and from 4th-order time differences otherwise (truncation error O(dt⁴)).
pub fn nsr_residual(
    u: &TimeField,
    r: &TimeField,
    p: &TimeField,
    dudt: Option<&TimeField>,
    nu: f64,
) -> Result<Vec<ResidualRow>> {
    if u.n_t() < 5 {
        return Err(Error::Invalid(format!(
            "residual evaluation is unsupported with {} time nodes (needs 5)",
            u.n_t()
        )));
    }
    (0..u.n_t())
        .map(|n| {
            let uf = u.frame(n)?;
            let d = match dudt {
                Some(d) => d.frame(n)?,
                None => Arc::new(u.dt_fd(n)?),
            };
            let (res, nl) = residual_spectrum(&uf, &d, &*r.frame(n)?, &*p.frame(n)?, nu)?;
            Ok(ResidualRow {
                t: u.time.node(n),
                residual_l2: res.integral_sq().sqrt(),
                residual_l1: res.inverse().lp_norm(1.0),
                nonlinear_l2: nl.integral_sq().sqrt(),
            })
        })
        .collect()
}

pub fn write_residual_csv<W: Write>(rows: &[ResidualRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "residual_l2", "residual_l1", "nonlinear_l2", "relative"])?;
    for r in rows {
        wr.write_record([r.t, r.residual_l2, r.residual_l1, r.nonlinear_l2, r.relative()].map(fmt_f64))?;
    }
    wr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- shell flux

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShellRow {
    pub j: u32,
    /// ν∫|∇v_j|².
    pub linear: f64,
    /// ∫ v_j · Δ_j div(u⊗u).
    pub nonlinear: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShellTable {
    pub rows: Vec<ShellRow>,
    /// Fitted slope of log2 |ratio| against j over shells with energy.
    pub ratio_slope: Option<f64>,
}

fn spectral_inner(a: &Spectrum, b: &Spectrum) -> f64 {
    let nn = a.grid().len() as f64;
    let vol = crate::grid::BOX_LENGTH.powi(3);
    let mut s = 0.0;
    for c in 0..a.rank().components() {
        s += a.comp(c).iter().zip(b.comp(c)).map(|(x, y)| (x * y.conj()).re).sum::<f64>();
    }
    s * vol / (nn * nn)
}

/// Littlewood-Paley shell energetics of one velocity field.
pub fn shell_flux(u: &PeriodicField, nu: f64) -> Result<Vec<ShellRow>> {
    let us = Spectrum::forward(u);
    let nl = ops::div_s(&Spectrum::forward(&ops::sym_outer(u, u, true)?))?;
    let grad = ops::grad_vec_s(&us)?;
    let count = ops::shell_count(u.grid());
    let mut rows = Vec::with_capacity(count as usize + 1);
    // shell "0" below is the single ring 1 ≤ |k| < 2
    for j in 0..count {
        let g = ops::lp_shell_s(&grad, j);
        let linear = nu * g.integral_sq();
        let v = ops::lp_shell_s(&us, j);
        let nonlinear = spectral_inner(&v, &ops::lp_shell_s(&nl, j));
        let ratio = if linear > 0.0 { nonlinear / linear } else { 0.0 };
        rows.push(ShellRow {
            j,
            linear,
            nonlinear,
            ratio,
        });
    }
    Ok(rows)
}

/// Time-averaged shell table of a velocity series.
pub fn shell_flux_analysis(u: &TimeField, nu: f64) -> Result<ShellTable> {
    let count = ops::shell_count(u.grid) as usize;
    if count < 4 {
        return Err(Error::Invalid("shell analysis needs at least 4 shells".into()));
    }
    let mut acc = vec![ShellRow::default(); count];
    for n in 0..u.n_t() {
        let rows = shell_flux(&*u.frame(n)?, nu)?;
        for (a, r) in acc.iter_mut().zip(rows) {
            a.j = r.j;
            a.linear += r.linear / u.n_t() as f64;
            a.nonlinear += r.nonlinear / u.n_t() as f64;
        }
    }
    for a in &mut acc {
        a.ratio = if a.linear > 0.0 { a.nonlinear / a.linear } else { 0.0 };
    }
    let pts: Vec<(f64, f64)> = acc
        .iter()
        .filter(|r| r.linear > 0.0 && r.ratio != 0.0)
        .map(|r| (r.j as f64, r.ratio.abs().log2()))
        .collect();
    let ratio_slope = (pts.len() >= 3).then(|| fit_line(&pts).0);
    Ok(ShellTable { rows: acc, ratio_slope })
}

pub fn write_shell_csv<W: Write>(t: &ShellTable, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["shell", "linear", "nonlinear", "ratio"])?;
    for r in &t.rows {
        wr.write_record([r.j.to_string(), fmt_f64(r.linear), fmt_f64(r.nonlinear), fmt_f64(r.ratio)])?;
    }
    wr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- fits and reports

/// Least-squares line y = a x + b; returns (a, b).
pub fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    /// An identity that holds exactly on the grid; must pass.
    Exact,
    /// An asymptotic inequality; the verdict is on the fitted exponent only.
    Exponent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub id: String,
    pub kind: CheckKind,
    pub digest: String,
    /// (sweep variable, measured value).
    pub points: Vec<(f64, f64)>,
    pub bound_form: String,
    /// Exponent checks: fitted and expected log-log slopes. Exact checks: the worst error
    /// and its tolerance.
    pub fitted: f64,
    pub expected: f64,
    pub tolerance: f64,
    /// Largest pointwise deviation from the fitted line (log units).
    pub deviation: f64,
    /// Fitted constant in measured ≈ C x^slope.
    pub constant: f64,
    pub verdict: Verdict,
}

impl CheckReport {
    fn exponent(id: &str, digest: String, bound_form: &str, points: Vec<(f64, f64)>, expected: f64, tol: f64) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Invalid(format!("check {id}: sweep of {} points is unsupported (needs 3)", points.len())));
        }
        if points.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
            return Err(Error::Domain(format!("check {id}: non-positive measurement {:?}", points)));
        }
        let logs: Vec<(f64, f64)> = points.iter().map(|p| (p.0.ln(), p.1.ln())).collect();
        let (a, b) = fit_line(&logs);
        let deviation = logs.iter().map(|p| (p.1 - a * p.0 - b).abs()).fold(0.0, f64::max);
        Ok(Self {
            id: id.into(),
            kind: CheckKind::Exponent,
            digest,
            points,
            bound_form: bound_form.into(),
            fitted: a,
            expected,
            tolerance: tol,
            deviation,
            constant: b.exp(),
            verdict: if (a - expected).abs() <= tol { Verdict::Pass } else { Verdict::Fail },
        })
    }

    fn exact(id: &str, digest: String, bound_form: &str, points: Vec<(f64, f64)>, tol: f64) -> Self {
        let worst = points.iter().map(|p| p.1).fold(0.0, f64::max);
        Self {
            id: id.into(),
            kind: CheckKind::Exact,
            digest,
            points,
            bound_form: bound_form.into(),
            fitted: worst,
            expected: 0.0,
            tolerance: tol,
            deviation: worst,
            constant: worst,
            verdict: if worst <= tol { Verdict::Pass } else { Verdict::Fail },
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "measured", "fitted"])?;
        for &(x, y) in &self.points {
            let fit = match self.kind {
                CheckKind::Exponent => self.constant * x.powf(self.fitted),
                CheckKind::Exact => self.tolerance,
            };
            wr.write_record([fmt_f64(x), fmt_f64(y), fmt_f64(fit)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "check",
    "kind",
    "verdict",
    "fitted",
    "expected",
    "tolerance",
    "deviation",
    "constant",
    "digest",
];

pub fn write_summary_csv<W: Write>(reports: &[CheckReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SUMMARY_COLUMNS)?;
    for r in reports {
        wr.write_record([
            r.id.clone(),
            match r.kind {
                CheckKind::Exact => "exact".into(),
                CheckKind::Exponent => "exponent".into(),
            },
            r.verdict.name().into(),
            fmt_f64(r.fitted),
            fmt_f64(r.expected),
            fmt_f64(r.tolerance),
            fmt_f64(r.deviation),
            fmt_f64(r.constant),
            r.digest.clone(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- check registry

#[derive(Clone, Debug, PartialEq)]
pub struct CheckConfig {
    pub seed: u64,
    /// Grid points per axis for grid-based checks.
    pub n: usize,
    pub ledger: ParamLedger,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n: 64,
            ledger: ParamLedger::desk(),
        }
    }
}

fn digest(id: &str, cfg: &CheckConfig) -> String {
    // FNV-1a, stable across platforms and releases
    struct Fnv(u64);
    impl Hasher for Fnv {
        fn finish(&self) -> u64 {
            self.0
        }
        fn write(&mut self, bytes: &[u8]) {
            for b in bytes {
                self.0 ^= *b as u64;
                self.0 = self.0.wrapping_mul(0x100000001b3);
            }
        }
    }
    let mut h = Fnv(0xcbf29ce484222325);
    id.hash(&mut h);
    cfg.seed.hash(&mut h);
    cfg.n.hash(&mut h);
    for (k, v) in cfg.ledger.to_pairs() {
        k.hash(&mut h);
        v.hash(&mut h);
    }
    format!("{:016x}", h.finish())
}

pub trait EstimateCheck: Debug + Send + Sync {
    fn id(&self) -> &'static str;
    fn kind(&self) -> CheckKind;
    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport>;
}

/// ‖(fg)_ℓ - f_ℓ g_ℓ‖_{L^p} against ℓ; slope 2.
#[derive(Debug)]
pub struct CommutatorCheck;

impl EstimateCheck for CommutatorCheck {
    fn id(&self) -> &'static str {
        "commutator"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exponent
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let grid = Grid3::new(cfg.n)?;
        let f = random_field(grid, Rank::Scalar, 3.0, cfg.seed);
        let g = random_field(grid, Rank::Scalar, 3.0, cfg.seed + 1);
        let fg = ops::product(&f, &g, false)?;
        let p = to_f64(&cfg.ledger.p_aux);
        let mut pts = Vec::new();
        for ell in [0.2, 0.1, 0.05, 0.025] {
            let lhs = ops::mollify_space(&fg, ell, 4)?;
            let rhs = ops::product(&ops::mollify_space(&f, ell, 4)?, &ops::mollify_space(&g, ell, 4)?, false)?;
            pts.push((ell, lhs.sub(&rhs)?.lp_norm(p)));
        }
        CheckReport::exponent(
            self.id(),
            digest(self.id(), cfg),
            "ℓ^2 ‖∇f‖_{L^{2p}} ‖∇g‖_{L^{2p}}",
            pts,
            2.0,
            0.1,
        )
    }
}

/// Excess ‖f g_λ‖_p - ‖f‖_p ‖g_λ‖_p for a (T/λ)-periodic g; the bound has slope -1/p.
#[derive(Debug)]
pub struct ImprovedHolderCheck;

impl EstimateCheck for ImprovedHolderCheck {
    fn id(&self) -> &'static str {
        "improved_holder"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exponent
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let n = cfg.n.max(128);
        let grid = Grid3::new(n)?;
        let p = to_f64(&cfg.ledger.q);
        let f = random_field(grid, Rank::Scalar, 2.0, cfg.seed);
        // a concentrated periodic bump, repeated λ times per axis
        let bump = |y: f64| {
            let c = y.cos();
            ((1.0 + c) / 2.0).powi(6)
        };
        let f_norm = f.lp_norm(p);
        let vol = crate::grid::BOX_LENGTH.powi(3);
        let mut pts = Vec::new();
        for lambda in [2.0, 4.0, 8.0, 16.0] {
            let g = PeriodicField::scalar_from_fn(grid, |x| {
                bump(lambda * x[0]) * bump(lambda * x[1]) * bump(lambda * x[2])
            });
            let fg = ops::product(&f, &g, false)?;
            // the periodic factor is measured by its average over one period
            let g_avg = g.lp_norm(p) / vol.powf(1.0 / p);
            let excess = (fg.lp_norm(p) - f_norm * g_avg).abs();
            pts.push((lambda, excess.max(f64::MIN_POSITIVE)));
        }
        CheckReport::exponent(
            self.id(),
            digest(self.id(), cfg),
            "C_p λ^{-1/p} ‖f‖_{C^1} ‖g‖_{L^p}",
            pts,
            -1.0 / p,
            0.1,
        )
    }
}

/// ‖|∇|^{-1} P_{≠0}(f g_κ)‖_{L^p} for mean-free (T/κ)-periodic g; slope -1.
#[derive(Debug)]
pub struct InverseGainCheck;

impl EstimateCheck for InverseGainCheck {
    fn id(&self) -> &'static str {
        "inverse_gain"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exponent
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let grid = Grid3::new(cfg.n.max(128))?;
        let p = to_f64(&cfg.ledger.p_aux);
        let f = random_field(grid, Rank::Scalar, 2.0, cfg.seed);
        let base = random_field(Grid3::new(8)?, Rank::Scalar, 2.0, cfg.seed + 1);
        let mut pts = Vec::new();
        for kappa in [4usize, 8, 16] {
            let g = dilate(&base, grid, kappa)?;
            let fg = ops::product(&f, &g, false)?;
            let v = ops::inv_abs_grad(&ops::proj_nonzero(&fg));
            pts.push((kappa as f64, v.lp_norm(p)));
        }
        CheckReport::exponent(
            self.id(),
            digest(self.id(), cfg),
            "κ^{-1} ‖f‖_{C^M} ‖g‖_{L^p}",
            pts,
            -1.0,
            0.15,
        )
    }
}

/// The field x ↦ f(κx) on `grid` for a scalar f given on a coarser grid.
pub fn dilate(f: &PeriodicField, grid: Grid3, kappa: usize) -> Result<PeriodicField> {
    let small = f.grid();
    if small.n() * kappa > grid.n() {
        return Err(Error::Invalid(format!(
            "dilation by {kappa} of an {}-point field does not fit an {}-point grid",
            small.n(),
            grid.n()
        )));
    }
    let fs = Spectrum::forward(f);
    let mut out = Spectrum::zeros(grid, Rank::Scalar);
    let ratio = grid.len() as f64 / small.len() as f64;
    let n = small.n();
    let big = grid.n() as i64;
    let wrap = |k: i64| (k.rem_euclid(big)) as usize;
    for k3 in 0..n {
        for k2 in 0..n {
            for k1 in 0..n {
                if small.is_nyquist(k1) || small.is_nyquist(k2) || small.is_nyquist(k3) {
                    continue;
                }
                let c = fs.comp(0)[small.index(k1, k2, k3)];
                let m = |i: usize| wrap(small.wavenumber(i) * kappa as i64);
                out.comp_mut(0)[grid.index(m(k1), m(k2), m(k3))] = c * ratio;
            }
        }
    }
    Ok(out.inverse())
}

/// Slopes of ‖∂_t^j ∇^k W‖_{L^p} against λ with σ, r, μ following the ledger's powers of λ.
#[derive(Debug)]
pub struct JetScalingCheck {
    pub j: usize,
    pub k: usize,
    /// None means p = q.
    pub p: Option<f64>,
}

pub const JET_SCALING_LAMBDAS: [f64; 3] = [8.0, 16.0, 32.0];

/// Predicted log-slope in λ of ‖∂_t^j ∇^k W‖_{L^p}.
pub fn jet_scaling_exponent(ledger: &ParamLedger, j: usize, k: usize, p: f64) -> f64 {
    let q = to_f64(&ledger.q);
    let se = to_f64(&ledger.sigma_exponent());
    let re = to_f64(&ledger.r_exponent());
    let me = to_f64(&ledger.mu_exponent());
    (2.0 / p - 2.0 / q) * se + (1.0 / p - 1.0 / q) * re + k as f64 + j as f64 * (1.0 + se + me - re)
}

/// Measured (λ, ‖∂_t^j ∇^k W‖_{L^p}) along the ledger's parameter curve.
pub fn jet_scaling_sweep(ledger: &ParamLedger, j: usize, k: usize, p: f64, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let q = to_f64(&ledger.q);
    let profiles = Arc::new(Profiles::default_for(q)?);
    let set = DirectionSet::default_set();
    let dir = set.family(0).dirs[0].clone();
    let se = to_f64(&ledger.sigma_exponent());
    let re = to_f64(&ledger.r_exponent());
    let me = to_f64(&ledger.mu_exponent());
    lambdas
        .iter()
        .map(|&lambda| {
            let params = JetParams::new(lambda, lambda.powf(se), lambda.powf(re), lambda.powf(me), q, set.n_lambda)?;
            let jet = Jet::unconstrained(dir.clone(), params, profiles.clone());
            Ok((lambda, jet.cell_norm(j, k, p)?))
        })
        .collect()
}

impl EstimateCheck for JetScalingCheck {
    fn id(&self) -> &'static str {
        "jet_scaling"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exponent
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let p = self.p.unwrap_or_else(|| to_f64(&cfg.ledger.q));
        let pts = jet_scaling_sweep(&cfg.ledger, self.j, self.k, p, &JET_SCALING_LAMBDAS)?;
        CheckReport::exponent(
            self.id(),
            digest(self.id(), cfg),
            "σ^{2/p-2/q} r^{1/p-1/q} λ^k (λσμ/r)^j",
            pts,
            jet_scaling_exponent(&cfg.ledger, self.j, self.k, p),
            0.1,
        )
    }
}

/// Synthetic trace-free stress δ B(x) with max |B| = 1.
fn synthetic_stress(grid: Grid3, amplitude: f64, seed: u64) -> PeriodicField {
    let mut b = random_field(grid, Rank::SymTensor, 2.0, seed);
    let n = grid.len();
    for idx in 0..n {
        let tr = (b.comp(0)[idx] + b.comp(3)[idx] + b.comp(5)[idx]) / 3.0;
        for c in [0, 3, 5] {
            b.comp_mut(c)[idx] -= tr;
        }
    }
    let m = b.linf_norm();
    b.scale(amplitude / m);
    b
}

/// A constant-in-time partition of a fixed stress with ρ₀ set by an energy gap.
pub fn static_partition(r: &PeriodicField, gap: f64, scales: StepScales) -> Result<(TimeField, StressPartition)> {
    let time = TimeGrid::new(0.0, 1.0, 5)?;
    let store = MemoryStore;
    let rt = TimeField::from_fn(time, r.grid(), Rank::SymTensor, &store, |_, _| Ok(r.clone()))?;
    let u = TimeField::zeros(time, r.grid(), Rank::Vector);
    let spec = MollifierSpec::new(0.5, 4)?;
    let part = iteration::partition_stress(&rt, &u, &[gap; 5], scales, spec)?;
    Ok((rt, part))
}

fn desk_bundle(ledger: &ParamLedger) -> Result<JetBundle> {
    let q = to_f64(&ledger.q);
    let params = JetParams::from_lambda_sigma(1, 0.125, 0.25, 8.0, q)?;
    let profiles = Arc::new(Profiles::default_for(q)?);
    JetBundle::new(Arc::new(DirectionSet::default_set()), params, profiles, 1)
}

fn scales_for(ledger: &ParamLedger, bundle: &JetBundle, delta: f64) -> Result<StepScales> {
    let mut s = StepScales::new(ledger, 0, bundle)?;
    let f = delta / s.delta_next;
    s.delta_next = delta;
    s.delta_after *= f;
    s.unit *= f;
    Ok(s)
}

/// ‖a_ζ‖_{L²} against δ_{m+1} with R̊_ℓ ∝ δ_{m+1}; slope 1/2, constant reported.
#[derive(Debug)]
pub struct AmplitudeBoundsCheck;

impl EstimateCheck for AmplitudeBoundsCheck {
    fn id(&self) -> &'static str {
        "amplitude_bounds"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exponent
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let grid = Grid3::new(cfg.n.min(32))?;
        let bundle = desk_bundle(&cfg.ledger)?;
        let prof = bundle.profiles();
        let vol = crate::grid::BOX_LENGTH.powi(3);
        let mut pts = Vec::new();
        for delta in [1.0, 2.0, 4.0, 8.0] {
            let scales = scales_for(&cfg.ledger, &bundle, delta)?;
            // stress reaching the second cutoff and a gap filling ρ₀ ≈ 64 unit
            let r = synthetic_stress(grid, 10.0 * scales.unit, cfg.seed);
            let gap = 0.5 * scales.s * scales.delta_after + 3.0 * 64.0 * scales.unit * vol;
            let (_, part) = static_partition(&r, gap, scales.clone())?;
            let norm_sq = 1.0 / (prof.c_q * prof.c_star_q * scales.s);
            let worst = (0..bundle.jets.len())
                .map(|jid| {
                    let a2 = iteration::amplitude_sq_field(&part, &r, 0, &bundle, jid, norm_sq);
                    (a2.comp(0).iter().map(|x| x.max(0.0)).sum::<f64>() * grid.cell_volume()).sqrt()
                })
                .fold(0.0, f64::max);
            pts.push((delta, worst));
        }
        CheckReport::exponent(
            self.id(),
            digest(self.id(), cfg),
            "2^{(p-2)i/p} δ_{m+1}^{1/2} λ_m^{-ε}",
            pts,
            0.5,
            0.1,
        )
    }
}

/// sup_t ‖R̊_ℓ‖_{L¹} for a smooth state with R̊ = 0, against ℓ; slope 2.
#[derive(Debug)]
pub struct MollifiedStressCheck;

impl EstimateCheck for MollifiedStressCheck {
    fn id(&self) -> &'static str {
        "mollified_stress"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exponent
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let grid = Grid3::new(cfg.n.min(64))?;
        let time = TimeGrid::new(0.0, 1.0, 33)?;
        let store = MemoryStore;
        let a = random_solenoidal(grid, 2.0, cfg.seed);
        let b = random_solenoidal(grid, 2.0, cfg.seed + 1);
        let u = TimeField::from_fn(time, grid, Rank::Vector, &store, |_, t| {
            let mut f = a.scaled((0.5 * t).cos());
            f.axpy((0.75 * t).sin(), &b)?;
            Ok(f)
        })?;
        let state = IterationState {
            m: 0,
            u,
            r: TimeField::zeros(time, grid, Rank::SymTensor),
            p: TimeField::zeros(time, grid, Rank::Scalar),
            dudt: None,
            e: vec![0.0; time.n_t],
            ledger: cfg.ledger.clone(),
        };
        let mut pts = Vec::new();
        for ell in [0.8, 0.4, 0.2] {
            let m = iteration::mollify_state(&state, MollifierSpec::new(ell, 4)?, &store)?;
            let mut worst: f64 = 0.0;
            for n in 0..time.n_t {
                worst = worst.max(m.r.frame(n)?.lp_norm(1.0));
            }
            pts.push((ell, worst));
        }
        CheckReport::exponent(
            self.id(),
            digest(self.id(), cfg),
            "2 (σ²r)^{(q-2)/q} δ_{m+1} λ_m^{-2ε}",
            pts,
            2.0,
            0.15,
        )
    }
}

/// div(W⊗W) = μ^{-1}φ²∂_tψ²ζ for every jet of the set, on each jet's lattice torus.
#[derive(Debug)]
pub struct OscillationIdentityCheck;

pub const OSCILLATION_N1: usize = 2048;
pub const OSCILLATION_M: usize = 48;

impl EstimateCheck for OscillationIdentityCheck {
    fn id(&self) -> &'static str {
        "oscillation_identity"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exact
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let bundle = desk_bundle(&cfg.ledger)?;
        let pts = bundle
            .jets
            .iter()
            .enumerate()
            .map(|(i, jet)| Ok((i as f64, jet.oscillation_identity_error(OSCILLATION_N1, OSCILLATION_M)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(CheckReport::exact(
            self.id(),
            digest(self.id(), cfg),
            "div(W⊗W) - μ^{-1}φ²∂_tψ²ζ = 0",
            pts,
            1e-8,
        ))
    }
}

/// max |Σ_i χ_(i)² - 1| for stresses spanning several cutoffs.
#[derive(Debug)]
pub struct PartitionOfUnityCheck;

impl EstimateCheck for PartitionOfUnityCheck {
    fn id(&self) -> &'static str {
        "partition_of_unity"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exact
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let grid = Grid3::new(cfg.n.min(32))?;
        let bundle = desk_bundle(&cfg.ledger)?;
        let scales = StepScales::new(&cfg.ledger, 0, &bundle)?;
        let mut pts = Vec::new();
        for (k, amp) in [0.5, 5.0, 50.0, 500.0].into_iter().enumerate() {
            let r = synthetic_stress(grid, amp * scales.unit, cfg.seed + k as u64);
            let (_, part) = static_partition(&r, 1e6, scales.clone())?;
            let chi = part.cutoffs(&r);
            let worst = (0..grid.len())
                .map(|idx| (chi.iter().map(|c| c.comp(0)[idx].powi(2)).sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            pts.push((amp, worst));
        }
        Ok(CheckReport::exact(self.id(), digest(self.id(), cfg), "Σ_i χ_(i)² = 1", pts, 1e-8))
    }
}

/// Σ_i Σ_ζ a_ζ² ⨍W_ζ⊗W_ζ = Σ_i ρ_i χ_(i)² Id - R̊_ℓ, relative to |R̊_ℓ| + G.
#[derive(Debug)]
pub struct AmplitudeIdentityCheck;

impl EstimateCheck for AmplitudeIdentityCheck {
    fn id(&self) -> &'static str {
        "amplitude_identity"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exact
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let grid = Grid3::new(cfg.n.min(32))?;
        let bundle = desk_bundle(&cfg.ledger)?;
        let prof = bundle.profiles().clone();
        let moment = bundle.params.second_moment(&prof);
        let scales = StepScales::new(&cfg.ledger, 0, &bundle)?;
        let norm_sq = 1.0 / (prof.c_q * prof.c_star_q * scales.s);
        let vol = crate::grid::BOX_LENGTH.powi(3);
        let zetas: Vec<[f64; 3]> = bundle.jets.iter().map(|j| j.zeta()).collect();
        let mut pts = Vec::new();
        for (k, amp) in [0.5, 5.0, 50.0].into_iter().enumerate() {
            let r = synthetic_stress(grid, amp * scales.unit, cfg.seed + k as u64);
            let gap = 0.5 * scales.s * scales.delta_after + 3.0 * 64.0 * scales.unit * vol;
            let (_, part) = static_partition(&r, gap, scales.clone())?;
            let a2: Vec<PeriodicField> = (0..zetas.len())
                .map(|jid| iteration::amplitude_sq_field(&part, &r, 0, &bundle, jid, norm_sq))
                .collect();
            let g = part.gauge_field(&r, 0);
            let mut worst: f64 = 0.0;
            for idx in 0..grid.len() {
                let mut lhs = [0.0; 6];
                for (jid, z) in zetas.iter().enumerate() {
                    let w = a2[jid].comp(0)[idx] * moment;
                    for i in 0..3 {
                        for j in i..3 {
                            lhs[sym(i, j)] += w * z[i] * z[j];
                        }
                    }
                }
                let gv = g.comp(0)[idx];
                let mut err = 0.0;
                let mut scale = gv * gv * 3.0;
                for i in 0..3 {
                    for j in i..3 {
                        let c = sym(i, j);
                        let rv = r.comp(c)[idx];
                        let rhs = if i == j { gv - rv } else { -rv };
                        let wgt = if i == j { 1.0 } else { 2.0 };
                        err += wgt * (lhs[c] - rhs).powi(2);
                        scale += wgt * rv * rv;
                    }
                }
                worst = worst.max((err / scale).sqrt());
            }
            pts.push((amp, worst));
        }
        Ok(CheckReport::exact(
            self.id(),
            digest(self.id(), cfg),
            "Σ a² ⨍W⊗W = Σ ρ χ² Id - R̊_ℓ",
            pts,
            1e-3,
        ))
    }
}

/// div(R u) = u - mean(u) and tr R u = 0 on random fields.
#[derive(Debug)]
pub struct AntidivergenceCheck;

impl EstimateCheck for AntidivergenceCheck {
    fn id(&self) -> &'static str {
        "antidivergence"
    }

    fn kind(&self) -> CheckKind {
        CheckKind::Exact
    }

    fn run(&self, cfg: &CheckConfig) -> Result<CheckReport> {
        let grid = Grid3::new(cfg.n.min(32))?;
        let pts = (0..4u64)
            .map(|k| {
                let u = random_field(grid, Rank::Vector, 6.0, cfg.seed + k);
                let (err, tr) = antidivergence_errors(&u)?;
                Ok((k as f64, err.max(tr)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CheckReport::exact(self.id(), digest(self.id(), cfg), "div R u = u - mean u", pts, 1e-10))
    }
}

/// (relative L² error of div R u against u - mean u, max |tr R u| / max |R u|).
pub fn antidivergence_errors(u: &PeriodicField) -> Result<(f64, f64)> {
    let r = ops::antidiv(u)?;
    let back = ops::div(&r)?;
    let target = ops::proj_nonzero(u);
    let err = back.sub(&target)?.l2_norm() / target.l2_norm();
    let tr = r.trace()?.linf_norm() / r.linf_norm().max(f64::MIN_POSITIVE);
    Ok((err, tr))
}

/// Relative energy remainder (∫|w_p|² - 3ρ₀∫χ₀²)/∫|w_p|² of a step from R̊ = 0, computed from grid
/// sums of the family-0 jets at time t. With R̊_ℓ = 0 the amplitudes are constant in space, so this
/// equals the remainder of the full step.
pub fn zero_stress_energy_remainder(bundle: &JetBundle, grid: Grid3, t: f64) -> f64 {
    let moment = bundle.params.second_moment(bundle.profiles());
    let g = bundle.set.family(0).identity_coefficients();
    let sum: f64 = bundle
        .family_range(0)
        .zip(&g)
        .map(|(jid, gz)| gz * bundle.jets[jid].grid_moments(grid, t).1)
        .sum();
    1.0 - 3.0 * moment / sum
}

pub const CHECK_NAMES: [&str; 10] = [
    "amplitude_bounds",
    "amplitude_identity",
    "antidivergence",
    "commutator",
    "improved_holder",
    "inverse_gain",
    "jet_scaling",
    "mollified_stress",
    "oscillation_identity",
    "partition_of_unity",
];

pub fn make_check(name: &str) -> Result<Box<dyn EstimateCheck>> {
    Ok(match name {
        "commutator" => Box::new(CommutatorCheck),
        "improved_holder" => Box::new(ImprovedHolderCheck),
        "inverse_gain" => Box::new(InverseGainCheck),
        "jet_scaling" => Box::new(JetScalingCheck { j: 0, k: 1, p: None }),
        "amplitude_bounds" => Box::new(AmplitudeBoundsCheck),
        "mollified_stress" => Box::new(MollifiedStressCheck),
        "oscillation_identity" => Box::new(OscillationIdentityCheck),
        "partition_of_unity" => Box::new(PartitionOfUnityCheck),
        "amplitude_identity" => Box::new(AmplitudeIdentityCheck),
        "antidivergence" => Box::new(AntidivergenceCheck),
        _ => {
            return Err(Error::Unknown {
                kind: "check",
                name: name.into(),
                available: CHECK_NAMES.join(", "),
            })
        }
    })
}

/// Runs the named checks concurrently; reports come back sorted by id.
pub fn run_checks(names: &[&str], cfg: &CheckConfig) -> Result<Vec<CheckReport>> {
    let checks = names.iter().map(|n| make_check(n)).collect::<Result<Vec<_>>>()?;
    let mut out = pool().install(|| checks.par_iter().map(|c| c.run(cfg)).collect::<Result<Vec<_>>>())?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_slope() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 * i as f64 - 1.0)).collect();
        let (a, b) = fit_line(&pts);
        assert!((a - 3.0).abs() < 1e-12 && (b + 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_fields_are_band_limited_and_seeded() {
        let grid = Grid3::new(16).unwrap();
        let a = random_field(grid, Rank::Scalar, 3.0, 5);
        let b = random_field(grid, Rank::Scalar, 3.0, 5);
        assert_eq!(a, b);
        assert!(a.mean(0).abs() < 1e-14);
        let hi = ops::proj_high(&a, 3.0001);
        assert!(hi.linf_norm() < 1e-12 * a.linf_norm());
        let u = random_solenoidal(grid, 3.0, 1);
        assert!(ops::div(&u).unwrap().linf_norm() < 1e-12);
    }

    #[test]
    fn dilation_matches_direct_sampling() {
        let small = Grid3::new(8).unwrap();
        let f = PeriodicField::scalar_from_fn(small, |x| (x[0] + 2.0 * x[1]).sin() + x[2].cos());
        let g = dilate(&f, Grid3::new(32).unwrap(), 3).unwrap();
        let direct = PeriodicField::scalar_from_fn(Grid3::new(32).unwrap(), |x| {
            (3.0 * x[0] + 6.0 * x[1]).sin() + (3.0 * x[2]).cos()
        });
        assert!(g.sub(&direct).unwrap().linf_norm() < 1e-12);
        assert!(dilate(&f, Grid3::new(16).unwrap(), 3).is_err());
    }

    #[test]
    fn too_short_sweep_is_unsupported() {
        let r = CheckReport::exponent("x", String::new(), "", vec![(1.0, 1.0), (2.0, 2.0)], 1.0, 0.1);
        assert!(matches!(r, Err(Error::Invalid(_))));
    }

    #[test]
    fn unknown_check_lists_available() {
        match make_check("nope") {
            Err(Error::Unknown { available, .. }) => assert!(available.contains("commutator")),
            other => panic!("{other:?}"),
        }
    }
}
