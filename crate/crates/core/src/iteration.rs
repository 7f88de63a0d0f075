//! One convex-integration step: mollify, partition the stress, build amplitudes,
//! assemble the perturbation and close the Navier-Stokes-Reynolds system again.
//!
//! Jet supports are pairwise disjoint and cutoffs of equal parity never overlap, so at a
//! point owned by jet o the principal perturbation is A ψφ ζ_o with
//! A² = (c_q c*_q)^{-1} s^{-1} Σ_{i ≡ fam(o)} χ_i² (ρ_i γ_o²(Id) - d_o·R̊_ℓ),
//! using that γ² is linear in the matrix.

use crate::error::{Error, Result};
use crate::grid::{Grid3, PeriodicField, Rank};
use crate::io::fmt_f64;
use crate::jets::{BundleSample, JetBundle, NO_OWNER};
use crate::ops::{self, Spectrum};
use crate::params::{to_f64, ParamLedger};
use crate::time::{fd_weights, mollify, FrameStore, MollifierSpec, MollifyDomain, TimeField, TimeGrid, TimeMollifier};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Debug;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

// ---------------------------------------------------------------- energy profiles

pub trait EnergyProfile: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, t: f64) -> f64;
}

/// e(t) = 1 - cos kt.
#[derive(Clone, Debug)]
pub struct OneMinusCos {
    pub k: f64,
}

impl EnergyProfile for OneMinusCos {
    fn name(&self) -> &'static str {
        "one_minus_cos_k"
    }

    fn value(&self, t: f64) -> f64 {
        1.0 - (self.k * t).cos()
    }
}

#[derive(Clone, Debug)]
pub struct ConstantEnergy {
    pub value: f64,
}

impl EnergyProfile for ConstantEnergy {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn value(&self, _t: f64) -> f64 {
        self.value
    }
}

/// Piecewise-linear interpolation of (t, e) samples read from a two-column CSV.
#[derive(Clone, Debug)]
pub struct TabulatedEnergy {
    pub t: Vec<f64>,
    pub e: Vec<f64>,
}

impl TabulatedEnergy {
    pub fn new(t: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        if t.len() < 2 || t.len() != e.len() || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "tabulated energy needs at least two rows with increasing t".into(),
            ));
        }
        Ok(Self { t, e })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let (mut t, mut e) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let nums: Option<Vec<f64>> = rec.iter().take(2).map(|x| x.parse().ok()).collect();
            match nums {
                Some(v) if v.len() == 2 => {
                    t.push(v[0]);
                    e.push(v[1]);
                }
                // a header row
                _ if t.is_empty() => {}
                _ => return Err(Error::Config(format!("bad energy row in {}", path.display()))),
            }
        }
        Self::new(t, e)
    }
}

impl EnergyProfile for TabulatedEnergy {
    fn name(&self) -> &'static str {
        "tabulated"
    }

    fn value(&self, t: f64) -> f64 {
        let n = self.t.len();
        if t <= self.t[0] {
            return self.e[0];
        }
        if t >= self.t[n - 1] {
            return self.e[n - 1];
        }
        let j = self.t.partition_point(|&x| x <= t) - 1;
        let s = (t - self.t[j]) / (self.t[j + 1] - self.t[j]);
        self.e[j] + s * (self.e[j + 1] - self.e[j])
    }
}

pub fn energy_names() -> Vec<&'static str> {
    vec!["one_minus_cos_k", "constant", "tabulated"]
}

pub fn make_energy(name: &str, options: &BTreeMap<String, String>) -> Result<Arc<dyn EnergyProfile>> {
    let num = |key: &str, default: f64| -> Result<f64> {
        match options.get(key) {
            None => Ok(default),
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("energy option {key} = '{v}' is not a number"))),
        }
    };
    match name {
        "one_minus_cos_k" => Ok(Arc::new(OneMinusCos { k: num("k", 1.0)? })),
        "constant" => Ok(Arc::new(ConstantEnergy { value: num("value", 1.0)? })),
        "tabulated" => {
            let path = options
                .get("path")
                .ok_or_else(|| Error::Config("tabulated energy needs a path option".into()))?;
            Ok(Arc::new(TabulatedEnergy::load(&PathBuf::from(path))?))
        }
        _ => Err(Error::Unknown {
            kind: "energy profile",
            name: name.into(),
            available: energy_names().join(", "),
        }),
    }
}

// ---------------------------------------------------------------- state

#[derive(Clone, Debug)]
pub struct IterationState {
    pub m: u32,
    pub u: TimeField,
    pub r: TimeField,
    pub p: TimeField,
    /// ∂_t u when known; otherwise finite differences are used.
    pub dudt: Option<TimeField>,
    pub e: Vec<f64>,
    pub ledger: ParamLedger,
}

impl IterationState {
    /// (u, R̊, p) = 0 with the energy profile sampled on the time grid.
    pub fn zero(time: TimeGrid, grid: Grid3, energy: &dyn EnergyProfile, ledger: ParamLedger) -> Self {
        Self {
            m: 0,
            u: TimeField::zeros(time, grid, Rank::Vector),
            r: TimeField::zeros(time, grid, Rank::SymTensor),
            p: TimeField::zeros(time, grid, Rank::Scalar),
            dudt: Some(TimeField::zeros(time, grid, Rank::Vector)),
            e: time.nodes().iter().map(|&t| energy.value(t)).collect(),
            ledger,
        }
    }

    pub fn time(&self) -> TimeGrid {
        self.u.time
    }

    pub fn grid(&self) -> Grid3 {
        self.u.grid
    }

    pub fn nu(&self) -> f64 {
        to_f64(&self.ledger.nu)
    }

    /// Per-node measurements of the state invariants.
    pub fn invariants(&self) -> Result<Vec<StateInvariants>> {
        let mut out = Vec::with_capacity(self.u.n_t());
        for n in 0..self.u.n_t() {
            let t = self.time().node(n);
            if self.u.frame_is_zero(n) && self.r.frame_is_zero(n) && self.p.frame_is_zero(n) {
                out.push(StateInvariants {
                    t,
                    gap: self.e[n],
                    ..Default::default()
                });
                continue;
            }
            let u = self.u.frame(n)?;
            let r = self.r.frame(n)?;
            let p = self.p.frame(n)?;
            let div_u = ops::div(&u)?.linf_norm();
            let mean_u = u.means().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let tr = r.trace()?.linf_norm();
            // p = Δ^{-1} div div (R̊ - u⊗u)
            let mut stress = (*r).clone();
            stress.axpy(-1.0, &ops::sym_outer(&u, &u, false)?)?;
            let dd = ops::div_s(&ops::div_s(&Spectrum::forward(&stress))?)?;
            let p_rec = ops::inv_laplacian_s(&dd).inverse();
            let scale = p.l2_norm().max(p_rec.l2_norm()).max(f64::MIN_POSITIVE);
            out.push(StateInvariants {
                t,
                div_u,
                mean_u,
                trace_r: tr,
                pressure_rel: p_rec.sub(&p)?.l2_norm() / scale,
                gap: self.e[n] - u.integral_sq(),
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateInvariants {
    pub t: f64,
    pub div_u: f64,
    pub mean_u: f64,
    pub trace_r: f64,
    pub pressure_rel: f64,
    /// e(t) - ∫|u|².
    pub gap: f64,
}

/// Everything a step needs besides the state.
#[derive(Clone, Debug)]
pub struct StepConfig {
    pub bundle: Arc<JetBundle>,
    pub mollifier: MollifierSpec,
    pub store: Arc<dyn FrameStore>,
}

/// Scales of one step at level m.
#[derive(Clone, Debug, PartialEq)]
pub struct StepScales {
    /// (σ²r)^{(q-2)/q}.
    pub s: f64,
    pub delta_next: f64,
    pub delta_after: f64,
    pub lambda_m: f64,
    pub eps: f64,
    /// s δ_{m+1} λ_m^{-2ε}; ρ_i = 4^{i+1} unit.
    pub unit: f64,
}

impl StepScales {
    pub fn new(ledger: &ParamLedger, m: u32, bundle: &JetBundle) -> Result<Self> {
        let jp = &bundle.params;
        let q = jp.q;
        let lin = |log10: f64, what: &str| {
            if log10.abs() < 300.0 {
                Ok(10f64.powf(log10))
            } else {
                Err(Error::Invalid(format!("{what} at level {m} overflows f64 (log10 = {log10:.3})")))
            }
        };
        let s = (jp.sigma * jp.sigma * jp.r).powf((q - 2.0) / q);
        let delta_next = lin(ledger.log10_delta(m + 1), "δ_{m+1}")?;
        let delta_after = lin(ledger.log10_delta(m + 2), "δ_{m+2}")?;
        let lambda_m = lin(ledger.log10_lambda(m), "λ_m")?;
        let eps = to_f64(&ledger.eps);
        Ok(Self {
            s,
            delta_next,
            delta_after,
            lambda_m,
            eps,
            unit: s * delta_next * lambda_m.powf(-2.0 * eps),
        })
    }
}

// ---------------------------------------------------------------- mollification

#[derive(Clone, Debug)]
pub struct Mollified {
    pub u: TimeField,
    pub r: TimeField,
    pub p: TimeField,
    pub dudt: TimeField,
}

fn remove_trace(f: &mut PeriodicField) {
    let n = f.grid().len();
    for idx in 0..n {
        let tr = (f.comp(0)[idx] + f.comp(3)[idx] + f.comp(5)[idx]) / 3.0;
        for c in [0, 3, 5] {
            f.comp_mut(c)[idx] -= tr;
        }
    }
}

fn outer_trace_free(u: &PeriodicField) -> Result<PeriodicField> {
    let mut o = ops::sym_outer(u, u, false)?;
    remove_trace(&mut o);
    Ok(o)
}

fn magnitude_field(u: &PeriodicField) -> PeriodicField {
    PeriodicField::from_components(u.grid(), Rank::Scalar, vec![u.magnitude_sq()]).unwrap()
}

/// u_ℓ, R̊_ℓ = (R̊)_ℓ + u_ℓ⊗̊u_ℓ - (u⊗̊u)_ℓ, p_ℓ = (p)_ℓ - (|u_ℓ|² - (|u|²)_ℓ)/3 and (∂_t u)_ℓ,
/// mollified in space and time.
pub fn mollify_state(s: &IterationState, spec: MollifierSpec, store: &dyn FrameStore) -> Result<Mollified> {
    let grid = s.grid();
    if spec.ell < 2.0 * grid.dx() {
        let required = (4.0 * std::f64::consts::PI / spec.ell).ceil() as usize;
        return Err(Error::Resolution {
            what: format!("mollifier ℓ = {}", spec.ell),
            required: required + required % 2,
            have: grid.n(),
        });
    }
    let both = MollifyDomain::Both;
    let u = mollify(&s.u, spec, both, store)?;
    let r_m = mollify(&s.r, spec, both, store)?;
    let p_m = mollify(&s.p, spec, both, store)?;
    let dudt_src = match &s.dudt {
        Some(d) => d.clone(),
        None if s.u.is_zero() => TimeField::zeros(s.time(), grid, Rank::Vector),
        None => s.u.map(store, Rank::Vector, |n, _| s.u.dt_fd(n))?,
    };
    let dudt = mollify(&dudt_src, spec, both, store)?;
    if s.u.is_zero() {
        return Ok(Mollified { u, r: r_m, p: p_m, dudt });
    }
    let uu = mollify(&s.u.map(store, Rank::SymTensor, |_, f| outer_trace_free(f))?, spec, both, store)?;
    let usq = mollify(&s.u.map(store, Rank::Scalar, |_, f| Ok(magnitude_field(f)))?, spec, both, store)?;
    let r = r_m.map(store, Rank::SymTensor, |n, rm| {
        let ul = u.frame(n)?;
        let mut out = rm.clone();
        out.axpy(1.0, &outer_trace_free(&ul)?)?;
        out.axpy(-1.0, &*uu.frame(n)?)?;
        Ok(out)
    })?;
    let p = p_m.map(store, Rank::Scalar, |n, pm| {
        let ul = u.frame(n)?;
        let mut d = magnitude_field(&ul);
        d.axpy(-1.0, &*usq.frame(n)?)?;
        let mut out = pm.clone();
        out.axpy(-1.0 / 3.0, &d)?;
        Ok(ops::proj_nonzero(&out))
    })?;
    Ok(Mollified { u, r, p, dudt })
}

// ---------------------------------------------------------------- partition

/// π/2 times a C^∞ step rising from 0 at s ≤ 0 to 1 at s ≥ 1.
fn step_angle(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return FRAC_PI_2;
    }
    let f = |x: f64| (-1.0 / x).exp();
    FRAC_PI_2 * f(s) / (f(s) + f(1.0 - s))
}

/// Angle of χ̂(4^{-i} y), with χ̂ = cos²(angle) equal to 1 on |y| ≤ 3/4 and 0 on |y| ≥ 1.
fn hat_angle(i: usize, y: f64) -> f64 {
    step_angle(4.0 * y / 4f64.powi(i as i32) - 3.0)
}

/// χ̃_i(y) for the matrix magnitude y; Σ_{i ≤ I} χ̃_i² = 1 whenever y ≤ (3/4)4^I.
pub fn cutoff(i: usize, y: f64) -> f64 {
    if i == 0 {
        return cos_edge(hat_angle(0, y));
    }
    // on the rising edge of χ̂_{i-1} the next cutoff χ̂_i is still 1, and vice versa
    if y < 4f64.powi(i as i32 - 1) {
        hat_angle(i - 1, y).sin()
    } else {
        cos_edge(hat_angle(i, y))
    }
}

// cos(π/2) rounds to 6e-17; keep the supports exact
fn cos_edge(a: f64) -> f64 {
    if a >= FRAC_PI_2 {
        0.0
    } else {
        a.cos()
    }
}

/// Smallest i with y ≤ (3/4)4^i.
pub fn cutoff_count(ymax: f64) -> usize {
    let mut i = 0;
    while ymax > 0.75 * 4f64.powi(i as i32) {
        i += 1;
    }
    i
}

#[derive(Clone, Debug)]
pub struct StressPartition {
    pub scales: StepScales,
    /// Largest cutoff index used at any node.
    pub i_max: usize,
    pub i_max_node: Vec<usize>,
    /// ∫χ_i² per node and index 0..=i_max.
    pub chi_sq_integrals: Vec<Vec<f64>>,
    pub gap: Vec<f64>,
    pub e_tilde: Vec<f64>,
    /// ρ(t) before time mollification.
    pub rho_raw: Vec<f64>,
    pub rho0: Vec<f64>,
    pub time: TimeGrid,
}

impl StressPartition {
    /// ρ_i at node n.
    pub fn rho(&self, i: usize, n: usize) -> f64 {
        if i == 0 {
            self.rho0[n]
        } else {
            4f64.powi(i as i32 + 1) * self.scales.unit
        }
    }

    /// Pointwise |R̊_ℓ| / unit.
    pub fn magnitude(&self, r: &PeriodicField) -> Vec<f64> {
        r.magnitude_sq().into_iter().map(|m| m.sqrt() / self.scales.unit).collect()
    }

    /// χ_(i) fields for i = 0..=i_max.
    pub fn cutoffs(&self, r: &PeriodicField) -> Vec<PeriodicField> {
        let grid = r.grid();
        let y = self.magnitude(r);
        (0..=self.i_max)
            .map(|i| {
                let data = y.iter().map(|&y| cutoff(i, y)).collect();
                PeriodicField::from_components(grid, Rank::Scalar, vec![data]).unwrap()
            })
            .collect()
    }

    /// G = Σ_i ρ_i χ_i² at node n.
    pub fn gauge_field(&self, r: &PeriodicField, n: usize) -> PeriodicField {
        let y = self.magnitude(r);
        let data = y
            .iter()
            .map(|&y| (0..=self.i_max).map(|i| self.rho(i, n) * cutoff(i, y).powi(2)).sum())
            .collect();
        PeriodicField::from_components(r.grid(), Rank::Scalar, vec![data]).unwrap()
    }

    /// 3 Σ_i ρ_i ∫χ_i² at node n.
    pub fn gauge_energy(&self, n: usize) -> f64 {
        3.0 * self.chi_sq_integrals[n]
            .iter()
            .enumerate()
            .map(|(i, c)| self.rho(i, n) * c)
            .sum::<f64>()
    }
}

/// Cutoffs of R̊_ℓ and the gauges ρ_i, with ρ₀ chosen to pump the energy gap.
pub fn partition_stress(
    r_ell: &TimeField,
    u_m: &TimeField,
    e: &[f64],
    scales: StepScales,
    spec: MollifierSpec,
) -> Result<StressPartition> {
    let time = r_ell.time;
    let n_t = r_ell.n_t();
    let vol = crate::grid::BOX_LENGTH.powi(3);
    let cell = r_ell.grid.cell_volume();
    let mut gap = Vec::with_capacity(n_t);
    let mut ymax = Vec::with_capacity(n_t);
    for n in 0..n_t {
        let energy = if u_m.frame_is_zero(n) { 0.0 } else { u_m.frame(n)?.integral_sq() };
        let g = e[n] - energy;
        if g < 0.0 {
            return Err(Error::EnergyOvershoot { t: time.node(n), gap: g });
        }
        gap.push(g);
        ymax.push(if r_ell.frame_is_zero(n) {
            0.0
        } else {
            r_ell.frame(n)?.linf_norm() / scales.unit
        });
    }
    let i_max_node: Vec<usize> = ymax.iter().map(|&y| cutoff_count(y)).collect();
    let i_max = i_max_node.iter().copied().max().unwrap_or(0);
    let mut chi_sq_integrals = Vec::with_capacity(n_t);
    for n in 0..n_t {
        let mut ints = vec![0.0; i_max + 1];
        if r_ell.frame_is_zero(n) {
            ints[0] = vol;
        } else {
            let r = r_ell.frame(n)?;
            for y in r.magnitude_sq() {
                let y = y.sqrt() / scales.unit;
                for (i, v) in ints.iter_mut().enumerate() {
                    *v += cutoff(i, y).powi(2) * cell;
                }
            }
        }
        chi_sq_integrals.push(ints);
    }
    let mut part = StressPartition {
        scales,
        i_max,
        i_max_node,
        chi_sq_integrals,
        gap,
        e_tilde: vec![],
        rho_raw: vec![],
        rho0: vec![0.0; n_t],
        time,
    };
    let floor = 0.5 * part.scales.s * part.scales.delta_after;
    for n in 0..n_t {
        let upper: f64 = (1..=i_max).map(|i| part.rho(i, n) * part.chi_sq_integrals[n][i]).sum();
        let et = part.gap[n] - 3.0 * upper;
        part.e_tilde.push(et);
        part.rho_raw.push((et - floor).max(0.0) / (3.0 * part.chi_sq_integrals[n][0]));
    }
    let roots: Vec<f64> = part.rho_raw.iter().map(|r| r.sqrt()).collect();
    let smooth = TimeMollifier::new(time, spec)?.apply_scalar(&roots);
    part.rho0 = smooth.iter().map(|x| x * x).collect();
    Ok(part)
}

// ---------------------------------------------------------------- amplitudes

#[derive(Clone, Debug)]
pub struct Amplitudes {
    /// A(x, t): amplitude of the jet owning x, zero off the supports.
    pub owner: TimeField,
    /// (c_q c*_q)^{-1} s^{-1}.
    pub norm_sq: f64,
    /// Smallest γ² (Id - R̊_ℓ/ρ_i) met on the supports of the cutoffs.
    pub min_gamma_sq: f64,
}

fn sym6(r: &PeriodicField, idx: usize) -> [f64; 6] {
    let mut m = [0.0; 6];
    for (c, v) in m.iter_mut().enumerate() {
        *v = r.comp(c)[idx];
    }
    m
}

fn dot6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-jet data: family, index within its family, γ²(Id) and the dual row.
fn jet_tables(bundle: &JetBundle) -> Vec<(usize, f64, [f64; 6])> {
    let mut out = Vec::with_capacity(bundle.jets.len());
    for f in 0..2 {
        let fam = bundle.set.family(f);
        let g = fam.identity_coefficients();
        for (z, jid) in bundle.family_range(f).enumerate() {
            debug_assert_eq!(bundle.jets[jid].family, f);
            out.push((f, g[z], *fam.dual_row(z)));
        }
    }
    out
}

/// a_ζ² over the whole torus for jet `jid` at node n.
pub fn amplitude_sq_field(
    part: &StressPartition,
    r: &PeriodicField,
    n: usize,
    bundle: &JetBundle,
    jid: usize,
    norm_sq: f64,
) -> PeriodicField {
    let (fam, g, d) = jet_tables(bundle)[jid];
    let y = part.magnitude(r);
    let data = y
        .iter()
        .enumerate()
        .map(|(idx, &y)| {
            let rm = sym6(r, idx);
            (fam..=part.i_max)
                .step_by(2)
                .map(|i| {
                    let rho = part.rho(i, n);
                    if rho == 0.0 {
                        0.0
                    } else {
                        cutoff(i, y).powi(2) * (rho * g - dot6(&d, &rm))
                    }
                })
                .sum::<f64>()
                * norm_sq
        })
        .collect();
    PeriodicField::from_components(r.grid(), Rank::Scalar, vec![data]).unwrap()
}

/// Amplitudes on the jet supports; every γ² met on a cutoff support must be positive.
pub fn build_amplitudes(
    part: &StressPartition,
    r_ell: &TimeField,
    bundle: &JetBundle,
    store: &dyn FrameStore,
) -> Result<Amplitudes> {
    let grid = r_ell.grid;
    let prof = bundle.profiles();
    let norm_sq = 1.0 / (prof.c_q * prof.c_star_q * part.scales.s);
    let tables = jet_tables(bundle);
    let owner = bundle.sample(grid, 0.0)?.owner;
    let mut min_gamma_sq = f64::INFINITY;
    let mut frames = Vec::with_capacity(r_ell.n_t());
    for n in 0..r_ell.n_t() {
        if r_ell.frame_is_zero(n) {
            // χ₀ ≡ 1 and a_ζ² = norm² ρ₀ γ_ζ²(Id)
            let rho = part.rho0[n];
            if rho > 0.0 {
                for &(f, g, _) in &tables {
                    if f == 0 {
                        min_gamma_sq = min_gamma_sq.min(g);
                    }
                }
            }
            let data = owner
                .iter()
                .map(|&o| {
                    if o == NO_OWNER || tables[o as usize].0 != 0 {
                        0.0
                    } else {
                        (norm_sq * rho * tables[o as usize].1).sqrt()
                    }
                })
                .collect();
            frames.push(store.store(PeriodicField::from_components(grid, Rank::Scalar, vec![data])?)?);
            continue;
        }
        let r = r_ell.frame(n)?;
        let y = part.magnitude(&r);
        let mut data = vec![0.0; grid.len()];
        for idx in 0..grid.len() {
            let rm = sym6(&r, idx);
            for i in 0..=part.i_max {
                let chi = cutoff(i, y[idx]);
                let rho = part.rho(i, n);
                if chi == 0.0 || rho == 0.0 {
                    continue;
                }
                for &(f, g, d) in &tables {
                    if f != i % 2 {
                        continue;
                    }
                    let g2 = g - dot6(&d, &rm) / rho;
                    if g2 <= 0.0 {
                        let x = grid.point(idx);
                        return Err(Error::Domain(format!(
                            "Id - R/ρ_{i} leaves the decomposition domain at grid point {idx} \
                             (x = [{:.4}, {:.4}, {:.4}], t = {:.4}): γ² = {g2:.3e}",
                            x[0],
                            x[1],
                            x[2],
                            part.time.node(n)
                        )));
                    }
                    min_gamma_sq = min_gamma_sq.min(g2);
                }
            }
            let o = owner[idx];
            if o == NO_OWNER {
                continue;
            }
            let (f, g, d) = tables[o as usize];
            let a2: f64 = (f..=part.i_max)
                .step_by(2)
                .map(|i| {
                    let rho = part.rho(i, n);
                    if rho == 0.0 {
                        0.0
                    } else {
                        cutoff(i, y[idx]).powi(2) * (rho * g - dot6(&d, &rm))
                    }
                })
                .sum();
            data[idx] = (norm_sq * a2).max(0.0).sqrt();
        }
        frames.push(store.store(PeriodicField::from_components(grid, Rank::Scalar, vec![data])?)?);
    }
    Ok(Amplitudes {
        owner: TimeField::from_frames(r_ell.time, grid, Rank::Scalar, frames)?,
        norm_sq,
        min_gamma_sq,
    })
}

// ---------------------------------------------------------------- perturbation

#[derive(Clone, Debug)]
pub struct Perturbation {
    pub w_p: TimeField,
    pub w_c: TimeField,
    pub w_t: TimeField,
    /// ∂_t (w_p + w_c) and ∂_t w_t.
    pub dt_pc: TimeField,
    pub dt_t: TimeField,
    pub kappa_star: f64,
}

/// Pointwise products of amplitudes and jet profiles at one node.
struct NodeProducts {
    /// A V ζ and its time derivative.
    s: PeriodicField,
    s_t: PeriodicField,
    w_p: PeriodicField,
    /// A² φ²ψ² ζ and its time derivative.
    tt: PeriodicField,
    tt_t: PeriodicField,
    /// (∂_t A²) φ²ψ² ζ.
    a3: PeriodicField,
}

fn node_products(bundle: &JetBundle, sample: &BundleSample, a: &PeriodicField, da: &PeriodicField) -> NodeProducts {
    let grid = sample.grid;
    let z = || PeriodicField::zeros(grid, Rank::Vector);
    let mut out = NodeProducts {
        s: z(),
        s_t: z(),
        w_p: z(),
        tt: z(),
        tt_t: z(),
        a3: z(),
    };
    let (av, dav) = (a.comp(0), da.comp(0));
    for idx in 0..grid.len() {
        let o = sample.owner[idx];
        if o == NO_OWNER || (av[idx] == 0.0 && dav[idx] == 0.0) {
            continue;
        }
        let jet = &bundle.jets[o as usize];
        let v = sample.value[idx];
        let (aa, da) = (av[idx], dav[idx]);
        let rate = jet.time_rate();
        let pref = jet.v_prefactor();
        let zeta = jet.zeta();
        let phi2 = v.phi * v.phi;
        let psi2 = v.psi * v.psi;
        let s = aa * pref * v.psi * v.big_phi;
        let s_t = (da * v.psi + aa * rate * v.dpsi) * pref * v.big_phi;
        let wp = aa * v.psi * v.phi;
        let tt = aa * aa * phi2 * psi2;
        let tt_t = (2.0 * aa * da * psi2 + aa * aa * 2.0 * v.psi * rate * v.dpsi) * phi2;
        let a3 = 2.0 * aa * da * phi2 * psi2;
        for d in 0..3 {
            out.s.comp_mut(d)[idx] = s * zeta[d];
            out.s_t.comp_mut(d)[idx] = s_t * zeta[d];
            out.w_p.comp_mut(d)[idx] = wp * zeta[d];
            out.tt.comp_mut(d)[idx] = tt * zeta[d];
            out.tt_t.comp_mut(d)[idx] = tt_t * zeta[d];
            out.a3.comp_mut(d)[idx] = a3 * zeta[d];
        }
    }
    out
}

fn amplitude_and_rate(amps: &Amplitudes, n: usize) -> Result<(PeriodicField, PeriodicField)> {
    let a = amps.owner.frame(n)?;
    let w = fd_weights(amps.owner.n_t(), n, amps.owner.time.dt())?;
    Ok(((*a).clone(), amps.owner.combine(&w)?))
}

/// -μ^{-1} P_H P_{≠0} f.
fn temporal_corrector(f: &PeriodicField, mu: f64) -> Result<Spectrum> {
    let mut s = ops::leray_s(&ops::proj_nonzero_s(&Spectrum::forward(f)))?;
    s.scale(-1.0 / mu);
    Ok(s)
}

fn node_is_quiet(amps: &Amplitudes, n: usize) -> bool {
    let nt = amps.owner.n_t();
    match fd_weights(nt, n, 1.0) {
        Ok(w) => amps.owner.frame_is_zero(n) && w.iter().all(|&(m, _)| amps.owner.frame_is_zero(m)),
        Err(_) => false,
    }
}

/// w_p = Σ a W, w_p + w_c = Σ curl curl(a V) and w_t = -μ^{-1} Σ P_H P_{≠0}(a² φ²ψ² ζ).
pub fn build_perturbation(
    amps: &Amplitudes,
    bundle: &JetBundle,
    kappa_star: f64,
    store: &dyn FrameStore,
) -> Result<Perturbation> {
    let time = amps.owner.time;
    let grid = amps.owner.grid;
    let mu = bundle.params.mu;
    let mut fr: [Vec<crate::time::Frame>; 5] = Default::default();
    for n in 0..time.n_t {
        if node_is_quiet(amps, n) {
            for f in fr.iter_mut() {
                f.push(crate::time::Frame::Zero);
            }
            continue;
        }
        let (a, da) = amplitude_and_rate(amps, n)?;
        let sample = bundle.sample(grid, time.node(n))?;
        let np = node_products(bundle, &sample, &a, &da);
        let w_pc = ops::curl_curl_s(&Spectrum::forward(&np.s))?.inverse();
        let dt_pc = ops::curl_curl_s(&Spectrum::forward(&np.s_t))?.inverse();
        let w_t = temporal_corrector(&np.tt, mu)?.inverse();
        let dt_t = temporal_corrector(&np.tt_t, mu)?.inverse();
        let w_c = w_pc.sub(&np.w_p)?;
        fr[0].push(store.store(np.w_p)?);
        fr[1].push(store.store(w_c)?);
        fr[2].push(store.store(w_t)?);
        fr[3].push(store.store(dt_pc)?);
        fr[4].push(store.store(dt_t)?);
    }
    let [f0, f1, f2, f3, f4] = fr;
    let tf = |f| TimeField::from_frames(time, grid, Rank::Vector, f);
    Ok(Perturbation {
        w_p: tf(f0)?,
        w_c: tf(f1)?,
        w_t: tf(f2)?,
        dt_pc: tf(f3)?,
        dt_t: tf(f4)?,
        kappa_star,
    })
}

// ---------------------------------------------------------------- new stress

/// Per-node diagnostics of the stress assembly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StressDiagnostics {
    pub r_lin_l2: f64,
    pub r_corr_l2: f64,
    pub r_osc_l2: f64,
    /// ‖F - A1 - A3 - ∇P_explicit‖ / ‖F‖.
    pub pressure_defect: f64,
    /// Spectral energy fraction of w⊗w outside the 2/3 box.
    pub alias_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct NewStress {
    pub r: TimeField,
    pub p: TimeField,
    pub diagnostics: Vec<StressDiagnostics>,
}

/// R̊_{m+1} = R_lin + R_corr + R_osc and p_{m+1} = p_ℓ - P.
pub fn build_new_stress(
    pert: &Perturbation,
    amps: &Amplitudes,
    moll: &Mollified,
    part: &StressPartition,
    bundle: &JetBundle,
    nu: f64,
    store: &dyn FrameStore,
) -> Result<NewStress> {
    let time = moll.u.time;
    let grid = moll.u.grid;
    let mu = bundle.params.mu;
    let mut r_frames = Vec::with_capacity(time.n_t);
    let mut p_frames = Vec::with_capacity(time.n_t);
    let mut diagnostics = Vec::with_capacity(time.n_t);
    for n in 0..time.n_t {
        let quiet = node_is_quiet(amps, n);
        let r_ell = moll.r.frame(n)?;
        let p_ell = moll.p.frame(n)?;
        if quiet && moll.r.frame_is_zero(n) && moll.u.frame_is_zero(n) {
            r_frames.push(crate::time::Frame::Zero);
            p_frames.push(store.store((*p_ell).clone())?);
            diagnostics.push(StressDiagnostics::default());
            continue;
        }
        let u_ell = moll.u.frame(n)?;
        let w_p = pert.w_p.frame(n)?;
        let mut w = (*w_p).clone();
        w.axpy(1.0, &*pert.w_c.frame(n)?)?;
        w.axpy(1.0, &*pert.w_t.frame(n)?)?;
        let dt_pc = pert.dt_pc.frame(n)?;
        let dt_t = pert.dt_t.frame(n)?;

        // F = ∂_t w_t + div(w_p⊗w_p + R̊_ℓ)
        let mut flux = ops::sym_outer(&w_p, &w_p, false)?;
        flux.axpy(1.0, &r_ell)?;
        let mut f_s = ops::div_s(&Spectrum::forward(&flux))?;
        f_s.axpy(1.0, &Spectrum::forward(&dt_t))?;
        drop(flux);

        let (a, da) = amplitude_and_rate(amps, n)?;
        let sample = bundle.sample(grid, time.node(n))?;
        let np = node_products(bundle, &sample, &a, &da);

        // A1 = P≠0[(ζ·∇a²)ψ²φ²ζ] - P≠0[∇G - div R̊_ℓ]
        let g = part.gauge_field(&r_ell, n);
        let g_s = Spectrum::forward(&g);
        let mut mean_part = ops::grad_s(&g_s)?;
        mean_part.axpy(-1.0, &ops::div_s(&Spectrum::forward(&r_ell))?)?;
        let mut a1 = PeriodicField::zeros(grid, Rank::Vector);
        if !moll.r.frame_is_zero(n) {
            for jid in 0..bundle.jets.len() {
                let zeta = bundle.jets[jid].zeta();
                let a2 = amplitude_sq_field(part, &r_ell, n, bundle, jid, amps.norm_sq);
                let da2 = ops::dir_deriv_s(&Spectrum::forward(&a2), zeta).inverse();
                let dv = da2.comp(0);
                for idx in 0..grid.len() {
                    if sample.owner[idx] as usize == jid {
                        let v = sample.value[idx];
                        let c = dv[idx] * v.psi * v.psi * v.phi * v.phi;
                        for d in 0..3 {
                            a1.comp_mut(d)[idx] = c * zeta[d];
                        }
                    }
                }
            }
        }
        let mut a13 = ops::proj_nonzero_s(&Spectrum::forward(&a1));
        a13.axpy(-1.0, &ops::proj_nonzero_s(&mean_part))?;
        // A3 = -μ^{-1} P≠0[(∂_t a²)φ²ψ²ζ]
        a13.axpy(-1.0 / mu, &ops::proj_nonzero_s(&Spectrum::forward(&np.a3)))?;

        // div R_osc + ∇P = F exactly
        let mut osc = ops::leray_s(&f_s)?;
        osc.axpy(1.0, &a13)?;
        osc.axpy(-1.0, &ops::leray_s(&a13)?)?;
        let mut rest = f_s.clone();
        rest.axpy(-1.0, &a13)?;
        let p_s = ops::inv_laplacian_s(&ops::div_s(&rest)?);

        // defect against P_explicit = G + μ^{-1} Δ^{-1} div P≠0 ∂_t(a²φ²ψ²ζ)
        let mut p_exp = ops::inv_laplacian_s(&ops::div_s(&ops::proj_nonzero_s(&Spectrum::forward(&np.tt_t)))?);
        p_exp.scale(1.0 / mu);
        p_exp.axpy(1.0, &g_s)?;
        let mut defect = rest;
        defect.axpy(-1.0, &ops::grad_s(&p_exp)?)?;
        let f_norm = f_s.integral_sq();
        let pressure_defect = if f_norm > 0.0 { (defect.integral_sq() / f_norm).sqrt() } else { 0.0 };
        drop(np);

        // linear part: -νΔw + ∂_t(w_p + w_c) + div(u_ℓ⊗w + w⊗u_ℓ)
        let w_s = Spectrum::forward(&w);
        let mut lin = ops::laplacian_s(&w_s);
        lin.scale(-nu);
        lin.axpy(1.0, &Spectrum::forward(&dt_pc))?;
        if !moll.u.frame_is_zero(n) {
            let mut cross = ops::sym_outer(&u_ell, &w, false)?;
            cross.scale(2.0);
            lin.axpy(1.0, &ops::div_s(&Spectrum::forward(&cross))?)?;
        }
        // corrector part: div(w⊗w - w_p⊗w_p)
        let ww_s = Spectrum::forward(&ops::sym_outer(&w, &w, false)?);
        let alias_fraction = ops::alias_fraction(&ww_s);
        let mut corr = ops::div_s(&ww_s)?;
        drop(ww_s);
        corr.axpy(-1.0, &ops::div_s(&Spectrum::forward(&ops::sym_outer(&w_p, &w_p, false)?))?)?;

        let r_lin = ops::antidiv_s(&lin)?;
        let r_corr = ops::antidiv_s(&corr)?;
        let r_osc = ops::antidiv_s(&osc)?;
        let mut total = r_lin.clone();
        total.axpy(1.0, &r_corr)?;
        total.axpy(1.0, &r_osc)?;
        diagnostics.push(StressDiagnostics {
            r_lin_l2: r_lin.integral_sq().sqrt(),
            r_corr_l2: r_corr.integral_sq().sqrt(),
            r_osc_l2: r_osc.integral_sq().sqrt(),
            pressure_defect,
            alias_fraction,
        });
        r_frames.push(store.store(total.inverse())?);
        let mut p = (*p_ell).clone();
        p.axpy(-1.0, &p_s.inverse())?;
        p_frames.push(store.store(p)?);
    }
    Ok(NewStress {
        r: TimeField::from_frames(time, grid, Rank::SymTensor, r_frames)?,
        p: TimeField::from_frames(time, grid, Rank::Scalar, p_frames)?,
        diagnostics,
    })
}

// ---------------------------------------------------------------- step

/// One row of the iteration report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeReport {
    pub t: f64,
    pub energy: f64,
    pub gap_in: f64,
    pub gap_out: f64,
    pub rho0: f64,
    pub i_max: usize,
    pub w_p_lq: f64,
    pub w_c_lq: f64,
    pub w_t_lq: f64,
    pub w_lq: f64,
    pub r_new_l1: f64,
    pub stress: StressDiagnostics,
    pub wp_energy: f64,
    pub gauge_energy: f64,
    pub remainder_rel: f64,
    pub hf_remainder: f64,
    pub div_u: f64,
    pub nsr_residual_l2: f64,
    pub nonlinear_l2: f64,
}

pub const REPORT_COLUMNS: [&str; 24] = [
    "t",
    "energy",
    "gap_in",
    "gap_out",
    "rho0",
    "i_max",
    "w_p_lq",
    "w_c_lq",
    "w_t_lq",
    "w_lq",
    "r_new_l1",
    "r_lin_l2",
    "r_corr_l2",
    "r_osc_l2",
    "pressure_defect",
    "alias_fraction",
    "wp_energy",
    "gauge_energy",
    "remainder_rel",
    "hf_remainder",
    "div_u",
    "nsr_residual_l2",
    "nonlinear_l2",
    "nsr_relative",
];

impl NodeReport {
    pub fn nsr_relative(&self) -> f64 {
        if self.nonlinear_l2 > 0.0 {
            self.nsr_residual_l2 / self.nonlinear_l2
        } else {
            self.nsr_residual_l2
        }
    }

    fn cells(&self) -> Vec<String> {
        let s = &self.stress;
        let mut v: Vec<String> = [
            self.t,
            self.energy,
            self.gap_in,
            self.gap_out,
            self.rho0,
        ]
        .iter()
        .map(|&x| fmt_f64(x))
        .collect();
        v.push(self.i_max.to_string());
        v.extend(
            [
                self.w_p_lq,
                self.w_c_lq,
                self.w_t_lq,
                self.w_lq,
                self.r_new_l1,
                s.r_lin_l2,
                s.r_corr_l2,
                s.r_osc_l2,
                s.pressure_defect,
                s.alias_fraction,
                self.wp_energy,
                self.gauge_energy,
                self.remainder_rel,
                self.hf_remainder,
                self.div_u,
                self.nsr_residual_l2,
                self.nonlinear_l2,
                self.nsr_relative(),
            ]
            .iter()
            .map(|&x| fmt_f64(x)),
        );
        v
    }
}

#[derive(Clone, Debug)]
pub struct IterationReport {
    pub m: u32,
    pub rows: Vec<NodeReport>,
    pub kappa_star: f64,
    pub scales: StepScales,
    pub min_gamma_sq: f64,
    /// Messages about knowingly violated hypotheses.
    pub notes: Vec<String>,
}

impl IterationReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(REPORT_COLUMNS)?;
        for r in &self.rows {
            wr.write_record(r.cells())?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn max_of<F: Fn(&NodeReport) -> f64>(&self, f: F) -> f64 {
        self.rows.iter().map(f).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: IterationState,
    pub perturbation: Perturbation,
    pub partition: StressPartition,
    pub report: IterationReport,
}

/// The full step (u_m, R̊_m, p_m) ↦ (u_{m+1}, R̊_{m+1}, p_{m+1}).
pub fn step(s: &IterationState, cfg: &StepConfig) -> Result<StepOutput> {
    let store = cfg.store.as_ref();
    let bundle = cfg.bundle.as_ref();
    let nu = s.nu();
    let scales = StepScales::new(&s.ledger, s.m, bundle)?;
    let mut notes = Vec::new();
    if let Some(msg) = crate::jets::ResolutionPolicy::Report.check(&bundle.params, s.grid())? {
        notes.push(msg);
    }
    log::info!("level {}: mollifying", s.m);
    let moll = mollify_state(s, cfg.mollifier, store)?;
    log::info!("level {}: partitioning the stress", s.m);
    let part = partition_stress(&moll.r, &s.u, &s.e, scales.clone(), cfg.mollifier)?;
    let amps = build_amplitudes(&part, &moll.r, bundle, store)?;
    let kappa_star = s.ledger.kappa_star(bundle.profiles(), &bundle.set);
    log::info!("level {}: building the perturbation", s.m);
    let pert = build_perturbation(&amps, bundle, kappa_star, store)?;
    log::info!("level {}: assembling the new stress", s.m);
    let ns = build_new_stress(&pert, &amps, &moll, &part, bundle, nu, store)?;

    let time = s.time();
    let u_new = moll.u.map(store, Rank::Vector, |n, ul| {
        let mut out = ul.clone();
        for w in [&pert.w_p, &pert.w_c, &pert.w_t] {
            if !w.frame_is_zero(n) {
                out.axpy(1.0, &*w.frame(n)?)?;
            }
        }
        Ok(out)
    })?;
    let dudt_new = moll.dudt.map(store, Rank::Vector, |n, d| {
        let mut out = d.clone();
        for w in [&pert.dt_pc, &pert.dt_t] {
            if !w.frame_is_zero(n) {
                out.axpy(1.0, &*w.frame(n)?)?;
            }
        }
        Ok(out)
    })?;
    let next = IterationState {
        m: s.m + 1,
        u: u_new,
        r: ns.r,
        p: ns.p,
        dudt: Some(dudt_new),
        e: s.e.clone(),
        ledger: s.ledger.clone(),
    };

    let q = bundle.params.q;
    let k = bundle.jets[0].lattice_k();
    let mut rows = Vec::with_capacity(time.n_t);
    for n in 0..time.n_t {
        let t = time.node(n);
        let lq = |f: &TimeField| -> Result<f64> {
            Ok(if f.frame_is_zero(n) { 0.0 } else { f.frame(n)?.lp_norm(q) })
        };
        let u1 = next.u.frame(n)?;
        let energy = u1.integral_sq();
        let mut w = (*pert.w_p.frame(n)?).clone();
        w.axpy(1.0, &*pert.w_c.frame(n)?)?;
        w.axpy(1.0, &*pert.w_t.frame(n)?)?;
        let wp = pert.w_p.frame(n)?;
        let wp_energy = wp.integral_sq();
        let gauge_energy = part.gauge_energy(n);
        let hf_remainder = if wp_energy > 0.0 {
            ops::proj_high(&magnitude_field(&wp), k).lp_norm(1.0)
        } else {
            0.0
        };
        let (nsr, nonlinear) = crate::verify::nsr_frame(&next, n, nu)?;
        rows.push(NodeReport {
            t,
            energy,
            gap_in: part.gap[n],
            gap_out: s.e[n] - energy,
            rho0: part.rho0[n],
            i_max: part.i_max_node[n],
            w_p_lq: lq(&pert.w_p)?,
            w_c_lq: lq(&pert.w_c)?,
            w_t_lq: lq(&pert.w_t)?,
            w_lq: w.lp_norm(q),
            r_new_l1: if next.r.frame_is_zero(n) { 0.0 } else { next.r.frame(n)?.lp_norm(1.0) },
            stress: ns.diagnostics[n].clone(),
            wp_energy,
            gauge_energy,
            remainder_rel: if wp_energy > 0.0 { (wp_energy - gauge_energy) / wp_energy } else { 0.0 },
            hf_remainder,
            div_u: ops::div(&u1)?.linf_norm(),
            nsr_residual_l2: nsr,
            nonlinear_l2: nonlinear,
        });
    }
    let bound = kappa_star * scales.delta_next.sqrt();
    let w_max = rows.iter().map(|r| r.w_lq).fold(0.0, f64::max);
    if w_max > bound {
        notes.push(format!(
            "‖w‖_Lq = {w_max:.3e} exceeds κ* δ_(m+1)^(1/2) = {bound:.3e} (desk parameters)"
        ));
    }
    let report = IterationReport {
        m: s.m,
        rows,
        kappa_star,
        scales,
        min_gamma_sq: amps.min_gamma_sq,
        notes,
    };
    Ok(StepOutput {
        state: next,
        perturbation: pert,
        partition: part,
        report,
    })
}

/// Zero initial state and step configuration for a run.
pub fn setup_run(config: &crate::io::RunConfig) -> Result<(IterationState, StepConfig)> {
    let grid = config.grid3()?;
    let time = TimeGrid::new(0.0, config.ledger.t_end.value(), config.grid.n_t)?;
    let q = to_f64(&config.ledger.q);
    let shape = crate::profiles::make_shape(&config.jets.shape, &config.jets.shape_options)?;
    let profiles = Arc::new(crate::profiles::Profiles::new(shape, q)?);
    let set = Arc::new(crate::geometry::DirectionSet::default_set());
    let bundle = JetBundle::new(set, config.jet_params()?, profiles, config.jets.seed)?;
    config.jets.resolution_policy.check(&bundle.params, grid)?;
    let energy = make_energy(&config.energy.selector, &config.energy.options)?;
    // u, ∂_t u, R̊ and a few work fields per node
    let bytes = grid.len() * 8 * 3 * 6 * time.n_t;
    let store = crate::time::make_store(&config.grid.store, bytes)?;
    let mollifier = MollifierSpec::new(to_f64(&config.grid.ell), config.grid.mollifier_order)?;
    let state = IterationState::zero(time, grid, energy.as_ref(), config.ledger.clone());
    Ok((
        state,
        StepConfig {
            bundle: Arc::new(bundle),
            mollifier,
            store,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoffs_form_partition_of_unity() {
        for k in 0..4000 {
            let y = k as f64 * 0.05;
            let imax = cutoff_count(y);
            let s: f64 = (0..=imax).map(|i| cutoff(i, y).powi(2)).sum();
            assert!((s - 1.0).abs() < 1e-12, "y = {y}: Σχ² = {s}");
        }
    }

    #[test]
    fn cutoff_supports_match_gauge_window() {
        for k in 1..2000 {
            let y = k as f64 * 0.1;
            for i in 1..6 {
                if cutoff(i, y) > 1e-12 {
                    let ratio = y / 4f64.powi(i as i32 + 1);
                    assert!((3.0 / 64.0 - 1e-12..=0.25 + 1e-12).contains(&ratio), "i = {i}, y = {y}");
                }
            }
        }
        assert_eq!(cutoff(0, 0.5), 1.0);
        assert_eq!(cutoff(0, 1.0), 0.0);
        assert_eq!(cutoff_count(0.0), 0);
        assert_eq!(cutoff_count(0.75), 0);
        assert_eq!(cutoff_count(0.76), 1);
    }

    #[test]
    fn energy_registry() {
        let e = make_energy("one_minus_cos_k", &[("k".to_string(), "2".to_string())].into()).unwrap();
        assert!((e.value(0.5) - (1.0 - 1f64.cos())).abs() < 1e-15);
        let c = make_energy("constant", &BTreeMap::new()).unwrap();
        assert_eq!(c.value(3.0), 1.0);
        assert!(matches!(make_energy("nope", &BTreeMap::new()), Err(Error::Unknown { .. })));
        let tab = TabulatedEnergy::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 2.0]).unwrap();
        assert_eq!(tab.value(0.5), 1.0);
        assert_eq!(tab.value(5.0), 2.0);
        assert!(TabulatedEnergy::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn tabulated_energy_reads_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "t,e\n0,0\n1,0.5\n").unwrap();
        let opts = [("path".to_string(), path.display().to_string())].into();
        let e = make_energy("tabulated", &opts).unwrap();
        assert!((e.value(0.5) - 0.25).abs() < 1e-15);
    }
}
