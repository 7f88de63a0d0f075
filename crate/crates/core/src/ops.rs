//! Pseudo-spectral calculus on the periodic grid.
//!
//! Every derivative, inverse and Leray-type operator annihilates modes lying on a
//! Nyquist plane, so that div∘grad = Δ, div∘P_H = 0 and div∘R = Id - mean hold
//! exactly on the grid. Pure projections (mean removal, cutoffs, shells) keep them.

use crate::error::{Error, Result};
use crate::fft::{pool, Fft3};
use crate::grid::{sym, Grid3, PeriodicField, Rank};
use crate::quadrature::gauss_legendre;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Grid3,
    rank: Rank,
    data: Vec<Vec<Complex64>>,
}

struct Waves {
    k: Vec<f64>,
    nyq: Vec<bool>,
}

impl Waves {
    fn new(grid: Grid3) -> Self {
        let n = grid.n();
        let k: Vec<f64> = (0..n).map(|i| grid.wavenumber(i) as f64).collect();
        let nyq: Vec<bool> = (0..n).map(|i| grid.is_nyquist(i)).collect();
        Self { k, nyq }
    }
}

/// Calls `f(idx, k, on_nyquist_plane)` for every mode.
fn for_each_mode<F>(grid: Grid3, mut f: F)
where
    F: FnMut(usize, [f64; 3], bool),
{
    let w = Waves::new(grid);
    let n = grid.n();
    let mut idx = 0;
    for c in 0..n {
        for b in 0..n {
            for a in 0..n {
                let nyq = w.nyq[a] || w.nyq[b] || w.nyq[c];
                f(idx, [w.k[a], w.k[b], w.k[c]], nyq);
                idx += 1;
            }
        }
    }
}

impl Spectrum {
    pub fn zeros(grid: Grid3, rank: Rank) -> Self {
        Self {
            grid,
            rank,
            data: vec![vec![Complex64::default(); grid.len()]; rank.components()],
        }
    }

    pub fn forward(f: &PeriodicField) -> Self {
        let grid = f.grid();
        let plan = Fft3::for_grid(grid);
        let data = f
            .components()
            .iter()
            .map(|c| {
                let mut buf: Vec<Complex64> = c.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                plan.forward(&mut buf);
                buf
            })
            .collect();
        Self {
            grid,
            rank: f.rank(),
            data,
        }
    }

    pub fn inverse(&self) -> PeriodicField {
        let plan = Fft3::for_grid(self.grid);
        let comps = self
            .data
            .iter()
            .map(|c| {
                let mut buf = c.clone();
                plan.inverse(&mut buf);
                buf.into_iter().map(|z| z.re).collect()
            })
            .collect();
        PeriodicField::from_components(self.grid, self.rank, comps).unwrap()
    }

    pub fn grid(&self) -> Grid3 {
        self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn comp(&self, c: usize) -> &[Complex64] {
        &self.data[c]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.data[c]
    }

    pub fn axpy(&mut self, s: f64, other: &Spectrum) -> Result<()> {
        if self.grid != other.grid || self.rank != other.rank {
            return Err(Error::Shape("spectrum shape mismatch".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.data {
            for x in c.iter_mut() {
                *x *= s;
            }
        }
    }

    /// ∫|f|² over the torus via Parseval.
    pub fn integral_sq(&self) -> f64 {
        let nn = self.grid.len() as f64;
        let vol = crate::grid::BOX_LENGTH.powi(3);
        let mut s = 0.0;
        for (c, comp) in self.data.iter().enumerate() {
            s += self.rank.weight(c) * comp.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        s * vol / (nn * nn)
    }

    /// Multiplies every component by a real symbol `m(k, on_nyquist_plane)`.
    pub fn apply_symbol<F: Fn([f64; 3], bool) -> f64>(&mut self, m: F) {
        let mut sym_vals = vec![0.0; self.grid.len()];
        for_each_mode(self.grid, |idx, k, nyq| sym_vals[idx] = m(k, nyq));
        for c in &mut self.data {
            c.iter_mut().zip(&sym_vals).for_each(|(z, s)| *z *= *s);
        }
    }

    fn with_rank(&self, rank: Rank) -> Spectrum {
        Spectrum::zeros(self.grid, rank)
    }

    fn require(&self, rank: Rank, op: &str) -> Result<()> {
        if self.rank != rank {
            return Err(Error::Shape(format!(
                "{op} expects a {:?} field, got {:?}",
                rank, self.rank
            )));
        }
        Ok(())
    }
}

/// Derivative wavevector: zero on Nyquist planes.
#[inline]
fn dk(k: [f64; 3], nyq: bool) -> [f64; 3] {
    if nyq {
        [0.0; 3]
    } else {
        k
    }
}

#[inline]
fn k2(k: [f64; 3]) -> f64 {
    k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
}

pub fn grad_s(s: &Spectrum) -> Result<Spectrum> {
    s.require(Rank::Scalar, "grad")?;
    let mut out = s.with_rank(Rank::Vector);
    let src = &s.data[0];
    for_each_mode(s.grid, |idx, k, nyq| {
        let k = dk(k, nyq);
        for d in 0..3 {
            out.data[d][idx] = I * k[d] * src[idx];
        }
    });
    Ok(out)
}

/// Gradient of a vector field as a full tensor, entry (i, j) = ∂_j v_i.
pub fn grad_vec_s(v: &Spectrum) -> Result<Spectrum> {
    v.require(Rank::Vector, "vector gradient")?;
    let mut out = v.with_rank(Rank::Tensor);
    for_each_mode(v.grid, |idx, k, nyq| {
        let k = dk(k, nyq);
        for i in 0..3 {
            for j in 0..3 {
                out.data[3 * i + j][idx] = I * k[j] * v.data[i][idx];
            }
        }
    });
    Ok(out)
}

pub fn div_s(v: &Spectrum) -> Result<Spectrum> {
    match v.rank {
        Rank::Vector => {
            let mut out = v.with_rank(Rank::Scalar);
            for_each_mode(v.grid, |idx, k, nyq| {
                let k = dk(k, nyq);
                out.data[0][idx] =
                    I * (k[0] * v.data[0][idx] + k[1] * v.data[1][idx] + k[2] * v.data[2][idx]);
            });
            Ok(out)
        }
        Rank::SymTensor => {
            let mut out = v.with_rank(Rank::Vector);
            for_each_mode(v.grid, |idx, k, nyq| {
                let k = dk(k, nyq);
                for i in 0..3 {
                    let mut z = Complex64::default();
                    for (j, kj) in k.iter().enumerate() {
                        z += v.data[sym(i, j)][idx] * *kj;
                    }
                    out.data[i][idx] = I * z;
                }
            });
            Ok(out)
        }
        r => Err(Error::Shape(format!("div of a {:?} field", r))),
    }
}

pub fn curl_s(v: &Spectrum) -> Result<Spectrum> {
    v.require(Rank::Vector, "curl")?;
    let mut out = v.with_rank(Rank::Vector);
    for_each_mode(v.grid, |idx, k, nyq| {
        let k = dk(k, nyq);
        let (a, b, c) = (v.data[0][idx], v.data[1][idx], v.data[2][idx]);
        out.data[0][idx] = I * (k[1] * c - k[2] * b);
        out.data[1][idx] = I * (k[2] * a - k[0] * c);
        out.data[2][idx] = I * (k[0] * b - k[1] * a);
    });
    Ok(out)
}

/// Directional derivative ζ·∇ of every component.
pub fn dir_deriv_s(s: &Spectrum, zeta: [f64; 3]) -> Spectrum {
    let mut out = s.clone();
    for_each_mode(s.grid, |idx, k, nyq| {
        let k = dk(k, nyq);
        let m = I * (k[0] * zeta[0] + k[1] * zeta[1] + k[2] * zeta[2]);
        for c in &mut out.data {
            c[idx] *= m;
        }
    });
    out
}

/// curl curl v = ∇ div v - Δ v.
pub fn curl_curl_s(v: &Spectrum) -> Result<Spectrum> {
    v.require(Rank::Vector, "curl curl")?;
    let mut out = v.with_rank(Rank::Vector);
    for_each_mode(v.grid, |idx, k, nyq| {
        let k = dk(k, nyq);
        let kk = k2(k);
        let kv = k[0] * v.data[0][idx] + k[1] * v.data[1][idx] + k[2] * v.data[2][idx];
        for d in 0..3 {
            out.data[d][idx] = v.data[d][idx] * kk - kv * k[d];
        }
    });
    Ok(out)
}

pub fn laplacian_s(s: &Spectrum) -> Spectrum {
    let mut out = s.clone();
    out.apply_symbol(|k, nyq| if nyq { 0.0 } else { -k2(k) });
    out
}

pub fn inv_laplacian_s(s: &Spectrum) -> Spectrum {
    let mut out = s.clone();
    out.apply_symbol(|k, nyq| {
        let kk = k2(k);
        if nyq || kk == 0.0 {
            0.0
        } else {
            -1.0 / kk
        }
    });
    out
}

/// |∇|^{-1} on mean-free, Nyquist-free modes.
pub fn inv_abs_grad_s(s: &Spectrum) -> Spectrum {
    let mut out = s.clone();
    out.apply_symbol(|k, nyq| {
        let kk = k2(k);
        if nyq || kk == 0.0 {
            0.0
        } else {
            1.0 / kk.sqrt()
        }
    });
    out
}

pub fn leray_s(v: &Spectrum) -> Result<Spectrum> {
    v.require(Rank::Vector, "Leray projection")?;
    let mut out = v.clone();
    for_each_mode(v.grid, |idx, k, nyq| {
        let kk = k2(k);
        if nyq {
            for d in 0..3 {
                out.data[d][idx] = Complex64::default();
            }
        } else if kk > 0.0 {
            let kv = (k[0] * v.data[0][idx] + k[1] * v.data[1][idx] + k[2] * v.data[2][idx]) / kk;
            for d in 0..3 {
                out.data[d][idx] = v.data[d][idx] - kv * k[d];
            }
        }
    });
    Ok(out)
}

pub fn proj_nonzero_s(s: &Spectrum) -> Spectrum {
    let mut out = s.clone();
    for c in &mut out.data {
        c[0] = Complex64::default();
    }
    out
}

/// P_{≥κ}: keeps modes with |k| ≥ κ.
pub fn proj_high_s(s: &Spectrum, kappa: f64) -> Spectrum {
    let mut out = s.clone();
    out.apply_symbol(|k, _| if k2(k).sqrt() >= kappa { 1.0 } else { 0.0 });
    out
}

/// Dyadic shell 2^j ≤ |k| < 2^{j+1}.
pub fn lp_shell_s(s: &Spectrum, j: u32) -> Spectrum {
    let lo = 2f64.powi(j as i32);
    let hi = 2.0 * lo;
    let mut out = s.clone();
    out.apply_symbol(|k, _| {
        let m = k2(k).sqrt();
        if m >= lo && m < hi {
            1.0
        } else {
            0.0
        }
    });
    out
}

/// Number of dyadic shells needed to cover all modes of the grid.
pub fn shell_count(grid: Grid3) -> u32 {
    let kmax = 3f64.sqrt() * (grid.n() / 2) as f64;
    (kmax.log2().floor() as u32) + 1
}

/// 2/3-rule truncation: keeps modes with every |k_i| ≤ (n-1)/3.
pub fn dealias_s(s: &Spectrum) -> Spectrum {
    let kc = ((s.grid.n() - 1) / 3) as f64;
    let mut out = s.clone();
    out.apply_symbol(|k, _| {
        if k.iter().all(|x| x.abs() <= kc) {
            1.0
        } else {
            0.0
        }
    });
    out
}

/// Fraction of spectral energy outside the 2/3-rule box.
pub fn alias_fraction(s: &Spectrum) -> f64 {
    let total = s.integral_sq();
    if total == 0.0 {
        return 0.0;
    }
    let kept = dealias_s(s).integral_sq();
    ((total - kept) / total).max(0.0)
}

/// Antidivergence: symmetric trace-free R u with div R u = u - mean u.
pub fn antidiv_s(u: &Spectrum) -> Result<Spectrum> {
    u.require(Rank::Vector, "antidivergence")?;
    let mut out = u.with_rank(Rank::SymTensor);
    for_each_mode(u.grid, |idx, k, nyq| {
        let kk = k2(k);
        if nyq || kk == 0.0 {
            return;
        }
        let v = [
            -u.data[0][idx] / kk,
            -u.data[1][idx] / kk,
            -u.data[2][idx] / kk,
        ];
        let kv = (k[0] * v[0] + k[1] * v[1] + k[2] * v[2]) / kk;
        let w = [v[0] - kv * k[0], v[1] - kv * k[1], v[2] - kv * k[2]];
        let divv = I * (k[0] * v[0] + k[1] * v[1] + k[2] * v[2]);
        for i in 0..3 {
            for j in i..3 {
                let mut z = (I * k[j] * w[i] + I * k[i] * w[j]) * 0.25
                    + (I * k[j] * v[i] + I * k[i] * v[j]) * 0.75;
                if i == j {
                    z -= divv * 0.5;
                }
                out.data[sym(i, j)][idx] = z;
            }
        }
    });
    Ok(out)
}

/// Fourier transform of the normalised radial kernel c(1 - |x|²)^s_+ in three dimensions,
/// tabulated on integer values of |k|² and scaled by ℓ.
struct KernelTable {
    values: Vec<f64>,
}

fn kernel_ft_3d(kappa: f64, order: u32, nodes: &[f64], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &w) in nodes.iter().zip(weights) {
        let rho = 0.5 * (x + 1.0);
        let base = (1.0 - rho * rho).powi(order as i32) * rho * rho * w;
        let arg = kappa * rho;
        let sinc = if arg.abs() < 1e-8 {
            1.0 - arg * arg / 6.0
        } else {
            arg.sin() / arg
        };
        num += base * sinc;
        den += base;
    }
    num / den
}

fn kernel_table(grid: Grid3, ell: f64, order: u32) -> Arc<KernelTable> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64, u32), Arc<KernelTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (grid.n(), ell.to_bits(), order);
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return t.clone();
    }
    let half = (grid.n() / 2) as usize;
    let max_k2 = 3 * half * half;
    let kmax_arg = (max_k2 as f64).sqrt() * ell;
    let m = (64.0 + 2.0 * kmax_arg) as usize;
    let (nodes, weights) = gauss_legendre(m.min(2000));
    let values: Vec<f64> = pool().install(|| {
        (0..=max_k2)
            .into_par_iter()
            .map(|q| kernel_ft_3d((q as f64).sqrt() * ell, order, &nodes, &weights))
            .collect()
    });
    let t = Arc::new(KernelTable { values });
    cache.lock().unwrap().insert(key, t.clone());
    t
}

/// Spatial mollification by η_ℓ = ℓ^{-3} η(·/ℓ), applied as an exact Fourier multiplier.
pub fn mollify_space_s(s: &Spectrum, ell: f64, order: u32) -> Result<Spectrum> {
    if !(ell > 0.0) {
        return Err(Error::Invalid(format!("mollification scale must be positive, got {ell}")));
    }
    let table = kernel_table(s.grid, ell, order);
    let mut out = s.clone();
    out.apply_symbol(|k, _| table.values[k2(k).round() as usize]);
    Ok(out)
}

// Physical-space wrappers.

pub fn grad(f: &PeriodicField) -> Result<PeriodicField> {
    match f.rank() {
        Rank::Scalar => Ok(grad_s(&Spectrum::forward(f))?.inverse()),
        Rank::Vector => Ok(grad_vec_s(&Spectrum::forward(f))?.inverse()),
        r => Err(Error::Shape(format!("grad of a {:?} field", r))),
    }
}

pub fn div(f: &PeriodicField) -> Result<PeriodicField> {
    Ok(div_s(&Spectrum::forward(f))?.inverse())
}

pub fn curl(f: &PeriodicField) -> Result<PeriodicField> {
    Ok(curl_s(&Spectrum::forward(f))?.inverse())
}

pub fn laplacian(f: &PeriodicField) -> PeriodicField {
    laplacian_s(&Spectrum::forward(f)).inverse()
}

pub fn inv_laplacian(f: &PeriodicField) -> PeriodicField {
    inv_laplacian_s(&Spectrum::forward(f)).inverse()
}

pub fn inv_abs_grad(f: &PeriodicField) -> PeriodicField {
    inv_abs_grad_s(&Spectrum::forward(f)).inverse()
}

pub fn leray(f: &PeriodicField) -> Result<PeriodicField> {
    Ok(leray_s(&Spectrum::forward(f))?.inverse())
}

pub fn proj_nonzero(f: &PeriodicField) -> PeriodicField {
    let mut out = f.clone();
    for c in 0..out.ncomp() {
        let m = f.mean(c);
        out.comp_mut(c).iter_mut().for_each(|x| *x -= m);
    }
    out
}

pub fn proj_high(f: &PeriodicField, kappa: f64) -> PeriodicField {
    proj_high_s(&Spectrum::forward(f), kappa).inverse()
}

pub fn lp_shell(f: &PeriodicField, j: u32) -> PeriodicField {
    lp_shell_s(&Spectrum::forward(f), j).inverse()
}

pub fn antidiv(f: &PeriodicField) -> Result<PeriodicField> {
    Ok(antidiv_s(&Spectrum::forward(f))?.inverse())
}

pub fn mollify_space(f: &PeriodicField, ell: f64, order: u32) -> Result<PeriodicField> {
    Ok(mollify_space_s(&Spectrum::forward(f), ell, order)?.inverse())
}

/// Pointwise product of two scalar fields, optionally 2/3-rule dealiased.
pub fn product(a: &PeriodicField, b: &PeriodicField, dealias: bool) -> Result<PeriodicField> {
    if a.rank() != Rank::Scalar || b.rank() != Rank::Scalar || a.grid() != b.grid() {
        return Err(Error::Shape("product expects two scalar fields on one grid".into()));
    }
    let (a, b) = if dealias {
        (
            dealias_s(&Spectrum::forward(a)).inverse(),
            dealias_s(&Spectrum::forward(b)).inverse(),
        )
    } else {
        (a.clone(), b.clone())
    };
    let data = a.comp(0).iter().zip(b.comp(0)).map(|(x, y)| x * y).collect();
    PeriodicField::from_components(a.grid(), Rank::Scalar, vec![data])
}

/// Symmetrised outer product (u⊗v + v⊗u)/2 of two vector fields.
pub fn sym_outer(u: &PeriodicField, v: &PeriodicField, dealias: bool) -> Result<PeriodicField> {
    if u.rank() != Rank::Vector || v.rank() != Rank::Vector || u.grid() != v.grid() {
        return Err(Error::Shape("sym_outer expects two vector fields on one grid".into()));
    }
    let (u, v) = if dealias {
        (
            dealias_s(&Spectrum::forward(u)).inverse(),
            dealias_s(&Spectrum::forward(v)).inverse(),
        )
    } else {
        (u.clone(), v.clone())
    };
    let mut out = PeriodicField::zeros(u.grid(), Rank::SymTensor);
    for i in 0..3 {
        for j in i..3 {
            let c = sym(i, j);
            let (ui, uj, vi, vj) = (u.comp(i), u.comp(j), v.comp(i), v.comp(j));
            let dst = out.comp_mut(c);
            for idx in 0..dst.len() {
                dst[idx] = 0.5 * (ui[idx] * vj[idx] + uj[idx] * vi[idx]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize) -> Grid3 {
        Grid3::new(n).unwrap()
    }

    #[test]
    fn gradient_of_trig_monomial() {
        let grid = g(16);
        let f = PeriodicField::scalar_from_fn(grid, |x| (2.0 * x[0]).sin() * x[1].cos());
        let df = grad(&f).unwrap();
        let expected = PeriodicField::from_fn(grid, Rank::Vector, |x, o| {
            o[0] = 2.0 * (2.0 * x[0]).cos() * x[1].cos();
            o[1] = -(2.0 * x[0]).sin() * x[1].sin();
            o[2] = 0.0;
        });
        assert!(df.sub(&expected).unwrap().linf_norm() < 1e-12);
    }

    #[test]
    fn inverse_laplacian_inverts_on_mean_free() {
        let grid = g(16);
        let f = PeriodicField::scalar_from_fn(grid, |x| (x[0] + 2.0 * x[2]).cos() + 0.5);
        let back = laplacian(&inv_laplacian(&f));
        let mf = proj_nonzero(&f);
        assert!(back.sub(&mf).unwrap().linf_norm() < 1e-12);
    }

    #[test]
    fn leray_of_gradient_vanishes() {
        let grid = g(16);
        let phi = PeriodicField::scalar_from_fn(grid, |x| (x[0] - x[1]).sin() * (3.0 * x[2]).cos());
        let v = grad(&phi).unwrap();
        assert!(leray(&v).unwrap().linf_norm() < 1e-12);
    }

    #[test]
    fn kernel_transform_is_one_at_zero_and_decays() {
        let grid = g(16);
        let t = kernel_table(grid, 0.5, 2);
        assert!((t.values[0] - 1.0).abs() < 1e-14);
        assert!(t.values[100].abs() < t.values[1]);
    }

    #[test]
    fn shells_partition_the_spectrum() {
        let grid = g(16);
        let f = PeriodicField::scalar_from_fn(grid, |x| {
            (x[0]).sin() + (5.0 * x[1]).cos() * (3.0 * x[2]).sin() + 0.25
        });
        let mut acc = PeriodicField::zeros(grid, Rank::Scalar);
        for j in 0..shell_count(grid) {
            acc.axpy(1.0, &lp_shell(&f, j)).unwrap();
        }
        let mf = proj_nonzero(&f);
        assert!(acc.sub(&mf).unwrap().linf_norm() < 1e-12);
    }
}
