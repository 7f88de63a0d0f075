//! Uniform grids on the 3-torus of side 2π and sampled periodic fields.

use crate::error::{Error, Result};
use std::f64::consts::PI;
use std::io::{Read, Write};

pub const BOX_LENGTH: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid3 {
    n: usize,
}

impl Grid3 {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::Invalid(format!(
                "n_per_axis must be even and at least 8, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        BOX_LENGTH / self.n as f64
    }

    /// Volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(3)
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n;
        (idx % n, (idx / n) % n, idx / (n * n))
    }

    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.unindex(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Signed wavenumber of FFT index `i`; the Nyquist index maps to -n/2.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    #[inline]
    pub fn is_nyquist(&self, i: usize) -> bool {
        i == self.n / 2
    }
}

/// Tensor rank of a field and its component layout.
///
/// Symmetric tensors store the upper triangle row by row: xx, xy, xz, yy, yz, zz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rank {
    Scalar,
    Vector,
    SymTensor,
    Tensor,
}

impl Rank {
    pub fn components(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 3,
            Rank::SymTensor => 6,
            Rank::Tensor => 9,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Rank::Scalar => 0,
            Rank::Vector => 1,
            Rank::SymTensor => 2,
            Rank::Tensor => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => Rank::Scalar,
            1 => Rank::Vector,
            2 => Rank::SymTensor,
            3 => Rank::Tensor,
            _ => return Err(Error::Format(format!("unknown rank code {code}"))),
        })
    }

    /// Weight of each component in the pointwise Euclidean/Frobenius norm.
    pub fn weight(self, c: usize) -> f64 {
        match self {
            Rank::SymTensor if matches!(c, 1 | 2 | 4) => 2.0,
            _ => 1.0,
        }
    }
}

/// Component index of entry (i, j) of a symmetric tensor.
#[inline]
pub const fn sym(i: usize, j: usize) -> usize {
    const T: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    T[i][j]
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicField {
    grid: Grid3,
    rank: Rank,
    data: Vec<Vec<f64>>,
}

impl PeriodicField {
    pub fn zeros(grid: Grid3, rank: Rank) -> Self {
        let data = vec![vec![0.0; grid.len()]; rank.components()];
        Self { grid, rank, data }
    }

    pub fn from_components(grid: Grid3, rank: Rank, data: Vec<Vec<f64>>) -> Result<Self> {
        if data.len() != rank.components() || data.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::Shape(format!(
                "{:?} field on {}^3 needs {} components of {} samples",
                rank,
                grid.n(),
                rank.components(),
                grid.len()
            )));
        }
        Ok(Self { grid, rank, data })
    }

    /// Samples `f(x)` at every grid point.
    pub fn from_fn<F>(grid: Grid3, rank: Rank, f: F) -> Self
    where
        F: Fn([f64; 3], &mut [f64]),
    {
        let nc = rank.components();
        let mut out = Self::zeros(grid, rank);
        let mut buf = vec![0.0; nc];
        for idx in 0..grid.len() {
            f(grid.point(idx), &mut buf);
            for c in 0..nc {
                out.data[c][idx] = buf[c];
            }
        }
        out
    }

    /// Parallel variant of `from_fn`.
    pub fn par_from_fn<F>(grid: Grid3, rank: Rank, f: F) -> Self
    where
        F: Fn([f64; 3], &mut [f64]) + Sync,
    {
        use rayon::prelude::*;
        let nc = rank.components();
        let mut inter = vec![0.0; grid.len() * nc];
        crate::fft::pool().install(|| {
            inter
                .par_chunks_mut(nc)
                .enumerate()
                .for_each(|(idx, o)| f(grid.point(idx), o))
        });
        let mut out = Self::zeros(grid, rank);
        for c in 0..nc {
            let dst = &mut out.data[c];
            for (idx, v) in dst.iter_mut().enumerate() {
                *v = inter[idx * nc + c];
            }
        }
        out
    }

    pub fn scalar_from_fn<F: Fn([f64; 3]) -> f64>(grid: Grid3, f: F) -> Self {
        Self::from_fn(grid, Rank::Scalar, |x, out| out[0] = f(x))
    }

    pub fn grid(&self) -> Grid3 {
        self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn ncomp(&self) -> usize {
        self.data.len()
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.data
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.rank != other.rank {
            return Err(Error::Shape(format!(
                "{:?} on {}^3 vs {:?} on {}^3",
                self.rank,
                self.grid.n(),
                other.rank,
                other.grid.n()
            )));
        }
        Ok(())
    }

    /// self += s * other
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.data {
            for x in c.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|c| c.iter().all(|&x| x == 0.0))
    }

    /// Torus average of component `c`.
    pub fn mean(&self, c: usize) -> f64 {
        self.data[c].iter().sum::<f64>() / self.grid.len() as f64
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.ncomp()).map(|c| self.mean(c)).collect()
    }

    /// Pointwise squared Euclidean (or Frobenius) magnitude.
    pub fn magnitude_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (c, comp) in self.data.iter().enumerate() {
            let w = self.rank.weight(c);
            for (o, x) in out.iter_mut().zip(comp) {
                *o += w * x * x;
            }
        }
        out
    }

    /// Integral of the squared magnitude over the torus.
    pub fn integral_sq(&self) -> f64 {
        self.magnitude_sq().iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.integral_sq().sqrt()
    }

    /// L^p norm of the pointwise magnitude with respect to Lebesgue measure on the torus.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.linf_norm();
        }
        let s: f64 = self.magnitude_sq().iter().map(|m| m.powf(0.5 * p)).sum();
        (s * self.grid.cell_volume()).powf(1.0 / p)
    }

    pub fn linf_norm(&self) -> f64 {
        self.magnitude_sq().iter().fold(0.0f64, |m, &x| m.max(x)).sqrt()
    }

    /// L² inner product summed over components with the norm weights.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        let mut s = 0.0;
        for (c, (a, b)) in self.data.iter().zip(&other.data).enumerate() {
            let w = self.rank.weight(c);
            s += w * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        Ok(s * self.grid.cell_volume())
    }

    /// Trace of a symmetric tensor field.
    pub fn trace(&self) -> Result<Self> {
        if self.rank != Rank::SymTensor {
            return Err(Error::Shape("trace needs a symmetric tensor".into()));
        }
        let mut t = Self::zeros(self.grid, Rank::Scalar);
        for idx in 0..self.grid.len() {
            t.data[0][idx] = self.data[0][idx] + self.data[3][idx] + self.data[5][idx];
        }
        Ok(t)
    }

    /// Writes the PF1 binary dump.
    pub fn write_pf1<W: Write>(&self, mut w: W) -> Result<()> {
        let nc = self.ncomp();
        let mut header = Vec::with_capacity(24);
        header.extend_from_slice(b"PF1\0");
        header.extend_from_slice(&self.rank.code().to_le_bytes());
        header.extend_from_slice(&(self.grid.n() as u32).to_le_bytes());
        header.extend_from_slice(&(nc as u32).to_le_bytes());
        header.extend_from_slice(&BOX_LENGTH.to_le_bytes());
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(self.grid.len() * nc * 8);
        for idx in 0..self.grid.len() {
            for c in 0..nc {
                body.extend_from_slice(&self.data[c][idx].to_le_bytes());
            }
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_pf1<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header)?;
        if &header[0..4] != b"PF1\0" {
            return Err(Error::Format("missing PF1 magic".into()));
        }
        let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let rank = Rank::from_code(word(4))?;
        let grid = Grid3::new(word(8) as usize)?;
        let nc = word(12) as usize;
        if nc != rank.components() {
            return Err(Error::Format(format!(
                "rank {:?} declares {nc} components",
                rank
            )));
        }
        let length = f64::from_le_bytes(header[16..24].try_into().unwrap());
        if (length - BOX_LENGTH).abs() > 1e-12 {
            return Err(Error::Format(format!("unsupported box length {length}")));
        }
        let mut body = vec![0u8; grid.len() * nc * 8];
        r.read_exact(&mut body)?;
        let mut data = vec![vec![0.0; grid.len()]; nc];
        for (s, chunk) in body.chunks_exact(8).enumerate() {
            data[s % nc][s / nc] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(Self { grid, rank, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pf1_round_trip() {
        let g = Grid3::new(8).unwrap();
        let f = PeriodicField::from_fn(g, Rank::Vector, |x, o| {
            o[0] = x[0].sin();
            o[1] = x[1] * x[2];
            o[2] = -1.5;
        });
        let mut buf = Vec::new();
        f.write_pf1(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 512 * 3 * 8);
        assert_eq!(&buf[..4], b"PF1\0");
        let back = PeriodicField::read_pf1(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn pf1_is_component_interleaved() {
        let g = Grid3::new(8).unwrap();
        let f = PeriodicField::from_fn(g, Rank::Vector, |_, o| {
            o[0] = 1.0;
            o[1] = 2.0;
            o[2] = 3.0;
        });
        let mut buf = Vec::new();
        f.write_pf1(&mut buf).unwrap();
        let first: Vec<f64> = buf[24..48]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(first, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sym_tensor_norm_counts_off_diagonals_twice() {
        let g = Grid3::new(8).unwrap();
        let f = PeriodicField::from_fn(g, Rank::SymTensor, |_, o| {
            o.fill(0.0);
            o[sym(0, 1)] = 1.0;
        });
        let vol = BOX_LENGTH.powi(3);
        assert!((f.integral_sq() - 2.0 * vol).abs() < 1e-9);
    }

    #[test]
    fn rejects_odd_grid() {
        assert!(Grid3::new(7).is_err());
        assert!(Grid3::new(6).is_err());
    }
}
