//! Uniform time grids, time series of fields with pluggable frame storage, finite
//! differences and time mollification with reflective extension.

use crate::error::{Error, Result};
use crate::grid::{Grid3, PeriodicField, Rank};
use crate::quadrature::gauss_legendre;
use std::fmt::Debug;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub n_t: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, n_t: usize) -> Result<Self> {
        if n_t < 2 || !(t1 > t0) {
            return Err(Error::Invalid(format!(
                "time grid needs t1 > t0 and at least two nodes, got [{t0}, {t1}] with {n_t}"
            )));
        }
        Ok(Self { t0, t1, n_t })
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / (self.n_t - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_t).map(|i| self.node(i)).collect()
    }

    /// Maps a node index of the extension to [2t0 - t1, 2t1 - t0] back onto [0, n_t).
    pub fn reflect_index(&self, i: isize) -> usize {
        let last = (self.n_t - 1) as isize;
        let mut j = i;
        loop {
            if j < 0 {
                j = -j;
            } else if j > last {
                j = 2 * last - j;
            } else {
                return j as usize;
            }
        }
    }

    /// Reflects a time into [t0, t1].
    pub fn reflect_time(&self, t: f64) -> f64 {
        let len = self.t1 - self.t0;
        let mut s = (t - self.t0).rem_euclid(2.0 * len);
        if s > len {
            s = 2.0 * len - s;
        }
        self.t0 + s
    }
}

/// One stored time frame.
#[derive(Clone, Debug)]
pub enum Frame {
    /// Identically zero.
    Zero,
    Memory(Arc<PeriodicField>),
    Disk {
        path: PathBuf,
        _dir: Arc<tempfile::TempDir>,
    },
}

impl Frame {
    pub fn load(&self, grid: Grid3, rank: Rank) -> Result<Arc<PeriodicField>> {
        match self {
            Frame::Zero => Ok(Arc::new(PeriodicField::zeros(grid, rank))),
            Frame::Memory(f) => Ok(f.clone()),
            Frame::Disk { path, .. } => {
                let file = std::fs::File::open(path)?;
                let f = PeriodicField::read_pf1(std::io::BufReader::new(file))?;
                Ok(Arc::new(f))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Frame::Zero)
    }
}

/// Where the frames of a time series live.
pub trait FrameStore: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn store(&self, f: PeriodicField) -> Result<Frame>;
}

#[derive(Debug, Default)]
pub struct MemoryStore;

impl FrameStore for MemoryStore {
    fn name(&self) -> &'static str {
        "memory"
    }

    fn store(&self, f: PeriodicField) -> Result<Frame> {
        if f.is_zero() {
            return Ok(Frame::Zero);
        }
        Ok(Frame::Memory(Arc::new(f)))
    }
}

/// Frames written as PF1 files into a private temporary directory.
#[derive(Debug)]
pub struct DiskStore {
    dir: Arc<tempfile::TempDir>,
    counter: std::sync::atomic::AtomicUsize,
}

impl DiskStore {
    pub fn new() -> Result<Self> {
        Ok(Self {
            dir: Arc::new(tempfile::Builder::new().prefix("jetforge-frames").tempdir()?),
            counter: Default::default(),
        })
    }
}

impl FrameStore for DiskStore {
    fn name(&self) -> &'static str {
        "disk"
    }

    fn store(&self, f: PeriodicField) -> Result<Frame> {
        if f.is_zero() {
            return Ok(Frame::Zero);
        }
        let id = self.counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let path = self.dir.path().join(format!("frame{id:06}.pf1"));
        let file = std::fs::File::create(&path)?;
        let mut w = std::io::BufWriter::new(file);
        f.write_pf1(&mut w)?;
        use std::io::Write;
        w.flush()?;
        Ok(Frame::Disk {
            path,
            _dir: self.dir.clone(),
        })
    }
}

pub fn store_names() -> Vec<&'static str> {
    vec!["memory", "disk", "auto"]
}

/// Bytes above which "auto" switches to the disk store.
pub const AUTO_MEMORY_BUDGET: usize = 1 << 30;

/// Frame store by name; "auto" picks memory unless `expected_bytes` exceeds the budget.
pub fn make_store(name: &str, expected_bytes: usize) -> Result<Arc<dyn FrameStore>> {
    match name {
        "memory" => Ok(Arc::new(MemoryStore)),
        "disk" => Ok(Arc::new(DiskStore::new()?)),
        "auto" if expected_bytes > AUTO_MEMORY_BUDGET => Ok(Arc::new(DiskStore::new()?)),
        "auto" => Ok(Arc::new(MemoryStore)),
        _ => Err(Error::Unknown {
            kind: "frame store",
            name: name.into(),
            available: store_names().join(", "),
        }),
    }
}

/// A field per node of a uniform time grid.
#[derive(Clone, Debug)]
pub struct TimeField {
    pub time: TimeGrid,
    pub grid: Grid3,
    pub rank: Rank,
    frames: Vec<Frame>,
    /// Set on reflective extensions.
    pub extended: bool,
}

impl TimeField {
    pub fn zeros(time: TimeGrid, grid: Grid3, rank: Rank) -> Self {
        Self {
            time,
            grid,
            rank,
            frames: vec![Frame::Zero; time.n_t],
            extended: false,
        }
    }

    pub fn from_frames(time: TimeGrid, grid: Grid3, rank: Rank, frames: Vec<Frame>) -> Result<Self> {
        if frames.len() != time.n_t {
            return Err(Error::Shape(format!(
                "{} frames for a time grid of {} nodes",
                frames.len(),
                time.n_t
            )));
        }
        Ok(Self {
            time,
            grid,
            rank,
            frames,
            extended: false,
        })
    }

    /// Builds the series by evaluating `f` at every node.
    pub fn from_fn<F>(time: TimeGrid, grid: Grid3, rank: Rank, store: &dyn FrameStore, f: F) -> Result<Self>
    where
        F: Fn(usize, f64) -> Result<PeriodicField>,
    {
        let mut frames = Vec::with_capacity(time.n_t);
        for i in 0..time.n_t {
            let field = f(i, time.node(i))?;
            if field.grid() != grid || field.rank() != rank {
                return Err(Error::Shape("frame grid or rank differs from the series".into()));
            }
            frames.push(store.store(field)?);
        }
        Self::from_frames(time, grid, rank, frames)
    }

    pub fn n_t(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, i: usize) -> Result<Arc<PeriodicField>> {
        self.frames[i].load(self.grid, self.rank)
    }

    pub fn frame_is_zero(&self, i: usize) -> bool {
        self.frames[i].is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.frames.iter().all(Frame::is_zero)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// Reflective extension to [2t0 - t1, 2t1 - t0] sharing the stored frames.
    pub fn extend_reflective(&self) -> Result<Self> {
        if self.extended {
            return Err(Error::Invalid("time field is already extended".into()));
        }
        let n = self.time.n_t as isize;
        let len = self.time.t1 - self.time.t0;
        let time = TimeGrid::new(self.time.t0 - len, self.time.t1 + len, (3 * n - 2) as usize)?;
        let frames = (-(n - 1)..=(2 * (n - 1)))
            .map(|i| self.frames[self.time.reflect_index(i)].clone())
            .collect();
        Ok(Self {
            time,
            grid: self.grid,
            rank: self.rank,
            frames,
            extended: true,
        })
    }

    /// Applies a per-frame map into a new series.
    pub fn map<F>(&self, store: &dyn FrameStore, rank: Rank, f: F) -> Result<Self>
    where
        F: Fn(usize, &PeriodicField) -> Result<PeriodicField>,
    {
        let mut frames = Vec::with_capacity(self.n_t());
        for i in 0..self.n_t() {
            let src = self.frame(i)?;
            frames.push(store.store(f(i, &src)?)?);
        }
        Ok(Self {
            time: self.time,
            grid: self.grid,
            rank,
            frames,
            extended: self.extended,
        })
    }

    /// Σ_m w_m frame_m.
    pub fn combine(&self, weights: &[(usize, f64)]) -> Result<PeriodicField> {
        let mut out = PeriodicField::zeros(self.grid, self.rank);
        for &(m, w) in weights {
            if w != 0.0 && !self.frames[m].is_zero() {
                out.axpy(w, &*self.frame(m)?)?;
            }
        }
        Ok(out)
    }

    /// Fourth-order finite-difference time derivative at node i.
    pub fn dt_fd(&self, i: usize) -> Result<PeriodicField> {
        let w = fd_weights(self.n_t(), i, self.time.dt())?;
        self.combine(&w)
    }
}

/// Weights (node, coefficient) of the 4th-order first-derivative stencil at node i:
/// central in the interior, 5-point one-sided near the ends.
pub fn fd_weights(n: usize, i: usize, dt: f64) -> Result<Vec<(usize, f64)>> {
    if n < 5 {
        return Err(Error::Invalid(format!(
            "fourth-order time differences need at least 5 nodes, got {n}"
        )));
    }
    let (start, c): (usize, [f64; 5]) = if i >= 2 && i + 2 < n {
        (i - 2, [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0])
    } else if i == 0 {
        (0, [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -1.0 / 4.0])
    } else if i == 1 {
        (0, [-1.0 / 4.0, -5.0 / 6.0, 3.0 / 2.0, -1.0 / 2.0, 1.0 / 12.0])
    } else if i == n - 2 {
        (n - 5, [-1.0 / 12.0, 1.0 / 2.0, -3.0 / 2.0, 5.0 / 6.0, 1.0 / 4.0])
    } else {
        (n - 5, [1.0 / 4.0, -4.0 / 3.0, 3.0, -4.0, 25.0 / 12.0])
    };
    Ok(c.iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(k, w)| (start + k, w / dt))
        .collect())
}

/// Mollifier with kernel c(1 - |x/ℓ|²)^order on the ball of radius ℓ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MollifierSpec {
    pub ell: f64,
    pub order: u32,
}

impl MollifierSpec {
    pub fn new(ell: f64, order: u32) -> Result<Self> {
        if !(ell > 0.0) || order < 2 {
            return Err(Error::Invalid(format!(
                "mollifier needs ℓ > 0 and order ≥ 2, got ℓ = {ell}, order = {order}"
            )));
        }
        Ok(Self { ell, order })
    }

    /// One-dimensional kernel ξ_ℓ(τ).
    pub fn kernel_1d(&self, tau: f64) -> f64 {
        let s = tau / self.ell;
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let c = kernel_1d_norm(self.order);
        c * (1.0 - s * s).powi(self.order as i32) / self.ell
    }
}

fn kernel_1d_norm(order: u32) -> f64 {
    let (x, w) = gauss_legendre(32);
    let z: f64 = x
        .iter()
        .zip(&w)
        .map(|(x, w)| w * (1.0 - x * x).powi(order as i32))
        .sum();
    1.0 / z
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MollifyDomain {
    Space,
    Time,
    Both,
}

impl MollifyDomain {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "space" => Ok(Self::Space),
            "time" => Ok(Self::Time),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("mollify domain must be space, time or both, got '{s}'"))),
        }
    }
}

/// Linear map f ↦ (f extended reflectively) * ξ_ℓ evaluated at the nodes, with f between
/// nodes given by cubic Lagrange interpolation. Row n lists (source node, weight).
#[derive(Clone, Debug)]
pub struct TimeMollifier {
    pub spec: MollifierSpec,
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Set when ℓ < 2 dt.
    pub under_resolved: bool,
}

fn lagrange_cubic(time: &TimeGrid, t: f64) -> [(usize, f64); 4] {
    let n = time.n_t;
    let s = (t - time.t0) / time.dt();
    let base = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let mut out = [(0usize, 0.0); 4];
    for a in 0..4 {
        let mut l = 1.0;
        for b in 0..4 {
            if a != b {
                l *= (s - (base + b) as f64) / (a as f64 - b as f64);
            }
        }
        out[a] = (base + a, l);
    }
    out
}

impl TimeMollifier {
    pub fn new(time: TimeGrid, spec: MollifierSpec) -> Result<Self> {
        if time.n_t < 4 {
            return Err(Error::Invalid("time mollification needs at least 4 nodes".into()));
        }
        let dt = time.dt();
        let under_resolved = spec.ell < 2.0 * dt;
        if under_resolved {
            log::warn!("time mollification scale ℓ = {} is below 2 dt = {}", spec.ell, 2.0 * dt);
        }
        if spec.ell > time.t1 - time.t0 {
            return Err(Error::Invalid(format!(
                "time mollification scale ℓ = {} exceeds the time interval",
                spec.ell
            )));
        }
        // panels aligned with node spacing so each panel sees one cubic piece
        let panels = ((2.0 * spec.ell / dt).ceil() as usize + 1) * 2;
        let (gx, gw) = gauss_legendre(8);
        let h = 2.0 * spec.ell / panels as f64;
        let mut taus = Vec::new();
        for p in 0..panels {
            let lo = -spec.ell + p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                let tau = lo + 0.5 * h * (x + 1.0);
                taus.push((tau, 0.5 * h * w * spec.kernel_1d(tau)));
            }
        }
        let total: f64 = taus.iter().map(|(_, w)| w).sum();
        for t in &mut taus {
            t.1 /= total;
        }
        let mut rows = Vec::with_capacity(time.n_t);
        for n in 0..time.n_t {
            let tn = time.node(n);
            let mut acc = vec![0.0; time.n_t];
            for &(tau, w) in &taus {
                let t = time.reflect_time(tn - tau);
                for (m, l) in lagrange_cubic(&time, t) {
                    acc[m] += w * l;
                }
            }
            rows.push(
                acc.into_iter()
                    .enumerate()
                    .filter(|(_, w)| *w != 0.0)
                    .collect(),
            );
        }
        Ok(Self {
            spec,
            rows,
            under_resolved,
        })
    }

    /// Mollifies a scalar time series.
    pub fn apply_scalar(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(m, w)| w * f[m]).sum())
            .collect()
    }

    pub fn apply_frame(&self, f: &TimeField, n: usize) -> Result<PeriodicField> {
        f.combine(&self.rows[n])
    }

    pub fn apply(&self, f: &TimeField, store: &dyn FrameStore) -> Result<TimeField> {
        let mut frames = Vec::with_capacity(f.n_t());
        for n in 0..f.n_t() {
            if self.rows[n].iter().all(|&(m, _)| f.frame_is_zero(m)) {
                frames.push(Frame::Zero);
            } else {
                frames.push(store.store(self.apply_frame(f, n)?)?);
            }
        }
        TimeField::from_frames(f.time, f.grid, f.rank, frames)
    }
}

/// Mollifies a time series in space, time or both.
pub fn mollify(
    f: &TimeField,
    spec: MollifierSpec,
    domain: MollifyDomain,
    store: &dyn FrameStore,
) -> Result<TimeField> {
    let dx = f.grid.dx();
    if spec.ell < 2.0 * dx && domain != MollifyDomain::Time {
        log::warn!("space mollification scale ℓ = {} is below 2 dx = {}", spec.ell, 2.0 * dx);
    }
    let timed = match domain {
        MollifyDomain::Space => f.clone(),
        _ => TimeMollifier::new(f.time, spec)?.apply(f, store)?,
    };
    match domain {
        MollifyDomain::Time => Ok(timed),
        _ => timed.map(store, f.rank, |_, fr| {
            if fr.is_zero() {
                Ok(fr.clone())
            } else {
                crate::ops::mollify_space(fr, spec.ell, spec.order)
            }
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_weights_differentiate_quartics_exactly() {
        let tg = TimeGrid::new(0.0, 1.0, 9).unwrap();
        let f = |t: f64| 1.0 + t - 2.0 * t * t + t.powi(3) - 0.5 * t.powi(4);
        let df = |t: f64| 1.0 - 4.0 * t + 3.0 * t * t - 2.0 * t.powi(3);
        for i in 0..9 {
            let w = fd_weights(9, i, tg.dt()).unwrap();
            let d: f64 = w.iter().map(|&(m, c)| c * f(tg.node(m))).sum();
            assert!((d - df(tg.node(i))).abs() < 1e-11, "node {i}");
        }
    }

    #[test]
    fn reflection_indices() {
        let tg = TimeGrid::new(0.0, 1.0, 5).unwrap();
        assert_eq!(tg.reflect_index(-3), 3);
        assert_eq!(tg.reflect_index(6), 2);
        assert_eq!(tg.reflect_index(8), 0);
        assert!((tg.reflect_time(-0.25) - 0.25).abs() < 1e-15);
        assert!((tg.reflect_time(1.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn time_mollifier_preserves_constants_and_converges() {
        let tg = TimeGrid::new(0.0, 3.0, 301).unwrap();
        let ones = vec![1.0; 301];
        let m = TimeMollifier::new(tg, MollifierSpec::new(0.2, 4).unwrap()).unwrap();
        for v in m.apply_scalar(&ones) {
            assert!((v - 1.0).abs() < 1e-13);
        }
        let f: Vec<f64> = tg.nodes().iter().map(|t| (2.0 * t).cos()).collect();
        let err = |ell: f64| {
            let m = TimeMollifier::new(tg, MollifierSpec::new(ell, 4).unwrap()).unwrap();
            let g = m.apply_scalar(&f);
            (100..200).map(|i| (g[i] - f[i]).abs()).fold(0.0, f64::max)
        };
        let rate = (err(0.4) / err(0.2)).log2();
        assert!((rate - 2.0).abs() < 0.05, "{rate}");
    }

    #[test]
    fn disk_store_round_trip() {
        let g = Grid3::new(8).unwrap();
        let st = DiskStore::new().unwrap();
        let f = PeriodicField::scalar_from_fn(g, |x| x[0].sin());
        let fr = st.store(f.clone()).unwrap();
        assert_eq!(*fr.load(g, Rank::Scalar).unwrap(), f);
        assert!(st.store(PeriodicField::zeros(g, Rank::Scalar)).unwrap().is_zero());
    }

    #[test]
    fn extension_mirrors_frames() {
        let tg = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let g = Grid3::new(8).unwrap();
        let f = TimeField::from_fn(tg, g, Rank::Scalar, &MemoryStore, |_, t| {
            Ok(PeriodicField::scalar_from_fn(g, |x| t + x[0]))
        })
        .unwrap();
        let e = f.extend_reflective().unwrap();
        assert_eq!(e.n_t(), 13);
        assert!((e.time.t0 + 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(*e.frame(4 - i).unwrap(), *e.frame(4 + i).unwrap());
            assert_eq!(*e.frame(8 + i).unwrap(), *e.frame(8 - i).unwrap());
        }
    }
}
