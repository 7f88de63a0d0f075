//! Gauss-Legendre rules and composite integration on intervals.

use std::f64::consts::PI;

/// Nodes and weights of the m-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = m as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

/// Composite Gauss-Legendre rule with `panels` equal panels of `m` points on [a, b].
pub struct Composite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Composite {
    pub fn new(a: f64, b: f64, panels: usize, m: usize) -> Self {
        let (x, w) = gauss_legendre(m);
        let h = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * m);
        let mut weights = Vec::with_capacity(panels * m);
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(lo + 0.5 * h * (xi + 1.0));
                weights.push(0.5 * h * wi);
            }
        }
        Self { nodes, weights }
    }

    /// Panels split at the given breakpoints (which must lie in [a, b]).
    pub fn with_breaks(a: f64, b: f64, breaks: &[f64], panels_per_piece: usize, m: usize) -> Self {
        let mut cuts = vec![a];
        let mut inner: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|&t| t > a && t < b)
            .collect();
        inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.extend(inner);
        cuts.push(b);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for win in cuts.windows(2) {
            if win[1] - win[0] <= 0.0 {
                continue;
            }
            let piece = Composite::new(win[0], win[1], panels_per_piece, m);
            nodes.extend(piece.nodes);
            weights.extend(piece.weights);
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Roots of `f` on [a, b] located by sign changes on a sample mesh and refined by bisection.
pub fn sign_change_roots<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, samples: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let h = (b - a) / samples as f64;
    let mut x0 = a;
    let mut f0 = f(x0);
    for i in 1..=samples {
        let x1 = a + i as f64 * h;
        let f1 = f(x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0 * f1 < 0.0 {
            let (mut lo, mut hi, mut flo) = (x0, x1, f0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm * flo <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x0 = x1;
        f0 = f1;
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn composite_integrates_sine() {
        let q = Composite::new(0.0, PI, 8, 10);
        assert!((q.integrate(f64::sin) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn finds_roots() {
        let r = sign_change_roots(|x| (x - 0.3) * (x - 0.7), 0.0, 1.0, 100);
        assert_eq!(r.len(), 2);
        assert!((r[0] - 0.3).abs() < 1e-12 && (r[1] - 0.7).abs() < 1e-12);
    }
}
