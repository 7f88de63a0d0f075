//! Three-dimensional complex FFT assembled from one-dimensional rustfft passes.

use crate::grid::Grid3;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Worker pool sized by `JETFORGE_THREADS` (defaults to the available parallelism).
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let default = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        let threads = std::env::var("JETFORGE_THREADS")
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&t| t > 0)
            .unwrap_or(default);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

pub struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    /// Shared plan for grids of this size.
    pub fn for_grid(grid: Grid3) -> Arc<Fft3> {
        static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Fft3>>>> = OnceLock::new();
        let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = plans.lock().unwrap();
        map.entry(grid.n())
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft3 {
                    n: grid.n(),
                    forward: planner.plan_fft_forward(grid.n()),
                    inverse: planner.plan_fft_inverse(grid.n()),
                })
            })
            .clone()
    }

    /// Unnormalised forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform in place, scaled by 1/n³.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / (self.n * self.n * self.n) as f64;
        pool().install(|| data.par_iter_mut().for_each(|x| *x *= s));
    }

    fn lines(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        data.par_chunks_mut(n * n).for_each_init(
            || vec![Complex64::default(); plan.get_inplace_scratch_len()],
            |scratch, plane| plan.process_with_scratch(plane, scratch),
        );
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let n2 = n * n;
        assert_eq!(data.len(), n2 * n);
        pool().install(|| {
            self.lines(data, plan);

            // y pass: transpose each z-plane so y is contiguous
            data.par_chunks_mut(n2).for_each_init(
                || {
                    (
                        vec![Complex64::default(); n2],
                        vec![Complex64::default(); plan.get_inplace_scratch_len()],
                    )
                },
                |(tmp, scratch), plane| {
                    for j in 0..n {
                        for i in 0..n {
                            tmp[j + n * i] = plane[i + n * j];
                        }
                    }
                    plan.process_with_scratch(tmp, scratch);
                    for j in 0..n {
                        for i in 0..n {
                            plane[i + n * j] = tmp[j + n * i];
                        }
                    }
                },
            );

            // z pass: gather into [j][i][k] layout
            let mut tmp = vec![Complex64::default(); data.len()];
            {
                let src = &*data;
                tmp.par_chunks_mut(n2).enumerate().for_each(|(j, block)| {
                    for k in 0..n {
                        for i in 0..n {
                            block[k + n * i] = src[i + n * (j + n * k)];
                        }
                    }
                });
            }
            self.lines(&mut tmp, plan);
            let src = &tmp;
            data.par_chunks_mut(n2).enumerate().for_each(|(k, plane)| {
                for j in 0..n {
                    for i in 0..n {
                        plane[i + n * j] = src[k + n * (i + n * j)];
                    }
                }
            });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn direct_dft(n: usize, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); x.len()];
        for k3 in 0..n {
            for k2 in 0..n {
                for k1 in 0..n {
                    let mut s = Complex64::default();
                    for j3 in 0..n {
                        for j2 in 0..n {
                            for j1 in 0..n {
                                let ph = -2.0 * PI * ((k1 * j1 + k2 * j2 + k3 * j3) as f64)
                                    / n as f64;
                                s += x[j1 + n * (j2 + n * j3)] * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    out[k1 + n * (k2 + n * k3)] = s;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_summation_on_8_cubed_grid() {
        let n = 8;
        let grid = Grid3::new(n).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<Complex64> = (0..n * n * n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let expected = direct_dft(n, &x);
        let mut y = x.clone();
        let plan = Fft3::for_grid(grid);
        plan.forward(&mut y);
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-10);
        }
        plan.inverse(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
