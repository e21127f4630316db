//! FFT plumbing for grid fields.
//!
//! Periodic grids transform their n - 1 unique points directly. Non-periodic
//! grids are padded with edge values (the constant extension beyond the box)
//! and then mirrored, so the transformed signal has no jump at the seam.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::SpaceGrid;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Extended grid on which Fourier multipliers are applied.
pub struct SpectralBox {
    grid: SpaceGrid,
    pad: usize,
    /// Extended length per axis.
    len: usize,
    /// Extended index -> original index, per axis (same for every axis).
    source: Vec<usize>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers of the extended grid, per axis index.
    pub wavenumbers: Vec<f64>,
}

impl SpectralBox {
    /// `reach` is the largest spatial distance information must travel outside
    /// the box (ignored on periodic grids).
    pub fn new(grid: &SpaceGrid, reach: f64) -> Self {
        let n = grid.n;
        let h = grid.spacing();
        let (pad, len, source) = if grid.periodic {
            (0, n - 1, (0..n - 1).collect::<Vec<_>>())
        } else {
            let mut pad = (reach / h).ceil() as usize + 2;
            while !is_smooth(2 * (n + 2 * pad - 1)) {
                pad += 1;
            }
            let padded = n + 2 * pad;
            let len = 2 * (padded - 1);
            let source = (0..len)
                .map(|j| {
                    let q = if j < padded { j } else { 2 * (padded - 1) - j };
                    q.saturating_sub(pad).min(n - 1)
                })
                .collect();
            (pad, len, source)
        };
        let (forward, inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(len), p.plan_fft_inverse(len))
        });
        let wavenumbers = (0..len)
            .map(|j| {
                let f = if j <= len / 2 {
                    j as f64
                } else {
                    j as f64 - len as f64
                };
                2.0 * std::f64::consts::PI * f / (len as f64 * h)
            })
            .collect();
        Self {
            grid: grid.clone(),
            pad,
            len,
            source,
            forward,
            inverse,
            wavenumbers,
        }
    }

    pub fn spectrum_len(&self) -> usize {
        self.len.pow(self.grid.dim as u32)
    }

    /// |k|² for every spectral index.
    pub fn k_squared(&self) -> Vec<f64> {
        let d = self.grid.dim;
        (0..self.spectrum_len())
            .map(|idx| {
                let mut rest = idx;
                let mut s = 0.0;
                for _ in 0..d {
                    let k = self.wavenumbers[rest % self.len];
                    s += k * k;
                    rest /= self.len;
                }
                s
            })
            .collect()
    }

    /// Component `axis` of the wavevector for every spectral index; the
    /// Nyquist mode is zeroed so odd derivatives stay real.
    pub fn k_axis(&self, axis: usize) -> Vec<f64> {
        let d = self.grid.dim;
        let stride = self.len.pow((d - 1 - axis) as u32);
        (0..self.spectrum_len())
            .map(|idx| {
                let j = (idx / stride) % self.len;
                if self.len % 2 == 0 && j == self.len / 2 {
                    0.0
                } else {
                    self.wavenumbers[j]
                }
            })
            .collect()
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let d = self.grid.dim;
        let n = self.grid.n;
        let m = self.len;
        let total = self.spectrum_len();
        let mut data = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rest = idx;
            let mut src = 0;
            let mut stride = 1;
            for _ in 0..d {
                src += self.source[rest % m] * stride;
                rest /= m;
                stride *= n;
            }
            data.push(Complex64::new(values[src], 0.0));
        }
        self.transform(&mut data, &self.forward);
        data
    }

    /// Inverse transform, restricted back to the original grid.
    pub fn inverse(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut data, &self.inverse);
        let d = self.grid.dim;
        let n = self.grid.n;
        let m = self.len;
        let scale = 1.0 / self.spectrum_len() as f64;
        (0..self.grid.len())
            .map(|idx| {
                let mut rest = idx;
                let mut ext = 0;
                let mut stride = 1;
                for _ in 0..d {
                    let i = rest % n;
                    let j = if self.grid.periodic { i % m } else { i + self.pad };
                    ext += j * stride;
                    rest /= n;
                    stride *= m;
                }
                data[ext].re * scale
            })
            .collect()
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let d = self.grid.dim;
        let m = self.len;
        // contiguous last axis in one batched call
        plan.process(data);
        if d == 1 {
            return;
        }
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        for axis in 0..d - 1 {
            let stride = m.pow((d - 1 - axis) as u32);
            let block = stride * m;
            for outer in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for j in 0..m {
                        line[j] = data[base + j * stride];
                    }
                    plan.process(&mut line);
                    for j in 0..m {
                        data[base + j * stride] = line[j];
                    }
                }
            }
        }
    }
}

fn is_smooth(mut n: usize) -> bool {
    for p in [2, 3, 5] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

impl SpectralBox {
    /// Spectral derivative of order 1 or 2 along `axis`. Only meaningful on
    /// periodic grids, where no padding is involved.
    pub fn differentiate(&self, values: &[f64], axis: usize, order: u32) -> Vec<f64> {
        let mut spec = self.forward(values);
        let k = if order % 2 == 1 {
            self.k_axis(axis)
        } else {
            let stride = self.len.pow((self.grid.dim - 1 - axis) as u32);
            (0..self.spectrum_len())
                .map(|idx| self.wavenumbers[(idx / stride) % self.len])
                .collect()
        };
        let i = Complex64::new(0.0, 1.0);
        for (s, &kk) in spec.iter_mut().zip(&k) {
            *s *= (i * kk).powu(order);
        }
        self.inverse(spec)
    }
}

/// Spectral derivative of order 1 or 2 along `axis` on a periodic grid.
pub fn periodic_derivative(grid: &SpaceGrid, values: &[f64], axis: usize, order: u32) -> Vec<f64> {
    SpectralBox::new(grid, 0.0).differentiate(values, axis, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_nonperiodic_2d() {
        let g = SpaceGrid::new(2, 17, 1.0, false).unwrap();
        let v = g.sample(|x| x[0] + 2.0 * x[1] * x[1]);
        let sb = SpectralBox::new(&g, 0.3);
        let back = sb.inverse(sb.forward(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_derivative_of_trig() {
        let l = std::f64::consts::PI;
        let g = SpaceGrid::new(2, 33, l, true).unwrap();
        let v = g.sample(|x| (2.0 * x[0]).sin() * x[1].cos());
        let d0 = periodic_derivative(&g, &v, 0, 1);
        let d11 = periodic_derivative(&g, &v, 1, 2);
        for idx in 0..g.len() {
            let x = g.point(idx);
            assert!((d0[idx] - 2.0 * (2.0 * x[0]).cos() * x[1].cos()).abs() < 1e-11);
            assert!((d11[idx] + v[idx]).abs() < 1e-11);
        }
    }
}
