//! The Gaussian heat kernel K(t, x) = (2πt)^(-d/2) exp(-|x|²/2t), convolution
//! with it on grids, and the Duhamel integral ∫_0^t K(t-s) * f(s) ds.
//!
//! Convolutions are applied as Fourier multipliers. The Duhamel integral is
//! advanced with an exponential integrator that integrates the semigroup
//! exactly against a source that is linear in time on each step, so no
//! quadrature node ever sits at the degenerate endpoint s = t.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, SpaceGrid, TimeGrid};
use crate::spectral::SpectralBox;

/// Gaussian kernel truncation radius in units of √t.
pub const TRUNCATION: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kernel {
    pub dim: usize,
}

impl Kernel {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        check_time(t)?;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Ok((2.0 * std::f64::consts::PI * t).powf(-(self.dim as f64) / 2.0) * (-r2 / (2.0 * t)).exp())
    }

    /// ∇K = -(x/t) K.
    pub fn grad(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.eval(t, x)?;
        Ok(x.iter().map(|xi| -xi / t * k).collect())
    }

    /// ∇²K = (x xᵀ/t² - I/t) K, row-major.
    pub fn hess(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.eval(t, x)?;
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 1.0 / t } else { 0.0 };
                h[i * d + j] = (x[i] * x[j] / (t * t) - delta) * k;
            }
        }
        Ok(h)
    }

    /// ∂_t K = (|x|²/2t² - d/2t) K.
    pub fn time_derivative(&self, t: f64, x: &[f64]) -> Result<f64> {
        let k = self.eval(t, x)?;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Ok((r2 / (2.0 * t * t) - self.dim as f64 / (2.0 * t)) * k)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("kernel time must be positive, got {t}")));
    }
    Ok(())
}

/// K(t) * f on the grid via the Fourier multiplier exp(-|k|² t/2).
pub fn convolve(grid: &SpaceGrid, values: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    let sb = SpectralBox::new(grid, TRUNCATION * t.sqrt());
    let mut spec = sb.forward(values);
    for (s, k2) in spec.iter_mut().zip(sb.k_squared()) {
        *s *= (-0.5 * k2 * t).exp();
    }
    Ok(sb.inverse(spec))
}

/// K(t) * f by direct summation over grid points within 8√t, with values
/// wrapped (periodic) or held constant beyond the box.
pub fn convolve_direct(grid: &SpaceGrid, values: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    let h = grid.spacing();
    if h > t.sqrt() {
        return Err(Error::GridTooCoarse { h, sqrt_t: t.sqrt() });
    }
    let d = grid.dim;
    let kernel = Kernel::new(d);
    let reach = (TRUNCATION * t.sqrt() / h).ceil() as i64;
    let width = (2 * reach + 1) as usize;
    let cutoff2 = (TRUNCATION * TRUNCATION * t) / (h * h);
    // offsets and weights, fixed order
    let mut stencil = Vec::new();
    for flat in 0..width.pow(d as u32) {
        let mut rest = flat;
        let mut off = vec![0i64; d];
        for a in (0..d).rev() {
            off[a] = (rest % width) as i64 - reach;
            rest /= width;
        }
        let r2: f64 = off.iter().map(|&o| (o * o) as f64).sum();
        if r2 > cutoff2 {
            continue;
        }
        let x: Vec<f64> = off.iter().map(|&o| o as f64 * h).collect();
        stencil.push((off, kernel.eval(t, &x)? * h.powi(d as i32)));
    }
    let n = grid.n as i64;
    let period = n - 1;
    let out = (0..grid.len())
        .map(|idx| {
            let base = grid.multi_index(idx);
            let mut acc = 0.0;
            for (off, w) in &stencil {
                let mut src = 0usize;
                for a in 0..d {
                    let mut j = base[a] as i64 + off[a];
                    j = if grid.periodic {
                        j.rem_euclid(period)
                    } else {
                        j.clamp(0, n - 1)
                    };
                    src += j as usize * grid.stride(a);
                }
                acc += w * values[src];
            }
            acc
        })
        .collect::<Vec<_>>();
    if grid.periodic {
        return Ok(fill_periodic_duplicates(grid, out));
    }
    Ok(out)
}

fn fill_periodic_duplicates(grid: &SpaceGrid, mut v: Vec<f64>) -> Vec<f64> {
    for idx in 0..grid.len() {
        let mi = grid.multi_index(idx);
        if mi.iter().any(|&i| i == grid.n - 1) {
            let src: usize = mi
                .iter()
                .enumerate()
                .map(|(a, &i)| (if i == grid.n - 1 { 0 } else { i }) * grid.stride(a))
                .sum();
            v[idx] = v[src];
        }
    }
    v
}

/// φ1(z) = (1 - e^-z)/z and ψ(z) = (1 - e^-z (1 + z))/z², with series near 0.
fn phi_functions(z: f64) -> (f64, f64) {
    if z < 1e-3 {
        let phi1 = 1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0;
        let psi = 0.5 - z / 3.0 + z * z / 8.0 - z * z * z / 30.0;
        (phi1, psi)
    } else {
        let e = (-z).exp();
        ((1.0 - e) / z, (1.0 - e * (1.0 + z)) / (z * z))
    }
}

/// One-step exponential integrator for ∂_t u = ½Δu - λu + F with F linear in
/// time over the step:
/// û⁺ = e^(-aΔt) û + Δt[ψ(aΔt) F̂₀ + (φ1(aΔt) - ψ(aΔt)) F̂₁], a = λ + |k|²/2.
pub struct Propagator {
    pub sbox: SpectralBox,
    pub dt: f64,
    pub lambda: f64,
    decay: Vec<f64>,
    w_old: Vec<f64>,
    w_new: Vec<f64>,
}

impl Propagator {
    pub fn new(grid: &SpaceGrid, dt: f64, lambda: f64) -> Self {
        let sbox = SpectralBox::new(grid, TRUNCATION * dt.sqrt());
        let k2 = sbox.k_squared();
        let mut decay = Vec::with_capacity(k2.len());
        let mut w_old = Vec::with_capacity(k2.len());
        let mut w_new = Vec::with_capacity(k2.len());
        for k2 in k2 {
            let z = (lambda + 0.5 * k2) * dt;
            let (phi1, psi) = phi_functions(z);
            decay.push((-z).exp());
            w_old.push(dt * psi);
            w_new.push(dt * (phi1 - psi));
        }
        Self {
            sbox,
            dt,
            lambda,
            decay,
            w_old,
            w_new,
        }
    }

    /// Advances `u` one step given the source at both step endpoints.
    pub fn step(&self, u: &[f64], f_old: &[f64], f_new: &[f64]) -> Vec<f64> {
        let u_hat = self.sbox.forward(u);
        let f0 = self.sbox.forward(f_old);
        let f1 = self.sbox.forward(f_new);
        let out: Vec<Complex64> = (0..u_hat.len())
            .map(|j| u_hat[j] * self.decay[j] + f0[j] * self.w_old[j] + f1[j] * self.w_new[j])
            .collect();
        self.sbox.inverse(out)
    }

    /// Same as [`step`](Self::step) with the source already transformed.
    pub fn step_hat(&self, u: &[f64], f0: &[Complex64], f1: &[Complex64]) -> Vec<f64> {
        let u_hat = self.sbox.forward(u);
        let out: Vec<Complex64> = (0..u_hat.len())
            .map(|j| u_hat[j] * self.decay[j] + f0[j] * self.w_old[j] + f1[j] * self.w_new[j])
            .collect();
        self.sbox.inverse(out)
    }
}

/// ∫_0^t K(t-s) * f(s) ds for every time step of `f`'s grid (component 0).
/// Returns a scalar field on the same grids, zero at the initial time.
pub fn duhamel(f: &GridFunction) -> Result<GridFunction> {
    let grid = &f.space;
    let tg: TimeGrid = f.time;
    let dt = tg.dt();
    check_resolution(grid, dt)?;
    let prop = Propagator::new(grid, dt, 0.0);
    let mut out = GridFunction::zeros(grid.clone(), tg, 1);
    for k in 0..tg.steps {
        let next = prop.step(out.slice(k, 0), f.slice(k, 0), f.slice(k + 1, 0));
        out.slice_mut(k + 1, 0).copy_from_slice(&next);
    }
    Ok(out)
}

/// Time steps must resolve the grid: h <= √Δt.
pub fn check_resolution(grid: &SpaceGrid, dt: f64) -> Result<()> {
    let h = grid.spacing();
    if h > dt.sqrt() * (1.0 + 1e-12) {
        return Err(Error::GridTooCoarse { h, sqrt_t: dt.sqrt() });
    }
    Ok(())
}
