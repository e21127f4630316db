//! Uniform space-time grids and fields living on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on [-L, L]^d with `n` points per axis (endpoints included).
///
/// On a periodic grid the last point along each axis duplicates the first and
/// the period is 2L. Otherwise values are taken as constant beyond the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub dim: usize,
    pub n: usize,
    pub half_width: f64,
    pub periodic: bool,
}

impl SpaceGrid {
    pub fn new(dim: usize, n: usize, half_width: f64, periodic: bool) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::validation("grid.dim", "must be 1, 2 or 3"));
        }
        if n < 5 {
            return Err(Error::validation("grid.n", "needs at least 5 points per axis"));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::validation("grid.half_width", "must be positive"));
        }
        Ok(Self {
            dim,
            n,
            half_width,
            periodic,
        })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Total number of stored points, n^d.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride of `axis` in the linear index (last axis is contiguous).
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .into_iter()
            .map(|i| self.coord(i))
            .collect()
    }

    /// Samples `f` at every grid point.
    pub fn sample<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.point(i))).collect()
    }

    /// Trapezoidal quadrature of grid values over the box.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let h = self.spacing();
        let mut total = 0.0;
        for (idx, v) in values.iter().enumerate() {
            let mut w = 1.0;
            for &i in &self.multi_index(idx) {
                if self.periodic {
                    if i == self.n - 1 {
                        w = 0.0;
                    }
                } else if i == 0 || i == self.n - 1 {
                    w *= 0.5;
                }
            }
            total += w * v;
        }
        total * h.powi(self.dim as i32)
    }

    /// Multilinear interpolation at `x`. Coordinates outside the box are wrapped
    /// (periodic) or clamped (constant extension).
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let h = self.spacing();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..self.dim {
            let mut s = (x[a] + self.half_width) / h;
            let cells = (self.n - 1) as f64;
            if self.periodic {
                s = s.rem_euclid(cells);
            } else {
                s = s.clamp(0.0, cells);
            }
            let i = (s.floor() as usize).min(self.n - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..self.dim {
                let up = (corner >> a) & 1;
                w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                idx += (base[a] + up) * self.stride(a);
            }
            if w != 0.0 {
                total += w * values[idx];
            }
        }
        total
    }

    /// First derivative along `axis`: spectral on periodic grids, fourth-order
    /// centered differences otherwise (second order in the two outer layers).
    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        if self.periodic {
            return crate::spectral::periodic_derivative(self, values, axis, 1);
        }
        self.fd_along(values, axis, |line, h, out| {
            let n = line.len();
            for i in 0..n {
                out[i] = if i >= 2 && i + 2 < n {
                    (line[i - 2] - 8.0 * line[i - 1] + 8.0 * line[i + 1] - line[i + 2]) / (12.0 * h)
                } else if i >= 1 && i + 1 < n {
                    (line[i + 1] - line[i - 1]) / (2.0 * h)
                } else if i == 0 {
                    (-3.0 * line[0] + 4.0 * line[1] - line[2]) / (2.0 * h)
                } else {
                    (3.0 * line[n - 1] - 4.0 * line[n - 2] + line[n - 3]) / (2.0 * h)
                };
            }
        })
    }

    /// Second derivative ∂_a ∂_b.
    pub fn second_derivative(&self, values: &[f64], a: usize, b: usize) -> Vec<f64> {
        if a != b {
            return self.derivative(&self.derivative(values, a), b);
        }
        if self.periodic {
            return crate::spectral::periodic_derivative(self, values, a, 2);
        }
        self.fd_along(values, a, |line, h, out| {
            let n = line.len();
            let h2 = h * h;
            for i in 0..n {
                out[i] = if i >= 2 && i + 2 < n {
                    (-line[i - 2] + 16.0 * line[i - 1] - 30.0 * line[i] + 16.0 * line[i + 1]
                        - line[i + 2])
                        / (12.0 * h2)
                } else if i >= 1 && i + 1 < n {
                    (line[i + 1] - 2.0 * line[i] + line[i - 1]) / h2
                } else if i == 0 {
                    (2.0 * line[0] - 5.0 * line[1] + 4.0 * line[2] - line[3]) / h2
                } else {
                    (2.0 * line[n - 1] - 5.0 * line[n - 2] + 4.0 * line[n - 3] - line[n - 4]) / h2
                };
            }
        })
    }

    fn fd_along<F: Fn(&[f64], f64, &mut [f64])>(&self, values: &[f64], axis: usize, op: F) -> Vec<f64> {
        let h = self.spacing();
        let mut out = vec![0.0; values.len()];
        let stride = self.stride(axis);
        let mut line = vec![0.0; self.n];
        let mut res = vec![0.0; self.n];
        for start in self.line_starts(axis) {
            for i in 0..self.n {
                line[i] = values[start + i * stride];
            }
            op(&line, h, &mut res);
            for i in 0..self.n {
                out[start + i * stride] = res[i];
            }
        }
        out
    }

    /// Linear indices of the first point of every grid line along `axis`.
    pub fn line_starts(&self, axis: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&idx| (idx / self.stride(axis)) % self.n == 0)
            .collect()
    }
}

/// Uniform time grid s = t_0 < ... < t_{steps} = T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Builds the grid, requiring `dt` to divide `end - start`.
    pub fn with_step(start: f64, end: f64, dt: f64) -> Result<Self> {
        if !(end > start) {
            return Err(Error::validation("time.horizon", "must exceed the start time"));
        }
        if !(dt > 0.0) {
            return Err(Error::validation("time.dt", "must be positive"));
        }
        let ratio = (end - start) / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::validation(
                "time.dt",
                format!("{dt} does not divide the interval length {}", end - start),
            ));
        }
        Ok(Self {
            start,
            end,
            steps: steps as usize,
        })
    }

    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.end
        } else {
            self.start + k as f64 * self.dt()
        }
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }
}

/// A scalar or vector field sampled on a space-time grid. Values are laid out
/// (time, component, space) so each spatial slice is contiguous.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub space: SpaceGrid,
    pub time: TimeGrid,
    pub components: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(space: SpaceGrid, time: TimeGrid, components: usize) -> Self {
        let len = time.points() * components * space.len();
        Self {
            space,
            time,
            components,
            values: vec![0.0; len],
        }
    }

    /// Samples f(t, x) -> component values.
    pub fn from_fn<F: FnMut(f64, &[f64], &mut [f64])>(
        space: SpaceGrid,
        time: TimeGrid,
        components: usize,
        mut f: F,
    ) -> Self {
        let mut gf = Self::zeros(space, time, components);
        let mut buf = vec![0.0; components];
        let m = gf.space.len();
        for k in 0..time.points() {
            let t = time.time(k);
            for idx in 0..m {
                let x = gf.space.point(idx);
                f(t, &x, &mut buf);
                for c in 0..components {
                    gf.values[(k * components + c) * m + idx] = buf[c];
                }
            }
        }
        gf
    }

    pub fn slice(&self, step: usize, component: usize) -> &[f64] {
        let m = self.space.len();
        let start = (step * self.components + component) * m;
        &self.values[start..start + m]
    }

    pub fn slice_mut(&mut self, step: usize, component: usize) -> &mut [f64] {
        let m = self.space.len();
        let start = (step * self.components + component) * m;
        &mut self.values[start..start + m]
    }

    /// ∂_axis of one component at one time step.
    pub fn gradient(&self, step: usize, component: usize, axis: usize) -> Vec<f64> {
        self.space.derivative(self.slice(step, component), axis)
    }

    pub fn hessian(&self, step: usize, component: usize, a: usize, b: usize) -> Vec<f64> {
        self.space.second_derivative(self.slice(step, component), a, b)
    }

    /// max |values| over the whole field.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    /// Linear interpolation in time between grid steps, then multilinear in space.
    pub fn interpolate(&self, t: f64, component: usize, x: &[f64]) -> f64 {
        let (k, w) = self.time_bracket(t);
        let lo = self.space.interpolate(self.slice(k, component), x);
        if w == 0.0 {
            return lo;
        }
        let hi = self.space.interpolate(self.slice(k + 1, component), x);
        (1.0 - w) * lo + w * hi
    }

    fn time_bracket(&self, t: f64) -> (usize, f64) {
        let s = ((t - self.time.start) / self.time.dt()).clamp(0.0, self.time.steps as f64);
        let k = (s.floor() as usize).min(self.time.steps);
        if k == self.time.steps {
            (k, 0.0)
        } else {
            (k, s - k as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grid_requires_divisibility() {
        let g = TimeGrid::with_step(0.0, 1.0, 0.25).unwrap();
        assert_eq!(g.steps, 4);
        assert_eq!(g.time(4), 1.0);
        match TimeGrid::with_step(0.0, 1.0, 0.3) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "time.dt"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fd_derivatives_converge() {
        let g = SpaceGrid::new(1, 201, 2.0, false).unwrap();
        let v = g.sample(|x| x[0].sin());
        let d = g.derivative(&v, 0);
        let d2 = g.second_derivative(&v, 0, 0);
        for i in 0..g.n {
            let x = g.coord(i);
            let tol = if (2..g.n - 2).contains(&i) { 1e-7 } else { 1e-3 };
            assert!((d[i] - x.cos()).abs() < tol, "{i}");
            let tol2 = if (2..g.n - 2).contains(&i) { 1e-6 } else { 3e-2 };
            assert!((d2[i] + x.sin()).abs() < tol2, "{i}");
        }
    }

    #[test]
    fn boundary_derivative_close_to_one_sided() {
        let g = SpaceGrid::new(1, 101, 1.0, false).unwrap();
        let v = g.sample(|x| x[0].exp());
        let d = g.derivative(&v, 0);
        let h = g.spacing();
        let one_sided = (v[1] - v[0]) / h;
        assert!((d[0] - one_sided).abs() < 2.0 * h * 3.0);
    }

    #[test]
    fn interpolation_is_exact_for_bilinear() {
        let g = SpaceGrid::new(2, 11, 1.0, false).unwrap();
        let v = g.sample(|x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]);
        let x = [0.123, -0.456];
        let exact = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        assert!((g.interpolate(&v, &x) - exact).abs() < 1e-12);
        // clamped outside
        assert!((g.interpolate(&v, &[5.0, 0.0]) - g.interpolate(&v, &[1.0, 0.0])).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_integrates_gaussian() {
        let g = SpaceGrid::new(2, 161, 8.0, false).unwrap();
        let v = g.sample(|x| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp());
        let exact = 2.0 * std::f64::consts::PI;
        assert!((g.integrate(&v) - exact).abs() < 1e-9);
    }
}
