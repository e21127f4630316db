//! Mild solutions of ∂_t u = ½Δu − λu + f + g·∇u with u(0) = 0, the backward
//! resolvent problem, and measurement of second-derivative moduli.
//!
//! The fixed-point map is applied over the whole time interval: given an
//! iterate u_k, the source f + g·∇u_k is formed at every time step and the
//! linear part is integrated exactly in Fourier space with the source
//! interpolated linearly in time. If the iteration does not contract, the
//! interval is cut into 2, 4, ... pieces that are solved in sequence.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, SpaceGrid, TimeGrid};
use crate::heat_kernel::{check_resolution, Propagator};
use crate::linalg::op_norm;
use crate::mollifier::mollify_grid;
use crate::moduli::{schauder_bound, Modulus};
use crate::sde_flow::DriftSpec;

#[derive(Debug, Clone, Copy)]
pub struct PicardOptions {
    /// Relative stopping tolerance on the sup-norm change between iterates.
    pub tol: f64,
    pub max_iterations: usize,
    /// A piece fails once the change exceeds this multiple of the first change.
    pub blowup: f64,
    /// Largest number of pieces tried before reporting `NoContraction`.
    pub max_pieces: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 200,
            blowup: 1e3,
            max_pieces: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MildSolution {
    pub u: GridFunction,
    /// Map applications summed over all pieces.
    pub iterations: usize,
    /// Ratios of successive sup-norm changes, pieces concatenated in order.
    pub contraction_ratios: Vec<f64>,
    /// sup |T(u) − u| for one extra application of the map.
    pub residual: f64,
    pub subintervals: usize,
}

/// Solves the forward problem with λ = 0 and default options.
pub fn solve_mild(f: &GridFunction, g: &GridFunction) -> Result<MildSolution> {
    solve_system(f, g, 0.0, &PicardOptions::default(), None)
}

/// Solves ∂_t u_c = ½Δu_c − λu_c + f_c + g·∇u_c, u_c(0) = 0, for every
/// component c of `f`. `g` carries one component per space dimension.
/// `initial` replaces the zero starting iterate.
pub fn solve_system(
    f: &GridFunction,
    g: &GridFunction,
    lambda: f64,
    opts: &PicardOptions,
    initial: Option<&GridFunction>,
) -> Result<MildSolution> {
    let space = &f.space;
    if g.space != *space || g.time != f.time {
        return Err(Error::validation("pde.drift", "drift must live on the source grid"));
    }
    if g.components != space.dim {
        return Err(Error::validation("pde.drift", "drift needs one component per dimension"));
    }
    if let Some(init) = initial {
        if init.space != *space || init.time != f.time || init.components != f.components {
            return Err(Error::validation("pde.initial", "initial iterate has the wrong shape"));
        }
    }
    if !(lambda >= 0.0) {
        return Err(Error::validation("pde.lambda", "must be nonnegative"));
    }
    if f.values.iter().chain(&g.values).any(|v| !v.is_finite()) {
        return Err(Error::validation("pde.data", "source and drift must be finite"));
    }
    check_resolution(space, f.time.dt())?;

    let map = FixedPointMap {
        f,
        g,
        prop: Propagator::new(space, f.time.dt(), lambda),
        drift_free: g.values.iter().all(|&v| v == 0.0),
    };
    let steps = f.time.steps;
    let mut pieces = 1;
    loop {
        match map.solve_in_pieces(pieces, opts, initial) {
            Some(mut sol) => {
                let mut check = sol.u.clone();
                for (k0, k1) in piece_bounds(steps, pieces) {
                    map.sweep(&sol.u, &sol.u, &mut check, k0, k1);
                }
                sol.residual = region_diff(&check, &sol.u, 0, steps);
                return Ok(sol);
            }
            None => {
                pieces *= 2;
                if pieces > opts.max_pieces || pieces > steps {
                    return Err(Error::NoContraction {
                        interval: (f.time.end - f.time.start) / (pieces / 2) as f64,
                    });
                }
            }
        }
    }
}

struct FixedPointMap<'a> {
    f: &'a GridFunction,
    g: &'a GridFunction,
    prop: Propagator,
    drift_free: bool,
}

impl FixedPointMap<'_> {
    fn gradient(&self, v: &[f64], axis: usize) -> Vec<f64> {
        if self.f.space.periodic {
            self.prop.sbox.differentiate(v, axis, 1)
        } else {
            self.f.space.derivative(v, axis)
        }
    }

    /// f + g·∇u at step k for component c, transformed.
    fn source_hat(&self, u: &GridFunction, k: usize, c: usize) -> Vec<Complex64> {
        let mut src = self.f.slice(k, c).to_vec();
        if !self.drift_free {
            for a in 0..self.f.space.dim {
                let ga = self.g.slice(k, a);
                if ga.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let du = self.gradient(u.slice(k, c), a);
                for ((s, &gv), &d) in src.iter_mut().zip(ga).zip(&du) {
                    *s += gv * d;
                }
            }
        }
        self.prop.sbox.forward(&src)
    }

    /// out = T(prev) on steps k0..=k1, starting from start(k0).
    fn sweep(&self, prev: &GridFunction, start: &GridFunction, out: &mut GridFunction, k0: usize, k1: usize) {
        for c in 0..self.f.components {
            out.slice_mut(k0, c).copy_from_slice(start.slice(k0, c));
            let mut f_old = self.source_hat(prev, k0, c);
            for k in k0..k1 {
                let f_new = self.source_hat(prev, k + 1, c);
                let next = self.prop.step_hat(out.slice(k, c), &f_old, &f_new);
                out.slice_mut(k + 1, c).copy_from_slice(&next);
                f_old = f_new;
            }
        }
    }

    fn solve_in_pieces(
        &self,
        pieces: usize,
        opts: &PicardOptions,
        initial: Option<&GridFunction>,
    ) -> Option<MildSolution> {
        let f = self.f;
        let mut solution = GridFunction::zeros(f.space.clone(), f.time, f.components);
        let mut iterate = match initial {
            Some(init) => init.clone(),
            None => solution.clone(),
        };
        let mut next = iterate.clone();
        let mut iterations = 0;
        let mut ratios = Vec::new();
        for (k0, k1) in piece_bounds(f.time.steps, pieces) {
            let mut first = None;
            let mut last = 0.0;
            let mut converged = false;
            for _ in 0..opts.max_iterations {
                self.sweep(&iterate, &solution, &mut next, k0, k1);
                iterations += 1;
                let diff = region_diff(&next, &iterate, k0, k1);
                std::mem::swap(&mut iterate, &mut next);
                if !diff.is_finite() {
                    return None;
                }
                let scale = region_sup(&iterate, k0, k1);
                match first {
                    None => first = Some(diff),
                    Some(d0) => {
                        if last > 0.0 {
                            ratios.push(diff / last);
                        }
                        if diff > opts.blowup * d0 {
                            return None;
                        }
                    }
                }
                last = diff;
                if diff <= opts.tol * scale {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return None;
            }
            copy_region(&iterate, &mut solution, k0, k1);
        }
        Some(MildSolution {
            u: solution,
            iterations,
            contraction_ratios: ratios,
            residual: 0.0,
            subintervals: pieces,
        })
    }
}

/// Step ranges of `pieces` consecutive pieces covering 0..=steps.
fn piece_bounds(steps: usize, pieces: usize) -> Vec<(usize, usize)> {
    (0..pieces)
        .map(|p| (p * steps / pieces, (p + 1) * steps / pieces))
        .collect()
}

fn region_diff(a: &GridFunction, b: &GridFunction, k0: usize, k1: usize) -> f64 {
    let block = a.components * a.space.len();
    let range = k0 * block..(k1 + 1) * block;
    a.values[range.clone()]
        .iter()
        .zip(&b.values[range])
        .fold(0.0f64, |m, (x, y)| {
            let d = (x - y).abs();
            if d.is_nan() {
                f64::NAN
            } else {
                m.max(d)
            }
        })
}

fn region_sup(a: &GridFunction, k0: usize, k1: usize) -> f64 {
    let block = a.components * a.space.len();
    a.values[k0 * block..(k1 + 1) * block]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

fn copy_region(src: &GridFunction, dst: &mut GridFunction, k0: usize, k1: usize) {
    let block = src.components * src.space.len();
    let range = k0 * block..(k1 + 1) * block;
    dst.values[range.clone()].copy_from_slice(&src.values[range]);
}

/// Defect of the strong form ∂_t u − ½Δu + λu − f − g·∇u, with centered
/// differences in time on interior steps. Points within two cells of a
/// non-periodic boundary are skipped.
pub fn strong_residual(u: &GridFunction, f: &GridFunction, g: &GridFunction, lambda: f64) -> f64 {
    let space = &u.space;
    let dt = u.time.dt();
    let keep: Vec<bool> = (0..space.len())
        .map(|idx| space.periodic || space.multi_index(idx).iter().all(|&i| i >= 2 && i + 2 < space.n))
        .collect();
    let mut worst = 0.0f64;
    for k in 1..u.time.steps {
        for c in 0..u.components {
            let mut defect: Vec<f64> = (0..space.len())
                .map(|i| {
                    (u.slice(k + 1, c)[i] - u.slice(k - 1, c)[i]) / (2.0 * dt) + lambda * u.slice(k, c)[i]
                        - f.slice(k, c)[i]
                })
                .collect();
            for a in 0..space.dim {
                let lap = u.hessian(k, c, a, a);
                let du = u.gradient(k, c, a);
                let ga = g.slice(k, a);
                for i in 0..space.len() {
                    defect[i] -= 0.5 * lap[i] + ga[i] * du[i];
                }
            }
            for (d, &ok) in defect.iter().zip(&keep) {
                if ok {
                    worst = worst.max(d.abs());
                }
            }
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct ResolventSolution {
    /// U(t, x) in forward time, one component per dimension; U(T) = 0.
    pub u: GridFunction,
    pub lambda: f64,
    /// max over the grid of the operator 2-norm of ∇U.
    pub grad_sup: f64,
    pub iterations: usize,
}

impl ResolventSolution {
    /// ∇U at step k and grid index idx, row-major (∂_j U_i at i·d + j).
    pub fn jacobian_fields(&self, k: usize) -> Vec<Vec<f64>> {
        let d = self.u.space.dim;
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.u.gradient(k, i, j));
            }
        }
        out
    }
}

/// Solves ∂_t U + ½ΔU + b·∇U = λU − b on [0, T), U(T) = 0, through
/// V(τ) = U(T − τ), which is a forward problem with source b and drift b.
pub fn solve_resolvent(
    b: &DriftSpec,
    lambda: f64,
    horizon: f64,
    space: &SpaceGrid,
    dt: f64,
) -> Result<ResolventSolution> {
    if !(lambda > 0.0) {
        return Err(Error::validation("resolvent.lambda", "must be positive"));
    }
    if b.dim != space.dim {
        return Err(Error::validation("drift.dim", "drift and grid dimensions differ"));
    }
    let time = TimeGrid::with_step(0.0, horizon, dt)?;
    let reversed = GridFunction::from_fn(space.clone(), time, space.dim, |tau, x, out| {
        b.eval(horizon - tau, x, out)
    });
    let sol = solve_system(&reversed, &reversed, lambda, &PicardOptions::default(), None)?;
    let v = sol.u;
    let mut u = GridFunction::zeros(space.clone(), time, space.dim);
    for k in 0..time.points() {
        for c in 0..space.dim {
            u.slice_mut(k, c).copy_from_slice(v.slice(time.steps - k, c));
        }
    }
    let mut out = ResolventSolution {
        u,
        lambda,
        grad_sup: 0.0,
        iterations: sol.iterations,
    };
    out.grad_sup = grad_sup(&out);
    Ok(out)
}

fn grad_sup(sol: &ResolventSolution) -> f64 {
    let d = sol.u.space.dim;
    let mut worst = 0.0f64;
    let mut jac = vec![0.0; d * d];
    for k in 0..sol.u.time.points() {
        let fields = sol.jacobian_fields(k);
        for idx in 0..sol.u.space.len() {
            for (e, field) in jac.iter_mut().zip(&fields) {
                *e = field[idx];
            }
            worst = worst.max(op_norm(&jac, d));
        }
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub lambda: f64,
    pub grad_sup: f64,
}

#[derive(Debug, Clone)]
pub struct LambdaCalibration {
    /// Smallest tested λ with ‖∇U‖∞ ≤ 1/2.
    pub lambda0: f64,
    pub table: Vec<DecayRow>,
    /// Log-log slope of ‖∇U‖∞ against λ over λ ≥ 2^4; `None` when any
    /// entry in that window is zero.
    pub slope: Option<f64>,
    pub strictly_decreasing: bool,
}

/// λ below which the slope fit does not reach.
pub const SLOPE_WINDOW_START: f64 = 16.0;

/// Sweeps λ = 2^0, ..., 2^max_power concurrently.
pub fn calibrate_lambda(
    b: &DriftSpec,
    horizon: f64,
    space: &SpaceGrid,
    dt: f64,
    max_power: u32,
) -> Result<LambdaCalibration> {
    let table = (0..=max_power)
        .into_par_iter()
        .map(|p| {
            let lambda = 2f64.powi(p as i32);
            solve_resolvent(b, lambda, horizon, space, dt).map(|s| DecayRow {
                lambda,
                grad_sup: s.grad_sup,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let strictly_decreasing = table.windows(2).all(|w| w[1].grad_sup < w[0].grad_sup);
    let window: Vec<&DecayRow> = table.iter().filter(|r| r.lambda >= SLOPE_WINDOW_START).collect();
    let slope = if window.len() >= 2 && window.iter().all(|r| r.grad_sup > 0.0) {
        let xs: Vec<f64> = window.iter().map(|r| r.lambda.ln()).collect();
        let ys: Vec<f64> = window.iter().map(|r| r.grad_sup.ln()).collect();
        Some(linear_slope(&xs, &ys))
    } else {
        None
    };
    match table.iter().find(|r| r.grad_sup <= 0.5) {
        Some(row) => Ok(LambdaCalibration {
            lambda0: row.lambda,
            table,
            slope,
            strictly_decreasing,
        }),
        None => Err(Error::NotReached {
            table: table.iter().map(|r| (r.lambda, r.grad_sup)).collect(),
        }),
    }
}

pub(crate) fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusRow {
    pub r: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ModulusReport {
    /// Largest ratio per dyadic separation, finest first.
    pub rows: Vec<ModulusRow>,
    /// Empirical constant: the largest ratio overall.
    pub c_hat: f64,
    /// Set when the ratio keeps growing over the three finest separations and
    /// ends more than twice the smallest per-separation maximum.
    pub unbounded: bool,
}

/// Ratios |v(x) − v(y)| / bound(|x − y|) for grid-aligned pairs along axis 0
/// at separations h·2^j. `values` is one spatial slice (e.g. a second
/// derivative at a fixed time); at most `pair_count` base points are used per
/// separation.
pub fn measure_modulus(grid: &SpaceGrid, values: &[f64], m: &Modulus, pair_count: usize) -> Result<ModulusReport> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("modulus.field", "field must be finite"));
    }
    let h = grid.spacing();
    let stride = grid.stride(0);
    let mut shifts = Vec::new();
    let mut s = 1;
    while s < grid.n / 2 {
        shifts.push(s);
        s *= 2;
    }
    if shifts.len() < 10 {
        return Err(Error::validation(
            "modulus.grid",
            "need at least ten dyadic separations (three decades)",
        ));
    }
    let mut rows = Vec::with_capacity(shifts.len());
    for &shift in &shifts {
        let r = shift as f64 * h;
        let bound = schauder_bound(m, r)?;
        let bases: Vec<usize> = (0..grid.len())
            .filter(|&idx| {
                let i0 = grid.multi_index(idx)[0];
                grid.periodic || i0 + shift < grid.n
            })
            .collect();
        let step = (bases.len() / pair_count.max(1)).max(1);
        let mut worst = 0.0f64;
        for &idx in bases.iter().step_by(step) {
            let i0 = grid.multi_index(idx)[0];
            let j0 = if grid.periodic { (i0 + shift) % (grid.n - 1) } else { i0 + shift };
            let other = idx - i0 * stride + j0 * stride;
            worst = worst.max((values[idx] - values[other]).abs());
        }
        rows.push(ModulusRow { r, ratio: worst / bound });
    }
    let c_hat = rows.iter().fold(0.0f64, |a, r| a.max(r.ratio));
    let min = rows.iter().fold(f64::INFINITY, |a, r| a.min(r.ratio));
    let growing = rows[0].ratio > rows[1].ratio && rows[1].ratio > rows[2].ratio;
    let unbounded = growing && rows[0].ratio > 2.0 * min;
    Ok(ModulusReport { rows, c_hat, unbounded })
}

#[derive(Debug, Clone, Serialize)]
pub struct MollifiedError {
    pub n: f64,
    pub sup: f64,
    pub grad_sup: f64,
    pub hess_sup: f64,
}

/// Errors of the solves with f ∗ ϱ_n, g ∗ ϱ_n against the unmollified solve,
/// in the sup-norms of u, ∇u and ∇²u over all time steps.
pub fn mollified_convergence(f: &GridFunction, g: &GridFunction, n_list: &[f64]) -> Result<Vec<MollifiedError>> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("mollify.levels", "levels must be increasing"));
    }
    let reference = solve_mild(f, g)?.u;
    let space = &f.space;
    n_list
        .par_iter()
        .map(|&n| {
            let u = solve_mild(&mollify_grid(f, n), &mollify_grid(g, n))?.u;
            let mut err = u.clone();
            for (e, r) in err.values.iter_mut().zip(&reference.values) {
                *e -= r;
            }
            let mut row = MollifiedError {
                n,
                sup: err.sup_norm(),
                grad_sup: 0.0,
                hess_sup: 0.0,
            };
            for k in 0..err.time.points() {
                for c in 0..err.components {
                    for a in 0..space.dim {
                        row.grad_sup = row.grad_sup.max(sup(&err.gradient(k, c, a)));
                        for b in a..space.dim {
                            row.hess_sup = row.hess_sup.max(sup(&err.hessian(k, c, a, b)));
                        }
                    }
                }
            }
            Ok(row)
        })
        .collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_flow::DriftKind;
    use std::f64::consts::PI;

    fn periodic_1d(n: usize, dt: f64, horizon: f64) -> (SpaceGrid, TimeGrid) {
        (
            SpaceGrid::new(1, n, PI, true).unwrap(),
            TimeGrid::with_step(0.0, horizon, dt).unwrap(),
        )
    }

    #[test]
    fn constant_source_gives_linear_growth() {
        let (g, t) = periodic_1d(129, 1.0 / 64.0, 1.0);
        let f = GridFunction::from_fn(g.clone(), t, 1, |_, _, o| o[0] = 1.0);
        let drift = GridFunction::from_fn(g, t, 1, |_, x, o| o[0] = x[0].sin());
        let sol = solve_mild(&f, &drift).unwrap();
        for k in 0..t.points() {
            for &v in sol.u.slice(k, 0) {
                assert!((v - t.time(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_source_matches_mode_ode() {
        let (g, t) = periodic_1d(129, 1.0 / 128.0, 1.0);
        let f = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = x[0].sin());
        let zero = GridFunction::zeros(g.clone(), t, 1);
        let sol = solve_mild(&f, &zero).unwrap();
        assert_eq!(sol.iterations, 2);
        for k in 0..t.points() {
            let amp = 2.0 * (1.0 - (-t.time(k) / 2.0).exp());
            for i in 0..g.n {
                assert!((sol.u.slice(k, 0)[i] - amp * g.coord(i).sin()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_drift_matches_complex_mode() {
        // u = Im(A(t) e^{ix}) with A' = (−½ + ic)A + 1.
        let c = 0.8;
        let (g, t) = periodic_1d(129, 1.0 / 256.0, 1.0);
        let f = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = x[0].sin());
        let drift = GridFunction::from_fn(g.clone(), t, 1, |_, _, o| o[0] = c);
        let sol = solve_mild(&f, &drift).unwrap();
        let z = Complex64::new(-0.5, c);
        let a = ((z * 1.0).exp() - 1.0) / z;
        for i in 0..g.n {
            let exact = (a * Complex64::new(0.0, g.coord(i)).exp()).im;
            assert!((sol.u.slice(t.steps, 0)[i] - exact).abs() < 1e-5);
        }
        assert!(sol.residual <= 1e-7);
    }

    #[test]
    fn strong_residual_is_small_for_smooth_data() {
        let (g, t) = periodic_1d(129, 1.0 / 256.0, 0.5);
        let f = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = (2.0 * x[0]).cos());
        let drift = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = 0.5 * x[0].sin());
        let sol = solve_mild(&f, &drift).unwrap();
        assert!(strong_residual(&sol.u, &f, &drift, 0.0) < 1e-3);
    }

    #[test]
    fn different_starts_reach_the_same_fixed_point() {
        let (g, t) = periodic_1d(129, 1.0 / 128.0, 1.0);
        let f = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = x[0].cos() + 0.3);
        let drift = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = x[0].sin());
        let opts = PicardOptions::default();
        let a = solve_system(&f, &drift, 0.0, &opts, None).unwrap();
        let b = solve_system(&f, &drift, 0.0, &opts, Some(&f)).unwrap();
        let scale = a.u.sup_norm();
        assert!(region_diff(&a.u, &b.u, 0, t.steps) <= 2.0 * opts.tol * scale);
    }

    #[test]
    fn strong_drift_falls_back_to_pieces() {
        let (g, t) = periodic_1d(129, 1.0 / 256.0, 1.0);
        let f = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = x[0].sin());
        let drift = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = 6.0 * (2.0 * x[0]).sin());
        let opts = PicardOptions {
            max_iterations: 12,
            ..PicardOptions::default()
        };
        let sol = solve_system(&f, &drift, 0.0, &opts, None).unwrap();
        assert!(sol.subintervals > 1);
        let tight = PicardOptions {
            max_iterations: 2,
            max_pieces: 2,
            ..PicardOptions::default()
        };
        assert!(matches!(
            solve_system(&f, &drift, 0.0, &tight, None),
            Err(Error::NoContraction { .. })
        ));
    }

    #[test]
    fn constant_resolvent_closed_form() {
        let g = SpaceGrid::new(1, 65, 4.0, false).unwrap();
        let lambda = 3.0;
        let sol = solve_resolvent(&DriftSpec::constant(vec![0.7]), lambda, 1.0, &g, 1.0 / 64.0).unwrap();
        for k in 0..sol.u.time.points() {
            let t = sol.u.time.time(k);
            let exact = 0.7 / lambda * (1.0 - (-lambda * (1.0 - t)).exp());
            for &v in sol.u.slice(k, 0) {
                assert!((v - exact).abs() < 1e-12);
            }
        }
        assert!(sol.u.slice(sol.u.time.steps, 0).iter().all(|&v| v == 0.0));
        assert!(sol.grad_sup < 1e-12);
        let zero = solve_resolvent(&DriftSpec::zero(1), lambda, 1.0, &g, 1.0 / 64.0).unwrap();
        assert_eq!(zero.u.sup_norm(), 0.0);
    }

    #[test]
    fn constant_drift_calibrates_at_first_lambda() {
        let g = SpaceGrid::new(2, 9, 2.0, false).unwrap();
        let cal = calibrate_lambda(&DriftSpec::constant(vec![0.5, -0.2]), 0.5, &g, 1.0 / 4.0, 3).unwrap();
        assert_eq!(cal.lambda0, 1.0);
        assert!(cal.slope.is_none());
    }

    #[test]
    fn tanh_gradient_decays_in_lambda() {
        let g = SpaceGrid::new(1, 129, 8.0, false).unwrap();
        let b = DriftSpec::new(DriftKind::Tanh { amp: 1.0 }, 1).unwrap();
        let cal = calibrate_lambda(&b, 1.0, &g, 1.0 / 64.0, 6).unwrap();
        assert!(cal.strictly_decreasing);
        assert!(cal.slope.unwrap() < -1.0 / 3.0 + 0.1);
    }

    #[test]
    fn affine_field_has_zero_ratios() {
        let g = SpaceGrid::new(1, 2049, 4.0, false).unwrap();
        let values = vec![0.0; g.len()];
        let m = Modulus::power_log(1.0, 0.5, 0.0, 0.5).unwrap();
        let rep = measure_modulus(&g, &values, &m, 256).unwrap();
        assert_eq!(rep.c_hat, 0.0);
        assert!(!rep.unbounded);
        assert!(rep.rows.len() >= 10);
    }

    #[test]
    fn smooth_field_ratio_is_stable() {
        let g = SpaceGrid::new(1, 4097, PI, true).unwrap();
        let values = g.sample(|x| x[0].sin());
        let m = Modulus::power_log(1.0, 0.5, 0.0, 0.9).unwrap();
        let rep = measure_modulus(&g, &values, &m, 512).unwrap();
        assert!(!rep.unbounded);
        assert!(rep.c_hat.is_finite() && rep.c_hat > 0.0);
    }

    #[test]
    fn mollified_levels_below_resolution_reproduce_the_solve() {
        let (g, t) = periodic_1d(65, 1.0 / 64.0, 0.5);
        let f = GridFunction::from_fn(g.clone(), t, 1, |_, x, o| o[0] = x[0].sin().abs().sqrt());
        let drift = GridFunction::zeros(g.clone(), t, 1);
        let rows = mollified_convergence(&f, &drift, &[2.0, 4.0, 1e6]).unwrap();
        assert!(rows[0].sup > rows[1].sup);
        assert_eq!(rows[2].sup, 0.0);
    }
}
