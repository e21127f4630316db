//! Euler–Maruyama for dX = b(t, X) dt + dB.
//!
//! Every initial point of a path is driven by the same Brownian increments,
//! so differences X(x) − X(y) and finite-difference Jacobians are pathwise
//! quantities. Path p under seed s always uses the stream `path_rng(s, p)`.

mod derivative;
pub mod drift;

pub use derivative::{
    default_stencil, derivative_flow, derivative_flow_transformed, liouville_det, DerivativeScheme,
    LiouvilleReport,
};
pub use drift::{DriftKind, DriftSpec};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::ito_tanaka::ItoTanakaMap;
use crate::rng::brownian_increments;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub start: f64,
    pub end: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
}

impl FlowConfig {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        if self.paths == 0 {
            return Err(Error::validation("mc.paths", "need at least one path"));
        }
        TimeGrid::with_step(self.start, self.end, self.dt)
    }
}

#[derive(Debug, Clone)]
pub struct FlowEnsemble {
    pub dim: usize,
    pub paths: usize,
    pub points: Vec<Vec<f64>>,
    pub time: TimeGrid,
    pub seed: u64,
    /// Set for inverse flows: step j then holds the state at time t_{N−j}.
    pub backward: bool,
    /// (path, step, component).
    pub increments: Vec<f64>,
    /// (path, point, step, component).
    pub x: Vec<f64>,
    /// Transformed process Y = γ(t, X), same layout as `x`.
    pub y: Option<Vec<f64>>,
    /// ∇X, (path, point, step, d×d row-major).
    pub xi: Option<Vec<f64>>,
    /// det ∇X from the divergence integral, (path, point, step).
    pub det: Option<Vec<f64>>,
}

impl FlowEnsemble {
    fn block(&self) -> usize {
        self.points.len() * self.time.points() * self.dim
    }

    pub fn state(&self, path: usize, point: usize, step: usize) -> &[f64] {
        let d = self.dim;
        let start = path * self.block() + (point * self.time.points() + step) * d;
        &self.x[start..start + d]
    }

    pub fn final_state(&self, path: usize, point: usize) -> &[f64] {
        self.state(path, point, self.time.steps)
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim;
        let start = (path * self.time.steps + step) * d;
        &self.increments[start..start + d]
    }

    fn path_increments(&self, path: usize) -> &[f64] {
        let n = self.time.steps * self.dim;
        &self.increments[path * n..(path + 1) * n]
    }

    pub fn xi_at(&self, path: usize, point: usize, step: usize) -> Result<&[f64]> {
        let xi = self.xi.as_ref().ok_or(Error::MissingArray("xi"))?;
        let dd = self.dim * self.dim;
        let start = ((path * self.points.len() + point) * self.time.points() + step) * dd;
        Ok(&xi[start..start + dd])
    }

    pub fn det_at(&self, path: usize, point: usize, step: usize) -> Result<f64> {
        let det = self.det.as_ref().ok_or(Error::MissingArray("det"))?;
        Ok(det[(path * self.points.len() + point) * self.time.points() + step])
    }

    /// Mean and variance of all increments against 0 and Δt, each within
    /// three standard errors.
    pub fn increment_check(&self) -> IncrementCheck {
        let n = self.increments.len() as f64;
        let dt = self.time.dt();
        let mean = self.increments.iter().sum::<f64>() / n;
        let variance = self.increments.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let ok = mean.abs() <= 3.0 * (dt / n).sqrt() && (variance - dt).abs() <= 3.0 * dt * (2.0 / n).sqrt();
        IncrementCheck { mean, variance, ok }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IncrementCheck {
    pub mean: f64,
    pub variance: f64,
    pub ok: bool,
}

fn check_points(points: &[Vec<f64>], dim: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::validation("flow.points", "need at least one initial point"));
    }
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::validation("flow.points", format!("points must be finite {dim}-vectors")));
    }
    Ok(())
}

fn assemble(
    dim: usize,
    points: &[Vec<f64>],
    time: TimeGrid,
    cfg: &FlowConfig,
    per_path: Vec<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)>,
    backward: bool,
) -> FlowEnsemble {
    let mut increments = Vec::with_capacity(cfg.paths * time.steps * dim);
    let mut x = Vec::with_capacity(cfg.paths * points.len() * time.points() * dim);
    let mut y = per_path[0].2.as_ref().map(|_| Vec::with_capacity(x.capacity()));
    for (inc, xs, ys) in per_path {
        increments.extend(inc);
        x.extend(xs);
        if let (Some(y), Some(ys)) = (y.as_mut(), ys) {
            y.extend(ys);
        }
    }
    FlowEnsemble {
        dim,
        paths: cfg.paths,
        points: points.to_vec(),
        time,
        seed: cfg.seed,
        backward,
        increments,
        x,
        y,
        xi: None,
        det: None,
    }
}

/// X_{k+1} = X_k + b(t_k, X_k)Δt + ΔB_k for every initial point.
pub fn simulate_flow(b: &DriftSpec, points: &[Vec<f64>], cfg: &FlowConfig) -> Result<FlowEnsemble> {
    let d = b.dim;
    check_points(points, d)?;
    let time = cfg.time_grid()?;
    let dt = time.dt();
    let per_path: Vec<_> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let inc = brownian_increments(cfg.seed, p as u64, time.steps, d, dt);
            let mut xs = Vec::with_capacity(points.len() * time.points() * d);
            let mut drift = vec![0.0; d];
            for x0 in points {
                let mut x = x0.clone();
                xs.extend_from_slice(&x);
                for k in 0..time.steps {
                    b.eval(time.time(k), &x, &mut drift);
                    for i in 0..d {
                        x[i] = x[i] + drift[i] * dt + inc[k * d + i];
                    }
                    xs.extend_from_slice(&x);
                }
            }
            (inc, xs, None)
        })
        .collect();
    Ok(assemble(d, points, time, cfg, per_path, false))
}

/// Simulates Y from y = γ(s, x) with the transformed coefficients and maps
/// back with X = γ⁻¹(t, Y). Uses the same increments as [`simulate_flow`]
/// for equal seeds.
pub fn simulate_transformed_flow(map: &ItoTanakaMap, points: &[Vec<f64>], cfg: &FlowConfig) -> Result<FlowEnsemble> {
    let d = map.dim();
    check_points(points, d)?;
    let time = cfg.time_grid()?;
    if time.start < map.u.time.start - 1e-12 || time.end > map.u.time.end + 1e-12 {
        return Err(Error::validation("time.horizon", "flow interval exceeds the map's time range"));
    }
    let dt = time.dt();
    let per_path = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let inc = brownian_increments(cfg.seed, p as u64, time.steps, d, dt);
            let mut xs = Vec::with_capacity(points.len() * time.points() * d);
            let mut ys = Vec::with_capacity(xs.capacity());
            for x0 in points {
                let mut y = map.gamma(time.start, x0)?;
                ys.extend_from_slice(&y);
                xs.extend_from_slice(x0);
                for k in 0..time.steps {
                    let (drift, sigma) = map.transformed_coeffs(time.time(k), &y)?;
                    for i in 0..d {
                        let mut noise = 0.0;
                        for j in 0..d {
                            noise += sigma[i * d + j] * inc[k * d + j];
                        }
                        y[i] = y[i] + drift[i] * dt + noise;
                    }
                    ys.extend_from_slice(&y);
                    xs.extend_from_slice(&map.gamma_inverse(time.time(k + 1), &y)?);
                }
            }
            Ok((inc, xs, Some(ys)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(d, points, time, cfg, per_path, false))
}

/// Inverse flow X⁻¹(s, t, ·) driven by the forward increments in reverse:
/// Z_0 = y, Z_{j+1} = Z_j − b(t_{N−j}, Z_j)Δt − ΔB_{N−1−j}. Step j of the
/// result holds Z_j ≈ X⁻¹(t_{N−j}, t, y); the last step is X⁻¹(s, t, y).
pub fn inverse_flow(b: &DriftSpec, points: &[Vec<f64>], cfg: &FlowConfig) -> Result<FlowEnsemble> {
    let d = b.dim;
    check_points(points, d)?;
    let time = cfg.time_grid()?;
    let dt = time.dt();
    let n = time.steps;
    let per_path: Vec<_> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let inc = brownian_increments(cfg.seed, p as u64, n, d, dt);
            let mut zs = Vec::with_capacity(points.len() * time.points() * d);
            let mut drift = vec![0.0; d];
            for y0 in points {
                let mut z = y0.clone();
                zs.extend_from_slice(&z);
                for j in 0..n {
                    b.eval(time.time(n - j), &z, &mut drift);
                    for i in 0..d {
                        z[i] = z[i] - drift[i] * dt - inc[(n - 1 - j) * d + i];
                    }
                    zs.extend_from_slice(&z);
                }
            }
            (inc, zs, None)
        })
        .collect();
    Ok(assemble(d, points, time, cfg, per_path, true))
}

/// Backward characteristic from (t_k, y) to s along one path's increments,
/// with the convention of [`inverse_flow`].
pub fn pull_back(b: &DriftSpec, time: &TimeGrid, increments: &[f64], k: usize, y: &[f64]) -> Vec<f64> {
    let d = b.dim;
    let dt = time.dt();
    let mut z = y.to_vec();
    let mut drift = vec![0.0; d];
    for j in (0..k).rev() {
        b.eval(time.time(j + 1), &z, &mut drift);
        for i in 0..d {
            z[i] = z[i] - drift[i] * dt - increments[j * d + i];
        }
    }
    z
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CocycleReport {
    pub dt: f64,
    /// Path mean of ‖X(s,t,x) − X(r,t,X(s,r,x))‖.
    pub mean: f64,
    pub max: f64,
}

/// Compares X(s, t, x) with X(r, t, X(s, r, x)) where each leg runs Euler on
/// its own grid of step `dt` from its own start time, the last step of a leg
/// being shortened to land on its end time. All legs read one Brownian path
/// sampled at `fine_dt`, which must divide `dt` and r − s, so the comparison
/// only sees time discretization.
pub fn cocycle_defect(
    b: &DriftSpec,
    x: &[f64],
    s: f64,
    r: f64,
    t: f64,
    dt: f64,
    fine_dt: f64,
    paths: usize,
    seed: u64,
) -> Result<CocycleReport> {
    let d = b.dim;
    check_points(&[x.to_vec()], d)?;
    if !(s < r && r < t) {
        return Err(Error::validation("flow.times", "need s < r < t"));
    }
    let fine = TimeGrid::with_step(s, t, fine_dt)?;
    let ratio = dt / fine_dt;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(Error::validation("time.dt", "fine step must divide the coarse step"));
    }
    let per_step = ratio.round() as usize;
    let r_index = ((r - s) / fine_dt).round() as usize;
    if ((r - s) / fine_dt - r_index as f64).abs() > 1e-9 {
        return Err(Error::validation("flow.times", "r − s must be a multiple of the fine step"));
    }
    let defects: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let inc = brownian_increments(seed, p as u64, fine.steps, d, fine_dt);
            let leg = |from: usize, to: usize, x0: &[f64]| -> Vec<f64> {
                let mut state = x0.to_vec();
                let mut drift = vec![0.0; d];
                let mut j = from;
                while j < to {
                    let next = (j + per_step).min(to);
                    let h = (next - j) as f64 * fine_dt;
                    b.eval(fine.time(j), &state, &mut drift);
                    for i in 0..d {
                        let db: f64 = (j..next).map(|m| inc[m * d + i]).sum();
                        state[i] = state[i] + drift[i] * h + db;
                    }
                    j = next;
                }
                state
            };
            let direct = leg(0, fine.steps, x);
            let mid = leg(0, r_index, x);
            let composed = leg(r_index, fine.steps, &mid);
            direct
                .iter()
                .zip(&composed)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(CocycleReport {
        dt,
        mean: defects.iter().sum::<f64>() / paths as f64,
        max: defects.iter().fold(0.0f64, |m, v| m.max(*v)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dt: f64, paths: usize) -> FlowConfig {
        FlowConfig {
            start: 0.0,
            end: 1.0,
            dt,
            paths,
            seed: 11,
        }
    }

    #[test]
    fn zero_drift_is_brownian_motion() {
        let ens = simulate_flow(&DriftSpec::zero(2), &[vec![0.5, -1.0]], &cfg(1.0 / 16.0, 20)).unwrap();
        for p in 0..ens.paths {
            assert_eq!(ens.state(p, 0, 0), &[0.5, -1.0]);
            let mut b = [0.0, 0.0];
            for k in 0..16 {
                b[0] += ens.increment(p, k)[0];
                b[1] += ens.increment(p, k)[1];
            }
            let x = ens.final_state(p, 0);
            assert!((x[0] - 0.5 - b[0]).abs() < 1e-14 && (x[1] + 1.0 - b[1]).abs() < 1e-14);
        }
        assert!(ens.increment_check().ok);
    }

    #[test]
    fn constant_drift_round_trips_through_inverse() {
        let b = DriftSpec::constant(vec![0.3]);
        let c = cfg(1.0 / 32.0, 8);
        let fwd = simulate_flow(&b, &[vec![0.2]], &c).unwrap();
        let ys: Vec<Vec<f64>> = (0..1).map(|_| fwd.final_state(0, 0).to_vec()).collect();
        let inv = inverse_flow(&b, &ys, &c).unwrap();
        assert!((inv.final_state(0, 0)[0] - 0.2).abs() < 1e-13);
        assert!(inv.backward);
    }

    #[test]
    fn transformed_flow_with_zero_map_is_bitwise_direct() {
        use crate::grid::{GridFunction, SpaceGrid};
        let g = SpaceGrid::new(1, 33, 4.0, false).unwrap();
        let t = TimeGrid::with_step(0.0, 1.0, 0.25).unwrap();
        let map = ItoTanakaMap::from_field(GridFunction::zeros(g, t, 1), 4.0);
        let c = cfg(1.0 / 16.0, 5);
        let a = simulate_flow(&DriftSpec::zero(1), &[vec![0.1], vec![-0.4]], &c).unwrap();
        let b = simulate_transformed_flow(&map, &[vec![0.1], vec![-0.4]], &c).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let b = DriftSpec::new(DriftKind::Sine { amp: 1.0 }, 1).unwrap();
        let c = cfg(1.0 / 32.0, 64);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate_flow(&b, &[vec![0.3]], &c).unwrap());
        let z = four.install(|| simulate_flow(&b, &[vec![0.3]], &c).unwrap());
        assert_eq!(a.x, z.x);
    }

    #[test]
    fn cocycle_defect_shrinks_with_the_step() {
        let b = DriftSpec::new(DriftKind::Sine { amp: 1.0 }, 1).unwrap();
        let fine = 1.0 / 1536.0;
        let coarse = cocycle_defect(&b, &[0.2], 0.0, 1.0 / 3.0, 1.0, 1.0 / 16.0, fine, 64, 3).unwrap();
        let finer = cocycle_defect(&b, &[0.2], 0.0, 1.0 / 3.0, 1.0, 1.0 / 64.0, fine, 64, 3).unwrap();
        assert!(coarse.mean > 0.0);
        assert!(finer.mean < coarse.mean / 2.0);
    }
}
