//! Stochastic transport du + b·∇u dt + ∇u∘dB = 0 solved pathwise by
//! u(t, x) = u0(X⁻¹(t, x)), the weak-form residual of such solutions, and the
//! non-uniqueness demonstration for a Hölder drift.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::monte_carlo::mean_ci;
use crate::rng::brownian_increments;
use crate::sde_flow::{pull_back, simulate_flow, DriftKind, DriftSpec, FlowConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialDatum {
    Constant { value: f64 },
    /// sin(x₁)
    Sine,
    /// exp(−|x|²/(2w²))
    Gaussian { width: f64 },
    /// tanh(x₁ / w)
    Front { width: f64 },
}

impl InitialDatum {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            InitialDatum::Constant { value } => *value,
            InitialDatum::Sine => x[0].sin(),
            InitialDatum::Gaussian { width } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
            InitialDatum::Front { width } => (x[0] / width).tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportMethod {
    /// Inverse-flow maps built step by step, g_k = g_{k−1}∘Φ_k, with the
    /// displacement g_k − id interpolated multilinearly (linear beyond the box).
    Composition,
    /// Every grid point pulled back through all steps individually.
    Characteristics,
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub drift: DriftSpec,
    pub u0: InitialDatum,
    pub grid: SpaceGrid,
    pub time: TimeGrid,
    pub paths: usize,
    pub seed: u64,
    /// (path, step, component).
    pub increments: Vec<f64>,
    /// (path, step, grid index).
    pub u: Vec<f64>,
}

impl TransportSolution {
    pub fn slice(&self, path: usize, step: usize) -> &[f64] {
        let m = self.grid.len();
        let start = (path * self.time.points() + step) * m;
        &self.u[start..start + m]
    }

    fn path_increments(&self, path: usize) -> &[f64] {
        let n = self.time.steps * self.grid.dim;
        &self.increments[path * n..(path + 1) * n]
    }
}

fn check_dims(b: &DriftSpec, grid: &SpaceGrid) -> Result<()> {
    if b.dim != grid.dim {
        return Err(Error::validation("drift.dim", "drift and grid dimensions differ"));
    }
    Ok(())
}

pub fn solve_transport(
    b: &DriftSpec,
    u0: &InitialDatum,
    grid: &SpaceGrid,
    cfg: &FlowConfig,
    method: TransportMethod,
) -> Result<TransportSolution> {
    check_dims(b, grid)?;
    let time = cfg.time_grid()?;
    let d = grid.dim;
    let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let inc = brownian_increments(cfg.seed, p as u64, time.steps, d, time.dt());
            let u = solve_path(b, u0, grid, &time, &inc, method);
            (inc, u)
        })
        .collect();
    let mut increments = Vec::with_capacity(cfg.paths * time.steps * d);
    let mut u = Vec::with_capacity(cfg.paths * time.points() * grid.len());
    for (i, v) in per_path {
        increments.extend(i);
        u.extend(v);
    }
    Ok(TransportSolution {
        drift: b.clone(),
        u0: u0.clone(),
        grid: grid.clone(),
        time,
        paths: cfg.paths,
        seed: cfg.seed,
        increments,
        u,
    })
}

/// u on one path, laid out (step, grid index).
pub fn solve_path(
    b: &DriftSpec,
    u0: &InitialDatum,
    grid: &SpaceGrid,
    time: &TimeGrid,
    inc: &[f64],
    method: TransportMethod,
) -> Vec<f64> {
    let d = grid.dim;
    let m = grid.len();
    let points: Vec<Vec<f64>> = (0..m).map(|i| grid.point(i)).collect();
    let mut out = Vec::with_capacity(time.points() * m);
    out.extend(points.iter().map(|x| u0.eval(x)));
    match method {
        TransportMethod::Characteristics => {
            for k in 1..=time.steps {
                out.extend(points.iter().map(|x| u0.eval(&pull_back(b, time, inc, k, x))));
            }
        }
        TransportMethod::Composition => {
            // displacement g_k(x) − x, per component
            let mut disp = vec![vec![0.0; m]; d];
            let mut next = disp.clone();
            let mut drift = vec![0.0; d];
            let mut z = vec![0.0; d];
            let dt = time.dt();
            for k in 1..=time.steps {
                for (idx, x) in points.iter().enumerate() {
                    b.eval(time.time(k), x, &mut drift);
                    for i in 0..d {
                        z[i] = x[i] - drift[i] * dt - inc[(k - 1) * d + i];
                    }
                    for i in 0..d {
                        next[i][idx] = z[i] - x[i] + interpolate_linear(grid, &disp[i], &z);
                    }
                }
                std::mem::swap(&mut disp, &mut next);
                out.extend(points.iter().enumerate().map(|(idx, x)| {
                    let y: Vec<f64> = (0..d).map(|i| x[i] + disp[i][idx]).collect();
                    u0.eval(&y)
                }));
            }
        }
    }
    out
}

/// Multilinear interpolation continued linearly beyond a non-periodic box.
fn interpolate_linear(grid: &SpaceGrid, values: &[f64], x: &[f64]) -> f64 {
    if grid.periodic {
        return grid.interpolate(values, x);
    }
    let h = grid.spacing();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..grid.dim {
        let s = (x[a] + grid.half_width) / h;
        let i = s.floor().clamp(0.0, (grid.n - 2) as f64) as usize;
        base[a] = i;
        frac[a] = s - i as f64;
    }
    let mut total = 0.0;
    for corner in 0..(1usize << grid.dim) {
        let mut w = 1.0;
        let mut idx = 0;
        for a in 0..grid.dim {
            let up = (corner >> a) & 1;
            w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
            idx += (base[a] + up) * grid.stride(a);
        }
        total += w * values[idx];
    }
    total
}

/// Smooth compactly supported test functions with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    /// exp(−1/(1 − |x − c|²/ρ²)) on the ball of radius ρ.
    Bump { center: Vec<f64>, radius: f64 },
    /// Π_i cos⁴(π(x_i − c_i)/(2ρ)) on the cube of half-width ρ.
    CosinePower { center: Vec<f64>, radius: f64 },
}

impl TestFunction {
    fn center(&self) -> &[f64] {
        match self {
            TestFunction::Bump { center, .. } | TestFunction::CosinePower { center, .. } => center,
        }
    }

    fn radius(&self) -> f64 {
        match self {
            TestFunction::Bump { radius, .. } | TestFunction::CosinePower { radius, .. } => *radius,
        }
    }

    /// (φ, ∇φ, Δφ) at x.
    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let d = x.len();
        match self {
            TestFunction::Bump { center, radius } => {
                let rho2 = radius * radius;
                let y: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let s: f64 = y.iter().map(|v| v * v).sum::<f64>() / rho2;
                if s >= 1.0 {
                    return (0.0, vec![0.0; d], 0.0);
                }
                let q = 1.0 - s;
                let g = (-1.0 / q).exp();
                let g1 = -g / (q * q);
                let g2 = g * (2.0 * s - 1.0) / q.powi(4);
                let grad: Vec<f64> = y.iter().map(|v| g1 * 2.0 * v / rho2).collect();
                let lap = g2 * 4.0 * s / rho2 + g1 * 2.0 * d as f64 / rho2;
                (g, grad, lap)
            }
            TestFunction::CosinePower { center, radius } => {
                let k = std::f64::consts::PI / (2.0 * radius);
                let mut f = vec![0.0; d];
                let mut f1 = vec![0.0; d];
                let mut f2 = vec![0.0; d];
                for i in 0..d {
                    let y = x[i] - center[i];
                    if y.abs() >= *radius {
                        return (0.0, vec![0.0; d], 0.0);
                    }
                    let (s, c) = (k * y).sin_cos();
                    f[i] = c.powi(4);
                    f1[i] = -4.0 * k * c.powi(3) * s;
                    f2[i] = k * k * (12.0 * c * c * s * s - 4.0 * c.powi(4));
                }
                let prod_except = |skip: usize| (0..d).filter(|&j| j != skip).map(|j| f[j]).product::<f64>();
                let value: f64 = f.iter().product();
                let grad = (0..d).map(|i| f1[i] * prod_except(i)).collect();
                let lap = (0..d).map(|i| f2[i] * prod_except(i)).sum();
                (value, grad, lap)
            }
        }
    }

    fn check_inside(&self, grid: &SpaceGrid) -> Result<()> {
        let margin = grid.half_width - 2.0 * grid.spacing();
        if self.center().len() != grid.dim
            || !(self.radius() > 0.0)
            || self.center().iter().any(|c| c.abs() + self.radius() > margin)
        {
            return Err(Error::validation(
                "transport.test_function",
                "support must lie inside the box, two cells from the edge",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakResidual {
    pub times: Vec<f64>,
    /// (path, step).
    pub per_path: Vec<f64>,
    /// Path mean, 95% half-width and root mean square per step.
    pub mean: Vec<f64>,
    pub ci: Vec<f64>,
    pub rms: Vec<f64>,
}

impl WeakResidual {
    pub fn final_mean(&self) -> (f64, f64) {
        let k = self.times.len() - 1;
        (self.mean[k], self.ci[k])
    }

    pub fn final_rms(&self) -> f64 {
        self.rms[self.times.len() - 1]
    }
}

/// Grid fields of the test function and of div(bφ) at every time step.
struct WeakFields {
    phi: Vec<f64>,
    grad: Vec<Vec<f64>>,
    lap: Vec<f64>,
    /// (step, grid index).
    div_b_phi: Vec<Vec<f64>>,
}

impl WeakFields {
    fn new(b: &DriftSpec, phi: &TestFunction, grid: &SpaceGrid, time: &TimeGrid) -> Result<Self> {
        phi.check_inside(grid)?;
        let d = grid.dim;
        let m = grid.len();
        let mut fields = WeakFields {
            phi: vec![0.0; m],
            grad: vec![vec![0.0; m]; d],
            lap: vec![0.0; m],
            div_b_phi: Vec::with_capacity(time.points()),
        };
        let mut support = Vec::new();
        for idx in 0..m {
            let (v, g, l) = phi.eval(&grid.point(idx));
            fields.phi[idx] = v;
            fields.lap[idx] = l;
            for i in 0..d {
                fields.grad[i][idx] = g[i];
            }
            if v != 0.0 || g.iter().any(|&x| x != 0.0) {
                support.push(idx);
            }
        }
        b.div(time.start, &grid.point(support.first().copied().unwrap_or(0)))?;
        let mut drift = vec![0.0; d];
        for k in 0..time.points() {
            let t = time.time(k);
            let mut row = vec![0.0; m];
            for &idx in &support {
                let x = grid.point(idx);
                b.eval(t, &x, &mut drift);
                let mut v = fields.phi[idx] * b.div(t, &x)?;
                for i in 0..d {
                    v += drift[i] * fields.grad[i][idx];
                }
                row[idx] = v;
            }
            fields.div_b_phi.push(row);
        }
        Ok(fields)
    }

    /// Residual at every step for one path's solution (step, grid index).
    fn residuals(&self, grid: &SpaceGrid, time: &TimeGrid, u: &[f64], inc: &[f64], sum: StochasticSum) -> Vec<f64> {
        let d = grid.dim;
        let m = grid.len();
        let dt = time.dt();
        let pair = |w: &[f64], k: usize| -> f64 {
            let prod: Vec<f64> = w.iter().zip(&u[k * m..(k + 1) * m]).map(|(a, b)| a * b).collect();
            grid.integrate(&prod)
        };
        let lebesgue = |n: usize| match sum {
            StochasticSum::Ito => pair(&self.div_b_phi[n], n) + 0.5 * pair(&self.lap, n),
            StochasticSum::Stratonovich => pair(&self.div_b_phi[n], n),
        };
        let base = pair(&self.phi, 0);
        let mut out = Vec::with_capacity(time.points());
        out.push(0.0);
        let mut accumulated = 0.0;
        for k in 1..=time.steps {
            let j = k - 1;
            accumulated += 0.5 * (lebesgue(j) + lebesgue(k)) * dt;
            for i in 0..d {
                let integrand = match sum {
                    StochasticSum::Ito => pair(&self.grad[i], j),
                    StochasticSum::Stratonovich => 0.5 * (pair(&self.grad[i], j) + pair(&self.grad[i], k)),
                };
                accumulated += integrand * inc[j * d + i];
            }
            out.push(pair(&self.phi, k) - base - accumulated);
        }
        out
    }
}

fn summarize(time: &TimeGrid, per_path: Vec<Vec<f64>>) -> WeakResidual {
    let points = time.points();
    let paths = per_path.len();
    let mut mean = Vec::with_capacity(points);
    let mut ci = Vec::with_capacity(points);
    let mut rms = Vec::with_capacity(points);
    for k in 0..points {
        let col: Vec<f64> = per_path.iter().map(|r| r[k]).collect();
        let (m, c) = mean_ci(&col);
        mean.push(m);
        ci.push(if k == 0 { 0.0 } else { c });
        rms.push((col.iter().map(|v| v * v).sum::<f64>() / paths as f64).sqrt());
    }
    WeakResidual {
        times: (0..points).map(|k| time.time(k)).collect(),
        per_path: per_path.concat(),
        mean,
        ci,
        rms,
    }
}

/// How the dB-integrals of the weak form are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StochasticSum {
    /// Left-point sums with the ½Δφ correction term.
    #[default]
    Ito,
    /// Midpoint (trapezoidal) sums without the correction; a cross-check.
    Stratonovich,
}

/// ∫φu(t) − ∫φu0 − ∫∫div(bφ)u − Σ_i ∫(∫∂_iφ u)dB_i − ½∫∫Δφ u per path and
/// step. The dt-integrals use the trapezoidal rule in time, the dB-integrals
/// follow `sum`, and space uses the trapezoidal rule throughout.
pub fn weak_residual(sol: &TransportSolution, phi: &TestFunction, sum: StochasticSum) -> Result<WeakResidual> {
    let fields = WeakFields::new(&sol.drift, phi, &sol.grid, &sol.time)?;
    let m = sol.grid.len() * sol.time.points();
    let per_path: Vec<Vec<f64>> = (0..sol.paths)
        .into_par_iter()
        .map(|p| {
            let u = &sol.u[p * m..(p + 1) * m];
            fields.residuals(&sol.grid, &sol.time, u, sol.path_increments(p), sum)
        })
        .collect();
    Ok(summarize(&sol.time, per_path))
}

/// Same as solving and then calling [`weak_residual`], without keeping every
/// path's solution in memory.
pub fn weak_residual_study(
    b: &DriftSpec,
    u0: &InitialDatum,
    grid: &SpaceGrid,
    cfg: &FlowConfig,
    phi: &TestFunction,
    method: TransportMethod,
    sum: StochasticSum,
) -> Result<WeakResidual> {
    check_dims(b, grid)?;
    let time = cfg.time_grid()?;
    let fields = WeakFields::new(b, phi, grid, &time)?;
    let per_path: Vec<Vec<f64>> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let inc = brownian_increments(cfg.seed, p as u64, time.steps, grid.dim, time.dt());
            let u = solve_path(b, u0, grid, &time, &inc, method);
            fields.residuals(grid, &time, &u, &inc, sum)
        })
        .collect();
    Ok(summarize(&time, per_path))
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchRow {
    pub t: f64,
    pub escaping: f64,
    /// x'(t) − b(x(t)) for x ≡ 0 and for the escaping branch.
    pub stationary_residual: f64,
    pub escaping_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeterministicRow {
    pub n: f64,
    /// x^n(T) from 0 with ϱ_n centered at +1/(2n), −1/(2n) and 0.
    pub plus_shift: f64,
    pub minus_shift: f64,
    pub centered: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StochasticRow {
    pub n: f64,
    /// Path mean of |X^n(T, 0) − X^{4n}(T, 0)| and its 95% half-width.
    pub gap: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NonuniquenessReport {
    pub alpha: f64,
    pub horizon: f64,
    pub branches: Vec<BranchRow>,
    pub max_branch_residual: f64,
    /// Shifted-mollifier runs; an illustration of mollifier dependence.
    pub deterministic: Vec<DeterministicRow>,
    pub stochastic: Vec<StochasticRow>,
    pub gaps_decreasing: bool,
}

#[derive(Debug, Clone)]
pub struct DemoSettings {
    pub n_list: Vec<f64>,
    pub ode_steps: usize,
    pub flow: FlowConfig,
}

impl DemoSettings {
    pub fn new(horizon: f64, paths: usize, dt: f64, seed: u64) -> Self {
        Self {
            n_list: vec![4.0, 8.0, 16.0, 32.0],
            ode_steps: 4096,
            flow: FlowConfig {
                start: 0.0,
                end: horizon,
                dt,
                paths,
                seed,
            },
        }
    }
}

/// For b(x) = sign(x)|x|^α (capped at |x| = 1): the two deterministic
/// solutions from 0, deterministic mollified runs that pick a branch
/// according to the mollifier's offset, and the stochastic flows X^n(T, 0)
/// whose shared-seed gaps shrink as n grows.
pub fn nonuniqueness_demo(alpha: f64, settings: &DemoSettings) -> Result<NonuniquenessReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation("demo.alpha", "must lie in (0, 1)"));
    }
    if settings.n_list.is_empty() || settings.n_list.iter().any(|&n| !(n >= 1.0)) {
        return Err(Error::validation("mc.n_list", "levels must be at least 1"));
    }
    let horizon = settings.flow.end - settings.flow.start;
    let b = DriftSpec::new(DriftKind::Holder { alpha, amp: 1.0 }, 1)?;
    let field = |x: f64| x.signum() * x.abs().min(1.0).powf(alpha);

    let exponent = 1.0 / (1.0 - alpha);
    let branches: Vec<BranchRow> = (0..=16)
        .map(|i| {
            let t = horizon * i as f64 / 16.0;
            let x = ((1.0 - alpha) * t).powf(exponent);
            let dx = ((1.0 - alpha) * t).powf(alpha * exponent);
            BranchRow {
                t,
                escaping: x,
                stationary_residual: 0.0 - field(0.0),
                escaping_residual: dx - field(x),
            }
        })
        .collect();
    let max_branch_residual = branches
        .iter()
        .fold(0.0f64, |m, r| m.max(r.stationary_residual.abs()).max(r.escaping_residual.abs()));

    let deterministic = settings
        .n_list
        .par_iter()
        .map(|&n| {
            let run = |shift: f64| -> Result<f64> {
                let bn = b.mollify_shifted(n, shift)?;
                Ok(rk4(|x| bn.eval_vec(0.0, &[x])[0], 0.0, horizon, settings.ode_steps))
            };
            Ok(DeterministicRow {
                n,
                plus_shift: run(0.5 / n)?,
                minus_shift: run(-0.5 / n)?,
                centered: run(0.0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut levels: Vec<f64> = settings.n_list.to_vec();
    levels.extend(settings.n_list.iter().map(|n| 4.0 * n));
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let finals: Vec<(f64, Vec<f64>)> = levels
        .par_iter()
        .map(|&n| {
            let ens = simulate_flow(&b.mollify(n)?, &[vec![0.0]], &settings.flow)?;
            Ok((n, (0..ens.paths).map(|p| ens.final_state(p, 0)[0]).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    let lookup = |n: f64| &finals.iter().find(|(m, _)| *m == n).expect("level simulated").1;
    let stochastic: Vec<StochasticRow> = settings
        .n_list
        .iter()
        .map(|&n| {
            let gaps: Vec<f64> = lookup(n).iter().zip(lookup(4.0 * n)).map(|(a, c)| (a - c).abs()).collect();
            let (gap, ci) = mean_ci(&gaps);
            StochasticRow { n, gap, ci }
        })
        .collect();
    let gaps_decreasing = stochastic.windows(2).all(|w| w[1].gap < w[0].gap);
    Ok(NonuniquenessReport {
        alpha,
        horizon,
        branches,
        max_branch_residual,
        deterministic,
        stochastic,
        gaps_decreasing,
    })
}

fn rk4<F: Fn(f64) -> f64>(f: F, x0: f64, horizon: f64, steps: usize) -> f64 {
    let h = horizon / steps as f64;
    let mut x = x0;
    for _ in 0..steps {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}
