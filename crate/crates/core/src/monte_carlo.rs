//! Moment estimates over flow ensembles, modulus regressions over separation
//! ladders, and mollification convergence tables.
//!
//! Path-level values are computed in parallel and then reduced in path order,
//! so estimates do not depend on the number of worker threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::op_norm;
use crate::rng::path_rng;
use crate::sde_flow::{derivative_flow, simulate_flow, DerivativeScheme, DriftSpec, FlowConfig, FlowEnsemble};

/// Normal 97.5% quantile.
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    /// X(t, x_a).
    State { point: usize },
    /// X(t, x_a) − x_a.
    Displacement { point: usize },
    /// ∇X(t, x_a), operator norm.
    Gradient { point: usize },
    /// X(t, x_a) − X(t, x_b).
    TwoPoint { a: usize, b: usize },
    /// ∇X(t, x_a) − ∇X(t, x_b), operator norm.
    GradientTwoPoint { a: usize, b: usize },
}

impl Quantity {
    pub fn label(&self) -> String {
        match self {
            Quantity::State { point } => format!("X[{point}]"),
            Quantity::Displacement { point } => format!("X[{point}]-x"),
            Quantity::Gradient { point } => format!("gradX[{point}]"),
            Quantity::TwoPoint { a, b } => format!("X[{a}]-X[{b}]"),
            Quantity::GradientTwoPoint { a, b } => format!("gradX[{a}]-gradX[{b}]"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub quantity: String,
    pub p: f64,
    pub estimate: f64,
    /// 95% half-width.
    pub ci: f64,
    pub paths: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// sup over time steps of |quantity|^p, one value per path.
pub fn path_sups(ens: &FlowEnsemble, quantity: Quantity, p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0) {
        return Err(Error::validation("mc.p", "exponent must be positive"));
    }
    let npts = ens.points.len();
    let check = |i: usize| {
        if i < npts {
            Ok(())
        } else {
            Err(Error::validation("mc.quantity", format!("point index {i} out of range")))
        }
    };
    match quantity {
        Quantity::State { point } | Quantity::Displacement { point } | Quantity::Gradient { point } => check(point)?,
        Quantity::TwoPoint { a, b } | Quantity::GradientTwoPoint { a, b } => {
            check(a)?;
            check(b)?;
        }
    }
    if matches!(quantity, Quantity::Gradient { .. } | Quantity::GradientTwoPoint { .. }) && ens.xi.is_none() {
        return Err(Error::MissingArray("xi"));
    }
    let d = ens.dim;
    let steps = ens.time.points();
    (0..ens.paths)
        .into_par_iter()
        .map(|path| {
            let mut best = 0.0f64;
            for k in 0..steps {
                let v = match quantity {
                    Quantity::State { point } => norm(ens.state(path, point, k)),
                    Quantity::Displacement { point } => {
                        let x = ens.state(path, point, k);
                        let diff: Vec<f64> = x.iter().zip(&ens.points[point]).map(|(a, b)| a - b).collect();
                        norm(&diff)
                    }
                    Quantity::Gradient { point } => op_norm(ens.xi_at(path, point, k)?, d),
                    Quantity::TwoPoint { a, b } => {
                        let diff: Vec<f64> = ens
                            .state(path, a, k)
                            .iter()
                            .zip(ens.state(path, b, k))
                            .map(|(x, y)| x - y)
                            .collect();
                        norm(&diff)
                    }
                    Quantity::GradientTwoPoint { a, b } => {
                        let diff: Vec<f64> = ens
                            .xi_at(path, a, k)?
                            .iter()
                            .zip(ens.xi_at(path, b, k)?)
                            .map(|(x, y)| x - y)
                            .collect();
                        op_norm(&diff, d)
                    }
                };
                best = best.max(v);
            }
            Ok(best.powf(p))
        })
        .collect()
}

/// E sup_t |quantity|^p with a normal-approximation 95% interval.
pub fn moment_sup(ens: &FlowEnsemble, quantity: Quantity, p: f64) -> Result<MomentEstimate> {
    let values = path_sups(ens, quantity, p)?;
    let (estimate, ci) = mean_ci(&values);
    Ok(MomentEstimate {
        quantity: quantity.label(),
        p,
        estimate,
        ci,
        paths: values.len(),
    })
}

/// Same estimate with a percentile-bootstrap half-width (half the 2.5–97.5%
/// range of resampled means), for heavy-tailed path values.
pub fn moment_sup_bootstrap(
    ens: &FlowEnsemble,
    quantity: Quantity,
    p: f64,
    resamples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    let values = path_sups(ens, quantity, p)?;
    let (estimate, _) = mean_ci(&values);
    let m = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = path_rng(seed, r as u64);
            (0..m).map(|_| values[rng.random_range(0..m)]).sum::<f64>() / m as f64
        })
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let lo = means[((resamples as f64) * 0.025) as usize];
    let hi = means[(((resamples as f64) * 0.975) as usize).min(resamples - 1)];
    Ok(MomentEstimate {
        quantity: quantity.label(),
        p,
        estimate,
        ci: 0.5 * (hi - lo),
        paths: m,
    })
}

/// Sample mean and 95% normal half-width, summed in index order.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z_95 * (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulusModel {
    /// log m = a + e·log r; reports e.
    Power,
    /// log m = a − e·log|log r|; reports e.
    LogPower,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusFit {
    pub separations: Vec<f64>,
    pub moments: Vec<f64>,
    pub model: ModulusModel,
    pub exponent: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub residual: f64,
}

/// Least-squares fit of moments against separations. Separations must be at
/// least four, dyadically spaced, and below 1 for the log-power model.
pub fn modulus_regression(separations: &[f64], moments: &[f64], model: ModulusModel) -> Result<ModulusFit> {
    if separations.len() != moments.len() || separations.len() < 4 {
        return Err(Error::validation("mc.separations", "need at least four separations"));
    }
    for w in separations.windows(2) {
        let ratio = (w[0] / w[1]).log2();
        if !(ratio.abs() >= 0.5 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(Error::validation("mc.separations", "separations must be dyadically spaced"));
        }
    }
    if moments.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::DegenerateFit("moments must be positive and finite".into()));
    }
    if moments.iter().all(|&m| m == moments[0]) {
        return Err(Error::DegenerateFit("all moments are equal".into()));
    }
    let xs: Vec<f64> = match model {
        ModulusModel::Power => separations.iter().map(|r| r.ln()).collect(),
        ModulusModel::LogPower => {
            if separations.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
                return Err(Error::validation("mc.separations", "log-power model needs separations in (0, 1)"));
            }
            separations.iter().map(|r| r.ln().abs().ln()).collect()
        }
    };
    let ys: Vec<f64> = moments.iter().map(|m| m.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(ModulusFit {
        separations: separations.to_vec(),
        moments: moments.to_vec(),
        model,
        exponent: if model == ModulusModel::Power { slope } else { -slope },
        intercept,
        residual,
    })
}

/// Base point followed by base + 2^{-k} e₁ for k in `ks`.
pub fn separation_ladder(base: &[f64], ks: &[i32]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut points = vec![base.to_vec()];
    let mut seps = Vec::with_capacity(ks.len());
    for &k in ks {
        let r = 2f64.powi(-k);
        let mut p = base.to_vec();
        p[0] += r;
        points.push(p);
        seps.push(r);
    }
    (points, seps)
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub r: f64,
    pub estimate: f64,
    pub ci: f64,
}

/// Two-point moments E sup|X(x) − X(x + r e₁)|^p (or the gradient version)
/// over one shared-noise ensemble, followed by a regression.
pub fn two_point_study(
    b: &DriftSpec,
    base: &[f64],
    ks: &[i32],
    cfg: &FlowConfig,
    p: f64,
    gradient: bool,
    model: ModulusModel,
) -> Result<(Vec<LadderRow>, ModulusFit)> {
    let (points, seps) = separation_ladder(base, ks);
    let mut ens = simulate_flow(b, &points, cfg)?;
    if gradient {
        derivative_flow(b, &mut ens, DerivativeScheme::Exponential)?;
    }
    let rows = seps
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let q = if gradient {
                Quantity::GradientTwoPoint { a: 0, b: i + 1 }
            } else {
                Quantity::TwoPoint { a: 0, b: i + 1 }
            };
            moment_sup(&ens, q, p).map(|m| LadderRow {
                r,
                estimate: m.estimate,
                ci: m.ci,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let moments: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    let fit = modulus_regression(&seps, &moments, model)?;
    Ok((rows, fit))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: f64,
    /// E sup_t |X^n − X^ref|^p and its half-width.
    pub x_error: f64,
    pub x_ci: f64,
    /// E sup_t ‖∇X^n − ∇X^ref‖^p and its half-width.
    pub grad_error: f64,
    pub grad_ci: f64,
}

/// Errors of the flows of b ∗ ϱ_n against the flow of b ∗ ϱ_{4·n_max}, all
/// driven by the same seed.
pub fn convergence_study(
    b: &DriftSpec,
    n_list: &[f64],
    points: &[Vec<f64>],
    cfg: &FlowConfig,
    p: f64,
) -> Result<Vec<ConvergenceRow>> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("mc.n_list", "levels must be nonempty and increasing"));
    }
    let n_ref = 4.0 * n_list[n_list.len() - 1];
    let run = |n: f64| -> Result<FlowEnsemble> {
        let bn = b.mollify(n)?;
        let mut ens = simulate_flow(&bn, points, cfg)?;
        derivative_flow(&bn, &mut ens, DerivativeScheme::Exponential)?;
        Ok(ens)
    };
    let reference = run(n_ref)?;
    n_list
        .par_iter()
        .map(|&n| {
            let ens = run(n)?;
            let d = ens.dim;
            let per_path: Vec<(f64, f64)> = (0..ens.paths)
                .into_par_iter()
                .map(|path| {
                    let mut ex = 0.0f64;
                    let mut eg = 0.0f64;
                    for q in 0..points.len() {
                        for k in 0..ens.time.points() {
                            let dx: Vec<f64> = ens
                                .state(path, q, k)
                                .iter()
                                .zip(reference.state(path, q, k))
                                .map(|(a, c)| a - c)
                                .collect();
                            ex = ex.max(norm(&dx));
                            let dg: Vec<f64> = ens
                                .xi_at(path, q, k)?
                                .iter()
                                .zip(reference.xi_at(path, q, k)?)
                                .map(|(a, c)| a - c)
                                .collect();
                            eg = eg.max(op_norm(&dg, d));
                        }
                    }
                    Ok((ex.powf(p), eg.powf(p)))
                })
                .collect::<Result<Vec<_>>>()?;
            let xs: Vec<f64> = per_path.iter().map(|v| v.0).collect();
            let gs: Vec<f64> = per_path.iter().map(|v| v.1).collect();
            let (x_error, x_ci) = mean_ci(&xs);
            let (grad_error, grad_ci) = mean_ci(&gs);
            Ok(ConvergenceRow {
                n,
                x_error,
                x_ci,
                grad_error,
                grad_ci,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_flow::DriftKind;

    fn cfg(paths: usize, dt: f64) -> FlowConfig {
        FlowConfig {
            start: 0.0,
            end: 1.0,
            dt,
            paths,
            seed: 2024,
        }
    }

    #[test]
    fn running_max_of_brownian_motion() {
        // E max_{t≤1} |B_t| = √(π/2); the discrete max falls short by about
        // 0.5826·√Δt·(two-sided factor), well inside the tolerance used here.
        let ens = simulate_flow(&DriftSpec::zero(1), &[vec![0.0]], &cfg(4000, 1.0 / 256.0)).unwrap();
        let m = moment_sup(&ens, Quantity::Displacement { point: 0 }, 1.0).unwrap();
        let exact = (std::f64::consts::PI / 2.0).sqrt();
        assert!(m.estimate < exact);
        assert!((m.estimate - exact).abs() < m.ci + 0.1);
    }

    #[test]
    fn zero_and_ou_gradients_are_deterministic() {
        let b = DriftSpec::zero(1);
        let mut ens = simulate_flow(&b, &[vec![0.0]], &cfg(50, 1.0 / 16.0)).unwrap();
        derivative_flow(&b, &mut ens, DerivativeScheme::Euler).unwrap();
        let m = moment_sup(&ens, Quantity::Gradient { point: 0 }, 3.0).unwrap();
        assert_eq!((m.estimate, m.ci), (1.0, 0.0));

        let b = DriftSpec::ou(1);
        let mut ens = simulate_flow(&b, &[vec![0.0]], &cfg(50, 1.0 / 16.0)).unwrap();
        derivative_flow(&b, &mut ens, DerivativeScheme::Exponential).unwrap();
        let m = moment_sup(&ens, Quantity::Gradient { point: 0 }, 2.0).unwrap();
        assert_eq!(m.estimate, 1.0);
    }

    #[test]
    fn missing_derivative_is_reported() {
        let ens = simulate_flow(&DriftSpec::zero(1), &[vec![0.0]], &cfg(3, 0.25)).unwrap();
        assert!(matches!(
            moment_sup(&ens, Quantity::Gradient { point: 0 }, 1.0),
            Err(Error::MissingArray("xi"))
        ));
    }

    #[test]
    fn zero_drift_two_point_slope_is_p() {
        let (rows, fit) = two_point_study(
            &DriftSpec::zero(1),
            &[0.0],
            &[3, 4, 5, 6, 7],
            &cfg(20, 1.0 / 16.0),
            2.0,
            false,
            ModulusModel::Power,
        )
        .unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-9);
        assert!(rows.iter().all(|r| r.ci < 1e-12));
    }

    #[test]
    fn regression_guards() {
        let seps = [0.125, 0.0625, 0.03125, 0.015625];
        assert!(matches!(
            modulus_regression(&seps, &[1.0; 4], ModulusModel::Power),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            modulus_regression(&[0.1, 0.07, 0.03, 0.01], &[1.0, 2.0, 3.0, 4.0], ModulusModel::Power),
            Err(Error::Validation { .. })
        ));
        let moments: Vec<f64> = seps.iter().map(|r: &f64| r.ln().abs().powf(-3.0)).collect();
        let fit = modulus_regression(&seps, &moments, ModulusModel::LogPower).unwrap();
        assert!((fit.exponent - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ci_halves_when_paths_quadruple() {
        let b = DriftSpec::zero(1);
        let small = simulate_flow(&b, &[vec![0.0]], &cfg(1000, 1.0 / 32.0)).unwrap();
        let large = simulate_flow(&b, &[vec![0.0]], &cfg(4000, 1.0 / 32.0)).unwrap();
        let q = Quantity::Displacement { point: 0 };
        let ratio = moment_sup(&small, q, 2.0).unwrap().ci / moment_sup(&large, q, 2.0).unwrap().ci;
        assert!((1.6..=2.5).contains(&ratio), "ratio {ratio}");
        let boot = moment_sup_bootstrap(&small, q, 2.0, 400, 1).unwrap();
        let normal = moment_sup(&small, q, 2.0).unwrap();
        assert!((boot.ci / normal.ci - 1.0).abs() < 0.3);
    }

    #[test]
    fn sine_drift_errors_shrink_with_level() {
        let b = DriftSpec::new(DriftKind::Sine { amp: 1.0 }, 1).unwrap();
        let rows = convergence_study(&b, &[2.0, 8.0], &[vec![0.1]], &cfg(8, 1.0 / 16.0), 1.0).unwrap();
        assert!(rows[0].x_error > rows[1].x_error);
        assert!(rows[1].x_error > 0.0);
    }
}
