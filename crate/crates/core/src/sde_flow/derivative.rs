//! Derivative flow ξ = ∇X along simulated trajectories and the determinant
//! identity det ∇X = exp ∫ div b(r, X) dr.

use rayon::prelude::*;
use serde::Serialize;

use super::{DriftSpec, FlowEnsemble};
use crate::error::{Error, Result};
use crate::ito_tanaka::ItoTanakaMap;
use crate::linalg::{det, expm, identity, inverse, matmul};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DerivativeScheme {
    /// ξ ← ξ + A ξ Δt (+ noise terms).
    Euler,
    /// ξ ← exp(A Δt + ...) ξ, exact for constant coefficients.
    Exponential,
}

fn require_forward(ens: &FlowEnsemble, dim: usize) -> Result<()> {
    if ens.backward {
        return Err(Error::validation("flow.direction", "derivative flows need a forward ensemble"));
    }
    if ens.dim != dim {
        return Err(Error::validation("drift.dim", "drift and ensemble dimensions differ"));
    }
    Ok(())
}

/// ξ_{k+1} from ξ_k under dξ = ∇b(t, X) ξ dt. Fills `ens.xi`.
pub fn derivative_flow(b: &DriftSpec, ens: &mut FlowEnsemble, scheme: DerivativeScheme) -> Result<()> {
    require_forward(ens, b.dim)?;
    if !b.is_differentiable() {
        return Err(Error::SmoothnessRequired(format!("{:?} has no gradient", b.kind)));
    }
    let d = ens.dim;
    let time = ens.time;
    let dt = time.dt();
    let e: &FlowEnsemble = ens;
    let per_path = (0..e.paths)
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(e.points.len() * time.points() * d * d);
            let mut jac = vec![0.0; d * d];
            for q in 0..e.points.len() {
                let mut xi = identity(d);
                out.extend_from_slice(&xi);
                for k in 0..time.steps {
                    b.grad(time.time(k), e.state(p, q, k), &mut jac)?;
                    xi = match scheme {
                        DerivativeScheme::Euler => {
                            let a = matmul(&jac, &xi, d);
                            xi.iter().zip(&a).map(|(x, a)| x + a * dt).collect()
                        }
                        DerivativeScheme::Exponential => {
                            let step: Vec<f64> = jac.iter().map(|v| v * dt).collect();
                            matmul(&expm(&step, d), &xi, d)
                        }
                    };
                    out.extend_from_slice(&xi);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    ens.xi = Some(per_path.concat());
    Ok(())
}

/// Integrates dξ = A₁ξ dt + Σ_m A₂^(m) ξ dB^m for ξ = ∇_y Y along the
/// transformed process, with A₁ = λ∇U·∇γ⁻¹ and A₂^(m)_{ij} = Σ_l ∂_m∂_l U_i
/// (∇γ⁻¹)_{lj}, then stores ∇X = ∇γ⁻¹(t, Y) ξ ∇γ(s, x) in `ens.xi`.
pub fn derivative_flow_transformed(map: &ItoTanakaMap, ens: &mut FlowEnsemble, scheme: DerivativeScheme) -> Result<()> {
    require_forward(ens, map.dim())?;
    ens.y.as_ref().ok_or(Error::MissingArray("y"))?;
    let d = ens.dim;
    let time = ens.time;
    let dt = time.dt();
    let npts = ens.points.len();
    let e: &FlowEnsemble = ens;
    let per_path = (0..e.paths)
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(npts * time.points() * d * d);
            for q in 0..npts {
                let x0 = &e.points[q];
                let mut grad_gamma0 = map.grad_u(time.start, x0);
                for i in 0..d {
                    grad_gamma0[i * d + i] += 1.0;
                }
                let mut xi = identity(d);
                for k in 0..=time.steps {
                    let t = time.time(k);
                    let x = e.state(p, q, k);
                    let gu = map.grad_u(t, x);
                    let mut sigma = gu.clone();
                    for i in 0..d {
                        sigma[i * d + i] += 1.0;
                    }
                    let g_inv = inverse(&sigma, d).ok_or(Error::NoConvergence)?;
                    out.extend_from_slice(&matmul(&matmul(&g_inv, &xi, d), &grad_gamma0, d));
                    if k == time.steps {
                        break;
                    }
                    let hess = map.hess_u(t, x);
                    let a1: Vec<f64> = matmul(&gu, &g_inv, d).iter().map(|v| map.lambda * v).collect();
                    let db = e.increment(p, k);
                    let a2: Vec<Vec<f64>> = (0..d)
                        .map(|m| {
                            let mut h = vec![0.0; d * d];
                            for i in 0..d {
                                for l in 0..d {
                                    h[i * d + l] = hess[(i * d + l) * d + m];
                                }
                            }
                            matmul(&h, &g_inv, d)
                        })
                        .collect();
                    xi = match scheme {
                        DerivativeScheme::Euler => {
                            let mut gen: Vec<f64> = a1.iter().map(|v| v * dt).collect();
                            for (m, a) in a2.iter().enumerate() {
                                for (g, v) in gen.iter_mut().zip(a) {
                                    *g += v * db[m];
                                }
                            }
                            let inc = matmul(&gen, &xi, d);
                            xi.iter().zip(&inc).map(|(x, v)| x + v).collect()
                        }
                        DerivativeScheme::Exponential => {
                            let mut gen: Vec<f64> = a1.iter().map(|v| v * dt).collect();
                            for (m, a) in a2.iter().enumerate() {
                                let sq = matmul(a, a, d);
                                for ((g, v), s) in gen.iter_mut().zip(a).zip(&sq) {
                                    *g += v * db[m] - 0.5 * s * dt;
                                }
                            }
                            matmul(&expm(&gen, d), &xi, d)
                        }
                    };
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    ens.xi = Some(per_path.concat());
    Ok(())
}

/// Finite-difference stencil spacing max(1e-4, 10Δt).
pub fn default_stencil(dt: f64) -> f64 {
    (10.0 * dt).max(1e-4)
}

#[derive(Debug, Clone, Serialize)]
pub struct LiouvilleReport {
    pub h_j: f64,
    /// exp ∫ div b at the final time, (path, point).
    pub exp_integral: Vec<f64>,
    /// det of the central-difference Jacobian at the final time.
    pub fd: Vec<f64>,
    pub max_rel_gap: f64,
    pub mean_rel_gap: f64,
}

/// Determinant of ∇X two ways: exp of the trapezoidal integral of div b
/// along each trajectory (stored per step in `ens.det`), and the determinant
/// of a central-difference Jacobian from initial points x ± h_J e_j driven by
/// the same increments.
pub fn liouville_det(b: &DriftSpec, ens: &mut FlowEnsemble, h_j: Option<f64>) -> Result<LiouvilleReport> {
    require_forward(ens, b.dim)?;
    let d = ens.dim;
    let time = ens.time;
    let dt = time.dt();
    let h = h_j.unwrap_or_else(|| default_stencil(dt));
    b.div(time.start, &ens.points[0])?;
    let e: &FlowEnsemble = ens;
    let npts = e.points.len();
    let per_path = (0..e.paths)
        .into_par_iter()
        .map(|p| {
            let inc = e.path_increments(p);
            let mut dets = Vec::with_capacity(npts * time.points());
            let mut finals = Vec::with_capacity(npts);
            for q in 0..npts {
                let mut integral = 0.0;
                let mut prev = b.div(time.time(0), e.state(p, q, 0))?;
                dets.push(1.0);
                for k in 1..=time.steps {
                    let cur = b.div(time.time(k), e.state(p, q, k))?;
                    integral += 0.5 * (prev + cur) * dt;
                    prev = cur;
                    dets.push(integral.exp());
                }
                let mut jac = vec![0.0; d * d];
                let mut x = e.points[q].clone();
                for j in 0..d {
                    x[j] += h;
                    let plus = euler_endpoint(b, &x, &time, inc);
                    x[j] -= 2.0 * h;
                    let minus = euler_endpoint(b, &x, &time, inc);
                    x[j] += h;
                    for i in 0..d {
                        jac[i * d + j] = (plus[i] - minus[i]) / (2.0 * h);
                    }
                }
                finals.push((integral.exp(), det(&jac, d)));
            }
            Ok((dets, finals))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all_dets = Vec::with_capacity(e.paths * npts * time.points());
    let mut exp_integral = Vec::with_capacity(e.paths * npts);
    let mut fd = Vec::with_capacity(e.paths * npts);
    for (dets, finals) in per_path {
        all_dets.extend(dets);
        for (a, f) in finals {
            exp_integral.push(a);
            fd.push(f);
        }
    }
    let gaps: Vec<f64> = exp_integral.iter().zip(&fd).map(|(a, f)| (f - a).abs() / a.abs()).collect();
    ens.det = Some(all_dets);
    Ok(LiouvilleReport {
        h_j: h,
        max_rel_gap: gaps.iter().fold(0.0f64, |m, g| m.max(*g)),
        mean_rel_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
        exp_integral,
        fd,
    })
}

fn euler_endpoint(b: &DriftSpec, x0: &[f64], time: &crate::grid::TimeGrid, inc: &[f64]) -> Vec<f64> {
    let d = b.dim;
    let dt = time.dt();
    let mut x = x0.to_vec();
    let mut drift = vec![0.0; d];
    for k in 0..time.steps {
        b.eval(time.time(k), &x, &mut drift);
        for i in 0..d {
            x[i] = x[i] + drift[i] * dt + inc[k * d + i];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::super::{simulate_flow, simulate_transformed_flow, DriftKind, FlowConfig};
    use super::*;
    use crate::grid::{GridFunction, SpaceGrid, TimeGrid};

    fn cfg(dt: f64, paths: usize) -> FlowConfig {
        FlowConfig {
            start: 0.0,
            end: 1.0,
            dt,
            paths,
            seed: 5,
        }
    }

    #[test]
    fn zero_drift_has_identity_derivative_and_unit_determinant() {
        let b = DriftSpec::zero(2);
        let mut ens = simulate_flow(&b, &[vec![0.1, 0.2]], &cfg(1.0 / 16.0, 4)).unwrap();
        derivative_flow(&b, &mut ens, DerivativeScheme::Euler).unwrap();
        assert_eq!(ens.xi_at(3, 0, 16).unwrap(), &[1.0, 0.0, 0.0, 1.0]);
        let rep = liouville_det(&b, &mut ens, None).unwrap();
        assert!(rep.exp_integral.iter().all(|&v| v == 1.0));
        assert!(rep.fd.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ou_exponential_scheme_is_exact() {
        let b = DriftSpec::ou(1);
        let mut ens = simulate_flow(&b, &[vec![0.4]], &cfg(1.0 / 32.0, 3)).unwrap();
        derivative_flow(&b, &mut ens, DerivativeScheme::Exponential).unwrap();
        for k in 0..=32 {
            let t = k as f64 / 32.0;
            assert!((ens.xi_at(1, 0, k).unwrap()[0] - (-t).exp()).abs() < 1e-13);
        }
        let rep = liouville_det(&b, &mut ens, None).unwrap();
        assert!((rep.exp_integral[0] - (-1.0f64).exp()).abs() < 1e-14);
        // Euler Jacobian is (1 − Δt)^N
        assert!((rep.fd[0] - (1.0 - 1.0 / 32.0f64).powi(32)).abs() < 1e-9);
    }

    #[test]
    fn rough_drift_needs_smoothing() {
        let b = DriftSpec::new(DriftKind::Abs { amp: 1.0 }, 1).unwrap();
        let mut ens = simulate_flow(&b, &[vec![0.0]], &cfg(0.25, 1)).unwrap();
        assert!(matches!(
            derivative_flow(&b, &mut ens, DerivativeScheme::Euler),
            Err(Error::SmoothnessRequired(_))
        ));
        assert!(matches!(liouville_det(&b, &mut ens, None), Err(Error::SmoothnessRequired(_))));
    }

    #[test]
    fn zero_map_transformed_derivative_is_identity() {
        let g = SpaceGrid::new(1, 33, 4.0, false).unwrap();
        let t = TimeGrid::with_step(0.0, 1.0, 0.25).unwrap();
        let map = ItoTanakaMap::from_field(GridFunction::zeros(g, t, 1), 2.0);
        let mut ens = simulate_transformed_flow(&map, &[vec![0.3]], &cfg(1.0 / 8.0, 2)).unwrap();
        derivative_flow_transformed(&map, &mut ens, DerivativeScheme::Exponential).unwrap();
        assert!(ens.xi.as_ref().unwrap().iter().all(|&v| v == 1.0));
    }
}
