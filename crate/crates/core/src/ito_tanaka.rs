//! The change of variables γ(t, x) = x + U(t, x) built from a resolvent
//! solution, its inverse, and the coefficients of the transformed SDE
//!
//!   dY = λU(t, γ⁻¹(t, Y)) dt + [I + ∇U(t, γ⁻¹(t, Y))] dB.
//!
//! Everything off the grid is multilinear interpolation; ∇U and ∇²U come from
//! derivative fields computed once on the grid.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::linalg::{inverse, op_norm, singular_values};
use crate::pde::ResolventSolution;

const MAX_INVERSE_ITERATIONS: usize = 60;
const INVERSE_STEP_TOL: f64 = 1e-13;
const INVERSE_CHECK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ItoTanakaMap {
    /// U with one component per dimension.
    pub u: GridFunction,
    pub lambda: f64,
    /// max over the grid of the operator norm of ∇U.
    pub grad_sup: f64,
    /// ‖∇U‖∞ ≤ 1/2, required by every operation below.
    pub grad_bound: bool,
    /// ∂_j U_i at component i·d + j.
    grad: GridFunction,
    /// ∂_k ∂_j U_i at component (i·d + j)·d + k.
    hess: GridFunction,
}

impl ItoTanakaMap {
    pub fn new(resolvent: &ResolventSolution) -> Self {
        Self::from_field(resolvent.u.clone(), resolvent.lambda)
    }

    /// Builds the map from an arbitrary vector field U.
    pub fn from_field(u: GridFunction, lambda: f64) -> Self {
        let d = u.space.dim;
        assert_eq!(u.components, d, "U needs one component per dimension");
        let mut grad = GridFunction::zeros(u.space.clone(), u.time, d * d);
        let mut hess = GridFunction::zeros(u.space.clone(), u.time, d * d * d);
        for k in 0..u.time.points() {
            for i in 0..d {
                for j in 0..d {
                    let dj = u.gradient(k, i, j);
                    for m in 0..d {
                        let djm = u.space.derivative(&dj, m);
                        hess.slice_mut(k, (i * d + j) * d + m).copy_from_slice(&djm);
                    }
                    grad.slice_mut(k, i * d + j).copy_from_slice(&dj);
                }
            }
        }
        let mut grad_sup = 0.0f64;
        let mut jac = vec![0.0; d * d];
        for k in 0..u.time.points() {
            for idx in 0..u.space.len() {
                for (c, e) in jac.iter_mut().enumerate() {
                    *e = grad.slice(k, c)[idx];
                }
                grad_sup = grad_sup.max(op_norm(&jac, d));
            }
        }
        Self {
            u,
            lambda,
            grad_sup,
            grad_bound: grad_sup <= 0.5,
            grad,
            hess,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.space.dim
    }

    fn require_bound(&self) -> Result<()> {
        if self.grad_bound {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "‖∇U‖∞ = {} exceeds 1/2; increase lambda",
                self.grad_sup
            )))
        }
    }

    pub fn u_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|c| self.u.interpolate(t, c, x)).collect()
    }

    /// ∇U(t, x), row-major.
    pub fn grad_u(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d * d).map(|c| self.grad.interpolate(t, c, x)).collect()
    }

    /// ∂_k ∂_j U_i(t, x) at (i·d + j)·d + k.
    pub fn hess_u(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d * d * d).map(|c| self.hess.interpolate(t, c, x)).collect()
    }

    pub fn gamma(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.require_bound()?;
        Ok(self.gamma_unchecked(t, x))
    }

    fn gamma_unchecked(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let u = self.u_at(t, x);
        x.iter().zip(&u).map(|(a, b)| a + b).collect()
    }

    /// Fixed-point iteration x ← y − U(t, x) from x = y.
    pub fn gamma_inverse(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.require_bound()?;
        let scale = 1.0 + norm(y);
        let mut x = y.to_vec();
        for _ in 0..MAX_INVERSE_ITERATIONS {
            let u = self.u_at(t, &x);
            let next: Vec<f64> = y.iter().zip(&u).map(|(a, b)| a - b).collect();
            let step = dist(&next, &x);
            x = next;
            if step <= INVERSE_STEP_TOL * scale {
                break;
            }
        }
        if dist(&self.gamma_unchecked(t, &x), y) > INVERSE_CHECK_TOL * scale {
            return Err(Error::NoConvergence);
        }
        Ok(x)
    }

    /// ∇γ⁻¹(t, y) = (I + ∇U(t, γ⁻¹(t, y)))⁻¹ from the precomputed ∇U field.
    pub fn grad_gamma_inverse(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let x = self.gamma_inverse(t, y)?;
        let d = self.dim();
        let j = self.sigma_at(t, &x);
        inverse(&j, d).ok_or(Error::NoConvergence)
    }

    /// Central-difference Jacobian of γ⁻¹ at y with spacing h.
    pub fn grad_gamma_inverse_fd(&self, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        let mut yp = y.to_vec();
        for j in 0..d {
            yp[j] = y[j] + h;
            let plus = self.gamma_inverse(t, &yp)?;
            yp[j] = y[j] - h;
            let minus = self.gamma_inverse(t, &yp)?;
            yp[j] = y[j];
            for i in 0..d {
                out[i * d + j] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Ok(out)
    }

    /// I + ∇U(t, x).
    fn sigma_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut s = self.grad_u(t, x);
        for i in 0..d {
            s[i * d + i] += 1.0;
        }
        s
    }

    /// (b̃, σ̃) at (t, y); σ̃ is row-major d×d.
    pub fn transformed_coeffs(&self, t: f64, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.gamma_inverse(t, y)?;
        let drift = self.u_at(t, &x).into_iter().map(|v| self.lambda * v).collect();
        Ok((drift, self.sigma_at(t, &x)))
    }

    /// Smallest and largest singular value of ∇γ = I + ∇U over every grid
    /// point and time step.
    pub fn gradient_sandwich(&self) -> (f64, f64) {
        let d = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let mut s = vec![0.0; d * d];
        for k in 0..self.u.time.points() {
            for idx in 0..self.u.space.len() {
                for (c, e) in s.iter_mut().enumerate() {
                    *e = self.grad.slice(k, c)[idx];
                }
                for i in 0..d {
                    s[i * d + i] += 1.0;
                }
                let sv = singular_values(&s, d);
                hi = hi.max(sv[0]);
                lo = lo.min(sv[d - 1]);
            }
        }
        (lo, hi)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpaceGrid, TimeGrid};
    use crate::pde::solve_resolvent;
    use crate::sde_flow::DriftSpec;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn sine_map(amp: f64) -> ItoTanakaMap {
        let g = SpaceGrid::new(1, 1025, PI, true).unwrap();
        let t = TimeGrid::with_step(0.0, 1.0, 0.5).unwrap();
        let u = GridFunction::from_fn(g, t, 1, |_, x, o| o[0] = amp * x[0].sin());
        ItoTanakaMap::from_field(u, 1.0)
    }

    #[test]
    fn zero_field_is_identity() {
        let g = SpaceGrid::new(2, 9, 2.0, false).unwrap();
        let t = TimeGrid::with_step(0.0, 1.0, 0.25).unwrap();
        let map = ItoTanakaMap::from_field(GridFunction::zeros(g, t, 2), 5.0);
        let y = [0.3, -1.1];
        assert_eq!(map.gamma(0.4, &y).unwrap(), y.to_vec());
        assert_eq!(map.gamma_inverse(0.4, &y).unwrap(), y.to_vec());
        let (b, s) = map.transformed_coeffs(0.4, &y).unwrap();
        assert_eq!(b, vec![0.0, 0.0]);
        assert_eq!(s, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn sine_field_closed_forms() {
        let map = sine_map(0.3);
        assert!(map.grad_bound);
        assert!(map.gamma(0.5, &[0.0]).unwrap()[0].abs() < 1e-15);
        let top = map.gamma(0.5, &[FRAC_PI_2]).unwrap()[0];
        assert!((top - (FRAC_PI_2 + 0.3)).abs() < 1e-12);
        // interpolation error in U is O(h²) with h = π/512
        let back = map.gamma_inverse(0.5, &[FRAC_PI_2 + 0.3]).unwrap()[0];
        assert!((back - FRAC_PI_2).abs() < 1e-5);
    }

    #[test]
    fn round_trip_on_random_points() {
        let map = sine_map(0.45);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let y = [rng.random_range(-3.0..3.0)];
            let t = rng.random_range(0.0..1.0);
            let x = map.gamma_inverse(t, &y).unwrap();
            let yy = map.gamma(t, &x).unwrap();
            assert!((yy[0] - y[0]).abs() <= 1e-10 * (1.0 + y[0].abs()));
        }
    }

    #[test]
    fn large_gradient_is_refused() {
        let map = sine_map(0.8);
        assert!(!map.grad_bound);
        assert!(matches!(map.gamma_inverse(0.0, &[0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_drift_coefficients() {
        let g = SpaceGrid::new(1, 65, 4.0, false).unwrap();
        let lambda = 2.0;
        let c = 0.6;
        let res = solve_resolvent(&DriftSpec::constant(vec![c]), lambda, 1.0, &g, 1.0 / 64.0).unwrap();
        let map = ItoTanakaMap::new(&res);
        for &t in &[0.0, 0.25, 0.5, 1.0] {
            let (b, s) = map.transformed_coeffs(t, &[0.7]).unwrap();
            assert!((b[0] - c * (1.0 - (-lambda * (1.0 - t)).exp())).abs() < 1e-10);
            assert!((s[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sandwich_follows_from_gradient_bound() {
        let map = sine_map(0.45);
        let (lo, hi) = map.gradient_sandwich();
        assert!(lo >= 0.5 && hi <= 1.5);
        let fd = map.grad_gamma_inverse_fd(0.3, &[0.2], 1e-4).unwrap()[0];
        let exact = map.grad_gamma_inverse(0.3, &[0.2]).unwrap()[0];
        assert!((fd - exact).abs() < 1e-3);
        assert!((2.0 / 3.0..=2.0).contains(&fd));
    }
}
