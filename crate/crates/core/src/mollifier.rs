//! The smooth bump ϱ(z) = c exp(-1/(1 - |z|²)) on the unit ball, its rescaling
//! ϱ_n(z) = n^d ϱ(n z) supported in B_{1/n}, and fixed-node quadrature rules
//! for convolving with it.

use std::sync::OnceLock;

use crate::grid::{GridFunction, SpaceGrid};
use crate::quadrature::{self, GaussLegendre};

/// Unnormalized bump as a function of |u|².
fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

/// d/d(u_i) of the unnormalized bump, divided by u_i.
fn bump_radial_factor(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        let s = 1.0 - r2;
        -2.0 * bump(r2) / (s * s)
    }
}

/// ∫_{B_1} exp(-1/(1 - |u|²)) du in dimension d.
pub fn bump_mass(dim: usize) -> f64 {
    static MASS: OnceLock<[f64; 3]> = OnceLock::new();
    let m = MASS.get_or_init(|| {
        let radial = |k: i32| quadrature::adaptive(0.0, 1.0, |r| r.powi(k) * bump(r * r)).value;
        [
            2.0 * radial(0),
            2.0 * std::f64::consts::PI * radial(1),
            4.0 * std::f64::consts::PI * radial(2),
        ]
    });
    m[dim - 1]
}

/// ϱ_n with an optional offset of its center (used only to illustrate
/// mollifier-dependent selection).
#[derive(Debug, Clone)]
pub struct Mollifier {
    pub n: f64,
    pub shift: f64,
    pub dim: usize,
    rule: Vec<Node>,
}

#[derive(Debug, Clone)]
struct Node {
    z: Vec<f64>,
    weight: f64,
    grad_weight: Vec<f64>,
}

const PANELS_1D: usize = 4;
const NODES_PER_PANEL: usize = 32;
const RADIAL_PANELS: usize = 2;
const RADIAL_NODES: usize = 16;
const ANGLES: usize = 32;
const NODES_PER_AXIS_3D: usize = 24;

/// Reference points u in the unit ball with quadrature weights for du.
fn reference_rule(dim: usize) -> Vec<(Vec<f64>, f64)> {
    match dim {
        1 => {
            let gl = GaussLegendre::new(NODES_PER_PANEL);
            let width = 2.0 / PANELS_1D as f64;
            (0..PANELS_1D)
                .flat_map(|p| {
                    let a = -1.0 + p as f64 * width;
                    gl.nodes
                        .iter()
                        .zip(&gl.weights)
                        .map(move |(&x, &w)| (vec![a + 0.5 * width * (x + 1.0)], 0.5 * width * w))
                        .collect::<Vec<_>>()
                })
                .collect()
        }
        2 => {
            let gl = GaussLegendre::new(RADIAL_NODES);
            let width = 1.0 / RADIAL_PANELS as f64;
            let mut out = Vec::new();
            for p in 0..RADIAL_PANELS {
                for (&x, &w) in gl.nodes.iter().zip(&gl.weights) {
                    let rho = (p as f64 + 0.5 * (x + 1.0)) * width;
                    let wr = 0.5 * width * w * rho;
                    for j in 0..ANGLES {
                        let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / ANGLES as f64;
                        out.push((
                            vec![rho * th.cos(), rho * th.sin()],
                            wr * 2.0 * std::f64::consts::PI / ANGLES as f64,
                        ));
                    }
                }
            }
            out
        }
        _ => {
            let gl = GaussLegendre::new(NODES_PER_AXIS_3D);
            let m = NODES_PER_AXIS_3D;
            (0..m.pow(dim as u32))
                .map(|flat| {
                    let mut rest = flat;
                    let mut u = vec![0.0; dim];
                    let mut w = 1.0;
                    for a in 0..dim {
                        u[a] = gl.nodes[rest % m];
                        w *= gl.weights[rest % m];
                        rest /= m;
                    }
                    (u, w)
                })
                .collect()
        }
    }
}

impl Mollifier {
    pub fn new(n: f64, dim: usize) -> Self {
        Self::shifted(n, 0.0, dim)
    }

    /// Center moved to `shift` along every axis.
    pub fn shifted(n: f64, shift: f64, dim: usize) -> Self {
        assert!(n > 0.0, "mollification level must be positive");
        let mut rule = Vec::new();
        let mut total = 0.0;
        for (u, w) in reference_rule(dim) {
            let r2: f64 = u.iter().map(|v| v * v).sum();
            let b = bump(r2);
            if b == 0.0 {
                continue;
            }
            total += w * b;
            let g = bump_radial_factor(r2);
            rule.push(Node {
                z: u.iter().map(|v| shift + v / n).collect(),
                weight: w * b,
                // ∂ϱ_n(z) = n^(d+1) (∂ϱ)(n z); the n^d cancels against dz
                grad_weight: u.iter().map(|v| w * g * v * n).collect(),
            });
        }
        // discrete normalization: constants are reproduced exactly and linear
        // functions are differentiated exactly
        let mut slope = vec![0.0; dim];
        for node in &rule {
            for a in 0..dim {
                slope[a] -= node.grad_weight[a] * (node.z[a] - shift);
            }
        }
        for node in &mut rule {
            node.weight /= total;
            for a in 0..dim {
                node.grad_weight[a] /= slope[a];
            }
        }
        Self {
            n,
            shift,
            dim,
            rule,
        }
    }

    pub fn radius(&self) -> f64 {
        1.0 / self.n
    }

    /// ϱ_n(z), normalized analytically.
    pub fn density(&self, z: &[f64]) -> f64 {
        let r2: f64 = z
            .iter()
            .map(|v| {
                let u = (v - self.shift) * self.n;
                u * u
            })
            .sum();
        self.n.powi(self.dim as i32) * bump(r2) / bump_mass(self.dim)
    }

    /// ∫ f(x - z) ϱ_n(z) dz with the fixed product rule.
    pub fn apply<F: FnMut(&[f64]) -> f64>(&self, x: &[f64], mut f: F) -> f64 {
        let mut y = vec![0.0; self.dim];
        self.rule
            .iter()
            .map(|node| {
                for a in 0..self.dim {
                    y[a] = x[a] - node.z[a];
                }
                node.weight * f(&y)
            })
            .sum()
    }

    /// ∂_axis ∫ f(x - z) ϱ_n(z) dz = ∫ f(x - z) ∂_axis ϱ_n(z) dz.
    pub fn apply_grad<F: FnMut(&[f64]) -> f64>(&self, x: &[f64], axis: usize, mut f: F) -> f64 {
        let mut y = vec![0.0; self.dim];
        self.rule
            .iter()
            .map(|node| {
                for a in 0..self.dim {
                    y[a] = x[a] - node.z[a];
                }
                node.grad_weight[axis] * f(&y)
            })
            .sum()
    }

    /// 1-D convolution accurate for integrands with isolated kinks: the
    /// support is split at every kink and each piece uses a square-root
    /// substitution clustering nodes at the kink. `derivative` switches the
    /// weight to ϱ_n'.
    pub fn apply_1d_kinked<F: Fn(f64) -> f64>(&self, x: f64, kinks: &[f64], derivative: bool, f: F) -> f64 {
        let r = self.radius();
        let lo = x - self.shift - r;
        let hi = x - self.shift + r;
        let inner: Vec<f64> = kinks.iter().copied().filter(|&k| k > lo && k < hi).collect();
        let mut cuts: Vec<f64> = (0..=PANELS_1D)
            .map(|p| lo + (hi - lo) * p as f64 / PANELS_1D as f64)
            .collect();
        cuts.extend(inner.iter().copied());
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let is_kink = |v: f64| inner.contains(&v);
        let c = 1.0 / bump_mass(1);
        let n = self.n;
        let kernel = |y: f64| {
            let u = (x - y - self.shift) * n;
            if derivative {
                c * n * n * bump_radial_factor(u * u) * u
            } else {
                c * n * bump(u * u)
            }
        };
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        let rule = RULE.get_or_init(|| GaussLegendre::new(32));
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let left_kink = is_kink(a);
            let right_kink = is_kink(b);
            let mid = 0.5 * (a + b);
            // oriented ∫_k^e; clustered pieces use y = k + (e - k) s²
            let piece = |k: f64, e: f64, clustered: bool| {
                if clustered {
                    rule.integrate(0.0, 1.0, |s| {
                        let y = k + (e - k) * s * s;
                        f(y) * kernel(y) * 2.0 * (e - k) * s
                    })
                } else {
                    rule.integrate(k, e, |y| f(y) * kernel(y))
                }
            };
            total += match (left_kink, right_kink) {
                (false, false) => piece(a, b, false),
                (true, false) => piece(a, b, true),
                (false, true) => -piece(b, a, true),
                (true, true) => piece(a, mid, true) - piece(b, mid, true),
            };
        }
        total
    }
}

/// Mollifies every component and time slice of a grid field. When the
/// support radius does not exceed the grid spacing the field is returned
/// unchanged (the mollifier is below grid resolution).
pub fn mollify_grid(f: &GridFunction, n: f64) -> GridFunction {
    let grid: &SpaceGrid = &f.space;
    if 1.0 / n <= grid.spacing() {
        return f.clone();
    }
    let moll = Mollifier::new(n, grid.dim);
    let mut out = f.clone();
    for k in 0..f.time.points() {
        for c in 0..f.components {
            let src = f.slice(k, c);
            let vals: Vec<f64> = (0..grid.len())
                .map(|idx| {
                    let x = grid.point(idx);
                    moll.apply(&x, |y| grid.interpolate(src, y))
                })
                .collect();
            out.slice_mut(k, c).copy_from_slice(&vals);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_matches_known_value() {
        assert!((bump_mass(1) - 0.443_993_816_168_079_4).abs() < 1e-9);
        let m = Mollifier::new(4.0, 1);
        let x = [0.3];
        let total = m.apply(&x, |_| 1.0);
        assert!((total - 1.0).abs() < 1e-14);
        assert!(m.apply_grad(&x, 0, |_| 1.0).abs() < 1e-12);
    }

    #[test]
    fn odd_moments_vanish() {
        for dim in [1, 2] {
            let m = Mollifier::new(3.0, dim);
            let x = vec![0.25; dim];
            let v = m.apply(&x, |y| y[0]);
            assert!((v - 0.25).abs() < 1e-13, "{dim}: {v}");
            let d = m.apply_grad(&x, 0, |y| y[0]);
            assert!((d - 1.0).abs() < 1e-9, "{dim}: {d}");
        }
    }

    #[test]
    fn kinked_rule_matches_direct_quadrature_for_abs() {
        let m = Mollifier::new(4.0, 1);
        let v = m.apply_1d_kinked(0.0, &[0.0], false, f64::abs);
        // oracle: ∫|z| ϱ_4(z) dz by adaptive quadrature on each half
        let c = 1.0 / bump_mass(1);
        let half = quadrature::adaptive(0.0, 0.25, |z| z * 4.0 * c * bump(16.0 * z * z)).value;
        assert!((v - 2.0 * half).abs() < 1e-10, "{v} vs {}", 2.0 * half);
        assert!(v > 0.0);
        // derivative of the mollified |x| at 0 vanishes by symmetry
        assert!(m.apply_1d_kinked(0.0, &[0.0], true, f64::abs).abs() < 1e-12);
    }

    #[test]
    fn kinked_derivative_matches_difference_quotient() {
        let m = Mollifier::new(8.0, 1);
        let f = |y: f64| y.signum() * y.abs().sqrt();
        let x = 0.05;
        let h = 1e-5;
        let fd = (m.apply_1d_kinked(x + h, &[0.0], false, f) - m.apply_1d_kinked(x - h, &[0.0], false, f))
            / (2.0 * h);
        let d = m.apply_1d_kinked(x, &[0.0], true, f);
        assert!((fd - d).abs() < 1e-5 * d.abs(), "{fd} vs {d}");
    }

    #[test]
    fn grid_mollification_below_resolution_is_identity() {
        use crate::grid::TimeGrid;
        let g = SpaceGrid::new(1, 33, 1.0, false).unwrap();
        let tg = TimeGrid::with_step(0.0, 1.0, 0.5).unwrap();
        let f = GridFunction::from_fn(g, tg, 1, |_, x, o| o[0] = x[0].abs());
        let same = mollify_grid(&f, 1000.0);
        assert_eq!(same.values, f.values);
        let smooth = mollify_grid(&f, 8.0);
        // Lipschitz 1 data moves by at most 1/n
        for (a, b) in smooth.values.iter().zip(&f.values) {
            assert!((a - b).abs() <= 1.0 / 8.0 + 1e-12);
        }
    }
}
