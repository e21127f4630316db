//! Spectral solvers against independent finite-difference references.

use noisereg::pde::solve_resolvent;
use noisereg::{DriftKind, DriftSpec, SpaceGrid};

/// Crank–Nicolson for v_τ = ½v_xx + b(x)v_x − λv + b(x), v(0) = 0, with
/// reflecting ends. Returns v at every step.
fn reference(xs: &[f64], b: &[f64], lambda: f64, dt: f64, steps: usize) -> Vec<Vec<f64>> {
    let m = xs.len();
    let h = xs[1] - xs[0];
    // row i of the operator as (lower, diag, upper)
    let rows: Vec<(f64, f64, f64)> = (0..m)
        .map(|i| {
            let (lo, up) = (0.5 / (h * h) - b[i] / (2.0 * h), 0.5 / (h * h) + b[i] / (2.0 * h));
            let di = -1.0 / (h * h) - lambda;
            match i {
                0 => (0.0, di, lo + up),
                _ if i == m - 1 => (lo + up, di, 0.0),
                _ => (lo, di, up),
            }
        })
        .collect();
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let (lo, di, up) = rows[i];
                let left = if i > 0 { lo * v[i - 1] } else { 0.0 };
                let right = if i + 1 < m { up * v[i + 1] } else { 0.0 };
                left + di * v[i] + right
            })
            .collect()
    };
    let mut out = vec![vec![0.0; m]];
    let mut v = vec![0.0; m];
    for _ in 0..steps {
        let lv = apply(&v);
        let rhs: Vec<f64> = (0..m).map(|i| v[i] + 0.5 * dt * lv[i] + dt * b[i]).collect();
        // Thomas on (I − dt/2 L)
        let mut cp = vec![0.0; m];
        let mut dp = vec![0.0; m];
        for i in 0..m {
            let (lo, di, up) = rows[i];
            let (a, d, c) = (-0.5 * dt * lo, 1.0 - 0.5 * dt * di, -0.5 * dt * up);
            let (prev_c, prev_d) = if i > 0 { (cp[i - 1], dp[i - 1]) } else { (0.0, 0.0) };
            let den = d - a * prev_c;
            cp[i] = c / den;
            dp[i] = (rhs[i] - a * prev_d) / den;
        }
        for i in (0..m).rev() {
            v[i] = dp[i] - if i + 1 < m { cp[i] * v[i + 1] } else { 0.0 };
        }
        out.push(v.clone());
    }
    out
}

#[test]
fn tanh_resolvent_matches_crank_nicolson() {
    let grid = SpaceGrid::new(1, 257, 8.0, false).unwrap();
    let drift = DriftSpec::new(DriftKind::Tanh { amp: 1.0 }, 1).unwrap();
    let (lambda, horizon, dt) = (10.0, 1.0, 1.0 / 256.0);
    let sol = solve_resolvent(&drift, lambda, horizon, &grid, dt).unwrap();

    let xs: Vec<f64> = (0..grid.len()).map(|i| grid.coord(i)).collect();
    let bs: Vec<f64> = xs.iter().map(|x| x.tanh()).collect();
    let steps = sol.u.time.steps;
    let v = reference(&xs, &bs, lambda, dt, steps);

    let mut gap = 0.0f64;
    for k in 0..=steps {
        // U(t_k) = V(T − t_k)
        let u = sol.u.slice(k, 0);
        for (i, x) in xs.iter().enumerate() {
            if x.abs() <= 4.0 {
                gap = gap.max((u[i] - v[steps - k][i]).abs());
            }
        }
    }
    assert!(gap <= 1e-4, "resolvent vs Crank-Nicolson gap {gap:.2e}");

    // stationary limit far from the kink: U ≈ b/λ once the horizon is long
    let mid = grid.len() / 2 + 48;
    assert!((sol.u.slice(0, 0)[mid] - bs[mid] / lambda).abs() < 5e-3);
}
