//! Gauss–Legendre rules and an adaptive composite integrator built on them.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the rule by Newton iteration on P_n, starting from the
    /// Chebyshev-like initial guesses. Accurate to machine precision for n <= 200.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Shared 15-point rule used by the adaptive integrator.
    pub fn order15() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(15))
    }

    /// Integrates `f` over [a, b] with this fixed rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Maximum bisection depth of the adaptive integrator.
pub const MAX_LEVELS: usize = 20;
/// Relative change between successive refinements that ends refinement.
pub const REL_TOL: f64 = 1e-8;

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub value: f64,
    /// `false` when some panel hit `MAX_LEVELS` without meeting the tolerance.
    pub converged: bool,
}

/// Adaptive composite Gauss–Legendre: each panel is compared against the sum
/// over its two halves and bisected until they agree to `REL_TOL` (relative to
/// the running magnitude) or `MAX_LEVELS` is reached.
pub fn adaptive<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> Adaptive {
    if a == b {
        return Adaptive {
            value: 0.0,
            converged: true,
        };
    }
    let rule = GaussLegendre::order15();
    let whole = rule.integrate(a, b, &mut f);
    let mut converged = true;
    let value = refine(rule, a, b, whole, 0, whole.abs(), &mut f, &mut converged);
    Adaptive { value, converged }
}

#[allow(clippy::too_many_arguments)]
fn refine<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    depth: usize,
    scale: f64,
    f: &mut F,
    converged: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, &mut *f);
    let right = rule.integrate(m, b, &mut *f);
    let split = left + right;
    let scale = scale.max(split.abs());
    let diff = (split - whole).abs();
    if diff <= REL_TOL * scale || diff <= f64::MIN_POSITIVE {
        return split;
    }
    if depth + 1 >= MAX_LEVELS {
        *converged = false;
        return split;
    }
    refine(rule, a, m, left, depth + 1, scale, f, converged)
        + refine(rule, m, b, right, depth + 1, scale, f, converged)
}
