//! Drift fields b(t, x), their gradients and divergences, and mollified
//! variants b^n = b * ϱ_n.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::moduli::Modulus;
use crate::mollifier::Mollifier;

pub type FieldFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFieldFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Built-in drifts. The scalar shapes act component-wise: b_i(x) = g(x_i).
#[derive(Clone)]
pub enum DriftKind {
    Zero,
    Constant(Vec<f64>),
    /// b(x) = rate·x; rate = -1 is the Ornstein–Uhlenbeck drift.
    Linear { rate: f64 },
    Tanh { amp: f64 },
    Sine { amp: f64 },
    /// g(y) = amp·sign(y)·min(|y|, 1)^α
    Holder { alpha: f64, amp: f64 },
    /// g(y) = amp·|y|
    Abs { amp: f64 },
    /// g(y) = amp·sign(y)·|log min(|y|, e^-(α+1))|^-α, modulus C|log r|^-α
    LogModulus { alpha: f64, amp: f64 },
    /// Divergence-free cellular flow in d = 2:
    /// b = amp·(-sin x₁ cos x₂, cos x₁ sin x₂)
    Cellular { amp: f64 },
    Custom {
        eval: FieldFn,
        /// Row-major Jacobian ∂_j b_i.
        grad: Option<FieldFn>,
        div: Option<ScalarFieldFn>,
    },
}

impl fmt::Debug for DriftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Self::Linear { rate } => write!(f, "Linear {{ rate: {rate} }}"),
            Self::Tanh { amp } => write!(f, "Tanh {{ amp: {amp} }}"),
            Self::Sine { amp } => write!(f, "Sine {{ amp: {amp} }}"),
            Self::Holder { alpha, amp } => write!(f, "Holder {{ alpha: {alpha}, amp: {amp} }}"),
            Self::Abs { amp } => write!(f, "Abs {{ amp: {amp} }}"),
            Self::LogModulus { alpha, amp } => {
                write!(f, "LogModulus {{ alpha: {alpha}, amp: {amp} }}")
            }
            Self::Cellular { amp } => write!(f, "Cellular {{ amp: {amp} }}"),
            Self::Custom { .. } => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub kind: DriftKind,
    pub dim: usize,
    pub mollifier: Option<Mollifier>,
    /// Modulus the drift is claimed to satisfy, if known.
    pub modulus: Option<Modulus>,
}

impl DriftSpec {
    pub fn new(kind: DriftKind, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::validation("drift.dim", "must be 1, 2 or 3"));
        }
        match &kind {
            DriftKind::Constant(c) if c.len() != dim => {
                return Err(Error::validation(
                    "drift.params",
                    format!("constant drift needs {dim} entries, got {}", c.len()),
                ))
            }
            DriftKind::Cellular { .. } if dim != 2 => {
                return Err(Error::validation("drift.dim", "cellular drift is two-dimensional"))
            }
            DriftKind::Holder { alpha, .. } if !(*alpha > 0.0 && *alpha <= 1.0) => {
                return Err(Error::validation("drift.params", "Hölder exponent must lie in (0, 1]"))
            }
            DriftKind::LogModulus { alpha, .. } if !(*alpha > 0.0) => {
                return Err(Error::validation("drift.params", "log-modulus exponent must be positive"))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            dim,
            mollifier: None,
            modulus: None,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(DriftKind::Zero, dim).expect("valid dimension")
    }

    pub fn constant(c: Vec<f64>) -> Self {
        let dim = c.len();
        Self::new(DriftKind::Constant(c), dim).expect("valid constant drift")
    }

    pub fn ou(dim: usize) -> Self {
        Self::new(DriftKind::Linear { rate: -1.0 }, dim).expect("valid dimension")
    }

    pub fn with_modulus(mut self, m: Modulus) -> Self {
        self.modulus = Some(m);
        self
    }

    /// b^n = b * ϱ_n.
    pub fn mollify(&self, n: f64) -> Result<Self> {
        self.mollify_shifted(n, 0.0)
    }

    /// b^n with ϱ_n centered at `shift` instead of 0.
    pub fn mollify_shifted(&self, n: f64, shift: f64) -> Result<Self> {
        if !(n >= 1.0) {
            return Err(Error::validation("drift.mollify", "mollification level must be >= 1"));
        }
        if self.mollifier.is_some() {
            return Err(Error::validation("drift.mollify", "drift is already mollified"));
        }
        let mut out = self.clone();
        out.mollifier = Some(Mollifier::shifted(n, shift, self.dim));
        Ok(out)
    }

    pub fn mollification_level(&self) -> f64 {
        self.mollifier.as_ref().map_or(0.0, |m| m.n)
    }

    fn is_componentwise(&self) -> bool {
        matches!(
            self.kind,
            DriftKind::Tanh { .. }
                | DriftKind::Sine { .. }
                | DriftKind::Holder { .. }
                | DriftKind::Abs { .. }
                | DriftKind::LogModulus { .. }
                | DriftKind::Linear { .. }
        )
    }

    /// The scalar shape g of a component-wise drift.
    fn shape(&self, y: f64) -> f64 {
        match self.kind {
            DriftKind::Tanh { amp } => amp * y.tanh(),
            DriftKind::Sine { amp } => amp * y.sin(),
            DriftKind::Holder { alpha, amp } => amp * y.signum() * y.abs().min(1.0).powf(alpha),
            DriftKind::Abs { amp } => amp * y.abs(),
            DriftKind::LogModulus { alpha, amp } => {
                if y == 0.0 {
                    0.0
                } else {
                    let cap = (-(alpha + 1.0)).exp();
                    amp * y.signum() * y.abs().min(cap).ln().abs().powf(-alpha)
                }
            }
            DriftKind::Linear { rate } => rate * y,
            _ => unreachable!("not a component-wise drift"),
        }
    }

    /// Points where g is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match self.kind {
            DriftKind::Holder { .. } => vec![-1.0, 0.0, 1.0],
            DriftKind::Abs { .. } => vec![0.0],
            DriftKind::LogModulus { alpha, .. } => {
                let cap = (-(alpha + 1.0)).exp();
                vec![-cap, 0.0, cap]
            }
            _ => vec![],
        }
    }

    fn eval_raw(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriftKind::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            DriftKind::Constant(c) => out.copy_from_slice(c),
            DriftKind::Cellular { amp } => {
                out[0] = -amp * x[0].sin() * x[1].cos();
                out[1] = amp * x[0].cos() * x[1].sin();
            }
            DriftKind::Custom { eval, .. } => eval(t, x, out),
            _ => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = self.shape(xi);
                }
            }
        }
    }

    /// b(t, x), mollified if a mollifier is attached.
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let Some(m) = &self.mollifier else {
            return self.eval_raw(t, x, out);
        };
        if self.dim == 1 {
            if self.is_componentwise() {
                out[0] = m.apply_1d_kinked(x[0], &self.kinks(), false, |y| self.shape(y));
                return;
            }
            if matches!(self.kind, DriftKind::Zero | DriftKind::Constant(_)) {
                return self.eval_raw(t, x, out);
            }
        }
        let mut buf = vec![0.0; self.dim];
        for i in 0..self.dim {
            out[i] = m.apply(x, |y| {
                self.eval_raw(t, y, &mut buf);
                buf[i]
            });
        }
    }

    pub fn eval_vec(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(t, x, &mut out);
        out
    }

    /// True if a gradient is available (closed form or through the mollifier).
    pub fn is_differentiable(&self) -> bool {
        if self.mollifier.is_some() {
            return true;
        }
        match &self.kind {
            DriftKind::Holder { .. } | DriftKind::Abs { .. } | DriftKind::LogModulus { .. } => false,
            DriftKind::Custom { grad, .. } => grad.is_some(),
            _ => true,
        }
    }

    /// Row-major Jacobian ∂_j b_i(t, x).
    pub fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        if let Some(m) = &self.mollifier {
            if d == 1 {
                if self.is_componentwise() {
                    out[0] = m.apply_1d_kinked(x[0], &self.kinks(), true, |y| self.shape(y));
                    return Ok(());
                }
            }
            let mut buf = vec![0.0; d];
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = m.apply_grad(x, j, |y| {
                        self.eval_raw(t, y, &mut buf);
                        buf[i]
                    });
                }
            }
            return Ok(());
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            DriftKind::Zero | DriftKind::Constant(_) => {}
            DriftKind::Linear { rate } => (0..d).for_each(|i| out[i * d + i] = *rate),
            DriftKind::Tanh { amp } => (0..d).for_each(|i| {
                let c = x[i].cosh();
                out[i * d + i] = amp / (c * c);
            }),
            DriftKind::Sine { amp } => (0..d).for_each(|i| out[i * d + i] = amp * x[i].cos()),
            DriftKind::Cellular { amp } => {
                out[0] = -amp * x[0].cos() * x[1].cos();
                out[1] = amp * x[0].sin() * x[1].sin();
                out[2] = -amp * x[0].sin() * x[1].sin();
                out[3] = amp * x[0].cos() * x[1].cos();
            }
            DriftKind::Custom { grad: Some(g), .. } => g(t, x, out),
            other => {
                return Err(Error::SmoothnessRequired(format!(
                    "{other:?} has no gradient; mollify it first"
                )))
            }
        }
        Ok(())
    }

    pub fn grad_vec(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.grad(t, x, &mut out)?;
        Ok(out)
    }

    /// div b(t, x).
    pub fn div(&self, t: f64, x: &[f64]) -> Result<f64> {
        if let (None, DriftKind::Custom { div: Some(f), .. }) = (&self.mollifier, &self.kind) {
            return Ok(f(t, x));
        }
        if let (None, DriftKind::Custom { grad: None, .. }) = (&self.mollifier, &self.kind) {
            return Err(Error::SmoothnessRequired(
                "custom drift without gradient or divergence".into(),
            ));
        }
        let g = self.grad_vec(t, x)?;
        Ok((0..self.dim).map(|i| g[i * self.dim + i]).sum())
    }

    /// max |b| over a sample of the box [-L, L]^d (componentwise sup).
    pub fn sup_norm(&self, half_width: f64) -> f64 {
        let per_axis: usize = match self.dim {
            1 => 2001,
            2 => 101,
            _ => 31,
        };
        let mut best = 0.0f64;
        let mut x = vec![0.0; self.dim];
        let mut out = vec![0.0; self.dim];
        for flat in 0..per_axis.pow(self.dim as u32) {
            let mut rest = flat;
            for a in 0..self.dim {
                x[a] = -half_width + 2.0 * half_width * (rest % per_axis) as f64 / (per_axis - 1) as f64;
                rest /= per_axis;
            }
            self.eval(0.0, &x, &mut out);
            best = out.iter().fold(best, |b, v| b.max(v.abs()));
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mollified_constant_and_linear_are_unchanged() {
        let c = DriftSpec::constant(vec![0.7]).mollify(3.0).unwrap();
        assert_eq!(c.eval_vec(0.0, &[0.2])[0], 0.7);
        let lin = DriftSpec::new(DriftKind::Linear { rate: 1.0 }, 1).unwrap().mollify(5.0).unwrap();
        assert!((lin.eval_vec(0.0, &[0.4])[0] - 0.4).abs() < 1e-12);
        assert!((lin.grad_vec(0.0, &[0.4]).unwrap()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mollified_abs_is_positive_at_origin() {
        let b = DriftSpec::new(DriftKind::Abs { amp: 1.0 }, 1).unwrap();
        let bn = b.mollify(4.0).unwrap();
        let v = bn.eval_vec(0.0, &[0.0])[0];
        assert!(v > 0.0 && v < 0.25);
    }

    #[test]
    fn mollification_does_not_increase_sup() {
        let b = DriftSpec::new(DriftKind::Holder { alpha: 0.5, amp: 1.0 }, 1).unwrap();
        let bn = b.mollify(2.0).unwrap();
        assert!(bn.sup_norm(3.0) <= b.sup_norm(3.0) + 1e-12);
    }

    #[test]
    fn rough_drift_needs_mollification_for_gradient() {
        let b = DriftSpec::new(DriftKind::Holder { alpha: 0.5, amp: 1.0 }, 1).unwrap();
        assert!(matches!(b.grad_vec(0.0, &[0.1]), Err(Error::SmoothnessRequired(_))));
        assert!(b.mollify(8.0).unwrap().grad_vec(0.0, &[0.1]).is_ok());
    }

    #[test]
    fn cellular_is_divergence_free() {
        let b = DriftSpec::new(DriftKind::Cellular { amp: 1.0 }, 2).unwrap();
        for x in [[0.1, 0.2], [1.3, -0.7], [-2.0, 0.5]] {
            assert!(b.div(0.0, &x).unwrap().abs() < 1e-15);
            // Jacobian against central differences
            let g = b.grad_vec(0.0, &x).unwrap();
            let h = 1e-6;
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let bp = b.eval_vec(0.0, &xp);
                let bm = b.eval_vec(0.0, &xm);
                for i in 0..2 {
                    assert!((g[i * 2 + j] - (bp[i] - bm[i]) / (2.0 * h)).abs() < 1e-8);
                }
            }
        }
    }
}
