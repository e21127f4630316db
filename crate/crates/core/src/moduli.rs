//! Modulus-of-continuity calculus.
//!
//! A [`Modulus`] is a nondecreasing function φ on [0, r0] with φ(0) = 0. The
//! integrals that control second-derivative and flow-gradient regularity are
//!
//! ```text
//! dini(a, b)   = ∫_a^b φ(s)/s ds
//! tail(r, δ)   = r ∫_r^δ φ(s)/s² ds
//! F_δ(r)       = dini(0, r) + φ(r) + tail(r, δ) + r
//! ```
//!
//! All of them are evaluated after the substitution s = e^v, which turns the
//! 1/s endpoint singularity at zero into a semi-infinite but smooth integrand.
//! The semi-infinite range is covered by panels of geometrically growing width;
//! convergence (or divergence) is read off the sequence of panel contributions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Smallest radius used by limit estimation.
pub const LIMIT_FLOOR: f64 = 1e-12;
/// Number of dyadic levels r0·2^-k, k = 1..=LIMIT_LEVELS.
pub const LIMIT_LEVELS: usize = 40;
/// Allowed growth of a ratio sequence over its last `BOUNDED_WINDOW` samples.
pub const BOUNDED_GROWTH: f64 = 1.05;
pub const BOUNDED_WINDOW: usize = 10;
/// Minimum number of sample points for the concavity check.
pub const CONCAVITY_SAMPLES: usize = 256;

const PANEL_TOL: f64 = 1e-13;
const MAX_PANELS: usize = 1000;
const DIVERGENCE_RATIO: f64 = 0.999;

/// Regularity classes for moduli. The Hölder variants refer to ψ(r) = r^-ϑ φ(r).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularityClass {
    Dini,
    HolderDini,
    StrongHolder,
    WeakHolder,
    Holder,
    NotDini,
    Unknown,
}

/// Built-in modulus shapes.
#[derive(Clone)]
pub enum ModulusFamily {
    /// φ(r) = C r^ϑ |log r|^α
    PowerLog { c: f64, theta: f64, alpha: f64 },
    /// φ(r) = C |log r|^-α
    InverseLog { c: f64, alpha: f64 },
    /// φ(r) = C r
    Linear { c: f64 },
    /// φ ≡ 0
    Zero,
    /// (r, φ(r)) pairs, interpolated linearly in (log r, log φ).
    Tabulated(Vec<(f64, f64)>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ModulusFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PowerLog { c, theta, alpha } => f
                .debug_struct("PowerLog")
                .field("c", c)
                .field("theta", theta)
                .field("alpha", alpha)
                .finish(),
            Self::InverseLog { c, alpha } => f
                .debug_struct("InverseLog")
                .field("c", c)
                .field("alpha", alpha)
                .finish(),
            Self::Linear { c } => f.debug_struct("Linear").field("c", c).finish(),
            Self::Zero => f.write_str("Zero"),
            Self::Tabulated(t) => f.debug_tuple("Tabulated").field(&t.len()).finish(),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Modulus {
    pub family: ModulusFamily,
    /// Cutoff radius, in (0, 1).
    pub r0: f64,
    pub claimed_class: RegularityClass,
}

impl Modulus {
    /// Builds a modulus and classifies it from its family parameters.
    pub fn new(family: ModulusFamily, r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0 < 1.0) {
            return Err(Error::validation("modulus.r0", "must lie in (0, 1)"));
        }
        if let ModulusFamily::Tabulated(table) = &family {
            validate_table(table)?;
        }
        let claimed_class = classify(&family);
        Ok(Self {
            family,
            r0,
            claimed_class,
        })
    }

    pub fn power_log(c: f64, theta: f64, alpha: f64, r0: f64) -> Result<Self> {
        Self::new(ModulusFamily::PowerLog { c, theta, alpha }, r0)
    }

    pub fn inverse_log(c: f64, alpha: f64, r0: f64) -> Result<Self> {
        Self::new(ModulusFamily::InverseLog { c, alpha }, r0)
    }

    pub fn linear(c: f64, r0: f64) -> Result<Self> {
        Self::new(ModulusFamily::Linear { c }, r0)
    }

    pub fn with_class(mut self, class: RegularityClass) -> Self {
        self.claimed_class = class;
        self
    }

    /// φ(r); zero for r <= 0.
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match &self.family {
            ModulusFamily::Tabulated(t) => interpolate_table(t, r),
            ModulusFamily::Custom(f) => f(r),
            _ => self.eval_log(r.ln()),
        }
    }

    /// φ(e^v), computed without forming e^v where the family allows it so that
    /// arbitrarily small radii stay representable.
    pub fn eval_log(&self, v: f64) -> f64 {
        match &self.family {
            ModulusFamily::PowerLog { c, theta, alpha } => {
                if *alpha == 0.0 {
                    c * (theta * v).exp()
                } else {
                    c * (theta * v + alpha * v.abs().ln()).exp()
                }
            }
            ModulusFamily::InverseLog { c, alpha } => c * (-alpha * v.abs().ln()).exp(),
            ModulusFamily::Linear { c } => c * v.exp(),
            ModulusFamily::Zero => 0.0,
            _ => self.eval(v.exp()),
        }
    }

    /// Checks nonnegativity and monotonicity on a dense sample of [0, r0], and
    /// φ(0) = 0 for the Hölder-type classes.
    pub fn validate(&self) -> Result<()> {
        let mut prev = self.eval(0.0);
        if prev < 0.0 {
            return Err(Error::validation("modulus", "φ(0) is negative"));
        }
        let n = 2048;
        let mut rs: Vec<f64> = (1..=n)
            .map(|i| self.r0 * i as f64 / n as f64)
            .chain((1..=n).map(|i| self.r0 * (-(i as f64) * 27.0 / n as f64).exp()))
            .collect();
        rs.sort_by(f64::total_cmp);
        for r in rs {
            let v = self.eval(r);
            if !(v >= 0.0) {
                return Err(Error::validation(
                    "modulus",
                    format!("φ({r}) = {v} is negative or not finite"),
                ));
            }
            if v < prev * (1.0 - 1e-12) - 1e-300 {
                return Err(Error::validation(
                    "modulus",
                    format!("φ decreases near r = {r}"),
                ));
            }
            prev = v;
        }
        Ok(())
    }
}

fn validate_table(table: &[(f64, f64)]) -> Result<()> {
    if table.len() < 2 {
        return Err(Error::validation(
            "modulus.table",
            "needs at least two (r, φ) pairs",
        ));
    }
    for w in table.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::validation(
                "modulus.table",
                "radii must be strictly increasing",
            ));
        }
    }
    if table.iter().any(|&(r, p)| !(r > 0.0) || !(p > 0.0)) {
        return Err(Error::validation(
            "modulus.table",
            "radii and values must be positive",
        ));
    }
    Ok(())
}

fn interpolate_table(t: &[(f64, f64)], r: f64) -> f64 {
    let seg = match t.iter().position(|&(x, _)| x >= r) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => t.len() - 2,
    };
    let (r1, p1) = t[seg];
    let (r2, p2) = t[seg + 1];
    let slope = (p2.ln() - p1.ln()) / (r2.ln() - r1.ln());
    (p1.ln() + slope * (r.ln() - r1.ln())).exp()
}

/// Classification of the built-in families, following the power-log
/// enumeration: α < -1 Hölder-Dini, α < 0 strong Hölder, α = 0 Hölder,
/// α > 0 weak Hölder (all for ϑ in (0, 1)).
pub fn classify(family: &ModulusFamily) -> RegularityClass {
    match *family {
        ModulusFamily::PowerLog { theta, alpha, .. } => {
            if theta > 0.0 && theta < 1.0 {
                if alpha < -1.0 {
                    RegularityClass::HolderDini
                } else if alpha < 0.0 {
                    RegularityClass::StrongHolder
                } else if alpha == 0.0 {
                    RegularityClass::Holder
                } else {
                    RegularityClass::WeakHolder
                }
            } else if theta >= 1.0 && alpha == 0.0 {
                RegularityClass::Holder
            } else if theta == 0.0 && alpha < -1.0 {
                RegularityClass::Dini
            } else if theta == 0.0 {
                RegularityClass::NotDini
            } else {
                RegularityClass::Unknown
            }
        }
        ModulusFamily::InverseLog { alpha, .. } => {
            if alpha > 1.0 {
                RegularityClass::Dini
            } else {
                RegularityClass::NotDini
            }
        }
        ModulusFamily::Linear { .. } => RegularityClass::Holder,
        ModulusFamily::Zero => RegularityClass::Holder,
        // ψ constant, tabulated and custom shapes are not decidable from parameters
        ModulusFamily::Tabulated(_) | ModulusFamily::Custom(_) => RegularityClass::Unknown,
    }
}

fn check_radius(m: &Modulus, name: &str, r: f64) -> Result<()> {
    if !(r >= 0.0) || r > m.r0 * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "{name} = {r} must lie in [0, r0 = {}]",
            m.r0
        )));
    }
    Ok(())
}

/// Result of integrating φ(s)/s from zero, with the panel partial sums.
#[derive(Debug, Clone, Serialize)]
pub struct DiniSeries {
    pub value: f64,
    pub partial_sums: Vec<f64>,
    pub converged: bool,
}

/// Sums panels [ln b - 2^j, ln b - 2^(j-1)] in v = ln s. A geometric tail
/// correction is added once the contributions decay; contributions that stop
/// decaying mark divergence.
fn dini_from_zero(m: &Modulus, b: f64) -> DiniSeries {
    let vb = b.ln();
    let mut sum = 0.0;
    let mut partial_sums = Vec::new();
    let mut prev_piece: Option<f64> = None;
    let mut stalled = 0usize;
    let mut upper = 0.0f64;
    for j in 0..MAX_PANELS {
        let lower = if j == 0 { 1.0 } else { 2.0 * upper.max(1.0) };
        let piece = quadrature::adaptive(vb - lower, vb - upper, |v| m.eval_log(v)).value;
        upper = lower;
        sum += piece;
        partial_sums.push(sum);
        if !piece.is_finite() || !sum.is_finite() {
            return DiniSeries {
                value: sum,
                partial_sums,
                converged: false,
            };
        }
        if piece == 0.0 && j > 0 {
            return DiniSeries {
                value: sum,
                partial_sums,
                converged: true,
            };
        }
        if let Some(prev) = prev_piece.filter(|p| *p > 0.0) {
            let ratio = piece / prev;
            if ratio >= DIVERGENCE_RATIO {
                stalled += 1;
            } else {
                stalled = 0;
            }
            if j >= 8 && stalled >= 4 {
                return DiniSeries {
                    value: sum,
                    partial_sums,
                    converged: false,
                };
            }
            if ratio < DIVERGENCE_RATIO {
                let tail = piece * ratio / (1.0 - ratio);
                if piece.abs() + tail.abs() <= PANEL_TOL * sum.abs() {
                    let value = sum + tail;
                    partial_sums.push(value);
                    return DiniSeries {
                        value,
                        partial_sums,
                        converged: true,
                    };
                }
            }
        }
        prev_piece = Some(piece);
    }
    DiniSeries {
        value: sum,
        partial_sums,
        converged: false,
    }
}

/// ∫_a^b φ(r)/r dr for 0 <= a < b <= r0.
pub fn dini_integral(m: &Modulus, a: f64, b: f64) -> Result<f64> {
    check_radius(m, "a", a)?;
    check_radius(m, "b", b)?;
    if !(a < b) {
        return Err(Error::Domain(format!("need a < b, got a = {a}, b = {b}")));
    }
    if a > 0.0 {
        let r = quadrature::adaptive(a.ln(), b.ln(), |v| m.eval_log(v));
        if !r.value.is_finite() {
            return Err(Error::NonFinite { partial: r.value });
        }
        return Ok(r.value);
    }
    let series = dini_from_zero(m, b);
    if series.converged {
        Ok(series.value)
    } else {
        Err(Error::NonFinite {
            partial: series.value,
        })
    }
}

/// r ∫_r^δ φ(s)/s² ds for 0 < r < δ <= r0.
pub fn tail_integral(m: &Modulus, r: f64, delta: f64) -> Result<f64> {
    check_radius(m, "delta", delta)?;
    if !(r > 0.0) || r >= delta {
        return Err(Error::Domain(format!(
            "tail integral needs 0 < r < delta, got r = {r}, delta = {delta}"
        )));
    }
    let lr = r.ln();
    // r/s = e^(ln r - v) keeps the weight bounded by one
    let res = quadrature::adaptive(lr, delta.ln(), |v| m.eval_log(v) * (lr - v).exp());
    Ok(res.value)
}

/// F_δ(r) = dini(0, r) + φ(r) + tail(r, δ) + r, with F_δ(0) = 0.
pub fn f_delta(m: &Modulus, delta: f64, r: f64) -> Result<f64> {
    check_radius(m, "delta", delta)?;
    if !(r >= 0.0) || r > delta {
        return Err(Error::Domain(format!("r = {r} must lie in [0, delta]")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let tail = if r < delta {
        tail_integral(m, r, delta)?
    } else {
        0.0
    };
    Ok(dini_integral(m, 0.0, r)? + m.eval(r) + tail + r)
}

/// The bracket controlling second-derivative moduli at separation r:
/// `[dini(0,r) + φ(r) + tail(r, r0)]·1{r < r0} + r`.
pub fn schauder_bound(m: &Modulus, r: f64) -> Result<f64> {
    if r >= m.r0 {
        return Ok(r);
    }
    if r <= 0.0 {
        return Ok(0.0);
    }
    Ok(dini_integral(m, 0.0, r)? + m.eval(r) + tail_integral(m, r, m.r0)? + r)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiniReport {
    pub is_dini: bool,
    pub integral: f64,
    pub partial_sums: Vec<f64>,
}

/// True iff ∫_0^r0 φ(r)/r dr converges under panel refinement.
pub fn verify_dini(m: &Modulus) -> DiniReport {
    let series = dini_from_zero(m, m.r0);
    DiniReport {
        is_dini: series.converged,
        integral: series.value,
        partial_sums: series.partial_sums,
    }
}

/// One of the two ratio sequences whose limsup decides maximal regularity.
#[derive(Debug, Clone, Serialize)]
pub struct RatioSequence {
    pub radii: Vec<f64>,
    pub ratios: Vec<f64>,
    pub bounded: bool,
    /// Growth factor over the last `BOUNDED_WINDOW` samples.
    pub growth: f64,
    /// Limit extrapolated to r = 0 in the variable 1/|log r|, fitted to the
    /// increment ratios over consecutive radii (bounded case only).
    pub limit_estimate: Option<f64>,
}

impl RatioSequence {
    pub fn finest(&self) -> f64 {
        *self.ratios.last().expect("ratio sequence is never empty")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxRegularityReport {
    /// dini(0, r) / φ(r)
    pub inner: RatioSequence,
    /// tail(r, r0) / φ(r)
    pub outer: RatioSequence,
    /// Both sequences bounded: the modulus of ∇²u is again O(φ).
    pub max_regularity: bool,
}

/// Dyadic radii r0·2^-k, k = 1..=40, truncated at `LIMIT_FLOOR`.
pub fn limit_grid(r0: f64) -> Vec<f64> {
    (1..=LIMIT_LEVELS)
        .map(|k| r0 * 0.5f64.powi(k as i32))
        .filter(|&r| r >= LIMIT_FLOOR)
        .collect()
}

/// Numerically estimates both limsups over the dyadic grid.
pub fn verify_max_regularity(m: &Modulus) -> Result<MaxRegularityReport> {
    let radii = limit_grid(m.r0);
    let mut phis = Vec::with_capacity(radii.len());
    let mut inner = Vec::with_capacity(radii.len());
    let mut outer = Vec::with_capacity(radii.len());
    for &r in &radii {
        let phi = m.eval(r);
        if !(phi > 0.0) {
            return Err(Error::Domain(format!("φ({r}) = {phi}: ratios undefined")));
        }
        phis.push(phi);
        inner.push(dini_integral(m, 0.0, r)? / phi);
        outer.push(tail_integral(m, r, m.r0)? / phi);
    }
    // Increment ratios between consecutive radii (discrete L'Hôpital). They
    // share the limit of the raw ratios but carry no r0-dependent term.
    let mut inner_inc = Vec::with_capacity(radii.len() - 1);
    let mut outer_inc = Vec::with_capacity(radii.len() - 1);
    for k in 0..radii.len().saturating_sub(1) {
        let (hi, lo) = (radii[k], radii[k + 1]);
        let (vh, vl) = (hi.ln(), lo.ln());
        let num1 = quadrature::adaptive(vl, vh, |v| m.eval_log(v)).value;
        let num2 = quadrature::adaptive(vl, vh, |v| m.eval_log(v) * (-v).exp()).value;
        inner_inc.push(num1 / (phis[k] - phis[k + 1]));
        outer_inc.push(num2 / (phis[k + 1] / lo - phis[k] / hi));
    }
    let inner = ratio_sequence(&radii, inner, &inner_inc)?;
    let outer = ratio_sequence(&radii, outer, &outer_inc)?;
    let max_regularity = inner.bounded && outer.bounded;
    Ok(MaxRegularityReport {
        inner,
        outer,
        max_regularity,
    })
}

fn ratio_sequence(radii: &[f64], ratios: Vec<f64>, increments: &[f64]) -> Result<RatioSequence> {
    let n = ratios.len();
    if n < BOUNDED_WINDOW + 1 {
        return Err(Error::InconclusiveLimit(format!(
            "only {n} radii above the floor"
        )));
    }
    let window = &ratios[n - BOUNDED_WINDOW..];
    let diffs: Vec<f64> = window.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = window.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-7 * scale;
    let up = diffs.iter().any(|&d| d > tol);
    let down = diffs.iter().any(|&d| d < -tol);
    if up && down {
        return Err(Error::InconclusiveLimit(
            "ratio sequence is not monotone over the final window".into(),
        ));
    }
    let growth = window[BOUNDED_WINDOW - 1] / window[0];
    let bounded = growth <= BOUNDED_GROWTH;
    let m = increments.len();
    let inc_window = &increments[m - BOUNDED_WINDOW..];
    let limit_estimate = if bounded && inc_window.iter().all(|q| q.is_finite() && *q > 0.0) {
        Some(extrapolate_log_limit(&radii[n - BOUNDED_WINDOW..], inc_window))
    } else {
        None
    };
    Ok(RatioSequence {
        radii: radii.to_vec(),
        ratios,
        bounded,
        growth,
        limit_estimate,
    })
}

/// Fits 1/ratio as a quadratic in ε = 1/|log r| by least squares and evaluates
/// it at ε = 0. Ratios of power-log moduli converge like rational functions of
/// ε, so the reciprocal is close to polynomial.
fn extrapolate_log_limit(radii: &[f64], ratios: &[f64]) -> f64 {
    let eps: Vec<f64> = radii.iter().map(|r| 1.0 / r.ln().abs()).collect();
    let inv: Vec<f64> = ratios.iter().map(|q| 1.0 / q).collect();
    let coeffs = polyfit(&eps, &inv, 2);
    1.0 / coeffs[0]
}

/// Least-squares polynomial fit via the normal equations (degrees up to 3).
pub(crate) fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Vec<f64> {
    let k = degree + 1;
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    // center and scale for conditioning
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let spread = x.iter().fold(0.0f64, |a, &v| a.max((v - mean).abs())).max(1e-300);
    for (&xi, &yi) in x.iter().zip(y) {
        let t = (xi - mean) / spread;
        let mut pows = vec![1.0; k];
        for j in 1..k {
            pows[j] = pows[j - 1] * t;
        }
        for i in 0..k {
            b[i] += pows[i] * yi;
            for j in 0..k {
                a[i * k + j] += pows[i] * pows[j];
            }
        }
    }
    let c = crate::linalg::solve(&mut a, &mut b, k).unwrap_or_else(|| vec![f64::NAN; k]);
    // expand p(t) with t = (x - mean)/spread back into powers of x
    let mut out = vec![0.0; k];
    for (j, &cj) in c.iter().enumerate() {
        // cj * ((x - mean)/spread)^j
        let scale = cj / spread.powi(j as i32);
        for i in 0..=j {
            let binom = binomial(j, i) as f64;
            out[i] += scale * binom * (-mean).powi((j - i) as i32);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

#[derive(Debug, Clone, Serialize)]
pub struct FDeltaReport {
    pub delta: f64,
    pub p: f64,
    /// (r, F_δ(r)^p), sorted by r.
    pub samples: Vec<(f64, f64)>,
    pub increasing_ok: bool,
    pub concave_ok: bool,
    pub worst_violation: f64,
}

/// F_δ on the given increasing radii, built from cumulative panel integrals so
/// that neighbouring samples share quadrature error.
fn f_delta_profile(m: &Modulus, delta: f64, rs: &[f64]) -> Result<Vec<f64>> {
    let n = rs.len();
    let positive: Vec<usize> = (0..n).filter(|&i| rs[i] > 0.0).collect();
    let mut inner = vec![0.0; n];
    let mut outer = vec![0.0; n];
    if let Some(&first) = positive.first() {
        let mut acc = dini_integral(m, 0.0, rs[first])?;
        inner[first] = acc;
        for w in positive.windows(2) {
            let (a, b) = (rs[w[0]], rs[w[1]]);
            acc += quadrature::adaptive(a.ln(), b.ln(), |v| m.eval_log(v)).value;
            inner[w[1]] = acc;
        }
        // ∫_r^δ φ/s² accumulated downward from δ
        let mut acc = 0.0;
        let mut upper = delta;
        for &i in positive.iter().rev() {
            let r = rs[i];
            if r < upper {
                acc += quadrature::adaptive(r.ln(), upper.ln(), |v| m.eval_log(v) * (-v).exp())
                    .value;
                upper = r;
            }
            outer[i] = r * acc;
        }
    }
    Ok(rs
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if r > 0.0 {
                inner[i] + m.eval(r) + outer[i] + r
            } else {
                0.0
            }
        })
        .collect())
}

/// Samples F_δ^p on a uniform grid of [0, δ] and checks monotonicity and
/// concavity by first and second differences.
pub fn verify_f_concavity(m: &Modulus, p: f64, delta: f64) -> Result<FDeltaReport> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("moment exponent p = {p} must be >= 1")));
    }
    if !(delta > 0.0) || delta > m.r0 * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "delta = {delta} must lie in (0, r0 = {}]",
            m.r0
        )));
    }
    let n = CONCAVITY_SAMPLES;
    let rs: Vec<f64> = (0..n).map(|i| delta * i as f64 / (n - 1) as f64).collect();
    let f = f_delta_profile(m, delta, &rs)?;
    let vals: Vec<f64> = f.iter().map(|v| v.powf(p)).collect();
    let max = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-9 * max;
    let mut worst = 0.0f64;
    let mut increasing_ok = true;
    for w in vals.windows(2) {
        let d = w[1] - w[0];
        if d < -tol {
            increasing_ok = false;
        }
        worst = worst.max(-d);
    }
    let mut concave_ok = true;
    for w in vals.windows(3) {
        let d2 = w[2] - 2.0 * w[1] + w[0];
        if d2 > tol {
            concave_ok = false;
        }
        worst = worst.max(d2);
    }
    Ok(FDeltaReport {
        delta,
        p,
        samples: rs.into_iter().zip(vals).collect(),
        increasing_ok,
        concave_ok,
        worst_violation: worst.max(0.0),
    })
}

/// Largest δ in (0, r0] for which F_δ^p passes both checks, by bisection.
/// Returns `None` when even δ = r0·2^-40 fails.
pub fn find_max_delta(m: &Modulus, p: f64) -> Result<Option<f64>> {
    let passes = |delta: f64| -> Result<bool> {
        let rep = verify_f_concavity(m, p, delta)?;
        Ok(rep.increasing_ok && rep.concave_ok)
    };
    if passes(m.r0)? {
        return Ok(Some(m.r0));
    }
    let mut hi = m.r0;
    let mut lo = None;
    let mut d = m.r0;
    for _ in 0..40 {
        d *= 0.5;
        if passes(d)? {
            lo = Some(d);
            break;
        }
        hi = d;
    }
    let Some(mut lo) = lo else { return Ok(None) };
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
    }
    Ok(Some(lo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn dini_linear() {
        let m = Modulus::linear(1.0, 0.5).unwrap();
        let v = dini_integral(&m, 0.0, 0.1).unwrap();
        assert!(rel(v, 0.1) < 1e-6, "{v}");
    }

    #[test]
    fn dini_inverse_log_squared() {
        let m = Modulus::inverse_log(1.0, 2.0, 0.5).unwrap();
        let v = dini_integral(&m, 0.0, 0.1).unwrap();
        assert!(rel(v, 1.0 / 10f64.ln()) < 1e-6, "{v}");
    }

    #[test]
    fn dini_inverse_log_diverges() {
        let m = Modulus::inverse_log(1.0, 1.0, 0.5).unwrap();
        match dini_integral(&m, 0.0, 0.1) {
            Err(Error::NonFinite { partial }) => assert!(partial > 1.0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn dini_rejects_bad_interval() {
        let m = Modulus::linear(1.0, 0.5).unwrap();
        assert!(matches!(dini_integral(&m, 0.2, 0.1), Err(Error::Domain(_))));
        assert!(matches!(dini_integral(&m, 0.0, 0.7), Err(Error::Domain(_))));
    }

    #[test]
    fn tail_linear_and_power() {
        let m = Modulus::linear(1.0, 0.5).unwrap();
        let v = tail_integral(&m, 0.01, 0.1).unwrap();
        assert!(rel(v, 0.01 * 10f64.ln()) < 1e-6);
        let m = Modulus::power_log(1.0, 0.5, 0.0, 0.5).unwrap();
        let v = tail_integral(&m, 0.01, 0.25).unwrap();
        assert!(rel(v, 0.16) < 1e-6, "{v}");
        assert!(matches!(tail_integral(&m, 0.3, 0.25), Err(Error::Domain(_))));
    }

    #[test]
    fn tail_vanishes_for_dini_moduli() {
        for m in [
            Modulus::inverse_log(1.0, 2.0, 0.5).unwrap(),
            Modulus::power_log(1.0, 0.3, -2.0, 0.5).unwrap(),
            Modulus::linear(1.0, 0.5).unwrap(),
        ] {
            let delta = 0.25;
            let first = tail_integral(&m, delta / 2.0, delta).unwrap();
            let last = tail_integral(&m, delta * 0.5f64.powi(20), delta).unwrap();
            assert!(last < first / 10.0, "{:?}: {first} -> {last}", m.family);
        }
    }

    #[test]
    fn f_delta_linear() {
        let m = Modulus::linear(1.0, 0.5).unwrap();
        let v = f_delta(&m, 0.1, 0.05).unwrap();
        let expected = 0.15 + 0.05 * 2f64.ln();
        assert!(rel(v, expected) < 1e-6, "{v} vs {expected}");
        assert_eq!(f_delta(&m, 0.1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn f_delta_log_bound() {
        // F_δ(r) |log r|^(α-1) stays bounded as r -> 0
        let alpha = 2.0;
        let m = Modulus::inverse_log(1.0, alpha, 0.5).unwrap();
        let delta = 0.1;
        let scaled: Vec<f64> = (1..30)
            .map(|k| {
                let r = delta * 0.5f64.powi(k);
                f_delta(&m, delta, r).unwrap() * r.ln().abs().powf(alpha - 1.0)
            })
            .collect();
        let c = scaled.iter().cloned().fold(0.0, f64::max);
        assert!(c < 10.0, "{scaled:?}");
        // fitted once on the first half, the bound covers the second half too
        let c_fit = scaled[..15].iter().cloned().fold(0.0, f64::max);
        assert!(scaled[15..].iter().all(|&s| s <= c_fit * 1.01));
    }

    #[test]
    fn dini_verification() {
        assert!(verify_dini(&Modulus::power_log(1.0, 0.5, 0.0, 0.5).unwrap()).is_dini);
        assert!(!verify_dini(&Modulus::inverse_log(1.0, 1.0, 0.5).unwrap()).is_dini);
        let hd = Modulus::power_log(1.0, 0.5, -2.0, 0.5).unwrap();
        let rep = verify_dini(&hd);
        assert!(rep.is_dini);
        // refinement oracle: brute-force composite midpoint in v = ln r on a long range
        let n = 400_000;
        let (lo, hi) = (-200.0f64, 0.5f64.ln());
        let h = (hi - lo) / n as f64;
        let brute: f64 = (0..n)
            .map(|i| hd.eval_log(lo + (i as f64 + 0.5) * h) * h)
            .sum();
        assert!(rel(rep.integral, brute) < 1e-6, "{} vs {brute}", rep.integral);
    }

    #[test]
    fn classification_follows_power_log_enumeration() {
        let cls = |a| Modulus::power_log(1.0, 0.5, a, 0.5).unwrap().claimed_class;
        assert_eq!(cls(-2.0), RegularityClass::HolderDini);
        assert_eq!(cls(-0.5), RegularityClass::StrongHolder);
        assert_eq!(cls(0.0), RegularityClass::Holder);
        assert_eq!(cls(1.0), RegularityClass::WeakHolder);
        assert_eq!(
            Modulus::inverse_log(1.0, 1.0, 0.5).unwrap().claimed_class,
            RegularityClass::NotDini
        );
    }

    #[test]
    fn max_regularity_holder_dini_example() {
        let m = Modulus::power_log(1.0, 0.5, -2.0, 0.5).unwrap();
        let rep = verify_max_regularity(&m).unwrap();
        assert!(rep.max_regularity);
        let l1 = rep.inner.limit_estimate.unwrap();
        let l2 = rep.outer.limit_estimate.unwrap();
        assert!(rel(l1, 2.0) < 0.02, "{l1}");
        assert!(rel(l2, 2.0) < 0.02, "{l2}");
    }

    #[test]
    fn max_regularity_lipschitz_edge() {
        // φ = r: first ratio is exactly 1, second is log(r0/r) and grows
        let m = Modulus::linear(1.0, 0.5).unwrap();
        let rep = verify_max_regularity(&m).unwrap();
        assert!(rep.inner.bounded);
        assert!(rel(rep.inner.finest(), 1.0) < 1e-6);
        assert!(!rep.outer.bounded);
        for (r, q) in rep.outer.radii.iter().zip(&rep.outer.ratios) {
            let exact = (0.5 / r).ln();
            assert!(rel(*q, exact) < 1e-6);
        }
        assert!(!rep.max_regularity);
    }

    #[test]
    fn max_regularity_fails_for_log_modulus() {
        let m = Modulus::inverse_log(1.0, 1.5, 0.5).unwrap();
        let rep = verify_max_regularity(&m).unwrap();
        assert!(!rep.inner.bounded);
        assert!(!rep.max_regularity);
    }

    #[test]
    fn concavity_window() {
        let m = Modulus::inverse_log(1.0, 2.0, 0.5).unwrap();
        let inside = verify_f_concavity(&m, 1.0, 0.1).unwrap();
        assert!(inside.increasing_ok && inside.concave_ok);
        assert_eq!(inside.samples.len(), CONCAVITY_SAMPLES);
        let outside = verify_f_concavity(&m, 2.0, 0.4).unwrap();
        assert!(!outside.concave_ok);
    }

    #[test]
    fn concavity_affine_case() {
        let m = Modulus::new(ModulusFamily::Zero, 0.5).unwrap();
        let rep = verify_f_concavity(&m, 1.0, 0.3).unwrap();
        assert!(rep.increasing_ok && rep.concave_ok);
        for (r, v) in &rep.samples {
            assert!((r - v).abs() < 1e-15);
        }
    }

    #[test]
    fn max_delta_search_lands_inside_r0() {
        let m = Modulus::inverse_log(1.0, 2.0, 0.5).unwrap();
        let d = find_max_delta(&m, 1.0).unwrap().unwrap();
        // the sufficient window e^(p - pα - 1) is inside the passing range
        assert!(d >= (-2.0f64).exp(), "{d}");
        assert!(d < 0.5);
    }

    #[test]
    fn tabulated_interpolates_power_law() {
        let table: Vec<(f64, f64)> = [1e-6, 1e-3, 0.1, 0.5]
            .iter()
            .map(|&r: &f64| (r, r.sqrt()))
            .collect();
        let m = Modulus::new(ModulusFamily::Tabulated(table), 0.5).unwrap();
        assert!(rel(m.eval(0.01), 0.1) < 1e-12);
        assert!(rel(m.eval(1e-8), 1e-4) < 1e-12);
        m.validate().unwrap();
        assert_eq!(m.claimed_class, RegularityClass::Unknown);
    }

    #[test]
    fn validate_rejects_decreasing() {
        let m = Modulus::new(ModulusFamily::Custom(Arc::new(|r| 1.0 - r)), 0.5).unwrap();
        assert!(m.validate().is_err());
    }

    #[test]
    fn polyfit_recovers_quadratic() {
        let x: Vec<f64> = (0..10).map(|i| 0.03 + 0.002 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| 0.5 + 2.0 * t - 3.0 * t * t).collect();
        let c = polyfit(&x, &y, 2);
        assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 2.0).abs() < 1e-7);
    }
}
