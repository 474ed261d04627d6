//! Additive regression models over uniform covariates on `[0,1]^p`.
//!
//! A model is a sum of univariate components, one per coordinate, plus
//! centered Gaussian noise. Components come from a fixed catalog; each kind
//! carries analytic integrals of `m_j` and `m_j^2` over subintervals (the
//! population split criterion reduces to exactly those), falling back to
//! adaptive quadrature where no closed form is wired up.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// One univariate component of an additive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Constant { value: f64 },
    Linear { slope: f64, intercept: f64 },
    /// `coeffs[k]` multiplies `x^k`; degree at most 4.
    Polynomial { coeffs: Vec<f64> },
    /// `amplitude * sin(frequency * x + phase)`.
    Sine { amplitude: f64, frequency: f64, phase: f64 },
    /// Linear interpolation through `(x, y)` knots covering `[0, 1]`.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

impl Component {
    pub fn zero() -> Self {
        Component::Constant { value: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Component::Constant { value } => *value,
            Component::Linear { slope, intercept } => slope * x + intercept,
            Component::Polynomial { coeffs } => horner(coeffs, x),
            Component::Sine { amplitude, frequency, phase } => {
                amplitude * (frequency * x + phase).sin()
            }
            Component::PiecewiseLinear { knots } => piecewise_eval(knots, x),
        }
    }

    /// `∫_a^b m_j(x) dx`, analytic for every catalog kind.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Component::Constant { value } => value * (b - a),
            Component::Linear { slope, intercept } => {
                0.5 * slope * (b * b - a * a) + intercept * (b - a)
            }
            Component::Polynomial { coeffs } => poly_integral(coeffs, a, b),
            Component::Sine { amplitude, frequency, phase } => {
                if *frequency == 0.0 {
                    amplitude * phase.sin() * (b - a)
                } else {
                    -(amplitude / frequency)
                        * ((frequency * b + phase).cos() - (frequency * a + phase).cos())
                }
            }
            Component::PiecewiseLinear { knots } => {
                piecewise_segments(knots, a, b, |alpha, beta, u, v| {
                    alpha * (v - u) + 0.5 * beta * (v * v - u * u)
                })
            }
        }
    }

    /// `∫_a^b m_j(x)^2 dx`, analytic for every catalog kind (the quadrature
    /// route, [`Self::integral_sq_quadrature`], is the independent check).
    pub fn integral_sq(&self, a: f64, b: f64) -> f64 {
        match self {
            Component::Constant { value } => value * value * (b - a),
            Component::Linear { slope, intercept } => {
                poly_integral(&[intercept * intercept, 2.0 * slope * intercept, slope * slope], a, b)
            }
            Component::Polynomial { coeffs } => poly_integral(&poly_square(coeffs), a, b),
            Component::Sine { amplitude, frequency, phase } => {
                let a2 = amplitude * amplitude;
                if *frequency == 0.0 {
                    a2 * phase.sin().powi(2) * (b - a)
                } else {
                    // sin^2 t = 1/2 - cos(2t)/2
                    let anti = |x: f64| {
                        0.5 * x - (2.0 * (frequency * x + phase)).sin() / (4.0 * frequency)
                    };
                    a2 * (anti(b) - anti(a))
                }
            }
            Component::PiecewiseLinear { knots } => {
                piecewise_segments(knots, a, b, |alpha, beta, u, v| {
                    // ∫ (alpha + beta x)^2
                    alpha * alpha * (v - u)
                        + alpha * beta * (v * v - u * u)
                        + beta * beta * (v * v * v - u * u * u) / 3.0
                })
            }
        }
    }

    /// Same integrals through adaptive Simpson instead of the closed forms;
    /// the route any entry without a closed form would take.
    pub fn integral_quadrature(&self, a: f64, b: f64) -> f64 {
        quad::integrate(|x| self.eval(x), a, b, quad::DEFAULT_TOL)
    }

    pub fn integral_sq_quadrature(&self, a: f64, b: f64) -> f64 {
        quad::integrate(|x| self.eval(x).powi(2), a, b, quad::DEFAULT_TOL)
    }

    /// `(min, max)` of the component over `[a, b]`.
    ///
    /// Analytic where the critical points are trivial to enumerate; dense
    /// grid with golden-section refinement otherwise.
    pub fn range(&self, a: f64, b: f64) -> (f64, f64) {
        match self {
            Component::Constant { value } => (*value, *value),
            Component::Linear { .. } => {
                let (fa, fb) = (self.eval(a), self.eval(b));
                (fa.min(fb), fa.max(fb))
            }
            Component::PiecewiseLinear { knots } => {
                let mut lo = self.eval(a).min(self.eval(b));
                let mut hi = self.eval(a).max(self.eval(b));
                for &(kx, ky) in knots {
                    if kx > a && kx < b {
                        lo = lo.min(ky);
                        hi = hi.max(ky);
                    }
                }
                (lo, hi)
            }
            Component::Sine { amplitude, frequency, phase } => {
                let mut lo = self.eval(a).min(self.eval(b));
                let mut hi = self.eval(a).max(self.eval(b));
                if *frequency != 0.0 && *amplitude != 0.0 {
                    // Critical points: frequency*x + phase = pi/2 + k*pi.
                    let crit = |k: i64| {
                        (std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI - phase)
                            / frequency
                    };
                    let k_lo = ((frequency.min(0.0) * (b - a) + frequency * a + phase
                        - std::f64::consts::FRAC_PI_2)
                        / std::f64::consts::PI)
                        .floor() as i64
                        - 2;
                    let k_hi = ((frequency.max(0.0) * (b - a) + frequency * a + phase
                        - std::f64::consts::FRAC_PI_2)
                        / std::f64::consts::PI)
                        .ceil() as i64
                        + 2;
                    for k in k_lo..=k_hi {
                        let x = crit(k);
                        if x > a && x < b {
                            let v = self.eval(x);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                }
                (lo, hi)
            }
            Component::Polynomial { .. } => grid_range(|x| self.eval(x), a, b),
        }
    }

    /// True when the component is identically zero on `[0, 1]`.
    pub fn is_zero(&self) -> bool {
        match self {
            Component::Constant { value } => *value == 0.0,
            Component::Linear { slope, intercept } => *slope == 0.0 && *intercept == 0.0,
            Component::Polynomial { coeffs } => coeffs.iter().all(|c| *c == 0.0),
            Component::Sine { amplitude, frequency, phase } => {
                *amplitude == 0.0 || (*frequency == 0.0 && phase.sin() == 0.0)
            }
            Component::PiecewiseLinear { knots } => knots.iter().all(|&(_, y)| y == 0.0),
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        match self {
            Component::Constant { value } => {
                if !value.is_finite() {
                    return bad(format!("component {index}: non-finite constant"));
                }
            }
            Component::Linear { slope, intercept } => {
                if !slope.is_finite() || !intercept.is_finite() {
                    return bad(format!("component {index}: non-finite linear parameters"));
                }
            }
            Component::Polynomial { coeffs } => {
                if coeffs.is_empty() || coeffs.len() > 5 {
                    return bad(format!(
                        "component {index}: polynomial must have degree 0..=4 (got {} coefficients)",
                        coeffs.len()
                    ));
                }
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return bad(format!("component {index}: non-finite polynomial coefficient"));
                }
            }
            Component::Sine { amplitude, frequency, phase } => {
                if ![*amplitude, *frequency, *phase].iter().all(|v| v.is_finite()) {
                    return bad(format!("component {index}: non-finite sine parameters"));
                }
            }
            Component::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return bad(format!("component {index}: piecewise-linear needs >= 2 knots"));
                }
                if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
                    return bad(format!("component {index}: knots must cover [0, 1]"));
                }
                if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return bad(format!("component {index}: knot positions must strictly increase"));
                }
                if knots.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
                    return bad(format!("component {index}: non-finite knot"));
                }
            }
        }
        Ok(())
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_integral(coeffs: &[f64], a: f64, b: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| c / (k as f64 + 1.0) * (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)))
        .sum()
}

fn poly_square(coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * coeffs.len() - 1];
    for (i, ci) in coeffs.iter().enumerate() {
        for (j, cj) in coeffs.iter().enumerate() {
            out[i + j] += ci * cj;
        }
    }
    out
}

fn piecewise_eval(knots: &[(f64, f64)], x: f64) -> f64 {
    let x = x.clamp(knots[0].0, knots[knots.len() - 1].0);
    let seg = knots.windows(2).find(|w| x <= w[1].0).unwrap_or_else(|| {
        &knots[knots.len() - 2..]
    });
    let (x0, y0) = seg[0];
    let (x1, y1) = seg[1];
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Accumulate `f(alpha, beta, u, v)` over the intersection of `[a, b]` with
/// each knot segment, where the segment is `alpha + beta * x` on `[u, v]`.
fn piecewise_segments<F: Fn(f64, f64, f64, f64) -> f64>(
    knots: &[(f64, f64)],
    a: f64,
    b: f64,
    f: F,
) -> f64 {
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let u = a.max(x0);
        let v = b.min(x1);
        if v <= u {
            continue;
        }
        let beta = (y1 - y0) / (x1 - x0);
        let alpha = y0 - beta * x0;
        total += f(alpha, beta, u, v);
    }
    total
}

/// Dense grid of 10^4 points plus golden-section refinement inside the
/// bracketing cells of the best grid values.
fn grid_range<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> (f64, f64) {
    const GRID: usize = 10_000;
    let step = (b - a) / GRID as f64;
    let mut lo = (f(a), a);
    let mut hi = (f(a), a);
    for i in 1..=GRID {
        let x = if i == GRID { b } else { a + step * i as f64 };
        let v = f(x);
        if v < lo.0 {
            lo = (v, x);
        }
        if v > hi.0 {
            hi = (v, x);
        }
    }
    let refine = |x0: f64, sign: f64| {
        let lo_b = (x0 - step).max(a);
        let hi_b = (x0 + step).min(b);
        golden_max(|x| sign * f(x), lo_b, hi_b, 1e-12) * sign
    };
    let max_v = refine(hi.1, 1.0).max(hi.0);
    let min_v = refine(lo.1, -1.0).min(lo.0);
    (min_v, max_v)
}

/// Golden-section search for the maximum of `f` on `[a, b]`; returns the
/// maximal value found (endpoints included).
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, xtol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > xtol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let mid = f(0.5 * (lo + hi));
    mid.max(f(a)).max(f(b))
}

/// Additive model: `m(x) = Σ_j m_j(x_j)`, noise `N(0, noise_sigma^2)`.
///
/// The first `s` components are the informative coordinates; everything past
/// them must be identically zero (the sparse setting fixes the informative
/// block to the leading coordinates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdditiveModel {
    pub p: usize,
    #[serde(default)]
    pub s: Option<usize>,
    pub noise_sigma: f64,
    #[serde(rename = "component", default)]
    pub components: Vec<Component>,
}

impl AdditiveModel {
    pub fn new(p: usize, s: usize, noise_sigma: f64, mut components: Vec<Component>) -> Result<Self> {
        if components.len() < p {
            components.resize(p, Component::zero());
        }
        let model = AdditiveModel { p, s: Some(s), noise_sigma, components };
        model.validate()?;
        Ok(model)
    }

    /// Count of informative leading coordinates.
    pub fn informative(&self) -> usize {
        self.s.unwrap_or(self.p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::validation("p: must be at least 1"));
        }
        if self.components.len() > self.p {
            return Err(Error::Validation(format!(
                "component: {} components listed but p = {}",
                self.components.len(),
                self.p
            )));
        }
        let s = self.informative();
        if s > self.p {
            return Err(Error::Validation(format!("s: {} exceeds p = {}", s, self.p)));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::validation("noise_sigma: must be finite and >= 0"));
        }
        for (j, c) in self.components.iter().enumerate() {
            c.validate(j)?;
            if j >= s && !c.is_zero() {
                return Err(Error::Validation(format!(
                    "component {j}: must be identically zero beyond the first s = {s} coordinates"
                )));
            }
        }
        Ok(())
    }

    /// Component for coordinate `j` (zero beyond the listed ones).
    pub fn component(&self, j: usize) -> &Component {
        static ZERO: Component = Component::Constant { value: 0.0 };
        self.components.get(j).unwrap_or(&ZERO)
    }

    /// Regression function `m(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.p);
        x.iter().enumerate().map(|(j, &xj)| self.component(j).eval(xj)).sum()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Validation(format!("model encode: {e}")))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let model: AdditiveModel = toml::from_str(text)
            .map_err(|e| Error::Parse { line: 0, message: format!("model file: {e}") })?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io_util::write_atomic(path, self.to_toml_string()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}
