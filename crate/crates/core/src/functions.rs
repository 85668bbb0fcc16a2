//! Closed preset families for coefficients, Hurst functions and terminal payoffs.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A scalar function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFn {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    /// `scale * exp(rate * t)`
    Exp { scale: f64, rate: f64 },
    /// Piecewise-linear interpolation of `(t, value)` knots, flat outside.
    Piecewise { points: Vec<[f64; 2]> },
    /// `sum_k weights_k terms_k(t)`
    Combination { weights: Vec<f64>, terms: Vec<TimeFn> },
}

impl TimeFn {
    pub fn constant(value: f64) -> Self {
        TimeFn::Constant { value }
    }

    pub fn linear(intercept: f64, slope: f64) -> Self {
        TimeFn::Linear { intercept, slope }
    }

    /// `self - other`
    pub fn minus(&self, other: &TimeFn) -> Self {
        match (self, other) {
            (TimeFn::Constant { value: a }, TimeFn::Constant { value: b }) => TimeFn::constant(a - b),
            _ => TimeFn::Combination { weights: vec![1.0, -1.0], terms: vec![self.clone(), other.clone()] },
        }
    }

    fn combine<F: Fn(&TimeFn) -> f64>(weights: &[f64], terms: &[TimeFn], f: F) -> f64 {
        weights.iter().zip(terms).map(|(w, g)| w * f(g)).sum()
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Constant { value } => *value,
            TimeFn::Linear { intercept, slope } => intercept + slope * t,
            TimeFn::Exp { scale, rate } => scale * (rate * t).exp(),
            TimeFn::Piecewise { points } => piecewise_eval(points, t),
            TimeFn::Combination { weights, terms } => Self::combine(weights, terms, |g| g.eval(t)),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match self {
            TimeFn::Constant { .. } => 0.0,
            TimeFn::Linear { slope, .. } => *slope,
            TimeFn::Exp { scale, rate } => scale * rate * (rate * t).exp(),
            TimeFn::Piecewise { points } => piecewise_slope(points, t),
            TimeFn::Combination { weights, terms } => Self::combine(weights, terms, |g| g.deriv(t)),
        }
    }

    /// Exact integral over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            TimeFn::Constant { value } => value * (b - a),
            TimeFn::Linear { intercept, slope } => {
                intercept * (b - a) + 0.5 * slope * (b * b - a * a)
            }
            TimeFn::Exp { scale, rate } => {
                if *rate == 0.0 {
                    scale * (b - a)
                } else {
                    scale * ((rate * a).exp() * (rate * (b - a)).exp_m1()) / rate
                }
            }
            TimeFn::Piecewise { points } => piecewise_integral(points, a, b),
            TimeFn::Combination { weights, terms } => {
                Self::combine(weights, terms, |g| g.integral(a, b))
            }
        }
    }

    /// Minimum and maximum over `[a, b]`; exact except for combinations,
    /// which are sampled on 1024 points plus their breakpoints.
    pub fn range(&self, a: f64, b: f64) -> (f64, f64) {
        let mut lo = self.eval(a).min(self.eval(b));
        let mut hi = self.eval(a).max(self.eval(b));
        let mut probe = |t: f64| {
            let v = self.eval(t);
            lo = lo.min(v);
            hi = hi.max(v);
        };
        match self {
            TimeFn::Piecewise { points } => {
                for p in points.iter().filter(|p| p[0] > a && p[0] < b) {
                    probe(p[0]);
                }
            }
            TimeFn::Combination { .. } => {
                for i in 1..1024 {
                    probe(a + (b - a) * i as f64 / 1024.0);
                }
                for t in self.breakpoints().into_iter().filter(|&t| t > a && t < b) {
                    probe(t);
                }
            }
            _ => {}
        }
        (lo, hi)
    }

    /// Points where the derivative jumps.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            TimeFn::Piecewise { points } => points.iter().map(|p| p[0]).collect(),
            TimeFn::Combination { terms, .. } => terms.iter().flat_map(|g| g.breakpoints()).collect(),
            _ => Vec::new(),
        }
    }

    /// True when the derivative vanishes everywhere.
    pub fn is_constant(&self) -> bool {
        match self {
            TimeFn::Constant { .. } => true,
            TimeFn::Linear { slope, .. } => *slope == 0.0,
            TimeFn::Exp { scale, rate } => *scale == 0.0 || *rate == 0.0,
            TimeFn::Piecewise { points } => points.iter().all(|p| p[1] == points[0][1]),
            TimeFn::Combination { weights, terms } => {
                weights.iter().zip(terms).all(|(w, g)| *w == 0.0 || g.is_constant())
            }
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            TimeFn::Constant { value } => *value == 0.0,
            TimeFn::Linear { intercept, slope } => *intercept == 0.0 && *slope == 0.0,
            TimeFn::Exp { scale, .. } => *scale == 0.0,
            TimeFn::Piecewise { points } => points.iter().all(|p| p[1] == 0.0),
            TimeFn::Combination { weights, terms } => {
                weights.iter().zip(terms).all(|(w, g)| *w == 0.0 || g.is_identically_zero())
            }
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let finite = match self {
            TimeFn::Constant { value } => value.is_finite(),
            TimeFn::Linear { intercept, slope } => intercept.is_finite() && slope.is_finite(),
            TimeFn::Exp { scale, rate } => scale.is_finite() && rate.is_finite(),
            TimeFn::Piecewise { points } => {
                validate_knots(points, field)?;
                true
            }
            TimeFn::Combination { weights, terms } => {
                if weights.len() != terms.len() || terms.is_empty() {
                    return Err(Error::param(field, "combination needs one weight per term"));
                }
                for (k, g) in terms.iter().enumerate() {
                    g.validate(&format!("{field}.terms[{k}]"))?;
                }
                weights.iter().all(|w| w.is_finite())
            }
        };
        if !finite {
            return Err(Error::param(field, "parameters must be finite"));
        }
        Ok(())
    }
}

fn validate_knots(points: &[[f64; 2]], field: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::param(field, "piecewise table needs at least one point"));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::param(field, "piecewise table entries must be finite"));
    }
    if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
        return Err(Error::param(field, "piecewise knots must be strictly increasing in t"));
    }
    Ok(())
}

fn segment(points: &[[f64; 2]], t: f64) -> Option<usize> {
    if points.len() < 2 || t < points[0][0] || t >= points[points.len() - 1][0] {
        return None;
    }
    let i = points.partition_point(|p| p[0] <= t);
    Some(i - 1)
}

fn piecewise_eval(points: &[[f64; 2]], t: f64) -> f64 {
    let last = points.len() - 1;
    if t <= points[0][0] {
        return points[0][1];
    }
    if t >= points[last][0] {
        return points[last][1];
    }
    let i = segment(points, t).unwrap();
    let (p, q) = (points[i], points[i + 1]);
    p[1] + (q[1] - p[1]) * (t - p[0]) / (q[0] - p[0])
}

fn piecewise_slope(points: &[[f64; 2]], t: f64) -> f64 {
    match segment(points, t) {
        Some(i) => {
            let (p, q) = (points[i], points[i + 1]);
            (q[1] - p[1]) / (q[0] - p[0])
        }
        None => 0.0,
    }
}

fn piecewise_integral(points: &[[f64; 2]], a: f64, b: f64) -> f64 {
    if b < a {
        return -piecewise_integral(points, b, a);
    }
    let mut nodes = vec![a];
    nodes.extend(points.iter().map(|p| p[0]).filter(|&x| x > a && x < b));
    nodes.push(b);
    nodes
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (piecewise_eval(points, w[0]) + piecewise_eval(points, w[1])))
        .sum()
}

/// Time-varying Hurst exponent with values in (1/2, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum HurstFunction {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    /// `low + (high - low) / (1 + exp(-rate (t - mid)))`
    Logistic { low: f64, high: f64, rate: f64, mid: f64 },
    Piecewise { points: Vec<[f64; 2]> },
}

impl HurstFunction {
    pub fn constant(value: f64) -> Self {
        HurstFunction::Constant { value }
    }

    pub fn linear(intercept: f64, slope: f64) -> Self {
        HurstFunction::Linear { intercept, slope }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            HurstFunction::Constant { value } => *value,
            HurstFunction::Linear { intercept, slope } => intercept + slope * t,
            HurstFunction::Logistic { low, high, rate, mid } => {
                low + (high - low) / (1.0 + (-rate * (t - mid)).exp())
            }
            HurstFunction::Piecewise { points } => piecewise_eval(points, t),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match self {
            HurstFunction::Constant { .. } => 0.0,
            HurstFunction::Linear { slope, .. } => *slope,
            HurstFunction::Logistic { low, high, rate, mid } => {
                let e = (-rate * (t - mid)).exp();
                (high - low) * rate * e / ((1.0 + e) * (1.0 + e))
            }
            HurstFunction::Piecewise { points } => piecewise_slope(points, t),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            HurstFunction::Constant { .. } => true,
            HurstFunction::Linear { slope, .. } => *slope == 0.0,
            HurstFunction::Logistic { low, high, rate, .. } => low == high || *rate == 0.0,
            HurstFunction::Piecewise { points } => points.iter().all(|p| p[1] == points[0][1]),
        }
    }

    /// Range `[a, b]` of h over `[0, horizon]`; every preset is monotone between knots.
    pub fn bounds(&self, horizon: f64) -> (f64, f64) {
        let (h0, h1) = (self.eval(0.0), self.eval(horizon));
        let mut lo = h0.min(h1);
        let mut hi = h0.max(h1);
        if let HurstFunction::Piecewise { points } = self {
            for p in points.iter().filter(|p| p[0] > 0.0 && p[0] < horizon) {
                lo = lo.min(p[1]);
                hi = hi.max(p[1]);
            }
        }
        (lo, hi)
    }

    /// Supremum of |h'| over `[0, horizon]`.
    pub fn deriv_bound(&self, horizon: f64) -> f64 {
        match self {
            HurstFunction::Constant { .. } => 0.0,
            HurstFunction::Linear { slope, .. } => slope.abs(),
            HurstFunction::Logistic { low, high, rate, mid } => {
                let tm = mid.clamp(0.0, horizon);
                let e = (-rate * (tm - mid)).exp();
                ((high - low) * rate * e / ((1.0 + e) * (1.0 + e))).abs()
            }
            HurstFunction::Piecewise { points } => points
                .windows(2)
                .filter(|w| w[1][0] > 0.0 && w[0][0] < horizon)
                .map(|w| ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            HurstFunction::Piecewise { points } => points.iter().map(|p| p[0]).collect(),
            _ => Vec::new(),
        }
    }

    pub fn validate(&self, horizon: f64, field: &str) -> Result<()> {
        if let HurstFunction::Piecewise { points } = self {
            validate_knots(points, field)?;
        }
        let (a, b) = self.bounds(horizon);
        if !(a > 0.5 && b < 1.0) {
            return Err(Error::param(
                field,
                format!("Hurst function must take values in (1/2, 1) on [0, T], found [{a}, {b}]"),
            ));
        }
        Ok(())
    }
}

/// Terminal function g on R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalFn {
    Constant { value: f64 },
    /// `constant + sum_j linear_j y_j + sum_j quadratic_j y_j^2`
    Polynomial2 {
        constant: f64,
        linear: Vec<f64>,
        quadratic: Vec<f64>,
    },
    /// `scale * exp(sum_j coeffs_j y_j)`
    ExpLinear { scale: f64, coeffs: Vec<f64> },
    /// `scale * exp(lambda |y|^2)`
    ExpQuadratic { scale: f64, lambda: f64 },
    /// `max(sum_j weights_j y_j - strike, 0)`
    Call { strike: f64, weights: Vec<f64> },
    Sum { terms: Vec<TerminalFn> },
}

impl TerminalFn {
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            TerminalFn::Constant { value } => *value,
            TerminalFn::Polynomial2 {
                constant,
                linear,
                quadratic,
            } => {
                let mut s = *constant;
                for (j, &yj) in y.iter().enumerate() {
                    s += coef(linear, j) * yj + coef(quadratic, j) * yj * yj;
                }
                s
            }
            TerminalFn::ExpLinear { scale, coeffs } => scale * dot(coeffs, y).exp(),
            TerminalFn::ExpQuadratic { scale, lambda } => {
                scale * (lambda * y.iter().map(|v| v * v).sum::<f64>()).exp()
            }
            TerminalFn::Call { strike, weights } => (dot(weights, y) - strike).max(0.0),
            TerminalFn::Sum { terms } => terms.iter().map(|g| g.eval(y)).sum(),
        }
    }

    /// Gradient (almost everywhere for the call payoff).
    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        match self {
            TerminalFn::Constant { .. } => vec![0.0; n],
            TerminalFn::Polynomial2 { linear, quadratic, .. } => (0..n)
                .map(|j| coef(linear, j) + 2.0 * coef(quadratic, j) * y[j])
                .collect(),
            TerminalFn::ExpLinear { scale, coeffs } => {
                let e = scale * dot(coeffs, y).exp();
                (0..n).map(|j| e * coef(coeffs, j)).collect()
            }
            TerminalFn::ExpQuadratic { scale, lambda } => {
                let e = scale * (lambda * y.iter().map(|v| v * v).sum::<f64>()).exp();
                y.iter().map(|&v| 2.0 * lambda * v * e).collect()
            }
            TerminalFn::Call { strike, weights } => {
                let itm = dot(weights, y) > *strike;
                (0..n)
                    .map(|j| if itm { coef(weights, j) } else { 0.0 })
                    .collect()
            }
            TerminalFn::Sum { terms } => {
                let mut g = vec![0.0; n];
                for t in terms {
                    for (a, b) in g.iter_mut().zip(t.gradient(y)) {
                        *a += b;
                    }
                }
                g
            }
        }
    }

    /// A constant c' with `|g(y)| <= c' exp(lambda' |y|^2)`, or `None` if no
    /// finite constant exists for this `lambda'`.
    pub fn growth_constant(&self, lambda_prime: f64) -> Option<f64> {
        let e = std::f64::consts::E;
        let lp = lambda_prime;
        match self {
            TerminalFn::Constant { value } => Some(value.abs()),
            TerminalFn::Polynomial2 {
                constant,
                linear,
                quadratic,
            } => {
                let l = norm(linear);
                let q = quadratic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if (l > 0.0 || q > 0.0) && lp <= 0.0 {
                    return None;
                }
                let mut c = constant.abs();
                if l > 0.0 {
                    c += l / (2.0 * e * lp).sqrt();
                }
                if q > 0.0 {
                    c += q / (e * lp);
                }
                Some(c)
            }
            TerminalFn::ExpLinear { scale, coeffs } => {
                let l = norm(coeffs);
                if l == 0.0 {
                    Some(scale.abs())
                } else if lp <= 0.0 {
                    None
                } else {
                    Some(scale.abs() * (l * l / (4.0 * lp)).exp())
                }
            }
            TerminalFn::ExpQuadratic { scale, lambda } => {
                if *scale == 0.0 || lambda <= &lp {
                    Some(scale.abs())
                } else {
                    None
                }
            }
            TerminalFn::Call { strike, weights } => {
                let l = norm(weights);
                if l == 0.0 {
                    Some(strike.min(0.0).abs())
                } else if lp <= 0.0 {
                    None
                } else {
                    Some(strike.abs() + l / (2.0 * e * lp).sqrt())
                }
            }
            TerminalFn::Sum { terms } => {
                let mut c = 0.0;
                for t in terms {
                    c += t.growth_constant(lp)?;
                }
                Some(c)
            }
        }
    }

    /// True when g is bounded, in which case `lambda' = 0` is admissible.
    pub fn is_bounded(&self) -> bool {
        self.growth_constant(0.0).is_some()
    }

    pub fn validate(&self, dim: usize, field: &str) -> Result<()> {
        let check_len = |v: &Vec<f64>, name: &str| -> Result<()> {
            if v.len() != dim {
                return Err(Error::param(
                    format!("{field}.{name}"),
                    format!("expected {dim} entries, found {}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::param(format!("{field}.{name}"), "entries must be finite"));
            }
            Ok(())
        };
        match self {
            TerminalFn::Constant { value } if !value.is_finite() => {
                Err(Error::param(field, "value must be finite"))
            }
            TerminalFn::Constant { .. } => Ok(()),
            TerminalFn::Polynomial2 { linear, quadratic, .. } => {
                check_len(linear, "linear")?;
                check_len(quadratic, "quadratic")
            }
            TerminalFn::ExpLinear { coeffs, .. } => check_len(coeffs, "coeffs"),
            TerminalFn::ExpQuadratic { lambda, .. } if !lambda.is_finite() => {
                Err(Error::param(field, "lambda must be finite"))
            }
            TerminalFn::ExpQuadratic { .. } => Ok(()),
            TerminalFn::Call { weights, .. } => check_len(weights, "weights"),
            TerminalFn::Sum { terms } => {
                for (i, t) in terms.iter().enumerate() {
                    t.validate(dim, &format!("{field}.terms[{i}]"))?;
                }
                Ok(())
            }
        }
    }
}

fn coef(v: &[f64], j: usize) -> f64 {
    v.get(j).copied().unwrap_or(0.0)
}

fn dot(c: &[f64], y: &[f64]) -> f64 {
    y.iter().enumerate().map(|(j, v)| coef(c, j) * v).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
