//! Model catalog: drift/diffusion coefficient families, the diffusion model
//! type, its standing-assumption checks, and the named example models.
//!
//! Coefficients are closed families with parameters rather than closures, so
//! a model is plain data: immutable, `Send + Sync`, serialisable and hashable.
//! The local constants `gamma = μ'(0)` and `a_prime0 = a'(0)` are kept as
//! given; nothing here renormalises `a'(0)` to one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::quad::OriginExpansion;
use crate::numerics::roots;
use crate::scalar::Scalar;

/// Drift coefficient `μ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum DriftForm<T> {
    /// `γ x (1 - x/K)`
    Logistic {
        gamma: T,
        capacity: T,
    },
    /// `γ x (1 - (x/K)^θ)`
    GilpinAyala {
        gamma: T,
        capacity: T,
        theta: T,
    },
    /// `γ x (1 - x/K - β x^{n-1} / (1 + x^n))`
    Holling {
        gamma: T,
        capacity: T,
        beta: T,
        n: T,
    },
    /// `γ x`
    Linear {
        gamma: T,
    },
    /// `Σ c_k x^k`
    Polynomial {
        coeffs: Vec<T>,
    },
    Zero,
}

/// Squared diffusion coefficient `a(x) = σ²(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum DiffusionForm<T> {
    /// `s x`
    Linear {
        sigma_sq: T,
    },
    /// `s x (1 - x)`
    WrightFisher {
        sigma_sq: T,
    },
    /// `s x²`
    Quadratic {
        sigma_sq: T,
    },
    Constant {
        value: T,
    },
    /// `Σ c_k x^k`
    Polynomial {
        coeffs: Vec<T>,
    },
}

fn horner<T: Scalar>(coeffs: &[T], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
}

fn fill<T: Copy>(xs: &[T], out: &mut [T], f: impl Fn(T) -> T) {
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = f(x);
    }
}

impl<T: Scalar> DriftForm<T> {
    #[inline]
    pub fn eval(&self, x: T) -> T {
        let mut out = [T::zero()];
        self.eval_each(&[x], &mut out);
        out[0]
    }

    /// `μ` at every point of `xs`, with the family dispatch outside the loop.
    #[inline]
    pub fn eval_each(&self, xs: &[T], out: &mut [T]) {
        match self {
            DriftForm::Logistic { gamma, capacity } => {
                let (g, c) = (*gamma, *capacity);
                fill(xs, out, |x| g * x * (T::one() - x / c))
            }
            DriftForm::GilpinAyala { gamma, capacity, theta } => {
                let (g, c, th) = (*gamma, *capacity, *theta);
                fill(xs, out, |x| g * x * (T::one() - (x / c).powf(th)))
            }
            DriftForm::Holling { gamma, capacity, beta, n } => {
                let (g, c, b, n) = (*gamma, *capacity, *beta, *n);
                fill(xs, out, |x| {
                    let sat =
                        if b == T::zero() { T::zero() } else { b * x.powf(n - T::one()) / (T::one() + x.powf(n)) };
                    g * x * (T::one() - x / c - sat)
                })
            }
            DriftForm::Linear { gamma } => {
                let g = *gamma;
                fill(xs, out, |x| g * x)
            }
            DriftForm::Polynomial { coeffs } => fill(xs, out, |x| horner(coeffs, x)),
            DriftForm::Zero => fill(xs, out, |_| T::zero()),
        }
    }

    /// `μ'(x)`.
    pub fn derivative(&self, x: T) -> T {
        let one = T::one();
        let two = T::lit(2.0);
        match self {
            DriftForm::Logistic { gamma, capacity } => *gamma * (one - two * x / *capacity),
            DriftForm::GilpinAyala { gamma, capacity, theta } => {
                *gamma * (one - (one + *theta) * (x / *capacity).powf(*theta))
            }
            DriftForm::Holling { gamma, capacity, beta, n } => {
                let base = *gamma * (one - two * x / *capacity);
                if *beta == T::zero() {
                    base
                } else {
                    let xn = x.powf(*n);
                    base - *gamma * *beta * *n * x.powf(*n - one) / ((one + xn) * (one + xn))
                }
            }
            DriftForm::Linear { gamma } => *gamma,
            DriftForm::Polynomial { coeffs } => {
                coeffs.iter().enumerate().skip(1).rev().fold(T::zero(), |acc, (k, &c)| acc * x + T::from_count(k) * c)
            }
            DriftForm::Zero => T::zero(),
        }
    }

    /// Closed-form `μ'(0)` where the family provides it.
    pub fn slope_at_origin(&self) -> Option<T> {
        match self {
            DriftForm::Logistic { gamma, .. } | DriftForm::GilpinAyala { gamma, .. } | DriftForm::Linear { gamma } => {
                Some(*gamma)
            }
            DriftForm::Holling { gamma, beta, n, .. } => {
                if *n == T::one() {
                    Some(*gamma * (T::one() - *beta))
                } else {
                    Some(*gamma)
                }
            }
            DriftForm::Polynomial { coeffs } => Some(coeffs.get(1).copied().unwrap_or(T::zero())),
            DriftForm::Zero => Some(T::zero()),
        }
    }

    /// Closed-form `μ''(0)`; `None` when it is infinite or not available.
    pub fn curvature_at_origin(&self) -> Option<T> {
        let two = T::lit(2.0);
        match self {
            DriftForm::Logistic { gamma, capacity } => Some(-two * *gamma / *capacity),
            DriftForm::GilpinAyala { gamma, capacity, theta } => {
                if *theta == T::one() {
                    Some(-two * *gamma / *capacity)
                } else if *theta > T::one() {
                    Some(T::zero())
                } else {
                    None
                }
            }
            DriftForm::Holling { gamma, capacity, beta, n } => {
                let base = -two * *gamma / *capacity;
                if *beta == T::zero() || *n > two {
                    Some(base)
                } else if *n == T::one() {
                    Some(base + two * *gamma * *beta)
                } else if *n == two {
                    Some(base - two * *gamma * *beta)
                } else {
                    None
                }
            }
            DriftForm::Linear { .. } | DriftForm::Zero => Some(T::zero()),
            DriftForm::Polynomial { coeffs } => Some(two * coeffs.get(2).copied().unwrap_or(T::zero())),
        }
    }
}

impl<T: Scalar> DiffusionForm<T> {
    #[inline]
    pub fn eval(&self, x: T) -> T {
        let mut out = [T::zero()];
        self.eval_each(&[x], &mut out);
        out[0]
    }

    /// `a` at every point of `xs`, with the family dispatch outside the loop.
    #[inline]
    pub fn eval_each(&self, xs: &[T], out: &mut [T]) {
        match self {
            DiffusionForm::Linear { sigma_sq } => {
                let s = *sigma_sq;
                fill(xs, out, |x| s * x)
            }
            DiffusionForm::WrightFisher { sigma_sq } => {
                let s = *sigma_sq;
                fill(xs, out, |x| s * x * (T::one() - x))
            }
            DiffusionForm::Quadratic { sigma_sq } => {
                let s = *sigma_sq;
                fill(xs, out, |x| s * x * x)
            }
            DiffusionForm::Constant { value } => {
                let v = *value;
                fill(xs, out, |_| v)
            }
            DiffusionForm::Polynomial { coeffs } => fill(xs, out, |x| horner(coeffs, x)),
        }
    }

    pub fn slope_at_origin(&self) -> Option<T> {
        match self {
            DiffusionForm::Linear { sigma_sq } | DiffusionForm::WrightFisher { sigma_sq } => Some(*sigma_sq),
            DiffusionForm::Quadratic { .. } | DiffusionForm::Constant { .. } => Some(T::zero()),
            DiffusionForm::Polynomial { coeffs } => Some(coeffs.get(1).copied().unwrap_or(T::zero())),
        }
    }

    /// True when `a` is bounded on the given domain (used to pick the theorem regime).
    pub fn bounded_on(&self, right_end: Option<T>) -> bool {
        match self {
            DiffusionForm::Constant { .. } => true,
            _ => right_end.is_some(),
        }
    }
}

/// Optional replacements for derived model constants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_prime0: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_c: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_ceiling: Option<T>,
}

/// A one-dimensional diffusion `dX = μ(X) dt + √(ε a(X)) dB` on `(0, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel<T> {
    pub name: String,
    pub drift: DriftForm<T>,
    pub diffusion: DiffusionForm<T>,
    /// Right end `r`; `None` means `r = ∞`.
    pub right_end: Option<T>,
    /// `μ'(0)`.
    pub gamma: T,
    /// `a'(0)`.
    pub a_prime0: T,
    /// Nearest stable zero of the drift, if any.
    pub x_c: Option<T>,
    /// `μ''(0)` when finite.
    pub curvature0: Option<T>,
    /// Finite stand-in for `r = ∞` in deterministic integration (diagnostic only).
    pub sim_ceiling: T,
}

/// Relative tolerance for agreement between analytic and finite-difference constants.
pub const DERIVATIVE_RTOL: f64 = 1e-6;

impl<T: Scalar> DiffusionModel<T> {
    pub fn new(
        name: impl Into<String>,
        drift: DriftForm<T>,
        diffusion: DiffusionForm<T>,
        right_end: Option<T>,
        overrides: Overrides<T>,
    ) -> Result<Self> {
        let name = name.into();
        if let Some(r) = right_end {
            if !(r > T::zero()) {
                return Err(Error::bad("r", "right end must be positive"));
            }
        }
        let scan_limit = right_end.unwrap_or_else(|| T::lit(1e3));
        let x_c = match overrides.x_c {
            Some(x) if x > T::zero() => Some(x),
            Some(_) => return Err(Error::bad("x_c", "must be positive")),
            None => roots::first_downcrossing(|x| drift.eval(x), scan_limit, 20_000),
        };
        let h = T::lit(1e-6) * x_c.unwrap_or(T::one()).max(T::one());

        let fd_gamma = roots::derivative_at_origin(|x| drift.eval(x), h);
        let gamma = reconcile("gamma", drift.slope_at_origin(), overrides.gamma, fd_gamma)?;
        let fd_a = roots::derivative_at_origin(|x| diffusion.eval(x), h);
        let a_prime0 = reconcile("a_prime0", diffusion.slope_at_origin(), overrides.a_prime0, fd_a)?;

        let curvature0 = drift
            .curvature_at_origin()
            .or_else(|| roots::curvature_at_origin(|x| drift.eval(x), T::lit(1e-4) * x_c.unwrap_or(T::one())));

        let sim_ceiling = overrides.sim_ceiling.unwrap_or_else(|| match (right_end, x_c) {
            (Some(r), _) => r,
            (None, Some(xc)) => T::lit(10.0) * xc,
            (None, None) => T::lit(1e3),
        });

        Ok(Self { name, drift, diffusion, right_end, gamma, a_prime0, x_c, curvature0, sim_ceiling })
    }

    /// Feller branching diffusion `dY = γY dt + √(a'(0) Y) dB` as a model with unit noise scale.
    pub fn feller(gamma: T, a_prime0: T) -> Result<Self> {
        if !(gamma > T::zero()) || !(a_prime0 > T::zero()) {
            return Err(Error::bad("gamma/a_prime0", "must be positive"));
        }
        Self::new(
            "feller",
            DriftForm::Linear { gamma },
            DiffusionForm::Linear { sigma_sq: a_prime0 },
            None,
            Overrides::default(),
        )
    }

    #[inline]
    pub fn drift(&self, x: T) -> T {
        self.drift.eval(x)
    }

    #[inline]
    pub fn drift_derivative(&self, x: T) -> T {
        self.drift.derivative(x)
    }

    #[inline]
    pub fn diffusion_sq(&self, x: T) -> T {
        self.diffusion.eval(x)
    }

    pub fn is_unbounded(&self) -> bool {
        self.right_end.is_none()
    }

    /// Upper end usable for numerics: `r` if finite, otherwise the simulation ceiling.
    pub fn numeric_right(&self) -> T {
        self.right_end.unwrap_or(self.sim_ceiling)
    }

    pub fn contains(&self, x: T) -> bool {
        x > T::zero() && self.right_end.map_or(true, |r| x < r)
    }

    pub fn origin_expansion(&self) -> OriginExpansion<T> {
        OriginExpansion { slope: self.gamma, curvature: self.curvature0 }
    }

    /// Whether `|μ(y) - μ(x)| <= γ |y - x|` holds on a grid up to `x_c`
    /// (or the numeric right end).
    pub fn drift_condition_holds(&self) -> bool {
        let top = self.x_c.unwrap_or_else(|| self.numeric_right());
        let n = 400;
        let pts: Vec<T> = (0..=n).map(|i| top * T::from_count(i) / T::from_count(n)).collect();
        let vals: Vec<T> = pts.iter().map(|&x| self.drift(x)).collect();
        let slack = T::one() + T::lit(1e-9);
        pts.windows(2).zip(vals.windows(2)).all(|(p, v)| (v[1] - v[0]).abs() <= self.gamma * (p[1] - p[0]) * slack)
    }

    /// Short content hash identifying the model in output metadata.
    pub fn fingerprint(&self) -> String
    where
        T: Serialize,
    {
        let json = serde_json::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn reconcile<T: Scalar>(name: &str, analytic: Option<T>, given: Option<T>, fd: T) -> Result<T> {
    match (analytic, given) {
        (Some(a), Some(g)) => {
            let scale = a.abs().max(T::lit(1e-300));
            if ((a - g) / scale).abs() > T::lit(DERIVATIVE_RTOL) {
                return Err(Error::bad(name, format!("override {g} conflicts with analytic value {a}")));
            }
            Ok(a)
        }
        (Some(a), None) => Ok(a),
        (None, Some(g)) => Ok(g),
        (None, None) => Ok(fd),
    }
}

/// One line of an assumption check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub checks: Vec<Check>,
    /// Tag only: models failing the drift condition remain simulable.
    pub drift_condition: bool,
    pub usable: bool,
}

impl ValidationReport {
    pub fn failed(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} (measured {:.6e}: {})", c.name, c.measured, c.detail))
            .collect()
    }
}

/// Runs every standing-assumption check and reports, without failing on violations.
pub fn assess<T: Scalar>(model: &DiffusionModel<T>) -> Result<ValidationReport> {
    let top = model.x_c.unwrap_or_else(|| model.numeric_right());
    let n = 200;
    for i in 1..n {
        let x = top * T::from_count(i) / T::from_count(n);
        let (m, a) = (model.drift(x), model.diffusion_sq(x));
        if !m.is_finite() || !a.is_finite() {
            return Err(Error::NonEvaluable { x: x.as_f64(), what: format!("μ = {m}, a = {a}") });
        }
    }

    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, measured: T, detail: String| {
        checks.push(Check { name: name.into(), passed, measured: measured.as_f64(), detail });
    };
    let zero_tol = T::lit(1e-12);
    let mu0 = model.drift(T::zero());
    push("drift_vanishes_at_origin", mu0.abs() <= zero_tol, mu0, "μ(0) = 0".into());
    let a0 = model.diffusion_sq(T::zero());
    push("diffusion_vanishes_at_origin", a0.abs() <= zero_tol, a0, "a(0) = 0".into());
    push("gamma_positive", model.gamma > T::zero(), model.gamma, "μ'(0) > 0".into());
    push("a_prime0_positive", model.a_prime0 > T::zero(), model.a_prime0, "a'(0) > 0".into());

    let h = T::lit(1e-6) * model.x_c.unwrap_or(T::one()).max(T::one());
    let rel = |est: T, reference: T| {
        if reference == T::zero() {
            est.abs()
        } else {
            ((est - reference) / reference).abs()
        }
    };
    let fd_g = roots::derivative_at_origin(|x| model.drift(x), h);
    let r = rel(fd_g, model.gamma);
    push(
        "gamma_matches_finite_difference",
        r <= T::lit(DERIVATIVE_RTOL),
        r,
        format!("finite difference {fd_g} vs {}", model.gamma),
    );
    let fd_a = roots::derivative_at_origin(|x| model.diffusion_sq(x), h);
    let r = rel(fd_a, model.a_prime0);
    push(
        "a_prime0_matches_finite_difference",
        r <= T::lit(DERIVATIVE_RTOL),
        r,
        format!("finite difference {fd_a} vs {}", model.a_prime0),
    );

    if let Some(xc) = model.x_c {
        let m = model.drift(xc);
        let scale = T::one().max(model.gamma.abs() * xc);
        push("x_c_is_zero_of_drift", m.abs() <= T::lit(1e-9) * scale, m, format!("μ({xc})"));
        let worst = (1..n).map(|i| model.drift(xc * T::from_count(i) / T::from_count(n))).fold(T::infinity(), T::min);
        push("drift_positive_below_x_c", worst > T::zero(), worst, "min μ on (0, x_c)".into());
    }
    let right = model.numeric_right();
    let worst_a =
        (1..n).map(|i| model.diffusion_sq(right * T::from_count(i) / T::from_count(n))).fold(T::infinity(), T::min);
    push("diffusion_positive_inside", worst_a > T::zero(), worst_a, "min a on (0, r)".into());

    let usable = checks.iter().all(|c| c.passed);
    Ok(ValidationReport { model: model.name.clone(), checks, drift_condition: model.drift_condition_holds(), usable })
}

/// Checks the standing assumptions; `AssumptionViolated` lists every failed item.
pub fn validate_assumptions<T: Scalar>(model: &DiffusionModel<T>) -> Result<ValidationReport> {
    let report = assess(model)?;
    if report.usable {
        Ok(report)
    } else {
        Err(Error::AssumptionViolated { failed: report.failed() })
    }
}

/// Noise scale and initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub epsilon: T,
    pub x0: T,
}

impl<T: Scalar> ModelParams<T> {
    /// `x0 = ε`, the standard start next to the repelling point.
    pub fn from_epsilon(model: &DiffusionModel<T>, epsilon: T) -> Result<Self> {
        Self::new(model, epsilon, epsilon)
    }

    pub fn new(model: &DiffusionModel<T>, epsilon: T, x0: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::bad("epsilon", "must be positive"));
        }
        if !model.contains(x0) {
            return Err(Error::bad("x0", format!("{x0} outside the model domain")));
        }
        Ok(Self { epsilon, x0 })
    }

    /// Zero-noise parameters, used to compare simulation against the flow.
    pub fn deterministic(model: &DiffusionModel<T>, x0: T) -> Result<Self> {
        if !model.contains(x0) {
            return Err(Error::bad("x0", format!("{x0} outside the model domain")));
        }
        Ok(Self { epsilon: T::zero(), x0 })
    }
}

pub type ParamMap = BTreeMap<String, f64>;

pub const BUILTIN_MODELS: [&str; 5] =
    ["kimura_fisher_wright", "logistic_feller", "gilpin_ayala_pow", "holling", "custom"];

fn take(params: &ParamMap, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_keys(params: &ParamMap, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        let known = allowed.contains(&k.as_str())
            || ((k.starts_with("mu") || k.starts_with('a'))
                && allowed.contains(&"coeffs")
                && k[k.starts_with("mu") as usize + 1..].parse::<usize>().is_ok());
        if !known {
            return Err(Error::bad(k, "unknown parameter"));
        }
    }
    Ok(())
}

/// Builds one of the catalog models from a parameter map.
///
/// Recognised keys: `gamma` (1), `x_c` (1), `sigma` (1, so `a = σ² x`),
/// `theta` (1) for `gilpin_ayala_pow`, `beta` (0) and `n` (1) for `holling`.
/// `custom` takes polynomial coefficients `mu1, mu2, …` and `a0, a1, …` plus
/// an optional right end `r`. `gamma`, `a_prime0`, `x_c` act as overrides for
/// `custom`.
pub fn builtin_model<T: Scalar>(name: &str, params: &ParamMap) -> Result<DiffusionModel<T>> {
    let t = T::lit;
    let positive = |key: &str, v: f64| -> Result<T> {
        if v > 0.0 && v.is_finite() {
            Ok(t(v))
        } else {
            Err(Error::bad(key, format!("must be positive, got {v}")))
        }
    };
    let common = ["gamma", "x_c", "sigma"];
    match name {
        "kimura_fisher_wright" | "logistic_feller" | "gilpin_ayala_pow" | "holling" => {
            let mut allowed = common.to_vec();
            match name {
                "gilpin_ayala_pow" => allowed.push("theta"),
                "holling" => allowed.extend(["beta", "n"]),
                _ => {}
            }
            check_keys(params, &allowed)?;
            let gamma = positive("gamma", take(params, "gamma", 1.0))?;
            let capacity = positive("x_c", take(params, "x_c", 1.0))?;
            let sigma = positive("sigma", take(params, "sigma", 1.0))?;
            let sigma_sq = sigma * sigma;
            let (drift, diffusion, right) = match name {
                "kimura_fisher_wright" => {
                    if capacity > T::one() {
                        return Err(Error::bad("x_c", "must not exceed 1 on (0, 1)"));
                    }
                    (DriftForm::Logistic { gamma, capacity }, DiffusionForm::WrightFisher { sigma_sq }, Some(T::one()))
                }
                "logistic_feller" => {
                    (DriftForm::Logistic { gamma, capacity }, DiffusionForm::Linear { sigma_sq }, None)
                }
                "gilpin_ayala_pow" => {
                    let theta = positive("theta", take(params, "theta", 1.0))?;
                    (DriftForm::GilpinAyala { gamma, capacity, theta }, DiffusionForm::Linear { sigma_sq }, None)
                }
                _ => {
                    let beta = take(params, "beta", 0.0);
                    if !(beta >= 0.0) {
                        return Err(Error::bad("beta", format!("must be >= 0, got {beta}")));
                    }
                    let n = take(params, "n", 1.0);
                    if !(n >= 1.0) {
                        return Err(Error::bad("n", format!("must be >= 1, got {n}")));
                    }
                    (
                        DriftForm::Holling { gamma, capacity, beta: t(beta), n: t(n) },
                        DiffusionForm::Linear { sigma_sq },
                        None,
                    )
                }
            };
            let overrides = if name == "holling" {
                Overrides::default()
            } else {
                Overrides { x_c: Some(capacity), ..Overrides::default() }
            };
            DiffusionModel::new(name, drift, diffusion, right, overrides)
        }
        "custom" => {
            check_keys(params, &["coeffs", "r", "gamma", "a_prime0", "x_c"])?;
            let poly = |prefix: &str| -> Vec<T> {
                let mut c: Vec<(usize, f64)> = params
                    .iter()
                    .filter_map(|(k, v)| {
                        let rest = k.strip_prefix(prefix)?;
                        if prefix == "a" && rest.starts_with('_') {
                            return None;
                        }
                        rest.parse::<usize>().ok().map(|i| (i, *v))
                    })
                    .collect();
                c.sort_by_key(|p| p.0);
                let len = c.last().map_or(0, |p| p.0 + 1);
                let mut out = vec![T::zero(); len];
                for (i, v) in c {
                    out[i] = t(v);
                }
                out
            };
            let mu = poly("mu");
            let a = poly("a");
            if mu.is_empty() || a.is_empty() {
                return Err(Error::bad("custom", "needs mu<k> and a<k> coefficients"));
            }
            let right = params.get("r").map(|&r| positive("r", r)).transpose()?;
            let overrides = Overrides {
                gamma: params.get("gamma").map(|&v| t(v)),
                a_prime0: params.get("a_prime0").map(|&v| t(v)),
                x_c: params.get("x_c").map(|&v| t(v)),
                sim_ceiling: None,
            };
            DiffusionModel::new(
                "custom",
                DriftForm::Polynomial { coeffs: mu },
                DiffusionForm::Polynomial { coeffs: a },
                right,
                overrides,
            )
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Model section of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: ParamMap,
    #[serde(default)]
    pub overrides: Overrides<f64>,
    /// Explicit coefficient families (custom models only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftForm<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionForm<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_end: Option<f64>,
}

impl ModelSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            params: ParamMap::new(),
            overrides: Overrides::default(),
            drift: None,
            diffusion: None,
            right_end: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn build(&self) -> Result<DiffusionModel<f64>> {
        let mut model = match (&self.drift, &self.diffusion) {
            (Some(d), Some(a)) => {
                if !self.params.is_empty() {
                    return Err(Error::bad("params", "not used with explicit drift/diffusion forms"));
                }
                return DiffusionModel::new(self.name.clone(), d.clone(), a.clone(), self.right_end, self.overrides);
            }
            (None, None) => builtin_model::<f64>(&self.name, &self.params)?,
            _ => return Err(Error::bad("model", "drift and diffusion forms must be given together")),
        };
        let o = self.overrides;
        if o.gamma.is_some() || o.a_prime0.is_some() || o.x_c.is_some() || o.sim_ceiling.is_some() {
            let merged = Overrides {
                gamma: o.gamma,
                a_prime0: o.a_prime0,
                x_c: o.x_c.or(model.x_c),
                sim_ceiling: o.sim_ceiling,
            };
            model = DiffusionModel::new(model.name, model.drift, model.diffusion, model.right_end, merged)?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(pairs: &[(&str, f64)]) -> ParamMap {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn logistic_feller_passes_all() {
        let m = builtin_model::<f64>("logistic_feller", &p(&[("gamma", 1.0), ("x_c", 1.0)])).unwrap();
        assert_eq!(m.gamma, 1.0);
        assert_eq!(m.a_prime0, 1.0);
        let r = validate_assumptions(&m).unwrap();
        assert!(r.usable && r.drift_condition);
    }

    #[test]
    fn linear_gilpin_ayala_fails_a_prime0() {
        let m = DiffusionModel::<f64>::new(
            "linear_gilpin_ayala",
            DriftForm::GilpinAyala { gamma: 1.0, capacity: 1.0, theta: 1.0 },
            DiffusionForm::Quadratic { sigma_sq: 1.0 },
            None,
            Overrides::default(),
        )
        .unwrap();
        match validate_assumptions(&m).unwrap_err() {
            Error::AssumptionViolated { failed } => {
                assert!(failed.iter().any(|f| f.starts_with("a_prime0_positive")), "{failed:?}");
                assert!(!failed.iter().any(|f| f.starts_with("gamma_positive")));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn negative_slope_fails_gamma() {
        let m = DiffusionModel::<f64>::new(
            "decay",
            DriftForm::Linear { gamma: -1.0 },
            DiffusionForm::Linear { sigma_sq: 1.0 },
            None,
            Overrides::default(),
        )
        .unwrap();
        let r = assess(&m).unwrap();
        let g = r.checks.iter().find(|c| c.name == "gamma_positive").unwrap();
        assert!(!g.passed);
        assert!(validate_assumptions(&m).is_err());
    }

    #[test]
    fn reductions_match_logistic() {
        let lf = builtin_model::<f64>("logistic_feller", &p(&[("gamma", 1.3), ("x_c", 2.0)])).unwrap();
        let ga = builtin_model::<f64>("gilpin_ayala_pow", &p(&[("gamma", 1.3), ("x_c", 2.0), ("theta", 1.0)])).unwrap();
        let ho = builtin_model::<f64>("holling", &p(&[("gamma", 1.3), ("x_c", 2.0), ("beta", 0.0)])).unwrap();
        for i in 0..=100 {
            let x = 3.0 * i as f64 / 100.0;
            assert!((lf.drift(x) - ga.drift(x)).abs() < 1e-14);
            assert!((lf.drift(x) - ho.drift(x)).abs() < 1e-14);
        }
        assert!((ho.x_c.unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn builtins_are_valid_with_analytic_constants() {
        let cases = [
            ("kimura_fisher_wright", p(&[("gamma", 2.0)]), 2.0, 1.0),
            ("logistic_feller", p(&[("gamma", 0.7), ("sigma", 1.5)]), 0.7, 2.25),
            ("gilpin_ayala_pow", p(&[("theta", 2.0), ("sigma", 0.5)]), 1.0, 0.25),
            ("holling", p(&[("beta", 0.3), ("n", 2.0)]), 1.0, 1.0),
        ];
        for (name, params, g, a) in cases {
            let m = builtin_model::<f64>(name, &params).unwrap();
            assert!((m.gamma - g).abs() < 1e-8, "{name}");
            assert!((m.a_prime0 - a).abs() < 1e-8, "{name}");
            validate_assumptions(&m).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(matches!(
            builtin_model::<f64>("gilpin_ayala_pow", &p(&[("theta", 0.0)])),
            Err(Error::BadParameter { .. })
        ));
        assert!(builtin_model::<f64>("holling", &p(&[("n", 0.5)])).is_err());
        assert!(builtin_model::<f64>("holling", &p(&[("beta", -0.1)])).is_err());
        assert!(builtin_model::<f64>("logistic_feller", &p(&[("bogus", 1.0)])).is_err());
        assert!(matches!(builtin_model::<f64>("nope", &ParamMap::new()), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn custom_polynomial_model() {
        let m = builtin_model::<f64>("custom", &p(&[("mu1", 1.0), ("mu2", -1.0), ("a1", 1.0)])).unwrap();
        assert_eq!(m.gamma, 1.0);
        assert!((m.x_c.unwrap() - 1.0).abs() < 1e-12);
        validate_assumptions(&m).unwrap();
    }

    #[test]
    fn conflicting_override_is_an_error() {
        let r = DiffusionModel::<f64>::new(
            "x",
            DriftForm::Logistic { gamma: 1.0, capacity: 1.0 },
            DiffusionForm::Linear { sigma_sq: 1.0 },
            None,
            Overrides { gamma: Some(1.1), ..Overrides::default() },
        );
        assert!(matches!(r, Err(Error::BadParameter { .. })));
    }

    #[test]
    fn drift_condition_is_tagged_not_required() {
        let ga = builtin_model::<f64>("gilpin_ayala_pow", &p(&[("theta", 2.0)])).unwrap();
        let r = validate_assumptions(&ga).unwrap();
        assert!(!r.drift_condition);
        let kfw = builtin_model::<f64>("kimura_fisher_wright", &ParamMap::new()).unwrap();
        assert!(kfw.drift_condition_holds());
    }

    #[test]
    fn spec_roundtrip_and_fingerprint() {
        let spec = ModelSpec::named("logistic_feller").with_param("gamma", 1.0);
        let text = toml::to_string(&spec).unwrap();
        let back: ModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let a = spec.build().unwrap().fingerprint();
        let b = back.build().unwrap().fingerprint();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn explicit_forms_in_spec() {
        let text = r#"
            name = "my_model"
            right_end = 1.0
            [drift]
            form = "logistic"
            gamma = 1.0
            capacity = 1.0
            [diffusion]
            form = "wright_fisher"
            sigma_sq = 1.0
        "#;
        let spec: ModelSpec = toml::from_str(text).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.right_end, Some(1.0));
        assert_eq!(m.x_c, Some(1.0));
    }

    #[test]
    fn drift_derivatives_match_differences() {
        let models = [
            builtin_model::<f64>("logistic_feller", &p(&[("x_c", 2.0)])).unwrap(),
            builtin_model::<f64>("gilpin_ayala_pow", &p(&[("theta", 2.5)])).unwrap(),
            builtin_model::<f64>("holling", &p(&[("beta", 0.3), ("n", 2.0)])).unwrap(),
            builtin_model::<f64>("custom", &p(&[("mu1", 1.0), ("mu3", -2.0), ("a1", 1.0)])).unwrap(),
        ];
        for m in &models {
            for x in [0.1, 0.5, 0.9, 1.7] {
                let h = 1e-6;
                let fd = (m.drift(x + h) - m.drift(x - h)) / (2.0 * h);
                assert!((m.drift_derivative(x) - fd).abs() < 1e-7, "{} at {x}", m.name);
            }
        }
    }

    #[test]
    fn f32_models_work() {
        let m = builtin_model::<f32>("logistic_feller", &ParamMap::new()).unwrap();
        assert!((m.drift(0.5) - 0.25).abs() < 1e-7);
    }
}
