//! Scale and speed of `dX = μ(X) dt + √(ε a(X)) dB`, boundary
//! classification, and hitting and maximum-exceedance probabilities.
//!
//! With `L(x) = -∫_{x_ref}^x 2μ/(εa)` the scale density is `s' = e^L`, the
//! scale function `s(x) = ∫_{x_ref}^x s'` and the speed density
//! `m' = 1/(ε a s')`. Everything is carried in logarithms: for small `ε` the
//! densities span thousands of orders of magnitude.
//!
//! `L` is tabulated at anchors (geometric toward each end, uniform in the
//! bulk) by adaptive quadrature; a value between anchors adds one 15-point
//! Kronrod panel from the nearest anchor. The integrals of `s'` and `m'`
//! from `x_ref` to every anchor are tabulated as well. Log-space integrals
//! over a piece bisect until `ln f` varies by less than `PANEL_SPREAD`
//! across it, dropping halves of a monotone piece that lie far below the
//! other half.
//!
//! An end is classified from integrals cut off at a sequence approaching it
//! (halving the distance to a finite end, doubling toward `+∞`). The
//! increments of such an integral behave like `2^{e k}`; `e` is fitted from
//! the last few increments, and `e < -0.1` means convergence, `e > 0.1`
//! divergence. Inside that band the increments are polynomial in `k`, and
//! the fitted power `β` decides instead (`β < -1.1` converges, `β > -0.9`
//! diverges). Anything else is reported as inconclusive.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::model::DiffusionModel;
use crate::numerics::quad::{integrate, kronrod_panel, log_add};
use crate::numerics::QuadOptions;
use crate::scalar::Scalar;

/// Half-width of the indeterminacy band for fitted growth exponents.
pub const GROWTH_BAND: f64 = 0.1;
const FINITE_END_CUTOFFS: usize = 30;
const INFINITE_END_CUTOFFS: usize = 10;
/// Octaves of anchors beyond the last cutoff toward `+∞`.
const RIGHT_MARGIN_OCTAVES: i32 = 2;
const PANEL_SPREAD: f64 = 6.0;
const PANEL_RTOL: f64 = 1e-11;
const PANEL_DEPTH: usize = 60;
/// Bisections allowed for accuracy alone, once `ln f` is already flat.
const PANEL_REFINE: usize = 4;
/// A monotone half whose larger end lies this far (in `ln`) below the
/// other half's contributes nothing at double precision.
const PANEL_PRUNE: f64 = 40.0;
const FIT_WINDOW: usize = 3;
const LEFT_OCTAVES: i32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FellerClass {
    Regular,
    Exit,
    Entrance,
    Natural,
}

/// Outcome of one cutoff-sequence test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndIntegral {
    pub finite: bool,
    /// Fitted geometric growth exponent of the increments.
    pub exponent: f64,
    /// Fitted power of `k`, when the exponent fell inside the band.
    pub power: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryVerdict {
    pub side: Side,
    /// Position of the end; `None` for `+∞`.
    pub location: Option<f64>,
    /// `s` finite at the end.
    pub attracting: bool,
    pub feller: FellerClass,
    pub scale: EndIntegral,
    /// `∫ s'(x) m[x, x₁] dx` near the end.
    pub exit_test: EndIntegral,
    /// `∫ m'(x) s[x, x₁] dx` near the end.
    pub entrance_test: EndIntegral,
}

/// Scale machinery for one model and noise level.
#[derive(Debug, Clone)]
pub struct Scale<'a, T: Scalar> {
    model: &'a DiffusionModel<T>,
    epsilon: T,
    x_ref: T,
    anchors: Vec<T>,
    log_density: Vec<T>,
    /// `ln` of `∫ s'` between `x_ref` and each anchor.
    cum_scale: Vec<T>,
    /// `ln` of `∫ m'` between `x_ref` and each anchor.
    cum_speed: Vec<T>,
    i_ref: usize,
}

#[derive(Debug, Clone, Copy)]
enum Density {
    Scale,
    Speed,
}

impl<'a, T: Scalar> Scale<'a, T> {
    /// Normalises `s(x_ref) = 0`, `s'(x_ref) = 1` at `x_ref = x_c/2`, or the
    /// domain midpoint (`1` on an unbounded domain) without `x_c`.
    pub fn new(model: &'a DiffusionModel<T>, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::BadEpsilon(epsilon.as_f64()));
        }
        let two = T::lit(2.0);
        let x_ref = match (model.x_c, model.right_end) {
            (Some(xc), _) => xc / two,
            (None, Some(r)) => r / two,
            (None, None) => T::one(),
        };
        let mut anchors = Vec::new();
        let quarter_octave = two.powf(T::lit(0.25));
        let mut x = x_ref * two.powi(-LEFT_OCTAVES);
        while x < x_ref / T::lit(4.0) {
            anchors.push(x);
            x = x * quarter_octave;
        }
        let bulk_end = match model.right_end {
            Some(r) => r - (r - x_ref) / T::lit(4.0),
            None => x_ref * T::lit(8.0),
        };
        let step = x_ref / T::lit(64.0);
        let mut x = x_ref / T::lit(4.0);
        while x < bulk_end {
            anchors.push(x);
            x += step;
        }
        match model.right_end {
            Some(r) => {
                for k in 0..=(4 * LEFT_OCTAVES) {
                    let x = r - (r - bulk_end) * two.powf(-T::from_count(k as usize) / T::lit(4.0));
                    if x >= r - T::lit(16.0) * T::epsilon() * r {
                        break;
                    }
                    anchors.push(x);
                }
            }
            None => {
                let mut x = bulk_end;
                while x < x_ref * two.powi(INFINITE_END_CUTOFFS as i32 + RIGHT_MARGIN_OCTAVES) {
                    anchors.push(x);
                    x = x * quarter_octave;
                }
            }
        }
        anchors.push(x_ref);
        anchors.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        anchors.dedup_by(|a, b| (*a - *b).abs() <= T::epsilon() * b.abs());
        let mut scale = Self {
            model,
            epsilon,
            x_ref,
            anchors,
            log_density: Vec::new(),
            cum_scale: Vec::new(),
            cum_speed: Vec::new(),
            i_ref: 0,
        };
        let opts = QuadOptions { atol: T::attainable(1e-13), rtol: T::attainable(1e-10), max_segments: 2000 };
        for &x in &scale.anchors {
            if !(model.diffusion_sq(x) > T::zero()) {
                return Err(Error::SingularIntegrand { at: x.as_f64() });
            }
        }
        let i_ref = scale.anchors.iter().position(|&a| a == x_ref).unwrap_or(0);
        let n = scale.anchors.len();
        let pieces: Vec<T> = (0..n - 1)
            .into_par_iter()
            .map(|i| {
                let (a, b) = (scale.anchors[i], scale.anchors[i + 1]);
                integrate(|u| scale.log_slope(u), a, b, &opts).map(|r| r.value)
            })
            .collect::<Result<_>>()?;
        let mut l = vec![T::zero(); n];
        for i in i_ref + 1..n {
            l[i] = l[i - 1] + pieces[i - 1];
        }
        for i in (0..i_ref).rev() {
            l[i] = l[i + 1] - pieces[i];
        }
        scale.log_density = l;
        scale.i_ref = i_ref;
        scale.cum_scale = scale.cumulative(Density::Scale);
        scale.cum_speed = scale.cumulative(Density::Speed);
        Ok(scale)
    }

    pub fn x_ref(&self) -> T {
        self.x_ref
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn model(&self) -> &DiffusionModel<T> {
        self.model
    }

    /// `L'(x) = -2μ(x)/(ε a(x))`.
    fn log_slope(&self, x: T) -> T {
        -T::lit(2.0) * self.model.drift(x) / (self.epsilon * self.model.diffusion_sq(x))
    }

    /// `ln s'(x)`.
    pub fn log_scale_density(&self, x: T) -> T {
        let i = self.anchors.partition_point(|&a| a <= x);
        let (anchor, base) = if i == 0 {
            (self.anchors[0], self.log_density[0])
        } else {
            (self.anchors[i - 1], self.log_density[i - 1])
        };
        if x == anchor {
            return base;
        }
        base + kronrod_panel(|u| self.log_slope(u), anchor, x).0
    }

    /// `s'(x)`, normalised to 1 at `x_ref`.
    pub fn scale_density(&self, x: T) -> T {
        self.log_scale_density(x).exp()
    }

    /// `ln m'(x) = -ln(ε a(x)) - ln s'(x)`.
    pub fn log_speed_density(&self, x: T) -> T {
        -(self.epsilon * self.model.diffusion_sq(x)).ln() - self.log_scale_density(x)
    }

    pub fn speed_density(&self, x: T) -> T {
        self.log_speed_density(x).exp()
    }

    fn log_density_of(&self, d: Density, x: T) -> T {
        match d {
            Density::Scale => self.log_scale_density(x),
            Density::Speed => self.log_speed_density(x),
        }
    }

    fn cumulative(&self, d: Density) -> Vec<T> {
        let n = self.anchors.len();
        let g = |u: T| self.log_density_of(d, u);
        let pieces: Vec<T> = (0..n - 1)
            .into_par_iter()
            .map(|i| {
                let (a, b) = (self.anchors[i], self.anchors[i + 1]);
                log_panel(&g, a, b, g(a), g(b), PANEL_DEPTH, PANEL_REFINE)
            })
            .collect();
        let mut cum = vec![T::neg_infinity(); n];
        for i in self.i_ref + 1..n {
            cum[i] = log_add(cum[i - 1], pieces[i - 1]);
        }
        for i in (0..self.i_ref).rev() {
            cum[i] = log_add(cum[i + 1], pieces[i]);
        }
        cum
    }

    /// `ln` of the integral of the density between `x_ref` and `x`.
    fn log_from_ref(&self, d: Density, x: T) -> T {
        let cum = match d {
            Density::Scale => &self.cum_scale,
            Density::Speed => &self.cum_speed,
        };
        let g = |u: T| self.log_density_of(d, u);
        let i = self.anchors.partition_point(|&a| a <= x);
        if x >= self.x_ref {
            let a = self.anchors[i - 1];
            log_add(cum[i - 1], log_panel(&g, a, x, g(a), g(x), PANEL_DEPTH, PANEL_REFINE))
        } else {
            let b = self.anchors[i];
            log_add(cum[i], log_panel(&g, x, b, g(x), g(b), PANEL_DEPTH, PANEL_REFINE))
        }
    }

    /// `ln ∫_a^b exp(g)`, split at the anchors inside `(a, b)`.
    fn log_between_with(&self, g: &dyn Fn(T) -> T, a: T, b: T) -> T {
        if a >= b {
            return T::neg_infinity();
        }
        let lo = self.anchors.partition_point(|&x| x <= a);
        let hi = self.anchors.partition_point(|&x| x < b);
        let mut points = Vec::with_capacity(hi.saturating_sub(lo) + 2);
        points.push(a);
        points.extend_from_slice(&self.anchors[lo..hi.max(lo)]);
        points.push(b);
        let vals: Vec<T> = points.iter().map(|&x| g(x)).collect();
        (0..points.len() - 1).fold(T::neg_infinity(), |acc, k| {
            log_add(acc, log_panel(g, points[k], points[k + 1], vals[k], vals[k + 1], PANEL_DEPTH, PANEL_REFINE))
        })
    }

    fn checked(v: T, at: T) -> Result<T> {
        if v.is_nan() {
            Err(Error::SingularIntegrand { at: at.as_f64() })
        } else {
            Ok(v)
        }
    }

    /// `ln ∫_a^b s'` for `a < b`.
    pub fn log_scale_between(&self, a: T, b: T) -> Result<T> {
        Self::checked(self.log_between_with(&|u| self.log_scale_density(u), a, b), a)
    }

    /// `ln ∫_a^b m'` for `a < b`.
    pub fn log_speed_between(&self, a: T, b: T) -> Result<T> {
        Self::checked(self.log_between_with(&|u| self.log_speed_density(u), a, b), a)
    }

    /// `s(x) = ∫_{x_ref}^x s'`.
    pub fn scale_function(&self, x: T) -> Result<T> {
        let v = Self::checked(self.log_from_ref(Density::Scale, x), x)?.exp();
        Ok(if x >= self.x_ref { v } else { -v })
    }

    /// `(ε a / 2) s'' + μ s'`, divided by `s'`, from a fourth-order stencil
    /// on `s'`; zero for an exact scale function.
    pub fn generator_residual(&self, x: T) -> T {
        let h = T::lit(1e-3) * x.min(self.x_ref);
        let sd = |k: f64| (self.log_scale_density(x + T::lit(k) * h) - self.log_scale_density(x)).exp();
        let second = (sd(-2.0) - T::lit(8.0) * sd(-1.0) + T::lit(8.0) * sd(1.0) - sd(2.0)) / (T::lit(12.0) * h);
        self.epsilon * self.model.diffusion_sq(x) / T::lit(2.0) * second + self.model.drift(x)
    }

    fn end_location(&self, side: Side) -> Option<T> {
        match side {
            Side::Left => Some(T::zero()),
            Side::Right => self.model.right_end,
        }
    }

    /// Cutoffs approaching the end, starting at `x_ref`.
    fn cutoffs(&self, side: Side) -> Vec<T> {
        let two = T::lit(2.0);
        match self.end_location(side) {
            Some(end) => (0..=FINITE_END_CUTOFFS).map(|k| end + (self.x_ref - end) * two.powi(-(k as i32))).collect(),
            None => (0..=INFINITE_END_CUTOFFS).map(|k| self.x_ref * two.powi(k as i32)).collect(),
        }
    }

    /// Fits the growth of the increments `∫` of `exp(ln_f)` between
    /// successive cutoffs.
    /// A NaN increment surfaces as `SingularIntegrand`.
    fn end_integral(&self, side: Side, ln_f: &(dyn Fn(T) -> T + Sync)) -> Result<EndIntegral> {
        let cuts = self.cutoffs(side);
        let logs: Vec<f64> = cuts
            .par_windows(2)
            .map(|w| {
                let (a, b) = if w[0] < w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
                Self::checked(self.log_between_with(ln_f, a, b), a).map(|v| v.as_f64())
            })
            .collect::<Result<_>>()?;
        classify_growth(&logs)
    }

    /// Verdict for one end.
    pub fn classify(&self, side: Side) -> Result<BoundaryVerdict> {
        let scale = self.end_integral(side, &|u| self.log_scale_density(u))?;
        let exit_test =
            self.end_integral(side, &|u| self.log_scale_density(u) + self.log_from_ref(Density::Speed, u))?;
        let entrance_test =
            self.end_integral(side, &|u| self.log_speed_density(u) + self.log_from_ref(Density::Scale, u))?;
        let feller = match (exit_test.finite, entrance_test.finite) {
            (true, true) => FellerClass::Regular,
            (true, false) => FellerClass::Exit,
            (false, true) => FellerClass::Entrance,
            (false, false) => FellerClass::Natural,
        };
        Ok(BoundaryVerdict {
            side,
            location: self.end_location(side).map(|v| v.as_f64()),
            attracting: scale.finite,
            feller,
            scale,
            exit_test,
            entrance_test,
        })
    }

    /// Whether `s(0+) > -∞`, from the scale cutoff test alone.
    pub fn left_attracting(&self) -> Result<bool> {
        Ok(self.end_integral(Side::Left, &|u| self.log_scale_density(u))?.finite)
    }

    /// `P_{x0}(T_upper < T_lower) = (s(x0) - s(lower)) / (s(upper) - s(lower))`.
    pub fn hitting_probability(&self, x0: T, lower: T, upper: T) -> Result<T> {
        if !(lower >= T::zero() && lower < x0 && x0 < upper) {
            return Err(Error::bad("x0", "need 0 <= lower < x0 < upper"));
        }
        if let Some(r) = self.model.right_end {
            if upper >= r {
                return Err(Error::bad("upper", "must lie inside the domain"));
            }
        }
        if lower == T::zero() && !self.left_attracting()? {
            return Err(Error::ScaleDiverges { end: "left".into() });
        }
        let num = self.log_scale_between(lower, x0)?;
        let rest = self.log_scale_between(x0, upper)?;
        let den = log_add(num, rest);
        Ok((num - den).exp())
    }

    /// `P_{x0}(sup_t X_t > M)`: the process is absorbed at 0 before ever
    /// reaching `M` unless it hits `M` first.
    pub fn max_exceedance_probability(&self, x0: T, m: T) -> Result<T> {
        if !self.left_attracting()? {
            return Err(Error::HypothesesFail("0 is not attracting: s(0+) = -∞".into()));
        }
        self.hitting_probability(x0, T::zero(), m)
    }

    /// `1 - P(hit upper)`, computed without cancellation.
    pub fn lower_first_probability(&self, x0: T, lower: T, upper: T) -> Result<T> {
        let rest = self.log_scale_between(x0, upper)?;
        let num = self.log_scale_between(lower, x0)?;
        let den = log_add(num, rest);
        Ok((rest - den).exp())
    }

    /// `ln (s(b) - s(a))` for `a < b`.
    pub fn log_scale_increment(&self, a: T, b: T) -> Result<T> {
        self.log_scale_between(a, b)
    }
}

/// `ln ∫_a^b exp(g)` given `g(a)`, `g(b)`; NaN if `g` is NaN inside.
/// `depth` bounds all bisections, `refine` those made for accuracy on a
/// piece where `g` is already flat.
fn log_panel<T: Scalar>(g: &dyn Fn(T) -> T, a: T, b: T, ga: T, gb: T, depth: usize, refine: usize) -> T {
    if a >= b {
        return T::neg_infinity();
    }
    let m = (a + b) * T::lit(0.5);
    let gm = g(m);
    if gm.is_nan() || ga.is_nan() || gb.is_nan() {
        return T::nan();
    }
    let all_finite = ga.is_finite() && gm.is_finite() && gb.is_finite();
    let top = [ga, gm, gb].into_iter().filter(|v| v.is_finite()).fold(T::neg_infinity(), T::max);
    if ga.max(gm).max(gb) == T::neg_infinity() {
        return T::neg_infinity();
    }
    let spread = ga.max(gm).max(gb) - ga.min(gm).min(gb);
    let splittable = m > a && m < b && depth > 0;
    let flat = all_finite && spread <= T::lit(PANEL_SPREAD);
    if flat || !splittable {
        if top == T::neg_infinity() {
            return top;
        }
        let (v, err) = kronrod_panel(|u| (g(u) - top).exp(), a, b);
        // Rounding in `g` near `top` sets a floor on the attainable accuracy.
        let tol = T::attainable(PANEL_RTOL).max(T::lit(64.0) * T::epsilon() * top.abs());
        if !splittable || refine == 0 || err <= tol * v {
            return top + v.ln();
        }
    }
    let refine = if flat { refine - 1 } else { refine };
    let monotone = (ga <= gm && gm <= gb) || (ga >= gm && gm >= gb);
    let (left_top, right_top) = (ga.max(gm), gm.max(gb));
    let prune = T::lit(PANEL_PRUNE);
    let left = if all_finite && monotone && left_top < right_top - prune {
        T::neg_infinity()
    } else {
        log_panel(g, a, m, ga, gm, depth - 1, refine)
    };
    let right = if all_finite && monotone && right_top < left_top - prune {
        T::neg_infinity()
    } else {
        log_panel(g, m, b, gm, gb, depth - 1, refine)
    };
    log_add(left, right)
}

/// Convergence verdict from `ln` of successive increments.
fn classify_growth(logs: &[f64]) -> Result<EndIntegral> {
    let n = logs.len();
    if logs.iter().any(|v| *v == f64::INFINITY) {
        return Ok(EndIntegral { finite: false, exponent: f64::INFINITY, power: None });
    }
    let tail = &logs[n.saturating_sub(FIT_WINDOW + 1)..];
    if tail.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Ok(EndIntegral { finite: true, exponent: f64::NEG_INFINITY, power: None });
    }
    let ln2 = std::f64::consts::LN_2;
    let rates: Vec<f64> = tail.windows(2).map(|w| (w[1] - w[0]) / ln2).collect();
    let exponent = rates.iter().sum::<f64>() / rates.len() as f64;
    if exponent.is_nan() {
        return Err(Error::Inconclusive(format!("increments {tail:?}")));
    }
    if exponent < -GROWTH_BAND {
        return Ok(EndIntegral { finite: true, exponent, power: None });
    }
    if exponent > GROWTH_BAND {
        return Ok(EndIntegral { finite: false, exponent, power: None });
    }
    // Least-squares slope of ln(increment) against ln k on the second half.
    let pts: Vec<(f64, f64)> = (n / 2..n).map(|k| (((k + 1) as f64).ln(), logs[k])).collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
    let power = sxy / sxx;
    if power < -1.0 - GROWTH_BAND {
        Ok(EndIntegral { finite: true, exponent, power: Some(power) })
    } else if power > -1.0 + GROWTH_BAND {
        Ok(EndIntegral { finite: false, exponent, power: Some(power) })
    } else {
        Err(Error::Inconclusive(format!("growth exponent {exponent:.3}, power {power:.3}")))
    }
}

/// Verdicts for both ends.
pub fn classify_boundaries<T: Scalar>(
    model: &DiffusionModel<T>,
    epsilon: T,
) -> Result<(BoundaryVerdict, BoundaryVerdict)> {
    let scale = Scale::new(model, epsilon)?;
    Ok((scale.classify(Side::Left)?, scale.classify(Side::Right)?))
}

pub fn hitting_probability<T: Scalar>(model: &DiffusionModel<T>, epsilon: T, x0: T, lower: T, upper: T) -> Result<T> {
    Scale::new(model, epsilon)?.hitting_probability(x0, lower, upper)
}

pub fn max_exceedance_probability<T: Scalar>(model: &DiffusionModel<T>, epsilon: T, x0: T, m: T) -> Result<T> {
    Scale::new(model, epsilon)?.max_exceedance_probability(x0, m)
}

/// Exceedance probabilities along increasing levels, exhibiting the decay
/// toward the right end.
pub fn exceedance_trend<T: Scalar>(model: &DiffusionModel<T>, epsilon: T, x0: T, levels: &[T]) -> Result<Vec<T>> {
    let scale = Scale::new(model, epsilon)?;
    if !scale.left_attracting()? {
        return Err(Error::HypothesesFail("0 is not attracting: s(0+) = -∞".into()));
    }
    levels.iter().map(|&m| scale.hitting_probability(x0, T::zero(), m)).collect()
}

/// Tabulated scale and speed with the boundary verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct ScaleProfile<T> {
    pub model: String,
    pub epsilon: T,
    pub x_ref: T,
    pub grid: Vec<T>,
    pub scale_density: Vec<T>,
    pub scale_function: Vec<T>,
    pub speed_density: Vec<T>,
    pub left: BoundaryVerdict,
    pub right: BoundaryVerdict,
    /// Largest `|generator_residual|` over the grid.
    pub generator_residual: T,
}

/// Profile on `n` interior points up to the right end, or `4 x_ref` on an
/// unbounded domain.
pub fn scale_profile<T: Scalar>(model: &DiffusionModel<T>, epsilon: T, n: usize) -> Result<ScaleProfile<T>> {
    if n < 2 {
        return Err(Error::bad("n", "need at least 2 points"));
    }
    let scale = Scale::new(model, epsilon)?;
    let top = model.right_end.unwrap_or(scale.x_ref * T::lit(8.0));
    let grid: Vec<T> = (1..=n).map(|i| top * T::from_count(i) / T::from_count(n + 1)).collect();
    let scale_function = grid.par_iter().map(|&x| scale.scale_function(x)).collect::<Result<Vec<T>>>()?;
    let scale_density = grid.iter().map(|&x| scale.scale_density(x)).collect();
    let speed_density = grid.iter().map(|&x| scale.speed_density(x)).collect();
    let generator_residual = grid.iter().map(|&x| scale.generator_residual(x).abs()).fold(T::zero(), T::max);
    Ok(ScaleProfile {
        model: model.name.clone(),
        epsilon,
        x_ref: scale.x_ref,
        scale_density,
        scale_function,
        speed_density,
        grid,
        left: scale.classify(Side::Left)?,
        right: scale.classify(Side::Right)?,
        generator_residual,
    })
}

impl<T: Scalar> ScaleProfile<T> {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["x", "scale_density", "scale_function", "speed_density"])
            .with_meta("model", &self.model)
            .with_meta("epsilon", self.epsilon.as_f64())
            .with_meta("x_ref", self.x_ref.as_f64());
        for i in 0..self.grid.len() {
            t.push(vec![
                self.grid[i].as_f64(),
                self.scale_density[i].as_f64(),
                self.scale_function[i].as_f64(),
                self.speed_density[i].as_f64(),
            ]);
        }
        t
    }

    /// JSON block with both verdicts.
    pub fn verdicts_json(&self) -> serde_json::Value {
        serde_json::json!({ "left": self.left, "right": self.right })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, DiffusionForm, DriftForm, ModelSpec, ParamMap};

    fn logistic() -> DiffusionModel<f64> {
        builtin_model("logistic_feller", &ParamMap::new()).unwrap()
    }

    fn brownian_unit_interval() -> DiffusionModel<f64> {
        DiffusionModel::new(
            "brownian",
            DriftForm::Zero,
            DiffusionForm::Constant { value: 1.0 },
            Some(1.0),
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn logistic_scale_density_closed_form() {
        let m = logistic();
        let s = Scale::new(&m, 0.1).unwrap();
        assert_eq!(s.scale_density(0.5), 1.0);
        let closed = |x: f64| (-20.0 * (x - x * x / 2.0)).exp();
        for x in [1e-9, 0.01, 0.3, 1.0, 1.7, 3.0] {
            let want = closed(x) / closed(0.5);
            assert!((s.scale_density(x) / want - 1.0).abs() < 1e-10, "x={x}");
        }
        assert!((s.scale_density(1.0) / s.scale_density(0.0 + 1e-300) - (-10.0f64).exp()).abs() < 1e-12);
        assert!((s.speed_density(0.5) - 20.0).abs() < 1e-10);
        assert!(s.generator_residual(0.7).abs() < 1e-5);
    }

    #[test]
    fn logistic_boundaries() {
        let m = logistic();
        let (l, r) = classify_boundaries(&m, 0.1).unwrap();
        assert!(l.attracting);
        assert_eq!(l.feller, FellerClass::Exit);
        assert!(!r.attracting);
        assert_eq!(r.feller, FellerClass::Entrance);
        assert_eq!(r.location, None);
    }

    #[test]
    fn kimura_right_end_is_exit() {
        let m = builtin_model::<f64>("kimura_fisher_wright", &ParamMap::new()).unwrap();
        let (l, r) = classify_boundaries(&m, 0.1).unwrap();
        assert_eq!(r.feller, FellerClass::Exit);
        assert!(r.attracting);
        assert_eq!(l.feller, FellerClass::Exit);
    }

    #[test]
    fn brownian_ends_are_regular() {
        let m = brownian_unit_interval();
        let s = Scale::new(&m, 1.0).unwrap();
        assert!((s.scale_density(0.123) - 1.0).abs() < 1e-14);
        assert!((s.hitting_probability(0.3, 0.0, 0.999_999).unwrap() - 0.3 / 0.999_999).abs() < 1e-10);
        let (l, r) = classify_boundaries(&m, 1.0).unwrap();
        assert_eq!(l.feller, FellerClass::Regular);
        assert_eq!(r.feller, FellerClass::Regular);
    }

    #[test]
    fn hitting_probability_shape() {
        let m = logistic();
        let s = Scale::new(&m, 0.1).unwrap();
        let p = |x0: f64, up: f64| s.hitting_probability(x0, 0.0, up).unwrap();
        assert!(p(1e-9, 2.0) < 1e-6);
        assert!(p(2.0 - 1e-9, 2.0) > 1.0 - 1e-6);
        assert!(p(0.05, 2.0) < p(0.1, 2.0));
        assert!(p(0.05, 2.0) > p(0.05, 4.0));
        let trend = exceedance_trend(&m, 0.1, 0.05, &[2.0, 4.0, 8.0]).unwrap();
        assert!(trend[0] > trend[1] && trend[1] > trend[2] && trend[2] < 1e-10);
        // Closed form: s' ∝ exp(-20(x - x²/2)).
        let f = |x: f64| (-20.0 * (x - x * x / 2.0)).exp();
        let q = |a: f64, b: f64| integrate(f, a, b, &QuadOptions::default()).unwrap().value;
        let want = q(0.0, 0.05) / q(0.0, 2.0);
        assert!((p(0.05, 2.0) / want - 1.0).abs() < 1e-8, "{} vs {want}", p(0.05, 2.0));
        let lower = s.lower_first_probability(0.05, 0.0, 2.0).unwrap();
        assert!((lower + p(0.05, 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profile_invariants() {
        let m = logistic();
        let prof = scale_profile(&m, 0.1, 40).unwrap();
        assert!(prof.scale_function.windows(2).all(|w| w[1] > w[0]));
        assert!(prof.scale_density.iter().all(|&v| v > 0.0));
        assert!(prof.speed_density.iter().all(|&v| v > 0.0));
        assert!(prof.generator_residual < 1e-5, "{}", prof.generator_residual);
        assert_eq!(prof.to_csv().rows.len(), 40);
        let spec = ModelSpec::named("logistic_feller");
        assert!(spec.build().is_ok());
    }

    #[test]
    fn non_attracting_left_end_is_refused() {
        // μ = x, a = x²: s' ∝ x^{-2/ε} near 0, so s(0+) = -∞.
        let m = DiffusionModel::new(
            "geometric",
            DriftForm::Linear { gamma: 1.0 },
            DiffusionForm::Quadratic { sigma_sq: 1.0 },
            None,
            Default::default(),
        )
        .unwrap();
        let s = Scale::new(&m, 0.5).unwrap();
        assert!(!s.left_attracting().unwrap());
        assert!(matches!(s.hitting_probability(0.5, 0.0, 2.0), Err(Error::ScaleDiverges { .. })));
        assert!(matches!(s.max_exceedance_probability(0.5, 2.0), Err(Error::HypothesesFail(_))));
    }
}
