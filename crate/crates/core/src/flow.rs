//! Deterministic flow `dx/dt = μ(x)`, the rescaled flow
//! `φ̃(y) = lim_{t→∞} φ_t(y e^{-γt})` and its inverse `w`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::model::{validate_assumptions, DiffusionModel};
use crate::numerics::interp::MonotoneCubic;
use crate::numerics::ode::{self, OdeOptions, OdeStats};
use crate::numerics::quad::{conjugacy_integral, QuadOptions};
use crate::numerics::roots;
use crate::scalar::Scalar;

/// Relative tolerance of every flow integration.
pub const FLOW_RTOL: f64 = 1e-10;
/// Absolute tolerance of flow integration away from the origin.
pub const FLOW_ATOL: f64 = 1e-12;
/// Cauchy criterion for the rescaled-flow limit.
pub const HORIZON_TOL: f64 = 1e-8;
/// Initial horizon and cap for the rescaled-flow limit, in units of `1/γ`.
pub const HORIZON_START: f64 = 20.0;
pub const HORIZON_CAP: f64 = 1024.0;

fn ode_options<T: Scalar>(model: &DiffusionModel<T>, x0: T) -> OdeOptions<T> {
    let rtol = T::attainable(FLOW_RTOL);
    // Near the repelling point the state itself is tiny; an absolute floor
    // of 1e-12 would swamp it, so the floor follows the start value.
    let atol = T::attainable(FLOW_ATOL).min(T::lit(1e-2) * rtol * x0.abs()).max(T::min_positive_value());
    let top = model.numeric_right().max(model.x_c.unwrap_or(T::zero()));
    let slack = T::lit(1e-8) * top + atol;
    OdeOptions { rtol, atol, bounds: (-slack, top + slack), ..OdeOptions::default() }
}

/// `φ_t(x0)`.
pub fn flow<T: Scalar>(model: &DiffusionModel<T>, x0: T, t: T) -> Result<T> {
    flow_with_stats(model, x0, t).map(|(x, _)| x)
}

pub fn flow_with_stats<T: Scalar>(model: &DiffusionModel<T>, x0: T, t: T) -> Result<(T, OdeStats)> {
    if t < T::zero() {
        return Err(Error::bad("t", "duration must be nonnegative"));
    }
    if x0 < T::zero() || model.right_end.is_some_and(|r| x0 > r) {
        return Err(Error::bad("x0", format!("{x0} outside the model domain")));
    }
    if t == T::zero() || x0 == T::zero() {
        return Ok((x0, OdeStats::default()));
    }
    let out = ode::integrate(|_, x| model.drift(x), T::zero(), x0, t, &ode_options(model, x0))?;
    Ok((out.y, out.stats))
}

/// A trajectory of the deterministic flow sampled on a time grid.
#[derive(Debug, Clone)]
pub struct FlowSolution<T> {
    pub times: Vec<T>,
    pub states: Vec<T>,
    pub stats: OdeStats,
}

impl<T: Scalar> FlowSolution<T> {
    /// True when the final state lies within `tol` of `x_c`.
    pub fn settled_at(&self, x_c: T, tol: T) -> bool {
        self.states.last().is_some_and(|&x| (x - x_c).abs() <= tol)
    }

    pub fn is_monotone(&self) -> bool {
        self.states.windows(2).all(|w| w[1] >= w[0])
    }
}

pub fn solve_flow<T: Scalar>(model: &DiffusionModel<T>, x0: T, times: &[T]) -> Result<FlowSolution<T>> {
    if times.windows(2).any(|w| !(w[1] >= w[0])) || times.first().is_some_and(|&t| t < T::zero()) {
        return Err(Error::Invalid("flow times must be nonnegative and increasing".into()));
    }
    if x0 == T::zero() {
        return Ok(FlowSolution {
            times: times.to_vec(),
            states: vec![T::zero(); times.len()],
            stats: OdeStats::default(),
        });
    }
    let (states, stats) = ode::integrate_through(|_, x| model.drift(x), T::zero(), x0, times, &ode_options(model, x0))?;
    Ok(FlowSolution { times: times.to_vec(), states, stats })
}

/// `φ̃(y)` by pulling the start point back along the linearised flow:
/// `φ_{T}(y e^{-γT})` with `T` doubled until two successive values agree.
/// Returns the value and the horizon used.
pub fn rescaled_point<T: Scalar>(model: &DiffusionModel<T>, y: T) -> Result<(T, T)> {
    if y < T::zero() {
        return Err(Error::bad("y", "must be nonnegative"));
    }
    if y == T::zero() {
        return Ok((T::zero(), T::zero()));
    }
    let g = model.gamma;
    let tol = T::attainable(HORIZON_TOL);
    let at = |horizon: T| flow(model, y * (-g * horizon).exp(), horizon);
    let mut horizon = T::lit(HORIZON_START) / g;
    let mut prev = at(horizon)?;
    loop {
        horizon = horizon * T::lit(2.0);
        if horizon > T::lit(HORIZON_CAP) / g {
            return Err(Error::NoConvergence { what: format!("rescaled flow at y = {y}"), last: vec![prev.as_f64()] });
        }
        let next = at(horizon)?;
        if (next - prev).abs() < tol {
            return Ok((next, horizon));
        }
        prev = next;
    }
}

/// Which constraint limits the domain of `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CapBound {
    StablePoint,
    DriftRoot,
    RightEnd,
}

/// Upper end of the natural domain of `w`, and which bound is active.
pub fn w_cap<T: Scalar>(model: &DiffusionModel<T>) -> (T, CapBound) {
    let right = model.numeric_right();
    let root = roots::first_downcrossing(|x| model.drift(x), right, 20_000);
    match (model.x_c, root) {
        (Some(xc), Some(r)) if r < xc * (T::one() - T::lit(1e-9)) => (r, CapBound::DriftRoot),
        (Some(xc), _) => (xc, CapBound::StablePoint),
        (None, Some(r)) => (r, CapBound::DriftRoot),
        (None, None) => (right, CapBound::RightEnd),
    }
}

/// `w(x) = x exp ∫_0^x (γ/μ(u) - 1/u) du`; `+∞` at and beyond the cap,
/// where the integral diverges.
pub fn invert_w<T: Scalar>(model: &DiffusionModel<T>, x: T) -> Result<T> {
    if x < T::zero() {
        return Err(Error::bad("x", "must be nonnegative"));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    let (cap, _) = w_cap(model);
    if x >= cap {
        return Ok(T::infinity());
    }
    let delta = T::lit(1e-4) * model.x_c.unwrap_or(T::one());
    let opts = QuadOptions::default();
    let integral = conjugacy_integral(|u| model.drift(u), model.origin_expansion(), x, delta, &opts)?;
    Ok(x * integral.exp())
}

/// Tabulated `φ̃` on `[0, y_max]` with shape-preserving interpolation.
#[derive(Debug, Clone)]
pub struct RescaledFlow<T> {
    pub gamma: T,
    interp: MonotoneCubic<T>,
    model: Option<DiffusionModel<T>>,
    /// Values of `w` at the tabulated `φ̃` values (same order as the grid).
    pub w_table: Vec<T>,
    pub cap: Option<(T, CapBound)>,
    /// Largest horizon needed by the limit construction.
    pub t_horizon: T,
    /// `max |w(φ̃(y)) - y| / y` over interior grid points.
    pub cross_check: T,
}

impl<T: Scalar> RescaledFlow<T> {
    pub fn grid(&self) -> &[T] {
        self.interp.knots()
    }

    pub fn values(&self) -> &[T] {
        self.interp.values()
    }

    pub fn y_max(&self) -> T {
        self.interp.domain().1
    }

    pub fn model(&self) -> Option<&DiffusionModel<T>> {
        self.model.as_ref()
    }

    /// Builds from a table (e.g. an imported CSV). Slopes come from the data;
    /// attaching the model enables evaluation beyond the grid and `w` by quadrature.
    pub fn from_table(y: Vec<T>, phi: Vec<T>, gamma: T, model: Option<DiffusionModel<T>>) -> Result<Self> {
        let slopes = match &model {
            Some(m) => exact_slopes(m, &y, &phi),
            None => None,
        };
        let interp = match slopes {
            Some(d) => MonotoneCubic::with_slopes(y, phi, d)?,
            None => MonotoneCubic::from_data(y, phi)?,
        };
        let cap = model.as_ref().map(w_cap);
        Ok(Self { gamma, interp, model, w_table: Vec::new(), cap, t_horizon: T::zero(), cross_check: T::zero() })
    }

    /// `φ̃(y)`; beyond the grid it continues along the flow when a model is
    /// attached, otherwise `GridTooShort`.
    pub fn eval(&self, y: T) -> Result<T> {
        if y < T::zero() {
            return Err(Error::bad("y", "must be nonnegative"));
        }
        if let Some(v) = self.interp.eval(y) {
            return Ok(v);
        }
        let y_max = self.y_max();
        match &self.model {
            Some(m) => {
                let t = (y / y_max).ln() / self.gamma;
                flow(m, self.values()[self.values().len() - 1], t)
            }
            None => Err(Error::GridTooShort { y_max: y_max.as_f64(), required: y.as_f64() }),
        }
    }

    /// `w(x)`: by quadrature when the model is attached, else by inverting the table.
    pub fn inverse(&self, x: T) -> Result<T> {
        if let Some(m) = &self.model {
            return invert_w(m, x);
        }
        let vals = self.values();
        let top = vals[vals.len() - 1];
        if x < T::zero() || x > top {
            return Err(Error::GridTooShort { y_max: self.y_max().as_f64(), required: x.as_f64() });
        }
        let (lo, hi) = self.interp.domain();
        roots::bisect(|y| self.interp.eval(y).unwrap_or(top) - x, lo, hi, hi * T::epsilon() * T::lit(8.0))
    }

    pub fn to_csv(&self) -> CsvTable
    where
        T: Serialize,
    {
        let mut t = CsvTable::new(&["y", "phi_tilde"])
            .with_meta("gamma", self.gamma.as_f64())
            .with_meta("rtol", FLOW_RTOL)
            .with_meta("cauchy_tol", HORIZON_TOL);
        if let Some(m) = &self.model {
            t = t.with_meta("model", m.fingerprint()).with_meta("model_name", &m.name);
        }
        for (y, v) in self.grid().iter().zip(self.values()) {
            t.push(vec![y.as_f64(), v.as_f64()]);
        }
        t
    }

    pub fn from_csv(table: &CsvTable, model: Option<DiffusionModel<T>>) -> Result<Self> {
        let y: Vec<T> = table.column("y")?.into_iter().map(T::lit).collect();
        let phi: Vec<T> = table.column("phi_tilde")?.into_iter().map(T::lit).collect();
        let gamma = match (&model, table.meta.get("gamma")) {
            (Some(m), _) => m.gamma,
            (None, Some(g)) => T::lit(g.parse().map_err(|_| Error::Parse("gamma meta".into()))?),
            (None, None) => return Err(Error::Parse("gamma missing from metadata".into())),
        };
        Self::from_table(y, phi, gamma, model)
    }
}

fn exact_slopes<T: Scalar>(model: &DiffusionModel<T>, y: &[T], phi: &[T]) -> Option<Vec<T>> {
    let d: Vec<T> = y
        .iter()
        .zip(phi)
        .map(|(&y, &v)| if y == T::zero() { T::one() } else { model.drift(v) / (model.gamma * y) })
        .collect();
    d.iter().all(|s| s.is_finite()).then_some(d)
}

/// Tabulates `φ̃` on a uniform grid of `grid_size` points over `[0, y_max]`
/// and cross-checks it against `w` by quadrature.
pub fn compute_rescaled_flow<T: Scalar>(
    model: &DiffusionModel<T>,
    y_max: T,
    grid_size: usize,
) -> Result<RescaledFlow<T>> {
    validate_assumptions(model)?;
    if !(y_max > T::zero()) || grid_size < 2 {
        return Err(Error::bad("grid", "need y_max > 0 and at least two points"));
    }
    let n = grid_size - 1;
    let grid: Vec<T> = (0..=n).map(|i| y_max * T::from_count(i) / T::from_count(n)).collect();
    let points: Vec<(T, T)> = grid.par_iter().map(|&y| rescaled_point(model, y)).collect::<Result<_>>()?;
    let values: Vec<T> = points.iter().map(|p| p.0).collect();
    let t_horizon = points.iter().map(|p| p.1).fold(T::zero(), T::max);
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NoConvergence {
            what: "rescaled flow is not strictly increasing on the grid".into(),
            last: values.iter().map(|v| v.as_f64()).collect(),
        });
    }

    let w_table: Vec<T> = values.par_iter().map(|&x| invert_w(model, x)).collect::<Result<_>>()?;
    let cross_check = grid.iter().zip(&w_table).skip(1).map(|(&y, &w)| ((w - y) / y).abs()).fold(T::zero(), T::max);

    let mut out = RescaledFlow::from_table(grid, values, model.gamma, Some(model.clone()))?;
    out.w_table = w_table;
    out.t_horizon = t_horizon;
    out.cross_check = cross_check;
    Ok(out)
}

/// Poincaré residuals of a tabulated rescaled flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareCheck {
    /// `sup |φ̃(y e^{γt}) - φ_t(φ̃(y))|` over the samples.
    pub functional: f64,
    /// `sup |γ y φ̃'(y) - μ(φ̃(y))|` by centred differences of the table at
    /// interior knots (fourth-order stencil on uniform grids).
    pub infinitesimal: f64,
}

pub fn poincare_residual<T: Scalar>(rescaled: &RescaledFlow<T>, samples: &[(T, T)]) -> Result<PoincareCheck> {
    let model = rescaled.model().ok_or_else(|| Error::Invalid("poincare residual needs the model".into()))?;
    let g = rescaled.gamma;
    let mut functional = T::zero();
    for &(y, t) in samples {
        let lhs = rescaled.eval(y * (g * t).exp())?;
        let rhs = flow(model, rescaled.eval(y)?, t)?;
        functional = functional.max((lhs - rhs).abs());
    }
    let ys = rescaled.grid();
    let vs = rescaled.values();
    let mut infinitesimal = T::zero();
    let n = ys.len();
    let uniform = n > 2 && {
        let h = ys[1] - ys[0];
        ys.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= T::lit(1e-9) * h)
    };
    for i in 1..n.saturating_sub(1) {
        let d = if uniform && i >= 2 && i + 2 < n {
            let h = ys[i + 1] - ys[i];
            (vs[i - 2] - T::lit(8.0) * vs[i - 1] + T::lit(8.0) * vs[i + 1] - vs[i + 2]) / (T::lit(12.0) * h)
        } else {
            (vs[i + 1] - vs[i - 1]) / (ys[i + 1] - ys[i - 1])
        };
        infinitesimal = infinitesimal.max((g * ys[i] * d - model.drift(vs[i])).abs());
    }
    Ok(PoincareCheck { functional: functional.as_f64(), infinitesimal: infinitesimal.as_f64() })
}

/// Sample pairs `(y, t)`: a spread of grid abscissae against times
/// `{1/2, 1, 2, 4}/γ`.
pub fn default_poincare_samples<T: Scalar>(rescaled: &RescaledFlow<T>) -> Vec<(T, T)> {
    let ys = rescaled.grid();
    let step = (ys.len() / 8).max(1);
    let mut out = Vec::new();
    for &y in ys.iter().step_by(step) {
        for k in [0.5, 1.0, 2.0, 4.0] {
            out.push((y, T::lit(k) / rescaled.gamma));
        }
    }
    out
}

/// `|γ y φ̃'(y) - μ(φ̃(y))|` at `y` with the derivative taken by centred
/// differences of the direct limit construction (independent of any table).
pub fn ode_residual_direct<T: Scalar>(model: &DiffusionModel<T>, y: T, h: T) -> Result<T> {
    let (v, _) = rescaled_point(model, y)?;
    let (vp, _) = rescaled_point(model, y + h)?;
    let (vm, _) = rescaled_point(model, (y - h).max(T::zero()))?;
    let d = (vp - vm) / (y + h - (y - h).max(T::zero()));
    Ok((model.gamma * y * d - model.drift(v)).abs())
}

/// Extrapolates `φ̃(y)/y` to `y = 0` from three small abscissae (quadratic fit
/// through the three ratios); the limit should be one.
pub fn linearization_limit<T: Scalar>(model: &DiffusionModel<T>, ys: [T; 3]) -> Result<T> {
    let mut r = [T::zero(); 3];
    for (i, &y) in ys.iter().enumerate() {
        r[i] = rescaled_point(model, y)?.0 / y;
    }
    let [y0, y1, y2] = ys;
    let l0 = y1 * y2 / ((y0 - y1) * (y0 - y2));
    let l1 = y0 * y2 / ((y1 - y0) * (y1 - y2));
    let l2 = y0 * y1 / ((y2 - y0) * (y2 - y1));
    Ok(l0 * r[0] + l1 * r[1] + l2 * r[2])
}
