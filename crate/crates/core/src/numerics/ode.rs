//! Adaptive Dormand–Prince 5(4) integration for scalar initial value problems.
//!
//! Every deterministic trajectory in the crate is one-dimensional, so the
//! integrator works on a single state variable and avoids vector plumbing.
//! The embedded fourth-order solution drives step-size control; the
//! fifth-order solution is propagated (local extrapolation), with FSAL reuse
//! of the last stage.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// b - b*, fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    pub max_steps: usize,
    /// Initial step; `None` picks one from the local derivative.
    pub h0: Option<T>,
    /// Admissible state range; leaving it aborts with `BlowUp`.
    pub bounds: (T, T),
}

impl<T: Scalar> Default for OdeOptions<T> {
    fn default() -> Self {
        Self {
            rtol: T::attainable(1e-10),
            atol: T::attainable(1e-12),
            max_steps: 200_000,
            h0: None,
            bounds: (T::neg_infinity(), T::infinity()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Largest normalised local error estimate among accepted steps.
    pub max_error_estimate: f64,
}

impl OdeStats {
    pub fn absorb(&mut self, other: &OdeStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.evaluations += other.evaluations;
        self.max_error_estimate = self.max_error_estimate.max(other.max_error_estimate);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOutcome<T> {
    pub y: T,
    /// Step size the controller would try next; useful for warm restarts.
    pub next_h: T,
    pub stats: OdeStats,
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1 >= t0`.
pub fn integrate<T, F>(f: F, t0: T, y0: T, t1: T, opts: &OdeOptions<T>) -> Result<OdeOutcome<T>>
where
    T: Scalar,
    F: Fn(T, T) -> T,
{
    if t1 < t0 {
        return Err(Error::Invalid(format!("backward integration {t0} -> {t1}")));
    }
    let mut stats = OdeStats::default();
    if t1 == t0 {
        return Ok(OdeOutcome { y: y0, next_h: opts.h0.unwrap_or(T::zero()), stats });
    }

    let l = T::lit;
    let span = t1 - t0;
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, y);
    stats.evaluations += 1;

    let mut h = match opts.h0 {
        Some(h) if h > T::zero() => h.min(span),
        _ => {
            let scale = opts.atol + opts.rtol * y.abs();
            let d = k1.abs();
            let guess = if d > T::zero() { l(0.01) * scale / d * l(1e3) } else { span * l(1e-3) };
            guess.max(span * l(1e-9)).min(span * l(0.1))
        }
    };
    let h_min = span * T::epsilon() * l(16.0);
    let mut last_h = h;

    while t < t1 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::NoConvergence { what: "ode step budget".into(), last: vec![t.as_f64(), y.as_f64()] });
        }
        let mut final_step = false;
        if t + h >= t1 {
            h = t1 - t;
            final_step = true;
        }

        let k2 = f(t + l(C2) * h, y + h * l(A21) * k1);
        let k3 = f(t + l(C3) * h, y + h * (l(A31) * k1 + l(A32) * k2));
        let k4 = f(t + l(C4) * h, y + h * (l(A41) * k1 + l(A42) * k2 + l(A43) * k3));
        let k5 = f(t + l(C5) * h, y + h * (l(A51) * k1 + l(A52) * k2 + l(A53) * k3 + l(A54) * k4));
        let k6 = f(t + h, y + h * (l(A61) * k1 + l(A62) * k2 + l(A63) * k3 + l(A64) * k4 + l(A65) * k5));
        let y_new = y + h * (l(A71) * k1 + l(A73) * k3 + l(A74) * k4 + l(A75) * k5 + l(A76) * k6);
        let k7 = f(t + h, y_new);
        stats.evaluations += 6;

        let err_abs = (h * (l(E1) * k1 + l(E3) * k3 + l(E4) * k4 + l(E5) * k5 + l(E6) * k6 + l(E7) * k7)).abs();
        let scale = opts.atol + opts.rtol * y.abs().max(y_new.abs());
        let err = err_abs / scale;

        if !err.is_finite() || !y_new.is_finite() {
            stats.rejected += 1;
            h = h * l(0.25);
            if h < h_min {
                return Err(Error::BlowUp { t: t.as_f64(), state: y.as_f64(), ceiling: opts.bounds.1.as_f64() });
            }
            continue;
        }

        if err <= T::one() {
            t = if final_step { t1 } else { t + h };
            y = y_new;
            k1 = k7;
            stats.accepted += 1;
            stats.max_error_estimate = stats.max_error_estimate.max(err.as_f64());
            if y < opts.bounds.0 || y > opts.bounds.1 {
                return Err(Error::BlowUp { t: t.as_f64(), state: y.as_f64(), ceiling: opts.bounds.1.as_f64() });
            }
            let factor = if err == T::zero() { l(5.0) } else { (l(0.9) * err.powf(l(-0.2))).min(l(5.0)).max(l(0.2)) };
            if !final_step {
                last_h = h;
            }
            h = h * factor;
        } else {
            stats.rejected += 1;
            let factor = (l(0.9) * err.powf(l(-0.2))).max(l(0.1));
            h = h * factor;
            if h < h_min {
                return Err(Error::NoConvergence {
                    what: "ode step size underflow".into(),
                    last: vec![t.as_f64(), y.as_f64()],
                });
            }
        }
    }

    Ok(OdeOutcome { y, next_h: last_h.max(h), stats })
}

/// Integrates through an increasing list of output times, returning the state at each.
pub fn integrate_through<T, F>(f: F, t0: T, y0: T, outputs: &[T], opts: &OdeOptions<T>) -> Result<(Vec<T>, OdeStats)>
where
    T: Scalar,
    F: Fn(T, T) -> T,
{
    let mut stats = OdeStats::default();
    let mut out = Vec::with_capacity(outputs.len());
    let mut t = t0;
    let mut y = y0;
    let mut local = *opts;
    for &target in outputs {
        if target < t {
            return Err(Error::Invalid("output times must be increasing".into()));
        }
        let step = integrate(&f, t, y, target, &local)?;
        stats.absorb(&step.stats);
        y = step.y;
        t = target;
        if step.next_h > T::zero() {
            local.h0 = Some(step.next_h);
        }
        out.push(y);
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_is_accurate() {
        let out = integrate(|_, y: f64| y, 0.0, 1.0, 3.0, &OdeOptions::default()).unwrap();
        assert!((out.y - 3.0f64.exp()).abs() < 1e-8 * 3.0f64.exp());
    }

    #[test]
    fn logistic_matches_closed_form() {
        let x0 = 0.1f64;
        let t = 9.0f64.ln();
        let out = integrate(|_, x| x * (1.0 - x), 0.0, x0, t, &OdeOptions::default()).unwrap();
        assert!((out.y - 0.5).abs() < 1e-9, "{}", out.y);
    }

    #[test]
    fn zero_span_returns_initial_state() {
        let out = integrate(|_, y: f64| y * y, 2.0, 0.3, 2.0, &OdeOptions::default()).unwrap();
        assert_eq!(out.y, 0.3);
    }

    #[test]
    fn blow_up_is_reported() {
        let opts = OdeOptions { bounds: (0.0, 100.0), ..OdeOptions::default() };
        let err = integrate(|_, y: f64| y * y, 0.0, 1.0, 2.0, &opts).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn nonautonomous_and_f32() {
        // y' = 2t, y(0)=0 -> t^2
        let out = integrate(|t, _| 2.0 * t, 0.0f32, 0.0f32, 2.0f32, &OdeOptions::default()).unwrap();
        assert!((out.y - 4.0).abs() < 1e-4);
    }

    #[test]
    fn through_outputs() {
        let (ys, _) = integrate_through(|_, y: f64| -y, 0.0, 1.0, &[0.5, 1.0, 2.0], &OdeOptions::default()).unwrap();
        for (y, t) in ys.iter().zip([0.5f64, 1.0, 2.0]) {
            assert!((y - (-t).exp()).abs() < 1e-10);
        }
    }
}
