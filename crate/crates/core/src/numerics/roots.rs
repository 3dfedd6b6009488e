//! Bracketed root finding and finite-difference derivatives at the origin.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bisection on a sign-changing bracket. Returns the midpoint of the final bracket.
pub fn bisect<T, F>(f: F, mut lo: T, mut hi: T, xtol: T) -> Result<T>
where
    T: Scalar,
    F: Fn(T) -> T,
{
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == T::zero() {
        return Ok(lo);
    }
    if fhi == T::zero() {
        return Ok(hi);
    }
    if (flo > T::zero()) == (fhi > T::zero()) {
        return Err(Error::Invalid(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..400 {
        let mid = (lo + hi) * T::lit(0.5);
        if hi - lo <= xtol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == T::zero() {
            return Ok(mid);
        }
        if (fm > T::zero()) == (flo > T::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * T::lit(0.5))
}

/// First point in `(0, limit]` where `f` turns from positive to nonpositive,
/// located by scanning `steps` cells and bisecting the first crossing.
pub fn first_downcrossing<T, F>(f: F, limit: T, steps: usize) -> Option<T>
where
    T: Scalar,
    F: Fn(T) -> T,
{
    let mut prev = limit / T::from_count(steps);
    if !(f(prev) > T::zero()) {
        return None;
    }
    for i in 2..=steps {
        let x = limit * T::from_count(i) / T::from_count(steps);
        if !(f(x) > T::zero()) {
            return bisect(&f, prev, x, x * T::epsilon() * T::lit(4.0)).ok();
        }
        prev = x;
    }
    None
}

/// Derivative at 0 from values on `[0, 2h]` (second order); centred when `f(-h)` is finite.
pub fn derivative_at_origin<T, F>(f: F, h: T) -> T
where
    T: Scalar,
    F: Fn(T) -> T,
{
    let fm = f(-h);
    let fp = f(h);
    if fm.is_finite() {
        (fp - fm) / (T::lit(2.0) * h)
    } else {
        (T::lit(-3.0) * f(T::zero()) + T::lit(4.0) * fp - f(T::lit(2.0) * h)) / (T::lit(2.0) * h)
    }
}

/// Second derivative at 0; `None` when the estimate is not finite.
pub fn curvature_at_origin<T, F>(f: F, h: T) -> Option<T>
where
    T: Scalar,
    F: Fn(T) -> T,
{
    let fm = f(-h);
    let est = if fm.is_finite() {
        (f(h) - T::lit(2.0) * f(T::zero()) + fm) / (h * h)
    } else {
        let two = T::lit(2.0);
        (two * f(T::zero()) - T::lit(5.0) * f(h) + T::lit(4.0) * f(two * h) - f(T::lit(3.0) * h)) / (h * h)
    };
    est.is_finite().then_some(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x: f64| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn downcrossing_of_logistic() {
        let r = first_downcrossing(|x: f64| x * (1.0 - x / 3.0), 10.0, 100).unwrap();
        assert!((r - 3.0).abs() < 1e-12);
        assert!(first_downcrossing(|x: f64| x, 10.0, 100).is_none());
    }

    #[test]
    fn derivatives_at_origin() {
        let f = |x: f64| 2.0 * x - 3.0 * x * x;
        assert!((derivative_at_origin(f, 1e-6) - 2.0).abs() < 1e-8);
        assert!((curvature_at_origin(f, 1e-4).unwrap() + 6.0).abs() < 1e-5);
        // one-sided branch
        let g = |x: f64| x * (1.0 - x.sqrt());
        let d = derivative_at_origin(g, 1e-6);
        assert!((d - 1.0).abs() < 1e-2);
    }
}
