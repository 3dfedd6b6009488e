//! Shape-preserving cubic Hermite interpolation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Piecewise cubic Hermite interpolant on a strictly increasing grid, with
/// slopes limited (Fritsch–Carlson) so monotone data stay monotone.
#[derive(Debug, Clone)]
pub struct MonotoneCubic<T> {
    x: Vec<T>,
    y: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> MonotoneCubic<T> {
    /// Uses supplied slopes (e.g. exact derivatives), limiting only where they
    /// would break monotonicity of a segment.
    pub fn with_slopes(x: Vec<T>, y: Vec<T>, mut d: Vec<T>) -> Result<Self> {
        check_grid(&x, &y)?;
        if d.len() != x.len() {
            return Err(Error::Invalid("slope count mismatch".into()));
        }
        limit_slopes(&x, &y, &mut d);
        Ok(Self { x, y, d })
    }

    /// Derives slopes from the data (Fritsch–Butland harmonic mean).
    pub fn from_data(x: Vec<T>, y: Vec<T>) -> Result<Self> {
        check_grid(&x, &y)?;
        let n = x.len();
        let secant: Vec<T> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut d = vec![T::zero(); n];
        d[0] = secant[0];
        d[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            let (s0, s1) = (secant[i - 1], secant[i]);
            d[i] = if s0 * s1 <= T::zero() {
                T::zero()
            } else {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let w1 = T::lit(2.0) * h1 + h0;
                let w2 = h1 + T::lit(2.0) * h0;
                (w1 + w2) / (w1 / s0 + w2 / s1)
            };
        }
        limit_slopes(&x, &y, &mut d);
        Ok(Self { x, y, d })
    }

    pub fn knots(&self) -> &[T] {
        &self.x
    }

    pub fn values(&self) -> &[T] {
        &self.y
    }

    pub fn slopes(&self) -> &[T] {
        &self.d
    }

    pub fn domain(&self) -> (T, T) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    /// Evaluates inside the knot range; `None` outside.
    pub fn eval(&self, t: T) -> Option<T> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return None;
        }
        let i = match self.x.partition_point(|&k| k <= t) {
            0 => 0,
            p if p >= self.x.len() => self.x.len() - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        Some(h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1])
    }
}

fn check_grid<T: Scalar>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::Invalid("interpolation needs >= 2 matching knots".into()));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("knots must be strictly increasing".into()));
    }
    Ok(())
}

fn limit_slopes<T: Scalar>(x: &[T], y: &[T], d: &mut [T]) {
    for i in 0..x.len() - 1 {
        let delta = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
        if delta == T::zero() {
            d[i] = T::zero();
            d[i + 1] = T::zero();
            continue;
        }
        if d[i] * delta < T::zero() {
            d[i] = T::zero();
        }
        if d[i + 1] * delta < T::zero() {
            d[i + 1] = T::zero();
        }
        let a = d[i] / delta;
        let b = d[i + 1] / delta;
        let r = a * a + b * b;
        if r > T::lit(9.0) {
            let tau = T::lit(3.0) / r.sqrt();
            d[i] = tau * a * delta;
            d[i + 1] = tau * b * delta;
        }
    }
}
