//! The martingale limit `W = lim e^{-γt} Y_t` of the Feller branching
//! diffusion, sampled exactly, and the limit law `φ̃(W)` of the position at
//! the critical time.
//!
//! `W` is a compound Poisson sum: `N ~ Poisson(λ)` exponential variables of
//! rate `λ = 2γ / a'(0)`. It has an atom `e^{-λ}` at zero (extinction),
//! mean one and variance `a'(0)/γ`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::RescaledFlow;
use crate::io::CsvTable;
use crate::rng::{stream, StreamTag};
use crate::scalar::Scalar;

/// Samples drawn from one random stream.
pub const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WLaw<T> {
    pub lambda: T,
    pub gamma: T,
    pub a_prime0: T,
}

impl<T: Scalar> WLaw<T> {
    pub fn new(gamma: T, a_prime0: T) -> Result<Self> {
        if !(gamma > T::zero()) || !(a_prime0 > T::zero()) {
            return Err(Error::bad("gamma/a_prime0", "must be positive"));
        }
        Ok(Self { lambda: T::lit(2.0) * gamma / a_prime0, gamma, a_prime0 })
    }

    /// `P(W = 0) = e^{-λ}`.
    pub fn atom(&self) -> T {
        (-self.lambda).exp()
    }

    pub fn mean(&self) -> T {
        T::one()
    }

    pub fn variance(&self) -> T {
        self.a_prime0 / self.gamma
    }

    /// `P(W <= w)`, summing the Poisson mixture of Erlang laws.
    pub fn cdf(&self, w: T) -> T {
        if w < T::zero() {
            return T::zero();
        }
        let l = self.lambda.as_f64();
        let lw = l * w.as_f64();
        // P(W > w) = Σ_{k>=1} Pois(k) P(Erlang(k, λ) > w)
        //          = Σ_{k>=1} Pois(k) Σ_{j<k} e^{-λw} (λw)^j / j!
        let mut pois = (-l).exp();
        let mut erlang_term = (-lw).exp();
        let mut erlang_tail = 0.0;
        let mut survive = 0.0;
        for k in 1..10_000usize {
            pois *= l / k as f64;
            erlang_tail += erlang_term;
            erlang_term *= lw / k as f64;
            let add = pois * erlang_tail;
            survive += add;
            if k as f64 > l && add < 1e-18 * survive.max(1e-300) {
                break;
            }
        }
        T::lit((1.0 - survive).clamp(0.0, 1.0))
    }

    /// Smallest `w` with `P(W <= w) >= p`.
    pub fn quantile(&self, p: T) -> Result<T> {
        if !(p >= T::zero() && p < T::one()) {
            return Err(Error::bad("p", "must lie in [0, 1)"));
        }
        if p <= self.atom() {
            return Ok(T::zero());
        }
        let mut hi = T::one();
        while self.cdf(hi) < p {
            hi = hi * T::lit(2.0);
        }
        let mut lo = T::zero();
        for _ in 0..200 {
            let mid = (lo + hi) * T::lit(0.5);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= T::epsilon() * hi * T::lit(4.0) {
                break;
            }
        }
        Ok(hi)
    }
}

/// `E e^{-sW} = exp(-λs/(λ+s))`; `s = ∞` gives the atom.
pub fn laplace_w<T: Scalar>(law: &WLaw<T>, s: T) -> T {
    if s.is_infinite() {
        return law.atom();
    }
    (-law.lambda * s / (law.lambda + s)).exp()
}

/// `E_x e^{-sY_t} = exp(-x s e^{γt} / (1 + (s a'(0) / 2γ)(e^{γt} - 1)))`.
pub fn laplace_yt<T: Scalar>(gamma: T, a_prime0: T, x: T, t: T, s: T) -> T {
    let g = (gamma * t).exp();
    let denom = T::one() + s * a_prime0 / (T::lit(2.0) * gamma) * (g - T::one());
    (-x * s * g / denom).exp()
}

fn draw_w<R: Rng, T: Scalar>(rng: &mut R, poisson: &Poisson<f64>, lambda: f64) -> T {
    let n = poisson.sample(rng) as u64;
    let mut sum = 0.0;
    for _ in 0..n {
        let e: f64 = Exp1.sample(rng);
        sum += e;
    }
    T::lit(sum / lambda)
}

/// `n` exact draws of `W`; chunk `k` uses stream `k` of the seed.
pub fn sample_w<T: Scalar>(law: &WLaw<T>, n: usize, seed: u64) -> Result<Vec<T>> {
    if n == 0 {
        return Err(Error::bad("n", "must be at least 1"));
    }
    let lambda = law.lambda.as_f64();
    let poisson = Poisson::new(lambda).map_err(|e| Error::bad("lambda", e.to_string()))?;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, StreamTag::LimitLaw, k as u64);
            let len = CHUNK.min(n - k * CHUNK);
            (0..len).map(|_| draw_w(&mut rng, &poisson, lambda)).collect()
        })
        .collect();
    Ok(parts.concat())
}

/// Draws of `φ̃(W)`, the limit law of the position at the critical time.
/// Zero draws map to zero exactly, preserving the atom.
pub fn sample_limit_position<T: Scalar>(
    law: &WLaw<T>,
    rescaled: &RescaledFlow<T>,
    n: usize,
    seed: u64,
) -> Result<Vec<T>> {
    let required = law.quantile(T::lit(0.999))?;
    if rescaled.y_max() < required {
        return Err(Error::GridTooShort { y_max: rescaled.y_max().as_f64(), required: required.as_f64() });
    }
    let w = sample_w(law, n, seed)?;
    w.par_iter().map(|&w| if w == T::zero() { Ok(T::zero()) } else { rescaled.eval(w) }).collect()
}

/// Single-column CSV with `λ`, seed and sample size in the metadata line.
pub fn samples_csv<T: Scalar>(column: &str, law: &WLaw<T>, seed: u64, samples: &[T]) -> CsvTable {
    let mut t = CsvTable::new(&[column])
        .with_meta("lambda", law.lambda.as_f64())
        .with_meta("seed", seed)
        .with_meta("n", samples.len());
    for s in samples {
        t.push(vec![s.as_f64()]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_transforms() {
        let law = WLaw::new(1.0f64, 1.0).unwrap();
        assert!((laplace_w(&law, 2.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(laplace_w(&law, 0.0), 1.0);
        assert!((laplace_w(&law, f64::INFINITY) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((laplace_w(&law, 1e12) - law.atom()).abs() < 1e-10);
        let v = laplace_yt(1.0, 1.0, 1.0, 2f64.ln(), 1.0);
        assert!((v - (-4.0f64 / 3.0).exp()).abs() < 1e-14);
        assert!((laplace_yt(1.0, 1.0, 0.7, 0.0, 1.3) - (-0.7f64 * 1.3).exp()).abs() < 1e-15);
    }

    #[test]
    fn rescaled_feller_transform_converges() {
        let law = WLaw::new(1.0f64, 1.0).unwrap();
        let t = 20.0f64;
        for s in [0.5, 1.0, 2.0, 4.0] {
            let v = laplace_yt(1.0, 1.0, 1.0, t, s * (-t).exp());
            assert!((v - laplace_w(&law, s)).abs() < 1e-6);
        }
    }

    #[test]
    fn cdf_and_quantile() {
        let law = WLaw::new(1.0f64, 1.0).unwrap();
        assert!((law.cdf(0.0) - law.atom()).abs() < 1e-15);
        assert!(law.cdf(50.0) > 1.0 - 1e-12);
        let q = law.quantile(0.999).unwrap();
        assert!((law.cdf(q) - 0.999).abs() < 1e-9);
        assert_eq!(law.quantile(0.1).unwrap(), 0.0);
    }

    #[test]
    fn sampling_is_chunk_deterministic() {
        let law = WLaw::new(1.0f64, 1.0).unwrap();
        let a = sample_w(&law, 10_000, 3).unwrap();
        let b = sample_w(&law, 10_000, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_w(&law, 5_000, 3).unwrap();
        assert_eq!(&a[..5_000], &c[..]);
        assert!(a.iter().all(|&w| w >= 0.0));
    }
}
