//! Adaptive Gauss–Kronrod quadrature.
//!
//! `integrate` is a global-priority QAG-style scheme on the 7/15 point pair.
//! Kronrod nodes never touch the interval ends, which keeps integrable
//! endpoint singularities out of the evaluation set. `log_integrate` works on
//! `ln f` for integrands spanning hundreds of orders of magnitude, and
//! `conjugacy_integral` evaluates the removable-singularity integrals
//! `∫_0^x (f'(0)/f(u) - 1/u) du` used for inverse conjugacies.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions<T> {
    pub atol: T,
    pub rtol: T,
    pub max_segments: usize,
}

impl<T: Scalar> Default for QuadOptions<T> {
    fn default() -> Self {
        Self { atol: T::attainable(1e-14), rtol: T::attainable(1e-11), max_segments: 4000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<T> {
    pub value: T,
    pub abs_err: T,
    pub evaluations: usize,
}

#[derive(Clone, Copy)]
struct Segment<T> {
    a: T,
    b: T,
    value: T,
    err: T,
}

fn kronrod<T: Scalar, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> Segment<T> {
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    let fc = f(mid);
    let mut k = fc * T::lit(WGK[7]);
    let mut g = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = half * T::lit(XGK[j]);
        let s = f(mid - dx) + f(mid + dx);
        k += T::lit(WGK[j]) * s;
        if j % 2 == 1 {
            g += T::lit(WG[j / 2]) * s;
        }
    }
    let value = k * half;
    let err = ((k - g) * half).abs();
    Segment { a, b, value, err }
}

/// One 15-point Kronrod panel over `[a, b]`: `(value, error estimate)`.
pub fn kronrod_panel<T: Scalar, F: FnMut(T) -> T>(mut f: F, a: T, b: T) -> (T, T) {
    let s = kronrod(&mut f, a, b);
    (s.value, s.err)
}

/// Integrates `f` over `[a, b]` (either orientation).
pub fn integrate<T, F>(mut f: F, a: T, b: T, opts: &QuadOptions<T>) -> Result<QuadResult<T>>
where
    T: Scalar,
    F: FnMut(T) -> T,
{
    if a == b {
        return Ok(QuadResult { value: T::zero(), abs_err: T::zero(), evaluations: 0 });
    }
    if b < a {
        let r = integrate(f, b, a, opts)?;
        return Ok(QuadResult { value: -r.value, ..r });
    }
    let mut segs = vec![kronrod(&mut f, a, b)];
    let mut evaluations = 15;
    loop {
        let total: T = segs.iter().map(|s| s.value).sum();
        let err: T = segs.iter().map(|s| s.err).sum();
        if !total.is_finite() {
            let worst = segs.iter().find(|s| !s.value.is_finite()).map(|s| s.a).unwrap_or(a);
            return Err(Error::SingularIntegrand { at: worst.as_f64() });
        }
        let tol = opts.atol.max(opts.rtol * total.abs());
        if err <= tol {
            return Ok(QuadResult { value: total, abs_err: err, evaluations });
        }
        if segs.len() >= opts.max_segments {
            return Err(Error::NoConvergence {
                what: "adaptive quadrature".into(),
                last: vec![total.as_f64(), err.as_f64()],
            });
        }
        let (idx, _) =
            segs.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |acc, (i, s)| if s.err > acc.1 { (i, s.err) } else { acc });
        let s = segs.swap_remove(idx);
        let m = (s.a + s.b) * T::lit(0.5);
        if m <= s.a || m >= s.b {
            // Interval no longer splittable at this precision.
            let total: T = segs.iter().map(|s| s.value).sum::<T>() + s.value;
            return Ok(QuadResult { value: total, abs_err: err, evaluations });
        }
        segs.push(kronrod(&mut f, s.a, m));
        segs.push(kronrod(&mut f, m, s.b));
        evaluations += 30;
    }
}

/// Returns `ln ∫_a^b exp(ln_f(u)) du` for `a < b`, robust to over/underflow of `f`.
///
/// `ln_f` is probed on a uniform interior grid. Where neighbouring probes
/// differ by more than `STEEP` the interval is cut at the probes and each
/// piece handled recursively, so peaks much narrower than the interval are
/// still resolved; pieces far below the running maximum are dropped.
pub fn log_integrate<T, F>(ln_f: F, a: T, b: T, opts: &QuadOptions<T>) -> Result<T>
where
    T: Scalar,
    F: Fn(T) -> T,
{
    if b <= a {
        return Err(Error::Invalid("log_integrate needs a < b".into()));
    }
    log_integrate_piece(&ln_f, a, b, opts, 0)
}

const PROBES: usize = 64;
const STEEP: f64 = 30.0;
const MAX_SPLIT_DEPTH: usize = 8;
/// Pieces whose probes sit this far below the maximum cannot matter.
const NEGLIGIBLE: f64 = 800.0;

fn log_integrate_piece<T, F>(ln_f: &F, a: T, b: T, opts: &QuadOptions<T>, depth: usize) -> Result<T>
where
    T: Scalar,
    F: Fn(T) -> T,
{
    let at = |i: usize| a + (b - a) * (T::from_count(i) + T::lit(0.5)) / T::from_count(PROBES + 1);
    let mut probes = Vec::with_capacity(PROBES + 1);
    for i in 0..=PROBES {
        let v = ln_f(at(i));
        if v.is_nan() {
            return Err(Error::SingularIntegrand { at: at(i).as_f64() });
        }
        probes.push(v);
    }
    let mut shift = probes.iter().copied().fold(T::neg_infinity(), T::max);
    if shift == T::infinity() {
        return Ok(T::infinity());
    }
    if shift == T::neg_infinity() {
        return Ok(T::neg_infinity());
    }
    let steep = probes.windows(2).any(|w| !((w[1] - w[0]).abs() <= T::lit(STEEP)));
    if steep && depth < MAX_SPLIT_DEPTH {
        let mut cuts = vec![a];
        for i in 0..PROBES {
            cuts.push((at(i) + at(i + 1)) * T::lit(0.5));
        }
        cuts.push(b);
        let mut total = T::neg_infinity();
        for j in 0..=PROBES {
            let lo = if j > 0 { probes[j - 1] } else { probes[j] };
            let hi = if j < PROBES { probes[j + 1] } else { probes[j] };
            let local = probes[j].max(lo).max(hi);
            if local < shift - T::lit(NEGLIGIBLE) || cuts[j + 1] <= cuts[j] {
                continue;
            }
            total = log_add(total, log_integrate_piece(ln_f, cuts[j], cuts[j + 1], opts, depth + 1)?);
        }
        return Ok(total);
    }
    // exp(v - shift) carries the rounding error of v, which grows with |v|.
    let floor = T::lit(64.0) * T::epsilon() * shift.abs();
    let opts = &QuadOptions { rtol: opts.rtol.max(floor), atol: opts.atol, max_segments: opts.max_segments };
    // A narrow peak can exceed the probe maximum; retry with the larger shift.
    for _ in 0..4 {
        let seen = std::cell::Cell::new(shift);
        let r = integrate(
            |u| {
                let v = ln_f(u);
                if v > seen.get() {
                    seen.set(v);
                }
                (v - shift).exp()
            },
            a,
            b,
            opts,
        );
        let seen = seen.get();
        match r {
            Ok(q) if q.value.is_finite() => {
                if q.value <= T::zero() {
                    return Ok(T::neg_infinity());
                }
                return Ok(shift + q.value.ln());
            }
            Ok(_) | Err(Error::SingularIntegrand { .. }) if seen > shift => {
                shift = seen;
            }
            Ok(q) => return Err(Error::SingularIntegrand { at: q.value.as_f64() }),
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoConvergence { what: "log-space quadrature".into(), last: vec![shift.as_f64()] })
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    if m == T::infinity() {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
pub fn log_sub<T: Scalar>(a: T, b: T) -> T {
    if b == T::neg_infinity() {
        return a;
    }
    if b >= a {
        return T::neg_infinity();
    }
    a + (-(b - a).exp()).ln_1p()
}

/// Local data of a function vanishing at the origin with nonzero slope.
#[derive(Debug, Clone, Copy)]
pub struct OriginExpansion<T> {
    pub slope: T,
    /// Second derivative at the origin, when finite.
    pub curvature: Option<T>,
}

/// Evaluates `∫_0^x (slope/f(u) - 1/u) du` for `f(0) = 0`, `f'(0) = slope`.
///
/// The integrand tends to `-f''(0) / (2 f'(0))` as `u -> 0`. The piece
/// `[0, delta]` is taken from that limit by Simpson's rule when the curvature
/// is known, otherwise by Kronrod nodes that stay off the origin; the rest is
/// adaptive quadrature. `f` must keep the sign of `slope` on `(0, x]`.
pub fn conjugacy_integral<T, F>(f: F, origin: OriginExpansion<T>, x: T, delta: T, opts: &QuadOptions<T>) -> Result<T>
where
    T: Scalar,
    F: Fn(T) -> T,
{
    if x < T::zero() {
        return Err(Error::Invalid(format!("conjugacy integral at negative x = {x}")));
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    let slope = origin.slope;
    let sign_ok = |u: T| {
        let v = f(u);
        v.is_finite() && v != T::zero() && (v > T::zero()) == (slope > T::zero())
    };
    let probes = 256;
    for i in 1..=probes {
        let u = x * T::from_count(i) / T::from_count(probes);
        if !sign_ok(u) {
            return Err(Error::SingularIntegrand { at: u.as_f64() });
        }
    }
    let g = |u: T| slope / f(u) - T::one() / u;
    let d = delta.min(x);
    let head = match origin.curvature {
        Some(c) if c.is_finite() => {
            let g0 = -c / (T::lit(2.0) * slope);
            d / T::lit(6.0) * (g0 + T::lit(4.0) * g(d * T::lit(0.5)) + g(d))
        }
        _ => integrate(g, T::zero(), d, opts)?.value,
    };
    let tail = if d < x { integrate(g, d, x, opts)?.value } else { T::zero() };
    Ok(head + tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x: f64| 3.0 * x * x, 0.0, 2.0, &QuadOptions::default()).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn reversed_orientation() {
        let r = integrate(|x: f64| x.exp(), 1.0, 0.0, &QuadOptions::default()).unwrap();
        assert!((r.value + (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn integrable_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} = 2
        let r = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, &QuadOptions::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn log_space_handles_huge_integrands() {
        // ∫_0^1 e^{1000 u} du = (e^{1000}-1)/1000
        let l = log_integrate(|u: f64| 1000.0 * u, 0.0, 1.0, &QuadOptions::default()).unwrap();
        let expect = 1000.0 - 1000f64.ln() + (-(-1000f64).exp()).ln_1p();
        assert!((l - expect).abs() < 1e-9, "{l} vs {expect}");
    }

    #[test]
    fn log_add_sub_roundtrip() {
        let a = 700.0f64;
        let b = 699.0f64;
        let s = log_add(a, b);
        assert!((log_sub(s, b) - a).abs() < 1e-12);
        assert_eq!(log_add(f64::NEG_INFINITY, 3.0), 3.0);
    }

    #[test]
    fn conjugacy_of_logistic() {
        // f(u) = u(1-u): ∫_0^x (1/(u(1-u)) - 1/u) du = -ln(1-x)
        let origin = OriginExpansion { slope: 1.0, curvature: Some(-2.0) };
        for &x in &[1e-6, 0.01, 0.3, 0.5, 0.9] {
            let v = conjugacy_integral(|u: f64| u * (1.0 - u), origin, x, 1e-4, &QuadOptions::default()).unwrap();
            assert!((v + (1.0 - x).ln()).abs() < 1e-11, "x={x}: {v}");
        }
    }

    #[test]
    fn conjugacy_without_curvature() {
        // f(u) = u(1 - sqrt u): f'' infinite at 0, integrand ~ u^{-1/2}
        let origin = OriginExpansion { slope: 1.0, curvature: None };
        let x = 0.25f64;
        let v = conjugacy_integral(|u: f64| u * (1.0 - u.sqrt()), origin, x, 1e-4, &QuadOptions::default()).unwrap();
        // substitute u = v^2: ∫ 2/(1-v) dv - ... closed form: -2 ln(1 - sqrt x)
        assert!((v + 2.0 * (1.0 - x.sqrt()).ln()).abs() < 1e-8, "{v}");
    }

    #[test]
    fn conjugacy_rejects_sign_change() {
        let origin = OriginExpansion { slope: 1.0, curvature: Some(-2.0) };
        let e = conjugacy_integral(|u: f64| u * (1.0 - u), origin, 1.5, 1e-4, &QuadOptions::default()).unwrap_err();
        assert!(matches!(e, Error::SingularIntegrand { .. }));
    }
}
