//! Transforms of martingale limits of supercritical branching processes.
//!
//! Three descriptions of the same object are solved numerically:
//!
//! * Galton–Watson: `φ(ms) = p̂(φ(s))`, solved by the Poincaré iteration
//!   `φ_n(s) = p̂^{∘n}(e^{-s/mⁿ})`;
//! * continuous time: `s φ'(s) = Ψ(φ(s)) / Ψ'(1)`, `φ(0) = 1`, with
//!   `Ψ(s) = p̂(s) - s`, and its inverse
//!   `θ(s) = (1-s) exp(-∫_s^1 (Ψ'(1)/Ψ(u) + 1/(1-u)) du)`;
//! * continuous state: `s κ'(s) = Ψ(κ(s)) / Ψ'(0)` for `κ = -ln E e^{-sW}`,
//!   and its inverse `θ(s) = s exp(∫_0^s (Ψ'(0)/Ψ(u) - 1/u) du)`.
//!
//! The singular ODEs are integrated in `τ = ln s` from `s₀ = 1e-6`, started
//! on the series `φ ≈ 1 - s + c s²`, `κ ≈ s + c s²`: the linear term is fixed
//! by `E W = 1` and `c` by matching the ODE. In `τ` the start error grows
//! like `s/s₀`, so the quadratic term is needed for 1e-9 accuracy at `s ~ 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::numerics::{conjugacy_integral, integrate_through, OdeOptions, OriginExpansion, QuadOptions};
use crate::scalar::Scalar;

/// Start of the singular ODEs.
pub const SERIES_START: f64 = 1e-6;
/// Successive Poincaré iterates must agree to this.
pub const ITERATION_TOL: f64 = 1e-8;
const MAX_ITERATIONS: usize = 400;
const ODE_RTOL: f64 = 1e-12;
const ODE_ATOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    /// Discrete-generation process described by its offspring generating function.
    GwGeneratingFunction,
    /// Continuous-time process with mechanism `Ψ(s) = p̂(s) - s`.
    CtMechanism,
    /// Continuous-state branching process with mechanism `Ψ`.
    CsbMechanism,
}

/// Named families of offspring laws and continuous-state mechanisms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family<T> {
    /// Two children: `p̂(s) = s²`.
    BinarySplitting,
    /// `p̂(s) = (1-u) / (1-us)`.
    Geometric { u: T },
    /// `k` children: `p̂(s) = s^k`.
    Fission { k: u32 },
    /// Offspring probabilities `p_0, p_1, …`.
    Offspring { probs: Vec<T> },
    /// `Ψ(s) = γ s - a'(0) s² / 2`.
    Feller { gamma: T, a_prime0: T },
    /// `Ψ(s) = Σ c_k s^k`.
    Polynomial { coeffs: Vec<T> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingMechanism<T> {
    pub kind: MechanismKind,
    pub family: Family<T>,
}

fn poly<T: Scalar>(c: &[T], s: T, order: usize) -> T {
    // `order`-th derivative of Σ c_k s^k.
    let mut acc = T::zero();
    for (k, &ck) in c.iter().enumerate().skip(order).rev() {
        let mut falling = T::one();
        for j in 0..order {
            falling *= T::from_count(k - j);
        }
        acc = acc * s + ck * falling;
    }
    acc
}

/// `1 - (1-q)^j` without cancellation for small `q`.
fn one_minus_power<T: Scalar>(q: T, j: T) -> T {
    -(j * (-q).ln_1p()).exp_m1()
}

impl<T: Scalar> BranchingMechanism<T> {
    pub fn new(kind: MechanismKind, family: Family<T>) -> Result<Self> {
        let m = Self { kind, family };
        m.validate()?;
        Ok(m)
    }

    pub fn binary_splitting(kind: MechanismKind) -> Self {
        Self { kind, family: Family::BinarySplitting }
    }

    pub fn geometric(kind: MechanismKind, u: T) -> Result<Self> {
        Self::new(kind, Family::Geometric { u })
    }

    pub fn feller(gamma: T, a_prime0: T) -> Result<Self> {
        Self::new(MechanismKind::CsbMechanism, Family::Feller { gamma, a_prime0 })
    }

    fn is_offspring_family(&self) -> bool {
        !matches!(self.family, Family::Feller { .. } | Family::Polynomial { .. })
    }

    fn validate(&self) -> Result<()> {
        match &self.family {
            Family::Geometric { u } if !(*u > T::zero() && *u < T::one()) => {
                return Err(Error::bad("u", "must lie in (0, 1)"));
            }
            Family::Fission { k } if *k < 2 => return Err(Error::bad("k", "must be at least 2")),
            Family::Offspring { probs } => {
                let total: T = probs.iter().copied().sum();
                if probs.iter().any(|&p| p < T::zero()) || (total - T::one()).abs() > T::lit(1e-9) {
                    return Err(Error::bad("probs", "must be a probability vector"));
                }
            }
            Family::Feller { gamma, a_prime0 } if !(*gamma > T::zero() && *a_prime0 > T::zero()) => {
                return Err(Error::bad("gamma/a_prime0", "must be positive"));
            }
            _ => {}
        }
        match self.kind {
            MechanismKind::GwGeneratingFunction => {
                if !self.is_offspring_family() {
                    return Err(Error::bad("family", "generating function needs an offspring law"));
                }
                if !(self.mean() > T::one()) {
                    return Err(Error::bad("family", "offspring mean must exceed 1"));
                }
            }
            MechanismKind::CtMechanism => {
                if !self.is_offspring_family() {
                    return Err(Error::bad("family", "continuous-time mechanism needs an offspring law"));
                }
                if self.psi_prime(T::one()) == T::zero() {
                    return Err(Error::bad("family", "Ψ'(1) must be nonzero"));
                }
            }
            MechanismKind::CsbMechanism => {
                if self.is_offspring_family() {
                    return Err(Error::bad("family", "continuous-state mechanism needs Ψ directly"));
                }
                if self.psi(T::zero()).abs() > T::lit(1e-12) || !(self.psi_prime(T::zero()) > T::zero()) {
                    return Err(Error::bad("family", "need Ψ(0) = 0 and Ψ'(0) > 0"));
                }
            }
        }
        Ok(())
    }

    /// Offspring generating function `p̂(s)`; `None` for continuous-state mechanisms.
    pub fn pgf(&self, s: T) -> Option<T> {
        let one = T::one();
        Some(match &self.family {
            Family::BinarySplitting => s * s,
            Family::Geometric { u } => (one - *u) / (one - *u * s),
            Family::Fission { k } => s.powi(*k as i32),
            Family::Offspring { probs } => poly(probs, s, 0),
            Family::Feller { .. } | Family::Polynomial { .. } => return None,
        })
    }

    /// `1 - p̂(1 - q)`, accurate for small `q`.
    fn pgf_complement(&self, q: T) -> T {
        let one = T::one();
        match &self.family {
            Family::BinarySplitting => q * (T::lit(2.0) - q),
            Family::Geometric { u } => *u * q / (one - *u + *u * q),
            Family::Fission { k } => one_minus_power(q, T::lit(f64::from(*k))),
            Family::Offspring { probs } => {
                probs.iter().enumerate().map(|(j, &p)| p * one_minus_power(q, T::from_count(j))).sum()
            }
            Family::Feller { .. } | Family::Polynomial { .. } => T::nan(),
        }
    }

    fn pgf_derivative(&self, s: T, order: usize) -> T {
        let one = T::one();
        match &self.family {
            Family::BinarySplitting => poly(&[T::zero(), T::zero(), one], s, order),
            Family::Geometric { u } => {
                // d^k/ds^k (1-u)/(1-us) = (1-u) k! u^k / (1-us)^{k+1}
                let mut fact = one;
                for j in 1..=order {
                    fact *= T::from_count(j);
                }
                (one - *u) * fact * u.powi(order as i32) / (one - *u * s).powi(order as i32 + 1)
            }
            Family::Fission { k } => {
                let mut c = vec![T::zero(); *k as usize + 1];
                c[*k as usize] = one;
                poly(&c, s, order)
            }
            Family::Offspring { probs } => poly(probs, s, order),
            Family::Feller { .. } | Family::Polynomial { .. } => T::nan(),
        }
    }

    /// Branching mechanism `Ψ(s)`.
    pub fn psi(&self, s: T) -> T {
        match &self.family {
            Family::Feller { gamma, a_prime0 } => *gamma * s - *a_prime0 * s * s * T::lit(0.5),
            Family::Polynomial { coeffs } => poly(coeffs, s, 0),
            _ => self.pgf(s).unwrap_or(T::nan()) - s,
        }
    }

    pub fn psi_prime(&self, s: T) -> T {
        match &self.family {
            Family::Feller { gamma, a_prime0 } => *gamma - *a_prime0 * s,
            Family::Polynomial { coeffs } => poly(coeffs, s, 1),
            _ => self.pgf_derivative(s, 1) - T::one(),
        }
    }

    pub fn psi_second(&self, s: T) -> T {
        match &self.family {
            Family::Feller { a_prime0, .. } => -*a_prime0,
            Family::Polynomial { coeffs } => poly(coeffs, s, 2),
            _ => self.pgf_derivative(s, 2),
        }
    }

    /// `Ψ(1-q)/q = 1 - (1 - p̂(1-q))/q`, with the limit `1 - m` at `q = 0`.
    fn psi_at_one_minus_over(&self, q: T) -> T {
        if q == T::zero() {
            return -self.psi_prime(T::one());
        }
        T::one() - self.pgf_complement(q) / q
    }

    /// `Ψ(x)/x`, with the limit `Ψ'(0)` at `x = 0`.
    fn psi_over(&self, x: T) -> T {
        match &self.family {
            Family::Feller { gamma, a_prime0 } => *gamma - *a_prime0 * x * T::lit(0.5),
            Family::Polynomial { coeffs } if coeffs.len() > 1 => poly(&coeffs[1..], x, 0),
            _ if x == T::zero() => self.psi_prime(T::zero()),
            _ => self.psi(x) / x,
        }
    }

    /// Offspring mean `m = p̂'(1)`.
    pub fn mean(&self) -> T {
        self.pgf_derivative(T::one(), 1)
    }

    /// First positive zero of `Ψ`: the supremum of `κ`, and the end of the
    /// domain of the continuous-state inverse. `None` if `Ψ > 0` throughout
    /// the scanned range.
    pub fn csb_cap(&self) -> Option<T> {
        let mut hi = T::one();
        for _ in 0..60 {
            let steps = 512;
            let mut prev = T::zero();
            for i in 1..=steps {
                let s = hi * T::from_count(i) / T::from_count(steps);
                if self.psi(s) <= T::zero() {
                    return crate::numerics::roots::bisect(|x| self.psi(x), prev, s, T::epsilon() * s).ok();
                }
                prev = s;
            }
            hi = hi * T::lit(2.0);
            if hi > T::lit(1e12) {
                break;
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// `φ(s) = E e^{-sW}`.
    Phi,
    /// `κ(s) = -ln E e^{-sW}`.
    Kappa,
    /// Functional inverse of `φ` or `κ`.
    Theta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformSolution<T> {
    pub kind: TransformKind,
    pub grid: Vec<T>,
    pub values: Vec<T>,
    /// Largest defining-equation residual over the grid (ODE residual for
    /// `φ`/`κ`, round-trip defect for `θ` where available).
    pub residual: T,
}

impl<T: Scalar> TransformSolution<T> {
    pub fn to_csv(&self) -> CsvTable {
        let name = match self.kind {
            TransformKind::Phi => "phi",
            TransformKind::Kappa => "kappa",
            TransformKind::Theta => "theta",
        };
        let mut t = CsvTable::new(&["s", name]).with_meta("residual", self.residual.as_f64());
        for (s, v) in self.grid.iter().zip(&self.values) {
            t.push(vec![s.as_f64(), v.as_f64()]);
        }
        t
    }
}

fn check_grid<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&s| !(s >= T::zero()) || !s.is_finite()) {
        return Err(Error::bad("s_grid", "needs finite nonnegative points"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::bad("s_grid", "must be strictly increasing"));
    }
    Ok(())
}

/// The two singular ODEs in the scaled unknown `r = (1-φ)/s` or `r = κ/s`,
/// whose dynamics in `τ = ln s` are neutral near the origin instead of
/// amplifying start errors by `s/s₀`.
#[derive(Clone, Copy)]
enum Scaled {
    Phi,
    Kappa,
}

struct ScaledOde<'a, T> {
    mech: &'a BranchingMechanism<T>,
    which: Scaled,
    norm: T,
    /// Quadratic series coefficient of the transform at the origin.
    c: T,
}

impl<'a, T: Scalar> ScaledOde<'a, T> {
    fn new(mech: &'a BranchingMechanism<T>, which: Scaled) -> Self {
        let (norm, curv) = match which {
            Scaled::Phi => (mech.psi_prime(T::one()), mech.psi_second(T::one())),
            Scaled::Kappa => (mech.psi_prime(T::zero()), mech.psi_second(T::zero())),
        };
        Self { mech, which, norm, c: curv / (T::lit(2.0) * norm) }
    }

    fn series(&self, s: T) -> T {
        match self.which {
            Scaled::Phi => T::one() - s + self.c * s * s,
            Scaled::Kappa => s + self.c * s * s,
        }
    }

    fn from_scaled(&self, s: T, r: T) -> T {
        match self.which {
            Scaled::Phi => T::one() - s * r,
            Scaled::Kappa => s * r,
        }
    }

    fn rhs(&self, tau: T, r: T) -> T {
        let x = tau.exp() * r;
        match self.which {
            Scaled::Phi => -r * (T::one() + self.mech.psi_at_one_minus_over(x) / self.norm),
            Scaled::Kappa => r * (self.mech.psi_over(x) / self.norm - T::one()),
        }
    }

    /// Right side of the unscaled ODE `dv/dτ = Ψ(v)/norm`.
    fn rhs_unscaled(&self, v: T) -> T {
        self.mech.psi(v) / self.norm
    }

    fn solve(&self, grid: &[T], upper: T) -> Result<Vec<T>> {
        let s0 = T::lit(SERIES_START);
        let split = grid.partition_point(|&s| s <= s0);
        let mut out: Vec<T> = grid[..split].iter().map(|&s| self.series(s)).collect();
        if split < grid.len() {
            let taus: Vec<T> = grid[split..].iter().map(|s| s.ln()).collect();
            let r0 = match self.which {
                Scaled::Phi => (T::one() - self.series(s0)) / s0,
                Scaled::Kappa => self.series(s0) / s0,
            };
            let opts =
                OdeOptions { rtol: T::attainable(ODE_RTOL), atol: T::attainable(ODE_ATOL), ..OdeOptions::default() };
            let (rs, _) = integrate_through(|t, r| self.rhs(t, r), s0.ln(), r0, &taus, &opts)?;
            for (&s, r) in grid[split..].iter().zip(rs) {
                let v = self.from_scaled(s, r);
                let ok = match self.which {
                    Scaled::Phi => v > T::zero() && v <= T::one(),
                    Scaled::Kappa => v >= T::zero() && v < upper,
                };
                if !ok {
                    return Err(match self.which {
                        Scaled::Phi => Error::SingularityHit { at: s.as_f64(), value: v.as_f64() },
                        Scaled::Kappa => Error::DomainCap { s: s.as_f64(), cap: upper.as_f64() },
                    });
                }
                out.push(v);
            }
        }
        Ok(out)
    }

    /// `max |dv/dτ - Ψ(v)/norm|` from a fourth-order stencil in `τ` on
    /// re-solved neighbours of each grid point.
    fn residual(&self, grid: &[T], upper: T) -> Result<T> {
        let h = T::lit(1e-3);
        let s0 = T::lit(SERIES_START);
        let mut worst = T::zero();
        for &s in grid.iter().filter(|&&s| s > s0 * T::lit(10.0)) {
            let tau = s.ln();
            let pts: Vec<T> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|&k| (tau + T::lit(k) * h).exp()).collect();
            let v = self.solve(&pts, upper)?;
            let d = (v[0] - T::lit(8.0) * v[1] + T::lit(8.0) * v[3] - v[4]) / (T::lit(12.0) * h);
            worst = worst.max((d - self.rhs_unscaled(v[2])).abs());
        }
        Ok(worst)
    }
}

/// `φ` of a continuous-time mechanism from `s φ' = Ψ(φ)/Ψ'(1)`, `φ(0) = 1`.
pub fn solve_ct_phi<T: Scalar>(mech: &BranchingMechanism<T>, s_grid: &[T]) -> Result<TransformSolution<T>> {
    if mech.kind != MechanismKind::CtMechanism {
        return Err(Error::bad("mechanism", "expected a continuous-time mechanism"));
    }
    check_grid(s_grid)?;
    let ode = ScaledOde::new(mech, Scaled::Phi);
    let values = ode.solve(s_grid, T::one())?;
    let residual = ode.residual(s_grid, T::one())?;
    Ok(TransformSolution { kind: TransformKind::Phi, grid: s_grid.to_vec(), values, residual })
}

/// `κ` of a continuous-state mechanism from `s κ' = Ψ(κ)/Ψ'(0)`, `κ(0) = 0`.
/// `κ` stays below the first positive zero of `Ψ`; reaching it is a `DomainCap`.
pub fn solve_csb_kappa<T: Scalar>(mech: &BranchingMechanism<T>, s_grid: &[T]) -> Result<TransformSolution<T>> {
    if mech.kind != MechanismKind::CsbMechanism {
        return Err(Error::bad("mechanism", "expected a continuous-state mechanism"));
    }
    check_grid(s_grid)?;
    let cap = mech.csb_cap().unwrap_or(T::infinity());
    let ode = ScaledOde::new(mech, Scaled::Kappa);
    let values = ode.solve(s_grid, cap)?;
    let residual = ode.residual(s_grid, cap)?;
    Ok(TransformSolution { kind: TransformKind::Kappa, grid: s_grid.to_vec(), values, residual })
}

fn quad_opts<T: Scalar>() -> QuadOptions<T> {
    QuadOptions { atol: T::attainable(1e-13), rtol: T::attainable(1e-11), max_segments: 4000 }
}

/// Inverse of the continuous-time `φ` on `(q, 1]`, where `q` is the
/// extinction probability.
pub fn theta_inverse_ct<T: Scalar>(mech: &BranchingMechanism<T>, s_grid: &[T]) -> Result<TransformSolution<T>> {
    if mech.kind != MechanismKind::CtMechanism {
        return Err(Error::bad("mechanism", "expected a continuous-time mechanism"));
    }
    check_grid(s_grid)?;
    if s_grid.iter().any(|&s| s > T::one()) {
        return Err(Error::DomainCap { s: s_grid.last().unwrap().as_f64(), cap: 1.0 });
    }
    let one = T::one();
    // With v = 1 - u the integrand is -(g'(0)/g(v) - 1/v) for g(v) = Ψ(1-v).
    let g = |v: T| mech.psi(one - v);
    let origin = OriginExpansion { slope: -mech.psi_prime(one), curvature: Some(mech.psi_second(one)) };
    let values = s_grid
        .par_iter()
        .map(|&s| {
            if s == one {
                return Ok(T::zero());
            }
            let x = one - s;
            let integral = conjugacy_integral(g, origin, x, T::lit(1e-4), &quad_opts())?;
            Ok(x * integral.exp())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(TransformSolution { kind: TransformKind::Theta, grid: s_grid.to_vec(), values, residual: T::zero() })
}

/// Inverse of `κ` on `[0, cap)`.
pub fn theta_inverse_csb<T: Scalar>(mech: &BranchingMechanism<T>, s_grid: &[T]) -> Result<TransformSolution<T>> {
    if mech.kind != MechanismKind::CsbMechanism {
        return Err(Error::bad("mechanism", "expected a continuous-state mechanism"));
    }
    check_grid(s_grid)?;
    let cap = mech.csb_cap().unwrap_or(T::infinity());
    if let Some(&s) = s_grid.iter().find(|&&s| s >= cap) {
        return Err(Error::DomainCap { s: s.as_f64(), cap: cap.as_f64() });
    }
    let origin = OriginExpansion { slope: mech.psi_prime(T::zero()), curvature: Some(mech.psi_second(T::zero())) };
    let values = s_grid
        .par_iter()
        .map(|&s| {
            let integral = conjugacy_integral(|u| mech.psi(u), origin, s, T::lit(1e-4), &quad_opts())?;
            Ok(s * integral.exp())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(TransformSolution { kind: TransformKind::Theta, grid: s_grid.to_vec(), values, residual: T::zero() })
}

/// `max |θ(f(s)) - s|` over the grid, for a transform `f` and its inverse `θ`
/// evaluated on the images.
pub fn inverse_defect<T: Scalar>(forward: &TransformSolution<T>, theta_of_forward: &TransformSolution<T>) -> T {
    forward.grid.iter().zip(&theta_of_forward.values).map(|(&s, &t)| (t - s).abs()).fold(T::zero(), T::max)
}

/// Galton–Watson `φ(s)` by the Poincaré iteration `p̂^{∘n}(e^{-s/mⁿ})`,
/// iterating on `1 - φ` to keep precision near `s = 0`.
pub fn gw_phi_at<T: Scalar>(mech: &BranchingMechanism<T>, s: T) -> Result<T> {
    if mech.kind != MechanismKind::GwGeneratingFunction {
        return Err(Error::bad("mechanism", "expected a generating function"));
    }
    if s == T::zero() {
        return Ok(T::one());
    }
    let m = mech.mean();
    let tol = T::attainable(ITERATION_TOL);
    let mut prev = T::nan();
    let mut scale = T::one();
    for n in 0..MAX_ITERATIONS {
        let mut q = -(-s / scale).exp_m1();
        for _ in 0..n {
            q = mech.pgf_complement(q);
        }
        let value = T::one() - q;
        if !value.is_finite() {
            return Err(Error::IterationDiverged { s: s.as_f64() });
        }
        if (value - prev).abs() < tol {
            return Ok(value);
        }
        prev = value;
        scale = scale * m;
    }
    Err(Error::IterationDiverged { s: s.as_f64() })
}

pub fn gw_phi<T: Scalar>(mech: &BranchingMechanism<T>, s_grid: &[T]) -> Result<TransformSolution<T>> {
    check_grid(s_grid)?;
    let values = s_grid.par_iter().map(|&s| gw_phi_at(mech, s)).collect::<Result<Vec<T>>>()?;
    let residual = schroeder_residual(mech, s_grid)?;
    Ok(TransformSolution { kind: TransformKind::Phi, grid: s_grid.to_vec(), values, residual })
}

/// `sup |φ(ms) - p̂(φ(s))|` over the grid with the true offspring mean.
pub fn schroeder_residual<T: Scalar>(mech: &BranchingMechanism<T>, s_grid: &[T]) -> Result<T> {
    schroeder_residual_with(mech, s_grid, mech.mean())
}

/// Schroeder residual with a caller-supplied dilation `m`; a wrong `m`
/// must show up as a large residual.
pub fn schroeder_residual_with<T: Scalar>(mech: &BranchingMechanism<T>, s_grid: &[T], m: T) -> Result<T> {
    let diffs = s_grid
        .par_iter()
        .map(|&s| {
            let lhs = gw_phi_at(mech, m * s)?;
            let inner = gw_phi_at(mech, s)?;
            let rhs = mech.pgf(inner).ok_or_else(|| Error::bad("mechanism", "no generating function"))?;
            Ok((lhs - rhs).abs())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(diffs.into_iter().fold(T::zero(), T::max))
}

/// `(-1)^k Δ^k f ≥ -tol` for `k ≤ 3` on a uniform grid: the finite-difference
/// signature of a completely monotone function such as a Laplace transform.
pub fn completely_monotone_probe<T: Scalar>(values: &[T], tol: T) -> bool {
    let mut diffs = values.to_vec();
    for k in 1..=3 {
        diffs = diffs.windows(2).map(|w| w[1] - w[0]).collect();
        let sign = if k % 2 == 1 { -T::one() } else { T::one() };
        if diffs.iter().any(|&d| sign * d < -tol) {
            return false;
        }
    }
    true
}

/// Residual of the implicit relation `θ^{1-2u} = (1-s)^{1/u} / (1-u(1+s))^{1/(1-u)}`
/// stated for geometric branching, evaluated on a computed `θ`.
pub fn geometric_relation_residual<T: Scalar>(u: T, theta: &TransformSolution<T>) -> T {
    let one = T::one();
    theta
        .grid
        .iter()
        .zip(&theta.values)
        .map(|(&s, &t)| {
            let lhs = t.powf(one - T::lit(2.0) * u);
            let rhs = (one - s).powf(one / u) / (one - u * (one + s)).powf(one / (one - u));
            (lhs - rhs).abs()
        })
        .fold(T::zero(), T::max)
}

/// Closed-form inverse for geometric offspring `p̂(s) = (1-u)/(1-us)` in
/// continuous time: `θ(s) = (1-s) ((1-2u)/(1-u(1+s)))^{u/(1-u)}`.
pub fn geometric_theta_closed_form<T: Scalar>(u: T, s: T) -> T {
    let one = T::one();
    (one - s) * ((one - T::lit(2.0) * u) / (one - u * (one + s))).powf(u / (one - u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn binary_splitting_phi_and_theta() {
        let mech = BranchingMechanism::<f64>::binary_splitting(MechanismKind::CtMechanism);
        let g = grid(0.0, 4.0, 21);
        let phi = solve_ct_phi(&mech, &g).unwrap();
        assert_eq!(phi.values[0], 1.0);
        for (s, v) in g.iter().zip(&phi.values) {
            assert!((v - 1.0 / (1.0 + s)).abs() < 1e-9, "s={s}: {v}");
        }
        assert!(phi.residual < 1e-6, "{}", phi.residual);
        let th = theta_inverse_ct(&mech, &[0.25, 0.5, 0.9, 1.0]).unwrap();
        for (s, v) in th.grid.iter().zip(&th.values) {
            assert!((v - (1.0 - s) / s).abs() < 1e-9, "s={s}: {v}");
        }
    }

    #[test]
    fn feller_kappa_theta_and_laplace() {
        let mech = BranchingMechanism::feller(1.0f64, 1.0).unwrap();
        assert!((mech.csb_cap().unwrap() - 2.0).abs() < 1e-12);
        let g = grid(0.0, 8.0, 33);
        let kappa = solve_csb_kappa(&mech, &g).unwrap();
        let law = crate::limit_law::WLaw::new(1.0f64, 1.0).unwrap();
        for (s, k) in g.iter().zip(&kappa.values) {
            assert!((k - 2.0 * s / (2.0 + s)).abs() < 1e-9);
            assert!(((-k).exp() - crate::limit_law::laplace_w(&law, *s)).abs() < 1e-9);
        }
        let th = theta_inverse_csb(&mech, &kappa.values).unwrap();
        assert!(inverse_defect(&kappa, &th) < 1e-8);
        let one = theta_inverse_csb(&mech, &[1.0]).unwrap();
        assert!((one.values[0] - 2.0).abs() < 1e-10);
        assert!(matches!(theta_inverse_csb(&mech, &[2.5]), Err(Error::DomainCap { .. })));
        let lt: Vec<f64> = kappa.values.iter().map(|k| (-k).exp()).collect();
        assert!(completely_monotone_probe(&lt, 1e-12));
    }

    #[test]
    fn geometric_gw_schroeder() {
        let mech = BranchingMechanism::geometric(MechanismKind::GwGeneratingFunction, 2.0f64 / 3.0).unwrap();
        assert!((mech.mean() - 2.0).abs() < 1e-12);
        let g = grid(0.0, 5.0, 26);
        let phi = gw_phi(&mech, &g).unwrap();
        assert!(phi.residual < 1e-6, "{}", phi.residual);
        assert_eq!(schroeder_residual(&mech, &[0.0]).unwrap(), 0.0);
        // Linear fractional law: W is 0 w.p. q = 1/2, else exponential.
        for (s, v) in g.iter().zip(&phi.values) {
            assert!((v - (0.5 + 0.25 / (0.5 + s))).abs() < 1e-7, "s={s}: {v}");
        }
        let wrong = schroeder_residual_with(&mech, &g, mech.mean() + 0.1).unwrap();
        assert!(wrong > 1e-3, "{wrong}");
    }

    #[test]
    fn geometric_ct_inverse_matches_its_integral() {
        let u = 0.3f64;
        let mech = BranchingMechanism::geometric(MechanismKind::CtMechanism, u).unwrap();
        let g = grid(0.05, 0.95, 19);
        let th = theta_inverse_ct(&mech, &g).unwrap();
        for (s, v) in g.iter().zip(&th.values) {
            assert!((v - geometric_theta_closed_form(u, *s)).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_mechanisms() {
        assert!(BranchingMechanism::geometric(MechanismKind::GwGeneratingFunction, 0.3).is_err());
        assert!(BranchingMechanism::<f64>::new(MechanismKind::CsbMechanism, Family::BinarySplitting).is_err());
        assert!(BranchingMechanism::feller(-1.0f64, 1.0).is_err());
        let mech = BranchingMechanism::<f64>::binary_splitting(MechanismKind::CtMechanism);
        assert!(solve_ct_phi(&mech, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn offspring_vector_agrees_with_named_family() {
        let a = BranchingMechanism::<f64>::binary_splitting(MechanismKind::GwGeneratingFunction);
        let b = BranchingMechanism::new(
            MechanismKind::GwGeneratingFunction,
            Family::Offspring { probs: vec![0.0, 0.0, 1.0] },
        )
        .unwrap();
        for s in [0.3, 1.0, 2.5] {
            assert!((gw_phi_at(&a, s).unwrap() - gw_phi_at(&b, s).unwrap()).abs() < 1e-12);
        }
    }
}
