//! Path simulation: the small-noise SDE, the Feller branching diffusion, the
//! blown-up process coupled to its Feller limit, and first-exit runs.
//!
//! All simulators use full-truncation Euler: coefficients are evaluated at
//! the state clamped to the closed domain, a nonpositive proposal absorbs the
//! path at 0 for good, and a finite right end clamps the state (for the
//! catalog models both coefficients vanish there, so it is absorbing too).

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::model::{DiffusionModel, ModelParams};
use crate::rng::{stream, StreamTag};
use crate::scalar::Scalar;

pub const SCHEME: &str = "full_truncation_euler";

/// `T^ε = ln(1/ε) / γ`.
pub fn critical_time<T: Scalar>(gamma: T, epsilon: T) -> Result<T> {
    if !(epsilon > T::zero()) || epsilon >= T::one() {
        return Err(Error::BadEpsilon(epsilon.as_f64()));
    }
    Ok(-epsilon.ln() / gamma)
}

/// `[0, t_c]`, `[t_c, t_1]`, `[t_1, ∞)` with `t_c = c T^ε`, `t_1 = T^ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StagePartition<T> {
    pub c: T,
    pub t_c: T,
    pub t_1: T,
    pub critical_time: T,
}

impl<T: Scalar> StagePartition<T> {
    pub fn new(gamma: T, epsilon: T, c: T) -> Result<Self> {
        if !(c > T::lit(0.5) && c < T::one()) {
            return Err(Error::bad("c", format!("must lie in (1/2, 1), got {c}")));
        }
        let t1 = critical_time(gamma, epsilon)?;
        Ok(Self { c, t_c: c * t1, t_1: t1, critical_time: t1 })
    }
}

/// `min(1e-3/γ, 1e-3 T^ε)`.
pub fn default_dt<T: Scalar>(gamma: T, epsilon: T) -> Result<T> {
    Ok((T::lit(1e-3) / gamma).min(T::lit(1e-3) * critical_time(gamma, epsilon)?))
}

/// Step size and the checkpoint times at which states are recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec<T> {
    pub dt: T,
    pub times: Vec<T>,
}

impl<T: Scalar> SimSpec<T> {
    pub fn at(dt: T, times: Vec<T>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::bad("dt", "must be positive"));
        }
        if times.is_empty() {
            return Err(Error::bad("times", "need at least one checkpoint"));
        }
        if times[0] < T::zero() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::bad("times", "checkpoints must be nonnegative and strictly increasing"));
        }
        Ok(Self { dt, times })
    }

    /// `intervals + 1` equally spaced checkpoints on `[0, horizon]`.
    pub fn uniform(dt: T, horizon: T, intervals: usize) -> Result<Self> {
        if !(horizon >= T::zero()) {
            return Err(Error::bad("horizon", "must be nonnegative"));
        }
        if horizon == T::zero() {
            return Self::at(dt, vec![T::zero()]);
        }
        let n = intervals.max(1);
        Self::at(dt, (0..=n).map(|i| horizon * T::from_count(i) / T::from_count(n)).collect())
    }

    pub fn horizon(&self) -> T {
        self.times[self.times.len() - 1]
    }
}

/// Simulated trajectories recorded at checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T> {
    pub model: String,
    pub model_hash: String,
    pub epsilon: T,
    pub dt: T,
    pub times: Vec<T>,
    /// Path-major, `n_paths × times.len()`.
    states: Vec<T>,
    /// Absorption time at 0, per path.
    pub absorbed_at: Vec<Option<T>>,
    pub seed: u64,
    pub scheme: &'static str,
}

impl<T: Scalar> PathEnsemble<T> {
    pub fn n_paths(&self) -> usize {
        self.absorbed_at.len()
    }

    pub fn path(&self, i: usize) -> &[T] {
        let k = self.times.len();
        &self.states[i * k..(i + 1) * k]
    }

    /// States of every path at checkpoint `k`.
    pub fn at_checkpoint(&self, k: usize) -> Vec<T> {
        (0..self.n_paths()).map(|i| self.path(i)[k]).collect()
    }

    pub fn final_states(&self) -> Vec<T> {
        self.at_checkpoint(self.times.len() - 1)
    }

    pub fn absorbed_fraction(&self) -> f64 {
        let n = self.absorbed_at.iter().filter(|a| a.is_some()).count();
        n as f64 / self.n_paths().max(1) as f64
    }

    /// Wide CSV: `t` then one column per path (at most `max_paths`).
    pub fn to_csv(&self, max_paths: usize) -> CsvTable {
        let shown = self.n_paths().min(max_paths);
        let names: Vec<String> =
            std::iter::once("t".to_string()).chain((0..shown).map(|i| format!("path_{i}"))).collect();
        let header: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut t = CsvTable::new(&header)
            .with_meta("model", &self.model_hash)
            .with_meta("model_name", &self.model)
            .with_meta("seed", self.seed)
            .with_meta("epsilon", self.epsilon.as_f64())
            .with_meta("dt", self.dt.as_f64())
            .with_meta("scheme", self.scheme);
        for (k, time) in self.times.iter().enumerate() {
            let mut row = vec![time.as_f64()];
            row.extend((0..shown).map(|i| self.path(i)[k].as_f64()));
            t.push(row);
        }
        t
    }
}

/// Coefficients of one simulated SDE, with the noise factor folded into the variance.
struct Dynamics<D, V, T> {
    drift: D,
    variance: V,
    right: Option<T>,
    ceiling: T,
}

struct PathRun<T> {
    states: Vec<T>,
    absorbed_at: Option<T>,
}

impl<D, V, T> Dynamics<D, V, T>
where
    T: Scalar,
    D: Fn(T) -> T,
    V: Fn(T) -> T,
{
    #[inline]
    fn clamp(&self, x: T) -> T {
        let x = x.max(T::zero());
        match self.right {
            Some(r) => x.min(r),
            None => x,
        }
    }

    /// Runs one path through the checkpoints. With `keep_drawing`, normals are
    /// consumed after absorption too, so two coupled runs stay in lockstep.
    fn run(
        &self,
        x0: T,
        spec: &SimSpec<T>,
        rng: &mut ChaCha8Rng,
        keep_drawing: bool,
        path: usize,
    ) -> Result<PathRun<T>> {
        let dt = spec.dt;
        let mut x = x0;
        let mut absorbed_at = if x0 <= T::zero() { Some(T::zero()) } else { None };
        let mut t0 = T::zero();
        let mut states = Vec::with_capacity(spec.times.len());
        for &c in &spec.times {
            let span = c - t0;
            let steps =
                if span > T::zero() { (span / dt - T::lit(1e-9)).ceil().to_usize().unwrap_or(0).max(1) } else { 0 };
            if absorbed_at.is_some() && !keep_drawing {
                t0 = c;
                states.push(T::zero());
                continue;
            }
            for k in 0..steps {
                let h = if k + 1 == steps { span - dt * T::from_count(steps - 1) } else { dt };
                let z: f64 = rng.sample(StandardNormal);
                if absorbed_at.is_some() {
                    continue;
                }
                let xc = self.clamp(x);
                let var = (self.variance)(xc).max(T::zero());
                let next = x + (self.drift)(xc) * h + (var * h).sqrt() * T::lit(z);
                if next <= T::zero() {
                    x = T::zero();
                    absorbed_at = Some(t0 + dt * T::from_count(k) + h);
                } else {
                    x = match self.right {
                        Some(r) => next.min(r),
                        None => next,
                    };
                    if !(x <= self.ceiling) {
                        return Err(Error::OverflowGuard { path, state: x.as_f64(), ceiling: self.ceiling.as_f64() });
                    }
                }
            }
            t0 = c;
            states.push(x);
        }
        Ok(PathRun { states, absorbed_at })
    }
}

fn check_dt<T: Scalar>(dt: T, gamma: T) -> Result<()> {
    let limit = T::lit(0.1) / gamma;
    if dt > limit {
        return Err(Error::StepTooLarge { dt: dt.as_f64(), limit: limit.as_f64() });
    }
    Ok(())
}

/// State ceiling for the overflow guard: `1e6 max(1, x_c)`, or for models
/// without a stable point `1e6 max(1, x0) e^{γ horizon}` (linear growth).
pub fn overflow_ceiling<T: Scalar>(model: &DiffusionModel<T>, x0: T, horizon: T) -> T {
    let big = T::lit(1e6);
    match model.x_c {
        Some(xc) => big * xc.max(T::one()),
        None => big * x0.max(T::one()) * (model.gamma.max(T::zero()) * horizon).exp(),
    }
}

fn assemble<T: Scalar>(
    model: &DiffusionModel<T>,
    epsilon: T,
    spec: &SimSpec<T>,
    seed: u64,
    runs: Vec<PathRun<T>>,
) -> PathEnsemble<T> {
    let mut states = Vec::with_capacity(runs.len() * spec.times.len());
    let mut absorbed_at = Vec::with_capacity(runs.len());
    for r in runs {
        states.extend(r.states);
        absorbed_at.push(r.absorbed_at);
    }
    PathEnsemble {
        model: model.name.clone(),
        model_hash: model.fingerprint(),
        epsilon,
        dt: spec.dt,
        times: spec.times.clone(),
        states,
        absorbed_at,
        seed,
        scheme: SCHEME,
    }
}

/// Paths of `dX = μ(X) dt + √(ε a(X)) dB`, `X_0 = x0`.
pub fn simulate_paths<T: Scalar>(
    model: &DiffusionModel<T>,
    params: &ModelParams<T>,
    spec: &SimSpec<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if n_paths == 0 {
        return Err(Error::bad("n_paths", "must be at least 1"));
    }
    check_dt(spec.dt, model.gamma)?;
    let eps = params.epsilon;
    let dynamics = Dynamics {
        drift: |x| model.drift(x),
        variance: |x| eps * model.diffusion_sq(x),
        right: model.right_end,
        ceiling: overflow_ceiling(model, params.x0, spec.horizon()),
    };
    let runs = (0..n_paths)
        .into_par_iter()
        .map(|i| dynamics.run(params.x0, spec, &mut stream(seed, StreamTag::Path, i as u64), false, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(model, eps, spec, seed, runs))
}

/// Paths of `dY = γY dt + √(a'(0) Y) dB`, `Y_0 = y0`.
pub fn simulate_feller<T: Scalar>(
    gamma: T,
    a_prime0: T,
    y0: T,
    spec: &SimSpec<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if n_paths == 0 {
        return Err(Error::bad("n_paths", "must be at least 1"));
    }
    if y0 < T::zero() {
        return Err(Error::bad("y0", "must be nonnegative"));
    }
    let model = DiffusionModel::feller(gamma, a_prime0)?;
    check_dt(spec.dt, gamma)?;
    let dynamics = Dynamics {
        drift: |y| gamma * y,
        variance: |y| a_prime0 * y,
        right: None,
        ceiling: overflow_ceiling(&model, y0, spec.horizon()),
    };
    let runs = (0..n_paths)
        .into_par_iter()
        .map(|i| dynamics.run(y0, spec, &mut stream(seed, StreamTag::Feller, i as u64), false, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(&model, T::one(), spec, seed, runs))
}

/// `ε⁻¹ X^ε` and the Feller diffusion `Y` driven by the same Brownian increments.
#[derive(Debug, Clone)]
pub struct CoupledEnsemble<T> {
    pub blown_up: PathEnsemble<T>,
    pub feller: PathEnsemble<T>,
    /// Random-stream word positions after each path, `[blown_up, feller]`.
    pub stream_positions: Vec<[u128; 2]>,
}

impl<T: Scalar> CoupledEnsemble<T> {
    /// True when both processes consumed exactly the same noise on every path.
    pub fn noise_shared(&self) -> bool {
        self.stream_positions.iter().all(|p| p[0] == p[1])
    }
}

/// `X̃ = X/ε` solves `dX̃ = μ(εX̃)/ε dt + √(a(εX̃)/ε) dB` from `X̃_0 = 1`;
/// each path runs it and the Feller diffusion on two copies of one stream.
pub fn simulate_coupled_blowup<T: Scalar>(
    model: &DiffusionModel<T>,
    epsilon: T,
    spec: &SimSpec<T>,
    n_paths: usize,
    seed: u64,
) -> Result<CoupledEnsemble<T>> {
    if n_paths == 0 {
        return Err(Error::bad("n_paths", "must be at least 1"));
    }
    if !(epsilon > T::zero()) {
        return Err(Error::BadEpsilon(epsilon.as_f64()));
    }
    check_dt(spec.dt, model.gamma)?;
    let (g, a1) = (model.gamma, model.a_prime0);
    let feller_model = DiffusionModel::feller(g, a1)?;
    let blown = Dynamics {
        drift: |x| model.drift(epsilon * x) / epsilon,
        variance: |x| model.diffusion_sq(epsilon * x) / epsilon,
        right: model.right_end.map(|r| r / epsilon),
        ceiling: overflow_ceiling(model, epsilon, spec.horizon()) / epsilon,
    };
    let linear = Dynamics {
        drift: |y| g * y,
        variance: |y| a1 * y,
        right: None,
        ceiling: overflow_ceiling(&feller_model, T::one(), spec.horizon()),
    };
    let pairs = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut r1 = stream(seed, StreamTag::Path, i as u64);
            let mut r2 = r1.clone();
            let a = blown.run(T::one(), spec, &mut r1, true, i)?;
            let b = linear.run(T::one(), spec, &mut r2, true, i)?;
            Ok((a, b, [r1.get_word_pos(), r2.get_word_pos()]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ra = Vec::with_capacity(n_paths);
    let mut rb = Vec::with_capacity(n_paths);
    let mut positions = Vec::with_capacity(n_paths);
    for (a, b, p) in pairs {
        ra.push(a);
        rb.push(b);
        positions.push(p);
    }
    let mut blown_up = assemble(model, epsilon, spec, seed, ra);
    blown_up.model = format!("{}:blown_up", model.name);
    Ok(CoupledEnsemble {
        blown_up,
        feller: assemble(&feller_model, T::one(), spec, seed, rb),
        stream_positions: positions,
    })
}

/// One-step rule of a first-exit run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitScheme {
    Euler,
    /// Drift linearised at the current state over the step: exact for
    /// linear drift, so Euler's inflation of the noise where the drift
    /// contracts (which distorts rare barrier crossings) disappears.
    LocalLinearization,
}

/// Barriers and time budget of a first-exit run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitSpec<T> {
    pub lower: T,
    pub upper: T,
    pub dt: T,
    /// Paths still inside after this time are reported as undecided.
    pub max_time: T,
    pub scheme: ExitScheme,
}

/// Mean and variance of the Gaussian one-step transition from `x`.
#[inline]
fn step_moments<T: Scalar>(model: &DiffusionModel<T>, eps: T, x: T, dt: T, scheme: ExitScheme) -> (T, T) {
    let m = model.drift(x);
    let v = (eps * model.diffusion_sq(x)).max(T::zero());
    match scheme {
        ExitScheme::Euler => (x + m * dt, v * dt),
        ExitScheme::LocalLinearization => {
            let j = model.drift_derivative(x);
            let jdt = j * dt;
            if jdt.abs() < T::lit(1e-8) {
                return (x + m * dt, v * dt);
            }
            let e = jdt.exp();
            (x + m * (e - T::one()) / j, v * (e * e - T::one()) / (T::lit(2.0) * j))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExitCounts {
    pub upper: usize,
    pub lower: usize,
    pub undecided: usize,
}

impl ExitCounts {
    pub fn total(&self) -> usize {
        self.upper + self.lower + self.undecided
    }

    /// Frequency of upper exits among all paths, with its binomial standard error.
    pub fn upper_frequency(&self) -> (f64, f64) {
        let n = self.total().max(1) as f64;
        let p = self.upper as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    pub fn undecided_fraction(&self) -> f64 {
        self.undecided as f64 / self.total().max(1) as f64
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Exit {
    Upper,
    Lower,
    Undecided,
}

/// Which barrier each path leaves `(lower, upper)` through first.
///
/// Between grid points the path is treated as a Brownian bridge with the
/// local variance frozen, and a crossing is declared with the bridge's
/// crossing probability `exp(-2 (b - x_n)(b - x_{n+1}) / (ε a(x_n) dt))`;
/// without this, discrete monitoring misses most excursions over a barrier.
pub fn simulate_first_exit<T: Scalar>(
    model: &DiffusionModel<T>,
    params: &ModelParams<T>,
    spec: &ExitSpec<T>,
    n_paths: usize,
    seed: u64,
) -> Result<ExitCounts> {
    if !(spec.lower >= T::zero() && spec.lower < params.x0 && params.x0 < spec.upper) {
        return Err(Error::bad("barriers", "need 0 <= lower < x0 < upper"));
    }
    check_dt(spec.dt, model.gamma)?;
    let eps = params.epsilon;
    let steps = (spec.max_time / spec.dt).ceil().to_usize().unwrap_or(usize::MAX);
    let two = T::lit(2.0);
    let negligible = T::lit(20.0);
    // Full step for a lane flagged by the fast check: exact exits plus the
    // bridge test. `None` while the path is still inside.
    let settle = |x: T, next: T, vdt: T, rng: &mut SmallRng| -> Option<Exit> {
        if next >= spec.upper {
            return Some(Exit::Upper);
        }
        if next <= spec.lower {
            return Some(Exit::Lower);
        }
        let u = T::lit(rng.random::<f64>());
        let p_up = (-two * (spec.upper - x) * (spec.upper - next) / vdt).exp();
        if u < p_up {
            return Some(Exit::Upper);
        }
        if u < p_up + (-two * (x - spec.lower) * (next - spec.lower) / vdt).exp() {
            return Some(Exit::Lower);
        }
        None
    };
    // A block of paths runs on LANES lanes; a lane whose path ends picks up
    // the next path of the block. Every path owns its stream, so results do
    // not depend on lane assignment.
    // Path lengths are roughly exponential, so a block drains with few busy
    // lanes; a few large blocks per worker keep that tail short.
    const LANES: usize = 8;
    let block = n_paths.div_ceil(4 * rayon::current_num_threads()).max(LANES);
    let run_block = |first: usize| -> Vec<Exit> {
        let len = block.min(n_paths - first);
        // Exit paths are long; a xoshiro generator keyed from the path's
        // stream keeps the per-step cost down.
        let open = |i: usize| SmallRng::from_rng(&mut stream(seed, StreamTag::Exit, (first + i) as u64));
        let mut out = vec![Exit::Undecided; len];
        let mut path: [Option<usize>; LANES] = [None; LANES];
        let mut rngs: Vec<SmallRng> = Vec::with_capacity(LANES);
        let mut xs = [params.x0; LANES];
        let mut age = [0usize; LANES];
        let mut queued = 0;
        for lane in 0..LANES {
            let i = queued.min(len - 1);
            rngs.push(open(i));
            if queued < len {
                path[lane] = Some(queued);
                queued += 1;
            }
        }
        let mut running = path.iter().flatten().count();
        let mut z = [T::zero(); LANES];
        let mut next = [T::zero(); LANES];
        let mut vdt = [T::zero(); LANES];
        let mut mean = [T::zero(); LANES];
        while running > 0 {
            for lane in 0..LANES {
                z[lane] = match path[lane] {
                    Some(_) => T::lit(rngs[lane].sample::<f64, _>(StandardNormal)),
                    None => T::zero(),
                };
            }
            match spec.scheme {
                ExitScheme::Euler => {
                    model.drift.eval_each(&xs, &mut mean);
                    model.diffusion.eval_each(&xs, &mut vdt);
                    for lane in 0..LANES {
                        mean[lane] = xs[lane] + mean[lane] * spec.dt;
                        vdt[lane] = (eps * vdt[lane]).max(T::zero()) * spec.dt;
                    }
                }
                ExitScheme::LocalLinearization => {
                    for lane in 0..LANES {
                        (mean[lane], vdt[lane]) = step_moments(model, eps, xs[lane], spec.dt, spec.scheme);
                    }
                }
            }
            let mut flagged = false;
            for lane in 0..LANES {
                let (x, v) = (xs[lane], vdt[lane]);
                next[lane] = mean[lane] + v.sqrt() * z[lane];
                let gap =
                    ((spec.upper - x) * (spec.upper - next[lane])).min((x - spec.lower) * (next[lane] - spec.lower));
                // Crossing chances below e^-40 are not worth a uniform draw.
                flagged |= gap < negligible * v;
            }
            // Common case: no lane near a barrier and none out of time.
            if !flagged && age.iter().all(|&a| a + 1 < steps) {
                for lane in 0..LANES {
                    xs[lane] = next[lane];
                    age[lane] += 1;
                }
                continue;
            }
            for lane in 0..LANES {
                let Some(i) = path[lane] else { continue };
                let mut verdict = None;
                if flagged && vdt[lane] > T::zero() {
                    let gap = ((spec.upper - xs[lane]) * (spec.upper - next[lane]))
                        .min((xs[lane] - spec.lower) * (next[lane] - spec.lower));
                    if gap < negligible * vdt[lane] {
                        verdict = settle(xs[lane], next[lane], vdt[lane], &mut rngs[lane]);
                    }
                }
                age[lane] += 1;
                if verdict.is_none() && age[lane] < steps {
                    xs[lane] = next[lane];
                    continue;
                }
                out[i] = verdict.unwrap_or(Exit::Undecided);
                if queued < len {
                    path[lane] = Some(queued);
                    rngs[lane] = open(queued);
                    queued += 1;
                } else {
                    path[lane] = None;
                    running -= 1;
                }
                xs[lane] = params.x0;
                age[lane] = 0;
            }
        }
        out
    };
    let exits: Vec<Exit> = (0..n_paths).into_par_iter().step_by(block).flat_map_iter(run_block).collect();
    let count = |e: Exit| exits.iter().filter(|&&x| x == e).count();
    Ok(ExitCounts { upper: count(Exit::Upper), lower: count(Exit::Lower), undecided: count(Exit::Undecided) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow;
    use crate::model::{builtin_model, ParamMap};

    fn logistic() -> DiffusionModel<f64> {
        builtin_model("logistic_feller", &ParamMap::new()).unwrap()
    }

    #[test]
    fn critical_time_values() {
        assert!((critical_time(2.0, (-4.0f64).exp()).unwrap() - 2.0).abs() < 1e-12);
        assert!((critical_time(1.0, 0.01).unwrap() - 100f64.ln()).abs() < 1e-12);
        assert!(critical_time(1.0, 1.0 - 1e-12).unwrap() < 1e-11);
        assert!(matches!(critical_time(1.0, 1.0), Err(Error::BadEpsilon(_))));
        assert!(StagePartition::new(1.0, 0.01, 0.5).is_err());
        let s = StagePartition::new(1.0, 0.01, 0.75).unwrap();
        assert!(s.t_c < s.t_1);
    }

    #[test]
    fn zero_noise_follows_flow() {
        let m = logistic();
        let p = ModelParams::deterministic(&m, 0.05).unwrap();
        let spec = SimSpec::uniform(1e-4, 6.0, 6).unwrap();
        let e = simulate_paths(&m, &p, &spec, 3, 1).unwrap();
        for k in 0..spec.times.len() {
            let x = flow::flow(&m, 0.05, spec.times[k]).unwrap();
            for i in 0..3 {
                assert!((e.path(i)[k] - x).abs() < 1e-4, "{k}: {} vs {x}", e.path(i)[k]);
            }
        }
    }

    #[test]
    fn same_seed_same_ensemble() {
        let m = logistic();
        let p = ModelParams::from_epsilon(&m, 0.05).unwrap();
        let spec = SimSpec::uniform(1e-3, 2.0, 4).unwrap();
        let a = simulate_paths(&m, &p, &spec, 50, 9).unwrap();
        let b = simulate_paths(&m, &p, &spec, 50, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&m, &p, &spec, 50, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn absorption_is_permanent() {
        let m = logistic();
        let p = ModelParams::from_epsilon(&m, 0.1).unwrap();
        let spec = SimSpec::uniform(1e-3, 3.0, 30).unwrap();
        let e = simulate_paths(&m, &p, &spec, 400, 3).unwrap();
        assert!(e.absorbed_fraction() > 0.0);
        for i in 0..e.n_paths() {
            let path = e.path(i);
            assert!(path.iter().all(|&x| x >= 0.0));
            if let Some(t) = e.absorbed_at[i] {
                for (k, &time) in e.times.iter().enumerate() {
                    if time >= t {
                        assert_eq!(path[k], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn guards() {
        let m = logistic();
        let p = ModelParams::from_epsilon(&m, 0.1).unwrap();
        let spec = SimSpec::uniform(0.2, 1.0, 1).unwrap();
        assert!(matches!(simulate_paths(&m, &p, &spec, 1, 0), Err(Error::StepTooLarge { .. })));
        let zero = simulate_feller(1.0, 1.0, 0.0, &SimSpec::uniform(0.01, 1.0, 2).unwrap(), 5, 0).unwrap();
        assert!(zero.final_states().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn checkpoints_are_hit_exactly() {
        // A checkpoint off the dt lattice ends with a partial step.
        let spec = SimSpec::at(0.1, vec![0.25, 1.0]).unwrap();
        let m = DiffusionModel::<f64>::feller(1.0, 1.0).unwrap();
        let p = ModelParams::deterministic(&m, 1.0).unwrap();
        let e = simulate_paths(&m, &p, &spec, 1, 0).unwrap();
        // Euler for y' = y: (1.1)^2 * 1.05 at t = 0.25.
        assert!((e.path(0)[0] - 1.1 * 1.1 * 1.05).abs() < 1e-12);
    }

    #[test]
    fn linear_model_blowup_matches_feller() {
        let m = DiffusionModel::<f64>::feller(1.0, 1.0).unwrap();
        let spec = SimSpec::uniform(1e-3, 1.0, 4).unwrap();
        let c = simulate_coupled_blowup(&m, 0.05, &spec, 200, 4).unwrap();
        assert!(c.noise_shared());
        for i in 0..200 {
            for (a, b) in c.blown_up.path(i).iter().zip(c.feller.path(i)) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn first_exit_of_driftless_motion() {
        // μ = 0, a = 1 on (0, 1): exit at the top with probability x0.
        let m = DiffusionModel::<f64>::new(
            "brownian",
            crate::model::DriftForm::Zero,
            crate::model::DiffusionForm::Constant { value: 1.0 },
            Some(1.0),
            Default::default(),
        )
        .unwrap();
        let p = ModelParams { epsilon: 1.0, x0: 0.3 };
        let spec = ExitSpec { lower: 0.0, upper: 1.0, dt: 1e-3, max_time: 100.0, scheme: ExitScheme::Euler };
        let c = simulate_first_exit(&m, &p, &spec, 4000, 5).unwrap();
        let (f, se) = c.upper_frequency();
        assert_eq!(c.undecided, 0);
        assert!((f - 0.3).abs() < 3.0 * se, "{f} ± {se}");
    }
}
