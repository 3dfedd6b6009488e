//! Empirical laws, two-sample distances and summary statistics.
//!
//! Summaries here work in `f64` regardless of the simulation scalar: they
//! feed reports, and sums use compensated accumulation in a fixed order so
//! results do not depend on how the samples were produced in parallel.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub variance: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = values.len();
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        let variance =
            if n > 1 { compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64 } else { 0.0 };
        Ok(Self { mean, stderr: (variance / n as f64).sqrt(), variance, n })
    }

    /// Frequency of `true` with its binomial standard error.
    pub fn frequency(flags: impl IntoIterator<Item = bool>) -> Result<Self> {
        let v: Vec<f64> = flags.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        Self::of(&v)
    }

    /// `|mean - target| <= k stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Standard error of the sample variance, from the fourth central moment.
pub fn variance_stderr(values: &[f64]) -> Result<f64> {
    let est = MeanEstimate::of(values)?;
    let n = values.len() as f64;
    let m4 = compensated_sum(values.iter().map(|v| (v - est.mean).powi(4))) / n;
    let s2 = est.variance;
    Ok(((m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt())
}

/// A weighted sample of a scalar law, kept sorted; exact zeros are counted
/// as the atom at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    values: Vec<f64>,
    /// Normalised weights in the order of `values`; `None` means uniform.
    weights: Option<Vec<f64>>,
    zeros: usize,
}

impl EmpiricalLaw {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::Invalid("NaN in sample".into()));
        }
        let mut values = samples;
        values.sort_by(f64::total_cmp);
        let zeros = values.iter().filter(|&&v| v == 0.0).count();
        Ok(Self { values, weights: None, zeros })
    }

    pub fn weighted(samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if samples.len() != weights.len() {
            return Err(Error::Invalid("sample/weight length mismatch".into()));
        }
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || samples.iter().any(|v| v.is_nan()) {
            return Err(Error::Invalid("weights must be nonnegative and values finite".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if !(total > 0.0) {
            return Err(Error::Invalid("weights sum to zero".into()));
        }
        let mut pairs: Vec<(f64, f64)> = samples.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let zeros = pairs.iter().filter(|p| p.0 == 0.0).count();
        let (values, weights): (Vec<f64>, Vec<f64>) = pairs.into_iter().map(|(v, w)| (v, w / total)).unzip();
        Ok(Self { values, weights: Some(weights), zeros })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.values.len() as f64,
        }
    }

    /// Probability mass at exactly zero.
    pub fn atom(&self) -> f64 {
        match &self.weights {
            Some(w) => compensated_sum(self.values.iter().zip(w).filter(|p| *p.0 == 0.0).map(|p| *p.1)),
            None => self.zeros as f64 / self.values.len() as f64,
        }
    }

    pub fn mean(&self) -> f64 {
        compensated_sum((0..self.len()).map(|i| self.values[i] * self.weight(i)))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|&v| v <= x);
        match &self.weights {
            Some(w) => compensated_sum(w[..k].iter().copied()),
            None => k as f64 / self.values.len() as f64,
        }
    }

    /// Smallest sample value `v` with `cdf(v) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.values.len();
        let k = match &self.weights {
            None => ((p * n as f64).ceil() as usize).clamp(1, n) - 1,
            Some(w) => {
                let mut acc = 0.0;
                w.iter()
                    .position(|&wi| {
                        acc += wi;
                        acc >= p
                    })
                    .unwrap_or(n - 1)
            }
        };
        self.values[k]
    }

    /// Conditional law given a strictly positive value; `None` if all mass is at zero.
    pub fn positive_part(&self) -> Option<Self> {
        let start = self.values.partition_point(|&v| v <= 0.0);
        if start == self.values.len() {
            return None;
        }
        let values = self.values[start..].to_vec();
        match &self.weights {
            Some(w) => Self::weighted(values, w[start..].to_vec()).ok(),
            None => Self::new(values).ok(),
        }
    }

    /// Jump points with their masses, merging ties.
    fn steps(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for i in 0..self.len() {
            let (v, w) = (self.values[i], self.weight(i));
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => out.push((v, w)),
            }
        }
        out
    }
}

/// Walks the union of jump points, calling `f(x, F_a(x), F_b(x), next_x)`.
fn sweep(a: &EmpiricalLaw, b: &EmpiricalLaw, mut f: impl FnMut(f64, f64, f64, Option<f64>)) {
    let (sa, sb) = (a.steps(), b.steps());
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        if i < sa.len() && sa[i].0 == x {
            fa += sa[i].1;
            i += 1;
        }
        if j < sb.len() && sb[j].0 == x {
            fb += sb[j].1;
            j += 1;
        }
        let next = match (sa.get(i), sb.get(j)) {
            (Some(p), Some(q)) => Some(p.0.min(q.0)),
            (Some(p), None) => Some(p.0),
            (None, Some(q)) => Some(q.0),
            (None, None) => None,
        };
        f(x, fa.min(1.0), fb.min(1.0), next);
    }
}

/// `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_distance(a: &EmpiricalLaw, b: &EmpiricalLaw) -> f64 {
    let mut d: f64 = 0.0;
    sweep(a, b, |_, fa, fb, _| d = d.max((fa - fb).abs()));
    d
}

/// `∫ |F_a(x) - F_b(x)| dx`.
pub fn wasserstein1(a: &EmpiricalLaw, b: &EmpiricalLaw) -> f64 {
    let mut parts = Vec::new();
    sweep(a, b, |x, fa, fb, next| {
        if let Some(nx) = next {
            parts.push((fa - fb).abs() * (nx - x));
        }
    });
    compensated_sum(parts)
}

/// Two-sided 99% critical value of the two-sample KS statistic (asymptotic).
pub fn ks_critical_99(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.628 * ((n + m) / (n * m)).sqrt()
}

/// Bootstrap standard error of `distance(sample, reference)`, resampling the
/// (smaller) sample side only; replicate `k` uses its own stream.
pub fn bootstrap_stderr(
    sample: &[f64],
    reference: &EmpiricalLaw,
    distance: fn(&EmpiricalLaw, &EmpiricalLaw) -> f64,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    let values = bootstrap_distances(sample, reference, distance, sample.len(), replicates, seed)?;
    Ok(MeanEstimate::of(&values)?.variance.sqrt())
}

/// Distances to `reference` of `replicates` resamples of size `size` drawn
/// with replacement from `sample`.
pub fn bootstrap_distances(
    sample: &[f64],
    reference: &EmpiricalLaw,
    distance: fn(&EmpiricalLaw, &EmpiricalLaw) -> f64,
    size: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if sample.is_empty() || size == 0 {
        return Err(Error::EmptySample);
    }
    (0..replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, StreamTag::Bootstrap, k as u64);
            let resampled: Vec<f64> = (0..size).map(|_| sample[rng.random_range(0..sample.len())]).collect();
            EmpiricalLaw::new(resampled).map(|law| distance(&law, reference))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law(v: &[f64]) -> EmpiricalLaw {
        EmpiricalLaw::new(v.to_vec()).unwrap()
    }

    #[test]
    fn quantiles() {
        let l = law(&[3.0, 1.0, 2.0, 4.0]);
        assert_eq!(l.quantile(0.0), 1.0);
        assert_eq!(l.quantile(0.5), 2.0);
        assert_eq!(l.quantile(0.51), 3.0);
        assert_eq!(l.quantile(1.0), 4.0);
        let w = EmpiricalLaw::weighted(vec![0.0, 1.0], vec![3.0, 1.0]).unwrap();
        assert_eq!(w.quantile(0.75), 0.0);
        assert_eq!(w.quantile(0.8), 1.0);
    }

    #[test]
    fn identical_and_point_masses() {
        let a = law(&[0.3, 0.1, 0.7]);
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(wasserstein1(&a, &a), 0.0);
        let z = law(&[0.0, 0.0]);
        let o = law(&[1.0]);
        assert_eq!(ks_distance(&z, &o), 1.0);
        assert_eq!(wasserstein1(&z, &o), 1.0);
        assert_eq!(z.atom(), 1.0);
        assert!(z.positive_part().is_none());
    }

    #[test]
    fn w1_of_shifted_samples() {
        let a = law(&[0.0, 1.0, 2.0]);
        let b = law(&[0.5, 1.5, 2.5]);
        assert!((wasserstein1(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_law() {
        let w = EmpiricalLaw::weighted(vec![1.0, 0.0, 2.0], vec![1.0, 2.0, 1.0]).unwrap();
        assert!((w.atom() - 0.5).abs() < 1e-15);
        assert!((w.mean() - 0.75).abs() < 1e-15);
        assert!((w.cdf(1.0) - 0.75).abs() < 1e-15);
        let u = law(&[0.0, 0.0, 1.0, 2.0]);
        assert!(wasserstein1(&w, &u) < 1e-15);
        assert!(EmpiricalLaw::weighted(vec![1.0], vec![-1.0]).is_err());
        assert!(matches!(EmpiricalLaw::new(vec![]), Err(Error::EmptySample)));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn mean_estimate() {
        let e = MeanEstimate::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.mean, 2.5);
        assert!((e.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!(e.within(2.6, 1.0));
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..5.0f64], 1..40)
    }

    proptest! {
        #[test]
        fn distances_are_symmetric_metrics(a in sample(), b in sample(), c in sample()) {
            let (a, b, c) = (law(&a), law(&b), law(&c));
            for d in [ks_distance as fn(&EmpiricalLaw, &EmpiricalLaw) -> f64, wasserstein1] {
                let ab = d(&a, &b);
                prop_assert!((ab - d(&b, &a)).abs() < 1e-12);
                prop_assert!(ab >= 0.0);
                prop_assert!(d(&a, &c) <= ab + d(&b, &c) + 1e-12);
            }
            prop_assert!(ks_distance(&a, &b) <= 1.0 + 1e-12);
        }

        #[test]
        fn w1_matches_sorted_coupling(v in prop::collection::vec(0.0..5.0f64, 1..30),
                                      u in prop::collection::vec(0.0..5.0f64, 1..30)) {
            let n = v.len().min(u.len());
            let (mut v, mut u) = (v[..n].to_vec(), u[..n].to_vec());
            v.sort_by(f64::total_cmp);
            u.sort_by(f64::total_cmp);
            let direct: f64 = v.iter().zip(&u).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
            prop_assert!((wasserstein1(&law(&v), &law(&u)) - direct).abs() < 1e-10);
        }
    }
}
