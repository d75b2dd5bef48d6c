//! Comparing exact, oracle and empirical laws.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Anything that can be read as a table of probabilities over outcomes `K`.
pub trait Law<K: Ord + Clone> {
    fn probabilities(&self) -> BTreeMap<K, f64>;
}

/// Histogram of observed outcomes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalDist<K: Ord> {
    counts: BTreeMap<K, u64>,
    n: u64,
}

impl<K: Ord + Clone> Default for EmpiricalDist<K> {
    fn default() -> Self {
        EmpiricalDist { counts: BTreeMap::new(), n: 0 }
    }
}

impl<K: Ord + Clone> EmpiricalDist<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, k: K) {
        self.add_count(k, 1);
    }

    pub fn add_count(&mut self, k: K, c: u64) {
        if c > 0 {
            *self.counts.entry(k).or_insert(0) += c;
            self.n += c;
        }
    }

    /// Adds every count of `other`.
    pub fn merge(&mut self, other: &EmpiricalDist<K>) {
        for (k, &c) in &other.counts {
            self.add_count(k.clone(), c);
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, k: &K) -> u64 {
        self.counts.get(k).copied().unwrap_or(0)
    }

    pub fn freq(&self, k: &K) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.count(k) as f64 / self.n as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, u64)> {
        self.counts.iter().map(|(k, &c)| (k, c))
    }

    pub fn support_len(&self) -> usize {
        self.counts.len()
    }

    /// Histogram of `f(k)` for every observation `k`.
    pub fn map<L: Ord + Clone>(&self, mut f: impl FnMut(&K) -> L) -> EmpiricalDist<L> {
        let mut out = EmpiricalDist::new();
        for (k, &c) in &self.counts {
            out.add_count(f(k), c);
        }
        out
    }
}

impl<K: Ord + Clone> FromIterator<K> for EmpiricalDist<K> {
    fn from_iter<I: IntoIterator<Item = K>>(iter: I) -> Self {
        let mut d = EmpiricalDist::new();
        for k in iter {
            d.add(k);
        }
        d
    }
}

impl<K: Ord + Clone> Law<K> for EmpiricalDist<K> {
    fn probabilities(&self) -> BTreeMap<K, f64> {
        self.counts.iter().map(|(k, &c)| (k.clone(), c as f64 / self.n as f64)).collect()
    }
}

/// A probability table stored in the log domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pmf<K: Ord> {
    ln: BTreeMap<K, f64>,
}

impl<K: Ord + Clone> Default for Pmf<K> {
    fn default() -> Self {
        Pmf { ln: BTreeMap::new() }
    }
}

impl<K: Ord + Clone> Pmf<K> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets the log-probability of `k`, replacing any earlier entry.
    pub fn insert_ln(&mut self, k: K, ln: f64) {
        self.ln.insert(k, ln);
    }

    pub fn insert(&mut self, k: K, p: f64) {
        self.ln.insert(k, p.ln());
    }

    pub fn from_fn(keys: impl IntoIterator<Item = K>, mut ln: impl FnMut(&K) -> f64) -> Self {
        let mut out = Pmf::new();
        for k in keys {
            let v = ln(&k);
            out.ln.insert(k, v);
        }
        out
    }

    pub fn ln(&self, k: &K) -> f64 {
        self.ln.get(k).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn prob(&self, k: &K) -> f64 {
        self.ln(k).exp()
    }

    /// Total mass carried by the table.
    pub fn mass(&self) -> f64 {
        self.ln.values().map(|v| v.exp()).sum()
    }

    /// Pairs `(key, ln p)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> {
        self.ln.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.ln.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln.is_empty()
    }
}

impl<K: Ord + Clone> Law<K> for Pmf<K> {
    fn probabilities(&self) -> BTreeMap<K, f64> {
        self.ln.iter().map(|(k, &v)| (k.clone(), v.exp())).collect()
    }
}

/// Time spent in each state, for time averages of a jump process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWeighted<K: Ord> {
    time: BTreeMap<K, f64>,
    total: f64,
}

impl<K: Ord + Clone> Default for TimeWeighted<K> {
    fn default() -> Self {
        TimeWeighted { time: BTreeMap::new(), total: 0.0 }
    }
}

impl<K: Ord + Clone> TimeWeighted<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, k: K, dt: f64) {
        if dt > 0.0 {
            *self.time.entry(k).or_insert(0.0) += dt;
            self.total += dt;
        }
    }

    pub fn merge(&mut self, other: &TimeWeighted<K>) {
        for (k, &t) in &other.time {
            self.add(k.clone(), t);
        }
    }

    pub fn time(&self, k: &K) -> f64 {
        self.time.get(k).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> {
        self.time.iter().map(|(k, &t)| (k, t))
    }
}

impl<K: Ord + Clone> Law<K> for TimeWeighted<K> {
    fn probabilities(&self) -> BTreeMap<K, f64> {
        self.time.iter().map(|(k, &t)| (k.clone(), t / self.total)).collect()
    }
}

/// `1/2 sum |a - b|` over the union of both supports.
pub fn tv_distance<K: Ord + Clone>(a: &impl Law<K>, b: &impl Law<K>) -> f64 {
    let pa = a.probabilities();
    let mut pb = b.probabilities();
    let mut s = 0.0;
    for (k, x) in pa {
        let y = pb.remove(&k).unwrap_or(0.0);
        s += (x - y).abs();
    }
    s += pb.values().map(|y| y.abs()).sum::<f64>();
    (0.5 * s).min(1.0)
}

/// Outcome of a chi-square goodness-of-fit test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square test of observed counts against `p`.
///
/// Outcomes whose expected count is below `min_bin` are pooled into one bin,
/// together with the mass `p` does not list and any observation outside its
/// table. If the pooled bin is still below `min_bin` it joins the smallest
/// regular bin.
pub fn chi_square_gof<K: Ord + Clone>(e: &EmpiricalDist<K>, p: &Pmf<K>, min_bin: f64) -> Result<GofResult> {
    if e.n == 0 {
        return Err(Error::Invalid("no observations".into()));
    }
    let n = e.n as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    let mut listed = 0.0;
    for (k, ln) in p.iter() {
        let exp = n * ln.exp();
        listed += ln.exp();
        let obs = e.count(k) as f64;
        if exp >= min_bin {
            bins.push((obs, exp));
        } else {
            pooled_obs += obs;
            pooled_exp += exp;
        }
    }
    pooled_exp += n * (1.0 - listed).max(0.0);
    pooled_obs += e.iter().filter(|(k, _)| p.ln(k) == f64::NEG_INFINITY).map(|(_, c)| c as f64).sum::<f64>();
    if pooled_exp > 0.0 || pooled_obs > 0.0 {
        if pooled_exp >= min_bin || bins.is_empty() {
            bins.push((pooled_obs, pooled_exp));
        } else {
            let smallest = bins
                .iter_mut()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            smallest.0 += pooled_obs;
            smallest.1 += pooled_exp;
        }
    }
    if bins.len() < 2 {
        return Err(Error::Invalid(format!("only {} bin(s) after pooling", bins.len())));
    }
    let mut stat = 0.0;
    for &(o, x) in &bins {
        if x > 0.0 {
            stat += (o - x) * (o - x) / x;
        } else if o > 0.0 {
            stat = f64::INFINITY;
        }
    }
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    let p_value = if stat.is_finite() { dist.sf(stat) } else { 0.0 };
    Ok(GofResult { statistic: stat, dof, p_value })
}

/// A rate estimate `jumps / occupation` with a confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCi {
    pub rate: f64,
    pub lo: f64,
    pub hi: f64,
    /// `rate / sqrt(jumps)`, or `hi` when there were no jumps.
    pub stderr: f64,
}

/// Normal-approximation interval `rate (1 +- z / sqrt(jumps))`. With no jumps
/// the interval is one-sided, `[0, -ln(1 - level) / occupation]`.
pub fn rate_ci(jumps: u64, occupation: f64, level: f64) -> Result<RateCi> {
    if !(occupation > 0.0) {
        return Err(Error::Invalid(format!("occupation time must be positive, got {occupation}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("level must lie in (0, 1), got {level}")));
    }
    if jumps == 0 {
        let hi = -(1.0 - level).ln() / occupation;
        return Ok(RateCi { rate: 0.0, lo: 0.0, hi, stderr: hi });
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0);
    let rate = jumps as f64 / occupation;
    let se = rate / (jumps as f64).sqrt();
    Ok(RateCi { rate, lo: (rate - z * se).max(0.0), hi: rate + z * se, stderr: se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometric(n: i64) -> Pmf<i64> {
        Pmf::from_fn(0..n, |&k| (0.5f64).ln() * (k + 1) as f64)
    }

    #[test]
    fn tv_basics() {
        let a: EmpiricalDist<i64> = [1, 1, 2].into_iter().collect();
        assert_eq!(tv_distance(&a, &a), 0.0);
        let x: EmpiricalDist<i64> = [1].into_iter().collect();
        let y: EmpiricalDist<i64> = [2].into_iter().collect();
        assert_eq!(tv_distance(&x, &y), 1.0);
    }

    #[test]
    fn tv_against_truncation_is_tail() {
        let full = geometric(200);
        let cut = geometric(60);
        let tail = 0.5f64.powi(60);
        assert!(tv_distance(&full, &cut) <= tail / 2.0 + 1e-16);
    }

    #[test]
    fn empirical_point_mass_and_merge() {
        let mut a: EmpiricalDist<i64> = [3].into_iter().collect();
        assert_eq!(a.freq(&3), 1.0);
        let b: EmpiricalDist<i64> = [4, 4].into_iter().collect();
        a.merge(&b);
        assert_eq!(a.n(), 3);
        assert_eq!(a.count(&4), 2);
        let m = a.map(|k| k % 2);
        assert_eq!(m.count(&0), 2);
    }

    #[test]
    fn chi_square_exact_counts() {
        let p = Pmf::from_fn(0..4i64, |_| 0.25f64.ln());
        let mut e = EmpiricalDist::new();
        for k in 0..4 {
            e.add_count(k, 250);
        }
        let r = chi_square_gof(&e, &p, 5.0).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 3);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_needs_two_bins() {
        let p = Pmf::from_fn(0..1i64, |_| 0.0);
        let e: EmpiricalDist<i64> = [0].into_iter().collect();
        assert!(chi_square_gof(&e, &p, 5.0).is_err());
    }

    #[test]
    fn chi_square_calibration_and_power() {
        let p = geometric(60);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draw = |rng: &mut ChaCha8Rng, shift: i64| {
            let mut k = 0;
            while rng.gen::<f64>() >= 0.5 {
                k += 1;
            }
            k + shift
        };
        let mut low = 0;
        for _ in 0..100 {
            let e: EmpiricalDist<i64> = (0..100_000).map(|_| draw(&mut rng, 0)).collect();
            if chi_square_gof(&e, &p, 5.0).unwrap().p_value < 0.05 {
                low += 1;
            }
        }
        assert!((1..=12).contains(&low), "{low}");
        let e: EmpiricalDist<i64> = (0..100_000).map(|_| draw(&mut rng, 1)).collect();
        assert!(chi_square_gof(&e, &p, 5.0).unwrap().p_value < 1e-6);
    }

    #[test]
    fn chi_square_bin_order_invariant() {
        // relabel outcomes by a bijection that scrambles their order
        let p = geometric(20);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e: EmpiricalDist<i64> = (0..5000)
            .map(|_| {
                let mut k = 0;
                while rng.gen::<f64>() >= 0.5 {
                    k += 1;
                }
                k
            })
            .collect();
        let f = |k: &i64| (k * 7) % 23;
        let p2 = Pmf::from_fn(p.iter().map(|(k, _)| f(k)).collect::<Vec<_>>(), |j| {
            let k = (0..23).find(|k| f(k) == *j).unwrap();
            p.ln(&k)
        });
        let a = chi_square_gof(&e, &p, 5.0).unwrap();
        let b = chi_square_gof(&e.map(f), &p2, 5.0).unwrap();
        assert_eq!(a.dof, b.dof);
        assert!((a.statistic - b.statistic).abs() < 1e-9);
    }

    #[test]
    fn rate_ci_examples() {
        let r = rate_ci(0, 2.0, 0.95).unwrap();
        assert_eq!(r.rate, 0.0);
        assert!((r.hi - 3.0 / 2.0).abs() < 0.01);
        let r = rate_ci(10_000, 1000.0, 0.95).unwrap();
        assert_eq!(r.rate, 10.0);
        assert!((r.hi - r.rate - 0.196).abs() < 0.001);
        assert!(rate_ci(1, 0.0, 0.95).is_err());
    }

    #[test]
    fn rate_ci_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (rate, t) = (2.0, 500.0);
        let mut covered = 0;
        for _ in 0..1000 {
            let mut clock = 0.0;
            let mut jumps = 0;
            loop {
                clock += -(1.0 - rng.gen::<f64>()).ln() / rate;
                if clock > t {
                    break;
                }
                jumps += 1;
            }
            let ci = rate_ci(jumps, t, 0.95).unwrap();
            if ci.lo <= rate && rate <= ci.hi {
                covered += 1;
            }
        }
        assert!((920..=980).contains(&covered), "{covered}");
    }

    #[test]
    fn time_weighted_law() {
        let mut t = TimeWeighted::new();
        t.add(1i64, 1.0);
        t.add(2, 3.0);
        let p = t.probabilities();
        assert_eq!(p[&2], 0.75);
        assert_eq!(t.total(), 4.0);
    }
}
