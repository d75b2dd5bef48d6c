//! Closed-form laws of the Mallows product measure and two independent oracles.
//!
//! Every evaluator returns a [`LogProb`]. Half-integer powers of `q` are kept as
//! doubled integers until the final multiplication by `ln q`, and `q = 0` is
//! handled by taking the leading-order limit of each closed form.
//!
//! The oracles do not use the product formulas:
//!
//! * [`oracle_mixture_pmf`] sums the ergodic displacement laws against the
//!   Jacobi weights.
//! * [`oracle_marginalized_pmf`] sums the joint law of a consecutive block over
//!   the values at the positions that were not specified.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logmath::{inversions, ln_one_minus_exp, ln_one_minus_qpow, LogSum, QRatio};
use crate::qseries::{ln_qpoch_inf, JacobiNormalizer, QParam, QPochTable, TruncationPolicy};

/// A probability stored as its natural logarithm.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogProb(pub f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    fn indicator(b: bool) -> LogProb {
        if b {
            LogProb::ONE
        } else {
            LogProb::ZERO
        }
    }
}

/// The parameters `(q, alpha)` of the measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MallowsParams {
    q: QParam,
    alpha: f64,
}

impl MallowsParams {
    pub fn new(q: f64, alpha: f64) -> Result<MallowsParams> {
        let q = QParam::new(q)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
        }
        Ok(MallowsParams { q, alpha })
    }

    pub fn q(&self) -> QParam {
        self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The same `q` with `alpha` replaced by `1/alpha`.
    pub fn inverse(&self) -> MallowsParams {
        MallowsParams { q: self.q, alpha: 1.0 / self.alpha }
    }

    /// `round(ln(1/alpha) / ln q)`: the displacement where `alpha q^(x-1/2)`
    /// crosses 1, so the mode of the single-point law.
    pub fn center(&self) -> i64 {
        if self.q.is_zero() {
            return 0;
        }
        (-self.alpha.ln() / self.q.ln()).round() as i64
    }

    fn ratio(&self) -> QRatio {
        QRatio::new(self.alpha.ln(), self.q.ln())
    }

    fn ratio_inv(&self) -> QRatio {
        QRatio::new(-self.alpha.ln(), self.q.ln())
    }

    fn ln_one_minus_q(&self) -> f64 {
        (-self.q.value()).ln_1p()
    }

    fn ln_one_minus_qpow(&self, n: i64) -> f64 {
        if self.q.is_zero() {
            0.0
        } else {
            ln_one_minus_qpow(self.q.ln(), n)
        }
    }
}

/// Position/value pairs `(i_1, x_1), ..., (i_k, x_k)` with strictly increasing
/// positions and distinct values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionValuePairs {
    pairs: Vec<(i64, i64)>,
}

impl PositionValuePairs {
    pub fn new(pairs: Vec<(i64, i64)>) -> Result<PositionValuePairs> {
        if pairs.is_empty() {
            return Err(Error::Invalid("at least one pair is needed".into()));
        }
        if pairs.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Ordering("positions must be strictly increasing".into()));
        }
        check_distinct(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
        Ok(PositionValuePairs { pairs })
    }

    pub fn pairs(&self) -> &[(i64, i64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `i_k - i_1`.
    pub fn span(&self) -> i64 {
        self.pairs[self.pairs.len() - 1].0 - self.pairs[0].0
    }
}

/// Displacements `d_j = x_j - (i + j)` of values at the consecutive positions
/// `i+1, ..., i+k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplacementVector {
    pub base: i64,
    pub d: Vec<i64>,
}

impl DisplacementVector {
    pub fn from_values(base: i64, values: &[i64]) -> DisplacementVector {
        let d = values.iter().enumerate().map(|(j, &x)| x - (base + j as i64 + 1)).collect();
        DisplacementVector { base, d }
    }
}

/// Result of an oracle together with a bound on the mass it left out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub log_prob: LogProb,
    pub tail_bound: f64,
}

/// Which of two candidate parametrizations a formula is evaluated in.
///
/// `Oracle` is the variant that agrees with the marginalization oracle and the
/// flux computation; `Literal` keeps `alpha` (and for the multi-class law the
/// inversion count of the word) exactly as in the formula's usual statement.
/// The two coincide at `alpha = 1` for the d-second-class law and the rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    #[default]
    Oracle,
    Literal,
}

fn check_distinct(values: &[i64]) -> Result<()> {
    let mut v = values.to_vec();
    v.sort_unstable();
    for w in v.windows(2) {
        if w[0] == w[1] {
            return Err(Error::DuplicateValue(w[0]));
        }
    }
    Ok(())
}

/// `P(omega(i) = x)`, i.e. the law of the displacement `x - i`:
/// `(1-q) alpha q^(d-1/2) / ((1 + alpha q^(d-1/2)) (1 + alpha q^(d+1/2)))`.
pub fn pmf_single(p: &MallowsParams, i: i64, x: i64) -> LogProb {
    let d = x - i;
    let mut r = p.ratio();
    r.times_const(p.ln_one_minus_q() + p.alpha.ln())
        .times_qpow2(2 * d - 1)
        .over_one_plus(2 * d - 1)
        .over_one_plus(2 * d + 1);
    LogProb(r.ln())
}

/// `P(omega(i+1) = x_1, ..., omega(i+k) = x_k)` for distinct values in any
/// order: the sorted closed form times `q^inv(x)`.
pub fn pmf_neighbors(p: &MallowsParams, i: i64, values: &[i64]) -> Result<LogProb> {
    if values.is_empty() {
        return Err(Error::Invalid("at least one value is needed".into()));
    }
    check_distinct(values)?;
    let inv = inversions(values) as i64;
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let k = sorted.len() as i64;
    let dv = DisplacementVector::from_values(i, &sorted);
    let sum_d: i64 = dv.d.iter().sum();
    let mut r = p.ratio();
    r.times_const(k as f64 * (p.ln_one_minus_q() + p.alpha.ln()))
        .times_qpow2(2 * sum_d - k * k + 2 * inv);
    for (idx, &d) in dv.d.iter().enumerate() {
        let j = idx as i64 + 1;
        let e = 2 * (d + 2 * j - k);
        r.over_one_plus(e - 3).over_one_plus(e - 1);
    }
    Ok(LogProb(r.ln()))
}

/// Joint law at arbitrary increasing positions with strictly decreasing
/// values: the product of the single-point laws.
pub fn pmf_decreasing(p: &MallowsParams, pv: &PositionValuePairs) -> Result<LogProb> {
    if pv.pairs.windows(2).any(|w| w[0].1 <= w[1].1) {
        return Err(Error::Ordering("values must be strictly decreasing".into()));
    }
    Ok(LogProb(pv.pairs.iter().map(|&(i, x)| pmf_single(p, i, x).0).sum()))
}

/// `P(omega(i_1) <= x_1, ..., omega(i_k) <= x_k)` for strictly increasing
/// positions and weakly decreasing thresholds.
pub fn cdf_product(p: &MallowsParams, pairs: &[(i64, i64)]) -> Result<LogProb> {
    if pairs.is_empty() {
        return Err(Error::Invalid("at least one pair is needed".into()));
    }
    if pairs.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Ordering("positions must be strictly increasing".into()));
    }
    if pairs.windows(2).any(|w| w[0].1 < w[1].1) {
        return Err(Error::Ordering("thresholds must be weakly decreasing".into()));
    }
    let mut r = p.ratio();
    for &(i, x) in pairs {
        r.over_one_plus(2 * (x - i) + 1);
    }
    Ok(LogProb(r.ln()))
}

/// `P(omega(i+1) = x1, omega(i+k) = xk)` for `x1 > xk`.
pub fn pmf_two_separated(p: &MallowsParams, i: i64, k: i64, x1: i64, xk: i64) -> Result<LogProb> {
    if k < 2 {
        return Err(Error::Invalid(format!("k must be at least 2, got {k}")));
    }
    if x1 <= xk {
        return Err(Error::Ordering(format!("need x1 > xk, got {x1} <= {xk}")));
    }
    Ok(LogProb(pmf_single(p, i + 1, x1).0 + pmf_single(p, i + k, xk).0))
}

/// `P(omega(0) = x1, omega(2) = x3)` for `x1 < x3`, which is a sum of two
/// product terms rather than a single product.
pub fn pmf_gap_one_increasing(p: &MallowsParams, x1: i64, x3: i64) -> Result<LogProb> {
    if x1 >= x3 {
        return Err(Error::Ordering(format!("need x1 < x3, got {x1} >= {x3}")));
    }
    if p.q.is_zero() {
        return Ok(LogProb::indicator(x1 == 0 && x3 == 2));
    }
    let q = p.q.value();
    // common factor C / (P(x1-5/2) P(x1-3/2) P(x3-1/2)) times
    // [1/P(x3-3/2) - (1-q^2) / (P(x1-1/2) P(x3+1/2))]
    let mut common = p.ratio();
    common
        .times_const(2.0 * (p.ln_one_minus_q() + p.alpha.ln()))
        .times_qpow2(2 * (x1 + x3 - 6))
        .over_one_plus(2 * x1 - 5)
        .over_one_plus(2 * x1 - 3)
        .over_one_plus(2 * x3 - 1);
    let mut a = p.ratio();
    a.over_one_plus(2 * x3 - 3);
    let mut b = p.ratio();
    b.times_const((-q * q).ln_1p()).over_one_plus(2 * x1 - 1).over_one_plus(2 * x3 + 1);
    let (la, lb) = (a.ln(), b.ln());
    if lb >= la {
        return Err(Error::Invalid(format!("negative mass at ({x1}, {x3})")));
    }
    Ok(LogProb(common.ln() + la + ln_one_minus_exp(lb - la)))
}

/// Probabilities of a particle and of a hole at site `i` under the blocking
/// measure obtained by thresholding values at 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockingProb {
    /// `P(omega(i) > 0) = 1 / (1 + alpha^-1 q^(i-1/2))`.
    pub particle: LogProb,
    /// `P(omega(i) <= 0)`.
    pub hole: LogProb,
}

pub fn blocking_prob(p: &MallowsParams, i: i64) -> BlockingProb {
    let mut a = p.ratio_inv();
    a.over_one_plus(2 * i - 1);
    let mut b = p.ratio();
    b.over_one_plus(1 - 2 * i);
    let out = BlockingProb { particle: LogProb(a.ln()), hole: LogProb(b.ln()) };
    debug_assert!((out.particle.prob() + out.hole.prob() - 1.0).abs() < 1e-12);
    out
}

/// Law of the positions `x_1 < ... < x_d` of `d` second-class particles, i.e.
/// of the positions carrying the values `1, ..., d`.
pub fn pmf_dsecond(p: &MallowsParams, positions: &[i64], conv: Convention) -> Result<LogProb> {
    if positions.is_empty() {
        return Err(Error::Invalid("at least one position is needed".into()));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Ordering("positions must be strictly increasing".into()));
    }
    let d = positions.len() as i64;
    let (mut r, ln_a) = match conv {
        Convention::Oracle => (p.ratio_inv(), -p.alpha.ln()),
        Convention::Literal => (p.ratio(), p.alpha.ln()),
    };
    let ln_poch: f64 = (1..=d).map(|i| p.ln_one_minus_qpow(i)).sum();
    let sum: i64 = positions.iter().sum();
    r.times_const(d as f64 * ln_a + ln_poch).times_qpow2(2 * sum - d * (2 * d + 1));
    for (idx, &x) in positions.iter().enumerate() {
        let e = 2 * (x + idx as i64 + 1 - d);
        r.over_one_plus(e - 3).over_one_plus(e - 1);
    }
    Ok(LogProb(r.ln()))
}

/// Law of the positions of one particle of each class `2, ..., d+1`: the
/// particle of class `j+1` sits at `x_j`, so `omega(x_1) = d`, ...,
/// `omega(x_d) = 1`.
pub fn pmf_multiclass(p: &MallowsParams, positions: &[i64], conv: Convention) -> Result<LogProb> {
    if positions.is_empty() {
        return Err(Error::Invalid("at least one position is needed".into()));
    }
    check_distinct(positions)?;
    let d = positions.len() as i64;
    let inv = inversions(positions) as i64;
    let (mut r, ln_a, qexp) = match conv {
        Convention::Oracle => (p.ratio_inv(), -p.alpha.ln(), d * (d - 1) / 2 - inv),
        Convention::Literal => (p.ratio(), p.alpha.ln(), inv),
    };
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    let sum: i64 = positions.iter().sum();
    r.times_const(d as f64 * (p.ln_one_minus_q() + ln_a))
        .times_qpow2(2 * sum - d * (2 * d + 1) + 2 * qexp);
    for (idx, &y) in sorted.iter().enumerate() {
        let e = 2 * (y + idx as i64 + 1 - d);
        r.over_one_plus(e - 3).over_one_plus(e - 1);
    }
    Ok(LogProb(r.ln()))
}

/// Jump rate of a single second-class particle from `x` to `x + direction`
/// when the system starts from the stationary measure.
///
/// With `Convention::Oracle` the stationary law of the particle is
/// `pmf_single(p, x, 0)` and the rates satisfy detailed balance with it. With
/// `Convention::Literal` the reversing law is `pmf_single(p, 0, x)`.
pub fn second_class_rate(p: &MallowsParams, x: i64, direction: i8, conv: Convention) -> Result<f64> {
    let mut r = p.ratio();
    match (conv, direction) {
        (Convention::Oracle, 1) => r.times_one_plus(-2 * x - 1).over_one_plus(-2 * x - 3),
        (Convention::Oracle, -1) => r.times_qpow2(2).times_one_plus(1 - 2 * x).over_one_plus(3 - 2 * x),
        (Convention::Literal, 1) => r
            .times_qpow2(-4 * x)
            .times_one_plus(2 * x - 1)
            .times_one_plus(2 * x + 1)
            .over_one_plus(1 - 2 * x)
            .over_one_plus(-2 * x - 3),
        (Convention::Literal, -1) => r
            .times_qpow2(2 - 4 * x)
            .times_one_plus(2 * x - 1)
            .times_one_plus(2 * x + 1)
            .over_one_plus(-2 * x - 1)
            .over_one_plus(3 - 2 * x),
        _ => return Err(Error::Invalid(format!("direction must be +1 or -1, got {direction}"))),
    };
    Ok(r.ln().exp())
}

/// Stationary law of the second-class particle's position under the given
/// convention (the measure its rates are reversible for).
pub fn second_class_position_pmf(p: &MallowsParams, x: i64, conv: Convention) -> LogProb {
    match conv {
        Convention::Oracle => pmf_single(p, x, 0),
        Convention::Literal => pmf_single(p, 0, x),
    }
}

/// `P(D in {xM+1, ..., xM+M})` for the displacement `D` of a single point,
/// the site law of the second-class particle in the fused model with site
/// capacity `M`:
/// `(1-q^M) alpha q^(xM+1/2) / ((1 + alpha q^((x+1)M+1/2)) (1 + alpha q^(xM+1/2)))`.
pub fn pmf_asepqm(p: &MallowsParams, m: u32, x: i64) -> Result<LogProb> {
    if m == 0 {
        return Err(Error::Parameter("M must be at least 1".into()));
    }
    let m = m as i64;
    let mut r = p.ratio();
    r.times_const(p.ln_one_minus_qpow(m) + p.alpha.ln())
        .times_qpow2(2 * x * m + 1)
        .over_one_plus(2 * (x + 1) * m + 1)
        .over_one_plus(2 * x * m + 1);
    Ok(LogProb(r.ln()))
}

/// The same probability as a sum of `M` single-point terms.
pub fn asepqm_block_sum(p: &MallowsParams, m: u32, x: i64) -> Result<LogProb> {
    if m == 0 {
        return Err(Error::Parameter("M must be at least 1".into()));
    }
    let m = m as i64;
    let mut s = LogSum::new();
    for i in 1..=m {
        s.add(pmf_single(p, 0, x * m + i).0);
    }
    Ok(LogProb(s.ln()))
}

/// Law of the displacement `omega(0) - 0` under the ergodic measure with
/// balance `c`. It depends on `d - c` only.
pub fn go_pmf_displacement(q: QParam, c: i64, d: i64, policy: &TruncationPolicy) -> Result<LogProb> {
    policy.validate()?;
    if q.is_zero() {
        return Ok(LogProb::indicator(d == c));
    }
    let lnq = q.ln();
    let m = d - c;
    let mut t = QPochTable::new(q, 64);
    let term = |l: i64, t: &mut QPochTable| {
        let r = l + m;
        (r * l + r + l) as f64 * lnq - t.get(r as usize) - t.get(l as usize)
    };
    let mut sum = LogSum::new();
    let mut l = 0.max(-m);
    let mut cur = term(l, &mut t);
    for _ in 0..policy.max_terms {
        sum.add(cur);
        let next = term(l + 1, &mut t);
        let ln_rho = next - cur;
        if ln_rho < 0.0 && next - ln_one_minus_exp(ln_rho) < sum.ln() + policy.tol.ln() {
            let pref = (-q.value()).ln_1p() + ln_qpoch_inf(q, policy)?;
            return Ok(LogProb(pref + sum.ln()));
        }
        l += 1;
        cur = next;
    }
    Err(Error::Truncation { terms: policy.max_terms, tail: cur.exp() })
}

/// Joint law of the displacements `d_1 <= ... <= d_k` at consecutive positions
/// under the ergodic measure with balance `c`.
pub fn go_pmf_joint(q: QParam, c: i64, d: &[i64], policy: &TruncationPolicy) -> Result<LogProb> {
    policy.validate()?;
    if d.is_empty() {
        return Err(Error::Invalid("at least one displacement is needed".into()));
    }
    if d.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Ordering("displacements must be weakly increasing".into()));
    }
    if q.is_zero() {
        return Ok(LogProb::indicator(d.iter().all(|&x| x == c)));
    }
    let lnq = q.ln();
    let k = d.len();
    let gaps: Vec<i64> = d.windows(2).map(|w| w[1] - w[0]).collect();
    let mut t = QPochTable::new(q, 64);
    let mut pref = k as f64 * (-q.value()).ln_1p() - (k * (k + 1) / 2) as f64 * lnq + ln_qpoch_inf(q, policy)?;
    for &g in &gaps {
        pref += t.get(g as usize);
    }

    let mut a = vec![0i64; k];
    let mut b = vec![0i64; k];
    let mut total = LogSum::new();
    let ln_term = |a: &[i64], b: &[i64], t: &mut QPochTable| {
        let mut e = 0i64;
        let mut lden = 0.0;
        for i in 0..k {
            for j in i..k {
                e += (b[i] + 1) * (a[j] + 1);
            }
            lden += t.get(b[i] as usize) + t.get(a[i] as usize);
        }
        e as f64 * lnq - lden
    };
    loop {
        // a_1..a_{k-1} fixed by the odometer, b_2..b_k determined
        let fixed: i64 = a[..k - 1].iter().sum();
        for m in 0..k - 1 {
            b[m + 1] = gaps[m] - a[m];
        }
        let start = 0.max(c - d[0] - fixed);
        let mut inner = LogSum::new();
        let mut n = start;
        let mut steps = 0usize;
        loop {
            a[k - 1] = n;
            b[0] = d[0] - c + fixed + n;
            let cur = ln_term(&a, &b, &mut t);
            inner.add(cur);
            a[k - 1] = n + 1;
            b[0] += 1;
            let next = ln_term(&a, &b, &mut t);
            let ln_rho = next - cur;
            if ln_rho < 0.0 && next - ln_one_minus_exp(ln_rho) < inner.ln() + policy.tol.ln() {
                break;
            }
            n += 1;
            steps += 1;
            if steps >= policy.max_terms {
                return Err(Error::Truncation { terms: steps, tail: next.exp() });
            }
        }
        total.add(inner.ln());
        // advance the odometer over 0 <= a_m <= gaps[m]
        let mut m = 0;
        while m < k - 1 {
            if a[m] < gaps[m] {
                a[m] += 1;
                break;
            }
            a[m] = 0;
            m += 1;
        }
        if m == k - 1 {
            break;
        }
    }
    Ok(LogProb(pref + total.ln()))
}

/// `sum_c w_c P_c(omega(i+1) = y_1, ..., omega(i+k) = y_k)` for strictly
/// increasing values, over `|c| <= c_max` (chosen from `policy.tol` when
/// `None`).
pub fn oracle_mixture_pmf(
    p: &MallowsParams,
    i: i64,
    values: &[i64],
    c_max: Option<i64>,
    policy: &TruncationPolicy,
) -> Result<OracleValue> {
    policy.validate()?;
    if values.is_empty() {
        return Err(Error::Invalid("at least one value is needed".into()));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Ordering("values must be strictly increasing".into()));
    }
    let dv = DisplacementVector::from_values(i, values);
    let z = JacobiNormalizer::new(p.q, p.alpha, policy)?;
    let c_max = c_max.unwrap_or_else(|| z.cutoff(policy.tol));
    let tail = z.tail_beyond(c_max);
    if tail > policy.tol {
        return Err(Error::TailBound { tail, tol: policy.tol });
    }
    let mut s = LogSum::new();
    for c in -c_max..=c_max {
        let w = z.ln_weight(c);
        if w == f64::NEG_INFINITY {
            continue;
        }
        s.add(w + go_pmf_joint(p.q, c, &dv.d, policy)?.0);
    }
    Ok(OracleValue { log_prob: LogProb(s.ln()), tail_bound: tail })
}

/// Largest block `i_k - i_1 + 1` accepted by [`oracle_marginalized_pmf`].
pub const MAX_MARGINAL_BLOCK: i64 = 9;

/// Single-point law in the linear domain, indexed by the exponent `e` with
/// `t = alpha q^(e-1/2)`.
struct LinearSingle {
    q: f64,
    ln_alpha: f64,
    lnq: f64,
}

impl LinearSingle {
    fn f(&self, e: i64) -> f64 {
        let t = (self.ln_alpha + (e as f64 - 0.5) * self.lnq).exp();
        if t > 1.0 {
            let u = 1.0 / t;
            (1.0 - self.q) * u / ((1.0 + u) * (u + self.q))
        } else {
            (1.0 - self.q) * t / ((1.0 + t) * (1.0 + self.q * t))
        }
    }
}

/// `sum` over the values at the positions between `i_1` and `i_k` that are
/// not in `pv` of the joint law of the whole consecutive block.
///
/// The free values range over a window chosen so that the probability of any
/// of them falling outside is below `policy.tol`; that probability is
/// reported as the tail bound.
pub fn oracle_marginalized_pmf(p: &MallowsParams, pv: &PositionValuePairs, policy: &TruncationPolicy) -> Result<OracleValue> {
    policy.validate()?;
    let kk = pv.span() + 1;
    if kk > MAX_MARGINAL_BLOCK {
        return Err(Error::TooLarge(format!("block of {kk} positions exceeds {MAX_MARGINAL_BLOCK}")));
    }
    if p.q.is_zero() {
        let ok = pv.pairs.iter().all(|&(i, x)| i == x);
        return Ok(OracleValue { log_prob: LogProb::indicator(ok), tail_bound: 0.0 });
    }
    let s = pv.pairs[0].0 - 1;
    let k = pv.len();
    let n_free = kk as usize - k;
    let lnq = p.q.ln();
    let single = LinearSingle { q: p.q.value(), ln_alpha: p.alpha.ln(), lnq };

    // relative position -> fixed value
    let mut fixed_at = vec![None; kk as usize];
    for &(i, x) in &pv.pairs {
        fixed_at[(i - s - 1) as usize] = Some(x);
    }
    let free_pos: Vec<i64> = (0..kk).filter(|&r| fixed_at[r as usize].is_none()).map(|r| s + 1 + r).collect();

    // value window [lo, hi] for the free coordinates
    let c0 = p.center();
    let mut lo = pv.pairs.iter().map(|x| x.1).min().unwrap().min(s + 1 + c0);
    let mut hi = pv.pairs.iter().map(|x| x.1).max().unwrap().max(s + kk + c0);
    let below = |lo: i64| -> f64 {
        free_pos.iter().map(|&a| cdf_product(p, &[(a, lo - 1)]).unwrap().prob()).sum()
    };
    // P(omega(a) > hi) = alpha q^(hi-a+1/2) / (1 + alpha q^(hi-a+1/2))
    let above = |hi: i64| -> f64 {
        free_pos
            .iter()
            .map(|&a| {
                let mut r = p.ratio();
                r.times_const(p.alpha.ln()).times_qpow2(2 * (hi - a) + 1).over_one_plus(2 * (hi - a) + 1);
                r.ln().exp()
            })
            .sum()
    };
    let limit = 1_000_000;
    while below(lo) > policy.tol / 4.0 {
        lo -= 1;
        if hi - lo > limit {
            return Err(Error::TooLarge("value window".into()));
        }
    }
    while above(hi) > policy.tol / 4.0 {
        hi += 1;
        if hi - lo > limit {
            return Err(Error::TooLarge("value window".into()));
        }
    }
    let tail = below(lo) + above(hi);

    let mut fixed_sorted: Vec<i64> = pv.pairs.iter().map(|x| x.1).collect();
    fixed_sorted.sort_unstable();
    let big_k = kk;
    let shift = |rank: i64| -s + rank - big_k - 1;

    // sum over g increasing values in the open interval (glo, ghi) clipped to
    // [lo, hi] whose ranks are start+1, ..., start+g
    let mut gap_cache: HashMap<(usize, i64, usize), f64> = HashMap::new();
    let mut gap_sum = |m: usize, start: i64, g: usize| -> f64 {
        if g == 0 {
            return 1.0;
        }
        *gap_cache.entry((m, start, g)).or_insert_with(|| {
            let a = if m == 0 { lo } else { (fixed_sorted[m - 1] + 1).max(lo) };
            let b = if m == k { hi } else { (fixed_sorted[m] - 1).min(hi) };
            if b - a + 1 < g as i64 {
                return 0.0;
            }
            let n = (b - a + 1) as usize;
            let mut cur: Vec<f64> = (0..n).map(|y| single.f(a + y as i64 + shift(start + 1))).collect();
            for t in 2..=g {
                let mut acc = 0.0;
                let mut next = vec![0.0; n];
                for y in 0..n {
                    next[y] = acc * single.f(a + y as i64 + shift(start + t as i64));
                    acc += cur[y];
                }
                cur = next;
            }
            cur.iter().sum()
        })
    };

    let mut total = 0.0;
    let mut g = vec![0usize; k + 1];
    // enumerate compositions of n_free into k+1 parts
    loop {
        if g.iter().sum::<usize>() == n_free {
            let mut rank_of = HashMap::new();
            let mut acc = 0i64;
            let mut gaps_prod = 1.0;
            for m in 0..=k {
                gaps_prod *= gap_sum(m, acc, g[m]);
                acc += g[m] as i64;
                if m < k {
                    acc += 1;
                    rank_of.insert(fixed_sorted[m], acc);
                }
            }
            if gaps_prod > 0.0 {
                let mut fixed_prod = 1.0;
                for &x in &fixed_sorted {
                    fixed_prod *= single.f(x + shift(rank_of[&x]));
                }
                let word: Vec<Option<i64>> = fixed_at.iter().map(|v| v.map(|x| rank_of[&x])).collect();
                let arr = arrangement_sum(&word, big_k, p.q.value());
                total += arr * fixed_prod * gaps_prod;
            }
        }
        let mut m = 0;
        while m <= k {
            if g[m] < n_free {
                g[m] += 1;
                break;
            }
            g[m] = 0;
            m += 1;
        }
        if m > k {
            break;
        }
    }
    Ok(OracleValue { log_prob: LogProb(total.ln()), tail_bound: tail })
}

/// `sum q^(inv(w) - K(K-1)/2)` over all words of ranks `1..=K` that agree
/// with `word` at its fixed entries.
fn arrangement_sum(word: &[Option<i64>], big_k: i64, q: f64) -> f64 {
    let used: Vec<i64> = word.iter().flatten().copied().collect();
    let mut free: Vec<i64> = (1..=big_k).filter(|r| !used.contains(r)).collect();
    let holes: Vec<usize> = (0..word.len()).filter(|&i| word[i].is_none()).collect();
    let mut w: Vec<i64> = word.iter().map(|v| v.unwrap_or(0)).collect();
    let top = big_k * (big_k - 1) / 2;
    let mut total = 0.0;
    permute(&mut free, 0, &mut |perm| {
        for (h, &r) in holes.iter().zip(perm) {
            w[*h] = r;
        }
        total += q.powi((inversions(&w) as i64 - top) as i32);
    });
    total
}

fn permute(v: &mut Vec<i64>, at: usize, visit: &mut impl FnMut(&[i64])) {
    if at == v.len() {
        visit(v);
        return;
    }
    for i in at..v.len() {
        v.swap(at, i);
        permute(v, at + 1, visit);
        v.swap(at, i);
    }
}

/// One row of [`asymptotic_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub y: f64,
    /// `pmf_single(0, floor(y/eps)) / eps`.
    pub scaled_pmf: f64,
    /// `alpha e^-y / (1 + alpha e^-y)^2`.
    pub logistic: f64,
    /// `cdf_product` at `k` consecutive positions with scaled thresholds
    /// `y, y-1, ..., y-k+1`.
    pub scaled_cdf: f64,
    pub cdf_reference: f64,
    /// Second-class rates at `floor(y/eps)` for both conventions.
    pub rate_oracle: f64,
    pub rate_literal: f64,
    /// Limits of the two rate families.
    pub rate_oracle_reference: f64,
    pub rate_literal_reference: f64,
}

/// Compares the laws at `q = e^-eps` with their limits under the scaling
/// `x = floor(y / eps)`.
pub fn asymptotic_check(epsilon: f64, alpha: f64, ys: &[f64], k: usize) -> Result<Vec<AsymptoticRow>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if k == 0 {
        return Err(Error::Parameter("k must be positive".into()));
    }
    let p = MallowsParams::new((-epsilon).exp(), alpha)?;
    let scale = |y: f64| (y / epsilon).floor() as i64;
    let mut rows = Vec::with_capacity(ys.len());
    for &y in ys {
        let x = scale(y);
        let ey = (-y).exp();
        let mut pairs = Vec::with_capacity(k);
        let mut cdf_ref = 1.0;
        for j in 0..k {
            let yj = y - j as f64;
            pairs.push((j as i64, j as i64 + scale(yj)));
            cdf_ref /= 1.0 + alpha * (-yj).exp();
        }
        rows.push(AsymptoticRow {
            y,
            scaled_pmf: pmf_single(&p, 0, x).prob() / epsilon,
            logistic: alpha * ey / ((1.0 + alpha * ey) * (1.0 + alpha * ey)),
            scaled_cdf: cdf_product(&p, &pairs)?.prob(),
            cdf_reference: cdf_ref,
            rate_oracle: second_class_rate(&p, x, 1, Convention::Oracle)?,
            rate_literal: second_class_rate(&p, x, 1, Convention::Literal)?,
            rate_oracle_reference: 1.0,
            rate_literal_reference: (2.0 * y).exp() * (1.0 + alpha * ey).powi(2) / (1.0 + alpha * y.exp()).powi(2),
        });
    }
    Ok(rows)
}
