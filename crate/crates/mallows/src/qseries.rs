//! q-Pochhammer symbols, truncated infinite products, the Jacobi mixture
//! weights and numeric checkers for the q-series identities behind the closed
//! forms.
//!
//! Everything is evaluated in the log domain and exponentiated once at the end.
//! Truncation is governed by an explicit [`TruncationPolicy`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hp::Hp;
use crate::logmath::{ln_one_minus_qpow, softplus, LogSum};

/// The deformation parameter `q` in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QParam(f64);

impl QParam {
    pub fn new(q: f64) -> Result<QParam> {
        if !(0.0..1.0).contains(&q) || q.is_nan() {
            return Err(Error::Parameter(format!("q must lie in [0, 1), got {q}")));
        }
        Ok(QParam(q))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `ln q`, which is `-inf` at `q = 0`.
    pub fn ln(self) -> f64 {
        self.0.ln()
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

/// How far infinite products and series are carried.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub tol: f64,
    pub max_terms: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy { tol: 1e-14, max_terms: 1_000_000 }
    }
}

impl TruncationPolicy {
    pub fn with_tol(tol: f64) -> Result<TruncationPolicy> {
        let p = TruncationPolicy { tol, ..TruncationPolicy::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Parameter(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_terms == 0 {
            return Err(Error::Parameter("max_terms must be positive".into()));
        }
        Ok(())
    }
}

/// `(q;q)_n = prod_{k=1..n} (1 - q^k)`.
pub fn finite_qpoch(q: QParam, n: u64) -> f64 {
    ln_finite_qpoch(q, n).exp()
}

/// `ln (q;q)_n`, accumulated term by term so that the value for `n + 1` is the
/// value for `n` plus `ln(1 - q^(n+1))` bit for bit.
pub fn ln_finite_qpoch(q: QParam, n: u64) -> f64 {
    if q.is_zero() {
        return 0.0;
    }
    let lnq = q.ln();
    let mut acc = 0.0;
    for k in 1..=n {
        acc += ln_one_minus_qpow(lnq, k as i64);
    }
    acc
}

/// Table of `ln (q;q)_n` for `n = 0..=max`.
#[derive(Clone, Debug)]
pub struct QPochTable {
    ln: Vec<f64>,
    lnq: f64,
}

impl QPochTable {
    pub fn new(q: QParam, max: usize) -> QPochTable {
        let mut t = QPochTable { ln: vec![0.0], lnq: q.ln() };
        t.extend_to(max);
        t
    }

    fn extend_to(&mut self, n: usize) {
        while self.ln.len() <= n {
            let k = self.ln.len();
            let last = *self.ln.last().unwrap();
            let next = if self.lnq == f64::NEG_INFINITY {
                0.0
            } else {
                last + ln_one_minus_qpow(self.lnq, k as i64)
            };
            self.ln.push(next);
        }
    }

    /// `ln (q;q)_n`, growing the table if needed.
    pub fn get(&mut self, n: usize) -> f64 {
        self.extend_to(n);
        self.ln[n]
    }
}

/// A truncated infinite product together with the number of factors kept.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailProduct {
    pub ln: f64,
    pub terms: usize,
}

impl TailProduct {
    pub fn value(&self) -> f64 {
        self.ln.exp()
    }
}

/// `prod_{k>=0} (1 + alpha q^(k + offset))`, truncated once the bound
/// `alpha q^(k + offset) / (1 - q)` on the remaining log-mass drops below tol.
pub fn tail_product(alpha: f64, q: QParam, offset: f64, policy: &TruncationPolicy) -> Result<TailProduct> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    if q.is_zero() {
        return if offset > 0.0 {
            Ok(TailProduct { ln: 0.0, terms: 0 })
        } else if offset == 0.0 {
            Ok(TailProduct { ln: alpha.ln_1p(), terms: 1 })
        } else {
            Err(Error::Parameter("negative offset at q = 0 gives an infinite factor".into()))
        };
    }
    let lnq = q.ln();
    let ln_alpha = alpha.ln();
    let ln_tol = policy.tol.ln();
    let ln_one_minus_q = (-q.value()).ln_1p();
    let mut acc = 0.0;
    for k in 0..policy.max_terms {
        let t = ln_alpha + (k as f64 + offset) * lnq;
        if t - ln_one_minus_q < ln_tol {
            return Ok(TailProduct { ln: acc, terms: k });
        }
        acc += softplus(t);
    }
    let t = ln_alpha + (policy.max_terms as f64 + offset) * lnq;
    Err(Error::Truncation { terms: policy.max_terms, tail: (t - ln_one_minus_q).exp() })
}

/// `ln (q;q)_inf`.
pub fn ln_qpoch_inf(q: QParam, policy: &TruncationPolicy) -> Result<f64> {
    if q.is_zero() {
        return Ok(0.0);
    }
    let lnq = q.ln();
    let ln_tol = policy.tol.ln();
    let ln_one_minus_q = (-q.value()).ln_1p();
    let mut acc = 0.0;
    for k in 1..policy.max_terms {
        let t = k as f64 * lnq;
        // sum_{j>=k} -ln(1 - q^j) <= q^k / ((1 - q)(1 - q^k))
        if t - ln_one_minus_q - crate::logmath::ln_one_minus_exp(t) < ln_tol {
            return Ok(acc);
        }
        acc += ln_one_minus_qpow(lnq, k as i64);
    }
    Err(Error::Truncation { terms: policy.max_terms, tail: (policy.max_terms as f64 * lnq).exp() })
}

/// The normalizer of the Jacobi mixture,
/// `(q;q)_inf prod (1 + alpha q^(k+1/2)) prod (1 + alpha^-1 q^(k+1/2))`.
#[derive(Clone, Copy, Debug)]
pub struct JacobiNormalizer {
    pub ln_z: f64,
    q: QParam,
    alpha: f64,
}

impl JacobiNormalizer {
    pub fn new(q: QParam, alpha: f64, policy: &TruncationPolicy) -> Result<JacobiNormalizer> {
        let a = tail_product(alpha, q, 0.5, policy)?;
        let b = tail_product(1.0 / alpha, q, 0.5, policy)?;
        let c = ln_qpoch_inf(q, policy)?;
        Ok(JacobiNormalizer { ln_z: a.ln + b.ln + c, q, alpha })
    }

    /// `ln w_c`.
    pub fn ln_weight(&self, c: i64) -> f64 {
        if self.q.is_zero() {
            return if c == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let cf = c as f64;
        cf * self.alpha.ln() + 0.5 * cf * cf * self.q.ln() - self.ln_z
    }

    /// Upper bound on `sum_{|c| > radius} w_c`.
    pub fn tail_beyond(&self, radius: i64) -> f64 {
        if self.q.is_zero() {
            return 0.0;
        }
        let lnq = self.q.ln();
        let la = self.alpha.ln();
        let r = radius as f64 + 1.5;
        // w_{c+1}/w_c = alpha q^(c+1/2) and w_{c-1}/w_c = alpha^-1 q^(-c+1/2)
        let up = la + r * lnq;
        let down = -la + r * lnq;
        if up >= 0.0 || down >= 0.0 {
            return f64::INFINITY;
        }
        let hi = self.ln_weight(radius + 1) - crate::logmath::ln_one_minus_exp(up);
        let lo = self.ln_weight(-radius - 1) - crate::logmath::ln_one_minus_exp(down);
        hi.exp() + lo.exp()
    }

    /// Smallest radius `C` with `tail_beyond(C) < tol`.
    pub fn cutoff(&self, tol: f64) -> i64 {
        let mut c = 0;
        while self.tail_beyond(c) >= tol {
            c += 1;
        }
        c
    }
}

/// The mixture weight `w_c = alpha^c q^(c^2/2) / Z`.
pub fn mixture_weight(c: i64, q: QParam, alpha: f64, policy: &TruncationPolicy) -> Result<f64> {
    Ok(JacobiNormalizer::new(q, alpha, policy)?.ln_weight(c).exp())
}

/// `ln w_c`.
pub fn ln_mixture_weight(c: i64, q: QParam, alpha: f64, policy: &TruncationPolicy) -> Result<f64> {
    Ok(JacobiNormalizer::new(q, alpha, policy)?.ln_weight(c))
}

/// Names of the identities that [`verify_identity`] can check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Identity {
    Euler,
    QBinomial,
    Jacobi,
    LemmaA1,
    LemmaA2,
    LemmaA3,
}

impl Identity {
    pub const ALL: [Identity; 6] = [
        Identity::Euler,
        Identity::QBinomial,
        Identity::Jacobi,
        Identity::LemmaA1,
        Identity::LemmaA2,
        Identity::LemmaA3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Identity::Euler => "euler",
            Identity::QBinomial => "qbinomial",
            Identity::Jacobi => "jacobi",
            Identity::LemmaA1 => "lemmaA1",
            Identity::LemmaA2 => "lemmaA2",
            Identity::LemmaA3 => "lemmaA3",
        }
    }

    pub fn parse(s: &str) -> Result<Identity> {
        Identity::ALL
            .into_iter()
            .find(|i| i.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown identity {s:?}")))
    }
}

/// The free variables of one identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum IdentityInput {
    /// `sum_n q^(n(n-1)/2) z^n / (q;q)_n = prod_n (1 + q^n z)`.
    Euler { q: f64, z: f64 },
    /// `sum_k [n k]_q q^(k(k-1)/2) x^k = prod_{m<n} (1 + q^m x)`.
    QBinomial { q: f64, n: u32, x: f64 },
    /// `sum_c w_c = 1`.
    Jacobi { q: f64, alpha: f64 },
    /// The infinite-product form of the single-point law equals its rational form.
    LemmaA1 { q: f64, alpha: f64, x: i64 },
    /// The infinite-product form of the neighbor law equals its rational form.
    LemmaA2 { q: f64, alpha: f64, xs: Vec<i64> },
    /// The alternating sum collapses to a single power of `q`.
    LemmaA3 { q: f64, alpha: f64, x1: i64, i: i64, b: u32, k: u32 },
}

impl IdentityInput {
    pub fn identity(&self) -> Identity {
        match self {
            IdentityInput::Euler { .. } => Identity::Euler,
            IdentityInput::QBinomial { .. } => Identity::QBinomial,
            IdentityInput::Jacobi { .. } => Identity::Jacobi,
            IdentityInput::LemmaA1 { .. } => Identity::LemmaA1,
            IdentityInput::LemmaA2 { .. } => Identity::LemmaA2,
            IdentityInput::LemmaA3 { .. } => Identity::LemmaA3,
        }
    }
}

fn positive_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("alpha must be positive, got {alpha}")))
    }
}

fn positive_q(q: QParam) -> Result<()> {
    if q.is_zero() {
        Err(Error::Parameter("this identity needs q > 0".into()))
    } else {
        Ok(())
    }
}

/// Relative error `|LHS - RHS| / |RHS|` of one identity. When the right side
/// vanishes exactly the absolute error is returned instead.
///
/// Sums without sign changes are evaluated in the log domain. Alternating
/// sums are evaluated in multi-precision arithmetic.
pub fn verify_identity(input: &IdentityInput, policy: &TruncationPolicy) -> Result<f64> {
    policy.validate()?;
    match *input {
        IdentityInput::Euler { q, z } => {
            let q = QParam::new(q)?;
            if z >= 0.0 && !q.is_zero() {
                euler_log(q, z, policy)
            } else {
                euler_hp(q, z)
            }
        }
        IdentityInput::QBinomial { q, n, x } => {
            let q = QParam::new(q)?;
            if x >= 0.0 && !q.is_zero() {
                qbinomial_log(q, n, x)
            } else {
                qbinomial_hp(q, n, x)
            }
        }
        IdentityInput::Jacobi { q, alpha } => {
            positive_alpha(alpha)?;
            let q = QParam::new(q)?;
            let z = JacobiNormalizer::new(q, alpha, policy)?;
            let c = z.cutoff(policy.tol);
            let mut s = LogSum::new();
            for k in -c..=c {
                s.add(z.ln_weight(k));
            }
            Ok(s.ln().exp_m1().abs())
        }
        IdentityInput::LemmaA1 { q, alpha, x } => {
            positive_alpha(alpha)?;
            let q = QParam::new(q)?;
            positive_q(q)?;
            lemma_a1(q, alpha, x, policy)
        }
        IdentityInput::LemmaA2 { q, alpha, ref xs } => {
            positive_alpha(alpha)?;
            let q = QParam::new(q)?;
            positive_q(q)?;
            if xs.is_empty() {
                return Err(Error::Invalid("lemmaA2 needs at least one argument".into()));
            }
            if xs.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Ordering("lemmaA2 needs x_1 <= ... <= x_k".into()));
            }
            lemma_a2(q, alpha, xs, policy)
        }
        IdentityInput::LemmaA3 { q, alpha, x1, i, b, k } => {
            positive_alpha(alpha)?;
            let q = QParam::new(q)?;
            positive_q(q)?;
            if !(0 < b && b < k) {
                return Err(Error::Invalid(format!("lemmaA3 needs 0 < b < k, got b={b}, k={k}")));
            }
            Ok(lemma_a3(q, alpha, x1, i, b as i64, k as i64))
        }
    }
}

fn rel_from_logs(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).exp_m1().abs()
}

fn rel_hp(lhs: &Hp, rhs: &Hp) -> f64 {
    let d = lhs.sub(rhs).abs();
    if rhs.is_zero() {
        d.to_f64()
    } else {
        d.div(&rhs.abs()).to_f64()
    }
}

fn euler_log(q: QParam, z: f64, policy: &TruncationPolicy) -> Result<f64> {
    if z == 0.0 {
        return Ok(0.0);
    }
    let lnq = q.ln();
    let lnz = z.ln();
    let mut s = LogSum::new();
    let mut ln_poch = 0.0;
    let mut n = 0u64;
    loop {
        let nf = n as f64;
        let term = 0.5 * nf * (nf - 1.0) * lnq + nf * lnz - ln_poch;
        s.add(term);
        // ratio t_{n+1} / t_n = q^n z / (1 - q^(n+1)), decreasing in n
        let ln_ratio = nf * lnq + lnz - ln_one_minus_qpow(lnq, n as i64 + 1);
        if ln_ratio < -std::f64::consts::LN_2 && term + ln_ratio + std::f64::consts::LN_2 < s.ln() + policy.tol.ln() {
            break;
        }
        n += 1;
        if n as usize >= policy.max_terms {
            return Err(Error::Truncation { terms: n as usize, tail: (term + ln_ratio).exp() });
        }
        ln_poch += ln_one_minus_qpow(lnq, n as i64);
    }
    let rhs = tail_product(z, q, 0.0, policy)?;
    Ok(rel_from_logs(s.ln(), rhs.ln))
}

fn euler_hp(q: QParam, z: f64) -> Result<f64> {
    let qh = Hp::from_f64(q.value());
    let zh = Hp::from_f64(z);
    let eps = Hp::from_f64(1e-45);
    // left side: t_0 = 1, t_{n+1} = t_n q^n z / (1 - q^(n+1))
    let mut lhs = Hp::zero();
    let mut t = Hp::one();
    let mut qn = Hp::one();
    let mut biggest = Hp::one();
    for n in 0..200_000u64 {
        lhs = lhs.add(&t);
        let at = t.abs();
        if biggest.less_than(&at) {
            biggest = at.clone();
        }
        let q_next = qn.mul(&qh);
        let ratio = qn.mul(&zh).div(&Hp::one().sub(&q_next));
        t = t.mul(&ratio);
        qn = q_next;
        if t.is_zero() || (n > 2 && ratio.abs().less_than(&Hp::from_f64(0.5)) && t.abs().less_than(&biggest.mul(&eps))) {
            break;
        }
    }
    let mut rhs = Hp::one();
    let mut qn = Hp::one();
    for _ in 0..2_000_000u64 {
        let f = qn.mul(&zh);
        rhs = rhs.mul(&Hp::one().add(&f));
        if f.abs().less_than(&eps) || f.is_zero() {
            break;
        }
        qn = qn.mul(&qh);
    }
    Ok(rel_hp(&lhs, &rhs))
}

fn qbinomial_log(q: QParam, n: u32, x: f64) -> Result<f64> {
    let lnq = q.ln();
    let n = n as usize;
    let mut t = QPochTable::new(q, n);
    let mut s = LogSum::new();
    for k in 0..=n {
        let kf = k as f64;
        let xk = if k == 0 { 0.0 } else { kf * x.ln() };
        s.add(t.get(n) - t.get(k) - t.get(n - k) + 0.5 * kf * (kf - 1.0) * lnq + xk);
    }
    let mut rhs = 0.0;
    for m in 0..n {
        rhs += if m == 0 { x.ln_1p() } else { softplus(m as f64 * lnq + x.ln()) };
    }
    Ok(rel_from_logs(s.ln(), rhs))
}

fn hp_qpoch(qh: &Hp, n: i64) -> Hp {
    let mut p = Hp::one();
    let mut qk = Hp::one();
    for _ in 1..=n {
        qk = qk.mul(qh);
        p = p.mul(&Hp::one().sub(&qk));
    }
    p
}

fn hp_binom(qh: &Hp, n: i64, k: i64) -> Hp {
    hp_qpoch(qh, n).div(&hp_qpoch(qh, k).mul(&hp_qpoch(qh, n - k)))
}

fn qbinomial_hp(q: QParam, n: u32, x: f64) -> Result<f64> {
    let qh = Hp::from_f64(q.value());
    let xh = Hp::from_f64(x);
    let n = n as i64;
    let mut lhs = Hp::zero();
    for k in 0..=n {
        let t = hp_binom(&qh, n, k).mul(&qh.powi(k * (k - 1) / 2)).mul(&xh.powi(k));
        lhs = lhs.add(&t);
    }
    let mut rhs = Hp::one();
    for m in 0..n {
        rhs = rhs.mul(&Hp::one().add(&qh.powi(m).mul(&xh)));
    }
    Ok(rel_hp(&lhs, &rhs))
}

/// `ln(1 + alpha q^(e2/2))`.
fn lp(ln_alpha: f64, lnq: f64, e2: i64) -> f64 {
    softplus(ln_alpha + 0.5 * e2 as f64 * lnq)
}

fn lemma_a1(q: QParam, alpha: f64, x: i64, policy: &TruncationPolicy) -> Result<f64> {
    let lnq = q.ln();
    let la = alpha.ln();
    let xf = x as f64;
    let lhs = (-q.value()).ln_1p() + xf * la + 0.5 * xf * xf * lnq
        + tail_product(1.0 / alpha, q, -xf + 1.5, policy)?.ln
        + tail_product(alpha, q, xf + 1.5, policy)?.ln
        - tail_product(alpha, q, 0.5, policy)?.ln
        - tail_product(1.0 / alpha, q, 0.5, policy)?.ln;
    let rhs = (-q.value()).ln_1p() + la + (xf - 0.5) * lnq - lp(la, lnq, 2 * x - 1) - lp(la, lnq, 2 * x + 1);
    Ok(rel_from_logs(lhs, rhs))
}

fn lemma_a2(q: QParam, alpha: f64, xs: &[i64], policy: &TruncationPolicy) -> Result<f64> {
    let lnq = q.ln();
    let la = alpha.ln();
    let k = xs.len() as i64;
    let x1 = xs[0];
    let xk = xs[xs.len() - 1];
    let l1q = (-q.value()).ln_1p();
    let tail: i64 = xs[1..].iter().sum();
    let mut lhs = k as f64 * l1q
        + x1 as f64 * la
        + (0.5 * (x1 * x1) as f64 + tail as f64 - ((k - 1) * x1) as f64) * lnq;
    for i in 1..k {
        let xi = xs[(i - 1) as usize];
        let xn = xs[i as usize];
        for j in 0..(xn - xi) {
            // 1 + alpha q^(j + x_i + 1/2 + 2i - k)
            lhs += lp(la, lnq, 2 * (j + xi + 2 * i - k) + 1);
        }
    }
    lhs += tail_product(alpha, q, xk as f64 + 0.5 + k as f64, policy)?.ln
        + tail_product(1.0 / alpha, q, -(x1 as f64) + 0.5 + k as f64, policy)?.ln
        - tail_product(alpha, q, 0.5, policy)?.ln
        - tail_product(1.0 / alpha, q, 0.5, policy)?.ln;
    let sum: i64 = xs.iter().sum();
    let mut rhs = k as f64 * (l1q + la) + (sum as f64 - 0.5 * (k * k) as f64) * lnq;
    for (idx, &x) in xs.iter().enumerate() {
        let j = idx as i64 + 1;
        rhs -= lp(la, lnq, 2 * (x + 2 * j - k) - 3) + lp(la, lnq, 2 * (x + 2 * j - k) - 1);
    }
    Ok(rel_from_logs(lhs, rhs))
}

fn lemma_a3(q: QParam, alpha: f64, x1: i64, i: i64, b: i64, k: i64) -> f64 {
    let qh = Hp::from_f64(q.value());
    let sq = qh.sqrt();
    let ah = Hp::from_f64(alpha);
    let n = k - b;
    let mut lhs = Hp::zero();
    for l in 0..=n {
        // 2 f(l)
        let mut f2 = 0;
        for j in b + 1..=b + l {
            f2 += 2 * (k - j + i) + 3;
        }
        f2 += (n - l) * (2 * (n - l + i) + 1);
        let mut t = ah.powi(-n).mul(&sq.powi(f2)).mul(&hp_binom(&qh, n, l));
        for j in b + l + 1..=k {
            // 1 + alpha q^(x1 + j - i - k - 1/2)
            t = t.mul(&Hp::one().add(&ah.mul(&sq.powi(2 * (x1 + j - i - k) - 1))));
        }
        lhs = if l % 2 == 0 { lhs.add(&t) } else { lhs.sub(&t) };
    }
    let rhs = qh.powi(n * x1 + n * (n + 1) / 2);
    rel_hp(&lhs, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(v: f64) -> QParam {
        QParam::new(v).unwrap()
    }

    #[test]
    fn qparam_bounds() {
        assert!(QParam::new(1.0).is_err());
        assert!(QParam::new(-0.1).is_err());
        assert!(QParam::new(f64::NAN).is_err());
        assert!(QParam::new(0.0).unwrap().is_zero());
    }

    #[test]
    fn finite_qpoch_small_cases() {
        assert_eq!(finite_qpoch(q(0.5), 0), 1.0);
        assert!((finite_qpoch(q(0.5), 1) - 0.5).abs() < 1e-16);
        assert!((finite_qpoch(q(0.5), 3) - 0.328125).abs() < 1e-15);
        assert_eq!(finite_qpoch(q(0.0), 7), 1.0);
    }

    #[test]
    fn qpoch_recursion_is_exact_in_logs() {
        let qq = q(0.37);
        for n in 0..40u64 {
            let a = ln_finite_qpoch(qq, n + 1);
            let b = ln_finite_qpoch(qq, n) + ln_one_minus_qpow(qq.ln(), n as i64 + 1);
            assert_eq!(a, b);
        }
        let mut t = QPochTable::new(qq, 3);
        assert_eq!(t.get(25), ln_finite_qpoch(qq, 25));
    }

    #[test]
    fn tail_product_examples() {
        let p = TruncationPolicy::default();
        assert_eq!(tail_product(1.0, q(0.0), 0.5, &p).unwrap().value(), 1.0);
        let tiny = tail_product(1e-30, q(0.5), 0.5, &p).unwrap().value();
        assert!((tiny - 1.0).abs() < 1e-15);
        let got = tail_product(1.0, q(0.5), 0.5, &p).unwrap().value();
        let mut direct = 1.0;
        for k in 0..200 {
            direct *= 1.0 + 0.5f64.powf(k as f64 + 0.5);
        }
        assert!((got - direct).abs() < 1e-14 * direct);
        assert!(tail_product(1.0, q(0.0), -1.0, &p).is_err());
        assert!(tail_product(0.0, q(0.5), 0.5, &p).is_err());
    }

    #[test]
    fn exhausted_policy_is_an_error() {
        let p = TruncationPolicy { tol: 1e-14, max_terms: 5 };
        assert!(matches!(tail_product(1.0, q(0.9), 0.5, &p), Err(Error::Truncation { .. })));
    }

    #[test]
    fn qpoch_inf_against_long_product() {
        let p = TruncationPolicy { tol: 1e-17, max_terms: 1000 };
        let got = ln_qpoch_inf(q(0.5), &p).unwrap().exp();
        let mut direct = 1.0;
        for k in 1..400 {
            direct *= 1.0 - 0.5f64.powi(k);
        }
        assert!((got - direct).abs() < 1e-15);
    }

    #[test]
    fn mixture_weights_sum_to_one() {
        let p = TruncationPolicy::default();
        let z = JacobiNormalizer::new(q(0.5), 1.0, &p).unwrap();
        let s: f64 = (-40..=40).map(|c| z.ln_weight(c).exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_weight_alpha_symmetry() {
        let p = TruncationPolicy::default();
        let a = ln_mixture_weight(3, q(0.5), 2.0, &p).unwrap();
        let b = ln_mixture_weight(-3, q(0.5), 0.5, &p).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn mixture_weight_zero_against_sixty_terms() {
        let p = TruncationPolicy::default();
        let mut z = 1.0;
        for k in 0..60 {
            let t = 0.5f64.powf(k as f64 + 0.5);
            z *= (1.0 + t) * (1.0 + t) * (1.0 - 0.5f64.powi(k + 1));
        }
        let w0 = mixture_weight(0, q(0.5), 1.0, &p).unwrap();
        assert!((w0 - 1.0 / z).abs() < 1e-14);
    }

    #[test]
    fn mixture_weight_at_q_zero() {
        let p = TruncationPolicy::default();
        assert_eq!(mixture_weight(0, q(0.0), 3.0, &p).unwrap(), 1.0);
        assert_eq!(mixture_weight(1, q(0.0), 3.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn cutoff_bounds_the_tail() {
        let p = TruncationPolicy::default();
        for &(qq, a) in &[(0.5, 1.0), (0.9, 4.0), (0.1, 0.25)] {
            let z = JacobiNormalizer::new(q(qq), a, &p).unwrap();
            let c = z.cutoff(1e-12);
            let inside: f64 = (-c..=c).map(|k| z.ln_weight(k).exp()).sum();
            assert!((inside - 1.0).abs() < 1e-11, "q={qq} a={a} c={c}");
        }
    }

    #[test]
    fn identity_examples() {
        let p = TruncationPolicy::default();
        assert_eq!(verify_identity(&IdentityInput::Euler { q: 0.5, z: 0.0 }, &p).unwrap(), 0.0);
        let a1 = verify_identity(&IdentityInput::LemmaA1 { q: 0.5, alpha: 1.3, x: 3 }, &p).unwrap();
        assert!(a1 < 1e-12);
        let a3 = IdentityInput::LemmaA3 { q: 0.5, alpha: 0.7, x1: 2, i: 0, b: 1, k: 3 };
        assert!(verify_identity(&a3, &p).unwrap() < 1e-12);
    }

    #[test]
    fn identity_domain_errors() {
        let p = TruncationPolicy::default();
        let bad = IdentityInput::LemmaA2 { q: 0.5, alpha: 1.0, xs: vec![2, 1] };
        assert!(matches!(verify_identity(&bad, &p), Err(Error::Ordering(_))));
        let bad = IdentityInput::LemmaA3 { q: 0.5, alpha: 1.0, x1: 0, i: 0, b: 3, k: 3 };
        assert!(verify_identity(&bad, &p).is_err());
        assert!(Identity::parse("nope").is_err());
        assert_eq!(Identity::parse("LEMMAa2").unwrap(), Identity::LemmaA2);
    }

    #[test]
    fn euler_with_vanishing_right_side() {
        // 1 + q z = 0 at q = 1/2, z = -2
        let p = TruncationPolicy::default();
        let e = verify_identity(&IdentityInput::Euler { q: 0.5, z: -2.0 }, &p).unwrap();
        assert!(e < 1e-30, "{e}");
    }

    #[test]
    fn euler_and_qbinomial_at_q_zero() {
        let p = TruncationPolicy::default();
        for z in [-3.0, 0.5, 4.0] {
            assert!(verify_identity(&IdentityInput::Euler { q: 0.0, z }, &p).unwrap() < 1e-15);
            assert!(verify_identity(&IdentityInput::QBinomial { q: 0.0, n: 3, x: z }, &p).unwrap() < 1e-15);
        }
    }
}
