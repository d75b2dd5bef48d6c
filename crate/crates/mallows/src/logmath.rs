//! Small log-domain helpers shared by the evaluators.
//!
//! Exponents of `q` that may be half-integers are passed around as doubled
//! integers (`e2 = 2e`), so that `q^(x - 1/2)` is `e2 = 2x - 1`. They are only
//! turned into floats at the very last multiplication by `ln q`.

/// `ln(1 + e^t)`, accurate over the whole real line.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 36.0 {
        t + (-t).exp()
    } else if t < -36.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

/// `ln(1 - e^t)` for `t <= 0`.
#[inline]
pub(crate) fn ln_one_minus_exp(t: f64) -> f64 {
    debug_assert!(t <= 0.0);
    if t > -std::f64::consts::LN_2 {
        (-t.exp_m1()).ln()
    } else {
        (-t.exp()).ln_1p()
    }
}

/// `e2 / 2 * ln q`, with the convention `q^0 = 1` also when `q = 0`.
#[inline]
pub(crate) fn half_pow(lnq: f64, e2: i64) -> f64 {
    if e2 == 0 {
        0.0
    } else {
        0.5 * e2 as f64 * lnq
    }
}

/// `ln(1 + alpha * q^(e2/2))` for `q > 0`.
#[inline]
pub(crate) fn ln_one_plus(ln_alpha: f64, lnq: f64, e2: i64) -> f64 {
    softplus(ln_alpha + half_pow(lnq, e2))
}

/// `ln(1 - q^n)` for `n >= 1` and `q > 0`.
#[inline]
pub(crate) fn ln_one_minus_qpow(lnq: f64, n: i64) -> f64 {
    debug_assert!(n >= 1);
    ln_one_minus_exp(n as f64 * lnq)
}

/// A product `c * q^(e2/2) * prod (1 + alpha q^(e2_j/2))^(+-1)` evaluated in the
/// log domain. At `q = 0` the leading-order limit is taken factor by factor, so
/// the closed forms need no separate degenerate branch.
#[derive(Clone, Debug)]
pub(crate) struct QRatio {
    ln_alpha: f64,
    lnq: f64,
    ln_c: f64,
    e2: i64,
    // (doubled exponent, +1 numerator / -1 denominator)
    factors: Vec<(i64, i8)>,
}

impl QRatio {
    pub(crate) fn new(ln_alpha: f64, lnq: f64) -> QRatio {
        QRatio { ln_alpha, lnq, ln_c: 0.0, e2: 0, factors: Vec::new() }
    }

    /// Multiply by `e^ln`; the argument must not depend on `q` through a
    /// vanishing power.
    pub(crate) fn times_const(&mut self, ln: f64) -> &mut Self {
        self.ln_c += ln;
        self
    }

    pub(crate) fn times_qpow2(&mut self, e2: i64) -> &mut Self {
        self.e2 += e2;
        self
    }

    pub(crate) fn times_one_plus(&mut self, e2: i64) -> &mut Self {
        self.factors.push((e2, 1));
        self
    }

    pub(crate) fn over_one_plus(&mut self, e2: i64) -> &mut Self {
        self.factors.push((e2, -1));
        self
    }

    pub(crate) fn ln(&self) -> f64 {
        if self.lnq == f64::NEG_INFINITY {
            let mut e2 = self.e2;
            let mut ln = self.ln_c;
            for &(f, sign) in &self.factors {
                if f == 0 {
                    ln += sign as f64 * softplus(self.ln_alpha);
                } else if f < 0 {
                    e2 += sign as i64 * f;
                    ln += sign as f64 * self.ln_alpha;
                }
            }
            return match e2.cmp(&0) {
                std::cmp::Ordering::Greater => f64::NEG_INFINITY,
                std::cmp::Ordering::Equal => ln,
                std::cmp::Ordering::Less => f64::INFINITY,
            };
        }
        let mut ln = self.ln_c + half_pow(self.lnq, self.e2);
        for &(f, sign) in &self.factors {
            ln += sign as f64 * ln_one_plus(self.ln_alpha, self.lnq, f);
        }
        ln
    }
}

/// Running log-sum-exp accumulator.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    pub(crate) fn new() -> LogSum {
        LogSum { max: f64::NEG_INFINITY, scaled: 0.0 }
    }

    pub(crate) fn add(&mut self, ln: f64) {
        if ln == f64::NEG_INFINITY {
            return;
        }
        if ln <= self.max {
            self.scaled += (ln - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - ln).exp() + 1.0;
            self.max = ln;
        }
    }

    pub(crate) fn ln(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Number of inversions of a word, `#{a < b : w[a] > w[b]}`.
pub(crate) fn inversions(word: &[i64]) -> u64 {
    let mut n = 0;
    for a in 0..word.len() {
        for b in a + 1..word.len() {
            if word[a] > word[b] {
                n += 1;
            }
        }
    }
    n
}
