//! Multi-precision arithmetic for the identity checks whose alternating sums
//! cancel by dozens of orders of magnitude.

use dashu_float::FBig;

type F = FBig<dashu_float::round::mode::HalfEven, 2>;

/// Working precision in bits. The worst cancellation met on the checked grid
/// is about 2^170.
pub(crate) const PREC: usize = 640;

#[derive(Clone, Debug)]
pub(crate) struct Hp(F);

impl Hp {
    pub(crate) fn from_f64(x: f64) -> Hp {
        let v = F::try_from(x).expect("finite input");
        Hp(v.with_precision(PREC).value())
    }

    pub(crate) fn int(n: i64) -> Hp {
        Hp::from_f64(n as f64)
    }

    pub(crate) fn zero() -> Hp {
        Hp::int(0)
    }

    pub(crate) fn one() -> Hp {
        Hp::int(1)
    }

    pub(crate) fn add(&self, o: &Hp) -> Hp {
        Hp(&self.0 + &o.0)
    }

    pub(crate) fn sub(&self, o: &Hp) -> Hp {
        Hp(&self.0 - &o.0)
    }

    pub(crate) fn mul(&self, o: &Hp) -> Hp {
        Hp(&self.0 * &o.0)
    }

    pub(crate) fn div(&self, o: &Hp) -> Hp {
        Hp(&self.0 / &o.0)
    }

    pub(crate) fn neg(&self) -> Hp {
        Hp(-self.0.clone())
    }

    pub(crate) fn sqrt(&self) -> Hp {
        Hp(self.0.sqrt())
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.0 == F::ZERO
    }

    pub(crate) fn abs(&self) -> Hp {
        if self.0 < F::ZERO {
            self.neg()
        } else {
            self.clone()
        }
    }

    /// `self^n` for any integer `n`, with `x^0 = 1`.
    pub(crate) fn powi(&self, n: i64) -> Hp {
        let mut base = self.clone();
        let mut e = n.unsigned_abs();
        let mut acc = Hp::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        if n < 0 {
            Hp::one().div(&acc)
        } else {
            acc
        }
    }

    pub(crate) fn less_than(&self, o: &Hp) -> bool {
        self.0 < o.0
    }

    pub(crate) fn to_f64(&self) -> f64 {
        self.0.to_f64().value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_round_trips() {
        let a = Hp::from_f64(0.3);
        let b = Hp::from_f64(1.7);
        assert_eq!(a.add(&b).to_f64(), 0.3 + 1.7);
        assert_eq!(a.mul(&b).to_f64(), 0.3 * 1.7);
        assert!((a.div(&b).to_f64() - 0.3 / 1.7).abs() < 1e-17);
        assert!((Hp::from_f64(2.0).sqrt().to_f64() - 2f64.sqrt()).abs() < 1e-16);
        assert_eq!(Hp::from_f64(0.5).powi(-3).to_f64(), 8.0);
        assert_eq!(Hp::zero().powi(0).to_f64(), 1.0);
        assert!(Hp::from_f64(-2.0).abs().sub(&Hp::int(2)).is_zero());
    }

    #[test]
    fn survives_catastrophic_cancellation() {
        let big = Hp::from_f64(1e60);
        let x = big.add(&Hp::one()).sub(&big);
        assert_eq!(x.to_f64(), 1.0);
    }
}
