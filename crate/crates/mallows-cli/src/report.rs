//! Number formatting for reports: 17 significant digits, always with the
//! natural logarithm next to the linear value.

use serde::Serialize;

/// `x` with 17 significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// A probability in both domains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Num {
    pub ln: String,
    pub prob: String,
}

impl Num {
    pub fn from_ln(ln: f64) -> Num {
        Num { ln: fmt17(ln), prob: fmt17(ln.exp()) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt17(f64::NEG_INFINITY), "-inf");
        assert_eq!(Num::from_ln(0.0).prob, "1.0000000000000000e0");
    }
}
