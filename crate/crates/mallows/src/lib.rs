//! Mallows product measures on permutations of the integers: closed-form
//! laws, an exact sampler, exclusion dynamics, the colored six-vertex model
//! and the statistics used to compare them.

mod error;
mod hp;
mod logmath;
pub mod asep;
pub mod measures;
pub mod qseries;
pub mod sampler;
pub mod sixvertex;
pub mod stats;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod chapter0 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/measures.md")]
pub mod chapter1 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/sampling.md")]
pub mod chapter2 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/asep.md")]
pub mod chapter3 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/sixvertex.md")]
pub mod chapter4 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/verification.md")]
pub mod chapter5 {}
