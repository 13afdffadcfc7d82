//! Exact finite models of zero-dimensional dynamics.
//!
//! A Cantor system is represented at a fixed cylinder level: `N` cells, homeomorphisms as cell
//! permutations, clopen sets as bitsets and invariant measures as rational cell weights. On top of
//! that sit castles and tilings, square-divisibility witnesses with an exact verifier, the
//! sofic/tower-permutation/free-product action factories, and a symbolic algebraic crossed
//! product used to check the nilpotency step of the stable-rank-one argument.

pub mod constructions;
pub mod crossed_product;
pub mod group;
pub mod level;
mod rational_text;
pub mod square_divisibility;
pub mod tiling;
pub mod witness_format;

use num_bigint::BigInt;
pub use num_rational::BigRational as Rational;

pub use group::{Alphabet, FiniteQuotient, FiniteSubset, IntSet, Word, WordSet};
pub use level::{Castle, CellMap, ClopenSet, CylinderLevel, LevelAction, LevelMeasure, OdometerSystem};

/// `n/d` as an exact rational.
pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// `n` as an exact rational.
pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}
