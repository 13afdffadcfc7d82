//! (ε,E)-tilings of finite subsets of ℤ by translated interval tiles.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{is_invariant, FiniteSubset, GroupError, IntSet};
use crate::{int, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TilingError {
    #[error("epsilon must lie in (0, 1], got {0}")]
    EpsilonOutOfRange(Rational),
    #[error("the padding set must contain 0")]
    IdentityMissing,
    #[error("tile set is empty or has an empty tile")]
    EmptyTile,
    #[error("coverage target unreachable; best achieved {best}")]
    Infeasible { best: Rational },
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// A tile with an optional certificate `(S, δ)`: the tile is (S,δ)-invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub shape: IntSet,
    pub certificate: Option<(IntSet, Rational)>,
}

impl Tile {
    pub fn recheck(&self) -> Result<bool, GroupError> {
        match &self.certificate {
            Some((s, delta)) => is_invariant(&self.shape, s, delta),
            None => Ok(true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSet {
    tiles: Vec<Tile>,
}

impl TileSet {
    pub fn new(tiles: Vec<Tile>) -> Result<Self, TilingError> {
        if tiles.is_empty() || tiles.iter().any(|t| t.shape.is_empty()) {
            return Err(TilingError::EmptyTile);
        }
        Ok(TileSet { tiles })
    }

    pub fn uncertified<I: IntoIterator<Item = IntSet>>(shapes: I) -> Result<Self, TilingError> {
        TileSet::new(shapes.into_iter().map(|shape| Tile { shape, certificate: None }).collect())
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn max_len(&self) -> usize {
        self.tiles.iter().map(|t| t.shape.len()).max().unwrap_or(0)
    }
}

/// Tile parameters for padding set `E` and tolerance `ε`, following the chain
/// `(1−ε')³ ≥ 1−ε`, `ε'' = ε'/(2|E²|)`, `β = ε''/8`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileParams {
    pub tiles: TileSet,
    /// `{−L..L}` for the largest tile length `L`.
    pub d: IntSet,
    #[serde(with = "crate::rational_text")]
    pub beta: Rational,
    #[serde(with = "crate::rational_text")]
    pub eps_prime: Rational,
    #[serde(with = "crate::rational_text")]
    pub eps_double_prime: Rational,
    /// Shortest interval length that is (E², ε'')-invariant.
    pub base_length: usize,
}

fn check_epsilon(eps: &Rational) -> Result<(), TilingError> {
    if *eps <= Rational::zero() || *eps > Rational::one() {
        return Err(TilingError::EpsilonOutOfRange(eps.clone()));
    }
    Ok(())
}

fn span(e: &IntSet) -> i64 {
    match (e.min(), e.max()) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0,
    }
}

pub fn ow_tile_params(e: &IntSet, eps: &Rational) -> Result<TileParams, TilingError> {
    check_epsilon(eps)?;
    let e = e.with_identity();
    // ε' = ε/3 satisfies (1−ε')³ ≥ 1 − 3ε' = 1 − ε.
    let eps_prime = eps / int(3);
    let e2 = e.sumset(&e);
    let eps_double_prime = &eps_prime / int(2 * e2.len() as i64);
    // [0, L) keeps L − span(E²) points under shrinking by E², so L ≥ span/ε'' suffices.
    let w = span(&e2);
    let needed = (int(w) / &eps_double_prime).ceil().to_integer();
    let mut length: usize = needed.try_into().unwrap_or(usize::MAX).max(1);
    while !is_invariant(&IntSet::interval(0, length as i64 - 1), &e2, &eps_double_prime)? {
        length += 1;
    }
    let tiles = [2 * length, length]
        .into_iter()
        .map(|l| Tile {
            shape: IntSet::interval(0, l as i64 - 1),
            certificate: Some((e2.clone(), eps_double_prime.clone())),
        })
        .collect();
    let largest = 2 * length as i64;
    Ok(TileParams {
        tiles: TileSet::new(tiles)?,
        d: IntSet::interval(-largest, largest),
        beta: &eps_double_prime / int(8),
        eps_prime,
        eps_double_prime,
        base_length: length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub tile: usize,
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub host: IntSet,
    pub shapes: Vec<IntSet>,
    pub placements: Vec<Placement>,
}

impl Tiling {
    pub fn placed(&self, p: &Placement) -> IntSet {
        self.shapes[p.tile].shift(p.offset)
    }

    pub fn covered(&self) -> usize {
        self.placements.iter().map(|p| self.shapes[p.tile].len()).sum()
    }
}

/// Left-to-right greedy placement: at each position the largest tile whose E-thickening still
/// fits in the current run of `K`, then skip past that thickening.
pub fn greedy_tiling(k: &IntSet, tiles: &TileSet, eps: &Rational, e: &IntSet) -> Result<Tiling, TilingError> {
    check_epsilon(eps)?;
    if !e.contains(&0) {
        return Err(TilingError::IdentityMissing);
    }
    let (e_lo, e_hi) = (e.min().unwrap_or(0), e.max().unwrap_or(0));
    let mut order: Vec<usize> = (0..tiles.tiles().len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(tiles.tiles()[i].shape.len()));
    let extents: Vec<(i64, i64)> =
        tiles.tiles().iter().map(|t| (t.shape.min().unwrap() + e_lo, t.shape.max().unwrap() + e_hi)).collect();
    let mut placements = Vec::new();
    for &(a, b) in k.runs() {
        let mut free_from = a;
        loop {
            let choice = order.iter().copied().find(|&i| {
                let (lo, hi) = extents[i];
                free_from - lo + hi <= b
            });
            let Some(i) = choice else { break };
            let (lo, hi) = extents[i];
            let offset = free_from - lo;
            placements.push(Placement { tile: i, offset });
            free_from = offset + hi + 1;
        }
    }
    let tiling =
        Tiling { host: k.clone(), shapes: tiles.tiles().iter().map(|t| t.shape.clone()).collect(), placements };
    let report = verify_tiling(k, &tiling, eps, e);
    if !report.coverage_ok {
        return Err(TilingError::Infeasible { best: report.coverage });
    }
    debug_assert!(report.passes());
    Ok(tiling)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingReport {
    /// The thickenings `E·T_i` lie in `K` and are pairwise disjoint.
    pub thickenings_disjoint: bool,
    /// Covered fraction of `K`.
    #[serde(with = "crate::rational_text")]
    pub coverage: Rational,
    /// Coverage is at least `1 − ε`.
    pub coverage_ok: bool,
}

impl TilingReport {
    pub fn passes(&self) -> bool {
        self.thickenings_disjoint && self.coverage_ok
    }
}

pub fn verify_tiling(k: &IntSet, tiling: &Tiling, eps: &Rational, e: &IntSet) -> TilingReport {
    let mut total = 0usize;
    let mut runs = Vec::new();
    let mut inside = true;
    for p in &tiling.placements {
        let thick = tiling.placed(p).sumset(e);
        inside &= thick.is_subset(k);
        total += thick.len();
        runs.extend_from_slice(thick.runs());
    }
    let union = IntSet::from_runs(runs);
    let thickenings_disjoint = inside && union.len() == total;
    let coverage = if k.is_empty() {
        Rational::one()
    } else {
        let tiles_union = IntSet::from_runs(tiling.placements.iter().flat_map(|p| tiling.placed(p).runs().to_vec()));
        int(tiles_union.len() as i64) / int(k.len() as i64)
    };
    let coverage_ok = coverage >= Rational::one() - eps;
    TilingReport { thickenings_disjoint, coverage, coverage_ok }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio;

    #[test]
    fn params_for_unit_padding() {
        let e = IntSet::interval(-1, 1);
        let p = ow_tile_params(&e, &ratio(1, 2)).unwrap();
        let l = p.base_length as i64;
        assert!(int(2) / int(l) <= p.eps_double_prime);
        assert_eq!(p.beta, &p.eps_double_prime / int(8));
        assert_eq!(p.eps_double_prime, ratio(1, 60));
        assert_eq!(p.d, IntSet::interval(-2 * l, 2 * l));
        assert!(p.tiles.tiles().iter().all(|t| t.recheck().unwrap()));
    }

    #[test]
    fn params_recheck_wide_padding() {
        let p = ow_tile_params(&IntSet::interval(-2, 2), &ratio(1, 10)).unwrap();
        for t in p.tiles.tiles() {
            assert!(t.recheck().unwrap());
            assert!(is_invariant(&t.shape, &IntSet::interval(-2, 2), &ratio(1, 10)).unwrap());
        }
        assert!(ow_tile_params(&IntSet::interval(-1, 1), &Rational::zero()).is_err());
        assert!(ow_tile_params(&IntSet::interval(-1, 1), &ratio(3, 2)).is_err());
    }

    #[test]
    fn greedy_on_a_thousand() {
        let k = IntSet::interval(0, 999);
        let tiles = TileSet::uncertified([IntSet::interval(0, 99)]).unwrap();
        let t = greedy_tiling(&k, &tiles, &ratio(1, 5), &IntSet::interval(-1, 1)).unwrap();
        assert!(t.covered() >= 800);
        assert!(verify_tiling(&k, &t, &ratio(1, 5), &IntSet::interval(-1, 1)).passes());
    }

    #[test]
    fn trivial_cases() {
        let k = IntSet::interval(0, 9);
        let big = TileSet::uncertified([IntSet::interval(0, 99)]).unwrap();
        let t = greedy_tiling(&k, &big, &Rational::one(), &IntSet::interval(0, 0)).unwrap();
        assert!(t.placements.is_empty());
        let exact = TileSet::uncertified([IntSet::interval(0, 9)]).unwrap();
        let t = greedy_tiling(&k, &exact, &ratio(1, 100), &IntSet::interval(0, 0)).unwrap();
        assert_eq!(t.placements.len(), 1);
        assert_eq!(t.covered(), 10);
        assert!(matches!(
            greedy_tiling(&k, &big, &ratio(1, 2), &IntSet::interval(0, 0)),
            Err(TilingError::Infeasible { .. })
        ));
        assert_eq!(greedy_tiling(&k, &exact, &ratio(1, 2), &IntSet::interval(1, 2)), Err(TilingError::IdentityMissing));
    }

    #[test]
    fn verifier_flags_violations() {
        let k = IntSet::interval(0, 99);
        let e = IntSet::interval(-1, 1);
        let shapes = vec![IntSet::interval(0, 9)];
        let overlapping = Tiling {
            host: k.clone(),
            shapes: shapes.clone(),
            placements: vec![Placement { tile: 0, offset: 1 }, Placement { tile: 0, offset: 12 }],
        };
        assert!(!verify_tiling(&k, &overlapping, &Rational::one(), &e).thickenings_disjoint);
        let sparse = Tiling {
            host: k.clone(),
            shapes,
            placements: (0..5).map(|i| Placement { tile: 0, offset: 1 + 20 * i }).collect(),
        };
        let r = verify_tiling(&k, &sparse, &ratio(1, 5), &e);
        assert!(r.thickenings_disjoint);
        assert_eq!(r.coverage, ratio(1, 2));
        assert!(!r.coverage_ok);
    }
}
