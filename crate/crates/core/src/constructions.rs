//! Action factories: tower permutations, finite almost-free F₂ actions, random-conjugation
//! extensions of an odometer to a free product, and diagonal products of level actions.

use std::collections::BTreeSet;

use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{
    is_invariant, sanov_quotient, Alphabet, FiniteSubset, GroupError, IntSet, Word, WordSet, DEFAULT_PRIME_CAP,
};
use crate::level::{
    check_invariant_measure, first_return_castle, Castle, CellMap, ClopenSet, CylinderLevel, LevelAction, LevelError,
    LevelMeasure, OdometerSystem, ShiftTable, MAX_CELLS,
};
use crate::{int, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstructionError {
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("tower {tower}: permutation is not a single cycle of length {height}")]
    NotCyclic { tower: usize, height: usize },
    #[error("tower {tower}: the top floor must map to 0")]
    TopNotToBase { tower: usize },
    #[error("expected {expected} cycles, one per tower, found {found}")]
    CycleCount { expected: usize, found: usize },
    #[error("the identity may not appear in the word set")]
    IdentityInSet,
    #[error("{n} points is below the feasibility bound {required}")]
    BelowFeasibility { n: usize, required: usize },
    #[error("word {word} fixes {count} points, more than {allowed}")]
    FixedPointBound { word: String, count: usize, allowed: String },
    #[error("tower {tower} has height {height}; at least {required} is needed")]
    HeightsTooSmall { tower: usize, height: usize, required: usize },
    #[error("epsilon {eps} must be positive and below {limit}")]
    EpsilonOutOfRange { eps: Box<Rational>, limit: Box<Rational> },
    #[error("no admissible conjugating permutation within {attempts} attempts")]
    BudgetExhausted { attempts: usize },
    #[error("level of {cells} cells cannot host a tower of height {required}")]
    LevelTooShallow { cells: usize, required: usize },
    #[error("product would exceed the cell cap")]
    ProductTooLarge,
    #[error("factor actions use different alphabets")]
    AlphabetMismatch,
    #[error("permutation list must be nonempty, of even length and on a common ground set")]
    BadPermutations,
    #[error("the alphabet needs the generator {0}")]
    MissingGenerator(String),
}

/// A castle of `T` with a cyclic shuffle `πᵢ` of the floors of each tower.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TowerPermutation {
    castle: Castle,
    cycles: Vec<Vec<usize>>,
    map: CellMap,
    shifts: ShiftTable,
}

fn check_cycle(pi: &[usize], tower: usize) -> Result<(), ConstructionError> {
    let n = pi.len();
    let not_cyclic = ConstructionError::NotCyclic { tower, height: n };
    if n == 0 || pi.iter().any(|&v| v >= n) {
        return Err(not_cyclic);
    }
    let mut x = 0;
    for step in 1..=n {
        x = pi[x];
        if x == 0 && step < n {
            return Err(not_cyclic);
        }
    }
    if x != 0 {
        return Err(not_cyclic);
    }
    if pi[n - 1] != 0 {
        return Err(ConstructionError::TopNotToBase { tower });
    }
    Ok(())
}

/// `S = T^{πᵢ(j)−j}` on `T^jBᵢ` below the top floor and `S = T` on the top floor.
pub fn build_tower_permutation(
    castle: &Castle,
    cycles: Vec<Vec<usize>>,
) -> Result<TowerPermutation, ConstructionError> {
    if cycles.len() != castle.towers().len() {
        return Err(ConstructionError::CycleCount { expected: castle.towers().len(), found: cycles.len() });
    }
    for (i, (pi, tower)) in cycles.iter().zip(castle.towers()).enumerate() {
        if pi.len() != tower.height {
            return Err(ConstructionError::NotCyclic { tower: i, height: tower.height });
        }
        check_cycle(pi, i)?;
    }
    let coords = castle.coordinates();
    let shifts: ShiftTable = coords
        .iter()
        .map(|&(i, j)| {
            let n = cycles[i].len();
            if j + 1 == n {
                1
            } else {
                cycles[i][j] as i64 - j as i64
            }
        })
        .collect();
    let t = castle.map();
    let image = (0..t.cells()).map(|x| t.pow(shifts[x]).apply(x) as u32);
    let map = CellMap::new(image.collect())?;
    Ok(TowerPermutation { castle: castle.clone(), cycles, map, shifts })
}

impl TowerPermutation {
    pub fn castle(&self) -> &Castle {
        &self.castle
    }

    pub fn cycles(&self) -> &[Vec<usize>] {
        &self.cycles
    }

    pub fn map(&self) -> &CellMap {
        &self.map
    }

    /// `S x = T^{k(x)} x`.
    pub fn shift_table(&self) -> &ShiftTable {
        &self.shifts
    }

    /// The `F₂` action `a ↦ T`, `b ↦ S`.
    pub fn f2_action(&self) -> Result<LevelAction, LevelError> {
        let t = self.castle.map().clone();
        LevelAction::new(Alphabet::free2(), CylinderLevel::new(t.cells())?, vec![t, self.map.clone()])
    }

    /// Whether `S` and `T` have the same orbits on cells.
    pub fn same_orbits(&self) -> bool {
        let label = |m: &CellMap| {
            let mut out = vec![0; m.cells()];
            for c in m.cycles() {
                for &x in &c {
                    out[x] = c[0];
                }
            }
            out
        };
        label(&self.map) == label(self.castle.map())
    }
}

/// The conjugacy `h` with `h∘S = T∘h`: `hx = T^{σᵢ(j)−j}x` on `T^jBᵢ` where `σᵢ(πᵢ^j(0)) = j`.
pub fn conjugacy_to_base(tp: &TowerPermutation) -> CellMap {
    let sigmas: Vec<Vec<usize>> = tp
        .cycles
        .iter()
        .map(|pi| {
            let mut sigma = vec![0; pi.len()];
            let mut x = 0;
            for j in 0..pi.len() {
                sigma[x] = j;
                x = pi[x];
            }
            sigma
        })
        .collect();
    let t = tp.castle.map();
    let coords = tp.castle.coordinates();
    let image = (0..t.cells()).map(|x| {
        let (i, j) = coords[x];
        t.pow(sigmas[i][j] as i64 - j as i64).apply(x) as u32
    });
    CellMap::new(image.collect()).expect("levels are permuted within towers")
}

/// A finite `F₂`-action given by the permutations of `a` and `b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteF2Action {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    /// Modulus of the congruence quotient used.
    pub modulus: u64,
    /// Order of the quotient group.
    pub quotient_order: usize,
    /// The size bound `4|H|/ε` from the counting argument, rounded up.
    pub counting_bound: usize,
}

impl FiniteF2Action {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn action(&self) -> Result<LevelAction, LevelError> {
        LevelAction::new(
            Alphabet::free2(),
            CylinderLevel::new(self.len())?,
            vec![CellMap::new(self.a.clone())?, CellMap::new(self.b.clone())?],
        )
    }

    pub fn fixed_points(&self, w: &Word) -> Result<usize, LevelError> {
        Ok(self.action()?.word_map(w)?.fixed_points())
    }
}

/// Join the cycles of a permutation into one: each cycle, listed from its least element, has
/// its last element sent to the first element of the next cycle.
fn splice_cycles(f: &CellMap) -> Vec<u32> {
    let cycles = f.cycles();
    let mut out = f.images().to_vec();
    for (k, c) in cycles.iter().enumerate() {
        let next = &cycles[(k + 1) % cycles.len()];
        out[*c.last().unwrap()] = next[0] as u32;
    }
    out
}

/// `n` points with `a`, `b` single `n`-cycles and at most `εn` fixed points for each `s ∈ E`:
/// left translation on `r` copies of a congruence quotient, canonical cycles on the padding,
/// then cycle splicing.
pub fn sofic_f2_action(e: &WordSet, eps: &Rational, n: usize) -> Result<FiniteF2Action, ConstructionError> {
    if e.contains(&Word::identity()) {
        return Err(ConstructionError::IdentityInSet);
    }
    if *eps <= Rational::zero() {
        return Err(ConstructionError::EpsilonOutOfRange {
            eps: Box::new(eps.clone()),
            limit: Box::new(Rational::one()),
        });
    }
    let quotient = sanov_quotient(e, 2, DEFAULT_PRIME_CAP)?;
    let (elements, tables) = quotient.image_group();
    let h = elements.len();
    if n < 2 * h {
        return Err(ConstructionError::BelowFeasibility { n, required: 2 * h });
    }
    let r = n / h - 1;
    let mut a = vec![0u32; n];
    let mut b = vec![0u32; n];
    for copy in 0..r {
        for x in 0..h {
            a[copy * h + x] = (copy * h + tables[0][x]) as u32;
            b[copy * h + x] = (copy * h + tables[1][x]) as u32;
        }
    }
    let pad: Vec<usize> = (r * h..n).collect();
    for (i, &x) in pad.iter().enumerate() {
        let next = pad[(i + 1) % pad.len()] as u32;
        a[x] = next;
        b[x] = next;
    }
    let a = splice_cycles(&CellMap::new(a)?);
    let b = splice_cycles(&CellMap::new(b)?);
    let counting = (int(4 * h as i64) / eps).floor().to_integer().to_usize().unwrap_or(usize::MAX);
    let out = FiniteF2Action { a, b, modulus: quotient.modulus(), quotient_order: h, counting_bound: counting + 1 };
    let action = out.action()?;
    debug_assert!(action.generator(0).is_single_cycle() && action.generator(1).is_single_cycle());
    let allowed = eps * int(n as i64);
    for s in e.iter() {
        let count = action.word_map(s)?.fixed_points();
        if int(count as i64) > allowed {
            return Err(ConstructionError::FixedPointBound {
                word: Alphabet::free2().display(s).to_string(),
                count,
                allowed: allowed.to_string(),
            });
        }
    }
    Ok(out)
}

/// `|D^q|` for `D = {a^±1, b^±1}`.
pub fn letter_power_size(q: usize) -> usize {
    Alphabet::free2().letter_power(q).len()
}

fn word_length_bound(e: &WordSet) -> usize {
    e.iter().map(Word::letter_len).max().unwrap_or(0)
}

/// A tower permutation together with the fixed-point measures it achieves.
#[derive(Debug, Clone)]
pub struct AsymptoticallyFree {
    pub permutation: TowerPermutation,
    /// Uniform measure of `{x : sx = x}` for each `s ∈ E`, in set order.
    pub fixed_measures: Vec<(Word, Rational)>,
    pub q: usize,
    pub letter_power: usize,
}

impl AsymptoticallyFree {
    pub fn max_fixed_measure(&self) -> Rational {
        self.fixed_measures.iter().map(|(_, m)| m.clone()).max().unwrap_or_else(Rational::zero)
    }
}

/// Least admissible tower height for `E` and `ε`: above `4|D^q|/ε` and large enough for the
/// per-tower finite action on `n − 2` points.
pub fn required_height(e: &WordSet, eps: &Rational) -> Result<usize, ConstructionError> {
    let dq = letter_power_size(word_length_bound(e));
    let strict = (int(4 * dq as i64) / eps).floor().to_integer().to_usize().unwrap_or(usize::MAX) + 1;
    let quotient = sanov_quotient(e, 2, DEFAULT_PRIME_CAP)?;
    let h = quotient.image_group().0.len();
    Ok(strict.max(2 * h + 2))
}

/// A tower permutation `S` of the castle map with `μ{x : sx = x} ≤ ε` for each `s ∈ E` in the
/// action `a ↦ T`, `b ↦ S`, using a finite action on the middle floors of each tower.
pub fn asymp_free_tower_perm(
    castle: &Castle,
    e: &WordSet,
    eps: &Rational,
) -> Result<AsymptoticallyFree, ConstructionError> {
    if e.contains(&Word::identity()) {
        return Err(ConstructionError::IdentityInSet);
    }
    if *eps <= Rational::zero() {
        return Err(ConstructionError::EpsilonOutOfRange {
            eps: Box::new(eps.clone()),
            limit: Box::new(Rational::one()),
        });
    }
    let required = required_height(e, eps)?;
    for (i, t) in castle.towers().iter().enumerate() {
        if t.height < required {
            return Err(ConstructionError::HeightsTooSmall { tower: i, height: t.height, required });
        }
    }
    let half = eps / int(2);
    let mut cycles = Vec::new();
    for t in castle.towers() {
        let n = t.height;
        let inner = sofic_f2_action(e, &half, n - 2)?;
        // relabel so that a becomes j ↦ j+1 on {1..n−2}
        let mut label = vec![0usize; n - 2];
        let mut x = 0usize;
        for j in 0..n - 2 {
            label[x] = j + 1;
            x = inner.a[x] as usize;
        }
        let mut kappa_b = vec![0usize; n - 1];
        for (x, &y) in inner.b.iter().enumerate() {
            kappa_b[label[x]] = label[y as usize];
        }
        let mut pi = vec![0usize; n];
        let mut prev = 0;
        let mut cur = kappa_b[1];
        for _ in 0..n - 3 {
            pi[prev] = cur;
            prev = cur;
            cur = kappa_b[cur];
        }
        pi[prev] = 1;
        pi[1] = n - 1;
        pi[n - 1] = 0;
        cycles.push(pi);
    }
    let permutation = build_tower_permutation(castle, cycles)?;
    let action = permutation.f2_action()?;
    let mu = LevelMeasure::uniform(action.cells());
    let mut fixed_measures = Vec::new();
    for s in e.iter() {
        let m = action.word_map(s)?;
        let fixed = ClopenSet::from_cells(m.cells(), (0..m.cells()).filter(|&x| m.apply(x) == x));
        let measure = fixed.measure(&mu);
        if measure > *eps {
            return Err(ConstructionError::FixedPointBound {
                word: Alphabet::free2().display(s).to_string(),
                count: fixed.count(),
                allowed: eps.to_string(),
            });
        }
        fixed_measures.push((s.clone(), measure));
    }
    let q = word_length_bound(e);
    Ok(AsymptoticallyFree { permutation, fixed_measures, q, letter_power: letter_power_size(q) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecayRow {
    pub depth: usize,
    pub cells: usize,
    /// `min(1, 8|D^q|/N)`, the tolerance handed to the construction.
    #[serde(with = "crate::rational_text")]
    pub bound: Rational,
    /// Largest fixed-point measure over `E` actually achieved.
    #[serde(with = "crate::rational_text")]
    pub achieved: Rational,
    pub constructed: bool,
}

/// Fixed-point measures of single-tower tower permutations of the dyadic odometer over a range of
/// depths. Where no admissible permutation is found the row falls back to `S = T`.
pub fn decay_table(e: &WordSet, depths: std::ops::RangeInclusive<usize>) -> Result<Vec<DecayRow>, ConstructionError> {
    let dq = letter_power_size(word_length_bound(e));
    let mut rows = Vec::new();
    for depth in depths {
        let sys = OdometerSystem::dyadic(depth)?;
        let t = sys.action().generator(0).clone();
        let cells = t.cells();
        let castle = first_return_castle(&t, &ClopenSet::from_cells(cells, [0]))?;
        let bound = std::cmp::min(Rational::one(), int(8 * dq as i64) / int(cells as i64));
        let (achieved, constructed) = match asymp_free_tower_perm(&castle, e, &bound) {
            Ok(af) => (af.max_fixed_measure(), true),
            Err(
                ConstructionError::HeightsTooSmall { .. }
                | ConstructionError::BelowFeasibility { .. }
                | ConstructionError::FixedPointBound { .. },
            ) => {
                let standard: Vec<usize> = (0..cells).map(|j| (j + 1) % cells).collect();
                let tp = build_tower_permutation(&castle, vec![standard])?;
                let action = tp.f2_action()?;
                let mut worst = Rational::zero();
                for s in e.iter() {
                    worst = worst.max(int(action.word_map(s)?.fixed_points() as i64) / int(cells as i64));
                }
                (worst, false)
            }
            Err(other) => return Err(other),
        };
        rows.push(DecayRow { depth, cells, bound, achieved, constructed });
    }
    Ok(rows)
}

/// One letter of a reduced word in `G * H`: a maximal run of `G`-syllables or a power of the
/// `H` generator.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Letter {
    G(Word),
    H(i64),
}

fn letters(w: &Word, h_gen: usize) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::new();
    for s in w.syllables() {
        if s.gen == h_gen {
            out.push(Letter::H(s.exp));
        } else {
            let piece = Word::generator(s.gen, s.exp);
            match out.last_mut() {
                Some(Letter::G(g)) => *g = g.mul(&piece),
                _ => out.push(Letter::G(piece)),
            }
        }
    }
    out
}

/// Data of the extension of the odometer to `G * ℤ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeProductExtension {
    /// `K = [0, M)`.
    pub k_size: usize,
    pub modulus: u64,
    pub quotient_order: usize,
    /// `ρ_g` on `K` for each generator of `G`.
    pub rho: Vec<Vec<u32>>,
    /// `σ_s` for the `H`-letters `s`, as `(s, table)`.
    pub sigma: Vec<(i64, Vec<u32>)>,
    pub tau: Vec<u32>,
    /// Nontrivial words of `F⁻¹F` with their fixed-point counts on `K`.
    pub traces: Vec<(String, usize)>,
    #[serde(with = "crate::rational_text")]
    pub epsilon: Rational,
    pub h0: usize,
    pub attempts: usize,
    /// `A`, multiples of `2^j ≥ M`.
    pub base: ClopenSet,
    /// `T^{h₀}A`, the base of the tower `(F, T^{h₀}A)`.
    pub tower_base: ClopenSet,
    pub system: OdometerSystem,
}

impl FreeProductExtension {
    pub fn action(&self) -> LevelAction {
        self.system.action()
    }
}

fn compose(outer: &[u32], inner: &[u32]) -> Vec<u32> {
    inner.iter().map(|&x| outer[x as usize]).collect()
}

fn invert(p: &[u32]) -> Vec<u32> {
    let mut out = vec![0; p.len()];
    for (x, &y) in p.iter().enumerate() {
        out[y as usize] = x as u32;
    }
    out
}

fn rotation_table(m: usize, s: i64) -> Vec<u32> {
    (0..m).map(|h| (h as i64 + s).rem_euclid(m as i64) as u32).collect()
}

/// Extend the dyadic odometer of `depth` to `G * ℤ`, `G` free on the generators of `alphabet`
/// other than `T`, so that `(F, T^{h₀}A)` is a tower and the invariant measures are unchanged.
pub fn random_conj_extension(
    alphabet: &Alphabet,
    f: &WordSet,
    eps: &Rational,
    depth: usize,
    seed: u64,
) -> Result<FreeProductExtension, ConstructionError> {
    let h_gen = alphabet.index_of("T").ok_or_else(|| ConstructionError::MissingGenerator("T".into()))?;
    let g_gens: Vec<usize> = (0..alphabet.len()).filter(|&g| g != h_gen).collect();
    let ff = f.inverses().product(f);
    let nontrivial: Vec<Word> = ff.iter().filter(|w| !w.is_identity()).cloned().collect();
    let decomposed: Vec<Vec<Letter>> = nontrivial.iter().map(|w| letters(w, h_gen)).collect();
    let longest = decomposed.iter().map(Vec::len).max().unwrap_or(0);
    let limit = Rational::one() / int((ff.len() + longest) as i64);
    if *eps <= Rational::zero() || *eps >= limit {
        return Err(ConstructionError::EpsilonOutOfRange { eps: Box::new(eps.clone()), limit: Box::new(limit) });
    }
    let mut f_g: BTreeSet<Word> = BTreeSet::from([Word::identity()]);
    let mut f_h: BTreeSet<i64> = BTreeSet::from([0]);
    for l in decomposed.iter().flatten() {
        match l {
            Letter::G(g) => {
                f_g.insert(g.clone());
            }
            Letter::H(s) => {
                f_h.insert(*s);
            }
        }
    }
    // G-words are renumbered onto the free generators a, b of the quotient.
    let renumber = |w: &Word| {
        let mut out = Word::identity();
        for s in w.syllables() {
            let idx = g_gens.iter().position(|&g| g == s.gen).expect("G letter");
            out = out.mul(&Word::generator(idx, s.exp));
        }
        out
    };
    let fg2: WordSet = f_g
        .iter()
        .flat_map(|x| f_g.iter().map(move |y| x.mul(y)))
        .filter(|w| !w.is_identity())
        .map(|w| renumber(&w))
        .collect();
    let quotient = sanov_quotient(&fg2, 0, DEFAULT_PRIME_CAP)?;
    let (elements, tables) = quotient.image_group();
    let index = elements.len();
    let fh_set: IntSet = f_h.iter().copied().collect();
    let min_size = (int(2) / (eps * eps)).floor().to_integer().to_usize().unwrap_or(usize::MAX) + 1;
    let mut m = min_size.div_ceil(index) * index;
    while !is_invariant(&IntSet::interval(0, m as i64 - 1), &fh_set, eps)? {
        m += index;
    }
    let rho: Vec<Vec<u32>> = (0..g_gens.len())
        .map(|g| (0..m).map(|k| ((k / index) * index + tables[g][k % index]) as u32).collect())
        .collect();
    let rho_word = |w: &Word| {
        let mut out: Vec<u32> = (0..m as u32).collect();
        for s in renumber(w).syllables() {
            let base = if s.exp > 0 { rho[s.gen].clone() } else { invert(&rho[s.gen]) };
            for _ in 0..s.exp.unsigned_abs() {
                out = compose(&out, &base);
            }
        }
        out
    };
    let sigma: Vec<(i64, Vec<u32>)> = f_h.iter().map(|&s| (s, rotation_table(m, s))).collect();
    let interior: Vec<bool> = (0..m as i64).map(|h| f_h.iter().all(|s| (0..m as i64).contains(&(h + s)))).collect();
    let rho_letters: Vec<(Word, Vec<u32>)> = f_g.iter().map(|g| (g.clone(), rho_word(g))).collect();

    let tries = (int(64) / (Rational::one() - int(ff.len() as i64) * eps)).ceil().to_integer().to_usize().unwrap_or(64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=tries {
        let mut tau: Vec<u32> = (0..m as u32).collect();
        tau.shuffle(&mut rng);
        let tau_inv = invert(&tau);
        let conj: Vec<(Word, Vec<u32>)> =
            rho_letters.iter().map(|(g, p)| (g.clone(), compose(&tau, &compose(p, &tau_inv)))).collect();
        let letter_perm = |l: &Letter| -> &Vec<u32> {
            match l {
                Letter::G(g) => &conj.iter().find(|(w, _)| w == g).expect("collected").1,
                Letter::H(s) => &sigma.iter().find(|(t, _)| t == s).expect("collected").1,
            }
        };
        let allowed = eps * int(m as i64);
        let mut traces = Vec::with_capacity(nontrivial.len());
        let mut ok = true;
        let mut in_w = vec![true; m];
        for (w, ls) in nontrivial.iter().zip(&decomposed) {
            let mut perm: Vec<u32> = (0..m as u32).collect();
            for l in ls.iter().rev() {
                perm = compose(letter_perm(l), &perm);
            }
            let fixed = perm.iter().enumerate().filter(|(x, &y)| *x == y as usize).count();
            if int(fixed as i64) >= allowed {
                ok = false;
                break;
            }
            traces.push((alphabet.display(w).to_string(), fixed));
            for (h, flag) in in_w.iter_mut().enumerate() {
                if !*flag {
                    continue;
                }
                let mut x = h;
                for l in ls.iter().rev() {
                    if matches!(l, Letter::H(_)) && !interior[x] {
                        *flag = false;
                        break;
                    }
                    x = letter_perm(l)[x] as usize;
                }
                if x == h {
                    *flag = false;
                }
            }
        }
        if !ok {
            continue;
        }
        let Some(h0) = in_w.iter().position(|&b| b) else { continue };
        return assemble_extension(
            alphabet, h_gen, &g_gens, depth, m, h0, tau, rho, sigma, traces, eps, attempt, &quotient, index,
        );
    }
    Err(ConstructionError::BudgetExhausted { attempts: tries })
}

#[allow(clippy::too_many_arguments)]
fn assemble_extension(
    alphabet: &Alphabet,
    h_gen: usize,
    g_gens: &[usize],
    depth: usize,
    m: usize,
    h0: usize,
    tau: Vec<u32>,
    rho: Vec<Vec<u32>>,
    sigma: Vec<(i64, Vec<u32>)>,
    traces: Vec<(String, usize)>,
    eps: &Rational,
    attempts: usize,
    quotient: &crate::group::FiniteQuotient,
    index: usize,
) -> Result<FreeProductExtension, ConstructionError> {
    let cells = 1usize << depth;
    let j = m.next_power_of_two();
    if j > cells {
        return Err(ConstructionError::LevelTooShallow { cells, required: j });
    }
    let tau_inv = invert(&tau);
    let mut shifts = vec![vec![0i64; cells]; alphabet.len()];
    shifts[h_gen] = vec![1; cells];
    for (idx, &g) in g_gens.iter().enumerate() {
        let perm = compose(&tau, &compose(&rho[idx], &tau_inv));
        for y in (0..cells).step_by(j) {
            for k in 0..m {
                shifts[g][y + k] = perm[k] as i64 - k as i64;
            }
        }
    }
    let level = CylinderLevel::with_digits(&vec![2; depth])?;
    let system = OdometerSystem::new(level, alphabet.clone(), shifts)?;
    let base = ClopenSet::from_cells(cells, (0..cells).step_by(j));
    let tower_base = ClopenSet::from_cells(cells, (0..cells).step_by(j).map(|y| y + h0));
    let action = system.action();
    if !check_invariant_measure(&LevelMeasure::uniform(cells), action.generators()) {
        return Err(ConstructionError::Level(LevelError::BadMeasure));
    }
    Ok(FreeProductExtension {
        k_size: m,
        modulus: quotient.modulus(),
        quotient_order: index,
        rho,
        sigma,
        tau,
        traces,
        epsilon: eps.clone(),
        h0,
        attempts,
        base,
        tower_base,
        system,
    })
}

/// Whether the translates `sA`, `s ∈ F`, are pairwise disjoint.
pub fn is_tower(f: &WordSet, a: &ClopenSet, action: &LevelAction) -> Result<bool, LevelError> {
    let mut seen = ClopenSet::empty(action.cells());
    for s in f.iter() {
        let img = action.image(s, a)?;
        if !img.is_disjoint(&seen) {
            return Ok(false);
        }
        seen = seen.union(&img);
    }
    Ok(!a.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    /// Exact sample mean of the normalized traces.
    #[serde(with = "crate::rational_text")]
    pub mean: Rational,
    pub std_error: f64,
    pub trials: usize,
    pub n: usize,
}

fn validate_perms(perms: &[Vec<u32>]) -> Result<usize, ConstructionError> {
    let n = perms.first().map_or(0, Vec::len);
    if n == 0
        || !perms.len().is_multiple_of(2)
        || perms.iter().any(|p| p.len() != n || CellMap::new(p.clone()).is_err())
    {
        return Err(ConstructionError::BadPermutations);
    }
    Ok(n)
}

/// Fixed points of `A₁(UA₂U⁻¹)A₃(UA₄U⁻¹)⋯`.
pub fn alternating_fixed_points(perms: &[Vec<u32>], u: &[u32]) -> usize {
    let u_inv = invert(u);
    let n = u.len();
    (0..n)
        .filter(|&x| {
            let mut y = x;
            for (i, p) in perms.iter().enumerate().rev() {
                y = if i % 2 == 1 { u[p[u_inv[y] as usize] as usize] as usize } else { p[y] as usize };
            }
            y == x
        })
        .count()
}

/// Monte-Carlo mean of `tr(A₁(UA₂U*)A₃(UA₄U*)⋯)` over uniformly random permutations `U`.
pub fn cd_trace_montecarlo(perms: &[Vec<u32>], trials: usize, seed: u64) -> Result<TraceEstimate, ConstructionError> {
    let n = validate_perms(perms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<u32> = (0..n as u32).collect();
    let mut total = 0usize;
    let mut sum_sq = 0f64;
    for _ in 0..trials {
        u.shuffle(&mut rng);
        let c = alternating_fixed_points(perms, &u);
        total += c;
        sum_sq += (c as f64 / n as f64).powi(2);
    }
    let trials_r = trials.max(1);
    let mean = int(total as i64) / int((n * trials_r) as i64);
    let mean_f = mean.to_f64().unwrap_or(0.0);
    let var =
        if trials > 1 { ((sum_sq - trials as f64 * mean_f * mean_f) / (trials as f64 - 1.0)).max(0.0) } else { 0.0 };
    Ok(TraceEstimate { mean, std_error: (var / trials_r as f64).sqrt(), trials, n })
}

/// Diagonal action on the product of the factor levels, coordinate 0 varying fastest.
pub fn diagonal_product_level(factors: &[LevelAction]) -> Result<LevelAction, ConstructionError> {
    let first = factors.first().ok_or(ConstructionError::AlphabetMismatch)?;
    if factors.iter().any(|f| f.alphabet() != first.alphabet()) {
        return Err(ConstructionError::AlphabetMismatch);
    }
    let mut total: usize = 1;
    for f in factors {
        total = total.checked_mul(f.cells()).filter(|&t| t <= MAX_CELLS).ok_or(ConstructionError::ProductTooLarge)?;
    }
    let sizes: Vec<usize> = factors.iter().map(LevelAction::cells).collect();
    let generators = (0..first.alphabet().len())
        .map(|g| {
            let image = (0..total).map(|mut x| {
                let mut out = 0;
                let mut stride = 1;
                for (f, &size) in factors.iter().zip(&sizes) {
                    let c = x % size;
                    x /= size;
                    out += f.generator(g).apply(c) * stride;
                    stride *= size;
                }
                out as u32
            });
            CellMap::new(image.collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let weights = (0..total)
        .map(|mut x| {
            let mut w = Rational::one();
            for (f, &size) in factors.iter().zip(&sizes) {
                w *= &f.measure().weights()[x % size];
                x /= size;
            }
            w
        })
        .collect();
    Ok(LevelAction::with_measure(
        first.alphabet().clone(),
        CylinderLevel::new(total)?,
        generators,
        LevelMeasure::new(weights)?,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio;

    fn single_tower(cells: usize) -> Castle {
        first_return_castle(&CellMap::rotation(cells, 1), &ClopenSet::from_cells(cells, [0])).unwrap()
    }

    #[test]
    fn tower_permutation_examples() {
        let c3 = single_tower(3);
        let tp = build_tower_permutation(&c3, vec![vec![1, 2, 0]]).unwrap();
        assert_eq!(tp.map(), c3.map());
        assert_eq!(conjugacy_to_base(&tp), CellMap::identity(3));

        let c4 = single_tower(4);
        // 0 ↦ 2 ↦ 1 ↦ 3 ↦ 0
        let tp = build_tower_permutation(&c4, vec![vec![2, 3, 1, 0]]).unwrap();
        assert_eq!(tp.shift_table(), &vec![2, 2, -1, 1]);
        assert_eq!(tp.map().images(), &[2, 3, 1, 0]);
        assert!(tp.same_orbits());
        let h = conjugacy_to_base(&tp);
        for x in 0..4 {
            assert_eq!(h.apply(tp.map().apply(x)), c4.map().apply(h.apply(x)));
        }
        assert_eq!(
            build_tower_permutation(&c4, vec![vec![3, 2, 0, 1]]),
            Err(ConstructionError::TopNotToBase { tower: 0 })
        );
        assert!(matches!(
            build_tower_permutation(&c4, vec![vec![1, 0, 3, 2]]),
            Err(ConstructionError::NotCyclic { .. })
        ));
    }

    #[test]
    fn sofic_example() {
        let al = Alphabet::free2();
        let e: WordSet = ["a", "b", "a b", "a b a^-1 b^-1"].iter().map(|s| al.parse(s).unwrap()).collect();
        let act = sofic_f2_action(&e, &ratio(1, 4), 120).unwrap();
        let la = act.action().unwrap();
        assert!(la.generator(0).is_single_cycle());
        assert!(la.generator(1).is_single_cycle());
        for s in e.iter() {
            assert!(act.fixed_points(s).unwrap() * 4 <= 120);
        }
        assert!(matches!(sofic_f2_action(&e, &ratio(1, 4), 30), Err(ConstructionError::BelowFeasibility { .. })));
    }

    #[test]
    fn asymp_free_single_tower() {
        let al = Alphabet::free2();
        let e: WordSet = [al.parse("a b").unwrap()].into_iter().collect();
        let af = asymp_free_tower_perm(&single_tower(128), &e, &ratio(1, 2)).unwrap();
        assert!(af.max_fixed_measure() <= ratio(1, 2));
        assert_eq!(af.letter_power, 13);
        let a: WordSet = [al.parse("a").unwrap()].into_iter().collect();
        let af = asymp_free_tower_perm(&single_tower(128), &a, &ratio(1, 2)).unwrap();
        assert!(af.max_fixed_measure().is_zero());
        assert!(matches!(
            asymp_free_tower_perm(&single_tower(64), &e, &ratio(1, 2)),
            Err(ConstructionError::HeightsTooSmall { required: 105, .. })
        ));
    }

    #[test]
    fn decay_bounds_do_not_increase() {
        let al = Alphabet::free2();
        let e: WordSet = ["a b", "a b^-1"].iter().map(|s| al.parse(s).unwrap()).collect();
        let rows = decay_table(&e, 5..=9).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].bound <= pair[0].bound);
        }
        for r in rows.iter().filter(|r| r.constructed) {
            assert!(r.achieved <= r.bound);
        }
    }

    #[test]
    fn extension_with_one_letter_each_side() {
        let al = Alphabet::new(&["a", "T"]).unwrap();
        let f: WordSet = ["a", "T"].iter().map(|s| al.parse(s).unwrap()).collect();
        let ext = random_conj_extension(&al, &f, &ratio(1, 6), 10, 7).unwrap();
        let action = ext.action();
        assert!(action.is_measure_invariant());
        assert!(is_tower(&f, &ext.tower_base, &action).unwrap());
        assert!(ext.traces.iter().all(|(_, c)| ratio(*c as i64, 1) < ratio(ext.k_size as i64, 6)));
        assert!(!ext.traces.iter().any(|(w, _)| w == "e"));
    }

    #[test]
    fn trace_identity_inner_factors() {
        let shift: Vec<u32> = vec![1, 2, 3, 0];
        let id: Vec<u32> = vec![0, 1, 2, 3];
        let est = cd_trace_montecarlo(&[shift.clone(), id.clone()], 50, 1).unwrap();
        assert!(est.mean.is_zero());
        let est = cd_trace_montecarlo(&[id.clone(), id], 50, 1).unwrap();
        assert_eq!(est.mean, Rational::one());
        assert!(cd_trace_montecarlo(&[shift], 5, 1).is_err());
    }

    #[test]
    fn product_with_trivial_factor() {
        let t = LevelAction::new(Alphabet::integers(), CylinderLevel::new(8).unwrap(), vec![CellMap::rotation(8, 1)])
            .unwrap();
        let one =
            LevelAction::new(Alphabet::integers(), CylinderLevel::new(1).unwrap(), vec![CellMap::identity(1)]).unwrap();
        let p = diagonal_product_level(&[t.clone(), one]).unwrap();
        assert_eq!(p.generators(), t.generators());
        assert_eq!(p.measure(), t.measure());
    }
}
