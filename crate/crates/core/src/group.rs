//! Reduced words in free groups, finite subsets, invariance and congruence quotients of F₂.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("generator index {index} out of range for an alphabet of {size}")]
    GeneratorOutOfRange { index: usize, size: usize },
    #[error("malformed word `{0}`")]
    Malformed(String),
    #[error("invalid generator name `{0}`")]
    BadName(String),
    #[error("invariance ratio of an empty set is undefined")]
    EmptySet,
    #[error("tolerance must lie in (0, 1], got {0}")]
    BadTolerance(BigRational),
    #[error("the identity cannot be separated from itself")]
    IdentityInAvoidSet,
    #[error("congruence quotients are only defined on at most two generators")]
    TooManyGenerators,
    #[error("no prime below {cap} keeps every word nontrivial")]
    PrimeCapExceeded { cap: u64 },
}

/// Generator names of a free group. Names are identifiers other than `e`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alphabet {
    names: Vec<String>,
}

impl Alphabet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, GroupError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref();
            let valid = !n.is_empty()
                && n != "e"
                && n.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid || !seen.insert(n.to_string()) {
                return Err(GroupError::BadName(n.to_string()));
            }
            out.push(n.to_string());
        }
        Ok(Alphabet { names: out })
    }

    /// The one-letter alphabet `{T}` used for ℤ-actions.
    pub fn integers() -> Self {
        Alphabet { names: vec!["T".into()] }
    }

    /// The alphabet `{a, b}` of F₂.
    pub fn free2() -> Self {
        Alphabet { names: vec!["a".into(), "b".into()] }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Parses the caret notation, e.g. `"a^2 b^-1 a"`; `"e"` and `""` are the identity.
    pub fn parse(&self, text: &str) -> Result<Word, GroupError> {
        let mut letters = Vec::new();
        for token in text.split_whitespace() {
            if token == "e" {
                continue;
            }
            let (name, exp) = match token.split_once('^') {
                Some((name, exp)) => {
                    let exp: i64 = exp.parse().map_err(|_| GroupError::Malformed(text.to_string()))?;
                    (name, exp)
                }
                None => (token, 1),
            };
            let gen = self.index_of(name).ok_or_else(|| GroupError::UnknownGenerator(name.to_string()))?;
            letters.push((gen, exp));
        }
        reduce_word(self, letters)
    }

    /// Comma-separated words, e.g. `"e, a b^-1, b"`.
    pub fn parse_list(&self, text: &str) -> Result<WordSet, GroupError> {
        text.split(',').map(|w| self.parse(w.trim())).collect()
    }

    pub fn display<'a>(&'a self, word: &'a Word) -> WordDisplay<'a> {
        WordDisplay { alphabet: self, word }
    }

    /// All reduced words of letter length at most `radius`, in shortlex order.
    pub fn ball(&self, radius: usize) -> Vec<Word> {
        let mut out = vec![Word::identity()];
        let mut frontier = vec![Word::identity()];
        for _ in 0..radius {
            let mut next = Vec::new();
            for w in &frontier {
                for g in 0..self.len() {
                    for sign in [1, -1] {
                        let candidate = w.mul(&Word::generator(g, sign));
                        if candidate.letter_len() == w.letter_len() + 1 {
                            next.push(candidate);
                        }
                    }
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// `D^q`: all products of exactly `q` letters from `{g, g⁻¹}`, as a set of reduced words.
    pub fn letter_power(&self, q: usize) -> BTreeSet<Word> {
        self.ball(q).into_iter().filter(|w| w.letter_len() % 2 == q % 2).collect()
    }
}

pub struct WordDisplay<'a> {
    alphabet: &'a Alphabet,
    word: &'a Word,
}

impl fmt::Display for WordDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.word.is_identity() {
            return write!(f, "e");
        }
        for (i, s) in self.word.syllables().iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}", self.alphabet.name(s.gen))?;
            if s.exp != 1 {
                write!(f, "^{}", s.exp)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Syllable {
    pub gen: usize,
    pub exp: i64,
}

/// A reduced word: no zero exponents, no two adjacent syllables on the same generator.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word {
    syllables: Vec<Syllable>,
}

impl Word {
    pub fn identity() -> Self {
        Word { syllables: Vec::new() }
    }

    pub fn generator(gen: usize, exp: i64) -> Self {
        let mut w = Word::identity();
        w.push(gen, exp);
        w
    }

    fn push(&mut self, gen: usize, exp: i64) {
        if exp == 0 {
            return;
        }
        match self.syllables.last_mut() {
            Some(last) if last.gen == gen => {
                last.exp += exp;
                if last.exp == 0 {
                    self.syllables.pop();
                }
            }
            _ => self.syllables.push(Syllable { gen, exp }),
        }
    }

    pub fn syllables(&self) -> &[Syllable] {
        &self.syllables
    }

    pub fn is_identity(&self) -> bool {
        self.syllables.is_empty()
    }

    /// Total number of letters, Σ|exp|.
    pub fn letter_len(&self) -> usize {
        self.syllables.iter().map(|s| s.exp.unsigned_abs() as usize).sum()
    }

    /// Largest generator index used, if any.
    pub fn max_generator(&self) -> Option<usize> {
        self.syllables.iter().map(|s| s.gen).max()
    }

    pub fn mul(&self, other: &Word) -> Word {
        let mut out = self.clone();
        for s in &other.syllables {
            out.push(s.gen, s.exp);
        }
        out
    }

    pub fn inverse(&self) -> Word {
        Word { syllables: self.syllables.iter().rev().map(|s| Syllable { gen: s.gen, exp: -s.exp }).collect() }
    }

    pub fn pow(&self, k: i64) -> Word {
        let base = if k < 0 { self.inverse() } else { self.clone() };
        let mut out = Word::identity();
        for _ in 0..k.unsigned_abs() {
            out = out.mul(&base);
        }
        out
    }

    /// The exponent if this word lies in the cyclic group of `gen`.
    pub fn as_power_of(&self, gen: usize) -> Option<i64> {
        match self.syllables.as_slice() {
            [] => Some(0),
            [s] if s.gen == gen => Some(s.exp),
            _ => None,
        }
    }

    /// Signed letters, left to right.
    pub fn letters(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        self.syllables.iter().flat_map(|s| std::iter::repeat_n((s.gen, s.exp.signum()), s.exp.unsigned_abs() as usize))
    }
}

/// Normal form of a product of `(generator, exponent)` pairs.
pub fn reduce_word<I>(alphabet: &Alphabet, letters: I) -> Result<Word, GroupError>
where
    I: IntoIterator<Item = (usize, i64)>,
{
    let mut w = Word::identity();
    for (gen, exp) in letters {
        if gen >= alphabet.len() {
            return Err(GroupError::GeneratorOutOfRange { index: gen, size: alphabet.len() });
        }
        w.push(gen, exp);
    }
    Ok(w)
}

/// Group operation for the element types that finite subsets are built from.
pub trait GroupElement: Clone + Ord + fmt::Debug {
    fn identity() -> Self;
    fn op(&self, other: &Self) -> Self;
    fn inv(&self) -> Self;
}

impl GroupElement for Word {
    fn identity() -> Self {
        Word::identity()
    }
    fn op(&self, other: &Self) -> Self {
        self.mul(other)
    }
    fn inv(&self) -> Self {
        self.inverse()
    }
}

impl GroupElement for i64 {
    fn identity() -> Self {
        0
    }
    fn op(&self, other: &Self) -> Self {
        self + other
    }
    fn inv(&self) -> Self {
        -self
    }
}

/// Operations shared by the two finite-subset representations.
pub trait FiniteSubset: Sized {
    type Elem: GroupElement;

    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn contains(&self, x: &Self::Elem) -> bool;
    fn with_identity(&self) -> Self;
    /// `F^E = {g : sg ∈ F for all s ∈ E}`.
    fn shrink_by(&self, e: &Self) -> Self;
}

/// Finite subset of a free group (or of any [`GroupElement`] type).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ElementSet<G: GroupElement> {
    elems: BTreeSet<G>,
}

pub type WordSet = ElementSet<Word>;

impl<G: GroupElement> ElementSet<G> {
    pub fn new() -> Self {
        ElementSet { elems: BTreeSet::new() }
    }

    pub fn insert(&mut self, g: G) -> bool {
        self.elems.insert(g)
    }

    pub fn iter(&self) -> impl Iterator<Item = &G> + '_ {
        self.elems.iter()
    }

    pub fn as_set(&self) -> &BTreeSet<G> {
        &self.elems
    }

    /// `{st : s ∈ self, t ∈ other}`.
    pub fn product(&self, other: &Self) -> Self {
        let mut out = Self::new();
        for s in &self.elems {
            for t in &other.elems {
                out.insert(s.op(t));
            }
        }
        out
    }

    pub fn inverses(&self) -> Self {
        self.elems.iter().map(|g| g.inv()).collect()
    }

    pub fn union(&self, other: &Self) -> Self {
        self.elems.union(&other.elems).cloned().collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.elems.iter().all(|g| self.elems.contains(&g.inv()))
    }
}

impl<G: GroupElement> FromIterator<G> for ElementSet<G> {
    fn from_iter<I: IntoIterator<Item = G>>(iter: I) -> Self {
        ElementSet { elems: iter.into_iter().collect() }
    }
}

impl<G: GroupElement> FiniteSubset for ElementSet<G> {
    type Elem = G;

    fn len(&self) -> usize {
        self.elems.len()
    }

    fn contains(&self, x: &G) -> bool {
        self.elems.contains(x)
    }

    fn with_identity(&self) -> Self {
        let mut out = self.clone();
        out.insert(G::identity());
        out
    }

    fn shrink_by(&self, e: &Self) -> Self {
        let Some(first) = e.elems.iter().next() else {
            // An empty intersection is the whole group; there is no finite answer, so
            // the convention here is F itself.
            return self.clone();
        };
        let first_inv = first.inv();
        self.elems
            .iter()
            .map(|f| first_inv.op(f))
            .filter(|g| e.elems.iter().all(|s| self.elems.contains(&s.op(g))))
            .collect()
    }
}

/// Finite subset of ℤ stored as sorted, disjoint, non-adjacent closed runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntSet {
    runs: Vec<(i64, i64)>,
}

impl IntSet {
    pub fn empty() -> Self {
        IntSet { runs: Vec::new() }
    }

    /// `{lo, …, hi}`; empty when `hi < lo`.
    pub fn interval(lo: i64, hi: i64) -> Self {
        if hi < lo {
            IntSet::empty()
        } else {
            IntSet { runs: vec![(lo, hi)] }
        }
    }

    pub fn from_runs<I: IntoIterator<Item = (i64, i64)>>(runs: I) -> Self {
        let mut v: Vec<(i64, i64)> = runs.into_iter().filter(|(a, b)| a <= b).collect();
        v.sort_unstable();
        let mut out: Vec<(i64, i64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match out.last_mut() {
                Some(last) if a <= last.1 + 1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        IntSet { runs: out }
    }

    pub fn runs(&self) -> &[(i64, i64)] {
        &self.runs
    }

    pub fn min(&self) -> Option<i64> {
        self.runs.first().map(|r| r.0)
    }

    pub fn max(&self) -> Option<i64> {
        self.runs.last().map(|r| r.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        self.runs.iter().flat_map(|&(a, b)| a..=b)
    }

    pub fn shift(&self, k: i64) -> Self {
        IntSet { runs: self.runs.iter().map(|&(a, b)| (a + k, b + k)).collect() }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.runs.len() && j < other.runs.len() {
            let (a1, b1) = self.runs[i];
            let (a2, b2) = other.runs[j];
            let lo = a1.max(a2);
            let hi = b1.min(b2);
            if lo <= hi {
                out.push((lo, hi));
            }
            if b1 < b2 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntSet { runs: out }
    }

    pub fn union(&self, other: &Self) -> Self {
        IntSet::from_runs(self.runs.iter().chain(other.runs.iter()).copied())
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        let mut j = 0;
        for &(a, b) in &self.runs {
            let mut lo = a;
            while j < other.runs.len() && other.runs[j].1 < lo {
                j += 1;
            }
            let mut k = j;
            while lo <= b {
                match other.runs.get(k) {
                    Some(&(c, d)) if c <= b => {
                        if c > lo {
                            out.push((lo, c - 1));
                        }
                        lo = lo.max(d + 1);
                        k += 1;
                    }
                    _ => {
                        out.push((lo, b));
                        break;
                    }
                }
            }
        }
        IntSet { runs: out }
    }

    /// Minkowski sum `E + F`.
    pub fn sumset(&self, other: &Self) -> Self {
        IntSet::from_runs(self.runs.iter().flat_map(|&(a, b)| other.runs.iter().map(move |&(c, d)| (a + c, b + d))))
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.difference(other).is_empty()
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.intersect(other).is_empty()
    }
}

impl FromIterator<i64> for IntSet {
    fn from_iter<I: IntoIterator<Item = i64>>(iter: I) -> Self {
        IntSet::from_runs(iter.into_iter().map(|x| (x, x)))
    }
}

impl FiniteSubset for IntSet {
    type Elem = i64;

    fn len(&self) -> usize {
        self.runs.iter().map(|(a, b)| (b - a + 1) as usize).sum()
    }

    fn contains(&self, x: &i64) -> bool {
        match self.runs.binary_search_by(|&(a, _)| a.cmp(x)) {
            Ok(_) => true,
            Err(0) => false,
            Err(i) => self.runs[i - 1].1 >= *x,
        }
    }

    fn with_identity(&self) -> Self {
        self.union(&IntSet::interval(0, 0))
    }

    fn shrink_by(&self, e: &Self) -> Self {
        let mut acc: Option<IntSet> = None;
        for s in e.iter() {
            let shifted = self.shift(-s);
            acc = Some(match acc {
                None => shifted,
                Some(a) => a.intersect(&shifted),
            });
            if acc.as_ref().is_some_and(|a| a.is_empty()) {
                break;
            }
        }
        acc.unwrap_or_else(|| self.clone())
    }
}

/// `|F^{E∪{e}}| ≥ (1−δ)|F|`, compared exactly.
pub fn is_invariant<S: FiniteSubset>(f: &S, e: &S, delta: &BigRational) -> Result<bool, GroupError> {
    if f.is_empty() {
        return Err(GroupError::EmptySet);
    }
    if !delta.is_positive() || *delta > BigRational::one() {
        return Err(GroupError::BadTolerance(delta.clone()));
    }
    let kept = f.shrink_by(&e.with_identity()).len();
    let lhs = BigRational::from_integer(BigInt::from(kept));
    let rhs = (BigRational::one() - delta) * BigRational::from_integer(BigInt::from(f.len()));
    Ok(lhs >= rhs)
}

pub type Mat2 = [[u64; 2]; 2];

fn mat_mul(x: &Mat2, y: &Mat2, p: u64) -> Mat2 {
    let mut out = [[0u64; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (x[i][0] * y[0][j] + x[i][1] * y[1][j]) % p;
        }
    }
    out
}

fn mat_pow(m: &Mat2, mut k: u64, p: u64) -> Mat2 {
    let mut base = *m;
    let mut acc = IDENTITY;
    while k > 0 {
        if k & 1 == 1 {
            acc = mat_mul(&acc, &base, p);
        }
        base = mat_mul(&base, &base, p);
        k >>= 1;
    }
    acc
}

/// Inverse of a determinant-one matrix.
fn mat_inv_sl2(m: &Mat2, p: u64) -> Mat2 {
    [[m[1][1], (p - m[0][1]) % p], [(p - m[1][0]) % p, m[0][0]]]
}

pub const IDENTITY: Mat2 = [[1, 0], [0, 1]];

/// Homomorphism from a free group of rank ≤ 2 into SL₂(ℤ/p).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteQuotient {
    p: u64,
    images: Vec<Mat2>,
}

impl FiniteQuotient {
    /// The congruence image of `a ↦ [[1,2],[0,1]]`, `b ↦ [[1,0],[2,1]]` modulo `p`,
    /// restricted to the first `rank` generators.
    pub fn sanov(p: u64, rank: usize) -> Result<Self, GroupError> {
        if rank > 2 {
            return Err(GroupError::TooManyGenerators);
        }
        let all = [[[1, 2 % p], [0, 1]], [[1, 0], [2 % p, 1]]];
        Ok(FiniteQuotient { p, images: all[..rank].to_vec() })
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn images(&self) -> &[Mat2] {
        &self.images
    }

    pub fn eval(&self, w: &Word) -> Mat2 {
        let mut acc = IDENTITY;
        for s in w.syllables() {
            let g = if s.exp > 0 { self.images[s.gen] } else { mat_inv_sl2(&self.images[s.gen], self.p) };
            acc = mat_mul(&acc, &mat_pow(&g, s.exp.unsigned_abs(), self.p), self.p);
        }
        acc
    }

    pub fn is_trivial(&self, w: &Word) -> bool {
        self.eval(w) == IDENTITY
    }

    /// The image group, listed breadth-first from the identity, with the left
    /// multiplication table of each generator: `table[g][h] = index of π(g)·h`.
    pub fn image_group(&self) -> (Vec<Mat2>, Vec<Vec<usize>>) {
        let mut elems = vec![IDENTITY];
        let mut index: BTreeMap<Mat2, usize> = BTreeMap::from([(IDENTITY, 0)]);
        let mut queue = VecDeque::from([IDENTITY]);
        while let Some(h) = queue.pop_front() {
            for g in &self.images {
                for m in [*g, mat_inv_sl2(g, self.p)] {
                    let k = mat_mul(&m, &h, self.p);
                    if let std::collections::btree_map::Entry::Vacant(slot) = index.entry(k) {
                        slot.insert(elems.len());
                        elems.push(k);
                        queue.push_back(k);
                    }
                }
            }
        }
        let tables =
            self.images.iter().map(|g| elems.iter().map(|h| index[&mat_mul(g, h, self.p)]).collect()).collect();
        (elems, tables)
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

pub const DEFAULT_PRIME_CAP: u64 = 10_000;

/// Smallest prime `p ≥ 3` whose congruence quotient keeps every word of `avoid` and every
/// `a^j`, `b^j` (1 ≤ j ≤ `j_max`) away from the identity.
pub fn sanov_quotient(avoid: &WordSet, j_max: u64, cap: u64) -> Result<FiniteQuotient, GroupError> {
    if avoid.contains(&Word::identity()) {
        return Err(GroupError::IdentityInAvoidSet);
    }
    let rank = avoid.iter().filter_map(|w| w.max_generator()).max().map_or(2, |g| g + 1).max(2);
    if rank > 2 {
        return Err(GroupError::TooManyGenerators);
    }
    let mut p = 3;
    while p <= cap {
        if is_prime(p) {
            let q = FiniteQuotient::sanov(p, rank)?;
            let powers_ok = (1..=j_max).all(|j| (0..rank).all(|g| q.eval(&Word::generator(g, j as i64)) != IDENTITY));
            if powers_ok && avoid.iter().all(|w| !q.is_trivial(w)) {
                return Ok(q);
            }
        }
        p += 2;
    }
    Err(GroupError::PrimeCapExceeded { cap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::FromPrimitive;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn cancellation_and_merge() {
        let al = Alphabet::free2();
        let w = reduce_word(&al, [(0, 1), (0, -1)]).unwrap();
        assert!(w.is_identity());
        let w = reduce_word(&al, [(0, 1), (1, 1), (1, -1), (0, 1)]).unwrap();
        assert_eq!(w, Word::generator(0, 2));
        assert!(reduce_word(&al, [(2, 1)]).is_err());
    }

    #[test]
    fn caret_round_trip() {
        let al = Alphabet::free2();
        let w = al.parse("a^2 b^-1 a").unwrap();
        assert_eq!(al.display(&w).to_string(), "a^2 b^-1 a");
        assert_eq!(al.display(&Word::identity()).to_string(), "e");
        assert!(al.parse("c").is_err());
        assert!(al.parse("a^x").is_err());
    }

    #[test]
    fn shrink_intervals() {
        let f = IntSet::interval(0, 9);
        assert_eq!(f.shrink_by(&IntSet::from_iter([0, 1])), IntSet::interval(0, 8));
        let f = IntSet::interval(0, 99);
        assert_eq!(f.shrink_by(&IntSet::from_iter([-1, 0, 1])), IntSet::interval(1, 98));
        let g: IntSet = [3, 7, 8, 20].into_iter().collect();
        assert_eq!(g.shrink_by(&IntSet::from_iter([0])), g);
    }

    #[test]
    fn invariance_thresholds() {
        let f = IntSet::interval(0, 99);
        let e = IntSet::from_iter([-1, 0, 1]);
        assert!(is_invariant(&f, &e, &q(1, 20)).unwrap());
        assert!(!is_invariant(&f, &e, &q(1, 100)).unwrap());
        assert_eq!(is_invariant(&IntSet::empty(), &e, &q(1, 2)), Err(GroupError::EmptySet));
        assert!(is_invariant(&f, &e, &BigRational::from_i64(0).unwrap()).is_err());
    }

    #[test]
    fn free_ball_is_not_invariant() {
        let al = Alphabet::free2();
        let ball: WordSet = al.ball(5).into_iter().collect();
        // sphere sizes 4·3^(k−1)
        assert_eq!(ball.len(), 1 + 4 + 12 + 36 + 108 + 324);
        let gens: WordSet = [0, 1].iter().flat_map(|&g| [Word::generator(g, 1), Word::generator(g, -1)]).collect();
        assert!(!is_invariant(&ball, &gens, &q(1, 10)).unwrap());
    }

    #[test]
    fn sanov_examples() {
        let al = Alphabet::free2();
        let e: WordSet = [al.parse("a").unwrap()].into_iter().collect();
        assert_eq!(sanov_quotient(&e, 1, DEFAULT_PRIME_CAP).unwrap().modulus(), 3);
        let e: WordSet = [al.parse("a^30").unwrap()].into_iter().collect();
        assert_eq!(sanov_quotient(&e, 1, DEFAULT_PRIME_CAP).unwrap().modulus(), 7);
        let e: WordSet = ["a", "b", "a b", "a b a^-1 b^-1"].iter().map(|s| al.parse(s).unwrap()).collect();
        let quot = sanov_quotient(&e, 3, DEFAULT_PRIME_CAP).unwrap();
        assert!(quot.modulus() <= 13);
        assert!(e.iter().all(|w| !quot.is_trivial(w)));
        let with_e: WordSet = [Word::identity()].into_iter().collect();
        assert_eq!(sanov_quotient(&with_e, 1, 100), Err(GroupError::IdentityInAvoidSet));
        let e: WordSet = [al.parse("a^30030").unwrap()].into_iter().collect();
        assert_eq!(sanov_quotient(&e, 1, 13), Err(GroupError::PrimeCapExceeded { cap: 13 }));
    }

    #[test]
    fn sl2_3_has_order_24() {
        let (elems, tables) = FiniteQuotient::sanov(3, 2).unwrap().image_group();
        assert_eq!(elems.len(), 24);
        for t in &tables {
            let mut seen = t.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..24).collect::<Vec<_>>());
        }
    }

    #[test]
    fn intset_algebra() {
        let a = IntSet::from_runs([(0, 5), (10, 12)]);
        let b = IntSet::from_runs([(3, 11)]);
        assert_eq!(a.intersect(&b), IntSet::from_runs([(3, 5), (10, 11)]));
        assert_eq!(a.difference(&b), IntSet::from_runs([(0, 2), (12, 12)]));
        assert_eq!(a.union(&b), IntSet::interval(0, 12));
        assert_eq!(IntSet::from_runs([(0, 2), (3, 4)]), IntSet::interval(0, 4));
        assert!(a.contains(&11) && !a.contains(&7) && !a.contains(&-1));
        assert_eq!(IntSet::interval(-1, 1).sumset(&IntSet::interval(0, 3)), IntSet::interval(-1, 4));
    }
}
