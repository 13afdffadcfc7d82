//! Cylinder-level model of a Cantor system.

use std::fmt;

use fixedbitset::FixedBitSet;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::group::{Alphabet, Word};
use crate::{int, Rational};

/// Largest number of cells a level may have.
pub const MAX_CELLS: usize = 1 << 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LevelError {
    #[error("a level needs at least one cell")]
    NoCells,
    #[error("level would have more than {MAX_CELLS} cells")]
    TooLarge,
    #[error("digit {0} is smaller than 2")]
    BadDigit(u64),
    #[error("cell table is not a bijection of {0} cells")]
    NotBijective(usize),
    #[error("size mismatch: expected {expected} cells, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("weights must be nonnegative and sum to one")]
    BadMeasure,
    #[error("generator index {0} is not part of the action")]
    UndefinedLetter(usize),
    #[error("base set is empty")]
    EmptyBase,
    #[error("cell {0} is never visited from the base")]
    OrbitMissesBase(usize),
    #[error("map cannot be lifted: {0}")]
    NotLiftable(String),
    #[error("malformed bitset encoding")]
    BadEncoding,
}

/// `N` cells with an optional digit structure `N = p₁⋯p_k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CylinderLevel {
    cells: usize,
    digits: Vec<u64>,
}

impl CylinderLevel {
    pub fn new(cells: usize) -> Result<Self, LevelError> {
        if cells == 0 {
            return Err(LevelError::NoCells);
        }
        if cells > MAX_CELLS {
            return Err(LevelError::TooLarge);
        }
        Ok(CylinderLevel { cells, digits: Vec::new() })
    }

    pub fn with_digits(digits: &[u64]) -> Result<Self, LevelError> {
        if digits.is_empty() {
            return Err(LevelError::NoCells);
        }
        let mut n: usize = 1;
        for &d in digits {
            if d < 2 {
                return Err(LevelError::BadDigit(d));
            }
            n = n.checked_mul(d as usize).filter(|&n| n <= MAX_CELLS).ok_or(LevelError::TooLarge)?;
        }
        Ok(CylinderLevel { cells: n, digits: digits.to_vec() })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn digits(&self) -> &[u64] {
        &self.digits
    }

    pub fn depth(&self) -> usize {
        self.digits.len()
    }

    pub fn full(&self) -> ClopenSet {
        ClopenSet::full(self.cells)
    }

    pub fn empty(&self) -> ClopenSet {
        ClopenSet::empty(self.cells)
    }
}

/// A set of cells.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ClopenSet {
    bits: FixedBitSet,
}

impl fmt::Debug for ClopenSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl ClopenSet {
    pub fn empty(cells: usize) -> Self {
        ClopenSet { bits: FixedBitSet::with_capacity(cells) }
    }

    pub fn full(cells: usize) -> Self {
        let mut bits = FixedBitSet::with_capacity(cells);
        bits.insert_range(..);
        ClopenSet { bits }
    }

    pub fn from_cells<I: IntoIterator<Item = usize>>(cells: usize, members: I) -> Self {
        let mut s = ClopenSet::empty(cells);
        for c in members {
            s.insert(c);
        }
        s
    }

    /// Number of cells of the ambient level.
    pub fn universe(&self) -> usize {
        self.bits.len()
    }

    /// Number of member cells.
    pub fn count(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.bits.contains(cell)
    }

    pub fn insert(&mut self, cell: usize) {
        self.bits.insert(cell);
    }

    pub fn remove(&mut self, cell: usize) {
        self.bits.set(cell, false);
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut bits = self.bits.clone();
        bits.union_with(&other.bits);
        ClopenSet { bits }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut bits = self.bits.clone();
        bits.intersect_with(&other.bits);
        ClopenSet { bits }
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut bits = self.bits.clone();
        bits.difference_with(&other.bits);
        ClopenSet { bits }
    }

    pub fn complement(&self) -> Self {
        let mut bits = self.bits.clone();
        bits.toggle_range(..);
        ClopenSet { bits }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits.is_subset(&other.bits)
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.bits.is_disjoint(&other.bits)
    }

    pub fn measure(&self, mu: &LevelMeasure) -> Rational {
        self.iter().map(|c| mu.weights[c].clone()).fold(Rational::zero(), |a, b| a + b)
    }

    /// Counting measure normalised by the number of cells.
    pub fn uniform_measure(&self) -> Rational {
        Rational::new(self.count().into(), self.universe().into())
    }

    /// Little-endian hex: byte `k` holds cells `8k..8k+8`, lowest bit first.
    pub fn to_hex(&self) -> String {
        let mut bytes = vec![0u8; self.universe().div_ceil(8)];
        for c in self.iter() {
            bytes[c / 8] |= 1 << (c % 8);
        }
        hex::encode(bytes)
    }

    pub fn from_hex(cells: usize, text: &str) -> Result<Self, LevelError> {
        let bytes = hex::decode(text).map_err(|_| LevelError::BadEncoding)?;
        if bytes.len() != cells.div_ceil(8) {
            return Err(LevelError::BadEncoding);
        }
        let mut s = ClopenSet::empty(cells);
        for (k, b) in bytes.iter().enumerate() {
            for i in 0..8 {
                if b & (1 << i) != 0 {
                    let c = 8 * k + i;
                    if c >= cells {
                        return Err(LevelError::BadEncoding);
                    }
                    s.insert(c);
                }
            }
        }
        Ok(s)
    }

    /// Pullback along a projection `fine cell ↦ coarse cell`.
    pub fn pullback(&self, projection: &[u32]) -> ClopenSet {
        ClopenSet::from_cells(
            projection.len(),
            projection.iter().enumerate().filter(|(_, &c)| self.contains(c as usize)).map(|(y, _)| y),
        )
    }

    /// Image under a projection onto a level of `coarse_cells` cells.
    pub fn project(&self, projection: &[u32], coarse_cells: usize) -> ClopenSet {
        ClopenSet::from_cells(coarse_cells, self.iter().map(|y| projection[y] as usize))
    }

    /// Product with full factors: cell `(x₀, …, x_{k−1})` is `x₀ + N₀x₁ + …`, and the result is
    /// `X × … × self × … × X` with `self` in coordinate `factor`.
    pub fn cylinder_in_product(&self, sizes: &[usize], factor: usize) -> ClopenSet {
        let total: usize = sizes.iter().product();
        let stride: usize = sizes[..factor].iter().product();
        let n = sizes[factor];
        ClopenSet::from_cells(total, (0..total).filter(|&c| self.contains((c / stride) % n)))
    }
}

#[derive(Serialize, Deserialize)]
struct ClopenRepr {
    cells: usize,
    hex: String,
}

impl Serialize for ClopenSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ClopenRepr { cells: self.universe(), hex: self.to_hex() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClopenSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ClopenRepr::deserialize(d)?;
        ClopenSet::from_hex(r.cells, &r.hex).map_err(D::Error::custom)
    }
}

/// Rational weight per cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelMeasure {
    weights: Vec<Rational>,
}

impl LevelMeasure {
    pub fn uniform(cells: usize) -> Self {
        let w = Rational::new(1.into(), cells.into());
        LevelMeasure { weights: vec![w; cells] }
    }

    pub fn new(weights: Vec<Rational>) -> Result<Self, LevelError> {
        let total = weights.iter().fold(Rational::zero(), |a, b| a + b);
        if weights.is_empty() || weights.iter().any(|w| w.is_negative()) || !total.is_one() {
            return Err(LevelError::BadMeasure);
        }
        Ok(LevelMeasure { weights })
    }

    pub fn weights(&self) -> &[Rational] {
        &self.weights
    }

    pub fn cells(&self) -> usize {
        self.weights.len()
    }
}

/// A permutation of cells together with its inverse.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CellMap {
    image: Vec<u32>,
    preimage: Vec<u32>,
}

impl fmt::Debug for CellMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("CellMap").field(&self.image).finish()
    }
}

impl CellMap {
    pub fn new(image: Vec<u32>) -> Result<Self, LevelError> {
        let n = image.len();
        let mut preimage = vec![u32::MAX; n];
        for (x, &y) in image.iter().enumerate() {
            let y = y as usize;
            if y >= n || preimage[y] != u32::MAX {
                return Err(LevelError::NotBijective(n));
            }
            preimage[y] = x as u32;
        }
        Ok(CellMap { image, preimage })
    }

    pub fn identity(cells: usize) -> Self {
        let image: Vec<u32> = (0..cells as u32).collect();
        CellMap { preimage: image.clone(), image }
    }

    /// `x ↦ x + k mod N`.
    pub fn rotation(cells: usize, k: i64) -> Self {
        let n = cells as i64;
        CellMap::new((0..n).map(|x| (x + k).rem_euclid(n) as u32).collect()).expect("rotation is bijective")
    }

    pub fn cells(&self) -> usize {
        self.image.len()
    }

    pub fn apply(&self, cell: usize) -> usize {
        self.image[cell] as usize
    }

    pub fn apply_inv(&self, cell: usize) -> usize {
        self.preimage[cell] as usize
    }

    pub fn images(&self) -> &[u32] {
        &self.image
    }

    pub fn inverse(&self) -> CellMap {
        CellMap { image: self.preimage.clone(), preimage: self.image.clone() }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &CellMap) -> CellMap {
        let image: Vec<u32> = other.image.iter().map(|&y| self.image[y as usize]).collect();
        let preimage: Vec<u32> = self.preimage.iter().map(|&y| other.preimage[y as usize]).collect();
        CellMap { image, preimage }
    }

    pub fn pow(&self, k: i64) -> CellMap {
        let mut base = if k < 0 { self.inverse() } else { self.clone() };
        let mut e = k.unsigned_abs();
        let mut acc = CellMap::identity(self.cells());
        while e > 0 {
            if e & 1 == 1 {
                acc = base.compose(&acc);
            }
            e >>= 1;
            if e > 0 {
                base = base.compose(&base);
            }
        }
        acc
    }

    pub fn image_set(&self, set: &ClopenSet) -> ClopenSet {
        ClopenSet::from_cells(self.cells(), set.iter().map(|c| self.apply(c)))
    }

    pub fn preimage_set(&self, set: &ClopenSet) -> ClopenSet {
        ClopenSet::from_cells(self.cells(), set.iter().map(|c| self.apply_inv(c)))
    }

    pub fn fixed_points(&self) -> usize {
        self.image.iter().enumerate().filter(|(x, &y)| *x == y as usize).count()
    }

    /// Cycles, each starting at its smallest cell, ordered by that cell.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.cells()];
        let mut out = Vec::new();
        for start in 0..self.cells() {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut x = start;
            while !seen[x] {
                seen[x] = true;
                cycle.push(x);
                x = self.apply(x);
            }
            out.push(cycle);
        }
        out
    }

    pub fn is_single_cycle(&self) -> bool {
        self.cycles().len() == 1
    }
}

/// `x ↦ x+1 mod N` on the level with digits `p_list`.
pub fn odometer_level(p_list: &[u64]) -> Result<(CylinderLevel, CellMap), LevelError> {
    let level = CylinderLevel::with_digits(p_list)?;
    let map = CellMap::rotation(level.cells(), 1);
    Ok((level, map))
}

/// A homeomorphism that is piecewise a power of the odometer: `x ↦ x + shifts[x] mod N`.
pub type ShiftTable = Vec<i64>;

fn shift_map(cells: usize, table: &[i64]) -> Result<CellMap, LevelError> {
    if table.len() != cells {
        return Err(LevelError::SizeMismatch { expected: cells, found: table.len() });
    }
    let n = cells as i64;
    CellMap::new(table.iter().enumerate().map(|(x, k)| (x as i64 + k).rem_euclid(n) as u32).collect())
}

/// Refine a digit level by `extra_digits` more significant digits. Cell `y` of the finer level
/// projects to `y mod N`. Each map is given as a shift table over the odometer and lifts to the
/// same powers on the fibres.
pub fn refine_level(
    level: &CylinderLevel,
    extra_digits: &[u64],
    maps: &[ShiftTable],
) -> Result<(CylinderLevel, Vec<u32>, Vec<CellMap>), LevelError> {
    if level.digits().is_empty() {
        return Err(LevelError::NotLiftable("level has no digit structure".into()));
    }
    let mut digits = level.digits().to_vec();
    digits.extend_from_slice(extra_digits);
    let fine = CylinderLevel::with_digits(&digits)?;
    let n = level.cells();
    let projection: Vec<u32> = (0..fine.cells()).map(|y| (y % n) as u32).collect();
    let mut lifted = Vec::with_capacity(maps.len());
    for table in maps {
        shift_map(n, table).map_err(|e| LevelError::NotLiftable(e.to_string()))?;
        let fine_table: Vec<i64> = (0..fine.cells()).map(|y| table[y % n]).collect();
        lifted.push(shift_map(fine.cells(), &fine_table)?);
    }
    Ok((fine, projection, lifted))
}

/// Exact check that every map preserves every cell weight.
pub fn check_invariant_measure(mu: &LevelMeasure, maps: &[CellMap]) -> bool {
    maps.iter().all(|m| m.cells() == mu.cells() && (0..m.cells()).all(|c| mu.weights[m.apply(c)] == mu.weights[c]))
}

/// A finite group action on the cells of a level, one cell permutation per generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelAction {
    alphabet: Alphabet,
    level: CylinderLevel,
    generators: Vec<CellMap>,
    measure: LevelMeasure,
}

impl LevelAction {
    /// The action with the uniform measure attached.
    pub fn new(alphabet: Alphabet, level: CylinderLevel, generators: Vec<CellMap>) -> Result<Self, LevelError> {
        let measure = LevelMeasure::uniform(level.cells());
        LevelAction::with_measure(alphabet, level, generators, measure)
    }

    pub fn with_measure(
        alphabet: Alphabet,
        level: CylinderLevel,
        generators: Vec<CellMap>,
        measure: LevelMeasure,
    ) -> Result<Self, LevelError> {
        if generators.len() != alphabet.len() {
            return Err(LevelError::SizeMismatch { expected: alphabet.len(), found: generators.len() });
        }
        for g in &generators {
            if g.cells() != level.cells() {
                return Err(LevelError::SizeMismatch { expected: level.cells(), found: g.cells() });
            }
        }
        if measure.cells() != level.cells() {
            return Err(LevelError::SizeMismatch { expected: level.cells(), found: measure.cells() });
        }
        Ok(LevelAction { alphabet, level, generators, measure })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn level(&self) -> &CylinderLevel {
        &self.level
    }

    pub fn cells(&self) -> usize {
        self.level.cells()
    }

    pub fn generators(&self) -> &[CellMap] {
        &self.generators
    }

    pub fn generator(&self, index: usize) -> &CellMap {
        &self.generators[index]
    }

    pub fn measure(&self) -> &LevelMeasure {
        &self.measure
    }

    fn check_word(&self, w: &Word) -> Result<(), LevelError> {
        match w.max_generator() {
            Some(g) if g >= self.generators.len() => Err(LevelError::UndefinedLetter(g)),
            _ => Ok(()),
        }
    }

    pub fn word_map(&self, w: &Word) -> Result<CellMap, LevelError> {
        self.check_word(w)?;
        let mut acc = CellMap::identity(self.cells());
        for s in w.syllables() {
            acc = acc.compose(&self.generators[s.gen].pow(s.exp));
        }
        Ok(acc)
    }

    /// Image of a single cell, letter by letter.
    pub fn apply(&self, w: &Word, cell: usize) -> Result<usize, LevelError> {
        self.check_word(w)?;
        let mut x = cell;
        for s in w.syllables().iter().rev() {
            let g = &self.generators[s.gen];
            for _ in 0..s.exp.unsigned_abs() {
                x = if s.exp > 0 { g.apply(x) } else { g.apply_inv(x) };
            }
        }
        Ok(x)
    }

    pub fn image(&self, w: &Word, set: &ClopenSet) -> Result<ClopenSet, LevelError> {
        Ok(self.word_map(w)?.image_set(set))
    }

    /// `E·V = ⋃_{s∈E} sV`.
    pub fn saturation<'a, I>(&self, e: I, set: &ClopenSet) -> Result<ClopenSet, LevelError>
    where
        I: IntoIterator<Item = &'a Word>,
    {
        let mut out = ClopenSet::empty(self.cells());
        for s in e {
            out = out.union(&self.image(s, set)?);
        }
        Ok(out)
    }

    /// `V^E = {x : sx ∈ V for all s ∈ E}`.
    pub fn shrink<'a, I>(&self, set: &ClopenSet, e: I) -> Result<ClopenSet, LevelError>
    where
        I: IntoIterator<Item = &'a Word>,
    {
        let mut out = ClopenSet::full(self.cells());
        for s in e {
            out = out.intersection(&self.word_map(s)?.preimage_set(set));
        }
        Ok(out)
    }

    pub fn is_measure_invariant(&self) -> bool {
        check_invariant_measure(&self.measure, &self.generators)
    }
}

/// Whether the saturations `E·V` of the given sets are pairwise disjoint.
pub fn check_e_disjoint<'a, I>(sets: &[ClopenSet], e: I, action: &LevelAction) -> Result<bool, LevelError>
where
    I: IntoIterator<Item = &'a Word> + Clone,
{
    let mut seen = ClopenSet::empty(action.cells());
    for v in sets {
        let sat = action.saturation(e.clone(), v)?;
        if !sat.is_disjoint(&seen) {
            return Ok(false);
        }
        seen = seen.union(&sat);
    }
    Ok(true)
}

/// A digit level whose generators are piecewise powers of the odometer `x ↦ x+1`. Such
/// actions lift to every finer level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdometerSystem {
    level: CylinderLevel,
    alphabet: Alphabet,
    shifts: Vec<ShiftTable>,
}

impl OdometerSystem {
    /// The odometer itself, with the single generator `T`.
    pub fn odometer(p_list: &[u64]) -> Result<Self, LevelError> {
        let level = CylinderLevel::with_digits(p_list)?;
        let shifts = vec![vec![1; level.cells()]];
        Ok(OdometerSystem { level, alphabet: Alphabet::integers(), shifts })
    }

    /// `2^depth` cells with the 2-adic digit structure.
    pub fn dyadic(depth: usize) -> Result<Self, LevelError> {
        OdometerSystem::odometer(&vec![2; depth])
    }

    pub fn new(level: CylinderLevel, alphabet: Alphabet, shifts: Vec<ShiftTable>) -> Result<Self, LevelError> {
        if level.digits().is_empty() {
            return Err(LevelError::NotLiftable("level has no digit structure".into()));
        }
        if shifts.len() != alphabet.len() {
            return Err(LevelError::SizeMismatch { expected: alphabet.len(), found: shifts.len() });
        }
        for t in &shifts {
            shift_map(level.cells(), t)?;
        }
        Ok(OdometerSystem { level, alphabet, shifts })
    }

    pub fn level(&self) -> &CylinderLevel {
        &self.level
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn shifts(&self) -> &[ShiftTable] {
        &self.shifts
    }

    pub fn cells(&self) -> usize {
        self.level.cells()
    }

    pub fn action(&self) -> LevelAction {
        let gens =
            self.shifts.iter().map(|t| shift_map(self.level.cells(), t).expect("validated on construction")).collect();
        LevelAction::new(self.alphabet.clone(), self.level.clone(), gens).expect("validated on construction")
    }

    /// The same system `extra_digits` levels deeper, with the projection to this level.
    pub fn refine(&self, extra_digits: &[u64]) -> Result<(OdometerSystem, Vec<u32>), LevelError> {
        let (fine, projection, _) = refine_level(&self.level, extra_digits, &self.shifts)?;
        let n = self.cells();
        let shifts = self.shifts.iter().map(|t| (0..fine.cells()).map(|y| t[y % n]).collect()).collect();
        Ok((OdometerSystem { level: fine, alphabet: self.alphabet.clone(), shifts }, projection))
    }

    /// The same action on a finer 2-adic (or repeated-last-digit) level of the given depth.
    pub fn refine_to_depth(&self, depth: usize) -> Result<(OdometerSystem, Vec<u32>), LevelError> {
        let extra = depth.saturating_sub(self.level.depth());
        let digit = *self.level.digits().last().expect("digit level");
        self.refine(&vec![digit; extra])
    }

    /// Add a generator given by its shift table.
    pub fn with_generator(&self, name: &str, table: ShiftTable) -> Result<OdometerSystem, LevelError> {
        let mut names = self.alphabet.names().to_vec();
        names.push(name.to_string());
        let alphabet = Alphabet::new(&names).map_err(|e| LevelError::NotLiftable(e.to_string()))?;
        let mut shifts = self.shifts.clone();
        shifts.push(table);
        OdometerSystem::new(self.level.clone(), alphabet, shifts)
    }
}

/// One tower `(B, n)` of a castle: the levels `T^j B` for `0 ≤ j < n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tower {
    pub base: ClopenSet,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Castle {
    towers: Vec<Tower>,
    map: CellMap,
}

impl Castle {
    pub fn towers(&self) -> &[Tower] {
        &self.towers
    }

    pub fn map(&self) -> &CellMap {
        &self.map
    }

    pub fn heights(&self) -> Vec<usize> {
        self.towers.iter().map(|t| t.height).collect()
    }

    /// `T^j B_i`.
    pub fn floor(&self, tower: usize, j: usize) -> ClopenSet {
        self.map.pow(j as i64).image_set(&self.towers[tower].base)
    }

    /// For every cell, its `(tower, floor)` coordinates.
    pub fn coordinates(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(usize::MAX, usize::MAX); self.map.cells()];
        for (i, t) in self.towers.iter().enumerate() {
            for b in t.base.iter() {
                let mut x = b;
                for j in 0..t.height {
                    out[x] = (i, j);
                    x = self.map.apply(x);
                }
            }
        }
        out
    }

    pub fn base(&self) -> ClopenSet {
        let mut out = ClopenSet::empty(self.map.cells());
        for t in &self.towers {
            out = out.union(&t.base);
        }
        out
    }
}

/// Towers over `Y` grouped by first-return time.
pub fn first_return_castle(t: &CellMap, y: &ClopenSet) -> Result<Castle, LevelError> {
    if y.is_empty() {
        return Err(LevelError::EmptyBase);
    }
    let n = t.cells();
    let mut covered = vec![false; n];
    let mut by_height: std::collections::BTreeMap<usize, ClopenSet> = Default::default();
    for b in y.iter() {
        let mut x = b;
        let mut h = 0;
        loop {
            covered[x] = true;
            h += 1;
            x = t.apply(x);
            if y.contains(x) {
                break;
            }
        }
        by_height.entry(h).or_insert_with(|| ClopenSet::empty(n)).insert(b);
    }
    if let Some(c) = covered.iter().position(|&v| !v) {
        return Err(LevelError::OrbitMissesBase(c));
    }
    let towers = by_height.into_iter().map(|(height, base)| Tower { base, height }).collect();
    Ok(Castle { towers, map: t.clone() })
}

pub fn gcd_heights(castle: &Castle) -> usize {
    castle.towers.iter().fold(0, |g, t| g.gcd(&t.height))
}

/// The uniform weight of `count` cells out of `cells`.
pub fn fraction(count: usize, cells: usize) -> Rational {
    int(count as i64) / int(cells as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odometer_basics() {
        let (level, t) = odometer_level(&[2, 2, 2]).unwrap();
        assert_eq!(level.cells(), 8);
        assert_eq!(t.apply(7), 0);
        let (level, t) = odometer_level(&[3, 5]).unwrap();
        assert_eq!(level.cells(), 15);
        assert_eq!(t.pow(15), CellMap::identity(15));
        assert!(check_invariant_measure(&LevelMeasure::uniform(15), &[t]));
        assert_eq!(odometer_level(&[1]), Err(LevelError::BadDigit(1)));
        assert_eq!(odometer_level(&[1 << 20, 1 << 20]), Err(LevelError::TooLarge));
    }

    #[test]
    fn castles_from_returns() {
        let t = CellMap::rotation(8, 1);
        let c = first_return_castle(&t, &ClopenSet::from_cells(8, [0])).unwrap();
        assert_eq!(c.heights(), vec![8]);
        let c = first_return_castle(&t, &ClopenSet::from_cells(8, [0, 4])).unwrap();
        assert_eq!(c.heights(), vec![4]);
        assert_eq!(c.towers()[0].base.count(), 2);
        let c = first_return_castle(&t, &ClopenSet::from_cells(8, [0, 1])).unwrap();
        assert_eq!(c.heights(), vec![1, 7]);
        assert_eq!(gcd_heights(&c), 1);
        let two_cycles = CellMap::new(vec![1, 0, 3, 2]).unwrap();
        assert_eq!(
            first_return_castle(&two_cycles, &ClopenSet::from_cells(4, [0])),
            Err(LevelError::OrbitMissesBase(2))
        );
    }

    #[test]
    fn gcd_examples() {
        let t = CellMap::identity(1);
        let mk = |hs: &[usize]| Castle {
            towers: hs.iter().map(|&height| Tower { base: ClopenSet::empty(1), height }).collect(),
            map: t.clone(),
        };
        assert_eq!(gcd_heights(&mk(&[4, 4])), 4);
        assert_eq!(gcd_heights(&mk(&[1, 7])), 1);
        assert_eq!(gcd_heights(&mk(&[6, 10, 15])), 1);
    }

    #[test]
    fn e_disjointness() {
        let (level, t) = odometer_level(&[2, 2, 2, 2]).unwrap();
        let action = LevelAction::new(Alphabet::integers(), level, vec![t]).unwrap();
        let e: Vec<Word> = [-1, 0, 1].iter().map(|&k| Word::generator(0, k)).collect();
        let far = [ClopenSet::from_cells(16, [0]), ClopenSet::from_cells(16, [4])];
        assert!(check_e_disjoint(&far, &e, &action).unwrap());
        let near = [ClopenSet::from_cells(16, [0]), ClopenSet::from_cells(16, [1])];
        assert!(!check_e_disjoint(&near, &e, &action).unwrap());
        let id = [Word::identity()];
        assert!(check_e_disjoint(&near, &id, &action).unwrap());
        assert!(!check_e_disjoint(&[near[0].clone(), near[0].clone()], &id, &action).unwrap());
        assert_eq!(check_e_disjoint(&far, &[Word::generator(1, 1)], &action), Err(LevelError::UndefinedLetter(1)));
    }

    #[test]
    fn nonuniform_measure_detected() {
        let mu = LevelMeasure::new(vec![crate::ratio(1, 2), crate::ratio(1, 4), crate::ratio(1, 4)]).unwrap();
        assert!(!check_invariant_measure(&mu, &[CellMap::rotation(3, 1)]));
        assert!(check_invariant_measure(&mu, &[CellMap::new(vec![0, 2, 1]).unwrap()]));
    }

    #[test]
    fn refinement_commutes() {
        let sys = OdometerSystem::dyadic(3).unwrap();
        let (fine, proj) = sys.refine(&[2]).unwrap();
        assert_eq!(fine.cells(), 16);
        let t = fine.action().generator(0).clone();
        assert_eq!(t, CellMap::rotation(16, 1));
        let coarse = sys.action().generator(0).clone();
        for y in 0..16 {
            assert_eq!(proj[t.apply(y)] as usize, coarse.apply(proj[y] as usize));
        }
        let a = ClopenSet::from_cells(8, [1, 2, 5]);
        let pulled = a.pullback(&proj);
        assert_eq!(pulled.count(), 6);
        assert_eq!(pulled.uniform_measure(), a.uniform_measure());
        assert_eq!(pulled.project(&proj, 8), a);
        let flat = CylinderLevel::new(8).unwrap();
        assert!(matches!(refine_level(&flat, &[2], &[]), Err(LevelError::NotLiftable(_))));
        assert!(matches!(
            refine_level(sys.level(), &[2], &[vec![1, 1, 1, 1, 1, 1, 1, 2]]),
            Err(LevelError::NotLiftable(_))
        ));
    }

    #[test]
    fn hex_round_trip() {
        let a = ClopenSet::from_cells(13, [0, 3, 12]);
        let h = a.to_hex();
        assert_eq!(h, "0910");
        assert_eq!(ClopenSet::from_hex(13, &h).unwrap(), a);
        assert!(ClopenSet::from_hex(13, "09f0").is_err());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ClopenSet>(&json).unwrap(), a);
    }

    #[test]
    fn cycles_and_powers() {
        let m = CellMap::new(vec![1, 2, 0, 4, 3]).unwrap();
        assert_eq!(m.cycles(), vec![vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(m.pow(6), CellMap::identity(5));
        assert_eq!(m.pow(-1), m.inverse());
        assert_eq!(m.pow(-1).compose(&m), CellMap::identity(5));
        assert!(CellMap::new(vec![0, 0]).is_err());
    }
}
