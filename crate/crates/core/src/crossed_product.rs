//! The algebraic crossed product `C(X_N) ⋊ G` of a level action: finite sums `Σ f_s u_s` with
//! `f_s` cell functions, covariance `u_s f u_s* = s·f` and exact rational coefficients.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructions::{build_tower_permutation, ConstructionError};
use crate::group::Alphabet;
use crate::group::{FiniteSubset, Word, WordSet};
use crate::level::{first_return_castle, OdometerSystem};
use crate::level::{CellMap, ClopenSet, LevelAction, LevelError};
use crate::square_divisibility::{
    construct_at_feasibility_depth, EquivalenceData, GridRule, SdError, SdWitness, SubequivalenceWitness,
};
use crate::{int, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CpError {
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error(transparent)]
    Sd(#[from] SdError),
    #[error(transparent)]
    Construction(#[from] ConstructionError),
    #[error("source and image of the subequivalence overlap in {0} cells")]
    Overlap(usize),
    #[error("word {word} is outside the allowed support")]
    WordOutsideSupport { word: String },
    #[error("coefficient of {word} at cell {cell} does not vanish near O1 ⊔ O2")]
    NotAnnihilated { word: String, cell: usize },
    #[error("equivalence data does not assign a word to each of the {0} sets")]
    BadEquivalence(usize),
    #[error("{0} is not unitary")]
    NotUnitary(&'static str),
}

pub type CellFunction = BTreeMap<u32, Rational>;

/// `Σ_s f_s u_s` with no zero coefficient stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CpElement {
    terms: BTreeMap<Word, CellFunction>,
}

impl CpElement {
    pub fn zero() -> Self {
        CpElement::default()
    }

    /// `Σ_{s} f_s u_s` from raw terms, dropping zeros.
    pub fn from_terms<I: IntoIterator<Item = (Word, CellFunction)>>(terms: I) -> Self {
        let mut out = CpElement::zero();
        for (w, f) in terms {
            out.add_term(&w, f.iter().map(|(&c, v)| (c, v.clone())));
        }
        out
    }

    /// `1_A u_e`.
    pub fn indicator(set: &ClopenSet) -> Self {
        CpElement::indicator_word(set, Word::identity())
    }

    /// `1_A u_s`.
    pub fn indicator_word(set: &ClopenSet, word: Word) -> Self {
        let f: CellFunction = set.iter().map(|c| (c as u32, Rational::one())).collect();
        CpElement::from_terms([(word, f)])
    }

    pub fn one(cells: usize) -> Self {
        CpElement::indicator(&ClopenSet::full(cells))
    }

    pub fn terms(&self) -> &BTreeMap<Word, CellFunction> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &Word> + '_ {
        self.terms.keys()
    }

    /// Number of stored `(word, cell)` coefficients.
    pub fn size(&self) -> usize {
        self.terms.values().map(BTreeMap::len).sum()
    }

    fn add_term<I: IntoIterator<Item = (u32, Rational)>>(&mut self, w: &Word, f: I) {
        let entry = self.terms.entry(w.clone()).or_default();
        for (c, v) in f {
            if v.is_zero() {
                continue;
            }
            let slot = entry.entry(c).or_insert_with(Rational::zero);
            *slot += v;
            if slot.is_zero() {
                entry.remove(&c);
            }
        }
        if entry.is_empty() {
            self.terms.remove(w);
        }
    }

    pub fn add(&self, other: &CpElement) -> CpElement {
        let mut out = self.clone();
        for (w, f) in &other.terms {
            out.add_term(w, f.iter().map(|(&c, v)| (c, v.clone())));
        }
        out
    }

    pub fn sub(&self, other: &CpElement) -> CpElement {
        self.add(&other.scale(&-Rational::one()))
    }

    pub fn scale(&self, k: &Rational) -> CpElement {
        if k.is_zero() {
            return CpElement::zero();
        }
        CpElement {
            terms: self.terms.iter().map(|(w, f)| (w.clone(), f.iter().map(|(&c, v)| (c, v * k)).collect())).collect(),
        }
    }

    /// The coefficient of `u_e`.
    pub fn expectation(&self) -> CellFunction {
        self.terms.get(&Word::identity()).cloned().unwrap_or_default()
    }
}

/// Multiplication and adjoints for one level action. Powers of generators are applied through
/// doubling tables.
#[derive(Debug, Clone)]
pub struct CrossedProduct {
    action: LevelAction,
    forward: Vec<Vec<CellMap>>,
    backward: Vec<Vec<CellMap>>,
}

impl CrossedProduct {
    pub fn new(action: LevelAction) -> Self {
        let steps = usize::BITS as usize - action.cells().leading_zeros() as usize + 1;
        let tables = |inverse: bool| -> Vec<Vec<CellMap>> {
            action
                .generators()
                .iter()
                .map(|g| {
                    let mut t = vec![if inverse { g.inverse() } else { g.clone() }];
                    for k in 1..steps {
                        t.push(t[k - 1].compose(&t[k - 1]));
                    }
                    t
                })
                .collect()
        };
        let forward = tables(false);
        let backward = tables(true);
        CrossedProduct { action, forward, backward }
    }

    pub fn action(&self) -> &LevelAction {
        &self.action
    }

    pub fn cells(&self) -> usize {
        self.action.cells()
    }

    fn power(&self, gen: usize, exp: i64, mut x: usize) -> usize {
        let tables = if exp > 0 { &self.forward[gen] } else { &self.backward[gen] };
        let mut e = exp.unsigned_abs();
        let mut k = 0;
        while e > 0 {
            if e & 1 == 1 {
                x = match tables.get(k) {
                    Some(t) => t.apply(x),
                    // exponents beyond the table are rare; square on the fly
                    None => {
                        let mut m = tables[tables.len() - 1].clone();
                        for _ in tables.len() - 1..k {
                            m = m.compose(&m);
                        }
                        m.apply(x)
                    }
                };
            }
            e >>= 1;
            k += 1;
        }
        x
    }

    /// `s·x`.
    pub fn apply(&self, w: &Word, x: usize) -> usize {
        w.syllables().iter().rev().fold(x, |y, s| self.power(s.gen, s.exp, y))
    }

    /// `s⁻¹·x`.
    pub fn apply_inv(&self, w: &Word, x: usize) -> usize {
        w.syllables().iter().fold(x, |y, s| self.power(s.gen, -s.exp, y))
    }

    /// `(f u_s)(g u_t) = f·(s·g) u_{st}`.
    pub fn mul(&self, a: &CpElement, b: &CpElement) -> CpElement {
        let mut out = CpElement::zero();
        for (s, f) in &a.terms {
            for (t, g) in &b.terms {
                let st = s.mul(t);
                let mut acc: Vec<(u32, Rational)> = Vec::new();
                if f.len() <= g.len() {
                    for (&x, fx) in f {
                        if let Some(gy) = g.get(&(self.apply_inv(s, x as usize) as u32)) {
                            acc.push((x, fx * gy));
                        }
                    }
                } else {
                    for (&y, gy) in g {
                        let x = self.apply(s, y as usize) as u32;
                        if let Some(fx) = f.get(&x) {
                            acc.push((x, fx * gy));
                        }
                    }
                }
                out.add_term(&st, acc);
            }
        }
        out
    }

    /// `(f u_s)* = (s⁻¹·f̄) u_{s⁻¹}`; coefficients are real.
    pub fn star(&self, a: &CpElement) -> CpElement {
        let mut out = CpElement::zero();
        for (s, f) in &a.terms {
            let inv = s.inverse();
            let moved: Vec<(u32, Rational)> =
                f.iter().map(|(&x, v)| (self.apply_inv(s, x as usize) as u32, v.clone())).collect();
            out.add_term(&inv, moved);
        }
        out
    }

    pub fn product(&self, factors: &[&CpElement]) -> CpElement {
        let mut acc = CpElement::one(self.cells());
        for f in factors {
            acc = self.mul(&acc, f);
        }
        acc
    }

    pub fn is_unitary(&self, x: &CpElement) -> bool {
        let one = CpElement::one(self.cells());
        let xs = self.star(x);
        self.mul(&xs, x) == one && self.mul(x, &xs) == one
    }

    /// Dense matrix of an element in the permutation representation: `u_s δ_y = δ_{sy}`.
    pub fn to_matrix(&self, a: &CpElement) -> Vec<Vec<Rational>> {
        let n = self.cells();
        let mut m = vec![vec![Rational::zero(); n]; n];
        for (s, f) in &a.terms {
            for (&x, v) in f {
                let y = self.apply_inv(s, x as usize);
                m[x as usize][y] += v;
            }
        }
        m
    }

    /// The self-adjoint unitary exchanging each piece `A_i` with `s_iA_i` and fixing the rest.
    pub fn unitary_from_subequivalence(&self, w: &SubequivalenceWitness) -> Result<CpElement, CpError> {
        let image = w.image(&self.action)?;
        let overlap = w.source.intersection(&image).count();
        if overlap > 0 {
            return Err(CpError::Overlap(overlap));
        }
        let mut out = CpElement::indicator(&w.source.union(&image).complement());
        for p in &w.pieces {
            let moved = self.action.image(&p.word, &p.cells)?;
            out = out.add(&CpElement::indicator_word(&moved, p.word.clone()));
            out = out.add(&CpElement::indicator_word(&p.cells, p.word.inverse()));
        }
        Ok(out)
    }

    /// `e_{p,q} = Σ_k 1_{s_{k,p}C_k} u_{s_{k,p}s_{k,q}⁻¹}` for `m` sets `V_p = ⊔_k s_{k,p}C_k`.
    pub fn matrix_units(&self, eq: &EquivalenceData, m: usize) -> Result<MatrixUnits, CpError> {
        if eq.elements.len() != eq.pieces.len() || eq.elements.iter().any(|row| row.len() != m) {
            return Err(CpError::BadEquivalence(m));
        }
        let mut images: Vec<Vec<ClopenSet>> = Vec::with_capacity(eq.pieces.len());
        for (k, c) in eq.pieces.iter().enumerate() {
            images.push((0..m).map(|p| self.action.image(&eq.elements[k][p], c)).collect::<Result<_, _>>()?);
        }
        let units = (0..m)
            .map(|p| {
                (0..m)
                    .map(|q| {
                        let mut e = CpElement::zero();
                        for (elements, imgs) in eq.elements.iter().zip(&images) {
                            let word = elements[p].mul(&elements[q].inverse());
                            e = e.add(&CpElement::indicator_word(&imgs[p], word));
                        }
                        e
                    })
                    .collect()
            })
            .collect();
        Ok(MatrixUnits { units })
    }

    /// `e_{p,q}e_{r,s} = δ_{q,r}e_{p,s}`, `e_{p,q}* = e_{q,p}` and `Σ_p e_{p,p} = 1_V`.
    pub fn check_matrix_units(&self, mu: &MatrixUnits, v: &ClopenSet) -> bool {
        let m = mu.units.len();
        let mut diag = CpElement::zero();
        for p in 0..m {
            diag = diag.add(&mu.units[p][p]);
            for q in 0..m {
                if self.star(&mu.units[p][q]) != mu.units[q][p] {
                    return false;
                }
                for r in 0..m {
                    for s in 0..m {
                        let prod = self.mul(&mu.units[p][q], &mu.units[r][s]);
                        let expected = if q == r { mu.units[p][s].clone() } else { CpElement::zero() };
                        if prod != expected {
                            return false;
                        }
                    }
                }
            }
        }
        diag == CpElement::indicator(v)
    }

    /// Whether `a·1_Q = 1_Q·a = 0` and every word of `a` lies in `allowed`.
    pub fn check_admissible(&self, a: &CpElement, q: &ClopenSet, allowed: &WordSet) -> Result<(), CpError> {
        let names = self.action.alphabet();
        for (s, f) in &a.terms {
            if !allowed.contains(s) {
                return Err(CpError::WordOutsideSupport { word: names.display(s).to_string() });
            }
            for &x in f.keys() {
                if q.contains(x as usize) || q.contains(self.apply_inv(s, x as usize)) {
                    return Err(CpError::NotAnnihilated { word: names.display(s).to_string(), cell: x as usize });
                }
            }
        }
        Ok(())
    }

    /// The block pattern of `x` relative to `R` and the grid sets.
    pub fn support_pattern(&self, x: &CpElement, w: &SdWitness) -> SupportPattern {
        let size = w.grid.len() + 1;
        let mut block = vec![0usize; self.cells()];
        for (p, set) in w.grid.iter().enumerate() {
            for c in set.iter() {
                block[c] = p + 1;
            }
        }
        let mut entries = vec![vec![false; size]; size];
        for (s, f) in &x.terms {
            for &c in f.keys() {
                let input = self.apply_inv(s, c as usize);
                entries[block[c as usize]][block[input]] = true;
            }
        }
        SupportPattern { n: w.n, entries }
    }

    /// Rotate `b = u*·w·a·u·v` by the interval-shift permutation unitaries and evaluate
    /// `(z₁bz₂)^{n²+1}` symbolically.
    pub fn rotate_to_nilpotent(
        &self,
        a: &CpElement,
        w: &SdWitness,
        o1: &ClopenSet,
        o2: &ClopenSet,
    ) -> Result<NilpotencyOutcome, CpError> {
        self.check_admissible(a, &o1.union(o2), &w.e)?;
        let mut u = CpElement::one(self.cells());
        for sw in &w.cond_i {
            u = self.mul(&u, &self.unitary_from_subequivalence(sw)?);
        }
        let v = self.unitary_from_subequivalence(&w.cond_ii)?;
        let wu = self.unitary_from_subequivalence(&w.cond_iii)?;
        for (name, x) in [("u", &u), ("v", &v), ("w", &wu)] {
            if !self.is_unitary(x) {
                return Err(CpError::NotUnitary(name));
            }
        }
        let b = self.product(&[&self.star(&u), &wu, a, &u, &v]);
        let pattern_b = self.support_pattern(&b, w);
        let units = self.matrix_units(&w.equivalence, w.grid.len())?;
        let n2 = w.grid.len();
        let rest = CpElement::indicator(&w.r);
        let from_perm = |kappa: &[usize]| {
            let mut z = rest.clone();
            for (p, &q) in kappa.iter().enumerate() {
                z = z.add(&units.units[p][q]);
            }
            z
        };
        let z1 = from_perm(&row_shift(w.n));
        let z2 = from_perm(&column_shift(w.n));
        for (name, x) in [("z1", &z1), ("z2", &z2)] {
            if !self.is_unitary(x) {
                return Err(CpError::NotUnitary(name));
            }
        }
        let rotated = self.product(&[&z1, &b, &z2]);
        let pattern_rotated = self.support_pattern(&rotated, w);
        let mut power = rotated.clone();
        let mut vanishes_at = None;
        for k in 1..=n2 + 1 {
            if k > 1 {
                power = self.mul(&power, &rotated);
            }
            if power.is_zero() {
                vanishes_at = Some(k);
                break;
            }
        }
        Ok(NilpotencyOutcome {
            b_annihilates_r: self.mul(&b, &rest).is_zero(),
            v1_annihilates_b: self.mul(&CpElement::indicator(&w.v1), &b).is_zero(),
            block_shape: pattern_b.has_block_shape(),
            strictly_upper: pattern_rotated.is_strictly_upper(),
            nilpotent: power.is_zero(),
            vanishes_at,
            pattern_b,
            pattern_rotated,
            z1,
            z2,
            b,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MatrixUnits {
    pub units: Vec<Vec<CpElement>>,
}

/// 0-based form of a permutation of `{1..n²}` that moves the intervals `starts[i]..starts[i]+len`
/// by `offsets[i]`, with the remaining points matched in increasing order.
fn interval_shift(
    n: usize,
    starts: impl Fn(usize) -> usize,
    len: usize,
    offset: impl Fn(usize) -> usize,
) -> Vec<usize> {
    let m = n * n;
    let mut kappa = vec![usize::MAX; m + 1];
    let mut taken = vec![false; m + 1];
    for i in 1..=n {
        for t in starts(i)..starts(i) + len {
            kappa[t] = t + offset(i);
            taken[t + offset(i)] = true;
        }
    }
    let free_targets: Vec<usize> = (1..=m).filter(|&t| !taken[t]).collect();
    let free_sources: Vec<usize> = (1..=m).filter(|&t| kappa[t] == usize::MAX).collect();
    for (s, t) in free_sources.into_iter().zip(free_targets) {
        kappa[s] = t;
    }
    kappa[1..].iter().map(|&t| t - 1).collect()
}

/// `κ₁`: shifts `{(i−1)(n−1)+2, …, (i−1)(n−1)+n}` up by `i−1`.
pub fn row_shift(n: usize) -> Vec<usize> {
    interval_shift(n, |i| (i - 1) * (n - 1) + 2, n - 1, |i| i - 1)
}

/// `κ₂`: shifts `{(i−1)n+2, …, in}` up by `n−i`.
pub fn column_shift(n: usize) -> Vec<usize> {
    interval_shift(n, |i| (i - 1) * n + 2, n - 1, |i| n - i)
}

/// `(n²+1)×(n²+1)` block pattern, index 0 for `R` and `1 + (i·n + j)` for `V_{i,j}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPattern {
    pub n: usize,
    pub entries: Vec<Vec<bool>>,
}

impl SupportPattern {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn is_strictly_upper(&self) -> bool {
        self.entries.iter().enumerate().all(|(r, row)| row.iter().enumerate().all(|(c, &e)| !e || r < c))
    }

    /// Zero first column, zero rows and columns at the `V_{i,1}`, and no entries between
    /// different rows of the grid.
    pub fn has_block_shape(&self) -> bool {
        let n = self.n;
        let row_of = |idx: usize| (idx - 1) / n;
        let first_col = |idx: usize| idx > 0 && (idx - 1).is_multiple_of(n);
        self.entries.iter().enumerate().all(|(r, row)| {
            row.iter()
                .enumerate()
                .all(|(c, &e)| !e || (c != 0 && !first_col(c) && !first_col(r) && (r == 0 || row_of(r) == row_of(c))))
        })
    }

    /// Boolean matrix product.
    pub fn mul(&self, other: &SupportPattern) -> SupportPattern {
        let m = self.size();
        let entries = (0..m)
            .map(|r| (0..m).map(|c| (0..m).any(|k| self.entries[r][k] && other.entries[k][c])).collect())
            .collect();
        SupportPattern { n: self.n, entries }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|row| row.iter().all(|&e| !e))
    }

    /// Conjugate the block pattern by `κ₁` on rows and `κ₂` on columns, as `z₁·(-)·z₂` does.
    pub fn rotate(&self) -> SupportPattern {
        let (k1, k2) = (row_shift(self.n), column_shift(self.n));
        let m = self.size();
        let mut entries = vec![vec![false; m]; m];
        let row_src = |r: usize| if r == 0 { 0 } else { k1[r - 1] + 1 };
        let mut col_dst = vec![0; m];
        for (q, &t) in k2.iter().enumerate() {
            col_dst[q + 1] = t + 1;
        }
        for (r, row) in entries.iter_mut().enumerate() {
            for c in 0..m {
                row[col_dst[c]] = self.entries[row_src(r)][c];
            }
        }
        SupportPattern { n: self.n, entries }
    }
}

/// Result of the rotation: the elements involved, their patterns and the nilpotency verdict.
#[derive(Debug, Clone)]
pub struct NilpotencyOutcome {
    pub b: CpElement,
    pub z1: CpElement,
    pub z2: CpElement,
    pub pattern_b: SupportPattern,
    pub pattern_rotated: SupportPattern,
    pub b_annihilates_r: bool,
    pub v1_annihilates_b: bool,
    pub block_shape: bool,
    pub strictly_upper: bool,
    pub nilpotent: bool,
    /// Least `k` with `(z₁bz₂)^k = 0`.
    pub vanishes_at: Option<usize>,
}

/// An `F₂ = ⟨T, S⟩` witness over the dyadic odometer, ready for [`CrossedProduct::rotate_to_nilpotent`].
#[derive(Debug, Clone)]
pub struct NilpotencyInstance {
    pub cp: CrossedProduct,
    pub witness: SdWitness,
    pub o1: ClopenSet,
    pub o2: ClopenSet,
}

impl NilpotencyInstance {
    pub fn forbidden(&self) -> ClopenSet {
        self.o1.union(&self.o2)
    }

    /// A random admissible element with words from the witnessed set.
    pub fn random_a(&self, max_words: usize, seed: u64) -> CpElement {
        random_admissible_element(&self.cp, &self.witness.e, &self.forbidden(), max_words, seed)
    }

    pub fn run(&self, a: &CpElement) -> Result<NilpotencyOutcome, CpError> {
        self.cp.rotate_to_nilpotent(a, &self.witness, &self.o1, &self.o2)
    }
}

/// Residues mod 16 of `O₁` and `O₂` in the standard instance; the rest, `{0, 1, 2}`, carries `a`.
pub const STANDARD_O1: [usize; 9] = [7, 8, 9, 10, 11, 12, 13, 14, 15];
pub const STANDARD_O2: [usize; 4] = [3, 4, 5, 6];

/// `T` the odometer on 16 cells, `S` the tower permutation `0 → 2 → 1 → 3 → 0` on the castle over
/// `{x ≡ 0 mod 4}`, and `E = {e, T^±1, S^±1}`; the `n × n` witness is built at the first feasible
/// depth up to `max_depth`.
pub fn tower_nilpotency_instance(n: usize, max_depth: usize) -> Result<NilpotencyInstance, CpError> {
    let base = OdometerSystem::dyadic(4)?;
    let t = base.action().generator(0).clone();
    let castle = first_return_castle(&t, &ClopenSet::from_cells(16, (0..16).step_by(4)))?;
    let towers = castle.towers().len();
    let tp = build_tower_permutation(&castle, vec![vec![2, 3, 1, 0]; towers])?;
    let sys = OdometerSystem::new(
        base.level().clone(),
        Alphabet::free2(),
        vec![base.shifts()[0].clone(), tp.shift_table().clone()],
    )?;
    let e: WordSet = [
        Word::identity(),
        Word::generator(0, 1),
        Word::generator(0, -1),
        Word::generator(1, 1),
        Word::generator(1, -1),
    ]
    .into_iter()
    .collect();
    let o1 = ClopenSet::from_cells(16, STANDARD_O1);
    let o2 = ClopenSet::from_cells(16, STANDARD_O2);
    let rw = construct_at_feasibility_depth(&sys, &o1, &o2, &e, GridRule::Fixed(n), max_depth)?;
    Ok(NilpotencyInstance { cp: CrossedProduct::new(rw.system.action()), witness: rw.witness, o1: rw.o1, o2: rw.o2 })
}

/// A random `a = Σ f_s u_s` with at most `max_words` words from `allowed` and small integer
/// coefficients on cells `x` with `x ∉ Q` and `s⁻¹x ∉ Q`.
pub fn random_admissible_element(
    cp: &CrossedProduct,
    allowed: &WordSet,
    q: &ClopenSet,
    max_words: usize,
    seed: u64,
) -> CpElement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<&Word> = allowed.iter().collect();
    words.shuffle(&mut rng);
    let count = rng.gen_range(1..=max_words.max(1).min(words.len().max(1)));
    let mut terms = Vec::new();
    for s in words.into_iter().take(count) {
        let cells: Vec<usize> =
            (0..cp.cells()).filter(|&x| !q.contains(x) && !q.contains(cp.apply_inv(s, x))).collect();
        let keep = rng.gen_range(1..=cells.len().max(1));
        let f: CellFunction = cells
            .into_iter()
            .choose_multiple(&mut rng, keep)
            .into_iter()
            .map(|x| (x as u32, int(rng.gen_range(-3i64..=3))))
            .collect();
        terms.push((s.clone(), f));
    }
    CpElement::from_terms(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::CylinderLevel;
    use crate::square_divisibility::Piece;

    fn cycle(n: usize) -> CrossedProduct {
        CrossedProduct::new(
            LevelAction::new(Alphabet::integers(), CylinderLevel::new(n).unwrap(), vec![CellMap::rotation(n, 1)])
                .unwrap(),
        )
    }

    #[test]
    fn isometry_and_expectation() {
        let cp = cycle(8);
        let a = ClopenSet::from_cells(8, [1, 2]);
        let x = CpElement::indicator_word(&a, Word::generator(0, 3));
        let xx = cp.mul(&cp.star(&x), &x);
        assert_eq!(xx, CpElement::indicator(&ClopenSet::from_cells(8, [6, 7])));
        assert!(x.expectation().is_empty());
        let f = CpElement::indicator(&a);
        assert_eq!(f.expectation().len(), 2);
    }

    #[test]
    fn exchange_unitary_on_a_cycle() {
        let cp = cycle(8);
        let w = SubequivalenceWitness {
            source: ClopenSet::from_cells(8, [0]),
            target: ClopenSet::from_cells(8, [5]),
            pieces: vec![Piece { word: Word::generator(0, 5), cells: ClopenSet::from_cells(8, [0]) }],
        };
        let u = cp.unitary_from_subequivalence(&w).unwrap();
        let words: Vec<_> = u.words().cloned().collect();
        assert_eq!(words.len(), 3);
        assert_eq!(cp.star(&u), u);
        assert_eq!(cp.mul(&u, &u), CpElement::one(8));
        let conj = cp.product(&[&u, &CpElement::indicator(&w.source), &u]);
        assert_eq!(conj, CpElement::indicator(&w.target));
        let empty = SubequivalenceWitness::trivial(8);
        assert_eq!(cp.unitary_from_subequivalence(&empty).unwrap(), CpElement::one(8));
    }

    #[test]
    fn kappa_intervals() {
        assert_eq!(row_shift(3), vec![0, 1, 2, 4, 5, 7, 8, 3, 6]);
        assert_eq!(column_shift(3), vec![0, 3, 4, 1, 5, 6, 2, 7, 8]);
        for n in 1..6 {
            let mut k = row_shift(n);
            k.sort();
            assert_eq!(k, (0..n * n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn block_shape_rotates_to_upper() {
        let n = 3;
        let m = n * n + 1;
        let off_v1 = |i: usize| i > 0 && !(i - 1).is_multiple_of(n);
        let entries = (0..m)
            .map(|r| (0..m).map(|c| off_v1(c) && (r == 0 || (off_v1(r) && (r - 1) / n == (c - 1) / n))).collect())
            .collect();
        let p = SupportPattern { n, entries };
        assert!(p.has_block_shape());
        let rot = p.rotate();
        assert!(rot.is_strictly_upper());
        let mut acc = rot.clone();
        for _ in 0..n * n {
            acc = acc.mul(&rot);
        }
        assert!(acc.is_zero());
    }

    fn random_action(cells: usize, seed: u64) -> CrossedProduct {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gens = (0..2)
            .map(|_| {
                let mut p: Vec<u32> = (0..cells as u32).collect();
                p.shuffle(&mut rng);
                CellMap::new(p).unwrap()
            })
            .collect();
        CrossedProduct::new(LevelAction::new(Alphabet::free2(), CylinderLevel::new(cells).unwrap(), gens).unwrap())
    }

    fn random_element(cp: &CrossedProduct, rng: &mut ChaCha8Rng) -> CpElement {
        let ball = cp.action().alphabet().ball(2);
        let mut terms = Vec::new();
        for _ in 0..rng.gen_range(1..4) {
            let w = ball.choose(rng).unwrap().clone();
            let mut f = CellFunction::new();
            for c in 0..cp.cells() as u32 {
                if rng.gen_bool(0.4) {
                    f.insert(c, Rational::new(rng.gen_range(-4..=4).into(), rng.gen_range(1..=3).into()));
                }
            }
            terms.push((w, f));
        }
        CpElement::from_terms(terms)
    }

    fn mat_mul(a: &[Vec<Rational>], b: &[Vec<Rational>]) -> Vec<Vec<Rational>> {
        let n = a.len();
        (0..n)
            .map(|i| (0..n).map(|j| (0..n).fold(Rational::zero(), |acc, k| acc + &a[i][k] * &b[k][j])).collect())
            .collect()
    }

    fn transpose(a: &[Vec<Rational>]) -> Vec<Vec<Rational>> {
        (0..a.len()).map(|i| (0..a.len()).map(|j| a[j][i].clone()).collect()).collect()
    }

    #[test]
    fn products_match_permutation_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..500 {
            let cp = random_action(6, round);
            let (x, y) = (random_element(&cp, &mut rng), random_element(&cp, &mut rng));
            let (mx, my) = (cp.to_matrix(&x), cp.to_matrix(&y));
            assert_eq!(cp.to_matrix(&cp.mul(&x, &y)), mat_mul(&mx, &my));
            assert_eq!(cp.to_matrix(&cp.star(&x)), transpose(&mx));
            assert_eq!(cp.to_matrix(&x.add(&y)), {
                let mut s = mx.clone();
                for i in 0..6 {
                    for j in 0..6 {
                        s[i][j] += &my[i][j];
                    }
                }
                s
            });
        }
    }

    #[test]
    fn expectation_of_positive_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for round in 0..50 {
            let cp = random_action(8, round);
            let x = random_element(&cp, &mut rng);
            let e = cp.mul(&cp.star(&x), &x).expectation();
            assert!(e.values().all(|v| *v >= Rational::zero()));
            let off = CpElement::indicator_word(&ClopenSet::full(8), Word::generator(0, 1));
            assert!(off.expectation().is_empty());
        }
    }

    #[test]
    fn matrix_units_on_sixteen_cycle() {
        let cp = cycle(16);
        let single =
            EquivalenceData { pieces: vec![ClopenSet::from_cells(16, [3, 4])], elements: vec![vec![Word::identity()]] };
        let mu = cp.matrix_units(&single, 1).unwrap();
        assert_eq!(mu.units[0][0], CpElement::indicator(&ClopenSet::from_cells(16, [3, 4])));
        let data = EquivalenceData {
            pieces: vec![ClopenSet::from_cells(16, [0, 12]), ClopenSet::from_cells(16, [8])],
            elements: vec![
                (0..4).map(|p| Word::generator(0, p)).collect(),
                (0..4).map(|p| Word::generator(0, -p)).collect(),
            ],
        };
        let mu = cp.matrix_units(&data, 4).unwrap();
        let mut v = ClopenSet::empty(16);
        for p in 0..4 {
            v = v.union(&ClopenSet::from_cells(16, [p, p + 12, 8 - p]));
        }
        assert!(cp.check_matrix_units(&mu, &v));
        for p in 0..4 {
            for q in 0..4 {
                let e = &mu.units[p][q];
                assert_eq!(cp.mul(&cp.star(e), e), mu.units[q][q]);
            }
        }
        assert_eq!(cp.matrix_units(&data, 3).unwrap_err(), CpError::BadEquivalence(3));
    }

    #[test]
    fn nilpotent_on_tower_instance() {
        let inst = tower_nilpotency_instance(3, 12).unwrap();
        let a = inst.random_a(3, 1);
        inst.cp.check_admissible(&a, &inst.forbidden(), &inst.witness.e).unwrap();
        let out = inst.run(&a).unwrap();
        assert!(out.b_annihilates_r && out.v1_annihilates_b);
        assert!(out.block_shape && out.strictly_upper);
        assert!(out.nilpotent);
        assert!(out.vanishes_at.unwrap() <= 10);
    }

    #[test]
    fn precondition_names_the_offender() {
        let inst = tower_nilpotency_instance(3, 12).unwrap();
        let q = inst.forbidden();
        let bad_cell = q.iter().next().unwrap();
        let a = CpElement::indicator(&ClopenSet::from_cells(inst.cp.cells(), [bad_cell]));
        assert_eq!(inst.run(&a).unwrap_err(), CpError::NotAnnihilated { word: "e".into(), cell: bad_cell });
        let far = CpElement::indicator_word(&ClopenSet::from_cells(inst.cp.cells(), [0]), Word::generator(0, 5));
        assert_eq!(inst.run(&far).unwrap_err(), CpError::WordOutsideSupport { word: "a^5".into() });
    }
}
