//! Subequivalence witnesses, square-divisibility witnesses, their construction on odometers and
//! exact verification in the clopen setting.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{Alphabet, FiniteSubset, IntSet, Word, WordSet};
use crate::level::{check_e_disjoint, CellMap, ClopenSet, LevelAction, LevelError, OdometerSystem};
use crate::{int, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SdError {
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error("target set {0} is empty")]
    EmptyTarget(&'static str),
    #[error("the level map is not a single cycle")]
    NotSingleCycle,
    #[error("expected a one-generator action, found {0} generators")]
    NotCyclic(usize),
    #[error("grid size must be at least 1")]
    BadGridSize,
    #[error("level of {cells} cells is too shallow; feasible from depth {required_depth:?}")]
    LevelTooShallow { cells: usize, required_depth: Option<usize> },
    #[error("generator {generator} is not piecewise given by base words: {detail}")]
    NotPiecewise { generator: usize, detail: String },
    #[error("base generator {0} is not among the new generators")]
    NoBaseEmbedding(usize),
    #[error("word {word} moves cell {cell} to a place no element of the witness set reaches")]
    NotCovered { word: String, cell: usize },
    #[error("search budget exhausted after {tried} candidates")]
    BudgetExhausted { tried: usize },
    #[error("constructed witness failed verification: {0:?}")]
    Verification(Vec<String>),
    #[error("factor index {factor} out of range for {count} factors")]
    BadFactor { factor: usize, count: usize },
}

/// One piece of a subequivalence: `cells` moved by `word`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub word: Word,
    pub cells: ClopenSet,
}

/// `A ≺ B` witnessed by a partition of `A` into pieces whose translates are disjoint in `B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubequivalenceWitness {
    pub source: ClopenSet,
    pub target: ClopenSet,
    pub pieces: Vec<Piece>,
}

impl SubequivalenceWitness {
    pub fn trivial(cells: usize) -> Self {
        SubequivalenceWitness { source: ClopenSet::empty(cells), target: ClopenSet::empty(cells), pieces: Vec::new() }
    }

    pub fn words(&self) -> WordSet {
        self.pieces.iter().map(|p| p.word.clone()).collect()
    }

    /// The union of translated pieces, `⊔ sᵢAᵢ`.
    pub fn image(&self, action: &LevelAction) -> Result<ClopenSet, LevelError> {
        let mut out = ClopenSet::empty(action.cells());
        for p in &self.pieces {
            out = out.union(&action.image(&p.word, &p.cells)?);
        }
        Ok(out)
    }

    /// Pieces partition the source; translates are pairwise disjoint and inside `within`.
    pub fn lands_in(&self, within: &ClopenSet, action: &LevelAction) -> Result<bool, LevelError> {
        let mut covered = ClopenSet::empty(action.cells());
        let mut hit = ClopenSet::empty(action.cells());
        for p in &self.pieces {
            if !p.cells.is_disjoint(&covered) {
                return Ok(false);
            }
            covered = covered.union(&p.cells);
            let img = action.image(&p.word, &p.cells)?;
            if !img.is_disjoint(&hit) || !img.is_subset(within) {
                return Ok(false);
            }
            hit = hit.union(&img);
        }
        Ok(covered == self.source)
    }

    pub fn is_valid(&self, action: &LevelAction) -> Result<bool, LevelError> {
        self.lands_in(&self.target, action)
    }
}

/// Exact search for `A ≺_F B`: augmenting-path bipartite matching from the cells of `A` to the
/// cells of `B` along edges `x → sx`, `s ∈ F`, preferring elements of `F` in their set order.
pub fn check_subequivalence(
    a: &ClopenSet,
    b: &ClopenSet,
    f: &WordSet,
    action: &LevelAction,
) -> Result<Option<SubequivalenceWitness>, LevelError> {
    let n = action.cells();
    let words: Vec<&Word> = f.iter().collect();
    let maps: Vec<CellMap> = words.iter().map(|w| action.word_map(w)).collect::<Result<_, _>>()?;
    let left: Vec<usize> = a.iter().collect();
    if left.len() > b.count() {
        return Ok(None);
    }
    let adj: Vec<Vec<(usize, usize)>> = left
        .iter()
        .map(|&x| maps.iter().enumerate().map(|(s, m)| (s, m.apply(x))).filter(|&(_, y)| b.contains(y)).collect())
        .collect();
    const FREE: usize = usize::MAX;
    let mut match_l = vec![FREE; left.len()];
    let mut match_r = vec![FREE; n];
    let mut stamp = vec![0usize; n];
    let mut from = vec![(0usize, 0usize); n];
    for root in 0..left.len() {
        let mark = root + 1;
        let mut queue = VecDeque::from([root]);
        let mut free_end = None;
        'bfs: while let Some(u) = queue.pop_front() {
            for (ei, &(_, y)) in adj[u].iter().enumerate() {
                if stamp[y] == mark {
                    continue;
                }
                stamp[y] = mark;
                from[y] = (u, ei);
                if match_r[y] == FREE {
                    free_end = Some(y);
                    break 'bfs;
                }
                queue.push_back(match_r[y]);
            }
        }
        let Some(mut y) = free_end else {
            return Ok(None);
        };
        loop {
            let (u, ei) = from[y];
            let previous = match_l[u];
            match_l[u] = ei;
            match_r[y] = u;
            if u == root {
                break;
            }
            y = adj[u][previous].1;
        }
    }
    let mut grouped: BTreeMap<usize, ClopenSet> = BTreeMap::new();
    for (u, &ei) in match_l.iter().enumerate() {
        let s = adj[u][ei].0;
        grouped.entry(s).or_insert_with(|| ClopenSet::empty(n)).insert(left[u]);
    }
    let pieces = grouped.into_iter().map(|(s, cells)| Piece { word: words[s].clone(), cells }).collect();
    Ok(Some(SubequivalenceWitness { source: a.clone(), target: b.clone(), pieces }))
}

/// A partition `{C_k}` of the first set together with elements `s_{k,m}` such that
/// `V_m = ⊔_k s_{k,m} C_k`; `s_{k,0} = e`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceData {
    pub pieces: Vec<ClopenSet>,
    /// `elements[k][m]`.
    pub elements: Vec<Vec<Word>>,
}

pub fn check_pairwise_equivalence(
    sets: &[ClopenSet],
    data: &EquivalenceData,
    action: &LevelAction,
) -> Result<bool, LevelError> {
    if data.pieces.len() != data.elements.len() || sets.is_empty() {
        return Ok(false);
    }
    if data.elements.iter().any(|row| row.len() != sets.len() || !row[0].is_identity()) {
        return Ok(false);
    }
    let mut all = ClopenSet::empty(action.cells());
    let mut total = 0;
    for (m, v) in sets.iter().enumerate() {
        let mut assembled = ClopenSet::empty(action.cells());
        for (k, c) in data.pieces.iter().enumerate() {
            let img = action.image(&data.elements[k][m], c)?;
            total += img.count();
            assembled = assembled.union(&img);
        }
        if assembled != *v {
            return Ok(false);
        }
        all = all.union(&assembled);
    }
    Ok(all.count() == total)
}

/// Constants of the construction and how the grid was sized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdParams {
    /// `1/(2|F|)` for the covering window `F = {e, T, …, T^{m−1}}` of `O₁` and `O₂`.
    #[serde(with = "crate::rational_text")]
    pub theta: Rational,
    pub covering_window: usize,
    /// Smallest integer greater than `2/θ + 1`.
    pub n_from_theta: usize,
    /// Grid size actually used.
    pub n: usize,
    /// `θ/(20n²)` for the grid size used.
    #[serde(with = "crate::rational_text")]
    pub epsilon: Rational,
    pub tile_length: usize,
    pub tiles_per_class: usize,
}

/// An `n×n` grid `V_{i,j}` (row-major, 0-based) with the subequivalences of the clopen
/// characterisation:
/// (i) `V_{i,1} ≺ O₁ ∩ ⊔_{j≥2} V_{i,j} ∩ B^c`, (ii) `R ≺ O₂ ∩ V ∩ (V₁ ∪ B)^c`, (iii) `B ≺ O₂ ∩ R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SdWitness {
    pub n: usize,
    pub grid: Vec<ClopenSet>,
    pub e: WordSet,
    pub equivalence: EquivalenceData,
    pub v: ClopenSet,
    pub v1: ClopenSet,
    pub r: ClopenSet,
    pub b: ClopenSet,
    pub cond_i: Vec<SubequivalenceWitness>,
    pub cond_ii: SubequivalenceWitness,
    pub cond_iii: SubequivalenceWitness,
    pub params: Option<SdParams>,
}

impl SdWitness {
    pub fn cell(&self, i: usize, j: usize) -> &ClopenSet {
        &self.grid[i * self.n + j]
    }

    /// `⊔_{j≥2} V_{i,j}`.
    pub fn row_tail(&self, i: usize) -> ClopenSet {
        let mut out = ClopenSet::empty(self.v.universe());
        for j in 1..self.n {
            out = out.union(self.cell(i, j));
        }
        out
    }

    /// All subequivalence witnesses, (i) first.
    pub fn subequivalences(&self) -> impl Iterator<Item = &SubequivalenceWitness> + '_ {
        self.cond_i.iter().chain([&self.cond_ii, &self.cond_iii])
    }
}

/// `V`, `V₁`, `R = V^c` and `B = V ∩ (V^E)^c` for a grid.
pub fn derived_sets(
    n: usize,
    grid: &[ClopenSet],
    e: &WordSet,
    action: &LevelAction,
) -> Result<(ClopenSet, ClopenSet, ClopenSet, ClopenSet), LevelError> {
    let cells = action.cells();
    let mut v = ClopenSet::empty(cells);
    let mut v1 = ClopenSet::empty(cells);
    for (idx, s) in grid.iter().enumerate() {
        v = v.union(s);
        if idx % n == 0 {
            v1 = v1.union(s);
        }
    }
    let r = v.complement();
    let b = v.difference(&action.shrink(&v, e.iter())?);
    Ok((v, v1, r, b))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub conditions: Vec<ConditionResult>,
}

impl VerifyReport {
    pub fn passes(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<String> {
        self.conditions.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect()
    }

    fn push(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.conditions.push(ConditionResult { name: name.into(), pass, detail: detail.into() });
    }
}

pub fn verify_sd_witness(
    w: &SdWitness,
    o1: &ClopenSet,
    o2: &ClopenSet,
    action: &LevelAction,
) -> Result<VerifyReport, LevelError> {
    verify_sd_witness_with_e(w, &w.e, o1, o2, action)
}

/// Verification with the boundary taken relative to `e` instead of the stored set.
pub fn verify_sd_witness_with_e(
    w: &SdWitness,
    e: &WordSet,
    o1: &ClopenSet,
    o2: &ClopenSet,
    action: &LevelAction,
) -> Result<VerifyReport, LevelError> {
    let mut report = VerifyReport { conditions: Vec::new() };
    let cells = action.cells();
    let shape_ok = w.n >= 1
        && w.grid.len() == w.n * w.n
        && w.cond_i.len() == w.n
        && w.grid.iter().all(|s| s.universe() == cells)
        && o1.universe() == cells
        && o2.universe() == cells;
    report.push("grid_shape", shape_ok, format!("n = {}, {} sets", w.n, w.grid.len()));
    if !shape_ok {
        return Ok(report);
    }
    let eq = check_pairwise_equivalence(&w.grid, &w.equivalence, action)?;
    report.push("pairwise_equivalence", eq, format!("{} pieces", w.equivalence.pieces.len()));
    let disjoint = check_e_disjoint(&w.grid, e.as_set(), action)?;
    report.push("e_disjoint", disjoint, format!("|E| = {}", e.len()));
    let (v, v1, r, b) = derived_sets(w.n, &w.grid, e, action)?;
    let derived_ok = v == w.v && v1 == w.v1 && r == w.r && b == w.b;
    report.push(
        "derived_sets",
        derived_ok,
        format!("|V| = {}, |R| = {}, |B| = {} (stored |B| = {})", v.count(), r.count(), b.count(), w.b.count()),
    );

    let b_c = b.complement();
    let mut cond_i = true;
    let mut detail = String::new();
    for (i, sw) in w.cond_i.iter().enumerate() {
        let within = o1.intersection(&w.row_tail(i)).intersection(&b_c);
        let ok = sw.source == *w.cell(i, 0) && sw.lands_in(&within, action)?;
        if !ok && detail.is_empty() {
            detail = format!("row {} does not land in O1 ∩ row tail ∩ B^c", i + 1);
        }
        cond_i &= ok;
    }
    report.push("condition_i", cond_i, detail);

    let within_ii = o2.intersection(&v).difference(&v1.union(&b));
    let ok_ii = w.cond_ii.source == r && w.cond_ii.lands_in(&within_ii, action)?;
    report.push("condition_ii", ok_ii, format!("|R| = {}, room {}", r.count(), within_ii.count()));

    let within_iii = o2.intersection(&r);
    let ok_iii = w.cond_iii.source == b && w.cond_iii.lands_in(&within_iii, action)?;
    report.push("condition_iii", ok_iii, format!("|B| = {}, room {}", b.count(), within_iii.count()));
    Ok(report)
}

/// Positions along a single cycle, starting from cell 0.
struct CycleFrame {
    cell_at: Vec<usize>,
    pos: Vec<usize>,
}

impl CycleFrame {
    fn new(t: &CellMap) -> Result<Self, SdError> {
        let n = t.cells();
        let mut cell_at = Vec::with_capacity(n);
        let mut pos = vec![usize::MAX; n];
        let mut x = 0;
        for p in 0..n {
            if pos[x] != usize::MAX {
                return Err(SdError::NotSingleCycle);
            }
            pos[x] = p;
            cell_at.push(x);
            x = t.apply(x);
        }
        if x != 0 {
            return Err(SdError::NotSingleCycle);
        }
        Ok(CycleFrame { cell_at, pos })
    }

    fn len(&self) -> usize {
        self.cell_at.len()
    }

    /// Prefix counts of a set along the cycle.
    fn prefix(&self, set: &ClopenSet) -> Vec<usize> {
        let mut out = vec![0; self.len() + 1];
        for p in 0..self.len() {
            out[p + 1] = out[p] + usize::from(set.contains(self.cell_at[p]));
        }
        out
    }

    fn cells(&self, lo: usize, hi_exclusive: usize, universe: usize) -> ClopenSet {
        ClopenSet::from_cells(universe, self.cell_at[lo..hi_exclusive].iter().copied())
    }

    /// Largest gap: the least `m` with every cell reaching `set` within `m−1` forward steps.
    fn covering_window(&self, set: &ClopenSet) -> Option<usize> {
        let n = self.len();
        let first = (0..n).find(|&p| set.contains(self.cell_at[p]))?;
        let mut worst = 0;
        let mut next = first + n;
        for p in (0..n).rev() {
            if set.contains(self.cell_at[p]) {
                next = p;
            }
            worst = worst.max(next - p);
        }
        Some(worst + 1)
    }
}

/// How the grid size of a construction is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridRule {
    /// The smallest integer greater than `2/θ + 1`.
    FromTheta,
    Fixed(usize),
    /// The smallest `n ≥ 3` (up to the bound) that is feasible.
    Smallest(usize),
}

/// Grid size together with an optional cap on the remainder: with `footprint` set, layouts
/// must satisfy `μ(R) ≤ 5ε`, as in a castle-based construction, instead of only the three
/// comparison conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutRule {
    pub grid: GridRule,
    pub footprint: bool,
}

impl From<GridRule> for LayoutRule {
    fn from(grid: GridRule) -> Self {
        LayoutRule { grid, footprint: false }
    }
}

impl GridRule {
    pub fn with_footprint(self) -> LayoutRule {
        LayoutRule { grid: self, footprint: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    n: usize,
    per_class: usize,
    length: usize,
    lo: i64,
    hi: i64,
}

impl Layout {
    fn classes(&self) -> usize {
        self.n * self.n
    }

    fn gap(&self) -> usize {
        (self.hi - self.lo) as usize
    }

    fn start(&self, tile: usize) -> usize {
        (-self.lo) as usize + tile * (self.length + self.gap())
    }

    fn tiles(&self) -> usize {
        self.classes() * self.per_class
    }

    /// Inclusive-exclusive interior (tile minus its E-boundary).
    fn interior(&self, tile: usize) -> (usize, usize) {
        let c = self.start(tile);
        (c + (-self.lo) as usize, c + self.length - self.hi as usize)
    }
}

/// Exact feasibility of a layout on a single cycle: every required subequivalence reduces to a
/// cardinality comparison because all powers of the cycle are available.
fn layout_feasible(layout: &Layout, cells: usize, p1: &[usize], p2: &[usize]) -> bool {
    let count = |p: &[usize], (a, b): (usize, usize)| p[b] - p[a];
    let n = layout.n;
    let mut o2_in_tiles = 0;
    let mut room_ii = 0;
    let mut room_i = vec![0usize; n];
    for t in 0..layout.tiles() {
        let q = t % layout.classes();
        let (i, j) = (q / n, q % n);
        let c = layout.start(t);
        o2_in_tiles += count(p2, (c, c + layout.length));
        if j > 0 {
            let inner = layout.interior(t);
            room_i[i] += count(p1, inner);
            room_ii += count(p2, inner);
        }
    }
    let v_size = layout.tiles() * layout.length;
    let r_size = cells - v_size;
    let b_size = layout.tiles() * layout.gap();
    let row_size = layout.per_class * layout.length;
    room_i.iter().all(|&room| room >= row_size) && r_size <= room_ii && b_size <= p2[cells] - o2_in_tiles
}

const MAX_PER_CLASS: usize = 4;

/// `max_rest` bounds `|R|`; lengths are tried from the largest down, so `|R|` only grows.
fn search_layout(
    n: usize,
    cells: usize,
    lo: i64,
    hi: i64,
    p1: &[usize],
    p2: &[usize],
    max_rest: usize,
) -> Option<Layout> {
    let gap = (hi - lo) as usize;
    for per_class in 1..=MAX_PER_CLASS {
        let tiles = n * n * per_class;
        let max_len = match (cells / tiles).checked_sub(gap) {
            Some(l) if l > gap => l,
            _ => continue,
        };
        for length in (gap + 1..=max_len).rev() {
            let layout = Layout { n, per_class, length, lo, hi };
            if cells - layout.tiles() * length > max_rest {
                break;
            }
            if layout_feasible(&layout, cells, p1, p2) {
                return Some(layout);
            }
        }
    }
    None
}

fn theta_and_n(window: usize) -> (Rational, usize) {
    let theta = Rational::one() / int(2 * window as i64);
    let bound = int(2) / &theta + Rational::one();
    let n = bound.floor().to_integer().to_usize().expect("small") + 1;
    (theta, n)
}

/// Exponents of a set of words in the one-generator alphabet.
fn integer_exponents(e: &WordSet) -> Result<IntSet, SdError> {
    e.iter()
        .map(|w| w.as_power_of(0).ok_or(SdError::NotCyclic(w.max_generator().unwrap_or(0) + 1)))
        .collect::<Result<IntSet, _>>()
        .map(|s| s.with_identity())
}

struct Prepared {
    frame: CycleFrame,
    window: usize,
    lo: i64,
    hi: i64,
    p1: Vec<usize>,
    p2: Vec<usize>,
}

fn prepare(action: &LevelAction, o1: &ClopenSet, o2: &ClopenSet, e: &WordSet) -> Result<Prepared, SdError> {
    if action.generators().len() != 1 {
        return Err(SdError::NotCyclic(action.generators().len()));
    }
    let exps = integer_exponents(e)?;
    let frame = CycleFrame::new(action.generator(0))?;
    let w1 = frame.covering_window(o1).ok_or(SdError::EmptyTarget("O1"))?;
    let w2 = frame.covering_window(o2).ok_or(SdError::EmptyTarget("O2"))?;
    let (p1, p2) = (frame.prefix(o1), frame.prefix(o2));
    Ok(Prepared { frame, window: w1.max(w2), lo: exps.min().unwrap_or(0), hi: exps.max().unwrap_or(0), p1, p2 })
}

fn grid_sizes(rule: GridRule, window: usize) -> Result<Vec<usize>, SdError> {
    match rule {
        GridRule::FromTheta => Ok(vec![theta_and_n(window).1]),
        GridRule::Fixed(0) => Err(SdError::BadGridSize),
        GridRule::Fixed(n) => Ok(vec![n]),
        GridRule::Smallest(max) => Ok((3..=max.max(3)).collect()),
    }
}

fn find_layout(prep: &Prepared, rule: LayoutRule) -> Result<Option<Layout>, SdError> {
    let cells = prep.frame.len();
    for n in grid_sizes(rule.grid, prep.window)? {
        // 5ε·N = 5N/(40·m·n²) with ε = θ/(20n²) and θ = 1/(2m)
        let max_rest = if rule.footprint { cells / (8 * prep.window * n * n) } else { cells };
        if let Some(l) = search_layout(n, cells, prep.lo, prep.hi, &prep.p1, &prep.p2, max_rest) {
            return Ok(Some(l));
        }
    }
    Ok(None)
}

/// Matches the cells of `src` into `tgt` along the cycle, reusing one shift for as many cells as
/// possible so that few distinct words appear.
fn shift_matching(frame: &CycleFrame, src: &ClopenSet, tgt: &ClopenSet) -> Option<Vec<Piece>> {
    const PAIR_LIMIT: usize = 4_000_000;
    let n = frame.len();
    let mut rs: BTreeSet<usize> = src.iter().map(|c| frame.pos[c]).collect();
    let mut rt: Vec<bool> = vec![false; n];
    let mut rt_list: BTreeSet<usize> = BTreeSet::new();
    for c in tgt.iter() {
        rt[frame.pos[c]] = true;
        rt_list.insert(frame.pos[c]);
    }
    if rs.len() > rt_list.len() {
        return None;
    }
    let mut by_shift: BTreeMap<i64, ClopenSet> = BTreeMap::new();
    let mut counts = vec![0usize; n];
    while let Some(&first) = rs.iter().next() {
        let d = if rs.len() * rt_list.len() <= PAIR_LIMIT {
            counts.iter_mut().for_each(|c| *c = 0);
            for &a in &rs {
                for &t in &rt_list {
                    counts[(t + n - a) % n] += 1;
                }
            }
            let signed = |d: usize| if d > n / 2 { d as i64 - n as i64 } else { d as i64 };
            (0..n).max_by_key(|&d| (counts[d], std::cmp::Reverse(signed(d).abs()))).unwrap()
        } else {
            (rt_list.iter().next().unwrap() + n - first) % n
        };
        let chosen: Vec<usize> = rs.iter().copied().filter(|&a| rt[(a + d) % n]).collect();
        let mut taken = Vec::new();
        for a in chosen {
            let t = (a + d) % n;
            if rt[t] {
                rt[t] = false;
                rt_list.remove(&t);
                taken.push(a);
            }
        }
        for a in &taken {
            rs.remove(a);
        }
        let signed = if d > n / 2 { d as i64 - n as i64 } else { d as i64 };
        let entry = by_shift.entry(signed).or_insert_with(|| ClopenSet::empty(n));
        for a in taken {
            entry.insert(frame.cell_at[a]);
        }
    }
    Some(by_shift.into_iter().map(|(d, cells)| Piece { word: Word::generator(0, d), cells }).collect())
}

fn build_witness(
    prep: &Prepared,
    layout: &Layout,
    o1: &ClopenSet,
    o2: &ClopenSet,
    e: &WordSet,
    action: &LevelAction,
) -> Result<SdWitness, SdError> {
    let cells = action.cells();
    let n = layout.n;
    let classes = layout.classes();
    let mut grid = vec![ClopenSet::empty(cells); classes];
    for t in 0..layout.tiles() {
        let c = layout.start(t);
        grid[t % classes] = grid[t % classes].union(&prep.frame.cells(c, c + layout.length, cells));
    }
    let pieces = (0..layout.per_class)
        .map(|r| {
            let c = layout.start(r * classes);
            prep.frame.cells(c, c + layout.length, cells)
        })
        .collect();
    let elements = (0..layout.per_class)
        .map(|r| {
            let base = layout.start(r * classes) as i64;
            (0..classes).map(|q| Word::generator(0, layout.start(r * classes + q) as i64 - base)).collect()
        })
        .collect();
    let equivalence = EquivalenceData { pieces, elements };
    let (v, v1, r, b) = derived_sets(n, &grid, e, action)?;
    let b_c = b.complement();
    let frame = &prep.frame;
    let make = |src: &ClopenSet, tgt: ClopenSet| -> Result<SubequivalenceWitness, SdError> {
        let pieces =
            shift_matching(frame, src, &tgt).ok_or(SdError::LevelTooShallow { cells, required_depth: None })?;
        Ok(SubequivalenceWitness { source: src.clone(), target: tgt, pieces })
    };
    let mut cond_i = Vec::with_capacity(n);
    for i in 0..n {
        let mut tail = ClopenSet::empty(cells);
        for j in 1..n {
            tail = tail.union(&grid[i * n + j]);
        }
        cond_i.push(make(&grid[i * n], o1.intersection(&tail).intersection(&b_c))?);
    }
    let cond_ii = make(&r, o2.intersection(&v).difference(&v1.union(&b)))?;
    let cond_iii = make(&b, o2.intersection(&r))?;
    let (theta, n_from_theta) = theta_and_n(prep.window);
    let epsilon = &theta / int(20 * (n * n) as i64);
    let params = SdParams {
        theta,
        covering_window: prep.window,
        n_from_theta,
        n,
        epsilon,
        tile_length: layout.length,
        tiles_per_class: layout.per_class,
    };
    let witness =
        SdWitness { n, grid, e: e.clone(), equivalence, v, v1, r, b, cond_i, cond_ii, cond_iii, params: Some(params) };
    let report = verify_sd_witness(&witness, o1, o2, action)?;
    if !report.passes() {
        return Err(SdError::Verification(report.failures()));
    }
    Ok(witness)
}

/// Largest level probed when reporting the depth a construction needs.
pub const PROBE_MAX_CELLS: usize = 1 << 22;

/// Square-divisibility witness for the odometer `T` at the system's own level, with
/// `θ = 1/(2|F|)`, `n` the least integer above `2/θ + 1` and `ε = θ/(20n²)`.
pub fn construct_sd_witness_odometer(
    sys: &OdometerSystem,
    o1: &ClopenSet,
    o2: &ClopenSet,
    e: &WordSet,
) -> Result<SdWitness, SdError> {
    construct_sd_witness_grid(sys, o1, o2, e, GridRule::FromTheta)
}

/// As [`construct_sd_witness_odometer`] with an explicit rule for the grid size.
pub fn construct_sd_witness_grid(
    sys: &OdometerSystem,
    o1: &ClopenSet,
    o2: &ClopenSet,
    e: &WordSet,
    rule: impl Into<LayoutRule>,
) -> Result<SdWitness, SdError> {
    let rule = rule.into();
    let action = sys.action();
    let prep = prepare(&action, o1, o2, e)?;
    match find_layout(&prep, rule)? {
        Some(layout) => build_witness(&prep, &layout, o1, o2, e, &action),
        None => {
            Err(SdError::LevelTooShallow { cells: sys.cells(), required_depth: probe_depth(sys, o1, o2, e, rule)? })
        }
    }
}

fn probe_depth(
    sys: &OdometerSystem,
    o1: &ClopenSet,
    o2: &ClopenSet,
    e: &WordSet,
    rule: LayoutRule,
) -> Result<Option<usize>, SdError> {
    let mut depth = sys.level().depth() + 1;
    loop {
        let (fine, proj) = sys.refine_to_depth(depth)?;
        if fine.cells() > PROBE_MAX_CELLS {
            return Ok(None);
        }
        let prep = prepare(&fine.action(), &o1.pullback(&proj), &o2.pullback(&proj), e)?;
        if find_layout(&prep, rule)?.is_some() {
            return Ok(Some(depth));
        }
        depth += 1;
    }
}

/// A witness built at the first depth where the layout search succeeds.
#[derive(Debug, Clone)]
pub struct RefinedWitness {
    pub system: OdometerSystem,
    pub projection: Vec<u32>,
    pub o1: ClopenSet,
    pub o2: ClopenSet,
    pub witness: SdWitness,
}

/// Displacements `k` with `hx = T^k x` for some cell `x` and some word `h`, relative to the
/// odometer of a system whose generators are piecewise odometer powers.
pub fn displacement_set(sys: &OdometerSystem, words: &WordSet) -> Result<IntSet, SdError> {
    let action = sys.action();
    let n = sys.cells() as i64;
    let mut out = BTreeSet::new();
    for w in words.iter() {
        let m = action.word_map(w)?;
        for x in 0..sys.cells() {
            let d = (m.apply(x) as i64 - x as i64).rem_euclid(n);
            out.insert(if d > n / 2 { d - n } else { d });
        }
    }
    out.insert(0);
    Ok(out.into_iter().collect())
}

/// Every generator of `sys` as a piecewise power of the odometer.
pub fn piecewise_over_odometer(sys: &OdometerSystem) -> Vec<PiecewiseMap> {
    sys.shifts()
        .iter()
        .map(|table| {
            let mut by_shift: BTreeMap<i64, ClopenSet> = BTreeMap::new();
            for (x, &k) in table.iter().enumerate() {
                by_shift.entry(k).or_insert_with(|| ClopenSet::empty(sys.cells())).insert(x);
            }
            PiecewiseMap { pieces: by_shift.into_iter().map(|(k, cells)| (cells, Word::generator(0, k))).collect() }
        })
        .collect()
}

/// Construct a witness for an odometer-based system: the ℤ-witness is built for the displacement
/// set of `e` and then transferred to the system's own generators. Depth grows until feasible.
pub fn construct_at_feasibility_depth(
    sys: &OdometerSystem,
    o1: &ClopenSet,
    o2: &ClopenSet,
    e: &WordSet,
    rule: impl Into<LayoutRule>,
    max_depth: usize,
) -> Result<RefinedWitness, SdError> {
    let rule = rule.into();
    for depth in sys.level().depth()..=max_depth {
        let (fine, projection) = sys.refine_to_depth(depth)?;
        if fine.cells() > PROBE_MAX_CELLS {
            break;
        }
        // displacements wrap around on coarse levels, so they are read off each refinement
        let disp = displacement_set(&fine, e)?;
        let base_e: WordSet = disp.iter().map(|k| Word::generator(0, k)).collect();
        let base = OdometerSystem::odometer(fine.level().digits())?;
        let base_action = base.action();
        let (f1, f2) = (o1.pullback(&projection), o2.pullback(&projection));
        let prep = prepare(&base_action, &f1, &f2, &base_e)?;
        let Some(layout) = find_layout(&prep, rule)? else { continue };
        let zw = build_witness(&prep, &layout, &f1, &f2, &base_e, &base_action)?;
        let is_plain_odometer = fine.alphabet().len() == 1 && fine.shifts()[0].iter().all(|&k| k == 1);
        let witness = if is_plain_odometer && &base_e == e {
            zw
        } else {
            let new_generators = piecewise_over_odometer(&fine);
            let (w, _) = transfer_full_group(&zw, &base_action, &new_generators, fine.alphabet(), e, &f1, &f2)?;
            w
        };
        return Ok(RefinedWitness { system: fine, projection, o1: f1, o2: f2, witness });
    }
    Err(SdError::LevelTooShallow { cells: sys.cells(), required_depth: None })
}

/// A homeomorphism given piecewise by words of a base action on a clopen partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PiecewiseMap {
    pub pieces: Vec<(ClopenSet, Word)>,
}

impl PiecewiseMap {
    fn to_cell_map(&self, base: &LevelAction, generator: usize) -> Result<CellMap, SdError> {
        let n = base.cells();
        let mut image = vec![u32::MAX; n];
        for (set, word) in &self.pieces {
            let m = base.word_map(word)?;
            for x in set.iter() {
                if image[x] != u32::MAX {
                    return Err(SdError::NotPiecewise { generator, detail: format!("cell {x} lies in two pieces") });
                }
                image[x] = m.apply(x) as u32;
            }
        }
        if let Some(x) = image.iter().position(|&y| y == u32::MAX) {
            return Err(SdError::NotPiecewise { generator, detail: format!("cell {x} is in no piece") });
        }
        CellMap::new(image).map_err(|e| SdError::NotPiecewise { generator, detail: e.to_string() })
    }
}

fn translate_word(w: &Word, embedding: &[usize]) -> Word {
    let mut out = Word::identity();
    for s in w.syllables() {
        out = out.mul(&Word::generator(embedding[s.gen], s.exp));
    }
    out
}

/// Move a witness to the action generated by elements of the topological full group of the base
/// action. `new_e` is a set of words in the new generators; every `hx` must equal `sx` for some
/// `s` in the witness set. The boundary shrinks to `V ∩ (V^{new_e})^c` and condition (iii) is
/// restricted accordingly.
pub fn transfer_full_group(
    w: &SdWitness,
    base: &LevelAction,
    new_generators: &[PiecewiseMap],
    new_alphabet: &Alphabet,
    new_e: &WordSet,
    o1: &ClopenSet,
    o2: &ClopenSet,
) -> Result<(SdWitness, LevelAction), SdError> {
    let maps =
        new_generators.iter().enumerate().map(|(g, pm)| pm.to_cell_map(base, g)).collect::<Result<Vec<_>, _>>()?;
    let action = LevelAction::new(new_alphabet.clone(), base.level().clone(), maps)?;
    let embedding = (0..base.alphabet().len())
        .map(|g| {
            let gen_map = base.generator(g);
            (0..action.generators().len()).find(|&h| action.generator(h) == gen_map).ok_or(SdError::NoBaseEmbedding(g))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let old_maps: Vec<CellMap> = w.e.iter().map(|s| base.word_map(s)).collect::<Result<_, _>>()?;
    for h in new_e.iter() {
        let hm = action.word_map(h)?;
        for x in 0..action.cells() {
            if !old_maps.iter().any(|m| m.apply(x) == hm.apply(x)) {
                return Err(SdError::NotCovered { word: new_alphabet.display(h).to_string(), cell: x });
            }
        }
    }
    let (v, v1, r, b) = derived_sets(w.n, &w.grid, new_e, &action)?;
    let tr = |sw: &SubequivalenceWitness, restrict: Option<&ClopenSet>, target: ClopenSet| SubequivalenceWitness {
        source: restrict.map_or_else(|| sw.source.clone(), |s| sw.source.intersection(s)),
        target,
        pieces: sw
            .pieces
            .iter()
            .map(|p| Piece {
                word: translate_word(&p.word, &embedding),
                cells: restrict.map_or_else(|| p.cells.clone(), |s| p.cells.intersection(s)),
            })
            .filter(|p| !p.cells.is_empty())
            .collect(),
    };
    let b_c = b.complement();
    let cond_i = w
        .cond_i
        .iter()
        .enumerate()
        .map(|(i, sw)| tr(sw, None, o1.intersection(&w.row_tail(i)).intersection(&b_c)))
        .collect();
    let cond_ii = tr(&w.cond_ii, None, o2.intersection(&v).difference(&v1.union(&b)));
    let cond_iii = tr(&w.cond_iii, Some(&b), o2.intersection(&r));
    let equivalence = EquivalenceData {
        pieces: w.equivalence.pieces.clone(),
        elements: w
            .equivalence
            .elements
            .iter()
            .map(|row| row.iter().map(|s| translate_word(s, &embedding)).collect())
            .collect(),
    };
    let out = SdWitness {
        n: w.n,
        grid: w.grid.clone(),
        e: new_e.clone(),
        equivalence,
        v,
        v1,
        r,
        b,
        cond_i,
        cond_ii,
        cond_iii,
        params: w.params.clone(),
    };
    let report = verify_sd_witness(&out, o1, o2, &action)?;
    if !report.passes() {
        return Err(SdError::Verification(report.failures()));
    }
    Ok((out, action))
}

/// Lift a witness on factor `factor` of a product level (cells indexed with the first factor
/// fastest) to the product, taking products with the full other factors.
pub fn lift_product_witness(
    w: &SdWitness,
    sizes: &[usize],
    factor: usize,
    product: &LevelAction,
) -> Result<SdWitness, SdError> {
    if factor >= sizes.len() {
        return Err(SdError::BadFactor { factor, count: sizes.len() });
    }
    let lift = |s: &ClopenSet| s.cylinder_in_product(sizes, factor);
    let lift_sw = |sw: &SubequivalenceWitness| SubequivalenceWitness {
        source: lift(&sw.source),
        target: lift(&sw.target),
        pieces: sw.pieces.iter().map(|p| Piece { word: p.word.clone(), cells: lift(&p.cells) }).collect(),
    };
    let grid: Vec<ClopenSet> = w.grid.iter().map(lift).collect();
    let (v, v1, r, b) = derived_sets(w.n, &grid, &w.e, product)?;
    Ok(SdWitness {
        n: w.n,
        grid,
        e: w.e.clone(),
        equivalence: EquivalenceData {
            pieces: w.equivalence.pieces.iter().map(lift).collect(),
            elements: w.equivalence.elements.clone(),
        },
        v,
        v1,
        r,
        b,
        cond_i: w.cond_i.iter().map(lift_sw).collect(),
        cond_ii: lift_sw(&w.cond_ii),
        cond_iii: lift_sw(&w.cond_iii),
        params: w.params.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricDifference {
    pub word: String,
    #[serde(with = "crate::rational_text")]
    pub measure: Rational,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoelnerReport {
    #[serde(with = "crate::rational_text")]
    pub measure_w: Rational,
    #[serde(with = "crate::rational_text")]
    pub measure_w_tilde: Rational,
    /// `μ(V ∖ V^E)`.
    #[serde(with = "crate::rational_text")]
    pub boundary: Rational,
    #[serde(with = "crate::rational_text")]
    pub measure_r: Rational,
    #[serde(with = "crate::rational_text")]
    pub epsilon: Rational,
    pub n: usize,
    pub symmetric_differences: Vec<SymmetricDifference>,
    /// `μ(W̃) ≥ ½μ(V) − 1/(2n)`.
    pub half_rows_bound: bool,
    /// `μ(W) ≥ μ(W̃) − μ(V ∖ V^E)`.
    pub shrink_bound: bool,
    /// `μ(W) ≥ ½ − (μ(R)/2 + 1/(2n) + μ(V∖V^E))`.
    pub chain_bound: bool,
    /// `μ(W) ≥ ½ − (5ε + 1/(2n) + μ(V∖V^E))`.
    pub epsilon_bound: bool,
}

impl FoelnerReport {
    pub fn passes(&self) -> bool {
        self.half_rows_bound
            && self.shrink_bound
            && self.chain_bound
            && self.epsilon_bound
            && self.symmetric_differences.iter().all(|s| s.within_bound)
    }
}

/// `W = W̃^E` for `W̃` the first `⌊n/2⌋` rows, with its almost-invariance bounds.
pub fn foelner_witness(
    w: &SdWitness,
    e: &WordSet,
    action: &LevelAction,
) -> Result<(ClopenSet, FoelnerReport), SdError> {
    let mu = action.measure();
    let half = Rational::one() / int(2);
    let mut w_tilde = ClopenSet::empty(action.cells());
    for i in 0..w.n / 2 {
        for j in 0..w.n {
            w_tilde = w_tilde.union(w.cell(i, j));
        }
    }
    let big_w = action.shrink(&w_tilde, e.iter())?;
    let boundary = w.v.difference(&action.shrink(&w.v, e.iter())?).measure(mu);
    let mut sds = Vec::new();
    for s in e.iter() {
        let sw = action.image(s, &big_w)?;
        let diff = sw.difference(&big_w).union(&big_w.difference(&sw)).measure(mu);
        sds.push(SymmetricDifference {
            word: action.alphabet().display(s).to_string(),
            within_bound: diff <= &boundary * int(2),
            measure: diff,
        });
    }
    let measure_w = big_w.measure(mu);
    let measure_w_tilde = w_tilde.measure(mu);
    let measure_r = w.r.measure(mu);
    let measure_v = w.v.measure(mu);
    let inv_2n = Rational::one() / int(2 * w.n as i64);
    let epsilon = w.params.as_ref().map_or_else(Rational::zero, |p| p.epsilon.clone());
    let report = FoelnerReport {
        half_rows_bound: measure_w_tilde >= &half * &measure_v - &inv_2n,
        shrink_bound: measure_w >= &measure_w_tilde - &boundary,
        chain_bound: measure_w >= &half - (&measure_r / int(2) + &inv_2n + &boundary),
        epsilon_bound: measure_w >= &half - (&epsilon * int(5) + &inv_2n + &boundary),
        measure_w,
        measure_w_tilde,
        boundary,
        measure_r,
        epsilon,
        n: w.n,
        symmetric_differences: sds,
    };
    Ok((big_w, report))
}

/// `(O₁, O₂, FEF)` divisibility localised in `O` via `O₁ ⊔ O₂ ≺_F O₀`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakSdWitness {
    pub o0: ClopenSet,
    pub o1: ClopenSet,
    pub o2: ClopenSet,
    pub f: WordSet,
    pub conjugator: SubequivalenceWitness,
    pub sd: SdWitness,
}

pub fn verify_weak_sd(
    w: &WeakSdWitness,
    o: &ClopenSet,
    e: &WordSet,
    action: &LevelAction,
) -> Result<VerifyReport, LevelError> {
    let mut report = VerifyReport { conditions: Vec::new() };
    let nonempty = !(w.o0.is_empty() || w.o1.is_empty() || w.o2.is_empty());
    let disjoint = w.o0.is_disjoint(&w.o1) && w.o0.is_disjoint(&w.o2) && w.o1.is_disjoint(&w.o2);
    report.push("sets", nonempty && disjoint && w.o0.is_subset(o), "O0, O1, O2 nonempty, disjoint, O0 ⊆ O");
    report.push("f_symmetric", w.f.contains(&Word::identity()) && w.f.is_symmetric(), "e ∈ F = F⁻¹");
    let source = w.o1.union(&w.o2);
    let words_ok = w.conjugator.pieces.iter().all(|p| w.f.contains(&p.word));
    let conj = w.conjugator.source == source && words_ok && w.conjugator.lands_in(&w.o0, action)?;
    report.push("conjugator", conj, "O1 ⊔ O2 ≺_F O0");
    let fef = w.f.product(&e.with_identity()).product(&w.f);
    report.push("fef", w.sd.e == fef, format!("|FEF| = {}", fef.len()));
    let inner = verify_sd_witness(&w.sd, &w.o1, &w.o2, action)?;
    for c in inner.conditions {
        report.conditions.push(ConditionResult { name: format!("sd.{}", c.name), ..c });
    }
    Ok(report)
}

/// Outcome of a successful weak-divisibility search, living on a refinement of the input level.
#[derive(Debug, Clone)]
pub struct WeakSdFound {
    pub system: OdometerSystem,
    pub projection: Vec<u32>,
    pub witness: WeakSdWitness,
    pub candidates_tried: usize,
}

fn small_subsets(pool: &[usize], max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in (1..=max.min(pool.len())).rev() {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| pool[i]).collect());
            let mut k = size;
            while k > 0 && idx[k - 1] == pool.len() - size + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for m in k..size {
                idx[m] = idx[m - 1] + 1;
            }
        }
    }
    out
}

/// Search `(O₀, O₁, O₂, F)` over unions of at most three cells and balls of radius 1 to 3; the
/// square-divisibility part is built on refinements up to `max_depth`.
pub fn check_weak_sd(
    sys: &OdometerSystem,
    o: &ClopenSet,
    e: &WordSet,
    budget: usize,
    max_depth: usize,
) -> Result<Option<WeakSdFound>, SdError> {
    if !e.contains(&Word::identity()) {
        return Err(SdError::EmptyTarget("E must contain e"));
    }
    let action = sys.action();
    let cells = sys.cells();
    let o_cells: Vec<usize> = o.iter().collect();
    let mut tried = 0;
    for radius in 1..=3 {
        let f: WordSet = sys.alphabet().ball(radius).into_iter().collect();
        let fef = f.product(e).product(&f);
        for o0_cells in small_subsets(&o_cells, 3) {
            let o0 = ClopenSet::from_cells(cells, o0_cells.iter().copied());
            let rest: Vec<usize> = (0..cells).filter(|&c| !o0.contains(c)).collect();
            for src in small_subsets(&rest, o0_cells.len()) {
                if src.len() < 2 {
                    continue;
                }
                for split in 1..src.len() {
                    if tried >= budget {
                        return Err(SdError::BudgetExhausted { tried });
                    }
                    tried += 1;
                    let o1 = ClopenSet::from_cells(cells, src[..split].iter().copied());
                    let o2 = ClopenSet::from_cells(cells, src[split..].iter().copied());
                    let source = o1.union(&o2);
                    let Some(conj) = check_subequivalence(&source, &o0, &f, &action)? else { continue };
                    let built =
                        match construct_at_feasibility_depth(sys, &o1, &o2, &fef, GridRule::Smallest(8), max_depth) {
                            Ok(b) => b,
                            Err(SdError::LevelTooShallow { .. }) => continue,
                            Err(other) => return Err(other),
                        };
                    let proj = &built.projection;
                    let lifted_conj = SubequivalenceWitness {
                        source: conj.source.pullback(proj),
                        target: conj.target.pullback(proj),
                        pieces: conj
                            .pieces
                            .iter()
                            .map(|p| Piece { word: p.word.clone(), cells: p.cells.pullback(proj) })
                            .collect(),
                    };
                    let witness = WeakSdWitness {
                        o0: o0.pullback(proj),
                        o1: built.o1.clone(),
                        o2: built.o2.clone(),
                        f: f.clone(),
                        conjugator: lifted_conj,
                        sd: built.witness,
                    };
                    let report = verify_weak_sd(&witness, &o.pullback(proj), e, &built.system.action())?;
                    if !report.passes() {
                        return Err(SdError::Verification(report.failures()));
                    }
                    return Ok(Some(WeakSdFound {
                        system: built.system,
                        projection: built.projection,
                        witness,
                        candidates_tried: tried,
                    }));
                }
            }
        }
    }
    Ok(None)
}

/// `μ(V_{i,j})` for every grid set; all equal for a valid witness.
pub fn grid_measures(w: &SdWitness, action: &LevelAction) -> Vec<Rational> {
    w.grid.iter().map(|s| s.measure(action.measure())).collect()
}

/// Whether `μ(A) ≤ μ(B)` for the attached measure.
pub fn measure_dominated(sw: &SubequivalenceWitness, action: &LevelAction) -> bool {
    sw.source.measure(action.measure()) <= sw.target.measure(action.measure())
}

impl SdParams {
    /// Check the recorded constants against their defining formulas.
    pub fn formulas_hold(&self) -> bool {
        let theta = Rational::one() / int(2 * self.covering_window as i64);
        let bound = int(2) / &theta + Rational::one();
        let n_ok = int(self.n_from_theta as i64) > bound && int(self.n_from_theta as i64 - 1) <= bound;
        let eps = &theta / int((self.n * self.n) as i64 * 20);
        theta == self.theta && n_ok && eps == self.epsilon && !self.epsilon.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::CylinderLevel;

    fn cycle(n: usize) -> LevelAction {
        LevelAction::new(Alphabet::integers(), CylinderLevel::new(n).unwrap(), vec![CellMap::rotation(n, 1)]).unwrap()
    }

    fn powers(ks: &[i64]) -> WordSet {
        ks.iter().map(|&k| Word::generator(0, k)).collect()
    }

    #[test]
    fn matching_examples() {
        let act = cycle(8);
        let set = |c: &[usize]| ClopenSet::from_cells(8, c.iter().copied());
        let w = check_subequivalence(&set(&[0]), &set(&[5]), &powers(&[5]), &act).unwrap().unwrap();
        assert_eq!(w.pieces.len(), 1);
        assert_eq!(w.pieces[0].word, Word::generator(0, 5));
        assert!(check_subequivalence(&set(&[0, 1]), &set(&[4]), &powers(&[4, 3]), &act).unwrap().is_none());
        let w = check_subequivalence(&set(&[0, 1]), &set(&[4, 6]), &powers(&[4, 5, 6]), &act).unwrap().unwrap();
        assert!(w.is_valid(&act).unwrap());
        let img = w.image(&act).unwrap();
        assert_eq!(img, set(&[4, 6]));
        // 0 ↦ 4 via T⁴ and 1 ↦ 6 via T⁵
        assert_eq!(w.pieces.len(), 2);
    }

    #[test]
    fn equivalence_examples() {
        let act = cycle(8);
        let a = ClopenSet::from_cells(8, [0]);
        let b = ClopenSet::from_cells(8, [3]);
        let data = EquivalenceData { pieces: vec![a.clone()], elements: vec![vec![Word::identity()]] };
        assert!(check_pairwise_equivalence(std::slice::from_ref(&a), &data, &act).unwrap());
        let data =
            EquivalenceData { pieces: vec![a.clone()], elements: vec![vec![Word::identity(), Word::generator(0, 3)]] };
        assert!(check_pairwise_equivalence(&[a.clone(), b], &data, &act).unwrap());
        let overlap =
            EquivalenceData { pieces: vec![a.clone()], elements: vec![vec![Word::identity(), Word::generator(0, 8)]] };
        assert!(!check_pairwise_equivalence(&[a.clone(), a], &overlap, &act).unwrap());
    }

    #[test]
    fn theta_formula() {
        let (theta, n) = theta_and_n(2);
        assert_eq!(theta, crate::ratio(1, 4));
        assert_eq!(n, 10);
        let (theta, n) = theta_and_n(16);
        assert_eq!(theta, crate::ratio(1, 32));
        assert_eq!(n, 66);
    }

    #[test]
    fn covering_window_of_single_cell() {
        let frame = CycleFrame::new(&CellMap::rotation(16, 1)).unwrap();
        assert_eq!(frame.covering_window(&ClopenSet::from_cells(16, [5])), Some(16));
        assert_eq!(frame.covering_window(&ClopenSet::from_cells(16, (0..16).step_by(2))), Some(2));
        assert_eq!(frame.covering_window(&ClopenSet::empty(16)), None);
    }

    #[test]
    fn small_grid_on_odometer() {
        let sys = OdometerSystem::dyadic(10).unwrap();
        let o1 = ClopenSet::from_cells(1024, (0..1024).filter(|x| x % 4 != 3));
        let o2 = ClopenSet::from_cells(1024, (0..1024).filter(|x| x % 4 == 3));
        let e = powers(&[-1, 0, 1]);
        let w = construct_sd_witness_grid(&sys, &o1, &o2, &e, GridRule::Fixed(3)).unwrap();
        let report = verify_sd_witness(&w, &o1, &o2, &sys.action()).unwrap();
        assert!(report.passes(), "{report:?}");
    }
}
