//! JSON artifacts. Every file carries a header with the schema version and the seed it was built
//! from; words are written in the alphabet's text form and clopen sets as `{cells, hex}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossed_product::{CellFunction, CpElement, NilpotencyOutcome, SupportPattern};
use crate::group::{Alphabet, GroupError, Word, WordSet};
use crate::level::{ClopenSet, OdometerSystem};
use crate::square_divisibility::{EquivalenceData, Piece, SdParams, SdWitness, SubequivalenceWitness};
use crate::Rational;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("artifact kind is {found}, expected {expected}")]
    Kind { expected: String, found: String },
    #[error(transparent)]
    Word(#[from] GroupError),
    #[error("bad rational {0:?}")]
    Rational(String),
    #[error("set {name} has {found} cells, level has {expected}")]
    Universe { name: String, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
}

impl Header {
    pub fn new(kind: &str, seed: u64) -> Self {
        Header { schema_version: SCHEMA_VERSION, kind: kind.to_string(), seed }
    }

    pub fn check(&self, kind: &str) -> Result<(), FormatError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FormatError::SchemaVersion { found: self.schema_version });
        }
        if self.kind != kind {
            return Err(FormatError::Kind { expected: kind.into(), found: self.kind.clone() });
        }
        Ok(())
    }
}

/// Any payload with a header in front.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    #[serde(flatten)]
    pub header: Header,
    pub body: T,
}

impl<T: Serialize> Artifact<T> {
    pub fn new(kind: &str, seed: u64, body: T) -> Self {
        Artifact { header: Header::new(kind, seed), body }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceJson {
    pub word: String,
    pub cells: ClopenSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubequivalenceJson {
    pub source: ClopenSet,
    pub target: ClopenSet,
    pub pieces: Vec<PieceJson>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceJson {
    pub pieces: Vec<ClopenSet>,
    pub elements: Vec<Vec<String>>,
}

/// A witness together with the system and the open sets it was built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdWitnessJson {
    pub system: OdometerSystem,
    pub o1: ClopenSet,
    pub o2: ClopenSet,
    pub n: usize,
    pub e: Vec<String>,
    pub grid: Vec<ClopenSet>,
    pub equivalence: EquivalenceJson,
    pub v: ClopenSet,
    pub v1: ClopenSet,
    pub r: ClopenSet,
    pub b: ClopenSet,
    pub cond_i: Vec<SubequivalenceJson>,
    pub cond_ii: SubequivalenceJson,
    pub cond_iii: SubequivalenceJson,
    pub params: Option<SdParams>,
}

pub const SD_WITNESS_KIND: &str = "sd-witness";

fn words_out(alphabet: &Alphabet, words: &WordSet) -> Vec<String> {
    words.iter().map(|w| alphabet.display(w).to_string()).collect()
}

fn sub_out(alphabet: &Alphabet, sw: &SubequivalenceWitness) -> SubequivalenceJson {
    SubequivalenceJson {
        source: sw.source.clone(),
        target: sw.target.clone(),
        pieces: sw
            .pieces
            .iter()
            .map(|p| PieceJson { word: alphabet.display(&p.word).to_string(), cells: p.cells.clone() })
            .collect(),
    }
}

fn sub_in(alphabet: &Alphabet, sw: &SubequivalenceJson) -> Result<SubequivalenceWitness, FormatError> {
    Ok(SubequivalenceWitness {
        source: sw.source.clone(),
        target: sw.target.clone(),
        pieces: sw
            .pieces
            .iter()
            .map(|p| Ok(Piece { word: alphabet.parse(&p.word)?, cells: p.cells.clone() }))
            .collect::<Result<_, FormatError>>()?,
    })
}

impl SdWitnessJson {
    pub fn encode(w: &SdWitness, system: &OdometerSystem, o1: &ClopenSet, o2: &ClopenSet) -> Self {
        let alphabet = system.alphabet();
        SdWitnessJson {
            system: system.clone(),
            o1: o1.clone(),
            o2: o2.clone(),
            n: w.n,
            e: words_out(alphabet, &w.e),
            grid: w.grid.clone(),
            equivalence: EquivalenceJson {
                pieces: w.equivalence.pieces.clone(),
                elements: w
                    .equivalence
                    .elements
                    .iter()
                    .map(|row| row.iter().map(|s| alphabet.display(s).to_string()).collect())
                    .collect(),
            },
            v: w.v.clone(),
            v1: w.v1.clone(),
            r: w.r.clone(),
            b: w.b.clone(),
            cond_i: w.cond_i.iter().map(|sw| sub_out(alphabet, sw)).collect(),
            cond_ii: sub_out(alphabet, &w.cond_ii),
            cond_iii: sub_out(alphabet, &w.cond_iii),
            params: w.params.clone(),
        }
    }

    /// Rebuild the witness; every set must live on the system's level.
    pub fn decode(&self) -> Result<SdWitness, FormatError> {
        let alphabet = self.system.alphabet();
        let cells = self.system.cells();
        let mut named: Vec<(String, &ClopenSet)> = vec![
            ("o1".into(), &self.o1),
            ("o2".into(), &self.o2),
            ("v".into(), &self.v),
            ("v1".into(), &self.v1),
            ("r".into(), &self.r),
            ("b".into(), &self.b),
        ];
        named.extend(self.grid.iter().enumerate().map(|(p, s)| (format!("grid[{p}]"), s)));
        named.extend(self.equivalence.pieces.iter().enumerate().map(|(k, s)| (format!("equivalence.pieces[{k}]"), s)));
        for sw in self.cond_i.iter().chain([&self.cond_ii, &self.cond_iii]) {
            named.push(("source".into(), &sw.source));
            named.push(("target".into(), &sw.target));
            named.extend(sw.pieces.iter().map(|p| (format!("piece {}", p.word), &p.cells)));
        }
        if let Some((name, s)) = named.iter().find(|(_, s)| s.universe() != cells) {
            return Err(FormatError::Universe { name: name.clone(), expected: cells, found: s.universe() });
        }
        let e = self.e.iter().map(|s| alphabet.parse(s)).collect::<Result<WordSet, _>>()?;
        let elements = self
            .equivalence
            .elements
            .iter()
            .map(|row| row.iter().map(|s| alphabet.parse(s)).collect::<Result<Vec<Word>, _>>())
            .collect::<Result<_, _>>()?;
        Ok(SdWitness {
            n: self.n,
            grid: self.grid.clone(),
            e,
            equivalence: EquivalenceData { pieces: self.equivalence.pieces.clone(), elements },
            v: self.v.clone(),
            v1: self.v1.clone(),
            r: self.r.clone(),
            b: self.b.clone(),
            cond_i: self.cond_i.iter().map(|sw| sub_in(alphabet, sw)).collect::<Result<_, _>>()?,
            cond_ii: sub_in(alphabet, &self.cond_ii)?,
            cond_iii: sub_in(alphabet, &self.cond_iii)?,
            params: self.params.clone(),
        })
    }
}

pub fn read_sd_witness(text: &str) -> Result<(Header, SdWitnessJson), FormatError> {
    let a: Artifact<SdWitnessJson> = serde_json::from_str(text)?;
    a.header.check(SD_WITNESS_KIND)?;
    Ok((a.header, a.body))
}

/// `{word: {cell: "p/q"}}`.
pub type CpElementJson = BTreeMap<String, BTreeMap<u32, String>>;

pub fn cp_element_out(alphabet: &Alphabet, x: &CpElement) -> CpElementJson {
    x.terms()
        .iter()
        .map(|(w, f)| (alphabet.display(w).to_string(), f.iter().map(|(&c, v)| (c, v.to_string())).collect()))
        .collect()
}

pub fn cp_element_in(alphabet: &Alphabet, json: &CpElementJson) -> Result<CpElement, FormatError> {
    let mut terms = Vec::new();
    for (w, f) in json {
        let word = alphabet.parse(w)?;
        let coeffs = f
            .iter()
            .map(|(&c, v)| v.parse::<Rational>().map(|r| (c, r)).map_err(|_| FormatError::Rational(v.clone())))
            .collect::<Result<CellFunction, _>>()?;
        terms.push((word, coeffs));
    }
    Ok(CpElement::from_terms(terms))
}

/// One nilpotency run: the input, the rotated element and both support patterns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NilpotencyJson {
    pub n: usize,
    pub a: CpElementJson,
    pub b: CpElementJson,
    pub pattern_b: SupportPattern,
    pub pattern_rotated: SupportPattern,
    pub b_annihilates_r: bool,
    pub v1_annihilates_b: bool,
    pub block_shape: bool,
    pub strictly_upper: bool,
    pub nilpotent: bool,
    pub vanishes_at: Option<usize>,
}

impl NilpotencyJson {
    pub fn encode(alphabet: &Alphabet, n: usize, a: &CpElement, out: &NilpotencyOutcome) -> Self {
        NilpotencyJson {
            n,
            a: cp_element_out(alphabet, a),
            b: cp_element_out(alphabet, &out.b),
            pattern_b: out.pattern_b.clone(),
            pattern_rotated: out.pattern_rotated.clone(),
            b_annihilates_r: out.b_annihilates_r,
            v1_annihilates_b: out.v1_annihilates_b,
            block_shape: out.block_shape,
            strictly_upper: out.strictly_upper,
            nilpotent: out.nilpotent,
            vanishes_at: out.vanishes_at,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio;
    use crate::square_divisibility::{construct_sd_witness_grid, verify_sd_witness, GridRule};

    fn sample() -> (SdWitness, OdometerSystem, ClopenSet, ClopenSet) {
        let sys = OdometerSystem::dyadic(10).unwrap();
        let o1 = ClopenSet::from_cells(1024, (0..1024).filter(|x| x % 4 != 3));
        let o2 = ClopenSet::from_cells(1024, (0..1024).filter(|x| x % 4 == 3));
        let a = sys.alphabet();
        let e: WordSet = ["T^-1", "e", "T"].iter().map(|s| a.parse(s).unwrap()).collect();
        let w = construct_sd_witness_grid(&sys, &o1, &o2, &e, GridRule::Fixed(3)).unwrap();
        (w, sys, o1, o2)
    }

    #[test]
    fn witness_round_trip() {
        let (w, sys, o1, o2) = sample();
        let text = Artifact::new(SD_WITNESS_KIND, 9, SdWitnessJson::encode(&w, &sys, &o1, &o2)).to_json();
        assert!(text.contains("\"schema_version\": 1"));
        let (header, body) = read_sd_witness(&text).unwrap();
        assert_eq!(header.seed, 9);
        let back = body.decode().unwrap();
        assert_eq!(back, w);
        assert!(verify_sd_witness(&back, &body.o1, &body.o2, &body.system.action()).unwrap().passes());
    }

    #[test]
    fn rejects_foreign_artifacts() {
        let text = Artifact::new("decay", 0, 5u32).to_json();
        assert!(matches!(read_sd_witness(&text), Err(FormatError::Kind { .. }) | Err(FormatError::Json(_))));
        let (w, sys, o1, o2) = sample();
        let mut a = Artifact::new(SD_WITNESS_KIND, 0, SdWitnessJson::encode(&w, &sys, &o1, &o2));
        a.header.schema_version = 7;
        assert!(matches!(read_sd_witness(&a.to_json()), Err(FormatError::SchemaVersion { found: 7 })));
        a.header.schema_version = SCHEMA_VERSION;
        a.body.v = ClopenSet::empty(8);
        assert!(matches!(a.body.decode(), Err(FormatError::Universe { .. })));
    }

    #[test]
    fn cp_elements_round_trip() {
        let alphabet = Alphabet::free2();
        let f: CellFunction = [(1, ratio(-3, 4)), (5, ratio(2, 1))].into_iter().collect();
        let x = CpElement::from_terms([(alphabet.parse("a b^-1").unwrap(), f)]);
        let json = cp_element_out(&alphabet, &x);
        assert_eq!(json["a b^-1"][&1], "-3/4");
        assert_eq!(cp_element_in(&alphabet, &json).unwrap(), x);
    }
}
