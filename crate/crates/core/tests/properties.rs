use std::collections::BTreeSet;

use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

use sqdiv_core::crossed_product::{CellFunction, CpElement, CrossedProduct};
use sqdiv_core::square_divisibility::check_subequivalence;
use sqdiv_core::tiling::{greedy_tiling, ow_tile_params, verify_tiling, TilingError};
use sqdiv_core::{
    int, ratio, Alphabet, CellMap, ClopenSet, CylinderLevel, IntSet, LevelAction, Rational, Word, WordSet,
};

fn perm(cells: usize) -> impl Strategy<Value = Vec<u32>> {
    Just((0..cells as u32).collect::<Vec<_>>()).prop_shuffle()
}

/// A free-group action on a few cells given by two random permutations.
fn action() -> impl Strategy<Value = LevelAction> {
    (2usize..=7).prop_flat_map(|cells| (perm(cells), perm(cells))).prop_map(|(a, b)| {
        let cells = a.len();
        let gens = vec![CellMap::new(a).unwrap(), CellMap::new(b).unwrap()];
        LevelAction::new(Alphabet::free2(), CylinderLevel::new(cells).unwrap(), gens).unwrap()
    })
}

fn word() -> impl Strategy<Value = Word> {
    prop::collection::vec((0usize..2, prop_oneof![Just(-1i64), Just(1)]), 0..4)
        .prop_map(|ls| ls.into_iter().fold(Word::identity(), |w, (g, e)| w.mul(&Word::generator(g, e))))
}

fn element(cells: usize) -> impl Strategy<Value = CpElement> {
    prop::collection::vec((word(), prop::collection::btree_map(0..cells as u32, -3i64..=3, 0..=cells)), 0..4).prop_map(
        |terms| {
            CpElement::from_terms(terms.into_iter().map(|(w, f)| {
                let f: CellFunction = f.into_iter().map(|(x, v)| (x, int(v))).collect();
                (w, f)
            }))
        },
    )
}

fn act(action: &LevelAction, w: &Word, x: usize) -> usize {
    let letters: Vec<(usize, i64)> = w.letters().collect();
    letters.iter().rev().fold(x, |y, &(g, e)| {
        let m = action.generator(g);
        if e > 0 {
            m.apply(y)
        } else {
            m.apply_inv(y)
        }
    })
}

type Matrix = Vec<Vec<Rational>>;

/// `f u_s` sends `δ_y` to `f(sy) δ_{sy}`.
fn matrix(action: &LevelAction, a: &CpElement) -> Matrix {
    let n = action.cells();
    let mut m = vec![vec![Rational::zero(); n]; n];
    for (s, f) in a.terms() {
        for (y, x) in (0..n).map(|y| (y, act(action, s, y))) {
            if let Some(v) = f.get(&(x as u32)) {
                m[x][y] += v;
            }
        }
    }
    m
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).fold(Rational::zero(), |acc, k| acc + &a[i][k] * &b[k][j])).collect())
        .collect()
}

fn transpose(a: &Matrix) -> Matrix {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i].clone()).collect()).collect()
}

fn with_elements(k: usize) -> impl Strategy<Value = (LevelAction, Vec<CpElement>)> {
    action().prop_flat_map(move |a| {
        let cells = a.cells();
        (Just(a), prop::collection::vec(element(cells), k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_is_matrix_product((action, xs) in with_elements(2)) {
        let cp = CrossedProduct::new(action.clone());
        let prod = cp.mul(&xs[0], &xs[1]);
        prop_assert_eq!(matrix(&action, &prod), matmul(&matrix(&action, &xs[0]), &matrix(&action, &xs[1])));
    }

    #[test]
    fn star_is_transpose((action, xs) in with_elements(1)) {
        let cp = CrossedProduct::new(action.clone());
        prop_assert_eq!(matrix(&action, &cp.star(&xs[0])), transpose(&matrix(&action, &xs[0])));
    }

    #[test]
    fn product_is_associative((action, xs) in with_elements(3)) {
        let cp = CrossedProduct::new(action);
        let left = cp.mul(&cp.mul(&xs[0], &xs[1]), &xs[2]);
        let right = cp.mul(&xs[0], &cp.mul(&xs[1], &xs[2]));
        prop_assert_eq!(left, right);
    }

    #[test]
    fn expectation_of_a_star_a_is_nonnegative((action, xs) in with_elements(1)) {
        let cp = CrossedProduct::new(action.clone());
        let a = &xs[0];
        let e = cp.mul(&cp.star(a), a).expectation();
        prop_assert!(e.values().all(|v| !v.is_negative()));
        // E(a*a)(x) = Σ_s |f_s(sx)|²
        for x in 0..action.cells() {
            let expected = a.terms().iter().fold(Rational::zero(), |acc, (s, f)| {
                let v = f.get(&(act(&action, s, x) as u32)).cloned().unwrap_or_else(Rational::zero);
                acc + &v * &v
            });
            prop_assert_eq!(e.get(&(x as u32)).cloned().unwrap_or_else(Rational::zero), expected);
        }
    }

    #[test]
    fn subequivalence_unitaries_are_unitary(
        action in action(),
        seed_a in prop::collection::vec(any::<bool>(), 7),
        seed_b in prop::collection::vec(any::<bool>(), 7),
        words in prop::collection::vec(word(), 1..4),
    ) {
        let cells = action.cells();
        let a = ClopenSet::from_cells(cells, (0..cells).filter(|&x| seed_a[x]));
        let b = ClopenSet::from_cells(cells, (0..cells).filter(|&x| seed_b[x] && !seed_a[x]));
        let f: WordSet = words.into_iter().collect();
        if let Some(sw) = check_subequivalence(&a, &b, &f, &action).unwrap() {
            prop_assert!(sw.is_valid(&action).unwrap());
            prop_assert!(a.count() <= b.count());
            let cp = CrossedProduct::new(action.clone());
            let u = cp.unitary_from_subequivalence(&sw).unwrap();
            prop_assert!(cp.is_unitary(&u));
            prop_assert_eq!(cp.star(&u), u);
        }
    }

    #[test]
    fn matching_is_found_when_a_bijection_exists(action in action(), w in word(), keep in prop::collection::vec(any::<bool>(), 7)) {
        let cells = action.cells();
        let a = ClopenSet::from_cells(cells, (0..cells).filter(|&x| keep[x]));
        let b = action.image(&w, &a).unwrap();
        let f: WordSet = [w].into_iter().collect();
        prop_assert!(check_subequivalence(&a, &b, &f, &action).unwrap().is_some());
    }

    #[test]
    fn words_form_a_group(x in word(), y in word(), z in word()) {
        prop_assert_eq!(x.mul(&y).mul(&z), x.mul(&y.mul(&z)));
        prop_assert!(x.mul(&x.inverse()).is_identity());
        prop_assert_eq!(x.mul(&y).inverse(), y.inverse().mul(&x.inverse()));
    }

    #[test]
    fn words_print_and_parse_back(x in word()) {
        let alphabet = Alphabet::free2();
        let text = alphabet.display(&x).to_string();
        prop_assert_eq!(alphabet.parse(&text).unwrap(), x);
    }

    #[test]
    fn word_maps_compose((action, x, y) in (action(), word(), word())) {
        let xy = action.word_map(&x.mul(&y)).unwrap();
        let composed = action.word_map(&x).unwrap().compose(&action.word_map(&y).unwrap());
        prop_assert_eq!(xy, composed);
    }

    #[test]
    fn clopen_hex_round_trip(cells in 1usize..200, members in prop::collection::btree_set(0usize..200, 0..50)) {
        let set = ClopenSet::from_cells(cells, members.into_iter().filter(|&x| x < cells));
        prop_assert_eq!(ClopenSet::from_hex(cells, &set.to_hex()).unwrap(), set);
    }

    #[test]
    fn greedy_tiles_stay_disjoint_and_inside(
        e in prop::collection::btree_set(-2i64..=2, 0..4),
        denom in 2i64..=4,
        runs in prop::collection::vec((1i64..4000, 1i64..3000), 1..5),
    ) {
        let mut e: BTreeSet<i64> = e;
        e.insert(0);
        let e: IntSet = e.into_iter().collect();
        let eps = ratio(1, denom);
        let params = ow_tile_params(&e, &eps).unwrap();
        let mut at = 0;
        let mut k_runs = Vec::new();
        for (len, gap) in runs {
            k_runs.push((at, at + len - 1));
            at += len + gap;
        }
        let k = IntSet::from_runs(k_runs);
        // coverage may fall short on small hosts; the layout itself must stay valid
        match greedy_tiling(&k, &params.tiles, &eps, &e) {
            Ok(t) => {
                let report = verify_tiling(&k, &t, &eps, &e);
                prop_assert!(report.passes());
                for p in &t.placements {
                    prop_assert!(t.placed(p).sumset(&e).is_subset(&k));
                }
            }
            Err(TilingError::Infeasible { best }) => prop_assert!(best < Rational::one() - &eps),
            Err(other) => prop_assert!(false, "unexpected error {}", other),
        }
    }
}
