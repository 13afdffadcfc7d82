use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use sqdiv_core::constructions::{decay_table, random_conj_extension, sofic_f2_action};
use sqdiv_core::crossed_product::tower_nilpotency_instance;
use sqdiv_core::group::{FiniteSubset, IntSet};
use sqdiv_core::level::{first_return_castle, gcd_heights};
use sqdiv_core::square_divisibility::{
    check_weak_sd, construct_at_feasibility_depth, foelner_witness, verify_sd_witness, verify_weak_sd, GridRule,
    LayoutRule,
};
use sqdiv_core::tiling::{greedy_tiling, ow_tile_params, verify_tiling};
use sqdiv_core::witness_format::{read_sd_witness, NilpotencyJson, SdWitnessJson, SD_WITNESS_KIND};
use sqdiv_core::{Alphabet, ClopenSet, OdometerSystem, Rational};

use crate::output::Output;
use crate::svg;

pub enum Status {
    Passed,
    /// A verification failed; the string is a JSON diagnostic.
    Failed(String),
}

fn parse_rational(s: &str) -> Result<Rational, String> {
    s.trim().parse::<Rational>().map_err(|_| format!("not a rational: {s:?}"))
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(|t| t.trim().parse::<usize>().with_context(|| format!("bad cell index {t:?}"))).collect()
}

fn f64_of(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Cells of a `2^depth` level congruent to one of `residues` mod `modulus`.
fn residue_set(depth: usize, modulus: usize, residues: &str) -> Result<ClopenSet> {
    let cells = 1usize << depth;
    if modulus == 0 || !cells.is_multiple_of(modulus) {
        bail!("modulus {modulus} does not divide 2^{depth}");
    }
    let rs = parse_usize_list(residues)?;
    if let Some(r) = rs.iter().find(|&&r| r >= modulus) {
        bail!("residue {r} is not below {modulus}");
    }
    Ok(ClopenSet::from_cells(cells, (0..cells).filter(|x| rs.contains(&(x % modulus)))))
}

#[derive(Args, Serialize)]
pub struct CastleArgs {
    /// Level `2^depth` of the dyadic odometer.
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 4)]
    pub modulus: usize,
    /// Base residues mod `modulus`, comma separated.
    #[arg(long, default_value = "0")]
    pub residues: String,
    /// Instead of residues, put each cell in the base with this probability.
    #[arg(long)]
    pub random: Option<f64>,
}

pub fn castle(a: &CastleArgs, out: &Output) -> Result<Status> {
    let sys = OdometerSystem::dyadic(a.depth)?;
    let t = sys.action().generator(0).clone();
    let base = match a.random {
        Some(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(out.seed());
            let mut set =
                ClopenSet::from_cells(sys.cells(), (0..sys.cells()).filter(|_| rng.gen_bool(p.clamp(0.0, 1.0))));
            if set.is_empty() {
                set.insert(0);
            }
            set
        }
        None => residue_set(a.depth, a.modulus, &a.residues)?,
    };
    let castle = first_return_castle(&t, &base)?;
    let towers: Vec<_> = castle
        .towers()
        .iter()
        .map(|tw| json!({ "height": tw.height, "base_cells": tw.base.count(), "base": tw.base }))
        .collect();
    let result = json!({ "cells": sys.cells(), "gcd_heights": gcd_heights(&castle), "towers": towers });
    out.json("castle.json", "castle", a, &result)?;
    let rows: Vec<Vec<String>> = castle
        .towers()
        .iter()
        .enumerate()
        .map(|(i, tw)| vec![i.to_string(), tw.height.to_string(), tw.base.count().to_string()])
        .collect();
    out.csv("castle.csv", "castle", &["tower", "height", "base_cells"], &rows)?;
    let labels: Vec<String> = castle.towers().iter().map(|tw| tw.height.to_string()).collect();
    let sizes: Vec<f64> = castle.towers().iter().map(|tw| tw.base.count() as f64).collect();
    out.svg("castle.svg", "castle", svg::bar_chart("tower base sizes", "height", &labels, &sizes))?;
    println!("{} towers, heights {:?}", castle.towers().len(), castle.heights());
    Ok(Status::Passed)
}

#[derive(Args, Serialize)]
pub struct TileArgs {
    #[arg(long, default_value = "1/2")]
    pub epsilon: String,
    /// Padding set `E ⊂ ℤ`, comma separated; 0 is added.
    #[arg(long, default_value = "-1,0,1", allow_hyphen_values = true)]
    pub e: String,
    /// Number of random hosts; each is a union of intervals.
    #[arg(long, default_value_t = 1)]
    pub instances: usize,
    /// Runs per host.
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
}

pub fn tile(a: &TileArgs, out: &Output) -> Result<Status> {
    let eps = parse_rational(&a.epsilon).map_err(|e| anyhow!(e))?;
    let e: IntSet =
        a.e.split(',')
            .map(|t| t.trim().parse::<i64>().with_context(|| format!("bad integer {t:?}")))
            .collect::<Result<_>>()?;
    let params = ow_tile_params(&e, &eps)?;
    let e0 = e.with_identity();
    let mut rng = ChaCha8Rng::seed_from_u64(out.seed());
    let base = params.base_length as i64;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for inst in 0..a.instances {
        let mut runs = Vec::new();
        let mut at = 0i64;
        for _ in 0..a.runs.max(1) {
            let len = rng.gen_range(10 * base..=40 * base);
            runs.push((at, at + len - 1));
            at += len + rng.gen_range(1..=base);
        }
        let host = IntSet::from_runs(runs);
        let tiling = greedy_tiling(&host, &params.tiles, &eps, &e0)?;
        let report = verify_tiling(&host, &tiling, &eps, &e0);
        if !report.passes() {
            failures.push(inst);
        }
        rows.push(vec![
            inst.to_string(),
            host.len().to_string(),
            tiling.placements.len().to_string(),
            tiling.covered().to_string(),
            report.coverage.to_string(),
            format!("{:.6}", f64_of(&report.coverage)),
            report.thickenings_disjoint.to_string(),
        ]);
    }
    out.json("tile_params.json", "tile-params", a, &params)?;
    out.csv(
        "tiling.csv",
        "tiling",
        &["instance", "host_size", "placements", "covered", "coverage", "coverage_f64", "disjoint"],
        &rows,
    )?;
    println!("tile lengths {} and {}, beta {}", 2 * params.base_length, params.base_length, params.beta);
    if failures.is_empty() {
        Ok(Status::Passed)
    } else {
        Ok(Status::Failed(json!({ "failed": "tiling", "instances": failures }).to_string()))
    }
}

#[derive(Args, Serialize)]
pub struct SoficArgs {
    /// Words in `a`, `b`, comma separated.
    #[arg(long, default_value = "a, b, a b, a b a^-1 b^-1")]
    pub e: String,
    #[arg(long, default_value = "1/4")]
    pub epsilon: String,
    #[arg(long, default_value_t = 120)]
    pub n: usize,
}

pub fn sofic(a: &SoficArgs, out: &Output) -> Result<Status> {
    let alphabet = Alphabet::free2();
    let e = alphabet.parse_list(&a.e)?;
    let eps = parse_rational(&a.epsilon).map_err(|e| anyhow!(e))?;
    let act = sofic_f2_action(&e, &eps, a.n)?;
    let action = act.action()?;
    let single = action.generators().iter().all(|g| g.is_single_cycle());
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for w in e.iter() {
        let fixed = act.fixed_points(w)?;
        let frac = Rational::new(fixed.into(), a.n.into());
        let ok = frac <= eps;
        if !ok {
            bad.push(alphabet.display(w).to_string());
        }
        rows.push(vec![alphabet.display(w).to_string(), fixed.to_string(), frac.to_string(), ok.to_string()]);
    }
    out.json("sofic.json", "sofic", a, &act)?;
    out.csv("sofic.csv", "sofic", &["word", "fixed_points", "fraction", "within_epsilon"], &rows)?;
    println!("n = {}, quotient order {}, single cycles: {single}", a.n, act.quotient_order);
    if single && bad.is_empty() {
        Ok(Status::Passed)
    } else {
        Ok(Status::Failed(json!({ "failed": "sofic", "single_cycles": single, "words": bad }).to_string()))
    }
}

#[derive(Args, Serialize)]
pub struct ExtendArgs {
    /// Generators; the one named `T` generates `H = ℤ`.
    #[arg(long, default_value = "a,T")]
    pub alphabet: String,
    #[arg(long, default_value = "a, T")]
    pub f: String,
    #[arg(long, default_value = "1/6")]
    pub epsilon: String,
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    /// Independent runs with seeds `seed, seed+1, …`.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
}

pub fn extend(a: &ExtendArgs, out: &Output) -> Result<Status> {
    let names: Vec<&str> = a.alphabet.split(',').map(str::trim).collect();
    let alphabet = Alphabet::new(&names)?;
    let f = alphabet.parse_list(&a.f)?;
    let eps = parse_rational(&a.epsilon).map_err(|e| anyhow!(e))?;
    let mut rows = Vec::new();
    let mut first = None;
    let mut ok = 0;
    for k in 0..a.runs {
        let seed = out.seed().wrapping_add(k);
        match random_conj_extension(&alphabet, &f, &eps, a.depth, seed) {
            Ok(ext) => {
                ok += 1;
                let invariant = ext.action().is_measure_invariant();
                let max_trace = ext.traces.iter().map(|(_, c)| *c).max().unwrap_or(0);
                rows.push(vec![
                    k.to_string(),
                    seed.to_string(),
                    "true".into(),
                    ext.attempts.to_string(),
                    ext.h0.to_string(),
                    ext.k_size.to_string(),
                    max_trace.to_string(),
                    invariant.to_string(),
                ]);
                first.get_or_insert(ext);
            }
            Err(e) => rows.push(vec![
                k.to_string(),
                seed.to_string(),
                format!("false: {e}"),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]),
        }
    }
    out.csv(
        "extend.csv",
        "extend",
        &["run", "seed", "success", "attempts", "h0", "k_size", "max_fixed_on_k", "measure_invariant"],
        &rows,
    )?;
    if let Some(ext) = &first {
        out.json("extend.json", "extend", a, ext)?;
    }
    println!("{ok} of {} runs succeeded", a.runs);
    if ok > 0 {
        Ok(Status::Passed)
    } else {
        Ok(Status::Failed(json!({ "failed": "extend", "runs": a.runs }).to_string()))
    }
}

#[derive(Args, Serialize)]
pub struct SdConstructArgs {
    /// Starting depth; the level is refined until the construction fits.
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub max_depth: usize,
    #[arg(long, default_value = "T^-1, e, T")]
    pub e: String,
    #[arg(long, default_value_t = 4)]
    pub modulus: usize,
    #[arg(long, default_value = "0,1,2")]
    pub o1: String,
    #[arg(long, default_value = "3")]
    pub o2: String,
    /// Grid size; by default the least integer above `2/θ + 1`.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Require `μ(R) ≤ 5ε` of the layout.
    #[arg(long)]
    pub footprint: bool,
    #[arg(long, default_value = "sd_witness.json")]
    pub file: String,
}

pub fn sd_construct(a: &SdConstructArgs, out: &Output) -> Result<Status> {
    let sys = OdometerSystem::dyadic(a.depth)?;
    let e = sys.alphabet().parse_list(&a.e)?;
    let o1 = residue_set(a.depth, a.modulus, &a.o1)?;
    let o2 = residue_set(a.depth, a.modulus, &a.o2)?;
    let grid = a.grid.map_or(GridRule::FromTheta, GridRule::Fixed);
    let rule = LayoutRule { grid, footprint: a.footprint };
    let rw = construct_at_feasibility_depth(&sys, &o1, &o2, &e, rule, a.max_depth)?;
    let body = SdWitnessJson::encode(&rw.witness, &rw.system, &rw.o1, &rw.o2);
    out.artifact(&a.file, SD_WITNESS_KIND, body)?;
    let report = verify_sd_witness(&rw.witness, &rw.o1, &rw.o2, &rw.system.action())?;
    println!(
        "n = {}, depth {}, {} cells, verified: {}",
        rw.witness.n,
        rw.system.level().depth(),
        rw.system.cells(),
        report.passes()
    );
    Ok(Status::Passed)
}

#[derive(Args, Serialize)]
pub struct SdVerifyArgs {
    pub witness: PathBuf,
}

pub fn sd_verify(a: &SdVerifyArgs, out: &Output) -> Result<Status> {
    let text = fs::read_to_string(&a.witness).with_context(|| format!("reading {}", a.witness.display()))?;
    let (_, body) = read_sd_witness(&text)?;
    let w = body.decode()?;
    let report = verify_sd_witness(&w, &body.o1, &body.o2, &body.system.action())?;
    for c in &report.conditions {
        println!("{:<22} {}  {}", c.name, if c.pass { "pass" } else { "FAIL" }, c.detail);
    }
    out.json("sd_verify.json", "sd-verify", a, &report)?;
    if report.passes() {
        Ok(Status::Passed)
    } else {
        Ok(Status::Failed(json!({ "failed": report.failures() }).to_string()))
    }
}

#[derive(Args, Serialize)]
pub struct WeakSdArgs {
    /// Level on which `O₀, O₁, O₂` are chosen as unions of cells.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 4)]
    pub modulus: usize,
    /// Residues of the open set `O`.
    #[arg(long, default_value = "0,1")]
    pub o: String,
    #[arg(long, default_value = "T^-1, e, T")]
    pub e: String,
    /// Candidate `(O₀, O₁, O₂, F)` tuples to try.
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
}

pub fn weak_sd_search(a: &WeakSdArgs, out: &Output) -> Result<Status> {
    let sys = OdometerSystem::dyadic(a.depth)?;
    let e = sys.alphabet().parse_list(&a.e)?;
    let o = residue_set(a.depth, a.modulus, &a.o)?;
    let Some(found) = check_weak_sd(&sys, &o, &e, a.budget, a.max_depth)? else {
        return Ok(Status::Failed(json!({ "failed": "weak-sd-search", "budget": a.budget }).to_string()));
    };
    let action = found.system.action();
    let fine_o = o.pullback(&found.projection);
    let report = verify_weak_sd(&found.witness, &fine_o, &e, &action)?;
    let w = &found.witness;
    let alphabet = found.system.alphabet();
    let result = json!({
        "depth": found.system.level().depth(),
        "candidates_tried": found.candidates_tried,
        "o0": w.o0, "o1": w.o1, "o2": w.o2,
        "f": w.f.iter().map(|s| alphabet.display(s).to_string()).collect::<Vec<_>>(),
        "n": w.sd.n,
        "report": report,
    });
    out.json("weak_sd.json", "weak-sd", a, &result)?;
    println!(
        "found after {} candidates at depth {}; verified: {}",
        found.candidates_tried,
        found.system.level().depth(),
        report.passes()
    );
    if report.passes() {
        Ok(Status::Passed)
    } else {
        Ok(Status::Failed(json!({ "failed": report.failures() }).to_string()))
    }
}

#[derive(Args, Serialize)]
pub struct NilpotencyArgs {
    /// Grid size.
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: u64,
    #[arg(long, default_value_t = 3)]
    pub max_words: usize,
    #[arg(long, default_value_t = 13)]
    pub max_depth: usize,
}

pub fn nilpotency(a: &NilpotencyArgs, out: &Output) -> Result<Status> {
    let inst = tower_nilpotency_instance(a.n, a.max_depth)?;
    let alphabet = inst.cp.action().alphabet().clone();
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for k in 0..a.trials {
        let x = inst.random_a(a.max_words, out.seed().wrapping_add(k));
        let res = inst.run(&x)?;
        let ok = res.nilpotent && res.block_shape && res.strictly_upper && res.b_annihilates_r && res.v1_annihilates_b;
        if !ok {
            failed.push(k);
        }
        rows.push(vec![
            k.to_string(),
            x.terms().len().to_string(),
            x.size().to_string(),
            res.block_shape.to_string(),
            res.strictly_upper.to_string(),
            res.vanishes_at.map_or(String::new(), |v| v.to_string()),
            res.nilpotent.to_string(),
        ]);
        if k == 0 {
            out.svg("pattern_b.svg", "nilpotency", svg::pattern("support of b", &res.pattern_b.entries))?;
            out.svg(
                "pattern_rotated.svg",
                "nilpotency",
                svg::pattern("support of z1 b z2", &res.pattern_rotated.entries),
            )?;
        }
        runs.push(NilpotencyJson::encode(&alphabet, a.n, &x, &res));
    }
    out.json("nilpotency.json", "nilpotency", a, &runs)?;
    out.csv(
        "nilpotency.csv",
        "nilpotency",
        &["trial", "words", "coefficients", "block_shape", "strictly_upper", "vanishes_at", "nilpotent"],
        &rows,
    )?;
    println!("{} cells, {} of {} trials nilpotent", inst.cp.cells(), a.trials as usize - failed.len(), a.trials);
    if failed.is_empty() {
        Ok(Status::Passed)
    } else {
        Ok(Status::Failed(json!({ "failed": "nilpotency", "trials": failed }).to_string()))
    }
}

#[derive(Args, Serialize)]
pub struct FoelnerArgs {
    /// Witness file from `sd-construct`; when absent a 3×3 witness with `μ(R) ≤ 5ε` is built
    /// for `E = {T^±1, e}`.
    #[arg(long)]
    pub witness: Option<PathBuf>,
}

pub fn foelner(a: &FoelnerArgs, out: &Output) -> Result<Status> {
    let body = match &a.witness {
        Some(p) => read_sd_witness(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?.1,
        None => {
            let sys = OdometerSystem::dyadic(4)?;
            let e = sys.alphabet().parse_list("T^-1, e, T")?;
            let o1 = residue_set(4, 4, "0,1,2")?;
            let o2 = residue_set(4, 4, "3")?;
            let rw = construct_at_feasibility_depth(&sys, &o1, &o2, &e, GridRule::Fixed(3).with_footprint(), 18)?;
            SdWitnessJson::encode(&rw.witness, &rw.system, &rw.o1, &rw.o2)
        }
    };
    let w = body.decode()?;
    let action = body.system.action();
    let (set, report) = foelner_witness(&w, &w.e, &action)?;
    out.json("foelner.json", "foelner", a, &json!({ "w": set, "report": report }))?;
    println!("mu(W) = {}, boundary {}, passes: {}", report.measure_w, report.boundary, report.passes());
    if report.passes() {
        Ok(Status::Passed)
    } else {
        Ok(Status::Failed(json!({ "failed": "foelner", "report": report }).to_string()))
    }
}

#[derive(Args, Serialize)]
pub struct DecayArgs {
    #[arg(long, default_value_t = 5)]
    pub from: usize,
    #[arg(long, default_value_t = 10)]
    pub to: usize,
    #[arg(long, default_value = "a b, a b^-1")]
    pub e: String,
}

pub fn decay(a: &DecayArgs, out: &Output) -> Result<Status> {
    let e = Alphabet::free2().parse_list(&a.e)?;
    let rows = decay_table(&e, a.from..=a.to)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.depth.to_string(),
                r.cells.to_string(),
                r.bound.to_string(),
                format!("{:.6}", f64_of(&r.bound)),
                r.achieved.to_string(),
                format!("{:.6}", f64_of(&r.achieved)),
                r.constructed.to_string(),
            ]
        })
        .collect();
    out.csv(
        "decay.csv",
        "decay",
        &["depth", "cells", "bound", "bound_f64", "achieved", "achieved_f64", "constructed"],
        &table,
    )?;
    out.json("decay.json", "decay", a, &rows)?;
    let xs: Vec<String> = rows.iter().map(|r| r.depth.to_string()).collect();
    let chart = svg::line_chart(
        "fixed-point measure by depth",
        "depth",
        &xs,
        &[
            ("bound", rows.iter().map(|r| f64_of(&r.bound)).collect()),
            ("achieved", rows.iter().map(|r| f64_of(&r.achieved)).collect()),
        ],
    );
    out.svg("decay.svg", "decay", chart)?;
    let monotone = rows.windows(2).all(|p| p[1].bound <= p[0].bound);
    println!("{} rows, bound nonincreasing: {monotone}", rows.len());
    if monotone {
        Ok(Status::Passed)
    } else {
        Ok(Status::Failed(json!({ "failed": "decay", "reason": "bound increased" }).to_string()))
    }
}
