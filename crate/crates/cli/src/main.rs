//! `sqdiv`: construct, verify and tabulate finite models of Cantor dynamics.

mod commands;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    CastleArgs, DecayArgs, ExtendArgs, FoelnerArgs, NilpotencyArgs, SdConstructArgs, SdVerifyArgs, SoficArgs, TileArgs,
    WeakSdArgs,
};

#[derive(Parser)]
#[command(name = "sqdiv", version, about = "Exact constructions and verifiers on cylinder levels")]
struct Cli {
    /// Seed for every random choice; recorded in each artifact header.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for JSON, CSV and SVG artifacts.
    #[arg(long, global = true, env = "SQDIV_OUT_DIR", default_value = "sqdiv-out")]
    out: PathBuf,
    /// Also render SVG charts where a table is produced.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// First-return castle of the dyadic odometer over a clopen base.
    Castle(CastleArgs),
    /// Quasitiling tile parameters and greedy tilings of subsets of ℤ.
    Tile(TileArgs),
    /// Free-group permutation actions with few fixed points.
    Sofic(SoficArgs),
    /// Random conjugation extension of a free product action.
    Extend(ExtendArgs),
    /// Build a square-divisibility witness for an odometer system.
    SdConstruct(SdConstructArgs),
    /// Re-verify a witness file; exit 1 naming the failing conditions.
    SdVerify(SdVerifyArgs),
    /// Search for weak square-divisibility data inside an open set.
    WeakSdSearch(WeakSdArgs),
    /// Rotate random admissible elements to nilpotent ones in the crossed product.
    Nilpotency(NilpotencyArgs),
    /// Almost-invariant set extracted from a witness.
    Foelner(FoelnerArgs),
    /// Fixed-point decay of tower permutations over a range of depths.
    Decay(DecayArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match output::Output::new(&cli.out, cli.seed, cli.svg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Castle(a) => commands::castle(a, &out),
        Command::Tile(a) => commands::tile(a, &out),
        Command::Sofic(a) => commands::sofic(a, &out),
        Command::Extend(a) => commands::extend(a, &out),
        Command::SdConstruct(a) => commands::sd_construct(a, &out),
        Command::SdVerify(a) => commands::sd_verify(a, &out),
        Command::WeakSdSearch(a) => commands::weak_sd_search(a, &out),
        Command::Nilpotency(a) => commands::nilpotency(a, &out),
        Command::Foelner(a) => commands::foelner(a, &out),
        Command::Decay(a) => commands::decay(a, &out),
    };
    match result {
        Ok(commands::Status::Passed) => ExitCode::SUCCESS,
        Ok(commands::Status::Failed(diagnostic)) => {
            eprintln!("{diagnostic}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            ExitCode::from(1)
        }
    }
}
