mod args;
mod commands;
mod config;
mod manifest;

use args::{Cli, Command};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use manifest::{RunContext, RunManifest, StageFailure, OUTPUT_ROOT_ENV};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_FAILURE: u8 = 2;

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::MapSyllables(_) => "map-syllables",
        Command::FindNovel(_) => "find-novel",
        Command::BuildVocab(_) => "build-vocab",
        Command::Tokenize(_) => "tokenize",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Sweep(_) => "sweep",
        Command::Report(_) => "report",
        Command::GenerateSynthetic(_) => "generate-synthetic",
        Command::Rerun(_) => "rerun",
    }
}

fn beside(file: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", file.display()))
}

/// Where the manifest goes unless `--manifest` says otherwise: inside an
/// output directory, next to an output file, or in the output root.
fn default_manifest(ctx: &RunContext, command: &Command) -> PathBuf {
    let fallback = |name: &str| ctx.root.join(format!("{name}.manifest.json"));
    match command {
        Command::Ingest(a) => beside(&ctx.out_path(&a.out)),
        Command::MapSyllables(a) => beside(&ctx.out_path(&a.out)),
        Command::BuildVocab(a) => beside(&ctx.out_path(&a.out)),
        Command::FindNovel(a) => a.out.as_ref().map_or_else(|| fallback("find-novel"), |o| beside(&ctx.out_path(o))),
        Command::Tokenize(a) => a.out.as_ref().map_or_else(|| fallback("tokenize"), |o| beside(&ctx.out_path(o))),
        Command::Train(a) => ctx.out_path(&a.out).join("manifest.json"),
        Command::Evaluate(a) => ctx.out_path(&a.out).join("manifest.json"),
        Command::Sweep(a) => ctx.out_path(&a.out).join("manifest.json"),
        Command::GenerateSynthetic(a) => ctx.out_path(&a.out).join("manifest.json"),
        Command::Report(a) => match (&a.logs, &a.out) {
            (Some(_), out) => ctx.out_path(out.as_deref().unwrap_or(Path::new("report"))).join("manifest.json"),
            (None, Some(out)) => beside(&ctx.out_path(out)),
            (None, None) => fallback("report"),
        },
        Command::Rerun(_) => fallback("rerun"),
    }
}

fn output_root(cli: &Cli) -> PathBuf {
    cli.output_root
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli, argv: Vec<String>) -> ExitCode {
    if let Command::Rerun(a) = &cli.command {
        return rerun(&a.manifest_path);
    }
    let name = command_name(&cli.command);
    let mut ctx = RunContext::new(name, argv, output_root(&cli));
    ctx.manifest_path = Some(cli.manifest.clone().unwrap_or_else(|| default_manifest(&ctx, &cli.command)));
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(&mut ctx, a),
        Command::MapSyllables(a) => commands::map_syllables(&mut ctx, a),
        Command::FindNovel(a) => commands::find_novel(&mut ctx, a),
        Command::BuildVocab(a) => commands::build_vocab_cmd(&mut ctx, a),
        Command::Tokenize(a) => commands::tokenize(&mut ctx, a),
        Command::Train(a) => commands::train_cmd(&mut ctx, a),
        Command::Evaluate(a) => commands::evaluate(&mut ctx, a),
        Command::Sweep(a) => commands::sweep(&mut ctx, a),
        Command::Report(a) => commands::report(&mut ctx, a),
        Command::GenerateSynthetic(a) => commands::generate_synthetic(&mut ctx, a),
        Command::Rerun(_) => unreachable!("handled above"),
    };
    let written = ctx.finish(&result);
    if let Err(e) = &written {
        eprintln!("hanmlm {name}: could not write the run manifest: {e:#}");
    }
    match result {
        Ok(()) => {
            match written {
                Ok(path) => {
                    if let Some(p) = path {
                        eprintln!("manifest: {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(_) => ExitCode::from(EXIT_FAILURE),
            }
        }
        Err(e) => {
            match e.downcast_ref::<StageFailure>() {
                Some(s) => eprintln!("hanmlm {name}: failed at stage '{}': {}", s.stage, s.message),
                None => eprintln!("hanmlm {name}: failed: {e:#}"),
            }
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

/// Re-executes a recorded run in its original working directory with its
/// original output root.
fn rerun(path: &Path) -> ExitCode {
    let manifest = match RunManifest::load(path) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("hanmlm rerun: failed at stage 'reading manifest': {e:#}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    if let Err(e) = std::env::set_current_dir(&manifest.cwd) {
        eprintln!("hanmlm rerun: failed at stage 'reading manifest': {}: {e}", manifest.cwd);
        return ExitCode::from(EXIT_FAILURE);
    }
    let mut cli = match Cli::try_parse_from(&manifest.argv) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hanmlm rerun: recorded arguments no longer parse: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    if matches!(cli.command, Command::Rerun(_)) {
        eprintln!("hanmlm rerun: the manifest records another rerun");
        return ExitCode::from(EXIT_FAILURE);
    }
    cli.output_root = Some(PathBuf::from(&manifest.output_root));
    run(cli, manifest.argv)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    ExitCode::from(EXIT_USAGE)
                }
                _ => {
                    let _ = e.print();
                    eprintln!();
                    let _ = Cli::command().print_help();
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };
    run(cli, argv)
}
