//! Command-line front end: `nd2a run` executes a configured experiment,
//! `nd2a world` writes a scenario description file, and `nd2a selftest` runs
//! the built-in invariant suites.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 on
//! runtime errors (including selftest failures).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use nd2a::harness::{
    csv_string, emit_csv, run_experiment, selftest, selftest_csv, ExperimentConfig,
};
use nd2a::{env, Error};

fn usage() {
    eprintln!("Usage: nd2a <command> [options]");
    eprintln!();
    eprintln!("Commands:");
    eprintln!("  run       Run a planning experiment and emit CSV rows");
    eprintln!("    --config <file>       flat key = value config file");
    eprintln!("    --scenario <name>     floors | random");
    eprintln!("    --case <1..4>         budget regime");
    eprintln!("    --horizon <n>         planning horizon");
    eprintln!("    --budget <n>          hypothesis budget for the case");
    eprintln!("    --seed <n>            base seed");
    eprintln!("    --reps <n>            repetitions");
    eprintln!("    --out <file>          CSV output path (default: stdout)");
    eprintln!("    --set <key=value>     any config key override (repeatable)");
    eprintln!();
    eprintln!("  world     Build a scenario and write its description file");
    eprintln!("    --scenario <name> --out <file> [--floors n]");
    eprintln!("    [--landmarks-per-floor n] [--num-landmarks n]");
    eprintln!("    [--num-classes n] [--extent x] [--seed n]");
    eprintln!();
    eprintln!("  selftest  Run the invariant suites [--out <file>]");
}

fn next_value(args: &[String], i: &mut usize, flag: &str) -> Result<String, Error> {
    *i += 1;
    args.get(*i)
        .cloned()
        .ok_or_else(|| Error::InvalidConfig(format!("{flag} needs a value")))
}

fn cmd_run(args: &[String]) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::default();
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut budget: Option<usize> = None;
    let mut config_path: Option<PathBuf> = None;
    let mut out: Option<PathBuf> = None;

    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--config" => config_path = Some(PathBuf::from(next_value(args, &mut i, "--config")?)),
            "--scenario" => {
                overrides.push(("scenario".into(), next_value(args, &mut i, "--scenario")?))
            }
            "--case" => overrides.push(("case".into(), next_value(args, &mut i, "--case")?)),
            "--horizon" => {
                overrides.push(("horizon".into(), next_value(args, &mut i, "--horizon")?))
            }
            "--seed" => overrides.push(("seed".into(), next_value(args, &mut i, "--seed")?)),
            "--reps" => overrides.push(("reps".into(), next_value(args, &mut i, "--reps")?)),
            "--budget" => {
                let v = next_value(args, &mut i, "--budget")?;
                budget =
                    Some(v.parse().map_err(|_| {
                        Error::InvalidConfig(format!("bad value for --budget: {v}"))
                    })?);
            }
            "--out" => out = Some(PathBuf::from(next_value(args, &mut i, "--out")?)),
            "--set" => {
                let kv = next_value(args, &mut i, "--set")?;
                let (k, v) = kv.split_once('=').ok_or_else(|| {
                    Error::InvalidConfig(format!("--set expects key=value: {kv}"))
                })?;
                overrides.push((k.trim().into(), v.trim().into()));
            }
            other => return Err(Error::InvalidConfig(format!("unknown flag: {other}"))),
        }
        i += 1;
    }

    if let Some(path) = config_path {
        cfg = ExperimentConfig::from_file(&path)?;
    }
    for (k, v) in &overrides {
        cfg.set(k, v)?;
    }
    if let Some(b) = budget {
        cfg.set_budget(b);
    }
    if let Some(o) = &out {
        cfg.out = Some(o.display().to_string());
    }

    let rows = run_experiment(&cfg)?;
    match cfg.out.as_deref() {
        Some(path) => {
            emit_csv(&rows, Path::new(path))?;
            eprintln!("wrote {} rows to {path}", rows.len());
        }
        None => print!("{}", csv_string(&rows)),
    }
    Ok(())
}

fn cmd_world(args: &[String]) -> Result<(), Error> {
    let mut scenario = String::from("floors");
    let mut floors = 4usize;
    let mut landmarks_per_floor = 2usize;
    let mut num_landmarks = 20usize;
    let mut num_classes = 5usize;
    let mut extent = 30.0f64;
    let mut seed = 0u64;
    let mut out: Option<PathBuf> = None;

    let mut i = 0;
    while i < args.len() {
        let flag = args[i].clone();
        let parse_num = |v: &str, flag: &str| -> Result<usize, Error> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value for {flag}: {v}")))
        };
        match flag.as_str() {
            "--scenario" => scenario = next_value(args, &mut i, "--scenario")?,
            "--floors" => floors = parse_num(&next_value(args, &mut i, "--floors")?, "--floors")?,
            "--landmarks-per-floor" => {
                landmarks_per_floor = parse_num(
                    &next_value(args, &mut i, "--landmarks-per-floor")?,
                    "--landmarks-per-floor",
                )?
            }
            "--num-landmarks" => {
                num_landmarks = parse_num(
                    &next_value(args, &mut i, "--num-landmarks")?,
                    "--num-landmarks",
                )?
            }
            "--num-classes" => {
                num_classes =
                    parse_num(&next_value(args, &mut i, "--num-classes")?, "--num-classes")?
            }
            "--extent" => {
                let v = next_value(args, &mut i, "--extent")?;
                extent = v
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad value for --extent: {v}")))?;
            }
            "--seed" => {
                let v = next_value(args, &mut i, "--seed")?;
                seed = v
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad value for --seed: {v}")))?;
            }
            "--out" => out = Some(PathBuf::from(next_value(args, &mut i, "--out")?)),
            other => return Err(Error::InvalidConfig(format!("unknown flag: {other}"))),
        }
        i += 1;
    }

    let (world, modes) = match scenario.as_str() {
        "floors" => env::build_floors::<f64>(floors, landmarks_per_floor, seed)?,
        "random" => env::build_random::<f64>(seed, num_landmarks, num_classes, extent)?,
        other => return Err(Error::InvalidConfig(format!("unknown scenario: {other}"))),
    };
    let text = world.to_text(&modes);
    match out {
        Some(path) => {
            std::fs::write(&path, &text)?;
            eprintln!(
                "wrote {} landmarks and {} modes to {}",
                world.landmarks().len(),
                modes.len(),
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_selftest(args: &[String]) -> Result<bool, Error> {
    let mut out: Option<PathBuf> = None;
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--out" => out = Some(PathBuf::from(next_value(args, &mut i, "--out")?)),
            other => return Err(Error::InvalidConfig(format!("unknown flag: {other}"))),
        }
        i += 1;
    }
    let results = selftest()?;
    let mut all_pass = true;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {} ({} cases, {} failures)",
            r.name, r.cases, r.failures
        );
        all_pass &= r.passed();
    }
    if let Some(path) = out {
        std::fs::write(&path, selftest_csv(&results))?;
    }
    Ok(all_pass)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        usage();
        return ExitCode::from(1);
    };
    let rest = &args[1..];
    let outcome = match command.as_str() {
        "run" => cmd_run(rest).map(|()| true),
        "world" => cmd_world(rest).map(|()| true),
        "selftest" => cmd_selftest(rest),
        "--help" | "-h" | "help" => {
            usage();
            return ExitCode::SUCCESS;
        }
        other => {
            eprintln!("unknown command: {other}");
            usage();
            return ExitCode::from(1);
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e @ Error::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
