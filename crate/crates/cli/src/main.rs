//! `fdr`: command-line front end for fdr-core.
//!
//! Every command prints a JSON verdict on stdout and writes it to the output
//! directory. Exit status: 0 pass, 1 tolerance failure, 2 usage or parse
//! error.

mod cli;
mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use cli::{Cli, Command};
use commands::{Failure, Outcome};

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::RiccatiSolve(_) => "riccati-solve",
        Command::Calibrate(_) => "calibrate",
        Command::Simulate(_) => "simulate",
        Command::CheckSingular(_) => "check-singular",
        Command::LieCheck(_) => "lie-check",
        Command::SvenssonFit(_) => "svensson-fit",
        Command::SvenssonSim(_) => "svensson-sim",
        Command::Equivalence(_) => "equivalence",
        Command::Invariance(_) => "invariance",
        Command::RankA3(_) => "rank-a3",
    }
}

fn dispatch(command: Command, out_dir: &Path) -> Result<Outcome, Failure> {
    match command {
        Command::RiccatiSolve(a) => commands::riccati_solve(a, out_dir),
        Command::Calibrate(a) => commands::calibrate(a, out_dir),
        Command::Simulate(a) => commands::simulate(a, out_dir),
        Command::CheckSingular(a) => commands::check_singular(a),
        Command::LieCheck(a) => commands::lie_check(a, out_dir),
        Command::SvenssonFit(a) => commands::svensson_fit_cmd(a),
        Command::SvenssonSim(a) => commands::svensson_sim(a, out_dir),
        Command::Equivalence(a) => commands::equivalence(a),
        Command::Invariance(a) => commands::invariance(a),
        Command::RankA3(a) => commands::rank(a),
    }
}

fn write_report(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", cli.out_dir.display())))?;
    let name = command_name(&cli.command);
    let outcome = dispatch(cli.command, &cli.out_dir)?;
    // lie-check names its report file among the outputs.
    let report_path = match name {
        "lie-check" => outcome.outputs[0].clone(),
        _ => cli.out_dir.join(format!("{name}.json")),
    };
    let mut outputs: Vec<PathBuf> = outcome.outputs.clone();
    if !outputs.contains(&report_path) {
        outputs.push(report_path.clone());
    }
    let verdict = json!({
        "command": name,
        "verdict": if outcome.pass { "pass" } else { "fail" },
        "report": outcome.report,
        "outputs": outputs,
    });
    let text = serde_json::to_string_pretty(&verdict).expect("verdict serializes");
    write_report(&report_path, &text)?;
    println!("{text}");
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            let v = json!({ "verdict": "error", "message": format!("{:#}", f.error) });
            println!(
                "{}",
                serde_json::to_string_pretty(&v).expect("verdict serializes")
            );
            eprintln!("error: {:#}", f.error);
            ExitCode::from(if f.usage { 2 } else { 1 })
        }
    }
}
