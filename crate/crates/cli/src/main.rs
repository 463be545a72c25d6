//! Command-line front end: loads a model, runs one analysis and writes a
//! JSON report. Exit status 0 is a clean verdict, 1 a violated property,
//! 2 a tool error.

mod args;
mod commands;
mod report;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> Result<i32, String> {
    let (report, out) = match &cli.command {
        Command::Validate(a) => (commands::validate(a)?, &a.output),
        Command::Reldeg(a) => (commands::reldeg(a)?, &a.common.output),
        Command::Zeros(a) => (commands::zeros(a)?, &a.output),
        Command::Normalform(a) => (commands::normalform(a)?, &a.output),
        Command::Simulate(a) => (commands::simulate(a)?, &a.common.output),
        Command::Jets(a) => (commands::jets(a)?, &a.common.output),
        Command::Certify(a) => (commands::certify_cmd(a)?, &a.common.output),
        Command::Falsify(a) => (commands::falsify_cmd(a)?, &a.common.output),
        Command::Lyapunov(a) => (commands::lyapunov(a)?, &a.common.output),
        Command::Gains(a) => (commands::gains(a)?, &a.output),
        Command::CorpusList(o) => (commands::corpus_list()?, o),
    };
    report.emit(out.out.as_deref())?;
    Ok(report.status.code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
