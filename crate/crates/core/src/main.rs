use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use oass_signal::experiment::{self, Experiment, ScenarioKind, SpecFile, SweepRange};
use oass_signal::sim::Strategy;
use oass_signal::verify::{self, Fault, VerifyOptions};

/// Traffic signal MPC experiments on a store-and-forward network, solved
/// with the online active set strategy.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// Experiment file (TOML with [network], [scenario], [mpc] and [run]).
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,

    /// Strategy to run; repeat for several. Default: all three.
    #[arg(long, value_name = "cold|oass|ours")]
    strategy: Vec<Strategy>,

    /// Demand scenario; repeat for both. Default: constant and random.
    #[arg(long, value_name = "constant|random")]
    scenario: Vec<ScenarioKind>,

    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Sample intervals per cycle for `ours`.
    #[arg(long, value_name = "N")]
    n_itr: Option<usize>,

    /// Sweep the interval count of `ours` over LO..=HI instead of a normal run.
    #[arg(long, value_name = "LO:HI")]
    sweep: Option<SweepRange>,

    /// Parallel runs; 0 uses every core.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Run the built-in oracle suite and exit.
    #[arg(long)]
    verify: bool,

    #[arg(long, hide = true, value_name = "FAULT")]
    inject_fault: Option<FaultArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    HAsymmetry,
}

impl Cli {
    fn overrides(&self) -> SpecFile {
        let mut s = SpecFile::default();
        if !self.strategy.is_empty() {
            s.run.strategies = Some(self.strategy.clone());
        }
        if !self.scenario.is_empty() {
            s.scenario.kinds = Some(self.scenario.clone());
        }
        s.scenario.seed = self.seed;
        s.mpc.n_itr = self.n_itr;
        s.run.sweep = self.sweep.map(|r| format!("{}:{}", r.lo, r.hi));
        s.run.jobs = self.jobs;
        s.run.out = self.out.clone();
        if self.verify {
            s.run.verify = Some(true);
        }
        s
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.spec {
        Some(path) => SpecFile::load(path)?,
        None => SpecFile::default(),
    };
    let spec = file.overlay(cli.overrides());

    if spec.run.verify == Some(true) {
        let opts = VerifyOptions {
            fault: cli
                .inject_fault
                .map(|FaultArg::HAsymmetry| Fault::HAsymmetry),
            ..VerifyOptions::default()
        };
        let report = verify::run(&opts);
        print!("{report}");
        return Ok(if report.passed() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        });
    }

    let exp = Experiment::resolve(spec)?;
    if let Some(range) = exp.sweep {
        let rows = experiment::sweep(&exp, range)?;
        let path = experiment::write_sweep(&exp, &rows)?;
        for r in rows.iter().filter(|r| r.operating_point) {
            println!(
                "{}: operating point n_itr = {} (avg last-interval changes {:.3})",
                r.scenario, r.n_itr, r.avg_changes_last
            );
        }
        println!("wrote {}", path.display());
        return Ok(ExitCode::SUCCESS);
    }

    let results = experiment::run_all(&exp)?;
    let written = experiment::write_outputs(&exp, &results)
        .with_context(|| format!("writing results to {}", exp.out.display()))?;
    print!("{}", experiment::summary(&results));
    let fallbacks: usize = results.iter().map(|r| r.metrics.fallbacks()).sum();
    if fallbacks > 0 {
        println!("\n{fallbacks} cycles used the fallback plan");
    }
    println!("\nwrote {} files to {}", written.len(), exp.out.display());
    Ok(ExitCode::SUCCESS)
}
