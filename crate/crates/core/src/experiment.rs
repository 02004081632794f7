//! Experiment files and the runs behind the command line.
//!
//! An experiment file is TOML with four optional sections:
//!
//! ```toml
//! [network]
//! file = "toy.toml"            # relative to the experiment file; built-in toy network if absent
//!
//! [scenario]
//! kinds = ["constant", "random"]
//! cycles = 100
//! constant_rate = 1200.0       # veh/h
//! random_lo = 200.0            # veh/h
//! random_hi = 2400.0           # veh/h
//! seed = 1
//!
//! [mpc]
//! horizon = 3
//! n_itr = 30
//! u_min = 5.0
//! u_max = 55.0
//! budget = 1                   # changes per intermediate interval; unlimited if absent
//! adaptive_ceiling = 60        # re-estimate n_itr each cycle, at most this many
//!
//! [run]
//! strategies = ["cold", "oass", "ours"]
//! sampling = "midcycle"        # or "stationary"
//! out = "out"
//! jobs = 0                     # 0 uses every core
//! sweep = "1:60"
//! verify = false
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mpc::MpcConfig;
use crate::sfm::TrafficNetwork;
use crate::sim::{
    compare_rho, run_closed_loop, write_metrics_csv, write_trajectory_csv, IntervalRule,
    RhoBuckets, RunMetrics, RunOptions, Sampling, Scenario, Strategy,
};

/// The toy network shipped with the crate.
pub const TOY_NETWORK: &str = include_str!("../data/toy.toml");

pub const SWEEP_HEADER: &str = "# sweep v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Constant,
    Random,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Constant => "constant",
            ScenarioKind::Random => "random",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ScenarioKind::Constant),
            "random" => Ok(ScenarioKind::Random),
            other => Err(Error::InvalidConfig(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Inclusive range of interval counts, written `LO:HI`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRange {
    pub lo: usize,
    pub hi: usize,
}

impl FromStr for SweepRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidConfig(format!(
                "sweep range must be LO:HI with 1 <= LO <= HI, got `{s}`"
            ))
        };
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || lo > hi {
            return Err(bad());
        }
        Ok(SweepRange { lo, hi })
    }
}

/// Every field optional, so a file and the command line can be layered.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub mpc: MpcSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kinds: Option<Vec<ScenarioKind>>,
    pub cycles: Option<usize>,
    pub constant_rate: Option<f64>,
    pub random_lo: Option<f64>,
    pub random_hi: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: Option<usize>,
    pub n_itr: Option<usize>,
    pub u_min: Option<f64>,
    pub u_max: Option<f64>,
    pub budget: Option<usize>,
    pub adaptive_ceiling: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub strategies: Option<Vec<Strategy>>,
    pub sampling: Option<Sampling>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub sweep: Option<String>,
    pub verify: Option<bool>,
}

impl SpecFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    /// Reads a file. A relative network path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let file_err = |message: String| Error::File {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let mut spec = SpecFile::from_toml_str(&text).map_err(|e| file_err(e.to_string()))?;
        if let Some(f) = spec.network.file.as_mut() {
            if f.is_relative() {
                if let Some(dir) = path.parent() {
                    *f = dir.join(&*f);
                }
            }
        }
        Ok(spec)
    }

    /// `top` wins wherever it sets a field.
    pub fn overlay(self, top: SpecFile) -> SpecFile {
        SpecFile {
            network: NetworkSection {
                file: top.network.file.or(self.network.file),
            },
            scenario: ScenarioSection {
                kinds: top.scenario.kinds.or(self.scenario.kinds),
                cycles: top.scenario.cycles.or(self.scenario.cycles),
                constant_rate: top.scenario.constant_rate.or(self.scenario.constant_rate),
                random_lo: top.scenario.random_lo.or(self.scenario.random_lo),
                random_hi: top.scenario.random_hi.or(self.scenario.random_hi),
                seed: top.scenario.seed.or(self.scenario.seed),
            },
            mpc: MpcSection {
                horizon: top.mpc.horizon.or(self.mpc.horizon),
                n_itr: top.mpc.n_itr.or(self.mpc.n_itr),
                u_min: top.mpc.u_min.or(self.mpc.u_min),
                u_max: top.mpc.u_max.or(self.mpc.u_max),
                budget: top.mpc.budget.or(self.mpc.budget),
                adaptive_ceiling: top.mpc.adaptive_ceiling.or(self.mpc.adaptive_ceiling),
            },
            run: RunSection {
                strategies: top.run.strategies.or(self.run.strategies),
                sampling: top.run.sampling.or(self.run.sampling),
                out: top.run.out.or(self.run.out),
                jobs: top.run.jobs.or(self.run.jobs),
                sweep: top.run.sweep.or(self.run.sweep),
                verify: top.run.verify.or(self.run.verify),
            },
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub network: TrafficNetwork,
    pub scenarios: Vec<Scenario>,
    pub config: MpcConfig,
    pub intervals: IntervalRule,
    pub strategies: Vec<Strategy>,
    pub sampling: Sampling,
    pub out: PathBuf,
    pub jobs: usize,
    pub sweep: Option<SweepRange>,
    pub verify: bool,
}

impl Experiment {
    /// Fills every unset field with its default and loads the network.
    pub fn resolve(spec: SpecFile) -> Result<Self> {
        let network = match &spec.network.file {
            Some(path) => TrafficNetwork::load(path)?,
            None => TrafficNetwork::from_toml_str(TOY_NETWORK)?,
        };
        let sc = &spec.scenario;
        let cycles = sc.cycles.unwrap_or(100);
        let seed = sc.seed.unwrap_or(1);
        let mut kinds = sc
            .kinds
            .clone()
            .unwrap_or_else(|| vec![ScenarioKind::Constant, ScenarioKind::Random]);
        kinds.sort();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(Error::InvalidConfig("no scenario selected".into()));
        }
        let scenarios = kinds
            .iter()
            .map(|k| {
                let s = match k {
                    ScenarioKind::Constant => {
                        Scenario::constant(sc.constant_rate.unwrap_or(1200.0), cycles)
                    }
                    ScenarioKind::Random => Scenario::random(
                        sc.random_lo.unwrap_or(200.0),
                        sc.random_hi.unwrap_or(2400.0),
                        cycles,
                        seed,
                    ),
                };
                Scenario { seed, ..s }
            })
            .collect::<Vec<_>>();
        for s in &scenarios {
            s.validate()?;
        }

        let m = &spec.mpc;
        let mut config = MpcConfig::for_network(&network, m.horizon.unwrap_or(3))?;
        config.n_itr = m.n_itr.unwrap_or(30);
        config.u_min = m.u_min.unwrap_or(config.u_min);
        config.u_max = m.u_max.unwrap_or(config.u_max);
        config.budget = m.budget;
        config.validate(network.n_links(), network.n_inputs())?;
        let intervals = match m.adaptive_ceiling {
            Some(ceiling) => IntervalRule::Adaptive { ceiling },
            None => IntervalRule::Fixed,
        };

        let r = &spec.run;
        let mut strategies = r
            .strategies
            .clone()
            .unwrap_or_else(|| Strategy::ALL.to_vec());
        strategies.sort();
        strategies.dedup();
        if strategies.is_empty() {
            return Err(Error::InvalidConfig("no strategy selected".into()));
        }
        let sweep = r.sweep.as_deref().map(str::parse).transpose()?;
        Ok(Experiment {
            network,
            scenarios,
            config,
            intervals,
            strategies,
            sampling: r.sampling.unwrap_or_default(),
            out: r.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            jobs: r.jobs.unwrap_or(0),
            sweep,
            verify: r.verify.unwrap_or(false),
        })
    }

    fn options(&self, strategy: Strategy) -> RunOptions {
        RunOptions {
            sampling: self.sampling,
            intervals: self.intervals,
            ..RunOptions::new(strategy)
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
    }
}

/// One finished closed-loop run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: Scenario,
    pub metrics: RunMetrics,
}

/// Runs every scenario under every strategy in parallel. Results come back
/// in scenario-major order.
pub fn run_all(exp: &Experiment) -> Result<Vec<RunResult>> {
    let jobs: Vec<(&Scenario, Strategy)> = exp
        .scenarios
        .iter()
        .flat_map(|s| exp.strategies.iter().map(move |&st| (s, st)))
        .collect();
    exp.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(sc, st)| {
                let metrics = run_closed_loop(&exp.network, sc, &exp.config, &exp.options(st))
                    .map_err(|e| e.in_run(format!("{}/{st}", sc.name)))?;
                Ok(RunResult {
                    scenario: sc.clone(),
                    metrics,
                })
            })
            .collect()
    })
}

/// Writes `metrics_<scenario>_<strategy>.csv` and
/// `trajectory_<scenario>_<strategy>.csv` for every run. Returns the paths.
pub fn write_outputs(exp: &Experiment, results: &[RunResult]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&exp.out).map_err(|e| io_err(&exp.out, e))?;
    let mut written = Vec::new();
    for r in results {
        let stem = format!("{}_{}", r.scenario.name, r.metrics.strategy);
        let path = exp.out.join(format!("metrics_{stem}.csv"));
        write_file(&path, |w| write_metrics_csv(w, &r.metrics))?;
        written.push(path);
        let path = exp.out.join(format!("trajectory_{stem}.csv"));
        write_file(&path, |w| write_trajectory_csv(w, &exp.network, &r.metrics))?;
        written.push(path);
    }
    Ok(written)
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

/// Table of maximum and average solve time per strategy and scenario, then
/// change counts and total time spent, then the time-ratio buckets when
/// both homotopy strategies ran.
pub fn summary(results: &[RunResult]) -> String {
    let mut scenarios: Vec<&str> = Vec::new();
    for r in results {
        if !scenarios.contains(&r.scenario.name.as_str()) {
            scenarios.push(&r.scenario.name);
        }
    }
    let find = |sc: &str, st: Strategy| {
        results
            .iter()
            .find(|r| r.scenario.name == sc && r.metrics.strategy == st)
    };
    let mut strategies: Vec<Strategy> = results.iter().map(|r| r.metrics.strategy).collect();
    strategies.sort();
    strategies.dedup();

    let mut out = String::new();
    let _ = write!(out, "{:<10}", "solve ms");
    for sc in &scenarios {
        let _ = write!(
            out,
            " {:>12} {:>12}",
            format!("{sc} max"),
            format!("{sc} avg")
        );
    }
    out.push('\n');
    for &st in &strategies {
        let _ = write!(out, "{:<10}", st.label());
        for sc in &scenarios {
            match find(sc, st) {
                Some(r) => {
                    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
                    let _ = write!(
                        out,
                        " {:>12.4} {:>12.4}",
                        ms(r.metrics.max_solve_time()),
                        ms(r.metrics.avg_solve_time())
                    );
                }
                None => {
                    let _ = write!(out, " {:>12} {:>12}", "-", "-");
                }
            }
        }
        out.push('\n');
    }

    out.push('\n');
    let _ = write!(out, "{:<10}", "changes");
    for sc in &scenarios {
        let _ = write!(
            out,
            " {:>12} {:>12} {:>12}",
            format!("{sc} avg"),
            format!("{sc} zero"),
            format!("{sc} tts")
        );
    }
    out.push('\n');
    for &st in &strategies {
        let _ = write!(out, "{:<10}", st.label());
        for sc in &scenarios {
            match find(sc, st) {
                Some(r) => {
                    let _ = write!(
                        out,
                        " {:>12.3} {:>12.2} {:>12.0}",
                        r.metrics.avg_changes_last(),
                        r.metrics.zero_change_fraction(5),
                        r.metrics.tts
                    );
                }
                None => {
                    let _ = write!(out, " {:>12} {:>12} {:>12}", "-", "-", "-");
                }
            }
        }
        out.push('\n');
    }

    let rho: Vec<(&str, RhoBuckets)> = scenarios
        .iter()
        .filter_map(|sc| {
            let (ours, oass) = (find(sc, Strategy::Ours)?, find(sc, Strategy::Oass)?);
            compare_rho(&ours.metrics, &oass.metrics)
                .ok()
                .map(|b| (*sc, b))
        })
        .collect();
    if !rho.is_empty() {
        out.push('\n');
        let _ = write!(out, "{:<10}", "rho");
        for (sc, _) in &rho {
            let _ = write!(out, " {sc:>12}");
        }
        out.push('\n');
        for (k, label) in RhoBuckets::LABELS.iter().enumerate() {
            let _ = write!(out, "{label:<10}");
            for (_, b) in &rho {
                let _ = write!(out, " {:>11.0}%", 100.0 * b.0[k]);
            }
            out.push('\n');
        }
    }
    out
}

/// Averages for one interval count in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scenario: String,
    pub n_itr: usize,
    pub avg_changes_last: f64,
    pub avg_changes_total: f64,
    pub avg_solve_time_us: f64,
    pub operating_point: bool,
}

/// Runs the interval-splitting controller once per interval count in
/// `range` and scenario, with a fixed count per run.
pub fn sweep(exp: &Experiment, range: SweepRange) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(&Scenario, usize)> = exp
        .scenarios
        .iter()
        .flat_map(|s| (range.lo..=range.hi).map(move |n| (s, n)))
        .collect();
    let mut rows: Vec<SweepRow> = exp.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(sc, n)| {
                let cfg = MpcConfig {
                    n_itr: n,
                    ..exp.config.clone()
                };
                let opts = RunOptions {
                    intervals: IntervalRule::Fixed,
                    ..exp.options(Strategy::Ours)
                };
                let m = run_closed_loop(&exp.network, sc, &cfg, &opts)
                    .map_err(|e| e.in_run(format!("{}/ours n_itr={n}", sc.name)))?;
                Ok(SweepRow {
                    scenario: sc.name.clone(),
                    n_itr: n,
                    avg_changes_last: m.avg_changes_last(),
                    avg_changes_total: m.avg_changes_total(),
                    avg_solve_time_us: m.avg_solve_time().as_secs_f64() * 1e6,
                    operating_point: false,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for sc in &exp.scenarios {
        let idx: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].scenario == sc.name)
            .collect();
        if let Some(k) = operating_point(
            &idx.iter()
                .map(|&i| rows[i].avg_changes_last)
                .collect::<Vec<_>>(),
        ) {
            rows[idx[k]].operating_point = true;
        }
    }
    Ok(rows)
}

/// Index of the first value within a tenth of the spread above the minimum:
/// the fewest intervals that get most of the achievable reduction.
pub fn operating_point(values: &[f64]) -> Option<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v <= lo + 0.1 * (hi - lo))
}

pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    writeln!(
        out,
        "scenario,n_itr,avg_changes_last,avg_changes_total,avg_solve_time_us,operating_point"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.3},{}",
            r.scenario,
            r.n_itr,
            r.avg_changes_last,
            r.avg_changes_total,
            r.avg_solve_time_us,
            u8::from(r.operating_point)
        )?;
    }
    Ok(())
}

/// Writes `sweep.csv` into the output directory.
pub fn write_sweep(exp: &Experiment, rows: &[SweepRow]) -> Result<PathBuf> {
    fs::create_dir_all(&exp.out).map_err(|e| io_err(&exp.out, e))?;
    let path = exp.out.join("sweep.csv");
    write_file(&path, |w| write_sweep_csv(w, rows))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_range_parsing() {
        assert_eq!(
            "1:60".parse::<SweepRange>().unwrap(),
            SweepRange { lo: 1, hi: 60 }
        );
        assert_eq!(
            "3:3".parse::<SweepRange>().unwrap(),
            SweepRange { lo: 3, hi: 3 }
        );
        for bad in ["0:4", "5:2", "7", "a:b"] {
            assert!(bad.parse::<SweepRange>().is_err(), "{bad}");
        }
    }

    #[test]
    fn overlay_prefers_top() {
        let file =
            SpecFile::from_toml_str("[scenario]\nseed = 4\ncycles = 7\n[mpc]\nn_itr = 9").unwrap();
        let mut flags = SpecFile::default();
        flags.scenario.seed = Some(11);
        let merged = file.overlay(flags);
        assert_eq!(merged.scenario.seed, Some(11));
        assert_eq!(merged.scenario.cycles, Some(7));
        assert_eq!(merged.mpc.n_itr, Some(9));
        let exp = Experiment::resolve(merged).unwrap();
        assert_eq!(exp.config.n_itr, 9);
        assert!(exp.scenarios.iter().all(|s| s.seed == 11 && s.cycles == 7));
    }

    #[test]
    fn defaults() {
        let exp = Experiment::resolve(SpecFile::default()).unwrap();
        assert_eq!(exp.strategies, Strategy::ALL.to_vec());
        assert_eq!(exp.scenarios.len(), 2);
        assert_eq!(exp.config.horizon, 3);
        assert_eq!(exp.config.n_itr, 30);
        assert_eq!(exp.network.cycle_time(), 55.0);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(SpecFile::from_toml_str("[mpc]\nhorizn = 3").is_err());
    }

    #[test]
    fn operating_point_rule() {
        assert_eq!(operating_point(&[5.0, 3.0, 1.0, 0.5, 0.45, 0.4]), Some(3));
        assert_eq!(operating_point(&[0.0, 0.0]), Some(0));
        assert_eq!(operating_point(&[]), None);
    }
}
