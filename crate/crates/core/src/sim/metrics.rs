use std::io::{self, Write};
use std::time::Duration;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mpc::Audit;
use crate::sfm::TrafficNetwork;

use super::Strategy;

pub const METRICS_HEADER: &str = "# metrics v1";
pub const TRAJECTORY_HEADER: &str = "# trajectory v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Changes over every interval that contributed to this cycle's plan.
    pub changes_total: usize,
    /// Changes in the interval that produced the plan.
    pub changes_last_interval: usize,
    pub interval_changes: Vec<usize>,
    /// Wall time of the interval that produced the plan.
    pub solve_time: Duration,
    pub n_itr: usize,
    pub fallback: bool,
    /// Queues when the plan was computed.
    pub state: DVector<f64>,
    pub plan: DVector<f64>,
    /// Source inflow drawn for the cycle, veh/h.
    pub demand: f64,
    pub tts_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub strategy: Strategy,
    pub cycles: Vec<CycleRecord>,
    /// Queues after the last cycle.
    pub final_state: DVector<f64>,
    pub tts: f64,
    pub audit: Option<Audit>,
}

impl RunMetrics {
    pub fn max_solve_time(&self) -> Duration {
        self.cycles
            .iter()
            .map(|c| c.solve_time)
            .max()
            .unwrap_or_default()
    }

    pub fn avg_solve_time(&self) -> Duration {
        if self.cycles.is_empty() {
            return Duration::ZERO;
        }
        self.cycles.iter().map(|c| c.solve_time).sum::<Duration>() / self.cycles.len() as u32
    }

    pub fn avg_changes_total(&self) -> f64 {
        mean(self.cycles.iter().map(|c| c.changes_total as f64))
    }

    pub fn avg_changes_last(&self) -> f64 {
        mean(self.cycles.iter().map(|c| c.changes_last_interval as f64))
    }

    /// Fraction of cycles after `warmup` whose plan needed no working-set change.
    pub fn zero_change_fraction(&self, warmup: usize) -> f64 {
        let rest = self.cycles.iter().skip(warmup);
        mean(rest.map(|c| {
            if c.changes_last_interval == 0 {
                1.0
            } else {
                0.0
            }
        }))
    }

    pub fn fallbacks(&self) -> usize {
        self.cycles.iter().filter(|c| c.fallback).count()
    }

    /// Same as `==` but ignoring wall-time fields.
    pub fn same_outcome(&self, other: &RunMetrics) -> bool {
        let strip = |m: &RunMetrics| {
            let mut m = m.clone();
            for c in &mut m.cycles {
                c.solve_time = Duration::ZERO;
            }
            m
        };
        strip(self) == strip(other)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Total time spent: `sum_k sum_z T x_z(k)`, vehicle-seconds.
pub fn compute_tts(trajectory: &[DVector<f64>], cycle_time: f64) -> f64 {
    trajectory.iter().map(|x| cycle_time * x.sum()).sum()
}

/// Fractions of cycles with `rho <= 0.5`, `0.5 < rho <= 1`, `1 < rho <= 1.5`
/// and `rho > 1.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoBuckets(pub [f64; 4]);

impl RhoBuckets {
    pub const LABELS: [&'static str; 4] = ["<=0.5", "(0.5,1]", "(1,1.5]", ">1.5"];

    pub fn much_better(&self) -> f64 {
        self.0[0]
    }
}

/// Per-cycle ratio of the plan-producing solve time of `ours` to that of
/// `oass`, bucketed.
pub fn compare_rho(ours: &RunMetrics, oass: &RunMetrics) -> Result<RhoBuckets> {
    if ours.cycles.len() != oass.cycles.len() {
        return Err(Error::LengthMismatch(ours.cycles.len(), oass.cycles.len()));
    }
    let mut counts = [0usize; 4];
    for (a, b) in ours.cycles.iter().zip(&oass.cycles) {
        let (ta, tb) = (a.solve_time.as_secs_f64(), b.solve_time.as_secs_f64());
        let rho = if tb > 0.0 {
            ta / tb
        } else if ta > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        let k = if rho <= 0.5 {
            0
        } else if rho <= 1.0 {
            1
        } else if rho <= 1.5 {
            2
        } else {
            3
        };
        counts[k] += 1;
    }
    let n = ours.cycles.len().max(1) as f64;
    Ok(RhoBuckets(counts.map(|c| c as f64 / n)))
}

pub fn write_metrics_csv<W: Write>(out: &mut W, m: &RunMetrics) -> io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    writeln!(
        out,
        "cycle,strategy,changes_total,changes_last_interval,solve_time_us,tts_cum"
    )?;
    for c in &m.cycles {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.cycle,
            m.strategy,
            c.changes_total,
            c.changes_last_interval,
            c.solve_time.as_micros(),
            c.tts_cum
        )?;
    }
    Ok(())
}

/// One row per cycle and link: the queue when the plan was computed and the
/// link's effective green under that plan.
pub fn write_trajectory_csv<W: Write>(
    out: &mut W,
    net: &TrafficNetwork,
    m: &RunMetrics,
) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    writeln!(out, "cycle,link,queue,green")?;
    for c in &m.cycles {
        for (z, link) in net.links().iter().enumerate() {
            let green = net.green_of(z, c.plan.as_slice());
            writeln!(out, "{},{},{},{}", c.cycle, link.id, c.state[z], green)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(times_us: &[u64]) -> RunMetrics {
        RunMetrics {
            strategy: Strategy::Oass,
            cycles: times_us
                .iter()
                .enumerate()
                .map(|(i, &t)| CycleRecord {
                    cycle: i,
                    changes_total: 0,
                    changes_last_interval: 0,
                    interval_changes: vec![0],
                    solve_time: Duration::from_micros(t),
                    n_itr: 1,
                    fallback: false,
                    state: DVector::zeros(1),
                    plan: DVector::zeros(1),
                    demand: 0.0,
                    tts_cum: 0.0,
                })
                .collect(),
            final_state: DVector::zeros(1),
            tts: 0.0,
            audit: None,
        }
    }

    #[test]
    fn tts_examples() {
        assert_eq!(compute_tts(&[DVector::zeros(3)], 60.0), 0.0);
        let x = DVector::from_element(1, 10.0);
        assert_eq!(compute_tts(&[x.clone(), x], 60.0), 1200.0);
    }

    #[test]
    fn rho_buckets() {
        let a = run(&[100, 100, 100]);
        assert_eq!(compare_rho(&a, &a).unwrap().0, [0.0, 1.0, 0.0, 0.0]);
        let fast = run(&[50, 50, 50]);
        assert_eq!(compare_rho(&fast, &a).unwrap().0, [1.0, 0.0, 0.0, 0.0]);
        let mixed = run(&[120, 200, 40]);
        let b = compare_rho(&mixed, &a).unwrap();
        assert_eq!(b.0, [1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert!((b.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            compare_rho(&run(&[1]), &a),
            Err(Error::LengthMismatch(1, 3))
        ));
    }

    #[test]
    fn csv_has_version_header() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &run(&[7])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.nth(1), Some("0,oass,0,0,7,0"));
    }
}
