use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source inflow pattern, veh/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DemandKind {
    Constant {
        rate: f64,
    },
    /// Uniform on `[lo, hi]`, redrawn every cycle.
    Random {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub demand: DemandKind,
    pub cycles: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn constant(rate: f64, cycles: usize) -> Self {
        Scenario {
            name: "constant".into(),
            demand: DemandKind::Constant { rate },
            cycles,
            seed: 0,
        }
    }

    pub fn random(lo: f64, hi: f64, cycles: usize, seed: u64) -> Self {
        Scenario {
            name: "random".into(),
            demand: DemandKind::Random { lo, hi },
            cycles,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.demand {
            DemandKind::Constant { rate } if !(rate > 0.0) => Err(Error::InvalidConfig(format!(
                "constant demand must be positive, got {rate}"
            ))),
            DemandKind::Random { lo, hi } if !(0.0 <= lo && lo < hi) => Err(Error::InvalidConfig(
                format!("random demand needs 0 <= lo < hi, got [{lo}, {hi}]"),
            )),
            _ => Ok(()),
        }
    }

    /// Expected inflow, veh/h. This is what the predictor assumes.
    pub fn nominal(&self) -> f64 {
        match self.demand {
            DemandKind::Constant { rate } => rate,
            DemandKind::Random { lo, hi } => 0.5 * (lo + hi),
        }
    }
}

/// Source inflow for one cycle, veh/h.
pub fn demand_draw<R: Rng + ?Sized>(scenario: &Scenario, _cycle: usize, rng: &mut R) -> f64 {
    match scenario.demand {
        DemandKind::Constant { rate } => rate,
        DemandKind::Random { lo, hi } => rng.random_range(lo..=hi),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Solve from scratch every cycle.
    Cold,
    /// Homotopy from the previous cycle's solution at the cycle boundary.
    Oass,
    /// Homotopy spread over the sample intervals of the previous cycle.
    Ours,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Cold, Strategy::Oass, Strategy::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Cold => "cold",
            Strategy::Oass => "oass",
            Strategy::Ours => "ours",
        }
    }

    /// Row label in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Cold => "MPC",
            Strategy::Oass => "MPC-oass",
            Strategy::Ours => "MPC-ours",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cold" => Ok(Strategy::Cold),
            "oass" => Ok(Strategy::Oass),
            "ours" => Ok(Strategy::Ours),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Where intermediate-interval samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// The plant part-way through the cycle under the plan being executed.
    #[default]
    Midcycle,
    /// Every sample equals the end-of-cycle measurement.
    Stationary,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_draw() {
        let sc = Scenario::constant(1200.0, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(demand_draw(&sc, 7, &mut rng), 1200.0);
    }

    #[test]
    fn random_draws_in_range_and_repeat() {
        let sc = Scenario::random(200.0, 2400.0, 10, 3);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..500)
                .map(|c| demand_draw(&sc, c, &mut rng))
                .collect::<Vec<_>>()
        };
        let a = draw(3);
        assert!(a.iter().all(|&d| (200.0..=2400.0).contains(&d)));
        assert_eq!(a, draw(3));
        assert_ne!(a, draw(4));
    }

    #[test]
    fn rejects_bad_scenarios() {
        assert!(Scenario::constant(0.0, 1).validate().is_err());
        assert!(Scenario::random(5.0, 5.0, 1, 0).validate().is_err());
        assert!(Scenario::random(1.0, 5.0, 1, 0).validate().is_ok());
    }

    #[test]
    fn strategy_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("fast".parse::<Strategy>().is_err());
    }
}
