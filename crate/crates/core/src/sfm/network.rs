use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A road between two nodes. Flows are stored in vehicles per second.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    /// Storage capacity `x_max` in vehicles.
    pub capacity: f64,
    /// Saturation flow, veh/s.
    pub saturation_flow: f64,
    pub upstream: Option<String>,
    /// Junction whose phases serve this link.
    pub downstream: Option<String>,
    /// Nominal demand entering mid-link, veh/s. Part of the model offset.
    pub demand: f64,
    /// Nominal flow leaving mid-link, veh/s. Part of the model offset.
    pub exit_flow: f64,
    /// Share of the scenario's source inflow routed onto this link (plant only).
    pub source_share: f64,
    /// Queue at the start of a run.
    pub initial_queue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    /// Each phase is the set of link ids that receive green during it.
    pub phases: Vec<Vec<String>>,
    /// All-red time per cycle, seconds.
    pub lost_time: f64,
}

/// Store-and-forward network. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TrafficNetwork {
    links: Vec<Link>,
    junctions: Vec<Junction>,
    /// `(from, to, rate)` triples with resolved link indices.
    turning: Vec<(usize, usize, f64)>,
    cycle_time: f64,
    link_index: HashMap<String, usize>,
    input_offsets: Vec<usize>,
    n_inputs: usize,
    served_by: Vec<Vec<usize>>,
}

impl TrafficNetwork {
    pub fn new(
        mut links: Vec<Link>,
        junctions: Vec<Junction>,
        turning: Vec<(String, String, f64)>,
        cycle_time: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidNetwork(m));
        if !(cycle_time > 0.0) {
            return bad(format!("cycle time must be positive, got {cycle_time}"));
        }
        let mut link_index = HashMap::new();
        for (i, l) in links.iter().enumerate() {
            if link_index.insert(l.id.clone(), i).is_some() {
                return bad(format!("duplicate link id `{}`", l.id));
            }
            if !(l.capacity > 0.0) {
                return bad(format!("link `{}`: capacity must be positive", l.id));
            }
            if !(l.saturation_flow > 0.0) {
                return bad(format!("link `{}`: saturation flow must be positive", l.id));
            }
            if l.demand < 0.0 || l.exit_flow < 0.0 || l.source_share < 0.0 {
                return bad(format!("link `{}`: flows must be non-negative", l.id));
            }
            if l.initial_queue < 0.0 || l.initial_queue > l.capacity {
                return bad(format!(
                    "link `{}`: initial queue outside [0, capacity]",
                    l.id
                ));
            }
        }

        let mut input_offsets = Vec::with_capacity(junctions.len());
        let mut served_by = vec![Vec::new(); links.len()];
        let mut server: Vec<Option<usize>> = vec![None; links.len()];
        let mut offset = 0;
        let mut seen_junctions = HashMap::new();
        for (j, junc) in junctions.iter().enumerate() {
            if seen_junctions.insert(junc.id.clone(), j).is_some() {
                return bad(format!("duplicate junction id `{}`", junc.id));
            }
            if junc.phases.is_empty() {
                return bad(format!("junction `{}` has no phases", junc.id));
            }
            if !(junc.lost_time >= 0.0 && junc.lost_time < cycle_time) {
                return bad(format!(
                    "junction `{}`: lost time outside [0, cycle time)",
                    junc.id
                ));
            }
            input_offsets.push(offset);
            for (p, phase) in junc.phases.iter().enumerate() {
                for id in phase {
                    let &z = link_index
                        .get(id)
                        .ok_or_else(|| Error::UnknownLink(id.clone()))?;
                    match server[z] {
                        Some(other) if other != j => {
                            return bad(format!("link `{id}` is served by two junctions"));
                        }
                        _ => server[z] = Some(j),
                    }
                    if !served_by[z].contains(&(offset + p)) {
                        served_by[z].push(offset + p);
                    }
                }
            }
            offset += junc.phases.len();
        }
        for (z, l) in links.iter_mut().enumerate() {
            let actual = server[z].map(|j| junctions[j].id.clone());
            match (&l.downstream, &actual) {
                (Some(d), Some(a)) if d != a => {
                    return bad(format!(
                        "link `{}` declares downstream `{d}` but is served by `{a}`",
                        l.id
                    ));
                }
                (None, Some(a)) => l.downstream = Some(a.clone()),
                _ => {}
            }
        }

        let mut resolved = Vec::with_capacity(turning.len());
        let mut total = vec![0.0; links.len()];
        for (from, to, rate) in turning {
            let &w = link_index
                .get(&from)
                .ok_or(Error::UnknownLink(from.clone()))?;
            let &z = link_index.get(&to).ok_or(Error::UnknownLink(to.clone()))?;
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("turning rate {from}->{to} outside [0, 1]"));
            }
            total[w] += rate;
            resolved.push((w, z, rate));
        }
        for (w, t) in total.iter().enumerate() {
            if *t > 1.0 + 1e-12 {
                return bad(format!(
                    "turning rates out of `{}` sum to {t} > 1",
                    links[w].id
                ));
            }
        }

        Ok(TrafficNetwork {
            links,
            junctions,
            turning: resolved,
            cycle_time,
            link_index,
            input_offsets,
            n_inputs: offset,
            served_by,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: NetworkFile =
            toml::from_str(text).map_err(|e| Error::InvalidNetwork(e.to_string()))?;
        file.into_network()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn cycle_time(&self) -> f64 {
        self.cycle_time
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// Length of the green-time vector: one entry per (junction, phase).
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn link_index(&self, id: &str) -> Result<usize> {
        self.link_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownLink(id.to_string()))
    }

    /// Index of phase `phase` of junction `junction` in the green-time vector.
    pub fn input_index(&self, junction: usize, phase: usize) -> usize {
        self.input_offsets[junction] + phase
    }

    /// Green-time indices of the phases serving link `z`.
    pub fn served_by(&self, z: usize) -> &[usize] {
        &self.served_by[z]
    }

    /// `(from, to, rate)` with link indices.
    pub fn turning(&self) -> &[(usize, usize, f64)] {
        &self.turning
    }

    pub fn turning_rate(&self, from: usize, to: usize) -> f64 {
        self.turning
            .iter()
            .filter(|&&(w, z, _)| w == from && z == to)
            .map(|&(_, _, r)| r)
            .sum()
    }

    /// Input index ranges per junction, with the junction's lost time.
    pub fn junction_inputs(&self) -> Vec<(Vec<usize>, f64)> {
        self.junctions
            .iter()
            .enumerate()
            .map(|(j, junc)| {
                let off = self.input_offsets[j];
                ((off..off + junc.phases.len()).collect(), junc.lost_time)
            })
            .collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }

    pub fn initial_queues(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.initial_queue).collect()
    }
}

/// On-disk network description. Unknown keys are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    /// Signal cycle and model time step, seconds.
    pub cycle_time: f64,
    #[serde(default)]
    pub link: Vec<LinkSpec>,
    #[serde(default)]
    pub junction: Vec<JunctionSpec>,
    #[serde(default)]
    pub turn: Vec<TurnSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    pub capacity: f64,
    /// veh/h
    pub saturation_flow: f64,
    #[serde(default)]
    pub upstream: Option<String>,
    #[serde(default)]
    pub downstream: Option<String>,
    /// veh/h
    #[serde(default)]
    pub demand: f64,
    /// veh/h
    #[serde(default)]
    pub exit_flow: f64,
    #[serde(default)]
    pub source_share: f64,
    #[serde(default)]
    pub initial: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JunctionSpec {
    pub id: String,
    #[serde(default)]
    pub lost_time: f64,
    pub phases: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnSpec {
    pub from: String,
    pub to: String,
    pub rate: f64,
}

impl NetworkFile {
    pub fn into_network(self) -> Result<TrafficNetwork> {
        let links = self
            .link
            .into_iter()
            .map(|l| Link {
                id: l.id,
                capacity: l.capacity,
                saturation_flow: l.saturation_flow / 3600.0,
                upstream: l.upstream,
                downstream: l.downstream,
                demand: l.demand / 3600.0,
                exit_flow: l.exit_flow / 3600.0,
                source_share: l.source_share,
                initial_queue: l.initial,
            })
            .collect();
        let junctions = self
            .junction
            .into_iter()
            .map(|j| Junction {
                id: j.id,
                phases: j.phases,
                lost_time: j.lost_time,
            })
            .collect();
        let turns = self
            .turn
            .into_iter()
            .map(|t| (t.from, t.to, t.rate))
            .collect();
        TrafficNetwork::new(links, junctions, turns, self.cycle_time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
cycle_time = 60.0
future_key = "ignored"

[[link]]
id = "a"
capacity = 100
saturation_flow = 1800

[[link]]
id = "b"
capacity = 80
saturation_flow = 1800
upstream = "J"

[[junction]]
id = "J"
lost_time = 4
phases = [["a"], ["a", "b"]]

[[turn]]
from = "a"
to = "b"
rate = 0.5
"#;

    #[test]
    fn parses_and_resolves() {
        let net = TrafficNetwork::from_toml_str(SMALL).unwrap();
        assert_eq!(net.n_links(), 2);
        assert_eq!(net.n_inputs(), 2);
        assert_eq!(net.served_by(0), &[0, 1]);
        assert_eq!(net.served_by(1), &[1]);
        assert_eq!(net.links()[1].downstream.as_deref(), Some("J"));
        assert!((net.links()[0].saturation_flow - 0.5).abs() < 1e-15);
        assert_eq!(net.turning_rate(0, 1), 0.5);
    }

    #[test]
    fn rejects_bad_turning_sum() {
        let text = SMALL.replace("rate = 0.5", "rate = 0.7")
            + "\n[[turn]]\nfrom = \"a\"\nto = \"a\"\nrate = 0.4\n";
        assert!(matches!(
            TrafficNetwork::from_toml_str(&text),
            Err(Error::InvalidNetwork(_))
        ));
    }

    #[test]
    fn rejects_unknown_link_in_phase() {
        let text = SMALL.replace("[[\"a\"], [\"a\", \"b\"]]", "[[\"zz\"]]");
        assert!(matches!(
            TrafficNetwork::from_toml_str(&text),
            Err(Error::UnknownLink(_))
        ));
    }

    #[test]
    fn rejects_lost_time_beyond_cycle() {
        let text = SMALL.replace("lost_time = 4", "lost_time = 60");
        assert!(TrafficNetwork::from_toml_str(&text).is_err());
    }
}
