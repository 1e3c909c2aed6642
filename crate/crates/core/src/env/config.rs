use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-link fading model for the channel gain `g`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelGain {
    /// Unit-mean exponential power gain, i.i.d. per link per slot.
    Rayleigh,
    /// `g = 1` on every link.
    Constant,
}

/// World parameters. Data sizes are in Mbit, compute demand in megacycles,
/// capacities in the same numeric units (see README for the convention).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub num_vehicles: usize,
    pub num_rsus: usize,
    /// Slots per episode.
    pub horizon: usize,
    pub road_length: f64,
    pub rsu_positions: Vec<[f64; 2]>,
    pub mbs_position: [f64; 2],
    /// Lateral position of each lane; vehicles keep their lane.
    pub lane_offsets: Vec<f64>,
    pub vehicle_cpu: f64,
    pub rsu_cpu: f64,
    pub mbs_cpu: f64,
    pub rsu_bandwidth: f64,
    pub mbs_bandwidth: f64,
    pub transmit_power: f64,
    pub noise_power: f64,
    pub channel_gain: ChannelGain,
    pub task_sizes: Vec<f64>,
    pub rho_range: [f64; 2],
    pub penalty_coefficient: f64,
    pub adjacency_range: f64,
    /// Meters advanced per slot, drawn once per vehicle per episode.
    pub speed_range: [f64; 2],
    pub rng_seed: u64,
}

pub const DEFAULT_ROAD_LENGTH: f64 = 2000.0;
const RSU_LATERAL_OFFSET: f64 = -10.0;
const MBS_LATERAL_OFFSET: f64 = -500.0;

impl Default for EnvConfig {
    fn default() -> Self {
        Self::with_layout(8, 4)
    }
}

impl EnvConfig {
    /// Default constants with `num_rsus` RSUs evenly spaced along the road.
    pub fn with_layout(num_vehicles: usize, num_rsus: usize) -> Self {
        let road_length = DEFAULT_ROAD_LENGTH;
        Self {
            num_vehicles,
            num_rsus,
            horizon: 100,
            road_length,
            rsu_positions: even_rsu_positions(road_length, num_rsus),
            mbs_position: [road_length / 2.0, MBS_LATERAL_OFFSET],
            lane_offsets: vec![0.0, 4.0, 8.0, 12.0],
            vehicle_cpu: 5e5,
            rsu_cpu: 6e6,
            mbs_cpu: 1e7,
            rsu_bandwidth: 2e8,
            mbs_bandwidth: 2e7,
            // 20 dBm
            transmit_power: 0.1,
            noise_power: 1e-9,
            channel_gain: ChannelGain::Rayleigh,
            task_sizes: vec![1.0, 1.5, 2.0],
            rho_range: [100.0, 200.0],
            penalty_coefficient: 1.0,
            adjacency_range: 300.0,
            speed_range: [10.0, 30.0],
            rng_seed: 0,
        }
    }

    /// Same constants, resized to `num_rsus` evenly spaced RSUs.
    pub fn relayout(mut self, num_vehicles: usize, num_rsus: usize) -> Self {
        self.num_vehicles = num_vehicles;
        self.num_rsus = num_rsus;
        self.rsu_positions = even_rsu_positions(self.road_length, num_rsus);
        self
    }

    /// Number of per-vehicle choices: local, each RSU, MBS.
    pub fn num_actions(&self) -> usize {
        self.num_rsus + 2
    }

    /// Remote destinations: RSUs then the MBS.
    pub fn num_destinations(&self) -> usize {
        self.num_rsus + 1
    }

    pub fn destination_cpu(&self, d: usize) -> f64 {
        if d < self.num_rsus {
            self.rsu_cpu
        } else {
            self.mbs_cpu
        }
    }

    pub fn destination_bandwidth(&self, d: usize) -> f64 {
        if d < self.num_rsus {
            self.rsu_bandwidth
        } else {
            self.mbs_bandwidth
        }
    }

    pub fn destination_position(&self, d: usize) -> [f64; 2] {
        if d < self.num_rsus {
            self.rsu_positions[d]
        } else {
            self.mbs_position
        }
    }

    pub fn max_task_size(&self) -> f64 {
        self.task_sizes.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_compute_demand(&self) -> f64 {
        self.rho_range[1] * self.max_task_size()
    }

    pub fn max_lane_offset(&self) -> f64 {
        self.lane_offsets.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive and finite, got {v}")))
            }
        };
        if self.num_vehicles == 0 {
            return Err(Error::config("num_vehicles", "must be at least 1"));
        }
        if self.num_rsus == 0 {
            return Err(Error::config("num_rsus", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        positive("road_length", self.road_length)?;
        positive("vehicle_cpu", self.vehicle_cpu)?;
        positive("rsu_cpu", self.rsu_cpu)?;
        positive("mbs_cpu", self.mbs_cpu)?;
        positive("rsu_bandwidth", self.rsu_bandwidth)?;
        positive("mbs_bandwidth", self.mbs_bandwidth)?;
        positive("transmit_power", self.transmit_power)?;
        positive("noise_power", self.noise_power)?;
        if self.rsu_positions.len() != self.num_rsus {
            return Err(Error::config(
                "rsu_positions",
                format!("expected {} entries, got {}", self.num_rsus, self.rsu_positions.len()),
            ));
        }
        if self.lane_offsets.is_empty() || self.lane_offsets.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
            return Err(Error::config("lane_offsets", "must be nonempty and nonnegative"));
        }
        if self.task_sizes.is_empty() || self.task_sizes.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::config("task_sizes", "must be nonempty and all positive"));
        }
        let [lo, hi] = self.rho_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(
                "rho_range",
                format!("need 0 < lower <= upper, got [{lo}, {hi}]"),
            ));
        }
        if !(self.penalty_coefficient >= 0.0) {
            return Err(Error::config("penalty_coefficient", "must be nonnegative"));
        }
        if !(self.adjacency_range >= 0.0) {
            return Err(Error::config("adjacency_range", "must be nonnegative"));
        }
        let [slo, shi] = self.speed_range;
        if !(slo >= 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::config(
                "speed_range",
                format!("need 0 <= lower <= upper, got [{slo}, {shi}]"),
            ));
        }
        // Every vehicle–destination distance must stay positive.
        for d in 0..self.num_destinations() {
            let [_, y] = self.destination_position(d);
            if self.lane_offsets.contains(&y) {
                return Err(Error::config(
                    if d < self.num_rsus {
                        "rsu_positions"
                    } else {
                        "mbs_position"
                    },
                    "must not lie on a lane",
                ));
            }
        }
        Ok(())
    }
}

fn even_rsu_positions(road_length: f64, num_rsus: usize) -> Vec<[f64; 2]> {
    (0..num_rsus)
        .map(|r| [road_length * (r as f64 + 0.5) / num_rsus as f64, RSU_LATERAL_OFFSET])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        EnvConfig::default().validate().unwrap();
        EnvConfig::with_layout(1, 1).validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut c = EnvConfig::default();
        c.rsu_positions.pop();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("rsu_positions"), "{err}");

        let c = EnvConfig {
            rho_range: [200.0, 100.0],
            ..EnvConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("rho_range"));

        let c = EnvConfig {
            mbs_cpu: 0.0,
            ..EnvConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("mbs_cpu"));
    }

    #[test]
    fn toml_round_trip_with_partial_file() {
        let c: EnvConfig = toml::from_str("num_vehicles = 3\npenalty_coefficient = 2.5\n").unwrap();
        assert_eq!(c.num_vehicles, 3);
        assert_eq!(c.penalty_coefficient, 2.5);
        assert_eq!(c.rsu_cpu, 6e6);
        let text = toml::to_string(&c).unwrap();
        let back: EnvConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<EnvConfig>("bogus = 1").is_err());
    }
}
