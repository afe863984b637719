//! Arrival schedule generation.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::{stream, Stream};
use crate::types::{ArrivalSchedule, Generation, Time};

/// Delay between generation and arrival at the queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayModel {
    Zero,
    /// 0 or 4/λ with probability 1/2 each.
    BernoulliHalf,
    Fixed { delay: Time },
    /// Per-generation delays, reused cyclically.
    Custom { delays: Vec<Time> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub rate: f64,
    pub delay_model: DelayModel,
    pub horizon: Time,
    pub seed: u64,
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return config_err("generation rate must be positive and finite");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return config_err("horizon must be positive and finite");
        }
        match &self.delay_model {
            DelayModel::Fixed { delay } if !(*delay >= 0.0 && delay.is_finite()) => {
                config_err("fixed delay must be finite and non-negative")
            }
            DelayModel::Custom { delays } if delays.is_empty() => {
                config_err("custom delay list is empty")
            }
            DelayModel::Custom { delays } if delays.iter().any(|d| !(*d >= 0.0 && d.is_finite())) => {
                config_err("custom delays must be finite and non-negative")
            }
            _ => Ok(()),
        }
    }
}

/// Poisson generations at rate λ up to the horizon, with per-generation delays.
///
/// Generation gaps and delay draws come from separate streams so the
/// generation times do not depend on the delay model.
pub fn generate_poisson_schedule(cfg: &TrafficConfig) -> Result<ArrivalSchedule> {
    cfg.validate()?;
    let gaps = Exp::new(cfg.rate).expect("validated rate");
    let mut gap_rng = stream(cfg.seed, Stream::GenerationGaps);
    let mut delay_rng = stream(cfg.seed, Stream::ArrivalDelays);

    let mut events = Vec::new();
    let mut s = 0.0;
    loop {
        s += gaps.sample(&mut gap_rng);
        if s > cfg.horizon {
            break;
        }
        let idx = events.len();
        let delay = match &cfg.delay_model {
            DelayModel::Zero => 0.0,
            DelayModel::BernoulliHalf => {
                if delay_rng.random_bool(0.5) {
                    4.0 / cfg.rate
                } else {
                    0.0
                }
            }
            DelayModel::Fixed { delay } => *delay,
            DelayModel::Custom { delays } => delays[idx % delays.len()],
        };
        events.push(Generation {
            seq: idx as u64 + 1,
            gen_time: s,
            arrival_time: s + delay,
        });
    }
    ArrivalSchedule::new(events)
}

/// Offered load ρ = λN / (Mμ).
pub fn traffic_intensity(rate: f64, num_flows: usize, num_servers: usize, service_rate: f64) -> Result<f64> {
    if !(rate > 0.0) || num_flows == 0 || num_servers == 0 || !(service_rate > 0.0) {
        return config_err("traffic intensity needs positive rate, flows, servers and service rate");
    }
    Ok(rate * num_flows as f64 / (num_servers as f64 * service_rate))
}

/// Inverse of [`traffic_intensity`]: the generation rate giving load ρ.
pub fn rate_for_intensity(rho: f64, num_flows: usize, num_servers: usize, service_rate: f64) -> Result<f64> {
    if !(rho > 0.0) || num_flows == 0 || num_servers == 0 || !(service_rate > 0.0) {
        return config_err("rho, flows, servers and service rate must be positive");
    }
    Ok(rho * num_servers as f64 * service_rate / num_flows as f64)
}
