//! Domain types shared across the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Simulation time in seconds.
pub type Time = f64;

/// Zero-based flow index.
pub type FlowId = usize;

/// One update packet and its lifecycle timestamps.
///
/// `service_start` holds the most recent service start; under preemption a
/// packet can start more than once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub flow: FlowId,
    pub seq: u64,
    pub gen_time: Time,
    pub arrival_time: Time,
    pub service_start: Option<Time>,
    pub delivery_time: Option<Time>,
}

impl Packet {
    pub fn new(flow: FlowId, seq: u64, gen_time: Time, arrival_time: Time) -> Self {
        Self {
            flow,
            seq,
            gen_time,
            arrival_time,
            service_start: None,
            delivery_time: None,
        }
    }

    /// Checks the timestamp ordering S <= A <= V <= D.
    pub fn is_consistent(&self) -> bool {
        let base = 0.0 <= self.gen_time && self.gen_time <= self.arrival_time;
        let start = self.service_start.is_none_or(|v| self.arrival_time <= v);
        let done = match (self.service_start, self.delivery_time) {
            (_, None) => true,
            (Some(v), Some(d)) => v <= d,
            (None, Some(_)) => false,
        };
        base && start && done
    }
}

/// One generation shared by all flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub seq: u64,
    pub gen_time: Time,
    pub arrival_time: Time,
}

/// Synchronized generation and arrival times `{(S_i, A_i)}` applied to every flow.
///
/// Generation times are non-decreasing; arrival times may be out of order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Generation>", into = "Vec<Generation>")]
pub struct ArrivalSchedule {
    events: Vec<Generation>,
}

impl ArrivalSchedule {
    /// Builds a schedule from `(gen_time, arrival_time)` pairs, numbering generations from 1.
    pub fn from_pairs(pairs: &[(Time, Time)]) -> Result<Self> {
        let events = pairs
            .iter()
            .enumerate()
            .map(|(i, &(s, a))| Generation {
                seq: i as u64 + 1,
                gen_time: s,
                arrival_time: a,
            })
            .collect();
        Self::new(events)
    }

    pub fn new(events: Vec<Generation>) -> Result<Self> {
        let mut prev_gen = 0.0;
        for (i, ev) in events.iter().enumerate() {
            let expected = i as u64 + 1;
            if ev.seq != expected {
                return Err(Error::Schedule(format!(
                    "row {}: seq {} (expected {expected})",
                    i + 1,
                    ev.seq
                )));
            }
            if !ev.gen_time.is_finite() || !ev.arrival_time.is_finite() {
                return Err(Error::Schedule(format!("seq {}: non-finite time", ev.seq)));
            }
            if ev.gen_time < 0.0 {
                return Err(Error::Schedule(format!("seq {}: negative gen_time", ev.seq)));
            }
            if ev.arrival_time < ev.gen_time {
                return Err(Error::Schedule(format!(
                    "seq {}: arrival_time {} precedes gen_time {}",
                    ev.seq, ev.arrival_time, ev.gen_time
                )));
            }
            if ev.gen_time < prev_gen {
                return Err(Error::Schedule(format!(
                    "seq {}: gen_time decreases ({} < {prev_gen})",
                    ev.seq, ev.gen_time
                )));
            }
            prev_gen = ev.gen_time;
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[Generation] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Generation time of the freshest generation that has arrived by `t`.
    pub fn newest_arrived_by(&self, t: Time) -> Option<Time> {
        self.events
            .iter()
            .filter(|ev| ev.arrival_time <= t)
            .map(|ev| ev.gen_time)
            .fold(None, |acc, s| Some(acc.map_or(s, |m: f64| m.max(s))))
    }

    /// Content fingerprint; two traces are on the same schedule iff these match.
    pub fn fingerprint(&self) -> u64 {
        self.events.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, ev| {
            [ev.seq, ev.gen_time.to_bits(), ev.arrival_time.to_bits()]
                .iter()
                .fold(h, |h, &w| (h ^ w).wrapping_mul(0x0000_0100_0000_01b3))
        })
    }

    /// Reads a `seq,gen_time,arrival_time` CSV with a header row.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["seq", "gen_time", "arrival_time"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Schedule(format!(
                "header must be {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let events = rdr
            .deserialize::<Generation>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(events)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for ev in &self.events {
            wtr.serialize(ev)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl TryFrom<Vec<Generation>> for ArrivalSchedule {
    type Error = Error;

    fn try_from(events: Vec<Generation>) -> Result<Self> {
        Self::new(events)
    }
}

impl From<ArrivalSchedule> for Vec<Generation> {
    fn from(s: ArrivalSchedule) -> Self {
        s.events
    }
}

/// Queueing system size and the common initial age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_flows: usize,
    pub num_servers: usize,
    #[serde(default)]
    pub initial_age: Time,
}

impl SystemConfig {
    pub fn new(num_flows: usize, num_servers: usize) -> Result<Self> {
        let cfg = Self {
            num_flows,
            num_servers,
            initial_age: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_initial_age(mut self, initial_age: Time) -> Result<Self> {
        self.initial_age = initial_age;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_flows == 0 {
            return config_err("num_flows must be at least 1");
        }
        if self.num_servers == 0 {
            return config_err("num_servers must be at least 1");
        }
        if !(self.initial_age >= 0.0 && self.initial_age.is_finite()) {
            return config_err("initial_age must be finite and non-negative");
        }
        Ok(())
    }
}
