use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sawtooth::SawtoothProcess;
use crate::types::{FlowId, Packet, Time};

/// Right-continuous step history of a freshness stamp (generation time of
/// the freshest delivered or started packet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StampHistory {
    changes: Vec<(Time, Time)>,
}

impl StampHistory {
    pub fn new(initial: Time) -> Self {
        Self {
            changes: vec![(0.0, initial)],
        }
    }

    pub fn push(&mut self, t: Time, stamp: Time) {
        match self.changes.last_mut() {
            Some(last) if last.0 == t => last.1 = stamp,
            _ => self.changes.push((t, stamp)),
        }
    }

    pub fn changes(&self) -> &[(Time, Time)] {
        &self.changes
    }

    /// Stamp in force at `t` (clamped to the initial stamp before time 0).
    pub fn at(&self, t: Time) -> Time {
        let idx = self.changes.partition_point(|&(ct, _)| ct <= t);
        self.changes[idx.saturating_sub(1)].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventRecord {
    Arrival { time: Time, seq: u64 },
    Start { time: Time, server: usize, flow: FlowId, seq: u64 },
    Preempt { time: Time, server: usize, flow: FlowId, seq: u64 },
    Delivery { time: Time, server: usize, flow: FlowId, seq: u64 },
    Epoch { time: Time },
}

/// How a trace's service completions were generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    SharedEpochs,
    IndependentDraws,
    WorkEfficiency,
}

/// Identifies traces produced together by one coupled run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingTag {
    pub id: u64,
    pub mode: CouplingMode,
}

/// Everything recorded by one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTrace {
    pub policy: String,
    pub num_flows: usize,
    pub num_servers: usize,
    pub horizon: Time,
    pub schedule_fingerprint: u64,
    pub coupling: Option<CouplingTag>,
    /// Age trajectories Δ_n.
    pub delta: Vec<SawtoothProcess>,
    /// Age-of-served-information trajectories Ξ_n.
    pub xi: Vec<SawtoothProcess>,
    pub delivered_stamps: Vec<StampHistory>,
    pub served_stamps: Vec<StampHistory>,
    /// Every packet that reached the queue by the horizon.
    pub packets: Vec<Packet>,
    /// Distinct instants at which at least one event was processed.
    pub event_times: Vec<Time>,
    /// Queue length after all events at each instant, recorded on change.
    pub queue_log: Vec<(Time, usize)>,
    pub waiting_at_end: usize,
    pub in_service_at_end: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventRecord>,
}

impl SimTrace {
    /// Age vector at `t` computed from the stamps (exact ordering).
    pub fn ages_at(&self, t: Time) -> Vec<Time> {
        self.delivered_stamps.iter().map(|h| t - h.at(t)).collect()
    }

    pub fn served_ages_at(&self, t: Time) -> Vec<Time> {
        self.served_stamps.iter().map(|h| t - h.at(t)).collect()
    }

    /// Sorted delivery instants.
    pub fn delivery_times(&self) -> Vec<Time> {
        let mut d: Vec<Time> = self.packets.iter().filter_map(|p| p.delivery_time).collect();
        d.sort_by(f64::total_cmp);
        d
    }

    /// Sorted service-start instants (last start per packet).
    pub fn service_starts(&self) -> Vec<Time> {
        let mut v: Vec<Time> = self.packets.iter().filter_map(|p| p.service_start).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Queue length in force at `t`.
    pub fn queue_len_at(&self, t: Time) -> usize {
        let idx = self.queue_log.partition_point(|&(qt, _)| qt <= t);
        if idx == 0 {
            0
        } else {
            self.queue_log[idx - 1].1
        }
    }

    /// Checks Ξ_n(t) <= Δ_n(t) for every flow at every change of either stamp.
    ///
    /// Between changes both grow at unit rate, so the gap is constant.
    /// Returns the first offending `(flow, time)`.
    pub fn check_xi_below_delta(&self) -> std::result::Result<(), (FlowId, Time)> {
        for (f, (d, s)) in self.delivered_stamps.iter().zip(&self.served_stamps).enumerate() {
            let times = d.changes().iter().chain(s.changes()).map(|c| c.0);
            for t in times {
                if s.at(t) < d.at(t) {
                    return Err((f, t));
                }
            }
        }
        Ok(())
    }

    pub fn delivered_count(&self) -> usize {
        self.packets.iter().filter(|p| p.delivery_time.is_some()).count()
    }

    /// Full trace as JSON.
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    /// Breakpoint lists as CSV rows `process,flow,time,value`.
    pub fn write_breakpoints_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["process", "flow", "time", "value"])?;
        for (name, procs) in [("delta", &self.delta), ("xi", &self.xi)] {
            for (f, p) in procs.iter().enumerate() {
                for &(t, v) in p.breakpoints() {
                    wtr.write_record([name.to_string(), f.to_string(), t.to_string(), v.to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}
