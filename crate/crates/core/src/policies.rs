//! Flow-selection and packet-selection disciplines and their composition.
//!
//! A policy is a (flow rule, packet rule, preemption) triple. The flow rule
//! picks which flow to serve, the packet rule picks a packet within that
//! flow. Names follow the `prmp-MAF-LGFS` / `np-RAND-FCFS` convention.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{PacketId, SystemState};
use crate::error::{config_err, Error, Result};
use crate::rng::SimRng;
use crate::types::{FlowId, Packet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowRule {
    /// Maximum age first.
    Maf,
    /// Maximum age of served information first.
    Masif,
    /// Uniform over flows with waiting packets.
    Rand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PacketRule {
    /// Last generated, first served.
    Lgfs,
    /// First come (earliest arrival), first served.
    Fcfs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preemption {
    Preemptive,
    NonPreemptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TieBreak {
    #[default]
    LowestFlowIndex,
    Random,
}

/// A scheduling policy.
///
/// `idle_prob` makes the policy non-work-conserving: at each decision epoch
/// each idle server independently stays idle with this probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PolicySpec {
    pub flow_rule: FlowRule,
    pub packet_rule: PacketRule,
    pub preemption: Preemption,
    pub tie_break: TieBreak,
    pub idle_prob: f64,
}

impl PolicySpec {
    pub fn new(flow_rule: FlowRule, packet_rule: PacketRule, preemption: Preemption) -> Self {
        Self {
            flow_rule,
            packet_rule,
            preemption,
            tie_break: TieBreak::LowestFlowIndex,
            idle_prob: 0.0,
        }
    }

    pub fn prmp_maf_lgfs() -> Self {
        Self::new(FlowRule::Maf, PacketRule::Lgfs, Preemption::Preemptive)
    }

    pub fn np_masif_lgfs() -> Self {
        Self::new(FlowRule::Masif, PacketRule::Lgfs, Preemption::NonPreemptive)
    }

    pub fn is_preemptive(&self) -> bool {
        self.preemption == Preemption::Preemptive
    }

    pub fn is_work_conserving(&self) -> bool {
        self.idle_prob == 0.0
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn with_idle_prob(mut self, idle_prob: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&idle_prob) {
            return config_err("idle probability must lie in [0, 1)");
        }
        self.idle_prob = idle_prob;
        Ok(self)
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pre = match self.preemption {
            Preemption::Preemptive => "prmp",
            Preemption::NonPreemptive => "np",
        };
        let flow = match self.flow_rule {
            FlowRule::Maf => "MAF",
            FlowRule::Masif => "MASIF",
            FlowRule::Rand => "RAND",
        };
        let pkt = match self.packet_rule {
            PacketRule::Lgfs => "LGFS",
            PacketRule::Fcfs => "FCFS",
        };
        write!(f, "{pre}-{flow}-{pkt}")?;
        if self.tie_break == TieBreak::Random {
            write!(f, "+rtb")?;
        }
        if self.idle_prob > 0.0 {
            write!(f, "+idle={}", self.idle_prob)?;
        }
        Ok(())
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    /// Parses `prmp|np - MAF|MASIF|RAND - LGFS|FCFS`, optionally followed by
    /// `+rtb` (random tie-breaking) and `+idle=<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let base = parts.next().unwrap_or_default();
        let fields: Vec<&str> = base.split('-').collect();
        let bad = || Error::Config(format!("unknown policy name '{s}'"));
        let [pre, flow, pkt] = fields.as_slice() else {
            return Err(bad());
        };
        let preemption = match pre.to_ascii_lowercase().as_str() {
            "prmp" => Preemption::Preemptive,
            "np" | "non_prmp" => Preemption::NonPreemptive,
            _ => return Err(bad()),
        };
        let flow_rule = match flow.to_ascii_uppercase().as_str() {
            "MAF" => FlowRule::Maf,
            "MASIF" => FlowRule::Masif,
            "RAND" => FlowRule::Rand,
            _ => return Err(bad()),
        };
        let packet_rule = match pkt.to_ascii_uppercase().as_str() {
            "LGFS" => PacketRule::Lgfs,
            "FCFS" => PacketRule::Fcfs,
            _ => return Err(bad()),
        };
        let mut spec = PolicySpec::new(flow_rule, packet_rule, preemption);
        for modifier in parts {
            if modifier == "rtb" {
                spec.tie_break = TieBreak::Random;
            } else if let Some(p) = modifier.strip_prefix("idle=") {
                let p: f64 = p.parse().map_err(|_| bad())?;
                spec = spec.with_idle_prob(p)?;
            } else {
                return Err(bad());
            }
        }
        Ok(spec)
    }
}

impl TryFrom<String> for PolicySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> Self {
        p.to_string()
    }
}

/// Within-flow ordering key; larger is served first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketKey {
    primary: f64,
    seq: i64,
}

impl PacketKey {
    pub fn for_packet(rule: PacketRule, p: &Packet) -> Self {
        match rule {
            PacketRule::Lgfs => Self {
                primary: p.gen_time,
                seq: p.seq as i64,
            },
            PacketRule::Fcfs => Self {
                primary: -p.arrival_time,
                seq: -(p.seq as i64),
            },
        }
    }
}

impl Eq for PacketKey {}

impl Ord for PacketKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.primary
            .total_cmp(&other.primary)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for PacketKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority of a packet under a policy; larger is served first.
///
/// The flow component compares freshness stamps in reverse: an older stamp
/// means a larger age. RAND carries no flow component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Priority {
    flow: std::cmp::Reverse<OrdF64>,
    packet: PacketKey,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The stamp the flow rule ranks by (smaller stamp, higher priority).
fn flow_stamp(state: &SystemState, rule: FlowRule, flow: FlowId) -> f64 {
    match rule {
        FlowRule::Maf => state.delivered_stamp(flow),
        FlowRule::Masif => state.served_stamp(flow),
        FlowRule::Rand => 0.0,
    }
}

pub fn priority(state: &SystemState, spec: &PolicySpec, pid: PacketId) -> Priority {
    let p = state.packet(pid);
    Priority {
        flow: std::cmp::Reverse(OrdF64(flow_stamp(state, spec.flow_rule, p.flow))),
        packet: PacketKey::for_packet(spec.packet_rule, p),
    }
}

/// Picks a flow among those with waiting packets that pass `eligible`.
fn choose_flow(
    state: &SystemState,
    spec: &PolicySpec,
    rng: &mut SimRng,
    eligible: impl Fn(FlowId) -> bool,
) -> Option<FlowId> {
    let candidates: Vec<FlowId> = (0..state.num_flows())
        .filter(|&f| state.has_waiting(f) && eligible(f))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let tied: Vec<FlowId> = match spec.flow_rule {
        FlowRule::Rand => candidates,
        rule => {
            let best = candidates
                .iter()
                .map(|&f| flow_stamp(state, rule, f))
                .min_by(f64::total_cmp)
                .expect("non-empty");
            candidates
                .into_iter()
                .filter(|&f| flow_stamp(state, rule, f) == best)
                .collect()
        }
    };
    let random = spec.flow_rule == FlowRule::Rand || spec.tie_break == TieBreak::Random;
    if random && tied.len() > 1 {
        Some(tied[rng.random_range(0..tied.len())])
    } else {
        tied.first().copied()
    }
}

/// The packet the policy would put on a free server now, if any is waiting.
pub fn select_next(state: &SystemState, spec: &PolicySpec, rng: &mut SimRng) -> Option<PacketId> {
    let flow = choose_flow(state, spec, rng, |_| true)?;
    state.best_waiting(flow)
}

/// A displacement decided at a decision epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Displacement {
    pub server: usize,
    pub displaced: PacketId,
    pub replacement: PacketId,
}

/// For preemptive policies: whether some waiting packet strictly outranks the
/// lowest-priority packet in service, and if so which server to take over.
///
/// The replacement is chosen by the policy's flow rule among flows whose best
/// waiting packet strictly outranks the displaced one.
pub fn preemption_check(state: &SystemState, spec: &PolicySpec, rng: &mut SimRng) -> Option<Displacement> {
    if !spec.is_preemptive() {
        return None;
    }
    let (server, displaced, worst) = (0..state.num_servers())
        .filter_map(|s| state.in_service(s).map(|pid| (s, pid, priority(state, spec, pid))))
        .min_by(|a, b| a.2.cmp(&b.2).then(b.0.cmp(&a.0)))?;
    let beats = |f: FlowId| {
        state
            .best_waiting(f)
            .is_some_and(|pid| priority(state, spec, pid) > worst)
    };
    let flow = choose_flow(state, spec, rng, beats)?;
    let replacement = state.best_waiting(flow)?;
    Some(Displacement {
        server,
        displaced,
        replacement,
    })
}
