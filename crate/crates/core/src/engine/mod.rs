//! Discrete-event simulation kernel.
//!
//! A [`Simulator`] owns one policy's queue, servers and age trackers. Events
//! pop in `(time, kind rank, insertion counter)` order with arrivals ranked
//! before service completions and completions before potential-completion
//! epochs, so a packet arriving at the instant a server frees up is visible
//! to that server's decision epoch. A decision epoch runs after every event.
//!
//! Runs are single-threaded and deterministic given the seed. The
//! [`Simulator::next_event_time`] / [`Simulator::process_events_at`] pair lets
//! a driver advance several simulators in lockstep (see `coupling`).

mod event;
mod state;
mod trace;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

pub use event::{EventKind, EventQueue};
pub use state::{PacketId, ServerSlot, SystemState};
pub use trace::{CouplingMode, CouplingTag, EventRecord, SimTrace, StampHistory};

use crate::distributions::ServiceDistribution;
use crate::error::{config_err, Result};
use crate::policies::{preemption_check, select_next, Displacement, PolicySpec};
use crate::rng::{stream, SimRng, Stream};
use crate::types::{ArrivalSchedule, Generation, Packet, SystemConfig, Time};

/// Source of service completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CompletionMode {
    /// Each service time is drawn at assignment.
    #[default]
    Sampled,
    /// Completions happen at the epochs of a Poisson(μ) stream seeded by
    /// `seed`, whenever the (single) server is busy. Exponential, M = 1 only.
    SharedEpochs { seed: u64 },
}

/// How a sampled service time is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Direct,
    /// Inverse transform of a recorded uniform, so a coupled run can reuse it.
    InverseTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub completion: CompletionMode,
    pub sampling: Sampling,
    /// Keep the full event log in the trace.
    pub record_events: bool,
    /// Permit preemptive policies with non-exponential service.
    pub allow_unchecked: bool,
    /// Check state invariants after every event (panics on failure).
    pub check_invariants: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            completion: CompletionMode::Sampled,
            sampling: Sampling::Direct,
            record_events: false,
            allow_unchecked: false,
            check_invariants: cfg!(debug_assertions),
        }
    }
}

/// A service start produced by a decision epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceStart {
    pub time: Time,
    pub server: usize,
    pub packet: PacketId,
    pub service_time: Option<Time>,
    pub uniform: Option<f64>,
}

/// What a decision epoch did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Assign { server: usize, packet: PacketId },
    Preempt(Displacement),
}

pub struct Simulator {
    cfg: SystemConfig,
    policy: PolicySpec,
    dist: ServiceDistribution,
    horizon: Time,
    opts: RunOptions,
    generations: Vec<Generation>,
    schedule_fingerprint: u64,
    coupling: Option<CouplingTag>,
    state: SystemState,
    events: EventQueue,
    tokens: Vec<u64>,
    matched: Vec<bool>,
    service_rng: SimRng,
    tie_rng: SimRng,
    idle_rng: SimRng,
    epochs: Option<(SimRng, Exp<f64>)>,
    starts: Vec<ServiceStart>,
    event_times: Vec<Time>,
    queue_log: Vec<(Time, usize)>,
    records: Vec<EventRecord>,
}

impl Simulator {
    pub fn new(
        cfg: &SystemConfig,
        schedule: &ArrivalSchedule,
        dist: &ServiceDistribution,
        policy: &PolicySpec,
        horizon: Time,
        seed: u64,
        opts: RunOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return config_err("horizon must be positive and finite");
        }
        if policy.is_preemptive() && !dist.is_exponential() && !opts.allow_unchecked {
            return config_err(format!(
                "preemptive policy {policy} requires exponential service (set allow_unchecked to override)"
            ));
        }
        let epochs = match opts.completion {
            CompletionMode::Sampled => None,
            CompletionMode::SharedEpochs { seed } => {
                if cfg.num_servers != 1 {
                    return config_err("shared completion epochs require a single server");
                }
                if !dist.is_exponential() {
                    return config_err("shared completion epochs require exponential service");
                }
                let exp = Exp::new(dist.rate()).expect("positive rate");
                Some((stream(seed, Stream::CompletionEpochs), exp))
            }
        };

        let generations: Vec<Generation> = schedule
            .events()
            .iter()
            .filter(|g| g.arrival_time <= horizon)
            .copied()
            .collect();
        let mut events = EventQueue::default();
        for (i, g) in generations.iter().enumerate() {
            events.push(g.arrival_time, EventKind::Arrival(i));
        }
        let mut sim = Self {
            cfg: *cfg,
            policy: *policy,
            dist: *dist,
            horizon,
            opts,
            generations,
            schedule_fingerprint: schedule.fingerprint(),
            coupling: None,
            state: SystemState::new(cfg, policy.packet_rule),
            events,
            tokens: vec![0; cfg.num_servers],
            matched: vec![false; cfg.num_servers],
            service_rng: stream(seed, Stream::Service),
            tie_rng: stream(seed, Stream::TieBreak),
            idle_rng: stream(seed, Stream::Idle),
            epochs,
            starts: Vec::new(),
            event_times: Vec::new(),
            queue_log: vec![(0.0, 0)],
            records: Vec::new(),
        };
        sim.schedule_next_epoch(0.0);
        Ok(sim)
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn policy(&self) -> &PolicySpec {
        &self.policy
    }

    pub(crate) fn set_coupling(&mut self, tag: CouplingTag) {
        self.coupling = Some(tag);
    }

    fn schedule_next_epoch(&mut self, from: Time) {
        if let Some((rng, exp)) = self.epochs.as_mut() {
            let t = from + exp.sample(rng);
            if t <= self.horizon {
                self.events.push(t, EventKind::PotentialCompletion);
            }
        }
    }

    /// Time of the next pending event within the horizon.
    pub fn next_event_time(&self) -> Option<Time> {
        self.events.peek_time().filter(|&t| t <= self.horizon)
    }

    /// Processes every event scheduled at exactly `t`, each followed by a
    /// decision epoch.
    pub fn process_events_at(&mut self, t: Time) {
        while self.events.peek_time() == Some(t) {
            let (time, kind) = self.events.pop().expect("peeked");
            self.state.advance_clock(time);
            if self.handle(kind) {
                self.on_decision_epoch();
            }
        }
        if self.event_times.last() != Some(&t) {
            self.event_times.push(t);
        }
        let q = self.state.queue_len();
        match self.queue_log.last_mut() {
            Some(last) if last.0 == t => last.1 = q,
            Some(last) if last.1 == q => {}
            _ => self.queue_log.push((t, q)),
        }
        if self.opts.check_invariants {
            if let Err(e) = self.state.check_invariants(self.policy.is_work_conserving()) {
                panic!("{} invariant violated: {e}", self.policy);
            }
        }
    }

    /// Returns false when the event turned out to be a no-op.
    fn handle(&mut self, kind: EventKind) -> bool {
        let t = self.state.clock();
        match kind {
            EventKind::Arrival(g) => {
                let gen = self.generations[g];
                for flow in 0..self.cfg.num_flows {
                    self.state
                        .enqueue(Packet::new(flow, gen.seq, gen.gen_time, gen.arrival_time));
                }
                self.record(EventRecord::Arrival { time: t, seq: gen.seq });
                true
            }
            EventKind::ServiceCompletion { server, token } => {
                if self.tokens[server] != token {
                    return false;
                }
                self.deliver(server);
                true
            }
            EventKind::PotentialCompletion => {
                self.record(EventRecord::Epoch { time: t });
                self.schedule_next_epoch(t);
                if self.state.in_service(0).is_some() {
                    self.deliver(0);
                    true
                } else {
                    false
                }
            }
        }
    }

    fn deliver(&mut self, server: usize) {
        let pid = self.state.complete(server);
        self.tokens[server] += 1;
        let p = *self.state.packet(pid);
        self.record(EventRecord::Delivery {
            time: p.delivery_time.expect("just delivered"),
            server,
            flow: p.flow,
            seq: p.seq,
        });
    }

    fn record(&mut self, rec: EventRecord) {
        if self.opts.record_events {
            self.records.push(rec);
        }
    }

    fn start(&mut self, server: usize, pid: PacketId) {
        self.state.start_service(server, pid);
        self.tokens[server] += 1;
        self.matched[server] = false;
        let t = self.state.clock();
        let (mut service_time, mut uniform) = (None, None);
        if self.epochs.is_none() {
            let x = match self.opts.sampling {
                Sampling::Direct => self.dist.sample(&mut self.service_rng),
                Sampling::InverseTransform => {
                    let u: f64 = self.service_rng.random();
                    uniform = Some(u);
                    self.dist.quantile(u)
                }
            };
            service_time = Some(x);
            self.events.push(
                t + x,
                EventKind::ServiceCompletion {
                    server,
                    token: self.tokens[server],
                },
            );
        }
        let p = *self.state.packet(pid);
        self.record(EventRecord::Start {
            time: t,
            server,
            flow: p.flow,
            seq: p.seq,
        });
        self.starts.push(ServiceStart {
            time: t,
            server,
            packet: pid,
            service_time,
            uniform,
        });
    }

    /// Fills idle servers by the policy, then applies preemptions until the
    /// in-service set is stable.
    pub fn on_decision_epoch(&mut self) -> Vec<Action> {
        let mut actions = Vec::new();
        let idle: Vec<usize> = self.state.idle_servers().collect();
        for server in idle {
            if self.state.queue_len() == 0 {
                break;
            }
            if self.policy.idle_prob > 0.0 && self.idle_rng.random_bool(self.policy.idle_prob) {
                continue;
            }
            if let Some(pid) = select_next(&self.state, &self.policy, &mut self.tie_rng) {
                self.start(server, pid);
                actions.push(Action::Assign { server, packet: pid });
            }
        }
        let mut guard = 0usize;
        while let Some(d) = preemption_check(&self.state, &self.policy, &mut self.tie_rng) {
            let p = *self.state.packet(d.displaced);
            self.state.displace(d.server);
            self.tokens[d.server] += 1;
            self.record(EventRecord::Preempt {
                time: self.state.clock(),
                server: d.server,
                flow: p.flow,
                seq: p.seq,
            });
            self.start(d.server, d.replacement);
            actions.push(Action::Preempt(d));
            guard += 1;
            assert!(
                guard <= 4 * (self.state.packets().len() + self.state.num_servers()),
                "preemption did not settle"
            );
        }
        actions
    }

    /// Service starts since the last call.
    pub fn take_starts(&mut self) -> Vec<ServiceStart> {
        std::mem::take(&mut self.starts)
    }

    /// At time `t`, re-draws the residual service of one busy, not-yet-coupled
    /// server from uniform `u`, capped at `cap`, and marks it coupled until its
    /// next start. Returns the server, or `None` when every busy server is
    /// already coupled.
    pub fn couple_residual(&mut self, t: Time, u: f64, cap: Time) -> Option<usize> {
        assert!(self.epochs.is_none(), "residual coupling needs sampled completions");
        self.state.advance_clock(t);
        let server = (0..self.cfg.num_servers)
            .find(|&s| self.state.slot(s).is_some() && !self.matched[s])?;
        let slot = self.state.slot(server).expect("busy");
        let residual = self.dist.residual_quantile(t - slot.started, u).min(cap);
        self.tokens[server] += 1;
        self.matched[server] = true;
        self.events.push(
            t + residual,
            EventKind::ServiceCompletion {
                server,
                token: self.tokens[server],
            },
        );
        Some(server)
    }

    /// Runs every remaining event up to the horizon.
    pub fn run_to_horizon(&mut self) {
        while let Some(t) = self.next_event_time() {
            self.process_events_at(t);
        }
    }

    /// Closes the trackers at the horizon and returns the trace.
    pub fn finish(mut self) -> SimTrace {
        self.state.advance_clock(self.horizon);
        let (packets, mut delta, mut xi, delivered_stamps, served_stamps, waiting, in_service) =
            self.state.into_parts();
        for p in delta.iter_mut().chain(xi.iter_mut()) {
            p.close(self.horizon);
        }
        SimTrace {
            policy: self.policy.to_string(),
            num_flows: self.cfg.num_flows,
            num_servers: self.cfg.num_servers,
            horizon: self.horizon,
            schedule_fingerprint: self.schedule_fingerprint,
            coupling: self.coupling,
            delta,
            xi,
            delivered_stamps,
            served_stamps,
            packets,
            event_times: self.event_times,
            queue_log: self.queue_log,
            waiting_at_end: waiting,
            in_service_at_end: in_service.len(),
            events: self.records,
        }
    }
}

/// Simulates one policy over `[0, horizon]` with default options.
pub fn run(
    cfg: &SystemConfig,
    schedule: &ArrivalSchedule,
    dist: &ServiceDistribution,
    policy: &PolicySpec,
    horizon: Time,
    seed: u64,
) -> Result<SimTrace> {
    run_with(cfg, schedule, dist, policy, horizon, seed, RunOptions::default())
}

pub fn run_with(
    cfg: &SystemConfig,
    schedule: &ArrivalSchedule,
    dist: &ServiceDistribution,
    policy: &PolicySpec,
    horizon: Time,
    seed: u64,
    opts: RunOptions,
) -> Result<SimTrace> {
    let mut sim = Simulator::new(cfg, schedule, dist, policy, horizon, seed, opts)?;
    sim.run_to_horizon();
    Ok(sim.finish())
}

#[cfg(test)]
mod tests;
