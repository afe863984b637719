use std::collections::BTreeSet;

use crate::policies::{PacketKey, PacketRule};
use crate::sawtooth::SawtoothProcess;
use crate::types::{FlowId, Packet, SystemConfig, Time};

use super::trace::StampHistory;

/// Index of a packet in [`SystemState::packets`].
pub type PacketId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerSlot {
    pub packet: PacketId,
    pub started: Time,
}

/// Queue, servers and per-flow freshness at the current instant.
///
/// A flow's age is `clock - delivered_stamp` and its age of served
/// information is `clock - served_stamp`; the stamps are the generation
/// times of the freshest delivered and freshest started packets.
#[derive(Debug, Clone)]
pub struct SystemState {
    clock: Time,
    packet_rule: PacketRule,
    packets: Vec<Packet>,
    waiting: Vec<BTreeSet<(PacketKey, PacketId)>>,
    waiting_total: usize,
    servers: Vec<Option<ServerSlot>>,
    delivered: Vec<Time>,
    served: Vec<Time>,
    delta: Vec<SawtoothProcess>,
    xi: Vec<SawtoothProcess>,
    delivered_hist: Vec<StampHistory>,
    served_hist: Vec<StampHistory>,
    newest_arrived: Option<Time>,
    delivered_count: usize,
}

impl SystemState {
    pub fn new(cfg: &SystemConfig, packet_rule: PacketRule) -> Self {
        let n = cfg.num_flows;
        let stamp = -cfg.initial_age;
        Self {
            clock: 0.0,
            packet_rule,
            packets: Vec::new(),
            waiting: vec![BTreeSet::new(); n],
            waiting_total: 0,
            servers: vec![None; cfg.num_servers],
            delivered: vec![stamp; n],
            served: vec![stamp; n],
            delta: vec![SawtoothProcess::new(0.0, cfg.initial_age); n],
            xi: vec![SawtoothProcess::new(0.0, cfg.initial_age); n],
            delivered_hist: vec![StampHistory::new(stamp); n],
            served_hist: vec![StampHistory::new(stamp); n],
            newest_arrived: None,
            delivered_count: 0,
        }
    }

    pub fn clock(&self) -> Time {
        self.clock
    }

    pub fn advance_clock(&mut self, t: Time) {
        debug_assert!(t >= self.clock, "clock moves forward");
        self.clock = t;
    }

    pub fn num_flows(&self) -> usize {
        self.waiting.len()
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn packet(&self, pid: PacketId) -> &Packet {
        &self.packets[pid]
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    /// Generation time of the freshest packet that has reached the queue.
    pub fn newest_arrived(&self) -> Option<Time> {
        self.newest_arrived
    }

    pub fn enqueue(&mut self, packet: Packet) -> PacketId {
        let pid = self.packets.len();
        let key = PacketKey::for_packet(self.packet_rule, &packet);
        self.waiting[packet.flow].insert((key, pid));
        self.waiting_total += 1;
        self.newest_arrived = Some(self.newest_arrived.map_or(packet.gen_time, |w| w.max(packet.gen_time)));
        self.packets.push(packet);
        pid
    }

    pub fn queue_len(&self) -> usize {
        self.waiting_total
    }

    pub fn has_waiting(&self, flow: FlowId) -> bool {
        !self.waiting[flow].is_empty()
    }

    /// The waiting packet of `flow` that the packet rule ranks first.
    pub fn best_waiting(&self, flow: FlowId) -> Option<PacketId> {
        self.waiting[flow].last().map(|&(_, pid)| pid)
    }

    pub fn in_service(&self, server: usize) -> Option<PacketId> {
        self.servers[server].map(|s| s.packet)
    }

    pub fn slot(&self, server: usize) -> Option<ServerSlot> {
        self.servers[server]
    }

    pub fn idle_servers(&self) -> impl Iterator<Item = usize> + '_ {
        self.servers
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i)
    }

    pub fn busy_servers(&self) -> usize {
        self.servers.iter().filter(|s| s.is_some()).count()
    }

    fn take_waiting(&mut self, pid: PacketId) {
        let p = &self.packets[pid];
        let key = PacketKey::for_packet(self.packet_rule, p);
        let removed = self.waiting[p.flow].remove(&(key, pid));
        assert!(removed, "packet {pid} is not waiting");
        self.waiting_total -= 1;
    }

    /// Puts a waiting packet on an idle server and updates the served stamp.
    pub fn start_service(&mut self, server: usize, pid: PacketId) {
        assert!(self.servers[server].is_none(), "server {server} is busy");
        self.take_waiting(pid);
        let t = self.clock;
        let p = &mut self.packets[pid];
        p.service_start = Some(t);
        let (flow, s) = (p.flow, p.gen_time);
        self.servers[server] = Some(ServerSlot { packet: pid, started: t });
        if s > self.served[flow] {
            self.served[flow] = s;
            self.xi[flow].reset(t, t - s);
            self.served_hist[flow].push(t, s);
        }
    }

    /// Returns an in-service packet to the queue.
    pub fn displace(&mut self, server: usize) -> PacketId {
        let slot = self.servers[server].take().expect("displacing an idle server");
        let p = &self.packets[slot.packet];
        let key = PacketKey::for_packet(self.packet_rule, p);
        self.waiting[p.flow].insert((key, slot.packet));
        self.waiting_total += 1;
        slot.packet
    }

    /// Delivers the packet on `server` at the current clock.
    pub fn complete(&mut self, server: usize) -> PacketId {
        let pid = self.servers[server]
            .map(|s| s.packet)
            .expect("completing an idle server");
        self.record_delivery(pid, self.clock);
        pid
    }

    /// Marks an in-service packet delivered at `t`: the flow's delivered stamp
    /// becomes max(stamp, S) and the age drops to `t - stamp` if it moved.
    ///
    /// Panics if the packet is not in service.
    pub fn record_delivery(&mut self, pid: PacketId, t: Time) {
        let server = self
            .servers
            .iter()
            .position(|s| s.is_some_and(|s| s.packet == pid))
            .unwrap_or_else(|| panic!("packet {pid} delivered while not in service"));
        self.servers[server] = None;
        self.advance_clock(t);
        let p = &mut self.packets[pid];
        p.delivery_time = Some(t);
        self.delivered_count += 1;
        let (flow, s) = (p.flow, p.gen_time);
        if s > self.delivered[flow] {
            self.delivered[flow] = s;
            self.delta[flow].reset(t, t - s);
            self.delivered_hist[flow].push(t, s);
        }
    }

    pub fn delivered_stamp(&self, flow: FlowId) -> Time {
        self.delivered[flow]
    }

    pub fn served_stamp(&self, flow: FlowId) -> Time {
        self.served[flow]
    }

    /// Overrides a flow's delivered stamp at the current clock; the served
    /// stamp is raised to match if needed. For building scenarios by hand.
    pub fn set_delivered_stamp(&mut self, flow: FlowId, stamp: Time) {
        let t = self.clock;
        assert!(stamp <= t, "stamp in the future");
        self.delivered[flow] = stamp;
        self.delta[flow].reset(t, t - stamp);
        self.delivered_hist[flow].push(t, stamp);
        if stamp > self.served[flow] {
            self.served[flow] = stamp;
            self.xi[flow].reset(t, t - stamp);
            self.served_hist[flow].push(t, stamp);
        }
    }

    /// Δ_n at the current clock.
    pub fn age(&self, flow: FlowId) -> Time {
        self.clock - self.delivered[flow]
    }

    /// Ξ_n at the current clock.
    pub fn served_age(&self, flow: FlowId) -> Time {
        self.clock - self.served[flow]
    }

    pub fn ages(&self) -> Vec<Time> {
        (0..self.num_flows()).map(|f| self.age(f)).collect()
    }

    pub fn served_ages(&self) -> Vec<Time> {
        (0..self.num_flows()).map(|f| self.served_age(f)).collect()
    }

    /// Checks the per-instant invariants; returns a description of the first failure.
    pub fn check_invariants(&self, work_conserving: bool) -> Result<(), String> {
        for f in 0..self.num_flows() {
            if self.served[f] < self.delivered[f] {
                return Err(format!("flow {f}: served stamp below delivered stamp at t={}", self.clock));
            }
        }
        if work_conserving && self.waiting_total > 0 && self.servers.iter().any(Option::is_none) {
            return Err(format!("idle server with {} waiting at t={}", self.waiting_total, self.clock));
        }
        let in_service = self.busy_servers();
        let waiting: usize = self.waiting.iter().map(BTreeSet::len).sum();
        if waiting != self.waiting_total {
            return Err("queue length bookkeeping drifted".into());
        }
        let delivered = self.delivered_count;
        if delivered + waiting + in_service != self.packets.len() {
            return Err(format!(
                "conservation: {} arrived != {delivered} delivered + {waiting} waiting + {in_service} in service",
                self.packets.len()
            ));
        }
        Ok(())
    }

    pub(crate) fn into_parts(
        self,
    ) -> (
        Vec<Packet>,
        Vec<SawtoothProcess>,
        Vec<SawtoothProcess>,
        Vec<StampHistory>,
        Vec<StampHistory>,
        usize,
        Vec<PacketId>,
    ) {
        let in_service = self.servers.iter().flatten().map(|s| s.packet).collect();
        (
            self.packets,
            self.delta,
            self.xi,
            self.delivered_hist,
            self.served_hist,
            self.waiting_total,
            in_service,
        )
    }
}
