//! Whole-system simulation: cores, controller, links, buffer schedulers and
//! DRAM channels driven by one deterministic loop on the CPU clock.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use crate::bufsched::{BufferScheduler, ReturnFlight, SchedEvent};
use crate::codec;
use crate::config::{Mode, SimConfig};
use crate::controller::{AddressMap, LinkController, MemRequest, PacketStats, Segment};
use crate::cpu::{Core, Issue};
use crate::dram::frfcfs::{Counters, Drain, Engine, Job};
use crate::dram::{format_command_trace, DramCommand};
use crate::power::{self, Activity, ControllerActivity};
use crate::stats::{self, LatencyAcc, PacketSummary, RunReport};
use crate::trace::TraceRecord;
use crate::{Error, Ps, Result, DRAM_TCK_PS};

/// Simulated time without any commit or completion after which a run is
/// declared stuck.
const STALL_LIMIT_PS: Ps = 20_000_000_000;

struct Parent {
    core: usize,
    core_req: u64,
    remaining: u32,
    is_write: bool,
}

struct Downstream {
    arrive_at: Ps,
    bytes: Vec<u8>,
    ids: Vec<u16>,
}

#[derive(Default)]
struct Totals {
    read_lat: LatencyAcc,
    write_lat: LatencyAcc,
    useful_bytes: u64,
    segments: u64,
    parents: u64,
    mc_busy_ps: Ps,
}

/// A core request refused for lack of room: id, segments, per-channel counts.
type Stalled = (u64, Vec<Segment>, Vec<usize>);

pub struct System {
    cfg: SimConfig,
    map: AddressMap,
    cores: Vec<Core>,
    ddr: Vec<Engine>,
    ddr_reqs: HashMap<u64, MemRequest>,
    ddr_done: BinaryHeap<Reverse<(Ps, u64)>>,
    mcs: Vec<LinkController>,
    scheds: Vec<BufferScheduler>,
    down: Vec<VecDeque<Downstream>>,
    up: Vec<VecDeque<ReturnFlight>>,
    sent: Vec<HashMap<u16, MemRequest>>,
    bob_order: Vec<VecDeque<u16>>,
    parents: HashMap<u64, Parent>,
    stalled: Vec<Option<Stalled>>,
    next_key: u64,
    totals: Totals,
    now: Ps,
    dram_cycle: u64,
    last_progress: Ps,
    error: Option<Error>,
}

impl System {
    pub fn new(cfg: &SimConfig, traces: &[Arc<[TraceRecord]>]) -> Result<Self> {
        cfg.validate()?;
        if traces.len() != cfg.cores {
            return Err(Error::Config(format!("{} traces for {} cores", traces.len(), cfg.cores)));
        }
        let map = AddressMap::from_config(cfg);
        for t in traces {
            if let Some(r) = t.iter().find(|r| r.addr % 8 != 0 || r.end() > map.capacity() || r.gran == 0) {
                return Err(Error::BadAddress { addr: r.addr });
            }
        }
        let cores = traces.iter().enumerate().map(|(i, t)| Core::new(i, cfg.core, t.clone())).collect();
        let n = cfg.channels;
        let mut ddr = Vec::new();
        let mut mcs = Vec::new();
        let mut scheds = Vec::new();
        if cfg.mode == Mode::Ddr {
            for ch in 0..n {
                let mut e = Engine::new(ch as u8, cfg.timing, cfg.geometry(), Drain::new(cfg.high_mark, cfg.low_mark));
                if cfg.dump_commands {
                    e.enable_log();
                }
                ddr.push(e);
            }
        } else {
            for ch in 0..n {
                mcs.push(LinkController::new(ch as u8, cfg));
                scheds.push(BufferScheduler::new(ch as u8, cfg));
            }
        }
        Ok(System {
            cfg: cfg.clone(),
            map,
            cores,
            ddr,
            ddr_reqs: HashMap::new(),
            ddr_done: BinaryHeap::new(),
            mcs,
            scheds,
            down: (0..n).map(|_| VecDeque::new()).collect(),
            up: (0..n).map(|_| VecDeque::new()).collect(),
            sent: (0..n).map(|_| HashMap::new()).collect(),
            bob_order: (0..n).map(|_| VecDeque::new()).collect(),
            parents: HashMap::new(),
            stalled: vec![None; cfg.cores],
            next_key: 0,
            totals: Totals::default(),
            now: 0,
            dram_cycle: 0,
            last_progress: 0,
            error: None,
        })
    }

    fn room(&self, ch: usize, is_write: bool, n: usize) -> bool {
        if self.cfg.mode == Mode::Ddr {
            let e = &self.ddr[ch];
            if is_write {
                e.writes() + n <= self.cfg.write_queue
            } else {
                e.reads() + n <= self.cfg.read_queue
            }
        } else {
            self.mcs[ch].queues.has_room(is_write, n)
        }
    }

    fn accept(&mut self, core: usize, rec: &TraceRecord, core_req: u64) -> Issue {
        let (segs, per_ch) = match self.stalled[core].take() {
            Some((id, segs, per_ch)) if id == core_req => (segs, per_ch),
            _ => {
                let segs = match self.map.split(rec.addr, rec.gran) {
                    Ok(s) => s,
                    Err(e) => {
                        self.error.get_or_insert(e);
                        return Issue::Stalled;
                    }
                };
                let mut per_ch = vec![0usize; self.cfg.channels];
                for s in &segs {
                    per_ch[usize::from(s.channel)] += 1;
                }
                (segs, per_ch)
            }
        };
        if per_ch.iter().enumerate().any(|(ch, &k)| k > 0 && !self.room(ch, rec.is_write, k)) {
            self.stalled[core] = Some((core_req, segs, per_ch));
            return Issue::Stalled;
        }
        let parent = self.next_key;
        self.parents.insert(parent, Parent { core, core_req, remaining: segs.len() as u32, is_write: rec.is_write });
        self.totals.parents += 1;
        for seg in segs {
            let key = self.next_key;
            self.next_key += 1;
            let ch = usize::from(seg.channel);
            let req = MemRequest::new(key, parent, core, seg, rec.is_write, rec.tid, self.now);
            if self.cfg.mode == Mode::Ddr {
                let s = &req.seg;
                self.ddr[ch].push(Job::new(key, s.rank, s.bank, s.row, req.is_write, s.cas.clone()));
                self.ddr_reqs.insert(key, req);
            } else {
                self.mcs[ch].queues.accept(req).map_err(|_| ()).expect("room checked");
            }
        }
        if rec.is_write {
            Issue::Posted
        } else {
            Issue::Pending
        }
    }

    fn complete(&mut self, req: MemRequest, now: Ps) -> Result<()> {
        let seg = req.segments()?;
        if req.is_write {
            self.totals.write_lat.add(&seg);
        } else {
            self.totals.read_lat.add(&seg);
        }
        self.totals.useful_bytes += req.useful_bytes();
        self.totals.segments += 1;
        self.last_progress = now;
        let p = self
            .parents
            .get_mut(&req.parent)
            .ok_or_else(|| Error::Invariant(format!("segment {} has no parent {}", req.key, req.parent)))?;
        p.remaining -= 1;
        if p.remaining == 0 {
            let p = self.parents.remove(&req.parent).expect("present");
            if !p.is_write {
                self.cores[p.core].notify_complete(p.core_req, now)?;
            }
        }
        Ok(())
    }

    fn deliver_returns(&mut self, now: Ps) -> Result<()> {
        for ch in 0..self.up.len() {
            while self.up[ch].front().is_some_and(|f| f.arrive_at <= now) {
                let f = self.up[ch].pop_front().expect("front");
                let ids: Vec<(u16, u16)> = if self.cfg.mode == Mode::Bob {
                    let p = codec::decode_bob(&f.bytes)?;
                    let id = self.bob_order[ch]
                        .pop_front()
                        .ok_or_else(|| Error::Invariant("BOB return with nothing outstanding".into()))?;
                    let line = self.sent[ch].get(&id).map(|r| r.addr() & !63);
                    if line != Some(p.addr) {
                        return Err(Error::Invariant(format!(
                            "BOB return for {:#x} does not match request {id}",
                            p.addr
                        )));
                    }
                    vec![(id, 0)]
                } else {
                    let (head, entries) = codec::decode_return(&f.bytes)?;
                    if usize::from(head.desid) != ch {
                        return Err(Error::Routing { expected: ch as u8, got: head.desid });
                    }
                    entries.iter().map(|e| (e.reqid, e.gran)).collect()
                };
                for (id, gran) in ids {
                    let mut req = self.sent[ch]
                        .remove(&id)
                        .ok_or_else(|| Error::Invariant(format!("channel {ch}: return for unknown id {id}")))?;
                    if gran != 0 && gran != req.gran() {
                        return Err(Error::Invariant(format!(
                            "return granularity {gran} for request of {}",
                            req.gran()
                        )));
                    }
                    req.t_done = f.arrive_at;
                    self.mcs[ch].ids.give(id);
                    self.mcs[ch].queues.reads_in_flight -= 1;
                    self.complete(req, now)?;
                }
            }
        }
        Ok(())
    }

    fn deliver_packets(&mut self, now: Ps) -> Result<()> {
        for ch in 0..self.down.len() {
            while self.down[ch].front().is_some_and(|d| d.arrive_at <= now) {
                let d = self.down[ch].pop_front().expect("front");
                let got = self.scheds[ch].receive(&d.bytes, d.arrive_at)?;
                if self.cfg.mode == Mode::Bob {
                    self.scheds[ch].tag_last_bob(d.ids[0]);
                }
                for ((_, ready), id) in got.iter().zip(&d.ids) {
                    if let Some(r) = self.sent[ch].get_mut(id) {
                        r.t_arrived_sched = *ready;
                    }
                }
            }
        }
        Ok(())
    }

    fn dram_tick(&mut self, cycle: u64) -> Result<()> {
        for ch in 0..self.cfg.channels {
            if self.cfg.mode == Mode::Ddr {
                if let Some(ev) = self.ddr[ch].tick(cycle) {
                    if !ev.last {
                        continue;
                    }
                    let mut req = self
                        .ddr_reqs
                        .remove(&ev.token)
                        .ok_or_else(|| Error::Invariant(format!("unknown DDR job {}", ev.token)))?;
                    req.t_packed = req.t_created;
                    req.t_delivered = req.t_created;
                    req.t_arrived_sched = req.t_created;
                    req.t_first_cmd = ev.first_cmd * DRAM_TCK_PS;
                    if req.is_write {
                        req.t_data_end = ev.time * DRAM_TCK_PS;
                        req.t_done = req.t_data_end;
                        self.complete(req, cycle * DRAM_TCK_PS)?;
                    } else {
                        req.t_data_end = ev.data_end * DRAM_TCK_PS;
                        req.t_done = req.t_data_end;
                        self.ddr_done.push(Reverse((req.t_done, req.key)));
                        self.ddr_reqs.insert(req.key, req);
                    }
                }
                continue;
            }
            match self.scheds[ch].tick(cycle)? {
                None => {}
                Some(SchedEvent::WriteDone { reqid, first_cmd, done }) => {
                    let mut req = self.sent[ch]
                        .remove(&reqid)
                        .ok_or_else(|| Error::Invariant(format!("channel {ch}: write done for unknown id {reqid}")))?;
                    req.t_first_cmd = first_cmd;
                    req.t_data_end = done;
                    req.t_done = done;
                    self.mcs[ch].ids.give(reqid);
                    self.mcs[ch].credits += 1;
                    self.complete(req, done)?;
                }
                Some(SchedEvent::ReadData { reqid, first_cmd, data_end }) => {
                    let req = self.sent[ch]
                        .get_mut(&reqid)
                        .ok_or_else(|| Error::Invariant(format!("channel {ch}: read data for unknown id {reqid}")))?;
                    req.t_first_cmd = first_cmd;
                    req.t_data_end = data_end;
                    self.mcs[ch].credits += 1;
                    if self.cfg.mode == Mode::Bob {
                        self.bob_order[ch].push_back(reqid);
                    }
                }
            }
        }
        Ok(())
    }

    fn finish_ddr_reads(&mut self, now: Ps) -> Result<()> {
        while self.ddr_done.peek().is_some_and(|Reverse((t, _))| *t <= now) {
            let Reverse((_, key)) = self.ddr_done.pop().expect("peeked");
            let req = self.ddr_reqs.remove(&key).expect("finished read is tracked");
            self.complete(req, now)?;
        }
        Ok(())
    }

    fn memory_idle(&self) -> bool {
        if self.cfg.mode == Mode::Ddr {
            self.ddr_reqs.is_empty()
        } else {
            self.sent.iter().all(HashMap::is_empty) && self.mcs.iter().all(|m| m.queues.is_empty())
        }
    }

    /// One CPU cycle.
    fn step(&mut self) -> Result<()> {
        let now = self.now;
        self.deliver_returns(now)?;
        self.deliver_packets(now)?;
        while self.dram_cycle * DRAM_TCK_PS <= now {
            let c = self.dram_cycle;
            self.dram_tick(c)?;
            self.dram_cycle += 1;
        }
        self.finish_ddr_reads(now)?;
        for ch in 0..self.scheds.len() {
            if let Some(f) = self.scheds[ch].flush_returns(now)? {
                self.up[ch].push_back(f);
            }
        }
        for ch in 0..self.mcs.len() {
            if let Some(f) = self.mcs[ch].dispatch(now)? {
                let ids = f.reqs.iter().map(|r| r.id).collect();
                for r in f.reqs {
                    if self.sent[ch].insert(r.id, r).is_some() {
                        return Err(Error::Invariant(format!("channel {ch}: request id reused")));
                    }
                }
                self.down[ch].push_back(Downstream { arrive_at: f.arrive_at, bytes: f.bytes, ids });
            }
        }
        let mut cores = std::mem::take(&mut self.cores);
        for core in cores.iter_mut() {
            let before = core.committed;
            let id = core.id;
            core.tick(now, |rec, req| self.accept(id, rec, req));
            if core.committed != before {
                self.last_progress = now;
            }
        }
        self.cores = cores;
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let busy = if self.cfg.mode == Mode::Ddr {
            self.ddr.iter().any(|e| !e.is_empty())
        } else {
            self.mcs.iter().any(|m| !m.queues.is_empty() || now < m.link_free_at)
        };
        if busy {
            self.totals.mc_busy_ps += self.cfg.core.clock_ps;
        }
        Ok(())
    }

    /// Runs to completion: every core has retired its trace and every
    /// memory request has finished.
    pub fn run(mut self) -> Result<(RunReport, Vec<DramCommand>)> {
        loop {
            self.step()?;
            if self.cores.iter().all(Core::is_done) && self.memory_idle() {
                break;
            }
            if self.now - self.last_progress > STALL_LIMIT_PS {
                return Err(Error::Invariant(format!("no progress since {} ps", self.last_progress)));
            }
            self.now += self.cfg.core.clock_ps;
        }
        self.finish()
    }

    fn finish(mut self) -> Result<(RunReport, Vec<DramCommand>)> {
        let cfg = &self.cfg;
        let runtime_ps = self.now + cfg.core.clock_ps;
        let instructions: u64 = self.cores.iter().map(|c| c.committed).sum();
        let expected: u64 = self.cores.iter().map(Core::trace_instructions).sum();
        if instructions != expected {
            return Err(Error::Invariant(format!("committed {instructions} of {expected} instructions")));
        }
        if !self.parents.is_empty() {
            return Err(Error::Invariant(format!("{} requests never completed", self.parents.len())));
        }
        let mut counters = Counters::default();
        let mut commands: Vec<DramCommand> = Vec::new();
        let engines: Vec<&mut Engine> = if cfg.mode == Mode::Ddr {
            self.ddr.iter_mut().collect()
        } else {
            self.scheds.iter_mut().map(|s| &mut s.engine).collect()
        };
        for e in engines {
            let c = e.counters;
            counters.commands += c.commands;
            counters.act_devices += c.act_devices;
            counters.pre_devices += c.pre_devices;
            counters.read_bursts += c.read_bursts;
            counters.write_bursts += c.write_bursts;
            counters.refreshes += c.refreshes;
            commands.extend(e.take_log());
        }
        commands.sort_by_key(|c| (c.time, c.ch));

        let mut read_stats = PacketStats::default();
        let mut write_stats = PacketStats::default();
        let mut return_stats = PacketStats::default();
        let mut comp_log = crate::compress::CompressionLog::default();
        for m in &self.mcs {
            for (acc, s) in [(&mut read_stats, &m.read_stats), (&mut write_stats, &m.write_stats)] {
                acc.packets += s.packets;
                acc.requests += s.requests;
                acc.composition.add(&s.composition);
            }
            comp_log.packets += m.compression.packets;
            comp_log.raw_bytes += m.compression.raw_bytes;
            comp_log.block_bytes += m.compression.block_bytes;
        }
        for s in &self.scheds {
            return_stats.packets += s.return_stats.packets;
            return_stats.requests += s.return_stats.requests;
            return_stats.composition.add(&s.return_stats.composition);
        }

        let mut controllers =
            vec![ControllerActivity { peak_w: cfg.power.mc_power_w, busy_ps: self.totals.mc_busy_ps }];
        for s in &self.scheds {
            controllers.push(ControllerActivity { peak_w: cfg.power.bufsched_power_w, busy_ps: s.busy_ps });
        }
        let activity = Activity {
            runtime_ps,
            devices: (cfg.channels * cfg.ranks * cfg.subranks) as u64,
            act_devices: counters.act_devices,
            bursts: counters.read_bursts + counters.write_bursts,
            burst_ps: cfg.timing.tburst * DRAM_TCK_PS,
            refreshes: counters.refreshes,
            controllers,
        };
        let power = power::account(&cfg.power, &activity);
        let command_text = format_command_trace(&commands);
        let report = RunReport {
            workload: if cfg.trace_files.is_empty() { cfg.workload.clone() } else { "trace".into() },
            mode: cfg.mode,
            seed: cfg.seed,
            cores: cfg.cores,
            sched_latency_cycles: if cfg.mode.uses_link() { cfg.sched_latency_cycles } else { 0 },
            compression: cfg.compression,
            merging: cfg.merge.enabled,
            cycles: runtime_ps / cfg.core.clock_ps,
            runtime_ps,
            instructions,
            speedup: 1.0,
            mem_requests: self.totals.parents,
            segments: self.totals.segments,
            useful_bytes: self.totals.useful_bytes,
            bw_utilization: stats::effective_bw_utilization(
                self.totals.useful_bytes,
                runtime_ps,
                cfg.channels,
                cfg.timing.tburst,
            ),
            read_latency: self.totals.read_lat.finish(),
            write_latency: self.totals.write_lat.finish(),
            read_packets: PacketSummary::from(&read_stats),
            write_packets: PacketSummary::from(&write_stats),
            return_packets: PacketSummary::from(&return_stats),
            compression_ratio: comp_log.ratio(),
            dram: counters,
            power,
            normalized_edp: 1.0,
            command_count: commands.len() as u64,
            command_crc: if cfg.dump_commands { crc32fast::hash(command_text.as_bytes()) } else { 0 },
        };
        Ok((report, commands))
    }
}
