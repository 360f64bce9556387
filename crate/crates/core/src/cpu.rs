//! Trace-driven out-of-order core front end: a reorder buffer that fetches
//! trace records, issues memory accesses, and retires in order.

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use crate::config::CoreConfig;
use crate::trace::{HitLevel, TraceRecord};
use crate::{Error, Ps, Result};

/// How the memory system took an access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Issue {
    /// Queue full; retry next cycle.
    Stalled,
    /// Accepted; the entry waits for a completion.
    Pending,
    /// Accepted and done from the core's point of view (posted write).
    Posted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    NonMem,
    Cached,
    Mem(u64),
}

#[derive(Clone, Copy, Debug)]
struct RobEntry {
    kind: Kind,
    /// Instructions in this entry; non-memory instructions fetched together share one.
    count: u32,
    ready_at: Option<Ps>,
}

pub struct Core {
    pub id: usize,
    cfg: CoreConfig,
    trace: Arc<[TraceRecord]>,
    pos: usize,
    gap_left: u64,
    rob: VecDeque<RobEntry>,
    occupancy: usize,
    outstanding: HashSet<u64>,
    next_req: u64,
    pub committed: u64,
    pub mem_issued: u64,
    pub done_at: Option<Ps>,
}

impl Core {
    pub fn new(id: usize, cfg: CoreConfig, trace: Arc<[TraceRecord]>) -> Self {
        let gap_left = trace.first().map_or(0, |r| u64::from(r.gap));
        Core {
            id,
            cfg,
            trace,
            pos: 0,
            gap_left,
            rob: VecDeque::new(),
            occupancy: 0,
            outstanding: HashSet::new(),
            next_req: 0,
            committed: 0,
            mem_issued: 0,
            done_at: None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done_at.is_some()
    }

    pub fn rob_occupancy(&self) -> usize {
        self.occupancy
    }

    /// Total instructions the trace represents.
    pub fn trace_instructions(&self) -> u64 {
        self.trace.iter().map(TraceRecord::instructions).sum()
    }

    fn push(&mut self, kind: Kind, count: u32, ready_at: Option<Ps>) {
        self.occupancy += count as usize;
        if let (Kind::NonMem, Some(back)) = (kind, self.rob.back_mut()) {
            if back.kind == Kind::NonMem && back.ready_at == ready_at {
                back.count += count;
                return;
            }
        }
        self.rob.push_back(RobEntry { kind, count, ready_at });
    }

    /// One CPU cycle: retire, then fetch. `issue` offers a memory access to
    /// the memory system under a core-local request id.
    pub fn tick(&mut self, now: Ps, mut issue: impl FnMut(&TraceRecord, u64) -> Issue) {
        if self.done_at.is_some() {
            return;
        }
        let head_ready = self.rob.front().is_some_and(|h| h.ready_at.is_some_and(|t| t <= now));
        if !head_ready && !self.rob.is_empty() && (self.occupancy >= self.cfg.rob_size || self.pos == self.trace.len())
        {
            return;
        }
        let cycle = self.cfg.clock_ps;
        let mut budget = self.cfg.retire_per_cycle as u32;
        while budget > 0 {
            let Some(head) = self.rob.front_mut() else { break };
            match head.ready_at {
                Some(t) if t <= now => {}
                _ => break,
            }
            let n = head.count.min(budget);
            head.count -= n;
            budget -= n;
            self.committed += u64::from(n);
            self.occupancy -= n as usize;
            if head.count == 0 {
                self.rob.pop_front();
            }
        }

        let mut budget = self.cfg.fetch_per_cycle as u64;
        while budget > 0 && self.occupancy < self.cfg.rob_size && self.pos < self.trace.len() {
            if self.gap_left > 0 {
                let room = (self.cfg.rob_size - self.occupancy) as u64;
                let n = self.gap_left.min(budget).min(room);
                self.push(Kind::NonMem, n as u32, Some(now + self.cfg.nonmem_latency * cycle));
                self.gap_left -= n;
                budget -= n;
                continue;
            }
            let rec = self.trace[self.pos];
            match rec.hit_level {
                HitLevel::Mem => {
                    let id = self.next_req;
                    match issue(&rec, id) {
                        Issue::Stalled => break,
                        Issue::Pending => {
                            self.outstanding.insert(id);
                            self.push(Kind::Mem(id), 1, None);
                        }
                        Issue::Posted => self.push(Kind::Mem(id), 1, Some(now)),
                    }
                    self.next_req += 1;
                    self.mem_issued += 1;
                }
                level => {
                    let lat = match level {
                        HitLevel::L1 => self.cfg.l1_latency,
                        HitLevel::L2 => self.cfg.l2_latency,
                        _ => self.cfg.l3_latency,
                    };
                    self.push(Kind::Cached, 1, Some(now + lat * cycle));
                }
            }
            budget -= 1;
            self.pos += 1;
            self.gap_left = self.trace.get(self.pos).map_or(0, |r| u64::from(r.gap));
        }

        if self.pos == self.trace.len() && self.rob.is_empty() {
            self.done_at = Some(now);
        }
    }

    /// Marks memory request `id` complete at `now`.
    pub fn notify_complete(&mut self, id: u64, now: Ps) -> Result<()> {
        if !self.outstanding.remove(&id) {
            return Err(Error::Invariant(format!("core {}: completion for unknown or finished request {id}", self.id)));
        }
        let e = self
            .rob
            .iter_mut()
            .find(|e| e.kind == Kind::Mem(id))
            .ok_or_else(|| Error::Invariant(format!("core {}: request {id} not in the reorder buffer", self.id)))?;
        e.ready_at = Some(now);
        Ok(())
    }
}
