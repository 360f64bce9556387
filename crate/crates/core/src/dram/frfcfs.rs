//! First-ready first-come-first-served command scheduler with closed-page
//! row management.
//!
//! A [`Job`] is a run of column accesses to one `(rank, bank, row)`, each
//! access naming a column block and the devices it touches. The engine issues
//! at most one command per channel per cycle in this priority order:
//!
//! 1. refresh work for a rank whose refresh is due,
//! 2. a column command for a job whose devices all hold its row open,
//! 3. an activate for the oldest job whose devices can open its row,
//! 4. a precharge of a row no queued job will use.
//!
//! Within 2 and 3 the preferred direction (writes while draining, reads
//! otherwise) goes first, then age. A column command auto-precharges unless
//! its own job or another job ready to hit the same row still needs the
//! devices.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{ChannelState, CmdKind, DramCommand, Geometry, TimingParams};

#[derive(Clone, Debug)]
pub struct Job {
    pub token: u64,
    pub rank: u8,
    pub bank: u8,
    pub row: u32,
    pub is_write: bool,
    cas: VecDeque<(u16, u8)>,
    need: u8,
    seq: u64,
    started: bool,
    first_cmd: Option<u64>,
    hint: u64,
}

impl Job {
    /// `cas` lists `(column block, device mask)` in issue order.
    pub fn new(token: u64, rank: u8, bank: u8, row: u32, is_write: bool, cas: Vec<(u16, u8)>) -> Self {
        assert!(!cas.is_empty() && cas.iter().all(|&(_, m)| m != 0), "job needs column accesses");
        let need = cas.iter().fold(0, |m, &(_, d)| m | d);
        Job {
            token,
            rank,
            bank,
            row,
            is_write,
            cas: cas.into(),
            need,
            seq: 0,
            started: false,
            first_cmd: None,
            hint: 0,
        }
    }

    fn recompute_need(&mut self) {
        self.need = self.cas.iter().fold(0, |m, &(_, d)| m | d);
    }
}

/// A column command that issued.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CasEvent {
    pub token: u64,
    pub is_write: bool,
    pub time: u64,
    pub data_end: u64,
    pub devices: u32,
    /// Set on the job's final column command.
    pub last: bool,
    /// First command issued on behalf of the job.
    pub first_cmd: u64,
}

/// Write-drain hysteresis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Drain {
    pub high: usize,
    pub low: usize,
    pub on: bool,
}

impl Drain {
    pub fn new(high: usize, low: usize) -> Self {
        Drain { high, low, on: false }
    }

    pub fn update(&mut self, writes: usize) {
        if writes > self.high {
            self.on = true;
        } else if writes < self.low {
            self.on = false;
        }
    }
}

/// Device-level activity counts for power accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub commands: u64,
    pub act_devices: u64,
    pub pre_devices: u64,
    pub read_bursts: u64,
    pub write_bursts: u64,
    pub refreshes: u64,
}

pub struct Engine {
    pub ch: u8,
    pub state: ChannelState,
    pub drain: Drain,
    pub counters: Counters,
    jobs: Vec<Job>,
    next_seq: u64,
    writes: usize,
    refresh: bool,
    ref_due: Vec<u64>,
    ref_pending: Vec<bool>,
    log: Option<Vec<DramCommand>>,
    kept_buf: Vec<u8>,
    /// Set when queue or bank state changed since the last full pass.
    dirty: bool,
    /// With a clean state, the earliest cycle anything can become issuable.
    wake_at: u64,
}

impl Engine {
    pub fn new(ch: u8, timing: TimingParams, geometry: Geometry, drain: Drain) -> Self {
        let ranks = geometry.ranks;
        Engine {
            ch,
            state: ChannelState::new(timing, geometry),
            drain,
            counters: Counters::default(),
            jobs: Vec::new(),
            next_seq: 0,
            writes: 0,
            refresh: true,
            ref_due: (0..ranks as u64).map(|r| timing.trefi * (r + 1) / ranks as u64).collect(),
            ref_pending: vec![false; ranks],
            log: None,
            kept_buf: Vec::new(),
            dirty: true,
            wake_at: 0,
        }
    }

    pub fn set_refresh(&mut self, on: bool) {
        self.refresh = on;
    }

    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn take_log(&mut self) -> Vec<DramCommand> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn push(&mut self, mut job: Job) {
        job.seq = self.next_seq;
        self.next_seq += 1;
        if job.is_write {
            self.writes += 1;
        }
        self.dirty = true;
        self.jobs.push(job);
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn writes(&self) -> usize {
        self.writes
    }

    pub fn reads(&self) -> usize {
        self.jobs.len() - self.writes
    }

    fn covered(&self, j: &Job) -> bool {
        self.state.open_with(j.rank, j.bank, j.row, j.need) == j.need
    }

    /// Devices per `(rank, bank)` that some job is about to use and must stay open.
    fn kept(&self, kept: &mut Vec<u8>) {
        let g = self.state.geometry;
        kept.clear();
        kept.resize(g.ranks * g.banks, 0);
        for j in &self.jobs {
            let pending = self.ref_pending[usize::from(j.rank)];
            if j.started || (!pending && self.covered(j)) {
                kept[usize::from(j.rank) * g.banks + usize::from(j.bank)] |= j.need;
            }
        }
    }

    fn wake_until(&mut self, earliest: Option<u64>) {
        if let Some(t) = earliest {
            self.wake_at = self.wake_at.min(t);
        }
    }

    fn issue(&mut self, cmd: DramCommand) {
        self.dirty = true;
        self.state.apply(&cmd);
        self.counters.commands += 1;
        let n = u64::from(cmd.devices());
        match cmd.kind {
            CmdKind::Act => self.counters.act_devices += n,
            CmdKind::Pre => self.counters.pre_devices += n,
            CmdKind::Rd | CmdKind::Rda => self.counters.read_bursts += n,
            CmdKind::Wr | CmdKind::Wra => self.counters.write_bursts += n,
            CmdKind::Ref => self.counters.refreshes += 1,
        }
        if cmd.kind.auto_precharge() {
            self.counters.pre_devices += n;
        }
        if matches!(cmd.kind, CmdKind::Pre | CmdKind::Ref) || cmd.kind.auto_precharge() {
            let all_banks = cmd.kind == CmdKind::Ref;
            for j in self.jobs.iter_mut().filter(|j| j.rank == cmd.rank && (all_banks || j.bank == cmd.bank)) {
                j.hint = 0;
            }
        }
        if let Some(log) = self.log.as_mut() {
            log.push(cmd);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn cmd(&self, now: u64, kind: CmdKind, rank: u8, mask: u8, bank: u8, row: u32, col: u16) -> DramCommand {
        DramCommand { time: now, ch: self.ch, rank, mask, bank, row, col, kind }
    }

    /// Tries to precharge one unused open row of `rank` (any rank if `None`).
    fn orphan_pre(&mut self, now: u64, rank: Option<u8>) -> bool {
        let g = self.state.geometry;
        let any_open = (0..g.ranks as u8)
            .filter(|&r| rank.is_none_or(|x| x == r))
            .any(|r| (0..g.banks as u8).any(|b| self.state.open_any(r, b, g.all_devices()) != 0));
        if !any_open {
            return false;
        }
        let mut kept = std::mem::take(&mut self.kept_buf);
        self.kept(&mut kept);
        let done = self.orphan_pre_with(now, rank, &kept);
        self.kept_buf = kept;
        done
    }

    fn orphan_pre_with(&mut self, now: u64, rank: Option<u8>, kept: &[u8]) -> bool {
        let g = self.state.geometry;
        let all = g.all_devices();
        for r in 0..g.ranks as u8 {
            if rank.is_some_and(|x| x != r) {
                continue;
            }
            for b in 0..g.banks as u8 {
                let loose = self.state.open_any(r, b, all) & !kept[usize::from(r) * g.banks + usize::from(b)];
                if loose == 0 {
                    continue;
                }
                let cmd = self.cmd(now, CmdKind::Pre, r, loose, b, 0, 0);
                match self.state.check(&cmd) {
                    Ok(()) => {
                        self.issue(cmd);
                        return true;
                    }
                    Err(b) => self.wake_until(b.earliest),
                }
            }
        }
        false
    }

    fn refresh_step(&mut self, now: u64) -> bool {
        let g = self.state.geometry;
        for r in 0..g.ranks {
            if !self.ref_pending[r] {
                continue;
            }
            if self.state.rank_closed(r as u8) {
                let cmd = self.cmd(now, CmdKind::Ref, r as u8, g.all_devices(), 0, 0, 0);
                if self.state.check(&cmd).is_ok() {
                    self.issue(cmd);
                    self.ref_pending[r] = false;
                    self.ref_due[r] += self.state.timing.trefi;
                    return true;
                }
            } else if self.orphan_pre(now, Some(r as u8)) {
                return true;
            }
        }
        false
    }

    /// Runs one command-bus cycle.
    pub fn tick(&mut self, now: u64) -> Option<CasEvent> {
        if self.refresh {
            for r in 0..self.ref_due.len() {
                if now >= self.ref_due[r] {
                    self.ref_pending[r] = true;
                }
            }
        }
        let refresh_due = self.ref_pending.iter().any(|&p| p);
        if self.jobs.is_empty() && !refresh_due {
            return None;
        }
        if !refresh_due && !self.dirty && now < self.wake_at {
            return None;
        }
        self.dirty = false;
        self.wake_at = self.ref_due.iter().copied().min().unwrap_or(u64::MAX);
        self.drain.update(self.writes);
        if refresh_due && self.refresh_step(now) {
            return None;
        }
        let pref_write = self.drain.on || self.writes == self.jobs.len();

        let mut cas_pick: Option<(usize, DramCommand)> = None;
        let mut other_cas: Option<(usize, DramCommand)> = None;
        let mut act_pick: Option<(usize, DramCommand)> = None;
        let mut other_act: Option<(usize, DramCommand)> = None;
        for i in 0..self.jobs.len() {
            let j = &self.jobs[i];
            if j.hint > now {
                self.wake_at = self.wake_at.min(j.hint);
                continue;
            }
            let preferred = j.is_write == pref_write;
            let slot_cas = if preferred { &cas_pick } else { &other_cas };
            let slot_act = if preferred { &act_pick } else { &other_act };
            if self.covered(j) {
                if slot_cas.is_some() {
                    continue;
                }
                let (col, mask) = j.cas[0];
                let kind = if j.is_write { CmdKind::Wr } else { CmdKind::Rd };
                let cmd = self.cmd(now, kind, j.rank, mask, j.bank, j.row, col);
                match self.state.check(&cmd) {
                    Ok(()) => {
                        if preferred {
                            cas_pick = Some((i, cmd));
                            break;
                        }
                        other_cas = Some((i, cmd));
                    }
                    Err(b) => {
                        self.jobs[i].hint = b.earliest.unwrap_or(now + 1);
                        self.wake_until(b.earliest);
                    }
                }
            } else {
                if slot_act.is_some() || self.ref_pending[usize::from(j.rank)] {
                    continue;
                }
                let mine = self.state.open_with(j.rank, j.bank, j.row, j.need);
                if self.state.open_any(j.rank, j.bank, j.need) != mine {
                    self.jobs[i].hint = u64::MAX;
                    continue;
                }
                let cmd = self.cmd(now, CmdKind::Act, j.rank, j.need & !mine, j.bank, j.row, 0);
                match self.state.check(&cmd) {
                    Ok(()) => {
                        if preferred {
                            act_pick = Some((i, cmd));
                        } else {
                            other_act = Some((i, cmd));
                        }
                    }
                    Err(b) => {
                        self.jobs[i].hint = b.earliest.unwrap_or(now + 1);
                        self.wake_until(b.earliest);
                    }
                }
            }
        }

        if let Some((i, cmd)) = cas_pick.or(other_cas) {
            return Some(self.issue_cas(now, i, cmd));
        }
        if let Some((i, cmd)) = act_pick.or(other_act) {
            self.issue(cmd);
            let j = &mut self.jobs[i];
            j.started = true;
            j.first_cmd.get_or_insert(now);
            let (rank, bank) = (j.rank, j.bank);
            for o in self.jobs.iter_mut().filter(|o| o.rank == rank && o.bank == bank) {
                o.hint = 0;
            }
            return None;
        }
        self.orphan_pre(now, None);
        None
    }

    fn issue_cas(&mut self, now: u64, i: usize, mut cmd: DramCommand) -> CasEvent {
        let mut job = self.jobs.remove(i);
        job.cas.pop_front();
        job.recompute_need();
        let pending = self.ref_pending[usize::from(job.rank)];
        let others = self
            .jobs
            .iter()
            .filter(|o| o.rank == job.rank && o.bank == job.bank && o.row == job.row && o.need & cmd.mask != 0)
            .filter(|o| o.started || (!pending && self.covered(o)))
            .fold(0u8, |m, o| m | o.need);
        let keep = cmd.mask & (job.need | others);
        cmd.kind = match (job.is_write, keep == 0) {
            (false, true) => CmdKind::Rda,
            (false, false) => CmdKind::Rd,
            (true, true) => CmdKind::Wra,
            (true, false) => CmdKind::Wr,
        };
        self.issue(cmd);
        job.started = true;
        let first_cmd = *job.first_cmd.get_or_insert(now);
        let last = job.cas.is_empty();
        let ev = CasEvent {
            token: job.token,
            is_write: job.is_write,
            time: now,
            data_end: self.state.data_end(cmd.kind, now),
            devices: cmd.devices(),
            last,
            first_cmd,
        };
        if last {
            if job.is_write {
                self.writes -= 1;
            }
        } else {
            job.hint = 0;
            self.jobs.insert(i, job);
        }
        ev
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> Engine {
        let mut e = Engine::new(0, TimingParams::default(), Geometry::default(), Drain::new(48, 16));
        e.set_refresh(false);
        e.enable_log();
        e
    }

    fn run(e: &mut Engine, until: u64) -> Vec<CasEvent> {
        (0..until).filter_map(|t| e.tick(t)).collect()
    }

    #[test]
    fn single_read_act_then_rda() {
        let mut e = engine();
        e.push(Job::new(1, 0, 0, 7, false, vec![(0, 1)]));
        let ev = run(&mut e, 40);
        let log = e.take_log();
        assert_eq!(log.len(), 2);
        assert_eq!((log[0].kind, log[0].time), (CmdKind::Act, 0));
        assert_eq!((log[1].kind, log[1].time), (CmdKind::Rda, 9));
        assert_eq!(ev[0].data_end, 9 + 9 + 4);
    }

    #[test]
    fn same_row_second_read_is_a_hit() {
        let mut e = engine();
        e.push(Job::new(1, 0, 0, 7, false, vec![(0, 1)]));
        e.push(Job::new(2, 0, 0, 7, false, vec![(1, 1)]));
        run(&mut e, 60);
        let kinds: Vec<_> = e.take_log().iter().map(|c| c.kind).collect();
        assert_eq!(kinds, vec![CmdKind::Act, CmdKind::Rd, CmdKind::Rda]);
    }

    #[test]
    fn different_subranks_activate_back_to_back() {
        let mut e = engine();
        e.push(Job::new(1, 0, 0, 7, false, vec![(0, 1)]));
        e.push(Job::new(2, 0, 0, 9, false, vec![(0, 2)]));
        run(&mut e, 60);
        let log = e.take_log();
        assert_eq!((log[0].kind, log[0].time), (CmdKind::Act, 0));
        assert_eq!((log[1].kind, log[1].time), (CmdKind::Act, 1));
    }

    #[test]
    fn refresh_is_issued_and_legal() {
        let mut e = Engine::new(0, TimingParams::default(), Geometry::default(), Drain::new(48, 16));
        e.enable_log();
        for i in 0..200u64 {
            e.push(Job::new(i, (i % 2) as u8, (i % 8) as u8, i as u32, i % 3 == 0, vec![(0, 0xff)]));
        }
        let done = run(&mut e, 20_000);
        assert_eq!(done.iter().filter(|c| c.last).count(), 200);
        let log = e.take_log();
        assert!(log.iter().filter(|c| c.kind == CmdKind::Ref).count() >= 4);
        assert_eq!(super::super::oracle::validate(&log, &TimingParams::default(), &Geometry::default()), Ok(()));
    }
}
