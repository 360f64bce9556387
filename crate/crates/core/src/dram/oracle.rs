//! Post-hoc timing validator.
//!
//! Replays a command list and re-derives every constraint from the commands
//! themselves, without sharing state or code with [`super::ChannelState`].

use std::collections::{HashMap, VecDeque};
use std::fmt;

use super::{CmdKind, DramCommand, Geometry, TimingParams};
use crate::DRAM_TCK_PS;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub constraint: &'static str,
    pub command: DramCommand,
    pub prior: Option<DramCommand>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ps: {} violated by `{}`", self.command.time * DRAM_TCK_PS, self.constraint, self.command)?;
        if let Some(p) = &self.prior {
            write!(f, " (after `{p}`)")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct BankHist {
    act: Option<DramCommand>,
    reads: Vec<DramCommand>,
    write_ends: Vec<(u64, DramCommand)>,
    closed: Option<(u64, DramCommand)>,
}

#[derive(Default)]
struct DevHist {
    acts: VecDeque<DramCommand>,
    last_cas: Option<DramCommand>,
    last_write_end: Option<(u64, DramCommand)>,
}

#[derive(Clone, Copy)]
struct Transfer {
    end: u64,
    rank: u8,
    write: bool,
    cmd: DramCommand,
}

struct Replay<'a> {
    t: &'a TimingParams,
    g: &'a Geometry,
    banks: HashMap<(u8, u8, u8, u8), BankHist>,
    devs: HashMap<(u8, u8, u8), DevHist>,
    lanes: HashMap<(u8, u8), Transfer>,
    refs: HashMap<(u8, u8), DramCommand>,
    last: HashMap<u8, DramCommand>,
}

type Check = Result<(), Violation>;

fn fail(constraint: &'static str, command: &DramCommand, prior: Option<&DramCommand>) -> Check {
    Err(Violation { constraint, command: *command, prior: prior.copied() })
}

fn at_least(c: &DramCommand, bound: u64, name: &'static str, prior: &DramCommand) -> Check {
    if c.time < bound {
        fail(name, c, Some(prior))
    } else {
        Ok(())
    }
}

impl Replay<'_> {
    fn devices(&self, c: &DramCommand) -> Vec<u8> {
        (0..self.g.devices as u8).filter(|d| c.mask & (1 << d) != 0).collect()
    }

    /// Cycle from which the bank counts as precharged, for a bank whose row closed.
    fn precharge_point(&self, h: &BankHist, close: &DramCommand) -> u64 {
        if close.kind == CmdKind::Pre {
            return close.time;
        }
        let act = h.act.map_or(0, |a| a.time + self.t.tras);
        let rd = h.reads.iter().map(|r| r.time + self.t.trtp).max().unwrap_or(0);
        let wr = h.write_ends.iter().map(|(e, _)| e + self.t.twr).max().unwrap_or(0);
        act.max(rd).max(wr).max(close.time)
    }

    fn step(&mut self, c: &DramCommand) -> Check {
        let t = *self.t;
        if let Some(p) = self.last.get(&c.ch) {
            if c.time < p.time {
                return fail("ordering", c, Some(p));
            }
            if c.time == p.time {
                return fail("command bus", c, Some(p));
            }
        }
        if c.mask == 0
            || u32::from(c.mask) >= 1 << self.g.devices
            || usize::from(c.rank) >= self.g.ranks
            || usize::from(c.bank) >= self.g.banks
        {
            return fail("address", c, None);
        }
        if c.kind == CmdKind::Ref {
            if u32::from(c.mask) != (1 << self.g.devices) - 1 {
                return fail("address", c, None);
            }
            if let Some(r) = self.refs.get(&(c.ch, c.rank)) {
                at_least(c, r.time + t.trfc, "tRFC", r)?;
            }
            for d in 0..self.g.devices as u8 {
                for b in 0..self.g.banks as u8 {
                    if let Some(h) = self.banks.get(&(c.ch, c.rank, d, b)) {
                        match h.closed {
                            None if h.act.is_some() => return fail("row state", c, h.act.as_ref()),
                            Some((point, close)) => at_least(c, point + t.trp, "tRP", &close)?,
                            None => {}
                        }
                    }
                }
            }
            self.refs.insert((c.ch, c.rank), *c);
            return Ok(());
        }
        let devs = self.devices(c);
        for &d in &devs {
            self.check_device(c, d)?;
        }
        for &d in &devs {
            self.record_device(c, d);
        }
        Ok(())
    }

    fn check_device(&self, c: &DramCommand, d: u8) -> Check {
        let t = self.t;
        let empty = BankHist::default();
        let h = self.banks.get(&(c.ch, c.rank, d, c.bank)).unwrap_or(&empty);
        let is_open = h.act.is_some() && h.closed.is_none();
        let dev = self.devs.get(&(c.ch, c.rank, d));
        match c.kind {
            CmdKind::Act => {
                if is_open {
                    return fail("row state", c, h.act.as_ref());
                }
                if let Some(a) = &h.act {
                    at_least(c, a.time + t.trc, "tRC", a)?;
                }
                if let Some((point, close)) = &h.closed {
                    at_least(c, point + t.trp, "tRP", close)?;
                }
                if let Some(r) = self.refs.get(&(c.ch, c.rank)) {
                    at_least(c, r.time + t.trfc, "tRFC", r)?;
                }
                if let Some(dev) = dev {
                    if let Some(a) = dev.acts.back() {
                        at_least(c, a.time + t.trrd, "tRRD", a)?;
                    }
                    if dev.acts.len() == 4 {
                        let a = &dev.acts[0];
                        at_least(c, a.time + t.tfaw, "tFAW", a)?;
                    }
                }
            }
            CmdKind::Pre => {
                if !is_open {
                    return fail("row state", c, None);
                }
                let a = h.act.as_ref().expect("open bank has an activate");
                at_least(c, a.time + t.tras, "tRAS", a)?;
                for r in &h.reads {
                    at_least(c, r.time + t.trtp, "tRTP", r)?;
                }
                for (end, w) in &h.write_ends {
                    at_least(c, end + t.twr, "tWR", w)?;
                }
            }
            k => {
                let a = match (&h.act, is_open) {
                    (Some(a), true) if a.row == c.row => a,
                    _ => return fail("row state", c, h.act.as_ref()),
                };
                at_least(c, a.time + t.trcd, "tRCD", a)?;
                if let Some(dev) = dev {
                    if let Some(p) = &dev.last_cas {
                        at_least(c, p.time + t.tccd, "tCCD", p)?;
                    }
                    if k.is_read() {
                        if let Some((end, w)) = &dev.last_write_end {
                            at_least(c, end + t.twtr, "tWTR", w)?;
                        }
                    }
                }
                let write = k.is_write();
                let start = c.time + if write { t.tcwl } else { t.cl };
                if let Some(prev) = self.lanes.get(&(c.ch, d)) {
                    let mut gap = 0;
                    if prev.rank != c.rank {
                        gap = t.trtrs;
                    }
                    if !prev.write && write {
                        gap = gap.max(t.trtw_gap);
                    }
                    if start < prev.end + gap {
                        return fail("data bus", c, Some(&prev.cmd));
                    }
                }
            }
        }
        Ok(())
    }

    fn record_device(&mut self, c: &DramCommand, d: u8) {
        let t = *self.t;
        self.last.insert(c.ch, *c);
        let key = (c.ch, c.rank, d, c.bank);
        match c.kind {
            CmdKind::Act => {
                self.banks.insert(key, BankHist { act: Some(*c), ..Default::default() });
                let dev = self.devs.entry((c.ch, c.rank, d)).or_default();
                dev.acts.push_back(*c);
                if dev.acts.len() > 4 {
                    dev.acts.pop_front();
                }
            }
            CmdKind::Pre => {
                let h = self.banks.get_mut(&key).expect("checked open");
                h.closed = Some((c.time, *c));
            }
            k => {
                let write = k.is_write();
                let end = c.time + if write { t.tcwl } else { t.cl } + t.tburst;
                let h = self.banks.get_mut(&key).expect("checked open");
                if write {
                    h.write_ends.push((end, *c));
                } else {
                    h.reads.push(*c);
                }
                if k.auto_precharge() {
                    let h = &self.banks[&key];
                    let point = self.precharge_point(h, c);
                    self.banks.get_mut(&key).unwrap().closed = Some((point, *c));
                }
                let dev = self.devs.entry((c.ch, c.rank, d)).or_default();
                dev.last_cas = Some(*c);
                if write {
                    dev.last_write_end = Some((end, *c));
                }
                self.lanes.insert((c.ch, d), Transfer { end, rank: c.rank, write, cmd: *c });
            }
        }
    }
}

/// Checks a time-ordered command list; returns the first violation.
pub fn validate(cmds: &[DramCommand], timing: &TimingParams, geometry: &Geometry) -> Result<(), Violation> {
    let mut r = Replay {
        t: timing,
        g: geometry,
        banks: HashMap::new(),
        devs: HashMap::new(),
        lanes: HashMap::new(),
        refs: HashMap::new(),
        last: HashMap::new(),
    };
    for c in cmds {
        r.step(c)?;
        r.last.insert(c.ch, *c);
    }
    Ok(())
}
