//! Sub-ranked DDR3 timing model.
//!
//! Time here is DRAM command-clock cycles (`tCK`). A command addresses a set
//! of devices (sub-ranks) of one rank through an 8-bit mask; whole-rank
//! commands use every bit. Each device keeps its own bank state, so the same
//! bank index may hold different rows on different devices.

pub mod frfcfs;
pub mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, DRAM_TCK_PS};

/// Timing parameters in tCK cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingParams {
    pub cl: u64,
    pub trcd: u64,
    pub trp: u64,
    pub tras: u64,
    pub trc: u64,
    pub tccd: u64,
    pub trrd: u64,
    pub tfaw: u64,
    pub twr: u64,
    pub twtr: u64,
    pub trtp: u64,
    pub tcwl: u64,
    pub tburst: u64,
    pub trfc: u64,
    pub trefi: u64,
    /// Idle cycles on a data lane when consecutive transfers come from different ranks.
    pub trtrs: u64,
    /// Idle cycles on a data lane between a read transfer and a following write.
    pub trtw_gap: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            cl: 9,
            trcd: 9,
            trp: 9,
            tras: 24,
            trc: 33,
            tccd: 4,
            trrd: 4,
            tfaw: 20,
            twr: 10,
            twtr: 5,
            trtp: 5,
            tcwl: 7,
            tburst: 4,
            trfc: 107,
            trefi: 5200,
            trtrs: 1,
            trtw_gap: 2,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.cl,
            self.trcd,
            self.trp,
            self.tras,
            self.trc,
            self.tccd,
            self.trrd,
            self.tfaw,
            self.twr,
            self.twtr,
            self.trtp,
            self.tcwl,
            self.tburst,
            self.trfc,
            self.trefi,
        ];
        if all.contains(&0) {
            return Err(Error::Config("timing parameters must be positive".into()));
        }
        if self.trc != self.tras + self.trp {
            return Err(Error::Config(format!("tRC ({}) must equal tRAS + tRP ({})", self.trc, self.tras + self.trp)));
        }
        if self.tccd < self.tburst {
            return Err(Error::Config("tCCD shorter than a burst".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmdKind {
    Act,
    Rd,
    Rda,
    Wr,
    Wra,
    Pre,
    Ref,
}

impl CmdKind {
    pub fn name(self) -> &'static str {
        match self {
            CmdKind::Act => "ACT",
            CmdKind::Rd => "RD",
            CmdKind::Rda => "RDA",
            CmdKind::Wr => "WR",
            CmdKind::Wra => "WRA",
            CmdKind::Pre => "PRE",
            CmdKind::Ref => "REF",
        }
    }

    pub fn is_cas(self) -> bool {
        matches!(self, CmdKind::Rd | CmdKind::Rda | CmdKind::Wr | CmdKind::Wra)
    }

    pub fn is_read(self) -> bool {
        matches!(self, CmdKind::Rd | CmdKind::Rda)
    }

    pub fn is_write(self) -> bool {
        matches!(self, CmdKind::Wr | CmdKind::Wra)
    }

    pub fn auto_precharge(self) -> bool {
        matches!(self, CmdKind::Rda | CmdKind::Wra)
    }
}

impl FromStr for CmdKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "ACT" => CmdKind::Act,
            "RD" => CmdKind::Rd,
            "RDA" => CmdKind::Rda,
            "WR" => CmdKind::Wr,
            "WRA" => CmdKind::Wra,
            "PRE" => CmdKind::Pre,
            "REF" => CmdKind::Ref,
            other => return Err(format!("unknown command `{other}`")),
        })
    }
}

/// One DRAM command. `time` is in tCK cycles; the text form prints picoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DramCommand {
    pub time: u64,
    pub ch: u8,
    pub rank: u8,
    pub mask: u8,
    pub bank: u8,
    pub row: u32,
    pub col: u16,
    pub kind: CmdKind,
}

impl DramCommand {
    pub fn devices(&self) -> u32 {
        self.mask.count_ones()
    }
}

impl fmt::Display for DramCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {:02x} {} {} {} {}",
            self.time * DRAM_TCK_PS,
            self.ch,
            self.rank,
            self.mask,
            self.bank,
            self.row,
            self.col,
            self.kind.name()
        )
    }
}

impl FromStr for DramCommand {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = s.split_whitespace().collect();
        if f.len() != 8 {
            return Err(format!("expected 8 fields, found {}", f.len()));
        }
        let ps: u64 = f[0].parse().map_err(|e| format!("time: {e}"))?;
        if !ps.is_multiple_of(DRAM_TCK_PS) {
            return Err(format!("time {ps} ps is not on a {DRAM_TCK_PS} ps clock edge"));
        }
        let num = |i: usize, what: &str| -> std::result::Result<u64, String> {
            f[i].parse::<u64>().map_err(|e| format!("{what}: {e}"))
        };
        Ok(DramCommand {
            time: ps / DRAM_TCK_PS,
            ch: num(1, "channel")? as u8,
            rank: num(2, "rank")? as u8,
            mask: u8::from_str_radix(f[3], 16).map_err(|e| format!("sub-rank mask: {e}"))?,
            bank: num(4, "bank")? as u8,
            row: num(5, "row")? as u32,
            col: num(6, "column")? as u16,
            kind: f[7].parse()?,
        })
    }
}

/// Writes one command per line.
pub fn format_command_trace(cmds: &[DramCommand]) -> String {
    let mut s = String::with_capacity(cmds.len() * 32);
    for c in cmds {
        s.push_str(&c.to_string());
        s.push('\n');
    }
    s
}

pub fn parse_command_trace(text: &str) -> Result<Vec<DramCommand>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| l.parse().map_err(|msg| Error::TraceParse { path: "<command trace>".into(), line: i + 1, msg }))
        .collect()
}

/// Devices, ranks and banks behind one channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub ranks: usize,
    pub devices: usize,
    pub banks: usize,
}

impl Geometry {
    pub fn all_devices(&self) -> u8 {
        ((1u16 << self.devices) - 1) as u8
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { ranks: 2, devices: 8, banks: 8 }
    }
}

/// Why a command cannot issue yet. `earliest` is a lower bound on the cycle
/// at which it might, or `None` when it waits on a state change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blocked {
    pub constraint: &'static str,
    pub earliest: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default)]
struct BankSt {
    open: Option<u32>,
    act_at: Option<u64>,
    cas_ok: u64,
    ras_ok: u64,
    rtp_ok: u64,
    wr_ok: u64,
    idle_at: u64,
}

#[derive(Clone, Copy, Debug, Default)]
struct DevSt {
    acts: [Option<u64>; 4],
    next: usize,
    last_act: Option<u64>,
    last_cas: Option<u64>,
    wr_end: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default)]
struct LaneSt {
    busy_until: u64,
    last: Option<(u8, bool)>,
}

struct Check {
    first: Option<&'static str>,
    earliest: Option<u64>,
    stuck: bool,
}

impl Check {
    fn new() -> Self {
        Check { first: None, earliest: Some(0), stuck: false }
    }

    fn need(&mut self, now: u64, ok_at: u64, name: &'static str) {
        if now < ok_at {
            self.first.get_or_insert(name);
            self.earliest = self.earliest.map(|e| e.max(ok_at));
        }
    }

    fn state(&mut self, name: &'static str) {
        self.first.get_or_insert(name);
        self.stuck = true;
    }

    fn done(self) -> std::result::Result<(), Blocked> {
        match self.first {
            None => Ok(()),
            Some(c) => Err(Blocked { constraint: c, earliest: if self.stuck { None } else { self.earliest } }),
        }
    }
}

const CLOSED: u32 = u32::MAX;

/// Timing state of one channel.
#[derive(Clone, Debug)]
pub struct ChannelState {
    pub timing: TimingParams,
    pub geometry: Geometry,
    banks: Vec<BankSt>,
    rows: Vec<[u32; 8]>,
    devs: Vec<DevSt>,
    ref_until: Vec<u64>,
    lanes: Vec<LaneSt>,
    last_cmd: Option<u64>,
}

impl ChannelState {
    pub fn new(timing: TimingParams, geometry: Geometry) -> Self {
        let nd = geometry.ranks * geometry.devices;
        ChannelState {
            timing,
            geometry,
            banks: vec![BankSt::default(); nd * geometry.banks],
            rows: vec![[CLOSED; 8]; geometry.ranks * geometry.banks],
            devs: vec![DevSt::default(); nd],
            ref_until: vec![0; geometry.ranks],
            lanes: vec![LaneSt::default(); geometry.devices],
            last_cmd: None,
        }
    }

    fn dev_idx(&self, rank: u8, dev: usize) -> usize {
        usize::from(rank) * self.geometry.devices + dev
    }

    fn bank_idx(&self, rank: u8, dev: usize, bank: u8) -> usize {
        self.dev_idx(rank, dev) * self.geometry.banks + usize::from(bank)
    }

    fn mask_devs(mask: u8) -> impl Iterator<Item = usize> {
        (0..8).filter(move |d| mask & (1 << d) != 0)
    }

    /// Row currently open in `(rank, dev, bank)`.
    pub fn open_row(&self, rank: u8, dev: usize, bank: u8) -> Option<u32> {
        self.banks[self.bank_idx(rank, dev, bank)].open
    }

    /// Devices of `mask` whose `bank` holds `row` open.
    pub fn open_with(&self, rank: u8, bank: u8, row: u32, mask: u8) -> u8 {
        let rows = &self.rows[self.row_idx(rank, bank)];
        let mut m = 0;
        for (d, &r) in rows.iter().enumerate() {
            m |= u8::from(r == row) << d;
        }
        m & mask
    }

    /// Devices of `mask` whose `bank` is open with any row.
    pub fn open_any(&self, rank: u8, bank: u8, mask: u8) -> u8 {
        let rows = &self.rows[self.row_idx(rank, bank)];
        let mut m = 0;
        for (d, &r) in rows.iter().enumerate() {
            m |= u8::from(r != CLOSED) << d;
        }
        m & mask
    }

    /// True when every bank of every device in the rank is closed.
    pub fn rank_closed(&self, rank: u8) -> bool {
        (0..self.geometry.devices).all(|d| (0..self.geometry.banks as u8).all(|b| self.open_row(rank, d, b).is_none()))
    }

    pub fn check(&self, cmd: &DramCommand) -> std::result::Result<(), Blocked> {
        let t = &self.timing;
        let now = cmd.time;
        let mut c = Check::new();
        if let Some(last) = self.last_cmd {
            c.need(now, last + 1, "command bus");
        }
        if cmd.mask == 0 || cmd.mask & !self.geometry.all_devices() != 0 {
            c.state("device mask");
            return c.done();
        }
        if usize::from(cmd.rank) >= self.geometry.ranks || usize::from(cmd.bank) >= self.geometry.banks {
            c.state("address");
            return c.done();
        }
        let ref_until = self.ref_until[usize::from(cmd.rank)];
        match cmd.kind {
            CmdKind::Act => {
                for d in Self::mask_devs(cmd.mask) {
                    let b = &self.banks[self.bank_idx(cmd.rank, d, cmd.bank)];
                    if b.open.is_some() {
                        c.state("row state");
                    }
                    if let Some(a) = b.act_at {
                        c.need(now, a + t.trc, "tRC");
                    }
                    c.need(now, b.idle_at, "tRP");
                    c.need(now, ref_until, "tRFC");
                    let dv = &self.devs[self.dev_idx(cmd.rank, d)];
                    if let Some(a) = dv.last_act {
                        c.need(now, a + t.trrd, "tRRD");
                    }
                    if let Some(oldest) = dv.acts[dv.next] {
                        c.need(now, oldest + t.tfaw, "tFAW");
                    }
                }
            }
            k if k.is_cas() => {
                let read = k.is_read();
                let start = now + if read { t.cl } else { t.tcwl };
                for d in Self::mask_devs(cmd.mask) {
                    let b = &self.banks[self.bank_idx(cmd.rank, d, cmd.bank)];
                    if b.open != Some(cmd.row) {
                        c.state("row state");
                    }
                    c.need(now, b.cas_ok, "tRCD");
                    let dv = &self.devs[self.dev_idx(cmd.rank, d)];
                    if let Some(l) = dv.last_cas {
                        c.need(now, l + t.tccd, "tCCD");
                    }
                    if read {
                        if let Some(w) = dv.wr_end {
                            c.need(now, w + t.twtr, "tWTR");
                        }
                    }
                    let lane = &self.lanes[d];
                    let gap = match lane.last {
                        None => 0,
                        Some((r, was_write)) => {
                            let mut g = if r != cmd.rank { t.trtrs } else { 0 };
                            if !was_write && !read {
                                g = g.max(t.trtw_gap);
                            }
                            g
                        }
                    };
                    let free = lane.busy_until + gap;
                    if start < free {
                        c.need(now, now + (free - start), "data bus");
                    }
                }
            }
            CmdKind::Pre => {
                for d in Self::mask_devs(cmd.mask) {
                    let b = &self.banks[self.bank_idx(cmd.rank, d, cmd.bank)];
                    if b.open.is_none() {
                        c.state("row state");
                    }
                    c.need(now, b.ras_ok, "tRAS");
                    c.need(now, b.rtp_ok, "tRTP");
                    c.need(now, b.wr_ok, "tWR");
                }
            }
            CmdKind::Ref => {
                if cmd.mask != self.geometry.all_devices() {
                    c.state("device mask");
                }
                for d in 0..self.geometry.devices {
                    for bank in 0..self.geometry.banks as u8 {
                        let b = &self.banks[self.bank_idx(cmd.rank, d, bank)];
                        if b.open.is_some() {
                            c.state("row state");
                        }
                        c.need(now, b.idle_at, "tRP");
                    }
                }
                c.need(now, ref_until, "tRFC");
            }
            _ => unreachable!(),
        }
        c.done()
    }

    fn row_idx(&self, rank: u8, bank: u8) -> usize {
        usize::from(rank) * self.geometry.banks + usize::from(bank)
    }

    fn close(&mut self, idx: usize, point: u64) {
        let t = self.timing;
        let g = self.geometry;
        self.rows[idx / (g.devices * g.banks) * g.banks + idx % g.banks][idx / g.banks % g.devices] = CLOSED;
        let b = &mut self.banks[idx];
        b.open = None;
        b.idle_at = point + t.trp;
    }

    /// Applies `cmd`; the caller must have checked it.
    pub fn apply(&mut self, cmd: &DramCommand) {
        debug_assert_eq!(self.check(cmd), Ok(()), "{cmd}");
        let t = self.timing;
        let now = cmd.time;
        self.last_cmd = Some(now);
        match cmd.kind {
            CmdKind::Act => {
                for d in Self::mask_devs(cmd.mask) {
                    let i = self.bank_idx(cmd.rank, d, cmd.bank);
                    let ri = self.row_idx(cmd.rank, cmd.bank);
                    self.rows[ri][d] = cmd.row;
                    let b = &mut self.banks[i];
                    b.open = Some(cmd.row);
                    b.act_at = Some(now);
                    b.cas_ok = now + t.trcd;
                    b.ras_ok = now + t.tras;
                    b.rtp_ok = 0;
                    b.wr_ok = 0;
                    let di = self.dev_idx(cmd.rank, d);
                    let dv = &mut self.devs[di];
                    dv.acts[dv.next] = Some(now);
                    dv.next = (dv.next + 1) % dv.acts.len();
                    dv.last_act = Some(now);
                }
            }
            k if k.is_cas() => {
                let read = k.is_read();
                let end = now + if read { t.cl } else { t.tcwl } + t.tburst;
                for d in Self::mask_devs(cmd.mask) {
                    let i = self.bank_idx(cmd.rank, d, cmd.bank);
                    let b = &mut self.banks[i];
                    if read {
                        b.rtp_ok = b.rtp_ok.max(now + t.trtp);
                    } else {
                        b.wr_ok = b.wr_ok.max(end + t.twr);
                    }
                    let point = b.ras_ok.max(b.rtp_ok).max(b.wr_ok).max(now);
                    let di = self.dev_idx(cmd.rank, d);
                    let dv = &mut self.devs[di];
                    dv.last_cas = Some(now);
                    if !read {
                        dv.wr_end = Some(end);
                    }
                    self.lanes[d] = LaneSt { busy_until: end, last: Some((cmd.rank, !read)) };
                    if k.auto_precharge() {
                        self.close(i, point);
                    }
                }
            }
            CmdKind::Pre => {
                for d in Self::mask_devs(cmd.mask) {
                    let i = self.bank_idx(cmd.rank, d, cmd.bank);
                    self.close(i, now);
                }
            }
            CmdKind::Ref => {
                self.ref_until[usize::from(cmd.rank)] = now + t.trfc;
            }
            _ => unreachable!(),
        }
    }

    /// Cycle at which read data of a CAS issued at `time` ends.
    pub fn data_end(&self, kind: CmdKind, time: u64) -> u64 {
        time + if kind.is_read() { self.timing.cl } else { self.timing.tcwl } + self.timing.tburst
    }
}
