#![allow(dead_code)]

use mims_core::dram::frfcfs::{Drain, Engine, Job};
use mims_core::dram::{oracle, ChannelState, CmdKind, DramCommand, Geometry, TimingParams};
use rand::seq::SliceRandom;
use rand::Rng;

pub const GEO: Geometry = Geometry { ranks: 2, devices: 8, banks: 8 };

pub fn cmd(kind: CmdKind, rank: u8, mask: u8, bank: u8, row: u32, col: u16) -> DramCommand {
    DramCommand { time: 0, ch: 0, rank, mask, bank, row, col, kind }
}

/// Issues each command at the earliest legal cycle at or after `not_before`,
/// using the engine-side state model.
pub struct Builder {
    state: ChannelState,
    cmds: Vec<DramCommand>,
}

impl Builder {
    pub fn new(timing: TimingParams) -> Self {
        Builder { state: ChannelState::new(timing, GEO), cmds: Vec::new() }
    }

    pub fn at(&mut self, not_before: u64, mut c: DramCommand) -> &mut Self {
        let start = self.cmds.last().map_or(not_before, |p| not_before.max(p.time + 1));
        c.time = start;
        while let Err(b) = self.state.check(&c) {
            c.time = b.earliest.unwrap_or_else(|| panic!("{c} can never issue: {}", b.constraint)).max(c.time + 1);
        }
        self.state.apply(&c);
        self.cmds.push(c);
        self
    }

    pub fn asap(&mut self, c: DramCommand) -> &mut Self {
        self.at(0, c)
    }

    /// Validates the built sequence, then moves the last command one cycle
    /// earlier and returns the constraint the oracle reports.
    pub fn mutate_last(&self, timing: &TimingParams) -> &'static str {
        oracle::validate(&self.cmds, timing, &GEO).expect("built sequence is legal");
        let mut m = self.cmds.clone();
        let last = m.last_mut().unwrap();
        assert!(self.cmds.len() < 2 || last.time - 1 > self.cmds[self.cmds.len() - 2].time);
        last.time -= 1;
        oracle::validate(&m, timing, &GEO).expect_err("mutation must be caught").constraint
    }
}

pub struct Mutation {
    pub name: &'static str,
    pub expect: &'static str,
    pub timing: TimingParams,
    pub build: fn(&mut Builder),
}

impl Mutation {
    pub fn caught(&self) -> &'static str {
        let mut b = Builder::new(self.timing);
        (self.build)(&mut b);
        b.mutate_last(&self.timing)
    }
}

/// Single-constraint mutations: each builds a legal sequence whose last
/// command sits exactly on one timing bound.
pub fn mutations() -> Vec<Mutation> {
    use CmdKind::*;
    let d = TimingParams::default();
    vec![
        Mutation {
            name: "trcd",
            expect: "tRCD",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).asap(cmd(Rd, 0, 1, 0, 5, 0));
            },
        },
        Mutation {
            name: "trp",
            expect: "tRP",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).at(30, cmd(Pre, 0, 1, 0, 0, 0)).asap(cmd(Act, 0, 1, 0, 6, 0));
            },
        },
        Mutation {
            name: "trc",
            expect: "tRC",
            timing: TimingParams { trc: 40, ..d },
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).asap(cmd(Pre, 0, 1, 0, 0, 0)).asap(cmd(Act, 0, 1, 0, 6, 0));
            },
        },
        Mutation {
            name: "trrd",
            expect: "tRRD",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).asap(cmd(Act, 0, 1, 1, 5, 0));
            },
        },
        Mutation {
            name: "tfaw",
            expect: "tFAW",
            timing: d,
            build: |b| {
                for bank in 0..5 {
                    b.asap(cmd(Act, 0, 1, bank, 5, 0));
                }
            },
        },
        Mutation {
            name: "tccd",
            expect: "tCCD",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).asap(cmd(Rd, 0, 1, 0, 5, 0)).asap(cmd(Rd, 0, 1, 0, 5, 1));
            },
        },
        Mutation {
            name: "twtr",
            expect: "tWTR",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).asap(cmd(Wr, 0, 1, 0, 5, 0)).asap(cmd(Rd, 0, 1, 0, 5, 1));
            },
        },
        Mutation {
            name: "tras",
            expect: "tRAS",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).asap(cmd(Pre, 0, 1, 0, 0, 0));
            },
        },
        Mutation {
            name: "trtp",
            expect: "tRTP",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).at(22, cmd(Rd, 0, 1, 0, 5, 0)).asap(cmd(Pre, 0, 1, 0, 0, 0));
            },
        },
        Mutation {
            name: "twr",
            expect: "tWR",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).asap(cmd(Wr, 0, 1, 0, 5, 0)).asap(cmd(Pre, 0, 1, 0, 0, 0));
            },
        },
        Mutation {
            name: "trfc",
            expect: "tRFC",
            timing: d,
            build: |b| {
                b.asap(cmd(Ref, 0, 0xff, 0, 0, 0)).asap(cmd(Act, 0, 1, 0, 5, 0));
            },
        },
        Mutation {
            name: "data_bus_rank_switch",
            expect: "data bus",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0))
                    .asap(cmd(Act, 1, 1, 0, 5, 0))
                    .asap(cmd(Rd, 0, 1, 0, 5, 0))
                    .asap(cmd(Rd, 1, 1, 0, 5, 0));
            },
        },
        Mutation {
            name: "auto_precharge",
            expect: "tRP",
            timing: d,
            build: |b| {
                b.asap(cmd(Act, 0, 1, 0, 5, 0)).asap(cmd(Wra, 0, 1, 0, 5, 0)).asap(cmd(Act, 0, 1, 0, 6, 0));
            },
        },
    ]
}

/// Arrival-ordered reference: with one bank and every request on its own
/// row, no request can be a row hit, so the only legal FRFCFS order is FCFS.
pub fn brute_force_order(arrivals: &[(u64, u64)]) -> Vec<u64> {
    let mut v = arrivals.to_vec();
    v.sort();
    v.into_iter().map(|(_, token)| token).collect()
}

pub struct FcfsInstance {
    pub served: Vec<u64>,
    pub expected: Vec<u64>,
    pub log: Vec<DramCommand>,
}

/// Feeds `n` distinct-row requests with random arrivals into a one-bank
/// engine and records completion order.
pub fn fcfs_instance(rng: &mut impl Rng, n: u64) -> FcfsInstance {
    let geo = Geometry { ranks: 1, devices: 1, banks: 1 };
    let t = TimingParams::default();
    let mut rows: Vec<u32> = (0..1000).collect();
    rows.shuffle(rng);
    let is_write = rng.gen_bool(0.5);
    let mut e = Engine::new(0, t, geo, Drain::new(48, 16));
    e.enable_log();
    let mut arrivals = Vec::new();
    let mut at = 0u64;
    for token in 0..n {
        at += rng.gen_range(0..30);
        arrivals.push((at, token));
    }
    let mut pending = arrivals.clone();
    pending.reverse();
    let mut served = Vec::new();
    let mut now = 0;
    while (served.len() as u64) < n {
        while pending.last().is_some_and(|&(a, _)| a <= now) {
            let (_, token) = pending.pop().unwrap();
            let col = rng.gen_range(0..128);
            e.push(Job::new(token, 0, 0, rows[token as usize], is_write, vec![(col, 1)]));
        }
        if let Some(ev) = e.tick(now) {
            if ev.last {
                served.push(ev.token);
            }
        }
        now += 1;
        assert!(now < 1_000_000, "engine stalled");
    }
    FcfsInstance { served, expected: brute_force_order(&arrivals), log: e.take_log() }
}
