//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any unwaived check fails.
//!
//! `MIMS_ACCEPT_RECORDS` sets the records per core for the system-level
//! criteria (default 10000).

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use mims_core::codec::{self, Format, PacketHead, PacketType, ReturnEntry, Rtmsg};
use mims_core::compress::{self, AddrCompressor, CompressConfig, Scheme, ADDR_BYTES};
use mims_core::config::{Compression, SimConfig};
use mims_core::dram::{self, oracle, DramCommand, Geometry, TimingParams};
use mims_core::experiments;
use mims_core::system::System;
use mims_core::trace::{HitLevel, TraceRecord};
use mims_core::{Mode, RunReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCHEMES: [Scheme; 3] = [Scheme::SingleBase, Scheme::MultiBaseInline, Scheme::MultiBaseOffline];

struct Check {
    what: String,
    ok: bool,
    /// Failure is reported but does not fail the run.
    waived: bool,
}

#[derive(Default)]
struct Verdict {
    checks: Vec<Check>,
}

impl Verdict {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.checks.push(Check { what: what.into(), ok, waived: false });
    }

    fn waivable(&mut self, ok: bool, what: impl Into<String>) {
        self.checks.push(Check { what: what.into(), ok, waived: true });
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    fn blocking(&self) -> bool {
        self.checks.iter().any(|c| !c.ok && !c.waived)
    }
}

fn records() -> usize {
    std::env::var("MIMS_ACCEPT_RECORDS").ok().and_then(|v| v.parse().ok()).unwrap_or(10_000)
}

fn gups(mode: Mode, records: usize) -> SimConfig {
    SimConfig { mode, workload: "gups".into(), records_per_core: records, ..Default::default() }
}

fn rand_msg(rng: &mut ChaCha8Rng, near: u64) -> Rtmsg {
    let addr = if rng.gen_bool(0.7) {
        (near + rng.gen_range(0..1u64 << 16)) & !7 & ((1 << 48) - 1)
    } else {
        rng.gen_range(0..1u64 << 45) * 8
    };
    Rtmsg { addr, gran: rng.gen_range(1..=512), tid: rng.gen(), to: rng.gen(), reqid: rng.gen() }
}

fn data(rng: &mut ChaCha8Rng, gran: u16) -> Vec<u8> {
    (0..usize::from(gran) * 8).map(|_| rng.gen()).collect()
}

fn codec_round_trip() -> Verdict {
    let mut v = Verdict::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut configs = vec![None];
    for s in SCHEMES {
        configs.push(Some(CompressConfig::coarse(s)));
        configs.push(Some(CompressConfig::fine(s)));
    }
    for cfg in configs {
        let mut tx = cfg.map(AddrCompressor::new);
        let mut rx = cfg.map(AddrCompressor::new);
        let mut bad = 0;
        let mut near = 0x1000_0000;
        for i in 0..10_000u32 {
            let n = rng.gen_range(1..=42);
            let msgs: Vec<Rtmsg> = (0..n).map(|_| rand_msg(&mut rng, near)).collect();
            near = msgs[0].addr;
            let head = PacketHead::new(rng.gen_range(0..2), PacketType::Read, n as u16);
            let enc = codec::encode_read(&head, i as u16, &msgs, tx.as_mut()).unwrap();
            match codec::decode_read(&enc.bytes, rx.as_mut()) {
                Ok((h, got)) if h.desid == head.desid && h.cnt == head.cnt && got == msgs => {}
                _ => bad += 1,
            }
        }
        let name = cfg.map_or("none".to_string(), |c| format!("{}/{}", c.scheme.name(), c.diff_bits));
        v.check(bad == 0, format!("read[{name}] {bad} bad of 10000"));
    }
    let mut bad = 0;
    for i in 0..10_000u32 {
        let entries: Vec<(Rtmsg, Vec<u8>)> = (0..rng.gen_range(1..=8))
            .map(|_| {
                let mut m = rand_msg(&mut rng, 0);
                m.gran = rng.gen_range(1..=64);
                (m, data(&mut rng, m.gran))
            })
            .collect();
        let head = PacketHead::new(1, PacketType::Write, entries.len() as u16);
        let bytes = codec::encode_write(&head, i as u16, &entries).unwrap();
        if codec::decode_write(&bytes).map(|(_, e)| e).ok() != Some(entries) {
            bad += 1;
        }
    }
    v.check(bad == 0, format!("write {bad} bad of 10000"));
    let mut bad = 0;
    for i in 0..10_000u32 {
        let first: u16 = rng.gen();
        let entries: Vec<ReturnEntry> = (0..rng.gen_range(1..=20u16))
            .map(|k| {
                let gran = rng.gen_range(1..=24);
                ReturnEntry { reqid: first.wrapping_add(k * 7), gran, data: data(&mut rng, gran) }
            })
            .collect();
        let head = PacketHead::new(0, PacketType::ReadReturn, entries.len() as u16);
        let bytes = codec::encode_return(&head, i as u16, &entries).unwrap();
        if codec::decode_return(&bytes).map(|(_, e)| e).ok() != Some(entries) {
            bad += 1;
        }
    }
    v.check(bad == 0, format!("return {bad} bad of 10000"));
    let secs = start.elapsed().as_secs_f64();
    v.check(secs < 10.0, format!("{secs:.2} s < 10 s"));
    v
}

fn compression() -> Verdict {
    let mut v = Verdict::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in SCHEMES {
        for cfg in [CompressConfig::coarse(s), CompressConfig::fine(s)] {
            let mut tx = AddrCompressor::new(cfg);
            let mut rx = AddrCompressor::new(cfg);
            let mut bad = 0;
            for _ in 0..10_000 {
                let base = rng.gen_range(0..1u64 << 40);
                let n = rng.gen_range(1..=48);
                let addrs: Vec<u64> = (0..n)
                    .map(|_| {
                        if rng.gen_bool(0.8) {
                            (base + rng.gen_range(0..1 << 14)) * 8
                        } else {
                            rng.gen_range(0..1u64 << 45) * 8
                        }
                    })
                    .collect();
                let block = tx.compress(&addrs).unwrap();
                match rx.decompress(&block, n) {
                    Ok((got, used)) if got == addrs && used == block.len() => {}
                    _ => bad += 1,
                }
            }
            let synced = tx.table() == rx.table();
            v.check(
                bad == 0 && synced,
                format!("identity {}/{}: {bad} bad, tables synced {synced}", s.name(), cfg.diff_bits),
            );
        }
    }
    let packets: Vec<Vec<u64>> = (0..200u64).map(|p| (0..32).map(|i| (p * 32 + i) * 64).collect()).collect();
    let r = |s| compress::ratio_for(CompressConfig::coarse(s), &packets).unwrap();
    let (single, inline, offline) = (r(Scheme::SingleBase), r(Scheme::MultiBaseInline), r(Scheme::MultiBaseOffline));
    v.check(
        offline >= inline && inline >= single && offline >= 3.0,
        format!("stride ratios offline {offline:.3} >= inline {inline:.3} >= single {single:.3}, offline >= 3.0"),
    );
    for s in [Scheme::MultiBaseInline, Scheme::MultiBaseOffline] {
        let mut c = AddrCompressor::new(CompressConfig::fine(s));
        let warm: Vec<u64> = (0..8u64).map(|b| (b << 30) * 8).collect();
        c.compress(&warm).unwrap();
        let hits: Vec<u64> = (0..32u64).map(|i| ((i % 8) << 33) + (i * 64)).collect();
        let block = c.compress(&hits).unwrap();
        let ratio = (hits.len() * ADDR_BYTES) as f64 / block.len() as f64;
        v.check(ratio == 1.5, format!("fine all-hit {} ratio {ratio}", s.name()));
    }
    v
}

fn run_logged(cfg: &SimConfig) -> (RunReport, Vec<DramCommand>) {
    let traces = experiments::build_traces(cfg).unwrap();
    experiments::run_traces(cfg, &traces).unwrap()
}

fn validate_channels(cfg: &SimConfig, cmds: &[DramCommand]) -> Result<usize, String> {
    let mut by_ch: BTreeMap<u8, Vec<DramCommand>> = BTreeMap::new();
    for c in cmds {
        by_ch.entry(c.ch).or_default().push(*c);
    }
    if by_ch.len() != cfg.channels {
        return Err(format!("{} of {} channels saw commands", by_ch.len(), cfg.channels));
    }
    for (ch, list) in &by_ch {
        oracle::validate(list, &cfg.timing, &cfg.geometry()).map_err(|e| format!("channel {ch}: {e}"))?;
    }
    Ok(cmds.len())
}

fn timing_oracle(n: usize) -> Verdict {
    let mut v = Verdict::default();
    for mode in Mode::ALL {
        let cfg = SimConfig { dump_commands: true, ..gups(mode, n) };
        let (_, cmds) = run_logged(&cfg);
        match validate_channels(&cfg, &cmds) {
            Ok(count) => v.check(true, format!("{mode} 16 cores: {count} commands, 0 violations")),
            Err(e) => v.check(false, format!("{mode}: {e}")),
        }
    }
    let muts = common::mutations();
    let caught: Vec<&str> = muts.iter().filter(|m| m.caught() == m.expect).map(|m| m.name).collect();
    v.check(
        caught.len() == muts.len() && muts.len() >= 10,
        format!("{} of {} mutations caught", caught.len(), muts.len()),
    );
    v
}

fn frfcfs_degeneracy() -> Verdict {
    let mut v = Verdict::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let geo = Geometry { ranks: 1, devices: 1, banks: 1 };
    let mut same = 0;
    for _ in 0..100 {
        let run = common::fcfs_instance(&mut rng, 20);
        if run.served == run.expected && oracle::validate(&run.log, &TimingParams::default(), &geo).is_ok() {
            same += 1;
        }
    }
    v.check(same == 100, format!("{same} of 100 instances served in arrival order"));
    v
}

fn mode_ordering(n: usize, reports: &[RunReport], secs: f64) -> Verdict {
    let mut v = Verdict::default();
    let get = |m: Mode| reports.iter().find(|r| r.mode == m).unwrap();
    let (ddr, bob, mi1, mul) = (get(Mode::Ddr), get(Mode::Bob), get(Mode::Mi1), get(Mode::MiMul));
    v.check(
        mul.speedup > mi1.speedup && mi1.speedup > 1.0 && 1.0 > bob.speedup,
        format!("speedup MI_MUL {:.3} > MI_1 {:.3} > 1.0 > BOB {:.3}", mul.speedup, mi1.speedup, bob.speedup),
    );
    v.check(
        mul.bw_utilization > ddr.bw_utilization,
        format!("utilization MI_MUL {:.3} > DDR {:.3}", mul.bw_utilization, ddr.bw_utilization),
    );
    let full = secs * 1_000_000.0 / n as f64;
    v.waivable(
        full <= 300.0,
        format!("runtime {secs:.1} s at {n}/core, {full:.0} s extrapolated to 1M/core (budget 300 s)"),
    );
    v
}

fn latency_sweep(n: usize) -> Verdict {
    let mut v = Verdict::default();
    let reports = experiments::sweep_sched_latency(&gups(Mode::MiMul, n), 0, 200, 20).unwrap();
    let points = &reports[1..];
    v.check(points.len() == 11, format!("{} points", points.len()));
    let sp: Vec<f64> = points.iter().map(|r| r.speedup).collect();
    let rises: Vec<String> = sp
        .windows(2)
        .zip(points)
        .filter(|(w, _)| w[1] > w[0])
        .map(|(w, r)| format!("{}->{}: {:.4}->{:.4}", r.sched_latency_cycles, r.sched_latency_cycles + 20, w[0], w[1]))
        .collect();
    v.check(rises.is_empty(), format!("nonincreasing {:.3}..{:.3} {}", sp[0], sp[10], rises.join(" ")));
    let drop = 1.0 - sp[10] / sp[0];
    v.waivable(
        drop >= 0.20,
        format!("speedup(200) {:.3} vs speedup(0) {:.3}: {:.1}% drop (target >= 20%)", sp[10], sp[0], drop * 100.0),
    );
    v
}

fn units(t: &[TraceRecord]) -> Vec<(bool, u64)> {
    let mut u: Vec<(bool, u64)> =
        t.iter().flat_map(|r| (0..u64::from(r.gran)).map(move |i| (r.is_write, r.addr + i * 8))).collect();
    u.sort_unstable();
    u
}

fn trunk_merging(n: usize) -> Verdict {
    let mut v = Verdict::default();
    let plain = SimConfig { mode: Mode::MiMul, workload: "stream".into(), records_per_core: n, ..Default::default() };
    let mut merged = plain.clone();
    merged.merge.enabled = true;
    let before = experiments::build_traces(&plain).unwrap();
    let after = experiments::build_traces(&merged).unwrap();
    let total: usize = after.iter().map(|t| t.len()).sum();
    let big: usize = after.iter().flat_map(|t| t.iter()).filter(|r| r.gran > 8).count();
    let share = big as f64 / total as f64;
    v.check(share >= 0.5, format!("{:.1}% of merged requests have gran > 8", share * 100.0));
    let conserved = before.iter().zip(&after).all(|(b, a)| units(b) == units(a));
    v.check(conserved, "byte conservation per core");
    let (rp, _) = experiments::run_traces(&plain, &before).unwrap();
    let (rm, _) = experiments::run_traces(&merged, &after).unwrap();
    v.check(
        rm.runtime_ps <= rp.runtime_ps,
        format!(
            "MI_MUL runtime merged {:.1} us <= unmerged {:.1} us ({:.2}x)",
            rm.runtime_ps as f64 / 1e6,
            rp.runtime_ps as f64 / 1e6,
            rp.runtime_ps as f64 / rm.runtime_ps as f64
        ),
    );
    v
}

/// One core, requests spaced far enough apart that none overlap.
fn sparse_trace(gran: u16) -> Vec<Arc<[TraceRecord]>> {
    let recs: Vec<TraceRecord> = (0..400u64)
        .map(|i| TraceRecord {
            gap: 4000,
            addr: (i * 7919 % 4096) * (1 << 20) + (i % 16) * 64,
            gran,
            is_write: i % 3 == 0,
            hit_level: HitLevel::Mem,
            tid: 0,
        })
        .collect();
    vec![Arc::from(recs)]
}

fn power(reports: &[RunReport]) -> Verdict {
    let mut v = Verdict::default();
    let run = |mode, gran| {
        let cfg = SimConfig { mode, cores: 1, ..Default::default() };
        System::new(&cfg, &sparse_trace(gran)).unwrap().run().unwrap().0
    };
    let (ddr8, mims8) = (run(Mode::Ddr, 8), run(Mode::MiMul, 8));
    let coarse = mims8.power.act_pre_j / ddr8.power.act_pre_j;
    v.check((coarse - 1.0).abs() < 1e-12, format!("coarse act_pre MIMS/DDR = {coarse:.6}"));
    let (ddr1, mims1) = (run(Mode::Ddr, 1), run(Mode::MiMul, 1));
    let fine = mims1.power.act_pre_j / ddr1.power.act_pre_j;
    let touch = mims1.dram.act_devices as f64 / ddr1.dram.act_devices as f64;
    v.check(
        (fine - 0.125).abs() < 1e-12 && (touch - 0.125).abs() < 1e-12,
        format!("gran-1 act_pre MIMS/DDR = {fine:.6}, devices touched {touch:.6}"),
    );
    let get = |m: Mode| reports.iter().find(|r| r.mode == m).unwrap();
    let (ddr, mul) = (get(Mode::Ddr), get(Mode::MiMul));
    v.check(
        mul.power.edp < ddr.power.edp,
        format!("EDP MI_MUL {:.3e} < DDR {:.3e} (normalized {:.3})", mul.power.edp, ddr.power.edp, mul.normalized_edp),
    );
    v
}

fn packet_overhead() -> Verdict {
    let mut v = Verdict::default();
    for (pt, gran) in [(PacketType::Read, 1u16), (PacketType::Write, 1), (PacketType::ReadReturn, 1)] {
        let shares: Vec<f64> =
            (1..=64).map(|n| codec::packet_bytes(Format::Message, pt, &vec![gran; n], None).overhead_share()).collect();
        let decreasing = shares.windows(2).all(|w| w[1] < w[0]);
        let at32 = shares[31];
        v.check(
            decreasing && at32 <= 0.05,
            format!("{pt:?}: strictly decreasing {decreasing}, {:.2}% at 32", at32 * 100.0),
        );
    }
    v
}

fn determinism(n: usize) -> Verdict {
    let mut v = Verdict::default();
    let mut cfgs: Vec<SimConfig> =
        Mode::ALL.iter().map(|&m| SimConfig { dump_commands: true, ..gups(m, n / 4) }).collect();
    cfgs.push(SimConfig { compression: Compression::MultiOffline, workload: "stream".into(), ..cfgs[3].clone() });
    for cfg in cfgs {
        let (a, ca) = run_logged(&cfg);
        let (b, cb) = run_logged(&cfg);
        let same = serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap()
            && dram::format_command_trace(&ca) == dram::format_command_trace(&cb);
        v.check(same, format!("{} {}: crc {:08x}", cfg.mode, cfg.workload, a.command_crc));
    }
    v
}

fn main() -> ExitCode {
    let n = records();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance at {n} records per core");
    let mut blocking = false;
    let mut report = |id: usize, title: &str, v: Verdict| {
        let status = if v.passed() {
            "PASS"
        } else if v.blocking() {
            "FAIL"
        } else {
            "FAIL (waived)"
        };
        let _ = writeln!(out, "criterion {id:>2} {title}: {status}");
        for c in &v.checks {
            let mark = if c.ok {
                "ok"
            } else if c.waived {
                "miss"
            } else {
                "FAIL"
            };
            let _ = writeln!(out, "    [{mark}] {}", c.what);
        }
        let _ = out.flush();
        blocking |= v.blocking();
    };
    report(1, "codec round trip", codec_round_trip());
    report(2, "compression", compression());
    report(3, "timing oracle", timing_oracle(n / 2));
    report(4, "FRFCFS degeneracy", frfcfs_degeneracy());
    let start = Instant::now();
    let compared = experiments::compare_modes(&gups(Mode::Ddr, n), &Mode::ALL).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(5, "mode ordering", mode_ordering(n, &compared, secs));
    report(6, "latency sweep", latency_sweep(n));
    report(7, "trunk merging", trunk_merging(n));
    report(8, "power proportionality", power(&compared));
    report(9, "packet overhead", packet_overhead());
    report(10, "determinism", determinism(n));
    if blocking {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
