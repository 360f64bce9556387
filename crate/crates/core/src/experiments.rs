//! Trace construction and the standard experiment drivers.

use std::sync::Arc;
use std::thread;

use crate::config::{Mode, SimConfig};
use crate::dram::DramCommand;
use crate::stats::RunReport;
use crate::system::System;
use crate::trace::{self, TraceRecord, WorkloadProfile};
use crate::{Error, Result};

/// Seed for core `i` derived from the run seed.
pub fn core_seed(seed: u64, core: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(core as u64 + 1)
}

/// Builds one trace per core, from `trace_files` when given and otherwise
/// from the configured workload preset. Each synthetic core gets its own
/// slice of the address space.
pub fn build_traces(cfg: &SimConfig) -> Result<Vec<Arc<[TraceRecord]>>> {
    let mut traces: Vec<Vec<TraceRecord>> = if cfg.trace_files.is_empty() {
        let profile = WorkloadProfile::preset(&cfg.workload)
            .ok_or_else(|| Error::InvalidProfile(format!("unknown workload {:?}", cfg.workload)))?;
        (0..cfg.cores)
            .map(|i| {
                let base = i as u64 * profile.footprint;
                trace::gen_for_thread(&profile, cfg.records_per_core, core_seed(cfg.seed, i), i as u8, base)
            })
            .collect::<Result<_>>()?
    } else if cfg.trace_files.len() == cfg.cores {
        cfg.trace_files.iter().map(trace::load_trace).collect::<Result<_>>()?
    } else if cfg.trace_files.len() == 1 {
        let all = trace::load_trace(&cfg.trace_files[0])?;
        let mut per = vec![Vec::new(); cfg.cores];
        for r in all {
            per[usize::from(r.tid) % cfg.cores].push(r);
        }
        per
    } else {
        return Err(Error::Config(format!(
            "{} trace files for {} cores; give one per core or a single file",
            cfg.trace_files.len(),
            cfg.cores
        )));
    };
    if cfg.merge.enabled {
        for t in &mut traces {
            *t = trace::merge_trunks(t, cfg.merge.window, cfg.merge.read_cap, cfg.merge.write_cap);
        }
    }
    Ok(traces.into_iter().map(Arc::from).collect())
}

/// Simulates `cfg` on prepared traces.
pub fn run_traces(cfg: &SimConfig, traces: &[Arc<[TraceRecord]>]) -> Result<(RunReport, Vec<DramCommand>)> {
    System::new(cfg, traces)?.run()
}

/// Builds traces and simulates `cfg`.
pub fn run(cfg: &SimConfig) -> Result<RunReport> {
    let traces = build_traces(cfg)?;
    Ok(run_traces(cfg, &traces)?.0)
}

fn run_all(cfgs: Vec<SimConfig>, traces: &[Arc<[TraceRecord]>]) -> Result<Vec<RunReport>> {
    thread::scope(|s| {
        let handles: Vec<_> = cfgs.iter().map(|c| s.spawn(move || run_traces(c, traces).map(|r| r.0))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    })
}

/// Runs `cfg` in each of `modes` on the same traces. Reports are normalized
/// to a DDR run, which is added at the front if `modes` lacks it.
pub fn compare_modes(cfg: &SimConfig, modes: &[Mode]) -> Result<Vec<RunReport>> {
    let traces = build_traces(cfg)?;
    let mut list: Vec<Mode> = modes.to_vec();
    if !list.contains(&Mode::Ddr) {
        list.insert(0, Mode::Ddr);
    }
    let cfgs = list
        .iter()
        .map(|&m| {
            let mut c = cfg.clone();
            c.mode = m;
            if m != Mode::MiMul {
                c.compression = crate::config::Compression::None;
            }
            c
        })
        .collect();
    let mut reports = run_all(cfgs, &traces)?;
    let base = reports[list.iter().position(|&m| m == Mode::Ddr).expect("present")].clone();
    for r in &mut reports {
        r.normalize_to(&base);
    }
    Ok(reports)
}

/// Sweeps the scheduler latency from `from` to `to` cycles in steps of
/// `step` for `cfg.mode`. The first report is the DDR baseline.
pub fn sweep_sched_latency(cfg: &SimConfig, from: u64, to: u64, step: u64) -> Result<Vec<RunReport>> {
    if step == 0 || from > to {
        return Err(Error::Config(format!("bad sweep range {from}..={to} step {step}")));
    }
    if !cfg.mode.uses_link() {
        return Err(Error::Config("sweeping scheduler latency needs a link mode".into()));
    }
    let traces = build_traces(cfg)?;
    let mut base = cfg.clone();
    base.mode = Mode::Ddr;
    base.compression = crate::config::Compression::None;
    let mut cfgs = vec![base];
    let mut lat = from;
    while lat <= to {
        let mut c = cfg.clone();
        c.sched_latency_cycles = lat;
        cfgs.push(c);
        lat += step;
    }
    let mut reports = run_all(cfgs, &traces)?;
    let base = reports[0].clone();
    for r in &mut reports {
        r.normalize_to(&base);
    }
    Ok(reports)
}
