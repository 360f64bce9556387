//! Run statistics and report formatting.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{Compression, Mode};
use crate::controller::{LatencySegments, PacketStats};
use crate::dram::frfcfs::Counters;
use crate::power::PowerBreakdown;
use crate::{Error, Ps, Result, DRAM_TCK_PS};

/// Peak data-bus bytes per picosecond of one channel: 64 bytes per burst.
pub fn channel_peak_bytes_per_ps(tburst: u64) -> f64 {
    64.0 / (tburst * DRAM_TCK_PS) as f64
}

/// Useful bytes over what the channels' data buses could carry in `runtime`.
pub fn effective_bw_utilization(useful_bytes: u64, runtime_ps: Ps, channels: usize, tburst: u64) -> f64 {
    if runtime_ps == 0 {
        return 0.0;
    }
    useful_bytes as f64 / (runtime_ps as f64 * channels as f64 * channel_peak_bytes_per_ps(tburst))
}

/// Running sums of latency segments.
#[derive(Clone, Debug, Default)]
pub struct LatencyAcc {
    pub count: u64,
    sums: [u128; 6],
    pub max_queuing_mc: Ps,
}

impl LatencyAcc {
    pub fn add(&mut self, s: &LatencySegments) {
        self.count += 1;
        for (acc, v) in self.sums.iter_mut().zip(s.as_array()) {
            *acc += u128::from(v);
        }
        self.max_queuing_mc = self.max_queuing_mc.max(s.queuing_mc);
    }

    pub fn finish(&self) -> LatencyBreakdown {
        let mean = |i: usize| {
            if self.count == 0 {
                0.0
            } else {
                self.sums[i] as f64 / self.count as f64 / 1000.0
            }
        };
        let b = LatencyBreakdown {
            count: self.count,
            queuing_mc_ns: mean(0),
            serialization_ns: mean(1),
            sched_fixed_ns: mean(2),
            queuing_sched_ns: mean(3),
            dram_core_ns: mean(4),
            return_ns: mean(5),
            total_ns: 0.0,
            max_queuing_mc_ns: self.max_queuing_mc as f64 / 1000.0,
        };
        LatencyBreakdown { total_ns: b.segments().iter().sum(), ..b }
    }
}

/// Mean per-request latency segments, nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub count: u64,
    pub queuing_mc_ns: f64,
    pub serialization_ns: f64,
    pub sched_fixed_ns: f64,
    pub queuing_sched_ns: f64,
    pub dram_core_ns: f64,
    pub return_ns: f64,
    pub total_ns: f64,
    pub max_queuing_mc_ns: f64,
}

impl LatencyBreakdown {
    pub fn segments(&self) -> [f64; 6] {
        [
            self.queuing_mc_ns,
            self.serialization_ns,
            self.sched_fixed_ns,
            self.queuing_sched_ns,
            self.dram_core_ns,
            self.return_ns,
        ]
    }

    /// Queuing in the controller and in the buffer scheduler.
    pub fn queuing_ns(&self) -> f64 {
        self.queuing_mc_ns + self.queuing_sched_ns
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PacketSummary {
    pub packets: u64,
    pub requests: u64,
    pub bytes: u64,
    pub requests_per_packet: f64,
    pub overhead_share: f64,
    pub address_share: f64,
    pub meta_share: f64,
    pub data_share: f64,
}

impl From<&PacketStats> for PacketSummary {
    fn from(p: &PacketStats) -> Self {
        let c = &p.composition;
        let total = c.total();
        let share = |v: u64| if total == 0 { 0.0 } else { v as f64 / total as f64 };
        PacketSummary {
            packets: p.packets,
            requests: p.requests,
            bytes: total,
            requests_per_packet: if p.packets == 0 { 0.0 } else { p.requests as f64 / p.packets as f64 },
            overhead_share: share(c.overhead),
            address_share: share(c.address),
            meta_share: share(c.meta),
            data_share: share(c.data),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub workload: String,
    pub mode: Mode,
    pub seed: u64,
    pub cores: usize,
    pub sched_latency_cycles: u64,
    pub compression: Compression,
    pub merging: bool,
    pub cycles: u64,
    pub runtime_ps: Ps,
    pub instructions: u64,
    /// Cycles of the DDR baseline over this run's cycles; 1.0 until compared.
    pub speedup: f64,
    pub mem_requests: u64,
    pub segments: u64,
    pub useful_bytes: u64,
    pub bw_utilization: f64,
    pub read_latency: LatencyBreakdown,
    pub write_latency: LatencyBreakdown,
    pub read_packets: PacketSummary,
    pub write_packets: PacketSummary,
    pub return_packets: PacketSummary,
    pub compression_ratio: Option<f64>,
    pub dram: Counters,
    pub power: PowerBreakdown,
    /// EDP relative to the DDR baseline; 1.0 until compared.
    pub normalized_edp: f64,
    pub command_count: u64,
    pub command_crc: u32,
}

impl RunReport {
    /// Fills the baseline-relative fields from a DDR run of the same trace.
    pub fn normalize_to(&mut self, base: &RunReport) {
        self.speedup = base.cycles as f64 / self.cycles.max(1) as f64;
        self.normalized_edp = if base.power.edp > 0.0 { self.power.edp / base.power.edp } else { 1.0 };
    }

    /// Downstream requests per packet across reads and writes.
    pub fn requests_per_packet(&self) -> f64 {
        let p = self.read_packets.packets + self.write_packets.packets;
        if p == 0 {
            0.0
        } else {
            (self.read_packets.requests + self.write_packets.requests) as f64 / p as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" | "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            _ => Err(Error::Config(format!("unknown report format `{s}` (text, csv, json-lines)"))),
        }
    }
}

pub const CSV_HEADER: &str = "workload,mode,sched_latency,compression,merging,seed,cores,cycles,runtime_ns,\
instructions,speedup,mem_requests,useful_bytes,bw_utilization,read_lat_ns,read_q_mc_ns,read_ser_ns,\
read_sched_ns,read_q_sched_ns,read_core_ns,read_ret_ns,write_lat_ns,reqs_per_packet,read_overhead_share,\
compression_ratio,act_devices,bursts,refreshes,background_j,refresh_j,act_pre_j,burst_j,controller_j,\
energy_j,edp,normalized_edp";

fn compression_name(c: Compression) -> &'static str {
    match c {
        Compression::None => "none",
        Compression::Single => "single",
        Compression::MultiInline => "multi_inline",
        Compression::MultiOffline => "multi_offline",
    }
}

pub fn csv_row(r: &RunReport) -> String {
    let p = &r.power;
    let l = &r.read_latency;
    format!(
        "{},{},{},{},{},{},{},{},{:.3},{},{:.6},{},{},{:.6},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.4},{:.6},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6e},{:.6}",
        r.workload,
        r.mode,
        r.sched_latency_cycles,
        compression_name(r.compression),
        r.merging,
        r.seed,
        r.cores,
        r.cycles,
        r.runtime_ps as f64 / 1000.0,
        r.instructions,
        r.speedup,
        r.mem_requests,
        r.useful_bytes,
        r.bw_utilization,
        l.total_ns,
        l.queuing_mc_ns,
        l.serialization_ns,
        l.sched_fixed_ns,
        l.queuing_sched_ns,
        l.dram_core_ns,
        l.return_ns,
        r.write_latency.total_ns,
        r.requests_per_packet(),
        r.read_packets.overhead_share,
        r.compression_ratio.map(|c| format!("{c:.4}")).unwrap_or_default(),
        r.dram.act_devices,
        r.dram.read_bursts + r.dram.write_bursts,
        r.dram.refreshes,
        p.background_j,
        p.refresh_j,
        p.act_pre_j,
        p.burst_j,
        p.controller_j,
        p.total_j,
        p.edp,
        r.normalized_edp,
    )
}

pub fn text(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "workload {}  mode {}  seed {}  cores {}", r.workload, r.mode, r.seed, r.cores);
    let _ = writeln!(
        s,
        "sched latency {} cycles  compression {}  merging {}",
        r.sched_latency_cycles,
        compression_name(r.compression),
        r.merging
    );
    let _ = writeln!(
        s,
        "cycles {}  runtime {:.3} us  instructions {}",
        r.cycles,
        r.runtime_ps as f64 / 1e6,
        r.instructions
    );
    let _ = writeln!(s, "speedup vs DDR {:.4}  normalized EDP {:.4}", r.speedup, r.normalized_edp);
    let _ = writeln!(
        s,
        "requests {}  segments {}  useful bytes {}  bandwidth utilization {:.4}",
        r.mem_requests, r.segments, r.useful_bytes, r.bw_utilization
    );
    for (name, l) in [("read", &r.read_latency), ("write", &r.write_latency)] {
        let _ = writeln!(
            s,
            "{name} latency ns: total {:.2} = queuing_mc {:.2} + serialization {:.2} + sched_fixed {:.2} + queuing_sched {:.2} + dram_core {:.2} + return {:.2}  (n={}, max queuing_mc {:.2})",
            l.total_ns,
            l.queuing_mc_ns,
            l.serialization_ns,
            l.sched_fixed_ns,
            l.queuing_sched_ns,
            l.dram_core_ns,
            l.return_ns,
            l.count,
            l.max_queuing_mc_ns
        );
    }
    for (name, p) in [("read", &r.read_packets), ("write", &r.write_packets), ("return", &r.return_packets)] {
        let _ = writeln!(
            s,
            "{name} packets {}  requests/packet {:.2}  shares overhead {:.4} address {:.4} meta {:.4} data {:.4}",
            p.packets, p.requests_per_packet, p.overhead_share, p.address_share, p.meta_share, p.data_share
        );
    }
    if let Some(c) = r.compression_ratio {
        let _ = writeln!(s, "address compression ratio {c:.4}");
    }
    let d = &r.dram;
    let _ = writeln!(
        s,
        "dram commands {}  device activations {}  read bursts {}  write bursts {}  refreshes {}",
        d.commands, d.act_devices, d.read_bursts, d.write_bursts, d.refreshes
    );
    let p = &r.power;
    let _ = write!(s, "energy J:");
    for (name, j) in p.components() {
        let _ = write!(s, " {name} {j:.6} ({:.3} W)", p.avg_watts(j));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "total {:.6} J  average {:.3} W  EDP {:.6e} J*s", p.total_j, p.avg_w, p.edp);
    s
}

pub fn emit_report(reports: &[RunReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => reports.iter().map(text).collect::<Vec<_>>().join("\n"),
        ReportFormat::Csv => {
            let mut s = String::from(CSV_HEADER);
            s.push('\n');
            for r in reports {
                s.push_str(&csv_row(r));
                s.push('\n');
            }
            s
        }
        ReportFormat::JsonLines => {
            let mut s = String::new();
            for r in reports {
                s.push_str(&serde_json::to_string(r).expect("report serializes"));
                s.push('\n');
            }
            s
        }
    }
}
