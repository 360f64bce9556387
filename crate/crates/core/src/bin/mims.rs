use std::fs;
use std::io::{self, BufRead, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mims_core::codec;
use mims_core::compress::{self, AddrCompressor, CompressConfig, Scheme};
use mims_core::config::Compression;
use mims_core::dram::{self, oracle};
use mims_core::experiments;
use mims_core::stats::{emit_report, ReportFormat};
use mims_core::trace::{self, WorkloadProfile};
use mims_core::{Error, Mode, Result, SimConfig};

/// Directory for report and trace outputs when no explicit path is given.
const OUT_DIR_ENV: &str = "MIMS_OUT_DIR";

#[derive(Parser)]
#[command(name = "mims", version, about = "Message-interface memory system simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one configuration.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        /// Also write the DRAM command trace to this file.
        #[arg(long)]
        cmd_trace: Option<PathBuf>,
    },
    /// Sweep the buffer-scheduler latency.
    Sweep {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long, default_value_t = 200)]
        to: u64,
        #[arg(long, default_value_t = 20)]
        step: u64,
    },
    /// Run several modes on the same traces, normalized to DDR.
    Compare {
        #[command(flatten)]
        sim: SimArgs,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "DDR,BOB,MI_1,MI_MUL")]
        modes: Vec<Mode>,
    },
    /// Generate a synthetic trace from a workload preset.
    GenTrace {
        #[arg(long, default_value = "gups")]
        workload: String,
        #[arg(long, default_value_t = 100_000)]
        records: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        tid: u8,
        #[arg(long, default_value_t = 0)]
        base: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fuse contiguous records of a trace into trunk requests.
    MergeTrace {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        window: usize,
        #[arg(long, default_value_t = 4096)]
        read_cap: u64,
        #[arg(long, default_value_t = 512)]
        write_cap: u64,
    },
    /// Report address-compression ratios for a trace.
    CompressBench {
        input: PathBuf,
        /// Requests per simulated packet.
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Pretty-print hex-encoded packets, one per line (stdin if no file).
    PktDump {
        input: Option<PathBuf>,
        /// Decompress addresses with this scheme.
        #[arg(long)]
        compression: Option<Compression>,
    },
    /// Check a DRAM command trace against the timing rules.
    ValidateCmdtrace {
        input: PathBuf,
        /// TOML config supplying timing and geometry.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    cores: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    records: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sched_latency: Option<u64>,
    #[arg(long)]
    compression: Option<Compression>,
    /// Enable trunk merging.
    #[arg(long)]
    merge: bool,
    /// Trace file(s) instead of a synthetic workload.
    #[arg(long)]
    trace: Vec<PathBuf>,
    /// Any config key, e.g. `timing.trcd=12`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    /// Report file; defaults to stdout, or a file in $MIMS_OUT_DIR.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig> {
        let mut c = match &self.config {
            Some(p) => SimConfig::load(p)?,
            None => SimConfig::default(),
        };
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.cores {
            c.cores = v;
        }
        if let Some(v) = self.channels {
            c.channels = v;
        }
        if let Some(v) = &self.workload {
            c.workload = v.clone();
        }
        if let Some(v) = self.records {
            c.records_per_core = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.sched_latency {
            c.sched_latency_cycles = v;
        }
        if let Some(v) = self.compression {
            c.compression = v;
        }
        if self.merge {
            c.merge.enabled = true;
        }
        if !self.trace.is_empty() {
            c.trace_files = self.trace.clone();
        }
        for s in &self.set {
            c.set(s)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn extension(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Text => "txt",
        ReportFormat::Csv => "csv",
        ReportFormat::JsonLines => "jsonl",
    }
}

fn write_output(out: Option<&Path>, default_name: &str, format: ReportFormat, text: &str) -> Result<()> {
    let path = match (out, std::env::var_os(OUT_DIR_ENV)) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(dir)) => {
            fs::create_dir_all(&dir)?;
            Some(PathBuf::from(dir).join(format!("{default_name}.{}", extension(format))))
        }
        (None, None) => None,
    };
    match path {
        Some(p) => {
            fs::write(&p, text)?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn compress_bench(input: &Path, batch: usize) -> Result<String> {
    let records = trace::load_trace(input)?;
    let batch = batch.max(1);
    let mut packets = Vec::new();
    let mut cur = Vec::new();
    for r in records.iter().filter(|r| !r.is_write) {
        cur.push(r.addr);
        if cur.len() == batch {
            packets.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        packets.push(cur);
    }
    let mut s = String::from("scheme,diff_bits,ratio\n");
    for scheme in [Scheme::SingleBase, Scheme::MultiBaseInline, Scheme::MultiBaseOffline] {
        let variants: &[CompressConfig] = if scheme == Scheme::SingleBase {
            &[CompressConfig::coarse(scheme)][..]
        } else {
            &[CompressConfig::coarse(scheme), CompressConfig::fine(scheme)][..]
        };
        for cfg in variants {
            let ratio = compress::ratio_for(*cfg, &packets)?;
            s.push_str(&format!("{},{},{ratio:.4}\n", scheme.name(), cfg.diff_bits));
        }
    }
    Ok(s)
}

fn pkt_dump(input: Option<&Path>, compression: Option<Compression>) -> Result<String> {
    let text = match input {
        Some(p) => fs::read_to_string(p)?,
        None => {
            let mut s = String::new();
            io::stdin().lock().read_to_string(&mut s)?;
            s
        }
    };
    let mut comp = compression.and_then(Compression::scheme).map(|s| AddrCompressor::new(CompressConfig::coarse(s)));
    let mut out = String::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let bytes = codec::parse_hex(line)?;
        out.push_str(&codec::dump(&bytes, comp.as_mut())?);
        out.push('\n');
    }
    Ok(out)
}

fn validate_cmdtrace(input: &Path, config: Option<&Path>) -> Result<String> {
    let cfg = match config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    let file = fs::File::open(input)?;
    let mut text = String::new();
    for line in io::BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    let cmds = dram::parse_command_trace(&text)?;
    let mut by_ch: std::collections::BTreeMap<u8, Vec<dram::DramCommand>> = Default::default();
    for c in cmds {
        by_ch.entry(c.ch).or_default().push(c);
    }
    let mut n = 0;
    for (ch, cmds) in &by_ch {
        oracle::validate(cmds, &cfg.timing, &cfg.geometry())
            .map_err(|v| Error::Invariant(format!("channel {ch}: {v}")))?;
        n += cmds.len();
    }
    Ok(format!("{n} commands on {} channels: ok\n", by_ch.len()))
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { sim, cmd_trace } => {
            let mut cfg = sim.config()?;
            if cmd_trace.is_some() {
                cfg.dump_commands = true;
            }
            let traces = experiments::build_traces(&cfg)?;
            let (report, cmds) = experiments::run_traces(&cfg, &traces)?;
            if let Some(p) = cmd_trace {
                fs::write(&p, dram::format_command_trace(&cmds))?;
                eprintln!("wrote {}", p.display());
            }
            let name = format!("run_{}_{}", report.workload, cfg.mode.name());
            write_output(sim.out.as_deref(), &name, sim.format, &emit_report(&[report], sim.format))
        }
        Cmd::Sweep { sim, from, to, step } => {
            let cfg = sim.config()?;
            let reports = experiments::sweep_sched_latency(&cfg, from, to, step)?;
            for w in reports[1..].windows(2) {
                if w[1].speedup > w[0].speedup {
                    eprintln!(
                        "warning: speedup rises from {:.4} to {:.4} between {} and {} cycles",
                        w[0].speedup, w[1].speedup, w[0].sched_latency_cycles, w[1].sched_latency_cycles
                    );
                }
            }
            let name = format!("sweep_{}_{}", reports[0].workload, cfg.mode.name());
            write_output(sim.out.as_deref(), &name, sim.format, &emit_report(&reports, sim.format))
        }
        Cmd::Compare { sim, modes } => {
            let cfg = sim.config()?;
            let reports = experiments::compare_modes(&cfg, &modes)?;
            let name = format!("compare_{}", reports[0].workload);
            write_output(sim.out.as_deref(), &name, sim.format, &emit_report(&reports, sim.format))
        }
        Cmd::GenTrace { workload, records, seed, tid, base, out } => {
            let profile = WorkloadProfile::preset(&workload)
                .ok_or_else(|| Error::InvalidProfile(format!("unknown workload {workload:?}")))?;
            let t = trace::gen_for_thread(&profile, records, seed, tid, base)?;
            trace::save_trace(&t, &out)?;
            eprintln!("wrote {} records to {}", t.len(), out.display());
            Ok(())
        }
        Cmd::MergeTrace { input, out, window, read_cap, write_cap } => {
            let t = trace::load_trace(&input)?;
            let m = trace::merge_trunks(&t, window, read_cap, write_cap);
            trace::save_trace(&m, &out)?;
            eprintln!("{} records merged into {}", t.len(), m.len());
            Ok(())
        }
        Cmd::CompressBench { input, batch } => {
            print!("{}", compress_bench(&input, batch)?);
            Ok(())
        }
        Cmd::PktDump { input, compression } => {
            print!("{}", pkt_dump(input.as_deref(), compression)?);
            Ok(())
        }
        Cmd::ValidateCmdtrace { input, config } => {
            print!("{}", validate_cmdtrace(&input, config.as_deref())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
