//! Trace records, synthetic workload generation and trunk merging.
//!
//! Text format, one record per line:
//!
//! ```text
//! gap addr(hex) gran R|W L1|L2|L3|MEM tid
//! ```
//!
//! Files ending in `.gz` are read and written gzip-compressed.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest granularity a record may carry, in 8-byte units (4 KB).
pub const MAX_GRAN: u16 = 512;
/// Addresses are 48 bits wide.
pub const ADDR_MASK: u64 = (1 << 48) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HitLevel {
    L1,
    L2,
    L3,
    Mem,
}

impl fmt::Display for HitLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HitLevel::L1 => "L1",
            HitLevel::L2 => "L2",
            HitLevel::L3 => "L3",
            HitLevel::Mem => "MEM",
        })
    }
}

impl FromStr for HitLevel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "L1" => Ok(HitLevel::L1),
            "L2" => Ok(HitLevel::L2),
            "L3" => Ok(HitLevel::L3),
            "MEM" => Ok(HitLevel::Mem),
            other => Err(format!("unknown hit level `{other}`")),
        }
    }
}

/// One traced memory instruction plus the non-memory instructions before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub gap: u32,
    pub addr: u64,
    /// Size in 8-byte units.
    pub gran: u16,
    pub is_write: bool,
    pub hit_level: HitLevel,
    pub tid: u8,
}

impl TraceRecord {
    pub fn bytes(&self) -> u64 {
        u64::from(self.gran) * 8
    }

    pub fn end(&self) -> u64 {
        self.addr + self.bytes()
    }

    /// Instructions this record stands for (the gap plus the access itself).
    pub fn instructions(&self) -> u64 {
        u64::from(self.gap) + 1
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:#x} {} {} {} {}",
            self.gap,
            self.addr,
            self.gran,
            if self.is_write { 'W' } else { 'R' },
            self.hit_level,
            self.tid
        )
    }
}

fn parse_line(line: &str) -> std::result::Result<TraceRecord, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let gap = fields[0].parse::<u32>().map_err(|e| format!("gap: {e}"))?;
    let hex = fields[1].strip_prefix("0x").or_else(|| fields[1].strip_prefix("0X")).unwrap_or(fields[1]);
    let addr = u64::from_str_radix(hex, 16).map_err(|e| format!("addr: {e}"))?;
    if addr > ADDR_MASK {
        return Err(format!("address {addr:#x} exceeds 48 bits"));
    }
    if addr % 8 != 0 {
        return Err(format!("address {addr:#x} is not 8-byte aligned"));
    }
    let gran = fields[2].parse::<u16>().map_err(|e| format!("gran: {e}"))?;
    if gran == 0 || gran > MAX_GRAN {
        return Err(format!("granularity {gran} outside 1..={MAX_GRAN}"));
    }
    let is_write = match fields[3] {
        "R" => false,
        "W" => true,
        other => return Err(format!("expected R or W, found `{other}`")),
    };
    let hit_level = fields[4].parse::<HitLevel>()?;
    let tid = fields[5].parse::<u8>().map_err(|e| format!("tid: {e}"))?;
    Ok(TraceRecord { gap, addr, gran, is_write, hit_level, tid })
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if is_gz(path) { Box::new(GzDecoder::new(file)) } else { Box::new(file) };
    read_trace(BufReader::new(reader), path)
}

pub fn read_trace(reader: impl BufRead, path: &Path) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let rec = parse_line(body).map_err(|msg| Error::TraceParse { path: path.to_path_buf(), line: idx + 1, msg })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_trace(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)?;
    if is_gz(path) {
        let mut w = BufWriter::new(GzEncoder::new(file, flate2::Compression::default()));
        write_trace(records, &mut w)?;
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?.finish()?;
    } else {
        let mut w = BufWriter::new(file);
        write_trace(records, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn write_trace(records: &[TraceRecord], w: &mut impl Write) -> Result<()> {
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccessPattern {
    UniformRandom,
    Sequential,
    Strided { stride: u64 },
    PointerChase,
}

/// Statistical description of a post-cache memory access stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub name: String,
    pub rpki: f64,
    pub wpki: f64,
    /// Probability of granularity `i + 1`, for `i` in `0..8`.
    pub read_gran_dist: [f64; 8],
    pub write_gran_dist: [f64; 8],
    pub pattern: AccessPattern,
    /// Bytes addressable by one thread.
    pub footprint: u64,
}

const DIST_TOLERANCE: f64 = 1e-9;

fn dist(pairs: &[(usize, f64)]) -> [f64; 8] {
    let mut d = [0.0; 8];
    for &(g, p) in pairs {
        d[g - 1] = p;
    }
    d
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(format!("{}: {msg}", self.name)));
        if !(self.rpki > 0.0 && self.wpki > 0.0) {
            return bad(format!("rpki and wpki must be positive (got {}, {})", self.rpki, self.wpki));
        }
        if self.rpki + self.wpki > 1000.0 {
            return bad("more than one access per instruction".into());
        }
        for (label, d) in [("read", &self.read_gran_dist), ("write", &self.write_gran_dist)] {
            if d.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("{label} distribution has an entry outside [0, 1]"));
            }
            let sum: f64 = d.iter().sum();
            if (sum - 1.0).abs() > DIST_TOLERANCE {
                return bad(format!("{label} distribution sums to {sum}, not 1"));
            }
        }
        if self.footprint < 4096 || !self.footprint.is_multiple_of(8) {
            return bad(format!("footprint {} too small or unaligned", self.footprint));
        }
        if let AccessPattern::Strided { stride } = self.pattern {
            if stride == 0 || stride % 8 != 0 {
                return bad(format!("stride {stride} must be a positive multiple of 8"));
            }
        }
        Ok(())
    }

    pub fn mean_read_gran(&self) -> f64 {
        mean_of(&self.read_gran_dist)
    }

    pub fn mean_write_gran(&self) -> f64 {
        mean_of(&self.write_gran_dist)
    }

    /// Random fine-grained updates; mean granularity 1.78 in both directions.
    pub fn gups() -> Self {
        let d = dist(&[(1, 0.555), (2, 0.30), (3, 0.075), (4, 0.04), (8, 0.03)]);
        WorkloadProfile {
            name: "gups".into(),
            rpki: 69.67,
            wpki: 69.62,
            read_gran_dist: d,
            write_gran_dist: d,
            pattern: AccessPattern::UniformRandom,
            footprint: 256 << 20,
        }
    }

    pub fn ssca2() -> Self {
        WorkloadProfile {
            name: "ssca2".into(),
            rpki: 20.89,
            wpki: 20.42,
            read_gran_dist: dist(&[(1, 0.60), (2, 0.28), (3, 0.06), (4, 0.04), (8, 0.02)]),
            write_gran_dist: dist(&[(1, 0.66), (2, 0.25), (3, 0.06), (4, 0.02), (8, 0.01)]),
            pattern: AccessPattern::PointerChase,
            footprint: 256 << 20,
        }
    }

    pub fn canneal() -> Self {
        WorkloadProfile {
            name: "canneal".into(),
            rpki: 17.79,
            wpki: 8.64,
            read_gran_dist: dist(&[(1, 0.7285), (2, 0.145), (3, 0.05), (4, 0.0345), (8, 0.042)]),
            write_gran_dist: dist(&[(1, 0.9759), (5, 0.0241)]),
            pattern: AccessPattern::UniformRandom,
            footprint: 256 << 20,
        }
    }

    pub fn listrank() -> Self {
        WorkloadProfile {
            name: "listrank".into(),
            rpki: 22.56,
            wpki: 15.45,
            read_gran_dist: dist(&[(2, 0.5299), (4, 0.3154), (8, 0.1547)]),
            write_gran_dist: dist(&[(2, 0.7651), (4, 0.0090), (8, 0.2259)]),
            pattern: AccessPattern::PointerChase,
            footprint: 256 << 20,
        }
    }

    /// Three sequential arrays: two read streams and one write stream of whole lines.
    pub fn stream() -> Self {
        WorkloadProfile {
            name: "stream".into(),
            rpki: 33.33,
            wpki: 16.63,
            read_gran_dist: dist(&[(8, 1.0)]),
            write_gran_dist: dist(&[(8, 1.0)]),
            pattern: AccessPattern::Sequential,
            footprint: 256 << 20,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "gups" => Self::gups(),
            "ssca2" => Self::ssca2(),
            "canneal" => Self::canneal(),
            "listrank" => Self::listrank(),
            "stream" => Self::stream(),
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 5] = ["gups", "ssca2", "canneal", "listrank", "stream"];
}

fn mean_of(d: &[f64; 8]) -> f64 {
    d.iter().enumerate().map(|(i, p)| (i as f64 + 1.0) * p).sum()
}

fn sample_gran(rng: &mut impl Rng, d: &[f64; 8]) -> u16 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in d.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u16 + 1;
        }
    }
    // rounding slack lands on the last non-empty bucket
    d.iter().rposition(|&p| p > 0.0).map_or(1, |i| i as u16 + 1)
}

/// Geometric number of non-memory instructions with the given mean.
fn sample_gap(rng: &mut impl Rng, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let p = 1.0 / (mean + 1.0);
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    (u.ln() / (1.0 - p).ln()).floor().min(u32::MAX as f64) as u32
}

fn mix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

struct AddrGen {
    footprint: u64,
    pattern: AccessPattern,
    read_cursor: u64,
    read_cursor_b: u64,
    alt: bool,
    write_cursor: u64,
    chase: u64,
}

impl AddrGen {
    fn new(p: &WorkloadProfile, seed: u64) -> Self {
        let third = (p.footprint / 3) & !4095;
        AddrGen {
            footprint: p.footprint,
            pattern: p.pattern,
            read_cursor: 0,
            read_cursor_b: third,
            alt: false,
            write_cursor: 2 * third,
            chase: (mix64(seed) % p.footprint) & !7,
        }
    }

    fn clamp(&self, addr: u64, bytes: u64) -> u64 {
        if addr + bytes > self.footprint {
            0
        } else {
            addr
        }
    }

    fn next(&mut self, rng: &mut impl Rng, is_write: bool, gran: u16) -> u64 {
        let bytes = u64::from(gran) * 8;
        match self.pattern {
            AccessPattern::UniformRandom => {
                let slots = (self.footprint - bytes) / 8 + 1;
                rng.gen_range(0..slots) * 8
            }
            AccessPattern::Sequential | AccessPattern::Strided { .. } => {
                let step = |b: u64| match self.pattern {
                    AccessPattern::Strided { stride } => stride,
                    _ => b,
                };
                let cursor = if is_write {
                    &mut self.write_cursor
                } else {
                    // two interleaved read streams, as in a[i] = b[i] + s * c[i]
                    self.alt = !self.alt;
                    if self.alt || self.pattern != AccessPattern::Sequential {
                        &mut self.read_cursor
                    } else {
                        &mut self.read_cursor_b
                    }
                };
                let addr = *cursor;
                *cursor = addr + step(bytes);
                let addr = if addr + bytes > self.footprint { 0 } else { addr };
                if addr == 0 {
                    *cursor = step(bytes);
                }
                addr
            }
            AccessPattern::PointerChase => {
                self.chase = (mix64(self.chase ^ 0x9e37_79b9_7f4a_7c15) % self.footprint) & !7;
                self.clamp(self.chase, bytes)
            }
        }
    }
}

/// Synthesises a post-cache trace whose access rates and granularity
/// mixes follow `profile`. Every record targets memory.
pub fn gen_synthetic(profile: &WorkloadProfile, n_records: usize, seed: u64) -> Result<Vec<TraceRecord>> {
    gen_for_thread(profile, n_records, seed, 0, 0)
}

/// Like [`gen_synthetic`], for thread `tid` whose addresses start at `base`.
pub fn gen_for_thread(
    profile: &WorkloadProfile,
    n_records: usize,
    seed: u64,
    tid: u8,
    base: u64,
) -> Result<Vec<TraceRecord>> {
    profile.validate()?;
    if n_records == 0 {
        return Err(Error::InvalidProfile("n_records must be positive".into()));
    }
    if !base.is_multiple_of(8) || base + profile.footprint > ADDR_MASK {
        return Err(Error::BadAddress { addr: base });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = profile.rpki + profile.wpki;
    let p_read = profile.rpki / total;
    let mean_gap = 1000.0 / total - 1.0;
    let mut addrs = AddrGen::new(profile, seed);
    let mut out = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let is_write = rng.gen::<f64>() >= p_read;
        let d = if is_write { &profile.write_gran_dist } else { &profile.read_gran_dist };
        let gran = sample_gran(&mut rng, d);
        let gap = sample_gap(&mut rng, mean_gap);
        let addr = base + addrs.next(&mut rng, is_write, gran);
        out.push(TraceRecord { gap, addr, gran, is_write, hit_level: HitLevel::Mem, tid });
    }
    Ok(out)
}

/// Fuses address-contiguous same-direction records inside each window of
/// `window` input records into trunk requests of at most `read_cap` /
/// `write_cap` bytes. Records are never reordered; a fused record takes the
/// position of the first record of its run.
pub fn merge_trunks(trace: &[TraceRecord], window: usize, read_cap: u64, write_cap: u64) -> Vec<TraceRecord> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(trace.len());
    for chunk in trace.chunks(window) {
        let start = out.len();
        // (is_write, end address) -> index in `out` of the run ending there
        let mut open: HashMap<(bool, u64), usize> = HashMap::new();
        for rec in chunk {
            let cap_units = (if rec.is_write { write_cap } else { read_cap } / 8).min(u64::from(MAX_GRAN));
            if let Some(&idx) = open.get(&(rec.is_write, rec.addr)) {
                let run: &mut TraceRecord = &mut out[idx];
                if u64::from(run.gran) + u64::from(rec.gran) <= cap_units
                    && run.hit_level == rec.hit_level
                    && run.tid == rec.tid
                {
                    open.remove(&(rec.is_write, rec.addr));
                    run.gran += rec.gran;
                    run.gap = run.gap.saturating_add(rec.gap);
                    open.insert((rec.is_write, run.end()), idx);
                    continue;
                }
            }
            debug_assert!(out.len() >= start);
            open.insert((rec.is_write, rec.end()), out.len());
            out.push(*rec);
        }
    }
    out
}

/// Granularity counts per direction plus access-rate estimates.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GranHistogram {
    pub read: BTreeMap<u16, u64>,
    pub write: BTreeMap<u16, u64>,
    pub instructions: u64,
}

impl GranHistogram {
    pub fn reads(&self) -> u64 {
        self.read.values().sum()
    }

    pub fn writes(&self) -> u64 {
        self.write.values().sum()
    }

    pub fn rpki(&self) -> f64 {
        per_kilo(self.reads(), self.instructions)
    }

    pub fn wpki(&self) -> f64 {
        per_kilo(self.writes(), self.instructions)
    }

    pub fn read_share(&self, gran: u16) -> f64 {
        share(&self.read, gran)
    }

    pub fn write_share(&self, gran: u16) -> f64 {
        share(&self.write, gran)
    }

    /// Probability vector over observed read granularities.
    pub fn read_dist(&self) -> BTreeMap<u16, f64> {
        normalize(&self.read)
    }

    pub fn write_dist(&self) -> BTreeMap<u16, f64> {
        normalize(&self.write)
    }

    pub fn mean_read_gran(&self) -> f64 {
        mean_counts(&self.read)
    }

    pub fn mean_write_gran(&self) -> f64 {
        mean_counts(&self.write)
    }
}

fn per_kilo(n: u64, instr: u64) -> f64 {
    if instr == 0 {
        0.0
    } else {
        n as f64 * 1000.0 / instr as f64
    }
}

fn share(m: &BTreeMap<u16, u64>, g: u16) -> f64 {
    let total: u64 = m.values().sum();
    if total == 0 {
        0.0
    } else {
        *m.get(&g).unwrap_or(&0) as f64 / total as f64
    }
}

fn normalize(m: &BTreeMap<u16, u64>) -> BTreeMap<u16, f64> {
    let total: u64 = m.values().sum();
    m.iter().map(|(&g, &c)| (g, c as f64 / total as f64)).collect()
}

fn mean_counts(m: &BTreeMap<u16, u64>) -> f64 {
    let total: u64 = m.values().sum();
    if total == 0 {
        return 0.0;
    }
    m.iter().map(|(&g, &c)| f64::from(g) * c as f64).sum::<f64>() / total as f64
}

pub fn granularity_histogram(trace: &[TraceRecord]) -> GranHistogram {
    let mut h = GranHistogram::default();
    for r in trace {
        h.instructions += r.instructions();
        if r.hit_level != HitLevel::Mem {
            continue;
        }
        let m = if r.is_write { &mut h.write } else { &mut h.read };
        *m.entry(r.gran).or_insert(0) += 1;
    }
    h
}
