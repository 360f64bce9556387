//! Simulation configuration. The file form is TOML with one table per
//! component; every key is optional and defaults reproduce the baseline
//! system.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compress::{CompressConfig, Scheme};
use crate::dram::{Geometry, TimingParams};
use crate::power::PowerParams;
use crate::{Error, Ps, Result, CPU_CYCLE_PS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Direct-attached DDR channels; the on-chip controller drives DRAM.
    #[serde(rename = "DDR")]
    Ddr,
    /// Buffer-on-board: one 64-byte request per bare packet.
    #[serde(rename = "BOB")]
    Bob,
    /// Message interface with one request per packet.
    #[serde(rename = "MI_1")]
    Mi1,
    /// Message interface with many requests per packet.
    #[serde(rename = "MI_MUL")]
    MiMul,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Ddr, Mode::Bob, Mode::Mi1, Mode::MiMul];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ddr => "DDR",
            Mode::Bob => "BOB",
            Mode::Mi1 => "MI_1",
            Mode::MiMul => "MI_MUL",
        }
    }

    /// Sub-ranked, 8-byte-granular DRAM access.
    pub fn is_mims(self) -> bool {
        matches!(self, Mode::Mi1 | Mode::MiMul)
    }

    pub fn uses_link(self) -> bool {
        self != Mode::Ddr
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "DDR" => Ok(Mode::Ddr),
            "BOB" => Ok(Mode::Bob),
            "MI_1" | "MI1" | "MIMS_1" => Ok(Mode::Mi1),
            "MI_MUL" | "MIMUL" | "MIMS_MUL" => Ok(Mode::MiMul),
            _ => Err(Error::Config(format!("unknown mode `{s}` (DDR, BOB, MI_1, MI_MUL)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    #[default]
    None,
    Single,
    MultiInline,
    MultiOffline,
}

impl Compression {
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            Compression::None => None,
            Compression::Single => Some(Scheme::SingleBase),
            Compression::MultiInline => Some(Scheme::MultiBaseInline),
            Compression::MultiOffline => Some(Scheme::MultiBaseOffline),
        }
    }
}

impl FromStr for Compression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" | "off" => Ok(Compression::None),
            "single" | "single_base" => Ok(Compression::Single),
            "multi_inline" | "multi_base_inline" | "inline" => Ok(Compression::MultiInline),
            "multi_offline" | "multi_base_offline" | "offline" => Ok(Compression::MultiOffline),
            _ => Err(Error::Config(format!("unknown compression `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreConfig {
    pub clock_ps: Ps,
    pub rob_size: usize,
    pub fetch_per_cycle: usize,
    pub retire_per_cycle: usize,
    pub nonmem_latency: u64,
    pub l1_latency: u64,
    pub l2_latency: u64,
    pub l3_latency: u64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            clock_ps: CPU_CYCLE_PS,
            rob_size: 256,
            fetch_per_cycle: 4,
            retire_per_cycle: 2,
            nonmem_latency: 5,
            l1_latency: 9,
            l2_latency: 15,
            l3_latency: 45,
        }
    }
}

impl CoreConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.clock_ps,
            self.rob_size as u64,
            self.fetch_per_cycle as u64,
            self.retire_per_cycle as u64,
            self.nonmem_latency,
            self.l1_latency,
            self.l2_latency,
            self.l3_latency,
        ];
        if all.contains(&0) {
            return Err(Error::Config("core parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub enabled: bool,
    pub window: usize,
    pub read_cap: u64,
    pub write_cap: u64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig { enabled: false, window: 256, read_cap: 4096, write_cap: 512 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: Mode,
    pub cores: usize,
    pub channels: usize,
    pub ranks: usize,
    pub subranks: usize,
    pub banks: usize,
    pub read_queue: usize,
    pub write_queue: usize,
    pub high_mark: usize,
    pub low_mark: usize,
    /// Requests a buffer scheduler can hold.
    pub sched_queue: usize,
    pub link_width_bits: u64,
    pub link_cycle_ps: Ps,
    /// Fixed buffer-scheduler latency in CPU cycles.
    pub sched_latency_cycles: u64,
    /// Largest total of request entries, in bytes, in one packet; the head is extra.
    pub max_payload: usize,
    /// Queue residency after which a request jumps the address-sorted order.
    pub age_cap_ps: Ps,
    pub compression: Compression,
    pub n_base: usize,
    pub diff_bits: u32,
    pub seed: u64,
    /// Preset workload used when `trace_files` is empty.
    pub workload: String,
    pub records_per_core: usize,
    /// One trace file per core, reused round-robin if fewer than `cores`.
    pub trace_files: Vec<PathBuf>,
    /// Record the DRAM command stream in the report.
    pub dump_commands: bool,
    pub merge: MergeConfig,
    pub core: CoreConfig,
    pub timing: TimingParams,
    pub power: PowerParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::MiMul,
            cores: 16,
            channels: 2,
            ranks: 2,
            subranks: 8,
            banks: 8,
            read_queue: 64,
            write_queue: 64,
            high_mark: 48,
            low_mark: 16,
            sched_queue: 128,
            link_width_bits: 16,
            link_cycle_ps: CPU_CYCLE_PS,
            sched_latency_cycles: 40,
            max_payload: 504,
            age_cap_ps: 2_000_000,
            compression: Compression::None,
            n_base: 8,
            diff_bits: 8,
            seed: 1,
            workload: "gups".into(),
            records_per_core: 1_000_000,
            trace_files: Vec::new(),
            dump_commands: false,
            merge: MergeConfig::default(),
            core: CoreConfig::default(),
            timing: TimingParams::default(),
            power: PowerParams::default(),
        }
    }
}

fn pow2(v: usize, what: &str) -> Result<()> {
    if v == 0 || !v.is_power_of_two() {
        return Err(Error::Config(format!("{what} must be a power of two (got {v})")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.compression != Compression::None && self.mode != Mode::MiMul {
            return err(format!("compression requires mode MI_MUL (mode is {})", self.mode));
        }
        if self.cores == 0 || self.cores > 256 {
            return err(format!("cores must be in 1..=256 (got {})", self.cores));
        }
        pow2(self.channels, "channels")?;
        pow2(self.ranks, "ranks")?;
        pow2(self.banks, "banks")?;
        if self.subranks != 8 {
            return err("subranks must be 8 (one x8 device per sub-rank of a 64-bit rank)".into());
        }
        if self.channels > 256 || self.ranks > 256 || self.banks > 256 {
            return err("geometry too large".into());
        }
        if self.read_queue == 0 || self.write_queue == 0 || self.sched_queue == 0 {
            return err("queue sizes must be positive".into());
        }
        if !(self.low_mark < self.high_mark && self.high_mark <= self.write_queue) {
            return err(format!(
                "water marks need low < high <= write queue (got {}/{}/{})",
                self.low_mark, self.high_mark, self.write_queue
            ));
        }
        if self.link_width_bits == 0 || !self.link_width_bits.is_multiple_of(8) || self.link_cycle_ps == 0 {
            return err("link width must be a positive multiple of 8 bits and the link clock positive".into());
        }
        if self.max_payload < 64 || self.max_payload > u16::MAX as usize {
            return err(format!("max_payload {} outside 64..=65535", self.max_payload));
        }
        if self.records_per_core == 0 && self.trace_files.is_empty() {
            return err("records_per_core must be positive".into());
        }
        if self.trace_files.is_empty() && crate::trace::WorkloadProfile::preset(&self.workload).is_none() {
            return err(format!("unknown workload `{}`", self.workload));
        }
        if self.merge.enabled && (self.merge.read_cap < 8 || self.merge.write_cap < 8) {
            return err("merge caps must be at least 8 bytes".into());
        }
        if let Some(c) = self.compress_config() {
            c.validate()?;
        }
        self.core.validate()?;
        self.timing.validate()?;
        self.power.validate()?;
        Ok(())
    }

    pub fn compress_config(&self) -> Option<CompressConfig> {
        self.compression.scheme().map(|scheme| CompressConfig {
            scheme,
            n_base: self.n_base,
            diff_bits: self.diff_bits,
        })
    }

    pub fn geometry(&self) -> Geometry {
        Geometry { ranks: self.ranks, devices: self.subranks, banks: self.banks }
    }

    pub fn sched_latency_ps(&self) -> Ps {
        self.sched_latency_cycles * self.core.clock_ps
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    /// Applies a `key=value` override; nested keys use dots (`timing.cl=10`).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        let mut table = &mut doc;
        for p in path {
            table = table
                .get_mut(*p)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| Error::Config(format!("unknown section `{p}`")))?;
        }
        let old = table.get(*last).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        let raw = value.trim();
        let new = match old {
            toml::Value::String(_) => toml::Value::String(raw.to_string()),
            _ => {
                let wrapped = format!("v = {raw}");
                let parsed: toml::Table = toml::from_str(&wrapped)
                    .or_else(|_| toml::from_str(&format!("v = \"{raw}\"")))
                    .map_err(|e| Error::Config(format!("{key}: {e}")))?;
                parsed["v"].clone()
            }
        };
        table.insert(last.to_string(), new);
        *self =
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(SimConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn compression_needs_mi_mul() {
        let c = SimConfig { mode: Mode::Ddr, compression: Compression::Single, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn overrides() {
        let mut c = SimConfig::default();
        c.set("mode=DDR").unwrap();
        c.set("timing.cl=10").unwrap();
        c.set("merge.enabled=true").unwrap();
        c.set("compression=multi_offline").unwrap();
        assert_eq!(c.mode, Mode::Ddr);
        assert_eq!(c.timing.cl, 10);
        assert!(c.merge.enabled);
        assert_eq!(c.compression, Compression::MultiOffline);
        assert!(c.set("nope=1").is_err());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = SimConfig::from_toml("mode = \"MI_1\"\n[timing]\ncl = 9\n").unwrap();
        assert_eq!(c.mode, Mode::Mi1);
        assert_eq!(c.cores, 16);
    }
}
