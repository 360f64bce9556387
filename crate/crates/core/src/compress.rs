//! Address compression for multi-request read packets.
//!
//! Three schemes share one context type, [`AddrCompressor`], so the encoder
//! (memory controller) and decoder (buffer scheduler) each own one and stay
//! in lock-step by processing the same packet sequence.
//!
//! Block layouts (little-endian):
//!
//! * Single base: `w:u8 | base:6B | (cnt-1) x diff:wB`. `w` is the smallest of
//!   1..=4 bytes whose signed range covers every byte difference from the
//!   first address; `w = 6` stores the remaining addresses verbatim.
//! * Multi base: a sequence of entries. A hit entry is a tag byte
//!   `1 | run-1 (4 bits) | base index (3 bits)` followed by `run` signed
//!   differences of `diff_bits / 8` bytes, each in 8-byte units from the same
//!   base. A miss entry is a zero tag byte followed by the 6-byte address,
//!   which then becomes a base, evicting the least recently used one.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Raw address size on the wire.
pub const ADDR_BYTES: usize = 6;
const MAX_RUN: usize = 16;
const HIT_FLAG: u8 = 0x80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SingleBase,
    MultiBaseInline,
    MultiBaseOffline,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::SingleBase, Scheme::MultiBaseInline, Scheme::MultiBaseOffline];

    /// Two-bit code carried in the packet head.
    pub fn code(self) -> u8 {
        match self {
            Scheme::SingleBase => 0,
            Scheme::MultiBaseInline => 1,
            Scheme::MultiBaseOffline => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SingleBase => "single",
            Scheme::MultiBaseInline => "multi_inline",
            Scheme::MultiBaseOffline => "multi_offline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressConfig {
    pub scheme: Scheme,
    pub n_base: usize,
    pub diff_bits: u32,
}

impl CompressConfig {
    pub fn coarse(scheme: Scheme) -> Self {
        CompressConfig { scheme, n_base: 8, diff_bits: 8 }
    }

    pub fn fine(scheme: Scheme) -> Self {
        CompressConfig { scheme, n_base: 8, diff_bits: 24 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.n_base) {
            return Err(Error::Config(format!("n_base {} must be in 1..=8", self.n_base)));
        }
        if self.diff_bits == 0 || !self.diff_bits.is_multiple_of(8) || self.diff_bits > 32 {
            return Err(Error::Config(format!("diff_bits {} must be 8, 16, 24 or 32", self.diff_bits)));
        }
        Ok(())
    }
}

/// Base-address table with LRU replacement. Slot indices are stable: a slot
/// keeps its index until evicted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaseTable {
    bases: Vec<u64>,
    /// Slot indices, least recently used first.
    lru: Vec<u8>,
    capacity: usize,
    diff_bits: u32,
}

impl BaseTable {
    pub fn new(capacity: usize, diff_bits: u32) -> Self {
        BaseTable { bases: Vec::with_capacity(capacity), lru: Vec::with_capacity(capacity), capacity, diff_bits }
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn base(&self, idx: usize) -> Option<u64> {
        self.bases.get(idx).copied()
    }

    /// Bases ordered from least to most recently used.
    pub fn bases_lru_order(&self) -> Vec<u64> {
        self.lru.iter().map(|&i| self.bases[usize::from(i)]).collect()
    }

    fn diff_bytes(&self) -> usize {
        self.diff_bits as usize / 8
    }

    /// Signed distance in 8-byte units, if representable in `diff_bits`.
    fn delta(&self, base: u64, addr: u64) -> Option<i64> {
        let d = (addr as i64 - base as i64) >> 3;
        let lim = 1i64 << (self.diff_bits - 1);
        (-lim..lim).contains(&d).then_some(d)
    }

    fn touch(&mut self, idx: u8) {
        if let Some(pos) = self.lru.iter().position(|&i| i == idx) {
            self.lru.remove(pos);
        }
        self.lru.push(idx);
    }

    /// Inserts `addr` as a base and returns its slot.
    fn insert(&mut self, addr: u64) -> u8 {
        let idx = if self.bases.len() < self.capacity {
            self.bases.push(addr);
            (self.bases.len() - 1) as u8
        } else {
            let victim = self.lru[0];
            self.bases[usize::from(victim)] = addr;
            victim
        };
        self.touch(idx);
        idx
    }

    /// Slot to use for `addr`: the previous entry's base when it still fits,
    /// otherwise the most recently used fitting base.
    fn find(&self, addr: u64, prefer: Option<u8>) -> Option<u8> {
        if let Some(p) = prefer {
            if self.delta(self.bases[usize::from(p)], addr).is_some() {
                return Some(p);
            }
        }
        self.lru.iter().rev().copied().find(|&i| self.delta(self.bases[usize::from(i)], addr).is_some())
    }
}

/// One endpoint's compression state for a link direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AddrCompressor {
    pub config: CompressConfig,
    table: BaseTable,
}

impl AddrCompressor {
    pub fn new(config: CompressConfig) -> Self {
        AddrCompressor { config, table: BaseTable::new(config.n_base, config.diff_bits) }
    }

    pub fn table(&self) -> &BaseTable {
        &self.table
    }

    pub fn compress(&mut self, addrs: &[u64]) -> Result<Vec<u8>> {
        if addrs.is_empty() {
            return Err(Error::Compress("empty address list".into()));
        }
        if let Some(a) = addrs.iter().find(|&&a| a % 8 != 0 || a >> 48 != 0) {
            return Err(Error::BadAddress { addr: *a });
        }
        Ok(match self.config.scheme {
            Scheme::SingleBase => compress_single_base(addrs),
            Scheme::MultiBaseInline => compress_multi_base(addrs, &mut self.table, false),
            Scheme::MultiBaseOffline => compress_multi_base(addrs, &mut self.table, true),
        })
    }

    /// Decodes `cnt` addresses from the front of `block`; returns them and the
    /// number of bytes consumed.
    pub fn decompress(&mut self, block: &[u8], cnt: usize) -> Result<(Vec<u64>, usize)> {
        match self.config.scheme {
            Scheme::SingleBase => decompress_single_base(block, cnt),
            Scheme::MultiBaseInline => decompress_multi_base(block, cnt, &mut self.table, false),
            Scheme::MultiBaseOffline => decompress_multi_base(block, cnt, &mut self.table, true),
        }
    }
}

fn put_uint(out: &mut Vec<u8>, v: u64, n: usize) {
    out.extend_from_slice(&v.to_le_bytes()[..n]);
}

fn get_uint(buf: &[u8], at: usize, n: usize) -> Result<u64> {
    let bytes = buf.get(at..at + n).ok_or_else(|| Error::Compress(format!("block truncated at byte {at}")))?;
    let mut b = [0u8; 8];
    b[..n].copy_from_slice(bytes);
    Ok(u64::from_le_bytes(b))
}

fn get_int(buf: &[u8], at: usize, n: usize) -> Result<i64> {
    let raw = get_uint(buf, at, n)?;
    let shift = 64 - 8 * n as u32;
    Ok(((raw << shift) as i64) >> shift)
}

/// Smallest diff width able to hold every byte difference from `addrs[0]`.
pub fn single_base_width(addrs: &[u64]) -> usize {
    let base = addrs[0] as i64;
    let (lo, hi) = addrs[1..].iter().fold((0i64, 0i64), |(lo, hi), &a| {
        let d = a as i64 - base;
        (lo.min(d), hi.max(d))
    });
    [1usize, 2, 3, 4]
        .into_iter()
        .find(|&w| {
            let lim = 1i64 << (8 * w - 1);
            lo >= -lim && hi < lim
        })
        .unwrap_or(ADDR_BYTES)
}

pub fn compress_single_base(addrs: &[u64]) -> Vec<u8> {
    let w = single_base_width(addrs);
    let mut out = Vec::with_capacity(1 + ADDR_BYTES + (addrs.len() - 1) * w);
    out.push(w as u8);
    put_uint(&mut out, addrs[0], ADDR_BYTES);
    for &a in &addrs[1..] {
        let v = if w == ADDR_BYTES { a } else { (a as i64 - addrs[0] as i64) as u64 };
        put_uint(&mut out, v, w);
    }
    out
}

fn decompress_single_base(block: &[u8], cnt: usize) -> Result<(Vec<u64>, usize)> {
    let w = usize::from(*block.first().ok_or_else(|| Error::Compress("empty block".into()))?);
    if ![1, 2, 3, 4, ADDR_BYTES].contains(&w) {
        return Err(Error::Compress(format!("bad diff width {w}")));
    }
    let base = get_uint(block, 1, ADDR_BYTES)?;
    let mut out = Vec::with_capacity(cnt);
    out.push(base);
    let mut at = 1 + ADDR_BYTES;
    for _ in 1..cnt {
        let a = if w == ADDR_BYTES { get_uint(block, at, w)? } else { (base as i64 + get_int(block, at, w)?) as u64 };
        out.push(a);
        at += w;
    }
    Ok((out, at))
}

/// Per-packet bookkeeping for the offline variant: the last address that hit
/// each slot during the packet.
struct HitLog(Vec<Option<u64>>);

impl HitLog {
    fn new() -> Self {
        HitLog(vec![None; 8])
    }

    fn hit(&mut self, idx: u8, addr: u64) {
        self.0[usize::from(idx)] = Some(addr);
    }

    fn evicted(&mut self, idx: u8) {
        self.0[usize::from(idx)] = None;
    }

    fn apply(self, table: &mut BaseTable) {
        for (idx, last) in self.0.into_iter().enumerate() {
            if let Some(a) = last {
                table.bases[idx] = a;
            }
        }
    }
}

pub fn compress_multi_base(addrs: &[u64], table: &mut BaseTable, offline: bool) -> Vec<u8> {
    let db = table.diff_bytes();
    let mut out = Vec::new();
    let mut log = HitLog::new();
    // (tag position in `out`, slot, run length) of the open hit entry
    let mut open: Option<(usize, u8, usize)> = None;
    for &a in addrs {
        let prefer = open.filter(|&(_, _, run)| run < MAX_RUN).map(|(_, i, _)| i);
        match table.find(a, prefer) {
            Some(idx) => {
                let d = table.delta(table.bases[usize::from(idx)], a).expect("fits");
                match open {
                    Some((pos, i, run)) if i == idx && run < MAX_RUN => {
                        out[pos] = HIT_FLAG | ((run as u8) << 3) | idx;
                        open = Some((pos, i, run + 1));
                    }
                    _ => {
                        open = Some((out.len(), idx, 1));
                        out.push(HIT_FLAG | idx);
                    }
                }
                put_uint(&mut out, d as u64, db);
                table.touch(idx);
                log.hit(idx, a);
            }
            None => {
                open = None;
                out.push(0);
                put_uint(&mut out, a, ADDR_BYTES);
                let idx = table.insert(a);
                log.evicted(idx);
            }
        }
    }
    if offline {
        log.apply(table);
    }
    out
}

fn decompress_multi_base(block: &[u8], cnt: usize, table: &mut BaseTable, offline: bool) -> Result<(Vec<u64>, usize)> {
    let db = table.diff_bytes();
    let mut out = Vec::with_capacity(cnt);
    let mut log = HitLog::new();
    let mut at = 0;
    while out.len() < cnt {
        let tag = *block.get(at).ok_or_else(|| Error::Compress(format!("block truncated at byte {at}")))?;
        at += 1;
        if tag & HIT_FLAG != 0 {
            let idx = tag & 0x07;
            let run = usize::from((tag >> 3) & 0x0f) + 1;
            let base = table
                .base(usize::from(idx))
                .ok_or_else(|| Error::Compress(format!("tag references empty base slot {idx}")))?;
            if out.len() + run > cnt {
                return Err(Error::Compress(format!("run of {run} overflows count {cnt}")));
            }
            for _ in 0..run {
                let d = get_int(block, at, db)?;
                at += db;
                let a = (base as i64 + (d << 3)) as u64;
                if a >> 48 != 0 {
                    return Err(Error::Compress(format!("decoded address {a:#x} exceeds 48 bits")));
                }
                out.push(a);
                table.touch(idx);
                log.hit(idx, a);
            }
        } else {
            if tag != 0 {
                return Err(Error::Compress(format!("malformed miss tag {tag:#04x}")));
            }
            let a = get_uint(block, at, ADDR_BYTES)?;
            at += ADDR_BYTES;
            out.push(a);
            let idx = table.insert(a);
            log.evicted(idx);
        }
    }
    if offline {
        log.apply(table);
    }
    Ok((out, at))
}

/// Running totals for the address compression ratio of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionLog {
    pub packets: u64,
    pub raw_bytes: u64,
    pub block_bytes: u64,
}

impl CompressionLog {
    pub fn record(&mut self, cnt: usize, block_len: usize) {
        self.packets += 1;
        self.raw_bytes += (ADDR_BYTES * cnt) as u64;
        self.block_bytes += block_len as u64;
    }

    /// Raw address bytes over compressed block bytes; `None` before any packet.
    pub fn ratio(&self) -> Option<f64> {
        (self.block_bytes > 0).then(|| self.raw_bytes as f64 / self.block_bytes as f64)
    }
}

/// Compresses `packets` in order with a fresh context and returns the ratio.
pub fn ratio_for(config: CompressConfig, packets: &[Vec<u64>]) -> Result<f64> {
    let mut c = AddrCompressor::new(config);
    let mut log = CompressionLog::default();
    for p in packets {
        let block = c.compress(p)?;
        log.record(p.len(), block.len());
    }
    log.ratio().ok_or_else(|| Error::Compress("no packets".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse(s: Scheme) -> AddrCompressor {
        AddrCompressor::new(CompressConfig::coarse(s))
    }

    #[test]
    fn single_base_stride_64() {
        let addrs: Vec<u64> = (0..8).map(|i| 0x10000 + i * 0x40).collect();
        let b = compress_single_base(&addrs);
        assert_eq!(b[0], 2);
        assert_eq!(b.len(), 21);
        assert!((48.0 / b.len() as f64 - 2.2857).abs() < 1e-3);
    }

    #[test]
    fn single_base_singleton_and_fallback() {
        assert_eq!(compress_single_base(&[0x40]).len(), 7);
        let far = compress_single_base(&[0, 8 << 30]);
        assert_eq!((far[0], far.len()), (6, 13));
        let (back, used) = decompress_single_base(&far, 2).unwrap();
        assert_eq!((back, used), (vec![0, 8 << 30], 13));
    }

    #[test]
    fn single_base_negative_diffs() {
        let addrs = [0x1000, 0xff8, 0x1080, 0x800];
        let b = compress_single_base(&addrs);
        assert_eq!(b[0], 2);
        assert_eq!(decompress_single_base(&b, 4).unwrap().0, addrs);
    }

    #[test]
    fn multi_base_hit_after_miss() {
        let mut c = coarse(Scheme::MultiBaseInline);
        assert_eq!(c.compress(&[0x0, 0x40]).unwrap().len(), 9);
    }

    #[test]
    fn multi_base_signed_range_boundary() {
        // 127 units is the largest positive coarse delta
        let mut c = coarse(Scheme::MultiBaseInline);
        assert_eq!(c.compress(&[0x0, 127 * 8]).unwrap().len(), 9);
        let mut c = coarse(Scheme::MultiBaseInline);
        assert_eq!(c.compress(&[0x0, 128 * 8]).unwrap().len(), 14);
        let mut c = coarse(Scheme::MultiBaseInline);
        assert_eq!(c.compress(&[0x2000, 0x2000 - 128 * 8]).unwrap().len(), 9);
    }

    #[test]
    fn runs_share_one_tag() {
        let mut c = coarse(Scheme::MultiBaseInline);
        let addrs: Vec<u64> = (0..16).map(|i| i * 64).collect();
        // miss + one tag + 15 one-byte diffs
        assert_eq!(c.compress(&addrs).unwrap().len(), 7 + 1 + 15);
    }

    #[test]
    fn offline_learns_across_packets() {
        let stream: Vec<u64> = (0..31).map(|i| 0x4000 + i * 64).collect();
        let (p1, p2) = stream.split_at(16);

        let mut off = coarse(Scheme::MultiBaseOffline);
        off.compress(p1).unwrap();
        assert_eq!(off.table().base(0), Some(p1[15]));
        let b2 = off.compress(p2).unwrap();
        assert_eq!(b2.len(), 1 + p2.len(), "all hits in one run");

        let mut inl = coarse(Scheme::MultiBaseInline);
        inl.compress(p1).unwrap();
        assert_eq!(inl.table().base(0), Some(p1[0]));
        let b2i = inl.compress(p2).unwrap();
        assert!(b2i.len() > b2.len());
        assert_eq!(b2i[0], 0, "first address of packet two misses inline");
    }

    #[test]
    fn lru_fill_keeps_last_eight() {
        let addrs: Vec<u64> = (0..11).map(|i| i << 30).collect();
        let mut enc = coarse(Scheme::MultiBaseInline);
        let mut dec = coarse(Scheme::MultiBaseInline);
        let block = enc.compress(&addrs).unwrap();
        assert_eq!(block.len(), 11 * 7);
        dec.decompress(&block, addrs.len()).unwrap();
        assert_eq!(dec.table().bases_lru_order(), addrs[3..].to_vec());
        assert_eq!(enc.table(), dec.table());
    }

    #[test]
    fn bad_index_is_decode_error() {
        let mut dec = coarse(Scheme::MultiBaseInline);
        let err = dec.decompress(&[HIT_FLAG | 3, 0x01], 1).unwrap_err();
        assert!(err.to_string().contains("empty base slot"), "{err}");
        let mut dec = coarse(Scheme::MultiBaseInline);
        assert!(dec.decompress(&[0x05, 0, 0, 0, 0, 0, 0], 1).is_err());
        assert!(dec.decompress(&[0x00, 0, 0], 1).is_err());
    }

    #[test]
    fn fine_all_hit_ratio_is_one_and_a_half() {
        // eight bases far apart, then hits that alternate between them
        let bases: Vec<u64> = (0..8).map(|i| (i + 1) << 32).collect();
        let mut c = AddrCompressor::new(CompressConfig::fine(Scheme::MultiBaseInline));
        c.compress(&bases).unwrap();
        let hits: Vec<u64> = (0..40).map(|i| bases[i % 8] + 8 * (i as u64 + 1) * 1000).collect();
        let block = c.compress(&hits).unwrap();
        assert_eq!(block.len(), 40 * 4);
        assert_eq!((ADDR_BYTES * 40) as f64 / block.len() as f64, 1.5);
    }

    #[test]
    fn incompressible_ratio_bounds() {
        let pk: Vec<Vec<u64>> = (0..20)
            .map(|p| (0..10).map(|i| ((p * 10 + i) as u64 * 0x9e37_79b9) % (1 << 40) * 8 % (1 << 47)).collect())
            .collect();
        let r = ratio_for(CompressConfig::coarse(Scheme::MultiBaseInline), &pk).unwrap();
        assert!((6.0 / 7.0..=1.0).contains(&r), "{r}");
    }

    #[test]
    fn log_ratio() {
        let mut log = CompressionLog::default();
        assert_eq!(log.ratio(), None);
        log.record(4, 12);
        assert_eq!(log.ratio(), Some(2.0));
    }
}
