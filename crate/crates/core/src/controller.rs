//! On-chip memory controller: address mapping, per-channel request queues
//! with write draining, packet assembly and the downstream link.

use serde::{Deserialize, Serialize};

use crate::codec::{self, BobPacket, Composition, Format, PacketHead, PacketType, Rtmsg};
use crate::compress::{AddrCompressor, CompressionLog, ADDR_BYTES};
use crate::config::{Mode, SimConfig};
use crate::dram::frfcfs::Drain;
use crate::{Error, Ps, Result};

const BYTE_BITS_MIMS: u32 = 3;
const BYTE_BITS_DDR: u32 = 6;
const SUBRANK_BITS: u32 = 3;
const COLBLOCK_BITS: u32 = 7;
const ROW_BITS: u32 = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapKind {
    /// Whole-rank 64-byte lines, channel-interleaved per line.
    Ddr,
    /// 8-byte units striped over sub-ranks, channel-interleaved per 8 KB row chunk.
    Mims,
}

impl MapKind {
    pub fn for_mode(mode: Mode) -> Self {
        if mode.is_mims() {
            MapKind::Mims
        } else {
            MapKind::Ddr
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MappedAddr {
    pub channel: u8,
    pub rank: u8,
    pub subrank: u8,
    pub bank: u8,
    pub row: u32,
    pub colblock: u16,
    pub byte: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddressMap {
    pub kind: MapKind,
    channel_bits: u32,
    rank_bits: u32,
    bank_bits: u32,
}

fn field(addr: u64, lo: u32, bits: u32) -> u64 {
    (addr >> lo) & ((1u64 << bits) - 1)
}

impl AddressMap {
    pub fn new(kind: MapKind, channels: usize, ranks: usize, banks: usize) -> Self {
        AddressMap {
            kind,
            channel_bits: channels.trailing_zeros(),
            rank_bits: ranks.trailing_zeros(),
            bank_bits: banks.trailing_zeros(),
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(MapKind::for_mode(cfg.mode), cfg.channels, cfg.ranks, cfg.banks)
    }

    fn addr_bits(&self) -> u32 {
        BYTE_BITS_MIMS + SUBRANK_BITS + COLBLOCK_BITS + self.channel_bits + self.bank_bits + self.rank_bits + ROW_BITS
    }

    /// Bytes of addressable memory.
    pub fn capacity(&self) -> u64 {
        1 << self.addr_bits()
    }

    /// Bytes that stay on one channel, rank, bank and row.
    pub fn chunk_bytes(&self) -> u64 {
        match self.kind {
            MapKind::Ddr => 1 << BYTE_BITS_DDR,
            MapKind::Mims => 1 << (BYTE_BITS_MIMS + SUBRANK_BITS + COLBLOCK_BITS),
        }
    }

    pub fn map(&self, addr: u64) -> Result<MappedAddr> {
        if addr >= self.capacity() {
            return Err(Error::BadAddress { addr });
        }
        let (c, r, b) = (self.channel_bits, self.rank_bits, self.bank_bits);
        Ok(match self.kind {
            MapKind::Mims => {
                let ch_lo = BYTE_BITS_MIMS + SUBRANK_BITS + COLBLOCK_BITS;
                MappedAddr {
                    byte: field(addr, 0, BYTE_BITS_MIMS) as u8,
                    subrank: field(addr, BYTE_BITS_MIMS, SUBRANK_BITS) as u8,
                    colblock: field(addr, BYTE_BITS_MIMS + SUBRANK_BITS, COLBLOCK_BITS) as u16,
                    channel: field(addr, ch_lo, c) as u8,
                    bank: field(addr, ch_lo + c, b) as u8,
                    rank: field(addr, ch_lo + c + b, r) as u8,
                    row: field(addr, ch_lo + c + b + r, ROW_BITS) as u32,
                }
            }
            MapKind::Ddr => {
                let cb_lo = BYTE_BITS_DDR + c;
                MappedAddr {
                    byte: field(addr, 0, BYTE_BITS_DDR) as u8,
                    subrank: 0,
                    channel: field(addr, BYTE_BITS_DDR, c) as u8,
                    colblock: field(addr, cb_lo, COLBLOCK_BITS) as u16,
                    bank: field(addr, cb_lo + COLBLOCK_BITS, b) as u8,
                    rank: field(addr, cb_lo + COLBLOCK_BITS + b, r) as u8,
                    row: field(addr, cb_lo + COLBLOCK_BITS + b + r, ROW_BITS) as u32,
                }
            }
        })
    }

    pub fn unmap(&self, m: &MappedAddr) -> u64 {
        let (c, r, b) = (self.channel_bits, self.rank_bits, self.bank_bits);
        let put = |v: u64, lo: u32| v << lo;
        match self.kind {
            MapKind::Mims => {
                let ch_lo = BYTE_BITS_MIMS + SUBRANK_BITS + COLBLOCK_BITS;
                put(u64::from(m.byte), 0)
                    | put(u64::from(m.subrank), BYTE_BITS_MIMS)
                    | put(u64::from(m.colblock), BYTE_BITS_MIMS + SUBRANK_BITS)
                    | put(u64::from(m.channel), ch_lo)
                    | put(u64::from(m.bank), ch_lo + c)
                    | put(u64::from(m.rank), ch_lo + c + b)
                    | put(u64::from(m.row), ch_lo + c + b + r)
            }
            MapKind::Ddr => {
                let cb_lo = BYTE_BITS_DDR + c;
                put(u64::from(m.byte), 0)
                    | put(u64::from(m.channel), BYTE_BITS_DDR)
                    | put(u64::from(m.colblock), cb_lo)
                    | put(u64::from(m.bank), cb_lo + COLBLOCK_BITS)
                    | put(u64::from(m.rank), cb_lo + COLBLOCK_BITS + b)
                    | put(u64::from(m.row), cb_lo + COLBLOCK_BITS + b + r)
            }
        }
    }

    /// Splits `[addr, addr + gran * 8)` into per-chunk segments.
    pub fn split(&self, addr: u64, gran: u16) -> Result<Vec<Segment>> {
        if !addr.is_multiple_of(8) || gran == 0 {
            return Err(Error::BadAddress { addr });
        }
        let end = addr + u64::from(gran) * 8;
        if end > self.capacity() {
            return Err(Error::BadAddress { addr: end - 8 });
        }
        let chunk = self.chunk_bytes();
        let mut out = Vec::new();
        let mut a = addr;
        while a < end {
            let stop = ((a / chunk) + 1) * chunk;
            let seg_end = stop.min(end);
            let m = self.map(a)?;
            let cas = match self.kind {
                MapKind::Ddr => vec![(m.colblock, 0xff)],
                MapKind::Mims => {
                    let mut cas: Vec<(u16, u8)> = Vec::new();
                    let mut u = a;
                    while u < seg_end {
                        let mu = self.map(u)?;
                        match cas.last_mut() {
                            Some((cb, mask)) if *cb == mu.colblock => *mask |= 1 << mu.subrank,
                            _ => cas.push((mu.colblock, 1 << mu.subrank)),
                        }
                        u += 8;
                    }
                    cas
                }
            };
            out.push(Segment {
                addr: a,
                gran: ((seg_end - a) / 8) as u16,
                channel: m.channel,
                rank: m.rank,
                bank: m.bank,
                row: m.row,
                cas,
            });
            a = seg_end;
        }
        Ok(out)
    }
}

/// Maps with the baseline geometry (2 channels, 2 ranks, 8 banks).
pub fn map_address(addr: u64, mode: Mode) -> Result<MappedAddr> {
    if !addr.is_multiple_of(8) {
        return Err(Error::BadAddress { addr });
    }
    AddressMap::new(MapKind::for_mode(mode), 2, 2, 8).map(addr)
}

/// The part of a request that falls in one chunk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub addr: u64,
    pub gran: u16,
    pub channel: u8,
    pub rank: u8,
    pub bank: u8,
    pub row: u32,
    /// `(column block, device mask)` per column access.
    pub cas: Vec<(u16, u8)>,
}

/// Per-request latency split, picoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySegments {
    pub queuing_mc: Ps,
    pub serialization: Ps,
    pub sched_fixed: Ps,
    pub queuing_sched: Ps,
    pub dram_core: Ps,
    pub ret: Ps,
}

impl LatencySegments {
    pub fn total(&self) -> Ps {
        self.queuing_mc + self.serialization + self.sched_fixed + self.queuing_sched + self.dram_core + self.ret
    }

    pub fn as_array(&self) -> [Ps; 6] {
        [self.queuing_mc, self.serialization, self.sched_fixed, self.queuing_sched, self.dram_core, self.ret]
    }

    pub const NAMES: [&'static str; 6] =
        ["queuing_mc", "serialization", "sched_fixed", "queuing_sched", "dram_core", "return"];
}

/// One memory access as it travels through the system. Requests that cross a
/// chunk boundary travel as several of these sharing a `parent`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemRequest {
    pub key: u64,
    pub parent: u64,
    pub core: usize,
    pub id: u16,
    pub seg: Segment,
    pub is_write: bool,
    pub tid: u8,
    pub timeout: u8,
    pub t_created: Ps,
    pub t_packed: Ps,
    pub serialization: Ps,
    pub t_delivered: Ps,
    pub t_arrived_sched: Ps,
    pub t_first_cmd: Ps,
    pub t_data_end: Ps,
    pub t_done: Ps,
}

impl MemRequest {
    pub fn new(key: u64, parent: u64, core: usize, seg: Segment, is_write: bool, tid: u8, now: Ps) -> Self {
        MemRequest {
            key,
            parent,
            core,
            id: 0,
            seg,
            is_write,
            tid,
            timeout: 0,
            t_created: now,
            t_packed: now,
            serialization: 0,
            t_delivered: now,
            t_arrived_sched: now,
            t_first_cmd: now,
            t_data_end: now,
            t_done: now,
        }
    }

    pub fn addr(&self) -> u64 {
        self.seg.addr
    }

    pub fn gran(&self) -> u16 {
        self.seg.gran
    }

    pub fn useful_bytes(&self) -> u64 {
        u64::from(self.seg.gran) * 8
    }

    /// Splits end-to-end latency; fails if timestamps are out of order.
    pub fn segments(&self) -> Result<LatencySegments> {
        let order = [
            self.t_created,
            self.t_packed,
            self.t_packed + self.serialization,
            self.t_delivered,
            self.t_first_cmd,
            self.t_data_end.min(self.t_done),
            self.t_done,
        ];
        if order.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Invariant(format!("request {} timestamps out of order: {order:?}", self.key)));
        }
        let s = LatencySegments {
            queuing_mc: self.t_packed - self.t_created,
            serialization: self.serialization,
            sched_fixed: self.t_delivered - self.t_packed - self.serialization,
            queuing_sched: self.t_first_cmd - self.t_delivered,
            dram_core: self.t_data_end.min(self.t_done) - self.t_first_cmd,
            ret: self.t_done - self.t_data_end.min(self.t_done),
        };
        debug_assert_eq!(s.total(), self.t_done - self.t_created);
        Ok(s)
    }
}

/// Read and write queues of one channel.
#[derive(Clone, Debug)]
pub struct QueuePair {
    pub read_q: Vec<MemRequest>,
    pub write_q: Vec<MemRequest>,
    pub read_cap: usize,
    pub write_cap: usize,
    /// Reads sent downstream whose data has not come back.
    pub reads_in_flight: usize,
    pub drain: Drain,
    /// Write-queue occupancy each time draining switched off.
    pub drain_exits: Vec<usize>,
}

impl QueuePair {
    pub fn new(read_cap: usize, write_cap: usize, high: usize, low: usize) -> Self {
        QueuePair {
            read_q: Vec::new(),
            write_q: Vec::new(),
            read_cap,
            write_cap,
            reads_in_flight: 0,
            drain: Drain::new(high, low),
            drain_exits: Vec::new(),
        }
    }

    pub fn has_room(&self, is_write: bool, n: usize) -> bool {
        if is_write {
            self.write_q.len() + n <= self.write_cap
        } else {
            self.read_q.len() + self.reads_in_flight + n <= self.read_cap
        }
    }

    pub fn is_empty(&self) -> bool {
        self.read_q.is_empty() && self.write_q.is_empty()
    }

    pub fn len(&self) -> usize {
        self.read_q.len() + self.write_q.len()
    }

    fn update_drain(&mut self) {
        let was = self.drain.on;
        self.drain.update(self.write_q.len());
        if was && !self.drain.on {
            self.drain_exits.push(self.write_q.len());
        }
    }

    /// Enqueues `req`, or hands it back if its queue is full.
    #[allow(clippy::result_large_err)]
    pub fn accept(&mut self, req: MemRequest) -> std::result::Result<(), MemRequest> {
        if !self.has_room(req.is_write, 1) {
            return Err(req);
        }
        if req.is_write {
            self.write_q.push(req);
        } else {
            self.read_q.push(req);
        }
        self.update_drain();
        Ok(())
    }

    /// Direction to serve next: writes while draining, else reads, falling
    /// back to whichever queue is non-empty.
    pub fn direction(&self) -> Option<bool> {
        let want_write = self.drain.on;
        let q = |w: bool| if w { &self.write_q } else { &self.read_q };
        if !q(want_write).is_empty() {
            Some(want_write)
        } else if !q(!want_write).is_empty() {
            Some(!want_write)
        } else {
            None
        }
    }
}

/// Body bytes a request adds to an uncompressed message packet.
pub fn entry_bytes(is_write: bool, gran: u16) -> usize {
    codec::RTMSG_BYTES + if is_write { usize::from(gran) * 8 } else { 0 }
}

/// Picks the requests for the next packet and removes them from `qp`.
///
/// At most `limit` requests are taken. With a compressor, read packets are
/// filled against the compressed address block size.
pub fn select_for_packet(
    qp: &mut QueuePair,
    mode: Mode,
    max_payload: usize,
    now: Ps,
    age_cap: Ps,
    limit: usize,
    compressor: Option<&AddrCompressor>,
) -> Vec<MemRequest> {
    let Some(write) = qp.direction() else { return Vec::new() };
    if limit == 0 {
        return Vec::new();
    }
    let q = if write { &mut qp.write_q } else { &mut qp.read_q };
    let picked: Vec<MemRequest> = if mode != Mode::MiMul {
        let oldest = (0..q.len()).min_by_key(|&i| (q[i].t_created, q[i].key)).expect("queue non-empty");
        vec![q.remove(oldest)]
    } else {
        let mut order: Vec<usize> = (0..q.len()).collect();
        order.sort_by_key(|&i| {
            let r = &q[i];
            let promoted = now.saturating_sub(r.t_created) >= age_cap;
            if promoted {
                (0, r.t_created, r.key)
            } else {
                (1, r.addr(), r.key)
            }
        });
        let mut n = 0;
        match compressor {
            Some(c) if !write => {
                let fits = |n: usize| {
                    let addrs: Vec<u64> = order[..n].iter().map(|&i| q[i].addr()).collect();
                    let mut trial = c.clone();
                    let block = trial.compress(&addrs).map(|b| b.len()).unwrap_or(ADDR_BYTES * 2 * n);
                    block + n * codec::RTMSG_META_BYTES <= max_payload
                };
                let (mut lo, mut hi) = (1, order.len().min(limit));
                while lo < hi {
                    let mid = (lo + hi).div_ceil(2);
                    if fits(mid) {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                n = lo;
            }
            _ => {
                let mut used = 0;
                for &i in &order {
                    let add = entry_bytes(write, q[i].gran());
                    if n >= limit || (n > 0 && used + add > max_payload) {
                        break;
                    }
                    used += add;
                    n += 1;
                }
            }
        }
        let mut slots: Vec<Option<MemRequest>> = q.drain(..).map(Some).collect();
        let reqs: Vec<MemRequest> = order[..n].iter().map(|&i| slots[i].take().expect("index taken once")).collect();
        q.extend(slots.into_iter().flatten());
        reqs
    };
    qp.update_drain();
    picked
}

/// Link cycles to move `bytes` over a `width_bits` lane.
pub fn link_cycles(bytes: usize, width_bits: u64) -> u64 {
    (bytes as u64 * 8).div_ceil(width_bits)
}

/// Deterministic payload bytes for address `addr`.
pub fn payload(addr: u64, len: usize) -> Vec<u8> {
    (0..len as u64).map(|i| ((addr + i).wrapping_mul(0x9e37_79b9) >> 7) as u8).collect()
}

/// Pool of 10-bit request ids.
#[derive(Clone, Debug)]
pub struct IdPool {
    free: Vec<u16>,
}

impl IdPool {
    pub const SIZE: u16 = 1024;

    pub fn new() -> Self {
        IdPool { free: (0..Self::SIZE).rev().collect() }
    }

    pub fn available(&self) -> usize {
        self.free.len()
    }

    pub fn take(&mut self) -> Option<u16> {
        self.free.pop()
    }

    pub fn give(&mut self, id: u16) {
        debug_assert!(!self.free.contains(&id));
        self.free.push(id);
    }
}

impl Default for IdPool {
    fn default() -> Self {
        Self::new()
    }
}

/// Traffic counters for one link direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketStats {
    pub packets: u64,
    pub requests: u64,
    pub composition: Composition,
}

impl PacketStats {
    pub fn add(&mut self, requests: usize, c: &Composition) {
        self.packets += 1;
        self.requests += requests as u64;
        self.composition.add(c);
    }
}

/// A packet on its way to a buffer scheduler.
#[derive(Clone, Debug)]
pub struct InFlight {
    pub arrive_at: Ps,
    pub bytes: Vec<u8>,
    pub reqs: Vec<MemRequest>,
}

/// Controller side of one channel's link.
pub struct LinkController {
    pub ch: u8,
    pub mode: Mode,
    pub queues: QueuePair,
    pub link_free_at: Ps,
    pub ids: IdPool,
    /// Free request slots at the buffer scheduler.
    pub credits: usize,
    pub compressor: Option<AddrCompressor>,
    pub seq: u16,
    pub read_stats: PacketStats,
    pub write_stats: PacketStats,
    pub compression: CompressionLog,
    pub busy_ps: Ps,
    width_bits: u64,
    link_cycle_ps: Ps,
    sched_latency_ps: Ps,
    max_payload: usize,
    age_cap: Ps,
}

impl LinkController {
    pub fn new(ch: u8, cfg: &SimConfig) -> Self {
        LinkController {
            ch,
            mode: cfg.mode,
            queues: QueuePair::new(cfg.read_queue, cfg.write_queue, cfg.high_mark, cfg.low_mark),
            link_free_at: 0,
            ids: IdPool::new(),
            credits: cfg.sched_queue,
            compressor: cfg.compress_config().map(AddrCompressor::new),
            seq: 0,
            read_stats: PacketStats::default(),
            write_stats: PacketStats::default(),
            compression: CompressionLog::default(),
            busy_ps: 0,
            width_bits: cfg.link_width_bits,
            link_cycle_ps: cfg.link_cycle_ps,
            sched_latency_ps: cfg.sched_latency_ps(),
            max_payload: cfg.max_payload,
            age_cap: cfg.age_cap_ps,
        }
    }

    pub fn serialization_ps(&self, bytes: usize) -> Ps {
        link_cycles(bytes, self.width_bits) * self.link_cycle_ps
    }

    /// Assembles and sends one packet if the link is free.
    pub fn dispatch(&mut self, now: Ps) -> Result<Option<InFlight>> {
        if now < self.link_free_at || self.queues.is_empty() {
            return Ok(None);
        }
        let limit = self.credits.min(self.ids.available());
        let mut reqs = select_for_packet(
            &mut self.queues,
            self.mode,
            self.max_payload,
            now,
            self.age_cap,
            limit,
            self.compressor.as_ref(),
        );
        if reqs.is_empty() {
            return Ok(None);
        }
        for r in &mut reqs {
            r.id = self.ids.take().expect("limited by available ids");
            r.t_packed = now;
        }
        self.credits -= reqs.len();
        let is_write = reqs[0].is_write;
        if !is_write {
            self.queues.reads_in_flight += reqs.len();
        }
        let pt = if is_write { PacketType::Write } else { PacketType::Read };
        let seq = self.seq;
        self.seq = self.seq.wrapping_add(1);
        let (bytes, comp) = if self.mode == Mode::Bob {
            let r = &reqs[0];
            let line = r.addr() & !63;
            let data = if is_write { payload(line, codec::LINE_BYTES) } else { Vec::new() };
            let p = BobPacket { desid: self.ch, pt, addr: line, data };
            (codec::encode_bob(&p, seq)?, codec::packet_bytes(Format::Bob, pt, &[8], None))
        } else {
            let msgs: Vec<Rtmsg> = reqs
                .iter()
                .map(|r| Rtmsg { addr: r.addr(), gran: r.gran(), tid: r.tid, to: r.timeout, reqid: r.id })
                .collect();
            let grans: Vec<u16> = reqs.iter().map(|r| r.gran()).collect();
            let head = PacketHead::new(self.ch, pt, reqs.len() as u16);
            if is_write {
                let entries: Vec<(Rtmsg, Vec<u8>)> =
                    msgs.iter().map(|m| (*m, payload(m.addr, usize::from(m.gran) * 8))).collect();
                let b = codec::encode_write(&head, seq, &entries)?;
                (b, codec::packet_bytes(Format::Message, pt, &grans, None))
            } else {
                let mut trial = self.compressor.clone();
                let mut enc = codec::encode_read(&head, seq, &msgs, trial.as_mut())?;
                match enc.addr_block {
                    Some(block) if block < msgs.len() * ADDR_BYTES => {
                        self.compressor = trial;
                        self.compression.record(msgs.len(), block);
                    }
                    Some(_) => {
                        enc = codec::encode_read(&head, seq, &msgs, None)?;
                        self.compression.record(msgs.len(), msgs.len() * ADDR_BYTES);
                    }
                    None => {}
                }
                let comp = codec::packet_bytes(Format::Message, pt, &grans, enc.addr_block);
                (enc.bytes, comp)
            }
        };
        debug_assert_eq!(comp.total(), bytes.len() as u64);
        let ser = self.serialization_ps(bytes.len());
        self.link_free_at = now + ser;
        self.busy_ps += ser;
        let arrive_at = now + ser + self.sched_latency_ps;
        for r in &mut reqs {
            r.serialization = ser;
            r.t_delivered = arrive_at;
        }
        if is_write {
            self.write_stats.add(reqs.len(), &comp);
        } else {
            self.read_stats.add(reqs.len(), &comp);
        }
        Ok(Some(InFlight { arrive_at, bytes, reqs }))
    }
}
