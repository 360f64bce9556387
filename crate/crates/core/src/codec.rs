//! Wire format for link packets.
//!
//! Every packet is `LKOH (8) | head (8) | entries`, all multi-byte fields
//! little-endian.
//!
//! * LKOH: `seq:u16 | len:u16 | crc32(body):u32`, where body is head plus entries.
//! * Head: `desid:u8 | pt:u8 | cnt:u16 | rsv:u32`. `rsv` bit 0 flags address
//!   compression and bits 1..=2 carry the scheme code; all other bits are zero.
//! * Read entries: `cnt` request messages of 12 bytes each
//!   (`addr:6 | gran:2 | tid:1 | to:1 | reqid:2`). When compressed, the
//!   address block comes first, then the 6 non-address bytes of each message.
//! * Write entries: request message followed by `gran * 8` data bytes.
//! * Read-return entries: `reqid:2 | gran:2 | data`.
//!
//! The buffer-on-board baseline uses a bare format: one request per packet
//! carrying only a 6-byte address plus a 64-byte line for writes and returns.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::compress::{AddrCompressor, Scheme, ADDR_BYTES};
use crate::trace::MAX_GRAN;
use crate::{Error, Result};

pub const LKOH_BYTES: usize = 8;
pub const HEAD_BYTES: usize = 8;
pub const RTMSG_BYTES: usize = 12;
/// Non-address part of a request message.
pub const RTMSG_META_BYTES: usize = RTMSG_BYTES - ADDR_BYTES;
pub const RETURN_META_BYTES: usize = 4;
pub const LINE_BYTES: usize = 64;
/// Read requests decoded per scheduler cycle.
pub const READ_DECODE_BATCH: usize = 4;

const RSV_COMPRESSED: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PacketType {
    Read = 0,
    Write = 1,
    ReadReturn = 2,
}

impl PacketType {
    pub fn from_wire(v: u8) -> Result<Self> {
        match v {
            0 => Ok(PacketType::Read),
            1 => Ok(PacketType::Write),
            2 => Ok(PacketType::ReadReturn),
            x => Err(Error::Decode(format!("unknown packet type {x}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketHead {
    pub desid: u8,
    pub pt: PacketType,
    pub cnt: u16,
    pub rsv: u32,
}

impl PacketHead {
    pub fn new(desid: u8, pt: PacketType, cnt: u16) -> Self {
        PacketHead { desid, pt, cnt, rsv: 0 }
    }

    pub fn compression(&self) -> Option<Scheme> {
        if self.rsv & RSV_COMPRESSED == 0 {
            None
        } else {
            Scheme::from_code(((self.rsv >> 1) & 0x3) as u8)
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.push(self.desid);
        out.push(self.pt as u8);
        out.extend_from_slice(&self.cnt.to_le_bytes());
        out.extend_from_slice(&self.rsv.to_le_bytes());
    }

    fn read(b: &[u8]) -> Result<Self> {
        let b = b.get(..HEAD_BYTES).ok_or_else(|| Error::Decode("truncated head".into()))?;
        let head = PacketHead {
            desid: b[0],
            pt: PacketType::from_wire(b[1])?,
            cnt: u16::from_le_bytes([b[2], b[3]]),
            rsv: u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
        };
        if head.cnt == 0 {
            return Err(Error::Decode("packet with zero requests".into()));
        }
        if head.rsv & !0x7 != 0 || (head.rsv & RSV_COMPRESSED != 0 && head.compression().is_none()) {
            return Err(Error::Decode(format!("reserved bits set: {:#x}", head.rsv)));
        }
        Ok(head)
    }
}

/// One request message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rtmsg {
    pub addr: u64,
    pub gran: u16,
    pub tid: u8,
    pub to: u8,
    pub reqid: u16,
}

impl Rtmsg {
    fn check(&self) -> Result<()> {
        if self.gran == 0 || self.gran > MAX_GRAN {
            return Err(Error::Encode(format!("granularity {} outside 1..={MAX_GRAN}", self.gran)));
        }
        if self.addr >> 48 != 0 {
            return Err(Error::Encode(format!("address {:#x} exceeds 48 bits", self.addr)));
        }
        Ok(())
    }

    fn write_meta(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.gran.to_le_bytes());
        out.push(self.tid);
        out.push(self.to);
        out.extend_from_slice(&self.reqid.to_le_bytes());
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.addr.to_le_bytes()[..ADDR_BYTES]);
        self.write_meta(out);
    }

    fn read_meta(b: &[u8], addr: u64) -> Result<Self> {
        let gran = u16::from_le_bytes([b[0], b[1]]);
        if gran == 0 || gran > MAX_GRAN {
            return Err(Error::Decode(format!("granularity {gran} outside 1..={MAX_GRAN}")));
        }
        Ok(Rtmsg { addr, gran, tid: b[2], to: b[3], reqid: u16::from_le_bytes([b[4], b[5]]) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lkoh {
    pub seq: u16,
    pub len: u16,
    pub crc: u32,
}

fn frame(seq: u16, body: Vec<u8>) -> Result<Vec<u8>> {
    let len = u16::try_from(body.len())
        .map_err(|_| Error::Encode(format!("packet body of {} bytes exceeds the length field", body.len())))?;
    let mut out = Vec::with_capacity(LKOH_BYTES + body.len());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Checks framing and CRC; returns the link header and the body.
pub fn unframe(bytes: &[u8]) -> Result<(Lkoh, &[u8])> {
    if bytes.len() < LKOH_BYTES + HEAD_BYTES {
        return Err(Error::Decode(format!("packet of {} bytes is shorter than its headers", bytes.len())));
    }
    let lkoh = Lkoh {
        seq: u16::from_le_bytes([bytes[0], bytes[1]]),
        len: u16::from_le_bytes([bytes[2], bytes[3]]),
        crc: u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
    };
    let body = &bytes[LKOH_BYTES..];
    if usize::from(lkoh.len) != body.len() {
        return Err(Error::Decode(format!("length field {} but body is {} bytes", lkoh.len, body.len())));
    }
    let actual = crc32fast::hash(body);
    if actual != lkoh.crc {
        return Err(Error::Crc { expected: lkoh.crc, actual });
    }
    Ok((lkoh, body))
}

fn check_head(head: &PacketHead, pt: PacketType, n: usize) -> Result<()> {
    if head.pt != pt {
        return Err(Error::Encode(format!("head says {:?}, encoding {pt:?}", head.pt)));
    }
    if n == 0 {
        return Err(Error::Encode("packet needs at least one request".into()));
    }
    if usize::from(head.cnt) != n {
        return Err(Error::Encode(format!("head count {} but {n} entries", head.cnt)));
    }
    Ok(())
}

/// Result of encoding a read packet: the wire bytes and, when compressed, the
/// size of the address block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedRead {
    pub bytes: Vec<u8>,
    pub addr_block: Option<usize>,
}

pub fn encode_read(
    head: &PacketHead,
    seq: u16,
    msgs: &[Rtmsg],
    compressor: Option<&mut AddrCompressor>,
) -> Result<EncodedRead> {
    check_head(head, PacketType::Read, msgs.len())?;
    for m in msgs {
        m.check()?;
    }
    let mut head = *head;
    let mut body = Vec::with_capacity(HEAD_BYTES + msgs.len() * RTMSG_BYTES);
    let addr_block = match compressor {
        None => {
            head.rsv = 0;
            head.write(&mut body);
            for m in msgs {
                m.write(&mut body);
            }
            None
        }
        Some(c) => {
            head.rsv = RSV_COMPRESSED | (u32::from(c.config.scheme.code()) << 1);
            head.write(&mut body);
            let addrs: Vec<u64> = msgs.iter().map(|m| m.addr).collect();
            let block = c.compress(&addrs)?;
            body.extend_from_slice(&block);
            for m in msgs {
                m.write_meta(&mut body);
            }
            Some(block.len())
        }
    };
    Ok(EncodedRead { bytes: frame(seq, body)?, addr_block })
}

pub fn decode_read(bytes: &[u8], compressor: Option<&mut AddrCompressor>) -> Result<(PacketHead, Vec<Rtmsg>)> {
    let (_, body) = unframe(bytes)?;
    let head = PacketHead::read(body)?;
    if head.pt != PacketType::Read {
        return Err(Error::Decode(format!("expected a read packet, found {:?}", head.pt)));
    }
    let cnt = usize::from(head.cnt);
    let rest = &body[HEAD_BYTES..];
    let msgs = match (head.compression(), compressor) {
        (None, _) => {
            if rest.len() != cnt * RTMSG_BYTES {
                return Err(Error::Decode(format!("{} entry bytes for {cnt} messages", rest.len())));
            }
            rest.chunks_exact(RTMSG_BYTES)
                .map(|c| {
                    let mut a = [0u8; 8];
                    a[..ADDR_BYTES].copy_from_slice(&c[..ADDR_BYTES]);
                    Rtmsg::read_meta(&c[ADDR_BYTES..], u64::from_le_bytes(a))
                })
                .collect::<Result<Vec<_>>>()?
        }
        (Some(scheme), Some(c)) => {
            if c.config.scheme != scheme {
                return Err(Error::Decode(format!("packet uses {scheme:?}, receiver runs {:?}", c.config.scheme)));
            }
            let (addrs, used) = c.decompress(rest, cnt)?;
            let meta = &rest[used..];
            if meta.len() != cnt * RTMSG_META_BYTES {
                return Err(Error::Decode(format!("{} meta bytes for {cnt} messages", meta.len())));
            }
            meta.chunks_exact(RTMSG_META_BYTES)
                .zip(addrs)
                .map(|(m, a)| Rtmsg::read_meta(m, a))
                .collect::<Result<Vec<_>>>()?
        }
        (Some(scheme), None) => {
            return Err(Error::Decode(format!("compressed packet ({scheme:?}) but no decompressor")))
        }
    };
    Ok((head, msgs))
}

/// A write request and its data.
pub type WriteEntry = (Rtmsg, Vec<u8>);

pub fn encode_write(head: &PacketHead, seq: u16, entries: &[(Rtmsg, Vec<u8>)]) -> Result<Vec<u8>> {
    check_head(head, PacketType::Write, entries.len())?;
    let data_len: usize = entries.iter().map(|(_, d)| d.len()).sum();
    let mut body = Vec::with_capacity(HEAD_BYTES + entries.len() * RTMSG_BYTES + data_len);
    let mut head = *head;
    head.rsv = 0;
    head.write(&mut body);
    for (m, data) in entries {
        m.check()?;
        if data.len() != usize::from(m.gran) * 8 {
            return Err(Error::Encode(format!(
                "write data is {} bytes but granularity {} needs {}",
                data.len(),
                m.gran,
                usize::from(m.gran) * 8
            )));
        }
        m.write(&mut body);
        body.extend_from_slice(data);
    }
    frame(seq, body)
}

pub fn decode_write(bytes: &[u8]) -> Result<(PacketHead, Vec<WriteEntry>)> {
    let (_, body) = unframe(bytes)?;
    let head = PacketHead::read(body)?;
    if head.pt != PacketType::Write || head.rsv != 0 {
        return Err(Error::Decode(format!("expected an uncompressed write packet, found {:?}", head.pt)));
    }
    let mut at = HEAD_BYTES;
    let mut out = Vec::with_capacity(usize::from(head.cnt));
    for _ in 0..head.cnt {
        let m = body.get(at..at + RTMSG_BYTES).ok_or_else(|| Error::Decode("truncated write message".into()))?;
        let mut a = [0u8; 8];
        a[..ADDR_BYTES].copy_from_slice(&m[..ADDR_BYTES]);
        let msg = Rtmsg::read_meta(&m[ADDR_BYTES..], u64::from_le_bytes(a))?;
        at += RTMSG_BYTES;
        let n = usize::from(msg.gran) * 8;
        let data = body.get(at..at + n).ok_or_else(|| Error::Decode("truncated write data".into()))?;
        at += n;
        out.push((msg, data.to_vec()));
    }
    if at != body.len() {
        return Err(Error::Decode(format!("{} trailing bytes", body.len() - at)));
    }
    Ok((head, out))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReturnEntry {
    pub reqid: u16,
    pub gran: u16,
    pub data: Vec<u8>,
}

pub fn encode_return(head: &PacketHead, seq: u16, entries: &[ReturnEntry]) -> Result<Vec<u8>> {
    check_head(head, PacketType::ReadReturn, entries.len())?;
    let mut seen = HashSet::with_capacity(entries.len());
    let mut body = Vec::new();
    let mut head = *head;
    head.rsv = 0;
    head.write(&mut body);
    for e in entries {
        if !seen.insert(e.reqid) {
            return Err(Error::Encode(format!("duplicate request id {} in return packet", e.reqid)));
        }
        if e.gran == 0 || e.gran > MAX_GRAN || e.data.len() != usize::from(e.gran) * 8 {
            return Err(Error::Encode(format!("return data {} bytes for granularity {}", e.data.len(), e.gran)));
        }
        body.extend_from_slice(&e.reqid.to_le_bytes());
        body.extend_from_slice(&e.gran.to_le_bytes());
        body.extend_from_slice(&e.data);
    }
    frame(seq, body)
}

pub fn decode_return(bytes: &[u8]) -> Result<(PacketHead, Vec<ReturnEntry>)> {
    let (_, body) = unframe(bytes)?;
    let head = PacketHead::read(body)?;
    if head.pt != PacketType::ReadReturn || head.rsv != 0 {
        return Err(Error::Decode(format!("expected a read-return packet, found {:?}", head.pt)));
    }
    let mut at = HEAD_BYTES;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(usize::from(head.cnt));
    for _ in 0..head.cnt {
        let m = body.get(at..at + RETURN_META_BYTES).ok_or_else(|| Error::Decode("truncated return".into()))?;
        let reqid = u16::from_le_bytes([m[0], m[1]]);
        let gran = u16::from_le_bytes([m[2], m[3]]);
        if gran == 0 || gran > MAX_GRAN {
            return Err(Error::Decode(format!("granularity {gran} outside 1..={MAX_GRAN}")));
        }
        if !seen.insert(reqid) {
            return Err(Error::Decode(format!("duplicate request id {reqid}")));
        }
        at += RETURN_META_BYTES;
        let n = usize::from(gran) * 8;
        let data = body.get(at..at + n).ok_or_else(|| Error::Decode("truncated return data".into()))?;
        at += n;
        out.push(ReturnEntry { reqid, gran, data: data.to_vec() });
    }
    if at != body.len() {
        return Err(Error::Decode(format!("{} trailing bytes", body.len() - at)));
    }
    Ok((head, out))
}

/// A bare buffer-on-board packet: one line-sized request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BobPacket {
    pub desid: u8,
    pub pt: PacketType,
    pub addr: u64,
    /// 64 bytes for writes and returns, empty for reads.
    pub data: Vec<u8>,
}

pub fn encode_bob(p: &BobPacket, seq: u16) -> Result<Vec<u8>> {
    let want = if p.pt == PacketType::Read { 0 } else { LINE_BYTES };
    if p.data.len() != want {
        return Err(Error::Encode(format!("BOB {:?} carries {} data bytes, needs {want}", p.pt, p.data.len())));
    }
    if p.addr >> 48 != 0 {
        return Err(Error::Encode(format!("address {:#x} exceeds 48 bits", p.addr)));
    }
    let mut body = Vec::with_capacity(HEAD_BYTES + ADDR_BYTES + want);
    PacketHead::new(p.desid, p.pt, 1).write(&mut body);
    body.extend_from_slice(&p.addr.to_le_bytes()[..ADDR_BYTES]);
    body.extend_from_slice(&p.data);
    frame(seq, body)
}

pub fn decode_bob(bytes: &[u8]) -> Result<BobPacket> {
    let (_, body) = unframe(bytes)?;
    let head = PacketHead::read(body)?;
    if head.cnt != 1 || head.rsv != 0 {
        return Err(Error::Decode("BOB packets carry exactly one request".into()));
    }
    let want = if head.pt == PacketType::Read { 0 } else { LINE_BYTES };
    if body.len() != HEAD_BYTES + ADDR_BYTES + want {
        return Err(Error::Decode(format!("BOB {:?} body of {} bytes", head.pt, body.len())));
    }
    let mut a = [0u8; 8];
    a[..ADDR_BYTES].copy_from_slice(&body[HEAD_BYTES..HEAD_BYTES + ADDR_BYTES]);
    Ok(BobPacket {
        desid: head.desid,
        pt: head.pt,
        addr: u64::from_le_bytes(a),
        data: body[HEAD_BYTES + ADDR_BYTES..].to_vec(),
    })
}

/// Scheduler cycles spent unpacking a packet: read messages decode four at a
/// time, write messages one after another.
pub fn decode_cycles(pt: PacketType, cnt: usize) -> u64 {
    match pt {
        PacketType::Read => cnt.div_ceil(READ_DECODE_BATCH) as u64,
        PacketType::Write | PacketType::ReadReturn => cnt as u64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// Bare one-request packets of the buffer-on-board baseline.
    Bob,
    /// Variable-length message packets.
    Message,
}

/// Byte breakdown of a packet. `meta` is the non-address part of each
/// request message (granularity, thread id, timeout, request id).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub overhead: u64,
    pub address: u64,
    pub meta: u64,
    pub data: u64,
}

impl Composition {
    pub fn total(&self) -> u64 {
        self.overhead + self.address + self.meta + self.data
    }

    pub fn overhead_share(&self) -> f64 {
        self.overhead as f64 / self.total() as f64
    }

    pub fn add(&mut self, o: &Composition) {
        self.overhead += o.overhead;
        self.address += o.address;
        self.meta += o.meta;
        self.data += o.data;
    }
}

/// Size and composition of a packet of `pt` carrying requests of the given
/// granularities. `addr_block` is the compressed address block size, if any.
pub fn packet_bytes(format: Format, pt: PacketType, grans: &[u16], addr_block: Option<usize>) -> Composition {
    let n = grans.len() as u64;
    let overhead = (LKOH_BYTES + HEAD_BYTES) as u64;
    let data: u64 = grans.iter().map(|&g| u64::from(g) * 8).sum();
    let addr = addr_block.map_or(ADDR_BYTES as u64 * n, |b| b as u64);
    match (format, pt) {
        (Format::Bob, PacketType::Read) => Composition { overhead, address: ADDR_BYTES as u64, ..Default::default() },
        (Format::Bob, _) => Composition { overhead, address: ADDR_BYTES as u64, meta: 0, data: LINE_BYTES as u64 },
        (Format::Message, PacketType::Read) => {
            Composition { overhead, address: addr, meta: RTMSG_META_BYTES as u64 * n, data: 0 }
        }
        (Format::Message, PacketType::Write) => {
            Composition { overhead, address: ADDR_BYTES as u64 * n, meta: RTMSG_META_BYTES as u64 * n, data }
        }
        (Format::Message, PacketType::ReadReturn) => {
            Composition { overhead, address: 0, meta: RETURN_META_BYTES as u64 * n, data }
        }
    }
}

/// Any packet, decoded for display.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnyPacket {
    Read(PacketHead, Vec<Rtmsg>),
    Write(PacketHead, Vec<WriteEntry>),
    Return(PacketHead, Vec<ReturnEntry>),
}

/// Decodes any message packet. Compressed reads need `compressor`.
pub fn decode_any(bytes: &[u8], compressor: Option<&mut AddrCompressor>) -> Result<(Lkoh, AnyPacket)> {
    let (lkoh, body) = unframe(bytes)?;
    let head = PacketHead::read(body)?;
    let pkt = match head.pt {
        PacketType::Read => {
            let (h, m) = decode_read(bytes, compressor)?;
            AnyPacket::Read(h, m)
        }
        PacketType::Write => {
            let (h, e) = decode_write(bytes)?;
            AnyPacket::Write(h, e)
        }
        PacketType::ReadReturn => {
            let (h, e) = decode_return(bytes)?;
            AnyPacket::Return(h, e)
        }
    };
    Ok((lkoh, pkt))
}

/// Human-readable dump of a decoded packet.
pub fn dump(bytes: &[u8], compressor: Option<&mut AddrCompressor>) -> Result<String> {
    use std::fmt::Write as _;
    let (lkoh, pkt) = decode_any(bytes, compressor)?;
    let mut s = String::new();
    let _ =
        writeln!(s, "lkoh seq={} len={} crc={:#010x} ({} bytes on wire)", lkoh.seq, lkoh.len, lkoh.crc, bytes.len());
    let head_line = |h: &PacketHead| {
        format!(
            "head desid={} pt={:?} cnt={} rsv={:#x}{}",
            h.desid,
            h.pt,
            h.cnt,
            h.rsv,
            h.compression().map(|c| format!(" ({})", c.name())).unwrap_or_default()
        )
    };
    match pkt {
        AnyPacket::Read(h, msgs) => {
            let _ = writeln!(s, "{}", head_line(&h));
            for m in msgs {
                let _ = writeln!(
                    s,
                    "  read  addr={:#014x} gran={} tid={} to={} reqid={}",
                    m.addr, m.gran, m.tid, m.to, m.reqid
                );
            }
        }
        AnyPacket::Write(h, entries) => {
            let _ = writeln!(s, "{}", head_line(&h));
            for (m, d) in entries {
                let _ = writeln!(
                    s,
                    "  write addr={:#014x} gran={} tid={} to={} reqid={} data={}",
                    m.addr,
                    m.gran,
                    m.tid,
                    m.to,
                    m.reqid,
                    hex(&d)
                );
            }
        }
        AnyPacket::Return(h, entries) => {
            let _ = writeln!(s, "{}", head_line(&h));
            for e in entries {
                let _ = writeln!(s, "  ret   reqid={} gran={} data={}", e.reqid, e.gran, hex(&e.data));
            }
        }
    }
    Ok(s)
}

pub fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

pub fn parse_hex(s: &str) -> Result<Vec<u8>> {
    let clean: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let clean = clean.strip_prefix("0x").unwrap_or(&clean);
    if !clean.len().is_multiple_of(2) {
        return Err(Error::Decode("odd number of hex digits".into()));
    }
    (0..clean.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&clean[i..i + 2], 16).map_err(|e| Error::Decode(format!("hex: {e}"))))
        .collect()
}
