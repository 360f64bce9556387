//! Buffer scheduler: the far end of a channel's link. Decodes packets,
//! schedules the DRAM with the FRFCFS engine, and sends read data back
//! upstream in return packets.

use std::collections::{HashMap, VecDeque};

use crate::codec::{self, BobPacket, Composition, Format, PacketHead, PacketType, ReturnEntry};
use crate::compress::AddrCompressor;
use crate::config::{Mode, SimConfig};
use crate::controller::{link_cycles, payload, AddressMap, MapKind, PacketStats};
use crate::dram::frfcfs::{Drain, Engine, Job};
use crate::{Error, Ps, Result, DRAM_TCK_PS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Decoded {
    reqid: u16,
    addr: u64,
    gran: u16,
    is_write: bool,
}

/// Something the scheduler finished this cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedEvent {
    /// Final column command of a write issued at `done`.
    WriteDone { reqid: u16, first_cmd: Ps, done: Ps },
    /// Read data fully transferred from DRAM at `data_end`.
    ReadData { reqid: u16, first_cmd: Ps, data_end: Ps },
}

/// A return packet on its way to the controller.
#[derive(Clone, Debug)]
pub struct ReturnFlight {
    pub arrive_at: Ps,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Copy, Debug)]
struct Ready {
    reqid: u16,
    addr: u64,
    gran: u16,
    at: Ps,
}

pub struct BufferScheduler {
    pub ch: u8,
    pub mode: Mode,
    pub engine: Engine,
    pub return_stats: PacketStats,
    pub busy_ps: Ps,
    map: AddressMap,
    decoder: Option<AddrCompressor>,
    decode_free_at: Ps,
    pending: VecDeque<(Ps, Vec<Decoded>)>,
    waiting: HashMap<u16, Decoded>,
    returns: VecDeque<Ready>,
    up_free_at: Ps,
    width_bits: u64,
    link_cycle_ps: Ps,
    sched_latency_ps: Ps,
    max_payload: usize,
    seq: u16,
}

impl BufferScheduler {
    pub fn new(ch: u8, cfg: &SimConfig) -> Self {
        let mut engine = Engine::new(ch, cfg.timing, cfg.geometry(), Drain::new(cfg.high_mark, cfg.low_mark));
        if cfg.dump_commands {
            engine.enable_log();
        }
        BufferScheduler {
            ch,
            mode: cfg.mode,
            engine,
            return_stats: PacketStats::default(),
            busy_ps: 0,
            map: AddressMap::new(MapKind::for_mode(cfg.mode), cfg.channels, cfg.ranks, cfg.banks),
            decoder: cfg.compress_config().map(AddrCompressor::new),
            decode_free_at: 0,
            pending: VecDeque::new(),
            waiting: HashMap::new(),
            returns: VecDeque::new(),
            up_free_at: 0,
            width_bits: cfg.link_width_bits,
            link_cycle_ps: cfg.link_cycle_ps,
            sched_latency_ps: cfg.sched_latency_ps(),
            max_payload: cfg.max_payload,
            seq: 0,
        }
    }

    /// Requests held here, decoded or not, that have not finished in DRAM.
    pub fn occupancy(&self) -> usize {
        self.pending.iter().map(|(_, v)| v.len()).sum::<usize>() + self.engine.len()
    }

    pub fn is_idle(&self, now: Ps) -> bool {
        self.pending.is_empty() && self.engine.is_empty() && self.returns.is_empty() && now >= self.up_free_at
    }

    /// Decodes a packet arriving at `now`. Returns the request ids and the
    /// time they enter the scheduling queue.
    pub fn receive(&mut self, bytes: &[u8], now: Ps) -> Result<Vec<(u16, Ps)>> {
        let (decoded, pt) = if self.mode == Mode::Bob {
            let p = codec::decode_bob(bytes)?;
            if p.desid != self.ch {
                return Err(Error::Routing { expected: self.ch, got: p.desid });
            }
            let d = Decoded { reqid: 0, addr: p.addr, gran: 8, is_write: p.pt == PacketType::Write };
            (vec![d], p.pt)
        } else {
            let (_, body) = codec::unframe(bytes)?;
            if body[0] != self.ch {
                return Err(Error::Routing { expected: self.ch, got: body[0] });
            }
            match PacketType::from_wire(body[1])? {
                PacketType::Read => {
                    let (_, msgs) = codec::decode_read(bytes, self.decoder.as_mut())?;
                    let v = msgs
                        .iter()
                        .map(|m| Decoded { reqid: m.reqid, addr: m.addr, gran: m.gran, is_write: false })
                        .collect();
                    (v, PacketType::Read)
                }
                PacketType::Write => {
                    let (_, entries) = codec::decode_write(bytes)?;
                    let v = entries
                        .iter()
                        .map(|(m, _)| Decoded { reqid: m.reqid, addr: m.addr, gran: m.gran, is_write: true })
                        .collect();
                    (v, PacketType::Write)
                }
                PacketType::ReadReturn => {
                    return Err(Error::Decode("read-return packet sent downstream".into()));
                }
            }
        };
        let cycles = if self.mode == Mode::Bob { 1 } else { codec::decode_cycles(pt, decoded.len()) };
        let start = now.max(self.decode_free_at);
        let ready = start + cycles * DRAM_TCK_PS;
        self.decode_free_at = ready;
        let out = decoded.iter().map(|d| (d.reqid, ready)).collect();
        self.pending.push_back((ready, decoded));
        Ok(out)
    }

    /// For BOB the controller's request id rides outside the bare packet;
    /// the scheduler learns it from the controller's bookkeeping.
    pub fn tag_last_bob(&mut self, reqid: u16) {
        if let Some((_, v)) = self.pending.back_mut() {
            if let Some(d) = v.last_mut() {
                d.reqid = reqid;
            }
        }
    }

    fn enqueue(&mut self, d: Decoded) -> Result<()> {
        let segs = self.map.split(d.addr, d.gran)?;
        if segs.len() != 1 || segs[0].channel != self.ch {
            return Err(Error::Routing { expected: self.ch, got: segs[0].channel });
        }
        let s = &segs[0];
        if self.waiting.insert(d.reqid, d).is_some() {
            return Err(Error::Invariant(format!(
                "channel {}: request id {} reused while outstanding",
                self.ch, d.reqid
            )));
        }
        self.engine.push(Job::new(u64::from(d.reqid), s.rank, s.bank, s.row, d.is_write, s.cas.clone()));
        Ok(())
    }

    /// Runs one scheduler cycle.
    pub fn tick(&mut self, cycle: u64) -> Result<Option<SchedEvent>> {
        let now = cycle * DRAM_TCK_PS;
        while self.pending.front().is_some_and(|(t, _)| *t <= now) {
            let (_, batch) = self.pending.pop_front().expect("front exists");
            for d in batch {
                self.enqueue(d)?;
            }
        }
        if !self.is_idle(now) {
            self.busy_ps += DRAM_TCK_PS;
        }
        let Some(ev) = self.engine.tick(cycle) else { return Ok(None) };
        if !ev.last {
            return Ok(None);
        }
        let reqid = ev.token as u16;
        let d = self
            .waiting
            .remove(&reqid)
            .ok_or_else(|| Error::Invariant(format!("channel {}: completion for unknown id {reqid}", self.ch)))?;
        let first_cmd = ev.first_cmd * DRAM_TCK_PS;
        Ok(Some(if d.is_write {
            SchedEvent::WriteDone { reqid, first_cmd, done: ev.time * DRAM_TCK_PS }
        } else {
            let data_end = ev.data_end * DRAM_TCK_PS;
            self.returns.push_back(Ready { reqid, addr: d.addr, gran: d.gran, at: data_end });
            SchedEvent::ReadData { reqid, first_cmd, data_end }
        }))
    }

    /// Sends ready read data upstream if the link is free.
    pub fn flush_returns(&mut self, now: Ps) -> Result<Option<ReturnFlight>> {
        if now < self.up_free_at || !self.returns.front().is_some_and(|r| r.at <= now) {
            return Ok(None);
        }
        let seq = self.seq;
        self.seq = self.seq.wrapping_add(1);
        let (bytes, comp, n): (Vec<u8>, Composition, usize) = if self.mode == Mode::Bob {
            let r = self.returns.pop_front().expect("checked front");
            let p = BobPacket {
                desid: self.ch,
                pt: PacketType::ReadReturn,
                addr: r.addr & !63,
                data: payload(r.addr & !63, codec::LINE_BYTES),
            };
            let comp = codec::packet_bytes(Format::Bob, PacketType::ReadReturn, &[8], None);
            (codec::encode_bob(&p, seq)?, comp, 1)
        } else {
            let mut used = 0;
            let mut entries = Vec::new();
            while let Some(r) = self.returns.front() {
                let add = codec::RETURN_META_BYTES + usize::from(r.gran) * 8;
                if r.at > now || (!entries.is_empty() && used + add > self.max_payload) {
                    break;
                }
                used += add;
                let r = self.returns.pop_front().expect("checked front");
                entries.push(ReturnEntry {
                    reqid: r.reqid,
                    gran: r.gran,
                    data: payload(r.addr, usize::from(r.gran) * 8),
                });
            }
            let grans: Vec<u16> = entries.iter().map(|e| e.gran).collect();
            let head = PacketHead::new(self.ch, PacketType::ReadReturn, entries.len() as u16);
            let comp = codec::packet_bytes(Format::Message, PacketType::ReadReturn, &grans, None);
            (codec::encode_return(&head, seq, &entries)?, comp, entries.len())
        };
        debug_assert_eq!(comp.total(), bytes.len() as u64);
        let ser = link_cycles(bytes.len(), self.width_bits) * self.link_cycle_ps;
        self.up_free_at = now + ser;
        self.return_stats.add(n, &comp);
        Ok(Some(ReturnFlight { arrive_at: now + ser + self.sched_latency_ps, bytes }))
    }
}
