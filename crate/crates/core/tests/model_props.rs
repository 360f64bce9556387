use mims_core::config::{Compression, SimConfig};
use mims_core::controller::{AddressMap, MapKind};
use mims_core::trace::{self, HitLevel, TraceRecord};
use mims_core::Mode;
use proptest::prelude::*;

fn map_kind() -> impl Strategy<Value = MapKind> {
    prop_oneof![Just(MapKind::Ddr), Just(MapKind::Mims)]
}

fn geometry() -> impl Strategy<Value = (usize, usize, usize)> {
    (0u32..3, 0u32..3, 0u32..4).prop_map(|(c, r, b)| (1 << c, 1 << r, 1 << b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn map_is_a_bijection(kind in map_kind(), (ch, rk, bk) in geometry(), x: u64) {
        let m = AddressMap::new(kind, ch, rk, bk);
        let addr = x % m.capacity();
        let parts = m.map(addr).unwrap();
        prop_assert!(usize::from(parts.channel) < ch);
        prop_assert!(usize::from(parts.rank) < rk);
        prop_assert!(usize::from(parts.bank) < bk);
        prop_assert_eq!(m.unmap(&parts), addr);
    }

    #[test]
    fn split_covers_request_exactly(kind in map_kind(), x: u64, gran in 1u16..=512) {
        let m = AddressMap::new(kind, 2, 2, 8);
        let addr = (x % (m.capacity() - 4096)) & !7;
        let segs = m.split(addr, gran).unwrap();
        let mut next = addr;
        for s in &segs {
            prop_assert_eq!(s.addr, next);
            prop_assert_eq!(s.addr / m.chunk_bytes(), (s.addr + u64::from(s.gran) * 8 - 1) / m.chunk_bytes());
            let units: u32 = s.cas.iter().map(|(_, mask)| mask.count_ones()).sum();
            match kind {
                MapKind::Mims => prop_assert_eq!(units, u32::from(s.gran)),
                MapKind::Ddr => prop_assert_eq!(s.cas.len(), 1),
            }
            let p = m.map(s.addr).unwrap();
            prop_assert_eq!((p.channel, p.rank, p.bank, p.row), (s.channel, s.rank, s.bank, s.row));
            next += u64::from(s.gran) * 8;
        }
        prop_assert_eq!(next, addr + u64::from(gran) * 8);
    }

    #[test]
    fn merging_conserves_bytes(
        recs in prop::collection::vec((0u32..20, 0u64..512, 1u16..=8, any::<bool>()), 1..400),
        window in 1usize..300,
    ) {
        let trace: Vec<TraceRecord> = recs
            .iter()
            .map(|&(gap, a, gran, w)| TraceRecord { gap, addr: a * 8, gran, is_write: w, hit_level: HitLevel::Mem, tid: 0 })
            .collect();
        let merged = trace::merge_trunks(&trace, window, 4096, 512);
        for dir in [false, true] {
            let mut before: Vec<u64> = units(&trace, dir);
            let mut after: Vec<u64> = units(&merged, dir);
            before.sort_unstable();
            after.sort_unstable();
            prop_assert_eq!(before, after);
        }
        for r in &merged {
            let cap = if r.is_write { 512 } else { 4096 };
            prop_assert!(u64::from(r.gran) * 8 <= cap);
        }
        prop_assert!(merged.len() <= trace.len());
    }

    #[test]
    fn config_round_trips_through_toml(
        mode in prop::sample::select(Mode::ALL.to_vec()),
        cores in 1usize..32,
        lat in 0u64..400,
        seed: u64,
        merge: bool,
    ) {
        let mut c = SimConfig { mode, cores, sched_latency_cycles: lat, seed, ..Default::default() };
        c.merge.enabled = merge;
        if mode == Mode::MiMul {
            c.compression = Compression::MultiOffline;
        }
        let text = c.to_toml();
        let back = SimConfig::from_toml(&text).unwrap();
        prop_assert_eq!(back.to_toml(), text);
        prop_assert_eq!(back, c);
    }
}

fn units(t: &[TraceRecord], write: bool) -> Vec<u64> {
    t.iter().filter(|r| r.is_write == write).flat_map(|r| (0..u64::from(r.gran)).map(move |i| r.addr + i * 8)).collect()
}

#[test]
fn compression_outside_mi_mul_is_rejected() {
    let c = SimConfig { mode: Mode::Ddr, compression: Compression::Single, ..Default::default() };
    assert!(c.validate().is_err());
}
