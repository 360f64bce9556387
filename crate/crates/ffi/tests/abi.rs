use std::ffi::{CStr, CString};
use std::ptr;

use mims_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mims_last_error()) }.to_string_lossy().into_owned()
}

fn small_config(mode: MimsMode) -> *mut MimsConfig {
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(mims_config_new(&mut cfg), MimsStatus::Ok);
        assert_eq!(mims_config_set_mode(cfg, mode), MimsStatus::Ok);
        for s in ["cores=2", "records_per_core=500"] {
            let s = CString::new(s).unwrap();
            assert_eq!(mims_config_set(cfg, s.as_ptr()), MimsStatus::Ok, "{}", last_error());
        }
    }
    cfg
}

#[test]
fn run_and_summarize() {
    let cfg = small_config(MimsMode::MiMul);
    let mut rep = ptr::null_mut();
    unsafe {
        assert_eq!(mims_run(cfg, &mut rep), MimsStatus::Ok, "{}", last_error());
        let mut s = MimsSummary::default();
        assert_eq!(mims_report_summary(rep, &mut s), MimsStatus::Ok);
        assert!(s.cycles > 0 && s.instructions > 0 && s.mem_requests > 0);
        assert!(s.requests_per_packet > 1.0);
        let mut json = ptr::null_mut();
        assert_eq!(mims_report_json(rep, &mut json), MimsStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        mims_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["mode"], "MI_MUL");
        assert_eq!(v["cycles"].as_u64(), Some(s.cycles));
        mims_report_free(rep);
        mims_config_free(cfg);
    }
    assert_eq!(last_error(), "");
}

#[test]
fn compare_normalizes_to_ddr() {
    let cfg = small_config(MimsMode::Ddr);
    let modes = [MimsMode::Ddr, MimsMode::MiMul];
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(mims_compare_json(cfg, modes.as_ptr(), modes.len(), &mut out), MimsStatus::Ok, "{}", last_error());
        let text = CStr::from_ptr(out).to_str().unwrap().to_owned();
        mims_string_free(out);
        mims_config_free(cfg);
        let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["speedup"].as_f64(), Some(1.0));
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let cfg = small_config(MimsMode::Ddr);
        let bad = CString::new("compression=single").unwrap();
        assert_eq!(mims_config_set(cfg, bad.as_ptr()), MimsStatus::Ok);
        assert_eq!(mims_config_validate(cfg), MimsStatus::Config);
        assert!(last_error().to_lowercase().contains("compression"), "{}", last_error());
        let mut rep = ptr::null_mut();
        assert_eq!(mims_run(cfg, &mut rep), MimsStatus::Config);
        assert!(rep.is_null());

        let unknown = CString::new("no_such_key=1").unwrap();
        assert_eq!(mims_config_set(cfg, unknown.as_ptr()), MimsStatus::Config);
        assert_eq!(mims_config_set(ptr::null_mut(), unknown.as_ptr()), MimsStatus::NullPointer);
        assert_eq!(mims_run(cfg, ptr::null_mut()), MimsStatus::NullPointer);
        mims_config_free(cfg);

        let mut c2 = ptr::null_mut();
        let toml = CString::new("mode = \"WARP\"").unwrap();
        assert_eq!(mims_config_from_toml(toml.as_ptr(), &mut c2), MimsStatus::Config);
        assert!(c2.is_null());

        mims_config_free(ptr::null_mut());
        mims_report_free(ptr::null_mut());
        mims_string_free(ptr::null_mut());
    }
}

#[test]
fn toml_round_trip() {
    unsafe {
        let cfg = small_config(MimsMode::Mi1);
        let mut text = ptr::null_mut();
        assert_eq!(mims_config_to_toml(cfg, &mut text), MimsStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(mims_config_from_toml(text, &mut back), MimsStatus::Ok, "{}", last_error());
        let mut again = ptr::null_mut();
        assert_eq!(mims_config_to_toml(back, &mut again), MimsStatus::Ok);
        assert_eq!(CStr::from_ptr(text), CStr::from_ptr(again));
        mims_string_free(text);
        mims_string_free(again);
        mims_config_free(cfg);
        mims_config_free(back);
    }
}

#[test]
fn packet_dump_and_crc_error() {
    use mims_core::codec::{self, PacketHead, PacketType, Rtmsg};
    let msgs = [Rtmsg { addr: 0x1000, gran: 2, tid: 3, to: 0, reqid: 9 }];
    let mut bytes = codec::encode_read(&PacketHead::new(1, PacketType::Read, 1), 4, &msgs, None).unwrap().bytes;
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(mims_packet_dump(bytes.as_ptr(), bytes.len(), ptr::null(), &mut out), MimsStatus::Ok);
        let text = CStr::from_ptr(out).to_str().unwrap().to_owned();
        mims_string_free(out);
        assert!(text.contains("addr=0x000000001000 gran=2"), "{text}");
        *bytes.last_mut().unwrap() ^= 0xff;
        let mut out = ptr::null_mut();
        assert_eq!(mims_packet_dump(bytes.as_ptr(), bytes.len(), ptr::null(), &mut out), MimsStatus::Codec);
        assert!(last_error().contains("CRC") || last_error().contains("crc"), "{}", last_error());
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(mims_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn c_program_links_against_the_header() {
    let Some(cc) =
        ["cc", "gcc", "clang"].into_iter().find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libmims_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
