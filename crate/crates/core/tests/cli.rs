use std::path::Path;
use std::process::{Command, Output};

use mims_core::codec::{self, PacketHead, PacketType, Rtmsg};

fn mims(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mims")).args(args).env_remove("MIMS_OUT_DIR").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mims(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_writes_csv_and_a_valid_command_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cmds = dir.path().join("cmds.txt");
    let csv = ok(&[
        "run",
        "--mode",
        "MI_MUL",
        "--cores",
        "2",
        "--records",
        "400",
        "--format",
        "csv",
        "--cmd-trace",
        p(&cmds),
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("workload,mode,"));
    assert!(lines[1].starts_with("gups,MI_MUL,"));
    let check = ok(&["validate-cmdtrace", p(&cmds)]);
    assert!(check.trim_end().ends_with(": ok"), "{check}");
}

#[test]
fn tampered_command_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cmds = dir.path().join("cmds.txt");
    ok(&["run", "--mode", "DDR", "--cores", "1", "--records", "200", "--cmd-trace", p(&cmds)]);
    let text = std::fs::read_to_string(&cmds).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let rd = lines.iter().position(|l| l.contains(" RD")).expect("a read in the trace");
    lines.remove(rd - 1);
    std::fs::write(&cmds, lines.join("\n")).unwrap();
    let out = mims(&["validate-cmdtrace", p(&cmds)]);
    assert!(!out.status.success());
}

#[test]
fn out_dir_env_names_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mims"))
        .args(["run", "--cores", "1", "--records", "100", "--format", "jsonl"])
        .env("MIMS_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].extension().unwrap(), "jsonl");
    let v: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&files[0]).unwrap().trim()).unwrap();
    assert_eq!(v["mode"], "MI_MUL");
}

#[test]
fn gen_merge_and_bench_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("stream.trace");
    let merged = dir.path().join("merged.trace");
    ok(&["gen-trace", "--workload", "stream", "--records", "2000", "-o", p(&raw)]);
    ok(&["merge-trace", p(&raw), "-o", p(&merged)]);
    let a = mims_core::trace::load_trace(&raw).unwrap();
    let b = mims_core::trace::load_trace(&merged).unwrap();
    assert!(b.len() < a.len());
    assert_eq!(a.iter().map(|r| r.bytes()).sum::<u64>(), b.iter().map(|r| r.bytes()).sum::<u64>());
    let bench = ok(&["compress-bench", p(&raw)]);
    assert!(bench.starts_with("scheme,diff_bits,ratio"), "{bench}");
    assert_eq!(bench.lines().count(), 6);
    let csv = ok(&["run", "--mode", "MI_MUL", "--trace", p(&merged), "--cores", "1", "--format", "csv"]);
    assert!(csv.lines().nth(1).unwrap().starts_with("trace,MI_MUL,"), "{csv}");
}

#[test]
fn pkt_dump_reads_stdin() {
    use std::io::Write;
    let msgs = [Rtmsg { addr: 0x2040, gran: 3, tid: 1, to: 0, reqid: 5 }];
    let enc = codec::encode_read(&PacketHead::new(0, PacketType::Read, 1), 2, &msgs, None).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_mims"))
        .arg("pkt-dump")
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    writeln!(child.stdin.take().unwrap(), "{}", codec::hex(&enc.bytes)).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("addr=0x000000002040 gran=3"), "{text}");
}

#[test]
fn bad_input_exits_nonzero_with_a_message() {
    for args in [
        &["run", "--mode", "DDR", "--compression", "single"][..],
        &["run", "--set", "no_such_key=3"],
        &["sweep", "--mode", "DDR", "--records", "10"],
        &["run", "--trace", "/nonexistent/trace"],
    ] {
        let out = mims(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "), "{args:?}");
    }
}

#[test]
fn toml_config_file_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, "mode = \"MI_1\"\ncores = 1\nrecords_per_core = 100\n").unwrap();
    let csv = ok(&["run", "--config", p(&cfg), "--format", "csv"]);
    assert!(csv.lines().nth(1).unwrap().starts_with("gups,MI_1,"), "{csv}");
}
