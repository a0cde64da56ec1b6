use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const KEY: &str = "000102030405060708090a0b0c0d0e0f";
const NONCE: &str = "f0e0d0c0b0a090807060504030201000";

fn scfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scfp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scfp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn asm_writes_a_program_file() {
    let out = tmp("ifelse.json");
    let o = scfp(&["asm", &data("ifelse.s"), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.exists());
    assert!(stdout(&o).contains("patch_words=2"));
}

#[test]
fn asm_reports_line_numbers() {
    let src = tmp("bad.s");
    std::fs::write(&src, "main: ADDI r1, r0, 1\n  JMPP nowhere\n  HALT\n").unwrap();
    let o = scfp(&["asm", s(&src), "-o", s(&tmp("bad.json"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn unprotected_build_has_no_slots() {
    let o = scfp(&["asm", &data("ifelse.s"), "--unprotected", "-o", s(&tmp("plain.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("patch_words=0"));
}

#[test]
fn link_reports_one_patch_for_the_merge() {
    for (placement, patches) in [("spanning-tree", 1), ("convention", 2)] {
        let img = tmp(&format!("ifelse-{placement}.img"));
        let o = scfp(&[
            "link", &data("ifelse.s"), "-o", s(&img), "--preset", "micro", "--key", KEY, "--nonce", NONCE,
            "--placement", placement,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains(&format!("patches={patches}\n")), "{}", stdout(&o));
    }
}

#[test]
fn aee_uses_six_word_slots() {
    let o = scfp(&["link", &data("ifelse.s"), "-o", s(&tmp("aee.img")), "--preset", "aee", "--key", KEY, "--nonce", NONCE]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("slot_words=6"));
}

#[test]
fn missing_nonce_is_generated_and_echoed() {
    let o = scfp(&["link", &data("ifelse.s"), "-o", s(&tmp("fresh.img")), "--key", KEY]);
    assert_eq!(o.status.code(), Some(0));
    let line = stdout(&o).lines().find(|l| l.starts_with("nonce=")).unwrap().to_string();
    assert!(line.ends_with("(generated)") && line.len() == "nonce=".len() + 32 + " (generated)".len());
}

#[test]
fn linking_is_byte_identical() {
    let (a, b) = (tmp("det-a.img"), tmp("det-b.img"));
    for p in [&a, &b] {
        let o = scfp(&["link", &data("ifelse.s"), "-o", s(p), "--key", KEY, "--nonce", NONCE]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

fn linked(name: &str) -> PathBuf {
    let img = tmp(name);
    let o = scfp(&["link", &data("ifelse.s"), "-o", s(&img), "--key", KEY, "--nonce", NONCE]);
    assert_eq!(o.status.code(), Some(0));
    img
}

#[test]
fn genuine_run_halts() {
    let img = linked("run.img");
    let o = scfp(&["run", s(&img), "--key", KEY]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("status=HALTED"));
}

#[test]
fn wrong_key_is_a_security_event() {
    let img = linked("wrong.img");
    let o = scfp(&["run", s(&img), "--key", "ff0102030405060708090a0b0c0d0e0f"]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.contains("status=INVALID_INSTR") || text.contains("status=REDUNDANCY_FAIL"), "{text}");
    let cycle: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("detection_cycle="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(cycle <= 8, "{text}");
}

#[test]
fn irq_schedule_drives_interrupts_and_trace() {
    let img = tmp("irq.img");
    let o = scfp(&["link", &data("tick.s"), "-o", s(&img), "--key", KEY, "--nonce", NONCE]);
    assert_eq!(o.status.code(), Some(0));
    let prog = tmp("irq.json");
    assert_eq!(scfp(&["asm", &data("tick.s"), "-o", s(&prog)]).status.code(), Some(0));
    let sched = tmp("irq.txt");
    std::fs::write(&sched, "# cycle vector\n3 tick\n9 0x20\n").unwrap();
    let trace = tmp("irq.trace");
    let o = scfp(&[
        "run", s(&img), "--key", KEY, "--irq", s(&sched), "--symbols", s(&prog), "--trace", s(&trace),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("interrupts=2"), "{}", stdout(&o));
    let lines = std::fs::read_to_string(&trace).unwrap();
    assert!(lines.lines().count() >= 8);
    assert!(lines.lines().all(|l| l.split(' ').count() == 5));
}

#[test]
fn bench_table_and_averages() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../bench/benchdir");
    let o = scfp(&["bench", s(&dir), "--preset", "ie"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    let row = |name: &str| -> (f64, f64) {
        let l = text.lines().find(|l| l.starts_with(&format!("bench={name} "))).unwrap();
        let get = |k: &str| -> f64 {
            l.split(' ').find_map(|kv| kv.strip_prefix(&format!("{k}="))).unwrap().parse().unwrap()
        };
        (get("size_overhead"), get("time_overhead"))
    };
    assert_eq!(row("straight"), (0.0, 0.0));
    let names = ["bubble", "crc_loop", "crc_unrolled", "dispatch", "straight"];
    let mean_size = names.iter().map(|n| row(n).0).sum::<f64>() / names.len() as f64;
    assert!((row("average").0 - mean_size).abs() < 1e-6);
    assert!(row("crc_unrolled").1 < row("crc_loop").1);
}

#[test]
fn attack_echoes_seed_and_defaults_to_micro() {
    let o = scfp(&["attack", "skip", "--trials", "200", "--seed", "77"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("seed=77\n"));
    assert!(text.contains("expected=3.906250e-3"), "{text}");
}

#[test]
fn attack_refuses_full_strength_guessing() {
    let o = scfp(&["attack", "skip", "--preset", "aee"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2^-168"));
}

#[test]
fn params_gate() {
    assert_eq!(scfp(&["params", "--preset", "ie"]).status.code(), Some(0));
    let f = tmp("weak.cfg");
    std::fs::write(&f, "mode=ape\nperm=keccak-p50\nrounds=12\nr=44\nx=6\ni=32\nn=12\ns=4\n").unwrap();
    let o = scfp(&["params", "--params", s(&f)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("capacity below 2s"), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(scfp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(scfp(&["--help"]).status.code(), Some(0));
}
