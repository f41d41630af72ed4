use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spikefed_cli::output::{read_json, PerLabelReport, RunManifest};
use spikefed_cli::RunConfig;

const SMALL: &str = r#"
dataset = "blobs"
algorithm = "fedavg"
seed = 5
n_clients = 4
rounds = 3
local_epochs = 1
time_steps = 2
batch_size = 16
hidden = [16]
partition = "cnum:2"
per_class = 40
test_per_class = 10
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spikefed"));
    c.env_remove("FEDLEC_THREADS");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(run(&["run", s(&cfg), "--out", s(&a), "--workers", "1", "-q"]));
    ok(run(&["run", s(&cfg), "--out", s(&b), "--workers", "3", "-q"]));
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 4);
    assert_eq!(
        fs::read(a.join("checkpoints/final.flsn")).unwrap(),
        fs::read(b.join("checkpoints/final.flsn")).unwrap()
    );
}

#[test]
fn run_directory_is_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}checkpoint_every = 2\n");
    let cfg = write_config(tmp.path(), "a.toml", &text);
    let out = tmp.path().join("out");
    // a stale checkpoint from an earlier run must not survive
    fs::create_dir_all(out.join("checkpoints")).unwrap();
    fs::write(out.join("checkpoints/round-0099.flsn"), b"old").unwrap();
    ok(run(&["run", s(&cfg), "--out", s(&out), "-q"]));

    let manifest: RunManifest = read_json(&out.join("manifest.json")).unwrap();
    let parsed = RunConfig::load(&cfg).unwrap();
    assert_eq!(manifest.config_hash, parsed.hash());
    assert!(manifest.version.ends_with(&parsed.hash()[..12]));
    assert_eq!(RunConfig::parse(&manifest.config).unwrap(), parsed);
    for p in &manifest.outputs {
        assert!(out.join(p).exists(), "{} missing", p.display());
    }
    let mut ckpts: Vec<String> = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    ckpts.sort();
    assert_eq!(ckpts, ["final.flsn", "round-0002.flsn"]);

    let report: PerLabelReport = read_json(&out.join("per_label.json")).unwrap();
    assert_eq!(report.per_label_accuracy.len(), 8);
    assert_eq!(report.client_label_counts.len(), 4);
    for row in &report.client_label_counts {
        assert_eq!(row.iter().filter(|&&c| c > 0).count(), 2);
    }
}

#[test]
fn sweep_writes_one_directory_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("algorithm = \"fedavg\"", "algorithms = [\"fedavg\", \"fedprox\", \"fedlec\"]")
        .replace("seed = 5", "seeds = [0, 1, 2]")
        .replace("rounds = 3", "rounds = 1");
    let cfg = write_config(tmp.path(), "sweep.toml", &text);
    let out = tmp.path().join("sweep");
    ok(run(&["run", s(&cfg), "--out", s(&out), "-q"]));
    let manifest: RunManifest = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.outputs.len(), 9);
    for alg in ["fedavg", "fedprox", "fedlec"] {
        for seed in 0..3 {
            let d = out.join(format!("{alg}-seed{seed}"));
            assert!(d.join("metrics.csv").exists());
            assert!(d.join("manifest.json").exists());
        }
    }

    let table = tmp.path().join("cmp.csv");
    let res = ok(run(&["compare", s(&out), "--baseline", "fedavg", "--csv", s(&table)]));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("fedlec"), "{stdout}");
    let rows = fs::read_to_string(&table).unwrap();
    assert_eq!(rows.lines().count(), 10);
    assert!(rows.lines().filter(|l| l.starts_with("fedavg,")).all(|l| l.ends_with(",0")));
}

#[test]
fn seed_flag_overrides_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("seed = 5", "seeds = [0, 1]").replace("rounds = 3", "rounds = 1");
    let cfg = write_config(tmp.path(), "a.toml", &text);
    let out = tmp.path().join("o");
    ok(run(&["run", s(&cfg), "--out", s(&out), "--seed", "9", "-q"]));
    let manifest: RunManifest = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.seeds, [9]);
}

#[test]
fn compare_with_itself_and_mismatched_partitions() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let cfg_a = write_config(tmp.path(), "a.toml", SMALL);
    let cfg_b = write_config(tmp.path(), "b.toml", &SMALL.replace("cnum:2", "dir:0.5"));
    ok(run(&["run", s(&cfg_a), "--out", s(&a), "-q"]));
    ok(run(&["run", s(&cfg_b), "--out", s(&b), "-q"]));

    let res = ok(run(&["compare", s(&a), s(&a)]));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("+0.00"), "{stdout}");

    let res = run(&["compare", s(&a), s(&b)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("different partitions"));
}

#[test]
fn partition_report_prints_shares() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", SMALL);
    let res = ok(run(&["partition-report", s(&cfg)]));
    let stdout = String::from_utf8(res.stdout).unwrap();
    let rows: Vec<Vec<f64>> = stdout
        .lines()
        .skip(2)
        .map(|row| row.split_whitespace().skip(1).take(8).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for shares in &rows {
        assert_eq!(shares.iter().filter(|&&p| p > 0.0).count(), 2);
    }
    for label in 0..8 {
        let held: f64 = rows.iter().map(|r| r[label]).sum();
        assert!(held == 0.0 || (held - 100.0).abs() < 0.5, "label {label}: {held}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["run"]).status.code(), Some(1));

    let bad = write_config(tmp.path(), "bad.toml", &format!("{SMALL}colour = \"red\"\n"));
    let res = run(&["run", s(&bad), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("colour"));

    let bad = write_config(tmp.path(), "bad2.toml", &SMALL.replace("cnum:2", "cnum:0"));
    assert_eq!(run(&["run", s(&bad), "--out", s(&out)]).status.code(), Some(1));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(run(&["run", s(&missing), "--out", s(&out)]).status.code(), Some(1));

    let good = write_config(tmp.path(), "good.toml", SMALL);
    assert_eq!(run(&["run", s(&good), "--out", s(&out), "--workers", "0"]).status.code(), Some(1));
    let res = bin()
        .args(["run", s(&good), "--out", s(&out), "-q"])
        .env("FEDLEC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));

    // more clients than samples fails while running, not while parsing
    let starved = write_config(tmp.path(), "starved.toml", &SMALL.replace("n_clients = 4", "n_clients = 400"));
    assert_eq!(run(&["run", s(&starved), "--out", s(&out), "-q"]).status.code(), Some(2));
    assert_eq!(run(&["compare", s(tmp.path())]).status.code(), Some(2));
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&path).unwrap();
            assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg, "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
