//! End-to-end runs of the `dltsim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SHORT: &str = r#"
name = "short"
platform = "quorum"
duration_s = 20.0
warmup_s = 2.0
guard_s = 3.0
"#;

fn dltsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dltsim"))
        .args(args)
        .env_remove("DLTSIM_GHG_INTENSITY")
        .output()
        .expect("binary runs")
}

fn scenario(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(csv: &Path) -> usize {
    fs::read_to_string(csv).unwrap().lines().count() - 1
}

#[test]
fn run_twice_with_the_same_seed_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SHORT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = dltsim(&["run", "--scenario", s(&sc), "--seed", "42", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ra, rb) = (a.join("short-seed42"), b.join("short-seed42"));
    for f in ["report.csv", "metrics.json", "summary.txt"] {
        assert_eq!(fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap(), "{f}");
    }
    assert!(fs::read_to_string(ra.join("effective_config.toml")).unwrap().contains("seed = 42"));
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SHORT);
    let out = dir.path().join("first");
    assert!(dltsim(&["run", "--scenario", s(&sc), "--out", s(&out), "--platform", "solana"]).status.success());
    let run = out.join("short-seed1");
    let again = dir.path().join("again");
    let o = dltsim(&["run", "--scenario", s(&run.join("effective_config.toml")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(run.join("report.csv")).unwrap(),
        fs::read(again.join("short-seed1/report.csv")).unwrap()
    );
}

#[test]
fn configuration_errors_exit_2_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = dltsim(&["run", "--scenario", s(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));

    let sc = scenario(dir.path(), "managers = 0\n");
    let o = dltsim(&["run", "--scenario", s(&sc), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("managers"), "{}", stderr(&o));

    let sc = scenario(dir.path(), "colour = \"red\"\n");
    let o = dltsim(&["run", "--scenario", s(&sc)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let sc = scenario(dir.path(), SHORT);
    let o = dltsim(&["sweep", "--scenario", s(&sc), "--managers", "4,0", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let o = dltsim(&["run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn narrowed_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SHORT);
    let out = dir.path().join("runs");
    let o = dltsim(&["sweep", "--scenario", s(&sc), "--managers", "4", "--load", "20", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out.join("short-sweep-seed1/grid.csv")), 1);
}

#[test]
fn default_sweep_has_twenty_rows_and_reruns_reuse_cells() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SHORT);
    let out = dir.path().join("runs");
    let sweep = |extra: &[&str]| {
        let mut args = vec!["sweep", "--scenario", s(&sc), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = dltsim(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert!(sweep(&[]).starts_with("20 rows, 20 cells simulated, 0 reused"));
    let grid = out.join("short-sweep-seed1/grid.csv");
    assert_eq!(data_rows(&grid), 20);
    let first = fs::read(&grid).unwrap();
    assert!(sweep(&[]).starts_with("20 rows, 0 cells simulated, 20 reused"));
    assert_eq!(fs::read(&grid).unwrap(), first);
    // only the missing cell is recomputed
    fs::remove_dir_all(out.join("short-sweep-seed1/cells/short-m8-l60-seed1")).unwrap();
    assert!(sweep(&[]).starts_with("20 rows, 1 cells simulated, 19 reused"));
    assert_eq!(fs::read(&grid).unwrap(), first);
    assert!(sweep(&["--force", "--managers", "4"]).starts_with("20 rows, 5 cells simulated, 0 reused"));
    assert_eq!(fs::read(&grid).unwrap(), first);
}

#[test]
fn carbon_table_and_intensity_override() {
    let o = dltsim(&["carbon"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 6);
    assert!(out.contains("\nfabric,0.06,0.060000,0.625,0.000375,0.54,0.000203\n"), "{out}");
    assert!(out.contains("\nquorum,0.06,0.060000,0.65,0.000390,0.54,0.000211\n"), "{out}");

    let o = Command::new(env!("CARGO_BIN_EXE_dltsim"))
        .arg("carbon")
        .env("DLTSIM_GHG_INTENSITY", "1.0")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("\nfabric,0.06,0.060000,0.625,0.000375,1,0.000375\n"), "{}", stdout(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_dltsim"))
        .arg("carbon")
        .env("DLTSIM_GHG_INTENSITY", "lots")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cpu = dir.path().join("cpu.csv");
    fs::write(&cpu, "platform,cpu_percent\nfabric,1\n").unwrap();
    let o = dltsim(&["carbon", "--cpu", s(&cpu)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("quorum"));
}

#[test]
fn report_regenerates_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SHORT);
    let out = dir.path().join("runs");
    assert!(dltsim(&["run", "--scenario", s(&sc), "--out", s(&out)]).status.success());
    assert!(dltsim(&["sweep", "--scenario", s(&sc), "--out", s(&out), "--managers", "4,8", "--load", "20"])
        .status
        .success());
    let files = [
        out.join("short-seed1/report.csv"),
        out.join("short-seed1/summary.txt"),
        out.join("short-sweep-seed1/grid.csv"),
    ];
    let before: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    for f in &files {
        fs::remove_file(f).unwrap();
    }
    for _ in 0..2 {
        let o = dltsim(&["report", "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let after: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
        assert_eq!(after, before);
    }
    let o = dltsim(&["report", "--out", s(dir.path().join("empty").as_path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn carbon_from_simulated_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), SHORT);
    let out = dir.path().join("runs");
    let o = dltsim(&["carbon", "--runs", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    for p in ["fabric", "quorum", "ethereum", "iota"] {
        let sub = out.join(p);
        assert!(dltsim(&["run", "--scenario", s(&sc), "--platform", p, "--out", s(&sub)]).status.success());
    }
    let o = dltsim(&["carbon", "--runs", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("solana"), "{}", stderr(&o));
    let sub = out.join("solana");
    assert!(dltsim(&["run", "--scenario", s(&sc), "--platform", "solana", "--out", s(&sub)]).status.success());
    let o = dltsim(&["carbon", "--runs", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let cpu = |platform: &str| -> f64 {
        let line = table.lines().find(|l| l.starts_with(&format!("{platform},"))).unwrap();
        line.split(',').nth(3).unwrap().parse().unwrap()
    };
    assert!(cpu("ethereum") > 80.0, "{table}");
    assert!(cpu("quorum") < 3.0, "{table}");
}
