use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

/// A shortened benchmark so each run takes a fraction of a second.
const QUICK: &str = "seed = 5
strategy = \"mnemonics\"

[base_training]
lr = 0.5
epochs = 80

[model_training]
lr = 0.5
epochs = 40

[exemplar]
outer_lr_new = 5.0
outer_lr_old = 0.1
outer_epochs = 4
num_splits = 2
lr_halving_period = 10

[exemplar.unroll]
steps = 5
inner_lr = 0.2
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mnemonics"));
    c.env_remove("MNEMONICS_OUT_ROOT");
    c
}

fn mnemonics(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_quick(dir: &Path, extra: &str) -> PathBuf {
    let cfg = write_config(dir, "quick.toml", &format!("{QUICK}{extra}"));
    let out = dir.join("out");
    let res = mnemonics(&["run", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out.join("seed-5")
}

#[test]
fn run_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let run = run_quick(tmp.path(), "");
    assert!(tmp.path().join("out/manifest.json").is_file());
    for f in ["config.resolved.toml", "records.jsonl", "timings.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    for i in 0..3 {
        assert!(run.join(format!("phase-{i}/model.txt")).is_file());
        assert!(run.join(format!("phase-{i}/exemplars.csv")).is_file());
    }
    let records = fs::read_to_string(run.join("records.jsonl")).unwrap();
    let lines: Vec<&str> = records.lines().collect();
    assert_eq!(lines.len(), 4, "three phase records and a summary");
    assert!(lines[3].contains("\"summary\":true"));
}

#[test]
fn reruns_and_snapshot_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let first = fs::read(run_quick(tmp.path(), "").join("records.jsonl")).unwrap();
    let second_dir = tmp.path().join("again");
    fs::create_dir(&second_dir).unwrap();
    let second = fs::read(run_quick(&second_dir, "").join("records.jsonl")).unwrap();
    assert_eq!(first, second);

    let snapshot = tmp.path().join("out/seed-5/config.resolved.toml");
    let replay = tmp.path().join("replay");
    assert_eq!(code(&mnemonics(&["run", s(&snapshot), "--out", s(&replay)])), 0);
    assert_eq!(fs::read(replay.join("seed-5/records.jsonl")).unwrap(), first);
    assert_eq!(
        fs::read(replay.join("seed-5/phase-2/exemplars.csv")).unwrap(),
        fs::read(tmp.path().join("out/seed-5/phase-2/exemplars.csv")).unwrap()
    );
}

#[test]
fn output_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "envrun.toml", QUICK);
    let root = tmp.path().join("root");
    let res = bin()
        .args(["run", s(&cfg), "--seed", "2"])
        .env("MNEMONICS_OUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    assert!(root.join("envrun/seed-2/records.jsonl").is_file());
}

#[test]
fn invalid_config_exits_2_and_names_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[loss]\nlambda = 1.5\ntemperature = 2.0\n");
    let res = mnemonics(&["run", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("lambda"));

    let typo = write_config(tmp.path(), "typo.toml", "sede = 1\n");
    let res = mnemonics(&["run", s(&typo), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("sede"));
}

#[test]
fn divergence_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "div.toml", "[base_training]\nlr = 1e12\nepochs = 50\n");
    let res = mnemonics(&["run", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn gradcheck_exit_codes() {
    assert_eq!(code(&mnemonics(&["gradcheck"])), 0);
    let coarse = mnemonics(&["gradcheck", "--eps", "0.1"]);
    assert_eq!(code(&coarse), 1);
    assert!(String::from_utf8_lossy(&coarse.stderr).contains("eps = 1e-1"));
}

#[test]
fn compare_needs_two_strategies() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", QUICK);
    let res = mnemonics(&[
        "compare",
        s(&cfg),
        "--strategies",
        "random",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn compare_table_is_independent_of_jobs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", QUICK);
    let table = |jobs: &str| {
        let out = tmp.path().join(format!("cmp-{jobs}"));
        let res = mnemonics(&["compare", s(&cfg), "--seeds", "3", "--jobs", jobs, "--out", s(&out)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        fs::read_to_string(out.join("compare.csv")).unwrap()
    };
    let serial = table("1");
    let rows: Vec<&str> = serial.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("random,3,"));
    assert!(rows[2].starts_with("mnemonics,3,"));
    assert_eq!(serial, table("3"));
}

fn roles(csv: &Path) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for line in fs::read_to_string(csv).unwrap().lines().skip(1) {
        *counts.entry(line.split(',').nth(2).unwrap().to_string()).or_insert(0) += 1;
    }
    counts
}

#[test]
fn dump_embeddings_roles() {
    let tmp = TempDir::new().unwrap();
    let run = run_quick(tmp.path(), "");
    assert_eq!(code(&mnemonics(&["dump-embeddings", s(&run), "--phase", "0"])), 0);
    let r = roles(&run.join("embeddings/phase-0.csv"));
    assert_eq!(r["data"], 1000);
    assert_eq!(r["exemplar"], 8);
    assert_eq!(r["exemplar-init"], 8);

    let cfg = write_config(tmp.path(), "h.toml", &QUICK.replace("\"mnemonics\"", "\"herding\""));
    let herd = tmp.path().join("herding");
    assert_eq!(code(&mnemonics(&["run", s(&cfg), "--out", s(&herd)])), 0);
    let run = herd.join("seed-5");
    assert_eq!(code(&mnemonics(&["dump-embeddings", s(&run), "--phase", "0"])), 0);
    let r = roles(&run.join("embeddings/phase-0.csv"));
    assert_eq!(
        r.keys().cloned().collect::<Vec<_>>(),
        vec!["data".to_string(), "exemplar".to_string()]
    );
}

#[test]
fn missing_phase_exits_4() {
    let tmp = TempDir::new().unwrap();
    let run = run_quick(tmp.path(), "");
    assert_eq!(code(&mnemonics(&["dump-embeddings", s(&run), "--phase", "7"])), 4);
    assert_eq!(
        code(&mnemonics(&[
            "dump-embeddings",
            s(&tmp.path().join("nowhere")),
            "--phase",
            "0"
        ])),
        4
    );
}

/// Per-class mean cosine and Euclidean distance between matching
/// `exemplar` and `exemplar-init` rows of an exemplars file.
fn recompute_drift(path: &Path) -> BTreeMap<usize, (f64, f64)> {
    let mut rows: BTreeMap<(usize, usize, String), Vec<f64>> = BTreeMap::new();
    for line in fs::read_to_string(path).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let values = f[4..].iter().map(|v| v.parse().unwrap()).collect();
        rows.insert((f[0].parse().unwrap(), f[1].parse().unwrap(), f[3].to_string()), values);
    }
    let mut sums: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for ((class, slot, role), cur) in &rows {
        if role != "exemplar" {
            continue;
        }
        let init = &rows[&(*class, *slot, "exemplar-init".to_string())];
        let euc = cur.iter().zip(init).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dot: f64 = cur.iter().zip(init).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = if cur == init {
            0.0
        } else {
            (1.0 - dot / (norm(cur) * norm(init))).max(0.0)
        };
        let e = sums.entry(*class).or_insert((0.0, 0.0, 0));
        e.0 += cos;
        e.1 += euc;
        e.2 += 1;
    }
    sums.into_iter()
        .map(|(c, (cos, euc, n))| (c, (cos / n as f64, euc / n as f64)))
        .collect()
}

#[test]
fn drift_table_matches_recomputation() {
    let tmp = TempDir::new().unwrap();
    let run = run_quick(tmp.path(), "");
    assert_eq!(code(&mnemonics(&["dump-embeddings", s(&run), "--phase", "1"])), 0);
    let expect = recompute_drift(&run.join("phase-1/exemplars.csv"));
    let table = fs::read_to_string(run.join("embeddings/drift-phase-1.csv")).unwrap();
    let mut seen = 0;
    for line in table.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (cos, euc) = expect[&(f[0] as usize)];
        assert!(
            (f[1] - cos).abs() <= 1e-12 && (f[2] - euc).abs() <= 1e-12,
            "{line} vs {cos}, {euc}"
        );
        seen += 1;
    }
    assert_eq!(seen, 4);
    assert!(expect.values().any(|&(_, e)| e > 0.0));

    let curve = fs::read_to_string(run.join("embeddings/drift-curve-phase-1.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 4, "header plus one row per outer epoch");
}
