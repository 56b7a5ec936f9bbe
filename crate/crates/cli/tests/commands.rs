use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use tempfile::TempDir;

const SMOKE: &[&str] = &[
    "pretrain_id_epochs=2",
    "pretrain_cam_epochs=1",
    "cscm_epochs=1",
    "icl_epochs=1",
    "warmup_epochs=1",
    "decay_epochs=[]",
    "iters_per_epoch=2",
    "k=10",
];

fn sctreid(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sctreid"))
        .args(args)
        .env("SCTREID_OUTPUT_ROOT", out)
        .output()
        .expect("binary runs")
}

fn with_sets(base: &[&str], sets: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    for s in sets {
        v.push("--set".into());
        v.push(s.to_string());
    }
    v
}

fn run(args: &[String], out: &Path) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    sctreid(&refs, out)
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn synth(dir: &Path, seed: &str) {
    ok(&sctreid(&["synth", "--seed", seed], dir));
}

#[test]
fn synth_reports_sct_and_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let stdout = ok(&sctreid(&["synth", "--seed", "3"], a.path()));
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["is_sct"], true);
    synth(b.path(), "3");
    for name in ["source.jsonl", "target.jsonl", "query.jsonl", "gallery.jsonl", "sct_report.json"] {
        assert_eq!(read(&a.path().join(name)), read(&b.path().join(name)), "{name} differs");
    }
}

#[test]
fn unknown_key_is_a_usage_error_listing_valid_keys() {
    let dir = TempDir::new().unwrap();
    let o = sctreid(&["synth", "--seed", "1", "--set", "colour=blue"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("colour"), "{err}");
    assert!(err.contains("source_identities"), "{err}");
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let o = sctreid(
        &["train", "--seed", "1", "--data", dir.path().to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn smoke_train_logs_resumes_and_evaluates() {
    let data = TempDir::new().unwrap();
    synth(data.path(), "5");
    let out = TempDir::new().unwrap();
    let data_arg = data.path().to_str().unwrap();

    let started = Instant::now();
    let args = with_sets(&["train", "--seed", "5", "--data", data_arg], SMOKE);
    let summary: serde_json::Value = serde_json::from_str(ok(&run(&args, out.path())).trim()).unwrap();
    assert!(started.elapsed().as_secs() < 60);
    assert_eq!(summary["epochs"], 5);

    let log = read(&out.path().join("loss_log.jsonl"));
    let epochs: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, vec![0, 1, 2, 3, 4]);
    assert!(out.path().join("pseudo_labels/epoch-0004.jsonl").exists());

    // Stop early, then resume to completion; the result must match the uninterrupted run.
    let partial = TempDir::new().unwrap();
    ok(&run(&args, partial.path()));
    let ck_root = partial.path().join("checkpoints");
    let latest = read(&ck_root.join("LATEST"));
    assert!(latest.trim().ends_with("epoch-0005"), "{latest}");
    let resume_from = ck_root.join("epoch-0004");
    assert!(resume_from.exists());
    let resume = [
        "train",
        "--seed",
        "5",
        "--data",
        data_arg,
        "--resume",
        resume_from.to_str().unwrap(),
    ];
    let resumed: serde_json::Value =
        serde_json::from_str(ok(&sctreid(&resume, partial.path())).trim()).unwrap();
    assert_eq!(resumed, summary);
    let relog = read(&partial.path().join("loss_log.jsonl"));
    assert_eq!(relog, log);

    let eval = ["eval", "--seed", "5", "--data", data_arg];
    let metrics: serde_json::Value = serde_json::from_str(&ok(&sctreid(&eval, out.path()))).unwrap();
    let map = metrics["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert!(read(&out.path().join("cmc.svg")).starts_with("<svg"));
    assert_eq!(read(&out.path().join("metrics.json")), ok(&sctreid(&eval, out.path())));
}

#[test]
fn ablation_table_lists_the_ladder_and_reference() {
    let out = TempDir::new().unwrap();
    let args = with_sets(&["ablate", "--seed", "2"], SMOKE);
    let table = ok(&run(&args, out.path()));
    let labels = [
        "Baseline ",
        "Baseline+FRT ",
        "Baseline+FRT+IPL ",
        "Baseline+FRT+IPL+FDA ",
        "Baseline+FRT+IPL+FDA+ICL",
    ];
    let mut at = 0;
    for label in labels {
        let pos = table[at..].find(label).unwrap_or_else(|| panic!("{label} missing:\n{table}"));
        at += pos + label.len();
    }
    assert!(table.contains("66.8") && table.contains("83.0"), "{table}");
    assert!(table.contains("not reproduced"), "{table}");
    let json: serde_json::Value = serde_json::from_str(&read(&out.path().join("ablation.json"))).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn k_sweep_flags_degenerate_runs_and_rejects_oversized_k() {
    let data = TempDir::new().unwrap();
    synth(data.path(), "4");
    let data_arg = data.path().to_str().unwrap();
    let n = read(&data.path().join("target.jsonl")).lines().count() - 1;
    let out = TempDir::new().unwrap();

    let too_big = (n + 1).to_string();
    let args = with_sets(&["sweep-k", "--seed", "4", "--data", data_arg, "--k", &too_big], SMOKE);
    assert_eq!(run(&args, out.path()).status.code(), Some(2));

    let ks = format!("10,{n}");
    let args = with_sets(&["sweep-k", "--seed", "4", "--data", data_arg, "--k", &ks], SMOKE);
    let stdout = ok(&run(&args, out.path()));
    assert!(stdout.lines().nth(1).unwrap().contains("degenerate"), "{stdout}");
    assert!(!stdout.lines().next().unwrap().contains("degenerate"), "{stdout}");

    let json: serde_json::Value = serde_json::from_str(&read(&out.path().join("sweep_k.json"))).unwrap();
    let points = json["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    let svg = read(&out.path().join("sweep_k.svg"));
    for p in points {
        let k = p["k"].as_u64().unwrap();
        let map = p["metrics"]["map"].as_f64().unwrap();
        let rank1 = p["metrics"]["cmc"][0].as_f64().unwrap();
        for y in [map, rank1] {
            let marker = format!("<title>{k}: {y:.4}</title>");
            assert!(svg.contains(&marker), "{marker} missing from plot");
        }
    }
}
