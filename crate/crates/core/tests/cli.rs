use std::path::Path;
use std::process::{Command, Output};

use gcl_core::gcle::write_gcle;
use gcl_core::dataset::SliceMeta;
use ndarray::Array2;

fn gcl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const TINY: &[&str] = &[
    "--set", "synth.patients=4",
    "--set", "synth.slices_per_volume=4",
    "--set", "synth.h=3",
    "--set", "synth.w=3",
    "--set", "train.epochs=2",
    "--set", "train.hidden=8",
    "--set", "train.rep_dim=4",
    "--set", "train.proj_hidden=4",
    "--set", "train.proj_dim=3",
];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(TINY);
    v
}

#[test]
fn gen_data_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    ok(&gcl(&["gen-data", "--seed", "7", "--out", "a"], dir.path()));
    ok(&gcl(&["gen-data", "--seed", "7", "--out", "b"], dir.path()));
    ok(&gcl(&["gen-data", "--seed", "8", "--out", "c"], dir.path()));
    let read = |d: &str| std::fs::read(dir.path().join(d).join("data.bin")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn select_prints_a_greedy_trace() {
    let dir = tempfile::tempdir().unwrap();
    let emb = Array2::from_shape_fn((12, 3), |(i, j)| ((i * 5 + j * 7) % 11) as f64);
    let metas: Vec<SliceMeta> = (0..12)
        .map(|i| SliceMeta {
            slice_id: i,
            patient_id: i / 6,
            volume_id: i / 6,
            slice_index: i % 6,
        })
        .collect();
    let path = dir.path().join("e.gcle");
    write_gcle(&path, &emb, &metas).unwrap();
    let out = ok(&gcl(
        &["select", "--embeddings", "e.gcle", "--budget", "5", "--initial", "empty"],
        dir.path(),
    ));
    let lines: Vec<serde_json::Value> =
        out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0]["min_dist"].is_null());
    let d: Vec<f64> = lines[1..].iter().map(|l| l["min_dist"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[1] <= w[0]));
    for (rank, l) in lines.iter().enumerate() {
        assert_eq!(l["rank"].as_u64().unwrap() as usize, rank);
    }

    let warm = ok(&gcl(
        &["select", "--embeddings", "e.gcle", "--budget", "2", "--initial", "0,3"],
        dir.path(),
    ));
    assert_eq!(warm.lines().count(), 2);
    assert!(!warm.contains("null"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gcl(&["gen-data", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(gcl(&[], dir.path()).status.code(), Some(2));
    assert_eq!(gcl(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(gcl(&["gen-data", "--set", "nope=1"], dir.path()).status.code(), Some(2));
    assert_eq!(gcl(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.gcle"), b"NOPE\x01\0\0\0\0\0\0\0\0\0\0\0").unwrap();
    let o = gcl(&["select", "--embeddings", "bad.gcle", "--budget", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
    let o = gcl(&["run-rounds", "--data", "missing-dir"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn print_config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&gcl(&["--print-config", "--seed", "11", "--set", "loss.tau=0.2"], dir.path()));
    assert!(text.contains("seed = 11\n"));
    assert!(text.contains("loss.tau = 0.2\n"));
    std::fs::write(dir.path().join("run.cfg"), &text).unwrap();
    let again = ok(&gcl(&["--print-config", "--config", "run.cfg"], dir.path()));
    assert_eq!(text, again);
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&gcl(&["verify"], dir.path()));
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}

#[test]
fn train_embed_stats_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    ok(&gcl(&with_tiny(&["gen-data", "--out", "d"]), dir.path()));
    ok(&gcl(
        &with_tiny(&["train-encoder", "--data", "d", "--out", "m", "--dump-epoch", "0"]),
        dir.path(),
    ));
    let m = dir.path().join("m");
    assert!(m.join("encoder.ckpt").exists());
    assert!(m.join("epoch_0.json").exists());
    assert_eq!(std::fs::read_to_string(m.join("history.csv")).unwrap().lines().count(), 3);
    ok(&gcl(
        &with_tiny(&["embed", "--data", "d", "--checkpoint", "m/encoder.ckpt", "--out", "m"]),
        dir.path(),
    ));
    let (emb, metas) = gcl_core::gcle::read_gcle(&m.join("embeddings.gcle")).unwrap();
    assert_eq!(emb.dim(), (32, 4));
    assert_eq!(metas.len(), 32);

    let stats: serde_json::Value =
        serde_json::from_str(&ok(&gcl(&["stats", "--data", "d"], dir.path()))).unwrap();
    let d = stats["dataset"].as_f64().unwrap();
    let a = stats["adjacent"].as_f64().unwrap();
    assert!(d > a);
    let on_emb: serde_json::Value = serde_json::from_str(&ok(&gcl(
        &["stats", "--embeddings", "m/embeddings.gcle"],
        dir.path(),
    )))
    .unwrap();
    assert!(on_emb["volume"].is_number());
}

#[test]
fn run_rounds_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_tiny(&["run-rounds", "--out", "r", "--set", "plan.repeats=2"]);
    let summary = ok(&gcl(&args, dir.path()));
    let r = dir.path().join("r");
    assert_eq!(std::fs::read_to_string(r.join("summary.csv")).unwrap(), summary);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(r.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 3 * 2 * 8);
    let timings: serde_json::Value =
        serde_json::from_slice(&std::fs::read(r.join("timings.json")).unwrap()).unwrap();
    assert_eq!(timings.as_array().unwrap().len(), 3 * 2);
}

#[test]
fn ablate_emits_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_tiny(&[
        "ablate", "--out", "a",
        "--set", "plan.repeats=1",
        "--set", "plan.fractions=0.05,0.1",
        "--set", "ablate.terms=ntxent,patient,volume",
    ]);
    args.extend(["--set", "synth.patients=8"]);
    let csv = ok(&gcl(&args, dir.path()));
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "coreset",
            "ntxent",
            "patient",
            "volume",
            "ntxent+patient",
            "ntxent+volume",
            "patient+volume",
            "ntxent+patient+volume"
        ]
    );
    assert!(csv.contains("ntxent+patient+volume,1,0.05,0.35,0,"));
}
