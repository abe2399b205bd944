//! End-to-end tests of the `evpc` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evpc_core::event::{write_events_file, Event, EventSequence, Polarity};

fn evpc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evpc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn ev(x: u8, y: u8, t_raw: u32, p: Polarity) -> Event {
    Event { x, y, t_raw, p }
}

/// Events on the TSF=64 grid with unique timestamps.
fn grid_sequence(n: u32) -> EventSequence {
    let step = 1_000_000 / 64;
    let events = (0..n)
        .map(|i| {
            let p = if i % 2 == 0 {
                Polarity::Pos
            } else {
                Polarity::Neg
            };
            ev((i % 16) as u8, (i / 16) as u8, i / 8 * step, p)
        })
        .collect();
    EventSequence::new(events, 1e6)
}

fn write_small_dataset(root: &Path) -> PathBuf {
    let seq = grid_sequence(160);
    let class = root.join("widgets");
    fs::create_dir_all(&class).unwrap();
    write_events_file(&class.join("s0.bin"), &seq).unwrap();
    root.to_path_buf()
}

#[test]
fn e2p_then_p2e_round_trips_grid_events() {
    let dir = tempfile::tempdir().unwrap();
    let seq = grid_sequence(120);
    let input = dir.path().join("input.bin");
    write_events_file(&input, &seq).unwrap();

    let out = evpc(
        &[
            "e2p",
            "input.bin",
            "--tsf",
            "64",
            "--out-pos",
            "pos.ply",
            "--out-neg",
            "neg.ply",
            "--stats",
            "stats.json",
        ],
        dir.path(),
    );
    assert_success(&out);
    assert!(dir.path().join("stats.json").exists());

    let out = evpc(
        &[
            "p2e", "pos.ply", "neg.ply", "--tsf", "64", "--out", "back.bin",
        ],
        dir.path(),
    );
    assert_success(&out);
    assert_eq!(
        fs::read(dir.path().join("back.bin")).unwrap(),
        fs::read(&input).unwrap()
    );
}

#[test]
fn encode_decode_round_trips_ply() {
    let dir = tempfile::tempdir().unwrap();
    let ply = "ply\nformat ascii 1.0\nelement vertex 3\nproperty int x\nproperty int y\nproperty int z\nend_header\n0 0 0\n3 4 5\n7 7 7\n";
    fs::write(dir.path().join("cloud.ply"), ply).unwrap();

    let out = evpc(&["encode", "cloud.ply", "--out", "cloud.eoc"], dir.path());
    assert_success(&out);

    let out = evpc(&["decode", "cloud.eoc", "--out", "back.ply"], dir.path());
    assert_success(&out);
    assert_eq!(
        fs::read_to_string(dir.path().join("back.ply")).unwrap(),
        ply
    );
}

#[test]
fn external_identity_codec_through_encode() {
    let dir = tempfile::tempdir().unwrap();
    let ply = "ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nend_header\n1 2 3\n";
    fs::write(dir.path().join("cloud.ply"), ply).unwrap();
    let out = evpc(
        &[
            "encode",
            "cloud.ply",
            "--out",
            "copy.bin",
            "--external",
            "cp {in} {bin}; cp {bin} {out}",
        ],
        dir.path(),
    );
    assert_success(&out);
    assert_eq!(
        fs::read_to_string(dir.path().join("copy.bin")).unwrap(),
        ply
    );
}

#[test]
fn metrics_of_identical_files_is_infinite() {
    let dir = tempfile::tempdir().unwrap();
    let seq = grid_sequence(80);
    write_events_file(&dir.path().join("a.bin"), &seq).unwrap();
    let out = evpc(
        &[
            "metrics", "--ref", "a.bin", "--dec", "a.bin", "--metric", "e2e", "--peak", "100",
        ],
        dir.path(),
    );
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"psnr_e2e\": \"inf\""), "{text}");
}

#[test]
fn bdrate_of_identical_curves_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "rate,score\n1.0,30\n2.0,35\n4.0,38.5\n8.0,41\n";
    fs::write(dir.path().join("a.csv"), csv).unwrap();
    fs::write(dir.path().join("b.csv"), csv).unwrap();
    let out = evpc(&["bdrate", "a.csv", "b.csv"], dir.path());
    assert_success(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).expect("JSON report");
    let bd = report["bd_rate_pct"].as_f64().unwrap();
    assert!(bd.abs() < 1e-9);
}

#[test]
fn topk_reports_percentages() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pred.csv"), "a,cat,dog\nb,dog,cat\n").unwrap();
    fs::write(dir.path().join("truth.csv"), "a,cat\nb,cat\n").unwrap();
    let out = evpc(
        &[
            "topk",
            "--pred",
            "pred.csv",
            "--truth",
            "truth.csv",
            "--k",
            "1,2",
        ],
        dir.path(),
    );
    assert_success(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["top1_pct"].as_f64(), Some(50.0));
    assert_eq!(report["top2_pct"].as_f64(), Some(100.0));
}

#[test]
fn characterize_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_small_dataset(dir.path());
    let out = evpc(
        &[
            "characterize",
            ".",
            "--out",
            "reports",
            "--tsf",
            "64",
            "--k",
            "5",
            "--bins",
            "10",
        ],
        dir.path(),
    );
    assert_success(&out);
    assert!(dir.path().join("reports/stats.csv").exists());
    assert!(dir.path().join("reports/dataset_summary.json").exists());
}

#[test]
fn tensor_exports_single_file() {
    let dir = tempfile::tempdir().unwrap();
    let seq = grid_sequence(60);
    write_events_file(&dir.path().join("s.bin"), &seq).unwrap();
    let out = evpc(
        &[
            "tensor",
            "s.bin",
            "--out",
            "s.evt.tensor",
            "--bins",
            "4",
            "--height",
            "16",
            "--width",
            "16",
        ],
        dir.path(),
    );
    assert_success(&out);
    let tensor =
        evpc_core::tensor::read_tensor(fs::File::open(dir.path().join("s.evt.tensor")).unwrap())
            .unwrap();
    // values pass through f32 on disk
    assert!((tensor.sum() - 60.0).abs() < 1e-3);
}

#[test]
fn run_job_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    write_small_dataset(dir.path());
    let config = serde_json::json!({
        "pipeline": "decompressed",
        "tsf": 64,
        "codec": {"type": "builtin", "mode": "lossless"},
        "duplicate_method": "nn",
        "metric": "e2e",
        "dataset_root": ".",
        "out_dir": "out",
        "peak": 300.0,
    });
    fs::write(
        dir.path().join("job.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();
    let out = evpc(&["run", "--config", "job.json"], dir.path());
    assert_success(&out);
    let rows = fs::read_to_string(dir.path().join("out/rows.csv")).unwrap();
    assert!(rows.contains("widgets/s0.bin"));
    assert!(rows.contains("lossless"));
    assert!(dir.path().join("out/summary.json").exists());
}

#[test]
fn sweep_writes_rows_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    // One noisy sequence so lossy rate points are distinct.
    let events: Vec<Event> = (0..800)
        .map(|i| {
            let p = if i % 3 == 0 {
                Polarity::Pos
            } else {
                Polarity::Neg
            };
            ev(
                (i * 7 % 64) as u8,
                (i * 13 % 48) as u8,
                (i * 991) % 400_000,
                p,
            )
        })
        .collect();
    let seq = EventSequence::new(events, 1e6);
    let class = dir.path().join("k");
    fs::create_dir_all(&class).unwrap();
    write_events_file(&class.join("s.bin"), &seq).unwrap();

    let out = evpc(
        &[
            "sweep",
            ".",
            "--out",
            "sweep",
            "--tsf",
            "64",
            "--truncate",
            "0,1",
            "--metric",
            "e2e",
            "--peak",
            "400",
        ],
        dir.path(),
    );
    assert_success(&out);
    assert!(dir.path().join("sweep/rows.csv").exists());
    assert!(dir.path().join("sweep/aggregates.csv").exists());
    assert!(dir.path().join("sweep/curve_octree-tsf64.csv").exists());
}

#[test]
fn invalid_invocation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = evpc(&["p2e"], dir.path()); // missing required args
    assert_eq!(out.status.code(), Some(2));

    let seq = grid_sequence(10);
    write_events_file(&dir.path().join("in.bin"), &seq).unwrap();
    let out = evpc(
        &[
            "e2p",
            "in.bin",
            "--tsf",
            "0",
            "--out-pos",
            "p.ply",
            "--out-neg",
            "n.ply",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn partial_failures_exit_1_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_small_dataset(dir.path());
    fs::write(dir.path().join("widgets/broken.bin"), [0u8; 3]).unwrap();
    let out = evpc(
        &[
            "characterize",
            ".",
            "--out",
            "reports",
            "--tsf",
            "64",
            "--k",
            "5",
            "--bins",
            "10",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let manifest = fs::read_to_string(dir.path().join("reports/failures.json")).unwrap();
    assert!(manifest.contains("broken.bin"));
}

#[test]
fn prob_method_without_scores_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ply = "ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nend_header\n0 0 0\n";
    fs::write(dir.path().join("p.ply"), ply).unwrap();
    fs::write(dir.path().join("n.ply"), ply).unwrap();
    let out = evpc(
        &[
            "p2e",
            "p.ply",
            "n.ply",
            "--dup-method",
            "prob",
            "--out",
            "x.bin",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}
