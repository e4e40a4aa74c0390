use std::fs;
use std::path::Path;

use lasermix::commands::{self, Ctx, ScanChoice};
use lasermix::config::RunConfig;
use lasermix::images::{self, GREEN, RED};
use lasermix::{run, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};
use lasermix_core::range::range_project;
use lasermix_core::synth::{self, SceneParams, SimOptions};
use lasermix_core::{ClassId, SensorConfig};

const SMALL: &[(&str, &str)] = &[
    ("sensor.width", "32"),
    ("sensor.num_beams", "16"),
    ("synth.n_train", "6"),
    ("synth.n_eval", "1"),
    ("split.labeled_fraction", "0.5"),
    ("train.iterations", "4"),
    ("train.checkpoint_every", "2"),
    ("train.eval_every", "2"),
];

fn small(extra: &[(&str, &str)]) -> RunConfig {
    let ov: Vec<(String, String)> = SMALL
        .iter()
        .chain(extra)
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    RunConfig::load(None, &ov).unwrap()
}

fn args(v: &[&str]) -> Vec<String> {
    std::iter::once("lasermix")
        .chain(v.iter().copied())
        .map(String::from)
        .collect()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\n  \"seed\": 1,\n  \"hyper\": {\"T\": }\n}\n").unwrap();
    let err = RunConfig::load(Some(&path), &[]).unwrap_err();
    assert!(format!("{err:#}").contains("line 3 column"), "{err:#}");
    let out = dir.path().join("o");
    assert_eq!(
        run(args(&[
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "synth"
        ])),
        EXIT_CONFIG
    );
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        run(args(&["--out", out, "--hyper.bogus", "1", "synth"])),
        EXIT_CONFIG
    );
    assert_eq!(
        run(args(&["--out", out, "--hyper.T", "1.5", "synth"])),
        EXIT_CONFIG
    );
    assert_eq!(
        run(args(&[
            "--out",
            out,
            "--partition.m",
            "0",
            "entropy-report"
        ])),
        EXIT_CONFIG
    );
    assert_eq!(run(args(&["--out", out, "no-such-command"])), EXIT_CONFIG);
    assert_eq!(run(args(&["--out", out, "--hyper.T"])), EXIT_CONFIG);
    assert_eq!(run(args(&["--help"])), EXIT_OK);
}

#[test]
fn runtime_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        run(args(&["--out", out, "stats", "/nonexistent/scan.bin"])),
        EXIT_RUNTIME
    );
    let args_lr: Vec<&str> = [
        "--out",
        out,
        "--hyper.lr",
        "1e200",
        "--sensor.width",
        "32",
        "--sensor.num_beams",
        "16",
    ]
    .into_iter()
    .chain([
        "--synth.n_train",
        "4",
        "--synth.n_eval",
        "1",
        "--split.labeled_fraction",
        "0.5",
        "train",
    ])
    .collect();
    assert_eq!(run(args(&args_lr)), EXIT_RUNTIME);
    let odd = dir.path().join("odd.bin");
    fs::write(&odd, [0u8; 17]).unwrap();
    assert_eq!(
        run(args(&["--out", out, "stats", odd.to_str().unwrap()])),
        EXIT_RUNTIME
    );
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    commands::synth(&Ctx {
        cfg: small(&[]),
        out: a.path().into(),
    })
    .unwrap();
    commands::synth(&Ctx {
        cfg: small(&[]),
        out: b.path().into(),
    })
    .unwrap();
    let ta = tree(a.path());
    assert_eq!(ta, tree(b.path()));
    let names: Vec<&str> = ta.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["label_map.json", "manifest.json", "split.json"] {
        assert!(names.contains(&want));
    }
    assert_eq!(
        names
            .iter()
            .filter(|n| n.starts_with("labeled/") && n.ends_with(".label"))
            .count(),
        3
    );
    assert_eq!(
        names
            .iter()
            .filter(|n| n.starts_with("unlabeled/") && n.ends_with(".label"))
            .count(),
        0
    );
    assert_eq!(
        names
            .iter()
            .filter(|n| n.starts_with("unlabeled_truth/"))
            .count(),
        3
    );
}

#[test]
fn trained_on_written_dataset_equals_in_memory() {
    let data = tempfile::tempdir().unwrap();
    commands::synth(&Ctx {
        cfg: small(&[]),
        out: data.path().into(),
    })
    .unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let from_mem = commands::train(
        &Ctx {
            cfg: small(&[]),
            out: a.path().into(),
        },
        None,
    )
    .unwrap();
    let dir = data.path().to_str().unwrap();
    let from_disk = commands::train(
        &Ctx {
            cfg: small(&[("data.dir", dir)]),
            out: b.path().into(),
        },
        None,
    )
    .unwrap();
    assert_eq!(from_mem, from_disk);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let straight = commands::train(
        &Ctx {
            cfg: small(&[]),
            out: a.path().into(),
        },
        None,
    )
    .unwrap();
    let ckpt = a.path().join("checkpoints/step_00000002.ckpt");
    let resumed = commands::train(
        &Ctx {
            cfg: small(&[]),
            out: b.path().into(),
        },
        Some(&ckpt),
    )
    .unwrap();
    assert_eq!(straight, resumed);
    assert_eq!(
        fs::read(a.path().join("checkpoints/final.ckpt")).unwrap(),
        fs::read(b.path().join("checkpoints/final.ckpt")).unwrap()
    );
    let full = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    let tail = fs::read_to_string(b.path().join("metrics.csv")).unwrap();
    assert_eq!(full.lines().count(), 5);
    assert_eq!(
        tail.lines().skip(1).collect::<Vec<_>>(),
        full.lines().skip(3).collect::<Vec<_>>()
    );
}

#[test]
fn sup_only_reports_zero_unlabeled_losses() {
    let a = tempfile::tempdir().unwrap();
    commands::train(
        &Ctx {
            cfg: small(&[("train.preset", "sup_only")]),
            out: a.path().into(),
        },
        None,
    )
    .unwrap();
    let metrics = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    for line in metrics.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[4], f[1], "{line}");
    }
    for f in [
        "iou.json",
        "eval.csv",
        "confusion_teacher.csv",
        "manifest.json",
    ] {
        assert!(a.path().join(f).exists(), "{f}");
    }
}

#[test]
fn eval_reproduces_training_report() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    commands::train(
        &Ctx {
            cfg: small(&[]),
            out: a.path().into(),
        },
        None,
    )
    .unwrap();
    commands::eval(
        &Ctx {
            cfg: small(&[]),
            out: b.path().into(),
        },
        &a.path().join("checkpoints/final.ckpt"),
    )
    .unwrap();
    assert_eq!(
        fs::read(a.path().join("iou.json")).unwrap(),
        fs::read(b.path().join("iou.json")).unwrap()
    );
}

#[test]
fn single_cell_ablation_equals_train() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    commands::train(
        &Ctx {
            cfg: small(&[]),
            out: a.path().into(),
        },
        None,
    )
    .unwrap();
    let extra = [
        ("ablate.presets", "[\"laser_mix\"]"),
        ("ablate.seeds", "[0]"),
        ("ablate.m_values", "[]"),
        ("ablate.ema_values", "[]"),
        ("ablate.t_values", "[]"),
    ];
    let rows = commands::ablate(&Ctx {
        cfg: small(&extra),
        out: b.path().into(),
    })
    .unwrap();
    assert_eq!(rows.len(), 1);
    let iou: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("iou.json")).unwrap()).unwrap();
    assert_eq!(
        rows[0].teacher_miou,
        iou["teacher"]["miou"].as_f64().unwrap()
    );
    assert_eq!(
        rows[0].student_miou,
        iou["student"]["miou"].as_f64().unwrap()
    );
}

#[test]
fn error_map_counts_agree_with_confusion() {
    let a = tempfile::tempdir().unwrap();
    let cfg = small(&[]);
    commands::train(
        &Ctx {
            cfg: cfg.clone(),
            out: a.path().into(),
        },
        None,
    )
    .unwrap();
    let b = tempfile::tempdir().unwrap();
    let v = commands::error_map(
        &Ctx {
            cfg,
            out: b.path().into(),
        },
        &a.path().join("checkpoints/final.ckpt"),
        ScanChoice::Eval(0),
    )
    .unwrap();
    let confusion = fs::read_to_string(a.path().join("confusion_teacher.csv")).unwrap();
    let (mut diag, mut total) = (0, 0);
    for line in confusion.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let n: u64 = f[2].parse().unwrap();
        total += n;
        if f[0] == f[1] {
            diag += n;
        }
    }
    assert_eq!(v["correct_points"].as_u64().unwrap(), diag);
    assert_eq!(v["incorrect_points"].as_u64().unwrap(), total - diag);
    // Aligned scans put every point in its own pixel.
    assert_eq!(v["range_green_pixels"], v["correct_points"]);
    assert_eq!(v["range_red_pixels"], v["incorrect_points"]);
    for f in [
        "range_error.ppm",
        "bev_error.ppm",
        "error_counts.json",
        "manifest.json",
    ] {
        assert!(b.path().join(f).exists(), "{f}");
    }
}

#[test]
fn perfect_and_all_wrong_predictions() {
    let sensor = SensorConfig {
        width: 64,
        num_beams: 16,
        ..SensorConfig::desk()
    };
    let (_, cloud) = synth::generate_scan(
        &SceneParams::default(),
        &sensor,
        &SimOptions::default(),
        4,
        0,
    )
    .unwrap();
    let truth = cloud.labels().unwrap().to_vec();
    let wrong: Vec<ClassId> = truth.iter().map(|c| ClassId((c.0 + 1) % 5)).collect();
    let (img, stats) = range_project(&cloud, &sensor, sensor.num_beams, sensor.width).unwrap();
    assert_eq!(stats.occupied, cloud.len());

    let (rv, c) = images::range_error_map(&img, &cloud, &truth);
    assert_eq!((c.correct, c.incorrect), (cloud.len(), 0));
    assert_eq!((rv.count(GREEN), rv.count(RED)), (cloud.len(), 0));
    let bev = images::bev_error_map(&cloud, &truth, 200.0, 100);
    assert_eq!(bev.count(RED), 0);
    assert!(bev.count(GREEN) > 0);

    let (rv, c) = images::range_error_map(&img, &cloud, &wrong);
    assert_eq!((c.correct, c.incorrect), (0, cloud.len()));
    assert_eq!((rv.count(GREEN), rv.count(RED)), (0, cloud.len()));
    let bev = images::bev_error_map(&cloud, &wrong, 200.0, 100);
    assert_eq!(bev.count(GREEN), 0);
}

#[test]
fn scan_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    commands::synth(&Ctx {
        cfg: small(&[]),
        out: data.clone(),
    })
    .unwrap();
    let scan = data.join("eval/000000.bin");
    let labels = data.join("eval/000000.label");
    let ctx = Ctx {
        cfg: small(&[]),
        out: dir.path().join("o"),
    };
    let s = commands::stats(&ctx, &scan, Some(&labels)).unwrap();
    assert!(s["points"].as_u64().unwrap() > 0);
    commands::project(&ctx, &scan, Some(&labels)).unwrap();
    commands::voxelize(&ctx, &scan, Some(&labels)).unwrap();
    let other = data.join("labeled").join(first_bin(&data.join("labeled")));
    commands::mix(
        &ctx,
        &scan,
        &other,
        Some(&labels),
        Some(&other.with_extension("label")),
    )
    .unwrap();
    let csv = commands::entropy_report(&Ctx {
        cfg: small(&[("entropy.n_scans", "2")]),
        out: dir.path().join("e"),
    })
    .unwrap();
    assert!(csv.starts_with("partition_kind,m,H_conditional_nats,H_marginal_nats"));
    for f in [
        "range.pgm",
        "labels.ppm",
        "projection.json",
        "voxels.csv",
        "mixed_a.bin",
        "mixed_b.label",
        "provenance_a.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
}

fn first_bin(dir: &Path) -> String {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".bin"))
        .collect();
    v.sort();
    v.remove(0)
}
