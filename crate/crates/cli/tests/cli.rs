use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchseg::graphseg::SegmentSet;
use patchseg::maskgen::read_mask_png;
use patchseg::pseudolabel::CropsManifest;
use patchseg::tensorio::{
    read_tensor, save_manifest, write_tensor, DatasetManifest, FeatureTensor, ImageEntry,
};
use patchseg::UNLABELED;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "patchseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One-image dataset with the given patch features on a `side x side` grid.
fn single_image(dir: &Path, side: usize, rows: &[Vec<f32>], num_classes: Option<usize>) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    write_tensor(&FeatureTensor::from_rows(rows).unwrap(), dir.join("x.dtf")).unwrap();
    let manifest = DatasetManifest {
        images: vec![ImageEntry {
            image_id: "x".into(),
            source_path: "x.png".into(),
            height: 20,
            width: 30,
            resized_side: (side * 8) as u32,
            patch_side: 8,
            grid_rows: side as u32,
            grid_cols: side as u32,
            feature_path: "x.dtf".into(),
            gt_mask_path: None,
        }],
        label_merge: None,
        num_classes,
    };
    let path = dir.join("manifest.json");
    save_manifest(&manifest, &path).unwrap();
    path
}

fn synth(dir: &Path, images: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--out-dir",
        s(&data),
        "--images",
        &images.to_string(),
    ]);
    data.join("manifest.json")
}

#[test]
fn two_blob_fixture_gives_two_valid_segments() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Vec<f32>> = (0..16)
        .map(|i| {
            if i % 4 < 2 {
                vec![1.0, 0.1]
            } else {
                vec![-1.0, 0.1]
            }
        })
        .collect();
    let m = single_image(dir.path(), 4, &rows, None);
    let out = dir.path().join("runs");
    let stdout = ok(&["segment", "--manifest", s(&m), "--out", s(&out)]);
    assert!(stdout.contains("2 segments, 100.0% valid"), "{stdout}");
    let set: SegmentSet =
        serde_json::from_str(&fs::read_to_string(out.join("default/segments/x.json")).unwrap())
            .unwrap();
    assert_eq!(set.segments.len(), 2);
    assert!(set.segments.iter().all(|s| s.valid && s.patch_count == 8));
    let crops: CropsManifest =
        serde_json::from_str(&fs::read_to_string(out.join("default/crops.json")).unwrap()).unwrap();
    assert_eq!(crops.crops.len(), 2);
    assert_eq!(crops.fill_value, 0);
}

#[test]
fn negative_affinity_gives_noisy_singletons() {
    let dir = tempfile::tempdir().unwrap();
    // tetrahedron vertices: every pairwise dot product is -1
    let rows = vec![
        vec![1.0, 1.0, 1.0],
        vec![1.0, -1.0, -1.0],
        vec![-1.0, 1.0, -1.0],
        vec![-1.0, -1.0, 1.0],
    ];
    let m = single_image(dir.path(), 2, &rows, Some(2));
    let out = dir.path().join("runs");
    let stdout = ok(&["segment", "--manifest", s(&m), "--out", s(&out)]);
    assert!(stdout.contains("4 segments, 0.0% valid"), "{stdout}");
    let err = fails_with(&["label", "--manifest", s(&m), "--out", s(&out)], 3);
    assert!(err.contains("no valid segments"), "{err}");
}

#[test]
fn missing_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails_with(
        &["segment", "--manifest", s(&dir.path().join("nope.json"))],
        2,
    );
    assert!(err.contains("does not exist"), "{err}");
    fails_with(&["segment"], 2);
}

#[test]
fn bad_config_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 1);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"tua": 3}"#).unwrap();
    fails_with(&["segment", "--config", s(&cfg)], 2);
    fails_with(&["segment", "--manifest", s(&m), "--theta", "0.2"], 2);
    fails_with(&["segment", "--manifest", s(&m), "--k", "0"], 2);
    fails_with(&["segment", "--manifest", s(&m), "--k", "256"], 2);
}

#[test]
fn corrupt_features_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 2);
    fs::write(dir.path().join("data/features/img001.dtf"), b"DTF2garbage").unwrap();
    let err = fails_with(
        &[
            "segment",
            "--manifest",
            s(&m),
            "--out",
            s(&dir.path().join("r")),
        ],
        3,
    );
    assert!(err.contains("bad magic"), "{err}");
}

#[test]
fn eval_without_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Vec<f32>> = (0..16)
        .map(|i| {
            if i % 4 < 2 {
                vec![1.0, 0.1]
            } else {
                vec![-1.0, 0.1]
            }
        })
        .collect();
    let m = single_image(dir.path(), 4, &rows, Some(2));
    let out = dir.path().join("runs");
    ok(&["pipeline", "--manifest", s(&m), "--out", s(&out)]);
    let report = fs::read_to_string(out.join("default/run_report.json")).unwrap();
    assert!(report.contains("eval skipped"), "{report}");
    let err = fails_with(&["eval", "--manifest", s(&m), "--out", s(&out)], 3);
    assert!(err.contains("ground truth required for eval"), "{err}");
}

#[test]
fn stages_match_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 6);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["pipeline", "--manifest", s(&m), "--out", s(&a)]);
    for stage in ["segment", "label", "mask", "eval"] {
        ok(&[stage, "--manifest", s(&m), "--out", s(&b)]);
    }
    for rel in [
        "eval/report.json",
        "clusters.json",
        "masks/img003_pseudo.png",
        "centroids.dtf",
    ] {
        assert_eq!(
            fs::read(a.join("default").join(rel)).unwrap(),
            fs::read(b.join("default").join(rel)).unwrap(),
            "{rel}"
        );
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(b.join("default/run_report.json")).unwrap())
            .unwrap();
    for stage in ["segment", "label", "mask", "eval"] {
        assert!(report["stage_seconds"][stage].is_number(), "{stage}");
    }
    assert!(report["total_segments"].as_u64().unwrap() > 0);
    assert!(report["valid_percent"].is_number());
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn single_cluster_labels_everything_zero() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 3);
    let out = dir.path().join("runs");
    ok(&["segment", "--manifest", s(&m), "--out", s(&out)]);
    ok(&["label", "--manifest", s(&m), "--out", s(&out), "--k", "1"]);
    ok(&["mask", "--manifest", s(&m), "--out", s(&out), "--k", "1"]);
    let mask = read_mask_png(out.join("default/masks/img000_pseudo.png")).unwrap();
    assert!(mask.labeled_pixels() > 0);
    assert!(mask.labels().iter().all(|&l| l == 0 || l == UNLABELED));
}

#[test]
fn external_crop_features_follow_crop_order() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 5);
    let first = dir.path().join("first");
    ok(&["pipeline", "--manifest", s(&m), "--out", s(&first)]);
    let run = first.join("default");

    // feed the patch-mean features back in, rows and crop records permuted together
    let features = read_tensor(run.join("crop_features.dtf")).unwrap();
    let mut crops: CropsManifest =
        serde_json::from_str(&fs::read_to_string(run.join("crops.json")).unwrap()).unwrap();
    let n = crops.crops.len();
    let perm: Vec<usize> = (0..n).rev().collect();
    let permuted_features = features.select_rows(&perm).unwrap();
    crops.crops = perm
        .iter()
        .enumerate()
        .map(|(row, &old)| {
            let mut c = crops.crops[old].clone();
            c.crop_feature_row = Some(row);
            c
        })
        .collect();

    let second = dir.path().join("second");
    ok(&["segment", "--manifest", s(&m), "--out", s(&second)]);
    let run2 = second.join("default");
    fs::write(
        run2.join("crops.json"),
        serde_json::to_string(&crops).unwrap(),
    )
    .unwrap();
    let ext = dir.path().join("ext.dtf");
    write_tensor(&permuted_features, &ext).unwrap();
    for stage in ["label", "mask"] {
        ok(&[
            stage,
            "--manifest",
            s(&m),
            "--out",
            s(&second),
            "--crop-features",
            s(&ext),
        ]);
    }
    for i in 0..5 {
        let name = format!("masks/img{i:03}_pseudo.png");
        assert_eq!(
            fs::read(run.join(&name)).unwrap(),
            fs::read(run2.join(&name)).unwrap()
        );
    }

    // missing file is named
    let missing = dir.path().join("absent.dtf");
    let err = fails_with(
        &[
            "label",
            "--manifest",
            s(&m),
            "--out",
            s(&second),
            "--crop-features",
            s(&missing),
        ],
        2,
    );
    assert!(err.contains("absent.dtf"), "{err}");

    // row count must match the crops manifest
    let short = dir.path().join("short.dtf");
    write_tensor(&features.select_rows(&[0, 1]).unwrap(), &short).unwrap();
    let err = fails_with(
        &[
            "label",
            "--manifest",
            s(&m),
            "--out",
            s(&second),
            "--crop-features",
            s(&short),
        ],
        3,
    );
    assert!(
        err.contains(&format!("crops manifest lists {n} crops")),
        "{err}"
    );
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"manifest": "data/manifest.json", "out": "runs", "run_id": "cfg", "tau": 1000}"#,
    )
    .unwrap();
    let stdout = ok(&["segment", "--config", s(&cfg)]);
    assert!(stdout.contains("0.0% valid"), "{stdout}");
    let stdout = ok(&["segment", "--config", s(&cfg), "--tau", "5"]);
    assert!(!stdout.contains(" 0.0% valid"), "{stdout}");
    assert!(dir.path().join("runs/cfg/segments/img000.json").is_file());
}

#[test]
fn export_and_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 6);
    let out = dir.path().join("runs");
    ok(&["pipeline", "--manifest", s(&m), "--out", s(&out), "--color"]);
    assert!(out.join("default/masks/img000_color.png").is_file());

    let stdout = ok(&["export-denoise", "--manifest", s(&m), "--out", s(&out)]);
    assert!(stdout.contains("kept"), "{stdout}");
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(out.join("default/denoise/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["ignore_index"], 255);
    assert_eq!(manifest["num_classes"], 4);

    let clusters: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("default/clusters.json")).unwrap())
            .unwrap();
    let first = &clusters["crops"][0];
    let image = first["image_id"].as_str().unwrap();
    let segment = first["segment_id"].as_u64().unwrap().to_string();
    let stdout = ok(&[
        "retrieve",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--image",
        image,
        "--segment",
        &segment,
        "--top",
        "3",
    ]);
    let found: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let found = found.as_array().unwrap();
    assert_eq!(found.len(), 3);
    let d: Vec<f64> = found
        .iter()
        .map(|f| f["distance"].as_f64().unwrap())
        .collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    // nearest neighbours of a well-separated synthetic segment share its cluster
    assert_eq!(found[0]["cluster"], first["cluster"]);

    let err = fails_with(
        &[
            "retrieve",
            "--manifest",
            s(&m),
            "--out",
            s(&out),
            "--image",
            "nope",
            "--segment",
            "0",
        ],
        3,
    );
    assert!(err.contains("not a clustered"), "{err}");
}

#[test]
fn label_merge_table_overrides_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 4);
    let table = dir.path().join("merge.json");
    fs::write(
        &table,
        r#"{"label_merge": {"0": 0, "1": 1, "2": 1, "3": 2},
            "num_classes": 3,
            "class_names": ["ground", "thing", "other"]}"#,
    )
    .unwrap();
    let out = dir.path().join("runs");
    ok(&[
        "pipeline",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--label-merge",
        s(&table),
    ]);
    let svg = fs::read_to_string(out.join("default/eval/iou.svg")).unwrap();
    assert!(svg.contains("ground") && svg.contains("other"), "{svg}");
    let csv = fs::read_to_string(out.join("default/eval/per_class.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3, "{csv}");

    let err = fails_with(
        &[
            "eval",
            "--manifest",
            s(&m),
            "--out",
            s(&out),
            "--label-merge",
            s(&dir.path().join("none.json")),
        ],
        2,
    );
    assert!(err.contains("none.json"), "{err}");
}
