use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use image::{GrayImage, Luma, RgbImage};
use mvrec::dataset::DatasetManifest;
use mvrec::embedding::{EmbeddingFile, EmbeddingRecord};
use mvrec::eval::ResultTable;
use mvrec::geometry::read_views_file;
use serde_json::Value;

fn mvrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvrec")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

/// Exit code and the parsed single-line error.
fn failure(o: &Output) -> (i32, Value) {
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "stderr: {err}");
    (o.status.code().unwrap(), serde_json::from_str(err.trim()).unwrap())
}

/// Two defect types in one category, `per_type` images each, one or two blobs per mask.
fn write_dataset(root: &Path, per_type: usize, with_masks: bool) {
    for (t, ty) in ["crack", "scratch"].iter().enumerate() {
        let test = root.join("part/test").join(ty);
        let gt = root.join("part/ground_truth").join(ty);
        std::fs::create_dir_all(&test).unwrap();
        std::fs::create_dir_all(&gt).unwrap();
        for i in 0..per_type {
            RgbImage::from_pixel(40, 30, image::Rgb([t as u8 * 90, i as u8 * 7, 60]))
                .save(test.join(format!("{i:03}.png")))
                .unwrap();
            if !with_masks {
                continue;
            }
            let mut m = GrayImage::new(40, 30);
            let (x0, y0) = (2 + 3 * i as u32, 2 + 2 * t as u32);
            for y in y0..y0 + 4 {
                for x in x0..x0 + 4 {
                    m.put_pixel(x, y, Luma([255]));
                }
            }
            if i % 2 == 0 {
                m.put_pixel(38, 28, Luma([255]));
            }
            m.save(gt.join(format!("{i:03}_mask.png"))).unwrap();
        }
    }
    std::fs::create_dir_all(root.join("part/test/good")).unwrap();
}

fn build(dir: &Path, out: &str) -> PathBuf {
    let manifest = dir.join(out);
    let o = mvrec(&[
        "dataset-build",
        "--root",
        p(&dir.join("data")),
        "--out",
        p(&manifest),
        "--min-train-per-class",
        "2",
    ]);
    stdout_json(&o);
    manifest
}

fn dataset(dir: &Path) -> PathBuf {
    write_dataset(&dir.join("data"), 4, true);
    build(dir, "manifest.json")
}

/// Embedding file covering `views`, each class pointing along its own axis.
fn write_embeddings(manifest: &Path, views: &Path, out: &Path) -> EmbeddingFile {
    let m = DatasetManifest::read(manifest).unwrap();
    let views = read_views_file(views).unwrap();
    let mut f = EmbeddingFile::new(4, "fixture");
    for v in &views {
        let class = m.class_index(&m.instance(&v.instance_id).unwrap().class_label).unwrap();
        let mut values = vec![0.1f32; 4];
        values[class] = 1.0 + v.view_id as f32 * 0.01;
        f.push(EmbeddingRecord {
            instance_id: v.instance_id.clone(),
            view_id: v.view_id,
            values,
        })
        .unwrap();
    }
    f.write(out).unwrap();
    f
}

const SMALL: &[&str] = &["--synthetic-instances", "8", "--channels", "8", "--iterations", "20"];

#[test]
fn synthetic_smoke_run_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let start = Instant::now();
    let o = mvrec(&["eval", "--backend", "synthetic", "--out-dir", p(&out)]);
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    let t = ResultTable::from_json(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    // 8 classifiers × K∈{1,3,5} × 5 seeds on one 5-way category.
    assert_eq!(t.rows().len(), 8 * 3 * 5);
    assert!(t.rows().iter().all(|r| r.total > 0));
    for ext in ["csv", "txt"] {
        assert!(out.join(format!("results.{ext}")).is_file());
    }
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("[synthetic_dataset]"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Zip-Adapter-F"));
}

#[test]
fn every_classifier_gives_one_row_per_group() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut args = vec![
        "eval",
        "--backend",
        "synthetic",
        "--classifiers",
        "zip,zip_f,tip,tip_f,knn,protonet,linearprob,clip_adapter",
        "--shots",
        "1,2",
        "--seeds",
        "0,1",
        "--format",
        "json",
        "--out-dir",
        p(&out),
    ];
    args.extend_from_slice(SMALL);
    assert!(mvrec(&args).status.success());
    let t = ResultTable::from_json(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    let mut groups = std::collections::BTreeMap::new();
    for r in t.rows() {
        groups.entry((r.category.clone(), r.k, r.seed)).or_insert_with(Vec::new).push(r.classifier);
    }
    assert_eq!(groups.len(), 4);
    for kinds in groups.values() {
        assert_eq!(kinds.len(), 8);
    }
    assert!(!out.join("results.csv").exists());
}

#[test]
fn insufficient_shots_surface_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["eval", "--backend", "synthetic", "--shots", "5", "--out-dir", p(dir.path())];
    args.extend_from_slice(SMALL);
    let (code, err) = failure(&mvrec(&args));
    assert_eq!(code, 2);
    assert_eq!(err["error"], "InsufficientShots");
    assert!(err["message"].as_str().unwrap().contains("4 train instances, 5 requested"));
    assert!(!dir.path().join("results.json").exists());
}

#[test]
fn missing_mask_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("data"), 2, false);
    let o = mvrec(&["dataset-build", "--root", p(&dir.path().join("data")), "--out", p(&dir.path().join("m.json"))]);
    let (code, err) = failure(&o);
    assert_eq!(code, 2);
    assert_eq!(err["error"], "MissingMask");
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn dataset_build_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let a = dataset(dir.path());
    let b = build(dir.path(), "again.json");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m = DatasetManifest::read(&a).unwrap();
    assert_eq!(m.classes, ["part/crack", "part/scratch"]);
    // Two blobs on even-numbered images.
    assert_eq!(m.instances.len(), 12);
}

#[test]
fn views_default_and_single() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let full = dir.path().join("v27.jsonl");
    let j = stdout_json(&mvrec(&["views", "--manifest", p(&manifest), "--out", p(&full)]));
    assert_eq!(j["views_per_instance"], 27);
    assert_eq!(j["records"], 12 * 27);
    assert_eq!(read_views_file(&full).unwrap().len(), 12 * 27);
    let single = dir.path().join("v1.jsonl");
    let j = stdout_json(&mvrec(&[
        "views",
        "--manifest",
        p(&manifest),
        "--out",
        p(&single),
        "--num-scale",
        "1",
        "--num-offset",
        "1",
    ]));
    assert_eq!(j["records"], 12);
    assert_eq!(read_views_file(&single).unwrap().len(), 12);
}

#[test]
fn embedding_file_validation_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let views = dir.path().join("views.jsonl");
    stdout_json(&mvrec(&["views", "--manifest", p(&manifest), "--out", p(&views), "--num-scale", "1"]));
    let emb = dir.path().join("e.mve1");
    let mut file = write_embeddings(&manifest, &views, &emb);
    let inputs = ["--manifest", p(&manifest), "--views", p(&views), "--embeddings", p(&emb)];

    let mut args = vec!["embed-validate"];
    args.extend_from_slice(&inputs);
    let j = stdout_json(&mvrec(&args));
    assert_eq!(j["records"], 12 * 9);
    assert_eq!(j["channels"], 4);
    assert_eq!(j["backbone_tag"], "fixture");

    let out = dir.path().join("out");
    let mut args = vec!["eval", "--classifiers", "zip,protonet", "--shots", "1,2", "--out-dir", p(&out)];
    args.extend_from_slice(&inputs);
    let o = mvrec(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = ResultTable::from_json(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert!(t.rows().iter().all(|r| r.correct == r.total));

    file.records.remove(5);
    file.write(&emb).unwrap();
    let mut args = vec!["embed-validate"];
    args.extend_from_slice(&inputs);
    let (code, err) = failure(&mvrec(&args));
    assert_eq!(code, 2);
    assert_eq!(err["error"], "MissingViews");

    std::fs::write(&emb, b"MVE1junk").unwrap();
    let (code, err) = failure(&mvrec(&args));
    assert_eq!(code, 2);
    assert_eq!(err["error"], "CorruptFile");
}

#[test]
fn eval_outputs_are_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["eval", "--backend", "synthetic", "--classifiers", "zip_f,linearprob", "--shots", "1", "--out-dir", p(&out)];
        args.extend_from_slice(SMALL);
        let o = mvrec(&args);
        assert!(o.status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["results.json", "results.csv", "results.txt", "config.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "classifiers = [\"protonet\"]\nshots = [3]\nseeds = [7]\n[paths]\noutput_dir = \"from_config\"\n[synthetic_dataset]\ninstances_per_class = 8\n",
    )
    .unwrap();
    let o = mvrec(&["--config", p(&cfg), "eval", "--backend", "synthetic", "--shots", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("from_config");
    let t = ResultTable::from_json(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert!(t.rows().iter().all(|r| r.k == 1 && r.seed == 7));
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("shots = [1]") || echo.contains("shots = [\n    1,\n]"), "{echo}");
}

#[test]
fn bad_input_is_reported_as_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "shot = [1]\n").unwrap();
    let (code, err) = failure(&mvrec(&["--config", p(&cfg), "eval", "--backend", "synthetic"]));
    assert_eq!((code, err["error"].as_str().unwrap()), (2, "InvalidConfig"));

    let (code, err) = failure(&mvrec(&["eval", "--classifiers", "zipp"]));
    assert_eq!((code, err["error"].as_str().unwrap()), (2, "UsageError"));

    let (code, err) = failure(&mvrec(&["eval", "--backend", "synthetic", "--num-offset", "4"]));
    assert_eq!((code, err["error"].as_str().unwrap()), (2, "InvalidConfig"));

    let (code, err) = failure(&mvrec(&["eval"]));
    assert_eq!((code, err["error"].as_str().unwrap()), (2, "InvalidArgument"));
}

#[test]
fn help_documents_config_keys() {
    for args in [&["--help"][..], &["eval", "--help"]] {
        let o = mvrec(args);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for key in ["zip_beta", "[classifier.train]", "normalize_before_average", "min_train_per_class", "instances_per_class"] {
            assert!(text.contains(key), "{args:?} lacks {key}");
        }
    }
}

#[test]
fn ablation_tables_and_feature_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut args = vec![
        "eval", "--backend", "synthetic", "--ablation", "--classifiers", "zip", "--shots", "1", "--seeds", "0",
        "--format", "csv", "--out-dir", p(&out),
    ];
    args.extend_from_slice(SMALL);
    let o = mvrec(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let training = std::fs::read_to_string(out.join("ablation_training.csv")).unwrap();
    for setting in ["cache+zip", "frozen"] {
        assert!(training.contains(setting));
    }
    let augmentation = std::fs::read_to_string(out.join("ablation_augmentation.csv")).unwrap();
    assert!(augmentation.contains("scale+offset"));
    assert!(!out.join("ablation_region_context.csv").exists());

    let csv = dir.path().join("features.csv");
    let j = stdout_json(&mvrec(&[
        "export-features", "--backend", "synthetic", "--synthetic-instances", "8", "--channels", "8", "--out", p(&csv),
    ]));
    assert_eq!(j["rows"], 40);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("instance_id,class,f0,"));
    assert_eq!(text.lines().count(), 41);
}
