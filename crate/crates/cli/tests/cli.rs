mod common;

use std::fs;

use common::{dronenet, path_str, spot_image, toy_dataset};
use dronenet_cli::manifest::RunManifest;
use dronenet_core::groundtruth::{read_dmap, write_image};
use dronenet_core::net::{init_for_training, save_model};
use dronenet_core::{DroneNet, DroneNetConfig, Shape, Tensor};
use serde_json::Value;

fn tiny_model_file(dir: &std::path::Path, fusion_bias: Option<f32>) -> std::path::PathBuf {
    let mut m = DroneNet::<f32>::build(DroneNetConfig::tiny(2)).unwrap();
    match fusion_bias {
        Some(b) => m.params_mut().pop().unwrap().data_mut().fill(b),
        None => init_for_training(&mut m, 9),
    }
    let p = dir.join("model.sonn");
    save_model(&m, &p).unwrap();
    p
}

#[test]
fn make_gt_writes_one_map_per_image_with_matching_sums() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, images) = toy_dataset(dir.path(), 2, 24, 32);
    let out = dir.path().join("gt");
    let r = dronenet(&[
        "make-gt",
        "--annotations",
        path_str(&ann),
        "--images",
        path_str(&images),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(", ").collect();
        assert_eq!(fields[0], format!("img{i}.ppm"));
        let n: usize = fields[1].parse().unwrap();
        let sum: f64 = fields[2].parse().unwrap();
        assert!((sum - n as f64).abs() < 1e-3, "{line}");
        let map = read_dmap(out.join(format!("img{i}.dmap"))).unwrap();
        assert!((map.count() - n as f64).abs() < 1e-3);
        assert_eq!((map.height(), map.width()), (24, 32));
    }
    let manifest = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "make-gt");
    assert_eq!(manifest.checksums.len(), 3);
    assert_eq!(manifest.config["sigma"], "7");
}

#[test]
fn make_gt_is_idempotent_and_forwards_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, images) = toy_dataset(dir.path(), 2, 24, 24);
    let run = |out: &str, sigma: &str| {
        let out = dir.path().join(out);
        let r = dronenet(&[
            "make-gt",
            "--annotations",
            path_str(&ann),
            "--images",
            path_str(&images),
            "--sigma",
            sigma,
            "--out",
            path_str(&out),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        fs::read(out.join("img1.dmap")).unwrap()
    };
    let a = run("a", "7");
    let again = run("a", "7");
    let wide = run("b", "15");
    assert_eq!(a, again);
    assert_ne!(a, wide);
}

#[test]
fn make_gt_reports_missing_images_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, images) = toy_dataset(dir.path(), 3, 16, 16);
    fs::remove_file(images.join("img1.ppm")).unwrap();
    let out = dir.path().join("gt");
    let r = dronenet(&[
        "make-gt",
        "--annotations",
        path_str(&ann),
        "--images",
        path_str(&images),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("img1.ppm"), "{}", r.stderr);
    assert!(out.join("img0.dmap").exists() && out.join("img2.dmap").exists());
    assert!(!out.join("img1.dmap").exists());
    let manifest = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.exit_code, 2);
}

#[test]
fn predict_zero_weight_model_counts_the_bias() {
    let dir = tempfile::tempdir().unwrap();
    let black = dir.path().join("black.ppm");
    write_image(&Tensor::<f32>::zeros(Shape::new(1, 3, 32, 32)), &black).unwrap();
    for (bias, expected) in [(0.0f32, "0.00"), (0.25, "16.00"), (-1.0, "0.00")] {
        let model = tiny_model_file(dir.path(), Some(bias));
        let out = dir.path().join(format!("pred{bias}"));
        let r = dronenet(&[
            "predict",
            "--model",
            path_str(&model),
            "--image",
            path_str(&black),
            "--out",
            path_str(&out),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert_eq!(r.stdout.trim(), expected);
    }
}

#[test]
fn predict_count_matches_written_map() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model_file(dir.path(), None);
    let image = dir.path().join("scene.ppm");
    write_image(&spot_image(40, 48, &[]), &image).unwrap();
    let out = dir.path().join("pred");
    let r = dronenet(&[
        "predict",
        "--model",
        path_str(&model),
        "--image",
        path_str(&image),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let printed: f64 = r.stdout.trim().parse().unwrap();
    let map = read_dmap(out.join("scene.dmap")).unwrap();
    assert!((printed - map.count()).abs() <= 0.01);
    assert_eq!((map.height(), map.width()), (10, 12));
    let heat = fs::read(out.join("scene.pgm")).unwrap();
    assert!(heat.starts_with(b"P5\n12 10\n255\n"));
    assert_eq!(heat.len(), b"P5\n12 10\n255\n".len() + 120);
}

#[test]
fn channel_mismatch_is_descriptive() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model_file(dir.path(), None);
    let gray = dir.path().join("gray.pgm");
    write_image(&Tensor::<f32>::zeros(Shape::new(1, 1, 16, 16)), &gray).unwrap();
    let r = dronenet(&[
        "predict",
        "--model",
        path_str(&model),
        "--image",
        path_str(&gray),
        "--out",
        path_str(&dir.path().join("o")),
    ]);
    assert_eq!(r.code, 2);
    assert!(
        r.stderr.contains("3-channel") && r.stderr.contains("1 channel"),
        "{}",
        r.stderr
    );
}

#[test]
fn evaluate_emits_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model_file(dir.path(), None);
    let (ann, images) = toy_dataset(dir.path(), 2, 16, 16);
    let out = dir.path().join("eval");
    let r = dronenet(&[
        "evaluate",
        "--model",
        path_str(&model),
        "--annotations",
        path_str(&ann),
        "--images",
        path_str(&images),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let json: Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    for key in [
        "mae",
        "game",
        "ssim",
        "psnr",
        "model_size_bytes",
        "gmacs",
        "inference_ms",
        "throughput_fps",
    ] {
        let v = &json[key];
        assert!(!v.is_null(), "{key} missing");
    }
    assert_eq!(json["images"], 2);
    assert_eq!(json["game"]["1"], json["mae"]);
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "epochs = 2\nlearnig_rate = 0.1\n").unwrap();
    let r = dronenet(&[
        "--config",
        path_str(&cfg),
        "gradcheck",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("learnig_rate"), "{}", r.stderr);

    let r = dronenet(&[
        "gradcheck",
        "--set",
        "sigma=wide",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("`sigma`"), "{}", r.stderr);

    let r = dronenet(&["train", "--bogus-flag"]);
    assert_eq!(r.code, 1);

    let r = dronenet(&["predict", "--out", path_str(dir.path())]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("model"), "{}", r.stderr);
}

#[test]
fn overrides_are_last_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "gradcheck_height = 6\nsigma = 3\n").unwrap();
    let out = dir.path().join("o");
    let r = dronenet(&[
        "--config",
        path_str(&cfg),
        "gradcheck",
        "--set",
        "sigma=4",
        "--set",
        "sigma=5",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.config["sigma"], "5");
    assert_eq!(m.config["gradcheck_height"], "6");
}

#[test]
fn gradcheck_passes_on_the_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/dronenet.conf");
    let r = dronenet(&["--config", cfg, "gradcheck", "--out", path_str(dir.path())]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert_eq!(r.stdout.matches("PASS").count(), 2);
    assert!(dir.path().join("gradcheck.json").exists());
}

#[test]
fn gradcheck_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let r = dronenet(&[
        "gradcheck",
        "--set",
        "gradcheck_tolerance=1e-14",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(r.code, 4, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("FAIL"));
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, images) = toy_dataset(dir.path(), 3, 16, 16);
    let r = dronenet(&[
        "train",
        "--annotations",
        path_str(&ann),
        "--images",
        path_str(&images),
        "--set",
        "architecture=tiny2",
        "--set",
        "learning_rate=1e30",
        "--epochs",
        "3",
        "--out",
        path_str(&dir.path().join("t")),
    ]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("non-finite"), "{}", r.stderr);
}

#[test]
fn seeded_single_thread_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, images) = toy_dataset(dir.path(), 4, 16, 16);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let r = dronenet(&[
            "train",
            "--annotations",
            path_str(&ann),
            "--images",
            path_str(&images),
            "--set",
            "architecture=tiny2",
            "--epochs",
            "2",
            "--seed",
            "11",
            "--threads",
            "1",
            "--out",
            path_str(&out),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let m = RunManifest::read(&out.join("manifest.json")).unwrap();
        let by_name: Vec<(String, String)> = m
            .checksums
            .iter()
            .map(|(p, h)| (p.rsplit('/').next().unwrap().to_string(), h.clone()))
            .collect();
        by_name
    };
    let a = run("a");
    let b = run("b");
    assert!(a.iter().any(|(n, _)| n == "final.sonn"));
    let deterministic = |v: &[(String, String)]| -> Vec<(String, String)> {
        v.iter()
            .filter(|(n, _)| n != "epoch_times.csv")
            .cloned()
            .collect()
    };
    assert_eq!(deterministic(&a), deterministic(&b));
}

#[test]
fn benchmark_reports_consistent_timing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let r = dronenet(&[
        "benchmark",
        "--set",
        "architecture=tiny2",
        "--height",
        "32",
        "--width",
        "32",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let json: Value =
        serde_json::from_str(&fs::read_to_string(out.join("benchmark.json")).unwrap()).unwrap();
    let ms = json["timing"]["mean_ms"].as_f64().unwrap();
    let fps = json["timing"]["throughput_fps"].as_f64().unwrap();
    assert!((fps * ms - 1000.0).abs() < 50.0, "{fps} * {ms}");
    assert_eq!(json["timing"]["runs"], 2);
}
