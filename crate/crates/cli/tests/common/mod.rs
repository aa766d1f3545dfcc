#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dronenet_core::groundtruth::{write_annotations, write_image};
use dronenet_core::{DotAnnotation, Point, Shape, Tensor};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dronenet")
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl From<Output> for Outcome {
    fn from(o: Output) -> Self {
        Outcome {
            code: o.status.code().expect("process exited normally"),
            stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        }
    }
}

pub fn dronenet(args: &[&str]) -> Outcome {
    Command::new(bin())
        .args(args)
        .env("DRONENET_BENCH_WARMUP", "0")
        .env("DRONENET_BENCH_RUNS", "2")
        .output()
        .expect("binary runs")
        .into()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// A deterministic RGB test image with bright spots at `points`.
pub fn spot_image(h: usize, w: usize, points: &[Point]) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let mut v = 20.0 + 3.0 * c as f64;
        for p in points {
            let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
            v += 200.0 * (-d2 / 4.5).exp();
        }
        v.min(255.0) as f32
    })
}

/// Writes `n` images of `h×w` with a few points each plus their annotation
/// file; returns `(annotations, images dir)`.
pub fn toy_dataset(dir: &Path, n: usize, h: usize, w: usize) -> (PathBuf, PathBuf) {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut anns = Vec::new();
    for i in 0..n {
        let points: Vec<Point> = (0..(3 + i % 4))
            .map(|k| {
                let t = (i * 7 + k * 13) as f64;
                Point::new(
                    2.0 + (t * 3.7) % (w as f64 - 4.0),
                    2.0 + (t * 5.3) % (h as f64 - 4.0),
                )
            })
            .collect();
        let file = format!("img{i}.ppm");
        write_image(&spot_image(h, w, &points), images.join(&file)).unwrap();
        anns.push(DotAnnotation::new(file, points));
    }
    let ann = dir.join("annotations.json");
    write_annotations(&ann, &anns).unwrap();
    (ann, images)
}
