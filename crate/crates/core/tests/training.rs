use dronenet_core::groundtruth::Sample;
use dronenet_core::net::{init_for_training, load_model, save_model};
use dronenet_core::training::{predict_count, train, train_with, AugmentConfig};
use dronenet_core::{DroneNet, DroneNetConfig, Point, Shape, Tensor, TrainConfig};

fn sample(id: &str, pts: &[(f64, f64)]) -> Sample {
    let points: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x, y)).collect();
    let image = Tensor::from_fn(Shape::new(1, 3, 16, 16), |_, c, y, x| {
        let mut v = -0.8f64;
        for p in &points {
            v += 1.2 * (-((x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2)) / 4.5).exp();
        }
        (v.min(1.0) - 0.05 * c as f64) as f32
    });
    Sample {
        id: id.into(),
        image,
        points,
    }
}

fn toy_set() -> Vec<Sample> {
    vec![
        sample("a", &[(3.0, 4.0), (10.0, 12.0)]),
        sample("b", &[(8.0, 8.0)]),
        sample("c", &[(2.0, 13.0), (12.0, 3.0), (7.0, 7.0)]),
    ]
}

fn fresh(seed: u64) -> DroneNet<f32> {
    let mut m = DroneNet::build(DroneNetConfig::tiny(4)).unwrap();
    init_for_training(&mut m, seed);
    m
}

#[test]
fn training_loss_decreases_every_epoch() {
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 1e-3,
        augment: AugmentConfig::disabled(),
        ..TrainConfig::default()
    };
    let out = train_with(fresh(2), &toy_set(), &[], &cfg, None, |_| {}).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 5);
    for pair in losses.windows(2) {
        assert!(pair[1] < pair[0], "{losses:?}");
    }
    assert_eq!(out.steps, 15);
}

#[test]
fn split_training_tracks_validation_and_round_trips() {
    let mut set = toy_set();
    set.push(sample("d", &[(5.0, 5.0), (11.0, 9.0)]));
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 1e-3,
        val_fraction: 0.25,
        ..TrainConfig::default()
    };
    let out = train(fresh(4), &set, &cfg).unwrap();
    assert!(out.log.iter().all(|r| r.val_mae.is_finite()));
    assert!((1..=3).contains(&out.best_epoch));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sonn");
    save_model(&out.model, &path).unwrap();
    let back: DroneNet<f32> = load_model(&path).unwrap();
    let img = &set[0].image;
    assert_eq!(
        predict_count(&back, img).unwrap(),
        predict_count(&out.model, img).unwrap()
    );
}

#[test]
fn double_precision_training_runs() {
    let cfg = TrainConfig {
        epochs: 2,
        augment: AugmentConfig::disabled(),
        ..TrainConfig::default()
    };
    let mut m = DroneNet::<f64>::build(DroneNetConfig::tiny(2)).unwrap();
    init_for_training(&mut m, 1);
    let out = train_with(m, &toy_set(), &[], &cfg, None, |_| {}).unwrap();
    assert!(out.log.iter().all(|r| r.train_loss.is_finite()));
}
