mod common;

use common::Lcg;
use polarmil::image::{AnnotatedImage, BoundingBox, ImageGrid};
use polarmil::losses::{LossBreakdown, LossConfig};
use polarmil::model::{ModelConfig, SegNet};
use polarmil::optim::{Adam, AdamConfig};
use polarmil::polar::PolarConfig;
use polarmil::smoothmax::SmoothMaxConfig;
use polarmil::train::{image_gradient, predict, train, write_outcome, TrainConfig, TrainData};
use polarmil::Error;

fn tiny_model(seed: u64) -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        depth: 1,
        seed,
        ..Default::default()
    }
}

fn small_loss() -> LossConfig {
    LossConfig {
        polar: PolarConfig {
            n_r: 6,
            n_theta: 16,
            radius: 6.0,
            ..Default::default()
        },
        smoothmax: SmoothMaxConfig {
            n_r: 6,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn fixture(n: usize, with_boxes: bool, seed: u64) -> Vec<AnnotatedImage> {
    let mut rng = Lcg(seed);
    (0..n)
        .map(|_| {
            let top = rng.int(1, 6);
            let left = rng.int(1, 6);
            let b = BoundingBox::new(top, left, top + 7, left + 7, 1).unwrap();
            let mask = ImageGrid::from_fn(16, 16, |r, c| {
                (r >= top + 2 && r <= top + 5 && c >= left + 2 && c <= left + 5) as u8 as f64
            });
            let img = ImageGrid::from_fn(16, 16, |r, c| 0.2 + 0.6 * mask.get(r, c) + 0.05 * rng.next_f64());
            let boxes = if with_boxes { vec![b] } else { vec![] };
            AnnotatedImage::new(img, boxes, vec![mask]).unwrap()
        })
        .collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{i:04}")).collect()
}

#[test]
fn zero_head_outputs_one_half() {
    let mut m = SegNet::new(ModelConfig::default()).unwrap();
    m.zero_head();
    let img = Lcg(1).image(16, 16, 0.0, 1.0);
    let out = m.forward(&[&img]).unwrap();
    assert!(out[0][0].values().iter().all(|&v| v == 0.5));
}

#[test]
fn forward_is_deterministic_and_in_range() {
    let img = Lcg(2).image(32, 32, 0.0, 1.0);
    let a = SegNet::new(ModelConfig::default()).unwrap().forward(&[&img]).unwrap();
    let b = SegNet::new(ModelConfig::default()).unwrap().forward(&[&img]).unwrap();
    assert_eq!(a, b);
    assert!(a[0][0].values().iter().all(|&v| v > 0.0 && v < 1.0));
    let cats = SegNet::new(ModelConfig {
        categories: 3,
        ..Default::default()
    })
    .unwrap()
    .forward(&[&img, &img])
    .unwrap();
    assert_eq!((cats.len(), cats[1].len()), (2, 3));
    assert_eq!(cats[0], cats[1]);
}

#[test]
fn default_model_size() {
    let m = SegNet::new(ModelConfig::default()).unwrap();
    assert!((30_000..70_000).contains(&m.parameter_count()));
    assert_eq!(m.param_names()[0], "enc0.entry.weight");
}

#[test]
fn shape_errors() {
    let m = SegNet::new(ModelConfig::default()).unwrap();
    let a = ImageGrid::zeros(16, 16);
    let b = ImageGrid::zeros(20, 16);
    assert!(matches!(m.forward(&[&a, &b]), Err(Error::Shape(_))));
    assert!(matches!(m.forward(&[&ImageGrid::zeros(18, 16)]), Err(Error::Shape(_))));
    assert!(matches!(m.forward(&[]), Err(Error::Shape(_))));
}

#[test]
fn weights_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let m = SegNet::new(tiny_model(4)).unwrap();
    m.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"PMIL");
    assert_eq!(bytes.len(), 16 + 8 * m.parameter_count());
    let back = SegNet::load(tiny_model(99), &path).unwrap();
    assert_eq!(back.flat_params(), m.flat_params());

    assert!(matches!(
        SegNet::load(ModelConfig::default(), &path),
        Err(Error::Weights { .. })
    ));
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(SegNet::load(tiny_model(0), &path), Err(Error::Weights { .. })));
    std::fs::write(&path, b"NOPE").unwrap();
    assert!(matches!(SegNet::load(tiny_model(0), &path), Err(Error::Weights { .. })));
    assert!(matches!(
        SegNet::load(tiny_model(0), &dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn zero_epochs_keeps_initial_weights() {
    let data = fixture(4, true, 1);
    let out = train(
        TrainData {
            train: &data,
            val: &data,
            val_ids: &ids(4),
        },
        &tiny_model(3),
        &AdamConfig::default(),
        &small_loss(),
        &TrainConfig {
            epochs: 0,
            ..Default::default()
        },
        |_| {},
    )
    .unwrap();
    assert_eq!(
        out.model.flat_params(),
        SegNet::new(tiny_model(3)).unwrap().flat_params()
    );
    let dir = tempfile::tempdir().unwrap();
    write_outcome(&out, dir.path()).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(metrics.starts_with("epoch,"));
    let losses = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    assert_eq!(losses.trim(), LossBreakdown::CSV_HEADER);
}

#[test]
fn negatives_only_lower_mean_probability_every_epoch() {
    let data = fixture(4, false, 2);
    let images: Vec<&ImageGrid> = data.iter().map(|d| &d.image).collect();
    let mut means = Vec::new();
    for epochs in 0..=10 {
        let out = train(
            TrainData {
                train: &data,
                val: &data[..1],
                val_ids: &ids(1),
            },
            &tiny_model(5),
            &AdamConfig {
                learning_rate: 1e-3,
                batch_size: 4,
                ..Default::default()
            },
            &small_loss(),
            &TrainConfig {
                epochs,
                augment_copies: 0,
                ..Default::default()
            },
            |_| {},
        )
        .unwrap();
        let maps = predict(&out.model, &images).unwrap();
        let mean = maps.iter().flat_map(|m| m.values()).sum::<f64>() / (4.0 * 256.0);
        means.push(mean);
    }
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
}

#[test]
fn tiny_step_decreases_loss() {
    let data = fixture(3, true, 6);
    let loss = small_loss();
    let batch_loss = |m: &SegNet| -> (f64, Vec<f64>) {
        let mut total = 0.0;
        let mut grad = vec![0.0; m.parameter_count()];
        for item in &data {
            let (b, g) = image_gradient(m, item, &loss).unwrap();
            total += b.combined;
            for (a, x) in grad.iter_mut().zip(g) {
                *a += x;
            }
        }
        (total, grad)
    };
    for trial in 0..10 {
        let mut model = SegNet::new(tiny_model(trial)).unwrap();
        let (before, grad) = batch_loss(&model);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 1e-6,
                ..Default::default()
            },
            model.parameter_count(),
        )
        .unwrap();
        let mut flat = model.flat_params();
        adam.step(&mut flat, &grad).unwrap();
        model.set_flat_params(&flat).unwrap();
        let (after, _) = batch_loss(&model);
        assert!(after < before, "trial {trial}: {after} >= {before}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let data = fixture(6, true, 7);
    let run = |threads: usize| {
        train(
            TrainData {
                train: &data,
                val: &data[..2],
                val_ids: &ids(2),
            },
            &tiny_model(8),
            &AdamConfig {
                learning_rate: 1e-3,
                batch_size: 4,
                ..Default::default()
            },
            &small_loss(),
            &TrainConfig {
                epochs: 2,
                threads,
                ..Default::default()
            },
            |_| {},
        )
        .unwrap()
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.model.weights_bytes(), b.model.weights_bytes());
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.origins, b.origins);
}
