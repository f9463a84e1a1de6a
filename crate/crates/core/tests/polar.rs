mod common;

use common::{nearest_polar_oracle, random_box_and_origin, slab_valid_lengths, Lcg};
use polarmil::image::{BoundingBox, ImageGrid};
use polarmil::polar::{
    box_mask, loi_valid_lengths, polar_transform, polar_transform_region, Interpolation, PolarConfig,
};
use proptest::prelude::*;

fn nearest(n_r: usize, n_theta: usize, radius: f64) -> PolarConfig {
    PolarConfig {
        n_r,
        n_theta,
        radius,
        interpolation: Interpolation::Nearest,
    }
}

#[test]
fn nearest_mode_matches_brute_force() {
    let mut rng = Lcg(21);
    for cfg in [nearest(8, 16, 8.0), nearest(30, 90, 30.0), nearest(5, 7, 3.3)] {
        for _ in 0..10 {
            let img = rng.image(16, 16, 0.0, 1.0);
            let origin = (rng.int(0, 15), rng.int(0, 15));
            let p = polar_transform(&img, origin, &cfg).unwrap();
            assert_eq!(p.values, nearest_polar_oracle(&img, origin, &cfg));
        }
    }
}

#[test]
fn valid_lengths_match_slab_march() {
    let mut rng = Lcg(5);
    for cfg in [PolarConfig::default(), nearest(12, 36, 20.0), nearest(40, 90, 10.0)] {
        for _ in 0..20 {
            let (b, origin) = random_box_and_origin(&mut rng, 48, 40);
            let got = loi_valid_lengths(&b, origin, &cfg, 48, 40).unwrap();
            assert_eq!(got, slab_valid_lengths(&b, origin, &cfg), "{b:?} {origin:?}");
        }
    }
}

#[test]
fn half_diagonal_preset_dumps_are_consistent() {
    let b = BoundingBox::new(12, 9, 47, 40, 1).unwrap();
    let cfg = PolarConfig::half_diagonal(&b);
    assert_eq!(cfg.n_theta, 360);
    let mut rng = Lcg(8);
    let img = rng.image(64, 64, 0.0, 1.0);
    let region = polar_transform_region(&img, &b, b.center(), &cfg).unwrap();
    let mask_cfg = PolarConfig {
        interpolation: Interpolation::Nearest,
        ..cfg
    };
    let mask = polar_transform(&box_mask(&b, 64, 64), b.center(), &mask_cfg).unwrap();
    assert_eq!(region.valid_mask(), mask.to_grid());
}

proptest! {
    #[test]
    fn lengths_are_bounded(
        top in 0usize..20, left in 0usize..20, hgt in 3usize..20, wid in 3usize..20,
    ) {
        let b = BoundingBox::new(top, left, top + hgt - 1, left + wid - 1, 1).unwrap();
        let cfg = PolarConfig::default();
        let n = loi_valid_lengths(&b, b.center(), &cfg, 40, 40).unwrap();
        prop_assert!(n.iter().all(|&v| (1..=cfg.n_r).contains(&v)));
    }

    #[test]
    fn valid_samples_lie_in_box(seed in any::<u64>()) {
        let mut rng = Lcg(seed);
        let (b, origin) = random_box_and_origin(&mut rng, 32, 32);
        let cfg = nearest(16, 24, 16.0);
        let marker = box_mask(&b, 32, 32);
        let p = polar_transform_region(&marker, &b, origin, &cfg).unwrap();
        for j in 0..cfg.n_theta {
            for k in 0..p.valid_len[j] {
                prop_assert_eq!(p.get(k, j), 1.0);
            }
        }
    }

    #[test]
    fn constant_image_in_bounds(v in 0.0f64..1.0, r in 10usize..20, c in 10usize..20) {
        let img = ImageGrid::filled(32, 32, v);
        let p = polar_transform(&img, (r, c), &PolarConfig { radius: 8.0, n_r: 8, ..Default::default() }).unwrap();
        for x in &p.values {
            prop_assert!((x - v).abs() < 1e-12);
        }
    }
}
