mod common;

use asymtrans::cmnist::{self, Split};
use common::{oracle_colorize, synthetic_digits};

#[test]
fn generation_is_byte_stable() {
    let mnist = synthetic_digits(300, 1);
    for seed in [0u64, 7, u64::MAX] {
        let a = cmnist::encode_dataset(&cmnist::generate_dataset(&mnist, seed, 300, Split::Train).unwrap()).unwrap();
        let b = cmnist::encode_dataset(&cmnist::generate_dataset(&mnist, seed, 300, Split::Train).unwrap()).unwrap();
        assert_eq!(a, b);
    }
    let a = cmnist::generate_dataset(&mnist, 1, 300, Split::Train).unwrap();
    let b = cmnist::generate_dataset(&mnist, 2, 300, Split::Train).unwrap();
    assert_ne!(a.samples[0].color, b.samples[0].color);
}

#[test]
fn every_sample_recomputes_from_gray_and_color() {
    let mnist = synthetic_digits(500, 2);
    let ds = cmnist::generate_dataset(&mnist, 9, 500, Split::Test).unwrap();
    for (i, s) in ds.samples.iter().enumerate() {
        assert_eq!(s.gray, mnist[i].0);
        assert_eq!(s.label, mnist[i].1);
        assert_eq!(
            &s.color_image[..],
            &oracle_colorize(s.gray.pixels(), s.color.channels())[..],
            "sample {i}"
        );
    }
}

#[test]
fn channel_maxima_track_the_drawn_color() {
    let mnist = synthetic_digits(200, 3);
    let ds = cmnist::generate_dataset(&mnist, 4, 200, Split::Train).unwrap();
    for s in ds.samples.iter().filter(|s| s.gray.max() == 255) {
        for (k, &c) in s.color.channels().iter().enumerate() {
            let peak = s.color_image.iter().skip(k).step_by(3).max().copied().unwrap();
            assert!((peak as f32 / 255.0 - c).abs() <= 1.0 / 255.0);
        }
    }
}

#[test]
fn container_round_trip_is_bitwise() {
    let ds = cmnist::generate_dataset(&synthetic_digits(50, 4), 5, 50, Split::Train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.cmn1");
    cmnist::write_dataset(&ds, &path).unwrap();
    let back = cmnist::read_dataset(&path).unwrap();
    assert_eq!(cmnist::encode_dataset(&back).unwrap(), std::fs::read(&path).unwrap());
    assert_eq!(back.samples, ds.samples);
}
