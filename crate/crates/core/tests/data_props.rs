//! Data pipeline oracles: a hand-written CSV fixture with known per-split
//! counts, integer round-trip of loaded pixels, linear separability of the
//! synthetic classes under a nearest-centroid rule, and exact epoch
//! coverage under batching.

use proptest::prelude::*;
use tripse_core::{batches, load_fer_csv, synth_dataset, Sample, Split};

fn fixture_row(label: usize, seed: u64, usage: &str) -> String {
    let mut v = seed;
    let mut pixels = Vec::with_capacity(48 * 48);
    for _ in 0..48 * 48 {
        v = v.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        pixels.push(((v >> 33) % 256).to_string());
    }
    format!("{label},{},{usage}", pixels.join(" "))
}

fn fixture() -> String {
    let rows = [
        (0, "Training"),
        (1, "Training"),
        (2, "Training"),
        (3, "Training"),
        (4, "Training"),
        (5, "PublicTest"),
        (6, "PublicTest"),
        (0, "PublicTest"),
        (1, "PrivateTest"),
        (2, "PrivateTest"),
    ];
    let mut csv = String::from("emotion,pixels,Usage\n");
    for (i, (label, usage)) in rows.iter().enumerate() {
        csv.push_str(&fixture_row(*label, i as u64 + 1, usage));
        csv.push('\n');
    }
    csv
}

#[test]
fn fixture_split_counts() {
    let loaded = load_fer_csv::<f32>(fixture().as_bytes()).unwrap();
    assert_eq!(loaded.len(), 10);
    let count = |s: Split| loaded.iter().filter(|(_, t)| *t == s).count();
    assert_eq!(count(Split::Train), 5);
    assert_eq!(count(Split::Val), 3);
    assert_eq!(count(Split::Test), 2);

    let labels: Vec<usize> = loaded.iter().map(|(s, _)| s.label).collect();
    assert_eq!(labels, vec![0, 1, 2, 3, 4, 5, 6, 0, 1, 2]);
    for (s, _) in &loaded {
        assert_eq!(s.image.shape().dims(), &[1, 48, 48]);
        assert!(s.image.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn loaded_pixels_round_trip_to_integers() {
    let csv = fixture();
    let loaded = load_fer_csv::<f32>(csv.as_bytes()).unwrap();
    for (row, (sample, _)) in csv.lines().skip(1).zip(&loaded) {
        let original = row.split(',').nth(1).unwrap();
        let rebuilt = sample
            .image
            .to_vec()
            .iter()
            .map(|v| ((v * 255.0).round() as u16).to_string())
            .collect::<Vec<_>>()
            .join(" ");
        assert_eq!(rebuilt, original);
    }
}

#[test]
fn nearest_centroid_separates_synthetic_classes() {
    let classes = 5;
    let per_class = 12;
    let data = synth_dataset::<f32>(classes, per_class, (16, 16), 0.1, 42).unwrap();

    let dim = 16 * 16;
    let mut centroids = vec![vec![0.0f64; dim]; classes];
    for s in &data {
        for (acc, v) in centroids[s.label].iter_mut().zip(s.image.to_vec()) {
            *acc += v as f64;
        }
    }
    for c in &mut centroids {
        for v in c.iter_mut() {
            *v /= per_class as f64;
        }
    }

    let probe = synth_dataset::<f32>(classes, 8, (16, 16), 0.1, 43).unwrap();
    let mut correct = 0;
    for s in &probe {
        let img = s.image.to_vec();
        let nearest = (0..classes)
            .min_by(|&a, &b| {
                let da: f64 = centroids[a]
                    .iter()
                    .zip(&img)
                    .map(|(c, &v)| (c - v as f64).powi(2))
                    .sum();
                let db: f64 = centroids[b]
                    .iter()
                    .zip(&img)
                    .map(|(c, &v)| (c - v as f64).powi(2))
                    .sum();
                da.total_cmp(&db)
            })
            .unwrap();
        if nearest == s.label {
            correct += 1;
        }
    }
    assert_eq!(correct, probe.len(), "nearest-centroid accuracy below 100%");
}

#[test]
fn epoch_covers_every_sample_exactly_once() {
    let data = synth_dataset::<f32>(3, 7, (6, 6), 0.1, 11).unwrap();
    for epoch_seed in [0u64, 1, 99] {
        let mut seen = vec![0usize; data.len()];
        for (images, labels) in batches(&data, 4, epoch_seed, false).unwrap() {
            let b = images.shape().dims()[0];
            assert_eq!(b, labels.len());
            let flat = images.to_vec();
            for (i, &label) in labels.iter().enumerate() {
                let chunk = &flat[i * 36..(i + 1) * 36];
                let idx = data
                    .iter()
                    .position(|s| s.label == label && s.image.to_vec() == chunk)
                    .expect("batch row matches a dataset sample");
                seen[idx] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1), "seed {epoch_seed}: {seen:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batch_sizes_partition_the_dataset(n in 1usize..40, b in 1usize..10, drop in any::<bool>()) {
        let per_class = n.div_ceil(2);
        let data: Vec<Sample<f32>> = synth_dataset::<f32>(2, per_class, (4, 4), 0.05, 7)
            .unwrap()
            .into_iter()
            .take(n)
            .collect();
        let sizes: Vec<usize> = batches(&data, b, 5, drop)
            .unwrap()
            .map(|(x, _)| x.shape().dims()[0])
            .collect();

        let full = n / b;
        let tail = n % b;
        let mut expected = vec![b; full];
        if tail > 0 && !drop {
            expected.push(tail);
        }
        prop_assert_eq!(sizes, expected);
    }
}
