use fcdsae::dataset::{
    class_counts, generate_synthetic, generate_synthetic_with, label_all, parse_csv, split, train_size, write_csv,
    Standardizer, SyntheticConfig,
};
use proptest::prelude::*;

const BASE: [f64; 10] = [1.0, 24.2, 222.4, 363.8, 83.0, 68.5, 165.5, 0.44, 145.6, 28.6];

/// Noise-free response written out from the generator's definition.
fn expected_hfr(x: &[f64]) -> f64 {
    let z: Vec<f64> = x.iter().zip(BASE).map(|(v, b)| (v - b) / (0.2 * b / 12f64.sqrt())).collect();
    (90.0 + 1.3 * (1.2 * z[1] - 0.8 * z[9]).tanh() + 0.7 * (z[5] + 0.5 * z[6]).tanh()).clamp(85.0, 95.0)
}

#[test]
fn noiseless_rows_follow_the_surface() {
    let recs = generate_synthetic_with(5000, 9, &SyntheticConfig { noise_sigma: 0.0 }).unwrap();
    for r in &recs {
        let f = r.features();
        for (v, b) in f.iter().zip(BASE) {
            assert!(*v >= 0.9 * b && *v <= 1.1 * b, "{v} outside band of {b}");
        }
        assert!((r.hfr - expected_hfr(&f)).abs() < 1e-12);
    }
}

#[test]
fn noise_is_additive_with_configured_sigma() {
    let clean = generate_synthetic_with(20000, 4, &SyntheticConfig { noise_sigma: 0.0 }).unwrap();
    let noisy = generate_synthetic(20000, 4).unwrap();
    let resid: Vec<f64> = clean
        .iter()
        .zip(&noisy)
        .map(|(c, n)| {
            assert_eq!(c.features(), n.features());
            n.hfr - c.hfr
        })
        .collect();
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / resid.len() as f64).sqrt();
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((sd - 0.2).abs() < 0.01, "sd {sd}");
}

#[test]
fn reference_corpus_is_balanced_enough() {
    let labeled = label_all(&generate_synthetic(36363, 42).unwrap());
    let counts = class_counts(&labeled);
    assert_eq!(counts.iter().sum::<usize>(), 36363);
    for c in counts {
        assert!(c * 100 >= 15 * 36363, "{counts:?}");
    }
    let s = split(labeled, 42).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (27272, 9091));
}

#[test]
fn generation_and_split_are_seeded() {
    let a = generate_synthetic(500, 7).unwrap();
    assert_eq!(a, generate_synthetic(500, 7).unwrap());
    assert_ne!(a, generate_synthetic(500, 8).unwrap());
    let s1 = split(label_all(&a), 3).unwrap();
    let s2 = split(label_all(&a), 3).unwrap();
    assert_eq!(s1, s2);
    assert_ne!(s1.train, split(label_all(&a), 4).unwrap().train);
}

#[test]
fn csv_round_trip_is_exact() {
    let recs = generate_synthetic(300, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_csv(&path, &recs).unwrap();
    assert_eq!(parse_csv(&path).unwrap(), recs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(n in 4usize..400, seed in any::<u64>()) {
        let labeled = label_all(&generate_synthetic(n, seed ^ 1).unwrap());
        let s = split(labeled.clone(), seed).unwrap();
        prop_assert_eq!(s.train.len(), train_size(n));
        prop_assert_eq!(s.train.len(), n * 3 / 4);
        let mut all: Vec<Vec<u64>> = s.train.iter().chain(&s.test)
            .map(|e| e.features.iter().map(|v| v.to_bits()).collect()).collect();
        let mut orig: Vec<Vec<u64>> = labeled.iter().map(|e| e.features.iter().map(|v| v.to_bits()).collect()).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn standardized_training_columns_are_unit(n in 2usize..300, seed in any::<u64>()) {
        let labeled = label_all(&generate_synthetic(n, seed).unwrap());
        let st = Standardizer::fit(&labeled).unwrap();
        for j in 0..10 {
            let col: Vec<f64> = labeled.iter().map(|e| st.apply_row(&e.features)[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn tiny_inputs_are_rejected() {
    let labeled = label_all(&generate_synthetic(3, 1).unwrap());
    assert!(split(labeled, 1).is_err());
    assert!(generate_synthetic(0, 1).is_err());
}
