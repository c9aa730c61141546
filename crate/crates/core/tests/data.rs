use ltvforge::data::csv_io::parse_csv_str;
use ltvforge::data::stats::top_share;
use ltvforge::data::{
    chronological_split, fit_bucket_spec, generate, load_csv, write_csv, GeneratorConfig,
};
use ltvforge::metrics::spearman;

fn cfg(n: usize, zero_ratio: f64, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_samples: n,
        zero_ratio,
        seed,
        ..GeneratorConfig::default()
    }
}

#[test]
fn zero_ratios_at_100k() {
    for (target, seed) in [(0.336, 1), (0.646, 2), (0.458, 3)] {
        let ds = generate(&cfg(100_000, target, seed)).unwrap();
        let z = ds.labels.iter().filter(|&&y| y == 0.0).count() as f64 / ds.len() as f64;
        assert!((z - target).abs() <= 0.01, "target {target}, got {z}");
    }
}

#[test]
fn independent_features_without_signal() {
    let ds = generate(&GeneratorConfig {
        signal_corr: 0.0,
        ..cfg(100_000, 0.336, 9)
    })
    .unwrap();
    for j in 0..ds.n_numeric() {
        let col = ds.numeric.col_values(j);
        let rho = spearman(&col, &ds.labels).unwrap();
        assert!(rho.abs() < 0.02, "feature {j}: {rho}");
    }
}

#[test]
fn pareto_tail_concentrates_value() {
    let with = generate(&cfg(100_000, 0.336, 4)).unwrap();
    let without = generate(&GeneratorConfig {
        tail_prob: 0.0,
        ..cfg(100_000, 0.336, 4)
    })
    .unwrap();
    assert!(top_share(&with.labels, 0.01) > top_share(&without.labels, 0.01));
}

#[test]
fn bucket_populations_follow_quantiles() {
    let ds = generate(&cfg(20_000, 0.336, 5)).unwrap();
    let spec = fit_bucket_spec(&ds.labels, 4).unwrap();
    let mut counts = [0usize; 4];
    for &y in &ds.labels {
        counts[spec.assign(y)] += 1;
    }
    let nonzero = (ds.len() - counts[0]) as f64;
    for (b, target) in [(1, 0.5), (2, 0.25), (3, 0.25)] {
        let share = counts[b] as f64 / nonzero;
        assert!((share - target).abs() < 0.02, "bucket {b}: {share}");
    }
}

#[test]
fn csv_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let ds = generate(&cfg(500, 0.458, 6)).unwrap();
    write_csv(&ds, &a).unwrap();
    write_csv(&generate(&cfg(500, 0.458, 6)).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(load_csv(&a).unwrap(), ds);
}

#[test]
fn csv_rules() {
    let ds = parse_csv_str("num_a,cat_b,label\n1.5,2,0.0\n").unwrap();
    assert_eq!((ds.n_numeric(), ds.n_categorical(), ds.labels[0]), (1, 1, 0.0));
    assert!(parse_csv_str("num_a,label\n1.0,-1\n").is_err());
    assert!(parse_csv_str("x_a,label\n1.0,1\n").is_err());
    assert!(parse_csv_str("cat_a,label\n1.5,1\n").is_err());
}

#[test]
fn split_is_contiguous() {
    let ds = generate(&cfg(10, 0.336, 7)).unwrap();
    let (tr, val, te) = chronological_split(&ds, 0.4, 0.1).unwrap();
    assert_eq!((tr.len(), val.len(), te.len()), (5, 1, 4));
    let joined: Vec<f64> = [tr.labels, val.labels, te.labels].concat();
    assert_eq!(joined, ds.labels);
}
