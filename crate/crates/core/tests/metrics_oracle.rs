mod common;

use ltvforge::metrics::{
    bucket_accuracy, f1_nonzero, gini, recall_at_k, regression_errors, spearman, sva, StrataSpec,
};
use ltvforge::rng::stream;
use rand::Rng;

const TOL: f64 = 1e-12;
const INSTANCES: u64 = 500;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + b.abs())
}

struct Instance {
    pred: Vec<f64>,
    y: Vec<f64>,
    q: Vec<f64>,
    pb: Vec<usize>,
    tb: Vec<usize>,
}

fn instance(i: u64) -> Instance {
    let mut rng = stream(2024, &[i]);
    let n = rng.random_range(2..=100);
    let y: Vec<f64> = (0..n).map(|_| common::tied_value(&mut rng)).collect();
    let pred: Vec<f64> = (0..n).map(|_| common::tied_value(&mut rng)).collect();
    let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
    let pb = (0..n).map(|_| rng.random_range(0..4)).collect();
    let tb = (0..n).map(|_| rng.random_range(0..4)).collect();
    Instance { pred, y, q, pb, tb }
}

#[test]
fn metrics_match_brute_force() {
    let mut checked = [0usize; 6];
    for i in 0..INSTANCES {
        let t = instance(i);
        if t.y.iter().sum::<f64>() > 0.0 {
            let g = gini(&t.pred, &t.y).unwrap();
            assert!(close(g, common::gini(&t.pred, &t.y)), "gini instance {i}");
            let e = regression_errors(&t.pred, &t.y).unwrap();
            let (nmae, mape, ambe, nrmse) = common::regression(&t.pred, &t.y);
            assert!(close(e.nmae, nmae) && close(e.ambe, ambe) && close(e.nrmse, nrmse), "errors {i}");
            match (e.mape, mape) {
                (Some(a), Some(b)) => assert!(close(a, b), "mape {i}"),
                (a, b) => assert_eq!(a.is_some(), b.is_some()),
            }
            checked[0] += 1;
        }
        let varied = |v: &[f64]| v.iter().any(|&x| x != v[0]);
        if varied(&t.pred) && varied(&t.y) {
            let s = spearman(&t.pred, &t.y).unwrap();
            assert!(close(s, common::spearman(&t.pred, &t.y)), "spearman {i}: {s}");
            checked[1] += 1;
        }
        for q in [None, Some(t.q.as_slice())] {
            let f = f1_nonzero(&t.pred, &t.y, q).unwrap();
            assert!(close(f, common::f1(&t.pred, &t.y, q)), "f1 {i}");
        }
        checked[2] += 1;
        assert!(close(bucket_accuracy(&t.pb, &t.tb).unwrap(), common::bucket_acc(&t.pb, &t.tb)));
        checked[3] += 1;
        let tau = 1.0 + (i % 7) as f64;
        let strata = StrataSpec::new(tau).unwrap();
        for q in [None, Some(t.q.as_slice())] {
            let v = sva(&t.pred, &t.y, q, &strata).unwrap();
            assert!(close(v, common::sva(&t.pred, &t.y, q, tau)), "sva {i}");
        }
        checked[4] += 1;
        let whale: Vec<bool> = t.tb.iter().map(|&b| b == 3).collect();
        if whale.iter().any(|&w| w) {
            for k in [1, t.y.len() / 3, t.y.len()] {
                let r = recall_at_k(&t.pred, &whale, k).unwrap();
                assert!(close(r, common::recall_at_k(&t.pred, &whale, k)), "recall {i} k={k}");
            }
            checked[5] += 1;
        }
    }
    assert!(checked.iter().all(|&c| c > 400), "{checked:?}");
}

#[test]
fn spot_values() {
    let y = [1.0, 2.0, 3.0, 4.0];
    assert!((gini(&y, &y).unwrap() - 0.25).abs() < 1e-15);
    let e = regression_errors(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
    assert_eq!((e.nmae, e.ambe, e.nrmse), (0.5, 0.0, 0.5));
    assert!((e.mape.unwrap() - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    let s = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((s - common::spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0])).abs() < 1e-15);
    let strata = StrataSpec::new(1.0).unwrap();
    let v = sva(&[0.0, 0.5, 0.7], &[0.0, 1.0, 10.0], None, &strata).unwrap();
    assert!((v - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn order_invariance() {
    for i in 0..100 {
        let t = instance(i);
        if t.y.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        let g = gini(&t.pred, &t.y).unwrap();
        let mapped: Vec<f64> = t.pred.iter().map(|&p| (0.3 * p).exp() * 2.0 + 5.0).collect();
        assert_eq!(g, gini(&mapped, &t.y).unwrap());
        if t.pred.iter().any(|&x| x != t.pred[0]) && t.y.iter().any(|&x| x != t.y[0]) {
            assert_eq!(spearman(&t.pred, &t.y).unwrap(), spearman(&mapped, &t.y).unwrap());
        }
    }
}

#[test]
fn ambe_tracks_signed_bias() {
    let y = [0.0, 1.0, 4.0, 7.0];
    let pred = [0.5, 1.5, 2.0, 6.0];
    let bias = ltvforge::metrics::mean_bias(&pred, &y).unwrap();
    for c in [-3.0, -0.5, 0.0, 2.0] {
        let shifted: Vec<f64> = pred.iter().map(|p| p + c).collect();
        let ambe = regression_errors(&shifted, &y).unwrap().ambe;
        assert!((ambe - (bias + c).abs()).abs() < 1e-12);
    }
}

#[test]
fn recall_with_constant_prediction_is_near_k_over_n() {
    let n = 400;
    let k = 100;
    let mut total = 0.0;
    let runs = 200;
    for s in 0..runs {
        let mut rng = stream(77, &[s]);
        let whale: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        if !whale.iter().any(|&w| w) {
            continue;
        }
        // Constant scores rank by index, so shuffled whales give k/n on average.
        total += recall_at_k(&vec![1.0; n], &whale, k).unwrap();
    }
    let mean = total / runs as f64;
    assert!((mean - k as f64 / n as f64).abs() < 0.02, "{mean}");
}
