use ltvforge::data::{generate, GeneratorConfig};
use ltvforge::model::{
    fit, model_grad_check, tiny_config, train, Checkpoint, Model, ModelConfig, ObjectiveWeights,
    Route, Stage,
};
use ltvforge::nn::ParamSet;

fn small_data(n: usize, seed: u64) -> ltvforge::data::Dataset {
    generate(&GeneratorConfig {
        n_samples: n,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        batch_size: 32,
        epochs: 10,
        ..tiny_config(5)
    }
}

#[test]
fn every_component_passes_gradient_check() {
    let checks = model_grad_check(11, false).unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c.component.as_str()).collect();
    assert_eq!(names, ["cascade", "distill", "residual", "high_value", "total"]);
    for c in &checks {
        assert!(c.report.checked > 0);
        assert!(c.passed, "{c:?}");
    }
}

#[test]
fn corrupted_gradients_are_caught() {
    let checks = model_grad_check(11, true).unwrap();
    assert!(checks.iter().all(|c| !c.passed));
}

#[test]
fn training_loss_decreases() {
    let ds = small_data(200, 3);
    let (_, hist) = train(&ds, None, &small_config(), &mut |_| {}).unwrap();
    assert_eq!(hist.epochs.len(), 10);
    let first = hist.epochs[0].total;
    let last = hist.epochs[9].total;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let ds = small_data(200, 4);
    let mut cfg = small_config();
    cfg.epochs = 1;
    cfg.optim.lr0 = 0.0;
    let mut model = Model::init(&cfg, &ds).unwrap();
    let before = model.ps.clone();
    fit(&mut model, &ds, None, &mut |_| {}).unwrap();
    for (a, b) in before.iter().zip(model.ps.iter()) {
        if a.name.contains("running") {
            continue;
        }
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    let moved = before
        .iter()
        .zip(model.ps.iter())
        .any(|(a, b)| a.name.contains("running") && a.value != b.value);
    assert!(moved);
}

#[test]
fn training_is_deterministic() {
    let ds = small_data(300, 5);
    let cfg = small_config();
    let (m1, h1) = train(&ds, Some(&ds), &cfg, &mut |_| {}).unwrap();
    let (m2, h2) = train(&ds, Some(&ds), &cfg, &mut |_| {}).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(
        Checkpoint::from_model(&m1).to_json().unwrap(),
        Checkpoint::from_model(&m2).to_json().unwrap()
    );
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let ds = small_data(200, 6);
    let (m, _) = train(&ds, None, &small_config(), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    m.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    for (a, b) in m.ps.iter().zip(back.ps.iter()) {
        assert_eq!(a.name, b.name);
        let bits = |p: &ltvforge::nn::Param| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(m.predict(&ds).unwrap(), back.predict(&ds).unwrap());
}

#[test]
fn routing_rules() {
    let ds = small_data(400, 7);
    let (m, _) = train(&ds, None, &small_config(), &mut |_| {}).unwrap();
    let p = m.predict(&ds).unwrap();
    let top = m.net.cfg.k - 1;
    for i in 0..ds.len() {
        assert!(p.v_final[i] >= 0.0);
        match p.buckets[i] {
            0 => {
                assert_eq!(p.v_final[i], 0.0);
                assert_eq!(p.route[i], Route::Zero);
            }
            b if b == top => {
                assert_eq!(p.route[i], Route::Whale);
                assert_eq!(Some(p.v_final[i]), p.v_high[i]);
            }
            _ => assert_eq!(p.route[i], Route::Residual),
        }
    }

    let mut no_override = m.clone();
    no_override.net.cfg.whale_head_override = false;
    let q = no_override.predict(&ds).unwrap();
    for i in 0..ds.len() {
        if q.buckets[i] == top {
            assert_eq!(q.route[i], Route::Residual);
        }
    }
}

#[test]
fn all_zero_prediction_when_first_level_is_shut() {
    let ds = small_data(100, 8);
    let mut m = Model::init(&small_config(), &ds).unwrap();
    let heads = m.net.cascade.clone().unwrap();
    let last = *heads.levels[0].layers.last().unwrap();
    m.ps.value_mut(last.weight).fill(0.0);
    m.ps.value_mut(last.bias).fill(-5.0);
    let p = m.predict(&ds).unwrap();
    assert!(p.v_final.iter().all(|&v| v == 0.0));
}

#[test]
fn baseline_uses_direct_head() {
    let ds = small_data(200, 9);
    let cfg = small_config().with_stage(Stage::Baseline);
    let (m, _) = train(&ds, None, &cfg, &mut |_| {}).unwrap();
    let p = m.predict(&ds).unwrap();
    assert!(p.route.iter().all(|&r| r == Route::Direct));
    assert!(p.nonzero_prob.is_none());
    for (v, b) in p.v_final.iter().zip(&p.buckets) {
        assert_eq!(*b, m.net.spec.assign(*v));
    }
}

#[test]
fn loss_decomposition_identity() {
    let ds = small_data(200, 10);
    let cfg = small_config();
    let m = Model::init(&cfg, &ds).unwrap();
    let idx: Vec<usize> = (0..64).collect();
    let std = m.net.standardize(&m.ps, &ds.numeric);
    let batch = m.net.batch(&ds, &std, &idx);
    let ctx = m.context(0, 100, true);
    let b = m.net.forward_loss(&m.ps, &batch, &ctx, None).unwrap().breakdown;
    let l = cfg.loss;
    let main = l.alpha_cascade * b.cascade + l.alpha_residual * b.residual + l.alpha_distill * b.distill;
    let rebuilt = l.gamma * main + (1.0 - l.gamma) * b.high_value;
    assert!((rebuilt - b.total).abs() < 1e-12);
    assert!((b.objective - b.total - b.l2).abs() < 1e-12);

    // γ = 1 removes every high-value gradient.
    let mut g1 = cfg.clone();
    g1.loss.gamma = 1.0;
    let m1 = Model { net: ltvforge::model::Network { cfg: g1.clone(), ..m.net.clone() }, ps: m.ps.clone() };
    let ctx1 = ltvforge::model::StepContext {
        weights: ObjectiveWeights::training(&g1, false),
        ..ctx
    };
    let fwd = m1.net.forward_loss(&m1.ps, &batch, &ctx1, None).unwrap();
    let mut ps: ParamSet = m1.ps.clone();
    m1.net.backward(&mut ps, &fwd, &batch);
    for p in ps.iter().filter(|p| p.name.starts_with("high_value")) {
        assert!(p.grad.data().iter().all(|&g| g == 0.0), "{}", p.name);
    }
}
