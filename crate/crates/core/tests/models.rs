use comicl::models::*;
use comicl::rng::stream;
use rand::Rng;

fn cfg(hidden: Vec<usize>, epochs: usize, lr: f64) -> MlpConfig {
    MlpConfig { hidden, epochs, learning_rate: lr, l2: 0.0, seed: 5 }
}

#[test]
fn mlp_fits_two_point_regression() {
    let x = vec![vec![0.0], vec![1.0]];
    let y = vec![1.0, 3.0];
    let fit = train_mlp(&x, MlpTarget::Regression(&y), &cfg(vec![4], 2000, 0.05)).unwrap();
    let mse: f64 = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| (fit.model.predict(xi).unwrap()[0] - yi).powi(2))
        .sum::<f64>()
        / 2.0;
    assert!(mse < 1e-3, "mse {mse}");
    assert!(fit.final_loss <= fit.initial_loss);
}

#[test]
fn mlp_zero_epochs_is_the_seeded_init_and_training_is_deterministic() {
    let x = vec![vec![0.2, 0.4], vec![0.9, 0.1], vec![0.5, 0.5]];
    let y = vec![1.0, 2.0, 0.5];
    let a = train_mlp(&x, MlpTarget::Regression(&y), &cfg(vec![3], 0, 0.1)).unwrap();
    let b = train_mlp(&x, MlpTarget::Regression(&y), &cfg(vec![3], 0, 0.1)).unwrap();
    assert_eq!(a.model, b.model);
    assert!(a.model.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
    let c = train_mlp(&x, MlpTarget::Regression(&y), &cfg(vec![3], 50, 0.1)).unwrap();
    let d = train_mlp(&x, MlpTarget::Regression(&y), &cfg(vec![3], 50, 0.1)).unwrap();
    assert_eq!(c.model, d.model);
}

#[test]
fn mlp_classification_loss_decreases() {
    let mut rng = stream(3, "toy");
    let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let labels: Vec<usize> = x.iter().map(|r| usize::from(r[0] > r[1]) + usize::from(r[0] > 0.8)).collect();
    let fit = train_mlp(&x, MlpTarget::Classification { labels: &labels, n_classes: 3 }, &cfg(vec![8], 500, 0.3)).unwrap();
    assert!(fit.final_loss < fit.initial_loss);
    assert_eq!(fit.model.output_dim(), 3);
}

#[test]
fn mlp_errors() {
    assert!(matches!(
        train_mlp(&[], MlpTarget::Regression(&[]), &MlpConfig::default()),
        Err(ModelError::EmptyData)
    ));
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let y: Vec<f64> = (0..8).map(|i| (i % 3) as f64).collect();
    let r = train_mlp(&x, MlpTarget::Regression(&y), &cfg(vec![4], 200, 1e6));
    assert!(matches!(r, Err(ModelError::NonFiniteLoss { .. })), "{r:?}");
}

#[test]
fn zero_weight_network_is_constant() {
    let m = Mlp::new(vec![
        Layer { weights: vec![vec![0.0, 0.0]; 3], bias: vec![1.0, -1.0, 2.0] },
        Layer { weights: vec![vec![0.0; 3]], bias: vec![4.5] },
    ])
    .unwrap();
    assert_eq!(m.predict(&[3.0, -7.0]).unwrap(), vec![4.5]);
}

#[test]
fn tree_edge_cases() {
    let x = vec![vec![0.1], vec![0.5], vec![0.9]];
    let t = fit_tree(&x, &[2.0, 2.0, 2.0], &TreeConfig::default()).unwrap();
    assert_eq!(t.root, TreeNode::Leaf(Leaf::Constant { value: 2.0 }));
    let t = fit_tree(&x, &[1.0, 2.0, 6.0], &TreeConfig { max_depth: 0, ..Default::default() }).unwrap();
    assert_eq!(t.root, TreeNode::Leaf(Leaf::Constant { value: 3.0 }));
    assert!(fit_tree(&[], &[], &TreeConfig::default()).is_err());
}

/// Brute-force best single split over midpoints, lowest feature/threshold first.
fn brute_split(x: &[Vec<f64>], y: &[f64]) -> (usize, f64) {
    let sse = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>()
    };
    let mut best = (0, 0.0, f64::INFINITY);
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let l: Vec<f64> = (0..x.len()).filter(|&i| x[i][f] < t).map(|i| y[i]).collect();
            let r: Vec<f64> = (0..x.len()).filter(|&i| x[i][f] >= t).map(|i| y[i]).collect();
            let s = sse(&l) + sse(&r);
            if s < best.2 - 1e-9 {
                best = (f, t, s);
            }
        }
    }
    (best.0, best.1)
}

#[test]
fn cart_root_split_matches_brute_force() {
    for seed in 0..10 {
        let mut rng = stream(seed, "cart-oracle");
        let x: Vec<Vec<f64>> = (0..25).map(|_| (0..3).map(|_| (rng.gen::<f64>() * 10.0).round() / 10.0).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 - r[2] * r[1] * 5.0 + rng.gen::<f64>()).collect();
        let t = fit_tree(&x, &y, &TreeConfig { max_depth: 1, ..Default::default() }).unwrap();
        let (f, v) = brute_split(&x, &y);
        match t.root {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, f, "seed {seed}");
                assert!((threshold - v).abs() < 1e-12);
            }
            _ => panic!("expected a split"),
        }
    }
}

#[test]
fn forest_degenerate_and_average() {
    let mut rng = stream(1, "rf");
    let x: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] + 2.0 * r[1] * r[2]).collect();
    let single = fit_forest(
        &x,
        &y,
        &ForestConfig { n_trees: 1, bootstrap: false, max_features_fraction: 1.0, max_depth: 4, ..Default::default() },
    )
    .unwrap();
    let cart = fit_tree(&x, &y, &TreeConfig { max_depth: 4, ..Default::default() }).unwrap();
    assert_eq!(single.trees[0].root, cart.root);

    let rf = fit_forest(&x, &y, &ForestConfig { n_trees: 6, max_features_fraction: 0.67, ..Default::default() }).unwrap();
    for _ in 0..10 {
        let p: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
        let mean = rf.trees.iter().map(|t| t.predict(&p)).sum::<f64>() / 6.0;
        assert_eq!(rf.predict(&p), mean);
    }
    let flat = fit_forest(&x, &vec![4.0; 80], &ForestConfig::default()).unwrap();
    assert!(flat.trees.iter().all(|t| t.predict(&x[3]) == 4.0));
}

#[test]
fn gbt_contracts() {
    let x = vec![vec![0.0], vec![1.0]];
    let y = vec![0.0, 10.0];
    let none = fit_gbt(&x, &y, &GbtConfig { n_estimators: 0, ..Default::default() }).unwrap();
    assert_eq!(none.predict(&[0.3]), 5.0);
    let one = fit_gbt(&x, &y, &GbtConfig { n_estimators: 1, learning_rate: 1.0, max_depth: 1, ..Default::default() }).unwrap();
    assert_eq!(one.predict(&[0.0]), 0.0);
    assert_eq!(one.predict(&[1.0]), 10.0);

    let mut rng = stream(2, "gbt");
    let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let y: Vec<f64> = x.iter().map(|r| (6.0 * r[0]).sin() + r[1]).collect();
    let mut last = f64::INFINITY;
    for stages in 0..8 {
        let m = fit_gbt(&x, &y, &GbtConfig { n_estimators: stages, max_depth: 2, ..Default::default() }).unwrap();
        let mse = x.iter().zip(&y).map(|(a, b)| (m.predict(a) - b).powi(2)).sum::<f64>();
        assert!(mse <= last + 1e-12, "stage {stages}");
        last = mse;
        let (w, c) = m.weights();
        let manual = c + w * m.trees.iter().map(|t| t.predict(&x[0])).sum::<f64>();
        assert_eq!(m.predict(&x[0]), manual);
    }
}

#[test]
fn lmdt_recovers_linear_and_piecewise_data() {
    let mut rng = stream(4, "lmdt");
    let x: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - 3.0 * r[1] + 0.5 * r[2] + 1.0).collect();
    let m = fit_lmdt(&x, &y, &TreeConfig { max_depth: 0, ..Default::default() }).unwrap();
    match m.trees[0].leaves()[0] {
        Leaf::Linear { coef, intercept } => {
            for (c, e) in coef.iter().zip([2.0, -3.0, 0.5]) {
                assert!((c - e).abs() < 1e-6, "{coef:?}");
            }
            assert!((intercept - 1.0).abs() < 1e-6);
        }
        _ => panic!("linear leaf expected"),
    }
    let c = fit_lmdt(&x, &vec![7.0; 200], &TreeConfig::default()).unwrap();
    match c.trees[0].leaves()[0] {
        Leaf::Linear { coef, intercept } => {
            assert!(coef.iter().all(|v| v.abs() < 1e-9));
            assert!((intercept - 7.0).abs() < 1e-9);
        }
        _ => panic!(),
    }
    // V shape with the kink at 0.5.
    let x: Vec<Vec<f64>> = (0..41).map(|i| vec![i as f64 / 40.0]).collect();
    let y: Vec<f64> = x.iter().map(|r| (r[0] - 0.5).abs() * 4.0).collect();
    let v = fit_lmdt(&x, &y, &TreeConfig { max_depth: 1, ..Default::default() }).unwrap();
    match &v.trees[0].root {
        TreeNode::Split { threshold, .. } => assert!((threshold - 0.5).abs() <= 0.05, "{threshold}"),
        _ => panic!(),
    }
    let worst = x.iter().zip(&y).map(|(a, b)| (v.predict(a) - b).abs()).fold(0.0, f64::max);
    assert!(worst < 0.1, "max error {worst}");
}

#[test]
fn uncertainty_clamps_and_residuals() {
    let base = Predictor::Ensemble(Ensemble::new(vec![], Combination::Boosted { base_score: 5.0, learning_rate: 1.0 }).unwrap());
    let r = residual_targets(&base, &[vec![0.0]], &[3.0]).unwrap();
    assert_eq!(r, vec![2.0]);
    let x = vec![vec![0.0], vec![0.5], vec![1.0]];
    let u = fit_uncertainty(&base, &x, &[5.0, 5.0, 5.0], &cfg(vec![4], 300, 0.05)).unwrap();
    for xi in &x {
        let p = u.predict(xi).unwrap();
        assert!(p >= U_FLOOR && p < 0.05, "{p}");
    }
    let again = fit_uncertainty(&base, &x, &[5.0, 5.0, 5.0], &cfg(vec![4], 300, 0.05)).unwrap();
    assert_eq!(u, again);
}

#[test]
fn json_round_trip_and_version_check() {
    let mut rng = stream(8, "json");
    let x: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] - r[1]).collect();
    let bodies = vec![
        ModelBody::Predictor(Predictor::Mlp(train_mlp(&x, MlpTarget::Regression(&y), &cfg(vec![3], 5, 0.1)).unwrap().model)),
        ModelBody::Predictor(Predictor::Ensemble(fit_gbt(&x, &y, &GbtConfig { n_estimators: 3, ..Default::default() }).unwrap())),
        ModelBody::Predictor(Predictor::Ensemble(fit_lmdt(&x, &y, &TreeConfig { max_depth: 2, ..Default::default() }).unwrap())),
    ];
    for b in &bodies {
        let text = to_json(b).unwrap();
        assert_eq!(&from_json(&text).unwrap(), b);
    }
    let text = to_json(&bodies[0]).unwrap().replace("\"version\": 1", "\"version\": 9");
    assert!(matches!(from_json(&text), Err(ModelError::Format(_))));
}
