mod common;

use common::*;
use comicl::conformal::{calibrate, mondrian_calibrate, GroupId, ScoreKind};
use comicl::data::{OutcomeSet, TaskKind};
use comicl::encoders::*;
use comicl::interval::Interval;
use comicl::mip::{LinExpr, MipModel, Sense, VarKind};
use comicl::models::*;
use comicl::solver::SolveStatus;

fn unit(d: usize) -> Vec<Interval> {
    vec![Interval::new(0.0, 1.0); d]
}

fn single_layer(w: Vec<f64>, b: f64) -> Mlp {
    Mlp::new(vec![Layer { weights: vec![w], bias: vec![b] }]).unwrap()
}

#[test]
fn interval_propagation_examples() {
    let b = propagate_bounds(&single_layer(vec![1.0, -1.0], 0.0), &unit(2)).unwrap();
    assert_eq!(b.layers[0][0], Interval::new(-1.0, 1.0));
    let b = propagate_bounds(&single_layer(vec![0.5, 2.0, 1.5], 0.25), &unit(3)).unwrap();
    assert_eq!(b.layers[0][0], Interval::new(0.25, 4.25));
    let r = propagate_bounds(&single_layer(vec![1.0], 0.0), &[Interval::new(0.0, f64::INFINITY)]);
    assert!(matches!(r, Err(EncodeError::UnboundedInput(0))));
}

#[test]
fn interval_propagation_is_sound() {
    let mlp = random_mlp(&[3, 8, 8, 2], 4);
    let boxes = vec![Interval::new(-1.0, 2.0), Interval::new(0.0, 1.0), Interval::new(-3.0, -1.0)];
    let b = propagate_bounds(&mlp, &boxes).unwrap();
    for p in random_points(100, &boxes, 9) {
        let mut cur = p.clone();
        for (k, layer) in mlp.layers.iter().enumerate() {
            let pre: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(w, bb)| bb + w.iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            for (v, iv) in pre.iter().zip(&b.layers[k]) {
                assert!(iv.contains(*v), "layer {k}: {v} outside {iv:?}");
            }
            cur = pre.iter().map(|v| v.max(0.0)).collect();
        }
    }
}

#[test]
fn single_relu_neuron_at_fixed_input() {
    let mlp = Mlp::new(vec![
        Layer { weights: vec![vec![1.0, -1.0]], bias: vec![0.0] },
        Layer { weights: vec![vec![1.0]], bias: vec![0.0] },
    ])
    .unwrap();
    let p = Predictor::Mlp(mlp);
    let (m, inputs, enc) = encoding(&p, &unit(2));
    assert_eq!(enc.binaries.len(), 1);
    assert_eq!(fixed_outputs(&m, &inputs, &enc.outputs, &[1.0, 0.0])[0], 1.0);
    assert_eq!(fixed_outputs(&m, &inputs, &enc.outputs, &[0.0, 1.0])[0], 0.0);
}

#[test]
fn dead_neuron_needs_no_binary() {
    let mlp = Mlp::new(vec![
        Layer { weights: vec![vec![0.0]], bias: vec![-0.5] },
        Layer { weights: vec![vec![3.0]], bias: vec![1.0] },
    ])
    .unwrap();
    let (m, inputs, enc) = encoding(&Predictor::Mlp(mlp), &unit(1));
    assert!(enc.binaries.is_empty());
    assert!(m.variables().iter().all(|v| v.kind == VarKind::Continuous));
    assert_eq!(fixed_outputs(&m, &inputs, &enc.outputs, &[0.3])[0], 1.0);
}

#[test]
fn mlp_encoding_matches_forward_pass() {
    let p = Predictor::Mlp(random_mlp(&[2, 8, 1], 1));
    assert!(max_encoding_error(&p, &unit(2), 20, 2) < 1e-6);
    let p = Predictor::Mlp(random_mlp(&[3, 6, 5, 3], 7));
    assert!(max_encoding_error(&p, &[Interval::new(-2.0, 2.0); 3], 20, 3) < 1e-6);
}

#[test]
fn mlp_encoding_rejects_missing_bounds() {
    let mlp = random_mlp(&[2, 3, 1], 1);
    let mut m = MipModel::new("t");
    let xs: Vec<_> = (0..2).map(|_| m.add_var_auto("x", VarKind::Continuous, 0.0, 1.0).unwrap()).collect();
    let bounds = ActivationBounds { layers: vec![vec![Interval::new(0.0, 1.0); 3]] };
    assert!(matches!(encode_mlp(&mut m, &mlp, &xs, &bounds), Err(EncodeError::MissingBounds(_))));
}

fn stump(threshold: f64, left: f64, right: f64) -> Ensemble {
    let root = TreeNode::Split {
        feature: 0,
        threshold,
        left: Box::new(TreeNode::Leaf(Leaf::Constant { value: left })),
        right: Box::new(TreeNode::Leaf(Leaf::Constant { value: right })),
    };
    Ensemble::new(vec![Tree { n_features: 1, root }], Combination::Single).unwrap()
}

#[test]
fn tree_stump_and_single_leaf() {
    let p = Predictor::Ensemble(stump(0.5, 2.0, 7.0));
    let (m, inputs, enc) = encoding(&p, &unit(1));
    assert_eq!(fixed_outputs(&m, &inputs, &enc.outputs, &[0.3])[0], 2.0);
    assert_eq!(fixed_outputs(&m, &inputs, &enc.outputs, &[0.5])[0], 7.0);
    assert_eq!(fixed_outputs(&m, &inputs, &enc.outputs, &[0.9])[0], 7.0);

    let leaf = Tree { n_features: 1, root: TreeNode::Leaf(Leaf::Constant { value: 4.0 }) };
    let p = Predictor::Ensemble(Ensemble::new(vec![leaf], Combination::Single).unwrap());
    let (m, inputs, enc) = encoding(&p, &unit(1));
    assert!(enc.binaries.is_empty());
    assert_eq!(fixed_outputs(&m, &inputs, &enc.outputs, &[0.1])[0], 4.0);
}

#[test]
fn tree_thresholds_share_monotone_binaries() {
    let root = TreeNode::Split {
        feature: 0,
        threshold: 0.3,
        left: Box::new(TreeNode::Leaf(Leaf::Constant { value: 0.0 })),
        right: Box::new(TreeNode::Split {
            feature: 0,
            threshold: 0.7,
            left: Box::new(TreeNode::Leaf(Leaf::Constant { value: 1.0 })),
            right: Box::new(TreeNode::Leaf(Leaf::Constant { value: 2.0 })),
        }),
    };
    let t = Tree { n_features: 1, root };
    let e = Ensemble::new(vec![t.clone(), t], Combination::Average).unwrap();
    let (m, _, _) = encoding(&Predictor::Ensemble(e), &unit(1));
    let splits = m.variables().iter().filter(|v| v.name.starts_with("split")).count();
    assert_eq!(splits, 2);
    assert_eq!(m.constraints().iter().filter(|c| c.label.starts_with("split_order")).count(), 1);
}

#[test]
fn forest_of_three_matches_prediction() {
    let (x, y) = tree_data(120, 3, 1);
    let rf = fit_forest(&x, &y, &ForestConfig { n_trees: 3, max_depth: 2, seed: 3, ..Default::default() }).unwrap();
    assert!(max_encoding_error(&Predictor::Ensemble(rf), &unit(3), 20, 5) < 1e-6);
}

#[test]
fn boosted_and_model_tree_encodings_match() {
    let (x, y) = tree_data(150, 2, 2);
    let g = fit_gbt(&x, &y, &GbtConfig { n_estimators: 4, max_depth: 2, ..Default::default() }).unwrap();
    assert!(max_encoding_error(&Predictor::Ensemble(g), &unit(2), 15, 6) < 1e-6);
    let l = fit_lmdt(&x, &y, &TreeConfig { max_depth: 2, min_samples_split: 10, seed: 0 }).unwrap();
    assert!(max_encoding_error(&Predictor::Ensemble(l), &unit(2), 15, 7) < 1e-6);
}

fn conf_model(q: f64, lo: f64, hi: f64) -> Result<(MipModel, comicl::mip::VarRef), EncodeError> {
    let mut m = MipModel::new("c");
    let y = m.add_var("y", VarKind::Continuous, -1000.0, 1000.0)?;
    let u = m.add_var("u", VarKind::Continuous, 1.0, 1.0)?;
    add_regression_conformal(&mut m, y, u, q, Interval::new(lo, hi))?;
    Ok((m, y))
}

fn y_range(m: &MipModel, y: comicl::mip::VarRef) -> (f64, f64) {
    let mut lo = m.clone();
    lo.set_objective(LinExpr::from(y)).unwrap();
    let mut hi = m.clone();
    hi.set_objective(LinExpr::term(-1.0, y)).unwrap();
    (solve(&lo).objective.unwrap(), -solve(&hi).objective.unwrap())
}

#[test]
fn regression_conformal_interval() {
    let (m, y) = conf_model(2.0, 50.0, 100.0).unwrap();
    assert_eq!(m.constraints().len(), 2);
    assert_eq!(y_range(&m, y), (52.0, 98.0));
    let (m, y) = conf_model(0.0, 50.0, 100.0).unwrap();
    assert_eq!(y_range(&m, y), (50.0, 100.0));
    assert!(matches!(conf_model(f64::INFINITY, 50.0, 100.0), Err(EncodeError::CalibrationInfeasible)));

    let mut m = MipModel::new("c");
    let y = m.add_var("y", VarKind::Continuous, 0.0, 1.0).unwrap();
    let u = m.add_var("u", VarKind::Continuous, 0.0, 1.0).unwrap();
    assert!(add_regression_conformal(&mut m, y, u, 1.0, Interval::new(0.0, 1.0)).is_err());
}

#[test]
fn big_m_default_and_validation() {
    assert_eq!(default_big_m(3.0), 12.0);
    let mut m = MipModel::new("k");
    let ys: Vec<_> = (0..2).map(|_| m.add_var_auto("l", VarKind::Continuous, -5.0, 5.0).unwrap()).collect();
    let b = vec![Interval::new(-5.0, 5.0); 2];
    let r = add_classification_conformal(&mut m, &ys, &b, 1.0, &[1], 5.0, CLASS_EPS);
    assert!(matches!(r, Err(EncodeError::BigMTooSmall { .. })), "{r:?}");
    assert!(add_classification_conformal(&mut m, &ys, &b, 1.0, &[1], 12.0, CLASS_EPS).is_ok());
    assert!(add_classification_conformal(&mut m, &ys, &b, 1.0, &[], 12.0, CLASS_EPS).is_err());
}

#[test]
fn class_conformal_matches_set_containment() {
    // Fixing the logits, the model is feasible iff every undesired class is
    // outside the set {k : -z_k <= q} and some desired class is inside.
    let q = 0.4;
    let desired = [2usize, 3];
    let grid = [-2.0, -0.41, -0.39, -0.3, 0.5, 1.5];
    let mut count = 0;
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                for &d in &grid[..3] {
                    let z = [a, b, c, d];
                    let mut m = MipModel::new("k");
                    let ys: Vec<_> = z.iter().map(|&v| m.add_var_auto("l", VarKind::Continuous, v, v).unwrap()).collect();
                    let (_, ws) =
                        add_classification_conformal(&mut m, &ys, &[Interval::new(-3.0, 3.0); 4], q, &desired, 12.0, CLASS_EPS)
                            .unwrap();
                    let in_set = |k: usize| -z[k] <= q;
                    let want = !in_set(0) && !in_set(1) && (in_set(2) || in_set(3));
                    let got = solve(&m);
                    assert_eq!(got.status == SolveStatus::Optimal, want, "logits {z:?}");
                    if want {
                        let a = got.incumbent.unwrap();
                        assert_eq!(a[ws[0].index()], 0.0);
                        assert_eq!(a[ws[1].index()], 0.0);
                        assert!(a[ws[2].index()] + a[ws[3].index()] >= 1.0);
                    }
                    count += 1;
                }
            }
        }
    }
    assert_eq!(count, 648);
}

fn identity_spec() -> ProblemSpec {
    ProblemSpec {
        name: "toy".into(),
        task: TaskKind::Regression,
        feature_names: vec!["x".into()],
        feature_bounds: vec![Interval::new(-5.0, 5.0)],
        costs: vec![1.0],
        known: Vec::new(),
        outcome: OutcomeSet::Interval(Interval::new(0.0, 1.0)),
    }
}

#[test]
fn micl_identity_predictor() {
    let p = Predictor::Mlp(single_layer(vec![1.0], 0.0));
    let b = build_micl(&identity_spec(), &p).unwrap();
    let r = solve(&b.model);
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(b.input_values(&r.incumbent.unwrap())[0].abs() < 1e-9);
}

#[test]
fn reactor_structure_has_linearized_ratios() {
    let spec = ProblemSpec::reactor(vec![1.0; 5]);
    let phys = comicl::data::REACTOR_PHYSICAL;
    let to_phys = |u: &[f64]| -> Vec<f64> { u.iter().zip(&phys).map(|(v, b)| b.lo + b.width() * v).collect() };
    let labels: Vec<&str> = spec.known.iter().map(|k| k.label.as_str()).collect();
    assert!(labels.contains(&"len_dt_lo") && labels.contains(&"len_dt_hi"));
    let p = Predictor::Mlp(random_mlp(&[5, 4, 1], 2));
    let b = build_micl(&spec, &p).unwrap();
    for u in random_points(200, &unit(5), 11) {
        let x = to_phys(&u);
        let mut a = vec![0.0; b.model.num_vars()];
        for (v, val) in b.inputs.iter().zip(&u) {
            a[v.index()] = *val;
        }
        let eval = |label: &str| {
            let c = b.model.constraints().iter().find(|c| c.label == label).unwrap();
            c.violation(&a) <= 1e-9
        };
        assert_eq!(eval("len_dt_lo"), x[4] >= 10.0 * x[3] - 1e-9);
        assert_eq!(eval("len_dt_hi"), x[4] <= 150.0 * x[3] + 1e-9);
        assert_eq!(eval("feed_lo"), x[0] >= 0.75 * x[1] - 1e-9);
        assert_eq!(eval("residence_hi"), x[0] <= 120.0 * x[4] + 1e-9);
        assert_eq!(eval("flow_temp"), x[0] <= 1.1 * x[2] + 1e-9);
    }
}

#[test]
fn basket_structure_has_nutrient_rows() {
    let spec = ProblemSpec::basket(vec![1.0; 25]);
    let basket = comicl::data::basket();
    let p = Predictor::Mlp(random_mlp(&[25, 4, 4], 3));
    let b = build_micl(&spec, &p).unwrap();
    for (l, name) in basket.nutrients.iter().enumerate() {
        let c = b.model.constraints().iter().find(|c| c.label == format!("nutrient_{name}")).unwrap();
        assert_eq!(c.sense, Sense::Ge);
        assert_eq!(c.rhs, basket.nutreq[l]);
    }
    assert!(b.model.constraints().iter().any(|c| c.label == "fixed_salt" && c.sense == Sense::Eq));
    assert!(b.model.constraints().iter().any(|c| c.label == "fixed_sugar" && c.sense == Sense::Eq));
}

#[test]
fn ensemble_cardinality() {
    assert_eq!(enforced_count(10, 0.1), 9);
    assert_eq!(enforced_count(5, 0.1), 5);
    assert_eq!(enforced_count(1, 0.1), 1);
    assert_eq!(enforced_count(20, 0.05), 19);
}

fn small_reactor_models() -> (Predictor, UncertaintyModel, Vec<f64>) {
    let (ds, _) = comicl::data::synth_regression(300, 3, 2.0).unwrap();
    let cfg = MlpConfig { hidden: vec![6], epochs: 600, learning_rate: 0.1, l2: 0.0, seed: 1 };
    let y = ds.y().unwrap();
    let p = Predictor::Mlp(train_mlp(ds.features(), MlpTarget::Regression(y), &cfg).unwrap().model);
    let u = fit_uncertainty(&p, ds.features(), y, &MlpConfig { hidden: vec![4], ..cfg }).unwrap();
    let (cal, _) = comicl::data::synth_regression(100, 4, 2.0).unwrap();
    let scores = cal
        .features()
        .iter()
        .zip(cal.y().unwrap())
        .map(|(x, &t)| {
            comicl::conformal::score_regression(p.predict_scalar(x).unwrap(), u.predict(x).unwrap(), t, U_FLOOR).unwrap()
        })
        .collect();
    (p, u, scores)
}

#[test]
fn conformal_formulation_nests_inside_point_formulation() {
    let (p, u, scores) = small_reactor_models();
    let spec = ProblemSpec::reactor(vec![1.0, 0.8, 1.2, 0.6, 1.5]);
    let micl = solve(&build_micl(&spec, &p).unwrap().model).objective.unwrap();

    let mut zero = calibrate(&scores, 0.1, ScoreKind::NormalizedResidual).unwrap();
    zero.q_hat = 0.0;
    let opts = ClassConformalOptions::default();
    let c0 = solve(&build_cmicl(&spec, &p, Some(&u), &zero, &opts).unwrap().model).objective.unwrap();
    assert!((c0 - micl).abs() <= 1e-6 * (1.0 + micl.abs()), "{c0} vs {micl}");

    let mut prev = micl;
    for alpha in [0.3, 0.2, 0.1] {
        let cal = calibrate(&scores, alpha, ScoreKind::NormalizedResidual).unwrap();
        let r = solve(&build_cmicl(&spec, &p, Some(&u), &cal, &opts).unwrap().model);
        let obj = r.objective.unwrap_or(f64::INFINITY);
        assert!(obj >= prev - 1e-6, "alpha {alpha}: {obj} < {prev}");
        prev = obj;
    }

    let one = calibrate(&scores[..1], 0.1, ScoreKind::NormalizedResidual).unwrap();
    assert!(matches!(build_cmicl(&spec, &p, Some(&u), &one, &opts), Err(EncodeError::CalibrationInfeasible)));
    assert!(build_cmicl(&spec, &p, None, &zero, &opts).is_err());
}

#[test]
fn mondrian_calibration_feeds_infeasible_stratum() {
    let scores = [0.5, 1.0, 2.0, 3.0, 0.1, 0.2];
    let groups = [GroupId(0), GroupId(0), GroupId(0), GroupId(0), GroupId(1), GroupId(1)];
    let c = mondrian_calibrate(&scores, &groups, 0.2, ScoreKind::NormalizedResidual).unwrap();
    assert_eq!(encoder_quantile(&c).unwrap(), c.quantile_for(Some(INFEASIBLE_GROUP)).unwrap());
}

#[test]
fn ensemble_with_one_member_equals_point_formulation() {
    let (p, _, _) = small_reactor_models();
    let spec = ProblemSpec::reactor(vec![1.0, 0.8, 1.2, 0.6, 1.5]);
    let a = solve(&build_micl(&spec, &p).unwrap().model).objective.unwrap();
    let w = build_wmicl(&spec, &[p.clone()], 0.1).unwrap();
    let b = solve(&w.model).objective.unwrap();
    assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn classification_all_desired_reduces_to_cover() {
    let p = Predictor::Mlp(random_mlp(&[2, 4, 3], 8));
    let spec = ProblemSpec {
        name: "cls".into(),
        task: TaskKind::Classification,
        feature_names: vec!["a".into(), "b".into()],
        feature_bounds: unit(2),
        costs: vec![1.0, 1.0],
        known: Vec::new(),
        outcome: OutcomeSet::Classes(vec![0, 1, 2]),
    };
    let mut cal = calibrate(&[-1.0, -0.5, 0.0, 0.3, 0.7], 0.3, ScoreKind::NegativeTrueLogit).unwrap();
    cal.logit_scale = Some(2.0);
    let b = build_cmicl(&spec, &p, None, &cal, &ClassConformalOptions::default()).unwrap();
    assert_eq!(solve(&b.model).status, SolveStatus::Optimal);
    let explicit = ClassConformalOptions { big_m: Some(1e-3), eps: CLASS_EPS };
    assert!(matches!(build_cmicl(&spec, &p, None, &cal, &explicit), Err(EncodeError::BigMTooSmall { .. })));
}
