#![allow(dead_code)]

use comicl::encoders::{encode_predictor, EncodedOutput};
use comicl::interval::Interval;
use comicl::mip::{MipModel, VarKind, VarRef};
use comicl::models::*;
use comicl::rng::{standard_normal, stream};
use comicl::solver::{branch_and_bound, SolveOptions, SolveResult, SolveStatus};
use rand::Rng;

pub fn exact() -> SolveOptions {
    SolveOptions { rel_gap: 0.0, ..Default::default() }
}

pub fn solve(model: &MipModel) -> SolveResult {
    branch_and_bound(model, &exact()).expect("solver runs")
}

/// Gaussian-weight network with the given layer sizes.
pub fn random_mlp(sizes: &[usize], seed: u64) -> Mlp {
    let mut rng = stream(seed, "test/mlp");
    let layers = sizes
        .windows(2)
        .map(|w| Layer {
            weights: (0..w[1]).map(|_| (0..w[0]).map(|_| standard_normal(&mut rng)).collect()).collect(),
            bias: (0..w[1]).map(|_| 0.5 * standard_normal(&mut rng)).collect(),
        })
        .collect();
    Mlp::new(layers).unwrap()
}

pub fn random_points(n: usize, boxes: &[Interval], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, "test/points");
    (0..n).map(|_| boxes.iter().map(|b| b.lo + b.width() * rng.gen::<f64>()).collect()).collect()
}

/// Encoding-only model over a box, with the input variables.
pub fn encoding(predictor: &Predictor, boxes: &[Interval]) -> (MipModel, Vec<VarRef>, EncodedOutput) {
    let mut m = MipModel::new("enc");
    let inputs: Vec<VarRef> =
        boxes.iter().map(|b| m.add_var_auto("x", VarKind::Continuous, b.lo, b.hi).unwrap()).collect();
    let enc = encode_predictor(&mut m, predictor, &inputs).unwrap();
    (m, inputs, enc)
}

/// Output values of the encoding with the inputs fixed at `point`.
pub fn fixed_outputs(model: &MipModel, inputs: &[VarRef], outputs: &[VarRef], point: &[f64]) -> Vec<f64> {
    let mut m = model.clone();
    for (&v, &x) in inputs.iter().zip(point) {
        m.set_bounds(v, x, x).unwrap();
    }
    let r = solve(&m);
    assert_eq!(r.status, SolveStatus::Optimal, "fixed-input encoding unsolved at {point:?}");
    let a = r.incumbent.unwrap();
    outputs.iter().map(|o| a[o.index()]).collect()
}

/// Largest deviation between the encoding and the native forward pass.
pub fn max_encoding_error(predictor: &Predictor, boxes: &[Interval], n: usize, seed: u64) -> f64 {
    let (m, inputs, enc) = encoding(predictor, boxes);
    random_points(n, boxes, seed)
        .iter()
        .map(|p| {
            let got = fixed_outputs(&m, &inputs, &enc.outputs, p);
            let want = predictor.predict(p).unwrap();
            got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Small training set on the unit box with a nonlinear target.
pub fn tree_data(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = random_points(n, &vec![Interval::new(0.0, 1.0); d], seed);
    let y = x.iter().map(|r| (3.0 * r[0]).sin() + r[1] * r[d - 1] + if r[0] > 0.6 { 1.0 } else { 0.0 }).collect();
    (x, y)
}
