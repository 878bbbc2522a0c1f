//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use chrono::NaiveDate;
use loadcast::data::{split_train_test, synthesize_dataset, DatasetSplit, FeatureMatrix, SplitSpec, SynthProfile, HOURS};
use loadcast::model::{stage1_forward, stage1_input, stage2_forward, refine_inputs, ForwardCtx, LoadModel, STAGE1, STAGE2};
use loadcast::tensor::gradcheck::compare_with_finite_differences;
use loadcast::tensor::{Graph, ParamStore, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn mat(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

/// Q = Wq X, K = Wk X, V = Wv X, alpha = column softmax of K^T Q / sqrt(d_k),
/// A = V alpha, written out loop by loop. Returns `(A, alpha)` row-major.
pub fn literal_attention(x: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let x = mat(x);
    let q = mm(&mat(wq), &x);
    let k = mm(&mat(wk), &x);
    let v = mm(&mat(wv), &x);
    let (d_k, n) = (k.len(), x[0].len());
    let mut alpha = vec![vec![0.0; n]; n];
    for j in 0..n {
        let s: Vec<f64> = (0..n)
            .map(|i| (0..d_k).map(|r| k[r][i] * q[r][j]).sum::<f64>() / (d_k as f64).sqrt())
            .collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
        for i in 0..n {
            alpha[i][j] = (s[i] - m).exp() / z;
        }
    }
    (mm(&v, &alpha), alpha)
}

fn mse(g: &mut Graph, pred: Var, target: &Tensor) -> Var {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t).unwrap();
    let sq = g.mul(d, d).unwrap();
    g.mean(sq).unwrap()
}

/// `[24, B]` target matrix from per-day rows.
pub fn target_matrix(rows: &[[f64; HOURS]]) -> Tensor {
    let b = rows.len();
    Tensor::from_fn([HOURS, b], |k| rows[k % b][k / b])
}

fn stage1_loss(model: &LoadModel, params: &ParamStore, x: &Tensor, target: &Tensor) -> f64 {
    let mut g = Graph::new();
    let p = params.bind(&mut g, STAGE1, false);
    let xv = g.constant(x.clone());
    let y = stage1_forward(&mut g, &model.config, params, &p, xv, &mut ForwardCtx::train(0.0, 0)).unwrap();
    let l = mse(&mut g, y, target);
    g.value(l).item().unwrap()
}

fn stage2_loss(model: &LoadModel, params: &ParamStore, steps: &[Tensor], target: &Tensor) -> f64 {
    let mut g = Graph::new();
    let p = params.bind(&mut g, STAGE2, false);
    let sv: Vec<Var> = steps.iter().map(|t| g.constant(t.clone())).collect();
    let y = stage2_forward(&mut g, &model.config, &p, &sv, &mut ForwardCtx::eval()).unwrap();
    let l = mse(&mut g, y, target);
    g.value(l).item().unwrap()
}

pub struct FullCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

fn check_all(
    params: &ParamStore,
    prefix: &str,
    grads: &std::collections::BTreeMap<String, Tensor>,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> FullCheck {
    let mut out = FullCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let names: Vec<String> = params.names_with_prefix(prefix).cloned().collect();
    for name in names {
        let x = params.get(&name).unwrap().clone();
        let idx: Vec<usize> = if x.len() <= per_tensor {
            (0..x.len()).collect()
        } else {
            sample(rng, x.len(), per_tensor).into_vec()
        };
        let mut work = params.clone();
        let r = compare_with_finite_differences(
            &grads[&name],
            |t| {
                work.insert(name.clone(), t.clone());
                Ok(loss(&work))
            },
            &x,
            1e-6,
            Some(&idx),
        )
        .unwrap();
        out.checked += r.checked;
        if r.max_rel_error > out.max_rel_error {
            out.max_rel_error = r.max_rel_error;
            out.worst = format!("{name}[{}]", r.worst_index);
        }
    }
    out
}

/// Finite-difference check of the stage-1 MSE gradient (train-mode batch norm)
/// with respect to every stage-1 parameter tensor.
pub fn stage1_gradient_check(model: &LoadModel, features: &[&FeatureMatrix], targets: &[[f64; HOURS]], per_tensor: usize, seed: u64) -> FullCheck {
    let x = stage1_input(features).unwrap();
    let target = target_matrix(targets);
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, STAGE1, true);
    let xv = g.constant(x.clone());
    let y = stage1_forward(&mut g, &model.config, &model.params, &p, xv, &mut ForwardCtx::train(0.0, 0)).unwrap();
    let l = mse(&mut g, y, &target);
    g.backward(l).unwrap();
    let grads = p.gradients(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_all(&model.params, STAGE1, &grads, per_tensor, &mut rng, |ps| stage1_loss(model, ps, &x, &target))
}

pub fn stage2_gradient_check(model: &LoadModel, features: &[&FeatureMatrix], y_init: &[[f64; HOURS]], targets: &[[f64; HOURS]], per_tensor: usize, seed: u64) -> FullCheck {
    let steps = refine_inputs(features, y_init).unwrap();
    let target = target_matrix(targets);
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, STAGE2, true);
    let sv: Vec<Var> = steps.iter().map(|t| g.constant(t.clone())).collect();
    let y = stage2_forward(&mut g, &model.config, &p, &sv, &mut ForwardCtx::eval()).unwrap();
    let l = mse(&mut g, y, &target);
    g.backward(l).unwrap();
    let grads = p.gradients(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_all(&model.params, STAGE2, &grads, per_tensor, &mut rng, |ps| stage2_loss(model, ps, &steps, &target))
}

pub fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Synthetic records with the last 7 days held out.
pub fn synthetic_split(seed: u64, n_days: usize, profile: &SynthProfile) -> DatasetSplit {
    let recs = synthesize_dataset(seed, n_days, profile).unwrap();
    let end = recs.last().unwrap().date;
    let start = end - chrono::Duration::days(6);
    split_train_test(&recs, &SplitSpec::test_window(start, end)).unwrap()
}
