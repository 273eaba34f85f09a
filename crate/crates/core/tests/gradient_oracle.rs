mod common;

use common::{rel_err, rng, random_examples, random_tensor};
use mango_core::{Graph, Mlp, ModelConfig, Tensor, Var};
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;
type Maker = dyn Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tensor>;

/// `sum(w ⊙ f(inputs))` for a fixed weighting `w`, so that non-scalar
/// outputs get a generic upstream gradient.
fn weighted(build: &Build, inputs: &[Tensor], w: Option<&Tensor>) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone()).unwrap()).collect();
    let out = build(&mut g, &leaves);
    let root = match w {
        Some(w) => {
            let wv = g.constant(w.clone()).unwrap();
            let prod = g.mul(out, wv).unwrap();
            g.sum(prod).unwrap()
        }
        None => g.sum(out).unwrap(),
    };
    let value = g.value(root).item().unwrap();
    let grads = g.backward(root).unwrap();
    (value, leaves.iter().map(|&l| grads.wrt(l)).collect())
}

fn check(build: &Build, inputs: Vec<Tensor>, seed: u64) -> f64 {
    let mut r = rng(seed);
    let probe = {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone()).unwrap()).collect();
        let out = build(&mut g, &leaves);
        g.value(out).shape().to_vec()
    };
    let w = random_tensor(&mut r, &probe, 1.0);
    let (_, analytic) = weighted(build, &inputs, Some(&w));
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let fd = (weighted(build, &plus, Some(&w)).0 - weighted(build, &minus, Some(&w)).0) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i].data()[j], fd));
        }
    }
    worst
}

fn away_from_zero(t: Tensor) -> Tensor {
    t.map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v })
}

#[test]
fn every_op_matches_central_differences() {
    let mut r = rng(11);
    let ops: Vec<(&str, Box<Build>, Box<Maker>)> = vec![
        (
            "matmul",
            Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[3, 4], 1.0), random_tensor(r, &[4, 2], 1.0)]),
        ),
        (
            "add_row",
            Box::new(|g, v| g.add_row(v[0], v[1]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[3, 4], 1.0), random_tensor(r, &[4], 1.0)]),
        ),
        (
            "add",
            Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[2, 3], 1.0), random_tensor(r, &[2, 3], 1.0)]),
        ),
        (
            "sub",
            Box::new(|g, v| g.sub(v[0], v[1]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[5], 1.0), random_tensor(r, &[5], 1.0)]),
        ),
        (
            "mul",
            Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[2, 3], 1.0), random_tensor(r, &[2, 3], 1.0)]),
        ),
        (
            "scale",
            Box::new(|g, v| g.scale(v[0], -1.7).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[4], 1.0)]),
        ),
        (
            "mul_scalar",
            Box::new(|g, v| g.mul_scalar(v[0], v[1]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[2, 2], 1.0), random_tensor(r, &[], 1.0)]),
        ),
        (
            "relu",
            Box::new(|g, v| g.relu(v[0]).unwrap()),
            Box::new(|r| vec![away_from_zero(random_tensor(r, &[3, 3], 1.0))]),
        ),
        (
            "sigmoid",
            Box::new(|g, v| g.sigmoid(v[0]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[6], 2.0)]),
        ),
        (
            "exp",
            Box::new(|g, v| g.exp(v[0]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[4], 1.0)]),
        ),
        (
            "sum",
            Box::new(|g, v| g.sum(v[0]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[3, 2], 1.0)]),
        ),
        (
            "cross_entropy",
            Box::new(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]).unwrap()),
            Box::new(|r| vec![random_tensor(r, &[4, 3], 2.0)]),
        ),
    ];
    for (name, build, make) in &ops {
        for instance in 0..20 {
            let inputs = make(&mut r);
            let err = check(build.as_ref(), inputs, instance);
            assert!(err < TOL, "{name} instance {instance}: rel err {err:e}");
        }
    }
}

#[test]
fn full_mlp_loss_matches_central_differences() {
    let mut r = rng(5);
    for instance in 0..20 {
        let hidden: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(2..=6)).collect();
        let cfg = ModelConfig {
            input_dim: 4,
            hidden_dims: hidden,
            num_classes: 3,
            seed: instance,
        };
        let (mlp, mut store) = Mlp::init(&cfg).unwrap();
        // Zero biases put dead units exactly on the ReLU kink.
        for p in store.params.iter_mut() {
            for v in p.data_mut() {
                *v += 0.1 * common::normal(&mut r);
            }
        }
        let batch = random_examples(&mut r, 6, 4, 3);
        let (x, labels) = mango_core::data::to_batch(&batch).unwrap();
        let build = move |g: &mut Graph, params: &[Var]| {
            let xv = g.constant(x.clone()).unwrap();
            let logits = mlp.forward(g, params, xv).unwrap();
            g.cross_entropy(logits, &labels).unwrap()
        };
        let (_, analytic) = weighted(&build, &store.params, None);
        let mut worst: f64 = 0.0;
        for i in 0..store.params.len() {
            for j in 0..store.params[i].len() {
                let mut plus = store.params.clone();
                plus[i].data_mut()[j] += H;
                let mut minus = store.params.clone();
                minus[i].data_mut()[j] -= H;
                let fd = (weighted(&build, &plus, None).0 - weighted(&build, &minus, None).0) / (2.0 * H);
                worst = worst.max(rel_err(analytic[i].data()[j], fd));
            }
        }
        assert!(worst < TOL, "instance {instance}: rel err {worst:e}");
    }
}

#[test]
fn penalized_loss_gradient_includes_drift_term() {
    let mut r = rng(9);
    let (mlp, store) = common::drifted_model(&mut r, vec![4], 0.3);
    let batch = random_examples(&mut r, 5, 3, 3);
    let refs: Vec<_> = batch.iter().collect();
    let lambdas = [0.7, 2.5];
    let full = mango_core::optim::train_loss(&mlp, &store, Some(&lambdas), &refs).unwrap();
    let plain = mango_core::optim::train_loss(&mlp, &store, None, &refs).unwrap();
    let (gf, gp) = (full.param_grads().unwrap(), plain.param_grads().unwrap());
    let drift = store.drift();
    for t in 0..gf.len() {
        let lambda = lambdas[store.group_of(t)];
        for j in 0..gf[t].len() {
            let expected = gp[t].data()[j] + lambda * drift[t].data()[j];
            assert!((gf[t].data()[j] - expected).abs() < 1e-12);
        }
    }
    let lambda_grads = full.graph.backward(full.root).unwrap();
    for (i, &l) in full.lambdas.iter().enumerate() {
        let expected = 0.5 * store.group_drift()[i];
        assert!(rel_err(lambda_grads.wrt(l).item().unwrap(), expected) < 1e-12);
    }
}
