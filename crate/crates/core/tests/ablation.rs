use mango_core::session::{run_seed, RunSettings};
use mango_core::streams::minibatches;
use mango_core::{
    Example, Graph, MangoConfig, MangoLearner, Method, Mlp, ModelConfig, ParameterStore, ReplayBuffer, StreamSpec,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEPS: usize = 100;

fn setup() -> (Mlp, ParameterStore, Vec<Vec<Example>>) {
    let spec = StreamSpec { seed: 4, ..StreamSpec::default() };
    let tasks = spec.generate().unwrap();
    let batches: Vec<Vec<Example>> = tasks
        .iter()
        .enumerate()
        .flat_map(|(t, task)| minibatches(task, 10, 50 + t as u64).unwrap())
        .take(STEPS)
        .collect();
    assert_eq!(batches.len(), STEPS);
    let (mlp, store) = Mlp::init(&ModelConfig {
        input_dim: spec.input_dim,
        hidden_dims: vec![16, 16],
        num_classes: spec.total_classes(),
        seed: 9,
    })
    .unwrap();
    (mlp, store, batches)
}

/// Plain cross-entropy gradient, written against the graph directly.
fn ce_grad(mlp: &Mlp, params: &[Tensor], batch: &[&Example]) -> Vec<Tensor> {
    let mut g = Graph::new();
    let vars: Vec<_> = params.iter().map(|p| g.leaf(p.clone()).unwrap()).collect();
    let rows: Vec<&[f64]> = batch.iter().map(|e| e.features.as_slice()).collect();
    let x = g.constant(Tensor::from_rows(&rows).unwrap()).unwrap();
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let logits = mlp.forward(&mut g, &vars, x).unwrap();
    let loss = g.cross_entropy(logits, &labels).unwrap();
    let grads = g.backward(loss).unwrap();
    vars.iter().map(|&v| grads.wrt(v)).collect()
}

fn sgd_momentum(params: &mut [Tensor], velocity: &mut [Tensor], grads: &[Tensor], eta: f64, mu: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        for j in 0..p.len() {
            v.data_mut()[j] = mu * v.data()[j] + g.data()[j];
            p.data_mut()[j] -= eta * v.data()[j];
        }
    }
}

fn bits(params: &[Tensor]) -> Vec<u64> {
    params.iter().flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn ft_configuration_is_plain_fine_tuning() {
    let (mlp, store, batches) = setup();
    let cfg = MangoConfig::default().with_method(Method::Ft);
    let mut learner = MangoLearner::new(mlp.clone(), store.clone(), cfg.clone(), 1).unwrap();
    let mut buffer = ReplayBuffer::new(0, 2);

    let mut params = store.params.clone();
    let mut velocity: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for batch in &batches {
        learner.step(batch, &mut buffer).unwrap();
        let refs: Vec<&Example> = batch.iter().collect();
        for _ in 0..cfg.glances {
            let g = ce_grad(&mlp, &params, &refs);
            sgd_momentum(&mut params, &mut velocity, &g, cfg.eta, cfg.momentum);
        }
        assert_eq!(bits(&learner.store.params), bits(&params));
    }
    assert_eq!(learner.coeffs.steps(), 0);
}

#[test]
fn er_configuration_is_plain_experience_replay() {
    let (mlp, store, batches) = setup();
    let cfg = MangoConfig::default().with_method(Method::Er);
    let mut learner = MangoLearner::new(mlp.clone(), store.clone(), cfg.clone(), 1).unwrap();
    let mut buffer = ReplayBuffer::new(200, 2);

    let mut params = store.params.clone();
    let mut velocity: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut memory = ReplayBuffer::new(200, 2);
    let mut draws = ChaCha8Rng::seed_from_u64(1);
    for batch in &batches {
        learner.step(batch, &mut buffer).unwrap();
        for _ in 0..cfg.glances {
            let mut refs: Vec<&Example> = batch.iter().collect();
            if !memory.is_empty() {
                for _ in 0..cfg.replay_batch {
                    refs.push(&memory.items()[draws.random_range(0..memory.len())]);
                }
            }
            let g = ce_grad(&mlp, &params, &refs);
            sgd_momentum(&mut params, &mut velocity, &g, cfg.eta, cfg.momentum);
        }
        for e in batch {
            memory.insert(e.clone());
        }
        assert_eq!(bits(&learner.store.params), bits(&params));
    }
    assert_eq!(buffer.items(), memory.items());
}

#[test]
fn no_meta_keeps_lambda_at_initialization() {
    let (mlp, store, batches) = setup();
    let cfg = MangoConfig::default().with_method(Method::MangoNoMeta);
    let mut learner = MangoLearner::new(mlp, store, cfg, 1).unwrap();
    let mut buffer = ReplayBuffer::new(50, 2);
    for batch in batches.iter().take(20) {
        let d = learner.step(batch, &mut buffer).unwrap();
        assert!(d.meta_loss.is_none());
    }
    assert!(learner.coeffs.rho().iter().all(|&r| r == -7.6));
}

#[test]
fn full_method_moves_lambda() {
    let (mlp, store, batches) = setup();
    let mut learner = MangoLearner::new(mlp, store, MangoConfig::default(), 1).unwrap();
    let mut buffer = ReplayBuffer::new(50, 2);
    for batch in batches.iter().take(20) {
        learner.step(batch, &mut buffer).unwrap();
    }
    assert!(learner.coeffs.steps() > 0);
    assert!(learner.coeffs.rho().iter().any(|&r| r != -7.6));
}

#[test]
fn seed_runs_are_reproducible() {
    let spec = StreamSpec { samples_per_task: 100, seed: 1, ..StreamSpec::default() };
    let tasks = spec.generate().unwrap();
    let settings = RunSettings {
        hidden_dims: vec![8],
        batch_size: 10,
        buffer_capacity: 20,
        mango: MangoConfig::default(),
    };
    let a = run_seed(&tasks, spec.total_classes(), &settings, 3).unwrap();
    let b = run_seed(&tasks, spec.total_classes(), &settings, 3).unwrap();
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.steps, b.steps);
    assert_eq!(bits(&a.learner.store.params), bits(&b.learner.store.params));
    assert_eq!(a.matrix.num_tasks(), spec.num_tasks);
    let c = run_seed(&tasks, spec.total_classes(), &settings, 4).unwrap();
    assert_ne!(bits(&a.learner.store.params), bits(&c.learner.store.params));
}
