//! Oracle suites behind `mango selftest`. Each check is self-contained,
//! seeded, and reports a one-line verdict.

use std::time::Instant;

use mango_core::data::to_batch;
use mango_core::metrics::{AccuracyMatrix, Ratio};
use mango_core::optim::{
    compute_gate, gated_gradient, lambda_meta_gradient, meta_loss, meta_loss_and_grad, train_loss, virtual_update,
    LambdaOptimizer,
};
use mango_core::streams::minibatches;
use mango_core::{
    Example, Graph, MangoConfig, MangoLearner, Method, Mlp, ModelConfig, ParameterStore, ReplayBuffer,
    StabilityCoefficients, StreamSpec, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {} ({:.2}s): {}", self.name, self.seconds, self.detail)
    }
}

type Outcome = Result<String, String>;

fn timed(name: &'static str, limit_secs: Option<f64>, body: impl FnOnce() -> Outcome) -> Check {
    let start = Instant::now();
    let outcome = body();
    let seconds = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if let Some(limit) = limit_secs {
        if seconds >= limit {
            passed = false;
            detail = format!("{detail}; runtime {seconds:.1}s exceeds {limit}s");
        }
    }
    Check {
        name,
        passed,
        detail,
        seconds,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * normal(rng)).collect()).expect("shape matches data")
}

fn random_examples(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Vec<Example> {
    (0..n)
        .map(|_| Example {
            features: (0..dim).map(|_| normal(rng)).collect(),
            label: rng.random_range(0..classes),
            task_id: 0,
        })
        .collect()
}

/// Random MLP with parameters moved off their initialization and anchor.
fn random_model(rng: &mut ChaCha8Rng, hidden: Vec<usize>) -> (Mlp, ParameterStore) {
    let cfg = ModelConfig {
        input_dim: 3,
        hidden_dims: hidden,
        num_classes: 3,
        seed: rng.random(),
    };
    let (mlp, mut store) = Mlp::init(&cfg).expect("valid model config");
    for p in store.params.iter_mut() {
        for v in p.data_mut() {
            *v += 0.3 * normal(rng);
        }
    }
    (mlp, store)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

fn core_err(e: mango_core::Error) -> String {
    e.to_string()
}

type Build = dyn Fn(&mut Graph, &[Var]) -> mango_core::Result<Var>;

/// Value of `sum(w ⊙ f(inputs))` and its gradient with respect to every input.
fn weighted(build: &Build, inputs: &[Tensor], w: &Tensor) -> mango_core::Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let leaves = inputs.iter().map(|t| g.leaf(t.clone())).collect::<mango_core::Result<Vec<_>>>()?;
    let out = build(&mut g, &leaves)?;
    let wv = g.constant(w.clone())?;
    let prod = g.mul(out, wv)?;
    let root = g.sum(prod)?;
    let value = g.value(root).item()?;
    let grads = g.backward(root)?;
    Ok((value, leaves.iter().map(|&l| grads.wrt(l)).collect()))
}

fn finite_difference_error(build: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> mango_core::Result<f64> {
    const H: f64 = 1e-5;
    let shape = {
        let mut g = Graph::new();
        let leaves = inputs.iter().map(|t| g.leaf(t.clone())).collect::<mango_core::Result<Vec<_>>>()?;
        let out = build(&mut g, &leaves)?;
        g.value(out).shape().to_vec()
    };
    let w = random_tensor(rng, &shape, 1.0);
    let (_, analytic) = weighted(build, inputs, &w)?;
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let fd = (weighted(build, &plus, &w)?.0 - weighted(build, &minus, &w)?.0) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i].data()[j], fd));
        }
    }
    Ok(worst)
}

type Maker = fn(&mut ChaCha8Rng) -> Vec<Tensor>;

fn op_cases() -> Vec<(&'static str, Box<Build>, Maker)> {
    fn off_kink(t: Tensor) -> Tensor {
        t.map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v })
    }
    vec![
        ("matmul", Box::new(|g, v| g.matmul(v[0], v[1])), |r| vec![random_tensor(r, &[3, 4], 1.0), random_tensor(r, &[4, 2], 1.0)]),
        ("add_row", Box::new(|g, v| g.add_row(v[0], v[1])), |r| vec![random_tensor(r, &[3, 4], 1.0), random_tensor(r, &[4], 1.0)]),
        ("add", Box::new(|g, v| g.add(v[0], v[1])), |r| vec![random_tensor(r, &[2, 3], 1.0), random_tensor(r, &[2, 3], 1.0)]),
        ("sub", Box::new(|g, v| g.sub(v[0], v[1])), |r| vec![random_tensor(r, &[5], 1.0), random_tensor(r, &[5], 1.0)]),
        ("mul", Box::new(|g, v| g.mul(v[0], v[1])), |r| vec![random_tensor(r, &[2, 3], 1.0), random_tensor(r, &[2, 3], 1.0)]),
        ("scale", Box::new(|g, v| g.scale(v[0], -1.7)), |r| vec![random_tensor(r, &[4], 1.0)]),
        ("mul_scalar", Box::new(|g, v| g.mul_scalar(v[0], v[1])), |r| vec![random_tensor(r, &[2, 2], 1.0), random_tensor(r, &[], 1.0)]),
        ("relu", Box::new(|g, v| g.relu(v[0])), |r| vec![off_kink(random_tensor(r, &[3, 3], 1.0))]),
        ("sigmoid", Box::new(|g, v| g.sigmoid(v[0])), |r| vec![random_tensor(r, &[6], 2.0)]),
        ("exp", Box::new(|g, v| g.exp(v[0])), |r| vec![random_tensor(r, &[4], 1.0)]),
        ("sum", Box::new(|g, v| g.sum(v[0])), |r| vec![random_tensor(r, &[3, 2], 1.0)]),
        ("cross_entropy", Box::new(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2])), |r| vec![random_tensor(r, &[4, 3], 2.0)]),
    ]
}

/// Central differences (h = 1e-5) against reverse mode for every op and the
/// full network loss; 20 instances each, max relative error below 1e-5.
pub fn autodiff_oracle() -> Check {
    timed("autodiff oracle", Some(10.0), || {
        const INSTANCES: usize = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(0xad);
        let mut worst: (f64, &str) = (0.0, "");
        for (name, build, make) in op_cases() {
            for _ in 0..INSTANCES {
                let inputs = make(&mut rng);
                let e = finite_difference_error(build.as_ref(), &inputs, &mut rng).map_err(core_err)?;
                if e > worst.0 {
                    worst = (e, name);
                }
            }
        }
        for _ in 0..INSTANCES {
            let layers = rng.random_range(1..=3);
            let hidden: Vec<usize> = (0..layers).map(|_| rng.random_range(2..=6)).collect();
            let (mlp, store) = random_model(&mut rng, hidden);
            let batch = random_examples(&mut rng, 6, 3, 3);
            let (x, labels) = to_batch(&batch).map_err(core_err)?;
            let build = move |g: &mut Graph, p: &[Var]| {
                let xv = g.constant(x.clone())?;
                let logits = mlp.forward(g, p, xv)?;
                g.cross_entropy(logits, &labels)
            };
            let e = finite_difference_error(&build, &store.params, &mut rng).map_err(core_err)?;
            if e > worst.0 {
                worst = (e, "mlp loss");
            }
        }
        let detail = format!(
            "{} ops + network loss, {INSTANCES} instances each, max rel err {:.2e} ({})",
            op_cases().len(),
            worst.0,
            worst.1
        );
        if worst.0 < 1e-5 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

struct HyperInstance {
    mlp: Mlp,
    store: ParameterStore,
    batch: Vec<Example>,
    mem: Vec<Example>,
    rho: Vec<f64>,
}

const HYPER_ETA: f64 = 0.05;

fn hyper_instance(rng: &mut ChaCha8Rng) -> HyperInstance {
    let layers = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..layers).map(|_| rng.random_range(3..=7)).collect();
    let (mlp, store) = random_model(rng, hidden);
    let batch = random_examples(rng, 8, 3, 3);
    let mem = random_examples(rng, 8, 3, 3);
    let rho = (0..store.num_groups()).map(|_| rng.random_range(-2.0..1.0)).collect();
    HyperInstance {
        mlp,
        store,
        batch,
        mem,
        rho,
    }
}

/// `(θ', gate)` for the given `ρ`.
fn virtual_image(inst: &HyperInstance, rho: &[f64]) -> mango_core::Result<(Vec<Tensor>, Vec<Tensor>)> {
    let lambdas: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
    let refs: Vec<&Example> = inst.batch.iter().collect();
    let grads = train_loss(&inst.mlp, &inst.store, Some(&lambdas), &refs)?.param_grads()?;
    let gate = compute_gate(&inst.store.params)?;
    let image = virtual_update(&inst.store.params, &gated_gradient(&grads, &gate)?, HYPER_ETA)?;
    Ok((image, gate))
}

/// Closed-form `∂L_meta/∂ρ` against central differences of
/// `ρ ↦ L_meta(θ'(ρ))` on 10 random models with 2–4 groups.
pub fn hypergradient_oracle() -> Check {
    timed("hypergradient oracle", Some(10.0), || {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(0x4e);
        let mut worst: f64 = 0.0;
        let mut max_params = 0;
        let mut group_counts = Vec::new();
        for _ in 0..10 {
            let inst = hyper_instance(&mut rng);
            max_params = max_params.max(inst.store.num_parameters());
            group_counts.push(inst.store.num_groups());
            let mem: Vec<&Example> = inst.mem.iter().collect();
            let (image, gate) = virtual_image(&inst, &inst.rho).map_err(core_err)?;
            let (_, grad_meta) = meta_loss_and_grad(&inst.mlp, &image, &mem).map_err(core_err)?;
            let lambdas: Vec<f64> = inst.rho.iter().map(|r| r.exp()).collect();
            let closed = lambda_meta_gradient(&inst.store, &gate, &grad_meta, HYPER_ETA, &lambdas)
                .map_err(core_err)?
                .d_rho;
            for i in 0..inst.rho.len() {
                let at = |delta: f64| -> Result<f64, String> {
                    let mut rho = inst.rho.clone();
                    rho[i] += delta;
                    let (img, _) = virtual_image(&inst, &rho).map_err(core_err)?;
                    meta_loss(&inst.mlp, &img, &mem).map_err(core_err)
                };
                let fd = (at(h)? - at(-h)?) / (2.0 * h);
                worst = worst.max(rel_err(closed[i], fd));
            }
        }
        let groups_ok = group_counts.iter().all(|g| (2..=4).contains(g)) && max_params <= 200;
        let detail = format!(
            "10 models, groups {group_counts:?}, at most {max_params} parameters, max rel err {worst:.2e}"
        );
        if worst < 1e-4 && groups_ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

/// One million random parameters: gate in (0, 1), strict shrinkage of every
/// nonzero gradient, and exactly 0.5 at θ = 0.
pub fn gate_invariants() -> Check {
    timed("gate invariants", None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6a7e);
        let (mut total, mut zeros, mut constant_tensors) = (0usize, 0usize, 0usize);
        while total < 1_000_000 {
            let n = rng.random_range(1..=64);
            let scale = 10f64.powf(rng.random_range(-6.0..3.0));
            let mut theta = random_tensor(&mut rng, &[n], scale);
            match rng.random_range(0..20) {
                0 => {
                    let c = normal(&mut rng);
                    theta = Tensor::full(&[n], c);
                    constant_tensors += 1;
                }
                1..=4 => {
                    let j = rng.random_range(0..n);
                    theta.data_mut()[j] = 0.0;
                }
                _ => {}
            }
            let g_scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let g = random_tensor(&mut rng, &[n], g_scale);
            let gate = compute_gate(std::slice::from_ref(&theta)).map_err(core_err)?;
            let gated = gated_gradient(std::slice::from_ref(&g), &gate).map_err(core_err)?;
            for j in 0..n {
                let (s, t) = (gate[0].data()[j], theta.data()[j]);
                if !(s > 0.0 && s < 1.0) {
                    return Err(format!("gate {s} outside (0, 1) at θ = {t}"));
                }
                if t == 0.0 {
                    zeros += 1;
                    if s != 0.5 {
                        return Err(format!("gate {s} at θ = 0"));
                    }
                }
                let (gj, hj) = (g.data()[j], gated[0].data()[j]);
                if gj != 0.0 && hj.abs() >= gj.abs() {
                    return Err(format!("|g̃| = {} not below |g| = {}", hj.abs(), gj.abs()));
                }
            }
            total += n;
        }
        Ok(format!("{total} parameters ({zeros} exact zeros, {constant_tensors} constant tensors)"))
    })
}

/// λ stays positive over 10⁴ random updates, and plain descent on ρ moves
/// each ρ_i in the direction of the gated drift / meta-gradient inner product.
pub fn lambda_properties() -> Check {
    timed("lambda positivity and sign", None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1a);
        for optimizer in [LambdaOptimizer::Adam, LambdaOptimizer::GradientDescent] {
            let mut coeffs = StabilityCoefficients::new(4, -7.6, 2e-3, optimizer);
            for step in 0..10_000 {
                let g: Vec<f64> = (0..4)
                    .map(|_| normal(&mut rng) * 10f64.powf(rng.random_range(-6.0..1.0)))
                    .collect();
                coeffs.update(&g).map_err(core_err)?;
                if let Some(bad) = coeffs.lambdas().iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
                    return Err(format!("{} step {step}: λ = {bad}", optimizer.name()));
                }
            }
        }
        let mut mismatches = 0;
        let mut checked = 0;
        for _ in 0..100 {
            let inst = hyper_instance(&mut rng);
            let gate = compute_gate(&inst.store.params).map_err(core_err)?;
            let grad_meta: Vec<Tensor> = inst
                .store
                .params
                .iter()
                .map(|p| random_tensor(&mut rng, p.shape(), 1.0))
                .collect();
            let lambdas: Vec<f64> = inst.rho.iter().map(|r| r.exp()).collect();
            let hyper =
                lambda_meta_gradient(&inst.store, &gate, &grad_meta, HYPER_ETA, &lambdas).map_err(core_err)?;
            let drift = inst.store.drift();
            let mut inner = vec![0.0; inst.store.num_groups()];
            for t in 0..drift.len() {
                for j in 0..drift[t].len() {
                    inner[inst.store.group_of(t)] += gate[t].data()[j] * drift[t].data()[j] * grad_meta[t].data()[j];
                }
            }
            let mut coeffs =
                StabilityCoefficients::new(inner.len(), 0.0, 0.1, LambdaOptimizer::GradientDescent);
            coeffs.update(&hyper.d_rho).map_err(core_err)?;
            for (i, ip) in inner.iter().enumerate() {
                checked += 1;
                if coeffs.rho()[i].signum() != ip.signum() || coeffs.rho()[i] == 0.0 {
                    mismatches += 1;
                }
            }
        }
        let detail = format!("2 × 10000 updates positive; sign matched on {}/{checked} groups of 100 instances", checked - mismatches);
        if mismatches == 0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn marker(i: usize) -> Example {
    Example {
        features: Vec::new(),
        label: i,
        task_id: 0,
    }
}

/// `P(|X − np| > 3σ)` for `X ~ Binomial(n, p)`.
fn binomial_outside_3sigma(n: u64, p: f64) -> f64 {
    let mean = n as f64 * p;
    let band = 3.0 * (n as f64 * p * (1.0 - p)).sqrt();
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut outside = 0.0;
    for k in 0..=n {
        if k > 0 {
            pmf *= (n - k + 1) as f64 / k as f64 * p / (1.0 - p);
        }
        if (k as f64 - mean).abs() > band {
            outside += pmf;
        }
    }
    outside
}

/// Exhaustive M = 2, N = 4 enumeration of the replacement draws, then a
/// Monte Carlo run with M = 100, N = 10 000 over 1 000 trials.
pub fn reservoir() -> Check {
    timed("reservoir sampling", Some(60.0), || {
        let mut kept = [0u32; 4];
        let mut outcomes = 0u32;
        for d2 in 0..=2 {
            for d3 in 0..=3 {
                let mut buf = ReplayBuffer::new(2, 0);
                buf.insert(marker(0));
                buf.insert(marker(1));
                buf.insert_with_draw(marker(2), d2);
                buf.insert_with_draw(marker(3), d3);
                outcomes += 1;
                for e in buf.items() {
                    kept[e.label] += 1;
                }
            }
        }
        if kept.iter().any(|&k| 2 * k != outcomes) {
            return Err(format!("exhaustive inclusion counts {kept:?} of {outcomes}"));
        }

        let (m, n, trials) = (100usize, 10_000usize, 1_000u64);
        let mut counts = vec![0u32; n];
        for trial in 0..trials {
            let mut buf = ReplayBuffer::new(m, 0x5e5e ^ trial);
            for i in 0..n {
                buf.insert(marker(i));
            }
            for e in buf.items() {
                counts[e.label] += 1;
            }
        }
        let p = m as f64 / n as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let outliers = counts
            .iter()
            .filter(|&&c| (c as f64 / trials as f64 - p).abs() > 3.0 * sigma)
            .count();
        // With 10 000 items some fall outside 3σ by chance; the count of such
        // items must itself be within 3σ of its binomial expectation.
        let q = binomial_outside_3sigma(trials, p);
        let expected = n as f64 * q;
        let allowed = expected + 3.0 * (n as f64 * q * (1.0 - q)).sqrt();
        let block = n / 10;
        let block_sigma = (p * (1.0 - p) / (block as f64 * trials as f64)).sqrt();
        let worst_block = counts
            .chunks(block)
            .map(|c| (c.iter().map(|&x| x as f64).sum::<f64>() / (block as f64 * trials as f64) - p).abs() / block_sigma)
            .fold(0.0, f64::max);
        let detail = format!(
            "exhaustive 12 outcomes: each item kept in 6; Monte Carlo: {outliers} of {n} items outside 3σ \
             (expected {expected:.1}, allowed {allowed:.1}), worst arrival-decile deviation {worst_block:.2}σ"
        );
        if (outliers as f64) <= allowed && worst_block < 3.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn ratio_rows(rows: &[&[&str]]) -> Result<AccuracyMatrix, String> {
    let rows = rows
        .iter()
        .map(|r| r.iter().map(|s| s.parse::<Ratio>()).collect::<mango_core::Result<Vec<_>>>())
        .collect::<mango_core::Result<Vec<_>>>()
        .map_err(core_err)?;
    AccuracyMatrix::from_rows(rows).map_err(core_err)
}

/// Constant matrices and the worked two-task examples.
pub fn metric_identities() -> Check {
    timed("metric identities", None, || {
        for c in ["0", "0.25", "0.37", "0.999", "1"] {
            let value: Ratio = c.parse().map_err(core_err)?;
            for t in 2..=6 {
                let m = AccuracyMatrix::from_rows((0..t).map(|k| vec![value; k + 1]).collect()).map_err(core_err)?;
                let s = m.summary().map_err(core_err)?;
                let cf = value.to_f64();
                let close = |x: f64| (x - cf).abs() <= 1e-12;
                if !(close(s.acc) && close(s.aaa) && close(s.wc_acc) && s.bwt.abs() <= 1e-12) {
                    return Err(format!("constant {c}, T = {t}: {s:?}"));
                }
            }
        }
        let bwt_a = ratio_rows(&[&["0.9"], &["0.8", "0.7"]])?.summary().map_err(core_err)?.bwt;
        let bwt_b = ratio_rows(&[&["0.5"], &["0.7", "0.9"]])?.summary().map_err(core_err)?.bwt;
        let wc = ratio_rows(&[&["1.0"], &["0.4", "0.8"]])?.summary().map_err(core_err)?.wc_acc;
        let detail = format!("constant matrices exact; worked examples bwt {bwt_a} / {bwt_b}, wc_acc {wc}");
        if bwt_a == -0.1 && bwt_b == 0.2 && wc == 0.6 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn ce_grad(mlp: &Mlp, params: &[Tensor], batch: &[&Example]) -> mango_core::Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let vars = params.iter().map(|p| g.leaf(p.clone())).collect::<mango_core::Result<Vec<_>>>()?;
    let rows: Vec<&[f64]> = batch.iter().map(|e| e.features.as_slice()).collect();
    let x = g.constant(Tensor::from_rows(&rows)?)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let logits = mlp.forward(&mut g, &vars, x)?;
    let loss = g.cross_entropy(logits, &labels)?;
    let grads = g.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.wrt(v)).collect())
}

fn momentum_step(params: &mut [Tensor], velocity: &mut [Tensor], grads: &[Tensor], eta: f64, mu: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        for j in 0..p.len() {
            v.data_mut()[j] = mu * v.data()[j] + g.data()[j];
            p.data_mut()[j] -= eta * v.data()[j];
        }
    }
}

fn same_bits(a: &[Tensor], b: &[Tensor]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()))
}

/// 100 steps of the FT- and ER-configured learner against hand-written
/// fine-tuning and experience-replay loops, compared bit for bit.
pub fn ablation_collapse() -> Check {
    timed("ablation collapse", None, || {
        const STEPS: usize = 100;
        let spec = StreamSpec::default();
        let tasks = spec.generate().map_err(core_err)?;
        let batches: Vec<Vec<Example>> = tasks
            .iter()
            .enumerate()
            .map(|(t, task)| minibatches(task, 10, 77 + t as u64))
            .collect::<mango_core::Result<Vec<_>>>()
            .map_err(core_err)?
            .into_iter()
            .flatten()
            .take(STEPS)
            .collect();
        let (mlp, store) = Mlp::init(&ModelConfig {
            input_dim: spec.input_dim,
            hidden_dims: vec![32, 32],
            num_classes: spec.total_classes(),
            seed: 3,
        })
        .map_err(core_err)?;

        let mut report = Vec::new();
        for method in [Method::Ft, Method::Er] {
            let cfg = MangoConfig::default().with_method(method);
            let capacity = if method == Method::Ft { 0 } else { 200 };
            let mut learner = MangoLearner::new(mlp.clone(), store.clone(), cfg.clone(), 11).map_err(core_err)?;
            let mut buffer = ReplayBuffer::new(capacity, 12);

            let mut params = store.params.clone();
            let mut velocity: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            let mut memory = ReplayBuffer::new(capacity, 12);
            let mut draws = ChaCha8Rng::seed_from_u64(11);
            for (step, batch) in batches.iter().enumerate() {
                learner.step(batch, &mut buffer).map_err(core_err)?;
                for _ in 0..cfg.glances {
                    let mut refs: Vec<&Example> = batch.iter().collect();
                    if method == Method::Er && !memory.is_empty() {
                        for _ in 0..cfg.replay_batch {
                            refs.push(&memory.items()[draws.random_range(0..memory.len())]);
                        }
                    }
                    let g = ce_grad(&mlp, &params, &refs).map_err(core_err)?;
                    momentum_step(&mut params, &mut velocity, &g, cfg.eta, cfg.momentum);
                }
                for e in batch {
                    memory.insert(e.clone());
                }
                if !same_bits(&learner.store.params, &params) {
                    return Err(format!("{method} diverged from the reference loop at step {step}"));
                }
            }
            report.push(format!("{method}: {STEPS} steps bitwise identical"));
        }
        Ok(report.join("; "))
    })
}

/// Every oracle suite, in a fixed order.
pub fn run_all() -> Vec<Check> {
    vec![
        autodiff_oracle(),
        hypergradient_oracle(),
        gate_invariants(),
        lambda_properties(),
        reservoir(),
        metric_identities(),
        ablation_collapse(),
    ]
}
