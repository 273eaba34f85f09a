//! The gated, meta-regularized update rule.
//!
//! One mini-batch step, per glance:
//!
//! 1. `L_train = CE + Σ_i λ_i/2 ‖θ_i − θ_i^old‖²` and its gradient `g`.
//! 2. Gate: `g̃_j = g_j · σ(θ_j / std(θ_l))`, per tensor.
//! 3. On qualifying mini-batches (first glance only, buffer non-empty): the
//!    virtual image `θ' = θ − η g̃`, replay cross-entropy at `θ'`, its
//!    hypergradient with respect to `ρ = ln λ`, and an optimizer step on `ρ`.
//! 4. Momentum SGD on `g̃`.
//!
//! After the last glance the incoming examples are offered to the buffer.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::data::{to_batch, Example};
use crate::error::{Error, Result};
use crate::model::{Mlp, ParameterStore};
use crate::replay::ReplayBuffer;
use crate::tensor::{self, Tensor};

/// Floor for the per-tensor standard deviation inside the gate.
pub const GATE_STD_FLOOR: f64 = 1e-8;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Named training recipes. All but `Mango` are ablations of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mango,
    /// Plain fine-tuning: no replay, no gate, no penalty.
    Ft,
    /// Experience replay only.
    Er,
    /// Gate and fixed penalty; λ stays at its initial value.
    MangoNoMeta,
    /// Gate and replay, no penalty term.
    MangoNoReg,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mango,
        Method::Ft,
        Method::Er,
        Method::MangoNoMeta,
        Method::MangoNoReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mango => "mango",
            Method::Ft => "ft",
            Method::Er => "er",
            Method::MangoNoMeta => "mango_no_meta",
            Method::MangoNoReg => "mango_no_reg",
        }
    }

    /// Whether the recipe needs replay memory.
    pub fn uses_buffer(self) -> bool {
        !matches!(self, Method::Ft)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(alloc::format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaOptimizer {
    Adam,
    /// Plain gradient descent on `ρ`.
    GradientDescent,
}

impl LambdaOptimizer {
    pub fn name(self) -> &'static str {
        match self {
            LambdaOptimizer::Adam => "adam",
            LambdaOptimizer::GradientDescent => "gd",
        }
    }
}

impl FromStr for LambdaOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(LambdaOptimizer::Adam),
            "gd" => Ok(LambdaOptimizer::GradientDescent),
            _ => Err(Error::Invalid(alloc::format!("unknown lambda optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MangoConfig {
    pub eta: f64,
    pub eta_lambda: f64,
    pub momentum: f64,
    pub glances: usize,
    /// Meta step on every `meta_every`-th incoming mini-batch.
    pub meta_every: usize,
    pub meta_batch: usize,
    pub replay_batch: usize,
    /// Initial `ρ = ln λ`, shared by every group.
    pub rho_init: f64,
    pub lambda_optimizer: LambdaOptimizer,
    /// Concatenate a replay draw into the cross-entropy term.
    pub replay_in_train: bool,
    pub gate_enabled: bool,
    pub reg_enabled: bool,
    pub meta_enabled: bool,
}

impl Default for MangoConfig {
    fn default() -> Self {
        Self {
            eta: 0.02,
            eta_lambda: 2e-3,
            momentum: 0.9,
            glances: 3,
            meta_every: 3,
            meta_batch: 32,
            replay_batch: 64,
            rho_init: -7.6,
            lambda_optimizer: LambdaOptimizer::Adam,
            replay_in_train: true,
            gate_enabled: true,
            reg_enabled: true,
            meta_enabled: true,
        }
    }
}

impl MangoConfig {
    /// Sets the four component flags to the recipe's values.
    pub fn with_method(mut self, method: Method) -> Self {
        let (replay, gate, reg, meta) = match method {
            Method::Mango => (true, true, true, true),
            Method::Ft => (false, false, false, false),
            Method::Er => (true, false, false, false),
            Method::MangoNoMeta => (true, true, true, false),
            Method::MangoNoReg => (true, true, false, false),
        };
        self.replay_in_train = replay;
        self.gate_enabled = gate;
        self.reg_enabled = reg;
        self.meta_enabled = meta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Invalid(String::from(msg)));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be > 0");
        }
        if !(self.eta_lambda >= 0.0 && self.eta_lambda.is_finite()) {
            return bad("eta_lambda must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.glances == 0 {
            return bad("glances must be >= 1");
        }
        if self.meta_every == 0 {
            return bad("meta_every must be >= 1");
        }
        if self.meta_enabled && self.meta_batch == 0 {
            return bad("meta_batch must be >= 1");
        }
        if self.replay_in_train && self.replay_batch == 0 {
            return bad("replay_batch must be >= 1");
        }
        if !self.rho_init.is_finite() {
            return bad("rho_init must be finite");
        }
        Ok(())
    }
}

/// Per-group `λ_i = exp(ρ_i)` and the optimizer state of `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCoefficients {
    rho: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
    pub eta_lambda: f64,
    pub optimizer: LambdaOptimizer,
}

impl StabilityCoefficients {
    pub fn new(groups: usize, rho_init: f64, eta_lambda: f64, optimizer: LambdaOptimizer) -> Self {
        Self {
            rho: vec![rho_init; groups],
            first_moment: vec![0.0; groups],
            second_moment: vec![0.0; groups],
            steps: 0,
            eta_lambda,
            optimizer,
        }
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| libm::exp(r)).collect()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One optimizer step on `ρ` given `∂L_meta/∂ρ`.
    pub fn update(&mut self, grad_rho: &[f64]) -> Result<()> {
        if grad_rho.len() != self.rho.len() {
            return Err(Error::Shape {
                op: "lambda_update",
                left: vec![self.rho.len()],
                right: vec![grad_rho.len()],
            });
        }
        if grad_rho.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "lambda_update" });
        }
        self.steps += 1;
        match self.optimizer {
            LambdaOptimizer::GradientDescent => {
                for (r, g) in self.rho.iter_mut().zip(grad_rho) {
                    *r -= self.eta_lambda * g;
                }
            }
            LambdaOptimizer::Adam => {
                let t = self.steps as f64;
                let c1 = 1.0 - libm::pow(ADAM_BETA1, t);
                let c2 = 1.0 - libm::pow(ADAM_BETA2, t);
                for (i, &g) in grad_rho.iter().enumerate() {
                    let m = ADAM_BETA1 * self.first_moment[i] + (1.0 - ADAM_BETA1) * g;
                    let v = ADAM_BETA2 * self.second_moment[i] + (1.0 - ADAM_BETA2) * g * g;
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                    self.rho[i] -= self.eta_lambda * (m / c1) / (libm::sqrt(v / c2) + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

/// Graph of the training objective.
pub struct TrainLoss {
    pub graph: Graph,
    pub root: Var,
    /// The cross-entropy term alone.
    pub ce: Var,
    pub params: Vec<Var>,
    /// One scalar leaf per group when the penalty is present.
    pub lambdas: Vec<Var>,
}

impl TrainLoss {
    pub fn value(&self) -> f64 {
        self.graph.value(self.root).data()[0]
    }

    pub fn ce_value(&self) -> f64 {
        self.graph.value(self.ce).data()[0]
    }

    /// `∇_θ L_train`, one tensor per parameter.
    pub fn param_grads(&self) -> Result<Vec<Tensor>> {
        let grads = self.graph.backward(self.root)?;
        Ok(self.params.iter().map(|&p| grads.wrt(p)).collect())
    }
}

/// Builds `CE(batch) + Σ_i λ_i/2 ‖θ_i − θ_i^old‖²`. With `lambdas = None`
/// the penalty is left out entirely.
pub fn train_loss(
    mlp: &Mlp,
    store: &ParameterStore,
    lambdas: Option<&[f64]>,
    batch: &[&Example],
) -> Result<TrainLoss> {
    let (x, labels) = to_batch(batch.iter().copied())?;
    let mut graph = Graph::new();
    let params = mlp.bind(&mut graph, &store.params)?;
    let xv = graph.constant(x)?;
    let logits = mlp.forward(&mut graph, &params, xv)?;
    let ce = graph.cross_entropy(logits, &labels)?;
    let mut root = ce;
    let mut lambda_vars = Vec::new();

    if let Some(lambdas) = lambdas {
        if lambdas.len() != store.num_groups() {
            return Err(Error::Shape {
                op: "train_loss",
                left: vec![store.num_groups()],
                right: vec![lambdas.len()],
            });
        }
        for (group, &lambda) in store.groups.iter().zip(lambdas) {
            let mut drift_sq: Option<Var> = None;
            for &t in &group.tensors {
                let old = graph.constant(store.theta_old[t].clone())?;
                let d = graph.sub(params[t], old)?;
                let sq = graph.mul(d, d)?;
                let s = graph.sum(sq)?;
                drift_sq = Some(match drift_sq {
                    Some(acc) => graph.add(acc, s)?,
                    None => s,
                });
            }
            let lambda_var = graph.leaf(Tensor::scalar(lambda))?;
            lambda_vars.push(lambda_var);
            if let Some(drift_sq) = drift_sq {
                let weighted = graph.mul(lambda_var, drift_sq)?;
                let half = graph.scale(weighted, 0.5)?;
                root = graph.add(root, half)?;
            }
        }
    }

    Ok(TrainLoss {
        graph,
        root,
        ce,
        params,
        lambdas: lambda_vars,
    })
}

/// `σ(θ_j / max(std(θ_tensor), ε))` for every parameter, one array per tensor.
pub fn compute_gate(params: &[Tensor]) -> Result<Vec<Tensor>> {
    params
        .iter()
        .map(|p| {
            let s = tensor::std_population(p)?.max(GATE_STD_FLOOR);
            Ok(p.map(|v| tensor::sigmoid(v / s)))
        })
        .collect()
}

/// Elementwise `g ⊙ gate`.
pub fn gated_gradient(grads: &[Tensor], gate: &[Tensor]) -> Result<Vec<Tensor>> {
    if grads.len() != gate.len() {
        return Err(Error::Shape {
            op: "gated_gradient",
            left: vec![grads.len()],
            right: vec![gate.len()],
        });
    }
    grads.iter().zip(gate).map(|(g, s)| g.mul(s)).collect()
}

/// Non-destructive image `θ − η g̃`.
pub fn virtual_update(params: &[Tensor], gated: &[Tensor], eta: f64) -> Result<Vec<Tensor>> {
    params
        .iter()
        .zip(gated)
        .map(|(p, g)| p.zip_with(g, "virtual_update", |a, b| a - eta * b))
        .collect()
}

/// Replay cross-entropy at a parameter image, no penalty.
pub fn meta_loss(mlp: &Mlp, image: &[Tensor], mem: &[&Example]) -> Result<f64> {
    meta_loss_and_grad(mlp, image, mem).map(|(l, _)| l)
}

/// Replay cross-entropy at `image` and its gradient with respect to `image`.
pub fn meta_loss_and_grad(mlp: &Mlp, image: &[Tensor], mem: &[&Example]) -> Result<(f64, Vec<Tensor>)> {
    if mem.is_empty() {
        return Err(Error::Contract("meta_loss on an empty replay batch"));
    }
    let (x, labels) = to_batch(mem.iter().copied())?;
    let mut graph = Graph::new();
    let vars = mlp.bind(&mut graph, image)?;
    let xv = graph.constant(x)?;
    let logits = mlp.forward(&mut graph, &vars, xv)?;
    let loss = graph.cross_entropy(logits, &labels)?;
    let grads = graph.backward(loss)?;
    Ok((
        graph.value(loss).data()[0],
        vars.iter().map(|&v| grads.wrt(v)).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGradient {
    pub d_lambda: Vec<f64>,
    pub d_rho: Vec<f64>,
}

/// Closed-form `∂L_meta/∂λ` through the virtual update.
///
/// `λ_i` enters `g` only through the penalty gradient `λ_i (θ_j − θ_j^old)`
/// and the gate does not depend on `λ`, so
/// `∂θ'_j/∂λ_i = −η · gate_j · (θ_j − θ_j^old)` for `j` in group `i`.
/// The log-space gradient is `λ_i · ∂L/∂λ_i`.
pub fn lambda_meta_gradient(
    store: &ParameterStore,
    gate: &[Tensor],
    grad_meta: &[Tensor],
    eta: f64,
    lambdas: &[f64],
) -> Result<LambdaGradient> {
    let g = store.num_groups();
    if lambdas.len() != g {
        return Err(Error::Shape {
            op: "lambda_meta_gradient",
            left: vec![g],
            right: vec![lambdas.len()],
        });
    }
    let mut d_lambda = vec![0.0; g];
    for (t, (p, old)) in store.params.iter().zip(&store.theta_old).enumerate() {
        let (s, gm) = (&gate[t], &grad_meta[t]);
        if s.shape() != p.shape() || gm.shape() != p.shape() {
            return Err(Error::Shape {
                op: "lambda_meta_gradient",
                left: p.shape().to_vec(),
                right: gm.shape().to_vec(),
            });
        }
        let mut acc = 0.0;
        for j in 0..p.len() {
            acc += s.data()[j] * (p.data()[j] - old.data()[j]) * gm.data()[j];
        }
        d_lambda[store.group_of(t)] += acc;
    }
    for d in d_lambda.iter_mut() {
        *d *= -eta;
    }
    let d_rho = d_lambda.iter().zip(lambdas).map(|(d, l)| d * l).collect();
    Ok(LambdaGradient { d_lambda, d_rho })
}

/// The same hypergradient with respect to `ρ`, by reverse-mode
/// differentiation of `ρ ↦ CE(mem; θ − η·gate⊙(g_ce + e^ρ (θ − θ_old)))`.
///
/// `ce_grad` is the cross-entropy part of `∇_θ L_train`.
pub fn lambda_meta_gradient_autodiff(
    mlp: &Mlp,
    store: &ParameterStore,
    gate: &[Tensor],
    ce_grad: &[Tensor],
    eta: f64,
    rho: &[f64],
    mem: &[&Example],
) -> Result<Vec<f64>> {
    let (x, labels) = to_batch(mem.iter().copied())?;
    let mut graph = Graph::new();
    let rho_vars: Vec<Var> = rho
        .iter()
        .map(|&r| graph.leaf(Tensor::scalar(r)))
        .collect::<Result<_>>()?;
    let lambda_vars: Vec<Var> = rho_vars
        .iter()
        .map(|&r| graph.exp(r))
        .collect::<Result<_>>()?;
    let drift = store.drift();
    let mut image = Vec::with_capacity(store.params.len());
    for t in 0..store.params.len() {
        let theta = graph.constant(store.params[t].clone())?;
        let d = graph.constant(drift[t].clone())?;
        let gce = graph.constant(ce_grad[t].clone())?;
        let s = graph.constant(gate[t].clone())?;
        let reg = graph.mul_scalar(d, lambda_vars[store.group_of(t)])?;
        let g = graph.add(gce, reg)?;
        let gated = graph.mul(s, g)?;
        let step = graph.scale(gated, -eta)?;
        image.push(graph.add(theta, step)?);
    }
    let xv = graph.constant(x)?;
    let logits = mlp.forward(&mut graph, &image, xv)?;
    let loss = graph.cross_entropy(logits, &labels)?;
    let grads = graph.backward(loss)?;
    Ok(rho_vars.iter().map(|&r| grads.wrt(r).data()[0]).collect())
}

/// Momentum SGD: `v ← μ v + g̃`, `θ ← θ − η v`.
pub fn apply_update(store: &mut ParameterStore, gated: &[Tensor], eta: f64, momentum: f64) -> Result<()> {
    if gated.len() != store.params.len() {
        return Err(Error::Shape {
            op: "apply_update",
            left: vec![store.params.len()],
            right: vec![gated.len()],
        });
    }
    for ((p, v), g) in store.params.iter_mut().zip(store.momentum.iter_mut()).zip(gated) {
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "apply_update",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        for ((pj, vj), gj) in p.data_mut().iter_mut().zip(v.data_mut().iter_mut()).zip(g.data()) {
            *vj = momentum * *vj + gj;
            *pj -= eta * *vj;
        }
    }
    Ok(())
}

/// Share of coordinates with `∇L_past · Δθ > 0` among coordinates where the
/// product is nonzero; zero when there are none.
pub fn harmful_fraction(update: &[Tensor], past_grad: &[Tensor]) -> Result<f64> {
    let (mut harmful, mut active) = (0usize, 0usize);
    for_each_product(update, past_grad, |prod| {
        if prod != 0.0 {
            active += 1;
            if prod > 0.0 {
                harmful += 1;
            }
        }
    })?;
    Ok(if active == 0 { 0.0 } else { harmful as f64 / active as f64 })
}

/// Magnitude-weighted variant: `Σ_{harmful} |∇L_past·Δθ| / Σ |∇L_past·Δθ|`.
///
/// The gate never flips a sign, so the count-based fraction is the same for
/// raw and gated updates; this one reflects how much of the update mass is
/// harmful.
pub fn harmful_mass_fraction(update: &[Tensor], past_grad: &[Tensor]) -> Result<f64> {
    let (mut harmful, mut total) = (0.0, 0.0);
    for_each_product(update, past_grad, |prod| {
        total += prod.abs();
        if prod > 0.0 {
            harmful += prod;
        }
    })?;
    Ok(if total == 0.0 { 0.0 } else { harmful / total })
}

fn for_each_product(a: &[Tensor], b: &[Tensor], mut f: impl FnMut(f64)) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "harmful_fraction",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    for (x, y) in a.iter().zip(b) {
        let prod = x.mul(y)?;
        prod.data().iter().copied().for_each(&mut f);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// Training loss on the first glance.
    pub train_loss: f64,
    /// Present only when a meta step ran.
    pub meta_loss: Option<f64>,
    pub lambda_values: Vec<f64>,
    /// Per group; absent when gating is off.
    pub gate_stats: Option<Vec<GateStats>>,
    pub harmful_fraction_raw: Option<f64>,
    pub harmful_fraction_gated: Option<f64>,
    pub harmful_mass_raw: Option<f64>,
    pub harmful_mass_gated: Option<f64>,
}

fn gate_stats(store: &ParameterStore, gate: &[Tensor]) -> Vec<GateStats> {
    store
        .groups
        .iter()
        .map(|group| {
            let (mut sum, mut n) = (0.0, 0usize);
            let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
            for &t in &group.tensors {
                for &v in gate[t].data() {
                    sum += v;
                    n += 1;
                    min = min.min(v);
                    max = max.max(v);
                }
            }
            GateStats {
                mean: sum / n.max(1) as f64,
                min,
                max,
            }
        })
        .collect()
}

/// A model, its stability coefficients and the sampling state of one run.
#[derive(Debug, Clone)]
pub struct MangoLearner {
    pub mlp: Mlp,
    pub store: ParameterStore,
    pub coeffs: StabilityCoefficients,
    pub cfg: MangoConfig,
    rng: ChaCha8Rng,
    batches_seen: u64,
}

impl MangoLearner {
    /// `rng_seed` drives the replay draws.
    pub fn new(mlp: Mlp, store: ParameterStore, cfg: MangoConfig, rng_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let coeffs = StabilityCoefficients::new(store.num_groups(), cfg.rho_init, cfg.eta_lambda, cfg.lambda_optimizer);
        Ok(Self {
            mlp,
            store,
            coeffs,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            batches_seen: 0,
        })
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    /// Processes one incoming mini-batch.
    pub fn step(&mut self, batch: &[Example], buffer: &mut ReplayBuffer) -> Result<StepDiagnostics> {
        if batch.is_empty() {
            return Err(Error::Contract("step on an empty mini-batch"));
        }
        let cfg = self.cfg.clone();
        let meta_due = cfg.meta_enabled && self.batches_seen.is_multiple_of(cfg.meta_every as u64);
        let mut diag = StepDiagnostics {
            train_loss: f64::NAN,
            meta_loss: None,
            lambda_values: Vec::new(),
            gate_stats: None,
            harmful_fraction_raw: None,
            harmful_fraction_gated: None,
            harmful_mass_raw: None,
            harmful_mass_gated: None,
        };

        for glance in 0..cfg.glances {
            let mut examples: Vec<&Example> = batch.iter().collect();
            if cfg.replay_in_train && !buffer.is_empty() {
                examples.extend(buffer.sample(cfg.replay_batch, &mut self.rng)?);
            }
            let lambdas = self.coeffs.lambdas();
            let loss = train_loss(
                &self.mlp,
                &self.store,
                cfg.reg_enabled.then_some(lambdas.as_slice()),
                &examples,
            )?;
            let grads = loss.param_grads()?;
            let gate = if cfg.gate_enabled {
                Some(compute_gate(&self.store.params)?)
            } else {
                None
            };
            let gated = match &gate {
                Some(gate) => gated_gradient(&grads, gate)?,
                None => grads.clone(),
            };
            if glance == 0 {
                diag.train_loss = loss.value();
                diag.gate_stats = gate.as_ref().map(|g| gate_stats(&self.store, g));
            }

            if glance == 0 && meta_due && !buffer.is_empty() {
                let image = virtual_update(&self.store.params, &gated, cfg.eta)?;
                let mem = buffer.sample(cfg.meta_batch, &mut self.rng)?;
                let (meta, grad_meta) = meta_loss_and_grad(&self.mlp, &image, &mem)?;
                diag.meta_loss = Some(meta);

                let (_, past_grad) = meta_loss_and_grad(&self.mlp, &self.store.params, &mem)?;
                let raw: Vec<Tensor> = grads.iter().map(|g| g.scale(-cfg.eta)).collect();
                let applied: Vec<Tensor> = gated.iter().map(|g| g.scale(-cfg.eta)).collect();
                diag.harmful_fraction_raw = Some(harmful_fraction(&raw, &past_grad)?);
                diag.harmful_fraction_gated = Some(harmful_fraction(&applied, &past_grad)?);
                diag.harmful_mass_raw = Some(harmful_mass_fraction(&raw, &past_grad)?);
                diag.harmful_mass_gated = Some(harmful_mass_fraction(&applied, &past_grad)?);

                // Without the penalty θ' does not depend on λ.
                if cfg.reg_enabled {
                    let ones;
                    let gate_ref = match &gate {
                        Some(g) => g.as_slice(),
                        None => {
                            ones = self.store.params.iter().map(|p| Tensor::full(p.shape(), 1.0)).collect::<Vec<_>>();
                            ones.as_slice()
                        }
                    };
                    let hyper = lambda_meta_gradient(&self.store, gate_ref, &grad_meta, cfg.eta, &lambdas)?;
                    self.coeffs.update(&hyper.d_rho)?;
                }
            }

            apply_update(&mut self.store, &gated, cfg.eta, cfg.momentum)?;
        }

        self.batches_seen += 1;
        for ex in batch {
            buffer.insert(ex.clone());
        }
        diag.lambda_values = self.coeffs.lambdas();
        Ok(diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ParameterGroup};
    use alloc::string::ToString;

    fn scalar_store(theta: f64, old: f64) -> ParameterStore {
        let group = ParameterGroup {
            name: "only".to_string(),
            group_index: 0,
            tensors: vec![0],
            tensor_names: vec!["w".to_string()],
        };
        let mut store = ParameterStore::new(vec![group], vec![Tensor::vector(vec![old])]).unwrap();
        store.params[0] = Tensor::vector(vec![theta]);
        store
    }

    fn small_model(seed: u64) -> (Mlp, ParameterStore) {
        Mlp::init(&ModelConfig {
            input_dim: 3,
            hidden_dims: vec![4],
            num_classes: 3,
            seed,
        })
        .unwrap()
    }

    fn examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                features: vec![i as f64 * 0.3 - 0.5, 0.2, -(i as f64) * 0.1],
                label: i % 3,
                task_id: 0,
            })
            .collect()
    }

    #[test]
    fn method_flags() {
        let ft = MangoConfig::default().with_method(Method::Ft);
        assert!(!ft.replay_in_train && !ft.gate_enabled && !ft.reg_enabled && !ft.meta_enabled);
        let er = MangoConfig::default().with_method(Method::Er);
        assert!(er.replay_in_train && !er.gate_enabled && !er.reg_enabled && !er.meta_enabled);
        let nm = MangoConfig::default().with_method(Method::MangoNoMeta);
        assert!(nm.gate_enabled && nm.reg_enabled && !nm.meta_enabled);
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("foo".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MangoConfig::default().validate().is_ok());
        assert!(MangoConfig { eta: 0.0, ..MangoConfig::default() }.validate().is_err());
        assert!(MangoConfig { glances: 0, ..MangoConfig::default() }.validate().is_err());
        assert!(MangoConfig { meta_every: 0, ..MangoConfig::default() }.validate().is_err());
        assert!(MangoConfig { eta_lambda: -1.0, ..MangoConfig::default() }.validate().is_err());
    }

    #[test]
    fn penalty_by_direct_substitution() {
        // θ = 2, θ_old = 1, λ = 4: penalty = 4/2 · 1² = 2.
        let store = scalar_store(2.0, 1.0);
        let mut g = Graph::new();
        let p = g.leaf(store.params[0].clone()).unwrap();
        let old = g.constant(store.theta_old[0].clone()).unwrap();
        let d = g.sub(p, old).unwrap();
        let sq = g.mul(d, d).unwrap();
        let s = g.sum(sq).unwrap();
        let l = g.leaf(Tensor::scalar(4.0)).unwrap();
        let w = g.mul(l, s).unwrap();
        let half = g.scale(w, 0.5).unwrap();
        assert_eq!(g.value(half).data(), &[2.0]);
    }

    #[test]
    fn train_loss_reduces_to_ce_without_drift_or_lambda() {
        let (mlp, mut store) = small_model(4);
        let batch = examples(6);
        let refs: Vec<&Example> = batch.iter().collect();
        let plain = train_loss(&mlp, &store, None, &refs).unwrap().value();

        let at_anchor = train_loss(&mlp, &store, Some(&[3.0, 7.0]), &refs).unwrap();
        assert_eq!(at_anchor.value(), plain);

        store.params[0].data_mut()[0] += 0.5;
        let ce = train_loss(&mlp, &store, None, &refs).unwrap().value();
        let zero_lambda = train_loss(&mlp, &store, Some(&[0.0, 0.0]), &refs).unwrap();
        assert_eq!(zero_lambda.value(), ce);
        let weighted = train_loss(&mlp, &store, Some(&[2.0, 0.0]), &refs).unwrap();
        assert!((weighted.value() - (ce + 0.25)).abs() < 1e-12);
        assert!(train_loss(&mlp, &store, Some(&[1.0]), &refs).is_err());
    }

    #[test]
    fn gate_examples() {
        let layer = Tensor::vector(vec![1.0, -1.0, 2.0, -2.0]);
        let gate = compute_gate(&[layer]).unwrap();
        // 30-digit reference: σ(1/√2.5) = 0.653046037940767911644912277673
        assert!((gate[0].data()[0] - 0.653_046_037_940_767_9).abs() < 1e-15);

        let with_zero = compute_gate(&[Tensor::vector(vec![0.0, 3.0, -5.0])]).unwrap();
        assert_eq!(with_zero[0].data()[0], 0.5);

        let constant = compute_gate(&[Tensor::full(&[3], 1.0)]).unwrap();
        assert!(constant[0].data().iter().all(|&v| v < 1.0 && 1.0 - v < 1e-15));
    }

    #[test]
    fn gated_gradient_examples() {
        let g = vec![Tensor::vector(vec![2.0, -4.0])];
        let gate = vec![Tensor::vector(vec![0.5, 0.25])];
        assert_eq!(gated_gradient(&g, &gate).unwrap()[0].data(), &[1.0, -1.0]);
        let zero = vec![Tensor::zeros(&[2])];
        assert_eq!(gated_gradient(&zero, &gate).unwrap()[0], Tensor::zeros(&[2]));
        assert!(gated_gradient(&g, &[Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn virtual_update_examples() {
        let theta = vec![Tensor::vector(vec![1.0])];
        let out = virtual_update(&theta, &[Tensor::vector(vec![2.0])], 0.1).unwrap();
        assert!((out[0].data()[0] - 0.8).abs() < 1e-15);
        let same = virtual_update(&theta, &[Tensor::zeros(&[1])], 0.1).unwrap();
        assert_eq!(same, theta);
    }

    #[test]
    fn meta_loss_matches_train_ce_at_same_point() {
        let (mlp, store) = small_model(8);
        let batch = examples(5);
        let refs: Vec<&Example> = batch.iter().collect();
        let ce = train_loss(&mlp, &store, Some(&[1.0, 1.0]), &refs).unwrap().ce_value();
        assert_eq!(meta_loss(&mlp, &store.params, &refs).unwrap(), ce);
        assert!(meta_loss(&mlp, &store.params, &[]).is_err());

        let uniform: Vec<Tensor> = store.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        assert!((meta_loss(&mlp, &uniform, &refs).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hypergradient_vanishes_without_drift_or_step() {
        let (_, store) = small_model(2);
        let gate = compute_gate(&store.params).unwrap();
        let gm: Vec<Tensor> = store.params.iter().map(|p| Tensor::full(p.shape(), 0.3)).collect();
        let h = lambda_meta_gradient(&store, &gate, &gm, 0.1, &[1.0, 1.0]).unwrap();
        assert_eq!(h.d_lambda, vec![0.0, 0.0]);

        let mut moved = store.clone();
        moved.params[0].data_mut()[0] += 1.0;
        let h = lambda_meta_gradient(&moved, &gate, &gm, 0.0, &[1.0, 1.0]).unwrap();
        assert!(h.d_lambda.iter().all(|&d| d == 0.0));
        let h = lambda_meta_gradient(&moved, &gate, &gm, 0.1, &[2.0, 1.0]).unwrap();
        assert!(h.d_lambda[0] < 0.0 && h.d_lambda[1] == 0.0);
        assert_eq!(h.d_rho[0], 2.0 * h.d_lambda[0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut c = StabilityCoefficients::new(3, -7.6, 2e-3, LambdaOptimizer::Adam);
        c.update(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.rho(), &[-7.6, -7.6, -7.6]);

        let mut c = StabilityCoefficients::new(2, 0.0, 2e-3, LambdaOptimizer::Adam);
        c.update(&[0.5, -3.0]).unwrap();
        // m̂ = g, v̂ = g², step = η_λ g / (|g| + ε)
        assert!((c.rho()[0] + 2e-3 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!((c.rho()[1] - 2e-3 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!(c.update(&[1.0]).is_err());
        assert!(c.update(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn gradient_descent_on_rho() {
        let mut c = StabilityCoefficients::new(2, 1.0, 0.5, LambdaOptimizer::GradientDescent);
        c.update(&[2.0, -1.0]).unwrap();
        assert_eq!(c.rho(), &[0.0, 1.5]);
        assert_eq!(c.lambdas()[0], 1.0);
    }

    #[test]
    fn momentum_update_examples() {
        let mut store = scalar_store(1.0, 1.0);
        let g = [Tensor::vector(vec![2.0])];
        apply_update(&mut store, &g, 0.1, 0.0).unwrap();
        assert!((store.params[0].data()[0] - 0.8).abs() < 1e-15);

        // two steps with μ = 0.9: displacement η g (1 + 1.9)
        let mut store = scalar_store(0.0, 0.0);
        apply_update(&mut store, &g, 0.1, 0.9).unwrap();
        apply_update(&mut store, &g, 0.1, 0.9).unwrap();
        assert!((store.params[0].data()[0] + 0.1 * 2.0 * 2.9).abs() < 1e-12);

        // zero gradient afterwards: velocity decays by μ each step
        let zero = [Tensor::zeros(&[1])];
        let mut prev = store.momentum[0].data()[0];
        for _ in 0..5 {
            apply_update(&mut store, &zero, 0.1, 0.9).unwrap();
            let v = store.momentum[0].data()[0];
            assert!((v - 0.9 * prev).abs() < 1e-12);
            prev = v;
        }
    }

    #[test]
    fn harmful_fraction_examples() {
        let past = vec![Tensor::vector(vec![1.0, -2.0, 0.5, 0.0])];
        let descent: Vec<Tensor> = past.iter().map(|p| p.scale(-1.0)).collect();
        assert_eq!(harmful_fraction(&descent, &past).unwrap(), 0.0);
        assert_eq!(harmful_fraction(&past, &past).unwrap(), 1.0);
        let mixed = vec![Tensor::vector(vec![1.0, 1.0, 1.0, 1.0])];
        assert!((harmful_fraction(&mixed, &past).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(harmful_mass_fraction(&mixed, &past).unwrap(), 1.5 / 3.5);
    }

    #[test]
    fn first_step_skips_meta_on_empty_buffer() {
        let (mlp, store) = small_model(1);
        let mut learner = MangoLearner::new(mlp, store, MangoConfig::default(), 0).unwrap();
        let mut buffer = ReplayBuffer::new(10, 0);
        let batch = examples(4);
        let diag = learner.step(&batch, &mut buffer).unwrap();
        assert_eq!(diag.meta_loss, None);
        assert_eq!(learner.coeffs.rho(), &[-7.6, -7.6]);
        assert_eq!(buffer.len(), 4);
        assert!(diag.gate_stats.unwrap().iter().all(|s| 0.0 < s.min && s.max < 1.0));
    }

    #[test]
    fn meta_step_runs_on_schedule() {
        let (mlp, store) = small_model(1);
        let cfg = MangoConfig { meta_every: 2, ..MangoConfig::default() };
        let mut learner = MangoLearner::new(mlp, store, cfg, 0).unwrap();
        let mut buffer = ReplayBuffer::new(10, 0);
        let batch = examples(4);
        let ran: Vec<bool> = (0..5)
            .map(|_| learner.step(&batch, &mut buffer).unwrap().meta_loss.is_some())
            .collect();
        assert_eq!(ran, vec![false, false, true, false, true]);
        assert_eq!(learner.coeffs.steps(), 2);
        assert!(learner.step(&[], &mut buffer).is_err());
    }
}
