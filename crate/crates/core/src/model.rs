//! Multi-layer perceptron classifier with one parameter group per linear layer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

/// Named set of tensors that share one stability coefficient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterGroup {
    pub name: String,
    pub group_index: usize,
    /// Indices into [`ParameterStore::params`].
    pub tensors: Vec<usize>,
    pub tensor_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub groups: Vec<ParameterGroup>,
    pub params: Vec<Tensor>,
    pub theta_old: Vec<Tensor>,
    pub momentum: Vec<Tensor>,
    /// `group_of[t]` is the group index of tensor `t`.
    group_of: Vec<usize>,
}

impl ParameterStore {
    /// Builds a store whose anchor is the given parameters and whose momentum
    /// buffers are zero.
    pub fn new(groups: Vec<ParameterGroup>, params: Vec<Tensor>) -> Result<Self> {
        let mut group_of = alloc::vec![usize::MAX; params.len()];
        for (gi, group) in groups.iter().enumerate() {
            if group.group_index != gi {
                return Err(Error::Invalid(format!(
                    "group `{}` has index {} at position {gi}",
                    group.name, group.group_index
                )));
            }
            for &t in &group.tensors {
                match group_of.get_mut(t) {
                    Some(slot) if *slot == usize::MAX => *slot = gi,
                    Some(_) => {
                        return Err(Error::Invalid(format!("tensor {t} belongs to two groups")));
                    }
                    None => return Err(Error::Invalid(format!("tensor {t} does not exist"))),
                }
            }
        }
        if let Some(t) = group_of.iter().position(|&g| g == usize::MAX) {
            return Err(Error::Invalid(format!("tensor {t} belongs to no group")));
        }
        let momentum = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            groups,
            theta_old: params.clone(),
            params,
            momentum,
            group_of,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self, tensor: usize) -> usize {
        self.group_of[tensor]
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Re-anchors the drift penalty at the current parameters.
    pub fn snapshot_old(&mut self) {
        self.theta_old = self.params.clone();
    }

    /// `θ − θ_old` for every tensor.
    pub fn drift(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(&self.theta_old)
            .map(|(p, o)| p.sub(o).expect("theta_old mirrors the live shapes"))
            .collect()
    }

    /// `‖θ_i − θ_i^old‖²` per group.
    pub fn group_drift(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.groups.len()];
        for (t, d) in self.drift().iter().enumerate() {
            out[self.group_of[t]] += d.squared_norm();
        }
        out
    }
}

/// Layer layout of the network; parameters live in a [`ParameterStore`] so
/// the same architecture can be evaluated at any parameter image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    dims: Vec<usize>,
}

impl Mlp {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let mut dims = Vec::with_capacity(cfg.hidden_dims.len() + 2);
        dims.push(cfg.input_dim);
        dims.extend_from_slice(&cfg.hidden_dims);
        dims.push(cfg.num_classes);
        if dims.contains(&0) {
            return Err(Error::Invalid(format!("all layer sizes must be >= 1, got {dims:?}")));
        }
        Ok(Self { dims })
    }

    /// Architecture plus Glorot-uniform weights and zero biases.
    pub fn init(cfg: &ModelConfig) -> Result<(Self, ParameterStore)> {
        let mlp = Self::new(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Vec::new();
        let mut groups = Vec::new();
        for layer in 0..mlp.num_layers() {
            let (fan_in, fan_out) = (mlp.dims[layer], mlp.dims[layer + 1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let base = params.len();
            params.push(Tensor::new(alloc::vec![fan_in, fan_out], w)?);
            params.push(Tensor::zeros(&[fan_out]));
            let name = if layer + 1 == mlp.num_layers() {
                String::from("head")
            } else {
                format!("hidden{layer}")
            };
            groups.push(ParameterGroup {
                name,
                group_index: layer,
                tensors: alloc::vec![base, base + 1],
                tensor_names: alloc::vec![String::from("weight"), String::from("bias")],
            });
        }
        let store = ParameterStore::new(groups, params)?;
        Ok((mlp, store))
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    fn check_params(&self, n: usize) -> Result<()> {
        if n == 2 * self.num_layers() {
            Ok(())
        } else {
            Err(Error::Shape {
                op: "mlp params",
                left: alloc::vec![2 * self.num_layers()],
                right: alloc::vec![n],
            })
        }
    }

    /// Linear → ReLU stacks and a linear head, recorded on `g`.
    /// `params` alternate weight, bias per layer.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        self.check_params(params.len())?;
        if g.value(x).shape().get(1) != Some(&self.input_dim()) {
            return Err(Error::Shape {
                op: "forward",
                left: g.value(x).shape().to_vec(),
                right: alloc::vec![self.input_dim()],
            });
        }
        let mut h = x;
        for layer in 0..self.num_layers() {
            let z = g.matmul(h, params[2 * layer])?;
            h = g.add_row(z, params[2 * layer + 1])?;
            if layer + 1 < self.num_layers() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Puts every parameter tensor on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, params: &[Tensor]) -> Result<Vec<Var>> {
        self.check_params(params.len())?;
        params.iter().map(|p| g.leaf(p.clone())).collect()
    }

    /// Logits without keeping a graph around.
    pub fn logits(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, params)?;
        let xv = g.constant(x.clone())?;
        let out = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(out).clone())
    }

    pub fn predict(&self, params: &[Tensor], x: &Tensor) -> Result<alloc::vec::Vec<usize>> {
        self.logits(params, x)?.argmax_rows()
    }
}
