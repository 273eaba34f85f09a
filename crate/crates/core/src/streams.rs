//! Synthetic Gaussian-blob task streams.
//!
//! Class `k` is an isotropic blob around `+e_k` (for `k < D`) or `−e_{k−D}`,
//! so up to `2D` classes are available and any two means are at least `√2`
//! apart. Class-incremental streams hand each task its own classes;
//! domain-incremental streams keep all classes and move the inputs.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Example, Task};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Class-incremental: disjoint classes per task.
    Cil,
    /// Domain-incremental: shared classes, drifting inputs.
    Dil,
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Cil => "cil",
            StreamKind::Dil => "dil",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub kind: StreamKind,
    pub num_tasks: usize,
    /// CIL only.
    pub classes_per_task: usize,
    /// DIL only: size of the shared label set.
    pub num_classes: usize,
    /// Examples generated per task, split 80/20 into train and test.
    pub samples_per_task: usize,
    pub input_dim: usize,
    pub noise_scale: f64,
    /// DIL only: per-task rotation angle (radians) in the plane of the first
    /// two coordinates; the mean also moves by this much along the last axis.
    pub domain_shift: f64,
    pub seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            kind: StreamKind::Cil,
            num_tasks: 5,
            classes_per_task: 2,
            num_classes: 4,
            samples_per_task: 625,
            input_dim: 16,
            noise_scale: 0.5,
            domain_shift: 0.8,
            seed: 0,
        }
    }
}

impl StreamSpec {
    pub fn total_classes(&self) -> usize {
        match self.kind {
            StreamKind::Cil => self.num_tasks * self.classes_per_task,
            StreamKind::Dil => self.num_classes,
        }
    }

    pub fn train_per_task(&self) -> usize {
        self.samples_per_task * 4 / 5
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Invalid(msg));
        if self.num_tasks < 2 {
            return fail(format!("num_tasks must be >= 2, got {}", self.num_tasks));
        }
        if self.input_dim == 0 {
            return fail("input_dim must be >= 1".into());
        }
        if self.train_per_task() == 0 || self.samples_per_task == self.train_per_task() {
            return fail(format!(
                "samples_per_task = {} leaves an empty train or test split",
                self.samples_per_task
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail("noise_scale must be finite and >= 0".into());
        }
        match self.kind {
            StreamKind::Cil if self.classes_per_task == 0 => {
                return fail("classes_per_task must be >= 1".into());
            }
            StreamKind::Dil if self.num_classes < 2 => {
                return fail("num_classes must be >= 2".into());
            }
            StreamKind::Dil if !self.domain_shift.is_finite() => {
                return fail("domain_shift must be finite".into());
            }
            _ => {}
        }
        if self.total_classes() > 2 * self.input_dim {
            return fail(format!(
                "{} classes need input_dim >= {}",
                self.total_classes(),
                self.total_classes().div_ceil(2)
            ));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Vec<Task>> {
        match self.kind {
            StreamKind::Cil => make_cil_stream(self),
            StreamKind::Dil => make_dil_stream(self),
        }
    }
}

fn class_mean(class: usize, dim: usize) -> Vec<f64> {
    let mut mean = alloc::vec![0.0; dim];
    if class < dim {
        mean[class] = 1.0;
    } else {
        mean[class - dim] = -1.0;
    }
    mean
}

fn sample_blob(rng: &mut ChaCha8Rng, mean: &[f64], noise: f64) -> Vec<f64> {
    mean.iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + noise * z
        })
        .collect()
}

/// Labels cycle through `classes`, so both splits stay class-balanced.
fn make_task(spec: &StreamSpec, task_id: usize, classes: &[usize], mut transform: impl FnMut(&mut [f64])) -> Task {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, task_id as u64));
    let means: Vec<Vec<f64>> = classes.iter().map(|&c| class_mean(c, spec.input_dim)).collect();
    let mut examples: Vec<Example> = (0..spec.samples_per_task)
        .map(|i| {
            let k = i % classes.len();
            let mut features = sample_blob(&mut rng, &means[k], spec.noise_scale);
            transform(&mut features);
            Example {
                features,
                label: classes[k],
                task_id,
            }
        })
        .collect();
    let test = examples.split_off(spec.train_per_task());
    Task {
        task_id,
        train: examples,
        test,
        classes_present: classes.iter().copied().collect(),
    }
}

pub fn make_cil_stream(spec: &StreamSpec) -> Result<Vec<Task>> {
    if spec.kind != StreamKind::Cil {
        return Err(Error::Invalid(format!("expected a cil spec, got {}", spec.kind.name())));
    }
    spec.validate()?;
    Ok((0..spec.num_tasks)
        .map(|t| {
            let classes: Vec<usize> = (t * spec.classes_per_task..(t + 1) * spec.classes_per_task).collect();
            make_task(spec, t, &classes, |_| {})
        })
        .collect())
}

/// Rotation by `t·Δ` in the `(x0, x1)` plane followed by a shift of `t·Δ`
/// along the last coordinate.
pub fn domain_transform(features: &mut [f64], task_id: usize, delta: f64) {
    let angle = task_id as f64 * delta;
    if angle == 0.0 {
        return;
    }
    if features.len() >= 2 {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        let (a, b) = (features[0], features[1]);
        features[0] = c * a - s * b;
        features[1] = s * a + c * b;
    }
    if let Some(last) = features.last_mut() {
        *last += angle;
    }
}

pub fn make_dil_stream(spec: &StreamSpec) -> Result<Vec<Task>> {
    if spec.kind != StreamKind::Dil {
        return Err(Error::Invalid(format!("expected a dil spec, got {}", spec.kind.name())));
    }
    spec.validate()?;
    let classes: Vec<usize> = (0..spec.num_classes).collect();
    Ok((0..spec.num_tasks)
        .map(|t| make_task(spec, t, &classes, |x| domain_transform(x, t, spec.domain_shift)))
        .collect())
}

/// One shuffle of the task's training set, cut into consecutive batches; the
/// last batch may be short.
pub fn minibatches(task: &Task, batch_size: usize, seed: u64) -> Result<Vec<Vec<Example>>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be >= 1"));
    }
    if task.train.is_empty() {
        return Err(Error::Contract("task has no training examples"));
    }
    let mut order: Vec<usize> = (0..task.train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|idx| idx.iter().map(|&i| task.train[i].clone()).collect())
        .collect())
}

/// Union of `classes_present` over a stream.
pub fn all_classes(tasks: &[Task]) -> BTreeSet<usize> {
    tasks.iter().flat_map(|t| t.classes_present.iter().copied()).collect()
}
