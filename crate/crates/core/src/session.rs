//! Single-pass training of one seed over a task stream.

use alloc::vec::Vec;

use crate::data::Task;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_all, AccuracyMatrix};
use crate::model::{Mlp, ModelConfig};
use crate::optim::{MangoConfig, MangoLearner, StepDiagnostics};
use crate::replay::ReplayBuffer;
use crate::seed;
use crate::streams::minibatches;

const MODEL_STREAM: u64 = 1;
const BUFFER_STREAM: u64 = 2;
const LEARNER_STREAM: u64 = 3;
const BATCH_STREAM: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub hidden_dims: Vec<usize>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub mango: MangoConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Global mini-batch index.
    pub step: u64,
    pub task: usize,
    pub diag: StepDiagnostics,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub matrix: AccuracyMatrix,
    pub steps: Vec<StepRecord>,
    pub learner: MangoLearner,
    pub buffer: ReplayBuffer,
}

/// Seeds for the independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub model: u64,
    pub buffer: u64,
    pub learner: u64,
    base: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            model: seed::derive(seed, MODEL_STREAM),
            buffer: seed::derive(seed, BUFFER_STREAM),
            learner: seed::derive(seed, LEARNER_STREAM),
            base: seed,
        }
    }

    /// Shuffle seed for task `t`'s mini-batches.
    pub fn batches(&self, task: usize) -> u64 {
        seed::derive(self.base, BATCH_STREAM + task as u64)
    }
}

/// Trains on every task once, in order; the anchor is refreshed and a row of
/// the accuracy matrix is recorded at each task end.
pub fn run_seed(tasks: &[Task], num_classes: usize, settings: &RunSettings, seed: u64) -> Result<SeedRun> {
    let input_dim = tasks
        .first()
        .and_then(|t| t.train.first())
        .map(|e| e.features.len())
        .ok_or(Error::Contract("empty task stream"))?;
    let seeds = RunSeeds::new(seed);
    let model_cfg = ModelConfig {
        input_dim,
        hidden_dims: settings.hidden_dims.clone(),
        num_classes,
        seed: seeds.model,
    };
    let (mlp, store) = Mlp::init(&model_cfg)?;
    let mut learner = MangoLearner::new(mlp, store, settings.mango.clone(), seeds.learner)?;
    let mut buffer = ReplayBuffer::new(settings.buffer_capacity, seeds.buffer);
    let mut matrix = AccuracyMatrix::new();
    let mut steps = Vec::new();

    for (t, task) in tasks.iter().enumerate() {
        for batch in minibatches(task, settings.batch_size, seeds.batches(t))? {
            let step = learner.batches_seen();
            let diag = learner.step(&batch, &mut buffer)?;
            steps.push(StepRecord { step, task: t, diag });
        }
        learner.store.snapshot_old();
        evaluate_all(&learner.mlp, &learner.store.params, &tasks[..=t], &mut matrix)?;
    }

    Ok(SeedRun {
        seed,
        matrix,
        steps,
        learner,
        buffer,
    })
}
