//! Runs every seed of an experiment and aggregates the results.

use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use mango_core::metrics::{mean_std, MetricSet};
use mango_core::session::{self, RunSettings, SeedRun};
use mango_core::{seed, StreamSpec, Task};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::formats::load_file_stream;

/// Outcome of one seed; failures carry the error or panic message.
#[derive(Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub result: std::result::Result<SeedReport, String>,
}

#[derive(Debug)]
pub struct SeedReport {
    pub run: SeedRun,
    pub metrics: MetricSet,
    pub group_names: Vec<String>,
}

/// Population mean and standard deviation of each metric over the seeds that
/// completed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub acc: (f64, f64),
    pub aaa: (f64, f64),
    pub wc_acc: (f64, f64),
    pub bwt: (f64, f64),
}

#[derive(Debug)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedOutcome>,
    pub aggregate: Option<Aggregate>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn completed(&self) -> impl Iterator<Item = (u64, &SeedReport)> {
        self.seeds.iter().filter_map(|s| s.result.as_ref().ok().map(|r| (s.seed, r)))
    }

    pub fn failed(&self) -> impl Iterator<Item = (u64, &str)> {
        self.seeds.iter().filter_map(|s| s.result.as_ref().err().map(|e| (s.seed, e.as_str())))
    }
}

/// The generated stream for one run seed. Each run seed sees its own draw of
/// the data; `stream.seed` selects the family.
pub fn stream_for_seed(spec: &StreamSpec, run_seed: u64) -> StreamSpec {
    StreamSpec {
        seed: seed::derive(spec.seed, run_seed),
        ..spec.clone()
    }
}

fn run_one(cfg: &ExperimentConfig, shared: Option<&[Task]>, run_seed: u64) -> std::result::Result<SeedReport, String> {
    let generated;
    let (tasks, num_classes) = match shared {
        Some(tasks) => {
            let classes = mango_core::streams::all_classes(tasks).last().map_or(0, |c| c + 1);
            (tasks, classes)
        }
        None => {
            let spec = stream_for_seed(&cfg.stream, run_seed);
            generated = spec.generate().map_err(|e| e.to_string())?;
            (generated.as_slice(), spec.total_classes())
        }
    };
    let settings = RunSettings {
        hidden_dims: cfg.hidden_dims.clone(),
        batch_size: cfg.batch_size,
        buffer_capacity: cfg.buffer_capacity,
        mango: cfg.mango.clone(),
    };
    let run = session::run_seed(tasks, num_classes, &settings, run_seed).map_err(|e| e.to_string())?;
    let metrics = run.matrix.summary().map_err(|e| e.to_string())?;
    let group_names = run.learner.store.groups.iter().map(|g| g.name.clone()).collect();
    Ok(SeedReport {
        run,
        metrics,
        group_names,
    })
}

fn isolated(cfg: &ExperimentConfig, shared: Option<&[Task]>, run_seed: u64) -> SeedOutcome {
    contain(run_seed, || run_one(cfg, shared, run_seed))
}

/// Turns a panic inside one seed into a recorded failure.
fn contain(run_seed: u64, f: impl FnOnce() -> std::result::Result<SeedReport, String>) -> SeedOutcome {
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".to_owned());
        Err(format!("panicked: {msg}"))
    });
    SeedOutcome { seed: run_seed, result }
}

fn aggregate(seeds: &[SeedOutcome]) -> Option<Aggregate> {
    let sets: Vec<MetricSet> = seeds.iter().filter_map(|s| s.result.as_ref().ok().map(|r| r.metrics)).collect();
    if sets.is_empty() {
        return None;
    }
    let stat = |f: fn(&MetricSet) -> f64| mean_std(&sets.iter().map(f).collect::<Vec<_>>());
    Some(Aggregate {
        acc: stat(|m| m.acc),
        aaa: stat(|m| m.aaa),
        wc_acc: stat(|m| m.wc_acc),
        bwt: stat(|m| m.bwt),
    })
}

/// Seeds run independently, optionally on several threads; a failing seed is
/// recorded and the others continue. Results keep the configured seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let shared = cfg.stream_file.as_deref().map(load_file_stream).transpose()?;
    let shared = shared.as_deref();

    let threads = match cfg.threads {
        0 => thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(cfg.seeds.len());

    let seeds: Vec<SeedOutcome> = if threads <= 1 {
        cfg.seeds.iter().map(|&s| isolated(cfg, shared, s)).collect()
    } else {
        let slots: Vec<Mutex<Option<SeedOutcome>>> = cfg.seeds.iter().map(|_| Mutex::new(None)).collect();
        let next = Mutex::new(0usize);
        thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = {
                        let mut n = next.lock().expect("index lock");
                        let i = *n;
                        *n += 1;
                        i
                    };
                    let Some(&s) = cfg.seeds.get(i) else { break };
                    *slots[i].lock().expect("slot lock") = Some(isolated(cfg, shared, s));
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    };

    Ok(RunReport {
        config: cfg.clone(),
        aggregate: aggregate(&seeds),
        seeds,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
