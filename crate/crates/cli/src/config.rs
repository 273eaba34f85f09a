//! Experiment configuration: flat `key = value` text.
//!
//! ```text
//! # comment
//! [experiment]
//! method = mango
//! seeds = 0, 1, 2
//!
//! [mango]
//! eta = 0.02
//! ```
//!
//! A key may also be written with its section prefix (`mango.eta = 0.02`) or,
//! when unambiguous, bare (`eta = 0.02`). See `README.md` for every key.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mango_core::optim::LambdaOptimizer;
use mango_core::{MangoConfig, Method, StreamKind, StreamSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub stream: StreamSpec,
    /// Read tasks from this stream file instead of generating them.
    pub stream_file: Option<PathBuf>,
    pub hidden_dims: Vec<usize>,
    pub method: Method,
    pub mango: MangoConfig,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Worker threads for seeds; 0 means one per available core.
    pub threads: usize,
    /// Task-incremental evaluation with per-task heads. Reserved; must stay off.
    pub til: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: StreamSpec::default(),
            stream_file: None,
            hidden_dims: vec![32, 32],
            method: Method::Mango,
            mango: MangoConfig::default(),
            buffer_capacity: 200,
            batch_size: 10,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("results"),
            threads: 1,
            til: false,
        }
    }
}

const KEYS: &[(&str, &str)] = &[
    ("experiment", "method"),
    ("experiment", "seeds"),
    ("experiment", "buffer_capacity"),
    ("experiment", "batch_size"),
    ("experiment", "output_dir"),
    ("experiment", "threads"),
    ("stream", "kind"),
    ("stream", "num_tasks"),
    ("stream", "classes_per_task"),
    ("stream", "num_classes"),
    ("stream", "samples_per_task"),
    ("stream", "input_dim"),
    ("stream", "noise_scale"),
    ("stream", "domain_shift"),
    ("stream", "seed"),
    ("stream", "file"),
    ("model", "hidden_dims"),
    ("mango", "eta"),
    ("mango", "eta_lambda"),
    ("mango", "momentum"),
    ("mango", "glances"),
    ("mango", "meta_every"),
    ("mango", "meta_batch"),
    ("mango", "replay_batch"),
    ("mango", "rho_init"),
    ("mango", "lambda_optimizer"),
    ("mango", "replay_in_train"),
    ("mango", "gate_enabled"),
    ("mango", "reg_enabled"),
    ("mango", "meta_enabled"),
    ("eval", "til"),
];

const FLAG_KEYS: [&str; 4] = ["replay_in_train", "gate_enabled", "reg_enabled", "meta_enabled"];

fn resolve(section: Option<&str>, key: &str) -> Option<(&'static str, &'static str)> {
    let (section, key) = match (section, key.split_once('.')) {
        (_, Some((s, k))) => (Some(s), k),
        (s, None) => (s, key),
    };
    let mut hits = KEYS
        .iter()
        .filter(|(s, k)| *k == key && section.is_none_or(|want| want == *s));
    let first = hits.next()?;
    hits.next().is_none().then_some(*first)
}

fn value_err(key: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_owned(),
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, line: usize, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| value_err(key, line, format!("cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, line: usize, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, line, v.trim())).collect()
}

fn parse_bool(key: &str, line: usize, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(value_err(key, line, format!("expected true or false, got `{value}`"))),
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str(&text)?;
    if let Some(file) = &cfg.stream_file {
        if file.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.stream_file = Some(dir.join(file));
            }
        }
    }
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut section: Option<String> = None;
    let mut flags: Vec<(&str, bool)> = Vec::new();
    let mut seen: Vec<(&str, &str, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(value_err(name, line_no, "unknown section"));
            }
            section = Some(name.to_owned());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| value_err(line, line_no, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        let (sec, name) = resolve(section.as_deref(), key).ok_or_else(|| value_err(key, line_no, "unknown key"))?;
        if let Some((_, _, first)) = seen.iter().find(|(s, k, _)| *s == sec && *k == name) {
            return Err(value_err(key, line_no, format!("duplicate key (first set on line {first})")));
        }
        seen.push((sec, name, line_no));

        let l = line_no;
        match (sec, name) {
            ("experiment", "method") => {
                cfg.method = value.parse().map_err(|_| value_err(key, l, format!("unknown method `{value}`")))?
            }
            ("experiment", "seeds") => cfg.seeds = parse_list(key, l, value)?,
            ("experiment", "buffer_capacity") => cfg.buffer_capacity = parse_num(key, l, value)?,
            ("experiment", "batch_size") => cfg.batch_size = parse_num(key, l, value)?,
            ("experiment", "output_dir") => cfg.output_dir = PathBuf::from(value),
            ("experiment", "threads") => cfg.threads = parse_num(key, l, value)?,
            ("stream", "kind") => {
                cfg.stream.kind = match value {
                    "cil" => StreamKind::Cil,
                    "dil" => StreamKind::Dil,
                    _ => return Err(value_err(key, l, format!("expected cil or dil, got `{value}`"))),
                }
            }
            ("stream", "num_tasks") => cfg.stream.num_tasks = parse_num(key, l, value)?,
            ("stream", "classes_per_task") => cfg.stream.classes_per_task = parse_num(key, l, value)?,
            ("stream", "num_classes") => cfg.stream.num_classes = parse_num(key, l, value)?,
            ("stream", "samples_per_task") => cfg.stream.samples_per_task = parse_num(key, l, value)?,
            ("stream", "input_dim") => cfg.stream.input_dim = parse_num(key, l, value)?,
            ("stream", "noise_scale") => cfg.stream.noise_scale = parse_num(key, l, value)?,
            ("stream", "domain_shift") => cfg.stream.domain_shift = parse_num(key, l, value)?,
            ("stream", "seed") => cfg.stream.seed = parse_num(key, l, value)?,
            ("stream", "file") => cfg.stream_file = Some(PathBuf::from(value)),
            ("model", "hidden_dims") => cfg.hidden_dims = parse_list(key, l, value)?,
            ("mango", "eta") => cfg.mango.eta = parse_num(key, l, value)?,
            ("mango", "eta_lambda") => cfg.mango.eta_lambda = parse_num(key, l, value)?,
            ("mango", "momentum") => cfg.mango.momentum = parse_num(key, l, value)?,
            ("mango", "glances") => cfg.mango.glances = parse_num(key, l, value)?,
            ("mango", "meta_every") => cfg.mango.meta_every = parse_num(key, l, value)?,
            ("mango", "meta_batch") => cfg.mango.meta_batch = parse_num(key, l, value)?,
            ("mango", "replay_batch") => cfg.mango.replay_batch = parse_num(key, l, value)?,
            ("mango", "rho_init") => cfg.mango.rho_init = parse_num(key, l, value)?,
            ("mango", "lambda_optimizer") => {
                cfg.mango.lambda_optimizer = value
                    .parse::<LambdaOptimizer>()
                    .map_err(|_| value_err(key, l, format!("expected adam or gd, got `{value}`")))?
            }
            ("mango", flag) if FLAG_KEYS.contains(&flag) => flags.push((flag, parse_bool(key, l, value)?)),
            ("eval", "til") => cfg.til = parse_bool(key, l, value)?,
            _ => unreachable!("key table and match arms disagree on {sec}.{name}"),
        }
    }

    // The method sets the component flags; explicit flags win.
    cfg.mango = cfg.mango.clone().with_method(cfg.method);
    for (flag, on) in flags {
        match flag {
            "replay_in_train" => cfg.mango.replay_in_train = on,
            "gate_enabled" => cfg.mango.gate_enabled = on,
            "reg_enabled" => cfg.mango.reg_enabled = on,
            _ => cfg.mango.meta_enabled = on,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Switches to another recipe, resetting the component flags to its values.
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self.mango = self.mango.with_method(method);
        self
    }

    /// Whether the configured components ever read the replay buffer.
    pub fn needs_buffer(&self) -> bool {
        self.mango.replay_in_train || self.mango.meta_enabled
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_owned()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.buffer_capacity == 0 && self.needs_buffer() {
            return bad("buffer_capacity = 0 is only valid when replay and meta steps are off (method = ft)");
        }
        if self.til {
            return bad("eval.til = true is not supported; only single-head evaluation is implemented");
        }
        if self.stream_file.is_none() {
            self.stream.validate()?;
        }
        self.mango.validate()?;
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let m = &self.mango;
        let st = &self.stream;
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "seeds = {}", join(&mut self.seeds.iter().map(u64::to_string)));
        let _ = writeln!(s, "buffer_capacity = {}", self.buffer_capacity);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "\n[stream]");
        let _ = writeln!(s, "kind = {}", st.kind.name());
        let _ = writeln!(s, "num_tasks = {}", st.num_tasks);
        let _ = writeln!(s, "classes_per_task = {}", st.classes_per_task);
        let _ = writeln!(s, "num_classes = {}", st.num_classes);
        let _ = writeln!(s, "samples_per_task = {}", st.samples_per_task);
        let _ = writeln!(s, "input_dim = {}", st.input_dim);
        let _ = writeln!(s, "noise_scale = {}", st.noise_scale);
        let _ = writeln!(s, "domain_shift = {}", st.domain_shift);
        let _ = writeln!(s, "seed = {}", st.seed);
        if let Some(file) = &self.stream_file {
            let _ = writeln!(s, "file = {}", file.display());
        }
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "hidden_dims = {}", join(&mut self.hidden_dims.iter().map(usize::to_string)));
        let _ = writeln!(s, "\n[mango]");
        let _ = writeln!(s, "eta = {}", m.eta);
        let _ = writeln!(s, "eta_lambda = {}", m.eta_lambda);
        let _ = writeln!(s, "momentum = {}", m.momentum);
        let _ = writeln!(s, "glances = {}", m.glances);
        let _ = writeln!(s, "meta_every = {}", m.meta_every);
        let _ = writeln!(s, "meta_batch = {}", m.meta_batch);
        let _ = writeln!(s, "replay_batch = {}", m.replay_batch);
        let _ = writeln!(s, "rho_init = {}", m.rho_init);
        let _ = writeln!(s, "lambda_optimizer = {}", m.lambda_optimizer.name());
        let _ = writeln!(s, "replay_in_train = {}", m.replay_in_train);
        let _ = writeln!(s, "gate_enabled = {}", m.gate_enabled);
        let _ = writeln!(s, "reg_enabled = {}", m.reg_enabled);
        let _ = writeln!(s, "meta_enabled = {}", m.meta_enabled);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "til = {}", self.til);
        s
    }
}
