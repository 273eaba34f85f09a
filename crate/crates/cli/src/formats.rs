//! Text file formats: task streams, parameter checkpoints, buffer dumps and
//! accuracy matrices. Floats are written with Rust's shortest round-trip
//! formatting, so reading a file back reproduces every value bit for bit.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mango_core::{AccuracyMatrix, Example, ParameterStore, Ratio, ReplayBuffer, Task, Tensor};

use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn join_f64(values: &[f64], sep: &str) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push_str(sep);
        }
        let _ = write!(s, "{v}");
    }
    s
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses `key=value` pairs separated by whitespace, in the given order.
fn header_fields<const N: usize>(name: &str, line: usize, text: &str, keys: [&str; N]) -> Result<[u64; N]> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    let expected = keys.iter().map(|k| format!("{k}=<n>")).collect::<Vec<_>>().join(" ");
    if parts.len() != N {
        return Err(Error::parse(name, line, format!("expected header `{expected}`")));
    }
    let mut out = [0u64; N];
    for (i, (part, key)) in parts.iter().zip(keys).enumerate() {
        out[i] = part
            .strip_prefix(key)
            .and_then(|p| p.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(name, line, format!("expected header `{expected}`")))?;
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(name: &str, line: usize, what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(name, line, format!("malformed {what} `{}`", s.trim())))
}

/// Stream file: a header `dims=D tasks=T`, then one row per example:
/// `task_id,split,label,x_1,...,x_D` with `split` in `{train,test}`. Rows of a
/// task are contiguous and task ids run `0..T` in order.
pub fn write_stream(path: &Path, tasks: &[Task]) -> Result<()> {
    let dims = tasks
        .iter()
        .flat_map(|t| t.train.iter().chain(&t.test))
        .map(|e| e.features.len())
        .next()
        .unwrap_or(0);
    let mut s = format!("dims={dims} tasks={}\n", tasks.len());
    for task in tasks {
        for (split, examples) in [("train", &task.train), ("test", &task.test)] {
            for e in examples {
                let _ = writeln!(s, "{},{split},{},{}", task.task_id, e.label, join_f64(&e.features, ","));
            }
        }
    }
    write(path, &s)
}

pub fn load_file_stream(path: &Path) -> Result<Vec<Task>> {
    parse_stream(&path.display().to_string(), &read(path)?)
}

pub fn parse_stream(name: &str, text: &str) -> Result<Vec<Task>> {
    let mut lines = content_lines(text);
    let (line, header) = lines.next().ok_or_else(|| Error::parse(name, 1, "empty stream file"))?;
    let [dims, num_tasks] = header_fields(name, line, header, ["dims", "tasks"])?;
    let (dims, num_tasks) = (dims as usize, num_tasks as usize);

    let mut tasks: Vec<Task> = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != dims + 3 {
            return Err(Error::parse(
                name,
                line,
                format!("expected {} fields (task_id, split, label, {dims} features), got {}", dims + 3, fields.len()),
            ));
        }
        let task_id: usize = parse_field(name, line, "task id", fields[0])?;
        let label: usize = parse_field(name, line, "label", fields[2])?;
        let features = fields[3..]
            .iter()
            .map(|f| parse_field(name, line, "feature", f))
            .collect::<Result<Vec<f64>>>()?;
        match tasks.last() {
            Some(t) if t.task_id == task_id => {}
            _ if task_id == tasks.len() => tasks.push(Task {
                task_id,
                train: Vec::new(),
                test: Vec::new(),
                classes_present: BTreeSet::new(),
            }),
            _ => {
                return Err(Error::parse(
                    name,
                    line,
                    format!("task ids must be contiguous and start at 0: expected {}, got {task_id}", tasks.len()),
                ))
            }
        }
        let task = tasks.last_mut().expect("pushed above");
        let example = Example {
            features,
            label,
            task_id,
        };
        match fields[1].trim() {
            "train" => task.train.push(example),
            "test" => task.test.push(example),
            other => return Err(Error::parse(name, line, format!("split must be train or test, got `{other}`"))),
        }
        task.classes_present.insert(label);
    }
    if tasks.len() != num_tasks {
        return Err(Error::parse(name, line, format!("header declares {num_tasks} tasks, file has {}", tasks.len())));
    }
    if let Some(t) = tasks.iter().find(|t| t.train.is_empty() || t.test.is_empty()) {
        return Err(Error::parse(name, line, format!("task {} needs both train and test rows", t.task_id)));
    }
    Ok(tasks)
}

/// One tensor of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub group: String,
    pub name: String,
    pub tensor: Tensor,
}

/// Checkpoint: per tensor, a line `tensor <group> <name> <d1>x<d2>...` and a
/// line of space-separated row-major values, in parameter order.
pub fn write_checkpoint(path: &Path, store: &ParameterStore) -> Result<()> {
    write(path, &checkpoint_text(store))
}

pub fn checkpoint_text(store: &ParameterStore) -> String {
    let mut entries: Vec<(usize, &str, &str)> = Vec::new();
    for group in &store.groups {
        for (&t, name) in group.tensors.iter().zip(&group.tensor_names) {
            entries.push((t, &group.name, name));
        }
    }
    entries.sort_by_key(|e| e.0);
    let mut s = String::from("# mango checkpoint v1\n");
    for (t, group, name) in entries {
        let p = &store.params[t];
        let shape = p.shape().iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        let _ = writeln!(s, "tensor {group} {name} {}", if shape.is_empty() { "scalar" } else { &shape });
        let _ = writeln!(s, "{}", join_f64(p.data(), " "));
    }
    s
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    parse_checkpoint(&path.display().to_string(), &read(path)?)
}

pub fn parse_checkpoint(name: &str, text: &str) -> Result<Vec<CheckpointEntry>> {
    let mut out = Vec::new();
    let mut lines = content_lines(text);
    while let Some((line, head)) = lines.next() {
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(Error::parse(name, line, "expected `tensor <group> <name> <shape>`"));
        }
        let shape: Vec<usize> = if parts[3] == "scalar" {
            Vec::new()
        } else {
            parts[3]
                .split('x')
                .map(|d| parse_field(name, line, "dimension", d))
                .collect::<Result<_>>()?
        };
        let (vline, values) = lines
            .next()
            .ok_or_else(|| Error::parse(name, line, "missing value line"))?;
        let data = values
            .split_whitespace()
            .map(|v| parse_field(name, vline, "value", v))
            .collect::<Result<Vec<f64>>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| Error::parse(name, vline, e.to_string()))?;
        out.push(CheckpointEntry {
            group: parts[1].to_owned(),
            name: parts[2].to_owned(),
            tensor,
        });
    }
    Ok(out)
}

/// Copies checkpoint tensors into `store`, checking names and shapes.
pub fn load_checkpoint(store: &mut ParameterStore, entries: &[CheckpointEntry]) -> Result<()> {
    if entries.len() != store.params.len() {
        return Err(Error::Invalid(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            store.params.len()
        )));
    }
    for (t, entry) in entries.iter().enumerate() {
        let group = &store.groups[store.group_of(t)];
        let pos = group.tensors.iter().position(|&x| x == t).expect("tensor belongs to its group");
        if entry.group != group.name || entry.name != group.tensor_names[pos] {
            return Err(Error::Invalid(format!(
                "tensor {t}: checkpoint has {}.{}, model has {}.{}",
                entry.group, entry.name, group.name, group.tensor_names[pos]
            )));
        }
        if entry.tensor.shape() != store.params[t].shape() {
            return Err(Error::Invalid(format!("tensor {t}: shape mismatch")));
        }
    }
    for (p, e) in store.params.iter_mut().zip(entries) {
        *p = e.tensor.clone();
    }
    Ok(())
}

/// Buffer dump: a header `capacity=M seen=N`, then `task_id,label,x_1,...,x_D`
/// per stored item in slot order.
pub fn buffer_dump_text(buffer: &ReplayBuffer) -> String {
    let mut s = format!("capacity={} seen={}\n", buffer.capacity(), buffer.seen());
    for e in buffer.items() {
        let _ = writeln!(s, "{},{},{}", e.task_id, e.label, join_f64(&e.features, ","));
    }
    s
}

/// Rebuilds a buffer from a dump; `seed` drives its future replacement draws.
pub fn parse_buffer_dump(name: &str, text: &str, seed: u64) -> Result<ReplayBuffer> {
    let mut lines = content_lines(text);
    let (line, header) = lines.next().ok_or_else(|| Error::parse(name, 1, "empty buffer dump"))?;
    let [capacity, seen] = header_fields(name, line, header, ["capacity", "seen"])?;
    let mut items = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::parse(name, line, "expected task_id,label,features..."));
        }
        items.push(Example {
            task_id: parse_field(name, line, "task id", fields[0])?,
            label: parse_field(name, line, "label", fields[1])?,
            features: fields[2..]
                .iter()
                .map(|f| parse_field(name, line, "feature", f))
                .collect::<Result<_>>()?,
        });
    }
    Ok(ReplayBuffer::from_parts(capacity as usize, seen, items, seed)?)
}

/// Accuracy matrix CSV: header `after_task,task_0,...,task_{T-1}`, one row per
/// evaluation point, blank cells above the diagonal.
pub fn matrix_csv(matrix: &AccuracyMatrix) -> String {
    let t = matrix.num_tasks();
    let mut s = String::from("after_task");
    for j in 0..t {
        let _ = write!(s, ",task_{j}");
    }
    s.push('\n');
    for (k, row) in matrix.rows().iter().enumerate() {
        let _ = write!(s, "{k}");
        for j in 0..t {
            match row.get(j) {
                Some(a) => {
                    let _ = write!(s, ",{}", a.to_f64());
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

pub fn read_matrix_csv(path: &Path) -> Result<AccuracyMatrix> {
    parse_matrix_csv(&path.display().to_string(), &read(path)?)
}

/// Cells are read as exact decimals or `n/d` fractions.
pub fn parse_matrix_csv(name: &str, text: &str) -> Result<AccuracyMatrix> {
    let mut lines = content_lines(text);
    let (_, header) = lines.next().ok_or_else(|| Error::parse(name, 1, "empty matrix file"))?;
    let width = header.split(',').count() - 1;
    let mut matrix = AccuracyMatrix::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        let k = matrix.num_tasks();
        if fields.len() != width + 1 {
            return Err(Error::parse(name, line, format!("expected {} fields, got {}", width + 1, fields.len())));
        }
        if k >= width {
            return Err(Error::parse(name, line, format!("more rows than the {width} task columns")));
        }
        if fields[1..].iter().skip(k + 1).any(|f| !f.is_empty()) {
            return Err(Error::parse(name, line, format!("row {k} must leave cells after task_{k} blank")));
        }
        let values = fields[1..k + 2]
            .iter()
            .map(|f| f.parse::<Ratio>().map_err(|e| Error::parse(name, line, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        matrix.push_row(values).map_err(|e| Error::parse(name, line, e.to_string()))?;
    }
    if matrix.num_tasks() == 0 {
        return Err(Error::parse(name, 1, "matrix has no rows"));
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mango_core::{Mlp, ModelConfig, StreamKind, StreamSpec};

    #[test]
    fn four_row_file_with_two_tasks() {
        let text = "dims=2 tasks=2\n0,train,0,1.0,2.0\n0,test,1,0.5,0.5\n1,train,2,-1,3e-2\n1,test,3,0,0\n";
        let tasks = parse_stream("s", text).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].train[0].features, vec![1.0, 2.0]);
        assert_eq!(tasks[1].train[0].features, vec![-1.0, 0.03]);
        assert_eq!(tasks[1].classes_present, [2, 3].into_iter().collect());
        assert!(tasks.iter().all(|t| t.train.len() == 1 && t.test.len() == 1));
    }

    #[test]
    fn stream_errors_name_the_line() {
        let bad_num = "dims=1 tasks=1\n0,train,0,1.0\n0,test,0,x1\n";
        assert!(parse_stream("s", bad_num).unwrap_err().to_string().contains("s:3:"));
        let gap = "dims=1 tasks=2\n0,train,0,1\n0,test,0,1\n2,train,0,1\n";
        assert!(parse_stream("s", gap).unwrap_err().to_string().contains("s:4:"));
        let back = "dims=1 tasks=2\n0,train,0,1\n1,train,0,1\n0,test,0,1\n";
        assert!(parse_stream("s", back).is_err());
        assert!(parse_stream("s", "dims=1 tasks=1\n0,val,0,1\n").is_err());
        assert!(parse_stream("s", "dims=2 tasks=1\n0,train,0,1\n").is_err());
        assert!(parse_stream("s", "tasks=1 dims=2\n").is_err());
        assert!(parse_stream("s", "dims=1 tasks=1\n0,train,0,1\n").is_err());
    }

    #[test]
    fn generated_streams_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [StreamKind::Cil, StreamKind::Dil] {
            let spec = StreamSpec { kind, samples_per_task: 20, num_tasks: 3, ..StreamSpec::default() };
            let tasks = spec.generate().unwrap();
            let path = dir.path().join("s.csv");
            write_stream(&path, &tasks).unwrap();
            assert_eq!(load_file_stream(&path).unwrap(), tasks);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (_, mut store) = Mlp::init(&ModelConfig { input_dim: 3, hidden_dims: vec![4], num_classes: 2, seed: 5 }).unwrap();
        let entries = parse_checkpoint("c", &checkpoint_text(&store)).unwrap();
        assert_eq!(entries.len(), 4);
        assert_eq!((entries[0].group.as_str(), entries[0].name.as_str()), ("hidden0", "weight"));
        let original = store.params.clone();
        for p in store.params.iter_mut() {
            *p = Tensor::zeros(p.shape());
        }
        load_checkpoint(&mut store, &entries).unwrap();
        assert_eq!(store.params, original);

        let (_, mut other) = Mlp::init(&ModelConfig { input_dim: 3, hidden_dims: vec![5], num_classes: 2, seed: 5 }).unwrap();
        assert!(load_checkpoint(&mut other, &entries).is_err());
        assert!(parse_checkpoint("c", "tensor a b 2\n1.0\n").is_err());
        assert!(parse_checkpoint("c", "tensor a b 2\n").is_err());
    }

    #[test]
    fn buffer_dump_round_trip() {
        let mut buf = ReplayBuffer::new(3, 1);
        for i in 0..7 {
            buf.insert(Example { features: vec![i as f64 / 3.0, -1.5], label: i % 2, task_id: i / 3 });
        }
        let back = parse_buffer_dump("b", &buffer_dump_text(&buf), 1).unwrap();
        assert_eq!(back.items(), buf.items());
        assert_eq!((back.capacity(), back.seen()), (3, 7));
        assert!(parse_buffer_dump("b", "capacity=3 seen=7\n0,1,0.5\n", 0).is_err());
    }

    #[test]
    fn matrix_round_trip_and_shape_checks() {
        let m = parse_matrix_csv("m", "after_task,task_0,task_1\n0,0.9,\n1,0.8,0.7\n").unwrap();
        assert_eq!(m.bwt().unwrap().to_f64(), -0.1);
        assert_eq!(parse_matrix_csv("m", &matrix_csv(&m)).unwrap(), m);
        assert!(parse_matrix_csv("m", "after_task,task_0,task_1\n0,0.9,0.1\n").is_err());
        assert!(parse_matrix_csv("m", "after_task,task_0\n0,abc\n").is_err());
        assert!(parse_matrix_csv("m", "after_task,task_0\n").is_err());
        let thirds = parse_matrix_csv("m", "after_task,task_0\n0,1/3\n").unwrap();
        assert_eq!(thirds.final_accuracy().unwrap(), Ratio::new(1, 3).unwrap());
    }
}
