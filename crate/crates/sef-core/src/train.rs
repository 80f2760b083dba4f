//! Deterministic SGD training: momentum updates, stepped learning-rate
//! decay, per-epoch validation (including per-group-head accuracy), and the
//! `SEFW` checkpoint format.
//!
//! Determinism contract: one `ChaCha8Rng` seeded with `cfg.seed` drives the
//! whole run — per epoch it shuffles the sample indices once, then (only
//! when `flip_augment` is set) draws one flip decision per training sample
//! in batch order. Everything else is straight-line arithmetic, so a seed
//! plus a config plus a dataset fixes every parameter byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{to_input_tensor, Dataset};
use crate::error::{Error, Result};
use crate::loss::{sef_objective, LossReport, LossWeights};
use crate::nn::{argmax_rows, SefModel};
use crate::tensor::{Graph, Tensor};

/// Training-run configuration. [`TrainConfig::default`] carries the
/// full-scale schedule (50 epochs, batch 32, lr 0.01, decay every 20);
/// [`TrainConfig::desk`] the small-scale one used on synthetic data.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub weights: LossWeights,
    pub channels: usize,
    pub classes: usize,
    pub flip_augment: bool,
    pub stop_teacher_grad: bool,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub val_fraction: f64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 50,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            lr_decay_every: 20,
            lr_decay_factor: 0.1,
            weights: LossWeights {
                lambda: 1.0,
                gamma: 0.05,
                phi: 1.0,
                groups: 2,
            },
            channels: 24,
            classes: 16,
            flip_augment: true,
            stop_teacher_grad: false,
            train_path: None,
            test_path: None,
            val_fraction: 0.1,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Schedule for the synthetic benchmark: shorter, hotter, no flips
    /// (flipping swaps the glyph positions and destroys the labels).
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 0.05,
            lr_decay_every: 12,
            flip_augment: false,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0,1)",
                self.momentum
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor {} outside (0,1]",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be ≥ 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction {} outside [0,1)",
                self.val_fraction
            )));
        }
        self.weights.validate()?;
        if self.channels < self.weights.groups {
            return Err(Error::Config(format!(
                "{} channels cannot host {} groups",
                self.channels, self.weights.groups
            )));
        }
        if self.classes == 0 {
            return Err(Error::Config("classes must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Parses `key=value` lines (`#` starts a comment) on top of the
    /// desk-scale defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::desk();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Config(format!("line {}: bad {what} value '{value}'", lineno + 1))
            };
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad("lr"))?,
                "momentum" => cfg.momentum = value.parse().map_err(|_| bad("momentum"))?,
                "lr_decay_every" => {
                    cfg.lr_decay_every = value.parse().map_err(|_| bad("lr_decay_every"))?
                }
                "lr_decay_factor" => {
                    cfg.lr_decay_factor = value.parse().map_err(|_| bad("lr_decay_factor"))?
                }
                "lambda" => cfg.weights.lambda = value.parse().map_err(|_| bad("lambda"))?,
                "gamma" => cfg.weights.gamma = value.parse().map_err(|_| bad("gamma"))?,
                "phi" => cfg.weights.phi = value.parse().map_err(|_| bad("phi"))?,
                "groups" => cfg.weights.groups = value.parse().map_err(|_| bad("groups"))?,
                "channels" => cfg.channels = value.parse().map_err(|_| bad("channels"))?,
                "classes" => cfg.classes = value.parse().map_err(|_| bad("classes"))?,
                "train_path" => cfg.train_path = Some(PathBuf::from(value)),
                "val_fraction" => {
                    cfg.val_fraction = value.parse().map_err(|_| bad("val_fraction"))?
                }
                "test_path" => cfg.test_path = Some(PathBuf::from(value)),
                "checkpoint_dir" => cfg.checkpoint_dir = Some(PathBuf::from(value)),
                "flip" => cfg.flip_augment = parse_bool(value).ok_or_else(|| bad("flip"))?,
                "stop_teacher_grad" => {
                    cfg.stop_teacher_grad =
                        parse_bool(value).ok_or_else(|| bad("stop_teacher_grad"))?
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Stepped decay: `lr · factor^(epoch / every)` with integer division.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
}

/// One momentum update: `v ← momentum·v + g`, `p ← p − lr·v`.
pub fn sgd_step(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::ShapeMismatch {
            context: "sgd_step",
            left: vec![param.len()],
            right: vec![grad.len(), velocity.len()],
        });
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD with one velocity buffer per named parameter.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    pub momentum: f64,
    velocities: BTreeMap<String, Vec<f64>>,
}

impl SgdOptimizer {
    pub fn new(momentum: f64) -> Self {
        SgdOptimizer {
            momentum,
            velocities: BTreeMap::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &[(String, Vec<f64>)],
        lr: f64,
    ) -> Result<()> {
        for ((name, tensor), (gname, grad)) in params.iter_mut().zip(grads) {
            debug_assert_eq!(name, gname);
            let velocity = self
                .velocities
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; tensor.numel()]);
            sgd_step(tensor.data_mut(), grad, velocity, lr, self.momentum)?;
        }
        Ok(())
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocities.get(name).map(|v| v.as_slice())
    }

    pub fn set_velocity(&mut self, name: String, v: Vec<f64>) {
        self.velocities.insert(name, v);
    }
}

/// Everything logged for one epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted means of the batch objective terms.
    pub loss: LossReport,
    pub val_accuracy: f64,
    /// Validation accuracy of each group head's own argmax.
    pub group_val_accuracy: Vec<f64>,
}

const EVAL_BATCH: usize = 64;


/// Fraction of correct global-head predictions. No augmentation, no
/// randomness; group heads never influence the result.
pub fn evaluate(model: &SefModel, ds: &Dataset) -> Result<f64> {
    Ok(evaluate_groups(model, ds)?.0)
}

/// Global-head accuracy plus each group head's own accuracy.
pub fn evaluate_groups(model: &SefModel, ds: &Dataset) -> Result<(f64, Vec<f64>)> {
    if ds.is_empty() {
        return Err(Error::InvalidOperand("cannot evaluate an empty dataset".into()));
    }
    let mut hits = 0usize;
    let mut group_hits = vec![0usize; model.partition().group_count()];
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let images = to_input_tensor(ds, chunk, None);
        let mut g = Graph::new();
        let fwd = model.forward(&mut g, &images)?;
        let preds = argmax_rows(g.value(fwd.logits_global));
        for (&i, &p) in chunk.iter().zip(&preds) {
            if p == ds.label(i) {
                hits += 1;
            }
        }
        for (gi, &logits) in fwd.logits_groups.iter().enumerate() {
            let gp = argmax_rows(g.value(logits));
            for (&i, &p) in chunk.iter().zip(&gp) {
                if p == ds.label(i) {
                    group_hits[gi] += 1;
                }
            }
        }
    }
    let n = ds.len() as f64;
    Ok((
        hits as f64 / n,
        group_hits.iter().map(|&h| h as f64 / n).collect(),
    ))
}

/// Runs the full training loop, mutating `model` in place. Returns one
/// record per epoch. Checkpoints are written per epoch when
/// `cfg.checkpoint_dir` is set.
pub fn train(
    model: &mut SefModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if train_ds.class_count != model.classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            train_ds.class_count,
            model.classes()
        )));
    }
    if cfg.weights.groups != model.partition().group_count() {
        return Err(Error::Config(format!(
            "config wants {} groups, model has {}",
            cfg.weights.groups,
            model.partition().group_count()
        )));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = SgdOptimizer::new(cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..train_ds.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        indices.shuffle(&mut rng);
        let mut term_sums = [0.0f64; 5];
        let mut seen = 0usize;
        for (batch_ix, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let flips: Option<Vec<bool>> = cfg
                .flip_augment
                .then(|| chunk.iter().map(|_| rng.random_bool(0.5)).collect());
            let images = to_input_tensor(train_ds, chunk, flips.as_deref());
            let labels: Vec<usize> = chunk.iter().map(|&i| train_ds.label(i)).collect();

            let mut g = Graph::new();
            let fwd = model.forward(&mut g, &images)?;
            let (total, report) = sef_objective(
                &mut g,
                fwd.logits_global,
                &fwd.logits_groups,
                fwd.features,
                &labels,
                model.partition(),
                &cfg.weights,
                cfg.stop_teacher_grad,
            )?;
            if !report.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch}, batch {batch_ix}: {report:?}"
                )));
            }
            g.backward(total)?;

            let grads: Vec<(String, Vec<f64>)> = fwd
                .params
                .iter()
                .map(|(name, id)| {
                    let grad = g
                        .grad(*id)
                        .map(|v| v.to_vec())
                        .unwrap_or_else(|| vec![0.0; g.value(*id).numel()]);
                    (name.clone(), grad)
                })
                .collect();
            let mut params = model.named_parameters_mut();
            optimizer.step(&mut params, &grads, lr)?;

            let nb = chunk.len() as f64;
            term_sums[0] += report.cross_entropy * nb;
            term_sums[1] += report.entropy_global * nb;
            term_sums[2] += report.distill_mean * nb;
            term_sums[3] += report.grouping * nb;
            term_sums[4] += report.total * nb;
            seen += chunk.len();
        }
        let n = seen as f64;
        let loss = LossReport {
            cross_entropy: term_sums[0] / n,
            entropy_global: term_sums[1] / n,
            distill_mean: term_sums[2] / n,
            grouping: term_sums[3] / n,
            total: term_sums[4] / n,
        };
        let (val_accuracy, group_val_accuracy) = evaluate_groups(model, val_ds)?;
        history.push(EpochRecord {
            epoch,
            lr,
            loss,
            val_accuracy,
            group_val_accuracy,
        });
        if let Some(dir) = &cfg.checkpoint_dir {
            let path = dir.join(format!("epoch_{epoch:03}.sefw"));
            save_checkpoint(model, &optimizer, epoch, &path)?;
        }
    }
    Ok(history)
}

// ── SEFW checkpoint format ─────────────────────────────────────────────
//
// Little-endian layout:
//   "SEFW" | version u32 | tensor count u32 |
//   per tensor: name len u32 | name bytes | rank u32 | dims u32 … | f64 data

const CKPT_MAGIC: &[u8; 4] = b"SEFW";
const CKPT_VERSION: u32 = 1;

pub fn tensors_to_bytes(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn tensors_from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let need = |offset: usize, n: usize, what: &str| -> Result<()> {
        if offset + n > bytes.len() {
            return Err(Error::Format {
                offset,
                message: format!(
                    "truncated checkpoint: {what} needs {n} bytes, {} remain",
                    bytes.len() - offset
                ),
            });
        }
        Ok(())
    };
    let mut offset = 0usize;
    need(offset, 4, "magic")?;
    if &bytes[..4] != CKPT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    offset = 4;
    need(offset, 4, "version")?;
    let version = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Format {
            offset,
            message: format!("unsupported version {version}"),
        });
    }
    offset += 4;
    need(offset, 4, "tensor count")?;
    let count = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
    offset += 4;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        need(offset, 4, "name length")?;
        let name_len = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
        offset += 4;
        need(offset, name_len, "name")?;
        let name = String::from_utf8(bytes[offset..offset + name_len].to_vec()).map_err(|_| {
            Error::Format {
                offset,
                message: "tensor name is not UTF-8".into(),
            }
        })?;
        offset += name_len;
        need(offset, 4, "rank")?;
        let rank = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
        offset += 4;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            need(offset, 4, "dimension")?;
            shape.push(u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize);
            offset += 4;
        }
        let numel: usize = shape.iter().product();
        need(offset, numel * 8, "tensor data")?;
        let data: Vec<f64> = bytes[offset..offset + numel * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += numel * 8;
        entries.push((name, Tensor::new(shape, data)?));
    }
    if offset != bytes.len() {
        return Err(Error::Format {
            offset,
            message: format!("{} trailing bytes", bytes.len() - offset),
        });
    }
    Ok(entries)
}

pub fn write_tensors(entries: &[(String, Tensor)], path: &Path) -> Result<()> {
    fs::write(path, tensors_to_bytes(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    tensors_from_bytes(&bytes)
}

/// Saves parameters, optimizer velocities (`velocity.<name>`), and the
/// epoch counter (`epoch`, a single-element tensor).
pub fn save_checkpoint(
    model: &SefModel,
    optimizer: &SgdOptimizer,
    epoch: usize,
    path: &Path,
) -> Result<()> {
    let mut entries: Vec<(String, Tensor)> = model
        .named_parameters()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let velocity_entries: Vec<(String, Tensor)> = model
        .named_parameters()
        .into_iter()
        .map(|(n, t)| {
            let v = optimizer
                .velocity(&n)
                .map(|v| v.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()]);
            (
                format!("velocity.{n}"),
                Tensor::new(t.shape().to_vec(), v).expect("velocity shape"),
            )
        })
        .collect();
    entries.extend(velocity_entries);
    entries.push(("epoch".to_string(), Tensor::scalar(epoch as f64)));
    write_tensors(&entries, path)
}

/// Restores a checkpoint into an existing model and optimizer; shapes must
/// match. Returns the stored epoch counter.
pub fn load_checkpoint(
    model: &mut SefModel,
    optimizer: &mut SgdOptimizer,
    path: &Path,
) -> Result<usize> {
    let entries = read_tensors(path)?;
    let map: BTreeMap<String, Tensor> = entries.into_iter().collect();
    for (name, tensor) in model.named_parameters_mut() {
        let stored = map
            .get(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor '{name}'")))?;
        if stored.shape() != tensor.shape() {
            return Err(Error::Config(format!(
                "checkpoint tensor '{name}' has shape {:?}, model expects {:?}",
                stored.shape(),
                tensor.shape()
            )));
        }
        tensor.data_mut().copy_from_slice(stored.data());
        if let Some(v) = map.get(&format!("velocity.{name}")) {
            optimizer.set_velocity(name, v.data().to_vec());
        }
    }
    let epoch = map
        .get("epoch")
        .ok_or_else(|| Error::Config("checkpoint is missing 'epoch'".into()))?
        .item()? as usize;
    Ok(epoch)
}
