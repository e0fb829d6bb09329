//! Adam training loop with the step-decay schedule, checkpoints that resume
//! bit-exactly, evaluation and the ablation grid.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tritrans_tensor::container::Checkpoint;
use tritrans_tensor::{Graph, Scalar, Tensor};

use crate::config::TrainConfig;
use crate::data::{self, Sample};
use crate::error::{Error, Result};
use crate::loss;
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::TriTransNet;
use crate::params::{Ctx, ParamStore};

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { beta1, beta2, eps, step: 0, m: zeros(), v: zeros() }
    }

    /// One update; rejects non-finite gradients before touching any state.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (name, g) in params.names().iter().zip(grads) {
            if !g.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for parameter `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i].as_f64();
                let mi = b1 * md[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * vd[i].as_f64() + (1.0 - b2) * gi * gi;
                md[i] = T::from_f64(mi);
                vd[i] = T::from_f64(vi);
                let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                pd[i] = T::from_f64(pd[i].as_f64() - step);
            }
        }
        Ok(())
    }
}

/// One line of the loss log: `step epoch loss lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {:.9e} {:e}", self.step, self.epoch, self.loss, self.lr)
    }
}

const STATE_MARKER: &str = "[state]";

/// Loss of one batch under the model, as a graph node plus its value.
pub fn batch_loss<T: Scalar>(
    model: &TriTransNet,
    cfg: &TrainConfig,
    g: &Graph<T>,
    cx: &Ctx<T>,
    batch: &[&Sample],
) -> Result<tritrans_tensor::Var> {
    let (rgb, depth, gt) = data::stack::<T>(batch)?;
    let out = model.forward(cx, g.constant(rgb), g.constant(depth))?;
    loss::total_loss(g, &out, g.constant(gt), &cfg.loss)
}

/// Model, parameters and optimizer state of one training run.
pub struct Trainer<T: Scalar> {
    pub config: TrainConfig,
    pub model: TriTransNet,
    pub params: ParamStore<T>,
    pub adam: Adam<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = TriTransNet::new(&config.model)?;
        let params = model.init_params(config.seed);
        let adam = Adam::new(&params, config.beta1, config.beta2, config.eps);
        Ok(Self { config, model, params, adam })
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.config.batch)
    }

    /// Total steps the configuration asks for on `samples` training samples.
    pub fn planned_steps(&self, samples: usize) -> u64 {
        let total = (self.config.epochs * self.steps_per_epoch(samples)) as u64;
        self.config.max_steps.map_or(total, |m| total.min(m as u64))
    }

    /// Sample order of `epoch` and the augmented batch at position `index` within it.
    fn batch(&self, samples: &[Sample], epoch: usize, index: usize) -> Vec<Sample> {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(data::derive_seed(self.config.seed, &[epoch as u64])));
        let b = self.config.batch;
        order[index * b..((index + 1) * b).min(order.len())]
            .iter()
            .map(|&i| {
                if self.config.augment {
                    let seed = data::derive_seed(self.config.seed, &[epoch as u64, i as u64, 1]);
                    data::augment(&samples[i], &mut ChaCha8Rng::seed_from_u64(seed))
                } else {
                    samples[i].clone()
                }
            })
            .collect()
    }

    /// Runs one optimizer step on the next batch and returns its log entry.
    pub fn step(&mut self, samples: &[Sample]) -> Result<LogEntry> {
        if samples.is_empty() {
            return Err(Error::Invalid("training set is empty".into()));
        }
        let per_epoch = self.steps_per_epoch(samples.len());
        let step = self.adam.step as usize;
        let (epoch, index) = (step / per_epoch, step % per_epoch);
        let lr = self.config.lr_at_epoch(epoch);
        let batch = self.batch(samples, epoch, index);
        let refs: Vec<&Sample> = batch.iter().collect();

        let g = Graph::new();
        let cx = Ctx::trainable(&g, &self.params);
        let l = batch_loss(&self.model, &self.config, &g, &cx, &refs)?;
        let value = g.value(l).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss is {value} at step {}", step + 1)));
        }
        g.backward(l)?;
        let grads = cx.grads(&self.params);
        self.adam.update(&mut self.params, &grads, lr)?;
        Ok(LogEntry { step: self.adam.step, epoch, loss: value, lr })
    }

    /// Trains until the planned step count, calling `log` after each step.
    /// Checkpoints go to `checkpoint` every `checkpoint_every` steps and at the end.
    /// On a numerical failure the last written checkpoint is left in place.
    pub fn run(&mut self, samples: &[Sample], checkpoint: Option<&Path>, mut log: impl FnMut(&LogEntry)) -> Result<Vec<LogEntry>> {
        let total = self.planned_steps(samples.len());
        let mut entries = Vec::new();
        while self.adam.step < total {
            let entry = self.step(samples).map_err(|e| match (e, checkpoint) {
                (Error::Numerical(msg), Some(p)) => {
                    Error::Numerical(format!("{msg}; last good checkpoint kept at {}", p.display()))
                }
                (e, _) => e,
            })?;
            log(&entry);
            entries.push(entry);
            let every = self.config.checkpoint_every as u64;
            if let Some(p) = checkpoint {
                if every > 0 && entry.step % every == 0 && entry.step < total {
                    self.save(p)?;
                }
            }
        }
        if let Some(p) = checkpoint {
            self.save(p)?;
        }
        Ok(entries)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint { meta: format!("{}{STATE_MARKER}\nstep = {}\n", self.config, self.adam.step), sections: Vec::new() };
        for (name, p) in self.params.names().iter().zip(self.params.values()) {
            ck.push(format!("param/{name}"), p);
        }
        for (name, (m, v)) in self.params.names().iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            ck.push(format!("adam.m/{name}"), m);
            ck.push(format!("adam.v/{name}"), v);
        }
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path).map_err(Error::from)
    }

    /// Restores parameters, moments and step count written by [`Trainer::save`].
    pub fn resume(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let (config, step) = split_meta(&ck.meta)?;
        let mut t = Self::new(config)?;
        t.params = params_from(&t.model, &ck)?;
        let names = t.params.names().to_vec();
        let section = |prefix: &str, name: &str| -> Result<Tensor<T>> {
            ck.get(&format!("{prefix}/{name}"))
                .map(|x| x.cast())
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing optimizer section {prefix}/{name}")))
        };
        t.adam.m = names.iter().map(|n| section("adam.m", n)).collect::<Result<_>>()?;
        t.adam.v = names.iter().map(|n| section("adam.v", n)).collect::<Result<_>>()?;
        t.adam.step = step;
        Ok(t)
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        tritrans_tensor::TensorError::Io(io) => Error::io(path, io),
        other => Error::CheckpointMismatch(format!("{}: {other}", path.display())),
    })
}

fn split_meta(meta: &str) -> Result<(TrainConfig, u64)> {
    let (cfg_text, state) = meta.split_once(STATE_MARKER).unwrap_or((meta, ""));
    let config = TrainConfig::from_text(cfg_text)?;
    let mut step = 0;
    for (k, v) in crate::config::parse_kv(state)? {
        if k == "step" {
            step = v.parse().map_err(|_| Error::CheckpointMismatch(format!("bad step `{v}`")))?;
        }
    }
    Ok((config, step))
}

/// Parameters of `model` from a checkpoint's `param/` sections, checked by name and shape.
pub fn params_from<T: Scalar>(model: &TriTransNet, ck: &Checkpoint) -> Result<ParamStore<T>> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for spec in model.registry().specs() {
        let t = ck
            .get(&format!("param/{}", spec.name))
            .ok_or_else(|| Error::CheckpointMismatch(format!("checkpoint lacks parameter `{}`", spec.name)))?;
        if t.shape() != spec.shape.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter `{}`: model expects {:?}, checkpoint has {:?}",
                spec.name,
                spec.shape,
                t.shape()
            )));
        }
        names.push(spec.name.clone());
        values.push(t.cast());
    }
    let extra = ck.sections.iter().filter(|(n, _)| n.starts_with("param/")).count();
    if extra != names.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has {extra} parameters, model expects {}",
            names.len()
        )));
    }
    Ok(ParamStore::from_parts(names, values))
}

/// Configuration and parameters stored in a checkpoint file.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(TrainConfig, TriTransNet, ParamStore<T>)> {
    let ck = load_checkpoint(path)?;
    let (config, _) = split_meta(&ck.meta)?;
    let model = TriTransNet::new(&config.model)?;
    let params = params_from(&model, &ck)?;
    Ok((config, model, params))
}

/// Final saliency maps `[H,W]` for each sample, no augmentation.
pub fn predict_all<T: Scalar>(model: &TriTransNet, params: &ParamStore<T>, samples: &[Sample], batch: usize) -> Result<Vec<Tensor<f64>>> {
    let mut maps = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (rgb, depth, _) = data::stack::<T>(&refs)?;
        let out = model.predict(params, &rgb, &depth)?;
        let s = out.shape();
        let hw = s[2] * s[3];
        for b in 0..s[0] {
            let plane = out.data()[b * hw..(b + 1) * hw].iter().map(|v| v.as_f64()).collect();
            maps.push(Tensor::new(vec![s[2], s[3]], plane)?);
        }
    }
    Ok(maps)
}

fn gt_plane(s: &Sample) -> Tensor<f64> {
    let (h, w) = s.size();
    Tensor::new(vec![h, w], s.gt.data().iter().map(|&v| v as f64).collect()).expect("gt extents")
}

/// Scores a set of predictions against the samples' ground truth.
pub fn score(dataset: &str, preds: &[Tensor<f64>], samples: &[Sample]) -> Result<MetricReport> {
    if preds.len() != samples.len() {
        return Err(Error::Invalid(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let mut acc = MetricAccumulator::default();
    for (p, s) in preds.iter().zip(samples) {
        acc.add(p, &gt_plane(s))?;
    }
    acc.finish(dataset)
}

pub fn evaluate<T: Scalar>(model: &TriTransNet, params: &ParamStore<T>, samples: &[Sample], dataset: &str) -> Result<MetricReport> {
    let preds = predict_all(model, params, samples, 4)?;
    score(dataset, &preds, samples)
}

/// Loads a checkpoint and evaluates it on `samples`.
pub fn evaluate_checkpoint(path: &Path, samples: &[Sample], dataset: &str) -> Result<MetricReport> {
    let (_, model, params) = load_model::<f32>(path)?;
    evaluate(&model, &params, samples, dataset)
}

// ----- ablation -----

/// Keys an ablation variant may override.
pub const VARIANT_KEYS: &[&str] = &["ttem", "levels", "decoder", "fusion"];

/// A named set of overrides on the base configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

impl Variant {
    /// Parses `key=value[,key=value...]`; `k` is accepted for `levels`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut overrides = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::config(part, "expected key=value in ablation variant"))?;
            let k = match k.trim() {
                "k" => "levels",
                other => other,
            };
            if !VARIANT_KEYS.contains(&k) {
                return Err(Error::config(k, format!("not an ablation key (expected one of {VARIANT_KEYS:?})")));
            }
            overrides.push((k.to_string(), v.trim().to_string()));
        }
        if overrides.is_empty() {
            return Err(Error::config("variant", format!("empty variant `{spec}`")));
        }
        Ok(Self { name: spec.trim().to_string(), overrides })
    }

    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Trains every variant from the same seed and reports test-set metrics in grid order.
pub fn ablate(
    grid: &[Variant],
    base: &TrainConfig,
    train: &[Sample],
    test: &[Sample],
    mut log: impl FnMut(&str, &LogEntry),
) -> Result<Vec<(String, MetricReport)>> {
    let configs: Vec<TrainConfig> = grid.iter().map(|v| v.apply(base)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (variant, cfg) in grid.iter().zip(configs) {
        let mut t = Trainer::<f32>::new(cfg)?;
        t.run(train, None, |e| log(&variant.name, e))?;
        out.push((variant.name.clone(), evaluate(&t.model, &t.params, test, &variant.name)?));
    }
    Ok(out)
}

/// Writes each map as an 8-bit PGM with value `round(255·p)`.
pub fn write_predictions(dir: &Path, names: &[String], maps: &[Tensor<f64>]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    names
        .iter()
        .zip(maps)
        .map(|(name, m)| {
            let path = dir.join(name);
            let s = m.shape();
            let t = m.clone().reshape(&[1, s[0], s[1]])?;
            data::write_map(&path, &t, false)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        ParamStore::from_parts(vec!["w".into()], vec![Tensor::from_f64(&[values.len()], values).unwrap()])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = store(&[1.0, -2.0]);
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        adam.update(&mut p, &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p.values()[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(&[0.0, 0.0]);
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        adam.update(&mut p, &[Tensor::from_f64(&[2], &[3.0, -0.5]).unwrap()], 0.01).unwrap();
        let d = p.values()[0].data();
        assert!((d[0] + 0.01).abs() < 1e-9 && (d[1] - 0.01).abs() < 1e-9, "{d:?}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = store(&[0.0]);
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        let e = adam.update(&mut p, &[Tensor::from_f64(&[1], &[f64::NAN]).unwrap()], 0.01).unwrap_err();
        assert!(e.to_string().contains("`w`"), "{e}");
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn variant_parsing() {
        let v = Variant::parse("ttem=off").unwrap();
        assert_eq!(v.overrides, vec![("ttem".to_string(), "off".to_string())]);
        assert_eq!(Variant::parse("k=2").unwrap().overrides[0].0, "levels");
        assert!(Variant::parse("lr=1").is_err());
        assert!(Variant::parse("depth=on").is_err());
    }

    #[test]
    fn log_line_has_four_fields() {
        let e = LogEntry { step: 3, epoch: 0, loss: 1.25, lr: 1e-3 };
        assert_eq!(e.to_string().split(' ').count(), 4);
    }
}
