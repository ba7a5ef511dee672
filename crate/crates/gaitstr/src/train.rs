//! Objectives, batch sampling and the optimization loop.
//!
//! The loss is `lambda_triplet * L_triplet + lambda_cls * L_cls`: a
//! part-wise batch-all triplet loss over the recognition feature rows plus
//! softmax cross-entropy over training identities. Batches hold `P`
//! identities with `K` sequences each, cut to a fixed frame count and
//! optionally jitter-corrupted as augmentation. Everything is a pure
//! function of `(seed, iteration)`, so runs reproduce bit-for-bit and a
//! resumed checkpoint continues exactly where the original run would have
//! gone.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::nn::params::Session;
use crate::nn::{Arr, Tape};
use crate::refine::{GaitStrModel, ModelConfig};
use crate::seed;
use crate::skeleton::{
    inject_jitter, select_indices, GaitSample, JointSequence, SelectMode, SilhouetteSequence,
};

/// Optimizer selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_triplet: f64,
    pub lambda_cls: f64,
    pub margin: f64,
    /// Identities per batch.
    pub batch_p: usize,
    /// Sequences per identity per batch.
    pub batch_k: usize,
    /// Frames per sample after cutting.
    pub frames: usize,
    pub learning_rate: f64,
    pub decay_steps: Vec<u64>,
    pub decay_factor: f64,
    pub iterations: u64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Training-time skeleton corruption; 0 disables.
    pub jitter_rate: f64,
    pub jitter_magnitude: f64,
    /// Learning-rate multiplier for the correction decoders and adapters.
    /// Values below 1 keep the zero-initialized refinement near the
    /// identity map while the encoders converge, so the residual stays a
    /// correction instead of drifting into an arbitrary re-encoding.
    #[serde(default = "default_refinement_lr_scale")]
    pub refinement_lr_scale: f64,
    /// Iteration at which refinement parameters start updating. Until
    /// then the zero-initialized decoders hold the exact identity map, so
    /// the correction trains against already-converged encoders and its
    /// gradient is dominated by suppressing the per-iteration jitter
    /// augmentation rather than by re-encoding identity.
    #[serde(default)]
    pub refinement_start: u64,
    /// Decoupled weight decay on refinement parameters. Anchors the
    /// correction at the identity map so residuals stay sparse instead of
    /// re-encoding whole poses.
    #[serde(default)]
    pub refinement_weight_decay: f64,
    pub log_interval: u64,
}

fn default_refinement_lr_scale() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_triplet: 1.0,
            lambda_cls: 1.0,
            margin: 0.2,
            batch_p: 4,
            batch_k: 4,
            frames: 30,
            learning_rate: 3e-3,
            decay_steps: vec![],
            decay_factor: 0.1,
            iterations: 500,
            seed: 0,
            optimizer: OptimizerKind::default(),
            jitter_rate: 0.0,
            jitter_magnitude: 0.0,
            refinement_lr_scale: 1.0,
            refinement_start: 0,
            refinement_weight_decay: 0.0,
            log_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_triplet < 0.0 || self.lambda_cls < 0.0 {
            return Err(GaitError::Config("loss weights must be >= 0".into()));
        }
        if self.batch_p < 2 || self.batch_k < 2 {
            return Err(GaitError::Config(
                "triplet batches need P >= 2 identities and K >= 2 sequences".into(),
            ));
        }
        if self.frames == 0 {
            return Err(GaitError::Config("frames must be >= 1".into()));
        }
        if let Some(&s) = self.decay_steps.iter().find(|&&s| s >= self.iterations) {
            return Err(GaitError::Config(format!(
                "decay step {s} is not below the iteration budget {}",
                self.iterations
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(GaitError::Config("learning rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn rate_at(&self, iteration: u64) -> f64 {
        let decays = self.decay_steps.iter().filter(|&&s| s <= iteration).count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

/// Samples grouped by identity with a contiguous class index per identity.
pub struct TrainDataset {
    pub samples: Vec<GaitSample>,
    pub by_identity: BTreeMap<u32, Vec<usize>>,
    pub class_of_identity: BTreeMap<u32, usize>,
}

impl TrainDataset {
    pub fn from_samples(samples: Vec<GaitSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(GaitError::Config("training dataset is empty".into()));
        }
        let mut by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_identity.entry(s.identity).or_default().push(i);
        }
        let class_of_identity = by_identity
            .keys()
            .enumerate()
            .map(|(c, &id)| (id, c))
            .collect();
        Ok(Self {
            samples,
            by_identity,
            class_of_identity,
        })
    }

    pub fn num_identities(&self) -> usize {
        self.by_identity.len()
    }
}

/// Deterministic identity-balanced batch: `P` identities, `K` sequences
/// each, as indices into the dataset.
pub fn sample_batch(
    data: &TrainDataset,
    p: usize,
    k: usize,
    seed_value: u64,
    iteration: u64,
) -> Result<Vec<usize>> {
    if data.num_identities() < p {
        return Err(GaitError::Config(format!(
            "dataset has {} identities, batch needs {p}",
            data.num_identities()
        )));
    }
    if let Some((id, seqs)) = data.by_identity.iter().find(|(_, v)| v.len() < k) {
        return Err(GaitError::Config(format!(
            "identity {id} has {} sequences, batch needs {k}",
            seqs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(
        seed_value,
        &[seed::label("batch"), iteration],
    ));
    let mut ids: Vec<u32> = data.by_identity.keys().copied().collect();
    ids.shuffle(&mut rng);
    ids.truncate(p);
    let mut batch = Vec::with_capacity(p * k);
    for id in ids {
        let mut seqs = data.by_identity[&id].clone();
        seqs.shuffle(&mut rng);
        batch.extend(seqs.into_iter().take(k));
    }
    Ok(batch)
}

/// Cut a sample to `frames` frames (center crop when long enough, cyclic
/// repetition otherwise) and optionally corrupt the joints.
pub fn prepare_sample(
    sample: &GaitSample,
    frames: usize,
    jitter_rate: f64,
    jitter_magnitude: f64,
    jitter_seed: u64,
) -> Result<GaitSample> {
    let t = sample.joints.frames();
    let mode = if t >= frames {
        SelectMode::Center
    } else {
        SelectMode::Repeat
    };
    let idx = select_indices(t, frames, mode)?;
    let k = sample.joints.num_joints();
    let mut joints = ndarray::Array3::zeros((frames, k, 2));
    let mut sil = ndarray::Array3::zeros((frames, 64, 44));
    for (out_f, &src) in idx.iter().enumerate() {
        joints
            .index_axis_mut(Axis(0), out_f)
            .assign(&sample.joints.data.index_axis(Axis(0), src));
        sil.index_axis_mut(Axis(0), out_f)
            .assign(&sample.silhouettes.data.index_axis(Axis(0), src));
    }
    let mut joints = JointSequence::new(joints, sample.joints.topology.clone())?;
    if jitter_rate > 0.0 {
        let (corrupted, _) = inject_jitter(&joints, jitter_rate, jitter_magnitude, jitter_seed)?;
        joints = corrupted;
    }
    Ok(GaitSample {
        identity: sample.identity,
        view: sample.view.clone(),
        condition: sample.condition.clone(),
        silhouettes: SilhouetteSequence::new(sil)?,
        joints,
    })
}

/// Part-wise batch-all triplet loss over `[B, rows, C]` features.
pub fn triplet_loss(features: &Arr, labels: &[u32], margin: f64) -> Result<f64> {
    validate_triplet_batch(labels)?;
    let mut tape = Tape::new();
    let f = tape.leaf(features.clone());
    let l = tape.batch_all_triplet(f, Arc::new(labels.to_vec()), margin);
    Ok(tape.scalar(l))
}

fn validate_triplet_batch(labels: &[u32]) -> Result<()> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if counts.len() < 2 || !counts.values().any(|&c| c >= 2) {
        return Err(GaitError::InvalidBatch(format!(
            "triplet loss needs >= 2 identities and one with >= 2 samples, got {counts:?}"
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy of `[B, n]` logits.
pub fn classification_loss(logits: &Arr, labels: &[usize]) -> Result<f64> {
    let n = logits.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(GaitError::InvalidInput(format!(
            "label {bad} out of range for {n} classes"
        )));
    }
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let l = tape.softmax_cross_entropy(z, Arc::new(labels.to_vec()));
    Ok(tape.scalar(l))
}

/// Weighted sum of the two objectives.
pub fn combined_loss(
    features: &Arr,
    logits: &Arr,
    identity_labels: &[u32],
    class_labels: &[usize],
    lambda_triplet: f64,
    lambda_cls: f64,
    margin: f64,
) -> Result<f64> {
    Ok(lambda_triplet * triplet_loss(features, identity_labels, margin)?
        + lambda_cls * classification_loss(logits, class_labels)?)
}

/// First-moment (and second, for the adaptive variant) accumulators.
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step: u64,
    m: Vec<Arr>,
    v: Vec<Arr>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, model: &GaitStrModel) -> Self {
        let zeros: Vec<Arr> = model
            .params
            .ids()
            .map(|id| Arr::zeros(model.params.get(id).raw_dim()))
            .collect();
        Self {
            kind,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update from summed batch gradients; `scales` multiplies
    /// the step per parameter.
    pub fn apply(&mut self, model: &mut GaitStrModel, grads: &[Option<Arr>], lr: f64, scales: &[f64]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for (i, g) in grads.iter().enumerate() {
                    let Some(g) = g else { continue };
                    let rate = lr * scales[i];
                    let m = &mut self.m[i];
                    m.zip_mut_with(g, |m, &g| *m = momentum * *m + g);
                    let p = model.params.get_mut(crate::nn::params::ParamId(i));
                    p.zip_mut_with(m, |p, &m| *p -= rate * m);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (i, g) in grads.iter().enumerate() {
                    let Some(g) = g else { continue };
                    let rate = lr * scales[i];
                    let m = &mut self.m[i];
                    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    let v = &mut self.v[i];
                    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    let p = model.params.get_mut(crate::nn::params::ParamId(i));
                    ndarray::Zip::from(p)
                        .and(&*m)
                        .and(&*v)
                        .for_each(|p, &m, &v| {
                            *p -= rate * (m / bc1) / ((v / bc2).sqrt() + eps);
                        });
                }
            }
        }
    }

    fn named_tensors(&self, model: &GaitStrModel) -> Vec<(String, Arr)> {
        let mut out = Vec::new();
        for (i, m) in self.m.iter().enumerate() {
            let name = model.params.name(crate::nn::params::ParamId(i));
            out.push((format!("opt.m.{name}"), m.clone()));
        }
        if matches!(self.kind, OptimizerKind::Adam { .. }) {
            for (i, v) in self.v.iter().enumerate() {
                let name = model.params.name(crate::nn::params::ParamId(i));
                out.push((format!("opt.v.{name}"), v.clone()));
            }
        }
        out
    }
}

/// One metrics row per logging interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub loss_triplet: f64,
    pub loss_cls: f64,
    pub loss_total: f64,
    pub train_rank1: f64,
}

/// Accumulated training metrics; serializes to CSV.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    pub rows: Vec<LogRow>,
    /// Per-iteration total loss, for trend checks.
    pub per_iteration_loss: Vec<f64>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss_triplet,loss_cls,loss_total,train_rank1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.12},{:.12},{:.12},{:.6}\n",
                r.iteration, r.loss_triplet, r.loss_cls, r.loss_total, r.train_rank1
            ));
        }
        out
    }
}

/// Per-iteration loss values.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub triplet: f64,
    pub cls: f64,
    pub total: f64,
}

/// Model plus optimizer state advancing through the iteration budget.
pub struct Trainer {
    pub model: GaitStrModel,
    pub optimizer: Optimizer,
    pub iteration: u64,
    pub train_config: TrainConfig,
    refinement_ids: Vec<crate::nn::params::ParamId>,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, train_config: TrainConfig) -> Result<Self> {
        train_config.validate()?;
        let model = GaitStrModel::new(model_config, train_config.seed)?;
        let optimizer = Optimizer::new(train_config.optimizer, &model);
        let refinement_ids = model.refinement_param_ids();
        Ok(Self {
            model,
            optimizer,
            iteration: 0,
            train_config,
            refinement_ids,
        })
    }

    /// Replace the training schedule, e.g. to extend a resumed run.
    pub fn set_train_config(&mut self, cfg: TrainConfig) -> Result<()> {
        cfg.validate()?;
        self.train_config = cfg;
        Ok(())
    }

    /// Run one optimization step; returns the batch losses.
    pub fn step(&mut self, data: &TrainDataset) -> Result<StepStats> {
        let cfg = &self.train_config;
        let batch_idx = sample_batch(data, cfg.batch_p, cfg.batch_k, cfg.seed, self.iteration)?;
        let batch: Vec<GaitSample> = batch_idx
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                prepare_sample(
                    &data.samples[i],
                    cfg.frames,
                    cfg.jitter_rate,
                    cfg.jitter_magnitude,
                    seed::mix(cfg.seed, &[seed::label("aug"), self.iteration, slot as u64]),
                )
            })
            .collect::<Result<_>>()?;

        let identity_labels: Vec<u32> = batch.iter().map(|s| s.identity).collect();
        let class_labels: Vec<usize> = batch
            .iter()
            .map(|s| data.class_of_identity[&s.identity])
            .collect();

        let eval = evaluate_batch(
            &self.model,
            &batch,
            &identity_labels,
            &class_labels,
            cfg.lambda_triplet,
            cfg.lambda_cls,
            cfg.margin,
            GradMode::Params,
        )?;
        let stats = eval.stats;
        if !stats.total.is_finite() {
            return Err(GaitError::Diverged {
                iteration: self.iteration,
                msg: format!(
                    "triplet={}, cls={}; dumping state is limited to loss components",
                    stats.triplet, stats.cls
                ),
            });
        }
        let accum = eval.param_grads.expect("gradients requested");

        let lr = cfg.rate_at(self.iteration);
        let mut scales = vec![1.0; self.model.params.len()];
        let refinement_scale = if self.iteration < cfg.refinement_start {
            0.0
        } else {
            cfg.refinement_lr_scale
        };
        for id in &self.refinement_ids {
            scales[id.0] = refinement_scale;
        }
        let decay = cfg.refinement_weight_decay;
        self.optimizer.apply(&mut self.model, &accum, lr, &scales);
        if decay > 0.0 && self.iteration >= cfg.refinement_start {
            let shrink = 1.0 - decay;
            for id in &self.refinement_ids {
                self.model.params.get_mut(*id).mapv_inplace(|p| p * shrink);
            }
        }
        self.iteration += 1;
        Ok(stats)
    }

    /// Rank-1 self-retrieval over the training set: each sample queries all
    /// others with current features.
    pub fn train_rank1(&self, data: &TrainDataset) -> Result<f64> {
        let cfg = &self.train_config;
        let feats = embed_features(&self.model, &data.samples, cfg.frames)?;
        let n = data.samples.len();
        let mut hits = 0usize;
        for i in 0..n {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = feats
                    .row(i)
                    .iter()
                    .zip(feats.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                if d < best.0 {
                    best = (d, j);
                }
            }
            if data.samples[best.1].identity == data.samples[i].identity {
                hits += 1;
            }
        }
        Ok(hits as f64 / n as f64)
    }

    /// Run until the iteration budget, appending to the log.
    pub fn run(&mut self, data: &TrainDataset, log: &mut MetricsLog) -> Result<()> {
        while self.iteration < self.train_config.iterations {
            let stats = self.step(data)?;
            log.per_iteration_loss.push(stats.total);
            let i = self.iteration;
            if i % self.train_config.log_interval == 0 || i == self.train_config.iterations {
                let rank1 = self.train_rank1(data)?;
                log.rows.push(LogRow {
                    iteration: i,
                    loss_triplet: stats.triplet,
                    loss_cls: stats.cls,
                    loss_total: stats.total,
                    train_rank1: rank1,
                });
            }
        }
        Ok(())
    }

    /// Serialize model, optimizer and position into one checkpoint file.
    pub fn save_checkpoint(&self, path: &Path, class_map: &BTreeMap<u32, usize>) -> Result<()> {
        let meta = serde_json::json!({
            "format": 1,
            "model_config": self.model.config,
            "train_config": self.train_config,
            "iteration": self.iteration,
            "optimizer_step": self.optimizer.step,
            "classes": class_map,
        });
        let mut tensors = self.model.params.named_tensors();
        tensors.extend(self.optimizer.named_tensors(&self.model));
        crate::nn::params::write_checkpoint(path, &meta, &tensors)
    }

    /// Rebuild a trainer from a checkpoint.
    pub fn load_checkpoint(path: &Path) -> Result<(Self, BTreeMap<u32, usize>)> {
        let (meta, tensors) = crate::nn::params::read_checkpoint(path)?;
        let model_config: ModelConfig = serde_json::from_value(meta["model_config"].clone())?;
        let train_config: TrainConfig = serde_json::from_value(meta["train_config"].clone())?;
        let iteration = meta["iteration"].as_u64().ok_or_else(|| {
            GaitError::Format("checkpoint missing iteration".into())
        })?;
        let classes: BTreeMap<u32, usize> = serde_json::from_value(meta["classes"].clone())?;

        let mut trainer = Trainer::new(model_config, train_config)?;
        trainer.iteration = iteration;
        trainer.optimizer.step = meta["optimizer_step"].as_u64().unwrap_or(0);

        let mut params = Vec::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in tensors {
            if let Some(rest) = name.strip_prefix("opt.m.") {
                m.insert(rest.to_string(), t);
            } else if let Some(rest) = name.strip_prefix("opt.v.") {
                v.insert(rest.to_string(), t);
            } else {
                params.push((name, t));
            }
        }
        trainer.model.params.load_named(params)?;
        for id in trainer.model.params.ids() {
            let name = trainer.model.params.name(id).to_string();
            if let Some(t) = m.remove(&name) {
                trainer.optimizer.m[id.0] = t;
            }
            if let Some(t) = v.remove(&name) {
                trainer.optimizer.v[id.0] = t;
            }
        }
        Ok((trainer, classes))
    }
}

/// Gradient demand for [`evaluate_batch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Loss values only.
    None,
    /// Loss values plus parameter gradients.
    Params,
    /// Parameter gradients plus per-sample input gradients.
    ParamsAndInputs,
}

/// Result of one batch evaluation.
pub struct BatchEvaluation {
    pub stats: StepStats,
    /// Summed parameter gradients by parameter id, in sample order.
    pub param_grads: Option<Vec<Option<Arr>>>,
    /// Per-sample `(silhouette, joints)` input gradients.
    pub input_grads: Option<Vec<(Option<Arr>, Option<Arr>)>>,
}

/// Forward a batch and compute the combined objective, optionally with
/// gradients. Samples must already be cut to a common frame count.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_batch(
    model: &GaitStrModel,
    batch: &[GaitSample],
    identity_labels: &[u32],
    class_labels: &[usize],
    lambda_triplet: f64,
    lambda_cls: f64,
    margin: f64,
    mode: GradMode,
) -> Result<BatchEvaluation> {
    validate_triplet_batch(identity_labels)?;
    if let (Some(&bad), n) = (
        class_labels.iter().find(|&&l| l >= model.config.num_classes),
        model.config.num_classes,
    ) {
        return Err(GaitError::InvalidInput(format!(
            "class label {bad} out of range for {n} classes"
        )));
    }

    // Per-sample forward tapes, in parallel.
    let mut evals: Vec<(Session, crate::refine::SampleForward)> = batch
        .par_iter()
        .map(|s| {
            let mut sess = Session::new(&model.params);
            let fwd = model.forward(&mut sess, s)?;
            Ok((sess, fwd))
        })
        .collect::<Result<_>>()?;

    // Head tape: stack features and logits, compute the combined loss.
    let mut head = Tape::new();
    let feature_leaves: Vec<_> = evals
        .iter()
        .map(|(sess, fwd)| head.leaf(sess.tape.value(fwd.feature).clone()))
        .collect();
    let logit_leaves: Vec<_> = evals
        .iter()
        .map(|(sess, fwd)| head.leaf(sess.tape.value(fwd.logits).clone()))
        .collect();
    let stacked = head.stack0(&feature_leaves);
    let tri = head.batch_all_triplet(stacked, Arc::new(identity_labels.to_vec()), margin);
    let logits = head.concat_rows(&logit_leaves);
    let ce = head.softmax_cross_entropy(logits, Arc::new(class_labels.to_vec()));
    let tri_w = head.scale(tri, lambda_triplet);
    let ce_w = head.scale(ce, lambda_cls);
    let total = head.add(tri_w, ce_w);

    let stats = StepStats {
        triplet: head.scalar(tri),
        cls: head.scalar(ce),
        total: head.scalar(total),
    };
    if mode == GradMode::None {
        return Ok(BatchEvaluation {
            stats,
            param_grads: None,
            input_grads: None,
        });
    }

    let mut head_grads = head.backward_scalar(total);
    let seeds: Vec<(Arr, Arr)> = feature_leaves
        .iter()
        .zip(logit_leaves.iter())
        .map(|(&f, &l)| {
            let gf = head_grads
                .take(f)
                .unwrap_or_else(|| Arr::zeros(head.value(f).raw_dim()));
            let gl = head_grads
                .take(l)
                .unwrap_or_else(|| Arr::zeros(head.value(l).raw_dim()));
            (gf, gl)
        })
        .collect();

    let want_inputs = mode == GradMode::ParamsAndInputs;
    type SampleGrads = (
        Vec<(crate::nn::params::ParamId, Arr)>,
        Option<(Option<Arr>, Option<Arr>)>,
    );
    let per_sample: Vec<SampleGrads> = evals
        .par_iter_mut()
        .zip(seeds.into_par_iter())
        .map(|((sess, fwd), (gf, gl))| {
            let mut grads = sess
                .tape
                .backward(vec![(fwd.feature, gf), (fwd.logits, gl)]);
            let inputs = want_inputs.then(|| {
                let sil = grads.take(fwd.silhouette_input);
                let joints = fwd.joint_input.and_then(|v| grads.take(v));
                (sil, joints)
            });
            (sess.param_grads(&mut grads), inputs)
        })
        .collect();

    // Accumulate in sample order so the update is thread-count independent.
    let mut accum: Vec<Option<Arr>> = (0..model.params.len()).map(|_| None).collect();
    let mut input_grads = want_inputs.then(Vec::new);
    for (sample_grads, inputs) in per_sample {
        for (id, g) in sample_grads {
            match &mut accum[id.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }
        if let (Some(out), Some(i)) = (&mut input_grads, inputs) {
            out.push(i);
        }
    }
    Ok(BatchEvaluation {
        stats,
        param_grads: Some(accum),
        input_grads,
    })
}

/// Flattened recognition features of many samples, row per sample.
///
/// Samples are cut to `frames` deterministically (no jitter) before
/// embedding; rows are in input order.
pub fn embed_features(
    model: &GaitStrModel,
    samples: &[GaitSample],
    frames: usize,
) -> Result<Array2<f64>> {
    let prepared: Vec<GaitSample> = samples
        .iter()
        .map(|s| prepare_sample(s, frames, 0.0, 0.0, 0))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = prepared
        .par_iter()
        .map(|s| {
            let bundle = model.embed(s)?;
            Ok(bundle.feature.iter().copied().collect())
        })
        .collect::<Result<_>>()?;
    let d = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), d));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::Array1::from_vec(r));
    }
    Ok(out)
}
