//! Alternating D/G training with lazy R1, EMA tracking, checkpoints and a
//! metrics log.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use mlcgan_autodiff::{grad, no_grad, Tensor};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Blob, Checkpoint};
use crate::classifier::Classifier;
use crate::data::{Batch, Dataset, LabelVector, Vocabulary};
use crate::evaluation::{dataset_stats, evaluate_generated, fid, z_batch, FeatureStats};
use crate::losses::{discriminator_loss, generator_loss, r1_penalty};
use crate::nn::Module;
use crate::optim::{ema_update, Adam, AdamConfig, Moments};
use crate::{Discriminator, Error, Generator, LossWeights, ModelConfig, Result, ScaleEmbeddingSet};

pub const CHECKPOINT_KIND: &str = "gan";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Architecture, resolution and ablation flags.
    pub model: ModelConfig,
    pub loss: LossWeights,
    /// Shared by both networks.
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    /// Training length in real images; the step count is rounded up.
    pub total_images: u64,
    pub ema_decay: f64,
    pub w_avg_decay: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the initial and final ones.
    pub checkpoint_interval: u64,
    /// Steps between evaluations; 0 evaluates only at the start and end.
    pub eval_interval: u64,
    /// Generated and real images per evaluation.
    pub eval_samples: usize,
    pub classifier_checkpoint_path: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Let the discriminator loss reach the label encoder.
    pub sle_grad_from_d: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            optimizer: AdamConfig::default(),
            batch_size: 24,
            total_images: 2_400_000,
            ema_decay: 0.999,
            w_avg_decay: 0.995,
            seed: 0,
            checkpoint_interval: 1000,
            eval_interval: 1000,
            eval_samples: 2000,
            classifier_checkpoint_path: None,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            sle_grad_from_d: false,
        }
    }
}

impl TrainingConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid optimizer settings {o:?}")));
        }
        for (name, v) in [("ema_decay", self.ema_decay), ("w_avg_decay", self.w_avg_decay)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Optimizer steps needed to consume `total_images`.
    pub fn total_steps(&self) -> u64 {
        self.total_images.div_ceil(self.batch_size as u64)
    }
}

/// Validated model wiring and the loss weights with the ablation folded in.
pub fn apply_ablation(cfg: &TrainingConfig) -> Result<(ModelConfig, LossWeights)> {
    cfg.validate()?;
    Ok((cfg.model.clone(), cfg.loss.with_ablation(&cfg.model.ablation)))
}

/// Losses and bookkeeping of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    /// Steps completed after this one.
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Unscaled R1 penalty, on R1 steps.
    pub r1: Option<f64>,
    pub bce: Option<f64>,
    pub d_updated: Vec<String>,
    pub g_updated: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub r1: Option<f64>,
    pub bce: Option<f64>,
    pub fid: Option<f64>,
    pub map: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    kind: String,
    config: TrainingConfig,
    vocabulary: Vocabulary,
    step: u64,
    r1_evaluations: u64,
    rng: ChaCha8Rng,
    opt_g_steps: u64,
    opt_d_steps: u64,
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Gradients of `loss` with respect to every tensor in `params`, keyed by
/// tensor id.
fn grads_by_id(loss: &Tensor<f32>, params: &[Tensor<f32>]) -> HashMap<u64, Tensor<f32>> {
    let refs: Vec<&Tensor<f32>> = params.iter().collect();
    params
        .iter()
        .zip(grad(loss, &refs, false))
        .filter_map(|(p, g)| g.map(|g| (p.id(), g)))
        .collect()
}

fn params_of(m: &impl Module<f32>) -> Vec<Tensor<f32>> {
    m.named_params().into_iter().map(|(_, t)| t).collect()
}

pub struct Trainer {
    pub config: TrainingConfig,
    pub weights: LossWeights,
    pub vocab: Vocabulary,
    pub g: Generator<f32>,
    /// Averaged copy used for inference; never touched by an optimizer.
    pub g_ema: Generator<f32>,
    pub d: Discriminator<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub step: u64,
    pub r1_evaluations: u64,
    pub classifier: Option<Classifier<f32>>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainingConfig, vocab: Vocabulary, classifier: Option<Classifier<f32>>) -> Result<Self> {
        let (model, weights) = apply_ablation(&config)?;
        if vocab.len() != model.num_labels {
            return Err(Error::dims("vocabulary size", model.num_labels, vocab.len()));
        }
        if let Some(c) = &classifier {
            if c.config.num_labels != model.num_labels {
                return Err(Error::dims("classifier labels", model.num_labels, c.config.num_labels));
            }
            if c.config.resolution != model.resolution {
                return Err(Error::dims("classifier resolution", model.resolution, c.config.resolution));
            }
        } else if weights.clf > 0.0 {
            return Err(Error::InvalidConfig("lambda_clf > 0 needs a classifier checkpoint".into()));
        }
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let g = Generator::new(&model, &mut init)?;
        let d = Discriminator::new(&model, &mut init)?;
        Ok(Self {
            g_ema: g.clone(),
            g,
            d,
            opt_g: Adam::new(config.optimizer),
            opt_d: Adam::new(config.optimizer),
            step: 0,
            r1_evaluations: 0,
            rng: training_rng(config.seed),
            weights,
            vocab,
            classifier,
            config,
        })
    }

    /// One step on a freshly sampled real batch and mismatched batch.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<StepStats> {
        let real = dataset.sample_batch::<f32, _>(self.config.batch_size, &mut self.rng)?;
        let wrong = match self.weights.wrong > 0.0 {
            true => Some(dataset.sample_mismatched::<f32, _>(&real.label_vectors, &mut self.rng)?.images),
            false => None,
        };
        self.train_step_on(&real, wrong.as_ref())
    }

    /// One discriminator update on (real, fake, wrong) followed by one
    /// generator update on fresh fakes. Every `r1_interval`-th step adds the
    /// R1 penalty scaled by the interval to the discriminator loss.
    pub fn train_step_on(&mut self, real: &Batch<f32>, wrong: Option<&Tensor<f32>>) -> Result<StepStats> {
        let n = real.images.dim(0);
        let w = self.weights;
        let z_dim = self.g.z_dim();

        // discriminator step
        let te = self.g.embed(&real.labels)?;
        let te_d = if self.config.sle_grad_from_d { te.clone() } else { te.detach() };
        let z = z_batch(n, z_dim, &mut self.rng);
        let fake = {
            let te_nograd = te.detach();
            let wl = no_grad(|| self.g.map(&z, &te_nograd))?;
            let noise = match self.config.model.use_noise {
                true => Some(&mut self.rng as &mut dyn RngCore),
                false => None,
            };
            no_grad(|| self.g.synthesize(&wl, &te_nograd, noise))?
        };
        let real_s = self.d.forward(&real.images, &te_d)?;
        let fake_s = self.d.forward(&fake, &te_d)?;
        let wrong_s = match wrong {
            Some(y) if w.wrong > 0.0 => Some(self.d.forward_conditional(y, &te_d)?),
            _ => None,
        };
        let mut d_loss = discriminator_loss(&real_s, &fake_s, wrong_s.as_ref(), &w);
        let mut r1 = None;
        if w.is_r1_step(self.step) {
            let te_r1 = te.detach();
            let penalty = r1_penalty(|y| self.d.forward(y, &te_r1), &real.images, w.r1)?;
            d_loss = d_loss.add(&penalty.mul_scalar(w.r1_interval as f64));
            r1 = Some(penalty.item());
            self.r1_evaluations += 1;
        }
        let mut d_params = params_of(&self.d);
        let sle_params = if self.config.sle_grad_from_d { params_of(&self.g.sle) } else { Vec::new() };
        d_params.extend(sle_params.iter().cloned());
        let mut d_grads = grads_by_id(&d_loss, &d_params);
        let sle_from_d: HashMap<u64, Tensor<f32>> =
            sle_params.iter().filter_map(|p| d_grads.remove(&p.id()).map(|g| (p.id(), g))).collect();
        let d_updated = self.opt_d.step_with(&mut self.d, &mut |p| d_grads.get(&p.id()).cloned());

        // generator step
        let te = self.g.embed(&real.labels)?;
        let te_d: ScaleEmbeddingSet<f32> = if self.config.sle_grad_from_d { te.clone() } else { te.detach() };
        let z = z_batch(n, z_dim, &mut self.rng);
        let wl = self.g.map(&z, &te)?;
        let noise = match self.config.model.use_noise {
            true => Some(&mut self.rng as &mut dyn RngCore),
            false => None,
        };
        let fake = self.g.synthesize(&wl, &te, noise)?;
        let fake_s = self.d.forward(&fake, &te_d)?;
        let logits = match (&self.classifier, w.clf > 0.0) {
            (Some(c), true) => Some(c.forward(&fake)?),
            _ => None,
        };
        let g_loss = generator_loss(&fake_s, &real.labels, logits.as_ref(), &w)?;
        let mut g_grads = grads_by_id(&g_loss.total, &params_of(&self.g));
        for (id, g) in sle_from_d {
            let sum = match g_grads.remove(&id) {
                Some(own) => own.add(&g),
                None => g,
            };
            g_grads.insert(id, sum);
        }
        let g_updated = self.opt_g.step_with(&mut self.g, &mut |p| g_grads.get(&p.id()).cloned());

        self.g.update_w_avg(&wl, self.config.w_avg_decay);
        ema_update(&mut self.g_ema, &self.g, self.config.ema_decay);
        self.g_ema.w_avg = self.g.w_avg.clone();

        let stats = StepStats {
            step: self.step + 1,
            d_loss: d_loss.item(),
            g_loss: g_loss.total.item(),
            r1,
            bce: g_loss.bce.as_ref().map(|b| b.item()),
            d_updated,
            g_updated,
        };
        let finite = stats.d_loss.is_finite()
            && stats.g_loss.is_finite()
            && stats.r1.is_none_or(f64::is_finite)
            && stats.bce.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                components: format!(
                    "d_loss={} g_loss={} r1={:?} bce={:?}",
                    stats.d_loss, stats.g_loss, stats.r1, stats.bce
                ),
            });
        }
        self.step += 1;
        Ok(stats)
    }

    pub fn images_seen(&self) -> u64 {
        self.step * self.config.batch_size as u64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = TrainHeader {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            vocabulary: self.vocab.clone(),
            step: self.step,
            r1_evaluations: self.r1_evaluations,
            rng: self.rng.clone(),
            opt_g_steps: self.opt_g.t,
            opt_d_steps: self.opt_d.t,
        };
        let mut ck = Checkpoint::new(&header);
        for (prefix, g) in [("g", &self.g), ("g_ema", &self.g_ema)] {
            ck.put_module(prefix, g);
            g.visit_buffers(prefix, &mut |name, t| ck.put(name, t));
        }
        ck.put_module("d", &self.d);
        for (prefix, opt) in [("opt_g", &self.opt_g), ("opt_d", &self.opt_d)] {
            for (name, m) in &opt.moments {
                ck.blobs.insert(format!("{prefix}.m.{name}"), Blob::from_values(&m.m, &[m.m.len()]));
                ck.blobs.insert(format!("{prefix}.v.{name}"), Blob::from_values(&m.v, &[m.v.len()]));
            }
        }
        ck
    }

    /// Restore a trainer. The classifier is not part of the checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint, classifier: Option<Classifier<f32>>) -> Result<Self> {
        let header: TrainHeader = ck.header_as()?;
        if header.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a {CHECKPOINT_KIND:?} checkpoint, found {:?}", header.kind)));
        }
        let mut t = Self::new(header.config, header.vocabulary, classifier)?;
        for (prefix, g) in [("g", &mut t.g), ("g_ema", &mut t.g_ema)] {
            ck.load_module(prefix, g)?;
            let mut err = None;
            g.visit_buffers_mut(prefix, &mut |name, buf| match ck.get::<f32>(name) {
                Ok(v) if v.shape() == buf.shape() => *buf = v,
                Ok(_) => err = Some(Error::Checkpoint(format!("buffer {name:?} has the wrong shape"))),
                Err(e) => err = Some(e),
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        ck.load_module("d", &mut t.d)?;
        for (prefix, opt, steps) in [("opt_g", &mut t.opt_g, header.opt_g_steps), ("opt_d", &mut t.opt_d, header.opt_d_steps)] {
            opt.t = steps;
            let m_prefix = format!("{prefix}.m.");
            for (key, blob) in ck.blobs.range(m_prefix.clone()..) {
                let Some(name) = key.strip_prefix(&m_prefix) else { break };
                let v = ck
                    .blobs
                    .get(&format!("{prefix}.v.{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {name:?}")))?;
                opt.moments.insert(name.to_string(), Moments { m: blob.values(), v: v.values() });
            }
        }
        t.step = header.step;
        t.r1_evaluations = header.r1_evaluations;
        t.rng = header.rng;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>, classifier: Option<Classifier<f32>>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, classifier)
    }
}

/// Snapshot metrics of the EMA generator: FID between classifier features of
/// real and generated images, and mAP of the classifier on the generated ones.
pub struct Evaluator {
    pub classifier: Classifier<f32>,
    pub real_stats: FeatureStats,
    pub label_pool: Vec<LabelVector>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub fid: f64,
    pub map: f64,
}

impl Evaluator {
    pub fn new(classifier: Classifier<f32>, dataset: &Dataset, samples: usize, seed: u64) -> Result<Self> {
        let real_stats = dataset_stats(dataset, &classifier, samples)?;
        Ok(Self { classifier, real_stats, label_pool: dataset.label_vectors(), samples, seed })
    }

    /// Uses its own rng stream keyed by `step`, so evaluating never perturbs training.
    pub fn evaluate(&self, g: &Generator<f32>, step: u64) -> Result<EvalResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(2);
        let out = evaluate_generated(g, &self.classifier, &self.label_pool, self.samples, 1.0, 32, &mut rng)?;
        Ok(EvalResult { fid: fid(&self.real_stats, &out.stats)?, map: out.map })
    }
}

/// Append-only CSV metrics log.
pub struct MetricsLog {
    writer: csv::Writer<fs::File>,
}

impl MetricsLog {
    /// Opens `path` for appending, writing the header when the file is new.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(Self { writer })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row).map_err(|e| Error::Metric(format!("metrics log: {e}")))?;
        self.writer.flush().map_err(|e| Error::Metric(format!("metrics log: {e}")))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Metric(format!("{}: {e}", path.display())))?;
        r.deserialize().map(|row| row.map_err(|e| Error::Metric(format!("{}: {e}", path.display())))).collect()
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub r1_evaluations: u64,
    pub final_checkpoint: PathBuf,
    pub initial_eval: Option<EvalResult>,
    pub final_eval: Option<EvalResult>,
}

fn load_classifier(cfg: &TrainingConfig, dataset: &Dataset) -> Result<Option<Classifier<f32>>> {
    let Some(path) = &cfg.classifier_checkpoint_path else { return Ok(None) };
    let (clf, vocab) = Classifier::<f32>::load(path)?;
    if vocab.len() != dataset.num_labels() {
        return Err(Error::dims("classifier vocabulary", dataset.num_labels(), vocab.len()));
    }
    Ok(Some(clf))
}

/// Load the dataset and classifier named by `cfg` and run [`train_on`].
pub fn train(cfg: &TrainingConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = Dataset::open_dir(&cfg.data_dir, cfg.model.resolution)?;
    let classifier = load_classifier(cfg, &dataset)?;
    train_on(cfg, &dataset, classifier, resume)
}

/// Train until `total_images` have been consumed, logging every step to
/// `metrics.csv` and writing checkpoints into `output_dir`.
pub fn train_on(
    cfg: &TrainingConfig,
    dataset: &Dataset,
    classifier: Option<Classifier<f32>>,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    if dataset.num_labels() != cfg.model.num_labels {
        return Err(Error::dims("dataset labels", cfg.model.num_labels, dataset.num_labels()));
    }
    if dataset.resolution != cfg.model.resolution {
        return Err(Error::dims("dataset resolution", cfg.model.resolution, dataset.resolution));
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let evaluator = match &classifier {
        Some(c) if cfg.eval_samples >= 2 => Some(Evaluator::new(c.clone(), dataset, cfg.eval_samples, cfg.seed)?),
        _ => None,
    };
    let mut trainer = match resume {
        Some(path) => {
            let t = Trainer::load(path, classifier)?;
            if t.config.model != cfg.model || t.vocab != dataset.vocab {
                return Err(Error::Checkpoint("checkpoint model or vocabulary differs from the configuration".into()));
            }
            t
        }
        None => Trainer::new(cfg.clone(), dataset.vocab.clone(), classifier)?,
    };
    let mut log = MetricsLog::open(out.join(METRICS_FILE))?;
    let checkpoint = |t: &Trainer| -> Result<PathBuf> {
        let path = out.join(format!("step-{:08}.ckpt", t.step));
        t.save(&path)?;
        Ok(path)
    };
    let total = cfg.total_steps();
    let mut last_ckpt = checkpoint(&trainer)?;
    let eval = |t: &Trainer| evaluator.as_ref().map(|e| e.evaluate(&t.g_ema, t.step)).transpose();
    let initial_eval = if total > 0 && resume.is_none() { eval(&trainer)? } else { None };
    if let Some(e) = initial_eval {
        log::info!("step 0: fid {:.4} map {:.4}", e.fid, e.map);
        log.write(&MetricsRow { step: 0, fid: Some(e.fid), map: Some(e.map), ..Default::default() })?;
    }
    let mut final_eval = None;
    while trainer.step < total {
        let s = trainer.train_step(dataset)?;
        let last = trainer.step == total;
        let due = |interval: u64| interval > 0 && trainer.step % interval == 0;
        let e = if due(cfg.eval_interval) || last { eval(&trainer)? } else { None };
        if last {
            final_eval = e;
        }
        log.write(&MetricsRow {
            step: s.step,
            d_loss: Some(s.d_loss),
            g_loss: Some(s.g_loss),
            r1: s.r1,
            bce: s.bce,
            fid: e.map(|e| e.fid),
            map: e.map(|e| e.map),
        })?;
        if let Some(e) = e {
            log::info!("step {}: d {:.4} g {:.4} fid {:.4} map {:.4}", s.step, s.d_loss, s.g_loss, e.fid, e.map);
        }
        if due(cfg.checkpoint_interval) || last {
            last_ckpt = checkpoint(&trainer)?;
            log::info!("wrote {}", last_ckpt.display());
        }
    }
    Ok(TrainOutcome {
        steps: trainer.step,
        r1_evaluations: trainer.r1_evaluations,
        final_checkpoint: last_ckpt,
        initial_eval,
        final_eval,
    })
}

/// Training configuration recorded in a checkpoint header.
pub fn read_training_config(path: impl AsRef<Path>) -> Result<TrainingConfig> {
    let header: TrainHeader = Checkpoint::load(path)?.header_as()?;
    if header.kind != CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!("expected a {CHECKPOINT_KIND:?} checkpoint, found {:?}", header.kind)));
    }
    Ok(header.config)
}

/// The inference generator and vocabulary stored in a training checkpoint.
pub fn load_inference_generator(path: impl AsRef<Path>) -> Result<(Generator<f32>, Vocabulary)> {
    let ck = Checkpoint::load(path)?;
    let header: TrainHeader = ck.header_as()?;
    if header.kind != CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!("expected a {CHECKPOINT_KIND:?} checkpoint, found {:?}", header.kind)));
    }
    let mut init = ChaCha8Rng::seed_from_u64(0);
    let mut g = Generator::<f32>::new(&header.config.model, &mut init)?;
    ck.load_module("g_ema", &mut g)?;
    g.w_avg = ck.get("g_ema.w_avg")?;
    if g.w_avg.shape() != [g.z_dim()] {
        return Err(Error::Checkpoint("g_ema.w_avg has the wrong shape".into()));
    }
    Ok((g, header.vocabulary))
}
