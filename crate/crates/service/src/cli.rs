//! Command-line entry points.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use mlcgan_core::classifier::{per_class_ap, train_classifier, Classifier, ClassifierTrainConfig};
use mlcgan_core::data::{save_png, synth_toy_dataset, Dataset, LabelVector, ToyDatasetConfig};
use mlcgan_core::evaluation::{independence_grid, interpolate_condition, median_rank, render_grid, z_from_seed};
use mlcgan_core::trainer::{load_inference_generator, read_training_config, train, Evaluator, TrainingConfig};

use crate::api::{serve, GenerateRequest, Service};

#[derive(Debug, Parser)]
#[command(name = "mlcgan", version, about = "Multilabel-conditional image GAN: data, training, evaluation and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic glyph dataset (images, manifest, vocabulary).
    MakeToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        num_images: usize,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 10)]
        num_labels: usize,
        #[arg(long, default_value_t = 3)]
        max_ingredients: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the multilabel classifier used by the regularizer and metrics.
    TrainClassifier {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the GAN from a TOML config; flags override config values.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        total_images: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda_uncond: Option<f64>,
        #[arg(long)]
        lambda_clf: Option<f64>,
        #[arg(long)]
        lambda_wrong: Option<f64>,
        #[arg(long)]
        r1_gamma: Option<f64>,
        #[arg(long)]
        r1_interval: Option<u64>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print the effective config and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Compute a metric and print it.
    Eval {
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square similarity matrix as CSV, for `medr`.
        #[arg(long)]
        similarity: Option<PathBuf>,
    },
    /// Generate one image.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory searched for the newest checkpoint when none is given.
        #[arg(long, default_value = "runs/default")]
        run_dir: PathBuf,
        /// Comma-separated ingredient names.
        #[arg(long, value_delimiter = ',')]
        ingredients: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        truncation: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an independence or interpolation grid with a JSON sidecar.
    Grid {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "runs/default")]
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = GridKind::Independence)]
        kind: GridKind,
        /// Ingredient lists separated by `;`, names by `,` (independence).
        #[arg(long, default_value = "")]
        lists: String,
        /// Comma-separated style seeds, one per row (independence).
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Endpoint ingredients (interpolation).
        #[arg(long, value_delimiter = ',')]
        a: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        b: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed_a: u64,
        #[arg(long, default_value_t = 1)]
        seed_b: u64,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        truncation: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "runs/default")]
        run_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Concurrent generation jobs.
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Fid,
    Map,
    Medr,
    DatasetReport,
    ClassAp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GridKind {
    Independence,
    Interpolation,
}

/// Newest `step-*.ckpt` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> anyhow::Result<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("no checkpoint given and {} is unreadable", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("step-") && n.ends_with(".ckpt"))
        })
        .collect();
    found.sort();
    found.pop().with_context(|| format!("no step-*.ckpt in {}", dir.display()))
}

fn resolve_checkpoint(explicit: Option<PathBuf>, run_dir: &Path) -> anyhow::Result<PathBuf> {
    explicit.map(Ok).unwrap_or_else(|| latest_checkpoint(run_dir))
}

/// Effective training config: file (or defaults) with flag overrides.
#[allow(clippy::too_many_arguments)]
fn training_config(cmd: &Command) -> anyhow::Result<TrainingConfig> {
    let Command::Train {
        config,
        resolution,
        data_dir,
        output_dir,
        classifier,
        total_images,
        batch_size,
        seed,
        lambda_uncond,
        lambda_clf,
        lambda_wrong,
        r1_gamma,
        r1_interval,
        ..
    } = cmd
    else {
        unreachable!("called for train only")
    };
    let mut cfg = match config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(cfg.model.resolution, resolution);
    set!(cfg.data_dir, data_dir);
    set!(cfg.output_dir, output_dir);
    set!(cfg.total_images, total_images);
    set!(cfg.batch_size, batch_size);
    set!(cfg.seed, seed);
    set!(cfg.loss.uncond, lambda_uncond);
    set!(cfg.loss.clf, lambda_clf);
    set!(cfg.loss.wrong, lambda_wrong);
    set!(cfg.loss.r1, r1_gamma);
    set!(cfg.loss.r1_interval, r1_interval);
    if classifier.is_some() {
        cfg.classifier_checkpoint_path = classifier.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_lists(text: &str) -> Vec<Vec<String>> {
    text.split(';')
        .map(|list| list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
        .collect()
}

fn read_similarity(path: &Path) -> anyhow::Result<(Vec<f64>, usize)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()
        .context("similarity entries must be numbers")?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        bail!("similarity matrix must be square");
    }
    Ok((rows.concat(), n))
}

/// Dispatch a parsed command; output goes to stdout.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeToyData { out, num_images, resolution, num_labels, max_ingredients, seed } => {
            let cfg = ToyDatasetConfig { num_images, resolution, num_labels, max_ingredients, seed };
            let manifest = synth_toy_dataset(&cfg, &out)?;
            println!("wrote {} images to {}", manifest.records.len(), out.display());
        }
        Command::TrainClassifier { data, out, resolution, epochs, lr, batch_size, seed } => {
            let dataset = Dataset::open_dir(&data, resolution)?;
            let mut cfg = ClassifierTrainConfig::default();
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.lr = lr.unwrap_or(cfg.lr);
            cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let trained = train_classifier(&dataset, &cfg)?;
            for e in &trained.history {
                println!("epoch {} loss {:.5} held-out mAP {:.4}", e.epoch, e.train_loss, e.test_map);
            }
            trained.classifier.save(&dataset.vocab, &out)?;
            println!("held-out mAP {:.4}; wrote {}", trained.test_map, out.display());
        }
        cmd @ Command::Train { .. } => {
            let cfg = training_config(&cmd)?;
            let Command::Train { resume, dry_run, .. } = cmd else { unreachable!() };
            if dry_run {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let outcome = train(&cfg, resume.as_deref())?;
            println!(
                "trained {} steps ({} R1 evaluations); final checkpoint {}",
                outcome.steps,
                outcome.r1_evaluations,
                outcome.final_checkpoint.display()
            );
            if let Some(e) = outcome.final_eval {
                println!("final fid {:.4} map {:.4}", e.fid, e.map);
            }
        }
        Command::Eval { metric, checkpoint, classifier, data, n, seed, similarity } => {
            eval(metric, checkpoint, classifier, data, n, seed, similarity)?;
        }
        Command::Generate { checkpoint, run_dir, ingredients, seed, truncation, out } => {
            let svc = Service::load(resolve_checkpoint(checkpoint, &run_dir)?, 1)?;
            let req = GenerateRequest { ingredients, seed, truncation, resolution: None };
            let img = svc.generate(&req).map_err(|e| anyhow::anyhow!("{}: {}", e.body.code, e.body.message))?;
            use base64::Engine;
            let png = base64::engine::general_purpose::STANDARD.decode(&img.png_base64)?;
            fs::write(&out, png).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} ({})", out.display(), img.sha256);
        }
        Command::Grid { checkpoint, run_dir, kind, lists, seeds, a, b, seed_a, seed_b, steps, truncation, out } => {
            let (g, vocab) = load_inference_generator(resolve_checkpoint(checkpoint, &run_dir)?)?;
            if !(0.0..=1.0).contains(&truncation) {
                bail!("truncation must lie in [0, 1], got {truncation}");
            }
            let spec = match kind {
                GridKind::Independence => {
                    let labels: Vec<LabelVector> =
                        parse_lists(&lists).iter().map(|l| vocab.encode(l)).collect::<Result<_, _>>()?;
                    independence_grid(&vocab, &labels, &seeds, g.z_dim(), truncation)
                }
                GridKind::Interpolation => {
                    let embed = |names: &[String]| -> anyhow::Result<_> {
                        let l = vocab.encode(names)?;
                        Ok(mlcgan_autodiff::no_grad(|| g.embed(&mlcgan_core::data::labels_tensor(&[l])))?)
                    };
                    let (za, zb) = (z_from_seed(seed_a, g.z_dim()), z_from_seed(seed_b, g.z_dim()));
                    interpolate_condition(&embed(&a)?, &embed(&b)?, &za, &zb, steps, truncation)?
                }
            };
            let (img, meta) = render_grid(&spec, &g)?;
            save_png(&img, &out)?;
            let sidecar = out.with_extension("json");
            fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
            println!("wrote {} and {}", out.display(), sidecar.display());
        }
        Command::Serve { checkpoint, run_dir, bind, workers } => {
            let svc = Service::load(resolve_checkpoint(checkpoint, &run_dir)?, workers)?;
            tokio::runtime::Runtime::new()?.block_on(serve(svc, bind))?;
        }
    }
    Ok(())
}

fn eval(
    metric: Metric,
    checkpoint: Option<PathBuf>,
    classifier: Option<PathBuf>,
    data: Option<PathBuf>,
    n: usize,
    seed: u64,
    similarity: Option<PathBuf>,
) -> anyhow::Result<()> {
    if metric == Metric::Medr {
        let path = similarity.context("--metric medr needs --similarity")?;
        let (sim, n) = read_similarity(&path)?;
        println!("{}", median_rank(&sim, n)?);
        return Ok(());
    }
    let train_cfg = checkpoint.as_ref().map(read_training_config).transpose()?;
    let data = data.or_else(|| train_cfg.as_ref().map(|c| c.data_dir.clone())).unwrap_or_else(|| "data".into());
    let classifier = classifier.or_else(|| train_cfg.as_ref().and_then(|c| c.classifier_checkpoint_path.clone()));
    let load_classifier = || -> anyhow::Result<Classifier<f32>> {
        let path = classifier.clone().context("this metric needs --classifier")?;
        Ok(Classifier::load(path)?.0)
    };
    match metric {
        Metric::DatasetReport => {
            let resolution = train_cfg.as_ref().map_or(32, |c| c.model.resolution);
            Dataset::open_dir(&data, resolution)?.report().write_csv(std::io::stdout())?;
        }
        Metric::ClassAp => {
            let clf = load_classifier()?;
            let dataset = Dataset::open_dir(&data, clf.config.resolution)?;
            let idx: Vec<usize> = (0..dataset.len()).collect();
            let batch = dataset.batch::<f32>(&idx);
            let (logits, _) = clf.predict(&batch.images, 64)?;
            let truth: Vec<bool> = batch.label_vectors.iter().flat_map(|l| l.0.iter().copied()).collect();
            println!("ingredient,ap");
            for (name, ap) in dataset.vocab.names().iter().zip(per_class_ap(&logits.to_f64_vec(), &truth, dataset.num_labels())?) {
                println!("{name},{}", ap.map_or("".into(), |v| format!("{v:.6}")));
            }
        }
        Metric::Fid | Metric::Map => {
            let path = checkpoint.context("this metric needs --checkpoint")?;
            let (g, _) = load_inference_generator(&path)?;
            let clf = load_classifier()?;
            let dataset = Dataset::open_dir(&data, g.resolution())?;
            let result = Evaluator::new(clf, &dataset, n, seed)?.evaluate(&g, 0)?;
            println!("{}", if metric == Metric::Fid { result.fid } else { result.map });
        }
        Metric::Medr => unreachable!(),
    }
    Ok(())
}
