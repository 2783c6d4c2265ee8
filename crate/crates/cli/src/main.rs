//! `apdraw`: one subcommand per pipeline stage.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 when a
//! stage fails while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use apdraw_core::backbones::Backbones;
use apdraw_core::config::{Config, Profile};
use apdraw_core::corpus::synthetic::write_toy_corpus;
use apdraw_core::corpus::{
    load_image, load_manifest, FaceParser, ImageKind, MaskDirParser, StyleTag, TemplateParser,
};
use apdraw_core::dissect::{label_units, write_overlays, write_report_csv};
use apdraw_core::networks::{
    generate_drawing, predict_quality, Generator, QualityRegressor, StyleClassifier, TrunkKind,
};
use apdraw_core::ranking::{
    aggregate_scores, build_metric_dataset, load_answers, normalize_scores, read_metric_dataset,
    write_metric_dataset, ScoreTable,
};
use apdraw_core::styles::{search_new_style, write_trace_csv, SearchConfig};
use apdraw_core::trainer::{
    evaluate_fid, evaluate_quality, train_classifier, train_metric, Augment, ClassifierOptions,
    EpochReport, GanModels, GanShape, GanTrainer, MetricOptions, TrainData, TrainOptions,
};
use apdraw_core::{Error, ImageTensor, StyleVector};
use candle_core::{DType, Device};
use clap::{Args, Parser, Subcommand};

const DTYPE: DType = DType::F32;

#[derive(Parser, Debug)]
#[command(name = "apdraw", version, about = "Portrait line drawing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set trainer.batch=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Validate configuration and inputs, then exit without writing.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the style classifier on tagged drawings.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the quality regressor on a metric dataset.
    TrainMetric {
        #[command(flatten)]
        common: Common,
        /// Tab-separated `path<TAB>score` rows.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the drawing generator and its inverse.
    TrainGan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["toy", "full"])]
        profile: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Pretrained style classifier; trained on the fly when omitted.
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Pretrained quality regressor; the quality term is off without it.
        #[arg(long)]
        metric: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate photos into drawings.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Generator checkpoint (`g.safetensors`).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        photo: Vec<PathBuf>,
        /// Style code `a,b,c`.
        #[arg(long, conflicts_with = "styles")]
        style: Option<String>,
        /// `all` emits the three basis styles.
        #[arg(long, value_parser = ["all"])]
        styles: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score drawings from a preference answer log.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        answers: PathBuf,
        /// Registers every tagged drawing; otherwise the pool is taken from
        /// the answers.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the metric-regression dataset from answers and a manifest.
    MetricDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find the style code whose output best matches a target drawing.
    StyleSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        photo: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Start from `a,b,c` instead of a random code.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label generator units with the facial regions they detect.
    Dissect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Photo files or directories.
        #[arg(long, required = true)]
        photos: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fréchet distance between two image sets.
    EvalFid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Mean predicted quality of a set of drawings.
    EvalQuality {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metric: PathBuf,
        #[arg(long)]
        drawings: PathBuf,
    },
    /// Run the study and generation HTTP service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        port: Option<u16>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::TrainClassifier { common, .. }
            | Command::TrainMetric { common, .. }
            | Command::TrainGan { common, .. }
            | Command::Infer { common, .. }
            | Command::Rank { common, .. }
            | Command::MetricDataset { common, .. }
            | Command::StyleSearch { common, .. }
            | Command::Dissect { common, .. }
            | Command::EvalFid { common, .. }
            | Command::EvalQuality { common, .. }
            | Command::Serve { common, .. } => common,
        }
    }
}

/// An input problem the user can fix; exits with 1.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            let missing = matches!(err, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound);
            return if err.is_validation() || missing || matches!(err, Error::Decode { .. }) {
                1
            } else {
                2
            };
        }
    }
    2
}

fn load_config(common: &Common, extra: &[String]) -> anyhow::Result<Config> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    let cfg = match &common.config {
        Some(p) => Config::load(p, &overrides)?,
        None => Config::layered(None, &overrides)?,
    };
    Ok(cfg)
}

fn parse_style(text: &str) -> anyhow::Result<StyleVector> {
    let v: Vec<f64> = text
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| invalid(format!("style `{text}`: {e}")))?;
    let arr: [f64; 3] = v
        .try_into()
        .map_err(|v: Vec<f64>| invalid(format!("style needs 3 components, got {}", v.len())))?;
    if arr.iter().any(|x| !x.is_finite()) {
        return Err(invalid("style components must be finite"));
    }
    Ok(StyleVector::new(arr).unwrap_or_else(|_| StyleVector::relaxed(arr)))
}

fn require(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(invalid(format!("{} does not exist", path.display())));
    }
    Ok(())
}

fn image_files(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        require(p)?;
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    matches!(
                        f.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                        Some("png" | "jpg" | "jpeg")
                    )
                })
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(invalid("no images found"));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn parser_for(cfg: &Config) -> Box<dyn FaceParser> {
    match &cfg.corpus.masks_dir {
        Some(dir) => Box::new(MaskDirParser::new(dir, TemplateParser.region_names())),
        None => Box::new(TemplateParser),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    let dry = cmd.common().dry_run;
    match cmd {
        Command::TrainClassifier { common, out } => {
            let cfg = load_config(&common, &[])?;
            let data = training_data(&cfg, &out, dry)?;
            if dry {
                return dry_run_ok(&cfg);
            }
            let c = fit_classifier(&cfg, &data)?;
            create_dir(&out)?;
            c.save(&out.join("classifier.safetensors"))?;
            Ok(())
        }
        Command::TrainMetric {
            common,
            dataset,
            out,
        } => {
            let cfg = load_config(&common, &[])?;
            require(&dataset)?;
            let rows = read_metric_dataset(&dataset)?;
            if dry {
                return dry_run_ok(&cfg);
            }
            let size = cfg.trainer.image_size();
            let rows: Vec<(ImageTensor, f64)> = rows
                .iter()
                .map(|r| Ok((load_image(&r.path, size, ImageKind::Drawing)?, r.score)))
                .collect::<apdraw_core::Result<_>>()?;
            let m = QualityRegressor::new(TrunkKind::Conv { base: cfg.base_channels() }, cfg.networks.seed, DTYPE)?;
            let fit = train_metric(
                &m,
                &rows,
                &MetricOptions {
                    steps: cfg.trainer.metric_steps,
                    batch: cfg.trainer.batch.max(1),
                    lr: cfg.trainer.lr_metric,
                    seed: cfg.trainer.seed,
                },
            )?;
            log::info!("metric MSE after {} steps: {:.5}", fit.losses.len(), fit.final_metric);
            create_dir(&out)?;
            m.save(&out.join("metric.safetensors"))?;
            write_series(&out.join("metric_loss.csv"), &fit.losses)?;
            Ok(())
        }
        Command::TrainGan {
            common,
            profile,
            epochs,
            classifier,
            metric,
            out,
        } => {
            let mut extra = Vec::new();
            if let Some(p) = profile {
                extra.push(format!("trainer.profile=\"{p}\""));
            }
            if let Some(n) = epochs {
                extra.push(format!("trainer.epochs={n}"));
            }
            let cfg = load_config(&common, &extra)?;
            for p in classifier.iter().chain(metric.iter()) {
                require(p)?;
            }
            let data = training_data(&cfg, &out, dry)?;
            if dry {
                return dry_run_ok(&cfg);
            }
            train_gan(&cfg, data, classifier.as_deref(), metric.as_deref(), &out)
        }
        Command::Infer {
            common,
            checkpoint,
            photo,
            style,
            styles,
            out,
        } => {
            let cfg = load_config(&common, &[])?;
            require(&checkpoint)?;
            let photos = image_files(&photo)?;
            let codes: Vec<(String, StyleVector)> = match (style, styles) {
                (Some(s), None) => vec![("custom".into(), parse_style(&s)?)],
                (None, Some(_)) => (0..3).map(|k| (format!("style{}", k + 1), StyleVector::basis(k))).collect(),
                _ => return Err(invalid("give --style a,b,c or --styles all")),
            };
            if dry {
                return dry_run_ok(&cfg);
            }
            let g = Generator::load(&checkpoint, DTYPE)?;
            create_dir(&out)?;
            for p in &photos {
                let img = load_image(p, g.config().image_size, ImageKind::Photo)?;
                for (name, s) in &codes {
                    let d = generate_drawing(&img, s, &g)?;
                    let path = out.join(format!("{}_{name}.png", stem(p)));
                    d.save_png(&path)?;
                    println!("{}\t{:?}", path.display(), s.values());
                }
            }
            Ok(())
        }
        Command::Rank {
            common,
            answers,
            manifest,
            out,
        } => {
            let cfg = load_config(&common, &[])?;
            require(&answers)?;
            let log = load_answers(&answers)?;
            let pool: Vec<(String, StyleTag)> = match &manifest {
                Some(m) => load_manifest(m)?
                    .drawings()
                    .filter_map(|r| r.style_tag.filter(|t| *t != StyleTag::Untagged).map(|t| (r.id.clone(), t)))
                    .collect(),
                None => {
                    let mut seen = std::collections::BTreeMap::new();
                    for a in &log {
                        for id in &a.drawing_ids {
                            seen.insert(id.clone(), a.style);
                        }
                    }
                    seen.into_iter().collect()
                }
            };
            let table = normalize_scores(&aggregate_scores(pool, &log)?)?;
            if dry {
                return dry_run_ok(&cfg);
            }
            write_scores(&out, &table)?;
            log::info!("{} answers scored into {}", log.len(), out.display());
            Ok(())
        }
        Command::MetricDataset {
            common,
            answers,
            manifest,
            out,
        } => {
            let cfg = load_config(&common, &[])?;
            require(&answers)?;
            let m = load_manifest(&manifest)?;
            let pool = m
                .drawings()
                .filter_map(|r| r.style_tag.filter(|t| *t != StyleTag::Untagged).map(|t| (r.id.clone(), t)));
            let table = normalize_scores(&aggregate_scores(pool, &load_answers(&answers)?)?)?;
            let rows = build_metric_dataset(&table, &m)?;
            if dry {
                return dry_run_ok(&cfg);
            }
            write_metric_dataset(&out, &rows)?;
            log::info!("{} rows written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::StyleSearch {
            common,
            checkpoint,
            photo,
            target,
            init,
            out,
        } => {
            let cfg = load_config(&common, &[])?;
            for p in [&checkpoint, &photo, &target] {
                require(p)?;
            }
            let init = init.map(|s| parse_style(&s)).transpose()?;
            if dry {
                return dry_run_ok(&cfg);
            }
            let g = Generator::load(&checkpoint, DTYPE)?;
            let size = g.config().image_size;
            let p = load_image(&photo, size, ImageKind::Photo)?.to_tensor(DTYPE, &Device::Cpu)?;
            let d = load_image(&target, size, ImageKind::Drawing)?.to_tensor(DTYPE, &Device::Cpu)?;
            let bb = Backbones::from_config(&cfg.backbones)?;
            let sc = SearchConfig {
                steps: cfg.styles.steps,
                lr: cfg.styles.lr,
                bins: cfg.styles.bins,
                project_simplex: cfg.styles.project_simplex,
                seed: cfg.styles.seed,
                init,
            };
            let state = search_new_style(&g, &bb, &p, &d, &sc)?;
            create_dir(&out)?;
            write_trace_csv(&out.join("trace.csv"), &state.trace)?;
            let img = load_image(&photo, size, ImageKind::Photo)?;
            generate_drawing(&img, &state.s, &g)?.save_png(out.join("result.png"))?;
            let summary = serde_json::json!({
                "style": state.s.values(),
                "loss": state.loss,
                "step": state.step,
                "aborted": state.aborted,
            });
            std::fs::write(out.join("style.json"), serde_json::to_string_pretty(&summary)?)?;
            println!("{}", summary);
            if let Some(reason) = state.aborted {
                log::warn!("search stopped early: {reason}");
            }
            Ok(())
        }
        Command::Dissect {
            common,
            checkpoint,
            photos,
            out,
        } => {
            let cfg = load_config(&common, &[])?;
            require(&checkpoint)?;
            let files = image_files(&photos)?;
            if dry {
                return dry_run_ok(&cfg);
            }
            let g = Generator::load(&checkpoint, DTYPE)?;
            let size = g.config().image_size;
            let imgs: Vec<(String, ImageTensor)> = files
                .iter()
                .map(|f| Ok((stem(f), load_image(f, size, ImageKind::Photo)?)))
                .collect::<apdraw_core::Result<_>>()?;
            let style = StyleVector::new(cfg.dissect.style).map_err(|e| invalid(e.to_string()))?;
            let parser = parser_for(&cfg);
            let report = label_units(&g, &imgs, parser.as_ref(), Some(&style))?;
            create_dir(&out)?;
            write_report_csv(&out.join("units.csv"), &report)?;
            let n = write_overlays(&out.join("overlays"), &g, &imgs[0].1, Some(&style), &report)?;
            println!(
                "{} of {} units interpretable; {} overlays; {} photos skipped",
                report.interpretable_count(),
                report.units.len(),
                n,
                report.photos_skipped
            );
            Ok(())
        }
        Command::EvalFid {
            common,
            generated,
            reference,
        } => {
            let cfg = load_config(&common, &[])?;
            let a = image_files(&[generated])?;
            let b = image_files(&[reference])?;
            if dry {
                return dry_run_ok(&cfg);
            }
            let size = cfg.trainer.image_size();
            let load = |fs: &[PathBuf]| -> apdraw_core::Result<Vec<ImageTensor>> {
                fs.iter().map(|f| load_image(f, size, ImageKind::Photo)).collect()
            };
            let bb = Backbones::from_config(&cfg.backbones)?;
            let fid = evaluate_fid(&bb, &load(&a)?, &load(&b)?)?;
            println!("{fid:.6}");
            Ok(())
        }
        Command::EvalQuality {
            common,
            metric,
            drawings,
        } => {
            let cfg = load_config(&common, &[])?;
            require(&metric)?;
            let files = image_files(&[drawings])?;
            if dry {
                return dry_run_ok(&cfg);
            }
            let bb = Backbones::from_config(&cfg.backbones)?;
            let m = QualityRegressor::load(&metric, DTYPE, Some(bb.embedder.clone()))?;
            let size = cfg.trainer.image_size();
            let imgs: Vec<ImageTensor> = files
                .iter()
                .map(|f| load_image(f, size, ImageKind::Drawing))
                .collect::<apdraw_core::Result<_>>()?;
            for (f, img) in files.iter().zip(&imgs) {
                log::debug!("{}: {:.4}", f.display(), predict_quality(img, &m)?);
            }
            println!("{:.6}", evaluate_quality(&imgs, &m)?);
            Ok(())
        }
        Command::Serve { common, port } => {
            let cfg = load_config(&common, &[])?;
            let manifest_path = cfg
                .serve
                .study_manifest
                .clone()
                .or_else(|| cfg.corpus.manifest.clone())
                .ok_or_else(|| invalid("serve.study_manifest is not set"))?;
            let manifest = load_manifest(&manifest_path)?;
            let generator = match &cfg.serve.model_checkpoint {
                Some(p) => {
                    require(p)?;
                    Some(p.clone())
                }
                None => {
                    log::warn!("serve.model_checkpoint not set; /api/generate will answer 503");
                    None
                }
            };
            if dry {
                return dry_run_ok(&cfg);
            }
            let generator = generator.map(|p| Generator::load(&p, DTYPE)).transpose()?;
            let state = apdraw_serve::AppState::new(apdraw_serve::ServeOptions {
                manifest,
                answer_log: cfg.serve.answer_log.clone(),
                seed: cfg.serve.seed,
                generator,
            })?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(apdraw_serve::serve(state, port.unwrap_or(cfg.serve.port)))?;
            Ok(())
        }
    }
}

fn dry_run_ok(cfg: &Config) -> anyhow::Result<()> {
    println!("{}", cfg.to_toml_string());
    log::info!("dry run: configuration and inputs are valid");
    Ok(())
}

/// Loads the configured manifest; the toy profile falls back to a
/// procedural corpus written under `out`.
fn training_data(cfg: &Config, out: &Path, dry: bool) -> anyhow::Result<Option<TrainData>> {
    let size = cfg.trainer.image_size();
    let manifest = match &cfg.corpus.manifest {
        Some(p) => {
            require(p)?;
            load_manifest(p)?
        }
        None if cfg.trainer.profile == Profile::Toy => {
            if dry {
                return Ok(None);
            }
            log::info!("no corpus.manifest; writing a procedural toy corpus");
            let path = write_toy_corpus(&out.join("toy_corpus"), 8, 8, size, cfg.trainer.seed)?;
            load_manifest(path)?
        }
        None => return Err(invalid("corpus.manifest is required for the full profile")),
    };
    if dry {
        return Ok(None);
    }
    let parser = parser_for(cfg);
    Ok(Some(TrainData::from_manifest(&manifest, size, parser.as_ref(), cfg.corpus.dilation_frac)?))
}

fn fit_classifier(cfg: &Config, data: &Option<TrainData>) -> anyhow::Result<StyleClassifier> {
    let data = data.as_ref().expect("loaded outside dry runs");
    let tagged = data.tagged();
    let c = StyleClassifier::new(TrunkKind::Conv { base: cfg.base_channels() }, cfg.networks.seed, DTYPE)?;
    let fit = train_classifier(
        &c,
        &tagged,
        &ClassifierOptions {
            steps: cfg.trainer.classifier_steps,
            batch: cfg.trainer.batch.max(3),
            lr: cfg.trainer.lr_classifier,
            seed: cfg.trainer.seed,
            augment: Some(Augment::default()),
        },
    )?;
    log::info!("classifier training accuracy {:.3}", fit.final_metric);
    Ok(c)
}

fn train_gan(
    cfg: &Config,
    data: Option<TrainData>,
    classifier: Option<&Path>,
    metric: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let bb = Backbones::from_config(&cfg.backbones)?;
    let c = match classifier {
        Some(p) => StyleClassifier::load(p, DTYPE, Some(bb.embedder.clone()))?,
        None => fit_classifier(cfg, &data)?,
    };
    let m = metric
        .map(|p| QualityRegressor::load(p, DTYPE, Some(bb.embedder.clone())))
        .transpose()?;
    if m.is_none() {
        log::warn!("no --metric given; the quality term stays off");
    }
    let data = data.expect("loaded outside dry runs");
    let models = GanModels::new(GanShape::from_config(cfg), cfg.networks.seed, DTYPE)?;
    create_dir(out)?;
    let mut trainer = GanTrainer::new(models, bb, c, m, data, TrainOptions::from_config(cfg))?
        .with_log(&out.join("train.jsonl"))?;
    let reports = trainer.train(Some(&out.join("checkpoints")))?;
    write_epochs(&out.join("epochs.csv"), &reports)?;
    if let Some(r) = reports.iter().find(|r| r.aborted.is_some()) {
        bail!(
            "epoch {} aborted: {}",
            r.epoch,
            r.aborted.as_deref().unwrap_or_default()
        );
    }
    let last = reports.last().expect("at least one epoch");
    println!("{}", serde_json::to_string(last)?);
    Ok(())
}

fn write_epochs(path: &Path, reports: &[EpochReport]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch", "lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "steps", "d_loss",
        "adv_drawing", "adv_photo", "relaxed_cyc", "strict_cyc", "trunc", "style", "quality",
        "total",
    ])?;
    for r in reports {
        let w_ = &r.weights;
        let mut row = vec![
            r.epoch.to_string(),
            w_.lambda1.to_string(),
            w_.lambda2.to_string(),
            w_.lambda3.to_string(),
            w_.lambda4.to_string(),
            w_.lambda5.to_string(),
            r.steps.to_string(),
            r.d_loss.to_string(),
        ];
        row.extend(r.g.values().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_series(path: &Path, values: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_scores(path: &Path, table: &ScoreTable) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "style", "raw_score", "n_appearances", "normalized"])?;
    for (id, e) in table.entries() {
        w.write_record([
            id.to_string(),
            e.style.to_string(),
            e.raw_score.to_string(),
            e.n_appearances.to_string(),
            e.normalized.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
