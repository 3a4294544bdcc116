//! The `prise` command line: one subcommand per pipeline stage, each writing a
//! run manifest next to its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint};
use crate::data::synth::{generate_synthetic, SynthConfig};
use crate::data::{read_dataset, Dataset};
use crate::error::{PriseError, Result};
use crate::head::LabelMode;
use crate::model::{MaskMode, PriseModel};
use crate::numeric::Precision;
use crate::scene::{build_pools, labels_from_records, train_contrast, ContrastConfig, PoolConfig, SceneEncoderParams};
use crate::trainer::{ablation_run, evaluate, train_prise, AblationConfig, TrainConfig};

pub const DETERMINISTIC_ENV: &str = "PRISE_DETERMINISTIC";

#[derive(Parser, Debug)]
#[command(name = "prise", version, about = "Social relation inference on per-image person graphs")]
pub struct Cli {
    /// TOML file of flag defaults: top-level keys apply to every subcommand,
    /// a `[train]`-style table to one. Explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Serial reductions and a single worker (same as PRISE_DETERMINISTIC=1).
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic dataset (train/val/test/contrast splits).
    GenSynthetic(GenArgs),
    /// Build similarity/dissimilarity pools from pseudo scene labels.
    BuildPools(PoolsArgs),
    /// Train the scene encoder and bilinear scorer contrastively.
    TrainContrast(ContrastArgs),
    /// Train the relation model.
    Train(TrainArgs),
    /// Evaluate a relation checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Train every ablation variant over several seeds.
    Ablate(AblateArgs),
    /// Predict relation distributions for every pair.
    Infer(InferArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::GenSynthetic(_) => "gen-synthetic",
            Self::BuildPools(_) => "build-pools",
            Self::TrainContrast(_) => "train-contrast",
            Self::Train(_) => "train",
            Self::Eval(_) => "eval",
            Self::Ablate(_) => "ablate",
            Self::Infer(_) => "infer",
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 500)]
    pub images: usize,
    #[arg(long, default_value_t = 1000)]
    pub contrast_images: usize,
    #[arg(long, default_value_t = 32)]
    pub f: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub scene_types: usize,
    #[arg(long, default_value_t = 2)]
    pub min_persons: usize,
    #[arg(long, default_value_t = 5)]
    pub max_persons: usize,
    /// Global multiplier on every noise scale of the generator.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PoolArgs {
    /// Shared top-5 classes needed for similarity.
    #[arg(long, default_value_t = 2)]
    pub pool_overlap_k: usize,
    /// `true`: overlap > K counts as similar; `false`: overlap >= K.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub pool_overlap_strict: bool,
    #[arg(long, default_value_t = 50)]
    pub pool_cap: usize,
}

impl PoolArgs {
    fn config(&self, seed: u64) -> PoolConfig {
        PoolConfig {
            k: self.pool_overlap_k,
            strict: self.pool_overlap_strict,
            cap: self.pool_cap,
            seed,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PoolsArgs {
    /// Dataset file, or a directory holding `contrast.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub pools: PoolArgs,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ContrastArgs {
    /// Dataset file, or a directory holding `contrast.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Share of images held out for accuracy and AUC.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[command(flatten)]
    pub pools: PoolArgs,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Images per batch.
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// RGCN layers T.
    #[arg(long, default_value_t = 2)]
    pub rgcn_depth: usize,
    /// MLP hidden width.
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    /// Enabled feature streams, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "interactive,foreground,background,scene")]
    pub streams: Vec<String>,
    /// Keep disabled streams as zero blocks instead of removing them.
    #[arg(long)]
    pub zero_fill: bool,
    /// `contrast_finetuned` or `raw_pretrained_analogue`.
    #[arg(long, default_value = "contrast_finetuned")]
    pub scene_encoder: String,
    /// Train the scene encoder jointly instead of freezing it.
    #[arg(long)]
    pub unfreeze_scene: bool,
    /// Per-class loss weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub class_weights: Option<Vec<f64>>,
    /// `lenient` skips unlabelled pairs, `strict` rejects them.
    #[arg(long, default_value = "lenient")]
    pub label_mode: String,
    /// `f64` or `f32`.
    #[arg(long, default_value = "f64")]
    pub precision: String,
    /// Contrast checkpoint supplying the scene encoder.
    #[arg(long)]
    pub contrast_ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn enum_arg<T: serde::de::DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(Value::String(value.to_ascii_lowercase()))
        .map_err(|_| PriseError::Config(format!("invalid value `{value}` for --{flag}")))
}

impl ModelArgs {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            rgcn_depth: self.rgcn_depth,
            hidden: self.hidden,
            seed: self.seed,
            streams: self.streams.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            mask_mode: if self.zero_fill { MaskMode::ZeroFill } else { MaskMode::Remove },
            scene_encoder: self.scene_encoder.clone(),
            unfreeze_scene: self.unfreeze_scene,
            class_weights: self.class_weights.clone(),
            label_mode: enum_arg::<LabelMode>("label-mode", &self.label_mode)?,
            precision: enum_arg::<Precision>("precision", &self.precision)?,
        };
        cfg.validate()?;
        cfg.model_spec(0, 0).encoder()?;
        Ok(cfg)
    }

    /// The scene encoder from `--contrast-ckpt`, if given.
    fn encoder(&self) -> Result<Option<SceneEncoderParams>> {
        match &self.contrast_ckpt {
            Some(path) => {
                let ckpt = load_checkpoint(path)?;
                if ckpt.meta.kind != "contrast" {
                    return Err(PriseError::Data(format!(
                        "{}: expected a contrast checkpoint, found kind `{}`",
                        path.display(),
                        ckpt.meta.kind
                    )));
                }
                Ok(Some(SceneEncoderParams::from_store(&ckpt.params)?))
            }
            None => Ok(None),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Directory holding `train.jsonl` and `val.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset file, or a directory holding `test.jsonl`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AblateArgs {
    /// Directory holding `train.jsonl`, `val.jsonl` and the scoring split.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Seeds per variant (seed, seed + 1, ...).
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Variants to run, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full,no_interactive,no_scene,no_foreground,no_background,pretrained"
    )]
    pub variants: Vec<String>,
    /// Split the trained models are scored on.
    #[arg(long, default_value = "test")]
    pub eval_split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset file, or a directory holding `test.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Written atomically next to the outputs of every run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub deterministic: bool,
    pub workers: usize,
    pub argv: Vec<String>,
    pub duration_secs: f64,
}

/// Flags derived from the config file, inserted right after the subcommand
/// name so that explicit flags (parsed later) override them.
fn config_flags(path: &Path, subcommand: &str) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| PriseError::io(path, e))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| PriseError::Parse {
        path: path.to_path_buf(),
        line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let mut flags = Vec::new();
    let mut push = |key: &str, value: &toml::Value| -> Result<()> {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            // `--pool-overlap-strict` takes a value; the other booleans are switches
            toml::Value::Boolean(b) if flag == "--pool-overlap-strict" => {
                flags.extend([flag.into(), b.to_string().into()]);
            }
            toml::Value::Boolean(true) => flags.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => flags.extend([flag.into(), s.into()]),
            toml::Value::Integer(i) => flags.extend([flag.into(), i.to_string().into()]),
            toml::Value::Float(x) => flags.extend([flag.into(), x.to_string().into()]),
            toml::Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|v| match v {
                        toml::Value::String(s) => Ok(s.clone()),
                        toml::Value::Integer(i) => Ok(i.to_string()),
                        toml::Value::Float(x) => Ok(x.to_string()),
                        other => Err(PriseError::Config(format!("config key `{key}`: unsupported item {other}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                flags.extend([flag.into(), parts.join(",").into()]);
            }
            other => {
                return Err(PriseError::Config(format!("config key `{key}`: unsupported value {other}")));
            }
        }
        Ok(())
    };
    // shared top-level keys only reach subcommands that define the flag
    let known: Vec<String> = Cli::command()
        .find_subcommand(subcommand)
        .map(|c| c.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect())
        .unwrap_or_default();
    for (key, value) in &table {
        if !value.is_table() && known.contains(&key.replace('_', "-")) {
            push(key, value)?;
        }
    }
    if let Some(toml::Value::Table(section)) = table.get(subcommand) {
        for (key, value) in section {
            push(key, value)?;
        }
    }
    Ok(flags)
}

fn try_parse(argv: &[OsString]) -> std::result::Result<Cli, clap::Error> {
    // a later occurrence of a flag replaces an earlier one (config, then argv)
    let matches = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true))
        .try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

fn parse(argv: &[OsString]) -> std::result::Result<Cli, clap::Error> {
    let first = try_parse(argv)?;
    let Some(config) = first.config.clone() else {
        return Ok(first);
    };
    let name = first.command.name();
    let extra = config_flags(&config, name).map_err(|e| {
        clap::Error::raw(clap::error::ErrorKind::ValueValidation, format!("{e}\n"))
    })?;
    let at = argv
        .iter()
        .skip(1)
        .position(|a| a == name)
        .map(|p| p + 2)
        .expect("subcommand token present");
    let mut merged = argv[..at].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[at..]);
    try_parse(&merged)
}

/// Runs the command line and returns the process exit code: 0 success,
/// 1 usage or configuration error, 2 data error, 3 numeric failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let env_det = std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1" || v.eq_ignore_ascii_case("true"));
    let deterministic = cli.deterministic || env_det;
    let workers = if deterministic {
        1
    } else {
        cli.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    };
    let argv_text: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let ctx = RunContext {
        deterministic,
        workers,
        argv: argv_text,
        started: Instant::now(),
    };
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PriseError::Config(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| dispatch(&cli.command, &ctx)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct RunContext {
    deterministic: bool,
    workers: usize,
    argv: Vec<String>,
    started: Instant,
}

impl RunContext {
    fn manifest(
        &self,
        command: &Command,
        config: Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        dir: &Path,
    ) -> Result<()> {
        let name = command.name();
        let manifest = RunManifest {
            subcommand: name.into(),
            config,
            seed,
            inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            deterministic: self.deterministic,
            workers: self.workers,
            argv: self.argv.clone(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&dir.join(format!("{name}.manifest.json")), text.as_bytes())
    }
}

fn resolve(data: &Path, default_file: &str) -> PathBuf {
    if data.is_dir() {
        data.join(default_file)
    } else {
        data.to_path_buf()
    }
}

fn load(path: &Path) -> Result<Dataset> {
    let ds = read_dataset(path)?;
    let s = ds.summary();
    log::info!(
        "{}: {} images, {} labelled pairs, class counts {:?}, persons histogram {:?}",
        path.display(),
        s.images,
        s.labelled_pairs,
        s.class_counts,
        s.person_histogram
    );
    Ok(ds)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PriseError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn dispatch(command: &Command, ctx: &RunContext) -> Result<()> {
    match command {
        Command::GenSynthetic(a) => gen_synthetic(command, a, ctx),
        Command::BuildPools(a) => pools(command, a, ctx),
        Command::TrainContrast(a) => contrast(command, a, ctx),
        Command::Train(a) => train(command, a, ctx),
        Command::Eval(a) => eval(command, a, ctx),
        Command::Ablate(a) => ablate(command, a, ctx),
        Command::Infer(a) => infer(command, a, ctx),
    }
}

fn gen_synthetic(command: &Command, a: &GenArgs, ctx: &RunContext) -> Result<()> {
    let cfg = SynthConfig {
        n_images: a.images,
        contrast_images: a.contrast_images,
        f: a.f,
        c: a.classes,
        s: a.scene_types,
        min_persons: a.min_persons,
        max_persons: a.max_persons,
        noise: a.noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    data.write(&a.out)?;
    let outputs = ["train.jsonl", "val.jsonl", "test.jsonl", "contrast.jsonl", "scenes.tsv"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    ctx.manifest(command, to_value(&cfg), Some(cfg.seed), vec![], outputs, &a.out)
}

fn pools(command: &Command, a: &PoolsArgs, ctx: &RunContext) -> Result<()> {
    let input = resolve(&a.data, "contrast.jsonl");
    let ds = load(&input)?;
    let cfg = a.pools.config(a.seed);
    let pools = build_pools(&labels_from_records(&ds.records)?, &cfg)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    write_text(&a.out, &pools.to_text())?;
    log::info!("pools for {} images written to {}", ds.records.len(), a.out.display());
    ctx.manifest(command, to_value(&cfg), Some(a.seed), vec![input], vec![a.out.clone()], dir)
}

fn contrast(command: &Command, a: &ContrastArgs, ctx: &RunContext) -> Result<()> {
    let input = resolve(&a.data, "contrast.jsonl");
    let ds = load(&input)?;
    let cfg = ContrastConfig {
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        pools: a.pools.config(0),
        holdout_fraction: a.holdout,
    };
    create_dir(&a.out)?;
    let ckpt = a.out.join("contrast.ckpt");
    let state = train_contrast(&ds.records, &cfg, |s| save_checkpoint(&ckpt, &s.to_checkpoint()))?;
    let mut history = String::from("epoch\tloss\theldout_accuracy\theldout_auc\ttriplets\tskipped\tclamped\n");
    for e in &state.history {
        history.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.epoch, e.loss, e.heldout_accuracy, e.heldout_auc, e.triplets, e.skipped, e.clamped
        ));
    }
    let history_path = a.out.join("contrast_history.tsv");
    write_text(&history_path, &history)?;
    let pools_path = a.out.join("pools.tsv");
    write_text(&pools_path, &state.pools.to_text())?;
    if let Some(last) = state.history.last() {
        println!("held-out accuracy {:.4} AUC {:.4}", last.heldout_accuracy, last.heldout_auc);
    }
    ctx.manifest(
        command,
        to_value(&cfg),
        Some(cfg.seed),
        vec![input],
        vec![ckpt, history_path, pools_path],
        &a.out,
    )
}

fn train(command: &Command, a: &TrainArgs, ctx: &RunContext) -> Result<()> {
    let cfg = a.model.config()?;
    let encoder = a.model.encoder()?;
    let (train_path, val_path) = (a.data.join("train.jsonl"), a.data.join("val.jsonl"));
    let (train_ds, val_ds) = (load(&train_path)?, load(&val_path)?);
    create_dir(&a.out)?;
    let outcome = train_prise(&train_ds, &val_ds, &cfg, encoder.as_ref(), |_| Ok(()))?;
    let ckpt = a.out.join("model.ckpt");
    save_checkpoint(&ckpt, &outcome.to_checkpoint()?)?;
    let mut history = String::from("epoch\ttrain_loss\tval_accuracy\tval_map\texcluded_pairs\n");
    for e in &outcome.history {
        history.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.epoch, e.train_loss, e.val_accuracy, e.val_map, e.excluded_pairs
        ));
    }
    let history_path = a.out.join("history.tsv");
    write_text(&history_path, &history)?;
    let (report, _) = evaluate(&outcome.best, &val_ds)?;
    let report_path = a.out.join("val_report.tsv");
    write_text(&report_path, &report.to_text())?;
    println!(
        "best epoch {} val accuracy {:.4} mAP {:.4} (majority baseline {:.4})",
        outcome.best_epoch, report.accuracy, report.map, report.majority_baseline
    );
    let mut inputs = vec![train_path, val_path];
    inputs.extend(a.model.contrast_ckpt.clone());
    ctx.manifest(
        command,
        to_value(&cfg),
        Some(cfg.seed),
        inputs,
        vec![ckpt, history_path, report_path],
        &a.out,
    )
}

fn load_model(path: &Path) -> Result<(Checkpoint, PriseModel)> {
    let ckpt = load_checkpoint(path)?;
    let model = PriseModel::from_checkpoint(&ckpt)?;
    Ok((ckpt, model))
}

fn out_dir(out: &Option<PathBuf>, ckpt: &Path) -> PathBuf {
    out.clone().unwrap_or_else(|| {
        ckpt.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

fn eval(command: &Command, a: &EvalArgs, ctx: &RunContext) -> Result<()> {
    let (ckpt, model) = load_model(&a.ckpt)?;
    let data = a.data.clone().unwrap_or_else(|| out_dir(&None, &a.ckpt));
    let input = resolve(&data, "test.jsonl");
    let ds = load(&input)?;
    let (report, _) = evaluate(&model, &ds)?;
    let dir = out_dir(&a.out, &a.ckpt);
    create_dir(&dir)?;
    let report_path = dir.join("eval_report.tsv");
    let text = report.to_text();
    write_text(&report_path, &text)?;
    print!("{text}");
    ctx.manifest(
        command,
        json!({ "checkpoint": ckpt.meta.config }),
        None,
        vec![a.ckpt.clone(), input],
        vec![report_path],
        &dir,
    )
}

fn ablate(command: &Command, a: &AblateArgs, ctx: &RunContext) -> Result<()> {
    let base = a.model.config()?;
    let encoder = a.model.encoder()?;
    let split = match a.eval_split.as_str() {
        "test" | "val" => a.eval_split.as_str(),
        other => return Err(PriseError::Config(format!("--eval-split must be `test` or `val`, got `{other}`"))),
    };
    let paths = [
        a.data.join("train.jsonl"),
        a.data.join("val.jsonl"),
        a.data.join(format!("{split}.jsonl")),
    ];
    let train_ds = load(&paths[0])?;
    let val_ds = load(&paths[1])?;
    let eval_ds = if split == "val" { val_ds.clone() } else { load(&paths[2])? };
    let cfg = AblationConfig {
        repeats: a.repeats,
        workers: ctx.workers,
        variants: a.variants.clone(),
    };
    create_dir(&a.out)?;
    let table = ablation_run(&train_ds, &val_ds, &eval_ds, &base, encoder.as_ref(), &cfg)?;
    let text_path = a.out.join("ablation.tsv");
    let json_path = a.out.join("ablation.json");
    let text = table.to_text();
    write_text(&text_path, &text)?;
    write_text(&json_path, &serde_json::to_string_pretty(&table).expect("table serializes"))?;
    print!("{text}");
    let mut inputs = paths.to_vec();
    inputs.extend(a.model.contrast_ckpt.clone());
    ctx.manifest(
        command,
        json!({ "base": base, "ablation": cfg, "eval_split": split }),
        Some(base.seed),
        inputs,
        vec![text_path, json_path],
        &a.out,
    )
}

fn infer(command: &Command, a: &InferArgs, ctx: &RunContext) -> Result<()> {
    let (ckpt, model) = load_model(&a.ckpt)?;
    let input = resolve(&a.data, "test.jsonl");
    let ds = load(&input)?;
    if ds.f != model.spec.f {
        return Err(PriseError::Data(format!(
            "checkpoint expects F = {}, dataset has F = {}",
            model.spec.f, ds.f
        )));
    }
    let preds = model.predict(&ds.records)?;
    create_dir(&a.out)?;
    let mut text = String::from("# image_id\ti\tj\tp_0..p_C-1\targmax\n");
    for p in &preds {
        text.push_str(&p.to_lines());
    }
    let path = a.out.join("predictions.tsv");
    write_text(&path, &text)?;
    ctx.manifest(
        command,
        json!({ "checkpoint": ckpt.meta.config }),
        None,
        vec![a.ckpt.clone(), input],
        vec![path],
        &a.out,
    )
}
