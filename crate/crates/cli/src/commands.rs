use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use t4v_core::analysis::{correlation_map, export_map};
use t4v_core::classifier::{
    build_learnable_baseline, build_random_normal, build_random_orthogonal, build_textual, fit_lda,
    ClassifierMatrix, InitKind, DEFAULT_LDA_CAP,
};
use t4v_core::datastore::{
    decode_store, generate_synthetic, read_store, write_store, FeatureStore, Manifest, Split,
    SyntheticSpec,
};
use t4v_core::headnet::{init_params, HeadKind, HeadParams, HeadSpec};
use t4v_core::numkit::RngState;
use t4v_core::objectives::GatherTopology;
use t4v_core::protocols::{
    evaluate, evaluate_multiview, zero_shot, EvalReport, Model, Protocol, ZeroShotOptions,
};
use t4v_core::tensor::{decode_checkpoint, digest_f64, read_checkpoint, write_checkpoint, Tensor};
use t4v_core::trainer::{run_with, save_run, RunOptions, TrainConfig};
use t4v_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "t4v",
    version,
    about = "Frozen-classifier transfer on video embeddings"
)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Dataset manifest (a manifest.toml file or the directory holding one).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a classifier matrix.
    BuildClassifier(ClassifierArgs),
    /// Train a temporal head against a classifier.
    Train(TrainArgs),
    /// Evaluate a trained run on the manifest's test split.
    Eval(EvalArgs),
    /// Zero-shot evaluation of a trained head on a target dataset.
    Zeroshot(ZeroshotArgs),
    /// Train with K samples per class and evaluate (K=0 runs zero-shot).
    Fewshot(FewshotArgs),
    /// Inter-class correlation map of a classifier.
    Corr(CorrArgs),
    /// Generate a synthetic dataset with correlated class prototypes.
    Synth(SynthArgs),
    /// Describe and validate a toolkit file.
    Inspect(InspectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildClassifier(_) => "build-classifier",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Zeroshot(_) => "zeroshot",
            Command::Fewshot(_) => "fewshot",
            Command::Corr(_) => "corr",
            Command::Synth(_) => "synth",
            Command::Inspect(_) => "inspect",
        }
    }
}

#[derive(Debug, Args)]
pub struct ClassifierArgs {
    /// normal, orthogonal, lda, textual or learnable.
    #[arg(long, default_value = "textual")]
    pub kind: String,
    /// Embedding width, when no manifest is given.
    #[arg(long)]
    pub d: Option<usize>,
    /// Class count, when no manifest is given.
    #[arg(long)]
    pub c: Option<usize>,
    /// Samples per class used by LDA.
    #[arg(long, default_value_t = DEFAULT_LDA_CAP)]
    pub lda_cap: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Classifier kind to build, see `build-classifier --kind`.
    #[arg(long, default_value = "textual")]
    pub classifier: String,
    /// Use a classifier written by `build-classifier` or `train` instead.
    #[arg(long)]
    pub classifier_file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LDA_CAP)]
    pub lda_cap: usize,
    /// tap, t1d or ttrans.
    #[arg(long, default_value = "tap")]
    pub head: String,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    /// frozen-ce, learnable-ce, contrastive-gathered or contrastive-local.
    #[arg(long)]
    pub objective: Option<String>,
    /// TOML file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    #[arg(long)]
    pub shards: Option<usize>,
    #[arg(long)]
    pub local_batch: Option<usize>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub classifier_lr_scale: Option<f64>,
    /// Evaluate on the test split every this many epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Extra views of the test split (T4V1 files, same videos in the same
    /// order); scores are averaged over the test split and these.
    #[arg(long = "view")]
    pub views: Vec<PathBuf>,
    /// Spatial crops per clip among the views.
    #[arg(long, default_value_t = 1)]
    pub crops: usize,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    /// Run directory of a head trained on a source dataset. Without it the
    /// untrained head is used.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Evaluate all classes once instead of repeated half-class subsets.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Classes per repeat; overrides the manifest and the default of half.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Head used when no run is given.
    #[arg(long, default_value = "tap")]
    pub head: String,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    /// Samples per class; 0 runs the zero-shot protocol.
    #[arg(long)]
    pub shots: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    /// Classifier file or run directory; otherwise one is built from --kind.
    #[arg(long)]
    pub classifier_file: Option<PathBuf>,
    #[command(flatten)]
    pub build: ClassifierArgs,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub clip_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub clip_hi: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    #[arg(long, default_value_t = 0.6, allow_hyphen_values = true)]
    pub rho_in: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub rho_out: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Per-coordinate noise separating text embeddings from prototypes.
    #[arg(long, default_value_t = 0.0)]
    pub text_noise: f64,
    #[arg(long, default_value_t = 40)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        manifest: cli.manifest,
        out: cli.out,
    };
    match cli.command {
        Command::BuildClassifier(a) => build_classifier_cmd(&ctx, &a),
        Command::Train(a) => train_cmd(&ctx, &a),
        Command::Eval(a) => eval_cmd(&ctx, &a),
        Command::Zeroshot(a) => zeroshot_cmd(&ctx, &a),
        Command::Fewshot(a) => fewshot_cmd(&ctx, &a),
        Command::Corr(a) => corr_cmd(&ctx, &a),
        Command::Synth(a) => synth_cmd(&ctx, &a),
        Command::Inspect(a) => inspect_cmd(&ctx, &a),
    }
}

struct Ctx {
    seed: u64,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn manifest(&self) -> Result<Manifest> {
        let path = self
            .manifest
            .as_ref()
            .ok_or_else(|| Error::Config("--manifest is required".into()))?;
        Manifest::load(path)
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(self.out.as_deref())
    }

    fn require_out(&self) -> Result<&Path> {
        self.out_dir()?
            .ok_or_else(|| Error::Config("--out is required".into()))
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Numeric(format!("json: {e}")))
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn classifier_meta(w: &ClassifierMatrix, ridge: Option<f64>) -> serde_json::Value {
    json!({
        "kind": w.init_kind,
        "frozen": w.frozen,
        "classes": w.num_classes(),
        "dim": w.dim(),
        "class_names": w.class_names,
        "digest": w.digest(),
        "lda_ridge": ridge,
    })
}

/// Writes `classifier.t4vc` and its metadata `classifier.json` into `dir`.
fn save_classifier(dir: &Path, w: &ClassifierMatrix, ridge: Option<f64>) -> Result<()> {
    write_checkpoint(
        dir.join("classifier.t4vc"),
        &[Tensor::from_matrix("classifier", &w.weights)],
    )?;
    write_text(
        &dir.join("classifier.json"),
        &(to_json(&classifier_meta(w, ridge))? + "\n"),
    )
}

/// Reads a classifier from a directory holding `classifier.t4vc` and
/// `classifier.json`, or from the `.t4vc` file itself.
fn load_classifier(path: &Path) -> Result<ClassifierMatrix> {
    let (bin, meta) = if path.is_dir() {
        (path.join("classifier.t4vc"), path.join("classifier.json"))
    } else {
        (path.to_path_buf(), path.with_extension("json"))
    };
    let tensors = read_checkpoint(&bin)?;
    let t = tensors
        .iter()
        .find(|t| t.name == "classifier")
        .ok_or_else(|| Error::Manifest(format!("{} has no classifier tensor", bin.display())))?;
    if t.shape.len() != 2 {
        return Err(Error::Manifest("classifier tensor is not a matrix".into()));
    }
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", meta.display())))?;
    let kind: InitKind = serde_json::from_value(v["kind"].clone())
        .map_err(|e| Error::Manifest(format!("{}: kind: {e}", meta.display())))?;
    let names: Vec<String> = serde_json::from_value(v["class_names"].clone())
        .map_err(|e| Error::Manifest(format!("{}: class_names: {e}", meta.display())))?;
    ClassifierMatrix {
        weights: t.to_matrix(),
        init_kind: kind,
        frozen: v["frozen"].as_bool().unwrap_or(true),
        class_names: Vec::new(),
    }
    .with_class_names(names)
}

/// Builds a classifier of `kind` for the manifest's dataset.
fn build_for_manifest(
    kind: InitKind,
    m: &Manifest,
    train: Option<&FeatureStore>,
    lda_cap: usize,
    rng: &mut RngState,
) -> Result<(ClassifierMatrix, Option<f64>)> {
    let names = m.class_names.clone();
    let c = names.len();
    let d = match train {
        Some(s) => s.dim(),
        None => m.load_split(Split::Train)?.dim(),
    };
    let (w, ridge) = match kind {
        InitKind::Textual => {
            let text = m.load_text_embeddings()?;
            (build_textual(&text.as_rows()?, &names)?, None)
        }
        InitKind::Lda => {
            let owned;
            let store = match train {
                Some(s) => s,
                None => {
                    owned = m.load_split(Split::Train)?;
                    &owned
                }
            };
            let fit = fit_lda(store, lda_cap)?;
            (fit.classifier, fit.ridge)
        }
        InitKind::RandomNormal => (build_random_normal(d, c, rng)?, None),
        InitKind::RandomOrthogonal => (build_random_orthogonal(d, c, rng)?, None),
        InitKind::LearnableBaseline => (build_learnable_baseline(d, c, rng)?, None),
    };
    Ok((w.with_class_names(names)?, ridge))
}

fn build_classifier_cmd(ctx: &Ctx, a: &ClassifierArgs) -> Result<()> {
    let kind: InitKind = a.kind.parse()?;
    let mut rng = RngState::new(ctx.seed);
    let (w, ridge) = match (a.d, a.c) {
        (Some(d), Some(c)) => {
            let w = match kind {
                InitKind::RandomNormal => build_random_normal(d, c, &mut rng)?,
                InitKind::RandomOrthogonal => build_random_orthogonal(d, c, &mut rng)?,
                InitKind::LearnableBaseline => build_learnable_baseline(d, c, &mut rng)?,
                other => {
                    return Err(Error::Config(format!(
                        "{} classifiers need --manifest, not --d/--c",
                        other.label()
                    )))
                }
            };
            (w, None)
        }
        (None, None) => build_for_manifest(kind, &ctx.manifest()?, None, a.lda_cap, &mut rng)?,
        _ => return Err(Error::Config("give both --d and --c, or neither".into())),
    };
    if let Some(dir) = ctx.out_dir()? {
        save_classifier(dir, &w, ridge)?;
    }
    emit(&to_json(&classifier_meta(&w, ridge))?);
    Ok(())
}

fn train_config(ctx: &Ctx, a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = ctx.seed;
    if let Some(o) = &a.objective {
        cfg.objective = o.parse()?;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { cfg.$field = v; })*
        };
    }
    set!(epochs => epochs, warmup_epochs => warmup_epochs, lr => base_lr,
        min_lr => min_lr, weight_decay => weight_decay, batch_size => batch_size,
        temperature => temperature, label_fraction => label_fraction,
        jitter => feature_jitter, classifier_lr_scale => classifier_lr_scale,
        eval_every => eval_every);
    cfg.gather = GatherTopology {
        shards: a.shards.unwrap_or(cfg.gather.shards),
        local_batch: a.local_batch.unwrap_or(cfg.gather.local_batch),
    };
    // keep the warm-up shorter than short runs unless it was set explicitly
    if a.warmup_epochs.is_none() && a.config.is_none() && cfg.warmup_epochs >= cfg.epochs {
        cfg.warmup_epochs = cfg.epochs.saturating_sub(1);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn head_spec(a: &TrainArgs, store: &FeatureStore) -> Result<HeadSpec> {
    let kind: HeadKind = a.head.parse()?;
    let spec = HeadSpec {
        layers: a.layers,
        heads: a.heads,
        kernel: a.kernel,
        ..HeadSpec::new(kind, store.frames(), store.dim())
    };
    spec.validate()?;
    Ok(spec)
}

struct Trained {
    spec: HeadSpec,
    out: t4v_core::trainer::TrainOutput,
}

fn train_on_manifest(
    ctx: &Ctx,
    a: &TrainArgs,
    shots: Option<usize>,
    m: &Manifest,
) -> Result<Trained> {
    let train = m.load_split(Split::Train)?;
    let test = m.load_split(Split::Test)?;
    let mut cfg = train_config(ctx, a)?;
    cfg.shots = shots;
    let w = match &a.classifier_file {
        Some(p) => load_classifier(p)?.select_classes(&m.class_names)?,
        None => {
            let kind: InitKind = a.classifier.parse()?;
            let mut rng = RngState::new(ctx.seed).fork(7);
            build_for_manifest(kind, m, Some(&train), a.lda_cap, &mut rng)?.0
        }
    };
    let spec = head_spec(a, &train)?;
    let out = run_with(
        &train,
        &w,
        &spec,
        &cfg,
        RunOptions {
            init: None,
            eval: Some(&test),
        },
    )?;
    Ok(Trained { spec, out })
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let m = ctx.manifest()?;
    let t = train_on_manifest(ctx, a, None, &m)?;
    let dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    save_run(&dir, &t.out)?;
    save_classifier(&dir, &t.out.classifier, None)?;
    let last = t.out.log.epochs.last();
    emit(&to_json(&json!({
        "run": dir,
        "epochs": t.out.log.epochs.len(),
        "final_loss": last.map(|e| e.loss),
        "final_accuracy": last.map(|e| e.accuracy),
        "classifier_digest_before": t.out.log.classifier_digest_before,
        "classifier_digest_after": t.out.log.classifier_digest_after,
    }))?);
    Ok(())
}

/// Head spec, parameters, classifier and scoring settings of a run directory.
struct LoadedRun {
    spec: HeadSpec,
    params: HeadParams,
    classifier: ClassifierMatrix,
    temperature: f64,
    normalize: bool,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let p = dir.join("config.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", p.display())))?;
    let spec: HeadSpec = serde_json::from_value(v["head"].clone())
        .map_err(|e| Error::Manifest(format!("{}: head: {e}", p.display())))?;
    let cfg: TrainConfig = serde_json::from_value(v["train"].clone())
        .map_err(|e| Error::Manifest(format!("{}: train: {e}", p.display())))?;
    let params = HeadParams {
        tensors: read_checkpoint(dir.join("head.t4vc"))?,
    };
    params.check(&spec)?;
    Ok(LoadedRun {
        spec,
        params,
        classifier: load_classifier(dir)?,
        temperature: cfg.temperature,
        normalize: cfg.objective.is_contrastive(),
    })
}

fn emit_report(ctx: &Ctx, report: &EvalReport) -> Result<()> {
    if let Some(dir) = ctx.out_dir()? {
        report.write_json(dir.join("report.json"))?;
        report.write_per_class_csv(dir.join("per_class.csv"))?;
    }
    emit(&report.to_json()?);
    Ok(())
}

fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let m = ctx.manifest()?;
    let run = load_run(&a.run)?;
    let test = m.load_split(Split::Test)?;
    let w = run.classifier.select_classes(&m.class_names)?;
    let model = Model {
        temperature: run.temperature,
        normalize: run.normalize,
        ..Model::new(&run.spec, &run.params, &w)
    };
    let report = if a.views.is_empty() {
        evaluate(&model, &test, Protocol::General)?
    } else {
        let mut views = vec![test.clone()];
        for p in &a.views {
            views.push(read_store(p)?.with_class_names(m.class_names.clone())?);
        }
        evaluate_multiview(&model, &views, a.crops)?
    };
    emit_report(ctx, &report)
}

fn text_classifier(m: &Manifest) -> Result<ClassifierMatrix> {
    let text = m.load_text_embeddings()?;
    build_textual(&text.as_rows()?, &m.class_names)
}

fn zeroshot_cmd(ctx: &Ctx, a: &ZeroshotArgs) -> Result<()> {
    let m = ctx.manifest()?;
    let test = m.load_split(Split::Test)?;
    let w = text_classifier(&m)?;
    let (spec, params) = match &a.run {
        Some(dir) => {
            let r = load_run(dir)?;
            (r.spec, r.params)
        }
        None => {
            let spec = HeadSpec::new(a.head.parse()?, test.frames(), test.dim());
            let params = init_params(&spec, &mut RngState::new(ctx.seed).fork(2))?;
            (spec, params)
        }
    };
    let options = ZeroShotOptions {
        half: !a.full,
        repeats: a.repeats,
        subset_size: a.classes.or(m.zero_shot_classes),
        exclude: m.zero_shot_exclude.clone(),
    };
    let report = zero_shot(
        &options,
        &test,
        &w,
        &spec,
        &params,
        &mut RngState::new(ctx.seed),
    )?;
    emit_report(ctx, &report)
}

fn fewshot_cmd(ctx: &Ctx, a: &FewshotArgs) -> Result<()> {
    let m = ctx.manifest()?;
    let test = m.load_split(Split::Test)?;
    if a.shots == 0 {
        let spec = head_spec(&a.train, &test)?;
        let params = init_params(&spec, &mut RngState::new(ctx.seed).fork(2))?;
        let options = ZeroShotOptions {
            half: false,
            repeats: 1,
            subset_size: None,
            exclude: Vec::new(),
        };
        let w = text_classifier(&m)?;
        let report = zero_shot(
            &options,
            &test,
            &w,
            &spec,
            &params,
            &mut RngState::new(ctx.seed),
        )?;
        return emit_report(ctx, &report);
    }
    let t = train_on_manifest(ctx, &a.train, Some(a.shots), &m)?;
    let model = Model {
        temperature: t.out.log.config.temperature,
        normalize: t.out.log.config.objective.is_contrastive(),
        ..Model::new(&t.spec, &t.out.head, &t.out.classifier)
    };
    let mut report = evaluate(&model, &test, Protocol::FewShot)?;
    report.protocol = Protocol::FewShot;
    if let Some(dir) = ctx.out_dir()? {
        save_run(dir.join("run"), &t.out)?;
        save_classifier(&dir.join("run"), &t.out.classifier, None)?;
    }
    emit_report(ctx, &report)
}

fn corr_cmd(ctx: &Ctx, a: &CorrArgs) -> Result<()> {
    let w = match &a.classifier_file {
        Some(p) => load_classifier(p)?,
        None => {
            let kind: InitKind = a.build.kind.parse()?;
            let mut rng = RngState::new(ctx.seed);
            match (a.build.d, a.build.c) {
                (Some(d), Some(c)) => match kind {
                    InitKind::RandomNormal => build_random_normal(d, c, &mut rng)?,
                    InitKind::RandomOrthogonal => build_random_orthogonal(d, c, &mut rng)?,
                    _ => build_learnable_baseline(d, c, &mut rng)?,
                },
                _ => build_for_manifest(kind, &ctx.manifest()?, None, a.build.lda_cap, &mut rng)?.0,
            }
        }
    };
    let map = correlation_map(&w)?;
    let dir = ctx.require_out()?;
    export_map(
        &map,
        a.clip_lo,
        a.clip_hi,
        dir.join("corr.csv"),
        dir.join("corr.ppm"),
    )?;
    emit(&to_json(&json!({
        "classes": map.class_names.len(),
        "source": map.source,
        "csv": dir.join("corr.csv"),
        "ppm": dir.join("corr.ppm"),
    }))?);
    Ok(())
}

fn synth_cmd(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        rho_in: a.rho_in,
        rho_out: a.rho_out,
        noise_std: a.noise,
        text_noise_std: a.text_noise,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        frames: a.frames,
        dim: a.dim,
        seed: ctx.seed,
        ..SyntheticSpec::with_even_groups(a.classes, a.groups)
    };
    let data = generate_synthetic(&spec)?;
    let dir = ctx.require_out()?;
    let names = spec.class_names();
    write_store(dir.join("train.t4v"), &data.train)?;
    write_store(dir.join("test.t4v"), &data.test)?;
    write_store(
        dir.join("text.t4v"),
        &FeatureStore::from_class_rows(&data.text, names.clone())?,
    )?;
    let mut m = Manifest::new("synthetic", names);
    m.notes = format!(
        "groups {:?}, rho_in {}, rho_out {}, noise {}, text noise {}, seed {}",
        spec.groups, spec.rho_in, spec.rho_out, spec.noise_std, spec.text_noise_std, spec.seed
    );
    m.save(dir.join("manifest.toml"))?;
    emit(&to_json(&json!({
        "manifest": dir.join("manifest.toml"),
        "classes": spec.classes(),
        "train": data.train.len(),
        "test": data.test.len(),
        "frames": spec.frames,
        "dim": spec.dim,
    }))?);
    Ok(())
}

fn inspect_cmd(ctx: &Ctx, a: &InspectArgs) -> Result<()> {
    let path = &a.path;
    let report = if path.is_dir() || path.extension().is_some_and(|e| e == "toml") {
        let m = Manifest::load(path)?;
        json!({
            "type": "manifest",
            "name": m.name,
            "classes": m.class_names.len(),
            "train": m.resolve(&m.train),
            "test": m.resolve(&m.test),
            "text_embeddings": m.text_embeddings.as_ref().map(|t| m.resolve(t)),
        })
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        match bytes.get(0..4) {
            Some(b"T4V1") => {
                let s = decode_store(&bytes)?;
                json!({
                    "type": "store",
                    "n": s.len(),
                    "frames": s.frames(),
                    "dim": s.dim(),
                    "classes": s.num_classes(),
                    "crc": "ok",
                    "digest": digest_f64(s.payload()),
                })
            }
            Some(b"T4VC") => {
                let tensors = decode_checkpoint(&bytes)?;
                let list: Vec<_> = tensors
                    .iter()
                    .map(|t| json!({"name": t.name, "shape": t.shape, "digest": digest_f64(&t.data)}))
                    .collect();
                json!({"type": "checkpoint", "crc": "ok", "tensors": list})
            }
            _ => {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("{}: not a T4V1 store or T4VC checkpoint", path.display()),
                })
            }
        }
    };
    let text = to_json(&report)?;
    if let Some(dir) = ctx.out_dir()? {
        write_text(&dir.join("inspect.json"), &(text.clone() + "\n"))?;
    }
    emit(&text);
    Ok(())
}
