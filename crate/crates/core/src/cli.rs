//! The `sentinel` command line.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{load_reports, write_reports, Deployment, LabelledCorpus, ReportFormat};
use crate::embedprov::{write_fixtures, Provider};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_pipeline, export_errors, few_shot_protocol, run_experiment, stratified_split, taxonomy_summary,
    train_pipeline, zero_shot_eval, EvalReport, ExperimentConfig, FewShotConfig, FewShotStrategy, ModelKind, Prepared,
    ProviderConfig, ProviderMode, Split,
};
use crate::features::Visibility;
use crate::pipeline::{Featurization, TwoStepPipeline};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "sentinel", version, about = "Two-step triage of crowdsourced election reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's embedding provider mode.
    #[arg(long, value_enum)]
    pub provider: Option<ProviderArg>,
    /// Service URL for `--provider service`.
    #[arg(long, env = "SENTINEL_PROVIDER_URL", hide_env_values = true)]
    pub provider_url: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderArg {
    File,
    Service,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CrossMode {
    Zero,
    Few,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Scratch,
    WarmStart,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, fixture embeddings and a starter config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Source (Kenyan-style) corpus size.
        #[arg(long, default_value_t = 5000)]
        reports: usize,
        /// Target (Nigerian-style) corpus size; 0 skips it.
        #[arg(long, default_value_t = 1051)]
        target_reports: usize,
        /// Plant type signal only in posting times.
        #[arg(long)]
        temporal_only: bool,
    },
    /// Train a pipeline on the training split of the base seed.
    Train(Common),
    /// Evaluate a bundle on its held-out split, or run a multi-run experiment
    /// when no bundle is given.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Number of runs for a multi-run experiment.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Classify reports with a trained bundle.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Apply a source bundle to another deployment.
    Crossdomain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        /// Target reports; labels are mapped with the target deployment.
        #[arg(long)]
        target: PathBuf,
        #[arg(long, value_enum)]
        mode: CrossMode,
        #[arg(long, default_value_t = 0.10)]
        fraction: f64,
        #[arg(long, value_enum, default_value = "warm-start")]
        strategy: StrategyArg,
        /// Sample uniformly instead of by class.
        #[arg(long)]
        no_stratify: bool,
        /// Overrides the config's epochs for few-shot training.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print the per-language table of a report file.
    Fairness {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a tagged error file by category.
    Taxonomy {
        #[arg(long)]
        errors: PathBuf,
    },
}

/// Exclusive hold on an output directory for one command.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".sentinel.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another command (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_hash: Option<String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Hash of a bundle directory: its manifest, which pins every other file.
fn input_hash(path: &Path) -> Result<String> {
    if path.is_dir() {
        file_hash(&path.join("manifest.json"))
    } else {
        file_hash(path)
    }
}

struct Run {
    out: PathBuf,
    command: &'static str,
    config_hash: Option<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    _lock: DirLock,
}

impl Run {
    fn start(command: &'static str, out: &Path, config: Option<&Path>) -> Result<Run> {
        let lock = DirLock::acquire(out)?;
        let config_hash = config.map(file_hash).transpose()?;
        Ok(Run {
            out: out.to_path_buf(),
            command,
            config_hash,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            _lock: lock,
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), input_hash(path)?);
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    fn finish(self) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), input_hash(&self.out.join(name))?);
        }
        let m = Manifest {
            command: self.command.to_string(),
            config_hash: self.config_hash.clone(),
            inputs: self.inputs.clone(),
            outputs,
        };
        let path = self.out.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    match common.provider {
        Some(ProviderArg::File) => cfg.provider.mode = ProviderMode::File,
        Some(ProviderArg::Service) => cfg.provider.mode = ProviderMode::Service,
        None => {}
    }
    if cfg.provider.mode == ProviderMode::Service && cfg.provider.url.is_none() {
        cfg.provider.url = common.provider_url.clone();
    }
    Ok(cfg)
}

fn record_config_inputs(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    for p in cfg.corpus.iter().chain(&cfg.deployments) {
        run.input(p)?;
    }
    if cfg.provider.mode == ProviderMode::File {
        if let Some(p) = &cfg.provider.fixtures {
            run.input(p)?;
        }
    }
    Ok(())
}

fn open_provider(cfg: &ExperimentConfig, needed: bool) -> Result<Option<Box<dyn Provider>>> {
    if needed {
        cfg.provider.open().map(Some)
    } else {
        Ok(None)
    }
}

fn prepared(cfg: &ExperimentConfig) -> Result<Prepared> {
    Ok(Prepared::new(cfg.load_corpus()?, &cfg.load_deployments()?))
}

fn needs_provider(p: &TwoStepPipeline) -> bool {
    matches!(p.featurization, Featurization::Embedding { .. })
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

pub fn cmd_synth(out: &Path, seed: u64, reports: usize, target_reports: usize, temporal_only: bool) -> Result<()> {
    let mut run = Run::start("synth", out, None)?;
    let mut cfg = SynthConfig::kenya(reports, seed);
    if temporal_only {
        cfg = cfg.temporal_only();
    }
    let source = generate(&cfg)?;
    write_reports(&run.path("corpus.jsonl"), &source.reports, ReportFormat::Jsonl)?;
    run.write("deployment.json", &source.deployment.to_json())?;
    let mut fixtures = source.fixtures;
    if target_reports > 0 {
        let mut tcfg = SynthConfig::nigeria(target_reports, seed.wrapping_add(1_000_003));
        tcfg.mode = cfg.mode;
        let target = generate(&tcfg)?;
        write_reports(&run.path("target.jsonl"), &target.reports, ReportFormat::Jsonl)?;
        run.write("target_deployment.json", &target.deployment.to_json())?;
        fixtures.extend(target.fixtures);
    }
    write_fixtures(&run.path("fixtures.jsonl"), &fixtures)?;

    let mut deployments = vec![PathBuf::from("deployment.json")];
    if target_reports > 0 {
        deployments.push(PathBuf::from("target_deployment.json"));
    }
    let experiment = ExperimentConfig {
        corpus: vec![PathBuf::from("corpus.jsonl")],
        deployments,
        provider: ProviderConfig {
            mode: ProviderMode::File,
            fixtures: Some(PathBuf::from("fixtures.jsonl")),
            url: None,
        },
        model: ModelKind::LrEmbed,
        toggles: Default::default(),
        utc_offset_minutes: 0,
        ratios: Default::default(),
        seed,
        n_runs: 3,
        hyper: Default::default(),
        tfidf: Default::default(),
    };
    run.write("experiment.json", &json(&experiment)?)?;
    run.finish()
}

pub fn cmd_train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mut run = Run::start("train", &common.out, common.config.as_deref())?;
    record_config_inputs(&mut run, &cfg)?;
    let data = prepared(&cfg)?;
    let provider = open_provider(&cfg, cfg.model.uses_embeddings())?;
    let split = stratified_split(&data.joint_labels(), cfg.ratios, cfg.seed)?;
    let mut spec = cfg.train_spec();
    spec.hyper.seed = cfg.seed;
    let pipeline = train_pipeline(&data, &split.id_set(Split::Train), &spec, provider.as_deref())?;
    let bundle = run.path("bundle");
    pipeline.save(&bundle)?;
    run.write("split.json", &json(&split)?)?;
    run.finish()
}

pub fn cmd_eval(common: &Common, bundle: Option<&Path>, runs: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = runs {
        cfg.n_runs = n;
    }
    let mut run = Run::start("eval", &common.out, common.config.as_deref())?;
    record_config_inputs(&mut run, &cfg)?;
    let data = prepared(&cfg)?;
    match bundle {
        Some(b) => {
            run.input(b)?;
            let pipeline = TwoStepPipeline::load(b)?;
            let provider = open_provider(&cfg, needs_provider(&pipeline))?;
            let split = stratified_split(&data.joint_labels(), cfg.ratios, cfg.seed)?;
            let test = split.id_set(Split::Test);
            let mut reports = evaluate_pipeline(&pipeline, &data, &test, provider.as_deref())?;
            for r in [&mut reports.gate, &mut reports.typer, &mut reports.joint] {
                r.seeds = vec![cfg.seed];
            }
            run.write("report.json", &json(&reports)?)?;
            write_typer_errors(&mut run, &pipeline, &data, &test, provider.as_deref())?;
        }
        None => {
            let provider = open_provider(&cfg, cfg.model.uses_embeddings())?;
            let report =
                run_experiment(&data, &cfg.train_spec(), cfg.ratios, cfg.seed, cfg.n_runs, provider.as_deref())?;
            run.write("report.json", &json(&report)?)?;
        }
    }
    run.finish()
}

fn write_typer_errors(
    run: &mut Run,
    pipeline: &TwoStepPipeline,
    data: &Prepared,
    ids: &HashSet<String>,
    provider: Option<&dyn Provider>,
) -> Result<()> {
    let informative: HashSet<String> =
        ids.iter().filter(|id| data.label(id).is_some_and(|l| l.info_type.is_some())).cloned().collect();
    let reports = data.select(&informative);
    if reports.is_empty() {
        return Ok(());
    }
    let inputs = pipeline.inputs(&reports, &data.snapshot(provider), Visibility::All)?;
    let typed = pipeline.type_inputs(&inputs)?;
    let mut pred = BTreeMap::new();
    let mut gold = BTreeMap::new();
    let mut scores = BTreeMap::new();
    for (r, (t, s)) in reports.iter().zip(typed) {
        pred.insert(r.id.clone(), t.as_str().to_string());
        gold.insert(r.id.clone(), data.label(&r.id).unwrap().info_type.unwrap().as_str().to_string());
        scores.insert(r.id.clone(), pipeline.typer.labels.iter().cloned().zip(s).collect());
    }
    let path = run.path("errors.jsonl");
    export_errors(&pred, &gold, &scores, &data.corpus.reports, &path)?;
    Ok(())
}

pub fn cmd_predict(common: &Common, bundle: &Path, input: &Path) -> Result<()> {
    let cfg = common.config.as_ref().map(|_| load_config(common)).transpose()?;
    let mut run = Run::start("predict", &common.out, common.config.as_deref())?;
    run.input(bundle)?;
    run.input(input)?;
    let pipeline = TwoStepPipeline::load(bundle)?;
    let reports = load_reports(input, ReportFormat::from_path(input)?)?.into_strict()?;
    let deployments = match &cfg {
        Some(c) => c.load_deployments()?,
        None => vec![Deployment::kenya_2017(), Deployment::kenya_2022(), Deployment::nigeria_2023()],
    };
    let provider: Option<Box<dyn Provider>> = if needs_provider(&pipeline) {
        let pc = match &cfg {
            Some(c) => c.provider.clone(),
            None => ProviderConfig { mode: ProviderMode::Service, fixtures: None, url: common.provider_url.clone() },
        };
        Some(pc.open()?)
    } else {
        None
    };
    let data = Prepared::new(LabelledCorpus { reports: reports.clone(), labels: Vec::new() }, &deployments);
    let refs: Vec<_> = reports.iter().collect();
    let decisions = pipeline.classify_batch(&refs, &data.snapshot(provider.as_deref()))?;
    let mut body = String::new();
    for (r, d) in reports.iter().zip(&decisions) {
        let mut v = serde_json::to_value(d)?;
        v["id"] = serde_json::Value::String(r.id.clone());
        body.push_str(&serde_json::to_string(&v)?);
        body.push('\n');
    }
    run.write("decisions.jsonl", &body)?;
    run.finish()
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_crossdomain(
    common: &Common,
    bundle: &Path,
    target: &Path,
    mode: CrossMode,
    fraction: f64,
    strategy: StrategyArg,
    stratify: bool,
    epochs: Option<usize>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let mut run = Run::start("crossdomain", &common.out, common.config.as_deref())?;
    record_config_inputs(&mut run, &cfg)?;
    run.input(bundle)?;
    run.input(target)?;
    let source = TwoStepPipeline::load(bundle)?;
    let deployments = cfg.load_deployments()?;
    let reports = load_reports(target, ReportFormat::from_path(target)?)?.into_strict()?;
    let (corpus, _) = LabelledCorpus::build(&reports, &deployments)?;
    let names: HashSet<&str> = corpus.reports.iter().map(|r| r.deployment.as_str()).collect();
    let mut space = Vec::new();
    for d in deployments.iter().filter(|d| names.contains(d.name.as_str())) {
        space.extend(d.info_types());
    }
    space.sort();
    space.dedup();
    let data = Prepared::new(corpus, &deployments);
    let provider = open_provider(&cfg, needs_provider(&source))?;

    match mode {
        CrossMode::Zero => {
            let out = zero_shot_eval(&source, &data, &space, provider.as_deref(), None)?;
            if out.hash_before != out.hash_after {
                return Err(Error::InvalidModel("source parameters changed during zero-shot evaluation".into()));
            }
            run.write("report.json", &json(&out.report)?)?;
            run.write("predictions.json", &json(&out.predictions)?)?;
        }
        CrossMode::Few => {
            let mut hyper = cfg.hyper;
            if let Some(e) = epochs {
                hyper.epochs = e;
            }
            let fs_cfg = FewShotConfig {
                fraction,
                seed: cfg.seed,
                strategy: match strategy {
                    StrategyArg::Scratch => FewShotStrategy::Scratch,
                    StrategyArg::WarmStart => FewShotStrategy::WarmStart,
                },
                stratify,
                hyper,
            };
            let out = few_shot_protocol(&source, &data, &space, &fs_cfg, provider.as_deref())?;
            for w in &out.warnings {
                log::warn!("{w}");
            }
            run.write("report.json", &json(&out.report)?)?;
            run.write("sample_manifest.json", &json(&out.manifest)?)?;
            run.write("warnings.json", &json(&out.warnings)?)?;
        }
    }
    run.finish()
}

/// Collects every EvalReport in a report file, keyed by its JSON path.
fn find_reports(v: &serde_json::Value, path: &str, out: &mut Vec<(String, EvalReport)>) {
    if v.get("per_language").is_some() {
        if let Ok(r) = serde_json::from_value::<EvalReport>(v.clone()) {
            out.push((if path.is_empty() { "report".into() } else { path.to_string() }, r));
            return;
        }
    }
    match v {
        serde_json::Value::Object(m) => {
            for (k, child) in m {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                find_reports(child, &p, out);
            }
        }
        serde_json::Value::Array(a) => {
            for (i, child) in a.iter().enumerate() {
                find_reports(child, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

pub fn cmd_fairness(report: &Path, out: Option<&Path>) -> Result<String> {
    let raw = fs::read_to_string(report).map_err(|e| Error::io(report, e))?;
    let v: serde_json::Value = serde_json::from_str(&raw)?;
    let mut found = Vec::new();
    find_reports(&v, "", &mut found);
    if found.is_empty() {
        return Err(Error::InvalidData(format!("{} contains no evaluation report", report.display())));
    }
    let mut text = String::new();
    for (name, r) in found {
        text.push_str(&format!("# {name}\n{}\n", r.fairness_table()));
    }
    if let Some(dir) = out {
        let mut run = Run::start("fairness", dir, None)?;
        run.input(report)?;
        run.write("fairness.tsv", &text)?;
        run.finish()?;
    }
    Ok(text)
}

pub fn cmd_taxonomy(errors: &Path) -> Result<String> {
    let s = taxonomy_summary(errors)?;
    let mut text = format!("tagged\t{}\nuntagged\t{}\n", s.tagged, s.untagged);
    for (tag, pct) in &s.percentages {
        text.push_str(&format!("{tag}\t{pct:.1}%\n"));
    }
    Ok(text)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, seed, reports, target_reports, temporal_only } => {
            cmd_synth(&out, seed, reports, target_reports, temporal_only)
        }
        Command::Train(common) => cmd_train(&common),
        Command::Eval { common, bundle, runs } => cmd_eval(&common, bundle.as_deref(), runs),
        Command::Predict { common, bundle, input } => cmd_predict(&common, &bundle, &input),
        Command::Crossdomain { common, bundle, target, mode, fraction, strategy, no_stratify, epochs } => {
            cmd_crossdomain(&common, &bundle, &target, mode, fraction, strategy, !no_stratify, epochs)
        }
        Command::Fairness { report, out } => {
            print!("{}", cmd_fairness(&report, out.as_deref())?);
            Ok(())
        }
        Command::Taxonomy { errors } => {
            print!("{}", cmd_taxonomy(&errors)?);
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::ErrorCategory::Config.exit_code() } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let cat = e.category();
            eprintln!("error[{}]: {e}", cat.as_str());
            cat.exit_code()
        }
    }
}
