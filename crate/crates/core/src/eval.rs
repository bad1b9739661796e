//! Experiment harness: stratified splits, metrics, multi-run averaging,
//! per-language breakdowns, cross-domain protocols and error export.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Deployment, ElectionReport, InfoType, Informativeness, LabelledCorpus, Language, ReportFormat};
use crate::embedprov::{FileProvider, Provider, ServiceConfig, ServiceProvider};
use crate::error::{Error, Result};
use crate::features::{
    dense_matrix, featurize_report, DayStandardizer, FeatureConfig, FeatureToggles, Timeline, Visibility,
};
use crate::models::{
    compute_class_weights, train_linear_svm, train_logreg, train_nb, warm_start_train, Hyper, LinearModel,
};
use crate::pipeline::{Featurization, Inputs, Provenance, Snapshot, TwoStepPipeline};
use crate::textprep::{tokenize_report, TextAssets};
use crate::vectorize::{fit_tfidf, TfidfConfig};

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for Ratios {
    fn default() -> Self {
        Ratios { train: 0.7, dev: 0.1, test: 0.2 }
    }
}

impl Ratios {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.dev, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|r| !(0.0..=1.0).contains(r)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must be in [0, 1] and sum to 1, got {a:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub seed: u64,
    pub ratios: Ratios,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignment.iter().filter(|(_, s)| **s == split).map(|(id, _)| id.as_str()).collect()
    }

    pub fn id_set(&self, split: Split) -> HashSet<String> {
        self.ids(split).into_iter().map(String::from).collect()
    }

    pub fn len(&self, split: Split) -> usize {
        self.assignment.values().filter(|s| **s == split).count()
    }
}

/// Splits `total` into integer parts proportional to `weights`: floors plus
/// one extra unit for the largest remainders (ties to the earlier part).
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let rem = |i: usize| ((quotas[i] - counts[i] as f64) * 1e9).round() as i64;
    order.sort_by_key(|&i| (std::cmp::Reverse(rem(i)), i));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-class largest-remainder split. Ids are shuffled within each class by
/// a ChaCha stream seeded with `seed`, visiting classes in sorted order.
pub fn stratified_split(labels: &BTreeMap<String, String>, ratios: Ratios, seed: u64) -> Result<SplitAssignment> {
    ratios.validate()?;
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, label) in labels {
        by_class.entry(label).or_default().push(id);
    }
    if let Some((label, ids)) = by_class.iter().find(|(_, ids)| ids.len() < 3) {
        return Err(Error::ClassTooSmall { label: label.to_string(), count: ids.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for ids in by_class.values_mut() {
        ids.shuffle(&mut rng);
        let counts = largest_remainder(ids.len(), &ratios.as_array());
        let mut it = ids.iter();
        for (split, n) in Split::ALL.into_iter().zip(counts) {
            for id in it.by_ref().take(n) {
                assignment.insert(id.to_string(), split);
            }
        }
    }
    Ok(SplitAssignment { assignment, seed, ratios })
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Metrics over one set of predictions. Confusion rows are gold labels,
/// columns predictions, both indexed by `labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub labels: Vec<String>,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: Metrics,
    pub per_language: BTreeMap<String, Metrics>,
    pub seeds: Vec<u64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Metrics from a confusion matrix. Macro averages run over labels that
    /// occur as gold or prediction; a zero denominator scores 0.
    pub fn from_confusion(labels: Vec<String>, confusion: Vec<Vec<usize>>) -> Metrics {
        let k = labels.len();
        let n: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let mut per_class = BTreeMap::new();
        let (mut sp, mut sr, mut sf, mut present) = (0.0, 0.0, 0.0, 0usize);
        for (c, label) in labels.iter().enumerate() {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            per_class.insert(label.clone(), ClassMetrics { precision, recall, f1, support });
            if support + predicted > 0 {
                sp += precision;
                sr += recall;
                sf += f1;
                present += 1;
            }
        }
        let m = present.max(1) as f64;
        Metrics {
            n,
            accuracy: ratio(correct, n),
            labels,
            per_class,
            macro_precision: sp / m,
            macro_recall: sr / m,
            macro_f1: sf / m,
            confusion,
        }
    }

    /// Mean of scalar metrics; per-class values average over the inputs that
    /// list the class. Confusion matrices are summed over the label union.
    pub fn mean(items: &[&Metrics]) -> Metrics {
        let labels: Vec<String> =
            items.iter().flat_map(|m| m.labels.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
        let idx: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let k = labels.len();
        let mut confusion = vec![vec![0; k]; k];
        for m in items {
            for (r, row) in m.confusion.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    confusion[idx[m.labels[r].as_str()]][idx[m.labels[c].as_str()]] += v;
                }
            }
        }
        let mut per_class = BTreeMap::new();
        for l in &labels {
            let hits: Vec<&ClassMetrics> = items.iter().filter_map(|m| m.per_class.get(l)).collect();
            let n = hits.len() as f64;
            per_class.insert(
                l.clone(),
                ClassMetrics {
                    precision: hits.iter().map(|c| c.precision).sum::<f64>() / n,
                    recall: hits.iter().map(|c| c.recall).sum::<f64>() / n,
                    f1: hits.iter().map(|c| c.f1).sum::<f64>() / n,
                    support: hits.iter().map(|c| c.support).sum(),
                },
            );
        }
        let mean = |f: fn(&Metrics) -> f64| items.iter().map(|m| f(m)).sum::<f64>() / items.len() as f64;
        Metrics {
            n: items.iter().map(|m| m.n).sum(),
            accuracy: mean(|m| m.accuracy),
            labels,
            per_class,
            macro_precision: mean(|m| m.macro_precision),
            macro_recall: mean(|m| m.macro_recall),
            macro_f1: mean(|m| m.macro_f1),
            confusion,
        }
    }
}

fn confusion_for<'a>(
    ids: impl Iterator<Item = &'a String>,
    predictions: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
    idx: &HashMap<&str, usize>,
    k: usize,
) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; k]; k];
    for id in ids {
        m[idx[gold[id].as_str()]][idx[predictions[id].as_str()]] += 1;
    }
    m
}

/// Scores `predictions` against `gold`. Per-language sub-reports share the
/// overall label list so their confusion matrices sum to the overall one.
pub fn evaluate(
    predictions: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
    languages: &BTreeMap<String, Language>,
) -> Result<EvalReport> {
    let mismatch = |what: &str, a: &BTreeMap<String, String>, b: &dyn Fn(&str) -> bool| {
        a.keys().find(|id| !b(id)).map(|id| Error::IdMismatch(format!("`{id}` missing from {what}")))
    };
    if let Some(e) = mismatch("predictions", gold, &|id| predictions.contains_key(id))
        .or_else(|| mismatch("gold labels", predictions, &|id| gold.contains_key(id)))
        .or_else(|| mismatch("languages", gold, &|id| languages.contains_key(id)))
    {
        return Err(e);
    }
    let labels: Vec<String> =
        gold.values().chain(predictions.values()).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let idx: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let k = labels.len();
    let overall = Metrics::from_confusion(labels.clone(), confusion_for(gold.keys(), predictions, gold, &idx, k));

    let mut by_lang: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    for id in gold.keys() {
        by_lang.entry(languages[id].as_str()).or_default().push(id);
    }
    let per_language = by_lang
        .into_iter()
        .map(|(lang, ids)| {
            let cm = confusion_for(ids.into_iter(), predictions, gold, &idx, k);
            (lang.to_string(), Metrics::from_confusion(labels.clone(), cm))
        })
        .collect();
    Ok(EvalReport { overall, per_language, seeds: Vec::new() })
}

impl EvalReport {
    /// Arithmetic mean over runs; seeds are concatenated.
    pub fn average(runs: &[EvalReport]) -> Result<EvalReport> {
        if runs.is_empty() {
            return Err(Error::Config("cannot average zero runs".into()));
        }
        let overall = Metrics::mean(&runs.iter().map(|r| &r.overall).collect::<Vec<_>>());
        let langs: BTreeSet<&String> = runs.iter().flat_map(|r| r.per_language.keys()).collect();
        let per_language = langs
            .into_iter()
            .map(|l| {
                let items: Vec<&Metrics> = runs.iter().filter_map(|r| r.per_language.get(l)).collect();
                (l.clone(), Metrics::mean(&items))
            })
            .collect();
        Ok(EvalReport { overall, per_language, seeds: runs.iter().flat_map(|r| r.seeds.iter().copied()).collect() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-language table: language, n, accuracy, macro P/R/F1.
    pub fn fairness_table(&self) -> String {
        let mut out = String::from("language\tn\taccuracy\tmacro_p\tmacro_r\tmacro_f1\n");
        let rows =
            self.per_language.iter().map(|(l, m)| (l.as_str(), m)).chain(std::iter::once(("all", &self.overall)));
        for (l, m) in rows {
            out.push_str(&format!(
                "{l}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                m.n, m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LrEmbed,
    LrTfidf,
    SvmTfidf,
    NbTfidf,
}

impl ModelKind {
    pub fn uses_embeddings(self) -> bool {
        self == ModelKind::LrEmbed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    File,
    Service,
}

impl FromStr for ProviderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "file" => Ok(ProviderMode::File),
            "service" => Ok(ProviderMode::Service),
            other => Err(Error::Config(format!("unknown provider mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub mode: ProviderMode,
    /// Fixture JSONL for file mode.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    /// Service base URL; falls back to `SENTINEL_PROVIDER_URL`.
    #[serde(default)]
    pub url: Option<String>,
}

impl ProviderConfig {
    pub fn open(&self) -> Result<Box<dyn Provider>> {
        match self.mode {
            ProviderMode::File => {
                let path =
                    self.fixtures.as_ref().ok_or_else(|| Error::Config("file provider needs `fixtures`".into()))?;
                Ok(Box::new(FileProvider::load(path)?))
            }
            ProviderMode::Service => match &self.url {
                Some(url) => Ok(Box::new(ServiceProvider::connect(ServiceConfig::new(url.clone()))?)),
                None => Ok(Box::new(ServiceProvider::from_env()?)),
            },
        }
    }
}

fn default_runs() -> usize {
    3
}

/// Everything that defines an experiment; serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Report files (CSV or JSONL by extension).
    pub corpus: Vec<PathBuf>,
    /// Deployment mapping files; the built-in Kenyan and Nigerian mappings
    /// are used when empty.
    #[serde(default)]
    pub deployments: Vec<PathBuf>,
    #[serde(default)]
    pub provider: ProviderConfig,
    pub model: ModelKind,
    #[serde(default)]
    pub toggles: FeatureToggles,
    #[serde(default)]
    pub utc_offset_minutes: i32,
    #[serde(default)]
    pub ratios: Ratios,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default)]
    pub tfidf: TfidfConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.iter_mut().for_each(fix);
        self.deployments.iter_mut().for_each(fix);
        if let Some(p) = self.provider.fixtures.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        if self.corpus.is_empty() {
            return Err(Error::Config("no corpus files".into()));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        for p in self.corpus.iter().chain(&self.deployments).chain(self.provider.fixtures.iter()) {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig { toggles: self.toggles, utc_offset_minutes: self.utc_offset_minutes, ..FeatureConfig::default() }
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec { kind: self.model, features: self.feature_config(), tfidf: self.tfidf, hyper: self.hyper }
    }

    pub fn load_deployments(&self) -> Result<Vec<Deployment>> {
        if self.deployments.is_empty() {
            return Ok(vec![Deployment::kenya_2017(), Deployment::kenya_2022(), Deployment::nigeria_2023()]);
        }
        self.deployments.iter().map(|p| Deployment::load(p)).collect()
    }

    /// Loads, filters and labels all corpus files.
    pub fn load_corpus(&self) -> Result<LabelledCorpus> {
        let mut reports = Vec::new();
        for p in &self.corpus {
            reports.extend(crate::corpus::load_reports(p, ReportFormat::from_path(p)?)?.into_strict()?);
        }
        let (corpus, _) = LabelledCorpus::build(&reports, &self.load_deployments()?)?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(corpus)
    }
}

/// Model kind and hyperparameters for [`train_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub kind: ModelKind,
    pub features: FeatureConfig,
    pub tfidf: TfidfConfig,
    pub hyper: Hyper,
}

/// A labelled corpus with its timeline and election dates, ready for
/// featurization.
pub struct Prepared {
    pub corpus: LabelledCorpus,
    pub timeline: Timeline,
    pub election_dates: HashMap<String, NaiveDate>,
    labels: HashMap<String, usize>,
}

impl Prepared {
    pub fn new(corpus: LabelledCorpus, deployments: &[Deployment]) -> Prepared {
        let timeline = Timeline::new(corpus.reports.iter().cloned());
        let labels = corpus.reports.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        Prepared {
            corpus,
            timeline,
            election_dates: deployments.iter().map(|d| (d.name.clone(), d.election_date)).collect(),
            labels,
        }
    }

    pub fn snapshot<'a>(&'a self, provider: Option<&'a dyn Provider>) -> Snapshot<'a> {
        Snapshot { timeline: &self.timeline, election_dates: &self.election_dates, provider }
    }

    pub fn report(&self, id: &str) -> Option<&ElectionReport> {
        self.labels.get(id).map(|&i| &self.corpus.reports[i])
    }

    pub fn label(&self, id: &str) -> Option<&crate::corpus::LabelAssignment> {
        self.labels.get(id).map(|&i| &self.corpus.labels[i])
    }

    /// id to joint label, the stratification key for both tasks.
    pub fn joint_labels(&self) -> BTreeMap<String, String> {
        self.corpus.labels.iter().map(|l| (l.report_id.clone(), l.joint_label().to_string())).collect()
    }

    pub fn languages(&self) -> BTreeMap<String, Language> {
        self.corpus.reports.iter().map(|r| (r.id.clone(), r.language)).collect()
    }

    /// Reports for `ids` in corpus order.
    pub fn select(&self, ids: &HashSet<String>) -> Vec<&ElectionReport> {
        self.corpus.reports.iter().filter(|r| ids.contains(&r.id)).collect()
    }
}

/// Content hash over (id, text, raw label) of the given reports, sorted by id.
pub fn corpus_hash<'a>(reports: impl IntoIterator<Item = &'a ElectionReport>) -> String {
    let mut rows: Vec<&ElectionReport> = reports.into_iter().collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let mut h = Sha256::new();
    for r in rows {
        for part in [r.id.as_str(), r.text.as_str(), r.raw_label.as_deref().unwrap_or("")] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn train_head(kind: ModelKind, x: &Inputs, y: &[&str], hyper: &Hyper) -> Result<LinearModel> {
    let weights = compute_class_weights(y)?;
    match (kind, x) {
        (ModelKind::LrEmbed, Inputs::Dense(m)) => train_logreg(m, y, &weights, hyper),
        (ModelKind::LrTfidf, Inputs::Sparse(v)) => train_logreg(v.as_slice(), y, &weights, hyper),
        (ModelKind::SvmTfidf, Inputs::Sparse(v)) => train_linear_svm(v.as_slice(), y, &weights, hyper),
        (ModelKind::NbTfidf, Inputs::Sparse(v)) => train_nb(v.as_slice(), y),
        _ => Err(Error::Config(format!("{kind:?} does not match the featurization"))),
    }
}

/// Trains gate and typer on `train_ids`. Context for training rows is drawn
/// from the training split only.
pub fn train_pipeline(
    data: &Prepared,
    train_ids: &HashSet<String>,
    spec: &TrainSpec,
    provider: Option<&dyn Provider>,
) -> Result<TwoStepPipeline> {
    let train = data.select(train_ids);
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (featurization, inputs) = if spec.kind.uses_embeddings() {
        let provider = provider.ok_or_else(|| Error::Config("embedding models need a provider".into()))?;
        let texts: Vec<&str> = train.iter().map(|r| r.text.as_str()).collect();
        provider.prefetch(&texts)?;
        let fvs = train
            .par_iter()
            .map(|r| {
                featurize_report(
                    r,
                    &data.timeline,
                    Visibility::Only(train_ids),
                    provider,
                    &data.election_dates,
                    &spec.features,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let days = DayStandardizer::fit(&fvs)?;
        let x = dense_matrix(&fvs, Some(&days), spec.features.toggles)?;
        (
            Featurization::Embedding {
                features: spec.features.clone(),
                days: Some(days),
                model_tag: provider.model_tag().to_string(),
            },
            Inputs::Dense(x),
        )
    } else {
        let assets = TextAssets::default();
        let tokens: Vec<_> = train.iter().map(|r| tokenize_report(&r.id, &r.text, &assets)).collect();
        let vectorizer = fit_tfidf(&tokens, spec.tfidf)?;
        let counts = spec.kind == ModelKind::NbTfidf;
        let rows = tokens
            .iter()
            .map(|t| if counts { vectorizer.transform_counts(t) } else { vectorizer.transform(t) })
            .collect();
        (Featurization::Sparse { vectorizer, counts }, Inputs::Sparse(rows))
    };

    let labels: Vec<_> = train.iter().map(|r| data.label(&r.id).expect("labelled")).collect();
    let gate_y: Vec<&str> = labels.iter().map(|l| l.informative.as_str()).collect();
    let informative: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].info_type.is_some()).collect();
    let typer_y: Vec<&str> = informative.iter().map(|&i| labels[i].info_type.expect("informative").as_str()).collect();
    let typer_x = inputs.select(&informative);
    let (gate, typer) = rayon::join(
        || train_head(spec.kind, &inputs, &gate_y, &spec.hyper),
        || train_head(spec.kind, &typer_x, &typer_y, &spec.hyper),
    );
    let typer = typer?;
    let space =
        typer.labels.iter().map(|l| l.parse().map_err(Error::InvalidModel)).collect::<Result<Vec<InfoType>>>()?;
    TwoStepPipeline::new(
        gate?,
        typer,
        featurization,
        space,
        Provenance { train_corpus: corpus_hash(train.iter().copied()), seeds: vec![spec.hyper.seed] },
    )
}

/// Reports for the three views of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReports {
    /// Informative vs non-informative.
    pub gate: EvalReport,
    /// Information type on gold-informative reports.
    pub typer: EvalReport,
    /// Full two-step decision against the joint label.
    pub joint: EvalReport,
}

impl TaskReports {
    pub fn average(runs: &[TaskReports]) -> Result<TaskReports> {
        let pick = |f: fn(&TaskReports) -> &EvalReport| runs.iter().map(|r| f(r).clone()).collect::<Vec<_>>();
        Ok(TaskReports {
            gate: EvalReport::average(&pick(|r| &r.gate))?,
            typer: EvalReport::average(&pick(|r| &r.typer))?,
            joint: EvalReport::average(&pick(|r| &r.joint))?,
        })
    }
}

fn decision_label(d: &crate::pipeline::Decision) -> String {
    match d.info_type() {
        Some(t) => t.as_str().to_string(),
        None => Informativeness::NonInformative.as_str().to_string(),
    }
}

/// Evaluates `pipeline` on `ids`. Test-time context may use any report.
pub fn evaluate_pipeline(
    pipeline: &TwoStepPipeline,
    data: &Prepared,
    ids: &HashSet<String>,
    provider: Option<&dyn Provider>,
) -> Result<TaskReports> {
    let reports = data.select(ids);
    if reports.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let inputs = pipeline.inputs(&reports, &data.snapshot(provider), Visibility::All)?;
    let langs = data.languages();
    let lang_of = |ids: &BTreeMap<String, String>| -> BTreeMap<String, Language> {
        ids.keys().map(|id| (id.clone(), langs[id])).collect()
    };

    let gate_pred = inputs.predict(&pipeline.gate)?;
    let mut pred = BTreeMap::new();
    let mut gold = BTreeMap::new();
    for (i, r) in reports.iter().enumerate() {
        pred.insert(r.id.clone(), gate_pred.labels[i].clone());
        gold.insert(r.id.clone(), data.label(&r.id).unwrap().informative.as_str().to_string());
    }
    let gate = evaluate(&pred, &gold, &lang_of(&gold))?;

    let informative: Vec<usize> =
        (0..reports.len()).filter(|&i| data.label(&reports[i].id).unwrap().info_type.is_some()).collect();
    let typed = pipeline.type_inputs(&inputs.select(&informative))?;
    let (mut pred, mut gold) = (BTreeMap::new(), BTreeMap::new());
    for (&i, (t, _)) in informative.iter().zip(&typed) {
        let id = &reports[i].id;
        pred.insert(id.clone(), t.as_str().to_string());
        gold.insert(id.clone(), data.label(id).unwrap().info_type.unwrap().as_str().to_string());
    }
    let typer = evaluate(&pred, &gold, &lang_of(&gold))?;

    let decisions = pipeline.classify_inputs(&inputs)?;
    let (mut pred, mut gold) = (BTreeMap::new(), BTreeMap::new());
    for (r, d) in reports.iter().zip(&decisions) {
        pred.insert(r.id.clone(), decision_label(d));
        gold.insert(r.id.clone(), data.label(&r.id).unwrap().joint_label().to_string());
    }
    let joint = evaluate(&pred, &gold, &lang_of(&gold))?;
    Ok(TaskReports { gate, typer, joint })
}

#[derive(Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub split: SplitAssignment,
    pub pipeline: TwoStepPipeline,
    pub reports: TaskReports,
}

/// One run: split with `seed`, train on train, evaluate on test.
pub fn run_once(
    data: &Prepared,
    spec: &TrainSpec,
    ratios: Ratios,
    seed: u64,
    provider: Option<&dyn Provider>,
) -> Result<RunOutcome> {
    let split = stratified_split(&data.joint_labels(), ratios, seed)?;
    let spec = TrainSpec { hyper: Hyper { seed, ..spec.hyper }, ..spec.clone() };
    let pipeline = train_pipeline(data, &split.id_set(Split::Train), &spec, provider)?;
    let mut reports = evaluate_pipeline(&pipeline, data, &split.id_set(Split::Test), provider)?;
    for r in [&mut reports.gate, &mut reports.typer, &mut reports.joint] {
        r.seeds = vec![seed];
    }
    Ok(RunOutcome { seed, split, pipeline, reports })
}

/// Runs `run(base_seed + i)` for `i < n`, in parallel, and averages. The
/// first failing run (by index) aborts the whole batch.
pub fn multi_run<T, F>(n: usize, base_seed: u64, run: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if n == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    let results: Vec<Result<T>> = (0..n).into_par_iter().map(|i| run(base_seed + i as u64)).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|e| Error::RunFailed { index, source: Box::new(e) }))
        .collect()
}

/// Averaged and per-run reports for an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub averaged: TaskReports,
    pub runs: Vec<TaskReports>,
}

pub fn run_experiment(
    data: &Prepared,
    spec: &TrainSpec,
    ratios: Ratios,
    base_seed: u64,
    n: usize,
    provider: Option<&dyn Provider>,
) -> Result<ExperimentReport> {
    let runs: Vec<TaskReports> =
        multi_run(n, base_seed, |seed| run_once(data, spec, ratios, seed, provider).map(|o| o.reports))?;
    Ok(ExperimentReport { averaged: TaskReports::average(&runs)?, runs })
}

// ---------------------------------------------------------------------------
// Cross-domain

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotOutcome {
    pub report: EvalReport,
    pub predictions: BTreeMap<String, String>,
    pub hash_before: String,
    pub hash_after: String,
}

/// Applies the source typer to gold-informative target reports (or the
/// subset `only`) with the argmax restricted to `label_space`.
pub fn zero_shot_eval(
    source: &TwoStepPipeline,
    target: &Prepared,
    label_space: &[InfoType],
    provider: Option<&dyn Provider>,
    only: Option<&HashSet<String>>,
) -> Result<ZeroShotOutcome> {
    let hash_before = source.parameter_hash();
    let restricted = source.clone().with_label_space(label_space.to_vec())?;
    let mut ids = HashSet::new();
    for l in &target.corpus.labels {
        let Some(t) = l.info_type else { continue };
        if only.is_some_and(|o| !o.contains(&l.report_id)) {
            continue;
        }
        if !label_space.contains(&t) {
            return Err(Error::UnknownLabel(format!(
                "`{}` (report {}) is outside the target label space",
                t.as_str(),
                l.report_id
            )));
        }
        ids.insert(l.report_id.clone());
    }
    let reports = target.select(&ids);
    if reports.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let inputs = restricted.inputs(&reports, &target.snapshot(provider), Visibility::All)?;
    let typed = restricted.type_inputs(&inputs)?;
    let mut predictions = BTreeMap::new();
    let mut gold = BTreeMap::new();
    for (r, (t, _)) in reports.iter().zip(typed) {
        predictions.insert(r.id.clone(), t.as_str().to_string());
        gold.insert(r.id.clone(), target.label(&r.id).unwrap().info_type.unwrap().as_str().to_string());
    }
    let langs = target.languages();
    let lang: BTreeMap<_, _> = gold.keys().map(|id| (id.clone(), langs[id])).collect();
    let report = evaluate(&predictions, &gold, &lang)?;
    Ok(ZeroShotOutcome { report, predictions, hash_before, hash_after: source.parameter_hash() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShotStrategy {
    Scratch,
    WarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub fraction: f64,
    pub seed: u64,
    pub strategy: FewShotStrategy,
    /// Stratify the sample by class; otherwise sample uniformly.
    pub stratify: bool,
    pub hyper: Hyper,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            fraction: 0.10,
            seed: 0,
            strategy: FewShotStrategy::WarmStart,
            stratify: true,
            hyper: Hyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub fraction: f64,
    pub seed: u64,
    pub stratified: bool,
    pub sampled: Vec<String>,
    pub holdout: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotOutcome {
    pub report: EvalReport,
    pub manifest: SampleManifest,
    pub warnings: Vec<String>,
    pub typer: LinearModel,
}

/// Draws `round(fraction * N)` ids from `labels`. Stratified sampling
/// allocates per-class counts by largest remainder.
pub fn sample_ids(labels: &BTreeMap<String, String>, fraction: f64, seed: u64, stratify: bool) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let total = (fraction * labels.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(total);
    if stratify {
        let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (id, l) in labels {
            by_class.entry(l).or_default().push(id);
        }
        let sizes: Vec<f64> = by_class.values().map(|v| v.len() as f64).collect();
        let counts = largest_remainder(total, &sizes);
        for (ids, n) in by_class.values_mut().zip(counts) {
            ids.shuffle(&mut rng);
            out.extend(ids.iter().take(n).map(|s| s.to_string()));
        }
    } else {
        let mut ids: Vec<&String> = labels.keys().collect();
        ids.shuffle(&mut rng);
        out.extend(ids.into_iter().take(total).cloned());
    }
    out.sort();
    Ok(out)
}

/// Trains on a small labelled sample of the target and evaluates on the
/// rest. `Scratch` fits a new typer head over the source featurization;
/// `WarmStart` continues descent from the source typer.
pub fn few_shot_protocol(
    source: &TwoStepPipeline,
    target: &Prepared,
    label_space: &[InfoType],
    config: &FewShotConfig,
    provider: Option<&dyn Provider>,
) -> Result<FewShotOutcome> {
    let labels: BTreeMap<String, String> = target
        .corpus
        .labels
        .iter()
        .filter_map(|l| l.info_type.map(|t| (l.report_id.clone(), t.as_str().to_string())))
        .collect();
    let sampled = sample_ids(&labels, config.fraction, config.seed, config.stratify)?;
    let sample_set: HashSet<String> = sampled.iter().cloned().collect();
    let holdout: Vec<String> = labels.keys().filter(|id| !sample_set.contains(*id)).cloned().collect();
    let holdout_set: HashSet<String> = holdout.iter().cloned().collect();

    let present: BTreeSet<&str> = sampled.iter().map(|id| labels[id].as_str()).collect();
    let mut warnings = Vec::new();
    for t in label_space {
        if !present.contains(t.as_str()) {
            warnings.push(format!("class {} has no examples in the few-shot sample", t.as_str()));
        }
    }

    let train_reports = target.select(&sample_set);
    let x = source.inputs(&train_reports, &target.snapshot(provider), Visibility::Only(&sample_set))?;
    let y: Vec<&str> = train_reports.iter().map(|r| labels[&r.id].as_str()).collect();
    let hyper = Hyper { seed: config.seed, ..config.hyper };
    let typer = match config.strategy {
        FewShotStrategy::Scratch => {
            let kind = match (&source.featurization, source.typer.loss_kind) {
                (Featurization::Embedding { .. }, _) => ModelKind::LrEmbed,
                (_, crate::models::LossKind::Hinge) => ModelKind::SvmTfidf,
                (_, crate::models::LossKind::Nb) => ModelKind::NbTfidf,
                _ => ModelKind::LrTfidf,
            };
            train_head(kind, &x, &y, &hyper)?
        }
        FewShotStrategy::WarmStart => {
            let weights = compute_class_weights(&y)?;
            match &x {
                Inputs::Dense(m) => warm_start_train(&source.typer, m, &y, Some(&weights), &hyper)?,
                Inputs::Sparse(v) => warm_start_train(&source.typer, v.as_slice(), &y, Some(&weights), &hyper)?,
            }
        }
    };
    let space: Vec<InfoType> =
        label_space.iter().copied().filter(|t| typer.label_index(t.as_str()).is_some()).collect();
    let adapted = TwoStepPipeline::new(
        source.gate.clone(),
        typer.clone(),
        source.featurization.clone(),
        space.clone(),
        source.provenance.clone(),
    )?;
    let outcome = zero_shot_eval(&adapted, target, label_space, provider, Some(&holdout_set)).or_else(|e| match e {
        // Scratch heads may lack classes; score hold-out reports of those
        // classes as errors rather than aborting.
        Error::UnknownLabel(_) if space.len() < label_space.len() => {
            zero_shot_lenient(&adapted, target, &space, provider, &holdout_set)
        }
        e => Err(e),
    })?;
    Ok(FewShotOutcome {
        report: outcome.report,
        manifest: SampleManifest {
            fraction: config.fraction,
            seed: config.seed,
            stratified: config.stratify,
            sampled,
            holdout,
        },
        warnings,
        typer,
    })
}

fn zero_shot_lenient(
    p: &TwoStepPipeline,
    target: &Prepared,
    space: &[InfoType],
    provider: Option<&dyn Provider>,
    ids: &HashSet<String>,
) -> Result<ZeroShotOutcome> {
    let reports = target.select(ids);
    let inputs = p.inputs(&reports, &target.snapshot(provider), Visibility::All)?;
    let restricted = p.clone().with_label_space(space.to_vec())?;
    let typed = restricted.type_inputs(&inputs)?;
    let mut predictions = BTreeMap::new();
    let mut gold = BTreeMap::new();
    for (r, (t, _)) in reports.iter().zip(typed) {
        predictions.insert(r.id.clone(), t.as_str().to_string());
        gold.insert(r.id.clone(), target.label(&r.id).unwrap().info_type.unwrap().as_str().to_string());
    }
    let langs = target.languages();
    let lang: BTreeMap<_, _> = gold.keys().map(|id| (id.clone(), langs[id])).collect();
    Ok(ZeroShotOutcome {
        report: evaluate(&predictions, &gold, &lang)?,
        predictions,
        hash_before: p.parameter_hash(),
        hash_after: p.parameter_hash(),
    })
}

// ---------------------------------------------------------------------------
// Error analysis

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTag {
    AnnotatorError,
    ClearLexical,
    AmbiguousCategory,
    CoPresent,
    PoliticalContext,
    MultimodalContext,
    Untagged,
}

impl ErrorTag {
    pub const ALL: [ErrorTag; 7] = [
        ErrorTag::AnnotatorError,
        ErrorTag::ClearLexical,
        ErrorTag::AmbiguousCategory,
        ErrorTag::CoPresent,
        ErrorTag::PoliticalContext,
        ErrorTag::MultimodalContext,
        ErrorTag::Untagged,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorTag::AnnotatorError => "annotator_error",
            ErrorTag::ClearLexical => "clear_lexical",
            ErrorTag::AmbiguousCategory => "ambiguous_category",
            ErrorTag::CoPresent => "co_present",
            ErrorTag::PoliticalContext => "political_context",
            ErrorTag::MultimodalContext => "multimodal_context",
            ErrorTag::Untagged => "untagged",
        }
    }
}

impl fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ErrorTag::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| Error::UnknownTag(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: String,
    pub text: String,
    pub gold: String,
    pub predicted: String,
    pub scores: BTreeMap<String, f64>,
    pub language: Language,
    pub tag: ErrorTag,
}

/// Writes one untagged record per misclassification, sorted by id. Returns
/// the number written.
pub fn export_errors(
    predictions: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
    scores: &BTreeMap<String, BTreeMap<String, f64>>,
    reports: &[ElectionReport],
    path: &Path,
) -> Result<usize> {
    let by_id: HashMap<&str, &ElectionReport> = reports.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = Vec::new();
    let mut n = 0;
    for (id, g) in gold {
        let p = predictions.get(id).ok_or_else(|| Error::IdMismatch(format!("`{id}` has no prediction")))?;
        if p == g {
            continue;
        }
        let r = by_id.get(id.as_str()).ok_or_else(|| Error::UnknownReport(id.clone()))?;
        let rec = ErrorRecord {
            id: id.clone(),
            text: r.text.clone(),
            gold: g.clone(),
            predicted: p.clone(),
            scores: scores.get(id).cloned().unwrap_or_default(),
            language: r.language,
            tag: ErrorTag::Untagged,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
        n += 1;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomySummary {
    /// Percentage per category over tagged records; untagged is excluded.
    pub percentages: BTreeMap<ErrorTag, f64>,
    pub tagged: usize,
    pub untagged: usize,
}

/// Category distribution of a tagged error file.
pub fn taxonomy_summary(path: &Path) -> Result<TaxonomySummary> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut counts: BTreeMap<ErrorTag, usize> = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        let tag = v
            .get("tag")
            .and_then(|t| t.as_str())
            .ok_or_else(|| Error::UnknownTag("<missing>".into()))?
            .parse::<ErrorTag>()?;
        *counts.entry(tag).or_default() += 1;
    }
    Ok(summarize_tags(&counts))
}

pub fn summarize_tags(counts: &BTreeMap<ErrorTag, usize>) -> TaxonomySummary {
    let untagged = counts.get(&ErrorTag::Untagged).copied().unwrap_or(0);
    let tagged: usize = counts.iter().filter(|(t, _)| **t != ErrorTag::Untagged).map(|(_, n)| n).sum();
    let percentages =
        ErrorTag::ALL[..6].iter().map(|t| (*t, 100.0 * ratio(counts.get(t).copied().unwrap_or(0), tagged))).collect();
    TaxonomySummary { percentages, tagged, untagged }
}

/// Writes records as JSONL.
pub fn write_error_records(path: &Path, records: &[ErrorRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
