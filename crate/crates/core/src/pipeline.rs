//! Two-step classification: an informativeness gate, then an
//! information-type classifier that only sees reports the gate passes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ElectionReport, InfoType, GATE_LABELS};
use crate::embedprov::Provider;
use crate::error::{Error, Result};
use crate::features::{
    featurize_report, DayStandardizer, FeatureConfig, FeatureVector, Timeline, Visibility, FEATURE_DIM,
};
use crate::models::{masked_argmax, LinearModel};
use crate::textprep::{tokenize_report, TextAssets};
use crate::vectorize::{SparseVector, TfidfModel};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// How reports are turned into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Featurization {
    /// Sentence embeddings plus context, temporal and sentiment features.
    Embedding { features: FeatureConfig, days: Option<DayStandardizer>, model_tag: String },
    /// Classical preprocessing and a fitted vectorizer. `counts` selects raw
    /// n-gram counts (naive Bayes) over TF-IDF.
    Sparse { vectorizer: TfidfModel, counts: bool },
}

impl Featurization {
    pub fn dim(&self) -> usize {
        match self {
            Featurization::Embedding { .. } => FEATURE_DIM,
            Featurization::Sparse { vectorizer, .. } => vectorizer.dim(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Content hash of the training corpus.
    pub train_corpus: String,
    pub seeds: Vec<u64>,
}

/// What classification needs besides the report: a corpus snapshot for
/// context, election dates, and an embedding provider for dense pipelines.
pub struct Snapshot<'a> {
    pub timeline: &'a Timeline,
    pub election_dates: &'a HashMap<String, NaiveDate>,
    pub provider: Option<&'a dyn Provider>,
}

/// Model inputs for a batch of reports.
pub enum Inputs {
    Dense(Array2<f64>),
    Sparse(Vec<SparseVector>),
}

impl Inputs {
    pub fn n_rows(&self) -> usize {
        match self {
            Inputs::Dense(m) => m.nrows(),
            Inputs::Sparse(v) => v.len(),
        }
    }

    fn scores(&self, model: &LinearModel, i: usize, out: &mut [f64]) {
        match self {
            Inputs::Dense(m) => model.scores_row(m, i, out),
            Inputs::Sparse(v) => model.scores_row(v.as_slice(), i, out),
        }
    }

    pub fn predict(&self, model: &LinearModel) -> Result<crate::models::Predictions> {
        match self {
            Inputs::Dense(m) => model.predict(m),
            Inputs::Sparse(v) => model.predict(v.as_slice()),
        }
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Inputs {
        match self {
            Inputs::Dense(m) => Inputs::Dense(m.select(ndarray::Axis(0), rows)),
            Inputs::Sparse(v) => Inputs::Sparse(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    NonInformative {
        gate_scores: Vec<f64>,
    },
    Informative {
        info_type: InfoType,
        gate_scores: Vec<f64>,
        /// Typer scores keyed by label, over all typer labels.
        scores: BTreeMap<String, f64>,
    },
}

impl Decision {
    pub fn info_type(&self) -> Option<InfoType> {
        match self {
            Decision::Informative { info_type, .. } => Some(*info_type),
            Decision::NonInformative { .. } => None,
        }
    }

    pub fn is_informative(&self) -> bool {
        matches!(self, Decision::Informative { .. })
    }
}

#[derive(Debug)]
pub struct TwoStepPipeline {
    pub gate: LinearModel,
    pub typer: LinearModel,
    pub featurization: Featurization,
    label_space: Vec<InfoType>,
    pub provenance: Provenance,
    typer_calls: AtomicUsize,
}

impl Clone for TwoStepPipeline {
    fn clone(&self) -> Self {
        TwoStepPipeline {
            gate: self.gate.clone(),
            typer: self.typer.clone(),
            featurization: self.featurization.clone(),
            label_space: self.label_space.clone(),
            provenance: self.provenance.clone(),
            typer_calls: AtomicUsize::new(0),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BundleConfig {
    schema_version: u32,
    featurization: Featurization,
    label_space: Vec<InfoType>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    files: BTreeMap<String, String>,
}

const BUNDLE_FILES: [&str; 3] = ["gate.json", "typer.json", "config.json"];

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl TwoStepPipeline {
    pub fn new(
        gate: LinearModel,
        typer: LinearModel,
        featurization: Featurization,
        label_space: Vec<InfoType>,
        provenance: Provenance,
    ) -> Result<Self> {
        let gate_labels: HashSet<&str> = gate.labels.iter().map(String::as_str).collect();
        if gate_labels != GATE_LABELS.into_iter().collect() {
            return Err(Error::InvalidModel(format!("gate labels must be {GATE_LABELS:?}, found {:?}", gate.labels)));
        }
        for l in &typer.labels {
            l.parse::<InfoType>().map_err(Error::InvalidModel)?;
        }
        if gate.dim() != featurization.dim() || typer.dim() != featurization.dim() {
            return Err(Error::DimensionMismatch {
                expected: featurization.dim(),
                found: if gate.dim() != featurization.dim() { gate.dim() } else { typer.dim() },
            });
        }
        let p = TwoStepPipeline {
            gate,
            typer,
            featurization,
            label_space: Vec::new(),
            provenance,
            typer_calls: AtomicUsize::new(0),
        };
        p.with_label_space(label_space)
    }

    /// Same models, predictions restricted to `space` at the typer argmax.
    pub fn with_label_space(mut self, mut space: Vec<InfoType>) -> Result<Self> {
        space.sort();
        space.dedup();
        if space.is_empty() {
            return Err(Error::Config("label space is empty".into()));
        }
        for t in &space {
            if self.typer.label_index(t.as_str()).is_none() {
                return Err(Error::UnknownLabel(t.as_str().to_string()));
            }
        }
        self.label_space = space;
        Ok(self)
    }

    pub fn label_space(&self) -> &[InfoType] {
        &self.label_space
    }

    /// Number of typer invocations since construction or load.
    pub fn typer_calls(&self) -> usize {
        self.typer_calls.load(Ordering::Relaxed)
    }

    /// Hash over both models' parameters.
    pub fn parameter_hash(&self) -> String {
        sha256_hex(format!("{}:{}", self.gate.parameter_hash(), self.typer.parameter_hash()).as_bytes())
    }

    fn allowed(&self) -> Vec<bool> {
        self.typer.labels.iter().map(|l| self.label_space.iter().any(|t| t.as_str() == l)).collect()
    }

    fn check_provider(&self, snapshot: &Snapshot<'_>) -> Result<()> {
        if let Featurization::Embedding { model_tag, .. } = &self.featurization {
            let provider =
                snapshot.provider.ok_or_else(|| Error::Config("embedding pipeline needs a provider".into()))?;
            if provider.model_tag() != model_tag {
                return Err(Error::ModelTagMismatch {
                    expected: model_tag.clone(),
                    found: provider.model_tag().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Raw feature vectors (dense pipelines only).
    pub fn feature_vectors(
        &self,
        reports: &[&ElectionReport],
        snapshot: &Snapshot<'_>,
        visible: Visibility<'_>,
    ) -> Result<Vec<FeatureVector>> {
        let Featurization::Embedding { features, .. } = &self.featurization else {
            return Err(Error::Config("sparse pipelines have no dense feature vectors".into()));
        };
        self.check_provider(snapshot)?;
        let provider = snapshot.provider.expect("checked");
        let texts: Vec<&str> = reports.iter().map(|r| r.text.as_str()).collect();
        provider.prefetch(&texts)?;
        reports
            .par_iter()
            .map(|r| featurize_report(r, snapshot.timeline, visible, provider, snapshot.election_dates, features))
            .collect()
    }

    /// Model inputs for `reports`, with context drawn from `visible`.
    pub fn inputs(
        &self,
        reports: &[&ElectionReport],
        snapshot: &Snapshot<'_>,
        visible: Visibility<'_>,
    ) -> Result<Inputs> {
        match &self.featurization {
            Featurization::Embedding { features, days, .. } => {
                let fvs = self.feature_vectors(reports, snapshot, visible)?;
                Ok(Inputs::Dense(crate::features::dense_matrix(&fvs, days.as_ref(), features.toggles)?))
            }
            Featurization::Sparse { vectorizer, counts } => {
                let assets = TextAssets::default();
                Ok(Inputs::Sparse(
                    reports
                        .iter()
                        .map(|r| {
                            let toks = tokenize_report(&r.id, &r.text, &assets);
                            if *counts {
                                vectorizer.transform_counts(&toks)
                            } else {
                                vectorizer.transform(&toks)
                            }
                        })
                        .collect(),
                ))
            }
        }
    }

    /// Typer label per row, restricted to the label space.
    pub fn type_inputs(&self, inputs: &Inputs) -> Result<Vec<(InfoType, Vec<f64>)>> {
        let allowed = self.allowed();
        (0..inputs.n_rows())
            .map(|i| {
                self.typer_calls.fetch_add(1, Ordering::Relaxed);
                let mut scores = vec![0.0; self.typer.n_classes()];
                inputs.scores(&self.typer, i, &mut scores);
                let best =
                    masked_argmax(&scores, &allowed).ok_or_else(|| Error::Config("label space is empty".into()))?;
                let t = self.typer.labels[best].parse().map_err(Error::InvalidModel)?;
                Ok((t, scores))
            })
            .collect()
    }

    /// Gate then typer for each row; the typer runs only on gated rows.
    pub fn classify_inputs(&self, inputs: &Inputs) -> Result<Vec<Decision>> {
        let informative = self.gate.label_index(GATE_LABELS[0]).expect("gate labels validated");
        let allowed = self.allowed();
        let mut out = Vec::with_capacity(inputs.n_rows());
        let mut gate_scores = vec![0.0; self.gate.n_classes()];
        for i in 0..inputs.n_rows() {
            inputs.scores(&self.gate, i, &mut gate_scores);
            let gate_label = masked_argmax(&gate_scores, &[true, true]).unwrap();
            if gate_label != informative {
                out.push(Decision::NonInformative { gate_scores: gate_scores.clone() });
                continue;
            }
            self.typer_calls.fetch_add(1, Ordering::Relaxed);
            let mut scores = vec![0.0; self.typer.n_classes()];
            inputs.scores(&self.typer, i, &mut scores);
            let best = masked_argmax(&scores, &allowed).ok_or_else(|| Error::Config("label space is empty".into()))?;
            out.push(Decision::Informative {
                info_type: self.typer.labels[best].parse().map_err(Error::InvalidModel)?,
                gate_scores: gate_scores.clone(),
                scores: self.typer.labels.iter().cloned().zip(scores).collect(),
            });
        }
        Ok(out)
    }

    pub fn classify(&self, report: &ElectionReport, snapshot: &Snapshot<'_>) -> Result<Decision> {
        let inputs = self.inputs(&[report], snapshot, Visibility::All)?;
        Ok(self.classify_inputs(&inputs)?.remove(0))
    }

    pub fn classify_batch(&self, reports: &[&ElectionReport], snapshot: &Snapshot<'_>) -> Result<Vec<Decision>> {
        let inputs = self.inputs(reports, snapshot, Visibility::All)?;
        self.classify_inputs(&inputs)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config = BundleConfig {
            schema_version: BUNDLE_SCHEMA_VERSION,
            featurization: self.featurization.clone(),
            label_space: self.label_space.clone(),
            provenance: self.provenance.clone(),
        };
        let contents = [self.gate.to_json(), self.typer.to_json(), serde_json::to_string_pretty(&config)?];
        let mut files = BTreeMap::new();
        for (name, body) in BUNDLE_FILES.iter().zip(&contents) {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            files.insert(name.to_string(), sha256_hex(body.as_bytes()));
        }
        let manifest = Manifest { schema_version: BUNDLE_SCHEMA_VERSION, files };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let corrupt = |path: &Path, reason: String| Error::Corrupt { path: path.to_path_buf(), reason };
        let mpath = dir.join("manifest.json");
        let raw = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let version: serde_json::Value = serde_json::from_str(&raw).map_err(|e| corrupt(&mpath, e.to_string()))?;
        if let Some(found) = version.get("schema_version").and_then(|v| v.as_u64()) {
            if found > u64::from(BUNDLE_SCHEMA_VERSION) {
                return Err(Error::VersionMismatch { found: found as u32, supported: BUNDLE_SCHEMA_VERSION });
            }
        }
        let manifest: Manifest = serde_json::from_value(version).map_err(|e| corrupt(&mpath, e.to_string()))?;

        let mut bodies = Vec::new();
        for name in BUNDLE_FILES {
            let path = dir.join(name);
            let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let expected = manifest.files.get(name).ok_or_else(|| corrupt(&mpath, format!("manifest lacks {name}")))?;
            if *expected != sha256_hex(body.as_bytes()) {
                return Err(corrupt(&path, "content hash does not match manifest".into()));
            }
            bodies.push((path, body));
        }
        let gate = LinearModel::from_json(&bodies[0].1).map_err(|e| corrupt(&bodies[0].0, e.to_string()))?;
        let typer = LinearModel::from_json(&bodies[1].1).map_err(|e| corrupt(&bodies[1].0, e.to_string()))?;
        let config: BundleConfig =
            serde_json::from_str(&bodies[2].1).map_err(|e| corrupt(&bodies[2].0, e.to_string()))?;
        if config.schema_version > BUNDLE_SCHEMA_VERSION {
            return Err(Error::VersionMismatch { found: config.schema_version, supported: BUNDLE_SCHEMA_VERSION });
        }
        Self::new(gate, typer, config.featurization, config.label_space, config.provenance)
    }
}

/// Restricted argmax over a typer's raw scores, exposed for callers that
/// already hold scores (and for testing the masking rule in isolation).
pub fn restricted_label(typer_labels: &[String], scores: &[f64], space: &[InfoType]) -> Option<InfoType> {
    let allowed: Vec<bool> = typer_labels.iter().map(|l| space.iter().any(|t| t.as_str() == l)).collect();
    masked_argmax(scores, &allowed).and_then(|i| typer_labels[i].parse().ok())
}

/// Dense single-row view, used by the FFI layer.
pub fn dense_row(row: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, row.len()), row).expect("row shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LossKind;
    use crate::vectorize::{fit_tfidf, TfidfConfig};

    fn sparse_pipeline() -> TwoStepPipeline {
        let docs: Vec<_> = ["queue", "riot", "opinion", "rally"]
            .iter()
            .map(|w| crate::textprep::TokenSequence { tokens: vec![w.to_string()], source_id: String::new() })
            .collect();
        let vec = fit_tfidf(&docs, TfidfConfig::default()).unwrap();
        let d = vec.dim();
        let idx = |w: &str| vec.index(w).unwrap();
        let mut gate =
            LinearModel::zeros(LossKind::WeightedSoftmaxCe, GATE_LABELS.iter().map(|s| s.to_string()).collect(), d)
                .unwrap();
        gate.weights[[1, idx("opinion")]] = 5.0;
        let typer_labels: Vec<String> = InfoType::ALL.iter().map(|t| t.as_str().to_string()).collect();
        let mut typer = LinearModel::zeros(LossKind::WeightedSoftmaxCe, typer_labels, d).unwrap();
        // PoliticalRallies row 0, VotingIssues 1, PositiveEvents 3
        typer.weights[[1, idx("queue")]] = 5.0;
        typer.weights[[0, idx("rally")]] = 5.0;
        typer.weights[[3, idx("rally")]] = 4.0;
        TwoStepPipeline::new(
            gate,
            typer,
            Featurization::Sparse { vectorizer: vec, counts: false },
            InfoType::ALL.to_vec(),
            Provenance::default(),
        )
        .unwrap()
    }

    fn report(id: &str, text: &str) -> ElectionReport {
        ElectionReport {
            id: id.into(),
            text: text.into(),
            timestamp: chrono::DateTime::parse_from_rfc3339("2022-08-09T10:00:00Z").unwrap().into(),
            channel: crate::corpus::Channel::Sms,
            language: crate::corpus::Language::En,
            deployment: "ke-2022".into(),
            raw_label: None,
            has_media: false,
        }
    }

    fn snapshot_parts() -> (Timeline, HashMap<String, NaiveDate>) {
        (Timeline::new([]), HashMap::new())
    }

    #[test]
    fn gate_blocks_typer() {
        let p = sparse_pipeline();
        let (tl, dates) = snapshot_parts();
        let snap = Snapshot { timeline: &tl, election_dates: &dates, provider: None };
        let d = p.classify(&report("1", "opinion"), &snap).unwrap();
        assert!(!d.is_informative());
        assert_eq!(p.typer_calls(), 0);
        let d = p.classify(&report("2", "queue"), &snap).unwrap();
        assert_eq!(d.info_type(), Some(InfoType::VotingIssues));
        assert_eq!(p.typer_calls(), 1);
    }

    #[test]
    fn masked_label_space() {
        let p = sparse_pipeline();
        let (tl, dates) = snapshot_parts();
        let snap = Snapshot { timeline: &tl, election_dates: &dates, provider: None };
        let d = p.classify(&report("1", "rally"), &snap).unwrap();
        assert_eq!(d.info_type(), Some(InfoType::PoliticalRallies));
        let ng = p
            .with_label_space(vec![
                InfoType::VotingIssues,
                InfoType::CountingResults,
                InfoType::PositiveEvents,
                InfoType::SecurityIssues,
            ])
            .unwrap();
        let d = ng.classify(&report("1", "rally"), &snap).unwrap();
        assert_eq!(d.info_type(), Some(InfoType::PositiveEvents));
    }

    #[test]
    fn restricted_argmax_on_constructed_scores() {
        let labels: Vec<String> = ["PoliticalRallies", "PositiveEvents", "VotingIssues"].map(String::from).to_vec();
        let scores = [0.9, 0.8, 0.1];
        assert_eq!(restricted_label(&labels, &scores, &InfoType::ALL), Some(InfoType::PoliticalRallies));
        assert_eq!(
            restricted_label(&labels, &scores, &[InfoType::PositiveEvents, InfoType::VotingIssues]),
            Some(InfoType::PositiveEvents)
        );
    }

    #[test]
    fn invalid_construction() {
        let p = sparse_pipeline();
        assert!(p.clone().with_label_space(vec![]).is_err());
        let mut bad_gate = p.gate.clone();
        bad_gate.labels = vec!["A".into(), "B".into()];
        assert!(TwoStepPipeline::new(
            bad_gate,
            p.typer.clone(),
            p.featurization.clone(),
            InfoType::ALL.to_vec(),
            Provenance::default()
        )
        .is_err());
    }

    #[test]
    fn bundle_round_trip_and_errors() {
        let p = sparse_pipeline();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let back = TwoStepPipeline::load(dir.path()).unwrap();
        let (tl, dates) = snapshot_parts();
        let snap = Snapshot { timeline: &tl, election_dates: &dates, provider: None };
        for text in ["queue", "riot", "opinion", "rally queue", "unknown words"] {
            assert_eq!(
                p.classify(&report("x", text), &snap).unwrap(),
                back.classify(&report("x", text), &snap).unwrap()
            );
        }

        let typer = dir.path().join("typer.json");
        let body = fs::read_to_string(&typer).unwrap();
        fs::write(&typer, &body[..body.len() / 2]).unwrap();
        assert!(matches!(TwoStepPipeline::load(dir.path()), Err(Error::Corrupt { .. })));
        fs::write(&typer, &body).unwrap();

        let mpath = dir.path().join("manifest.json");
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
        m["schema_version"] = serde_json::json!(BUNDLE_SCHEMA_VERSION + 1);
        fs::write(&mpath, m.to_string()).unwrap();
        let err = TwoStepPipeline::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 2, supported: 1 }));
        assert!(err.to_string().contains('2') && err.to_string().contains('1'));
    }
}
