//! Context, temporal and sentiment features assembled into dense vectors.
//!
//! Dense layout (1542 values):
//! `[text_emb (768) | context_emb (768) | days | hour_sin | hour_cos | pos | neu | neg]`.
//! Disabled feature groups are written as zeros so the layout never changes.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ElectionReport;
use crate::embedprov::{Provider, SentimentTriple, EMBEDDING_DIM};
use crate::error::{Error, Result};

pub const CONTEXT_SIZE: usize = 3;
pub const FEATURE_DIM: usize = 2 * EMBEDDING_DIM + 1 + 2 + 3;

const CONTEXT_OFFSET: usize = EMBEDDING_DIM;
const DAYS_OFFSET: usize = 2 * EMBEDDING_DIM;
const HOUR_OFFSET: usize = DAYS_OFFSET + 1;
const SENTIMENT_OFFSET: usize = HOUR_OFFSET + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureToggles {
    pub context: bool,
    pub temporal: bool,
    pub sentiment: bool,
}

impl FeatureToggles {
    pub const ALL: FeatureToggles = FeatureToggles { context: true, temporal: true, sentiment: true };
    pub const TEXT_ONLY: FeatureToggles = FeatureToggles { context: false, temporal: false, sentiment: false };
}

impl Default for FeatureToggles {
    fn default() -> Self {
        FeatureToggles::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub toggles: FeatureToggles,
    pub context_size: usize,
    /// Offset applied to UTC timestamps before the hour and date are read.
    pub utc_offset_minutes: i32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { toggles: FeatureToggles::ALL, context_size: CONTEXT_SIZE, utc_offset_minutes: 0 }
    }
}

/// Reports ordered by timestamp (ties by id), with an id index.
#[derive(Debug, Clone)]
pub struct Timeline {
    reports: Vec<ElectionReport>,
    position: HashMap<String, usize>,
}

impl Timeline {
    pub fn new(reports: impl IntoIterator<Item = ElectionReport>) -> Self {
        let mut reports: Vec<ElectionReport> = reports.into_iter().collect();
        reports.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
        let position = reports.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        Timeline { reports, position }
    }

    pub fn get(&self, id: &str) -> Option<&ElectionReport> {
        self.position.get(id).map(|&i| &self.reports[i])
    }

    pub fn reports(&self) -> &[ElectionReport] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }
}

/// Which reports may serve as context.
#[derive(Debug, Clone, Copy)]
pub enum Visibility<'a> {
    All,
    Only(&'a HashSet<String>),
}

impl Visibility<'_> {
    fn allows(&self, id: &str) -> bool {
        match self {
            Visibility::All => true,
            Visibility::Only(set) => set.contains(id),
        }
    }
}

/// The `k` most recent visible reports of the same deployment with a
/// timestamp strictly before the target's, in chronological order.
pub fn build_context(target: &str, timeline: &Timeline, visible: Visibility<'_>, k: usize) -> Result<Vec<String>> {
    let report = timeline.get(target).ok_or_else(|| Error::UnknownReport(target.to_string()))?;
    Ok(context_for(report, timeline, visible, k))
}

/// As [`build_context`], for a report that need not be in the timeline.
pub fn context_for(report: &ElectionReport, timeline: &Timeline, visible: Visibility<'_>, k: usize) -> Vec<String> {
    let end = timeline.reports.partition_point(|r| r.timestamp < report.timestamp);
    let mut out = Vec::with_capacity(k);
    for r in timeline.reports[..end].iter().rev() {
        if out.len() == k {
            break;
        }
        if r.deployment == report.deployment && r.id != report.id && visible.allows(&r.id) {
            out.push(r.id.clone());
        }
    }
    out.reverse();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalFeatures {
    pub days_to_election: u32,
    pub hour_sin: f64,
    pub hour_cos: f64,
}

/// Cyclic encoding of an hour of day; `h` and `h + 24` coincide.
pub fn hour_encoding(hour: u32) -> (f64, f64) {
    let angle = 2.0 * PI * f64::from(hour % 24) / 24.0;
    (angle.sin(), angle.cos())
}

pub fn temporal_features(ts: DateTime<Utc>, election_date: NaiveDate, utc_offset_minutes: i32) -> TemporalFeatures {
    let local = ts.naive_utc() + Duration::minutes(i64::from(utc_offset_minutes));
    let days = (local.date() - election_date).num_days().unsigned_abs();
    let (hour_sin, hour_cos) = hour_encoding(local.hour());
    TemporalFeatures { days_to_election: u32::try_from(days).unwrap_or(u32::MAX), hour_sin, hour_cos }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub report_id: String,
    pub text_emb: Vec<f64>,
    /// Mean of the context embeddings, zero when there is no context.
    pub context_emb: Vec<f64>,
    pub days_to_election: u32,
    pub hour_sin: f64,
    pub hour_cos: f64,
    pub sentiment: SentimentTriple,
}

/// Mean and standard deviation of `days_to_election` over a training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayStandardizer {
    pub mean: f64,
    pub std: f64,
}

impl DayStandardizer {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self> {
        let days: Vec<f64> = train.into_iter().map(|f| f64::from(f.days_to_election)).collect();
        if days.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = days.len() as f64;
        let mean = days.iter().sum::<f64>() / n;
        let var = days.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(DayStandardizer { mean, std })
    }

    pub fn apply(&self, days: u32) -> f64 {
        (f64::from(days) - self.mean) / self.std
    }
}

pub fn mean_embedding(embs: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; EMBEDDING_DIM];
    if embs.is_empty() {
        return out;
    }
    for e in embs {
        for (o, v) in out.iter_mut().zip(e.iter()) {
            *o += v;
        }
    }
    let n = embs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

pub fn assemble_features(
    report: &ElectionReport,
    provider: &dyn Provider,
    context: &[&ElectionReport],
    election_date: NaiveDate,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    let wrap = |e: Error| Error::ForReport { id: report.id.clone(), source: Box::new(e) };
    let text = provider.embedding(&report.text).map_err(wrap)?;
    let ctx: Vec<_> = context.iter().map(|r| provider.embedding(&r.text)).collect::<Result<_>>().map_err(wrap)?;
    let ctx_refs: Vec<&[f64]> = ctx.iter().map(|e| e.vector.as_slice()).collect();
    let sentiment = provider.sentiment(&report.text).map_err(wrap)?;
    let t = temporal_features(report.timestamp, election_date, config.utc_offset_minutes);
    Ok(FeatureVector {
        report_id: report.id.clone(),
        text_emb: text.vector.clone(),
        context_emb: mean_embedding(&ctx_refs),
        days_to_election: t.days_to_election,
        hour_sin: t.hour_sin,
        hour_cos: t.hour_cos,
        sentiment,
    })
}

impl FeatureVector {
    /// Dense row in the fixed layout. `stats` is required when temporal
    /// features are enabled.
    pub fn write_dense(&self, out: &mut [f64], stats: Option<&DayStandardizer>, toggles: FeatureToggles) -> Result<()> {
        if out.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch { expected: FEATURE_DIM, found: out.len() });
        }
        out.fill(0.0);
        out[..EMBEDDING_DIM].copy_from_slice(&self.text_emb);
        if toggles.context {
            out[CONTEXT_OFFSET..DAYS_OFFSET].copy_from_slice(&self.context_emb);
        }
        if toggles.temporal {
            let stats = stats.ok_or(Error::MissingStandardizer)?;
            out[DAYS_OFFSET] = stats.apply(self.days_to_election);
            out[HOUR_OFFSET] = self.hour_sin;
            out[HOUR_OFFSET + 1] = self.hour_cos;
        }
        if toggles.sentiment {
            out[SENTIMENT_OFFSET..].copy_from_slice(&self.sentiment.to_array());
        }
        Ok(())
    }

    pub fn to_dense(&self, stats: Option<&DayStandardizer>, toggles: FeatureToggles) -> Result<Vec<f64>> {
        let mut v = vec![0.0; FEATURE_DIM];
        self.write_dense(&mut v, stats, toggles)?;
        Ok(v)
    }
}

pub fn dense_matrix(
    rows: &[FeatureVector],
    stats: Option<&DayStandardizer>,
    toggles: FeatureToggles,
) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((rows.len(), FEATURE_DIM));
    for (fv, mut row) in rows.iter().zip(m.rows_mut()) {
        fv.write_dense(row.as_slice_mut().expect("standard layout"), stats, toggles)?;
    }
    Ok(m)
}

/// Builds feature vectors for `targets`, drawing context from `timeline`
/// restricted to `visible`. Output order follows `targets`.
pub fn featurize(
    targets: &[&str],
    timeline: &Timeline,
    visible: Visibility<'_>,
    provider: &dyn Provider,
    election_dates: &HashMap<String, NaiveDate>,
    config: &FeatureConfig,
) -> Result<Vec<FeatureVector>> {
    let texts: Vec<&str> = timeline.reports.iter().map(|r| r.text.as_str()).collect();
    provider.prefetch(&texts)?;
    targets
        .par_iter()
        .map(|id| {
            let report = timeline.get(id).ok_or_else(|| Error::UnknownReport(id.to_string()))?;
            featurize_report(report, timeline, visible, provider, election_dates, config)
        })
        .collect()
}

/// Feature vector for one report, which need not be part of `timeline`.
pub fn featurize_report(
    report: &ElectionReport,
    timeline: &Timeline,
    visible: Visibility<'_>,
    provider: &dyn Provider,
    election_dates: &HashMap<String, NaiveDate>,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    let date = *election_dates
        .get(&report.deployment)
        .ok_or_else(|| Error::InvalidDeployment(format!("no election date for `{}`", report.deployment)))?;
    let ctx_ids = context_for(report, timeline, visible, config.context_size);
    let ctx: Vec<&ElectionReport> =
        ctx_ids.iter().map(|c| timeline.get(c).expect("context id from timeline")).collect();
    assemble_features(report, provider, &ctx, date, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Channel, Language};
    use crate::embedprov::{FileProvider, FixtureRecord};
    use chrono::TimeZone;

    fn rep(id: &str, hour: u32) -> ElectionReport {
        ElectionReport {
            id: id.into(),
            text: format!("text {id}"),
            timestamp: Utc.with_ymd_and_hms(2022, 8, 9, hour, 0, 0).unwrap(),
            channel: Channel::Sms,
            language: Language::En,
            deployment: "ke-2022".into(),
            raw_label: Some("Voting Issues".into()),
            has_media: false,
        }
    }

    fn timeline() -> Timeline {
        Timeline::new([rep("r3", 3), rep("r1", 1), rep("r4", 4), rep("r2", 2)])
    }

    #[test]
    fn context_exactly_k() {
        let c = build_context("r4", &timeline(), Visibility::All, 3).unwrap();
        assert_eq!(c, ["r1", "r2", "r3"]);
    }

    #[test]
    fn context_fewer_than_k() {
        assert_eq!(build_context("r2", &timeline(), Visibility::All, 3).unwrap(), ["r1"]);
        assert!(build_context("r1", &timeline(), Visibility::All, 3).unwrap().is_empty());
    }

    #[test]
    fn context_train_vs_test_visibility() {
        let train: HashSet<String> = ["r1", "r3"].map(String::from).into();
        let tl = timeline();
        assert_eq!(build_context("r3", &tl, Visibility::Only(&train), 3).unwrap(), ["r1"]);
        assert_eq!(build_context("r3", &tl, Visibility::All, 3).unwrap(), ["r1", "r2"]);
    }

    #[test]
    fn context_excludes_same_timestamp_and_other_deployments() {
        let mut other = rep("x", 2);
        other.deployment = "ng-2023".into();
        let tl = Timeline::new([rep("a", 1), rep("b", 2), rep("c", 2), other]);
        assert_eq!(build_context("c", &tl, Visibility::All, 3).unwrap(), ["a"]);
        assert!(matches!(build_context("zz", &tl, Visibility::All, 3), Err(Error::UnknownReport(_))));
    }

    #[test]
    fn temporal_examples() {
        let ed = NaiveDate::from_ymd_opt(2022, 8, 9).unwrap();
        let t = temporal_features(Utc.with_ymd_and_hms(2022, 8, 9, 0, 0, 0).unwrap(), ed, 0);
        assert_eq!((t.days_to_election, t.hour_sin, t.hour_cos), (0, 0.0, 1.0));
        let t = temporal_features(Utc.with_ymd_and_hms(2022, 8, 9, 6, 0, 0).unwrap(), ed, 0);
        assert!((t.hour_sin - 1.0).abs() < 1e-12 && t.hour_cos.abs() < 1e-12);
        let t = temporal_features(Utc.with_ymd_and_hms(2022, 8, 12, 18, 30, 0).unwrap(), ed, 0);
        assert_eq!(t.days_to_election, 3);
        assert!((t.hour_sin + 1.0).abs() < 1e-12 && t.hour_cos.abs() < 1e-12);
        let t = temporal_features(Utc.with_ymd_and_hms(2022, 8, 6, 23, 59, 0).unwrap(), ed, 0);
        assert_eq!(t.days_to_election, 3);
    }

    #[test]
    fn timezone_offset_shifts_hour_and_day() {
        let ed = NaiveDate::from_ymd_opt(2022, 8, 9).unwrap();
        let ts = Utc.with_ymd_and_hms(2022, 8, 8, 22, 0, 0).unwrap();
        let t = temporal_features(ts, ed, 180);
        assert_eq!(t.days_to_election, 0);
        assert_eq!((t.hour_sin, t.hour_cos), hour_encoding(1));
    }

    #[test]
    fn context_mean() {
        let e1 = vec![1.0; EMBEDDING_DIM];
        let e2 = vec![3.0; EMBEDDING_DIM];
        assert_eq!(mean_embedding(&[]), vec![0.0; EMBEDDING_DIM]);
        assert_eq!(mean_embedding(&[&e1, &e2]), vec![2.0; EMBEDDING_DIM]);
        let e = vec![0.25; EMBEDDING_DIM];
        assert_eq!(mean_embedding(&[&e, &e, &e]), e);
    }

    fn provider_for(reports: &[ElectionReport]) -> FileProvider {
        FileProvider::from_records(reports.iter().enumerate().map(|(i, r)| {
            FixtureRecord::new(
                &r.text,
                (0..EMBEDDING_DIM).map(|j| ((i * 31 + j) % 7) as f64 * 0.1).collect(),
                SentimentTriple::new(0.2, 0.5, 0.3).unwrap(),
                "t",
            )
        }))
        .unwrap()
    }

    #[test]
    fn dense_layout() {
        let tl = timeline();
        let p = provider_for(tl.reports());
        let dates: HashMap<_, _> = [("ke-2022".to_string(), NaiveDate::from_ymd_opt(2022, 8, 7).unwrap())].into();
        let fvs = featurize(&["r4", "r1"], &tl, Visibility::All, &p, &dates, &FeatureConfig::default()).unwrap();
        assert_eq!(fvs[0].report_id, "r4");
        assert_eq!(fvs[1].context_emb, vec![0.0; EMBEDDING_DIM]);
        let stats = DayStandardizer { mean: 1.0, std: 2.0 };
        let d = fvs[0].to_dense(Some(&stats), FeatureToggles::ALL).unwrap();
        assert_eq!(d.len(), FEATURE_DIM);
        assert_eq!(FEATURE_DIM, 1542);
        assert_eq!(&d[..EMBEDDING_DIM], fvs[0].text_emb.as_slice());
        assert_eq!(d[DAYS_OFFSET], 0.5);
        assert_eq!(&d[SENTIMENT_OFFSET..], &[0.2, 0.5, 0.3]);
        let t = fvs[0].to_dense(None, FeatureToggles::TEXT_ONLY).unwrap();
        assert!(t[EMBEDDING_DIM..].iter().all(|v| *v == 0.0));
        assert!(matches!(fvs[0].to_dense(None, FeatureToggles::ALL), Err(Error::MissingStandardizer)));
    }

    #[test]
    fn missing_embedding_names_report() {
        let tl = timeline();
        let p = provider_for(&tl.reports()[..2]);
        let dates: HashMap<_, _> = [("ke-2022".to_string(), NaiveDate::from_ymd_opt(2022, 8, 7).unwrap())].into();
        let err = featurize(&["r4"], &tl, Visibility::All, &p, &dates, &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ForReport { ref id, .. } if id == "r4"));
    }

    #[test]
    fn standardizer_constant_days() {
        let fv = FeatureVector {
            report_id: "a".into(),
            text_emb: vec![],
            context_emb: vec![],
            days_to_election: 4,
            hour_sin: 0.0,
            hour_cos: 1.0,
            sentiment: SentimentTriple::NEUTRAL,
        };
        let s = DayStandardizer::fit([&fv, &fv]).unwrap();
        assert_eq!(s, DayStandardizer { mean: 4.0, std: 1.0 });
    }
}
