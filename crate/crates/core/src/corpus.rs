//! Election report data model, ingestion, filtering and taxonomy normalization.
//!
//! Reports arrive from several deployments, each with its own source taxonomy.
//! A [`Deployment`] maps every source label onto one canonical [`InfoType`], onto
//! the non-informative class, or excludes it from both tasks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, MalformedRecord, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Sms,
    Whatsapp,
    Twitter,
    Web,
    Ussd,
    Unknown,
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sms" => Ok(Channel::Sms),
            "whatsapp" => Ok(Channel::Whatsapp),
            "twitter" => Ok(Channel::Twitter),
            "web" => Ok(Channel::Web),
            "ussd" => Ok(Channel::Ussd),
            "unknown" | "" => Ok(Channel::Unknown),
            other => Err(format!("unknown channel `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Sw,
    Other,
    Unknown,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Sw => "sw",
            Language::Other => "other",
            Language::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "sw" => Ok(Language::Sw),
            "other" => Ok(Language::Other),
            "unknown" | "" => Ok(Language::Unknown),
            other => Err(format!("unknown language `{other}`")),
        }
    }
}

/// One crowdsourced observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionReport {
    pub id: String,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    pub channel: Channel,
    pub language: Language,
    pub deployment: String,
    pub raw_label: Option<String>,
    pub has_media: bool,
}

/// Canonical information types shared by all deployments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InfoType {
    PoliticalRallies,
    VotingIssues,
    CountingResults,
    PositiveEvents,
    SecurityIssues,
}

impl InfoType {
    pub const ALL: [InfoType; 5] = [
        InfoType::PoliticalRallies,
        InfoType::VotingIssues,
        InfoType::CountingResults,
        InfoType::PositiveEvents,
        InfoType::SecurityIssues,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InfoType::PoliticalRallies => "PoliticalRallies",
            InfoType::VotingIssues => "VotingIssues",
            InfoType::CountingResults => "CountingResults",
            InfoType::PositiveEvents => "PositiveEvents",
            InfoType::SecurityIssues => "SecurityIssues",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            InfoType::PoliticalRallies => "Political Rallies",
            InfoType::VotingIssues => "Voting Issues",
            InfoType::CountingResults => "Counting and Results",
            InfoType::PositiveEvents => "Positive Events",
            InfoType::SecurityIssues => "Security Issues",
        }
    }
}

impl fmt::Display for InfoType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InfoType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        InfoType::ALL
            .into_iter()
            .find(|t| t.as_str() == s || t.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown information type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Informativeness {
    Informative,
    NonInformative,
    Excluded,
}

impl Informativeness {
    pub fn as_str(self) -> &'static str {
        match self {
            Informativeness::Informative => "Informative",
            Informativeness::NonInformative => "NonInformative",
            Informativeness::Excluded => "Excluded",
        }
    }
}

/// Gate label names, in declared order.
pub const GATE_LABELS: [&str; 2] = ["Informative", "NonInformative"];

/// Where a source label lands in the canonical label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelTarget {
    Type(InfoType),
    NonInformative,
    Excluded,
}

impl LabelTarget {
    fn to_wire(self) -> String {
        match self {
            LabelTarget::Type(t) => t.as_str().to_string(),
            LabelTarget::NonInformative => "NONINFORMATIVE".to_string(),
            LabelTarget::Excluded => "EXCLUDED".to_string(),
        }
    }

    fn from_wire(s: &str) -> std::result::Result<Self, String> {
        match s {
            "NONINFORMATIVE" => Ok(LabelTarget::NonInformative),
            "EXCLUDED" => Ok(LabelTarget::Excluded),
            other => other.parse().map(LabelTarget::Type),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub report_id: String,
    pub informative: Informativeness,
    pub info_type: Option<InfoType>,
}

impl LabelAssignment {
    /// Joint label used for stratification: the info type for informative
    /// reports, `NonInformative` otherwise.
    pub fn joint_label(&self) -> &'static str {
        match self.info_type {
            Some(t) => t.as_str(),
            None => self.informative.as_str(),
        }
    }
}

/// A deployment's source taxonomy and its mapping onto canonical labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub name: String,
    pub election_date: NaiveDate,
    mapping: BTreeMap<String, LabelTarget>,
}

#[derive(Serialize, Deserialize)]
struct DeploymentFile {
    deployment: String,
    election_date: NaiveDate,
    mapping: BTreeMap<String, String>,
}

impl Deployment {
    pub fn new(
        name: impl Into<String>,
        election_date: NaiveDate,
        mapping: impl IntoIterator<Item = (String, LabelTarget)>,
    ) -> Self {
        Deployment { name: name.into(), election_date, mapping: mapping.into_iter().collect() }
    }

    /// Kenyan (Uchaguzi) taxonomy. The 2017 and 2022 deployments share it.
    pub fn kenya(name: impl Into<String>, election_date: NaiveDate) -> Self {
        use InfoType::*;
        let m = [
            ("Voting Issues", LabelTarget::Type(VotingIssues)),
            ("Staffing Issues", LabelTarget::Type(VotingIssues)),
            ("Polling Station Administration", LabelTarget::Type(VotingIssues)),
            ("Security Issues", LabelTarget::Type(SecurityIssues)),
            ("Counting and Results", LabelTarget::Type(CountingResults)),
            ("Positive Events", LabelTarget::Type(PositiveEvents)),
            ("Political Rallies", LabelTarget::Type(PoliticalRallies)),
            ("Opinions or Others", LabelTarget::NonInformative),
            ("Media Reports", LabelTarget::Excluded),
        ];
        Self::new(name, election_date, m.map(|(k, v)| (k.to_string(), v)))
    }

    pub fn kenya_2017() -> Self {
        Self::kenya("ke-2017", NaiveDate::from_ymd_opt(2017, 8, 8).unwrap())
    }

    pub fn kenya_2022() -> Self {
        Self::kenya("ke-2022", NaiveDate::from_ymd_opt(2022, 8, 9).unwrap())
    }

    /// Nigerian (Uzabe) 2023 taxonomy. It has no political-rallies label.
    pub fn nigeria_2023() -> Self {
        use InfoType::*;
        let m = [
            ("Positive Events", LabelTarget::Type(PositiveEvents)),
            ("Security Issues", LabelTarget::Type(SecurityIssues)),
            ("Sorting, Counting, and Collation", LabelTarget::Type(CountingResults)),
            ("Ballot Issues", LabelTarget::Type(VotingIssues)),
            ("Polling Station Administration Issues", LabelTarget::Type(VotingIssues)),
        ];
        Self::new("ng-2023", NaiveDate::from_ymd_opt(2023, 2, 25).unwrap(), m.map(|(k, v)| (k.to_string(), v)))
    }

    pub fn taxonomy(&self) -> impl Iterator<Item = &str> {
        self.mapping.keys().map(String::as_str)
    }

    pub fn target(&self, label: &str) -> Option<LabelTarget> {
        self.mapping.get(label).copied()
    }

    /// Canonical types reachable from this deployment's taxonomy, in enum order.
    pub fn info_types(&self) -> Vec<InfoType> {
        let present: HashSet<InfoType> = self
            .mapping
            .values()
            .filter_map(|t| match t {
                LabelTarget::Type(t) => Some(*t),
                _ => None,
            })
            .collect();
        InfoType::ALL.into_iter().filter(|t| present.contains(t)).collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DeploymentFile = serde_json::from_str(s)?;
        if file.mapping.is_empty() {
            return Err(Error::InvalidDeployment(format!("deployment `{}` has an empty mapping", file.deployment)));
        }
        let mut mapping = BTreeMap::new();
        for (label, target) in file.mapping {
            let t = LabelTarget::from_wire(&target)
                .map_err(|e| Error::InvalidDeployment(format!("label `{label}`: {e}")))?;
            mapping.insert(label, t);
        }
        Ok(Deployment { name: file.deployment, election_date: file.election_date, mapping })
    }

    pub fn to_json(&self) -> String {
        let file = DeploymentFile {
            deployment: self.name.clone(),
            election_date: self.election_date,
            mapping: self.mapping.iter().map(|(k, v)| (k.clone(), v.to_wire())).collect(),
        };
        serde_json::to_string_pretty(&file).expect("deployment serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        ext.parse()
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "ndjson" => Ok(ReportFormat::Jsonl),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// Result of ingesting a report file: parsed reports plus per-record diagnostics.
#[derive(Debug, Default)]
pub struct Loaded {
    pub reports: Vec<ElectionReport>,
    pub malformed: Vec<MalformedRecord>,
}

impl Loaded {
    /// Fails if any record was malformed.
    pub fn into_strict(self) -> Result<Vec<ElectionReport>> {
        if self.malformed.is_empty() {
            Ok(self.reports)
        } else {
            Err(Error::Malformed(self.malformed))
        }
    }
}

/// Wire form shared by both file formats. All fields are strings so that
/// per-field errors can be reported instead of failing the whole row.
#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    id: String,
    #[serde(default)]
    text: Option<String>,
    timestamp: String,
    #[serde(default)]
    channel: Option<String>,
    #[serde(default)]
    language: Option<String>,
    deployment: String,
    #[serde(default)]
    raw_label: Option<String>,
    #[serde(default, deserialize_with = "de_bool_like")]
    has_media: Option<bool>,
}

fn de_bool_like<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<bool>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum B {
        Bool(bool),
        Str(String),
    }
    match Option::<B>::deserialize(d)? {
        None => Ok(None),
        Some(B::Bool(b)) => Ok(Some(b)),
        Some(B::Str(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "" => Ok(None),
            "true" | "1" | "yes" => Ok(Some(true)),
            "false" | "0" | "no" => Ok(Some(false)),
            other => Err(serde::de::Error::custom(format!("invalid boolean `{other}`"))),
        },
    }
}

pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map(|n| n.and_utc())
        .map_err(|_| format!("unparseable timestamp `{s}`"))
}

impl RawRecord {
    fn into_report(self) -> std::result::Result<ElectionReport, String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        let timestamp = parse_timestamp(&self.timestamp)?;
        let channel = self.channel.as_deref().unwrap_or("").parse()?;
        let language = self.language.as_deref().unwrap_or("").parse()?;
        let raw_label = self.raw_label.filter(|l| !l.trim().is_empty());
        Ok(ElectionReport {
            id: self.id,
            text: self.text.unwrap_or_default(),
            timestamp,
            channel,
            language,
            deployment: self.deployment,
            raw_label,
            has_media: self.has_media.unwrap_or(false),
        })
    }

    fn from_report(r: &ElectionReport) -> Self {
        RawRecord {
            id: r.id.clone(),
            text: Some(r.text.clone()),
            timestamp: r.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            channel: Some(serde_json::to_value(r.channel).unwrap().as_str().unwrap().to_string()),
            language: Some(r.language.as_str().to_string()),
            deployment: r.deployment.clone(),
            raw_label: r.raw_label.clone(),
            has_media: Some(r.has_media),
        }
    }
}

/// Reads reports in file order. Malformed records (including duplicate ids)
/// are collected with their line numbers rather than dropped silently.
pub fn load_reports(path: &Path, format: ReportFormat) -> Result<Loaded> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_reports(&bytes, format))
}

pub fn parse_reports(bytes: &[u8], format: ReportFormat) -> Loaded {
    let mut rows: Vec<(usize, std::result::Result<RawRecord, String>)> = Vec::new();
    match format {
        ReportFormat::Jsonl => {
            let text = String::from_utf8_lossy(bytes);
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec = serde_json::from_str::<RawRecord>(line).map_err(|e| e.to_string());
                rows.push((i + 1, rec));
            }
        }
        ReportFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(bytes);
            for rec in rdr.deserialize::<RawRecord>() {
                let line = match &rec {
                    Err(e) => e.position().map(|p| p.line() as usize).unwrap_or(0),
                    Ok(_) => 0,
                };
                rows.push((line, rec.map_err(|e| e.to_string())));
            }
            // csv positions are only exposed on errors; successful rows are
            // numbered from their order after the header.
            for (i, row) in rows.iter_mut().enumerate() {
                if row.1.is_ok() {
                    row.0 = i + 2;
                }
            }
        }
    }

    let mut out = Loaded::default();
    let mut seen = HashSet::new();
    for (line, rec) in rows {
        match rec.and_then(RawRecord::into_report) {
            Ok(r) if !seen.insert(r.id.clone()) => {
                out.malformed.push(MalformedRecord { line, reason: format!("duplicate id `{}`", r.id) })
            }
            Ok(r) => out.reports.push(r),
            Err(reason) => out.malformed.push(MalformedRecord { line, reason }),
        }
    }
    out
}

pub fn write_reports(path: &Path, reports: &[ElectionReport], format: ReportFormat) -> Result<()> {
    let mut buf = Vec::new();
    match format {
        ReportFormat::Jsonl => {
            for r in reports {
                serde_json::to_writer(&mut buf, &RawRecord::from_report(r))?;
                buf.push(b'\n');
            }
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in reports {
                w.serialize(RawRecord::from_report(r)).map_err(|e| Error::InvalidData(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Unlabelled,
    EmptyText,
    Ussd,
    BadTimestamp,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedReport {
    pub id: String,
    pub reason: DropReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Filtered {
    pub kept: Vec<ElectionReport>,
    pub dropped: Vec<DroppedReport>,
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Earliest timestamp accepted; anything before is treated as a placeholder.
pub fn min_valid_year() -> i32 {
    2000
}

/// Drops unlabelled, empty-text, USSD, badly timestamped and duplicate
/// reports. Duplicates are keyed on (whitespace-normalized text, raw label);
/// the earliest report by timestamp is kept, input order breaking ties.
pub fn filter_corpus(reports: &[ElectionReport]) -> Filtered {
    let mut out = Filtered::default();
    let mut reason = vec![None; reports.len()];
    for (i, r) in reports.iter().enumerate() {
        reason[i] = if r.raw_label.is_none() {
            Some(DropReason::Unlabelled)
        } else if r.text.trim().is_empty() {
            Some(DropReason::EmptyText)
        } else if r.channel == Channel::Ussd {
            Some(DropReason::Ussd)
        } else if r.timestamp.year() < min_valid_year() {
            Some(DropReason::BadTimestamp)
        } else {
            None
        };
    }

    let mut winner: HashMap<(String, &str), usize> = HashMap::new();
    for (i, r) in reports.iter().enumerate() {
        if reason[i].is_some() {
            continue;
        }
        let key = (normalize_whitespace(&r.text), r.raw_label.as_deref().unwrap());
        winner
            .entry(key)
            .and_modify(|w| {
                if r.timestamp < reports[*w].timestamp {
                    *w = i;
                }
            })
            .or_insert(i);
    }

    for (i, r) in reports.iter().enumerate() {
        match reason[i] {
            Some(reason) => out.dropped.push(DroppedReport { id: r.id.clone(), reason, duplicate_of: None }),
            None => {
                let key = (normalize_whitespace(&r.text), r.raw_label.as_deref().unwrap());
                let w = winner[&key];
                if w == i {
                    out.kept.push(r.clone());
                } else {
                    out.dropped.push(DroppedReport {
                        id: r.id.clone(),
                        reason: DropReason::Duplicate,
                        duplicate_of: Some(reports[w].id.clone()),
                    });
                }
            }
        }
    }
    out
}

pub fn derive_labels(report: &ElectionReport, deployment: &Deployment) -> Result<LabelAssignment> {
    let label = report
        .raw_label
        .as_deref()
        .ok_or_else(|| Error::UnmappedLabel { label: "<absent>".into(), deployment: deployment.name.clone() })?;
    let target = deployment
        .target(label)
        .ok_or_else(|| Error::UnmappedLabel { label: label.to_string(), deployment: deployment.name.clone() })?;
    let (informative, info_type) = match target {
        LabelTarget::Type(t) => (Informativeness::Informative, Some(t)),
        LabelTarget::NonInformative => (Informativeness::NonInformative, None),
        LabelTarget::Excluded => (Informativeness::Excluded, None),
    };
    Ok(LabelAssignment { report_id: report.id.clone(), informative, info_type })
}

/// A filtered, labelled corpus with excluded reports removed.
#[derive(Debug, Clone, Default)]
pub struct LabelledCorpus {
    pub reports: Vec<ElectionReport>,
    pub labels: Vec<LabelAssignment>,
}

impl LabelledCorpus {
    /// Filters, labels against the matching deployment, and drops `Excluded`.
    pub fn build(reports: &[ElectionReport], deployments: &[Deployment]) -> Result<(Self, Filtered)> {
        let filtered = filter_corpus(reports);
        let by_name: HashMap<&str, &Deployment> = deployments.iter().map(|d| (d.name.as_str(), d)).collect();
        let mut corpus = LabelledCorpus::default();
        for r in &filtered.kept {
            let dep = by_name
                .get(r.deployment.as_str())
                .ok_or_else(|| Error::InvalidDeployment(format!("no mapping for deployment `{}`", r.deployment)))?;
            let a = derive_labels(r, dep)?;
            if a.informative != Informativeness::Excluded {
                corpus.reports.push(r.clone());
                corpus.labels.push(a);
            }
        }
        Ok((corpus, filtered))
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Restricts to informative reports.
    pub fn informative(&self) -> LabelledCorpus {
        let mut out = LabelledCorpus::default();
        for (r, l) in self.reports.iter().zip(&self.labels) {
            if l.informative == Informativeness::Informative {
                out.reports.push(r.clone());
                out.labels.push(l.clone());
            }
        }
        out
    }

    pub fn subset(&self, keep: &HashSet<String>) -> LabelledCorpus {
        let mut out = LabelledCorpus::default();
        for (r, l) in self.reports.iter().zip(&self.labels) {
            if keep.contains(&r.id) {
                out.reports.push(r.clone());
                out.labels.push(l.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn report(id: &str, text: &str, label: Option<&str>, hour: u32) -> ElectionReport {
        ElectionReport {
            id: id.into(),
            text: text.into(),
            timestamp: Utc.with_ymd_and_hms(2022, 8, 9, hour, 0, 0).unwrap(),
            channel: Channel::Sms,
            language: Language::En,
            deployment: "ke-2022".into(),
            raw_label: label.map(String::from),
            has_media: false,
        }
    }

    #[test]
    fn empty_file_loads_nothing() {
        let l = parse_reports(b"", ReportFormat::Jsonl);
        assert!(l.reports.is_empty());
        assert!(l.malformed.is_empty());
        let l = parse_reports(b"", ReportFormat::Csv);
        assert!(l.reports.is_empty() && l.malformed.is_empty());
    }

    #[test]
    fn jsonl_preserves_order() {
        let src = r#"{"id":"c","text":"x","timestamp":"2022-08-09T10:00:00Z","channel":"sms","language":"en","deployment":"ke-2022","raw_label":"Voting Issues","has_media":false}
{"id":"a","text":"y","timestamp":"2022-08-09T09:00:00Z","channel":"twitter","language":"sw","deployment":"ke-2022","raw_label":null,"has_media":true}
{"id":"b","text":"z","timestamp":"2022-08-09T08:00:00Z","channel":"web","language":"en","deployment":"ke-2022","raw_label":"Positive Events","has_media":false}
"#;
        let l = parse_reports(src.as_bytes(), ReportFormat::Jsonl);
        assert!(l.malformed.is_empty());
        let ids: Vec<_> = l.reports.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(l.reports[1].raw_label, None);
        assert!(l.reports[1].has_media);
        assert_eq!(l.reports[1].language, Language::Sw);
    }

    #[test]
    fn bad_timestamp_is_reported_with_line() {
        let src = "id,text,timestamp,channel,language,deployment,raw_label,has_media\n\
                   1,ok,2022-08-09T10:00:00Z,sms,en,ke-2022,Voting Issues,false\n\
                   2,bad,not-a-date,sms,en,ke-2022,Voting Issues,false\n";
        let l = parse_reports(src.as_bytes(), ReportFormat::Csv);
        assert_eq!(l.reports.len(), 1);
        assert_eq!(l.malformed.len(), 1);
        assert_eq!(l.malformed[0].line, 3);
        assert!(matches!(Loaded { ..l }.into_strict(), Err(Error::Malformed(v)) if v.len() == 1));
    }

    #[test]
    fn unknown_format_rejected() {
        assert!(matches!("xml".parse::<ReportFormat>(), Err(Error::UnknownFormat(_))));
    }

    #[test]
    fn duplicate_keeps_earliest() {
        let later = report("late", "queue  is long", Some("Voting Issues"), 10);
        let earlier = report("early", "queue is long", Some("Voting Issues"), 8);
        let f = filter_corpus(&[later, earlier]);
        assert_eq!(f.kept.len(), 1);
        assert_eq!(f.kept[0].id, "early");
        assert_eq!(f.dropped[0].id, "late");
        assert_eq!(f.dropped[0].reason, DropReason::Duplicate);
        assert_eq!(f.dropped[0].duplicate_of.as_deref(), Some("early"));
    }

    #[test]
    fn same_text_different_label_is_not_duplicate() {
        let a = report("a", "t", Some("Voting Issues"), 8);
        let b = report("b", "t", Some("Security Issues"), 9);
        assert_eq!(filter_corpus(&[a, b]).kept.len(), 2);
    }

    #[test]
    fn drop_reasons() {
        let mut ussd = report("u", "hello", Some("Voting Issues"), 1);
        ussd.channel = Channel::Ussd;
        let unl = report("n", "hello", None, 1);
        let empty = report("e", "   ", Some("Voting Issues"), 1);
        let mut old = report("o", "hello", Some("Voting Issues"), 1);
        old.timestamp = Utc.with_ymd_and_hms(1970, 1, 1, 0, 0, 0).unwrap();
        let f = filter_corpus(&[ussd, unl, empty, old]);
        assert!(f.kept.is_empty());
        let reasons: Vec<_> = f.dropped.iter().map(|d| d.reason).collect();
        assert_eq!(
            reasons,
            [DropReason::Ussd, DropReason::Unlabelled, DropReason::EmptyText, DropReason::BadTimestamp]
        );
    }

    #[test]
    fn kenyan_mapping() {
        let ke = Deployment::kenya_2022();
        let a = derive_labels(&report("1", "t", Some("Opinions or Others"), 0), &ke).unwrap();
        assert_eq!(a.informative, Informativeness::NonInformative);
        assert_eq!(a.info_type, None);
        let a = derive_labels(&report("1", "t", Some("Staffing Issues"), 0), &ke).unwrap();
        assert_eq!(a.informative, Informativeness::Informative);
        assert_eq!(a.info_type, Some(InfoType::VotingIssues));
        let a = derive_labels(&report("1", "t", Some("Media Reports"), 0), &ke).unwrap();
        assert_eq!(a.informative, Informativeness::Excluded);
    }

    #[test]
    fn nigerian_mapping() {
        let ng = Deployment::nigeria_2023();
        let a = derive_labels(&report("1", "t", Some("Ballot Issues"), 0), &ng).unwrap();
        assert_eq!(a.info_type, Some(InfoType::VotingIssues));
        let a = derive_labels(&report("1", "t", Some("Sorting, Counting, and Collation"), 0), &ng).unwrap();
        assert_eq!(a.info_type, Some(InfoType::CountingResults));
        assert!(!ng.info_types().contains(&InfoType::PoliticalRallies));
        let err = derive_labels(&report("1", "t", Some("Political Rallies"), 0), &ng).unwrap_err();
        assert!(err.to_string().contains("Political Rallies"));
    }

    #[test]
    fn deployment_file_round_trip() {
        let ke = Deployment::kenya_2017();
        let back = Deployment::from_json(&ke.to_json()).unwrap();
        assert_eq!(ke, back);
        let bad = r#"{"deployment":"x","election_date":"2020-01-01","mapping":{"A":"Nope"}}"#;
        assert!(matches!(Deployment::from_json(bad), Err(Error::InvalidDeployment(_))));
    }
}
