//! TF-IDF vectorization over word n-grams.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::TokenSequence;

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|(_, v)| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub ngram_range: (usize, usize),
    /// Minimum document frequency (absolute count).
    pub min_df: usize,
    /// Maximum document frequency as a fraction of documents.
    pub max_df: f64,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig { ngram_range: (1, 1), min_df: 1, max_df: 1.0 }
    }
}

impl TfidfConfig {
    pub fn ngrams(lo: usize, hi: usize) -> Self {
        TfidfConfig { ngram_range: (lo, hi), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: HashMap<String, usize>,
    idf: Vec<f64>,
    pub ngram_range: (usize, usize),
    pub doc_count: usize,
}

fn ngrams(tokens: &[String], (lo, hi): (usize, usize)) -> impl Iterator<Item = String> + '_ {
    (lo..=hi).flat_map(move |n| tokens.windows(n).map(|w| w.join(" ")))
}

fn check_range((lo, hi): (usize, usize)) -> Result<()> {
    if lo >= 1 && lo <= hi && hi <= 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("n-gram range ({lo}, {hi}) must satisfy 1 <= lo <= hi <= 2")))
    }
}

/// Fits vocabulary and smoothed idf, `ln((1 + N) / (1 + df)) + 1`.
///
/// Column indices follow the lexicographic order of n-grams, so the fitted
/// model does not depend on corpus order.
pub fn fit_tfidf(corpus: &[TokenSequence], config: TfidfConfig) -> Result<TfidfModel> {
    check_range(config.ngram_range)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let unique: BTreeSet<String> = ngrams(&doc.tokens, config.ngram_range).collect();
        for g in unique {
            *df.entry(g).or_default() += 1;
        }
    }
    let max_df = (config.max_df * n as f64).floor() as usize;
    let mut vocabulary = HashMap::new();
    let mut idf = Vec::new();
    for (term, d) in df {
        if d < config.min_df || d > max_df.max(1) {
            continue;
        }
        vocabulary.insert(term, idf.len());
        idf.push(((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0);
    }
    Ok(TfidfModel { vocabulary, idf, ngram_range: config.ngram_range, doc_count: n })
}

#[derive(Serialize, Deserialize)]
struct TermEntry {
    ngram: String,
    index: usize,
    idf: f64,
}

#[derive(Serialize, Deserialize)]
struct TfidfFile {
    ngram_range: (usize, usize),
    doc_count: usize,
    terms: Vec<TermEntry>,
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&i| self.idf[i])
    }

    pub fn index(&self, term: &str) -> Option<usize> {
        self.vocabulary.get(term).copied()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, usize, f64)> {
        self.vocabulary.iter().map(|(t, &i)| (t.as_str(), i, self.idf[i]))
    }

    /// Raw in-vocabulary n-gram counts.
    pub fn transform_counts(&self, doc: &TokenSequence) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for g in ngrams(&doc.tokens, self.ngram_range) {
            if let Some(&i) = self.vocabulary.get(&g) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        SparseVector { dim: self.dim(), entries: counts.into_iter().collect() }
    }

    /// `tf * idf`, L2-normalized. All-OOV documents give the zero vector.
    pub fn transform(&self, doc: &TokenSequence) -> SparseVector {
        let mut v = self.transform_counts(doc);
        for (i, x) in v.entries.iter_mut() {
            *x *= self.idf[*i];
        }
        let norm = v.norm();
        if norm > 0.0 {
            for (_, x) in v.entries.iter_mut() {
                *x /= norm;
            }
        }
        v
    }

    pub fn to_json(&self) -> String {
        let mut terms: Vec<TermEntry> =
            self.terms().map(|(t, i, idf)| TermEntry { ngram: t.to_string(), index: i, idf }).collect();
        terms.sort_by_key(|t| t.index);
        serde_json::to_string(&TfidfFile { ngram_range: self.ngram_range, doc_count: self.doc_count, terms })
            .expect("tfidf serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TfidfFile = serde_json::from_str(s)?;
        check_range(f.ngram_range)?;
        let n = f.terms.len();
        let mut idf = vec![f64::NAN; n];
        let mut vocabulary = HashMap::with_capacity(n);
        for t in f.terms {
            if t.index >= n || !idf[t.index].is_nan() {
                return Err(Error::InvalidModel(format!("bad term index {}", t.index)));
            }
            if !(t.idf > 0.0 && t.idf.is_finite()) {
                return Err(Error::InvalidModel(format!("bad idf for `{}`", t.ngram)));
            }
            idf[t.index] = t.idf;
            if vocabulary.insert(t.ngram, t.index).is_some() {
                return Err(Error::InvalidModel("duplicate n-gram".into()));
            }
        }
        Ok(TfidfModel { vocabulary, idf, ngram_range: f.ngram_range, doc_count: f.doc_count })
    }
}

impl Serialize for TfidfModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: serde_json::Value = serde_json::from_str(&self.to_json()).map_err(serde::ser::Error::custom)?;
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TfidfModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        TfidfModel::from_json(&v.to_string()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &[&str]) -> TokenSequence {
        TokenSequence { tokens: tokens.iter().map(|s| s.to_string()).collect(), source_id: String::new() }
    }

    #[test]
    fn idf_hand_values() {
        let m = fit_tfidf(&[doc(&["a", "b"]), doc(&["a"])], TfidfConfig::default()).unwrap();
        assert_eq!(m.idf("a"), Some(1.0));
        // ln(3/2) + 1
        assert!((m.idf("b").unwrap() - 1.405_465_108_108_164_4).abs() < 1e-12);
        assert_eq!(m.doc_count, 2);
    }

    #[test]
    fn single_doc() {
        let m = fit_tfidf(&[doc(&["x"])], TfidfConfig::default()).unwrap();
        assert_eq!(m.dim(), 1);
        assert_eq!(m.idf("x"), Some(1.0));
    }

    #[test]
    fn bigram_vocabulary() {
        let m = fit_tfidf(&[doc(&["a", "b"])], TfidfConfig::ngrams(1, 2)).unwrap();
        let mut terms: Vec<_> = m.terms().map(|(t, _, _)| t.to_string()).collect();
        terms.sort();
        assert_eq!(terms, ["a", "a b", "b"]);
    }

    #[test]
    fn transform_hand_values() {
        let m = fit_tfidf(&[doc(&["a", "b"]), doc(&["a"])], TfidfConfig::default()).unwrap();
        let v = m.transform(&doc(&["a", "a", "b"]));
        let b = 1.0 + (1.5f64).ln();
        let norm = (4.0 + b * b).sqrt();
        let dense = v.to_dense();
        assert!((dense[m.index("a").unwrap()] - 2.0 / norm).abs() < 1e-12);
        assert!((dense[m.index("b").unwrap()] - b / norm).abs() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn oov_gives_zero_vector() {
        let m = fit_tfidf(&[doc(&["a"])], TfidfConfig::default()).unwrap();
        let v = m.transform(&doc(&["zzz"]));
        assert!(v.is_zero());
        assert_eq!(v.dim, 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_tfidf(&[], TfidfConfig::default()), Err(Error::EmptyCorpus)));
        assert!(fit_tfidf(&[doc(&["a"])], TfidfConfig::ngrams(2, 3)).is_err());
        assert!(fit_tfidf(&[doc(&["a"])], TfidfConfig::ngrams(0, 1)).is_err());
    }

    #[test]
    fn min_df_prunes() {
        let cfg = TfidfConfig { min_df: 2, ..Default::default() };
        let m = fit_tfidf(&[doc(&["a", "b"]), doc(&["a"])], cfg).unwrap();
        assert_eq!(m.dim(), 1);
        assert!(m.idf("b").is_none());
    }

    #[test]
    fn json_round_trip() {
        let m = fit_tfidf(&[doc(&["a", "b", "c"]), doc(&["a"])], TfidfConfig::ngrams(1, 2)).unwrap();
        let back = TfidfModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert!(v["terms"][0]["ngram"].is_string());
        assert_eq!(v["ngram_range"], serde_json::json!([1, 2]));
    }
}
