//! Class-weighted linear classifiers.
//!
//! Every model is a `K x D` weight matrix plus `K` biases over an ordered label
//! list; [`LossKind`] records how it was trained and how scores are read out.
//! Logistic regression and the linear SVM share one deterministic mini-batch
//! gradient-descent loop; naive Bayes is fitted in closed form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayBase, Data, Ix2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vectorize::SparseVector;

/// Row access shared by dense and sparse design matrices.
pub trait Rows {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// `x_i . w`
    fn dot(&self, i: usize, w: &[f64]) -> f64;
    /// `out += a * x_i`
    fn axpy(&self, i: usize, a: f64, out: &mut [f64]);
    /// Visits the non-zero entries of row `i`.
    fn for_each_nz(&self, i: usize, f: &mut dyn FnMut(usize, f64));
}

/// Dot product with eight independent partial sums, so the loop vectorizes.
fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        let x: &[f64; 8] = x.try_into().unwrap();
        let y: &[f64; 8] = y.try_into().unwrap();
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

impl<S: Data<Elem = f64>> Rows for ArrayBase<S, Ix2> {
    fn n_rows(&self) -> usize {
        self.nrows()
    }

    fn n_cols(&self) -> usize {
        self.ncols()
    }

    fn dot(&self, i: usize, w: &[f64]) -> f64 {
        let row = self.row(i);
        match row.as_slice() {
            Some(r) => dot_slices(r, w),
            None => row.iter().zip(w).map(|(a, b)| a * b).sum(),
        }
    }

    fn axpy(&self, i: usize, a: f64, out: &mut [f64]) {
        let row = self.row(i);
        match row.as_slice() {
            Some(r) => r.iter().zip(out.iter_mut()).for_each(|(x, o)| *o += a * x),
            None => row.iter().zip(out.iter_mut()).for_each(|(x, o)| *o += a * x),
        }
    }

    fn for_each_nz(&self, i: usize, f: &mut dyn FnMut(usize, f64)) {
        for (j, &v) in self.row(i).iter().enumerate() {
            if v != 0.0 {
                f(j, v);
            }
        }
    }
}

impl Rows for [SparseVector] {
    fn n_rows(&self) -> usize {
        self.len()
    }

    fn n_cols(&self) -> usize {
        self.first().map_or(0, |v| v.dim)
    }

    fn dot(&self, i: usize, w: &[f64]) -> f64 {
        self[i].entries.iter().map(|&(j, v)| v * w[j]).sum()
    }

    fn axpy(&self, i: usize, a: f64, out: &mut [f64]) {
        for &(j, v) in &self[i].entries {
            out[j] += a * v;
        }
    }

    fn for_each_nz(&self, i: usize, f: &mut dyn FnMut(usize, f64)) {
        for &(j, v) in &self[i].entries {
            f(j, v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    WeightedSoftmaxCe,
    Hinge,
    Nb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { learning_rate: 0.1, epochs: 200, l2: 1e-4, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub class_weights: BTreeMap<String, f64>,
    /// Full-data objective after each epoch.
    #[serde(default)]
    pub loss_history: Vec<f64>,
    /// Parameter hash of the model this one was warm-started from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub loss_kind: LossKind,
    pub labels: Vec<String>,
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    loss_kind: LossKind,
    labels: Vec<String>,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    training_meta: TrainingMeta,
}

/// `w(c) = N / (K * n_c)`.
pub fn compute_class_weights<S: AsRef<str>>(labels: &[S]) -> Result<BTreeMap<String, f64>> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_ref().to_string()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::TooFewClasses(counts.len()));
    }
    let n = labels.len() as f64;
    let k = counts.len() as f64;
    Ok(counts.into_iter().map(|(c, nc)| (c, n / (k * nc as f64))).collect())
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Index of the highest score among `allowed`; earlier labels win ties.
pub fn masked_argmax(scores: &[f64], allowed: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if allowed[i] && best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn check_finite<R: Rows + ?Sized>(x: &R) -> Result<()> {
    for i in 0..x.n_rows() {
        let mut bad = None;
        x.for_each_nz(i, &mut |j, v| {
            if !v.is_finite() && bad.is_none() {
                bad = Some(j);
            }
        });
        if let Some(col) = bad {
            return Err(Error::NonFinite { row: i, col });
        }
    }
    Ok(())
}

/// Objective and gradient of the class-weighted softmax cross-entropy,
/// `(1/n) sum_i w[y_i] * -ln p(y_i | x_i) + (l2/2) ||W||^2` (bias unregularized).
pub fn weighted_ce_loss_grad<R: Rows + ?Sized>(
    weights: &Array2<f64>,
    bias: &[f64],
    x: &R,
    y: &[usize],
    class_weight: &[f64],
    l2: f64,
) -> (f64, Array2<f64>, Vec<f64>) {
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    let mut gw = Array2::zeros(weights.raw_dim());
    let mut gb = vec![0.0; bias.len()];
    let loss = ce_batch(weights, bias, x, y, class_weight, l2, &rows, &mut gw, &mut gb, true);
    (loss, gw, gb)
}

/// Accumulates the mean gradient over `rows` into `gw`/`gb` (which are
/// overwritten) and returns the objective on those rows.
#[allow(clippy::too_many_arguments)]
fn ce_batch<R: Rows + ?Sized>(
    weights: &Array2<f64>,
    bias: &[f64],
    x: &R,
    y: &[usize],
    class_weight: &[f64],
    l2: f64,
    rows: &[usize],
    gw: &mut Array2<f64>,
    gb: &mut [f64],
    want_grad: bool,
) -> f64 {
    let k = bias.len();
    let n = rows.len() as f64;
    let mut z = vec![0.0; k];
    let mut loss = 0.0;
    if want_grad {
        gw.fill(0.0);
        gb.fill(0.0);
    }
    for &i in rows {
        for c in 0..k {
            z[c] = x.dot(i, weights.row(c).as_slice().unwrap()) + bias[c];
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let w = class_weight[y[i]];
        loss += w * (lse - z[y[i]]);
        if want_grad {
            for c in 0..k {
                let p = (z[c] - lse).exp();
                let r = w * (p - if c == y[i] { 1.0 } else { 0.0 }) / n;
                if r != 0.0 {
                    x.axpy(i, r, gw.row_mut(c).into_slice().unwrap());
                    gb[c] += r;
                }
            }
        }
    }
    if want_grad && l2 != 0.0 {
        gw.zip_mut_with(weights, |g, w| *g += l2 * w);
    }
    loss / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// One-vs-rest class-weighted hinge objective with its subgradient.
#[allow(clippy::too_many_arguments)]
fn hinge_batch<R: Rows + ?Sized>(
    weights: &Array2<f64>,
    bias: &[f64],
    x: &R,
    y: &[usize],
    class_weight: &[f64],
    l2: f64,
    rows: &[usize],
    gw: &mut Array2<f64>,
    gb: &mut [f64],
    want_grad: bool,
) -> f64 {
    let k = bias.len();
    let n = rows.len() as f64;
    let mut loss = 0.0;
    if want_grad {
        gw.fill(0.0);
        gb.fill(0.0);
    }
    for &i in rows {
        let w = class_weight[y[i]];
        for c in 0..k {
            let s = if c == y[i] { 1.0 } else { -1.0 };
            let margin = s * (x.dot(i, weights.row(c).as_slice().unwrap()) + bias[c]);
            if margin < 1.0 {
                loss += w * (1.0 - margin);
                if want_grad {
                    let r = -s * w / n;
                    x.axpy(i, r, gw.row_mut(c).into_slice().unwrap());
                    gb[c] += r;
                }
            }
        }
    }
    if want_grad && l2 != 0.0 {
        gw.zip_mut_with(weights, |g, w| *g += l2 * w);
    }
    loss / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

struct Problem<'a, R: ?Sized> {
    x: &'a R,
    y: Vec<usize>,
    class_weight: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn objective<R: Rows + ?Sized>(
    kind: LossKind,
    w: &Array2<f64>,
    b: &[f64],
    p: &Problem<'_, R>,
    l2: f64,
    rows: &[usize],
    gw: &mut Array2<f64>,
    gb: &mut [f64],
    want_grad: bool,
) -> f64 {
    match kind {
        LossKind::WeightedSoftmaxCe => ce_batch(w, b, p.x, &p.y, &p.class_weight, l2, rows, gw, gb, want_grad),
        LossKind::Hinge => hinge_batch(w, b, p.x, &p.y, &p.class_weight, l2, rows, gw, gb, want_grad),
        LossKind::Nb => unreachable!("naive Bayes is not trained by gradient descent"),
    }
}

/// Deterministic mini-batch gradient descent; returns the per-epoch
/// full-data objective.
fn descend<R: Rows + ?Sized>(
    kind: LossKind,
    weights: &mut Array2<f64>,
    bias: &mut [f64],
    p: &Problem<'_, R>,
    hyper: &Hyper,
) -> Vec<f64> {
    let n = p.x.n_rows();
    let all: Vec<usize> = (0..n).collect();
    let mut order = all.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut gw = Array2::zeros(weights.raw_dim());
    let mut gb = vec![0.0; bias.len()];
    let batch = hyper.batch_size.max(1);
    let mut history = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            objective(kind, weights, bias, p, hyper.l2, chunk, &mut gw, &mut gb, true);
            weights.zip_mut_with(&gw, |w, g| *w -= hyper.learning_rate * g);
            bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= hyper.learning_rate * g);
        }
        history.push(objective(kind, weights, bias, p, hyper.l2, &all, &mut gw, &mut gb, false));
    }
    history
}

fn label_indices<S: AsRef<str>>(labels: &[String], y: &[S]) -> Result<Vec<usize>> {
    y.iter()
        .map(|l| labels.iter().position(|x| x == l.as_ref()).ok_or_else(|| Error::UnknownLabel(l.as_ref().to_string())))
        .collect()
}

fn distinct_sorted<S: AsRef<str>>(y: &[S]) -> Vec<String> {
    let mut labels: Vec<String> = y.iter().map(|s| s.as_ref().to_string()).collect();
    labels.sort();
    labels.dedup();
    labels
}

fn prepare<'a, R: Rows + ?Sized, S: AsRef<str>>(
    x: &'a R,
    y: &[S],
    class_weights: &BTreeMap<String, f64>,
) -> Result<(Vec<String>, Problem<'a, R>)> {
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.n_rows(), found: y.len() });
    }
    if x.n_cols() == 0 {
        return Err(Error::InvalidModel("feature dimension is zero".into()));
    }
    check_finite(x)?;
    let labels = distinct_sorted(y);
    if labels.len() < 2 {
        return Err(Error::TooFewClasses(labels.len()));
    }
    let class_weight = labels
        .iter()
        .map(|l| class_weights.get(l).copied().ok_or_else(|| Error::MissingClassWeight(l.clone())))
        .collect::<Result<Vec<_>>>()?;
    let yi = label_indices(&labels, y)?;
    Ok((labels, Problem { x, y: yi, class_weight }))
}

fn train_gd<R: Rows + ?Sized, S: AsRef<str>>(
    kind: LossKind,
    x: &R,
    y: &[S],
    class_weights: &BTreeMap<String, f64>,
    hyper: &Hyper,
) -> Result<LinearModel> {
    let (labels, problem) = prepare(x, y, class_weights)?;
    let mut weights = Array2::zeros((labels.len(), x.n_cols()));
    let mut bias = vec![0.0; labels.len()];
    let history = descend(kind, &mut weights, &mut bias, &problem, hyper);
    let model = LinearModel {
        loss_kind: kind,
        meta: TrainingMeta {
            seed: hyper.seed,
            epochs: hyper.epochs,
            learning_rate: hyper.learning_rate,
            l2: hyper.l2,
            batch_size: hyper.batch_size,
            class_weights: labels.iter().cloned().zip(problem.class_weight.iter().copied()).collect(),
            loss_history: history,
            parent: None,
        },
        labels,
        weights,
        bias,
    };
    model.validate()?;
    Ok(model)
}

/// Multinomial logistic regression minimizing class-weighted softmax
/// cross-entropy plus `(l2/2) ||W||^2`. Labels are ordered lexicographically.
pub fn train_logreg<R: Rows + ?Sized, S: AsRef<str>>(
    x: &R,
    y: &[S],
    class_weights: &BTreeMap<String, f64>,
    hyper: &Hyper,
) -> Result<LinearModel> {
    train_gd(LossKind::WeightedSoftmaxCe, x, y, class_weights, hyper)
}

/// One-vs-rest linear SVM: subgradient descent on class-weighted hinge plus l2.
pub fn train_linear_svm<R: Rows + ?Sized, S: AsRef<str>>(
    x: &R,
    y: &[S],
    class_weights: &BTreeMap<String, f64>,
    hyper: &Hyper,
) -> Result<LinearModel> {
    train_gd(LossKind::Hinge, x, y, class_weights, hyper)
}

/// Multinomial naive Bayes with Laplace smoothing (alpha = 1) written as a
/// linear model: weights are log-likelihoods, biases log-priors.
pub fn train_nb<R: Rows + ?Sized, S: AsRef<str>>(x: &R, y: &[S]) -> Result<LinearModel> {
    let uniform: BTreeMap<String, f64> = distinct_sorted(y).into_iter().map(|l| (l, 1.0)).collect();
    let (labels, problem) = prepare(x, y, &uniform)?;
    let (k, d) = (labels.len(), x.n_cols());
    let mut counts = Array2::<f64>::zeros((k, d));
    let mut class_n = vec![0usize; k];
    for i in 0..x.n_rows() {
        let c = problem.y[i];
        class_n[c] += 1;
        let mut neg = None;
        let mut row = counts.row_mut(c);
        x.for_each_nz(i, &mut |j, v| {
            if v < 0.0 {
                neg.get_or_insert(j);
            }
            row[j] += v;
        });
        if let Some(col) = neg {
            return Err(Error::NegativeFeature { row: i, col });
        }
    }
    let alpha = 1.0;
    let n = x.n_rows() as f64;
    let mut weights = Array2::zeros((k, d));
    let mut bias = vec![0.0; k];
    for c in 0..k {
        let total: f64 = counts.row(c).sum() + alpha * d as f64;
        for j in 0..d {
            weights[[c, j]] = ((counts[[c, j]] + alpha) / total).ln();
        }
        bias[c] = (class_n[c] as f64 / n).ln();
    }
    let model = LinearModel {
        loss_kind: LossKind::Nb,
        labels,
        weights,
        bias,
        meta: TrainingMeta { class_weights: uniform, ..Default::default() },
    };
    model.validate()?;
    Ok(model)
}

/// Labels and per-class scores for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub label_index: Vec<usize>,
    pub labels: Vec<String>,
    /// `n x K`: probabilities for logistic regression and naive Bayes, raw
    /// margins for the SVM.
    pub scores: Array2<f64>,
}

impl LinearModel {
    /// Zero-parameter model, useful as a starting point.
    pub fn zeros(kind: LossKind, labels: Vec<String>, dim: usize) -> Result<Self> {
        let k = labels.len();
        let m = LinearModel {
            loss_kind: kind,
            labels,
            weights: Array2::zeros((k, dim)),
            bias: vec![0.0; k],
            meta: TrainingMeta::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.labels.len();
        if k < 2 {
            return Err(Error::TooFewClasses(k));
        }
        if self.dim() == 0 {
            return Err(Error::InvalidModel("feature dimension is zero".into()));
        }
        if self.weights.nrows() != k || self.bias.len() != k {
            return Err(Error::InvalidModel(format!(
                "{k} labels but {} weight rows and {} biases",
                self.weights.nrows(),
                self.bias.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.labels.iter().all(|l| seen.insert(l)) {
            return Err(Error::InvalidModel("duplicate labels".into()));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Scores for one row given as a closure-free dot product source.
    pub fn scores_row<R: Rows + ?Sized>(&self, x: &R, i: usize, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = x.dot(i, self.weights.row(c).as_slice().unwrap()) + self.bias[c];
        }
        if self.loss_kind != LossKind::Hinge {
            softmax_in_place(out);
        }
    }

    /// Argmax prediction; ties go to the earlier label.
    pub fn predict<R: Rows + ?Sized>(&self, x: &R) -> Result<Predictions> {
        if x.n_rows() > 0 && x.n_cols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.n_cols() });
        }
        let n = x.n_rows();
        let mut scores = Array2::zeros((n, self.n_classes()));
        let mut label_index = Vec::with_capacity(n);
        for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
            let out = row.as_slice_mut().unwrap();
            self.scores_row(x, i, out);
            label_index.push(argmax(out));
        }
        let labels = label_index.iter().map(|&i| self.labels[i].clone()).collect();
        Ok(Predictions { label_index, labels, scores })
    }

    pub fn predict_dense(&self, row: &[f64]) -> Result<(usize, Vec<f64>)> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: row.len() });
        }
        let view = ndarray::ArrayView2::from_shape((1, row.len()), row).unwrap();
        let mut out = vec![0.0; self.n_classes()];
        self.scores_row(&view, 0, &mut out);
        Ok((argmax(&out), out))
    }

    /// Training objective of this model on `(x, y)`.
    pub fn loss<R: Rows + ?Sized, S: AsRef<str>>(
        &self,
        x: &R,
        y: &[S],
        class_weights: &BTreeMap<String, f64>,
        l2: f64,
    ) -> Result<f64> {
        let yi = label_indices(&self.labels, y)?;
        let cw: Vec<f64> = self.labels.iter().map(|l| class_weights.get(l).copied().unwrap_or(1.0)).collect();
        let p = Problem { x, y: yi, class_weight: cw };
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let mut gw = Array2::zeros((0, 0));
        Ok(objective(self.loss_kind, &self.weights, &self.bias, &p, l2, &rows, &mut gw, &mut [], false))
    }

    /// SHA-256 over labels and parameters; identifies a model version.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.labels {
            h.update(l.as_bytes());
            h.update([0u8]);
        }
        h.update((self.dim() as u64).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        let f = ModelFile {
            loss_kind: self.loss_kind,
            labels: self.labels.clone(),
            dim: self.dim(),
            weights: self.weights.iter().copied().collect(),
            bias: self.bias.clone(),
            training_meta: self.meta.clone(),
        };
        serde_json::to_string(&f).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        let k = f.labels.len();
        let weights = Array2::from_shape_vec((k, f.dim), f.weights)
            .map_err(|e| Error::InvalidModel(format!("weight shape: {e}")))?;
        let m = LinearModel { loss_kind: f.loss_kind, labels: f.labels, weights, bias: f.bias, meta: f.training_meta };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| Error::Corrupt { path: path.to_path_buf(), reason: e.to_string() })
    }
}

/// Continues gradient descent from `model` on new data. Labels in `y_new`
/// must already be known to the model; missing class weights default to 1.
pub fn warm_start_train<R: Rows + ?Sized, S: AsRef<str>>(
    model: &LinearModel,
    x_new: &R,
    y_new: &[S],
    class_weights: Option<&BTreeMap<String, f64>>,
    hyper: &Hyper,
) -> Result<LinearModel> {
    if model.loss_kind == LossKind::Nb {
        return Err(Error::InvalidModel("naive Bayes cannot be warm-started".into()));
    }
    if x_new.n_rows() != y_new.len() {
        return Err(Error::DimensionMismatch { expected: x_new.n_rows(), found: y_new.len() });
    }
    if x_new.n_rows() > 0 && x_new.n_cols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: x_new.n_cols() });
    }
    check_finite(x_new)?;
    let y = label_indices(&model.labels, y_new)?;
    let class_weight: Vec<f64> =
        model.labels.iter().map(|l| class_weights.and_then(|w| w.get(l)).copied().unwrap_or(1.0)).collect();
    let problem = Problem { x: x_new, y, class_weight };
    let mut out = model.clone();
    let history = if x_new.n_rows() == 0 {
        Vec::new()
    } else {
        descend(model.loss_kind, &mut out.weights, &mut out.bias, &problem, hyper)
    };
    out.meta = TrainingMeta {
        seed: hyper.seed,
        epochs: hyper.epochs,
        learning_rate: hyper.learning_rate,
        l2: hyper.l2,
        batch_size: hyper.batch_size,
        class_weights: model.labels.iter().cloned().zip(problem.class_weight).collect(),
        loss_history: history,
        parent: Some(model.parameter_hash()),
    };
    out.validate()?;
    Ok(out)
}
