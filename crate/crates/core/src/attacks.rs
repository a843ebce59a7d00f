//! Attribute-inference attacks: Naive MAP against linear models and trees,
//! MAP-with-counts against trees, Knowledge Alignment (a learned inversion
//! network) against any confidence oracle, and the prior-only baseline.
//!
//! Attacks see a full row whose sensitive slot is ignored; candidates are
//! substituted into that slot.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{format_real, with_sensitive, Dataset, FeatureSchema};
use crate::error::{Error, Result};
use crate::linreg::LinearModel;
use crate::nn::{encode_input, input_width};
use crate::seed::Seed;
use crate::tree::{argmax_lowest, DecisionTree};

/// Attacker's prior over sensitive codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivePrior {
    pub probs: Vec<f64>,
}

impl SensitivePrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid prior {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("prior sums to {s}")));
        }
        Ok(SensitivePrior { probs })
    }

    /// Empirical marginal of the sensitive attribute in `data`.
    pub fn from_data(data: &Dataset) -> Result<Self> {
        let k = data
            .schema()
            .sensitive_cardinality()
            .ok_or_else(|| Error::InvalidArgument("sensitive feature must be categorical".into()))?;
        if data.is_empty() {
            return Err(Error::Empty("dataset for prior".into()));
        }
        let mut counts = vec![0.0; k];
        for c in data.sensitive_codes() {
            counts[c] += 1.0;
        }
        let n = data.len() as f64;
        SensitivePrior::new(counts.into_iter().map(|c| c / n).collect())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Normalized attacker scores over the sensitive codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub scores: Vec<f64>,
    pub predicted: usize,
    /// Set when the attack could not score candidates normally (zero noise
    /// scale without an exact match, or every candidate scored zero).
    pub fallback: bool,
}

impl CandidateScores {
    fn from_weights(weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        let scores: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Some(CandidateScores {
            predicted: argmax_lowest(&scores),
            scores,
            fallback: false,
        })
    }

    fn one_hot(k: usize, code: usize) -> Self {
        let mut scores = vec![0.0; k];
        scores[code] = 1.0;
        CandidateScores {
            scores,
            predicted: code,
            fallback: true,
        }
    }
}

fn sensitive_cardinality(schema: &FeatureSchema, prior: &SensitivePrior) -> Result<usize> {
    let k = schema
        .sensitive_cardinality()
        .ok_or_else(|| Error::InvalidArgument("sensitive feature must be categorical".into()))?;
    if k != prior.len() {
        return Err(Error::DimensionMismatch(format!("prior has {} codes, schema {k}", prior.len())));
    }
    Ok(k)
}

/// `scores = prior`, prediction = the prior's mode.
pub fn prior_baseline(prior: &SensitivePrior) -> CandidateScores {
    CandidateScores {
        scores: prior.probs.clone(),
        predicted: argmax_lowest(&prior.probs),
        fallback: false,
    }
}

/// Naive MAP against a regression model:
/// `score(v) ∝ pi(v) exp(-(y - f(v, x_ns))^2 / (2 sigma_e^2))`.
pub fn map_attack_linreg(
    model: &LinearModel,
    schema: &FeatureSchema,
    row: &[f64],
    y: f64,
    prior: &SensitivePrior,
) -> Result<CandidateScores> {
    let k = sensitive_cardinality(schema, prior)?;
    if !y.is_finite() {
        return Err(Error::InvalidArgument("target value must be finite".into()));
    }
    let preds: Vec<f64> = (0..k).map(|v| model.predict_row(schema, &with_sensitive(schema, row, v))).collect();
    let sigma = model.residual_sigma;
    if sigma > 0.0 {
        let logw: Vec<f64> = (0..k)
            .map(|v| prior.probs[v].ln() - (y - preds[v]).powi(2) / (2.0 * sigma * sigma))
            .collect();
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m.is_finite() {
            let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
            if let Some(s) = CandidateScores::from_weights(w) {
                return Ok(s);
            }
        }
    } else {
        let exact: Vec<f64> = (0..k).map(|v| if preds[v] == y { prior.probs[v] } else { 0.0 }).collect();
        if let Some(s) = CandidateScores::from_weights(exact) {
            return Ok(s);
        }
    }
    // Nearest prediction among candidates the prior allows.
    let mut best: Option<usize> = None;
    for v in (0..k).filter(|&v| prior.probs[v] > 0.0) {
        if best.is_none_or(|b| (y - preds[v]).abs() < (y - preds[b]).abs()) {
            best = Some(v);
        }
    }
    Ok(CandidateScores::one_hot(k, best.unwrap_or(0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeAttackMode {
    /// Weight candidates by the leaf confidence for the observed label.
    Blackbox,
    /// Weight candidates by the leaf's training count for the observed label.
    WithCounts,
}

/// MAP attack against a tree. With `smoothing`, WithCounts uses `n + 1`
/// instead of the raw leaf count.
pub fn map_attack_tree(
    tree: &DecisionTree,
    row: &[f64],
    y_label: usize,
    prior: &SensitivePrior,
    mode: TreeAttackMode,
    smoothing: bool,
) -> Result<CandidateScores> {
    let k = sensitive_cardinality(&tree.schema, prior)?;
    if y_label >= tree.num_classes() {
        return Err(Error::InvalidArgument(format!("label {y_label} out of range")));
    }
    let n_total: f64 = tree.root.total();
    let w: Vec<f64> = (0..k)
        .map(|v| {
            let p = tree.predict_detail(&with_sensitive(&tree.schema, row, v));
            let lik = match mode {
                TreeAttackMode::Blackbox => p.confidence[y_label],
                TreeAttackMode::WithCounts => {
                    let c = p.leaf_counts[y_label] + if smoothing { 1.0 } else { 0.0 };
                    if n_total > 0.0 {
                        c / n_total
                    } else {
                        c
                    }
                }
            };
            prior.probs[v] * lik
        })
        .collect();
    Ok(CandidateScores::from_weights(w).unwrap_or_else(|| {
        let mut s = prior_baseline(prior);
        s.fallback = true;
        s
    }))
}

/// Naive MAP against any confidence oracle:
/// `score(v) ∝ pi(v) conf(v, x_ns)[y_label]`.
pub fn map_attack_blackbox(
    predict_proba: &dyn Fn(&[f64]) -> Vec<f64>,
    schema: &FeatureSchema,
    row: &[f64],
    y_label: usize,
    prior: &SensitivePrior,
) -> Result<CandidateScores> {
    let k = sensitive_cardinality(schema, prior)?;
    let mut w = Vec::with_capacity(k);
    for v in 0..k {
        let conf = predict_proba(&with_sensitive(schema, row, v));
        let lik = *conf
            .get(y_label)
            .ok_or_else(|| Error::InvalidArgument(format!("label {y_label} out of range")))?;
        w.push(prior.probs[v] * lik);
    }
    Ok(CandidateScores::from_weights(w).unwrap_or_else(|| {
        let mut s = prior_baseline(prior);
        s.fallback = true;
        s
    }))
}

// ---------------------------------------------------------------------------
// Knowledge Alignment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: Seed,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            hidden_dim: 32,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.1,
            seed: Seed(0),
        }
    }
}

/// `g: confidence (C) -> tanh hidden -> encoded features (d)`, trained to map
/// target outputs back to inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionModel {
    pub schema: FeatureSchema,
    pub num_classes: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Row-major `[W1 (H x C), b1, W2 (d x H), b2]`.
    pub params: Vec<f64>,
}

impl InversionModel {
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let (c, h, d) = (self.num_classes, self.hidden_dim, self.output_dim);
        let w1 = 0;
        let b1 = h * c;
        let w2 = b1 + h;
        let b2 = w2 + d * h;
        (w1, b1, w2, b2)
    }

    fn forward(&self, conf: &[f64], hidden: &mut Vec<f64>, out: &mut Vec<f64>) {
        let (w1, b1, w2, b2) = self.offsets();
        let (c, h, d) = (self.num_classes, self.hidden_dim, self.output_dim);
        let p = &self.params;
        hidden.clear();
        hidden.extend((0..h).map(|i| {
            (p[b1 + i] + (0..c).map(|j| p[w1 + i * c + j] * conf[j]).sum::<f64>()).tanh()
        }));
        out.clear();
        out.extend((0..d).map(|r| p[b2 + r] + (0..h).map(|i| p[w2 + r * h + i] * hidden[i]).sum::<f64>()));
    }

    /// Reconstructed encoded feature vector (one-hot categoricals, continuous
    /// values on `[-1, 1]`).
    pub fn invert(&self, confidence: &[f64]) -> Result<Vec<f64>> {
        if confidence.len() != self.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "confidence has {} entries, model expects {}",
                confidence.len(),
                self.num_classes
            )));
        }
        let mut h = Vec::new();
        let mut out = Vec::new();
        self.forward(confidence, &mut h, &mut out);
        Ok(out)
    }

    /// The sensitive attribute's one-hot block of a reconstruction.
    pub fn sensitive_block<'a>(&self, recon: &'a [f64]) -> &'a [f64] {
        let s = self.schema.sensitive_index;
        let start: usize = self.schema.features[..s]
            .iter()
            .map(|f| f.cardinality().unwrap_or(1))
            .sum();
        let k = self.schema.sensitive_cardinality().unwrap_or(1);
        &recon[start..start + k]
    }

    /// Sensitive code decoded from a reconstruction: argmax over the
    /// sensitive attribute's one-hot block.
    pub fn decode_sensitive(&self, recon: &[f64]) -> usize {
        argmax_lowest(self.sensitive_block(recon))
    }

    /// Mean squared reconstruction error over `(confidence, encoded input)` pairs.
    pub fn reconstruction_mse(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let mut h = Vec::new();
        let mut out = Vec::new();
        let mut total = 0.0;
        for (c, x) in pairs {
            self.forward(c, &mut h, &mut out);
            total += out.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
        }
        total / pairs.len().max(1) as f64
    }
}

/// Query the target on every auxiliary row: `(confidence, encoded input)`.
pub fn inversion_pairs(target: &dyn Fn(&[f64]) -> Vec<f64>, aux: &Dataset) -> Vec<(Vec<f64>, Vec<f64>)> {
    aux.rows()
        .iter()
        .map(|r| {
            let mut x = Vec::new();
            encode_input(aux.schema(), r, &mut x);
            (target(r), x)
        })
        .collect()
}

/// Train `g` by minibatch SGD on `mean ||g(f(x)) - x||^2 / d` over `aux`.
pub fn train_inversion_model(
    target: &dyn Fn(&[f64]) -> Vec<f64>,
    aux: &Dataset,
    config: &InversionConfig,
) -> Result<InversionModel> {
    if aux.is_empty() {
        return Err(Error::Empty("auxiliary dataset".into()));
    }
    if config.hidden_dim == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("invalid inversion config".into()));
    }
    let pairs = inversion_pairs(target, aux);
    let c = pairs[0].0.len();
    if c == 0 || pairs.iter().any(|(p, _)| p.len() != c) {
        return Err(Error::DimensionMismatch("target outputs vary in length".into()));
    }
    let d = input_width(aux.schema());
    let h = config.hidden_dim;
    let mut g = InversionModel {
        schema: aux.schema().clone(),
        num_classes: c,
        hidden_dim: h,
        output_dim: d,
        params: vec![0.0; h * c + h + d * h + d],
    };
    let mut rng = config.seed.rng();
    let (w1, b1, w2, b2) = g.offsets();
    for (start, out, inp) in [(w1, h, c), (w2, d, h)] {
        let a = (6.0 / (out + inp) as f64).sqrt();
        let u = Uniform::new_inclusive(-a, a).expect("valid range");
        for p in &mut g.params[start..start + out * inp] {
            *p = u.sample(&mut rng);
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut grad = vec![0.0; g.params.len()];
    let mut hidden = Vec::new();
    let mut out = Vec::new();
    let mut dh = vec![0.0; h];
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|v| *v = 0.0);
            let scale = 1.0 / (idx.len() * d) as f64;
            let mut loss = 0.0;
            for &i in idx {
                let (conf, x) = &pairs[i];
                g.forward(conf, &mut hidden, &mut out);
                dh.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..d {
                    let e = out[r] - x[r];
                    loss += e * e * scale;
                    let ge = 2.0 * e * scale;
                    grad[b2 + r] += ge;
                    for k in 0..h {
                        grad[w2 + r * h + k] += ge * hidden[k];
                        dh[k] += ge * g.params[w2 + r * h + k];
                    }
                }
                for k in 0..h {
                    let da = dh[k] * (1.0 - hidden[k] * hidden[k]);
                    grad[b1 + k] += da;
                    for j in 0..c {
                        grad[w1 + k * c + j] += da * conf[j];
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            for (p, gr) in g.params.iter_mut().zip(&grad) {
                *p -= config.learning_rate * gr;
            }
        }
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Per-instance results

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub instance_id: usize,
    pub split: Split,
    pub true_code: usize,
    pub predicted_code: usize,
    pub scores: Vec<f64>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackResult {
    pub records: Vec<AttackRecord>,
}

impl AttackResult {
    /// Run `attack(row, label)` on every row of `data`.
    pub fn run(data: &Dataset, split: Split, mut attack: impl FnMut(&[f64], f64) -> Result<CandidateScores>) -> Result<Self> {
        let truth = data.sensitive_codes();
        let mut records = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let s = attack(data.row(i), data.label(i))?;
            records.push(AttackRecord {
                instance_id: i,
                split,
                true_code: truth[i],
                predicted_code: s.predicted,
                scores: s.scores,
                fallback: s.fallback,
            });
        }
        Ok(AttackResult { records })
    }

    pub fn extend(&mut self, other: AttackResult) {
        self.records.extend(other.records);
    }

    fn filtered(&self, split: Option<Split>) -> impl Iterator<Item = &AttackRecord> {
        self.records.iter().filter(move |r| split.is_none_or(|s| r.split == s))
    }

    pub fn accuracy(&self, split: Option<Split>) -> f64 {
        let (mut hit, mut n) = (0usize, 0usize);
        for r in self.filtered(split) {
            n += 1;
            hit += (r.predicted_code == r.true_code) as usize;
        }
        if n == 0 {
            f64::NAN
        } else {
            hit as f64 / n as f64
        }
    }

    pub fn predictions(&self, split: Option<Split>) -> (Vec<usize>, Vec<usize>) {
        self.filtered(split).map(|r| (r.predicted_code, r.true_code)).unzip()
    }

    pub fn score_vectors(&self, split: Option<Split>) -> Vec<Vec<f64>> {
        self.filtered(split).map(|r| r.scores.clone()).collect()
    }

    /// CSV: `instance_id,split,true_code,predicted_code,score_0..score_{k-1}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let k = self.records.first().map_or(0, |r| r.scores.len());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["instance_id".to_string(), "split".into(), "true_code".into(), "predicted_code".into()];
        header.extend((0..k).map(|j| format!("score_{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.instance_id.to_string(),
                r.split.as_str().to_string(),
                r.true_code.to_string(),
                r.predicted_code.to_string(),
            ];
            row.extend(r.scores.iter().map(|&s| format_real(s)));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
