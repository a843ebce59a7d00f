//! Experiment orchestration: defense sweeps with repetition averaging,
//! tradeoff-record CSVs, plot-data emission, and the games verification entry
//! point.
//!
//! A sweep generates (or loads) its dataset once. Repetition `i` of every grid
//! point uses the seed `base + i`, from which independent streams are derived
//! for the split, the training run and the attack.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{
    map_attack_blackbox, map_attack_linreg, map_attack_tree, prior_baseline, train_inversion_model, AttackResult,
    CandidateScores, InversionConfig, SensitivePrior, Split, TreeAttackMode,
};
use crate::data::{format_real, load_csv, split_indices, Dataset, FeatureSchema};
use crate::error::{Error, Result};
use crate::games::{
    best_possible_gain, verify_theorem1, verify_theorem2, Adversary, DiscreteJoint, Distinguisher, Domains,
    GameContext, Mechanism, MechanismSpec, Privacy, PropertyFunction, Theorem1Report, Theorem2Report,
};
use crate::linreg::{schema_row_bound, train_adassp, train_mid_linear, train_ridge, LinearModel, MidLinConfig};
use crate::metrics::{accuracy, auroc_ovr_macro, ece, f1_macro, mse};
use crate::nn::{dpsgd_steps, noise_multiplier_for_epsilon, train_dpsgd, train_vib, DpsgdConfig, MlpVib, PredictMode, VibConfig};
use crate::seed::Seed;
use crate::synth::{synth_generate, Preset, SynthConfig};
use crate::tree::{train_dp_id3, train_id3, train_priority, DecisionTree, TreeConfig};

pub const DEFAULT_LAMBDAS: [f64; 7] = [0.0, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0];
pub const DEFAULT_EPSILONS: [f64; 6] = [0.1, 0.3, 1.0, 3.0, 10.0, 100.0];

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    Preset { preset: Preset, n_samples: usize },
    Synth { schema: FeatureSchema, config: SynthConfig },
    /// CSV body plus a JSON schema file.
    Csv { path: PathBuf, schema: PathBuf },
}

impl DataSource {
    /// Materialize the dataset. Synthetic sources draw from `seed`.
    pub fn load(&self, seed: Seed) -> Result<Dataset> {
        match self {
            DataSource::Preset { preset, n_samples } => {
                let (schema, cfg) = preset.build(*n_samples);
                synth_generate(&cfg, &schema, seed)
            }
            DataSource::Synth { schema, config } => synth_generate(config, schema, seed),
            DataSource::Csv { path, schema } => load_csv(path, &FeatureSchema::load_json(schema)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Linreg,
    Tree,
    Nn,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Linreg => "linreg",
            ModelFamily::Tree => "tree",
            ModelFamily::Nn => "nn",
        }
    }

    pub fn default_repetitions(self) -> usize {
        match self {
            ModelFamily::Linreg | ModelFamily::Tree => 100,
            ModelFamily::Nn => 3,
        }
    }

    /// Accuracy and AUROC for linear regression, F1 for trees, accuracy for
    /// networks.
    pub fn default_attack_metrics(self) -> Vec<AttackMetric> {
        match self {
            ModelFamily::Linreg => vec![AttackMetric::Accuracy, AttackMetric::Auroc],
            ModelFamily::Tree => vec![AttackMetric::MacroF1],
            ModelFamily::Nn => vec![AttackMetric::Accuracy],
        }
    }

    fn utility_metric(self) -> &'static str {
        match self {
            ModelFamily::Linreg => "mse",
            ModelFamily::Tree => "macro_f1",
            ModelFamily::Nn => "accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Defense {
    None,
    Mid {
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
    },
    Dp {
        #[serde(default = "default_epsilons")]
        epsilons: Vec<f64>,
        /// Ignored by the pure-DP tree baseline.
        #[serde(default = "default_delta")]
        delta: f64,
    },
    /// Trees only: the sensitive feature may not be split above this depth.
    Priority { depths: Vec<usize> },
}

fn default_lambdas() -> Vec<f64> {
    DEFAULT_LAMBDAS.to_vec()
}

fn default_epsilons() -> Vec<f64> {
    DEFAULT_EPSILONS.to_vec()
}

fn default_delta() -> f64 {
    1e-5
}

impl Defense {
    pub fn name(&self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Mid { .. } => "mid",
            Defense::Dp { .. } => "dp",
            Defense::Priority { .. } => "priority",
        }
    }

    fn grid(&self) -> Vec<GridPoint> {
        match self {
            Defense::None => vec![GridPoint::None],
            Defense::Mid { lambdas } => lambdas.iter().map(|&l| GridPoint::Mid(l)).collect(),
            Defense::Dp { epsilons, delta } => epsilons.iter().map(|&e| GridPoint::Dp(e, *delta)).collect(),
            Defense::Priority { depths } => depths.iter().map(|&d| GridPoint::Priority(d)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GridPoint {
    None,
    Mid(f64),
    Dp(f64, f64),
    Priority(usize),
}

impl GridPoint {
    fn defense(self) -> &'static str {
        match self {
            GridPoint::None => "none",
            GridPoint::Mid(_) => "mid",
            GridPoint::Dp(..) => "dp",
            GridPoint::Priority(_) => "priority",
        }
    }

    fn hyperparameter(self) -> (&'static str, f64) {
        match self {
            GridPoint::None => ("none", 0.0),
            GridPoint::Mid(l) => ("lambda", l),
            GridPoint::Dp(e, _) => ("epsilon", e),
            GridPoint::Priority(d) => ("min_depth", d as f64),
        }
    }

    fn describe(self) -> String {
        let (name, v) = self.hyperparameter();
        format!("defense {} {name}={v}", self.defense())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Prior times the model's likelihood of the observed label.
    NaiveMap,
    /// Trees only: prior times the leaf training count.
    MapWithCounts,
    /// Learned inversion of the confidence vector (classification only).
    KnowledgeAlignment,
    /// Reserved; not implemented.
    Gmi,
    /// Reserved; not implemented.
    UpdateLeaks,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::NaiveMap => "naive_map",
            AttackKind::MapWithCounts => "map_with_counts",
            AttackKind::KnowledgeAlignment => "knowledge_alignment",
            AttackKind::Gmi => "gmi",
            AttackKind::UpdateLeaks => "update_leaks",
        }
    }
}

/// How a set of sensitive-attribute guesses is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMetric {
    Accuracy,
    MacroF1,
    /// One-vs-rest macro AUROC of the attacker's score vectors.
    Auroc,
}

impl AttackMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMetric::Accuracy => "accuracy",
            AttackMetric::MacroF1 => "macro_f1",
            AttackMetric::Auroc => "auroc",
        }
    }

    /// Score the records of one split.
    pub fn score(self, result: &AttackResult, split: Split, num_codes: usize) -> Result<f64> {
        let (predicted, truth) = result.predictions(Some(split));
        match self {
            AttackMetric::Accuracy => accuracy(&predicted, &truth),
            AttackMetric::MacroF1 => Ok(f1_macro(&predicted, &truth, num_codes)?.macro_f1),
            AttackMetric::Auroc => Ok(auroc_ovr_macro(&result.score_vectors(Some(split)), &truth)?.macro_auroc),
        }
    }
}

/// A sweep description. Every field has a default, so `{}` is a valid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: ModelFamily,
    pub defenses: Vec<Defense>,
    pub attacks: Vec<AttackKind>,
    /// `None` uses the model family default.
    pub attack_metrics: Option<Vec<AttackMetric>>,
    /// `None` uses the model family default.
    pub repetitions: Option<usize>,
    pub test_fraction: f64,
    pub seed: Seed,
    /// Where the tradeoff CSV is written; `None` keeps results in memory.
    pub output: Option<PathBuf>,
    /// Base MID-linear settings; `lambda` is taken from the grid.
    pub linreg: MidLinConfig,
    /// Base tree settings; `lambda` is taken from the grid.
    pub tree: TreeConfig,
    pub vib: VibConfig,
    /// `noise_multiplier` is recalibrated for each target epsilon.
    pub dpsgd: DpsgdConfig,
    pub inversion: InversionConfig,
    /// AdaSSP feature-norm bound; `None` derives it from the schema ranges.
    pub row_bound: Option<f64>,
    /// AdaSSP label clipping bound. Labels are not covered by the schema, so
    /// this is a public assumption about the label range.
    pub label_bound: f64,
    pub ece_bins: usize,
    /// Add-one smoothing of leaf counts in MAP-with-counts.
    pub smoothing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Preset {
                preset: Preset::Iwpc,
                n_samples: 2000,
            },
            model: ModelFamily::Linreg,
            defenses: vec![
                Defense::None,
                Defense::Mid {
                    lambdas: default_lambdas(),
                },
                Defense::Dp {
                    epsilons: default_epsilons(),
                    delta: default_delta(),
                },
            ],
            attacks: vec![AttackKind::NaiveMap],
            attack_metrics: None,
            repetitions: None,
            test_fraction: 0.2,
            seed: Seed(0),
            output: None,
            linreg: MidLinConfig::default(),
            tree: TreeConfig::default(),
            vib: VibConfig::default(),
            dpsgd: DpsgdConfig::default(),
            inversion: InversionConfig::default(),
            row_bound: None,
            label_bound: 4.0,
            ece_bins: 10,
            smoothing: false,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn attack_metrics(&self) -> Vec<AttackMetric> {
        self.attack_metrics
            .clone()
            .unwrap_or_else(|| self.model.default_attack_metrics())
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions.unwrap_or_else(|| self.model.default_repetitions())
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == Some(0) {
            return Err(config_err("repetitions must be >= 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(config_err(format!("test_fraction must be in (0, 1), got {}", self.test_fraction)));
        }
        if self.defenses.is_empty() {
            return Err(config_err("no defenses given"));
        }
        if self.attacks.is_empty() {
            return Err(config_err("no attacks given"));
        }
        if self.attack_metrics.as_ref().is_some_and(|m| m.is_empty()) {
            return Err(config_err("no attack metrics given"));
        }
        if self.ece_bins == 0 {
            return Err(config_err("ece_bins must be >= 1"));
        }
        if !(self.label_bound > 0.0 && self.label_bound.is_finite()) {
            return Err(config_err("label_bound must be positive"));
        }
        if let Some(b) = self.row_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(config_err("row_bound must be positive"));
            }
        }
        for d in &self.defenses {
            let bad_grid = match d {
                Defense::None => false,
                Defense::Mid { lambdas } => lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())),
                Defense::Dp { epsilons, delta } => {
                    epsilons.is_empty()
                        || epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite()))
                        || !(*delta > 0.0 && *delta < 1.0)
                }
                Defense::Priority { depths } => depths.is_empty(),
            };
            if bad_grid {
                return Err(config_err(format!("defense '{}' has an empty or invalid grid", d.name())));
            }
            if matches!(d, Defense::Priority { .. }) && self.model != ModelFamily::Tree {
                return Err(config_err("the priority defense applies to trees only"));
            }
        }
        for a in &self.attacks {
            match (a, self.model) {
                (AttackKind::Gmi | AttackKind::UpdateLeaks, _) => {
                    return Err(config_err(format!("attack '{}' is not implemented", a.as_str())))
                }
                (AttackKind::MapWithCounts, m) if m != ModelFamily::Tree => {
                    return Err(config_err("map_with_counts applies to trees only"))
                }
                (AttackKind::KnowledgeAlignment, ModelFamily::Linreg) => {
                    return Err(config_err("knowledge_alignment needs a classifier"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Records

/// One (grid point, attack) row of a sweep, aggregated over repetitions.
/// Every `_stderr` is the sample standard deviation over repetitions divided
/// by `sqrt(R)` (0 when `R = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRecord {
    pub model: String,
    pub defense: String,
    pub hyperparameter_name: String,
    pub hyperparameter: f64,
    pub utility_metric: String,
    pub utility_mean: f64,
    pub utility_stderr: f64,
    pub attack: String,
    pub attack_metric: String,
    pub attack_train_mean: f64,
    pub attack_train_stderr: f64,
    pub attack_test_mean: f64,
    pub attack_test_stderr: f64,
    /// Per-repetition `train - test`, averaged.
    pub gap_mean: f64,
    pub gap_stderr: f64,
    /// Accuracy of guessing the training prior's mode.
    pub baseline_train_mean: f64,
    pub baseline_train_stderr: f64,
    pub baseline_test_mean: f64,
    pub baseline_test_stderr: f64,
    /// Classification only.
    pub ece_mean: Option<f64>,
    pub ece_stderr: Option<f64>,
    pub repetitions: usize,
}

const RECORD_COLUMNS: [&str; 22] = [
    "model",
    "defense",
    "hyperparameter_name",
    "hyperparameter",
    "utility_metric",
    "utility_mean",
    "utility_stderr",
    "attack",
    "attack_metric",
    "attack_train_mean",
    "attack_train_stderr",
    "attack_test_mean",
    "attack_test_stderr",
    "gap_mean",
    "gap_stderr",
    "baseline_train_mean",
    "baseline_train_stderr",
    "baseline_test_mean",
    "baseline_test_stderr",
    "ece_mean",
    "ece_stderr",
    "repetitions",
];

fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

impl TradeoffRecord {
    fn to_row(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.defense.clone(),
            self.hyperparameter_name.clone(),
            format_real(self.hyperparameter),
            self.utility_metric.clone(),
            format_real(self.utility_mean),
            format_real(self.utility_stderr),
            self.attack.clone(),
            self.attack_metric.clone(),
            format_real(self.attack_train_mean),
            format_real(self.attack_train_stderr),
            format_real(self.attack_test_mean),
            format_real(self.attack_test_stderr),
            format_real(self.gap_mean),
            format_real(self.gap_stderr),
            format_real(self.baseline_train_mean),
            format_real(self.baseline_train_stderr),
            format_real(self.baseline_test_mean),
            format_real(self.baseline_test_stderr),
            opt_real(self.ece_mean),
            opt_real(self.ece_stderr),
            self.repetitions.to_string(),
        ]
    }

    fn from_row(row: &csv::StringRecord, line: usize) -> Result<Self> {
        let get = |j: usize| row.get(j).unwrap_or("");
        let real = |j: usize| -> Result<f64> {
            get(j).parse::<f64>().map_err(|e| Error::Csv {
                row: line,
                column: RECORD_COLUMNS[j].into(),
                message: e.to_string(),
            })
        };
        let opt = |j: usize| -> Result<Option<f64>> {
            if get(j).is_empty() {
                Ok(None)
            } else {
                real(j).map(Some)
            }
        };
        Ok(TradeoffRecord {
            model: get(0).into(),
            defense: get(1).into(),
            hyperparameter_name: get(2).into(),
            hyperparameter: real(3)?,
            utility_metric: get(4).into(),
            utility_mean: real(5)?,
            utility_stderr: real(6)?,
            attack: get(7).into(),
            attack_metric: get(8).into(),
            attack_train_mean: real(9)?,
            attack_train_stderr: real(10)?,
            attack_test_mean: real(11)?,
            attack_test_stderr: real(12)?,
            gap_mean: real(13)?,
            gap_stderr: real(14)?,
            baseline_train_mean: real(15)?,
            baseline_train_stderr: real(16)?,
            baseline_test_mean: real(17)?,
            baseline_test_stderr: real(18)?,
            ece_mean: opt(19)?,
            ece_stderr: opt(20)?,
            repetitions: get(21).parse().map_err(|_| Error::Csv {
                row: line,
                column: "repetitions".into(),
                message: format!("not an integer: '{}'", get(21)),
            })?,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_records_csv<W: Write>(writer: W, records: &[TradeoffRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record(r.to_row()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_records_csv(path: impl AsRef<Path>, records: &[TradeoffRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_records_csv(std::fs::File::create(path)?, records)
}

pub fn load_records_csv(path: impl AsRef<Path>) -> Result<Vec<TradeoffRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(RECORD_COLUMNS.iter().copied()) {
        return Err(Error::Csv {
            row: 0,
            column: String::new(),
            message: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        out.push(TradeoffRecord::from_row(&row.map_err(csv_err)?, i + 1)?);
    }
    Ok(out)
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// One repetition

enum Fitted {
    Linear(LinearModel),
    Tree(DecisionTree),
    Nn(MlpVib),
}

impl Fitted {
    fn to_json(&self) -> Result<String> {
        match self {
            Fitted::Linear(m) => Ok(serde_json::to_string_pretty(m)?),
            Fitted::Tree(t) => t.to_json(),
            Fitted::Nn(m) => m.to_json(),
        }
    }

    fn proba(&self, row: &[f64]) -> Vec<f64> {
        match self {
            Fitted::Tree(t) => t.predict(row).1,
            Fitted::Nn(m) => m.predict_proba(row, PredictMode::Mean),
            Fitted::Linear(_) => unreachable!("regression models have no confidence vector"),
        }
    }
}

/// Outcome of one repetition at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionOutcome {
    pub utility: f64,
    pub ece: Option<f64>,
    /// Per attack then per metric, in config order: `(train, test)`.
    pub attacks: Vec<Vec<(f64, f64)>>,
    /// Per metric: the prior-mode guess scored on `(train, test)`.
    pub baseline: Vec<(f64, f64)>,
}

/// Streams derived from a repetition seed.
pub const STREAM_SPLIT: u64 = 0;
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_ATTACK: u64 = 2;

fn fit(cfg: &ExperimentConfig, point: GridPoint, train: &Dataset, seed: Seed) -> Result<Fitted> {
    Ok(match cfg.model {
        ModelFamily::Linreg => Fitted::Linear(match point {
            GridPoint::None => train_ridge(train, cfg.linreg.ridge)?,
            GridPoint::Mid(lambda) => train_mid_linear(train, &MidLinConfig { lambda, ..cfg.linreg.clone() })?,
            GridPoint::Dp(eps, delta) => {
                let bx = cfg.row_bound.unwrap_or_else(|| schema_row_bound(train.schema()));
                train_adassp(train, eps, delta, (bx, cfg.label_bound), seed)?
            }
            GridPoint::Priority(_) => return Err(config_err("priority applies to trees only")),
        }),
        ModelFamily::Tree => {
            let base = TreeConfig {
                lambda: 0.0,
                ..cfg.tree.clone()
            };
            Fitted::Tree(match point {
                GridPoint::None => train_id3(train, &base)?,
                GridPoint::Mid(lambda) => train_id3(train, &TreeConfig { lambda, ..base })?,
                GridPoint::Dp(eps, _) => train_dp_id3(train, eps, &base, seed)?,
                GridPoint::Priority(depth) => train_priority(train, &base, depth)?,
            })
        }
        ModelFamily::Nn => Fitted::Nn(match point {
            GridPoint::None | GridPoint::Mid(_) => {
                let lambda = if let GridPoint::Mid(l) = point { l } else { 0.0 };
                train_vib(train, &VibConfig { lambda, seed, ..cfg.vib.clone() })?.model
            }
            GridPoint::Dp(eps, delta) => {
                let base = &cfg.dpsgd;
                let batch = base.batch_size.min(train.len());
                let steps = dpsgd_steps(train.len(), batch, base.epochs);
                let q = batch as f64 / train.len() as f64;
                let sigma = noise_multiplier_for_epsilon(eps, q, steps, delta)?;
                let dp = DpsgdConfig {
                    noise_multiplier: sigma,
                    batch_size: batch,
                    target_delta: delta,
                    seed,
                    ..base.clone()
                };
                train_dpsgd(train, &dp)?.model
            }
            GridPoint::Priority(_) => return Err(config_err("priority applies to trees only")),
        }),
    })
}

fn utility_and_ece(cfg: &ExperimentConfig, model: &Fitted, test: &Dataset) -> Result<(f64, Option<f64>)> {
    match model {
        Fitted::Linear(m) => Ok((mse(&m.predict(test), test.labels())?, None)),
        Fitted::Tree(_) | Fitted::Nn(_) => {
            let k = test.require_classification()?;
            let truth = test.classes();
            let mut pred = Vec::with_capacity(test.len());
            let mut conf = Vec::with_capacity(test.len());
            for row in test.rows() {
                let p = model.proba(row);
                let c = crate::tree::argmax_lowest(&p);
                pred.push(c);
                conf.push(p[c]);
            }
            let correct: Vec<bool> = pred.iter().zip(&truth).map(|(a, b)| a == b).collect();
            let calib = ece(&conf, &correct, cfg.ece_bins)?.ece;
            let u = match model {
                Fitted::Tree(_) => f1_macro(&pred, &truth, k)?.macro_f1,
                _ => accuracy(&pred, &truth)?,
            };
            Ok((u, Some(calib)))
        }
    }
}

fn map_scores(
    cfg: &ExperimentConfig,
    kind: AttackKind,
    model: &Fitted,
    schema: &FeatureSchema,
    row: &[f64],
    label: f64,
    prior: &SensitivePrior,
) -> Result<CandidateScores> {
    match (model, kind) {
        (Fitted::Linear(m), _) => map_attack_linreg(m, schema, row, label, prior),
        (Fitted::Tree(t), AttackKind::MapWithCounts) => {
            map_attack_tree(t, row, label as usize, prior, TreeAttackMode::WithCounts, cfg.smoothing)
        }
        (Fitted::Tree(t), _) => map_attack_tree(t, row, label as usize, prior, TreeAttackMode::Blackbox, false),
        (Fitted::Nn(m), _) => {
            let oracle = |r: &[f64]| m.predict_proba(r, PredictMode::Mean);
            map_attack_blackbox(&oracle, schema, row, label as usize, prior)
        }
    }
}

/// Run one attack on the training rows and on the test rows. Knowledge
/// Alignment uses the first half of the (already shuffled) test rows as the
/// attacker's auxiliary data and is scored on the second half.
fn run_attack(
    cfg: &ExperimentConfig,
    kind: AttackKind,
    model: &Fitted,
    train: &Dataset,
    test: &Dataset,
    prior: &SensitivePrior,
    seed: Seed,
) -> Result<AttackResult> {
    let schema = train.schema();
    match kind {
        AttackKind::NaiveMap | AttackKind::MapWithCounts => {
            let run = |d: &Dataset, split| {
                AttackResult::run(d, split, |row, y| map_scores(cfg, kind, model, schema, row, y, prior))
            };
            let mut r = run(train, Split::Train)?;
            r.extend(run(test, Split::Test)?);
            Ok(r)
        }
        AttackKind::KnowledgeAlignment => {
            if test.len() < 2 {
                return Err(Error::InvalidArgument("knowledge alignment needs >= 2 test rows".into()));
            }
            let half = test.len() / 2;
            let aux = test.subset(&(0..half).collect::<Vec<_>>())?;
            let held = test.subset(&(half..test.len()).collect::<Vec<_>>())?;
            let oracle = |r: &[f64]| model.proba(r);
            let inv_cfg = InversionConfig {
                seed,
                ..cfg.inversion.clone()
            };
            let g = train_inversion_model(&oracle, &aux, &inv_cfg)?;
            let run = |d: &Dataset, split| {
                AttackResult::run(d, split, |row, _| {
                    let recon = g.invert(&oracle(row))?;
                    Ok(CandidateScores {
                        predicted: g.decode_sensitive(&recon),
                        scores: g.sensitive_block(&recon).to_vec(),
                        fallback: false,
                    })
                })
            };
            let mut r = run(train, Split::Train)?;
            r.extend(run(&held, Split::Test)?);
            Ok(r)
        }
        AttackKind::Gmi | AttackKind::UpdateLeaks => Err(config_err(format!("attack '{}' is not implemented", kind.as_str()))),
    }
}

/// Guessing the prior's mode, with the prior as score vector.
fn prior_result(prior: &SensitivePrior, train: &Dataset, test: &Dataset) -> Result<AttackResult> {
    let mut r = AttackResult::run(train, Split::Train, |_, _| Ok(prior_baseline(prior)))?;
    r.extend(AttackResult::run(test, Split::Test, |_, _| Ok(prior_baseline(prior)))?);
    Ok(r)
}

fn score_both(metrics: &[AttackMetric], k: usize, r: &AttackResult) -> Result<Vec<(f64, f64)>> {
    metrics
        .iter()
        .map(|m| Ok((m.score(r, Split::Train, k)?, m.score(r, Split::Test, k)?)))
        .collect()
}

/// A model trained at one grid point, with its attack results.
pub struct SingleRun {
    /// The model in its JSON serialization.
    pub model_json: String,
    pub utility_metric: &'static str,
    pub utility: f64,
    pub ece: Option<f64>,
    pub attacks: Vec<(AttackKind, AttackResult)>,
    pub baseline: AttackResult,
}

fn single_run(cfg: &ExperimentConfig, data: &Dataset, point: GridPoint, seed: Seed) -> Result<SingleRun> {
    let (tr, te) = split_indices(data.len(), cfg.test_fraction, seed.derive(STREAM_SPLIT))?;
    let train = data.subset(&tr)?;
    let test = data.subset(&te)?;
    let model = fit(cfg, point, &train, seed.derive(STREAM_TRAIN))?;
    let (utility, ece) = utility_and_ece(cfg, &model, &test)?;
    let prior = SensitivePrior::from_data(&train)?;
    let attack_seed = seed.derive(STREAM_ATTACK);
    let mut attacks = Vec::with_capacity(cfg.attacks.len());
    for (j, &kind) in cfg.attacks.iter().enumerate() {
        attacks.push((kind, run_attack(cfg, kind, &model, &train, &test, &prior, attack_seed.derive(j as u64))?));
    }
    Ok(SingleRun {
        model_json: model.to_json()?,
        utility_metric: cfg.model.utility_metric(),
        utility,
        ece,
        attacks,
        baseline: prior_result(&prior, &train, &test)?,
    })
}

fn run_repetition(cfg: &ExperimentConfig, data: &Dataset, point: GridPoint, seed: Seed) -> Result<RepetitionOutcome> {
    let run = single_run(cfg, data, point, seed)?;
    let k = data
        .schema()
        .sensitive_cardinality()
        .ok_or_else(|| Error::InvalidArgument("sensitive feature must be categorical".into()))?;
    let metrics = cfg.attack_metrics();
    Ok(RepetitionOutcome {
        utility: run.utility,
        ece: run.ece,
        attacks: run
            .attacks
            .iter()
            .map(|(_, r)| score_both(&metrics, k, r))
            .collect::<Result<Vec<_>>>()?,
        baseline: score_both(&metrics, k, &run.baseline)?,
    })
}

/// Train and attack once: the first grid point of the first defense, on the
/// split of repetition 0. Backs the CLI's `train` and `attack` commands.
pub fn run_single(config: &ExperimentConfig) -> Result<SingleRun> {
    config.validate()?;
    let data = config.data.load(config.seed)?;
    let point = config.defenses[0].grid()[0];
    single_run(config, &data, point, config.seed).map_err(|e| e.context(point.describe()))
}

fn aggregate(cfg: &ExperimentConfig, point: GridPoint, outcomes: &[RepetitionOutcome]) -> Vec<TradeoffRecord> {
    let col = |f: &dyn Fn(&RepetitionOutcome) -> f64| mean_stderr(&outcomes.iter().map(f).collect::<Vec<_>>());
    let (u, u_se) = col(&|o| o.utility);
    let ece_stats = outcomes[0].ece.map(|_| col(&|o| o.ece.unwrap_or(f64::NAN)));
    let (hp_name, hp) = point.hyperparameter();
    let mut out = Vec::new();
    for (j, kind) in cfg.attacks.iter().enumerate() {
        for (m, metric) in cfg.attack_metrics().iter().enumerate() {
            let (tr, tr_se) = col(&|o| o.attacks[j][m].0);
            let (te, te_se) = col(&|o| o.attacks[j][m].1);
            let (gap, gap_se) = col(&|o| o.attacks[j][m].0 - o.attacks[j][m].1);
            let (b_tr, b_tr_se) = col(&|o| o.baseline[m].0);
            let (b_te, b_te_se) = col(&|o| o.baseline[m].1);
            out.push(TradeoffRecord {
                model: cfg.model.as_str().into(),
                defense: point.defense().into(),
                hyperparameter_name: hp_name.into(),
                hyperparameter: hp,
                utility_metric: cfg.model.utility_metric().into(),
                utility_mean: u,
                utility_stderr: u_se,
                attack: kind.as_str().into(),
                attack_metric: metric.as_str().into(),
                attack_train_mean: tr,
                attack_train_stderr: tr_se,
                attack_test_mean: te,
                attack_test_stderr: te_se,
                gap_mean: gap,
                gap_stderr: gap_se,
                baseline_train_mean: b_tr,
                baseline_train_stderr: b_tr_se,
                baseline_test_mean: b_te,
                baseline_test_stderr: b_te_se,
                ece_mean: ece_stats.map(|s| s.0),
                ece_stderr: ece_stats.map(|s| s.1),
                repetitions: outcomes.len(),
            });
        }
    }
    out
}

/// Run every grid point of every defense for `R` repetitions and aggregate.
///
/// When `config.output` is set the CSV is rewritten after each grid point, so
/// a failure leaves the completed points on disk. Errors carry the grid point
/// and repetition at which they occurred.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<TradeoffRecord>> {
    config.validate()?;
    let data = config.data.load(config.seed)?;
    run_sweep_on(config, &data)
}

/// [`run_sweep`] on an already materialized dataset.
pub fn run_sweep_on(config: &ExperimentConfig, data: &Dataset) -> Result<Vec<TradeoffRecord>> {
    config.validate()?;
    let reps = config.repetitions();
    let mut records = Vec::new();
    for defense in &config.defenses {
        for point in defense.grid() {
            let mut outcomes = Vec::with_capacity(reps);
            for i in 0..reps {
                let outcome = run_repetition(config, data, point, config.seed.offset(i as u64))
                    .map_err(|e| e.context(format!("{}, repetition {i}", point.describe())))?;
                outcomes.push(outcome);
            }
            records.extend(aggregate(config, point, &outcomes));
            if let Some(path) = &config.output {
                save_records_csv(path, &records)?;
            }
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Plot data

pub const PLOT_COLUMNS: [&str; 8] = [
    "series",
    "hyperparameter",
    "x",
    "x_stderr",
    "y",
    "y_stderr",
    "y_test",
    "y_test_stderr",
];

const PLOT_HEADER_DOC: &str = "\
series: defense name
hyperparameter: grid value (lambda, epsilon or min_depth; 0 for none)
x: utility mean over repetitions
x_stderr: standard error of x
y: attack metric on the training split
y_stderr: standard error of y
y_test: attack metric on the test split
y_test_stderr: standard error of y_test
rows are grouped by series and sorted by x within each series
";

/// Write one plot-ready CSV per `(model, attack, attack metric)` into `dir`,
/// each with a `.columns.txt` sidecar describing its columns. Returns the CSV
/// paths.
pub fn emit_plotdata(records: &[TradeoffRecord], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Empty("tradeoff records".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<(&str, &str, &str), Vec<&TradeoffRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.model, &r.attack, &r.attack_metric)).or_default().push(r);
    }
    let mut paths = Vec::new();
    for ((model, attack, metric), rows) in groups {
        let mut series: Vec<&str> = Vec::new();
        for r in &rows {
            if !series.contains(&r.defense.as_str()) {
                series.push(&r.defense);
            }
        }
        let stem = format!("{model}_{attack}_{metric}");
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(PLOT_COLUMNS).map_err(csv_err)?;
        for s in series {
            let mut sel: Vec<&&TradeoffRecord> = rows.iter().filter(|r| r.defense == s).collect();
            sel.sort_by(|a, b| a.utility_mean.total_cmp(&b.utility_mean));
            for r in sel {
                w.write_record([
                    r.defense.clone(),
                    format_real(r.hyperparameter),
                    format_real(r.utility_mean),
                    format_real(r.utility_stderr),
                    format_real(r.attack_train_mean),
                    format_real(r.attack_train_stderr),
                    format_real(r.attack_test_mean),
                    format_real(r.attack_test_stderr),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        let utility = rows[0].utility_metric.as_str();
        std::fs::write(
            dir.join(format!("{stem}.columns.txt")),
            format!("model: {model}\nattack: {attack}\nx metric: {utility}\ny metric: {metric}\n{PLOT_HEADER_DOC}"),
        )?;
        paths.push(path);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Games

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JointSource {
    Table { joint: DiscreteJoint },
    Uniform { domains: Domains },
    /// Flat-Dirichlet draw.
    Random { domains: Domains, seed: Seed },
    /// `|X_s| = 16, |X_ns| = 8, |Y| = 2` with `x_s` determined by `(x_ns, y)`.
    TightnessProbe,
}

impl JointSource {
    pub fn build(&self) -> Result<DiscreteJoint> {
        match self {
            JointSource::Table { joint } => Ok(joint.clone()),
            JointSource::Uniform { domains } => DiscreteJoint::uniform(*domains),
            JointSource::Random { domains, seed } => DiscreteJoint::random(*domains, *seed),
            JointSource::TightnessProbe => Ok(crate::games::tightness_probe_joint()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GamesConfig {
    pub joint: JointSource,
    /// Defaults to the identity on sensitive codes.
    pub tau: Option<PropertyFunction>,
    pub mechanism: MechanismSpec,
    pub adversaries: Vec<Adversary>,
    pub distinguishers: Vec<Distinguisher>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: Seed,
    pub theorem1: bool,
    pub theorem2: bool,
}

impl Default for GamesConfig {
    fn default() -> Self {
        GamesConfig {
            joint: JointSource::Random {
                domains: Domains::new(2, 2, 2),
                seed: Seed(1),
            },
            tau: None,
            mechanism: MechanismSpec::honest(Mechanism::LaplaceHistogram { epsilon: 1.0 }),
            adversaries: vec![Adversary::Bayes, Adversary::UniformRandom, Adversary::Constant { guess: 0 }],
            distinguishers: vec![
                Distinguisher::Constant { bit: 0 },
                Distinguisher::LikelihoodRatio,
                Distinguisher::FromAdversary {
                    adversary: Adversary::Bayes,
                },
            ],
            sizes: vec![1, 2, 5],
            trials: 20_000,
            seed: Seed(0),
            theorem1: true,
            theorem2: true,
        }
    }
}

impl GamesConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(config_err("trials must be >= 1"));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(config_err("sizes must be non-empty and >= 1"));
        }
        if !self.theorem1 && !self.theorem2 {
            return Err(config_err("nothing to verify"));
        }
        if self.theorem1 && self.adversaries.is_empty() {
            return Err(config_err("theorem1 needs at least one adversary"));
        }
        if self.distinguishers.is_empty() && (self.theorem2 || self.adversaries.is_empty()) {
            return Err(config_err("no distinguishers"));
        }
        if self.theorem2 && matches!(self.mechanism.declared, Privacy::NonPrivate) {
            return Err(config_err("theorem2 needs a mechanism that declares a DP guarantee"));
        }
        let joint = self.joint.build().map_err(|e| config_err(e.to_string()))?;
        self.mechanism.validate(joint.domains()).map_err(|e| config_err(e.to_string()))?;
        if let Some(tau) = &self.tau {
            if tau.map.len() != joint.domains().sensitive {
                return Err(config_err("tau must map every sensitive code"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamesReport {
    pub best_possible_gain: f64,
    pub theorem1: Vec<Theorem1Report>,
    pub theorem2: Vec<Theorem2Report>,
    /// False when any checked bound is violated beyond its slack.
    pub pass: bool,
}

/// Run the requested verifiers at every training-set size. Size `n` uses the
/// seed stream `seed.derive(n)`.
pub fn run_games(config: &GamesConfig) -> Result<GamesReport> {
    config.validate()?;
    let p = config.joint.build()?;
    let tau = config
        .tau
        .clone()
        .unwrap_or_else(|| PropertyFunction::identity(p.domains().sensitive));
    let best = best_possible_gain(&p, &tau)?;
    let ctx = GameContext::new(p, tau)?;
    let mut t1 = Vec::new();
    let mut t2 = Vec::new();
    for &n in &config.sizes {
        let seed = config.seed.derive(n as u64);
        let ctx_err = |e: Error| e.context(format!("n={n}"));
        if config.theorem1 {
            t1.push(
                verify_theorem1(
                    &config.adversaries,
                    &config.distinguishers,
                    &config.mechanism,
                    &ctx,
                    n,
                    config.trials,
                    seed,
                )
                .map_err(ctx_err)?,
            );
        }
        if config.theorem2 {
            t2.push(
                verify_theorem2(&config.distinguishers, &config.mechanism, &ctx, n, config.trials, seed).map_err(ctx_err)?,
            );
        }
    }
    Ok(GamesReport {
        best_possible_gain: best,
        pass: t1.iter().all(|r| r.pass) && t2.iter().all(|r| r.pass),
        theorem1: t1,
        theorem2: t2,
    })
}
