//! Synthetic data in which the sensitive attribute is correlated with the
//! nonsensitive features and the label by construction.
//!
//! Generation order per row: draw the sensitive code `v ~ prior`, draw every
//! other feature from its conditional given `v`, then draw the label from the
//! label model evaluated on the complete row.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Feature, FeatureKind, FeatureSchema, LabelKind};
use crate::error::{Error, Result};
use crate::seed::Seed;

const PROB_TOL: f64 = 1e-9;

/// Conditional model of one feature given the sensitive code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureModel {
    /// Placeholder at the schema's sensitive index.
    Sensitive,
    /// Gaussian with per-sensitive-value mean and std, clipped to the schema's `[lo, hi]`.
    Continuous { means: Vec<f64>, stds: Vec<f64> },
    /// One category distribution per sensitive value.
    Categorical { probs: Vec<Vec<f64>> },
}

/// Contribution of one feature to a linear score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureWeight {
    /// `w * value` for continuous features.
    Linear(f64),
    /// Table lookup by category code.
    PerCode(Vec<f64>),
}

impl FeatureWeight {
    fn apply(&self, value: f64) -> f64 {
        match self {
            FeatureWeight::Linear(w) => w * value,
            FeatureWeight::PerCode(ws) => ws[value as usize],
        }
    }

    fn check(&self, f: &Feature) -> Result<()> {
        match (self, &f.kind) {
            (FeatureWeight::Linear(w), FeatureKind::Continuous { .. }) if w.is_finite() => Ok(()),
            (FeatureWeight::PerCode(ws), FeatureKind::Categorical { cardinality })
                if ws.len() == *cardinality && ws.iter().all(|w| w.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidArgument(format!(
                "label weight for feature '{}' does not match its kind",
                f.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LabelModel {
    /// `y = intercept + sum_j w_j(x_j) + N(0, noise^2)`.
    Regression {
        intercept: f64,
        weights: Vec<FeatureWeight>,
        noise: f64,
    },
    /// `y ~ softmax(intercepts[c] + sum_j weights[c][j](x_j))`.
    Classification {
        intercepts: Vec<f64>,
        weights: Vec<Vec<FeatureWeight>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Distribution of the sensitive code.
    pub prior: Vec<f64>,
    /// One entry per schema feature, `Sensitive` at the sensitive index.
    pub features: Vec<FeatureModel>,
    pub label: LabelModel,
    pub n_samples: usize,
}

fn check_prob(p: &[f64], what: &str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidArgument(format!(
            "{what} must be a probability vector (sum {sum})"
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        schema.validate()?;
        let k = schema.sensitive_cardinality().ok_or_else(|| {
            Error::InvalidArgument("synthetic generation needs a categorical sensitive attribute".into())
        })?;
        if self.prior.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "prior has {} entries, sensitive cardinality is {k}",
                self.prior.len()
            )));
        }
        check_prob(&self.prior, "prior")?;
        if self.features.len() != schema.num_features() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature models for {} features",
                self.features.len(),
                schema.num_features()
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be positive".into()));
        }
        for (j, (model, f)) in self.features.iter().zip(&schema.features).enumerate() {
            match (model, &f.kind) {
                (FeatureModel::Sensitive, _) if j == schema.sensitive_index => {}
                (FeatureModel::Continuous { means, stds }, FeatureKind::Continuous { .. })
                    if j != schema.sensitive_index =>
                {
                    if means.len() != k || stds.len() != k {
                        return Err(Error::DimensionMismatch(format!(
                            "feature '{}' needs {k} means and stds",
                            f.name
                        )));
                    }
                    if stds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || means.iter().any(|m| !m.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "feature '{}' needs finite means and positive stds",
                            f.name
                        )));
                    }
                }
                (FeatureModel::Categorical { probs }, FeatureKind::Categorical { cardinality })
                    if j != schema.sensitive_index =>
                {
                    if probs.len() != k || probs.iter().any(|p| p.len() != *cardinality) {
                        return Err(Error::DimensionMismatch(format!(
                            "feature '{}' needs {k} probability vectors of length {cardinality}",
                            f.name
                        )));
                    }
                    for p in probs {
                        check_prob(p, &format!("conditional of '{}'", f.name))?;
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "feature model {j} ('{}') does not match the schema",
                        f.name
                    )))
                }
            }
        }
        match (&self.label, schema.label) {
            (LabelModel::Regression { weights, noise, intercept }, LabelKind::Regression) => {
                self.check_weights(weights, schema)?;
                if !(*noise >= 0.0) || !noise.is_finite() || !intercept.is_finite() {
                    return Err(Error::InvalidArgument("regression noise must be finite and >= 0".into()));
                }
            }
            (LabelModel::Classification { intercepts, weights }, LabelKind::Classification { num_classes }) => {
                if intercepts.len() != num_classes || weights.len() != num_classes {
                    return Err(Error::DimensionMismatch(format!(
                        "classification label model needs {num_classes} intercepts and weight rows"
                    )));
                }
                for w in weights {
                    self.check_weights(w, schema)?;
                }
            }
            _ => return Err(Error::InvalidArgument("label model does not match the schema label".into())),
        }
        Ok(())
    }

    fn check_weights(&self, weights: &[FeatureWeight], schema: &FeatureSchema) -> Result<()> {
        if weights.len() != schema.num_features() {
            return Err(Error::DimensionMismatch(format!(
                "{} label weights for {} features",
                weights.len(),
                schema.num_features()
            )));
        }
        weights
            .iter()
            .zip(&schema.features)
            .try_for_each(|(w, f)| w.check(f))
    }
}

/// Draw `config.n_samples` rows.
pub fn synth_generate(config: &SynthConfig, schema: &FeatureSchema, seed: Seed) -> Result<Dataset> {
    config.validate(schema)?;
    let mut rng = seed.rng();
    let prior = WeightedIndex::new(&config.prior).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    // Pre-build samplers, indexed [feature][sensitive value].
    let mut cat_samplers: Vec<Vec<WeightedIndex<f64>>> = Vec::with_capacity(config.features.len());
    for model in &config.features {
        let samplers = match model {
            FeatureModel::Categorical { probs } => probs
                .iter()
                .map(|p| WeightedIndex::new(p).map_err(|e| Error::InvalidArgument(e.to_string())))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        cat_samplers.push(samplers);
    }

    let mut rows = Vec::with_capacity(config.n_samples);
    let mut labels = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let v = prior.sample(&mut rng);
        let mut row = Vec::with_capacity(config.features.len());
        for (j, model) in config.features.iter().enumerate() {
            let x = match model {
                FeatureModel::Sensitive => v as f64,
                FeatureModel::Continuous { means, stds } => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let x = means[v] + stds[v] * z;
                    match schema.features[j].kind {
                        FeatureKind::Continuous { lo, hi } => x.clamp(lo, hi),
                        FeatureKind::Categorical { .. } => unreachable!("validated"),
                    }
                }
                FeatureModel::Categorical { .. } => cat_samplers[j][v].sample(&mut rng) as f64,
            };
            row.push(x);
        }
        let y = match &config.label {
            LabelModel::Regression {
                intercept,
                weights,
                noise,
            } => {
                let mean = intercept + score(weights, &row);
                if *noise > 0.0 {
                    Normal::new(mean, *noise)
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?
                        .sample(&mut rng)
                } else {
                    mean
                }
            }
            LabelModel::Classification { intercepts, weights } => {
                let logits: Vec<f64> = intercepts
                    .iter()
                    .zip(weights)
                    .map(|(b, w)| b + score(w, &row))
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let probs: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                WeightedIndex::new(&probs)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?
                    .sample(&mut rng) as f64
            }
        };
        rows.push(row);
        labels.push(y);
    }
    Dataset::new(schema.clone(), rows, labels)
}

fn score(weights: &[FeatureWeight], row: &[f64]) -> f64 {
    weights.iter().zip(row).map(|(w, &x)| w.apply(x)).sum()
}

/// Named benchmark generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Warfarin-dosing-like regression; sensitive genotype with 3 imbalanced codes.
    Iwpc,
    /// Lifestyle-survey-like classification; all features categorical.
    Survey,
    /// Continuous blobs for the neural-network family; binary sensitive attribute.
    Blobs,
}

impl Preset {
    pub fn build(self, n_samples: usize) -> (FeatureSchema, SynthConfig) {
        match self {
            Preset::Iwpc => iwpc_like(n_samples),
            Preset::Survey => survey_like(n_samples),
            Preset::Blobs => blobs_with_sensitive(n_samples),
        }
    }
}

/// Regression benchmark modelled on pharmacogenetic dosing data: the label
/// depends strongly on the sensitive genotype, which also shifts the race and
/// body-size distributions.
pub fn iwpc_like(n_samples: usize) -> (FeatureSchema, SynthConfig) {
    let schema = FeatureSchema::new(
        vec![
            Feature::categorical("race", 3),
            Feature::categorical("age_decade", 5),
            Feature::continuous("height", -4.0, 4.0),
            Feature::continuous("weight", -4.0, 4.0),
            Feature::categorical("vkorc1", 3),
            Feature::categorical("cyp2c9", 3),
            Feature::categorical("amiodarone", 2),
            Feature::categorical("enzyme_inducer", 2),
        ],
        4,
        LabelKind::Regression,
    )
    .expect("preset schema is valid");
    let config = SynthConfig {
        prior: vec![0.55, 0.3, 0.15],
        features: vec![
            FeatureModel::Categorical {
                probs: vec![vec![0.6, 0.25, 0.15], vec![0.35, 0.35, 0.3], vec![0.15, 0.3, 0.55]],
            },
            FeatureModel::Categorical {
                probs: vec![vec![0.2; 5], vec![0.2; 5], vec![0.2; 5]],
            },
            FeatureModel::Continuous {
                means: vec![0.2, 0.0, -0.4],
                stds: vec![1.0, 1.0, 1.0],
            },
            FeatureModel::Continuous {
                means: vec![0.2, 0.0, -0.3],
                stds: vec![1.0, 1.0, 1.0],
            },
            FeatureModel::Sensitive,
            FeatureModel::Categorical {
                probs: vec![vec![0.8, 0.15, 0.05], vec![0.8, 0.15, 0.05], vec![0.8, 0.15, 0.05]],
            },
            FeatureModel::Categorical {
                probs: vec![vec![0.9, 0.1], vec![0.9, 0.1], vec![0.9, 0.1]],
            },
            FeatureModel::Categorical {
                probs: vec![vec![0.95, 0.05], vec![0.95, 0.05], vec![0.95, 0.05]],
            },
        ],
        label: LabelModel::Regression {
            intercept: 0.0,
            weights: vec![
                FeatureWeight::PerCode(vec![0.0, -0.2, 0.1]),
                FeatureWeight::PerCode(vec![0.3, 0.15, 0.0, -0.15, -0.3]),
                FeatureWeight::Linear(0.15),
                FeatureWeight::Linear(0.2),
                FeatureWeight::PerCode(vec![0.7, 0.0, -0.8]),
                FeatureWeight::PerCode(vec![0.0, -0.3, -0.6]),
                FeatureWeight::PerCode(vec![0.0, -0.4]),
                FeatureWeight::PerCode(vec![0.0, 0.4]),
            ],
            noise: 0.35,
        },
        n_samples,
    };
    (schema, config)
}

/// Categorical survey-style classification benchmark with a binary sensitive
/// answer that shifts several other answers and the label.
pub fn survey_like(n_samples: usize) -> (FeatureSchema, SynthConfig) {
    let schema = FeatureSchema::new(
        vec![
            Feature::categorical("smoking", 2),
            Feature::categorical("alcohol", 2),
            Feature::categorical("gambling", 2),
            Feature::categorical("cheated", 2),
            Feature::categorical("gender", 2),
            Feature::categorical("age", 3),
        ],
        3,
        LabelKind::Classification { num_classes: 2 },
    )
    .expect("preset schema is valid");
    let config = SynthConfig {
        prior: vec![0.75, 0.25],
        features: vec![
            FeatureModel::Categorical {
                probs: vec![vec![0.8, 0.2], vec![0.5, 0.5]],
            },
            FeatureModel::Categorical {
                probs: vec![vec![0.6, 0.4], vec![0.3, 0.7]],
            },
            FeatureModel::Categorical {
                probs: vec![vec![0.7, 0.3], vec![0.5, 0.5]],
            },
            FeatureModel::Sensitive,
            FeatureModel::Categorical {
                probs: vec![vec![0.5, 0.5], vec![0.4, 0.6]],
            },
            FeatureModel::Categorical {
                probs: vec![vec![0.3, 0.4, 0.3], vec![0.4, 0.4, 0.2]],
            },
        ],
        label: LabelModel::Classification {
            intercepts: vec![0.0, -0.3],
            weights: vec![
                vec![
                    FeatureWeight::PerCode(vec![0.0, 0.0]),
                    FeatureWeight::PerCode(vec![0.0, 0.0]),
                    FeatureWeight::PerCode(vec![0.0, 0.0]),
                    FeatureWeight::PerCode(vec![0.0, 0.0]),
                    FeatureWeight::PerCode(vec![0.0, 0.0]),
                    FeatureWeight::PerCode(vec![0.0, 0.0, 0.0]),
                ],
                vec![
                    FeatureWeight::PerCode(vec![0.0, 0.6]),
                    FeatureWeight::PerCode(vec![0.0, 0.5]),
                    FeatureWeight::PerCode(vec![0.0, 0.4]),
                    FeatureWeight::PerCode(vec![0.0, 1.6]),
                    FeatureWeight::PerCode(vec![0.0, -0.3]),
                    FeatureWeight::PerCode(vec![0.3, 0.0, -0.4]),
                ],
            ],
        },
        n_samples,
    };
    (schema, config)
}

/// Four continuous features and a binary sensitive attribute; the label is a
/// noisy linear rule over all of them.
pub fn blobs_with_sensitive(n_samples: usize) -> (FeatureSchema, SynthConfig) {
    let schema = FeatureSchema::new(
        vec![
            Feature::categorical("group", 2),
            Feature::continuous("f1", -5.0, 5.0),
            Feature::continuous("f2", -5.0, 5.0),
            Feature::continuous("f3", -5.0, 5.0),
            Feature::continuous("f4", -5.0, 5.0),
        ],
        0,
        LabelKind::Classification { num_classes: 3 },
    )
    .expect("preset schema is valid");
    let cont = |m0: f64, m1: f64| FeatureModel::Continuous {
        means: vec![m0, m1],
        stds: vec![1.0, 1.0],
    };
    let config = SynthConfig {
        prior: vec![0.7, 0.3],
        features: vec![
            FeatureModel::Sensitive,
            cont(-0.5, 0.8),
            cont(0.3, -0.6),
            cont(0.0, 0.5),
            cont(0.0, 0.0),
        ],
        label: LabelModel::Classification {
            intercepts: vec![0.0, 0.0, 0.0],
            weights: vec![
                vec![
                    FeatureWeight::PerCode(vec![0.0, 0.0]),
                    FeatureWeight::Linear(0.0),
                    FeatureWeight::Linear(0.0),
                    FeatureWeight::Linear(0.0),
                    FeatureWeight::Linear(0.0),
                ],
                vec![
                    FeatureWeight::PerCode(vec![0.0, 1.5]),
                    FeatureWeight::Linear(2.0),
                    FeatureWeight::Linear(0.0),
                    FeatureWeight::Linear(0.5),
                    FeatureWeight::Linear(0.0),
                ],
                vec![
                    FeatureWeight::PerCode(vec![0.0, -1.0]),
                    FeatureWeight::Linear(0.0),
                    FeatureWeight::Linear(2.0),
                    FeatureWeight::Linear(0.0),
                    FeatureWeight::Linear(0.5),
                ],
            ],
        },
        n_samples,
    };
    (schema, config)
}

/// Two well-separated Gaussian blobs in 2-d with a binary label equal to the
/// blob index; the sensitive attribute is the label's noisy copy.
pub fn separable_blobs(n_samples: usize, seed: Seed) -> Result<Dataset> {
    let schema = FeatureSchema::new(
        vec![
            Feature::continuous("x1", -10.0, 10.0),
            Feature::continuous("x2", -10.0, 10.0),
            Feature::categorical("s", 2),
        ],
        2,
        LabelKind::Classification { num_classes: 2 },
    )?;
    let mut rng = seed.rng();
    let mut rows = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let noise = Normal::new(0.0, 0.5).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let flip = rand::distr::Bernoulli::new(0.1).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for i in 0..n_samples {
        let c = i % 2;
        let center = if c == 0 { (-2.0, -2.0) } else { (2.0, 2.0) };
        let s = if flip.sample(&mut rng) { 1 - c } else { c };
        rows.push(vec![
            center.0 + noise.sample(&mut rng),
            center.1 + noise.sample(&mut rng),
            s as f64,
        ]);
        labels.push(c as f64);
    }
    Dataset::new(schema, rows, labels)
}
