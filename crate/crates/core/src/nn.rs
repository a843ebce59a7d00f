//! A small MLP with a stochastic bottleneck, trained with the variational
//! information bottleneck loss, and a DPSGD-trained deterministic variant.
//!
//! Shape: `d -> H (tanh) -> (mu, logvar) in R^K -> z -> C (softmax)` with
//! `z = mu + exp(logvar / 2) * xi`. Gradients are written out by hand over a
//! flat parameter vector.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
use crate::privacy::BudgetEntry;
use crate::seed::{Rng, Seed};

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 5.0;
pub const MODEL_VERSION: u32 = 1;

/// `1/2 sum_k (exp(logvar_k) + mu_k^2 - 1 - logvar_k)`.
pub fn kl_to_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    let kl: f64 = mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
        * 0.5;
    // exp(x) >= 1 + x, so negative values are rounding only.
    kl.max(0.0)
}

/// Network input width for a schema: one-hot categoricals, continuous values
/// mapped from `[lo, hi]` to `[-1, 1]`.
pub fn input_width(schema: &FeatureSchema) -> usize {
    schema
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Categorical { cardinality } => cardinality,
            FeatureKind::Continuous { .. } => 1,
        })
        .sum()
}

pub fn encode_input(schema: &FeatureSchema, row: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for (f, &v) in schema.features.iter().zip(row) {
        match f.kind {
            FeatureKind::Categorical { cardinality } => {
                let start = out.len();
                out.resize(start + cardinality, 0.0);
                out[start + v as usize] = 1.0;
            }
            FeatureKind::Continuous { lo, hi } => {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                out.push(if half > 0.0 { (v - mid) / half } else { 0.0 });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub bottleneck: usize,
    pub classes: usize,
}

/// Offsets of each block in the flat parameter vector. Weight blocks are
/// row-major `(out, in)`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    wmu: usize,
    bmu: usize,
    wlv: usize,
    blv: usize,
    wd: usize,
    bd: usize,
    len: usize,
}

impl Dims {
    fn layout(&self) -> Layout {
        let (d, h, k, c) = (self.input, self.hidden, self.bottleneck, self.classes);
        let w1 = 0;
        let b1 = w1 + h * d;
        let wmu = b1 + h;
        let bmu = wmu + k * h;
        let wlv = bmu + k;
        let blv = wlv + k * h;
        let wd = blv + k;
        let bd = wd + c * k;
        Layout {
            w1,
            b1,
            wmu,
            bmu,
            wlv,
            blv,
            wd,
            bd,
            len: bd + c,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().len
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.bottleneck == 0 || self.classes < 2 {
            return Err(Error::InvalidArgument(format!("invalid network dims {self:?}")));
        }
        Ok(())
    }
}

/// One affine layer in the serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub name: String,
    /// `[out, in]`; `weights` is row-major.
    pub shape: [usize; 2],
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpVibJson {
    pub version: u32,
    pub dims: Dims,
    pub deterministic: bool,
    pub schema: FeatureSchema,
    pub layers: Vec<LayerJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpVibJson", into = "MlpVibJson")]
pub struct MlpVib {
    pub dims: Dims,
    /// When set, `z = mu` always and the logvar head is unused.
    pub deterministic: bool,
    pub schema: FeatureSchema,
    params: Vec<f64>,
}

const LAYER_NAMES: [&str; 4] = ["encoder_hidden", "encoder_mu", "encoder_logvar", "decoder"];

impl From<MlpVib> for MlpVibJson {
    fn from(m: MlpVib) -> Self {
        let l = m.dims.layout();
        let (d, h, k, c) = (m.dims.input, m.dims.hidden, m.dims.bottleneck, m.dims.classes);
        let blocks = [(l.w1, l.b1, h, d), (l.wmu, l.bmu, k, h), (l.wlv, l.blv, k, h), (l.wd, l.bd, c, k)];
        let layers = blocks
            .iter()
            .zip(LAYER_NAMES)
            .map(|(&(w, b, out, inp), name)| LayerJson {
                name: name.to_string(),
                shape: [out, inp],
                weights: m.params[w..w + out * inp].to_vec(),
                bias: m.params[b..b + out].to_vec(),
            })
            .collect();
        MlpVibJson {
            version: MODEL_VERSION,
            dims: m.dims,
            deterministic: m.deterministic,
            schema: m.schema,
            layers,
        }
    }
}

impl TryFrom<MlpVibJson> for MlpVib {
    type Error = Error;

    fn try_from(j: MlpVibJson) -> Result<Self> {
        if j.version != MODEL_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported model version {}", j.version)));
        }
        j.dims.validate()?;
        j.schema.validate()?;
        if input_width(&j.schema) != j.dims.input {
            return Err(Error::DimensionMismatch("schema width differs from input dim".into()));
        }
        let (d, h, k, c) = (j.dims.input, j.dims.hidden, j.dims.bottleneck, j.dims.classes);
        let expect = [(h, d), (k, h), (k, h), (c, k)];
        if j.layers.len() != 4 {
            return Err(Error::DimensionMismatch(format!("expected 4 layers, got {}", j.layers.len())));
        }
        let mut params = Vec::with_capacity(j.dims.num_params());
        for (layer, (out, inp)) in j.layers.iter().zip(expect) {
            if layer.shape != [out, inp] || layer.weights.len() != out * inp || layer.bias.len() != out {
                return Err(Error::DimensionMismatch(format!("layer '{}' has the wrong shape", layer.name)));
            }
            params.extend(&layer.weights);
            params.extend(&layer.bias);
        }
        let m = MlpVib {
            dims: j.dims,
            deterministic: j.deterministic,
            schema: j.schema,
            params,
        };
        m.check_finite()?;
        Ok(m)
    }
}

/// How `predict_proba` picks `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// `z = mu(x)`.
    Mean,
    /// One draw of `z` from the encoder distribution.
    Sample(Seed),
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
struct Cache {
    x: Vec<f64>,
    h: Vec<f64>,
    mu: Vec<f64>,
    lv: Vec<f64>,
    /// Whether logvar was inside the clamp (gradient passes).
    lv_active: Vec<bool>,
    xi: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let n_in = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, &bias)| {
        bias + w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }));
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Per-example loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub cross_entropy: f64,
    pub kl: f64,
}

impl MlpVib {
    /// Xavier-uniform weights, zero biases.
    pub fn new(dims: Dims, schema: FeatureSchema, deterministic: bool, seed: Seed) -> Result<MlpVib> {
        dims.validate()?;
        if input_width(&schema) != dims.input {
            return Err(Error::DimensionMismatch(format!(
                "schema encodes to {} inputs, dims say {}",
                input_width(&schema),
                dims.input
            )));
        }
        let l = dims.layout();
        let mut params = vec![0.0; l.len];
        let mut rng = seed.rng();
        let (d, h, k, c) = (dims.input, dims.hidden, dims.bottleneck, dims.classes);
        for (start, out, inp) in [(l.w1, h, d), (l.wmu, k, h), (l.wlv, k, h), (l.wd, c, k)] {
            let a = (6.0 / (out + inp) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("valid range");
            for p in &mut params[start..start + out * inp] {
                *p = u.sample(&mut rng);
            }
        }
        Ok(MlpVib {
            dims,
            deterministic,
            schema,
            params,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("model has non-finite parameters".into()))
        }
    }

    /// Forward pass on an encoded input with given noise (`None` = mean mode).
    fn forward(&self, x: &[f64], xi: Option<&[f64]>, c: &mut Cache) {
        let l = self.dims.layout();
        let (d, h, k) = (self.dims.input, self.dims.hidden, self.dims.bottleneck);
        let p = &self.params;
        c.x.clear();
        c.x.extend_from_slice(x);
        affine(&p[l.w1..l.b1], &p[l.b1..l.b1 + h], x, &mut c.h);
        for v in c.h.iter_mut() {
            *v = v.tanh();
        }
        debug_assert_eq!(x.len(), d);
        affine(&p[l.wmu..l.bmu], &p[l.bmu..l.bmu + k], &c.h, &mut c.mu);
        affine(&p[l.wlv..l.blv], &p[l.blv..l.blv + k], &c.h, &mut c.lv);
        c.lv_active.clear();
        for v in c.lv.iter_mut() {
            c.lv_active.push((LOGVAR_MIN..=LOGVAR_MAX).contains(v));
            *v = v.clamp(LOGVAR_MIN, LOGVAR_MAX);
        }
        c.xi.clear();
        match xi {
            Some(xi) if !self.deterministic => c.xi.extend_from_slice(xi),
            _ => c.xi.resize(k, 0.0),
        }
        c.z.clear();
        c.z.extend((0..k).map(|j| c.mu[j] + (0.5 * c.lv[j]).exp() * c.xi[j]));
        affine(&p[l.wd..l.bd], &p[l.bd..l.len], &c.z, &mut c.p);
        softmax_in_place(&mut c.p);
    }

    /// Adds `scale * d loss / d params` into `grad`, where
    /// `loss = CE + kl_weight * KL` for the cached forward pass.
    fn backward(&self, c: &Cache, y: usize, kl_weight: f64, scale: f64, grad: &mut [f64]) {
        let l = self.dims.layout();
        let (d, h, k, cl) = (self.dims.input, self.dims.hidden, self.dims.bottleneck, self.dims.classes);
        let p = &self.params;
        let mut dlogits = c.p.clone();
        dlogits[y] -= 1.0;
        let mut dz = vec![0.0; k];
        for r in 0..cl {
            let g = scale * dlogits[r];
            grad[l.bd + r] += g;
            let row = l.wd + r * k;
            for j in 0..k {
                grad[row + j] += g * c.z[j];
                dz[j] += dlogits[r] * p[row + j];
            }
        }
        let mut dmu = vec![0.0; k];
        let mut dlv = vec![0.0; k];
        for j in 0..k {
            dmu[j] = dz[j] + kl_weight * c.mu[j];
            if !self.deterministic && c.lv_active[j] {
                let s = (0.5 * c.lv[j]).exp();
                dlv[j] = dz[j] * c.xi[j] * 0.5 * s + kl_weight * 0.5 * (c.lv[j].exp() - 1.0);
            }
        }
        let mut dh = vec![0.0; h];
        for j in 0..k {
            let gm = scale * dmu[j];
            let gl = scale * dlv[j];
            grad[l.bmu + j] += gm;
            grad[l.blv + j] += gl;
            let rm = l.wmu + j * h;
            let rl = l.wlv + j * h;
            for i in 0..h {
                grad[rm + i] += gm * c.h[i];
                grad[rl + i] += gl * c.h[i];
                dh[i] += dmu[j] * p[rm + i] + dlv[j] * p[rl + i];
            }
        }
        for i in 0..h {
            let da = scale * dh[i] * (1.0 - c.h[i] * c.h[i]);
            grad[l.b1 + i] += da;
            let row = l.w1 + i * d;
            for (g, &x) in grad[row..row + d].iter_mut().zip(&c.x) {
                *g += da * x;
            }
        }
    }

    fn terms(&self, c: &Cache, y: usize) -> LossTerms {
        LossTerms {
            cross_entropy: -c.p[y].max(f64::MIN_POSITIVE).ln(),
            kl: if self.deterministic { 0.0 } else { kl_to_standard_normal(&c.mu, &c.lv) },
        }
    }

    /// Loss and gradient on encoded examples with fixed noise, averaged over
    /// the examples. `noise[i]` holds one or more K-vectors for example `i`;
    /// the cross-entropy is averaged over them.
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        labels: &[usize],
        noise: &[Vec<Vec<f64>>],
        kl_weight: f64,
    ) -> (f64, LossTerms, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut cache = Cache::default();
        let mut total = LossTerms::default();
        let n = inputs.len() as f64;
        for ((x, &y), xis) in inputs.iter().zip(labels).zip(noise) {
            let s = xis.len().max(1) as f64;
            for (m, xi) in xis.iter().enumerate() {
                self.forward(x, Some(xi), &mut cache);
                let t = self.terms(&cache, y);
                total.cross_entropy += t.cross_entropy / (s * n);
                // The KL term does not depend on the noise; count it once.
                let klw = if m == 0 { kl_weight * s } else { 0.0 };
                if m == 0 {
                    total.kl += t.kl / n;
                }
                self.backward(&cache, y, klw, 1.0 / (s * n), &mut grad);
            }
        }
        (total.cross_entropy + kl_weight * total.kl, total, grad)
    }

    /// Encoder mean and (clamped) log-variance for a raw row.
    pub fn encode(&self, row: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        encode_input(&self.schema, row, &mut x);
        let mut c = Cache::default();
        self.forward(&x, None, &mut c);
        (c.mu, c.lv)
    }

    pub fn predict_proba(&self, row: &[f64], mode: PredictMode) -> Vec<f64> {
        let mut x = Vec::new();
        encode_input(&self.schema, row, &mut x);
        let mut c = Cache::default();
        match mode {
            PredictMode::Mean => self.forward(&x, None, &mut c),
            PredictMode::Sample(seed) => {
                let mut rng = seed.rng();
                let xi: Vec<f64> = (0..self.dims.bottleneck).map(|_| rng.sample(StandardNormal)).collect();
                self.forward(&x, Some(&xi), &mut c);
            }
        }
        c.p
    }

    /// Mean-mode class prediction (lowest index on ties).
    pub fn predict_class(&self, row: &[f64]) -> usize {
        crate::tree::argmax_lowest(&self.predict_proba(row, PredictMode::Mean))
    }

    /// Mean-mode loss terms over a dataset (no sampling).
    pub fn mean_terms(&self, data: &Dataset) -> LossTerms {
        let mut c = Cache::default();
        let mut x = Vec::new();
        let mut t = LossTerms::default();
        for i in 0..data.len() {
            encode_input(&self.schema, data.row(i), &mut x);
            self.forward(&x, None, &mut c);
            let e = self.terms(&c, data.class(i));
            t.cross_entropy += e.cross_entropy;
            t.kl += e.kl;
        }
        let n = data.len().max(1) as f64;
        t.cross_entropy /= n;
        t.kl /= n;
        t
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<MlpVib> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VibConfig {
    /// Weight of the KL (bottleneck) term.
    pub lambda: f64,
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    pub seed: Seed,
}

impl Default for VibConfig {
    fn default() -> Self {
        VibConfig {
            lambda: 0.0,
            hidden_dim: 64,
            bottleneck_dim: 16,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.1,
            mc_samples: 1,
            seed: Seed(0),
        }
    }
}

impl VibConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.bottleneck_dim < 1 || self.hidden_dim < 1 {
            return Err(Error::InvalidArgument("hidden_dim and bottleneck_dim must be >= 1".into()));
        }
        if self.mc_samples < 1 {
            return Err(Error::InvalidArgument("mc_samples must be >= 1".into()));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(Error::InvalidArgument("batch_size and epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// A trained network and its final per-term training losses (mean mode).
#[derive(Debug, Clone)]
pub struct VibFit {
    pub model: MlpVib,
    pub cross_entropy: f64,
    pub kl: f64,
}

fn encoded_inputs(data: &Dataset) -> Vec<Vec<f64>> {
    data.rows()
        .iter()
        .map(|r| {
            let mut v = Vec::new();
            encode_input(data.schema(), r, &mut v);
            v
        })
        .collect()
}

fn prepare(train: &Dataset, hidden: usize, bottleneck: usize) -> Result<(Dims, Vec<Vec<f64>>, Vec<usize>)> {
    let classes = train.require_classification()?;
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let dims = Dims {
        input: input_width(train.schema()),
        hidden,
        bottleneck,
        classes,
    };
    dims.validate()?;
    Ok((dims, encoded_inputs(train), train.classes()))
}

/// Minibatch SGD on `CE + lambda * KL` with reparameterized sampling.
pub fn train_vib(train: &Dataset, config: &VibConfig) -> Result<VibFit> {
    config.validate()?;
    let (dims, inputs, labels) = prepare(train, config.hidden_dim, config.bottleneck_dim)?;
    let mut model = MlpVib::new(dims, train.schema().clone(), false, config.seed.derive(0))?;
    let mut rng = config.seed.derive(1).rng();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut cache = Cache::default();
    let k = dims.bottleneck;
    let mut xi = vec![0.0; k];
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let n = idx.len() as f64;
            let s = config.mc_samples as f64;
            let mut loss = 0.0;
            for &i in idx {
                for m in 0..config.mc_samples {
                    for v in xi.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    model.forward(&inputs[i], Some(&xi), &mut cache);
                    let t = model.terms(&cache, labels[i]);
                    let klw = if m == 0 { config.lambda * s } else { 0.0 };
                    loss += (t.cross_entropy + klw * t.kl) / (s * n);
                    model.backward(&cache, labels[i], klw, 1.0 / (s * n), &mut grad);
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= config.learning_rate * g;
            }
        }
    }
    model.check_finite()?;
    let t = model.mean_terms(train);
    Ok(VibFit {
        model,
        cross_entropy: t.cross_entropy,
        kl: t.kl,
    })
}

// ---------------------------------------------------------------------------
// DPSGD

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpsgdConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub target_delta: f64,
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub seed: Seed,
}

impl Default for DpsgdConfig {
    fn default() -> Self {
        DpsgdConfig {
            clip_norm: 1.0,
            noise_multiplier: 1.0,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            target_delta: 1e-5,
            hidden_dim: 64,
            bottleneck_dim: 16,
            seed: Seed(0),
        }
    }
}

impl DpsgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_multiplier > 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_multiplier must be finite and > 0, got {}",
                self.noise_multiplier
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("clip_norm must be > 0".into()));
        }
        if !(self.target_delta > 0.0 && self.target_delta < 1.0) {
            return Err(Error::InvalidArgument("target_delta must lie in (0, 1)".into()));
        }
        if self.batch_size < 1 || self.epochs < 1 || self.hidden_dim < 1 || self.bottleneck_dim < 1 {
            return Err(Error::InvalidArgument("batch_size, epochs and dims must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// `(epsilon, delta)` upper bound for `steps` applications of the subsampled
/// Gaussian mechanism with sampling rate `q` and noise multiplier `sigma`
/// (noise std `sigma * C` for clip norm `C`).
///
/// Adjacency is replace-one, so the summed clipped gradient has sensitivity
/// `2C`. Per step, the Gaussian mechanism's Renyi bound converts to
/// `eps0 = 1/(2 s^2) + sqrt(2 ln(1/delta0)) / s` with `s = sigma / 2`.
/// Sampling a fixed-size batch without replacement amplifies this to
/// `ln(1 + q (e^eps0 - 1))` at `q delta0`. The steps are then composed with
/// advanced composition at slack `delta / 2`, with
/// `delta0 = delta / (2 steps q)`. The result is the smaller of that and basic
/// composition at the same total delta.
pub fn dpsgd_epsilon(noise_multiplier: f64, q: f64, steps: usize, delta: f64) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    let t = steps as f64;
    let s = noise_multiplier / 2.0;
    let delta0 = delta / (2.0 * t * q);
    let eps0 = 1.0 / (2.0 * s * s) + (2.0 * (1.0 / delta0).ln()).sqrt() / s;
    let eps_step = (q * eps0.exp_m1()).ln_1p();
    let advanced = (2.0 * t * (2.0 / delta).ln()).sqrt() * eps_step + t * eps_step * eps_step.exp_m1();
    let basic = t * eps_step;
    advanced.min(basic)
}

/// Number of optimizer steps for `epochs` passes with batch size `batch`.
pub fn dpsgd_steps(n: usize, batch: usize, epochs: usize) -> usize {
    epochs * n.div_ceil(batch)
}

#[derive(Debug, Clone)]
pub struct DpsgdFit {
    pub model: MlpVib,
    /// Upper bound on the privacy loss at `delta`.
    pub epsilon: f64,
    pub delta: f64,
    pub steps: usize,
    /// Largest per-example gradient norm after clipping, over all steps.
    pub max_clipped_norm: f64,
    /// Fraction of per-example gradients that were scaled down.
    pub clipped_fraction: f64,
    pub budget: Vec<BudgetEntry>,
}

/// DPSGD on the deterministic network (`z = mu`, no KL term).
///
/// Each step draws a batch of `batch_size` distinct rows uniformly, clips each
/// per-example gradient to `clip_norm`, adds `N(0, (sigma C)^2)` to the sum,
/// and divides by the batch size.
pub fn train_dpsgd(train: &Dataset, config: &DpsgdConfig) -> Result<DpsgdFit> {
    config.validate()?;
    let (dims, inputs, labels) = prepare(train, config.hidden_dim, config.bottleneck_dim)?;
    let n = inputs.len();
    let batch = config.batch_size.min(n);
    let mut model = MlpVib::new(dims, train.schema().clone(), true, config.seed.derive(0))?;
    let mut rng = config.seed.derive(1).rng();
    let steps_per_epoch = n.div_ceil(batch);
    let steps = config.epochs * steps_per_epoch;
    let p = model.num_params();
    let l = dims.layout();
    let mut sum = vec![0.0; p];
    let mut g = vec![0.0; p];
    let mut cache = Cache::default();
    let mut max_norm: f64 = 0.0;
    let mut clipped = 0usize;
    let mut seen = 0usize;
    let noise_std = config.noise_multiplier * config.clip_norm;
    for step in 0..steps {
        let idx = rand::seq::index::sample(&mut rng, n, batch);
        sum.iter_mut().for_each(|v| *v = 0.0);
        let mut loss = 0.0;
        for i in idx.iter() {
            g.iter_mut().for_each(|v| *v = 0.0);
            model.forward(&inputs[i], None, &mut cache);
            loss += model.terms(&cache, labels[i]).cross_entropy;
            model.backward(&cache, labels[i], 0.0, 1.0, &mut g);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let factor = if norm > config.clip_norm {
                clipped += 1;
                config.clip_norm / norm
            } else {
                1.0
            };
            seen += 1;
            max_norm = max_norm.max(norm * factor);
            for (s, v) in sum.iter_mut().zip(&g) {
                *s += v * factor;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: step / steps_per_epoch,
                batch: step % steps_per_epoch,
            });
        }
        for (j, (param, s)) in model.params.iter_mut().zip(&sum).enumerate() {
            // The logvar head is unused by the deterministic network.
            if (l.wlv..l.wd).contains(&j) {
                continue;
            }
            let noisy = s + noise_std * rng.sample::<f64, _>(StandardNormal);
            *param -= config.learning_rate * noisy / batch as f64;
        }
    }
    model.check_finite()?;
    let q = batch as f64 / n as f64;
    let epsilon = dpsgd_epsilon(config.noise_multiplier, q, steps, config.target_delta);
    Ok(DpsgdFit {
        model,
        epsilon,
        delta: config.target_delta,
        steps,
        max_clipped_norm: max_norm,
        clipped_fraction: if seen > 0 { clipped as f64 / seen as f64 } else { 0.0 },
        budget: vec![BudgetEntry::new(
            format!("{steps} noisy gradient steps (upper bound)"),
            epsilon,
            config.target_delta,
        )],
    })
}

/// Smallest noise multiplier (to 1e-6 relative) whose reported epsilon is at
/// most `target_epsilon`.
pub fn noise_multiplier_for_epsilon(target_epsilon: f64, q: f64, steps: usize, delta: f64) -> Result<f64> {
    if !(target_epsilon > 0.0) {
        return Err(Error::InvalidArgument("target epsilon must be > 0".into()));
    }
    let mut hi = 1.0;
    while dpsgd_epsilon(hi, q, steps, delta) > target_epsilon {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::InvalidArgument(format!("epsilon {target_epsilon} is unreachable")));
        }
    }
    let mut lo = hi / 2.0;
    while dpsgd_epsilon(lo, q, steps, delta) <= target_epsilon && lo > 1e-9 {
        lo /= 2.0;
    }
    while (hi - lo) > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if dpsgd_epsilon(mid, q, steps, delta) <= target_epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Draw `mc` standard-normal K-vectors per example, for frozen-noise checks.
pub fn draw_noise(rng: &mut Rng, examples: usize, mc: usize, k: usize) -> Vec<Vec<Vec<f64>>> {
    (0..examples)
        .map(|_| (0..mc).map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect()).collect())
        .collect()
}
