//! Linear regression: ridge reference fit, the Gaussian-mixture output-entropy
//! regularizer, MID training by gradient descent, and the AdaSSP private
//! baseline.
//!
//! Categorical features are dummy-coded (code 0 is the reference level) so the
//! design with an intercept is full rank. The intercept is never penalized.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Encoding, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
pub use crate::privacy::BudgetEntry;
use crate::seed::Seed;

pub const ENCODING: Encoding = Encoding::Dummy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Coefficients over the dummy-coded features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// RMS training residual.
    pub residual_sigma: f64,
}

impl LinearModel {
    pub fn predict_encoded(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_row(&self, schema: &FeatureSchema, row: &[f64]) -> f64 {
        self.predict_encoded(&ENCODING.encode(schema, row))
    }

    pub fn predict(&self, data: &Dataset) -> Vec<f64> {
        data.rows().iter().map(|r| self.predict_row(data.schema(), r)).collect()
    }

    fn check(&self) -> Result<()> {
        if self.weights.iter().all(|w| w.is_finite())
            && self.intercept.is_finite()
            && self.residual_sigma.is_finite()
            && self.residual_sigma >= 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument("model has non-finite parameters".into()))
        }
    }
}

/// Dummy-coded design matrix (no intercept column) and targets.
pub fn design(data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let p = ENCODING.width(data.schema());
    let n = data.len();
    let mut x = DMatrix::zeros(n, p);
    let mut buf = Vec::with_capacity(p);
    for (i, row) in data.rows().iter().enumerate() {
        ENCODING.encode_into(data.schema(), row, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    (x, DVector::from_column_slice(data.labels()))
}

fn rms_residual(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, b: f64) -> f64 {
    let n = y.len() as f64;
    let r = y - (x * w).add_scalar(b);
    (r.norm_squared() / n).sqrt()
}

/// `argmin ||y - Xw - b||^2 + ridge ||w||^2` through the normal equations of
/// the centered problem.
pub fn train_ridge(train: &Dataset, ridge: f64) -> Result<LinearModel> {
    train.require_regression()?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let (x, y) = design(train);
    let (w, b) = ridge_solve(&x, &y, ridge)?;
    let sigma = rms_residual(&x, &y, &w, b);
    let model = LinearModel {
        weights: w.iter().copied().collect(),
        intercept: b,
        residual_sigma: sigma,
    };
    model.check()?;
    Ok(model)
}

fn ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<(DVector<f64>, f64)> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let means = DVector::from_iterator(p, x.column_iter().map(|c| c.sum() / n));
    let y_mean = y.sum() / n;
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let yc = y.add_scalar(-y_mean);
    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += ridge;
    }
    let rhs = xc.transpose() * yc;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            return Err(Error::Singular(format!(
                "X'X + {ridge} I is not positive definite ({p} columns)"
            )))
        }
    };
    // Cholesky can succeed on numerically singular matrices; check the pivot scale.
    let diag_max = (0..p).map(|j| gram[(j, j)]).fold(0.0f64, f64::max);
    if p > 0 && ridge == 0.0 {
        let min_eig = gram.clone().symmetric_eigenvalues().min();
        if min_eig <= 1e-12 * diag_max.max(1.0) {
            return Err(Error::Singular(format!(
                "smallest eigenvalue {min_eig:e} of the centered normal matrix"
            )));
        }
    }
    let b = y_mean - means.dot(&w);
    Ok((w, b))
}

/// Negative mean log-density of the outputs under the Gaussian mixture
/// centred at the outputs themselves:
///
/// `-(1/N) sum_i ln[(1/N) sum_j N(o_i; o_j, sigma^2)]`.
pub fn mixture_entropy(outputs: &[f64], bandwidth: f64) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    if outputs.is_empty() {
        return Err(Error::Empty("no outputs".into()));
    }
    let sums = kernel_row_sums(outputs, bandwidth);
    Ok(entropy_from_sums(&sums, bandwidth))
}

/// [`mixture_entropy`] of the model's outputs on `data`.
pub fn mi_lin_estimate(model: &LinearModel, data: &Dataset, bandwidth: f64) -> Result<f64> {
    mixture_entropy(&model.predict(data), bandwidth)
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if bandwidth > 0.0 && bandwidth.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {bandwidth}")))
    }
}

fn entropy_from_sums(sums: &[f64], bandwidth: f64) -> f64 {
    let n = sums.len() as f64;
    let mean_log: f64 = sums.iter().map(|s| s.ln()).sum::<f64>() / n;
    0.5 * (2.0 * std::f64::consts::PI * bandwidth * bandwidth).ln() + n.ln() - mean_log
}

/// `S_i = sum_j exp(-(o_i - o_j)^2 / (2 sigma^2))`; every `S_i >= 1`.
fn kernel_row_sums(outputs: &[f64], bandwidth: f64) -> Vec<f64> {
    let scale = -0.5 / (bandwidth * bandwidth);
    let n = outputs.len();
    let mut sums = vec![1.0; n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let rest = &outputs[i + 1..];
        let row = &mut row[..rest.len()];
        fill_kernel_row(outputs[i], rest, scale, row);
        sums[i] += row.iter().sum::<f64>();
        for (s, k) in sums[i + 1..].iter_mut().zip(row.iter()) {
            *s += k;
        }
    }
    sums
}

#[inline]
fn fill_kernel_row(oi: f64, rest: &[f64], scale: f64, row: &mut [f64]) {
    for (k, &oj) in row.iter_mut().zip(rest) {
        let d = oi - oj;
        *k = exp_nonpositive(scale * d * d);
    }
}

/// `exp(x)` for `x <= 0`, branch-free so kernel loops vectorize.
///
/// Cody-Waite reduction `x = n ln2 + r`, `|r| <= ln2 / 2`, then a degree-13
/// Taylor polynomial (truncation error < 5e-18 relative). Arguments below
/// -700 are evaluated at -700; those terms are < 1e-304 and only ever added
/// to sums that are at least 1.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LOG2_E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const C: [f64; 14] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5_040.0,
        1.0 / 40_320.0,
        1.0 / 362_880.0,
        1.0 / 3_628_800.0,
        1.0 / 39_916_800.0,
        1.0 / 479_001_600.0,
        1.0 / 6_227_020_800.0,
    ];
    let x = x.max(-700.0);
    let t = x * LOG2_E + MAGIC;
    let n = t - MAGIC;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = C[13];
    p = p * r + C[12];
    p = p * r + C[11];
    p = p * r + C[10];
    p = p * r + C[9];
    p = p * r + C[8];
    p = p * r + C[7];
    p = p * r + C[6];
    p = p * r + C[5];
    p = p * r + C[4];
    p = p * r + C[3];
    p = p * r + C[2];
    p = p * r + C[1];
    p = p * r + C[0];
    let k = (t.to_bits().wrapping_sub(MAGIC.to_bits()) as i64).wrapping_add(1023) as u64;
    p * f64::from_bits(k << 52)
}

/// Scratch space for the pairwise kernel, reused across iterations.
#[derive(Debug, Default)]
struct KernelWorkspace {
    upper: Vec<f64>,
    sums: Vec<f64>,
    inv: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Value of [`mixture_entropy`] and its gradient with respect to each output.
pub fn mixture_entropy_gradient(outputs: &[f64], bandwidth: f64) -> Result<(f64, Vec<f64>)> {
    check_bandwidth(bandwidth)?;
    if outputs.is_empty() {
        return Err(Error::Empty("no outputs".into()));
    }
    let mut ws = KernelWorkspace::default();
    let mut grad = vec![0.0; outputs.len()];
    let v = entropy_and_gradient(outputs, bandwidth, &mut ws, &mut grad);
    Ok((v, grad))
}

// d/do_k = 1/(N sigma^2) sum_j K_kj (o_k - o_j) (1/S_k + 1/S_j)
fn entropy_and_gradient(outputs: &[f64], bandwidth: f64, ws: &mut KernelWorkspace, grad: &mut [f64]) -> f64 {
    let n = outputs.len();
    let scale = -0.5 / (bandwidth * bandwidth);
    ws.upper.resize(n * n.saturating_sub(1) / 2, 0.0);
    ws.sums.clear();
    ws.sums.resize(n, 1.0);
    let mut off = 0;
    for i in 0..n {
        let rest = &outputs[i + 1..];
        let row = &mut ws.upper[off..off + rest.len()];
        off += rest.len();
        fill_kernel_row(outputs[i], rest, scale, row);
        ws.sums[i] += row.iter().sum::<f64>();
        for (s, k) in ws.sums[i + 1..].iter_mut().zip(row.iter()) {
            *s += k;
        }
    }
    ws.inv.clear();
    ws.inv.extend(ws.sums.iter().map(|s| 1.0 / s));
    ws.a.clear();
    ws.a.resize(n, 0.0);
    ws.b.clear();
    ws.b.resize(n, 0.0);
    let mut off = 0;
    for i in 0..n {
        let oi = outputs[i];
        let inv_i = ws.inv[i];
        let m = n - i - 1;
        let row = &ws.upper[off..off + m];
        off += m;
        let mut ai = 0.0;
        let mut bi = 0.0;
        let (a_rest, b_rest) = (&mut ws.a[i + 1..], &mut ws.b[i + 1..]);
        for ((((&k, &oj), &inv_j), a), b) in row
            .iter()
            .zip(&outputs[i + 1..])
            .zip(&ws.inv[i + 1..])
            .zip(a_rest.iter_mut())
            .zip(b_rest.iter_mut())
        {
            let t = k * (oi - oj);
            ai += t;
            bi += t * inv_j;
            *a -= t;
            *b -= t * inv_i;
        }
        ws.a[i] += ai;
        ws.b[i] += bi;
    }
    let c = 1.0 / (n as f64 * bandwidth * bandwidth);
    for k in 0..n {
        grad[k] = c * (ws.a[k] * ws.inv[k] + ws.b[k]);
    }
    entropy_from_sums(&ws.sums, bandwidth)
}

/// Silverman-style default: sample std of the outputs times `N^(-1/5)`.
/// Falls back to 1 when the outputs are constant.
pub fn default_bandwidth(outputs: &[f64]) -> f64 {
    let n = outputs.len() as f64;
    if outputs.len() < 2 {
        return 1.0;
    }
    let mean = outputs.iter().sum::<f64>() / n;
    let var = outputs.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let bw = var.sqrt() * n.powf(-0.2);
    if bw > 0.0 && bw.is_finite() {
        bw
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MidLinConfig {
    pub lambda: f64,
    /// Mixture component scale; `None` uses [`default_bandwidth`] on the ridge outputs.
    pub bandwidth: Option<f64>,
    pub ridge: f64,
    /// Fixed step; `None` derives `1 / L` from a smoothness bound of the objective.
    pub learning_rate: Option<f64>,
    pub max_iters: usize,
    pub grad_tolerance: f64,
}

impl Default for MidLinConfig {
    fn default() -> Self {
        MidLinConfig {
            lambda: 0.0,
            bandwidth: None,
            ridge: 0.0,
            learning_rate: None,
            max_iters: 500,
            grad_tolerance: 1e-6,
        }
    }
}

impl MidLinConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if let Some(bw) = self.bandwidth {
            check_bandwidth(bw)?;
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return bad("ridge must be finite and >= 0");
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0) || !lr.is_finite() {
                return bad("learning_rate must be > 0");
            }
        }
        if !(self.grad_tolerance >= 0.0) {
            return bad("grad_tolerance must be >= 0");
        }
        Ok(())
    }
}

/// The MID objective for a fixed training set:
/// `(1/N)(||y - o||^2 + ridge ||w||^2) + lambda * mixture_entropy(o)`, with
/// parameters laid out as `[w..., intercept]`.
pub struct MidLinearObjective {
    x: DMatrix<f64>,
    y: DVector<f64>,
    lambda: f64,
    ridge: f64,
    bandwidth: f64,
    ws: KernelWorkspace,
    out_grad: Vec<f64>,
}

impl MidLinearObjective {
    pub fn new(train: &Dataset, lambda: f64, ridge: f64, bandwidth: f64) -> Result<Self> {
        train.require_regression()?;
        check_bandwidth(bandwidth)?;
        let (x, y) = design(train);
        Ok(MidLinearObjective {
            x,
            y,
            lambda,
            ridge,
            bandwidth,
            ws: KernelWorkspace::default(),
            out_grad: Vec::new(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.x.ncols() + 1
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn outputs(&self, params: &[f64]) -> Vec<f64> {
        let p = self.x.ncols();
        let w = DVector::from_column_slice(&params[..p]);
        (&self.x * w).add_scalar(params[p]).iter().copied().collect()
    }

    /// `(total, mse, regularizer)` at `params`.
    pub fn value(&self, params: &[f64]) -> (f64, f64, f64) {
        let p = self.x.ncols();
        let n = self.y.len() as f64;
        let o = self.outputs(params);
        let sq: f64 = o.iter().zip(self.y.iter()).map(|(o, y)| (y - o).powi(2)).sum();
        let pen: f64 = params[..p].iter().map(|w| w * w).sum();
        let mse = sq / n;
        let reg = if self.lambda > 0.0 {
            entropy_from_sums(&kernel_row_sums(&o, self.bandwidth), self.bandwidth)
        } else {
            0.0
        };
        (mse + self.ridge * pen / n + self.lambda * reg, mse, reg)
    }

    /// Objective value and its analytic gradient.
    pub fn value_and_gradient(&mut self, params: &[f64]) -> (f64, Vec<f64>) {
        let p = self.x.ncols();
        let n = self.y.len();
        let nf = n as f64;
        let o = self.outputs(params);
        self.out_grad.resize(n, 0.0);
        let reg = if self.lambda > 0.0 {
            entropy_and_gradient(&o, self.bandwidth, &mut self.ws, &mut self.out_grad)
        } else {
            self.out_grad.iter_mut().for_each(|g| *g = 0.0);
            0.0
        };
        let mut sq = 0.0;
        let mut d_out = Vec::with_capacity(n);
        for i in 0..n {
            let r = self.y[i] - o[i];
            sq += r * r;
            d_out.push(-2.0 * r / nf + self.lambda * self.out_grad[i]);
        }
        let d_out = DVector::from_vec(d_out);
        let gw = self.x.tr_mul(&d_out);
        let mut grad: Vec<f64> = gw.iter().copied().collect();
        let mut pen = 0.0;
        for (g, w) in grad.iter_mut().zip(&params[..p]) {
            *g += 2.0 * self.ridge * w / nf;
            pen += w * w;
        }
        grad.push(d_out.sum());
        (sq / nf + self.ridge * pen / nf + self.lambda * reg, grad)
    }

    /// Upper bound on the gradient's Lipschitz constant, used for the default step.
    ///
    /// The squared-error part contributes `2 lambda_max(X~'X~ / N)` over the
    /// augmented design. The entropy term is shift invariant; near collapse it
    /// behaves like `Var(o) / sigma^2`, so it adds `2 lambda / sigma^2` times
    /// the top eigenvalue of the feature covariance.
    fn smoothness_bound(&self) -> f64 {
        let n = self.y.len() as f64;
        let p = self.x.ncols();
        let mut aug = DMatrix::zeros(p + 1, p + 1);
        let gram = self.x.tr_mul(&self.x);
        aug.view_mut((0, 0), (p, p)).copy_from(&gram);
        let sums: Vec<f64> = self.x.column_iter().map(|c| c.sum()).collect();
        for j in 0..p {
            aug[(j, p)] = sums[j];
            aug[(p, j)] = sums[j];
        }
        aug[(p, p)] = n;
        aug /= n;
        let top = aug.symmetric_eigenvalues().max().max(1e-12);
        let mut cov = gram / n;
        for i in 0..p {
            for j in 0..p {
                cov[(i, j)] -= sums[i] * sums[j] / (n * n);
            }
        }
        let cov_top = if p > 0 { cov.symmetric_eigenvalues().max().max(0.0) } else { 0.0 };
        2.0 * top + 2.0 * self.lambda / (self.bandwidth * self.bandwidth) * cov_top + 2.0 * self.ridge / n
    }
}

/// Outcome of [`train_mid_linear_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidLinReport {
    pub model: LinearModel,
    pub bandwidth: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub regularizer: f64,
}

/// MID training: gradient descent on MSE + lambda * mixture entropy, started
/// from the ridge solution.
pub fn train_mid_linear(train: &Dataset, config: &MidLinConfig) -> Result<LinearModel> {
    train_mid_linear_report(train, config).map(|r| r.model)
}

pub fn train_mid_linear_report(train: &Dataset, config: &MidLinConfig) -> Result<MidLinReport> {
    train.require_regression()?;
    config.validate()?;
    let init = train_ridge(train, config.ridge)?;
    let ridge_outputs = init.predict(train);
    let bandwidth = config.bandwidth.unwrap_or_else(|| default_bandwidth(&ridge_outputs));
    let mut obj = MidLinearObjective::new(train, config.lambda, config.ridge, bandwidth)?;
    let lr = config.learning_rate.unwrap_or_else(|| 1.0 / obj.smoothness_bound());

    let mut params: Vec<f64> = init.weights.clone();
    params.push(init.intercept);
    let mut iterations = 0;
    let mut converged = false;
    let mut value = f64::NAN;
    while iterations < config.max_iters {
        let (v, g) = obj.value_and_gradient(&params);
        value = v;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: iterations, loss: v });
        }
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm < config.grad_tolerance {
            converged = true;
            break;
        }
        for (p, gi) in params.iter_mut().zip(&g) {
            *p -= lr * gi;
        }
        iterations += 1;
    }
    let (total, _, reg) = obj.value(&params);
    if !total.is_finite() {
        return Err(Error::Divergence { iteration: iterations, loss: total });
    }
    if !converged {
        value = total;
    }
    let p = params.len() - 1;
    let (x, y) = (&obj.x, &obj.y);
    let w = DVector::from_column_slice(&params[..p]);
    let model = LinearModel {
        residual_sigma: rms_residual(x, y, &w, params[p]),
        weights: params[..p].to_vec(),
        intercept: params[p],
    };
    model.check()?;
    Ok(MidLinReport {
        model,
        bandwidth,
        learning_rate: lr,
        iterations,
        converged,
        objective: value,
        regularizer: reg,
    })
}

/// The noisy sufficient statistics released by AdaSSP, in the augmented
/// design `[dummy-coded features, 1]`.
#[derive(Debug, Clone)]
pub struct AdasspRelease {
    pub noisy_xtx: DMatrix<f64>,
    pub noisy_xty: DVector<f64>,
    pub noisy_min_eig: f64,
    /// Adaptive ridge added before solving.
    pub ridge: f64,
    pub sigma_xtx: f64,
    pub sigma_xty: f64,
    pub sigma_min_eig: f64,
    pub budget: Vec<BudgetEntry>,
}

impl AdasspRelease {
    pub fn total_epsilon(&self) -> f64 {
        self.budget.iter().map(|b| b.epsilon).sum()
    }

    pub fn total_delta(&self) -> f64 {
        self.budget.iter().map(|b| b.delta).sum()
    }
}

/// Public bound on the L2 norm of an augmented dummy-coded row, derived from
/// the schema alone.
pub fn schema_row_bound(schema: &FeatureSchema) -> f64 {
    let sq: f64 = schema
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Categorical { .. } => 1.0,
            FeatureKind::Continuous { lo, hi } => lo.abs().max(hi.abs()).powi(2),
        })
        .sum();
    (sq + 1.0).sqrt()
}

/// Clipped augmented design: rows scaled into the `bx` ball, labels into `[-by, by]`.
fn clipped_design(train: &Dataset, bx: f64, by: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (x, y) = design(train);
    let (n, p) = (x.nrows(), x.ncols());
    let mut aug = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        let norm = (x.row(i).norm_squared() + 1.0).sqrt();
        let s = if norm > bx { bx / norm } else { 1.0 };
        for j in 0..p {
            aug[(i, j)] = x[(i, j)] * s;
        }
        aug[(i, p)] = s;
    }
    (aug, y.map(|v| v.clamp(-by, by)))
}

fn split_budget(total: f64) -> [f64; 3] {
    let a = total / 3.0;
    let b = total / 3.0;
    [a, b, total - (a + b)]
}

/// Noisy statistics for AdaSSP with budget `(epsilon/3, delta/3)` per release.
pub fn adassp_release(
    train: &Dataset,
    epsilon: f64,
    delta: f64,
    bounds: (f64, f64),
    seed: Seed,
) -> Result<AdasspRelease> {
    train.require_regression()?;
    if !(epsilon > 0.0) || epsilon.is_nan() {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must be in (0, 1), got {delta}")));
    }
    let (bx, by) = bounds;
    if !(bx > 0.0 && by > 0.0) || !bx.is_finite() || !by.is_finite() {
        return Err(Error::InvalidArgument("bounds must be positive and finite".into()));
    }
    let (x, y) = clipped_design(train, bx, by);
    let d = x.ncols();
    let eps3 = epsilon / 3.0;
    let log_term = (6.0 / delta).ln();
    let rho = 0.05;
    let sigma_min_eig = log_term.sqrt() / eps3 * bx * bx;
    let sigma_xtx = sigma_min_eig;
    let sigma_xty = log_term.sqrt() / eps3 * bx * by;

    let mut rng = seed.rng();
    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(&y);

    let min_eig = xtx.clone().symmetric_eigenvalues().min();
    let z: f64 = StandardNormal.sample(&mut rng);
    let noisy_min_eig = (min_eig + sigma_min_eig * z - log_term / eps3 * bx * bx).max(0.0);
    let df = d as f64;
    let ridge = ((df * log_term * (2.0 * df * df / rho).ln()).sqrt() * bx * bx / eps3 - noisy_min_eig).max(0.0);

    let mut noisy_xtx = xtx;
    for i in 0..d {
        for j in i..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            noisy_xtx[(i, j)] += sigma_xtx * z;
            if i != j {
                noisy_xtx[(j, i)] += sigma_xtx * z;
            }
        }
    }
    let mut noisy_xty = xty;
    for v in noisy_xty.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma_xty * z;
    }
    let eps = split_budget(epsilon);
    let del = split_budget(delta);
    let budget = ["min_eigenvalue", "xtx", "xty"]
        .iter()
        .enumerate()
        .map(|(k, name)| BudgetEntry {
            release: name.to_string(),
            epsilon: eps[k],
            delta: del[k],
        })
        .collect();
    Ok(AdasspRelease {
        noisy_xtx,
        noisy_xty,
        noisy_min_eig,
        ridge,
        sigma_xtx,
        sigma_xty,
        sigma_min_eig,
        budget,
    })
}

/// `(epsilon, delta)`-DP linear regression by sufficient-statistics perturbation.
pub fn train_adassp(
    train: &Dataset,
    epsilon: f64,
    delta: f64,
    bounds: (f64, f64),
    seed: Seed,
) -> Result<LinearModel> {
    train_adassp_with_release(train, epsilon, delta, bounds, seed).map(|(m, _)| m)
}

pub fn train_adassp_with_release(
    train: &Dataset,
    epsilon: f64,
    delta: f64,
    bounds: (f64, f64),
    seed: Seed,
) -> Result<(LinearModel, AdasspRelease)> {
    let release = adassp_release(train, epsilon, delta, bounds, seed)?;
    let d = release.noisy_xtx.ncols();
    let mut a = release.noisy_xtx.clone();
    for j in 0..d {
        a[(j, j)] += release.ridge;
    }
    let theta = a
        .clone()
        .lu()
        .solve(&release.noisy_xty)
        .filter(|t| t.iter().all(|v| v.is_finite()))
        .or_else(|| a.svd(true, true).solve(&release.noisy_xty, 1e-12).ok())
        .ok_or_else(|| Error::Singular("noisy AdaSSP system".into()))?;
    let p = d - 1;
    let (x, y) = design(train);
    let w = theta.rows(0, p).into_owned();
    let b = theta[p];
    let model = LinearModel {
        weights: w.iter().copied().collect(),
        intercept: b,
        residual_sigma: rms_residual(&x, &y, &w, b),
    };
    model.check()?;
    Ok((model, release))
}
