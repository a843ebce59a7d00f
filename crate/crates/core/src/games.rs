//! Semantic and indistinguishability games on finite domains.
//!
//! A domain cell is a triple `(x_s, x_ns, y)`. Training sets are ordered
//! lists of cells; a mechanism turns one into a [`TrainedTable`], a table of
//! non-negative weights over cells read as a stochastic decision table.
//! Monte-Carlo experiments draw every trial from its own derived seed, with
//! separate streams for the training set, the mechanism, the challenge point
//! and the player, and sample cells by inversion so runs that share a seed
//! are coupled across distributions.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{sample_laplace, Rng, Seed};

/// Normal quantile for 95% two-sided intervals.
pub const Z95: f64 = 1.959963984540054;

const STREAM_DATA: u64 = 0;
const STREAM_MECH: u64 = 1;
const STREAM_POINT: u64 = 2;
const STREAM_PLAYER: u64 = 3;
const STREAM_BIT: u64 = 4;

/// Sizes `(|X_s|, |X_ns|, |Y|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domains {
    pub sensitive: usize,
    pub nonsensitive: usize,
    pub label: usize,
}

impl Domains {
    pub fn new(sensitive: usize, nonsensitive: usize, label: usize) -> Self {
        Domains {
            sensitive,
            nonsensitive,
            label,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.sensitive * self.nonsensitive * self.label
    }

    pub fn cell(&self, xs: usize, xns: usize, y: usize) -> usize {
        (xs * self.nonsensitive + xns) * self.label + y
    }

    pub fn decode(&self, cell: usize) -> (usize, usize, usize) {
        let y = cell % self.label;
        let rest = cell / self.label;
        (rest / self.nonsensitive, rest % self.nonsensitive, y)
    }

    fn validate(&self) -> Result<()> {
        if self.sensitive == 0 || self.nonsensitive == 0 || self.label == 0 {
            return Err(Error::InvalidArgument("domain sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Joint distribution `p(x_s, x_ns, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointJson", into = "JointJson")]
pub struct DiscreteJoint {
    domains: Domains,
    table: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JointJson {
    domains: Domains,
    table: Vec<f64>,
}

impl TryFrom<JointJson> for DiscreteJoint {
    type Error = Error;
    fn try_from(j: JointJson) -> Result<Self> {
        DiscreteJoint::new(j.domains, j.table)
    }
}

impl From<DiscreteJoint> for JointJson {
    fn from(p: DiscreteJoint) -> Self {
        JointJson {
            domains: p.domains,
            table: p.table,
        }
    }
}

impl DiscreteJoint {
    pub fn new(domains: Domains, table: Vec<f64>) -> Result<Self> {
        domains.validate()?;
        if table.len() != domains.num_cells() {
            return Err(Error::DimensionMismatch(format!(
                "table has {} entries, domain has {} cells",
                table.len(),
                domains.num_cells()
            )));
        }
        if let Some(v) = table.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("probability {v} is not a finite non-negative number")));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = table
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        // Pin the last non-empty cell to 1 so inversion never runs off the end.
        let last = table.iter().rposition(|&v| v > 0.0).expect("total is 1");
        for c in &mut cumulative[last..] {
            *c = 1.0;
        }
        Ok(DiscreteJoint {
            domains,
            table,
            cumulative,
        })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(domains: Domains, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument("weights must have a positive finite sum".into()));
        }
        DiscreteJoint::new(domains, weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(domains: Domains) -> Result<Self> {
        domains.validate()?;
        DiscreteJoint::from_weights(domains, &vec![1.0; domains.num_cells()])
    }

    /// Flat Dirichlet draw over the cells.
    pub fn random(domains: Domains, seed: Seed) -> Result<Self> {
        domains.validate()?;
        let mut rng = seed.rng();
        let w: Vec<f64> = (0..domains.num_cells())
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        DiscreteJoint::from_weights(domains, &w)
    }

    /// `(x_ns, y)` uniform and `x_s = g(x_ns, y)`.
    pub fn deterministic(domains: Domains, g: impl Fn(usize, usize) -> usize) -> Result<Self> {
        domains.validate()?;
        let mut w = vec![0.0; domains.num_cells()];
        for xns in 0..domains.nonsensitive {
            for y in 0..domains.label {
                let xs = g(xns, y);
                if xs >= domains.sensitive {
                    return Err(Error::InvalidArgument(format!("g returned {xs}")));
                }
                w[domains.cell(xs, xns, y)] = 1.0;
            }
        }
        DiscreteJoint::from_weights(domains, &w)
    }

    pub fn domains(&self) -> Domains {
        self.domains
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn prob(&self, xs: usize, xns: usize, y: usize) -> f64 {
        self.table[self.domains.cell(xs, xns, y)]
    }

    /// `p_{X_s}`.
    pub fn marginal_sensitive(&self) -> Vec<f64> {
        let d = self.domains;
        let block = d.nonsensitive * d.label;
        (0..d.sensitive)
            .map(|xs| self.table[xs * block..(xs + 1) * block].iter().sum())
            .collect()
    }

    /// `p_{X_ns, Y}`, indexed by `x_ns * |Y| + y`.
    pub fn marginal_rest(&self) -> Vec<f64> {
        let d = self.domains;
        let block = d.nonsensitive * d.label;
        let mut m = vec![0.0; block];
        for xs in 0..d.sensitive {
            for (j, v) in self.table[xs * block..(xs + 1) * block].iter().enumerate() {
                m[j] += v;
            }
        }
        m
    }

    /// Cell for a uniform draw `u` in `[0, 1)`.
    pub fn cell_for(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u).min(self.table.len() - 1)
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        self.cell_for(rng.random::<f64>())
    }

    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// `q(x_s, x_ns, y) = p_{X_s}(x_s) p_{X_ns,Y}(x_ns, y)`.
pub fn product_marginal(p: &DiscreteJoint) -> DiscreteJoint {
    let ms = p.marginal_sensitive();
    let mr = p.marginal_rest();
    let table: Vec<f64> = ms.iter().flat_map(|a| mr.iter().map(move |b| a * b)).collect();
    // The product of two distributions sums to 1 up to rounding.
    DiscreteJoint::from_weights(p.domains, &table).expect("product of valid marginals")
}

/// Map from sensitive codes to property codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyFunction {
    pub map: Vec<usize>,
}

impl PropertyFunction {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::InvalidArgument("property map is empty".into()));
        }
        Ok(PropertyFunction { map })
    }

    pub fn identity(k: usize) -> Self {
        PropertyFunction { map: (0..k).collect() }
    }

    pub fn num_properties(&self) -> usize {
        self.map.iter().max().map_or(0, |m| m + 1)
    }

    pub fn apply(&self, xs: usize) -> usize {
        self.map[xs]
    }

    fn check(&self, d: Domains) -> Result<()> {
        if self.map.len() != d.sensitive {
            return Err(Error::DimensionMismatch(format!(
                "property map covers {} codes, domain has {}",
                self.map.len(),
                d.sensitive
            )));
        }
        Ok(())
    }
}

/// `E_{(x_ns, y) ~ p}[max_v Pr_{x_s ~ p(.|x_ns, y)}[tau(x_s) = v]]`, i.e. the
/// sum over `(x_ns, y)` of the largest property mass.
pub fn best_possible_gain(p: &DiscreteJoint, tau: &PropertyFunction) -> Result<f64> {
    let d = p.domains;
    tau.check(d)?;
    let mut total = 0.0;
    let mut mass = vec![0.0; tau.num_properties()];
    for xns in 0..d.nonsensitive {
        for y in 0..d.label {
            mass.iter_mut().for_each(|m| *m = 0.0);
            for xs in 0..d.sensitive {
                mass[tau.apply(xs)] += p.prob(xs, xns, y);
            }
            total += mass.iter().cloned().fold(0.0, f64::max);
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Mechanisms

/// Released model: non-negative weights over cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedTable {
    pub domains: Domains,
    pub weights: Vec<f64>,
}

impl TrainedTable {
    /// Prediction row `yhat(x_s, x_ns)`: the weights normalized over `y`,
    /// uniform when the row is empty.
    pub fn decision(&self, xs: usize, xns: usize) -> Vec<f64> {
        let d = self.domains;
        let start = d.cell(xs, xns, 0);
        normalized(&self.weights[start..start + d.label])
    }

    /// Weights over `x_s` for fixed `(x_ns, y)`, normalized (uniform when empty).
    pub fn sensitive_posterior(&self, xns: usize, y: usize) -> Vec<f64> {
        let d = self.domains;
        let w: Vec<f64> = (0..d.sensitive).map(|xs| self.weights[d.cell(xs, xns, y)]).collect();
        normalized(&w)
    }
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / w.len() as f64; w.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mechanism {
    /// Cell counts of the training set.
    Empirical,
    /// Counts plus Laplace noise of scale `2 / epsilon`, floored at 0. Changing
    /// one record moves two counts by one each, so this is `epsilon`-DP.
    LaplaceHistogram { epsilon: f64 },
    /// Each record contributes the bit `p(z) > q(z)`, kept with probability
    /// `e^eps / (1 + e^eps)`; with `k` of `n` released bits set, the output is
    /// `(k/n) p + (1 - k/n) q`. `epsilon`-DP.
    RandomizedResponse { epsilon: f64 },
    /// Ignores the training set.
    Fixed { weights: Vec<f64> },
}

/// Declared privacy of a mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Privacy {
    NonPrivate,
    Dp { epsilon: f64, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub mechanism: Mechanism,
    pub declared: Privacy,
}

impl MechanismSpec {
    /// Spec declaring the mechanism's true guarantee.
    pub fn honest(mechanism: Mechanism) -> Self {
        let declared = match &mechanism {
            Mechanism::Empirical => Privacy::NonPrivate,
            Mechanism::LaplaceHistogram { epsilon } | Mechanism::RandomizedResponse { epsilon } => Privacy::Dp {
                epsilon: *epsilon,
                delta: 0.0,
            },
            Mechanism::Fixed { .. } => Privacy::Dp {
                epsilon: 0.0,
                delta: 0.0,
            },
        };
        MechanismSpec { mechanism, declared }
    }

    pub fn validate(&self, d: Domains) -> Result<()> {
        match &self.mechanism {
            Mechanism::LaplaceHistogram { epsilon } | Mechanism::RandomizedResponse { epsilon }
                if !(*epsilon > 0.0) || epsilon.is_nan() =>
            {
                Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")))
            }
            Mechanism::Fixed { weights } if weights.len() != d.num_cells() || weights.iter().any(|w| !(*w >= 0.0)) => {
                Err(Error::InvalidArgument("fixed weights must be non-negative, one per cell".into()))
            }
            _ => match self.declared {
                Privacy::Dp { epsilon, delta } if !(epsilon >= 0.0) || !(0.0..1.0).contains(&delta) => {
                    Err(Error::InvalidArgument("declared epsilon must be >= 0 and delta in [0, 1)".into()))
                }
                _ => Ok(()),
            },
        }
    }
}

/// Train on `sample` (cells). `ctx` supplies `p` and `q` for the
/// randomized-response mechanism.
pub fn train(mech: &Mechanism, ctx: &GameContext, sample: &[usize], rng: &mut Rng) -> TrainedTable {
    let d = ctx.p.domains;
    let counts = || {
        let mut c = vec![0.0; d.num_cells()];
        for &z in sample {
            c[z] += 1.0;
        }
        c
    };
    let weights = match mech {
        Mechanism::Empirical => counts(),
        Mechanism::LaplaceHistogram { epsilon } => counts()
            .into_iter()
            .map(|c| (c + sample_laplace(rng, 2.0 / epsilon)).max(0.0))
            .collect(),
        Mechanism::RandomizedResponse { epsilon } => {
            let keep = 1.0 / (1.0 + (-epsilon).exp());
            let mut k = 0usize;
            for &z in sample {
                let bit = ctx.p.table[z] > ctx.q.table[z];
                let flip = rng.random::<f64>() >= keep;
                k += (bit != flip) as usize;
            }
            let a = if sample.is_empty() { 0.0 } else { k as f64 / sample.len() as f64 };
            ctx.p.table.iter().zip(&ctx.q.table).map(|(p, q)| a * p + (1.0 - a) * q).collect()
        }
        Mechanism::Fixed { weights } => weights.clone(),
    };
    TrainedTable { domains: d, weights }
}

/// The distributions a game is played over.
#[derive(Debug, Clone)]
pub struct GameContext {
    pub p: DiscreteJoint,
    pub q: DiscreteJoint,
    pub tau: PropertyFunction,
}

impl GameContext {
    pub fn new(p: DiscreteJoint, tau: PropertyFunction) -> Result<Self> {
        tau.check(p.domains)?;
        Ok(GameContext {
            q: product_marginal(&p),
            p,
            tau,
        })
    }
}

// ---------------------------------------------------------------------------
// Players

/// Semantic-game adversary: sees the model and `(x_ns, y)`, guesses `tau(x_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Adversary {
    Constant { guess: usize },
    UniformRandom,
    /// Property with the largest released weight at `(., x_ns, y)`.
    Bayes,
}

impl Adversary {
    pub fn name(&self) -> String {
        match self {
            Adversary::Constant { guess } => format!("constant_{guess}"),
            Adversary::UniformRandom => "uniform_random".into(),
            Adversary::Bayes => "bayes".into(),
        }
    }

    pub fn guess(&self, f: &TrainedTable, xns: usize, y: usize, tau: &PropertyFunction, rng: &mut Rng) -> usize {
        match self {
            Adversary::Constant { guess } => *guess,
            Adversary::UniformRandom => rng.random_range(0..tau.num_properties()),
            Adversary::Bayes => {
                let post = f.sensitive_posterior(xns, y);
                let mut mass = vec![0.0; tau.num_properties()];
                for (xs, w) in post.iter().enumerate() {
                    mass[tau.apply(xs)] += w;
                }
                crate::tree::argmax_lowest(&mass)
            }
        }
    }
}

/// Indistinguishability-game player: outputs 0 for "trained on p", 1 for
/// "trained on the product".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distinguisher {
    Constant { bit: u8 },
    /// Sign of `sum_z w(z) ln(p(z) / q(z))`; the likelihood-ratio test when
    /// the weights are counts.
    LikelihoodRatio,
    /// From a semantic adversary: draw a fresh `z ~ p`, answer 0 if the
    /// adversary wins on it, 1 otherwise.
    FromAdversary { adversary: Adversary },
}

impl Distinguisher {
    pub fn name(&self) -> String {
        match self {
            Distinguisher::Constant { bit } => format!("constant_{bit}"),
            Distinguisher::LikelihoodRatio => "likelihood_ratio".into(),
            Distinguisher::FromAdversary { adversary } => format!("from_{}", adversary.name()),
        }
    }

    /// `point` draws the fresh cell for [`Distinguisher::FromAdversary`];
    /// `player` is the adversary's own randomness.
    pub fn decide(&self, f: &TrainedTable, ctx: &GameContext, point: &mut Rng, player: &mut Rng) -> u8 {
        match self {
            Distinguisher::Constant { bit } => *bit,
            Distinguisher::LikelihoodRatio => {
                let mut s = 0.0;
                for ((w, p), q) in f.weights.iter().zip(&ctx.p.table).zip(&ctx.q.table) {
                    if *w > 0.0 {
                        s += w * (p / q).ln();
                    }
                }
                if s > 0.0 {
                    0
                } else {
                    1
                }
            }
            Distinguisher::FromAdversary { adversary } => {
                let (xs, xns, y) = ctx.p.domains.decode(ctx.p.sample(point));
                if adversary.guess(f, xns, y, &ctx.tau, player) == ctx.tau.apply(xs) {
                    0
                } else {
                    1
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Estimates

/// Monte-Carlo success probability with a 95% interval half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub estimate: f64,
    pub trials: usize,
    pub successes: usize,
    pub ci_half_width: f64,
}

impl GainEstimate {
    /// Agresti-Coull half-width, which stays positive at 0 and `trials` successes.
    pub fn from_counts(successes: usize, trials: usize) -> Self {
        let t = trials as f64;
        let adj = (successes as f64 + 0.5 * Z95 * Z95) / (t + Z95 * Z95);
        GainEstimate {
            estimate: successes as f64 / t,
            trials,
            successes,
            ci_half_width: Z95 * (adj * (1.0 - adj) / (t + Z95 * Z95)).sqrt(),
        }
    }
}

/// Difference of two coupled gains with a paired 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEstimate {
    pub advantage: f64,
    pub gain: GainEstimate,
    pub baseline_gain: GainEstimate,
    pub ci_half_width: f64,
}

impl AdvantageEstimate {
    fn from_pairs(wins: &[(bool, bool)]) -> Self {
        let t = wins.len();
        let a = wins.iter().filter(|w| w.0).count();
        let b = wins.iter().filter(|w| w.1).count();
        let diffs: Vec<f64> = wins.iter().map(|&(x, y)| x as i32 as f64 - y as i32 as f64).collect();
        let mean = diffs.iter().sum::<f64>() / t as f64;
        let var = if t > 1 {
            diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (t - 1) as f64
        } else {
            1.0
        };
        AdvantageEstimate {
            advantage: mean,
            gain: GainEstimate::from_counts(a, t),
            baseline_gain: GainEstimate::from_counts(b, t),
            // A floor of one discordant pair keeps the interval honest when
            // every observed pair agrees.
            ci_half_width: Z95 * (var.max(1.0 / t as f64) / t as f64).sqrt(),
        }
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        Err(Error::InvalidArgument("trials must be >= 1".into()))
    } else {
        Ok(())
    }
}

struct TrialStreams {
    data: Rng,
    mech: Rng,
    point: Rng,
    player: Rng,
}

impl TrialStreams {
    fn new(seed: Seed, trial: usize) -> Self {
        let s = seed.derive(trial as u64);
        TrialStreams {
            data: s.derive(STREAM_DATA).rng(),
            mech: s.derive(STREAM_MECH).rng(),
            point: s.derive(STREAM_POINT).rng(),
            player: s.derive(STREAM_PLAYER).rng(),
        }
    }
}

/// One semantic-game round: training set from `train_dist`, challenge from
/// `test_dist`. Returns whether the adversary wins.
fn sem_round(
    adv: &Adversary,
    mech: &Mechanism,
    ctx: &GameContext,
    train_dist: &DiscreteJoint,
    test_dist: &DiscreteJoint,
    n: usize,
    st: &mut TrialStreams,
) -> bool {
    let sample = train_dist.sample_n(n, &mut st.data);
    let f = train(mech, ctx, &sample, &mut st.mech);
    let (xs, xns, y) = test_dist.domains.decode(test_dist.sample(&mut st.point));
    adv.guess(&f, xns, y, &ctx.tau, &mut st.player) == ctx.tau.apply(xs)
}

/// Estimate `Pr[A(f, x_ns, y) = tau(x_s)]` with `S ~ p^n`, `f = M(S)`,
/// `(x_s, x_ns, y) ~ p`.
pub fn run_sem_experiment(
    adv: &Adversary,
    mech: &MechanismSpec,
    ctx: &GameContext,
    n: usize,
    trials: usize,
    seed: Seed,
) -> Result<GainEstimate> {
    check_trials(trials)?;
    mech.validate(ctx.p.domains)?;
    let wins = (0..trials)
        .filter(|&t| sem_round(adv, &mech.mechanism, ctx, &ctx.p, &ctx.p, n, &mut TrialStreams::new(seed, t)))
        .count();
    Ok(GainEstimate::from_counts(wins, trials))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Training set and challenge both from the product distribution.
    ProductData,
    /// Training set from the product, challenge from `p`.
    IdealWorld,
}

/// Gain on `p` minus the baseline gain, both runs sharing per-trial seeds.
pub fn adv_sem(
    adv: &Adversary,
    mech: &MechanismSpec,
    ctx: &GameContext,
    n: usize,
    trials: usize,
    seed: Seed,
    baseline: Baseline,
) -> Result<AdvantageEstimate> {
    check_trials(trials)?;
    mech.validate(ctx.p.domains)?;
    let test = match baseline {
        Baseline::ProductData => &ctx.q,
        Baseline::IdealWorld => &ctx.p,
    };
    let pairs: Vec<(bool, bool)> = (0..trials)
        .map(|t| {
            let real = sem_round(adv, &mech.mechanism, ctx, &ctx.p, &ctx.p, n, &mut TrialStreams::new(seed, t));
            let base = sem_round(adv, &mech.mechanism, ctx, &ctx.q, test, n, &mut TrialStreams::new(seed, t));
            (real, base)
        })
        .collect();
    Ok(AdvantageEstimate::from_pairs(&pairs))
}

/// Estimate `Pr[b' = b]`: `b` uniform, `S ~ p^n` if `b = 0` else `S ~ q^n`.
pub fn run_ind_experiment(
    dist: &Distinguisher,
    mech: &MechanismSpec,
    ctx: &GameContext,
    n: usize,
    trials: usize,
    seed: Seed,
) -> Result<GainEstimate> {
    check_trials(trials)?;
    mech.validate(ctx.p.domains)?;
    let wins = (0..trials)
        .filter(|&t| {
            let mut st = TrialStreams::new(seed, t);
            let b = seed.derive(t as u64).derive(STREAM_BIT).rng().random::<bool>() as u8;
            let source = if b == 0 { &ctx.p } else { &ctx.q };
            let sample = source.sample_n(n, &mut st.data);
            let f = train(&mech.mechanism, ctx, &sample, &mut st.mech);
            dist.decide(&f, ctx, &mut st.point, &mut st.player) == b
        })
        .count();
    Ok(GainEstimate::from_counts(wins, trials))
}

/// `e^{n eps}/(e^{n eps}+1) + (e^{n eps}-1)/((e^{n eps}+1)(e^eps-1)) delta`,
/// evaluated as `sigmoid(n eps) + delta tanh(n eps / 2) / expm1(eps)`; the
/// delta coefficient is `n / 2` at `eps = 0`.
pub fn dp_gain_bound(n: usize, epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon >= 0.0) || !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("need eps >= 0 and delta in [0, 1), got ({epsilon}, {delta})")));
    }
    let ne = n as f64 * epsilon;
    let main = 1.0 / (1.0 + (-ne).exp());
    if delta == 0.0 {
        return Ok(main);
    }
    let coef = if epsilon == 0.0 {
        n as f64 / 2.0
    } else {
        (ne / 2.0).tanh() / epsilon.exp_m1()
    };
    Ok(main + coef * delta)
}

/// Parameters for `k`-adjacent datasets: `(k eps, (e^{k eps}-1)/(e^eps-1) delta)`,
/// with `k delta` at `eps = 0`.
pub fn group_privacy_params(epsilon: f64, delta: f64, k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if !(epsilon >= 0.0) || !(delta >= 0.0) {
        return Err(Error::InvalidArgument("epsilon and delta must be >= 0".into()));
    }
    let kf = k as f64;
    let d = if delta == 0.0 {
        0.0
    } else if epsilon == 0.0 {
        kf * delta
    } else {
        (kf * epsilon).exp_m1() / epsilon.exp_m1() * delta
    };
    Ok((kf * epsilon, d))
}

/// Fraction of trials in which `S ~ p^n` and `S' ~ q^n` differ at every position.
pub fn disjointness_probability(p: &DiscreteJoint, n: usize, trials: usize, seed: Seed) -> Result<f64> {
    check_trials(trials)?;
    let q = product_marginal(p);
    let hits = (0..trials)
        .filter(|&t| {
            let mut rng = seed.derive(t as u64).rng();
            (0..n).all(|_| p.sample(&mut rng) != q.sample(&mut rng))
        })
        .count();
    Ok(hits as f64 / trials as f64)
}

// ---------------------------------------------------------------------------
// Verifiers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguisherGain {
    pub distinguisher: String,
    pub gain: GainEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Entry {
    pub adversary: String,
    /// Advantage against the ideal-world baseline; this is what is checked.
    pub advantage_ideal: AdvantageEstimate,
    /// Advantage against the product-data baseline; reported only.
    pub advantage_product: AdvantageEstimate,
    /// `2 max gain_IND - 1`.
    pub rhs: f64,
    /// `rhs + 3 ci - advantage`; negative means a violation.
    pub slack: f64,
    pub combined_ci: f64,
    /// Gain of the distinguisher built from this adversary.
    pub constructed_gain: GainEstimate,
    /// `(2 constructed_gain - 1) - advantage`, which the construction makes 0
    /// in expectation.
    pub constructed_gap: f64,
    pub constructed_gap_ci: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub n: usize,
    pub trials: usize,
    pub distinguishers: Vec<DistinguisherGain>,
    pub best_distinguisher: String,
    pub max_gain_ind: GainEstimate,
    pub entries: Vec<Theorem1Entry>,
    pub pass: bool,
}

/// Check `Adv_SEM(A) <= 2 max_B gain_IND(B) - 1` (ideal-world advantage) for
/// every adversary, maximizing over the given distinguishers plus the one
/// constructed from each adversary.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem1(
    adversaries: &[Adversary],
    distinguishers: &[Distinguisher],
    mech: &MechanismSpec,
    ctx: &GameContext,
    n: usize,
    trials: usize,
    seed: Seed,
) -> Result<Theorem1Report> {
    if adversaries.is_empty() || distinguishers.is_empty() {
        return Err(Error::InvalidArgument("need at least one adversary and one distinguisher".into()));
    }
    check_trials(trials)?;
    let mut all: Vec<Distinguisher> = distinguishers.to_vec();
    for a in adversaries {
        let d = Distinguisher::FromAdversary { adversary: a.clone() };
        if !all.contains(&d) {
            all.push(d);
        }
    }
    let mut gains = Vec::with_capacity(all.len());
    for d in &all {
        gains.push(DistinguisherGain {
            distinguisher: d.name(),
            gain: run_ind_experiment(d, mech, ctx, n, trials, seed)?,
        });
    }
    let best = gains
        .iter()
        .max_by(|a, b| a.gain.estimate.total_cmp(&b.gain.estimate))
        .expect("non-empty")
        .clone();
    let rhs = 2.0 * best.gain.estimate - 1.0;
    let mut entries = Vec::with_capacity(adversaries.len());
    for a in adversaries {
        let ideal = adv_sem(a, mech, ctx, n, trials, seed, Baseline::IdealWorld)?;
        let product = adv_sem(a, mech, ctx, n, trials, seed, Baseline::ProductData)?;
        let combined_ci = (ideal.ci_half_width.powi(2) + (2.0 * best.gain.ci_half_width).powi(2)).sqrt();
        let slack = rhs + 3.0 * combined_ci - ideal.advantage;
        let name = Distinguisher::FromAdversary { adversary: a.clone() }.name();
        let constructed = gains.iter().find(|g| g.distinguisher == name).expect("added above").gain;
        let gap_ci = (ideal.ci_half_width.powi(2) + (2.0 * constructed.ci_half_width).powi(2)).sqrt();
        entries.push(Theorem1Entry {
            adversary: a.name(),
            advantage_ideal: ideal,
            advantage_product: product,
            rhs,
            slack,
            combined_ci,
            constructed_gain: constructed,
            constructed_gap: 2.0 * constructed.estimate - 1.0 - ideal.advantage,
            constructed_gap_ci: gap_ci,
            pass: slack >= 0.0,
        });
    }
    Ok(Theorem1Report {
        n,
        trials,
        pass: entries.iter().all(|e| e.pass),
        best_distinguisher: best.distinguisher,
        max_gain_ind: best.gain,
        distinguishers: gains,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Entry {
    pub distinguisher: String,
    pub gain: GainEstimate,
    /// `bound + 3 ci - gain`; negative means a violation.
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub bound: f64,
    /// Estimated probability that the two training sets are not disjoint;
    /// the bound is only claimed outside that event.
    pub gamma: f64,
    pub entries: Vec<Theorem2Entry>,
    pub pass: bool,
}

/// Compare each distinguisher's gain with `dp_gain_bound` at the mechanism's
/// declared `(eps, delta)`.
pub fn verify_theorem2(
    distinguishers: &[Distinguisher],
    mech: &MechanismSpec,
    ctx: &GameContext,
    n: usize,
    trials: usize,
    seed: Seed,
) -> Result<Theorem2Report> {
    let Privacy::Dp { epsilon, delta } = mech.declared else {
        return Err(Error::InvalidArgument("mechanism does not declare a DP guarantee".into()));
    };
    if distinguishers.is_empty() {
        return Err(Error::InvalidArgument("no distinguishers".into()));
    }
    let bound = dp_gain_bound(n, epsilon, delta)?;
    let mut entries = Vec::new();
    for d in distinguishers {
        let gain = run_ind_experiment(d, mech, ctx, n, trials, seed)?;
        let slack = bound + 3.0 * gain.ci_half_width - gain.estimate;
        entries.push(Theorem2Entry {
            distinguisher: d.name(),
            gain,
            slack,
            pass: slack >= 0.0,
        });
    }
    Ok(Theorem2Report {
        n,
        epsilon,
        delta,
        bound,
        gamma: 1.0 - disjointness_probability(&ctx.p, n, trials, seed.derive(u64::MAX))?,
        pass: entries.iter().all(|e| e.pass),
        entries,
    })
}

/// Domain for the randomized-response probe: `|X_s| = 16`, `|X_ns| = 8`,
/// `|Y| = 2`, `(x_ns, y)` uniform and `x_s = 2 x_ns + y`. Total variation
/// between `p` and its product is `15/16`.
pub fn tightness_probe_joint() -> DiscreteJoint {
    DiscreteJoint::deterministic(Domains::new(16, 8, 2), |xns, y| 2 * xns + y).expect("valid probe domain")
}

/// Exact best IND gain of [`Mechanism::RandomizedResponse`] at `n = 1`:
/// `1/2 + (r - 1/2) TV(p, q)` with `r = e^eps / (1 + e^eps)`.
pub fn randomized_response_gain(p: &DiscreteJoint, epsilon: f64) -> f64 {
    let q = product_marginal(p);
    let tv: f64 = p.table.iter().zip(&q.table).map(|(a, b)| (a - b).max(0.0)).sum();
    let r = 1.0 / (1.0 + (-epsilon).exp());
    0.5 + (r - 0.5) * tv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_round_trip() {
        let d = Domains::new(3, 2, 4);
        for c in 0..d.num_cells() {
            let (a, b, y) = d.decode(c);
            assert_eq!(d.cell(a, b, y), c);
        }
    }

    #[test]
    fn rejects_bad_tables() {
        let d = Domains::new(2, 1, 1);
        assert!(DiscreteJoint::new(d, vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::new(d, vec![1.5, -0.5]).is_err());
        assert!(DiscreteJoint::new(d, vec![1.0]).is_err());
        assert!(DiscreteJoint::new(Domains::new(0, 1, 1), vec![]).is_err());
    }

    #[test]
    fn inversion_skips_empty_cells() {
        let p = DiscreteJoint::new(Domains::new(4, 1, 1), vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        assert_eq!(p.cell_for(0.0), 1);
        assert_eq!(p.cell_for(0.4999), 1);
        assert_eq!(p.cell_for(0.5), 3);
        assert_eq!(p.cell_for(0.9999999), 3);
    }

    #[test]
    fn bound_closed_forms() {
        assert_eq!(dp_gain_bound(7, 0.0, 0.0).unwrap(), 0.5);
        assert!((dp_gain_bound(1, 3f64.ln(), 0.0).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(dp_gain_bound(3, 0.0, 0.1).unwrap(), 0.5 + 0.15);
        assert!(dp_gain_bound(1, 800.0, 0.0).unwrap() == 1.0);
        assert_eq!(group_privacy_params(0.3, 1e-5, 1).unwrap(), (0.3, 1e-5));
        assert_eq!(group_privacy_params(0.3, 0.0, 4).unwrap(), (1.2, 0.0));
        assert_eq!(group_privacy_params(0.0, 1e-5, 4).unwrap(), (0.0, 4e-5));
        assert!(group_privacy_params(0.3, 0.0, 0).is_err());
    }

    #[test]
    fn rr_probe_gain_is_close_to_bound() {
        let g = randomized_response_gain(&tightness_probe_joint(), 1.0);
        let b = dp_gain_bound(1, 1.0, 0.0).unwrap();
        assert!((g - (0.5 + (b - 0.5) * 15.0 / 16.0)).abs() < 1e-12);
        assert!(g >= 0.95 * b);
    }
}
