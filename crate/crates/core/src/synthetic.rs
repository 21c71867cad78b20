//! Seeded synthetic benchmark with cubic parameter drift.
//!
//! The true parameters follow `theta*_t = a + b t + c t^2 + d t^3` per input
//! dimension. Inputs are `x ~ N(0, I)` and targets are `y = x . theta*_t + eps`
//! with `eps ~ N(0, sigma^2)`, or, for the logistic variant, labels
//! `1[x . theta*_t > 0]` flipped with a fixed probability.
//!
//! Streams are derived per timestamp and split with [`crate::rng::derive_seed`]
//! using labels `[t, split]` (`split`: train 0, val 1, test 2). Each sample
//! draws `dim` normals for `x`, then one normal for the noise, then (logistic
//! only) one uniform for the flip.
//!
//! Learners: ordinary least squares via the normal equations, and a
//! one-hidden-layer tanh MLP trained by seeded mini-batch gradient descent.
//! MLP checkpoints hold `hidden.weight [h, d]`, `hidden.bias [h]`,
//! `output.weight [1, h]` and `output.bias [1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Tensor, Trajectory};
use crate::error::{Error, Result};
use crate::extrap::{sigmoid, softplus};
use crate::rng::{derive_seed, Stream};

const SIGN_STREAM: u64 = 0x5167;
const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubicCoeffs {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetKind {
    #[default]
    Regression,
    /// Binary labels from the sign of `x . theta*`, each flipped with
    /// probability `flip_prob`.
    Logistic { flip_prob: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub dim: usize,
    pub coeffs: CubicCoeffs,
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub t_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub target: TargetKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn label(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl SyntheticTask {
    /// `a = 1, b = 0.5, c = 0.05, d = 0.005` per dimension, with the sign of
    /// each dimension's coefficients flipped by a coin drawn from `seed`.
    pub fn with_default_coeffs(dim: usize, seed: u64) -> Self {
        let mut s = Stream::derived(seed, &[SIGN_STREAM]);
        let signs: Vec<f64> = (0..dim)
            .map(|_| if s.next_u64() & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        let scaled = |v: f64| signs.iter().map(|s| s * v).collect::<Vec<_>>();
        SyntheticTask {
            dim,
            coeffs: CubicCoeffs {
                a: scaled(1.0),
                b: scaled(0.5),
                c: scaled(0.05),
                d: scaled(0.005),
            },
            noise_sigma: 0.1,
            n_train: 200,
            n_val: 200,
            n_test: 1000,
            t_count: 20,
            seed,
            target: TargetKind::Regression,
        }
    }

    /// Constant true parameters `a` (b = c = d = 0).
    pub fn stationary(a: Vec<f64>, seed: u64) -> Self {
        let dim = a.len();
        let mut task = Self::with_default_coeffs(dim, seed);
        task.coeffs = CubicCoeffs {
            a,
            b: vec![0.0; dim],
            c: vec![0.0; dim],
            d: vec![0.0; dim],
        };
        task
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        let CubicCoeffs { a, b, c, d } = &self.coeffs;
        for (name, v) in [("a", a), ("b", b), ("c", c), ("d", d)] {
            if v.len() != self.dim {
                return bad(format!("coefficient `{name}` has {} entries, dim is {}", v.len(), self.dim));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("coefficient `{name}` is not finite"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 || self.t_count == 0 {
            return bad("sample counts and t_count must be >= 1".into());
        }
        if let TargetKind::Logistic { flip_prob } = self.target {
            if !(0.0..=1.0).contains(&flip_prob) {
                return bad(format!("flip_prob {flip_prob} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Timestamps `1..=t_count`.
    pub fn timestamps(&self) -> impl Iterator<Item = i64> {
        1..=self.t_count as i64
    }

    /// `a + b t + c t^2 + d t^3`, per dimension.
    pub fn true_params(&self, t: i64) -> Vec<f64> {
        self.true_params_at(t as f64)
    }

    /// The cubic at a real-valued time.
    pub fn true_params_at(&self, t: f64) -> Vec<f64> {
        let CubicCoeffs { a, b, c, d } = &self.coeffs;
        (0..self.dim)
            .map(|i| a[i] + t * (b[i] + t * (c[i] + t * d[i])))
            .collect()
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    pub fn generate(&self, t: i64, split: Split) -> TimestampData {
        self.generate_n(t, split, self.split_size(split))
    }

    /// Like [`SyntheticTask::generate`] with an explicit sample count.
    pub fn generate_n(&self, t: i64, split: Split, n: usize) -> TimestampData {
        let theta = self.true_params(t);
        let mut s = Stream::derived(self.seed, &[t as u64, split.label()]);
        let mut x = Vec::with_capacity(n * self.dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let start = x.len();
            for _ in 0..self.dim {
                x.push(s.normal());
            }
            let signal = dot(&x[start..], &theta);
            let noise = s.normal();
            match self.target {
                TargetKind::Regression => y.push(signal + self.noise_sigma * noise),
                TargetKind::Logistic { flip_prob } => {
                    let label = signal > 0.0;
                    let flip = s.uniform() < flip_prob;
                    y.push(if label != flip { 1.0 } else { 0.0 });
                }
            }
        }
        TimestampData {
            dim: self.dim,
            x,
            y,
            theta_star: theta,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One split of one timestamp; `x` is row-major `n x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestampData {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta_star: Vec<f64>,
}

impl TimestampData {
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>, theta_star: Vec<f64>) -> Result<Self> {
        if dim == 0 || x.len() != y.len() * dim || theta_star.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "data shapes disagree: dim {dim}, {} inputs, {} targets, {} true params",
                x.len(),
                y.len(),
                theta_star.len()
            )));
        }
        Ok(TimestampData { dim, x, y, theta_star })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

/// Least squares via the normal equations `X^T X theta = X^T y`.
pub fn fit_ols(data: &TimestampData) -> Result<Vec<f64>> {
    let (n, d) = (data.len(), data.dim);
    if n < d {
        return Err(Error::RankDeficient);
    }
    let x = DMatrix::from_row_slice(n, d, &data.x);
    let y = DVector::from_column_slice(&data.y);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let chol = xtx.cholesky().ok_or(Error::RankDeficient)?;
    let theta = chol.solve(&xty);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient);
    }
    Ok(theta.iter().copied().collect())
}

/// A linear-model checkpoint holding one tensor `weight [dim]`.
pub fn linear_checkpoint(t: i64, theta: Vec<f64>) -> Result<Checkpoint<f64>> {
    Checkpoint::from_tensors(t, [("weight", Tensor::vector(theta))])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            hidden: 32,
            activation: Activation::Tanh,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("MLP needs at least one hidden unit".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig("init_scale must be >= 0".into()));
        }
        Ok(())
    }

    /// Gaussian weights with standard deviation `init_scale`, zero biases.
    pub fn init(&self, dim: usize) -> Result<Checkpoint<f64>> {
        self.validate()?;
        let mut s = Stream::derived(self.seed, &[INIT_STREAM]);
        let h = self.hidden;
        let w1 = (0..h * dim).map(|_| self.init_scale * s.normal()).collect();
        let w2 = (0..h).map(|_| self.init_scale * s.normal()).collect();
        Mlp {
            dim,
            hidden: h,
            w1,
            b1: vec![0.0; h],
            w2,
            b2: 0.0,
        }
        .to_checkpoint(0)
    }
}

/// Unpacked MLP parameters.
#[derive(Clone, Debug, PartialEq)]
struct Mlp {
    dim: usize,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

const MLP_TENSORS: [&str; 4] = ["hidden.weight", "hidden.bias", "output.weight", "output.bias"];

impl Mlp {
    fn from_checkpoint(c: &Checkpoint<f64>, spec: &MlpSpec) -> Result<Self> {
        let h = spec.hidden;
        let names: Vec<&str> = c.names().collect();
        if names != MLP_TENSORS {
            return Err(Error::Congruence(format!("expected MLP tensors {MLP_TENSORS:?}, found {names:?}")));
        }
        let w1 = c.get("hidden.weight").unwrap();
        let dim = w1.shape().get(1).copied().unwrap_or(0);
        let shapes_ok = w1.shape() == [h, dim]
            && c.get("hidden.bias").unwrap().shape() == [h]
            && c.get("output.weight").unwrap().shape() == [1, h]
            && c.get("output.bias").unwrap().shape() == [1];
        if !shapes_ok || dim == 0 {
            return Err(Error::Congruence(format!("MLP checkpoint shapes do not match hidden = {h}")));
        }
        Ok(Mlp {
            dim,
            hidden: h,
            w1: w1.data().to_vec(),
            b1: c.get("hidden.bias").unwrap().data().to_vec(),
            w2: c.get("output.weight").unwrap().data().to_vec(),
            b2: c.get("output.bias").unwrap().data()[0],
        })
    }

    fn to_checkpoint(&self, t: i64) -> Result<Checkpoint<f64>> {
        let (h, d) = (self.hidden, self.dim);
        Checkpoint::from_tensors(
            t,
            [
                ("hidden.weight", Tensor::new(vec![h, d], self.w1.clone())?),
                ("hidden.bias", Tensor::new(vec![h], self.b1.clone())?),
                ("output.weight", Tensor::new(vec![1, h], self.w2.clone())?),
                ("output.bias", Tensor::new(vec![1], vec![self.b2])?),
            ],
        )
    }

    fn hidden_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.w1[j * self.dim..(j + 1) * self.dim];
            *o = (dot(row, x) + self.b1[j]).tanh();
        }
    }

    fn forward(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        self.hidden_into(x, hidden);
        dot(&self.w2, hidden) + self.b2
    }
}

/// MLP outputs for every row of `data`.
pub fn mlp_predict(c: &Checkpoint<f64>, spec: &MlpSpec, data: &TimestampData) -> Result<Vec<f64>> {
    let mlp = Mlp::from_checkpoint(c, spec)?;
    if mlp.dim != data.dim {
        return Err(Error::Congruence(format!("MLP input dim {} vs data dim {}", mlp.dim, data.dim)));
    }
    let mut hidden = vec![0.0; mlp.hidden];
    Ok((0..data.len()).map(|i| mlp.forward(data.row(i), &mut hidden)).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Mse,
    /// Binary cross-entropy on the output logit; targets in {0, 1}.
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Warm-start step `t` from the parameters learned at `t - 1`.
    #[default]
    FromPrevious,
    /// Start every step from the same base initialization.
    FromBase,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: Loss,
    pub lr: f64,
    pub iters: usize,
    /// Mini-batch size; at or above the sample count this is full-batch
    /// gradient descent.
    pub batch: usize,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::Mse,
            lr: 1e-2,
            iters: 2000,
            batch: 256,
            seed: 0,
            init: InitMode::FromPrevious,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.iters == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig("lr, iters and batch must be positive".into()));
        }
        Ok(())
    }
}

fn loss_and_grad(loss: Loss, pred: f64, y: f64) -> (f64, f64) {
    match loss {
        Loss::Mse => {
            let r = pred - y;
            (r * r, 2.0 * r)
        }
        Loss::CrossEntropy => (softplus(pred) - y * pred, sigmoid(pred) - y),
    }
}

/// Mini-batch gradient descent from `warm_start` (or `spec.init`).
/// Batches walk a reshuffled permutation each epoch.
pub fn train_mlp(
    data: &TimestampData,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    warm_start: Option<&Checkpoint<f64>>,
) -> Result<Checkpoint<f64>> {
    spec.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("no training samples".into()));
    }
    let start = match warm_start {
        Some(c) => c.clone(),
        None => spec.init(data.dim)?,
    };
    let mut m = Mlp::from_checkpoint(&start, spec)?;
    if m.dim != data.dim {
        return Err(Error::Congruence(format!("MLP input dim {} vs data dim {}", m.dim, data.dim)));
    }
    let (h, d, n) = (m.hidden, m.dim, data.len());
    let batch = cfg.batch.min(n);
    let mut stream = Stream::new(derive_seed(cfg.seed, &[n as u64]));
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let mut hidden = vec![0.0; h];
    let mut g_w1 = vec![0.0; h * d];
    let mut g_b1 = vec![0.0; h];
    let mut g_w2 = vec![0.0; h];

    for iter in 0..cfg.iters {
        g_w1.iter_mut().for_each(|g| *g = 0.0);
        g_b1.iter_mut().for_each(|g| *g = 0.0);
        g_w2.iter_mut().for_each(|g| *g = 0.0);
        let mut g_b2 = 0.0;
        let mut batch_loss = 0.0;

        for _ in 0..batch {
            let i = if batch == n {
                cursor = (cursor + 1) % n;
                cursor
            } else {
                if cursor >= n {
                    stream.shuffle(&mut order);
                    cursor = 0;
                }
                cursor += 1;
                order[cursor - 1]
            };
            let x = data.row(i);
            let pred = m.forward(x, &mut hidden);
            let (l, g) = loss_and_grad(cfg.loss, pred, data.y[i]);
            batch_loss += l;
            g_b2 += g;
            for j in 0..h {
                g_w2[j] += g * hidden[j];
                let ga = g * m.w2[j] * (1.0 - hidden[j] * hidden[j]);
                g_b1[j] += ga;
                let row = &mut g_w1[j * d..(j + 1) * d];
                for (gr, xk) in row.iter_mut().zip(x) {
                    *gr += ga * xk;
                }
            }
        }
        if !batch_loss.is_finite() {
            return Err(Error::Divergence { iter });
        }
        let step = cfg.lr / batch as f64;
        m.w1.iter_mut().zip(&g_w1).for_each(|(w, g)| *w -= step * g);
        m.b1.iter_mut().zip(&g_b1).for_each(|(w, g)| *w -= step * g);
        m.w2.iter_mut().zip(&g_w2).for_each(|(w, g)| *w -= step * g);
        m.b2 -= step * g_b2;
    }
    let out = m.to_checkpoint(start.timestamp());
    match out {
        Err(Error::NonFinite { .. }) => Err(Error::Divergence { iter: cfg.iters }),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Learner {
    Ols,
    Mlp(MlpSpec),
}

impl Learner {
    pub fn model_kind(&self) -> ModelKind {
        match self {
            Learner::Ols => ModelKind::Linear,
            Learner::Mlp(spec) => ModelKind::Mlp(spec.clone()),
        }
    }
}

/// Trains one checkpoint per timestamp on that timestamp's training split.
///
/// OLS refits from scratch each step (it has no initialization to inherit).
/// The MLP follows `cfg.init`; step `t` trains with seed
/// `derive_seed(cfg.seed, [t])`.
pub fn run_continual(task: &SyntheticTask, learner: &Learner, cfg: &TrainConfig) -> Result<Trajectory<f64>> {
    task.validate()?;
    let mut checkpoints = Vec::with_capacity(task.t_count);
    match learner {
        Learner::Ols => {
            for t in task.timestamps() {
                let theta = fit_ols(&task.generate(t, Split::Train))?;
                checkpoints.push(linear_checkpoint(t, theta)?);
            }
        }
        Learner::Mlp(spec) => {
            cfg.validate()?;
            let base = spec.init(task.dim)?;
            let mut prev = base.clone();
            for t in task.timestamps() {
                let start = match cfg.init {
                    InitMode::FromPrevious => &prev,
                    InitMode::FromBase => &base,
                };
                let step_cfg = TrainConfig {
                    seed: derive_seed(cfg.seed, &[t as u64]),
                    ..*cfg
                };
                let data = task.generate(t, Split::Train);
                let ckpt = train_mlp(&data, spec, &step_cfg, Some(start))?.with_timestamp(t);
                prev = ckpt.clone();
                checkpoints.push(ckpt);
            }
        }
    }
    Trajectory::new(checkpoints, 1)
}

/// Reorders hidden units: new unit `i` is old unit `perm[i]`.
pub fn permute_hidden(c: &Checkpoint<f64>, spec: &MlpSpec, perm: &[usize]) -> Result<Checkpoint<f64>> {
    let m = Mlp::from_checkpoint(c, spec)?;
    let h = m.hidden;
    if perm.len() != h {
        return Err(Error::BadPermutation(format!("length {} for {h} hidden units", perm.len())));
    }
    let mut seen = vec![false; h];
    for &p in perm {
        if p >= h || std::mem::replace(&mut seen[p], true) {
            return Err(Error::BadPermutation(format!("{perm:?} is not a permutation of 0..{h}")));
        }
    }
    let d = m.dim;
    let mut out = m.clone();
    for (i, &p) in perm.iter().enumerate() {
        out.w1[i * d..(i + 1) * d].copy_from_slice(&m.w1[p * d..(p + 1) * d]);
        out.b1[i] = m.b1[p];
        out.w2[i] = m.w2[p];
    }
    out.to_checkpoint(c.timestamp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp(MlpSpec),
}

/// Model outputs of `pred` for every row of `data`.
pub fn predict(pred: &Checkpoint<f64>, data: &TimestampData, kind: &ModelKind) -> Result<Vec<f64>> {
    match kind {
        ModelKind::Linear => {
            let theta = pred.to_f64_vec();
            if theta.len() != data.dim {
                return Err(Error::Congruence(format!(
                    "linear model has {} parameters, data has dim {}",
                    theta.len(),
                    data.dim
                )));
            }
            Ok((0..data.len()).map(|i| dot(data.row(i), &theta)).collect())
        }
        ModelKind::Mlp(spec) => mlp_predict(pred, spec, data),
    }
}

/// Mean squared prediction error of `pred` on `data`.
pub fn evaluate_forecast(pred: &Checkpoint<f64>, data: &TimestampData, kind: &ModelKind) -> Result<f64> {
    evaluate_loss(pred, data, kind, Loss::Mse)
}

/// Mean of `loss` over `data`; for cross-entropy the model output is a logit.
pub fn evaluate_loss(pred: &Checkpoint<f64>, data: &TimestampData, kind: &ModelKind, loss: Loss) -> Result<f64> {
    let preds = predict(pred, data, kind)?;
    Ok(preds
        .iter()
        .zip(&data.y)
        .map(|(p, y)| loss_and_grad(loss, *p, *y).0)
        .sum::<f64>()
        / data.len() as f64)
}
