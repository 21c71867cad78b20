//! Parameter extrapolation.
//!
//! * [`taylor_step`]: `theta_t + alpha * (theta_t - theta_{t-dt}) / dt`.
//! * [`taylor_order2`]: adds `alpha^2 / 2` times the backward second
//!   difference.
//! * [`fit_learned_offset`] / [`fit_learned_coeff`]: a single learned change
//!   `offset`, optionally scaled by `softplus(alpha * delta + beta)`, fitted
//!   to consecutive checkpoint increments under an unsquared L2 loss.
//!
//! The learned-change objectives are
//!
//! ```text
//! sum_t sum_{delta=0..tau} || target(t, delta) - scale(delta) * offset || + lambda || offset ||
//! ```
//!
//! where every norm is smoothed to `sqrt(|v|^2 + eps^2)`. With
//! [`HorizonTarget::Repeated`] the target is `theta_t - theta_{t-1}` for every
//! `delta` (so each increment appears `tau + 1` times); with
//! [`HorizonTarget::Shifted`] it is `theta_{t+delta} - theta_{t-1}`.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Trajectory};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorConfig {
    pub alpha: f64,
    #[serde(default = "one")]
    pub lookback: usize,
}

fn one() -> usize {
    1
}

impl TaylorConfig {
    pub fn new(alpha: f64, lookback: usize) -> Result<Self> {
        let cfg = TaylorConfig { alpha, lookback };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(Error::InvalidConfig("Taylor lookback must be >= 1".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("Taylor alpha {} is not finite", self.alpha)));
        }
        Ok(())
    }

    fn dt<S: Scalar>(&self, traj: &Trajectory<S>) -> f64 {
        (self.lookback as u64 * traj.step()) as f64
    }
}

fn history_at<S: Scalar>(traj: &Trajectory<S>, back: usize) -> Result<&Checkpoint<S>> {
    let n = traj.len();
    if n <= back {
        return Err(Error::InsufficientHistory {
            needed: back + 1,
            have: n,
        });
    }
    Ok(&traj.checkpoints()[n - 1 - back])
}

/// First-order finite-difference Taylor step from the last checkpoint.
pub fn taylor_step<S: Scalar>(traj: &Trajectory<S>, cfg: &TaylorConfig) -> Result<Checkpoint<S>> {
    cfg.validate()?;
    let prev = history_at(traj, cfg.lookback)?;
    let cur = traj.last();
    if cfg.alpha == 0.0 {
        return Ok(cur.clone());
    }
    let scale = cfg.alpha / cfg.dt(traj);
    let values: Vec<f64> = cur
        .to_f64_vec()
        .into_iter()
        .zip(prev.to_f64_vec())
        .map(|(x, y)| x + scale * (x - y))
        .collect();
    cur.from_f64_like(&values)
}

/// Second-order Taylor step using backward first and second differences.
pub fn taylor_order2<S: Scalar>(traj: &Trajectory<S>, cfg: &TaylorConfig) -> Result<Checkpoint<S>> {
    cfg.validate()?;
    let prev2 = history_at(traj, 2 * cfg.lookback)?;
    let prev = &traj.checkpoints()[traj.len() - 1 - cfg.lookback];
    let cur = traj.last();
    if cfg.alpha == 0.0 {
        return Ok(cur.clone());
    }
    let dt = cfg.dt(traj);
    let a = cfg.alpha;
    let values: Vec<f64> = cur
        .to_f64_vec()
        .into_iter()
        .zip(prev.to_f64_vec())
        .zip(prev2.to_f64_vec())
        .map(|((x, y1), y2)| {
            let d1 = (x - y1) / dt;
            let d2 = (x - 2.0 * y1 + y2) / (dt * dt);
            x + a * d1 + 0.5 * a * a * d2
        })
        .collect();
    cur.from_f64_like(&values)
}

/// Which checkpoint difference each `delta` term is fitted against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonTarget {
    /// `theta_t - theta_{t-1}` for every delta.
    #[default]
    Repeated,
    /// `theta_{t+delta} - theta_{t-1}`.
    Shifted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnedChangeConfig {
    pub lambda: f64,
    /// tau: deltas `0..=horizon` enter the objective.
    pub horizon: usize,
    pub lr: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub eps: f64,
    /// Recorded with the fit for provenance; the descent itself starts from
    /// zero and draws no random numbers.
    pub seed: u64,
    pub target: HorizonTarget,
}

impl Default for LearnedChangeConfig {
    fn default() -> Self {
        LearnedChangeConfig {
            lambda: 0.0,
            horizon: 0,
            lr: 1e-2,
            max_iters: 5000,
            tol: 1e-10,
            eps: 1e-8,
            seed: 0,
            target: HorizonTarget::Repeated,
        }
    }
}

impl LearnedChangeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_owned()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad("tol must be positive");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        Ok(())
    }
}

/// `softplus(alpha * delta + beta)` parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoeffParams {
    pub alpha: f64,
    pub beta: f64,
}

impl CoeffParams {
    pub fn scale(&self, delta: f64) -> f64 {
        softplus(self.alpha * delta + self.beta)
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn smooth_norm(v: impl Iterator<Item = f64>, eps: f64) -> f64 {
    (v.map(|x| x * x).sum::<f64>() + eps * eps).sqrt()
}

/// The eps-smoothed learned-change objective over a fixed set of targets.
#[derive(Clone, Debug)]
pub struct ChangeObjective {
    targets: Vec<Vec<f64>>,
    deltas: Vec<usize>,
    lambda: f64,
    eps: f64,
}

impl ChangeObjective {
    pub fn from_trajectory<S: Scalar>(traj: &Trajectory<S>, cfg: &LearnedChangeConfig) -> Result<Self> {
        if traj.len() < 2 {
            return Err(Error::InsufficientHistory {
                needed: 2,
                have: traj.len(),
            });
        }
        let flat: Vec<Vec<f64>> = traj.iter().map(Checkpoint::to_f64_vec).collect();
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        let mut targets = Vec::new();
        let mut deltas = Vec::new();
        for t in 1..flat.len() {
            for delta in 0..=cfg.horizon {
                let target = match cfg.target {
                    HorizonTarget::Repeated => diff(&flat[t], &flat[t - 1]),
                    HorizonTarget::Shifted => match flat.get(t + delta) {
                        Some(ahead) => diff(ahead, &flat[t - 1]),
                        None => continue,
                    },
                };
                targets.push(target);
                deltas.push(delta);
            }
        }
        Ok(Self::new(targets, deltas, cfg.lambda, cfg.eps))
    }

    /// Direct construction; `targets[k]` is paired with `deltas[k]`.
    pub fn new(targets: Vec<Vec<f64>>, deltas: Vec<usize>, lambda: f64, eps: f64) -> Self {
        assert_eq!(targets.len(), deltas.len());
        ChangeObjective {
            targets,
            deltas,
            lambda,
            eps,
        }
    }

    pub fn num_terms(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    fn scale(&self, k: usize, params: Option<CoeffParams>) -> f64 {
        params.map_or(1.0, |p| p.scale(self.deltas[k] as f64))
    }

    pub fn value(&self, offset: &[f64], params: Option<CoeffParams>) -> f64 {
        let data: f64 = self
            .targets
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let c = self.scale(k, params);
                smooth_norm(g.iter().zip(offset).map(|(gi, oi)| gi - c * oi), self.eps)
            })
            .sum();
        data + self.lambda * smooth_norm(offset.iter().copied(), self.eps)
    }

    /// Gradient with respect to `offset`, and to `(alpha, beta)` when
    /// `params` is given (returned as zeros otherwise).
    pub fn gradient(&self, offset: &[f64], params: Option<CoeffParams>) -> (Vec<f64>, f64, f64) {
        let mut grad = vec![0.0; offset.len()];
        let (mut d_alpha, mut d_beta) = (0.0, 0.0);
        let mut residual = vec![0.0; offset.len()];
        for (k, g) in self.targets.iter().enumerate() {
            let c = self.scale(k, params);
            for ((r, gi), oi) in residual.iter_mut().zip(g).zip(offset) {
                *r = gi - c * oi;
            }
            let s = smooth_norm(residual.iter().copied(), self.eps);
            for (gr, r) in grad.iter_mut().zip(&residual) {
                *gr -= c * r / s;
            }
            if let Some(p) = params {
                let delta = self.deltas[k] as f64;
                let d_scale = -residual.iter().zip(offset).map(|(r, o)| r * o).sum::<f64>() / s;
                let dz = d_scale * sigmoid(p.alpha * delta + p.beta);
                d_alpha += dz * delta;
                d_beta += dz;
            }
        }
        let s = smooth_norm(offset.iter().copied(), self.eps);
        for (gr, o) in grad.iter_mut().zip(offset) {
            *gr += self.lambda * o / s;
        }
        (grad, d_alpha, d_beta)
    }
}

/// Outcome of a gradient-descent fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetFit<S> {
    pub offset: Checkpoint<S>,
    pub report: FitReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoeffFit<S> {
    pub offset: Checkpoint<S>,
    pub params: CoeffParams,
    pub report: FitReport,
}

// Below this many halvings of the base rate no step can change the iterate.
const MAX_HALVINGS: i32 = 200;

/// Gradient descent with step rejection: a step is accepted only if it
/// strictly lowers the objective; otherwise the rate is halved and retried.
/// After an accepted step the rate doubles back toward `cfg.lr`.
fn descend(
    x0: Vec<f64>,
    cfg: &LearnedChangeConfig,
    value: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
) -> (Vec<f64>, FitReport) {
    let mut x = x0;
    let mut f = value(&x);
    let initial = f;
    let mut lr = cfg.lr;
    let min_lr = cfg.lr * 0.5f64.powi(MAX_HALVINGS);
    let mut converged = false;
    let mut iterations = 0;
    let mut cand = vec![0.0; x.len()];

    'outer: while iterations < cfg.max_iters {
        iterations += 1;
        let g = grad(&x);
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        loop {
            for ((c, xi), gi) in cand.iter_mut().zip(&x).zip(&g) {
                *c = xi - lr * gi;
            }
            let fc = value(&cand);
            if fc.is_finite() && fc < f {
                let decrease = f - fc;
                std::mem::swap(&mut x, &mut cand);
                f = fc;
                lr = (lr * 2.0).min(cfg.lr);
                if decrease < cfg.tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lr *= 0.5;
            if lr < min_lr {
                converged = true;
                break 'outer;
            }
        }
    }
    (
        x,
        FitReport {
            objective: f,
            initial_objective: initial,
            iterations,
            converged,
        },
    )
}

/// Fits a single global change `offset` between consecutive checkpoints.
pub fn fit_learned_offset<S: Scalar>(
    traj: &Trajectory<S>,
    cfg: &LearnedChangeConfig,
) -> Result<OffsetFit<S>> {
    cfg.validate()?;
    let obj = ChangeObjective::from_trajectory(traj, cfg)?;
    let n = traj.last().num_params();
    let (x, report) = descend(
        vec![0.0; n],
        cfg,
        |x| obj.value(x, None),
        |x| obj.gradient(x, None).0,
    );
    Ok(OffsetFit {
        offset: traj.last().from_f64_like(&x)?,
        report,
    })
}

/// Jointly fits `offset` and the softplus scale parameters.
pub fn fit_learned_coeff<S: Scalar>(
    traj: &Trajectory<S>,
    cfg: &LearnedChangeConfig,
) -> Result<CoeffFit<S>> {
    cfg.validate()?;
    let obj = ChangeObjective::from_trajectory(traj, cfg)?;
    let n = traj.last().num_params();
    fn unpack(x: &[f64]) -> (&[f64], CoeffParams) {
        let n = x.len() - 2;
        (
            &x[..n],
            CoeffParams {
                alpha: x[n],
                beta: x[n + 1],
            },
        )
    }
    let (x, report) = descend(
        vec![0.0; n + 2],
        cfg,
        |x| {
            let (o, p) = unpack(x);
            obj.value(o, Some(p))
        },
        |x| {
            let (o, p) = unpack(x);
            let (mut g, da, db) = obj.gradient(o, Some(p));
            g.push(da);
            g.push(db);
            g
        },
    );
    let (offset, params) = unpack(&x);
    Ok(CoeffFit {
        offset: traj.last().from_f64_like(offset)?,
        params,
        report,
    })
}

/// Forecast from a learned change. Without `params` one application is one
/// step (`last + offset`); with `params` the offset is scaled by
/// `softplus(alpha * delta + beta)`.
pub fn apply_learned<S: Scalar>(
    last: &Checkpoint<S>,
    offset: &Checkpoint<S>,
    params: Option<CoeffParams>,
    delta: u32,
) -> Result<Checkpoint<S>> {
    last.ensure_congruent(offset)?;
    if delta == 0 {
        return Err(Error::InvalidConfig("forecast delta must be >= 1".into()));
    }
    let scale = params.map_or(1.0, |p| p.scale(delta as f64));
    let values: Vec<f64> = last
        .to_f64_vec()
        .into_iter()
        .zip(offset.to_f64_vec())
        .map(|(x, o)| x + scale * o)
        .collect();
    last.from_f64_like(&values)
}
