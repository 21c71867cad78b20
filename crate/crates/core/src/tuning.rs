//! Leak-free sequential hyperparameter selection.
//!
//! At step `t` the caller hands over only the checkpoints that precede the
//! current one, plus an evaluator bound to the current validation split.
//! Each candidate `alpha` rebuilds the estimate the method would have
//! deployed one step earlier, and the evaluator scores it. Nothing from a
//! later timestamp can reach this function.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Trajectory};
use crate::error::{Error, Result};
use crate::method::MethodSpec;
use crate::rng::Stream;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Grid,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub kind: SpaceKind,
    pub bounds: [f64; 2],
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SearchSpace {
    pub fn grid(lo: f64, hi: f64, count: usize) -> Result<Self> {
        let s = SearchSpace {
            kind: SpaceKind::Grid,
            bounds: [lo, hi],
            count,
            seed: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn random(lo: f64, hi: f64, count: usize, seed: u64) -> Result<Self> {
        let s = SearchSpace {
            kind: SpaceKind::Random,
            bounds: [lo, hi],
            count,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// 30 uniform draws from [-1, 1].
    pub fn taylor_default(seed: u64) -> Self {
        Self::random(-1.0, 1.0, 30, seed).expect("valid default")
    }

    /// [0.9, 1.0] in steps of 0.002.
    pub fn downscale_default() -> Self {
        Self::grid(0.9, 1.0, 51).expect("valid default")
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig(format!("search bounds [{lo}, {hi}] are not an interval")));
        }
        if self.count == 0 {
            return Err(Error::InvalidConfig("search space needs at least one candidate".into()));
        }
        Ok(())
    }

    /// Grid points include both bounds exactly; random draws keep draw order.
    pub fn candidates(&self) -> Vec<f64> {
        let [lo, hi] = self.bounds;
        match self.kind {
            SpaceKind::Grid if self.count == 1 => vec![lo],
            SpaceKind::Grid => {
                let last = self.count - 1;
                (0..self.count)
                    .map(|i| {
                        if i == last {
                            hi
                        } else {
                            lo + (hi - lo) * i as f64 / last as f64
                        }
                    })
                    .collect()
            }
            SpaceKind::Random => {
                let mut s = Stream::new(self.seed);
                (0..self.count).map(|_| s.uniform_in(lo, hi)).collect()
            }
        }
    }

    /// Grid spacing; `None` for random spaces and single-point grids.
    pub fn cell(&self) -> Option<f64> {
        match self.kind {
            SpaceKind::Grid if self.count > 1 => Some((self.bounds[1] - self.bounds[0]) / (self.count - 1) as f64),
            _ => None,
        }
    }
}

/// Validation loss of one candidate; non-finite means the candidate failed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValScore {
    pub alpha: f64,
    pub score: f64,
}

impl ValScore {
    pub fn failed(&self) -> bool {
        !self.score.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub alpha: f64,
    pub scores: Vec<ValScore>,
}

/// Picks the candidate with the lowest validation loss.
///
/// `history` must hold only checkpoints strictly before the current step.
/// Ties go to the candidate closest to the method's neutral value, then to
/// the smaller alpha. Candidates whose estimate cannot be built, or whose
/// score is non-finite, are recorded as failed and skipped.
pub fn select_alpha<S, F>(
    history: &[Checkpoint<S>],
    step: u64,
    method: &MethodSpec,
    space: &SearchSpace,
    mut evaluator: F,
) -> Result<Selection>
where
    S: Scalar,
    F: FnMut(&Checkpoint<S>) -> f64,
{
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    space.validate()?;
    let neutral = method
        .neutral_alpha()
        .ok_or_else(|| Error::NotTunable(method.name().to_owned()))?;
    if history.len() < method.min_history() {
        return Err(Error::InsufficientHistory {
            needed: method.min_history(),
            have: history.len(),
        });
    }
    let traj = Trajectory::new(history.to_vec(), step)?;

    let mut scores = Vec::with_capacity(space.count);
    for alpha in space.candidates() {
        let score = match method.with_alpha(alpha).and_then(|m| m.estimate(&traj)) {
            Ok(candidate) => evaluator(&candidate),
            Err(_) => f64::NAN,
        };
        scores.push(ValScore { alpha, score });
    }

    let best = scores
        .iter()
        .filter(|s| !s.failed())
        .min_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then((a.alpha - neutral).abs().total_cmp(&(b.alpha - neutral).abs()))
                .then(a.alpha.total_cmp(&b.alpha))
        })
        .ok_or(Error::AllCandidatesFailed)?;
    Ok(Selection {
        alpha: best.alpha,
        scores,
    })
}
