//! Tagged selection of one estimation method and its hyperparameters.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Trajectory};
use crate::error::{Error, Result};
use crate::extrap::{self, LearnedChangeConfig, TaylorConfig};
use crate::interp::{self, DownscaleConfig};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Recent {},
    /// Uniform merge of every checkpoint so far.
    Average {},
    Ema {
        decay: f64,
    },
    Downscale {
        alpha: f64,
    },
    Taylor {
        alpha: f64,
        #[serde(default = "default_lookback")]
        lookback: usize,
        #[serde(default = "default_order")]
        order: u8,
    },
    LearnedOffset {
        #[serde(default)]
        config: LearnedChangeConfig,
    },
    LearnedCoeff {
        #[serde(default)]
        config: LearnedChangeConfig,
    },
}

fn default_lookback() -> usize {
    1
}

fn default_order() -> u8 {
    1
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Recent {} => "recent",
            MethodSpec::Average {} => "average",
            MethodSpec::Ema { .. } => "ema",
            MethodSpec::Downscale { .. } => "downscale",
            MethodSpec::Taylor { .. } => "taylor",
            MethodSpec::LearnedOffset { .. } => "learned_offset",
            MethodSpec::LearnedCoeff { .. } => "learned_coeff",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::Recent {} | MethodSpec::Average {} => Ok(()),
            MethodSpec::Ema { decay } => interp::ema_weights(1, *decay).map(|_| ()),
            MethodSpec::Downscale { alpha } => DownscaleConfig::new(*alpha).map(|_| ()),
            MethodSpec::Taylor {
                alpha,
                lookback,
                order,
            } => {
                TaylorConfig::new(*alpha, *lookback)?;
                if !matches!(order, 1 | 2) {
                    return Err(Error::InvalidConfig(format!("Taylor order {order} not in {{1, 2}}")));
                }
                Ok(())
            }
            MethodSpec::LearnedOffset { config } | MethodSpec::LearnedCoeff { config } => {
                config.validate()
            }
        }
    }

    /// Checkpoints needed before the method can produce an estimate.
    pub fn min_history(&self) -> usize {
        match self {
            MethodSpec::Recent {} | MethodSpec::Average {} | MethodSpec::Ema { .. } | MethodSpec::Downscale { .. } => 1,
            MethodSpec::Taylor { lookback, order, .. } => *order as usize * lookback + 1,
            MethodSpec::LearnedOffset { .. } | MethodSpec::LearnedCoeff { .. } => 2,
        }
    }

    /// The hyperparameter value that leaves the recent model untouched, for
    /// methods that expose a tunable `alpha`.
    pub fn neutral_alpha(&self) -> Option<f64> {
        match self {
            MethodSpec::Downscale { .. } => Some(1.0),
            MethodSpec::Taylor { .. } => Some(0.0),
            _ => None,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            MethodSpec::Downscale { alpha } | MethodSpec::Taylor { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }

    /// Copy with the tunable `alpha` replaced.
    pub fn with_alpha(&self, new_alpha: f64) -> Result<MethodSpec> {
        let mut out = self.clone();
        match &mut out {
            MethodSpec::Downscale { alpha } | MethodSpec::Taylor { alpha, .. } => *alpha = new_alpha,
            _ => return Err(Error::NotTunable(self.name().to_owned())),
        }
        out.validate()?;
        Ok(out)
    }

    /// Estimate for `delta` steps past the last checkpoint of `history`.
    ///
    /// Only the learned-change methods depend on `delta`: the offset form
    /// is applied `delta` times and the coefficient form evaluates its
    /// softplus scale at `delta`. Every other method deploys one estimate
    /// for the whole horizon.
    pub fn forecast<S: Scalar>(&self, history: &Trajectory<S>, delta: u32) -> Result<Checkpoint<S>> {
        self.validate()?;
        let have = history.len();
        if have < self.min_history() {
            return Err(Error::InsufficientHistory {
                needed: self.min_history(),
                have,
            });
        }
        match self {
            MethodSpec::Recent {} => interp::recent(history),
            MethodSpec::Average {} => interp::merge(history, &interp::uniform_weights(have)?),
            MethodSpec::Ema { decay } => interp::merge(history, &interp::ema_weights(have, *decay)?),
            MethodSpec::Downscale { alpha } => interp::downscale(history.last(), DownscaleConfig::new(*alpha)?),
            MethodSpec::Taylor {
                alpha,
                lookback,
                order,
            } => {
                let cfg = TaylorConfig::new(*alpha, *lookback)?;
                if *order == 2 {
                    extrap::taylor_order2(history, &cfg)
                } else {
                    extrap::taylor_step(history, &cfg)
                }
            }
            MethodSpec::LearnedOffset { config } => {
                let fit = extrap::fit_learned_offset(history, config)?;
                let mut out = history.last().clone();
                for _ in 0..delta.max(1) {
                    out = extrap::apply_learned(&out, &fit.offset, None, 1)?;
                }
                Ok(out)
            }
            MethodSpec::LearnedCoeff { config } => {
                let fit = extrap::fit_learned_coeff(history, config)?;
                extrap::apply_learned(history.last(), &fit.offset, Some(fit.params), delta.max(1))
            }
        }
    }

    /// Single-step estimate.
    pub fn estimate<S: Scalar>(&self, history: &Trajectory<S>) -> Result<Checkpoint<S>> {
        self.forecast(history, 1)
    }

    /// Whether [`MethodSpec::forecast`] varies with `delta`.
    pub fn depends_on_delta(&self) -> bool {
        matches!(self, MethodSpec::LearnedOffset { .. } | MethodSpec::LearnedCoeff { .. })
    }
}
