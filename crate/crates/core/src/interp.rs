//! Parameter interpolation: convex merging, the recent model, downscaling.
//!
//! Merging weights carry an explicit slot 0 for the zero vector, so the
//! convex family is `sum_{i=0..t} alpha_i * theta_i` with `theta_0 = 0`.
//! Downscaling is the `{alpha_0, alpha_t}` member of that family.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Trajectory};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute tolerance on `sum(alphas) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Convex weights `alpha_0..alpha_t`; slot 0 weights the zero checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeWeights {
    alphas: Vec<f64>,
}

impl MergeWeights {
    /// Validates without renormalizing.
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::Weight(format!(
                "need the zero slot plus at least one checkpoint weight, got {}",
                alphas.len()
            )));
        }
        if let Some((i, a)) = alphas
            .iter()
            .enumerate()
            .find(|(_, a)| !a.is_finite() || **a < 0.0)
        {
            return Err(Error::Weight(format!("alpha_{i} = {a} is not a non-negative number")));
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Weight(format!("weights sum to {sum}, expected 1")));
        }
        Ok(MergeWeights { alphas })
    }

    /// All mass on checkpoint `index` (1-based; 0 is the zero vector) out of `n`.
    pub fn one_hot(n: usize, index: usize) -> Result<Self> {
        if index > n {
            return Err(Error::Weight(format!("slot {index} out of range 0..={n}")));
        }
        let mut alphas = vec![0.0; n + 1];
        alphas[index] = 1.0;
        Self::new(alphas)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Number of checkpoint slots, excluding the zero slot.
    pub fn num_checkpoints(&self) -> usize {
        self.alphas.len() - 1
    }
}

/// `alpha_0 = 0`, `alpha_1..alpha_n = 1/n`.
pub fn uniform_weights(n: usize) -> Result<MergeWeights> {
    if n == 0 {
        return Err(Error::InvalidConfig("uniform weights need n >= 1".into()));
    }
    let mut alphas = vec![1.0 / n as f64; n + 1];
    alphas[0] = 0.0;
    MergeWeights::new(alphas)
}

/// `alpha_i ∝ decay^(n - i)` for `i = 1..n`, normalized; `alpha_0 = 0`.
pub fn ema_weights(n: usize, decay: f64) -> Result<MergeWeights> {
    if n == 0 {
        return Err(Error::InvalidConfig("EMA weights need n >= 1".into()));
    }
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::InvalidConfig(format!("EMA decay {decay} outside (0, 1)")));
    }
    let mut alphas = vec![0.0; n + 1];
    // Build from the newest slot backwards so the largest weight is exact.
    let mut w = 1.0;
    for i in (1..=n).rev() {
        alphas[i] = w;
        w *= decay;
    }
    let total: f64 = alphas.iter().sum();
    alphas.iter_mut().for_each(|a| *a /= total);
    MergeWeights::new(alphas)
}

/// `sum_i alpha_i * theta_i`, accumulated in `f64`.
///
/// Zero-weight slots are skipped entirely, so a one-hot weight vector
/// reproduces its checkpoint bit for bit.
pub fn merge<S: Scalar>(traj: &Trajectory<S>, weights: &MergeWeights) -> Result<Checkpoint<S>> {
    if weights.num_checkpoints() != traj.len() {
        return Err(Error::Weight(format!(
            "{} weights for {} checkpoints (plus the zero slot)",
            weights.alphas.len(),
            traj.len()
        )));
    }
    let template = traj.last();
    let mut acc: Option<Vec<f64>> = None;
    for (ckpt, &alpha) in traj.iter().zip(&weights.alphas[1..]) {
        if alpha == 0.0 {
            continue;
        }
        let values = ckpt.to_f64_vec();
        match acc.as_mut() {
            None => acc = Some(values.into_iter().map(|v| alpha * v).collect()),
            Some(acc) => acc
                .iter_mut()
                .zip(values)
                .for_each(|(a, v)| *a += alpha * v),
        }
    }
    match acc {
        Some(values) => template.from_f64_like(&values),
        None => Ok(template.zeros_like()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownscaleConfig {
    pub alpha: f64,
}

impl DownscaleConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "downscale alpha {alpha} outside [0, 1]"
            )));
        }
        Ok(DownscaleConfig { alpha })
    }
}

/// `alpha * theta`.
pub fn downscale<S: Scalar>(c: &Checkpoint<S>, cfg: DownscaleConfig) -> Result<Checkpoint<S>> {
    DownscaleConfig::new(cfg.alpha)?;
    if cfg.alpha == 1.0 {
        return Ok(c.clone());
    }
    c.map_f64(|v| cfg.alpha * v)
}

/// The most recent checkpoint, unchanged.
pub fn recent<S: Scalar>(traj: &Trajectory<S>) -> Result<Checkpoint<S>> {
    traj.checkpoints()
        .last()
        .cloned()
        .ok_or(Error::EmptyTrajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Tensor;
    use proptest::prelude::*;

    fn vec_ckpt(t: i64, v: Vec<f64>) -> Checkpoint<f64> {
        Checkpoint::from_tensors(t, [("p", Tensor::vector(v))]).unwrap()
    }

    fn traj(rows: Vec<Vec<f64>>) -> Trajectory<f64> {
        let cks = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| vec_ckpt(i as i64 + 1, r))
            .collect();
        Trajectory::new(cks, 1).unwrap()
    }

    #[test]
    fn midpoint_merge() {
        let t = traj(vec![vec![2.0, 4.0], vec![4.0, 8.0]]);
        let w = MergeWeights::new(vec![0.0, 0.5, 0.5]).unwrap();
        let m = merge(&t, &w).unwrap();
        assert_eq!(m.to_f64_vec(), vec![3.0, 6.0]);
    }

    #[test]
    fn one_hot_last_is_recent() {
        let t = traj(vec![vec![0.1, -0.0], vec![0.3, -7.25], vec![1e-300, -0.0]]);
        let m = merge(&t, &MergeWeights::one_hot(3, 3).unwrap()).unwrap();
        let r = recent(&t).unwrap();
        let bits = |c: &Checkpoint<f64>| c.to_f64_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&r));
        assert_eq!(r, *t.get(2).unwrap());
    }

    #[test]
    fn zero_slot_only_gives_zero_checkpoint() {
        let t = traj(vec![vec![2.0, 4.0], vec![4.0, 8.0]]);
        let m = merge(&t, &MergeWeights::one_hot(2, 0).unwrap()).unwrap();
        assert_eq!(m.to_f64_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn weight_validation() {
        assert!(matches!(MergeWeights::new(vec![0.0, -0.1, 1.1]), Err(Error::Weight(_))));
        assert!(matches!(MergeWeights::new(vec![0.0, 0.5, 0.4]), Err(Error::Weight(_))));
        assert!(MergeWeights::new(vec![0.0, 0.5, 0.5 + 5e-10]).is_ok());
        assert!(MergeWeights::new(vec![0.0, 0.5, 0.5 + 2e-9]).is_err());
        let t = traj(vec![vec![1.0]]);
        assert!(merge(&t, &uniform_weights(2).unwrap()).is_err());
    }

    #[test]
    fn uniform_weight_values() {
        assert_eq!(uniform_weights(4).unwrap().alphas(), &[0.0, 0.25, 0.25, 0.25, 0.25]);
        assert_eq!(uniform_weights(1).unwrap().alphas(), &[0.0, 1.0]);
        assert!(uniform_weights(0).is_err());
    }

    #[test]
    fn ema_weight_values() {
        let w = ema_weights(3, 0.5).unwrap();
        let expected = [0.0, 1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
        for (a, e) in w.alphas().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
        assert_eq!(ema_weights(1, 0.3).unwrap().alphas(), &[0.0, 1.0]);
        assert!(ema_weights(3, 1.0).is_err());
        assert!(ema_weights(3, 0.0).is_err());
    }

    #[test]
    fn ema_approaches_uniform() {
        for n in [1, 2, 7, 30] {
            let e = ema_weights(n, 1.0 - 1e-9).unwrap();
            let u = uniform_weights(n).unwrap();
            for (a, b) in e.alphas().iter().zip(u.alphas()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn downscale_edges() {
        let c = vec_ckpt(1, vec![1.5, -2.0, 0.1]);
        assert_eq!(downscale(&c, DownscaleConfig::new(1.0).unwrap()).unwrap(), c);
        let z = downscale(&c, DownscaleConfig::new(0.0).unwrap()).unwrap();
        assert_eq!(z.l2_norm(), 0.0);
        assert!(DownscaleConfig::new(1.01).is_err());
        assert!(DownscaleConfig::new(-0.01).is_err());
    }

    #[test]
    fn downscale_tuned_t5_small_value() {
        let c = vec_ckpt(1, (0..97).map(|i| (i as f64 * 0.37).sin() * 3.0).collect());
        let alpha = 0.956892;
        let d = downscale(&c, DownscaleConfig::new(alpha).unwrap()).unwrap();
        assert!((d.l2_norm() / c.l2_norm() - alpha).abs() < 1e-9);
    }

    #[test]
    fn downscale_is_merge_of_zero_and_last() {
        let t = traj(vec![vec![1.0, 2.0], vec![-3.0, 5.0]]);
        let a = 0.7;
        let w = MergeWeights::new(vec![1.0 - a, 0.0, a]).unwrap();
        let m = merge(&t, &w).unwrap();
        let d = downscale(t.last(), DownscaleConfig::new(a).unwrap()).unwrap();
        assert_eq!(m, d);
    }

    #[test]
    fn recent_cases() {
        let t = traj(vec![vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(recent(&t).unwrap(), *t.get(2).unwrap());
        let one = traj(vec![vec![9.0]]);
        assert_eq!(recent(&one).unwrap(), *one.first());
    }

    #[test]
    fn f32_merge_accumulates_in_f64() {
        let n = 1000;
        let cks: Vec<Checkpoint<f32>> = (0..n)
            .map(|i| {
                Checkpoint::from_tensors(i as i64, [("p", Tensor::vector(vec![0.1f32 + i as f32 * 1e-4]))])
                    .unwrap()
            })
            .collect();
        let t = Trajectory::new(cks, 1).unwrap();
        let m = merge(&t, &uniform_weights(n).unwrap()).unwrap();
        let exact: f64 = t.iter().map(|c| c.to_f64_vec()[0]).sum::<f64>() / n as f64;
        assert_eq!(m.to_f64_vec()[0], exact as f32 as f64);
    }

    proptest! {
        #[test]
        fn merge_stays_in_convex_hull(
            rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..6),
            raw in prop::collection::vec(0.0f64..1.0, 7),
        ) {
            let n = rows.len();
            let mut alphas: Vec<f64> = raw[..=n].to_vec();
            alphas[1] += 1e-3;
            let s: f64 = alphas.iter().sum();
            alphas.iter_mut().for_each(|a| *a /= s);
            let w = MergeWeights::new(alphas.clone()).unwrap();
            let t = traj(rows.clone());
            let m = merge(&t, &w).unwrap().to_f64_vec();
            for j in 0..4 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                if alphas[0] > 0.0 { lo = 0.0; hi = 0.0; }
                for (i, r) in rows.iter().enumerate() {
                    if alphas[i + 1] > 0.0 { lo = lo.min(r[j]); hi = hi.max(r[j]); }
                }
                prop_assert!(m[j] >= lo - 1e-9 && m[j] <= hi + 1e-9);
            }
        }

        #[test]
        fn downscale_norm_law(
            v in prop::collection::vec(-1e3f64..1e3, 1..50),
            alpha in 0.0f64..=1.0,
        ) {
            let c = vec_ckpt(0, v);
            let d = downscale(&c, DownscaleConfig::new(alpha).unwrap()).unwrap();
            let n = c.l2_norm();
            prop_assert!((d.l2_norm() - alpha * n).abs() <= 1e-9 * n.max(1e-300));
        }

        #[test]
        fn ema_is_valid_and_increasing(n in 1usize..40, decay in 0.01f64..0.99) {
            let w = ema_weights(n, decay).unwrap();
            prop_assert_eq!(w.alphas()[0], 0.0);
            for pair in w.alphas()[1..].windows(2) {
                prop_assert!(pair[1] > pair[0]);
            }
        }
    }
}
