//! Forward-transfer metrics and trajectory analytics.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Trajectory;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Performance `M[t, j]` of the model deployed at `t` on data from `j`,
/// for `t < j <= t + delta`.
///
/// Cells beyond the end of the stream are simply absent; both metrics
/// average over whatever cells exist.
#[derive(Clone, Debug, PartialEq)]
pub struct FwtMatrix {
    values: BTreeMap<(i64, i64), f64>,
    direction: Direction,
    delta: u32,
    train_times: BTreeSet<i64>,
}

impl FwtMatrix {
    /// `train_times` are the rows every metric expects to see.
    pub fn new(direction: Direction, delta: u32, train_times: impl IntoIterator<Item = i64>) -> Result<Self> {
        if delta == 0 {
            return Err(Error::InvalidConfig("forward-transfer horizon must be >= 1".into()));
        }
        Ok(FwtMatrix {
            values: BTreeMap::new(),
            direction,
            delta,
            train_times: train_times.into_iter().collect(),
        })
    }

    pub fn insert(&mut self, t: i64, j: i64, value: f64) -> Result<()> {
        if !self.train_times.contains(&t) {
            return Err(Error::InvalidEntry(format!("t = {t} is not a training timestamp")));
        }
        if !(j > t && j - t <= self.delta as i64) {
            return Err(Error::InvalidEntry(format!(
                "({t}, {j}) outside horizon {}",
                self.delta
            )));
        }
        if !value.is_finite() {
            return Err(Error::InvalidEntry(format!("M[{t}, {j}] = {value}")));
        }
        self.values.insert((t, j), value);
        Ok(())
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn delta(&self) -> u32 {
        self.delta
    }

    pub fn t_range(&self) -> Option<(i64, i64)> {
        Some((*self.train_times.first()?, *self.train_times.last()?))
    }

    pub fn train_times(&self) -> impl Iterator<Item = i64> + '_ {
        self.train_times.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: i64, j: i64) -> Option<f64> {
        self.values.get(&(t, j)).copied()
    }

    /// Entries in `(t, j)` order.
    pub fn entries(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        self.values.iter().map(|(&(t, j), &v)| (t, j, v))
    }

    pub fn row(&self, t: i64) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .range((t, i64::MIN)..=(t, i64::MAX))
            .map(|(&(_, j), &v)| (j, v))
    }
}

/// Mean over every present cell.
pub fn avg_fwt(m: &FwtMatrix) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    Ok(m.values.values().sum::<f64>() / m.len() as f64)
}

/// Mean over rows of each row's worst cell (min when higher is better, max
/// when lower is better).
pub fn worst_fwt(m: &FwtMatrix) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut total = 0.0;
    for t in m.train_times() {
        let worst = m
            .row(t)
            .map(|(_, v)| v)
            .reduce(|a, b| match m.direction {
                Direction::HigherBetter => a.min(b),
                Direction::LowerBetter => a.max(b),
            })
            .ok_or(Error::MissingRow(t))?;
        total += worst;
    }
    Ok(total / m.train_times.len() as f64)
}

/// `(t, ||theta_t||)` in time order.
pub fn norm_curve<S: Scalar>(traj: &Trajectory<S>) -> Vec<(i64, f64)> {
    traj.iter().map(|c| (c.timestamp(), c.l2_norm())).collect()
}

/// Kendall's tau-b between two equally long samples. Returns 0 when either
/// sample is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tie_x, mut tie_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tie_x += 1;
            } else if dy == 0.0 {
                tie_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (concordant + discordant + tie_x) as f64;
    let n1 = (concordant + discordant + tie_y) as f64;
    if n0 == 0.0 || n1 == 0.0 {
        return 0.0;
    }
    (concordant - discordant) as f64 / (n0 * n1).sqrt()
}

/// Two-dimensional PCA of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub times: Vec<i64>,
    pub points: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    pub mean: Vec<f64>,
}

/// Projects the centered checkpoints onto their top two principal axes.
///
/// Works on the `time x time` Gram matrix, so cost is linear in the
/// parameter count. Each axis is oriented so the first point with a
/// non-negligible coordinate on it is positive.
pub fn pca_project<S: Scalar>(traj: &Trajectory<S>) -> Result<Projection> {
    let n = traj.len();
    if n < 3 {
        return Err(Error::InsufficientHistory { needed: 3, have: n });
    }
    let rows: Vec<Vec<f64>> = traj.iter().map(|c| c.to_f64_vec()).collect();
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let gram = DMatrix::from_fn(n, n, |i, j| {
        centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    let trace = gram.trace();
    let raw_scale: f64 = rows.iter().flatten().map(|v| v * v).sum();
    if trace.is_nan() || trace <= 1e-24 * (1.0 + raw_scale) {
        return Err(Error::DegenerateTrajectory);
    }

    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut points = vec![[0.0; 2]; n];
    let mut explained = [0.0; 2];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        explained[axis] = (lambda / trace).clamp(0.0, 1.0);
        let scale = lambda.sqrt();
        let col = eig.eigenvectors.column(k);
        let coords: Vec<f64> = col.iter().map(|u| u * scale).collect();
        let tiny = 1e-12 * coords.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let sign = coords
            .iter()
            .find(|c| c.abs() > tiny)
            .map_or(1.0, |c| c.signum());
        for (p, c) in points.iter_mut().zip(coords) {
            p[axis] = sign * c;
        }
    }
    // Enforce the documented ordering when the two leading eigenvalues tie.
    if explained[1] > explained[0] {
        explained.swap(0, 1);
    }
    Ok(Projection {
        times: traj.iter().map(|c| c.timestamp()).collect(),
        points,
        explained_variance: explained,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{Checkpoint, Tensor};
    use crate::rng::Stream;
    use proptest::prelude::*;

    fn matrix(direction: Direction, delta: u32, cells: &[(i64, i64, f64)]) -> FwtMatrix {
        let rows: BTreeSet<i64> = cells.iter().map(|c| c.0).collect();
        let mut m = FwtMatrix::new(direction, delta, rows).unwrap();
        for &(t, j, v) in cells {
            m.insert(t, j, v).unwrap();
        }
        m
    }

    fn traj(rows: Vec<Vec<f64>>) -> Trajectory<f64> {
        let cks = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| Checkpoint::from_tensors(i as i64, [("p", Tensor::vector(r))]).unwrap())
            .collect();
        Trajectory::new(cks, 1).unwrap()
    }

    #[test]
    fn avg_examples() {
        let m = matrix(Direction::HigherBetter, 2, &[(1, 2, 0.8), (1, 3, 0.6), (2, 3, 1.0)]);
        assert!((avg_fwt(&m).unwrap() - 0.8).abs() < 1e-15);
        let single = matrix(Direction::HigherBetter, 1, &[(4, 5, 0.3)]);
        assert_eq!(avg_fwt(&single).unwrap(), 0.3);
        let empty = FwtMatrix::new(Direction::HigherBetter, 1, [1]).unwrap();
        assert!(matches!(avg_fwt(&empty), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn worst_examples() {
        let m = matrix(Direction::HigherBetter, 2, &[(1, 2, 0.8), (1, 3, 0.6), (2, 3, 1.0)]);
        assert!((worst_fwt(&m).unwrap() - 0.8).abs() < 1e-15);
        let ppl = matrix(Direction::LowerBetter, 2, &[(1, 2, 5.0), (1, 3, 9.0)]);
        assert_eq!(worst_fwt(&ppl).unwrap(), 9.0);
    }

    #[test]
    fn worst_requires_every_row() {
        let mut m = FwtMatrix::new(Direction::HigherBetter, 2, [1, 2]).unwrap();
        m.insert(1, 2, 0.5).unwrap();
        assert!(matches!(worst_fwt(&m), Err(Error::MissingRow(2))));
    }

    #[test]
    fn insert_validation() {
        let mut m = FwtMatrix::new(Direction::HigherBetter, 2, [1]).unwrap();
        assert!(m.insert(1, 1, 0.0).is_err());
        assert!(m.insert(1, 4, 0.0).is_err());
        assert!(m.insert(2, 3, 0.0).is_err());
        assert!(m.insert(1, 2, f64::NAN).is_err());
        assert!(FwtMatrix::new(Direction::HigherBetter, 0, [1]).is_err());
    }

    #[test]
    fn norm_curves() {
        let t = traj(vec![vec![0.0, 0.0], vec![3.0, 4.0]]);
        assert_eq!(norm_curve(&t), vec![(0, 0.0), (1, 5.0)]);
        let c = traj(vec![vec![1.0, 2.0]; 4]);
        let curve = norm_curve(&c);
        assert!(curve.windows(2).all(|w| w[0].1 == w[1].1));
    }

    #[test]
    fn kendall_values() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[9.0, 5.0, 1.0]), -1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]), 0.0);
        // 4 concordant, 2 discordant pairs
        let tau = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 0.5]);
        let c_minus_d = [(1.0f64, 3.0f64), (1.0, 2.0), (1.0, 0.5), (3.0, 2.0), (3.0, 0.5), (2.0, 0.5)]
            .iter()
            .map(|(a, b)| if b > a { 1.0 } else { -1.0 })
            .sum::<f64>();
        assert!((tau - c_minus_d / 6.0).abs() < 1e-15);
    }

    #[test]
    fn pca_on_a_line() {
        let dir: Vec<f64> = (0..50).map(|i| ((i * 7) as f64).sin()).collect();
        let rows = (0..6)
            .map(|k| dir.iter().map(|d| 2.0 + d * k as f64 * 0.3).collect())
            .collect();
        let p = pca_project(&traj(rows)).unwrap();
        assert!((p.explained_variance[0] - 1.0).abs() < 1e-9);
        assert!(p.explained_variance[1].abs() < 1e-9);
        assert!(p.points.iter().all(|q| q[1].abs() < 1e-6));
        assert!(p.points[0][0] >= 0.0);
    }

    #[test]
    fn pca_preserves_planar_distances() {
        let mut s = Stream::new(9);
        let n = 1000;
        let e1: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mut e2: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let dot: f64 = e1.iter().zip(&e2).map(|(a, b)| a * b).sum::<f64>() / e1.iter().map(|a| a * a).sum::<f64>();
        e2.iter_mut().zip(&e1).for_each(|(b, a)| *b -= dot * a);
        let planar = [(0.0, 0.0), (3.0, 1.0), (-1.0, 2.5)];
        let offset: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let rows: Vec<Vec<f64>> = planar
            .iter()
            .map(|(a, b)| (0..n).map(|i| offset[i] + a * e1[i] + b * e2[i]).collect())
            .collect();
        let p = pca_project(&traj(rows.clone())).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let orig: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let proj = ((p.points[i][0] - p.points[j][0]).powi(2) + (p.points[i][1] - p.points[j][1]).powi(2)).sqrt();
                assert!((orig - proj).abs() < 1e-9 * orig.max(1.0), "{orig} vs {proj}");
            }
        }
        let total: f64 = p.explained_variance.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_rejects_identical_checkpoints() {
        let t = traj(vec![vec![0.1, 0.2, 0.3]; 4]);
        assert!(matches!(pca_project(&t), Err(Error::DegenerateTrajectory)));
        let short = traj(vec![vec![0.0], vec![1.0]]);
        assert!(pca_project(&short).is_err());
    }

    proptest! {
        #[test]
        fn constant_matrix_metrics(c in -10.0f64..10.0, rows in 1i64..6, delta in 1u32..4) {
            let mut cells = Vec::new();
            for t in 0..rows {
                for k in 1..=delta as i64 {
                    cells.push((t, t + k, c));
                }
            }
            let m = matrix(Direction::HigherBetter, delta, &cells);
            prop_assert!((worst_fwt(&m).unwrap() - c).abs() <= 1e-15 * c.abs().max(1.0));
            prop_assert!((avg_fwt(&m).unwrap() - c).abs() <= 1e-15 * c.abs().max(1.0));
        }

        #[test]
        fn metrics_agree_at_unit_horizon(vals in prop::collection::vec(-5.0f64..5.0, 1..10)) {
            let cells: Vec<_> = vals.iter().enumerate().map(|(i, v)| (i as i64, i as i64 + 1, *v)).collect();
            let m = matrix(Direction::LowerBetter, 1, &cells);
            prop_assert!((avg_fwt(&m).unwrap() - worst_fwt(&m).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn pca_variances_are_ordered(seed in 0u64..500) {
            let mut s = Stream::new(seed);
            let rows = (0..5).map(|_| (0..8).map(|_| s.normal()).collect()).collect();
            let p = pca_project(&traj(rows)).unwrap();
            let [a, b] = p.explained_variance;
            prop_assert!(a >= b && b >= 0.0 && a <= 1.0 && a + b <= 1.0 + 1e-12);
        }
    }
}
