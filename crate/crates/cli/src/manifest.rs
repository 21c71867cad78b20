//! Experiment manifest schema.
//!
//! ```json
//! {
//!   "task": {"synthetic": {"dim": 2, "t_count": 20, "noise_sigma": 0.1}},
//!   "learner": "ols",
//!   "methods": [
//!     {"method": {"kind": "recent"}},
//!     {"id": "taylor_tuned", "method": {"kind": "taylor", "alpha": 0.0},
//!      "tuning": {"kind": "random", "bounds": [-1, 1], "count": 30}}
//!   ],
//!   "delta": 3,
//!   "seeds": [0, 1, 2],
//!   "output_dir": "out"
//! }
//! ```
//!
//! Unknown keys are rejected everywhere. Relative paths resolve against the
//! manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempgen::rng::derive_seed;
use tempgen::synthetic::{CubicCoeffs, Learner, SyntheticTask, TargetKind, TrainConfig};
use tempgen::tuning::SearchSpace;
use tempgen::MethodSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub task: TaskSpec,
    #[serde(default = "default_learner")]
    pub learner: Learner,
    #[serde(default)]
    pub train: TrainConfig,
    pub methods: Vec<MethodEntry>,
    pub delta: u32,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

fn default_learner() -> Learner {
    Learner::Ols
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Synthetic(SyntheticSpec),
    /// Path to a trajectory manifest (`trajectory.json`).
    Trajectory(PathBuf),
}

/// A synthetic task without its seed; each run seed fills that in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    /// Defaults to the seeded sign-flipped demo coefficients.
    #[serde(default)]
    pub coeffs: Option<CubicCoeffs>,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_n")]
    pub n_train: usize,
    #[serde(default = "default_n")]
    pub n_val: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_t_count")]
    pub t_count: usize,
    #[serde(default)]
    pub target: TargetKind,
}

fn default_sigma() -> f64 {
    0.1
}
fn default_n() -> usize {
    200
}
fn default_n_test() -> usize {
    1000
}
fn default_t_count() -> usize {
    20
}

impl SyntheticSpec {
    pub fn task(&self, seed: u64) -> SyntheticTask {
        let mut task = SyntheticTask::with_default_coeffs(self.dim, seed);
        if let Some(c) = &self.coeffs {
            task.coeffs = c.clone();
        }
        task.noise_sigma = self.noise_sigma;
        task.n_train = self.n_train;
        task.n_val = self.n_val;
        task.n_test = self.n_test;
        task.t_count = self.t_count;
        task.target = self.target;
        task
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    /// Label used in output files; defaults to the method kind.
    #[serde(default)]
    pub id: Option<String>,
    pub method: MethodSpec,
    #[serde(default)]
    pub tuning: Option<SearchSpace>,
}

impl MethodEntry {
    pub fn label(&self) -> String {
        match &self.id {
            Some(id) => id.clone(),
            None if self.tuning.is_some() => format!("{}_tuned", self.method.name()),
            None => self.method.name().to_owned(),
        }
    }
}

/// Per-seed configuration derived from the manifest.
pub struct SeedSetup {
    pub task: Option<SyntheticTask>,
    pub learner: Learner,
    pub train: TrainConfig,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<(), String> {
        if self.methods.is_empty() {
            return Err("field `methods`: at least one method is required".into());
        }
        if self.delta == 0 {
            return Err("field `delta`: must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return Err("field `seeds`: at least one seed is required".into());
        }
        let mut labels = HashSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            let field = format!("field `methods[{i}]`");
            m.method.validate().map_err(|e| format!("{field}: {e}"))?;
            if let Some(space) = &m.tuning {
                space.validate().map_err(|e| format!("{field}.tuning: {e}"))?;
                if m.method.neutral_alpha().is_none() {
                    return Err(format!("{field}.tuning: method `{}` has no tunable alpha", m.method.name()));
                }
                for a in space.candidates() {
                    m.method
                        .with_alpha(a)
                        .map_err(|e| format!("{field}.tuning: candidate {a}: {e}"))?;
                }
            }
            if !labels.insert(m.label()) {
                return Err(format!("{field}: duplicate method id `{}`", m.label()));
            }
        }
        if let TaskSpec::Synthetic(spec) = &self.task {
            spec.task(0).validate().map_err(|e| format!("field `task.synthetic`: {e}"))?;
            if let Learner::Mlp(mlp) = &self.learner {
                mlp.validate().map_err(|e| format!("field `learner`: {e}"))?;
                self.train.validate().map_err(|e| format!("field `train`: {e}"))?;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Seeds the task data, the MLP initialization and mini-batch order from
    /// one run seed.
    pub fn seed_setup(&self, seed: u64) -> SeedSetup {
        let learner = match &self.learner {
            Learner::Ols => Learner::Ols,
            Learner::Mlp(spec) => {
                let mut spec = spec.clone();
                spec.seed = derive_seed(seed, &[1, spec.seed]);
                Learner::Mlp(spec)
            }
        };
        let train = TrainConfig {
            seed: derive_seed(seed, &[2, self.train.seed]),
            ..self.train
        };
        let task = match &self.task {
            TaskSpec::Synthetic(spec) => Some(spec.task(seed)),
            TaskSpec::Trajectory(_) => None,
        };
        SeedSetup { task, learner, train }
    }
}

/// Parses manifest text; errors carry the line/column and field name.
pub fn parse(text: &str) -> Result<ExperimentManifest, String> {
    let m: ExperimentManifest = serde_json::from_str(text).map_err(|e| {
        format!("manifest schema error at line {} column {}: {e}", e.line(), e.column())
    })?;
    m.validate().map_err(|e| format!("manifest schema error: {e}"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "task": {"synthetic": {"dim": 2, "t_count": 5}},
        "methods": [{"method": {"kind": "recent"}}],
        "delta": 1,
        "seeds": [0],
        "output_dir": "out"
    }"#;

    #[test]
    fn minimal_manifest_parses() {
        let m = parse(MINIMAL).unwrap();
        assert_eq!(m.learner, Learner::Ols);
        assert_eq!(m.methods[0].label(), "recent");
    }

    #[test]
    fn missing_field_is_named() {
        let text = MINIMAL.replace("\"delta\": 1,", "");
        let err = parse(&text).unwrap_err();
        assert!(err.contains("delta") && err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = MINIMAL.replace("\"delta\": 1,", "\"delta\": 1, \"detla\": 2,");
        assert!(parse(&text).unwrap_err().contains("detla"));
        let text = MINIMAL.replace("\"t_count\": 5", "\"t_count\": 5, \"sigma\": 0");
        assert!(parse(&text).unwrap_err().contains("sigma"));
    }

    #[test]
    fn semantic_errors() {
        assert!(parse(&MINIMAL.replace("\"delta\": 1", "\"delta\": 0")).unwrap_err().contains("delta"));
        assert!(parse(&MINIMAL.replace("[0]", "[]")).unwrap_err().contains("seeds"));
        let tuned_recent = MINIMAL.replace(
            r#"{"kind": "recent"}"#,
            r#"{"kind": "recent"}, "tuning": {"kind": "grid", "bounds": [0, 1], "count": 3}"#,
        );
        assert!(parse(&tuned_recent).unwrap_err().contains("tunable"));
        let bad_space = MINIMAL.replace(
            r#"{"kind": "recent"}"#,
            r#"{"kind": "downscale", "alpha": 1.0}, "tuning": {"kind": "grid", "bounds": [0.5, 1.5], "count": 3}"#,
        );
        assert!(parse(&bad_space).is_err());
    }
}
