//! `tg synth`: materializes a synthetic task as files.
//!
//! Layout under `--out`:
//! `trajectory.json` + `ckpt_NNNNNN.tgck` (one per timestamp),
//! `data/tNNN_{train,val,test}.csv` (columns `x0..x{d-1},y`), and
//! `task.json` with the task, learner and training configuration.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use tempgen::rng::derive_seed;
use tempgen::synthetic::{
    run_continual, InitMode, Learner, Loss, MlpSpec, Split, SyntheticTask, TargetKind, TrainConfig,
};

use crate::output::{float, write_atomic, write_csv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LearnerArg {
    Ols,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    FromPrevious,
    FromBase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Regression,
    Logistic,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub t_count: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_val: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    #[arg(long, value_enum, default_value_t = TargetArg::Regression)]
    pub target: TargetArg,
    #[arg(long, default_value_t = 0.05)]
    pub flip_prob: f64,
    #[arg(long, value_enum, default_value_t = LearnerArg::Ols)]
    pub learner: LearnerArg,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = InitArg::FromPrevious)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TaskFile<'a> {
    task: &'a SyntheticTask,
    learner: &'a Learner,
    train: &'a TrainConfig,
}

impl SynthArgs {
    pub fn task(&self) -> SyntheticTask {
        let mut task = SyntheticTask::with_default_coeffs(self.dim, self.seed);
        task.noise_sigma = self.sigma;
        task.n_train = self.n_train;
        task.n_val = self.n_val;
        task.n_test = self.n_test;
        task.t_count = self.t_count;
        task.target = match self.target {
            TargetArg::Regression => TargetKind::Regression,
            TargetArg::Logistic => TargetKind::Logistic {
                flip_prob: self.flip_prob,
            },
        };
        task
    }

    pub fn learner(&self) -> Learner {
        match self.learner {
            LearnerArg::Ols => Learner::Ols,
            LearnerArg::Mlp => Learner::Mlp(MlpSpec {
                hidden: self.hidden,
                init_scale: self.init_scale,
                seed: derive_seed(self.seed, &[1, 0]),
                ..Default::default()
            }),
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            loss: match self.target {
                TargetArg::Regression => Loss::Mse,
                TargetArg::Logistic => Loss::CrossEntropy,
            },
            lr: self.lr,
            iters: self.iters,
            batch: self.batch,
            seed: derive_seed(self.seed, &[2, 0]),
            init: match self.init {
                InitArg::FromPrevious => InitMode::FromPrevious,
                InitArg::FromBase => InitMode::FromBase,
            },
        }
    }
}

/// Validates the flags; `Err` maps to the bad-flags exit code.
pub fn check(args: &SynthArgs) -> Result<(), String> {
    args.task().validate().map_err(|e| e.to_string())?;
    if let Learner::Mlp(spec) = args.learner() {
        spec.validate().map_err(|e| e.to_string())?;
        args.train().validate().map_err(|e| e.to_string())?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let task = args.task();
    let learner = args.learner();
    let train = args.train();
    let traj = run_continual(&task, &learner, &train)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    traj.save(args.out.join("trajectory.json"))?;

    let data_dir = args.out.join("data");
    fs::create_dir_all(&data_dir)?;
    let mut header: Vec<String> = (0..task.dim).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    for t in task.timestamps() {
        for split in [Split::Train, Split::Val, Split::Test] {
            let d = task.generate(t, split);
            let rows: Vec<Vec<String>> = (0..d.len())
                .map(|i| d.row(i).iter().chain([&d.y[i]]).map(|v| float(*v)).collect())
                .collect();
            write_csv(&data_dir.join(format!("t{t:03}_{}.csv", split.name())), &header, &rows)?;
        }
    }

    let file = TaskFile {
        task: &task,
        learner: &learner,
        train: &train,
    };
    let json = serde_json::to_string_pretty(&file)? + "\n";
    write_atomic(&args.out.join("task.json"), json.as_bytes())?;
    Ok(())
}
