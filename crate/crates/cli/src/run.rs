//! `tg run`: method x seed x timestamp evaluation.
//!
//! Row `t` of each forward-transfer matrix is the estimate deployed after
//! the `t`-th checkpoint (1-based position in the trajectory), scored on
//! timestamps `t + 1 ..= min(t + delta, T)`. Synthetic tasks score with the
//! test-split loss (MSE, or cross-entropy for the logistic target).
//! External trajectories carry no data, so they score with the squared
//! parameter distance to the future checkpoint. Both are lower-is-better.
//!
//! Tuned methods pick `alpha` at step `t` from the checkpoints strictly
//! before `t`, scored on step `t`'s validation split (or, for external
//! trajectories, by distance to checkpoint `t`). With `--oracle-future` the
//! validation target moves to step `t + 1` and every output row is marked.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use tempgen::evaluation::{avg_fwt, norm_curve, pca_project, worst_fwt, Direction, FwtMatrix};
use tempgen::rng::derive_seed;
use tempgen::synthetic::{evaluate_loss, run_continual, Loss, ModelKind, Split, TargetKind, TimestampData};
use tempgen::tuning::{select_alpha, SearchSpace};
use tempgen::{Checkpoint, Error as CoreError, MethodSpec, Trajectory};

use crate::manifest::{ExperimentManifest, MethodEntry, TaskSpec};
use crate::output::{float, write_atomic, write_csv};

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub oracle_future: bool,
}

pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub matrix: FwtMatrix,
    pub alphas: Vec<(i64, f64)>,
    pub wall_time: Duration,
}

/// Everything one seed's evaluations need.
pub struct SeedContext {
    pub seed: u64,
    pub traj: Trajectory<f64>,
    scorer: Scorer,
}

enum Scorer {
    Data {
        kind: ModelKind,
        loss: Loss,
        val: Vec<TimestampData>,
        test: Vec<TimestampData>,
    },
    Distance,
}

impl SeedContext {
    pub fn build(manifest: &ExperimentManifest, base: &Path, seed: u64) -> Result<Self> {
        match &manifest.task {
            TaskSpec::Trajectory(p) => {
                let path = manifest.resolve(base, p);
                let traj = Trajectory::load_widened(&path).with_context(|| format!("loading {}", path.display()))?;
                Ok(SeedContext {
                    seed,
                    traj,
                    scorer: Scorer::Distance,
                })
            }
            TaskSpec::Synthetic(_) => {
                let setup = manifest.seed_setup(seed);
                let task = setup.task.expect("synthetic task");
                let traj = run_continual(&task, &setup.learner, &setup.train)?;
                let loss = match task.target {
                    TargetKind::Regression => Loss::Mse,
                    TargetKind::Logistic { .. } => Loss::CrossEntropy,
                };
                let val = task.timestamps().map(|t| task.generate(t, Split::Val)).collect();
                let test = task.timestamps().map(|t| task.generate(t, Split::Test)).collect();
                Ok(SeedContext {
                    seed,
                    traj,
                    scorer: Scorer::Data {
                        kind: setup.learner.model_kind(),
                        loss,
                        val,
                        test,
                    },
                })
            }
        }
    }

    /// Loss of `c` at 1-based position `j`.
    fn score(&self, c: &Checkpoint<f64>, j: usize, split: Split) -> Result<f64, CoreError> {
        match &self.scorer {
            Scorer::Data { kind, loss, val, test } => {
                let data = if split == Split::Val { &val[j - 1] } else { &test[j - 1] };
                evaluate_loss(c, data, kind, *loss)
            }
            Scorer::Distance => {
                let target = self.traj.get(j - 1).expect("position in range");
                c.ensure_congruent(target)?;
                Ok(c.to_f64_vec()
                    .iter()
                    .zip(target.to_f64_vec())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum())
            }
        }
    }
}

/// Evaluates one method on one seed.
pub fn evaluate_method(ctx: &SeedContext, entry: &MethodEntry, delta: u32, opts: RunOptions) -> Result<RunRecord> {
    let start = Instant::now();
    let n = ctx.traj.len();
    let train_times: Vec<i64> = (1..n as i64).collect();
    let mut matrix = FwtMatrix::new(Direction::LowerBetter, delta, train_times)?;
    let mut alphas = Vec::new();
    let step = ctx.traj.step();
    let space = entry.tuning.as_ref().map(|s| SearchSpace {
        seed: derive_seed(s.seed, &[ctx.seed]),
        ..s.clone()
    });

    for t in 1..n {
        let history = ctx.traj.prefix(t)?;
        let mut method = entry.method.clone();
        if let Some(space) = &space {
            let before = &ctx.traj.checkpoints()[..t - 1];
            let alpha = if before.len() >= method.min_history().max(1) {
                let target = if opts.oracle_future { t + 1 } else { t };
                select_alpha(before, step, &method, space, |c| {
                    ctx.score(c, target, Split::Val).unwrap_or(f64::NAN)
                })
                .with_context(|| format!("tuning `{}` at t = {t}", entry.label()))?
                .alpha
            } else {
                method.neutral_alpha().expect("validated as tunable")
            };
            alphas.push((t as i64, alpha));
            method = method.with_alpha(alpha)?;
        }

        let short = history.len() < method.min_history();
        let fixed = if short || !method.depends_on_delta() {
            Some(if short { MethodSpec::Recent {} } else { method.clone() }.forecast(&history, 1)?)
        } else {
            None
        };
        for k in 1..=delta as usize {
            let j = t + k;
            if j > n {
                break;
            }
            let est = match &fixed {
                Some(c) => c.clone(),
                None => method.forecast(&history, k as u32)?,
            };
            let value = ctx
                .score(&est, j, Split::Test)
                .with_context(|| format!("scoring `{}` t = {t} j = {j}", entry.label()))?;
            if !value.is_finite() {
                bail!("`{}` produced a non-finite loss at t = {t}, j = {j}", entry.label());
            }
            matrix.insert(t as i64, j as i64, value)?;
        }
    }
    Ok(RunRecord {
        method: entry.label(),
        seed: ctx.seed,
        matrix,
        alphas,
        wall_time: start.elapsed(),
    })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("TG_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow!("TG_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("TG_THREADS must be a positive integer");
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

pub enum RunOutcome {
    Ok,
    Failed(Vec<String>),
}

/// Runs a parsed manifest, writing outputs under its `output_dir`.
pub fn run(manifest: &ExperimentManifest, base: &Path, opts: RunOptions) -> Result<(PathBuf, RunOutcome)> {
    let out = manifest.resolve(base, &manifest.output_dir);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let failed_marker = out.join("FAILED");
    if failed_marker.exists() {
        fs::remove_file(&failed_marker)?;
    }
    let pool = thread_pool()?;

    let (contexts, records) = pool.install(|| {
        let contexts: Vec<Result<SeedContext>> = manifest
            .seeds
            .par_iter()
            .map(|&s| SeedContext::build(manifest, base, s).with_context(|| format!("seed {s}")))
            .collect();
        let jobs: Vec<(usize, usize)> = (0..contexts.len())
            .flat_map(|s| (0..manifest.methods.len()).map(move |m| (m, s)))
            .collect();
        let records: Vec<Option<Result<RunRecord>>> = jobs
            .par_iter()
            .map(|&(m, s)| {
                contexts[s].as_ref().ok().map(|ctx| {
                    evaluate_method(ctx, &manifest.methods[m], manifest.delta, opts)
                        .with_context(|| format!("method `{}` seed {}", manifest.methods[m].label(), ctx.seed))
                })
            })
            .collect();
        (contexts, records)
    });

    let mut failures = Vec::new();
    for c in &contexts {
        if let Err(e) = c {
            failures.push(format!("{e:#}"));
        }
    }
    let mut done = Vec::new();
    for r in records.into_iter().flatten() {
        match r {
            Ok(rec) => done.push(rec),
            Err(e) => failures.push(format!("{e:#}")),
        }
    }
    for rec in &done {
        eprintln!(
            "{} seed {}: {} cells in {:.3}s",
            rec.method,
            rec.seed,
            rec.matrix.len(),
            rec.wall_time.as_secs_f64()
        );
    }
    let ok_contexts: Vec<&SeedContext> = contexts.iter().filter_map(|c| c.as_ref().ok()).collect();
    write_outputs(&out, &done, &ok_contexts, opts)?;

    if failures.is_empty() {
        Ok((out, RunOutcome::Ok))
    } else {
        write_atomic(&failed_marker, (failures.join("\n") + "\n").as_bytes())?;
        Ok((out, RunOutcome::Failed(failures)))
    }
}

fn with_oracle(mut header: Vec<&'static str>, opts: RunOptions) -> Vec<&'static str> {
    if opts.oracle_future {
        header.push("oracle");
    }
    header
}

fn row(mut cells: Vec<String>, opts: RunOptions) -> Vec<String> {
    if opts.oracle_future {
        cells.push("true".into());
    }
    cells
}

fn write_outputs(out: &Path, records: &[RunRecord], contexts: &[&SeedContext], opts: RunOptions) -> Result<()> {
    let mut results = Vec::new();
    let mut summary = Vec::new();
    let mut alphas = Vec::new();
    for rec in records {
        let (m, s) = (rec.method.clone(), rec.seed.to_string());
        for (t, j, v) in rec.matrix.entries() {
            results.push(row(vec![m.clone(), s.clone(), t.to_string(), j.to_string(), float(v)], opts));
        }
        if !rec.matrix.is_empty() {
            let avg = avg_fwt(&rec.matrix)?;
            let worst = worst_fwt(&rec.matrix)?;
            summary.push(row(vec![m.clone(), s.clone(), float(avg), float(worst)], opts));
        }
        for (t, a) in &rec.alphas {
            alphas.push(row(vec![m.clone(), s.clone(), t.to_string(), float(*a)], opts));
        }
    }
    write_csv(&out.join("results.csv"), &with_oracle(vec!["method", "seed", "t", "j", "value"], opts), &results)?;
    write_csv(&out.join("summary.csv"), &with_oracle(vec!["method", "seed", "avg_fwt", "worst_fwt"], opts), &summary)?;
    write_csv(&out.join("alphas.csv"), &with_oracle(vec!["method", "seed", "t", "alpha_star"], opts), &alphas)?;

    let mut norms = Vec::new();
    let mut pca = Vec::new();
    for ctx in contexts {
        let s = ctx.seed.to_string();
        for (t, v) in norm_curve(&ctx.traj) {
            norms.push(vec![s.clone(), t.to_string(), float(v)]);
        }
        match pca_project(&ctx.traj) {
            Ok(p) => {
                for (t, [a, b]) in p.times.iter().zip(&p.points) {
                    pca.push(vec![s.clone(), t.to_string(), float(*a), float(*b)]);
                }
            }
            Err(e) => eprintln!("seed {}: no PCA projection ({e})", ctx.seed),
        }
    }
    write_csv(&out.join("norms.csv"), &["seed", "t", "l2_norm"], &norms)?;
    write_csv(&out.join("pca.csv"), &["seed", "t", "pc1", "pc2"], &pca)?;
    Ok(())
}
