use tempgen::extrap::{
    fit_learned_coeff, fit_learned_offset, taylor_order2, taylor_step, ChangeObjective, CoeffParams,
    LearnedChangeConfig, TaylorConfig,
};
use tempgen::rng::Stream;
use tempgen::synthetic::{permute_hidden, run_continual, InitMode, Learner, MlpSpec, SyntheticTask, TrainConfig};
use tempgen::{Checkpoint, Tensor, Trajectory};

fn ckpt(t: i64, v: Vec<f64>) -> Checkpoint<f64> {
    Checkpoint::from_tensors(t, [("p", Tensor::vector(v))]).unwrap()
}

fn cubic(t: f64) -> Vec<f64> {
    vec![1.0 + 0.5 * t + 0.05 * t * t + 0.005 * t * t * t, -2.0 + 0.1 * t - 0.02 * t * t]
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn second_order_beats_first_order_on_a_smooth_cubic() {
    let h = 0.1;
    for k in 4..40 {
        let t = k as f64 * h;
        let cks = (0..3).map(|i| ckpt(i, cubic(t - (2 - i) as f64 * h))).collect();
        let traj = Trajectory::new(cks, 1).unwrap();
        // Checkpoints one unit apart in index, h apart in time; alpha = 1
        // forecasts one more index step, i.e. p(t + h).
        let cfg = TaylorConfig::new(1.0, 1).unwrap();
        let truth = cubic(t + h);
        let e1 = dist(&taylor_step(&traj, &cfg).unwrap().to_f64_vec(), &truth);
        let e2 = dist(&taylor_order2(&traj, &cfg).unwrap().to_f64_vec(), &truth);
        assert!(e2 < e1, "t = {t}: {e2} vs {e1}");
    }
}

#[test]
fn second_order_beats_first_order_on_the_noiseless_generator() {
    let mut task = SyntheticTask::with_default_coeffs(2, 1);
    task.noise_sigma = 0.0;
    let traj = run_continual(&task, &Learner::Ols, &TrainConfig::default()).unwrap();
    let cfg = TaylorConfig::new(0.1, 1).unwrap();
    for n in 3..=traj.len() {
        let hist = traj.prefix(n).unwrap();
        let truth = task.true_params_at(hist.last().timestamp() as f64 + 0.1);
        let e1 = dist(&taylor_step(&hist, &cfg).unwrap().to_f64_vec(), &truth);
        let e2 = dist(&taylor_order2(&hist, &cfg).unwrap().to_f64_vec(), &truth);
        assert!(e2 < e1, "n = {n}: {e2} vs {e1}");
    }
}

#[test]
fn offset_descent_never_increases_the_objective() {
    for seed in 0..5u64 {
        let mut s = Stream::new(seed);
        let cks = (0..6)
            .map(|t| ckpt(t, (0..4).map(|_| s.normal() * 3.0).collect()))
            .collect();
        let traj = Trajectory::new(cks, 1).unwrap();
        let cfg = LearnedChangeConfig {
            lambda: 0.3,
            horizon: 2,
            ..Default::default()
        };
        let fit = fit_learned_offset(&traj, &cfg).unwrap();
        assert!(fit.report.objective <= fit.report.initial_objective);
        let coeff = fit_learned_coeff(&traj, &cfg).unwrap();
        assert!(coeff.report.objective <= coeff.report.initial_objective);
    }
}

#[test]
fn objective_gradients_match_finite_differences() {
    let mut s = Stream::new(42);
    let targets: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| s.normal()).collect()).collect();
    let obj = ChangeObjective::new(targets, vec![0, 1, 2, 0], 0.2, 1e-8);
    let x: Vec<f64> = (0..5).map(|_| s.normal()).collect();
    let p = CoeffParams { alpha: 0.3, beta: -0.2 };
    let (g, da, db) = obj.gradient(&x, Some(p));
    let h = 1e-6;
    for i in 0..5 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (obj.value(&xp, Some(p)) - obj.value(&xm, Some(p))) / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0));
    }
    let fa = (obj.value(&x, Some(CoeffParams { alpha: p.alpha + h, ..p }))
        - obj.value(&x, Some(CoeffParams { alpha: p.alpha - h, ..p })))
        / (2.0 * h);
    let fb = (obj.value(&x, Some(CoeffParams { beta: p.beta + h, ..p }))
        - obj.value(&x, Some(CoeffParams { beta: p.beta - h, ..p })))
        / (2.0 * h);
    assert!((fa - da).abs() < 1e-6 * fa.abs().max(1.0));
    assert!((fb - db).abs() < 1e-6 * fb.abs().max(1.0));
}

#[test]
fn permuting_the_last_checkpoint_breaks_extrapolation() {
    let spec = MlpSpec {
        hidden: 6,
        init_scale: 1.0,
        seed: 3,
        ..Default::default()
    };
    let base = spec.init(2).unwrap();
    let mut s = Stream::new(9);
    let later = base.map_f64(|v| v + 0.1 * s.normal()).unwrap().with_timestamp(1);
    let traj = Trajectory::new(vec![base.clone(), later.clone()], 1).unwrap();
    let permuted_last = permute_hidden(&later, &spec, &[1, 0, 2, 3, 4, 5]).unwrap();
    let mixed = Trajectory::new(vec![base, permuted_last], 1).unwrap();
    let cfg = TaylorConfig::new(1.0, 1).unwrap();
    let a = taylor_step(&traj, &cfg).unwrap().to_f64_vec();
    let b = taylor_step(&mixed, &cfg).unwrap().to_f64_vec();
    assert!(dist(&a, &b) > 1e-3);
}

#[test]
fn warm_starting_keeps_consecutive_checkpoints_closer() {
    let spec = MlpSpec {
        hidden: 8,
        ..Default::default()
    };
    let mut wins = 0;
    for seed in 0..5 {
        let mut task = SyntheticTask::with_default_coeffs(2, seed);
        task.t_count = 10;
        task.n_train = 64;
        let mut spec = spec.clone();
        spec.seed = seed;
        let cfg = TrainConfig {
            iters: 300,
            batch: 32,
            seed,
            ..Default::default()
        };
        let mean_step = |init| {
            let traj = run_continual(&task, &Learner::Mlp(spec.clone()), &TrainConfig { init, ..cfg }).unwrap();
            let v: Vec<f64> = traj
                .checkpoints()
                .windows(2)
                .map(|w| dist(&w[1].to_f64_vec(), &w[0].to_f64_vec()))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        if mean_step(InitMode::FromPrevious) < mean_step(InitMode::FromBase) {
            wins += 1;
        }
    }
    assert_eq!(wins, 5);
}
