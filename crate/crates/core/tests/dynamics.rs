use qnnlv_core::circuit::build_rpa;
use qnnlv_core::io::{read_trajectory, write_trajectory};
use qnnlv_core::observable::build_xxz;
use qnnlv_core::rng_from_seed;
use qnnlv_core::stats::theta_rng;
use qnnlv_core::theory::{fit_lv, lv_trajectory, LvParams};
use qnnlv_core::training::{
    classify_regime, train, window_mean, LossSpec, Regime, StepRecord, TrainConfig, Trajectory, TrajectoryMeta,
};
use rand::Rng;

fn run(o0_offset: f64, steps: usize) -> Trajectory {
    let obs = build_xxz(4, 2.0).unwrap();
    let (o_min, _) = obs.extremal_eigenvalues().unwrap();
    let c = build_rpa(4, 64, 21).unwrap();
    let cfg = TrainConfig {
        eta: 5e-3,
        steps,
        record_stride: 5,
        mu_stride: 5,
        grad_tol: None,
    };
    train(&c, &obs, LossSpec::quadratic(o_min + o0_offset), &cfg, &mut theta_rng(21), 21).unwrap()
}

#[test]
fn zeta_signatures_and_conserved_c() {
    let fk = run(3.0, 1500);
    assert_eq!(classify_regime(&fk).unwrap(), Regime::FrozenKernel);
    let fe = run(-3.0, 500);
    assert_eq!(classify_regime(&fe).unwrap(), Regime::FrozenError);
    let zeta_end = |t: &Trajectory| t.steps.iter().rev().find_map(|s| s.zeta).unwrap();
    assert!(zeta_end(&fk) < 0.1, "{}", zeta_end(&fk));
    assert!(zeta_end(&fe) > 5.0, "{}", zeta_end(&fe));
    for t in [&fk, &fe] {
        let cs: Vec<f64> = t.late_window().iter().filter_map(|s| s.c).collect();
        let m = cs.iter().sum::<f64>() / cs.len() as f64;
        let sd = (cs.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (cs.len() - 1) as f64).sqrt();
        assert!(sd / m.abs() < 0.05, "sd/|mean| = {}", sd / m.abs());
    }
}

#[test]
fn critical_target_classified_by_zeta_band() {
    let crit = run(0.0, 4000);
    let z = window_mean(crit.late_window(), |s| s.zeta).unwrap();
    assert!((0.35..=0.65).contains(&z), "{z}");
    assert_eq!(classify_regime(&crit).unwrap(), Regime::Critical);
}

fn meta(eta: f64) -> TrajectoryMeta {
    TrajectoryMeta {
        seed: 0,
        eta,
        ansatz: "synthetic".into(),
        observable: "synthetic".into(),
        n: 2,
        n_params: 1,
        loss: LossSpec::quadratic(0.0),
        record_stride: 10,
        mu_stride: 10,
        steps_requested: 3000,
        o_min: None,
        theta_init: "none".into(),
        stopped_early_at: None,
        warnings: Vec::new(),
    }
}

fn noisy_lv(p: &LvParams, noise: f64, seed: u64) -> Trajectory {
    let mut rng = rng_from_seed(seed);
    let steps = (0..=3000)
        .step_by(10)
        .map(|t| {
            let (eps, k) = lv_trajectory(p, t as f64).unwrap();
            let eps = eps * (1.0 + noise * rng.random_range(-1.0..1.0));
            let k = k * (1.0 + noise * rng.random_range(-1.0..1.0));
            let mu = p.lambda * k;
            StepRecord {
                t,
                epsilon: eps,
                k,
                mu: Some(mu),
                lambda: Some(p.lambda),
                zeta: Some(eps * mu / (k * k)),
                c: Some(k - 2.0 * p.lambda * eps),
                loss: 0.5 * eps * eps,
                mu_fresh: true,
            }
        })
        .collect();
    Trajectory {
        steps,
        theta_final: Vec::new(),
        meta: meta(p.eta),
    }
}

#[test]
fn lv_fit_recovers_parameters_from_noisy_records() {
    for p in [
        LvParams { eta: 1e-3, lambda: 0.8, c: 3.0, b: 4.0 },
        LvParams { eta: 1e-3, lambda: 0.8, c: -3.0, b: 0.5 },
        LvParams { eta: 1e-3, lambda: 0.8, c: 0.0, b: 0.5 },
    ] {
        let traj = noisy_lv(&p, 0.01, 5);
        let fit = fit_lv(&traj, (0, traj.steps.len())).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(fit.params.lambda, p.lambda) < 1e-12);
        if p.c == 0.0 {
            assert_eq!(fit.params.c, 0.0);
        } else {
            assert!(rel(fit.params.c, p.c) < 0.05, "C {} vs {}", fit.params.c, p.c);
        }
        assert!(rel(fit.params.b, p.b) < 0.05, "B {} vs {}", fit.params.b, p.b);
        let (e, _) = fit.eval(1500.0).unwrap();
        let (e_true, _) = lv_trajectory(&p, 1500.0).unwrap();
        assert!(rel(e, e_true) < 0.05);
    }
}

#[test]
fn trained_trajectory_round_trips_through_files() {
    let t = run(1.0, 100);
    let dir = tempfile::tempdir().unwrap();
    write_trajectory(dir.path(), "traj_0", &t).unwrap();
    let (steps, meta) = read_trajectory(&dir.path().join("traj_0.csv")).unwrap();
    assert_eq!(steps, t.steps);
    assert_eq!(meta.unwrap(), t.meta);
}
