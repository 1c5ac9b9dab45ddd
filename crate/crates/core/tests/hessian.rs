use qnnlv_core::circuit::build_rpa;
use qnnlv_core::fit::log_log_fit;
use qnnlv_core::observable::build_xxz;
use qnnlv_core::spectral::{gap_sweep, hessian, hessian_gap, SYMMETRY_TOL};
use qnnlv_core::stats::theta_rng;
use qnnlv_core::training::{train_from, LossSpec, TrainConfig};

fn cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        eta: 1e-3,
        steps,
        record_stride: 100,
        mu_stride: 100,
        grad_tol: Some(1e-9),
    }
}

#[test]
fn gap_grows_linearly_away_from_the_transition() {
    let obs = build_xxz(2, 2.0).unwrap();
    let (o_min, _) = obs.extremal_eigenvalues().unwrap();
    let l = 64;
    let c = build_rpa(2, l, 5).unwrap();
    let th = c.random_theta(&mut theta_rng(7));
    let offsets = [0.2, 0.4, 0.6, 0.8, 1.0];
    let targets: Vec<f64> = offsets.iter().map(|x| o_min - x).collect();
    let pts = gap_sweep(&c, &obs, &targets, &cfg(20_000), &th).unwrap();
    let x: Vec<f64> = offsets.iter().map(|o| o * l as f64).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.gap).collect();
    let nu = log_log_fit(&x, &y).unwrap().slope;
    assert!((0.8..=1.2).contains(&nu), "slope {nu}, gaps {y:?}");
}

#[test]
fn frozen_kernel_hessian_becomes_rank_one() {
    let obs = build_xxz(3, 2.0).unwrap();
    let (o_min, _) = obs.extremal_eigenvalues().unwrap();
    let c = build_rpa(3, 24, 3).unwrap();
    let loss = LossSpec::quadratic(o_min + 2.0);
    let mut theta = c.random_theta(&mut theta_rng(3));
    let mut ratios = Vec::new();
    let mut eps = Vec::new();
    for chunk in [300, 300, 300, 300] {
        let t = train_from(&c, &obs, loss, &TrainConfig { grad_tol: None, ..cfg(chunk) }, theta).unwrap();
        theta = t.theta_final;
        let h = hessian(&c, &theta, &obs, &loss).unwrap();
        assert!(h.asymmetry < SYMMETRY_TOL);
        let r = hessian_gap(&h.matrix).unwrap();
        ratios.push(r.eigenvalues[1].abs() / r.eigenvalues[0]);
        eps.push(h.epsilon.abs());
    }
    // last three checkpoints span the final decade of eps
    assert!(eps[1] / eps[3] > 10.0, "{eps:?}");
    assert!(ratios[1..].windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    assert!(ratios[3] < 1e-3, "{ratios:?}");
}
