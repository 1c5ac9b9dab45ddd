//! Command implementations. Each reads a validated [`RunConfig`] and writes
//! its artifacts through the run directory's writer.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use qnnlv_core::circuit::{parse_ansatz_spec, AnsatzSpec};
use qnnlv_core::fit::mean;
use qnnlv_core::haar::{haar_random_state, sample_haar_unitary, sample_restricted_haar};
use qnnlv_core::io;
use qnnlv_core::observable::{parse_observable_spec, Observable};
use qnnlv_core::spectral::gap_sweep;
use qnnlv_core::stats::{
    autocorrelator, ensemble_regime, frame_potential_mc, frame_potential_rh_closed, run_ensemble,
    scaling_relations_check, theta_rng, EnsembleConfig, Quantity, ScalingDeltas,
};
use qnnlv_core::theory::{
    critical_check, depolarize_error, estimate_p, fit_lv, frozen_error_check, frozen_kernel_check, haar_averages,
    linear_loss_check, lv_hamiltonian, lv_trajectory, predictions_map, restricted_haar_averages, LvParams,
};
use qnnlv_core::training::{
    classify_regime, train, window_mean, LossKind, LossSpec, Regime, StepRecord, TrainConfig, Trajectory,
};
use qnnlv_core::{rng_from_seed, Error};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::RunDir;
use crate::Command;

/// Largest qubit count the runner accepts.
pub const MAX_QUBITS: usize = 12;
/// Largest ensemble size.
pub const MAX_TRAJECTORIES: usize = 100_000;
/// Largest unitary dimension for frame potentials.
pub const MAX_FRAME_DIM: usize = 256;
/// Largest sample count for frame potentials (the estimator is quadratic).
pub const MAX_FRAME_SAMPLES: usize = 20_000;

fn resource(what: &'static str, value: usize, limit: usize) -> CliResult<()> {
    if value > limit {
        return Err(Error::Resource { what, value, limit }.into());
    }
    Ok(())
}

fn spec_error<'a>(key: &'static str, value: &'a str) -> impl FnOnce(Error) -> CliError + 'a {
    move |source| match source {
        Error::Parse { .. } => CliError::Spec {
            key,
            value: value.to_string(),
            source,
        },
        other => other.into(),
    }
}

/// Observable, target and training settings shared by the simulation commands.
struct Setup {
    obs: Observable,
    o_min: f64,
    n: usize,
    ansatz: Option<AnsatzSpec>,
    loss: LossSpec,
    train: TrainConfig,
}

impl Setup {
    fn from_config(cfg: &RunConfig) -> CliResult<Self> {
        let src = cfg.observable.as_deref().ok_or(CliError::Missing("observable"))?;
        let spec = parse_observable_spec(src).map_err(spec_error("observable", src))?;
        if let (Some(a), Some(b)) = (cfg.n, spec.qubits()) {
            if a != b {
                return Err(crate::config::ConfigError::Invalid(format!("n = {a} but the observable has {b} qubits")).into());
            }
        }
        if let Some(n) = cfg.n.or(spec.qubits()) {
            resource("qubits", n, MAX_QUBITS)?;
        }
        let obs = spec.build(cfg.n, Path::new("."))?;
        resource("qubits", obs.n(), MAX_QUBITS)?;
        let (o_min, _) = obs.extremal_eigenvalues()?;
        let ansatz = match cfg.ansatz.as_deref() {
            Some(a) => Some(parse_ansatz_spec(a).map_err(spec_error("ansatz", a))?),
            None => None,
        };
        let loss = if cfg.loss == "linear" {
            LossSpec::linear()
        } else {
            let o0 = cfg.o0.as_ref().map_or(Ok(o_min), |t| t.resolve(o_min))?;
            LossSpec::quadratic(o0)
        };
        Ok(Setup {
            n: obs.n(),
            obs,
            o_min,
            ansatz,
            loss,
            train: TrainConfig {
                eta: cfg.eta,
                steps: cfg.steps,
                record_stride: cfg.record_stride,
                mu_stride: cfg.mu_stride,
                grad_tol: cfg.grad_tol,
            },
        })
    }

    fn ansatz(&self) -> CliResult<AnsatzSpec> {
        self.ansatz.ok_or(CliError::Missing("ansatz"))
    }

    /// Target used by the ensemble closed forms; the linear loss measures
    /// from zero.
    fn o0(&self) -> f64 {
        match self.loss.kind {
            LossKind::Quadratic => self.loss.o0,
            LossKind::Linear => 0.0,
        }
    }

    /// Residual error `R = max(O_min - O0, 0)` of the quadratic loss.
    fn residual(&self) -> Option<f64> {
        (self.loss.kind == LossKind::Quadratic).then(|| (self.o_min - self.loss.o0).max(0.0))
    }

    fn theory_block(&self, l: usize) -> Value {
        let o0 = self.o0();
        let haar = match haar_averages(&self.obs, l, o0) {
            Ok(h) => json!(predictions_map(&h.predictions())),
            Err(e) => json!({ "error": e.to_string() }),
        };
        let mut v = json!({
            "observable": self.obs.label(),
            "n": self.n,
            "d": self.obs.dim(),
            "L": l,
            "O_min": self.o_min,
            "O0": o0,
            "loss": self.loss.kind,
            "R": self.residual(),
            "haar": haar,
        });
        if self.obs.is_projector() {
            v["restricted_haar"] = match restricted_haar_averages(l, self.obs.dim(), o0) {
                Ok(r) => json!(predictions_map(&r.predictions())),
                Err(e) => json!({ "error": e.to_string() }),
            };
        }
        v
    }
}

/// Late-window decay summary of one trajectory against the regime's
/// predicted rate or slope.
#[derive(Clone, Debug, Serialize)]
pub struct DecayAnalysis {
    pub regime: Option<Regime>,
    /// `rate`, `slope` or `common_rate`.
    pub measure: Option<&'static str>,
    pub predicted: Option<f64>,
    pub fitted: Option<f64>,
    /// Relative deviation for rates, absolute for the critical slope.
    pub deviation: Option<f64>,
    /// Frozen error: final `eps` and its relative distance to `R`.
    pub plateau: Option<(f64, f64)>,
    pub error: Option<String>,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn decay_analysis(traj: &Trajectory) -> DecayAnalysis {
    let mut out = DecayAnalysis {
        regime: None,
        measure: None,
        predicted: None,
        fitted: None,
        deviation: None,
        plateau: None,
        error: None,
    };
    let eta = traj.meta.eta;
    let res: qnnlv_core::Result<()> = (|| {
        if traj.meta.loss.kind == LossKind::Linear {
            let c = linear_loss_check(traj.late_window(), eta)?;
            out.measure = Some("common_rate");
            out.predicted = Some(c.common.predicted);
            out.fitted = Some(c.common.fitted);
            out.deviation = Some(rel(c.common.fitted, c.common.predicted));
            return Ok(());
        }
        let regime = classify_regime(traj)?;
        out.regime = Some(regime);
        let check = match regime {
            Regime::FrozenKernel => {
                let skip = traj.steps.len() / 10;
                frozen_kernel_check(&traj.steps[skip..], eta, 1e-10)?
            }
            Regime::Critical => {
                let t_end = traj.last().map_or(0, |s| s.t);
                let tail: Vec<StepRecord> = traj.steps.iter().filter(|s| s.t > 0 && s.t >= t_end / 10).cloned().collect();
                critical_check(&tail)?
            }
            Regime::FrozenError => {
                let o_min = traj
                    .meta
                    .o_min
                    .ok_or_else(|| Error::InvalidParameter("trajectory metadata lacks O_min".into()))?;
                let r = (o_min - traj.meta.loss.o0).max(0.0);
                if let Some(last) = traj.last() {
                    out.plateau = Some((last.epsilon, if r > 0.0 { rel(last.epsilon, r) } else { last.epsilon.abs() }));
                }
                frozen_error_check(traj.late_window(), eta, r, 1e-11)?
            }
        };
        out.predicted = Some(check.predicted);
        out.fitted = Some(check.fitted);
        if regime == Regime::Critical {
            out.measure = Some("slope");
            out.deviation = Some((check.fitted - check.predicted).abs());
        } else {
            out.measure = Some("rate");
            out.deviation = Some(rel(check.fitted, check.predicted));
        }
        Ok(())
    })();
    if let Err(e) = res {
        out.error = Some(e.to_string());
    }
    out
}

fn late_means(traj: &Trajectory) -> Value {
    let w = traj.late_window();
    json!({
        "window": [w.first().map(|s| s.t), w.last().map(|s| s.t)],
        "epsilon": window_mean(w, |s| Some(s.epsilon)),
        "K": window_mean(w, |s| Some(s.k)),
        "mu": window_mean(w, |s| s.mu),
        "lambda": window_mean(w, |s| s.lambda),
        "zeta": window_mean(w, |s| s.zeta),
        "C": window_mean(w, |s| s.c),
    })
}

fn write_traj_plots(out: &RunDir, traj: &Trajectory) -> CliResult<()> {
    let col = |f: fn(&StepRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        traj.steps.iter().filter_map(|s| f(s).map(|v| (s.t as f64, v))).collect()
    };
    out.series("plot_epsilon.csv", ("t", "epsilon"), col(|s| Some(s.epsilon)))?;
    out.series("plot_K.csv", ("t", "K"), col(|s| Some(s.k)))?;
    out.series("plot_lambda.csv", ("t", "lambda"), col(|s| s.lambda))?;
    out.series("plot_zeta.csv", ("t", "zeta"), col(|s| s.zeta))?;
    out.series("plot_C.csv", ("t", "C"), col(|s| s.c))?;
    Ok(())
}

fn train_cmd(cfg: &RunConfig, out: &RunDir) -> CliResult<String> {
    let s = Setup::from_config(cfg)?;
    let ansatz = s.ansatz()?;
    let seed = cfg.master_seed;
    let circuit = ansatz.build(s.n, seed)?;
    let mut theory = s.theory_block(circuit.n_params());
    let traj = match train(&circuit, &s.obs, s.loss, &s.train, &mut theta_rng(seed), seed) {
        Ok(t) => t,
        Err(Error::Divergence { step, epsilon, partial, .. }) => {
            out.trajectory(0, &partial)?;
            write_traj_plots(out, &partial)?;
            out.json("theory.json", &theory)?;
            out.json(
                "summary.json",
                &json!({
                    "command": "train",
                    "status": "diverged",
                    "seed": seed,
                    "diverged_at": step,
                    "epsilon": epsilon,
                    "n_records": partial.steps.len(),
                }),
            )?;
            return Err(CliError::Diverged {
                count: 1,
                dir: out.path().display().to_string(),
            });
        }
        Err(e) => return Err(e.into()),
    };
    out.trajectory(0, &traj)?;
    write_traj_plots(out, &traj)?;

    let start = traj.steps.len() / 10;
    let lv = match fit_lv(&traj, (start, traj.steps.len())) {
        Ok(fit) => {
            let model: Vec<(f64, (f64, f64))> = traj.steps[start..]
                .iter()
                .filter_map(|r| fit.eval(r.t as f64).ok().map(|v| (r.t as f64, v)))
                .collect();
            out.series("plot_epsilon_lv.csv", ("t", "epsilon"), model.iter().map(|(t, v)| (*t, v.0)))?;
            out.series("plot_K_lv.csv", ("t", "K"), model.iter().map(|(t, v)| (*t, v.1)))?;
            json!(fit)
        }
        Err(e) => json!({ "error": e.to_string() }),
    };
    theory["lv_fit"] = lv;
    out.json("theory.json", &theory)?;
    let decay = decay_analysis(&traj);
    out.json(
        "summary.json",
        &json!({
            "command": "train",
            "status": "ok",
            "seed": seed,
            "n_records": traj.steps.len(),
            "stopped_early_at": traj.meta.stopped_early_at,
            "warnings": traj.meta.warnings,
            "initial": traj.steps.first(),
            "final": traj.last(),
            "late_means": late_means(&traj),
            "decay": decay,
        }),
    )?;
    Ok(format!(
        "trained {} steps; regime {}",
        traj.last().map_or(0, |r| r.t),
        decay.regime.map_or("n/a".to_string(), |r| format!("{r:?}"))
    ))
}

fn ensemble_mean_series(trajs: &[&Trajectory], f: fn(&StepRecord) -> f64) -> Vec<(f64, f64)> {
    let len = trajs.iter().map(|t| t.steps.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let v: Vec<f64> = trajs.iter().map(|t| f(&t.steps[i])).collect();
            (trajs[0].steps[i].t as f64, mean(&v))
        })
        .collect()
}

fn ensemble_cmd(cfg: &RunConfig, out: &RunDir, jobs: usize) -> CliResult<String> {
    let s = Setup::from_config(cfg)?;
    let ansatz = s.ansatz()?;
    resource("trajectories", cfg.trajectories, MAX_TRAJECTORIES)?;
    let ecfg = EnsembleConfig {
        n: s.n,
        ansatz,
        loss: s.loss,
        train: s.train,
        master_seed: cfg.master_seed,
        jobs,
    };
    let res = run_ensemble(&ecfg, &s.obs, cfg.trajectories)?;
    for (i, t) in res.trajectories.iter().chain(&res.partial) {
        out.trajectory(*i, t)?;
    }
    let trajs: Vec<&Trajectory> = res.trajectories.iter().map(|(_, t)| t).collect();
    if !trajs.is_empty() {
        out.series("plot_mean_epsilon.csv", ("t", "epsilon"), ensemble_mean_series(&trajs, |s| s.epsilon))?;
        out.series("plot_mean_K.csv", ("t", "K"), ensemble_mean_series(&trajs, |s| s.k))?;
    }
    out.json("theory.json", &s.theory_block(ansatz.n_params(s.n)))?;
    let regime = ensemble_regime(&trajs).map_or_else(|e| json!({ "error": e.to_string() }), |r| json!(r));
    let diverged = res.failed.iter().filter(|f| f.error == "divergence").count();
    out.json(
        "summary.json",
        &json!({
            "command": "ensemble",
            "master_seed": cfg.master_seed,
            "requested": cfg.trajectories,
            "completed": trajs.len(),
            "failed": res.failed,
            "regime": regime,
            "summaries": res.summaries,
        }),
    )?;
    if diverged > 0 {
        return Err(CliError::Diverged {
            count: diverged,
            dir: out.path().display().to_string(),
        });
    }
    if !res.failed.is_empty() {
        return Err(CliError::SamplesFailed { count: res.failed.len() });
    }
    Ok(format!("{} trajectories completed", trajs.len()))
}

fn theory_cmd(cfg: &RunConfig, out: &RunDir) -> CliResult<String> {
    let s = Setup::from_config(cfg)?;
    let l = match (cfg.theory.l, s.ansatz) {
        (Some(l), _) => l,
        (None, Some(a)) => a.n_params(s.n),
        (None, None) => return Err(CliError::Missing("theory.L")),
    };
    let mut theory = s.theory_block(l);
    let sweep = cfg.theory.o0_sweep.clone().unwrap_or_else(|| vec![s.o0()]);
    let d = s.obs.dim();
    let mut rows = Vec::new();
    if s.obs.is_projector() {
        let (mut k, mut ka, mut lam, mut zeta) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &o0 in &sweep {
            let r = restricted_haar_averages(l, d, o0)?;
            k.push((o0, r.exact.k));
            ka.push((o0, r.asymptotic.k));
            lam.push((o0, r.exact.lambda));
            if r.exact.zeta.is_finite() {
                zeta.push((o0, r.exact.zeta));
            }
            rows.push(json!({ "O0": o0, "regime": r.regime, "F0": r.f0, "R": r.r, "exact": r.exact, "asymptotic": r.asymptotic }));
        }
        out.series("plot_K_inf_vs_O0.csv", ("O0", "K_inf"), k)?;
        out.series("plot_K_inf_asymptotic_vs_O0.csv", ("O0", "K_inf"), ka)?;
        out.series("plot_lambda_inf_vs_O0.csv", ("O0", "lambda_inf"), lam)?;
        out.series("plot_zeta_inf_vs_O0.csv", ("O0", "zeta_inf"), zeta)?;
    } else {
        let (mut z, mut em) = (Vec::new(), Vec::new());
        for &o0 in &sweep {
            let h = haar_averages(&s.obs, l, o0)?;
            z.push((o0, h.exact.zeta0));
            em.push((o0, h.exact.epsmu0));
            rows.push(json!({ "O0": o0, "exact": h.exact, "asymptotic": h.asymptotic }));
        }
        out.series("plot_zeta0_vs_O0.csv", ("O0", "zeta0"), z)?;
        out.series("plot_epsmu0_vs_O0.csv", ("O0", "epsmu0"), em)?;
    }
    theory["sweep"] = json!(rows);
    if let (Some(lambda), Some(c), Some(b)) = (cfg.theory.lambda, cfg.theory.c, cfg.theory.b) {
        let p = LvParams { eta: cfg.eta, lambda, c, b };
        p.validate()?;
        let pts: Vec<(f64, (f64, f64))> = (0..=cfg.steps)
            .step_by(cfg.record_stride)
            .map(|t| lv_trajectory(&p, t as f64).map(|v| (t as f64, v)))
            .collect::<qnnlv_core::Result<_>>()?;
        out.series("plot_lv_epsilon.csv", ("t", "epsilon"), pts.iter().map(|(t, v)| (*t, v.0)))?;
        out.series("plot_lv_K.csv", ("t", "K"), pts.iter().map(|(t, v)| (*t, v.1)))?;
        let (e0, k0) = pts[0].1;
        theory["lv"] = json!({
            "params": p,
            "hamiltonian": lv_hamiltonian(e0, k0, lambda, cfg.eta).map_err(|e| e.to_string()).map_or_else(|e| json!({"error": e}), |h| json!(h)),
        });
    }
    out.json("theory.json", &theory)?;
    out.json("summary.json", &json!({ "command": "theory", "L": l, "points": sweep.len() }))?;
    Ok(format!("evaluated closed forms at {} target(s)", sweep.len()))
}

fn hessian_cmd(cfg: &RunConfig, out: &RunDir) -> CliResult<String> {
    let s = Setup::from_config(cfg)?;
    let ansatz = s.ansatz()?;
    let targets: Vec<f64> = match (&cfg.hessian.targets, &cfg.hessian.offsets) {
        (Some(t), _) => t.clone(),
        (None, Some(o)) => o.iter().map(|x| s.o_min + x).collect(),
        (None, None) => (-3..=3).map(|k| s.o_min + 0.5 * k as f64).collect(),
    };
    if targets.is_empty() {
        return Err(crate::config::ConfigError::Invalid("hessian sweep needs at least one target".into()).into());
    }
    let seed = cfg.master_seed;
    let circuit = ansatz.build(s.n, seed)?;
    let theta0 = circuit.random_theta(&mut theta_rng(seed));
    let pts = gap_sweep(&circuit, &s.obs, &targets, &s.train, &theta0)?;
    io::write_gap_sweep(&out.path().join("gap_sweep.csv"), &pts)?;
    for (i, p) in pts.iter().enumerate() {
        out.spectrum(&format!("spectrum_{i}.csv"), &p.eigenvalues)?;
    }
    let argmin = pts
        .iter()
        .min_by(|a, b| a.gap.total_cmp(&b.gap))
        .map(|p| p.o0)
        .expect("non-empty");
    out.json(
        "summary.json",
        &json!({ "command": "hessian-sweep", "seed": seed, "O_min": s.o_min, "gap_min_at": argmin, "points": pts }),
    )?;
    Ok(format!("{} targets; smallest gap at O0 = {argmin}", pts.len()))
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn framepot_cmd(cfg: &RunConfig, out: &RunDir) -> CliResult<String> {
    let f = &cfg.framepot;
    resource("frame dimension", f.d, MAX_FRAME_DIM)?;
    resource("frame samples", f.samples, MAX_FRAME_SAMPLES)?;
    let mut rng = rng_from_seed(cfg.master_seed);
    let (samples, closed) = match f.ensemble.as_str() {
        "haar" => {
            let v = (0..f.samples)
                .map(|_| sample_haar_unitary(f.d, &mut rng))
                .collect::<qnnlv_core::Result<Vec<_>>>()?;
            (v, (f.d >= f.k as usize).then(|| factorial(f.k)))
        }
        "restricted_haar" => {
            let a = haar_random_state(f.d, &mut rng);
            let b = haar_random_state(f.d, &mut rng);
            let v = (0..f.samples)
                .map(|_| sample_restricted_haar(f.d, &a, &b, &mut rng))
                .collect::<qnnlv_core::Result<Vec<_>>>()?;
            let (value, _) = frame_potential_rh_closed(f.k)?;
            (v, (f.d > f.k as usize).then_some(value as f64))
        }
        other => {
            return Err(crate::config::ConfigError::Invalid(format!(
                "framepot.ensemble = {other:?}: expected haar or restricted_haar"
            ))
            .into())
        }
    };
    let fp = frame_potential_mc(&samples, f.k)?;
    let z = closed.map(|c| (fp.value - c) / fp.se);
    out.json(
        "summary.json",
        &json!({ "command": "framepot", "ensemble": f.ensemble, "d": f.d, "k": f.k, "estimate": fp, "closed_form": closed, "z": z }),
    )?;
    Ok(format!("frame potential {:.6} +- {:.6}", fp.value, fp.se))
}

fn trajectory_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        let idx = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("traj_"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(i) = idx {
            found.push((i, p));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::InsufficientData(format!("no traj_<i>.csv files in {}", dir.display())).into());
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Reads a trajectory; the JSON sidecar is required.
fn load_trajectory(path: &Path) -> CliResult<Trajectory> {
    let (steps, meta) = io::read_trajectory(path)?;
    let meta = meta.ok_or_else(|| Error::InvalidParameter(format!("{} has no JSON sidecar", path.display())))?;
    Ok(Trajectory {
        steps,
        theta_final: Vec::new(),
        meta,
    })
}

/// Log-spaced lags over the recorded range, on the record grid.
fn default_taus(steps: &[StepRecord], t0: usize) -> Vec<usize> {
    let (Some(first), Some(last)) = (steps.first(), steps.last()) else {
        return Vec::new();
    };
    let stride = steps.get(1).map_or(1, |s| s.t - first.t).max(1);
    let span = last.t.saturating_sub(t0);
    let lo = (span / 50).max(stride) as f64;
    let hi = (span / 2) as f64;
    if hi < lo {
        return Vec::new();
    }
    let mut out: Vec<usize> = (0..8)
        .map(|i| {
            let v = lo * (hi / lo).powf(i as f64 / 7.0);
            ((v / stride as f64).round() as usize).max(1) * stride
        })
        .collect();
    out.dedup();
    out
}

fn autocorr_cmd(cfg: &RunConfig, out: &RunDir) -> CliResult<String> {
    let a = &cfg.autocorr;
    let dir = a.input.as_deref().ok_or(CliError::Missing("autocorr.input"))?;
    let trajs = trajectory_files(dir)?
        .iter()
        .map(|p| load_trajectory(p))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let taus = match &a.taus {
        Some(t) => t.clone(),
        None => default_taus(&trajs[0].steps, a.t0),
    };
    let mut reports = Vec::new();
    let mut deltas = std::collections::BTreeMap::new();
    for name in &a.quantities {
        let q = Quantity::parse(name).map_err(|e| crate::config::ConfigError::Invalid(e.to_string()))?;
        let rep = autocorrelator(&refs, q, a.t0, &taus)?;
        io::write_correlation(&out.path().join(format!("corr_{name}.csv")), &rep)?;
        if let Some(d) = rep.delta {
            deltas.insert(q, d);
        }
        reports.push(rep);
    }
    let scaling = match (deltas.get(&Quantity::Epsilon), deltas.get(&Quantity::K), deltas.get(&Quantity::Mu)) {
        (Some(&e), Some(&k), Some(&m)) => {
            let (r1, r2) = scaling_relations_check(&ScalingDeltas {
                epsilon: e,
                k,
                mu: m,
                lambda: deltas.get(&Quantity::Lambda).copied(),
            });
            json!({ "residual_eps_K": r1, "residual_mu": r2 })
        }
        _ => Value::Null,
    };
    out.json(
        "summary.json",
        &json!({ "command": "autocorr", "trajectories": trajs.len(), "t0": a.t0, "taus": taus, "reports": reports, "scaling": scaling }),
    )?;
    Ok(format!("{} autocorrelator(s) over {} trajectories", reports.len(), trajs.len()))
}

/// `(t, value)` pairs from a trajectory CSV (`epsilon` column) or a
/// two-column `t,value` CSV.
fn read_series(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    if text.starts_with(&io::TRAJECTORY_HEADER[..3].join(",")) {
        return Ok(io::parse_trajectory_csv(&text)?.iter().map(|s| (s.t as f64, s.epsilon)).collect());
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let mut num = |c: usize| -> CliResult<f64> {
            let f = cols.next().unwrap_or("").trim();
            f.parse().map_err(|_| {
                CliError::Core(Error::Parse {
                    line: i + 1,
                    column: c,
                    msg: format!("{}: expected real, got {f:?}", path.display()),
                })
            })
        };
        let t = num(1)?;
        let v = num(2)?;
        out.push((t, v));
    }
    Ok(out)
}

fn fit_noise_cmd(cfg: &RunConfig, out: &RunDir) -> CliResult<String> {
    let f = &cfg.fit_noise;
    let ideal_path = f.ideal.as_deref().ok_or(CliError::Missing("fit_noise.ideal"))?;
    let obs_path = f.observed.as_deref().ok_or(CliError::Missing("fit_noise.observed"))?;
    let ideal = read_series(ideal_path)?;
    let observed = read_series(obs_path)?;
    let o0 = match f.o0 {
        Some(v) => v,
        None => io::read_trajectory(ideal_path)
            .ok()
            .and_then(|(_, m)| m)
            .map(|m| m.loss.o0)
            .ok_or(CliError::Missing("fit_noise.O0"))?,
    };
    let (mut t, mut xi, mut xo) = (Vec::new(), Vec::new(), Vec::new());
    for (ti, vi) in &ideal {
        if let Some((_, vo)) = observed.iter().find(|(to, _)| to == ti) {
            t.push(*ti);
            xi.push(*vi);
            xo.push(*vo);
        }
    }
    if t.is_empty() {
        return Err(Error::Alignment("ideal and observed series share no time points".into()).into());
    }
    let p = estimate_p(&xi, &xo, o0)?;
    let model = xi
        .iter()
        .map(|e| depolarize_error(*e, p, o0))
        .collect::<qnnlv_core::Result<Vec<_>>>()?;
    out.series("plot_noise_observed.csv", ("t", "epsilon"), t.iter().cloned().zip(xo.iter().cloned()))?;
    out.series("plot_noise_model.csv", ("t", "epsilon"), t.iter().cloned().zip(model))?;
    out.json("summary.json", &json!({ "command": "fit-noise", "p": p, "O0": o0, "points": t.len() }))?;
    Ok(format!("p = {p}"))
}

/// Simulated counterpart of a theory quantity tag: initial records for the
/// random-initialization averages, late windows for the late-time ones.
fn simulated(tag: &str, trajs: &[Trajectory]) -> Option<f64> {
    type Get = fn(&StepRecord) -> Option<f64>;
    let (late, get): (bool, Get) = match tag {
        "K0" => (false, |s| Some(s.k)),
        "mu0" => (false, |s| s.mu),
        "lambda0" => (false, |s| s.lambda),
        "zeta0" => (false, |s| s.zeta),
        "K_inf" => (true, |s| Some(s.k)),
        "mu_inf" => (true, |s| s.mu),
        "lambda_inf" => (true, |s| s.lambda),
        "zeta_inf" => (true, |s| s.zeta),
        _ => return None,
    };
    let vals: Vec<f64> = trajs
        .iter()
        .filter_map(|t| {
            if late {
                window_mean(t.late_window(), get)
            } else {
                t.steps.first().and_then(get)
            }
        })
        .collect();
    (!vals.is_empty()).then(|| mean(&vals))
}

fn compare_cmd(cfg: &RunConfig, out: &RunDir) -> CliResult<String> {
    let c = &cfg.compare;
    let mut paths = c.trajectories.clone();
    if let Some(dir) = &c.input {
        paths.extend(trajectory_files(dir)?);
    }
    if paths.is_empty() {
        return Err(CliError::Missing("compare.trajectories"));
    }
    let trajs = paths.iter().map(|p| load_trajectory(p)).collect::<CliResult<Vec<_>>>()?;
    for (p, t) in paths.iter().zip(&trajs) {
        if t.steps.is_empty() {
            return Err(Error::Alignment(format!("{}: empty window", p.display())).into());
        }
        let grid = |t: &Trajectory| t.steps.iter().map(|s| s.t).collect::<Vec<_>>();
        if grid(t) != grid(&trajs[0]) {
            return Err(Error::Alignment(format!(
                "{} is recorded on a different step grid than {}",
                p.display(),
                paths[0].display()
            ))
            .into());
        }
    }
    let mut total = 0;
    let mut failed = 0;
    let mut per_traj = Vec::new();
    for (p, t) in paths.iter().zip(&trajs) {
        let d = decay_analysis(t);
        let tol = if d.measure == Some("slope") { c.slope_tol } else { c.rel_tol };
        let mut pass = d.deviation.is_some_and(|x| x <= tol);
        if let Some((_, plateau)) = d.plateau {
            pass &= plateau <= c.rel_tol;
        }
        total += 1;
        failed += usize::from(!pass);
        per_traj.push(json!({ "path": p, "decay": d, "tolerance": tol, "pass": pass }));
    }
    let mut quantities = Vec::new();
    let mut unmatched = Vec::new();
    if let Some(tp) = &c.theory {
        let theory: Value = serde_json::from_str(&std::fs::read_to_string(tp)?).map_err(Error::from)?;
        for section in ["haar", "restricted_haar"] {
            let Some(map) = theory.get(section).and_then(|v| v.as_object()) else {
                continue;
            };
            for (tag, preds) in map {
                if c.quantities.as_ref().is_some_and(|q| !q.contains(tag)) {
                    continue;
                }
                let exact = preds
                    .as_array()
                    .and_then(|a| a.iter().find(|p| p["form"] == "exact"))
                    .and_then(|p| p["value"].as_f64());
                match (exact, simulated(tag, &trajs)) {
                    (Some(pred), Some(sim)) if pred.is_finite() && pred != 0.0 => {
                        let dev = rel(sim, pred);
                        let pass = dev <= c.rel_tol;
                        total += 1;
                        failed += usize::from(!pass);
                        quantities.push(json!({
                            "source": section, "quantity": tag, "predicted": pred, "simulated": sim,
                            "rel_deviation": dev, "pass": pass,
                        }));
                    }
                    _ => unmatched.push(format!("{section}.{tag}")),
                }
            }
        }
    }
    out.json(
        "compare.json",
        &json!({
            "rel_tol": c.rel_tol,
            "slope_tol": c.slope_tol,
            "trajectories": per_traj,
            "quantities": quantities,
            "unmatched": unmatched,
            "pass": failed == 0,
        }),
    )?;
    if failed > 0 {
        return Err(CliError::ComparisonFailed { failed, total });
    }
    Ok(format!("{total} comparison(s) within tolerance"))
}

pub fn dispatch(cmd: Command, cfg: &RunConfig, out: &RunDir, jobs: usize) -> CliResult<String> {
    match cmd {
        Command::Train => train_cmd(cfg, out),
        Command::Ensemble => ensemble_cmd(cfg, out, jobs),
        Command::Theory => theory_cmd(cfg, out),
        Command::HessianSweep => hessian_cmd(cfg, out),
        Command::Framepot => framepot_cmd(cfg, out),
        Command::Autocorr => autocorr_cmd(cfg, out),
        Command::FitNoise => fit_noise_cmd(cfg, out),
        Command::Compare => compare_cmd(cfg, out),
    }
}
