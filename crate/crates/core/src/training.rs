//! Gradient-descent training with per-step kernel diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::derivatives::{dqntk_from_gradient, qntk, value_and_gradient};
use crate::error::{Error, Result};
use crate::observable::Observable;

/// Kernel values at or below this are treated as zero for the ratios.
pub const K_FLOOR: f64 = 1e-14;
/// Fraction of recorded steps forming the late-time window.
pub const LATE_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Quadratic,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Target value; ignored by the linear loss.
    pub o0: f64,
}

impl LossSpec {
    pub fn quadratic(o0: f64) -> Self {
        LossSpec {
            kind: LossKind::Quadratic,
            o0,
        }
    }

    pub fn linear() -> Self {
        LossSpec {
            kind: LossKind::Linear,
            o0: 0.0,
        }
    }

    /// Rejects non-finite targets; returns warnings for suspicious ones.
    pub fn validate(&self, obs: &Observable) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.kind == LossKind::Quadratic {
            if !self.o0.is_finite() {
                return Err(Error::InvalidParameter("quadratic loss needs a finite O0".into()));
            }
            if let Ok((_, hi)) = obs.extremal_eigenvalues() {
                if self.o0 >= hi {
                    warnings.push(format!("O0 = {} is not below O_max = {hi}", self.o0));
                }
            }
        }
        Ok(warnings)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    pub record_stride: usize,
    pub mu_stride: usize,
    /// Stop once the loss gradient norm falls below `grad_tol * sqrt(K)`.
    pub grad_tol: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1e-3,
            steps: 1000,
            record_stride: 1,
            mu_stride: 10,
            grad_tol: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub epsilon: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub zeta: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub loss: f64,
    pub mu_fresh: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub eta: f64,
    pub ansatz: String,
    pub observable: String,
    pub n: usize,
    pub n_params: usize,
    pub loss: LossSpec,
    pub record_stride: usize,
    pub mu_stride: usize,
    pub steps_requested: usize,
    pub o_min: Option<f64>,
    pub theta_init: String,
    pub stopped_early_at: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub theta_final: Vec<f64>,
    pub meta: TrajectoryMeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FrozenKernel,
    Critical,
    FrozenError,
}

impl Trajectory {
    /// Final `LATE_FRACTION` of the recorded steps (at least one record).
    pub fn late_window(&self) -> &[StepRecord] {
        late_slice(&self.steps, LATE_FRACTION)
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.t as f64).collect()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }
}

pub fn late_slice(steps: &[StepRecord], frac: f64) -> &[StepRecord] {
    let len = steps.len();
    let w = ((len as f64 * frac).ceil() as usize).clamp(len.min(1), len);
    &steps[len - w..]
}

fn train_inner(
    circuit: &Circuit,
    obs: &Observable,
    loss: LossSpec,
    cfg: &TrainConfig,
    mut theta: Vec<f64>,
    seed: u64,
) -> Result<Trajectory> {
    if !(cfg.eta > 0.0) || !cfg.eta.is_finite() {
        return Err(Error::InvalidParameter(format!("learning rate {} must be > 0", cfg.eta)));
    }
    if cfg.record_stride == 0 || cfg.mu_stride == 0 {
        return Err(Error::InvalidParameter("strides must be >= 1".into()));
    }
    circuit.check_theta(&theta)?;
    let warnings = loss.validate(obs)?;
    let o_min = match loss.kind {
        LossKind::Linear => Some(obs.extremal_eigenvalues()?.0),
        LossKind::Quadratic => obs.extremal_eigenvalues().ok().map(|s| s.0),
    };
    let target = match loss.kind {
        LossKind::Quadratic => loss.o0,
        LossKind::Linear => o_min.unwrap_or(0.0),
    };
    let mut meta = TrajectoryMeta {
        seed,
        eta: cfg.eta,
        ansatz: format!("{:?}", circuit.ansatz()).to_lowercase(),
        observable: obs.label().to_string(),
        n: circuit.n(),
        n_params: circuit.n_params(),
        loss,
        record_stride: cfg.record_stride,
        mu_stride: cfg.mu_stride,
        steps_requested: cfg.steps,
        o_min,
        theta_init: "uniform[0,2pi)".into(),
        stopped_early_at: None,
        warnings,
    };
    let mut records = Vec::with_capacity(cfg.steps / cfg.record_stride + 2);
    let mut eps0 = 0.0;
    let mut held_mu = None;
    let mut held_lambda = None;
    for t in 0..=cfg.steps {
        let (value, grad) = value_and_gradient(circuit, &theta, obs)?;
        let eps = value - target;
        if t == 0 {
            eps0 = eps;
        }
        if !eps.is_finite() || eps.abs() > 10.0 * eps0.abs() + 1e-9 {
            meta.stopped_early_at = Some(t);
            let partial = Trajectory {
                steps: records,
                theta_final: theta,
                meta,
            };
            return Err(Error::Divergence {
                step: t,
                epsilon: eps,
                initial: eps0,
                partial: Box::new(partial),
            });
        }
        let k = qntk(&grad);
        let loss_grad_norm = match loss.kind {
            LossKind::Quadratic => eps.abs() * k.sqrt(),
            LossKind::Linear => k.sqrt(),
        };
        let converged = cfg
            .grad_tol
            .is_some_and(|tol| loss_grad_norm < tol * k.sqrt() || k == 0.0);
        let last = t == cfg.steps || converged;
        let fresh = t % cfg.mu_stride == 0 || last;
        if fresh {
            let mu = dqntk_from_gradient(circuit, &theta, obs, &grad)?;
            held_mu = Some(mu);
            held_lambda = (k > K_FLOOR).then(|| mu / k);
        }
        if t % cfg.record_stride == 0 || last {
            let lambda = if k > K_FLOOR { held_lambda } else { None };
            let mu = match (fresh, held_lambda) {
                (false, Some(l)) => Some(l * k),
                _ => held_mu,
            };
            let zeta = lambda.map(|l| eps * l / k);
            let c = lambda.map(|l| k - 2.0 * l * eps);
            let loss_value = match loss.kind {
                LossKind::Quadratic => 0.5 * eps * eps,
                LossKind::Linear => value,
            };
            records.push(StepRecord {
                t,
                epsilon: eps,
                k,
                mu,
                lambda,
                zeta,
                c,
                loss: loss_value,
                mu_fresh: fresh,
            });
        }
        if last {
            if converged && t < cfg.steps {
                meta.stopped_early_at = Some(t);
            }
            break;
        }
        let scale = match loss.kind {
            LossKind::Quadratic => cfg.eta * eps,
            LossKind::Linear => cfg.eta,
        };
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th -= scale * g;
        }
    }
    Ok(Trajectory {
        steps: records,
        theta_final: theta,
        meta,
    })
}

/// Trains from uniform `[0, 2 pi)` initial angles drawn from `rng`.
pub fn train<R: Rng + ?Sized>(
    circuit: &Circuit,
    obs: &Observable,
    loss: LossSpec,
    cfg: &TrainConfig,
    rng: &mut R,
    seed: u64,
) -> Result<Trajectory> {
    let theta = circuit.random_theta(rng);
    train_inner(circuit, obs, loss, cfg, theta, seed)
}

/// Trains from explicit initial angles.
pub fn train_from(
    circuit: &Circuit,
    obs: &Observable,
    loss: LossSpec,
    cfg: &TrainConfig,
    theta: Vec<f64>,
) -> Result<Trajectory> {
    train_inner(circuit, obs, loss, cfg, theta, circuit.seed())
}

fn present(xs: impl Iterator<Item = Option<f64>>) -> Vec<f64> {
    xs.flatten().filter(|v| v.is_finite()).collect()
}

/// Window-mean `zeta` inside this band marks a run as critical even when `C`
/// keeps a definite sign: at finite time `C / K = 1 - 2 zeta` only tends to 0.
pub const CRITICAL_ZETA_BAND: (f64, f64) = (0.35, 0.65);

/// Regime from the window-averaged `C` with a dead band of 5% of the
/// largest `|C|` in the window; a window-mean `zeta` inside
/// `CRITICAL_ZETA_BAND` also counts as critical.
pub fn classify_regime(traj: &Trajectory) -> Result<Regime> {
    if traj.steps.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} recorded steps; need at least 10",
            traj.steps.len()
        )));
    }
    let w = traj.late_window();
    let cs = present(w.iter().map(|s| s.c));
    if cs.len() < 2 {
        return Err(Error::InsufficientData(
            "late window has fewer than 2 recorded C values".into(),
        ));
    }
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    let tol = 0.05 * cs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let in_band = window_mean(w, |s| s.zeta)
        .is_some_and(|z| (CRITICAL_ZETA_BAND.0..=CRITICAL_ZETA_BAND.1).contains(&z));
    Ok(if in_band || mean.abs() <= tol {
        Regime::Critical
    } else if mean > 0.0 {
        Regime::FrozenKernel
    } else {
        Regime::FrozenError
    })
}

/// Window mean of an optional per-step quantity.
pub fn window_mean(steps: &[StepRecord], f: impl Fn(&StepRecord) -> Option<f64>) -> Option<f64> {
    let v = present(steps.iter().map(f));
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
