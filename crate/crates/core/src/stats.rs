//! Ensembles of trajectories, autocorrelators, scaling checks and frame
//! potentials.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::AnsatzSpec;
use crate::error::{Error, Result};
use crate::fit::{log_linear_fit, log_log_fit, mean, sample_sd, LineFit};
use crate::haar::UnitarySample;
use crate::observable::Observable;
use crate::training::{classify_regime, late_slice, train, LossSpec, Regime, StepRecord, TrainConfig, Trajectory};
use crate::{rng_from_seed, C64};

/// Fraction of each trajectory whose mean stands in for the limit `F(inf)`.
pub const TAIL_FRACTION: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub n: usize,
    pub ansatz: AnsatzSpec,
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub master_seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

/// Seed of sample `i`.
pub fn sample_seed(master: u64, i: usize) -> u64 {
    master ^ i as u64
}

/// Stream for the initial angles of a sample, independent of the stream
/// that draws the circuit.
pub fn theta_rng(seed: u64) -> ChaCha8Rng {
    let mut r = rng_from_seed(seed);
    r.set_stream(1);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Late,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub quantity: String,
    pub stage: Stage,
    pub mean: f64,
    pub sd: f64,
    pub n_samples: usize,
    /// Step range `[start, end]` the per-sample values are averaged over.
    pub window: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    /// `(index, trajectory)` for every sample that completed, index order.
    pub trajectories: Vec<(usize, Trajectory)>,
    pub failed: Vec<FailedSeed>,
    /// Partial trajectories of diverged samples.
    pub partial: Vec<(usize, Trajectory)>,
    pub summaries: Vec<EnsembleSummary>,
}

fn run_one(cfg: &EnsembleConfig, obs: &Observable, seed: u64) -> Result<Trajectory> {
    let circuit = cfg.ansatz.build(cfg.n, seed)?;
    train(&circuit, obs, cfg.loss, &cfg.train, &mut theta_rng(seed), seed)
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// `M` independent samples with seeds `master ^ i`.
pub fn run_ensemble(cfg: &EnsembleConfig, obs: &Observable, m: usize) -> Result<EnsembleResult> {
    if m < 2 {
        return Err(Error::InvalidSize(format!("ensemble needs M >= 2, got {m}")));
    }
    let seeds: Vec<u64> = (0..m).map(|i| sample_seed(cfg.master_seed, i)).collect();
    run_ensemble_with_seeds(cfg, obs, &seeds)
}

/// Ensemble over explicit per-sample seeds. Results are in seed order
/// whatever the schedule.
pub fn run_ensemble_with_seeds(cfg: &EnsembleConfig, obs: &Observable, seeds: &[u64]) -> Result<EnsembleResult> {
    let outcomes: Vec<Result<Trajectory>> =
        in_pool(cfg.jobs, || seeds.par_iter().map(|&s| run_one(cfg, obs, s)).collect())?;
    let mut trajectories = Vec::new();
    let mut failed = Vec::new();
    let mut partial = Vec::new();
    for (i, (out, &seed)) in outcomes.into_iter().zip(seeds).enumerate() {
        match out {
            Ok(t) => trajectories.push((i, t)),
            Err(Error::Divergence { partial: p, .. }) => {
                failed.push(FailedSeed {
                    index: i,
                    seed,
                    error: "divergence".into(),
                });
                partial.push((i, *p));
            }
            Err(Error::Resource { what, value, limit }) => {
                return Err(Error::Resource { what, value, limit });
            }
            Err(e) => failed.push(FailedSeed {
                index: i,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let trajs: Vec<&Trajectory> = trajectories.iter().map(|(_, t)| t).collect();
    let summaries = if trajs.len() >= 2 { summarize(&trajs)? } else { Vec::new() };
    Ok(EnsembleResult {
        trajectories,
        failed,
        partial,
        summaries,
    })
}

/// Per-sample window means of the raw series used by the summaries.
#[derive(Clone, Copy, Debug)]
struct SampleMeans {
    eps: f64,
    k: f64,
    mu: f64,
    lambda: f64,
    zeta: f64,
    epsmu: f64,
    c: f64,
}

fn window_means(w: &[StepRecord]) -> Option<SampleMeans> {
    let avg = |f: &dyn Fn(&StepRecord) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = w.iter().filter_map(f).filter(|x| x.is_finite()).collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    Some(SampleMeans {
        eps: avg(&|s| Some(s.epsilon))?,
        k: avg(&|s| Some(s.k))?,
        mu: avg(&|s| s.mu)?,
        lambda: avg(&|s| s.lambda).unwrap_or(f64::NAN),
        zeta: avg(&|s| s.zeta).unwrap_or(f64::NAN),
        epsmu: avg(&|s| s.mu.map(|m| m * s.epsilon))?,
        c: avg(&|s| s.c).unwrap_or(f64::NAN),
    })
}

/// Jackknife standard deviation of a ratio-type statistic, scaled to a
/// per-sample spread.
fn jackknife_sd(xs: &[SampleMeans], stat: impl Fn(&[SampleMeans]) -> f64) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let reps: Vec<f64> = (0..n)
        .map(|i| {
            let sub: Vec<SampleMeans> = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            stat(&sub)
        })
        .collect();
    let m = mean(&reps);
    let var = (n - 1) as f64 / n as f64 * reps.iter().map(|r| (r - m).powi(2)).sum::<f64>();
    (var * n as f64).sqrt()
}

fn stage_summaries(xs: &[SampleMeans], stage: Stage, window: (usize, usize)) -> Vec<EnsembleSummary> {
    let n = xs.len();
    let mut out = Vec::new();
    let mut plain = |name: &str, f: &dyn Fn(&SampleMeans) -> f64| {
        let v: Vec<f64> = xs.iter().map(f).filter(|x| x.is_finite()).collect();
        if !v.is_empty() {
            out.push(EnsembleSummary {
                quantity: name.into(),
                stage,
                mean: mean(&v),
                sd: sample_sd(&v),
                n_samples: v.len(),
                window,
            });
        }
    };
    plain("epsilon", &|s| s.eps);
    plain("K", &|s| s.k);
    plain("mu", &|s| s.mu);
    plain("C", &|s| s.c);
    plain("E[lambda]", &|s| s.lambda);
    plain("E[zeta]", &|s| s.zeta);
    let lam_bar = |v: &[SampleMeans]| mean(&v.iter().map(|s| s.mu).collect::<Vec<_>>()) / mean(&v.iter().map(|s| s.k).collect::<Vec<_>>());
    let zeta_bar = |v: &[SampleMeans]| {
        mean(&v.iter().map(|s| s.epsmu).collect::<Vec<_>>()) / mean(&v.iter().map(|s| s.k).collect::<Vec<_>>()).powi(2)
    };
    for (name, stat) in [
        ("lambda_bar", &lam_bar as &dyn Fn(&[SampleMeans]) -> f64),
        ("zeta_bar", &zeta_bar),
    ] {
        let v = stat(xs);
        if v.is_finite() {
            out.push(EnsembleSummary {
                quantity: name.into(),
                stage,
                mean: v,
                sd: jackknife_sd(xs, stat),
                n_samples: n,
                window,
            });
        }
    }
    out
}

/// Initial-step and late-window summaries of `epsilon`, `K`, `mu`, `C`, both
/// orderings of `lambda` (`mean(mu)/mean(K)` and `mean(mu/K)`) and of `zeta`.
pub fn summarize(trajs: &[&Trajectory]) -> Result<Vec<EnsembleSummary>> {
    if trajs.len() < 2 {
        return Err(Error::InsufficientData("summaries need at least 2 trajectories".into()));
    }
    let mut out = Vec::new();
    let init: Vec<SampleMeans> = trajs.iter().filter_map(|t| window_means(&t.steps[..1.min(t.steps.len())])).collect();
    out.extend(stage_summaries(&init, Stage::Initial, (0, 0)));
    let late_w = late_slice(&trajs[0].steps, crate::training::LATE_FRACTION);
    let window = (late_w.first().map_or(0, |s| s.t), late_w.last().map_or(0, |s| s.t));
    let late: Vec<SampleMeans> = trajs.iter().filter_map(|t| window_means(t.late_window())).collect();
    out.extend(stage_summaries(&late, Stage::Late, window));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Epsilon,
    K,
    Mu,
    Lambda,
    Zeta,
    C,
}

impl Quantity {
    pub fn get(&self, s: &StepRecord) -> Option<f64> {
        match self {
            Quantity::Epsilon => Some(s.epsilon),
            Quantity::K => Some(s.k),
            Quantity::Mu => s.mu,
            Quantity::Lambda => s.lambda,
            Quantity::Zeta => s.zeta,
            Quantity::C => s.c,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "epsilon" | "eps" => Quantity::Epsilon,
            "K" | "k" => Quantity::K,
            "mu" => Quantity::Mu,
            "lambda" => Quantity::Lambda,
            "zeta" => Quantity::Zeta,
            "C" | "c" => Quantity::C,
            other => return Err(Error::InvalidParameter(format!("unknown quantity {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Exponential,
    PowerLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub quantity: Quantity,
    pub t0: usize,
    pub tau_grid: Vec<usize>,
    pub a_values: Vec<f64>,
    pub xi: Option<f64>,
    pub delta: Option<f64>,
    pub fit_kind: FitKind,
    pub fit: Option<LineFit>,
    pub regime: Regime,
    pub tail_fraction: f64,
}

fn value_at(steps: &[StepRecord], t: usize, q: Quantity) -> Result<f64> {
    let i = steps
        .binary_search_by_key(&t, |s| s.t)
        .map_err(|_| Error::Range(format!("no record at step {t}")))?;
    q.get(&steps[i])
        .ok_or_else(|| Error::Range(format!("quantity missing at step {t}")))
}

/// Majority regime of an ensemble.
pub fn ensemble_regime(trajs: &[&Trajectory]) -> Result<Regime> {
    let mut counts = [0usize; 3];
    for t in trajs {
        counts[classify_regime(t)? as usize] += 1;
    }
    let best = (0..3).max_by_key(|i| (counts[*i], usize::MAX - *i)).unwrap();
    Ok([Regime::FrozenKernel, Regime::Critical, Regime::FrozenError][best])
}

/// `A(tau) = E[(F(t0) - F_inf)(F(t0 + tau) - F_inf)]` with `F_inf` the mean of
/// the final 10% of each trajectory. Exponential fit (giving `xi`) unless the
/// ensemble classifies as critical, then a power law in `tau` (giving
/// `delta = -slope / 2`).
pub fn autocorrelator(trajs: &[&Trajectory], q: Quantity, t0: usize, tau_grid: &[usize]) -> Result<CorrelationReport> {
    if trajs.is_empty() {
        return Err(Error::InsufficientData("no trajectories".into()));
    }
    if tau_grid.is_empty() {
        return Err(Error::InsufficientData("empty tau grid".into()));
    }
    let regime = ensemble_regime(trajs)?;
    let mut a = vec![0.0; tau_grid.len()];
    for traj in trajs {
        let last_t = traj.last().map_or(0, |s| s.t);
        let max_tau = *tau_grid.iter().max().unwrap();
        if t0 + max_tau > last_t {
            return Err(Error::Range(format!(
                "t0 + max tau = {} beyond trajectory end {last_t}",
                t0 + max_tau
            )));
        }
        let tail: Vec<f64> = late_slice(&traj.steps, TAIL_FRACTION).iter().filter_map(|s| q.get(s)).collect();
        if tail.is_empty() {
            return Err(Error::InsufficientData("quantity absent in tail window".into()));
        }
        let f_inf = mean(&tail);
        let f0 = value_at(&traj.steps, t0, q)? - f_inf;
        for (ai, tau) in a.iter_mut().zip(tau_grid) {
            *ai += f0 * (value_at(&traj.steps, t0 + tau, q)? - f_inf);
        }
    }
    let m = trajs.len() as f64;
    a.iter_mut().for_each(|v| *v /= m);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite autocorrelator".into()));
    }
    let taus: Vec<f64> = tau_grid.iter().map(|t| *t as f64).collect();
    let (fit_kind, fit) = if regime == Regime::Critical {
        (FitKind::PowerLaw, log_log_fit(&taus, &a).ok())
    } else {
        (FitKind::Exponential, log_linear_fit(&taus, &a).ok())
    };
    let (xi, delta) = match (fit_kind, fit) {
        (FitKind::Exponential, Some(f)) if f.slope < 0.0 => (Some(-1.0 / f.slope), None),
        (FitKind::PowerLaw, Some(f)) => (None, Some(-f.slope / 2.0)),
        _ => (None, None),
    };
    Ok(CorrelationReport {
        quantity: q,
        t0,
        tau_grid: tau_grid.to_vec(),
        a_values: a,
        xi,
        delta,
        fit_kind,
        fit,
        regime,
        tail_fraction: TAIL_FRACTION,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingDeltas {
    pub epsilon: f64,
    pub k: f64,
    pub mu: f64,
    /// Taken as 0 when absent.
    pub lambda: Option<f64>,
}

/// Signed residuals of `D[eps] = 2 D[K] - D[mu]` and `D[lambda] = D[mu] - D[K]`.
pub fn scaling_relations_check(d: &ScalingDeltas) -> (f64, f64) {
    (
        d.epsilon - (2.0 * d.k - d.mu),
        d.lambda.unwrap_or(0.0) - (d.mu - d.k),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePotential {
    pub value: f64,
    pub se: f64,
    pub n_samples: usize,
    pub k: u32,
}

fn overlap(u: &nalgebra::DMatrix<C64>, v: &nalgebra::DMatrix<C64>) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum::<C64>().norm_sqr()
}

/// Mean of `|tr(U^dagger U')|^{2k}` over ordered pairs of distinct samples,
/// with the U-statistic standard error.
pub fn frame_potential_mc(samples: &[UnitarySample], k: u32) -> Result<FramePotential> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientData("frame potential needs at least 2 samples".into()));
    }
    if !(1..=4).contains(&k) {
        return Err(Error::InvalidParameter(format!("order k = {k} outside 1..=4")));
    }
    let d = samples[0].matrix.nrows();
    if samples.iter().any(|s| s.matrix.nrows() != d || s.matrix.ncols() != d) {
        return Err(Error::Shape {
            expected: d,
            got: samples.iter().map(|s| s.matrix.nrows()).find(|r| *r != d).unwrap_or(0),
        });
    }
    // per-row sums and sums of squares, reduced in index order
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for j in 0..n {
                if j != i {
                    let v = overlap(&samples[i].matrix, &samples[j].matrix).powi(k as i32);
                    s += v;
                    s2 += v * v;
                }
            }
            (s, s2)
        })
        .collect();
    let nf = n as f64;
    let pairs = nf * (nf - 1.0);
    let total: f64 = rows.iter().map(|r| r.0).sum();
    let value = total / pairs;
    let se = if n > 2 {
        let zeta2 = (rows.iter().map(|r| r.1).sum::<f64>() / pairs - value * value).max(0.0);
        let row_means: Vec<f64> = rows.iter().map(|r| r.0 / (nf - 1.0)).collect();
        let var_rows = sample_sd(&row_means).powi(2);
        let zeta1 = (var_rows - zeta2 / (nf - 1.0)).max(0.0);
        (4.0 * (nf - 2.0) / pairs * zeta1 + 2.0 * zeta2 / pairs).sqrt()
    } else {
        0.0
    };
    Ok(FramePotential {
        value,
        se,
        n_samples: n,
        k,
    })
}

fn binom(n: u64, k: u64) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn factorial(n: u64) -> u128 {
    (1..=n as u128).product()
}

/// Restricted-Haar frame potential `sum_a C(k,a)^2 a!` (valid for
/// `k <= d - 1`) and the lower bound `(k+1)!`.
pub fn frame_potential_rh_closed(k: u32) -> Result<(u128, u128)> {
    if k > 8 {
        return Err(Error::InvalidParameter(format!("order k = {k} above 8")));
    }
    let k = k as u64;
    let v = (0..=k).map(|a| binom(k, a).pow(2) * factorial(a)).sum();
    Ok((v, factorial(k + 1)))
}
