//! Loss Hessian, its spectrum and the spectral gap.
//!
//! The late-time effective Hamiltonian of the differential state is similar
//! to the loss Hessian, so the Hessian spectrum is used directly.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::derivatives::expectation_hessian;
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::training::{train_from, LossKind, LossSpec, TrainConfig};

/// Relative threshold for counting an eigenvalue in `rank_epsilon`.
pub const RANK_REL_TOL: f64 = 1e-3;
/// Allowed `max|M - M^T| / max|M|` before symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// `M = g g^T + eps H` for the quadratic loss, plus `eps` and `K = |g|^2`.
#[derive(Clone, Debug)]
pub struct LossHessian {
    pub matrix: DMatrix<f64>,
    pub epsilon: f64,
    pub k: f64,
    pub asymmetry: f64,
}

pub fn hessian(circuit: &Circuit, theta: &[f64], obs: &Observable, loss: &LossSpec) -> Result<LossHessian> {
    if loss.kind != LossKind::Quadratic {
        return Err(Error::InvalidParameter("the Hessian is defined for the quadratic loss".into()));
    }
    let (value, g, h) = expectation_hessian(circuit, theta, obs)?;
    let eps = value - loss.o0;
    let l = g.len();
    let gv = nalgebra::DVector::from_column_slice(&g);
    let m = &gv * gv.transpose() + h * eps;
    let scale = m.amax();
    let mut asym = 0.0f64;
    for i in 0..l {
        for j in 0..i {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    let asymmetry = if scale > 0.0 { asym / scale } else { 0.0 };
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::Numeric(format!("Hessian asymmetry {asymmetry:e} above tolerance")));
    }
    let matrix = (&m + m.transpose()) * 0.5;
    Ok(LossHessian {
        matrix,
        epsilon: eps,
        k: gv.norm_squared(),
        asymmetry,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub gap: f64,
    pub rank_epsilon: usize,
}

/// Spectrum of a symmetric matrix with the gap and thresholded rank.
pub fn hessian_gap(m: &DMatrix<f64>) -> Result<HessianReport> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Shape {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite Hessian entry".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), 1e-14, 0)
        .ok_or_else(|| Error::Numeric("eigensolver did not converge".into()))?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let gap = if ev.len() > 1 { ev[0] - ev[1] } else { ev[0] };
    let thr = RANK_REL_TOL * ev[0];
    let rank_epsilon = if ev[0] > 0.0 { ev.iter().filter(|v| **v > thr).count() } else { 0 };
    Ok(HessianReport {
        eigenvalues: ev,
        gap,
        rank_epsilon,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub o0: f64,
    pub gap: f64,
    pub rank_epsilon: usize,
    pub k: f64,
    pub epsilon: f64,
    pub top_eigenvalue: f64,
    pub steps_run: usize,
    /// Descending.
    pub eigenvalues: Vec<f64>,
}

/// Trains from `theta0` to each target (in parallel) and reports the late-time
/// spectrum. Training stops early when the loss gradient norm drops below
/// `1e-6 sqrt(K)` unless `cfg.grad_tol` overrides it.
pub fn gap_sweep(
    circuit: &Circuit,
    obs: &Observable,
    targets: &[f64],
    cfg: &TrainConfig,
    theta0: &[f64],
) -> Result<Vec<GapPoint>> {
    let cfg = TrainConfig {
        grad_tol: cfg.grad_tol.or(Some(1e-6)),
        ..*cfg
    };
    targets
        .par_iter()
        .map(|&o0| {
            let loss = LossSpec::quadratic(o0);
            let traj = train_from(circuit, obs, loss, &cfg, theta0.to_vec())?;
            let h = hessian(circuit, &traj.theta_final, obs, &loss)?;
            let rep = hessian_gap(&h.matrix)?;
            Ok(GapPoint {
                o0,
                gap: rep.gap,
                rank_epsilon: rep.rank_epsilon,
                k: h.k,
                epsilon: h.epsilon,
                top_eigenvalue: rep.eigenvalues[0],
                steps_run: traj.last().map_or(0, |s| s.t),
                eigenvalues: rep.eigenvalues,
            })
        })
        .collect()
}
