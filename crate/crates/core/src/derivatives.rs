//! Exact first and second derivatives of `<O>(theta)`.
//!
//! Gradients use a forward sweep followed by one backward sweep that carries
//! both the state and `U^dagger O psi`. The kernel derivative `mu = g^T H g`
//! is the second derivative of `<O>` along the gradient direction, obtained by
//! propagating `(psi, psi', psi'')` forward in a single sweep.

use nalgebra::DMatrix;

use crate::circuit::{Circuit, Gate};
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::state::{inner, ZERO};
use crate::C64;

/// Parameter-count cap for second-derivative work.
pub const PARAM_CAP: usize = 1024;

fn check_cap(l: usize) -> Result<()> {
    if l > PARAM_CAP {
        return Err(Error::Resource {
            what: "parameter count",
            value: l,
            limit: PARAM_CAP,
        });
    }
    Ok(())
}

fn check_dims(circuit: &Circuit, obs: &Observable) -> Result<()> {
    if circuit.n() != obs.n() {
        return Err(Error::Shape {
            expected: circuit.dim(),
            got: obs.dim(),
        });
    }
    Ok(())
}

/// `(<O>, d<O>/d theta)` in one forward and one backward sweep.
pub fn value_and_gradient(circuit: &Circuit, theta: &[f64], obs: &Observable) -> Result<(f64, Vec<f64>)> {
    circuit.check_theta(theta)?;
    check_dims(circuit, obs)?;
    let mut phi = circuit.prepare(theta)?;
    let d = phi.len();
    let mut lam = vec![ZERO; d];
    obs.apply(&phi, &mut lam);
    let value = inner(&phi, &lam);
    if value.im.abs() > 1e-6 {
        return Err(Error::Hermiticity {
            residue: value.im.abs(),
        });
    }
    let mut grad = vec![0.0; circuit.n_params()];
    let mut scratch = vec![ZERO; d];
    let mut pphi = vec![ZERO; d];
    for k in (0..circuit.gates().len()).rev() {
        if let Gate::Rotation { param, generator } = &circuit.gates()[k] {
            pphi.iter_mut().for_each(|v| *v = ZERO);
            generator.apply_add(&phi, &mut pphi, C64::new(1.0, 0.0));
            grad[*param] += inner(&lam, &pphi).im;
        }
        circuit.gate_adjoint_many(k, theta, &mut [&mut phi, &mut lam], &mut scratch);
    }
    Ok((value.re, grad))
}

/// Analytic gradient of `<O>`.
pub fn gradient(circuit: &Circuit, theta: &[f64], obs: &Observable) -> Result<Vec<f64>> {
    Ok(value_and_gradient(circuit, theta, obs)?.1)
}

/// Kernel `K = |g|^2`; identical for quadratic and linear losses.
pub fn qntk(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum()
}

/// `v^T H v` with `H` the Hessian of `<O>`.
pub fn directional_second(circuit: &Circuit, theta: &[f64], obs: &Observable, v: &[f64]) -> Result<f64> {
    circuit.check_theta(theta)?;
    check_dims(circuit, obs)?;
    if v.len() != theta.len() {
        return Err(Error::Shape {
            expected: theta.len(),
            got: v.len(),
        });
    }
    let d = circuit.dim();
    let mut psi = vec![ZERO; d];
    psi[0] = C64::new(1.0, 0.0);
    let mut d1 = vec![ZERO; d];
    let mut d2 = vec![ZERO; d];
    let mut scratch = vec![ZERO; d];
    let mut p1 = vec![ZERO; d];
    let mut p0 = vec![ZERO; d];
    for k in 0..circuit.gates().len() {
        circuit.gate_forward_many(k, theta, &mut [&mut psi, &mut d1, &mut d2], &mut scratch);
        if let Gate::Rotation { param, generator } = &circuit.gates()[k] {
            let c = v[*param];
            if c == 0.0 {
                continue;
            }
            // after V: d2 += -i c P d1 - c^2/4 psi ; d1 += -i c/2 P psi
            generator.apply_generator(&d1, &mut p1);
            generator.apply_generator(&psi, &mut p0);
            for i in 0..d {
                d2[i] += p1[i] * (2.0 * c) - psi[i] * (0.25 * c * c);
                d1[i] += p0[i] * c;
            }
        }
    }
    let mut od = vec![ZERO; d];
    obs.apply(&psi, &mut od);
    let a = inner(&d2, &od).re;
    obs.apply(&d1, &mut od);
    let b = inner(&d1, &od).re;
    Ok(2.0 * a + 2.0 * b)
}

/// `mu = g^T H g`.
pub fn dqntk_from_gradient(circuit: &Circuit, theta: &[f64], obs: &Observable, grad: &[f64]) -> Result<f64> {
    check_cap(circuit.n_params())?;
    directional_second(circuit, theta, obs, grad)
}

/// `mu` evaluated from scratch.
pub fn dqntk(circuit: &Circuit, theta: &[f64], obs: &Observable) -> Result<f64> {
    check_cap(circuit.n_params())?;
    let g = gradient(circuit, theta, obs)?;
    directional_second(circuit, theta, obs, &g)
}

/// Full Hessian of `<O>` together with the value and gradient.
///
/// Each rotation's derivative state is carried forward once; mixed partials
/// pick up `<dd psi | O psi>` on the way and `<d psi|O|d psi>` at the end.
pub fn expectation_hessian(
    circuit: &Circuit,
    theta: &[f64],
    obs: &Observable,
) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    circuit.check_theta(theta)?;
    check_dims(circuit, obs)?;
    check_cap(circuit.n_params())?;
    let gates = circuit.gates();
    let d = circuit.dim();
    let rot: Vec<(usize, usize)> = gates
        .iter()
        .enumerate()
        .filter_map(|(k, g)| match g {
            Gate::Rotation { param, .. } => Some((k, *param)),
            _ => None,
        })
        .collect();
    let nr = rot.len();
    let mut scratch = vec![ZERO; d];

    // forward: state right after each rotation
    let mut psi = vec![ZERO; d];
    psi[0] = C64::new(1.0, 0.0);
    let mut phis: Vec<Vec<C64>> = Vec::with_capacity(nr);
    for k in 0..gates.len() {
        circuit.gate_forward(k, theta, &mut psi, &mut scratch);
        if matches!(gates[k], Gate::Rotation { .. }) {
            phis.push(psi.clone());
        }
    }
    let mut opsi = vec![ZERO; d];
    obs.apply(&psi, &mut opsi);
    let value = inner(&psi, &opsi).re;

    // backward: U_after^dagger O psi at each rotation
    let mut lams: Vec<Vec<C64>> = vec![Vec::new(); nr];
    let mut lam = opsi.clone();
    let mut r = nr;
    for k in (0..gates.len()).rev() {
        if matches!(gates[k], Gate::Rotation { .. }) {
            r -= 1;
            lams[r] = lam.clone();
        }
        circuit.gate_adjoint(k, theta, &mut lam, &mut scratch);
    }

    let gen = |k: usize| match &gates[k] {
        Gate::Rotation { generator, .. } => generator,
        _ => unreachable!(),
    };

    let mut hr = DMatrix::<f64>::zeros(nr, nr);
    let mut chis: Vec<Vec<C64>> = Vec::with_capacity(nr);
    let mut gr = vec![0.0; nr];
    let mut tmp = vec![ZERO; d];
    for a in 0..nr {
        let (ka, _) = rot[a];
        let mut w = vec![ZERO; d];
        gen(ka).apply_generator(&phis[a], &mut w);
        gr[a] = 2.0 * inner(&lams[a], &w).re;
        let mut next = a + 1;
        for k in ka + 1..gates.len() {
            circuit.gate_forward(k, theta, &mut w, &mut scratch);
            if next < nr && rot[next].0 == k {
                gen(k).apply_generator(&w, &mut tmp);
                let t1 = 2.0 * inner(&tmp, &lams[next]).re;
                hr[(a, next)] += t1;
                hr[(next, a)] += t1;
                next += 1;
            }
        }
        chis.push(w);
    }
    let ochis: Vec<Vec<C64>> = chis
        .iter()
        .map(|c| {
            let mut o = vec![ZERO; d];
            obs.apply(c, &mut o);
            o
        })
        .collect();
    for a in 0..nr {
        hr[(a, a)] += -0.5 * value;
        for b in a..nr {
            let t2 = 2.0 * inner(&chis[a], &ochis[b]).re;
            hr[(a, b)] += t2;
            if a != b {
                hr[(b, a)] += t2;
            }
        }
    }

    let l = circuit.n_params();
    let mut grad = vec![0.0; l];
    let mut h = DMatrix::<f64>::zeros(l, l);
    for a in 0..nr {
        grad[rot[a].1] += gr[a];
        for b in 0..nr {
            h[(rot[a].1, rot[b].1)] += hr[(a, b)];
        }
    }
    Ok((value, grad, h))
}
