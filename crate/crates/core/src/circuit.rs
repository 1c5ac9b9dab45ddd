//! Parameterized circuits on dense statevectors.

use std::borrow::Cow;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haar::haar_matrix;
use crate::pauli::PauliString;
use crate::state::{StateVector, ZERO};
use crate::{rng_from_seed, C64};

/// Fixed unitaries are kept in memory up to this dimension and regenerated
/// from their seeds above it.
pub const CACHE_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ansatz {
    Rpa,
    Hea,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    /// Fixed unitary, indexed into the circuit's store.
    Fixed(usize),
    /// `exp(-i theta_param P / 2)` with a Hermitian unit Pauli `P`.
    Rotation { param: usize, generator: PauliString },
    Cnot { control: usize, target: usize },
}

#[derive(Clone, Debug)]
enum FixedStore {
    Cached(Vec<DMatrix<C64>>),
    Streamed(Vec<u64>),
}

#[derive(Clone, Debug)]
pub struct Circuit {
    ansatz: Ansatz,
    n: usize,
    n_params: usize,
    gates: Vec<Gate>,
    fixed: FixedStore,
    seed: u64,
}

/// Random Pauli ansatz: `L` slots of a fixed Haar unitary followed by a
/// rotation about a full-support random Pauli string.
pub fn build_rpa(n: usize, l: usize, seed: u64) -> Result<Circuit> {
    if l == 0 {
        return Err(Error::InvalidSize("RPA needs L >= 1".into()));
    }
    if !(1..=16).contains(&n) {
        return Err(Error::InvalidSize(format!("RPA qubit count {n} outside 1..=16")));
    }
    let d = 1usize << n;
    let mut rng = rng_from_seed(seed);
    let mut gates = Vec::with_capacity(2 * l);
    let mut seeds = Vec::with_capacity(l);
    for p in 0..l {
        seeds.push(rng.random::<u64>());
        let generator = PauliString::random_full_support(n, &mut rng);
        gates.push(Gate::Fixed(p));
        gates.push(Gate::Rotation { param: p, generator });
    }
    let fixed = if d <= CACHE_DIM {
        FixedStore::Cached(
            seeds
                .iter()
                .map(|s| haar_matrix(d, &mut rng_from_seed(*s)))
                .collect(),
        )
    } else {
        FixedStore::Streamed(seeds)
    };
    Ok(Circuit {
        ansatz: Ansatz::Rpa,
        n,
        n_params: l,
        gates,
        fixed,
        seed,
    })
}

/// Hardware-efficient ansatz: `layers` repetitions of RY and RZ on every
/// qubit followed by a CNOT brickwall alternating even and odd bonds.
pub fn build_hea(n: usize, layers: usize) -> Result<Circuit> {
    if layers == 0 {
        return Err(Error::InvalidSize("HEA needs D >= 1".into()));
    }
    if !(1..=24).contains(&n) {
        return Err(Error::InvalidSize(format!("HEA qubit count {n} outside 1..=24")));
    }
    let mut gates = Vec::new();
    for layer in 0..layers {
        let base = layer * 2 * n;
        for q in 0..n {
            gates.push(Gate::Rotation {
                param: base + q,
                generator: PauliString::single(n, q, 'Y'),
            });
        }
        for q in 0..n {
            gates.push(Gate::Rotation {
                param: base + n + q,
                generator: PauliString::single(n, q, 'Z'),
            });
        }
        let mut q = layer % 2;
        while q + 1 < n {
            gates.push(Gate::Cnot {
                control: q,
                target: q + 1,
            });
            q += 2;
        }
    }
    Ok(Circuit {
        ansatz: Ansatz::Hea,
        n,
        n_params: 2 * n * layers,
        gates,
        fixed: FixedStore::Cached(Vec::new()),
        seed: 0,
    })
}

#[inline]
fn matvec(w: &DMatrix<C64>, psi: &[C64], out: &mut [C64]) {
    let d = psi.len();
    let data = w.as_slice();
    out.iter_mut().for_each(|v| *v = ZERO);
    for (j, pj) in psi.iter().enumerate() {
        let col = &data[j * d..(j + 1) * d];
        for (o, wij) in out.iter_mut().zip(col) {
            *o += wij * pj;
        }
    }
}

#[inline]
fn matvec_adjoint(w: &DMatrix<C64>, v: &[C64], out: &mut [C64]) {
    let d = v.len();
    let data = w.as_slice();
    for (j, o) in out.iter_mut().enumerate() {
        let col = &data[j * d..(j + 1) * d];
        *o = col.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    }
}

#[inline]
fn cnot(psi: &mut [C64], control: usize, target: usize) {
    let cb = 1usize << control;
    let tb = 1usize << target;
    for b in 0..psi.len() {
        if b & cb != 0 && b & tb == 0 {
            psi.swap(b, b | tb);
        }
    }
}

impl Circuit {
    pub fn ansatz(&self) -> Ansatz {
        self.ansatz
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn fixed_unitary(&self, idx: usize) -> Cow<'_, DMatrix<C64>> {
        match &self.fixed {
            FixedStore::Cached(ws) => Cow::Borrowed(&ws[idx]),
            FixedStore::Streamed(seeds) => {
                Cow::Owned(haar_matrix(self.dim(), &mut rng_from_seed(seeds[idx])))
            }
        }
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::Shape {
                expected: self.n_params,
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Applies gate `k`; `scratch` must have the state's length.
    pub(crate) fn gate_forward(&self, k: usize, theta: &[f64], psi: &mut [C64], scratch: &mut [C64]) {
        match &self.gates[k] {
            Gate::Fixed(i) => {
                matvec(&self.fixed_unitary(*i), psi, scratch);
                psi.copy_from_slice(scratch);
            }
            Gate::Rotation { param, generator } => generator.rotate(psi, theta[*param]),
            Gate::Cnot { control, target } => cnot(psi, *control, *target),
        }
    }

    /// Applies the adjoint of gate `k`.
    pub(crate) fn gate_adjoint(&self, k: usize, theta: &[f64], psi: &mut [C64], scratch: &mut [C64]) {
        match &self.gates[k] {
            Gate::Fixed(i) => {
                matvec_adjoint(&self.fixed_unitary(*i), psi, scratch);
                psi.copy_from_slice(scratch);
            }
            Gate::Rotation { param, generator } => generator.rotate(psi, -theta[*param]),
            Gate::Cnot { control, target } => cnot(psi, *control, *target),
        }
    }

    /// Applies the same gate to several buffers, regenerating a streamed
    /// fixed unitary only once.
    pub(crate) fn gate_forward_many(
        &self,
        k: usize,
        theta: &[f64],
        bufs: &mut [&mut Vec<C64>],
        scratch: &mut [C64],
    ) {
        if let Gate::Fixed(i) = &self.gates[k] {
            let w = self.fixed_unitary(*i);
            for b in bufs.iter_mut() {
                matvec(&w, b, scratch);
                b.copy_from_slice(scratch);
            }
        } else {
            for b in bufs.iter_mut() {
                self.gate_forward(k, theta, b, scratch);
            }
        }
    }

    pub(crate) fn gate_adjoint_many(
        &self,
        k: usize,
        theta: &[f64],
        bufs: &mut [&mut Vec<C64>],
        scratch: &mut [C64],
    ) {
        if let Gate::Fixed(i) = &self.gates[k] {
            let w = self.fixed_unitary(*i);
            for b in bufs.iter_mut() {
                matvec_adjoint(&w, b, scratch);
                b.copy_from_slice(scratch);
            }
        } else {
            for b in bufs.iter_mut() {
                self.gate_adjoint(k, theta, b, scratch);
            }
        }
    }

    /// `U(theta) |input>`.
    pub fn apply(&self, theta: &[f64], input: &StateVector) -> Result<StateVector> {
        self.check_theta(theta)?;
        if input.n != self.n {
            return Err(Error::Shape {
                expected: self.dim(),
                got: input.dim(),
            });
        }
        let mut psi = input.amps.clone();
        let mut scratch = vec![ZERO; psi.len()];
        for k in 0..self.gates.len() {
            self.gate_forward(k, theta, &mut psi, &mut scratch);
        }
        Ok(StateVector { n: self.n, amps: psi })
    }

    /// `U(theta) |0...0>` as a raw amplitude vector.
    pub fn prepare(&self, theta: &[f64]) -> Result<Vec<C64>> {
        Ok(self.apply(theta, &StateVector::zero(self.n))?.amps)
    }

    /// Uniform `[0, 2 pi)` initial angles.
    pub fn random_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.n_params)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect()
    }
}

/// Parsed `rpa(L)` or `hea(D)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnsatzSpec {
    Rpa { l: usize },
    Hea { layers: usize },
}

impl AnsatzSpec {
    /// Builds the circuit; `seed` only affects RPA.
    pub fn build(&self, n: usize, seed: u64) -> Result<Circuit> {
        match *self {
            AnsatzSpec::Rpa { l } => build_rpa(n, l, seed),
            AnsatzSpec::Hea { layers } => build_hea(n, layers),
        }
    }

    pub fn n_params(&self, n: usize) -> usize {
        match *self {
            AnsatzSpec::Rpa { l } => l,
            AnsatzSpec::Hea { layers } => 2 * n * layers,
        }
    }
}

impl std::fmt::Display for AnsatzSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnsatzSpec::Rpa { l } => write!(f, "rpa({l})"),
            AnsatzSpec::Hea { layers } => write!(f, "hea({layers})"),
        }
    }
}

/// Parses `rpa(L)` or `hea(D)`; errors carry 1-based columns.
pub fn parse_ansatz_spec(src: &str) -> Result<AnsatzSpec> {
    let lead = src.len() - src.trim_start().len();
    let s = src.trim();
    let col0 = src[..lead].chars().count() + 1;
    let Some(open) = s.find('(') else {
        return Err(Error::parse(1, col0 + s.chars().count(), "expected '('"));
    };
    let name = s[..open].trim();
    if !s.ends_with(')') {
        return Err(Error::parse(1, col0 + s.chars().count(), "expected ')' at end of spec"));
    }
    let arg_col = col0 + s[..open].chars().count() + 1;
    let arg = s[open + 1..s.len() - 1].trim();
    let v: usize = arg
        .parse()
        .map_err(|_| Error::parse(1, arg_col, format!("expected positive integer, got {arg:?}")))?;
    if v == 0 {
        return Err(Error::parse(1, arg_col, "count must be >= 1"));
    }
    match name {
        "rpa" => Ok(AnsatzSpec::Rpa { l: v }),
        "hea" => Ok(AnsatzSpec::Hea { layers: v }),
        _ => Err(Error::parse(1, col0, format!("unknown ansatz {name:?}; expected rpa or hea"))),
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::norm;

    /// Dense product of every gate, the reference the statevector path must match.
    fn dense_chain(c: &Circuit, theta: &[f64]) -> DMatrix<C64> {
        let d = c.dim();
        let mut u = DMatrix::<C64>::identity(d, d);
        for g in c.gates() {
            let m = match g {
                Gate::Fixed(i) => c.fixed_unitary(*i).into_owned(),
                Gate::Rotation { param, generator } => {
                    let t = theta[*param];
                    DMatrix::<C64>::identity(d, d) * C64::new((t / 2.0).cos(), 0.0)
                        - generator.to_dense() * C64::new(0.0, (t / 2.0).sin())
                }
                Gate::Cnot { control, target } => {
                    let mut m = DMatrix::<C64>::zeros(d, d);
                    for b in 0..d {
                        let to = if b >> control & 1 == 1 { b ^ (1 << target) } else { b };
                        m[(to, b)] = C64::new(1.0, 0.0);
                    }
                    m
                }
            };
            u = m * u;
        }
        u
    }

    #[test]
    fn statevector_matches_dense_chain() {
        let mut rng = rng_from_seed(1);
        for (c, l) in [
            (build_rpa(3, 10, 4).unwrap(), 10),
            (build_rpa(2, 12, 5).unwrap(), 12),
            (build_hea(3, 2).unwrap(), 12),
        ] {
            assert_eq!(c.n_params(), l);
            let theta = c.random_theta(&mut rng);
            let psi = c.prepare(&theta).unwrap();
            let u = dense_chain(&c, &theta);
            for (k, a) in psi.iter().enumerate() {
                assert!((a - u[(k, 0)]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn hea_parameter_counts() {
        assert_eq!(build_hea(2, 4).unwrap().n_params(), 16);
        assert_eq!(build_hea(8, 48).unwrap().n_params(), 768);
    }

    #[test]
    fn zero_angle_hea_is_cnot_network() {
        let c = build_hea(3, 2).unwrap();
        let theta = vec![0.0; c.n_params()];
        let mut x = StateVector::zero(3);
        x.amps[0] = ZERO;
        x.amps[0b011] = C64::new(1.0, 0.0);
        let out = c.apply(&theta, &x).unwrap();
        // layer 0: CNOT(0,1) flips qubit 1 -> 0b001; layer 1: CNOT(1,2) idle
        assert!((out.amps[0b001] - C64::new(1.0, 0.0)).norm() < 1e-12);
        let z = c.apply(&theta, &StateVector::zero(3)).unwrap();
        assert!((z.amps[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn norm_preserved_over_long_circuit() {
        let c = build_rpa(3, 384, 9).unwrap();
        assert_eq!(c.gates().len(), 768);
        let theta = c.random_theta(&mut rng_from_seed(2));
        let psi = c.prepare(&theta).unwrap();
        assert!((norm(&psi) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn reseeding_reproduces_draws() {
        let a = build_rpa(2, 5, 77).unwrap();
        let b = build_rpa(2, 5, 77).unwrap();
        assert_eq!(a.gates(), b.gates());
        for i in 0..5 {
            assert_eq!(*a.fixed_unitary(i), *b.fixed_unitary(i));
        }
        for g in a.gates() {
            if let Gate::Rotation { generator, .. } = g {
                assert_eq!(generator.weight(), 2);
            }
        }
    }

    #[test]
    fn streamed_store_matches_cached_draws() {
        let c = build_rpa(7, 2, 3).unwrap();
        let w0 = c.fixed_unitary(0);
        let w0_again = c.fixed_unitary(0);
        assert_eq!(*w0, *w0_again);
        assert!(crate::haar::unitarity_residue(&w0) < 1e-10);
        let theta = vec![0.3, 1.1];
        let psi = c.prepare(&theta).unwrap();
        assert!((norm(&psi) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn theta_length_checked() {
        let c = build_rpa(2, 3, 0).unwrap();
        assert!(matches!(c.prepare(&[0.0; 2]), Err(Error::Shape { .. })));
    }
}
