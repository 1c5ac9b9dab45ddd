use crate::error::{Error, Result};
use crate::C64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub n: usize,
    pub amps: Vec<C64>,
}

impl StateVector {
    /// `|0...0>` on `n` qubits.
    pub fn zero(n: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        amps[0] = C64::new(1.0, 0.0);
        StateVector { n, amps }
    }

    pub fn from_amps(amps: Vec<C64>) -> Result<Self> {
        let d = amps.len();
        if d < 2 || !d.is_power_of_two() {
            return Err(Error::InvalidSize(format!("length {d} is not a power of two")));
        }
        let norm = norm(&amps);
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Normalization { norm });
        }
        Ok(StateVector {
            n: d.trailing_zeros() as usize,
            amps,
        })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// `<a|b>`.
#[inline]
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
