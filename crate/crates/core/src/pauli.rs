//! Pauli strings in symplectic form.
//!
//! A string is stored as `coeff * i^phase * P(x, z)` where `P(x, z)` is the
//! Hermitian tensor product with `I, X, Y, Z` on each qubit, i.e.
//! `P(x, z) = i^{|x & z|} X^x Z^z`. Bit `k` of both masks is qubit `k`, and
//! character `k` of a word like `"XYZI"` addresses the same qubit.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::C64;

pub const MAX_QUBITS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliString {
    pub n: usize,
    pub x_mask: u64,
    pub z_mask: u64,
    /// Power of `i` multiplying the Hermitian string, reduced mod 4.
    pub phase: u8,
    pub coeff: f64,
}

fn mask_for(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn parity(v: u64) -> bool {
    v.count_ones() & 1 == 1
}

/// `i^k` for `k` taken mod 4.
pub fn i_pow(k: u8) -> C64 {
    match k & 3 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString {
            n,
            x_mask: 0,
            z_mask: 0,
            phase: 0,
            coeff: 1.0,
        }
    }

    pub fn new(n: usize, x_mask: u64, z_mask: u64, coeff: f64) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::InvalidSize(format!("qubit count {n} outside 1..=64")));
        }
        let m = mask_for(n);
        if x_mask & !m != 0 || z_mask & !m != 0 {
            return Err(Error::InvalidSize(format!(
                "masks use bits beyond {n} qubits"
            )));
        }
        Ok(PauliString {
            n,
            x_mask,
            z_mask,
            phase: 0,
            coeff,
        })
    }

    /// Parses a word over `IXYZ`; character `k` acts on qubit `k`.
    pub fn from_word(word: &str, coeff: f64) -> Result<Self> {
        let n = word.chars().count();
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::InvalidSize(format!(
                "pauli word length {n} outside 1..=64"
            )));
        }
        let mut x = 0u64;
        let mut z = 0u64;
        for (k, c) in word.chars().enumerate() {
            let (bx, bz) = match c {
                'I' | 'i' => (0, 0),
                'X' | 'x' => (1, 0),
                'Y' | 'y' => (1, 1),
                'Z' | 'z' => (0, 1),
                _ => {
                    return Err(Error::parse(
                        1,
                        k + 1,
                        format!("unexpected character {c:?} in pauli word"),
                    ))
                }
            };
            x |= bx << k;
            z |= bz << k;
        }
        Ok(PauliString {
            n,
            x_mask: x,
            z_mask: z,
            phase: 0,
            coeff,
        })
    }

    /// Single-qubit operator `c` (one of `X`, `Y`, `Z`) on qubit `q`.
    pub fn single(n: usize, q: usize, c: char) -> Self {
        let (bx, bz) = match c {
            'X' => (1u64, 0u64),
            'Y' => (1, 1),
            'Z' => (0, 1),
            _ => (0, 0),
        };
        PauliString {
            n,
            x_mask: bx << q,
            z_mask: bz << q,
            phase: 0,
            coeff: 1.0,
        }
    }

    /// Uniformly random string with a non-identity factor on every qubit.
    pub fn random_full_support<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut x = 0u64;
        let mut z = 0u64;
        for q in 0..n {
            match rng.random_range(0..3u8) {
                0 => x |= 1 << q,
                1 => {
                    x |= 1 << q;
                    z |= 1 << q;
                }
                _ => z |= 1 << q,
            }
        }
        PauliString {
            n,
            x_mask: x,
            z_mask: z,
            phase: 0,
            coeff: 1.0,
        }
    }

    pub fn to_word(&self) -> String {
        (0..self.n)
            .map(|k| match ((self.x_mask >> k) & 1, (self.z_mask >> k) & 1) {
                (0, 0) => 'I',
                (1, 0) => 'X',
                (1, 1) => 'Y',
                _ => 'Z',
            })
            .collect()
    }

    pub fn weight(&self) -> u32 {
        (self.x_mask | self.z_mask).count_ones()
    }

    pub fn is_identity(&self) -> bool {
        self.x_mask == 0 && self.z_mask == 0
    }

    /// True when the full operator (including phase) is Hermitian.
    pub fn is_hermitian(&self) -> bool {
        self.phase & 1 == 0
    }

    /// Overall scalar `coeff * i^phase`.
    pub fn scalar(&self) -> C64 {
        i_pow(self.phase) * self.coeff
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        !parity((self.x_mask & other.z_mask) ^ (self.z_mask & other.x_mask))
    }

    /// Operator product `self * other`.
    pub fn mul(&self, other: &PauliString) -> Result<PauliString> {
        if self.n != other.n {
            return Err(Error::Shape {
                expected: self.n,
                got: other.n,
            });
        }
        let x = self.x_mask ^ other.x_mask;
        let z = self.z_mask ^ other.z_mask;
        let a1 = (self.x_mask & self.z_mask).count_ones() as i64;
        let a2 = (other.x_mask & other.z_mask).count_ones() as i64;
        let a3 = (x & z).count_ones() as i64;
        let swap = 2 * (self.z_mask & other.x_mask).count_ones() as i64;
        let e = (self.phase as i64 + other.phase as i64 + a1 + a2 + swap - a3).rem_euclid(4);
        Ok(PauliString {
            n: self.n,
            x_mask: x,
            z_mask: z,
            phase: e as u8,
            coeff: self.coeff * other.coeff,
        })
    }

    /// Amplitude factor `f(b)` with `P|b> = f(b) |b ^ x>`, excluding `coeff`
    /// and the overall phase.
    #[inline]
    pub fn basis_factor(&self, b: u64) -> C64 {
        let a = (self.x_mask & self.z_mask).count_ones() as u8;
        let k = a + if parity(self.z_mask & b) { 2 } else { 0 };
        i_pow(k)
    }

    /// `out += scale * self * psi` with the full scalar folded in.
    pub fn apply_add(&self, psi: &[C64], out: &mut [C64], scale: C64) {
        let s = scale * self.scalar();
        let x = self.x_mask as usize;
        let a = (self.x_mask & self.z_mask).count_ones() as u8;
        let base = s * i_pow(a);
        for (b, amp) in psi.iter().enumerate() {
            let f = if parity(self.z_mask & b as u64) { -base } else { base };
            out[b ^ x] += f * amp;
        }
    }

    /// In-place `exp(-i theta P / 2)` for a Hermitian unit string `P`
    /// (coefficient and phase are ignored).
    pub fn rotate(&self, psi: &mut [C64], theta: f64) {
        let (s, c) = (0.5 * theta).sin_cos();
        let ms = C64::new(0.0, -s);
        let x = self.x_mask as usize;
        let a = (self.x_mask & self.z_mask).count_ones() as u8;
        let ia = i_pow(a);
        if x == 0 {
            // diagonal generator: phase per basis state
            let plus = C64::new(c, 0.0) + ms * ia;
            let minus = C64::new(c, 0.0) - ms * ia;
            for (b, amp) in psi.iter_mut().enumerate() {
                *amp *= if parity(self.z_mask & b as u64) { minus } else { plus };
            }
            return;
        }
        let low = x & x.wrapping_neg();
        for b in 0..psi.len() {
            if b & low != 0 {
                continue;
            }
            let bx = b ^ x;
            let fb = if parity(self.z_mask & b as u64) { -ia } else { ia };
            let fbx = if parity(self.z_mask & bx as u64) { -ia } else { ia };
            let pb = psi[b];
            let pbx = psi[bx];
            psi[b] = pb * c + ms * fbx * pbx;
            psi[bx] = pbx * c + ms * fb * pb;
        }
    }

    /// In-place `-i/2 * P` applied to `psi` (derivative of the rotation
    /// generator), written into `out`.
    pub fn apply_generator(&self, psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        let x = self.x_mask as usize;
        let a = (self.x_mask & self.z_mask).count_ones() as u8;
        let base = C64::new(0.0, -0.5) * i_pow(a);
        for (b, amp) in psi.iter().enumerate() {
            let f = if parity(self.z_mask & b as u64) { -base } else { base };
            out[b ^ x] = f * amp;
        }
    }

    /// Dense `d x d` matrix of the full operator.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let d = 1usize << self.n;
        let mut m = DMatrix::zeros(d, d);
        let s = self.scalar();
        for b in 0..d {
            let f = self.basis_factor(b as u64);
            m[(b ^ self.x_mask as usize, b)] = s * f;
        }
        m
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.phase {
            0 => "",
            1 => "i*",
            2 => "-",
            _ => "-i*",
        };
        write!(f, "{}{} {}", sign, self.coeff, self.to_word())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &DMatrix<C64>, b: &DMatrix<C64>, tol: f64) -> bool {
        (a - b).iter().all(|v| v.norm() < tol)
    }

    #[test]
    fn single_qubit_products() {
        let x = PauliString::from_word("X", 1.0).unwrap();
        let y = PauliString::from_word("Y", 1.0).unwrap();
        let z = PauliString::from_word("Z", 1.0).unwrap();
        let xz = x.mul(&z).unwrap();
        assert_eq!(xz.to_word(), "Y");
        assert_eq!(xz.phase, 3);
        let zx = z.mul(&x).unwrap();
        assert_eq!(zx.phase, 1);
        let yy = y.mul(&y).unwrap();
        assert!(yy.is_identity());
        assert_eq!(yy.phase, 0);
    }

    #[test]
    fn dense_y_matrix() {
        let y = PauliString::from_word("Y", 1.0).unwrap().to_dense();
        assert!((y[(1, 0)] - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((y[(0, 1)] - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn word_round_trip_and_errors() {
        let p = PauliString::from_word("XYZI", 2.0).unwrap();
        assert_eq!(p.to_word(), "XYZI");
        assert_eq!(p.weight(), 3);
        assert!(PauliString::from_word("XQ", 1.0).is_err());
        assert!(PauliString::from_word("", 1.0).is_err());
    }

    #[test]
    fn rotation_matches_dense_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = PauliString::random_full_support(3, &mut rng);
            let theta: f64 = rng.random_range(0.0..6.3);
            let pm = p.to_dense();
            let id = DMatrix::<C64>::identity(8, 8);
            let u = id * C64::new((theta / 2.0).cos(), 0.0)
                - pm * C64::new(0.0, (theta / 2.0).sin());
            let psi: Vec<C64> = (0..8)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let mut got = psi.clone();
            p.rotate(&mut got, theta);
            let want = &u * nalgebra::DVector::from_vec(psi);
            for k in 0..8 {
                assert!((got[k] - want[k]).norm() < 1e-13);
            }
        }
        let rz = PauliString::single(2, 1, 'Z');
        let mut psi = vec![C64::new(0.5, 0.0); 4];
        rz.rotate(&mut psi, 0.7);
        let want = C64::from_polar(0.5, -0.35);
        assert!((psi[0] - want).norm() < 1e-14);
    }

    fn arb_pauli(n: usize) -> impl Strategy<Value = PauliString> {
        let m = (1u64 << n) - 1;
        (0..=m, 0..=m, 0u8..4).prop_map(move |(x, z, ph)| PauliString {
            n,
            x_mask: x,
            z_mask: z,
            phase: ph,
            coeff: 1.0,
        })
    }

    proptest! {
        #[test]
        fn product_is_associative(a in arb_pauli(4), b in arb_pauli(4), c in arb_pauli(4)) {
            let left = a.mul(&b).unwrap().mul(&c).unwrap();
            let right = a.mul(&b.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn product_matches_dense(a in arb_pauli(3), b in arb_pauli(3)) {
            let prod = a.mul(&b).unwrap().to_dense();
            let dense = a.to_dense() * b.to_dense();
            prop_assert!(close(&prod, &dense, 1e-12));
        }

        #[test]
        fn square_is_scaled_identity(x in 0u64..16, z in 0u64..16, c in -3.0f64..3.0) {
            let p = PauliString::new(4, x, z, c).unwrap();
            let sq = p.mul(&p).unwrap();
            prop_assert!(sq.is_identity());
            prop_assert_eq!(sq.phase, 0);
            prop_assert!((sq.coeff - c * c).abs() < 1e-12);
        }

        #[test]
        fn commutation_matches_dense(a in arb_pauli(3), b in arb_pauli(3)) {
            let ab = a.to_dense() * b.to_dense();
            let ba = b.to_dense() * a.to_dense();
            prop_assert_eq!(a.commutes_with(&b), close(&ab, &ba, 1e-12));
        }
    }
}
