//! Haar and restricted-Haar unitary sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Haar,
    RestrictedHaar,
}

#[derive(Clone, Debug)]
pub struct UnitarySample {
    pub matrix: DMatrix<C64>,
    pub ensemble: Ensemble,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar unitary from the QR decomposition of a complex Ginibre matrix,
/// with the phases of `R`'s diagonal moved into `Q`.
pub fn haar_matrix<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::from_fn(d, d, |_, _| gaussian(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        let rjj = r[(j, j)];
        let n = rjj.norm();
        let ph = if n > 0.0 { rjj / n } else { C64::new(1.0, 0.0) };
        q.column_mut(j).apply(|v| *v *= ph);
    }
    q
}

pub fn sample_haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitarySample> {
    if d < 2 {
        return Err(Error::InvalidSize(format!("unitary dimension {d} < 2")));
    }
    Ok(UnitarySample {
        matrix: haar_matrix(d, rng),
        ensemble: Ensemble::Haar,
    })
}

/// Uniformly random pure state of dimension `d`.
pub fn haar_random_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<C64> {
    let mut v: Vec<C64> = (0..d).map(|_| gaussian(rng)).collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    v
}

/// Unitary whose first column is `a` (a normalized vector).
fn basis_completion(a: &[C64]) -> DMatrix<C64> {
    let d = a.len();
    let n0 = a[0].norm();
    let omega = if n0 > 0.0 { a[0] / n0 } else { C64::new(1.0, 0.0) };
    let mut v = DVector::from_iterator(d, a.iter().map(|x| -x));
    v[0] += omega;
    let vv: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    let mut b = DMatrix::<C64>::identity(d, d);
    if vv > 1e-300 {
        let scale = C64::new(2.0 / vv, 0.0);
        b -= (&v * v.adjoint()) * scale;
    }
    b.column_mut(0).apply(|v| *v *= omega);
    b
}

fn check_normalized(v: &[C64]) -> Result<()> {
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Normalization { norm });
    }
    Ok(())
}

/// `B_out diag(1, V) B_in^dagger` with `V` Haar on `d - 1` dimensions, so
/// that `basis_in` maps to `basis_out` exactly.
pub fn sample_restricted_haar<R: Rng + ?Sized>(
    d: usize,
    basis_in: &[C64],
    basis_out: &[C64],
    rng: &mut R,
) -> Result<UnitarySample> {
    if d < 3 {
        return Err(Error::InvalidSize(format!(
            "restricted Haar needs d >= 3, got {d}"
        )));
    }
    for v in [basis_in, basis_out] {
        if v.len() != d {
            return Err(Error::Shape {
                expected: d,
                got: v.len(),
            });
        }
        check_normalized(v)?;
    }
    let v = haar_matrix(d - 1, rng);
    let mut block = DMatrix::<C64>::zeros(d, d);
    block[(0, 0)] = C64::new(1.0, 0.0);
    block.view_mut((1, 1), (d - 1, d - 1)).copy_from(&v);
    let b_in = basis_completion(basis_in);
    let b_out = basis_completion(basis_out);
    Ok(UnitarySample {
        matrix: b_out * block * b_in.adjoint(),
        ensemble: Ensemble::RestrictedHaar,
    })
}

/// Largest elementwise `|U^dagger U - I|`.
pub fn unitarity_residue(u: &DMatrix<C64>) -> f64 {
    let p = u.adjoint() * u;
    let d = p.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((p[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn haar_is_unitary_and_deterministic() {
        let mut r1 = rng_from_seed(11);
        let mut r2 = rng_from_seed(11);
        let a = sample_haar_unitary(8, &mut r1).unwrap();
        let b = sample_haar_unitary(8, &mut r2).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert!(unitarity_residue(&a.matrix) < 1e-10);
        for c in a.matrix.column_iter() {
            let n: f64 = c.iter().map(|v| v.norm_sqr()).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-10);
        }
        assert!(sample_haar_unitary(1, &mut r1).is_err());
    }

    #[test]
    fn haar_first_moment() {
        let d = 4;
        let m = 10_000;
        let mut rng = rng_from_seed(5);
        let xs: Vec<f64> = (0..m)
            .map(|_| haar_matrix(d, &mut rng)[(0, 0)].norm_sqr())
            .collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - 1.0 / d as f64).abs() < 3.0 * se, "{mean} {se}");
    }

    #[test]
    fn restricted_haar_maps_basis() {
        let d = 8;
        let mut rng = rng_from_seed(2);
        let a = haar_random_state(d, &mut rng);
        let b = haar_random_state(d, &mut rng);
        let u = sample_restricted_haar(d, &a, &b, &mut rng).unwrap();
        assert!(unitarity_residue(&u.matrix) < 1e-10);
        let ua = &u.matrix * DVector::from_vec(a.clone());
        for k in 0..d {
            assert!((ua[k] - b[k]).norm() < 1e-10);
        }
        let amp: C64 = (0..d).map(|k| b[k].conj() * ua[k]).sum();
        assert!((amp - C64::new(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn restricted_haar_standard_basis_block() {
        let d = 4;
        let mut e0 = vec![C64::new(0.0, 0.0); d];
        e0[0] = C64::new(1.0, 0.0);
        let mut rng = rng_from_seed(8);
        let m = 10_000;
        let mut acc = Vec::with_capacity(m);
        for _ in 0..m {
            let u = sample_restricted_haar(d, &e0, &e0, &mut rng).unwrap().matrix;
            assert_eq!(u[(0, 0)], C64::new(1.0, 0.0));
            assert!(u[(0, 1)].norm() < 1e-15 && u[(1, 0)].norm() < 1e-15);
            acc.push(u[(1, 1)].norm_sqr());
        }
        let mean = acc.iter().sum::<f64>() / m as f64;
        let var = acc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - 1.0 / (d - 1) as f64).abs() < 3.0 * se, "{mean} {se}");
    }

    #[test]
    fn basis_completion_handles_zero_lead() {
        let mut a = vec![C64::new(0.0, 0.0); 4];
        a[2] = C64::new(0.0, 1.0);
        let b = basis_completion(&a);
        assert!(unitarity_residue(&b) < 1e-12);
        for k in 0..4 {
            assert!((b[(k, 0)] - a[k]).norm() < 1e-12);
        }
    }
}
