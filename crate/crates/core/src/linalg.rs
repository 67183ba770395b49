//! Small dense helpers for states in `R^N` and row-major `N×N` matrices.
//!
//! States are short (`N` is the ODE dimension), so everything works on plain
//! slices; nalgebra is only pulled in where a factorisation is needed.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Componentwise product `a ⊙ b`.
pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Sequential dot product. Summation order is fixed (index order) so that
/// stacked and per-component evaluations agree bitwise.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// `out = M x` for a row-major square matrix `M`.
#[inline]
pub fn mat_vec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&m[j * n..(j + 1) * n], x);
    }
}

pub fn frobenius_norm(m: &[f64]) -> f64 {
    norm(m)
}

/// Operator 2-norm (largest singular value) of a row-major `n×n` matrix.
pub fn spectral_norm(m: &[f64], n: usize) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    if n == 1 {
        return m[0].abs();
    }
    let mat = DMatrix::from_row_slice(n, n, m);
    mat.singular_values().max()
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hadamard_examples() {
        assert_eq!(
            hadamard(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(),
            vec![4.0, 10.0, 18.0]
        );
        let a = [0.3, -1.7, 2.5];
        assert_eq!(hadamard(&a, &[1.0; 3]).unwrap(), a.to_vec());
        assert_eq!(hadamard(&[0.0; 3], &a).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hadamard_rejects_mismatch() {
        assert_eq!(
            hadamard(&[1.0, 2.0], &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn spectral_norm_of_rotation_and_diagonal() {
        let r = [0.0, -1.0, 1.0, 0.0];
        assert!((spectral_norm(&r, 2) - 1.0).abs() < 1e-12);
        let d = [3.0, 0.0, 0.0, -0.5];
        assert!((spectral_norm(&d, 2) - 3.0).abs() < 1e-12);
        assert!(spectral_norm(&d, 2) <= frobenius_norm(&d));
    }

    mod props {
        use super::super::hadamard;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hadamard_commutes_bitwise(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..8)) {
                let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
                let ab = hadamard(&a, &b).unwrap();
                let ba = hadamard(&b, &a).unwrap();
                prop_assert!(ab.iter().zip(&ba).all(|(x, y)| x.to_bits() == y.to_bits()));
            }

            #[test]
            fn hadamard_associates(v in prop::collection::vec((-1e2f64..1e2, -1e2f64..1e2, -1e2f64..1e2), 1..8)) {
                let a: Vec<f64> = v.iter().map(|t| t.0).collect();
                let b: Vec<f64> = v.iter().map(|t| t.1).collect();
                let c: Vec<f64> = v.iter().map(|t| t.2).collect();
                let left = hadamard(&hadamard(&a, &b).unwrap(), &c).unwrap();
                let right = hadamard(&a, &hadamard(&b, &c).unwrap()).unwrap();
                for (l, r) in left.iter().zip(&right) {
                    prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0));
                }
            }
        }
    }
}
