//! Dense symmetric eigendecomposition and singular values, both by Jacobi
//! rotations in a fixed cyclic order so results are reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Off-diagonal Frobenius norm, relative to the full norm, at which the
/// eigen-solver stops.
pub const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues non-increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector of `values[i]`, its largest-magnitude
    /// entry made positive.
    pub vectors: Tensor,
    pub sweeps: usize,
}

fn rotation(theta: f64) -> (f64, f64) {
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    (c, t * c)
}

/// Cyclic Jacobi. Rejects matrices whose asymmetry exceeds `1e-10` of the
/// largest entry.
pub fn sym_eigen(a: &Tensor) -> Result<SymEigen> {
    let (n, m) = a.matrix_dims("sym_eigen")?;
    if n != m {
        return Err(Error::shape("sym_eigen", a.shape(), &[n, n]));
    }
    if n == 0 {
        return Err(Error::Empty { op: "sym_eigen" });
    }
    let scale = a.data().iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut residue = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            residue = residue.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if residue > 1e-10 * scale.max(1.0) || !a.is_finite() {
        return Err(Error::NotSymmetric { residue });
    }

    // symmetrise exactly, then rotate
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = 0.5 * (a.get(i, j) + a.get(j, i));
        }
    }
    let mut v = Tensor::identity(n).into_data();
    let total: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| w[i * n + j] * w[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * total {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (c, s) = rotation((w[q * n + q] - w[p * n + p]) / (2.0 * apq));
                for k in 0..n {
                    let (kp, kq) = (w[k * n + p], w[k * n + q]);
                    w[k * n + p] = c * kp - s * kq;
                    w[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (w[p * n + k], w[q * n + k]);
                    w[p * n + k] = c * pk - s * qk;
                    w[q * n + k] = s * pk + c * qk;
                }
                for k in 0..n {
                    let (kp, kq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * kp - s * kq;
                    v[k * n + q] = s * kp + c * kq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[j * n + j].total_cmp(&w[i * n + i]));
    let values = order.iter().map(|&i| w[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        let mut big = 0;
        for k in 0..n {
            if v[k * n + src].abs() > v[big * n + src].abs() {
                big = k;
            }
        }
        let sign = if v[big * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[k * n + col] = sign * v[k * n + src];
        }
    }
    Ok(SymEigen {
        values,
        vectors: Tensor::new([n, n], vectors)?,
        sweeps,
    })
}

/// Singular values, non-increasing, by one-sided Jacobi on the columns of the
/// narrower orientation. Small singular values keep their absolute accuracy,
/// unlike the square roots of `AᵀA` eigenvalues.
pub fn singular_values(a: &Tensor) -> Result<Vec<f64>> {
    let (m, n) = a.matrix_dims("singular_values")?;
    if m == 0 || n == 0 {
        return Err(Error::Empty { op: "singular_values" });
    }
    // columns of the working matrix, each stored contiguously
    let (cols, len) = if n <= m { (n, m) } else { (m, n) };
    let mut u: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..len).map(|r| if n <= m { a.get(r, c) } else { a.get(c, r) }).collect())
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&u[p], &u[p]);
                let beta = dot(&u[q], &u[q]);
                let gamma = dot(&u[p], &u[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let (c, s) = rotation((beta - alpha) / (2.0 * gamma));
                let (left, right) = u.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = u.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm_sym(a: &Tensor) -> Result<f64> {
    Ok(sym_eigen(a)?.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Tensor::randn([n, n], 1.0, &mut rng);
        matmul(&b.transpose().unwrap(), &b).unwrap()
    }

    #[test]
    fn diagonal_and_identity() {
        let e = sym_eigen(&Tensor::identity(4)).unwrap();
        assert_eq!(e.values, vec![1.0; 4]);
        let d = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let e = sym_eigen(&d).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vectors.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[2,1],[1,2]] → 3, 1 with (1,1)/√2 and (1,−1)/√2
        let a = Tensor::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors.get(0, 0) - h).abs() < 1e-14 && (e.vectors.get(1, 0) - h).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&a), Err(Error::NotSymmetric { .. })));
        assert!(sym_eigen(&Tensor::zeros([0, 0])).is_err());
    }

    #[test]
    fn residuals_and_orthogonality() {
        for seed in 0..5 {
            let a = random_sym(12, seed);
            let e = sym_eigen(&a).unwrap();
            let av = matmul(&a, &e.vectors).unwrap();
            let norm = spectral_norm_sym(&a).unwrap();
            for i in 0..12 {
                let r: f64 = (0..12).map(|k| (av.get(k, i) - e.values[i] * e.vectors.get(k, i)).powi(2)).sum::<f64>().sqrt();
                assert!(r <= 1e-8 * norm);
            }
            let vtv = matmul(&e.vectors.transpose().unwrap(), &e.vectors).unwrap();
            assert!(vtv.max_abs_diff(&Tensor::identity(12)) < 1e-8);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn singular_values_match_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (m, n) in [(7, 4), (4, 7), (10, 10), (1, 5)] {
            let a = Tensor::randn([m, n], 1.0, &mut rng);
            let ours = singular_values(&a).unwrap();
            let na = nalgebra::DMatrix::from_row_slice(m, n, a.data());
            let mut theirs: Vec<f64> = na.singular_values().iter().copied().collect();
            theirs.sort_by(|a, b| b.total_cmp(a));
            assert_eq!(ours.len(), m.min(n));
            for (x, y) in ours.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-10 * theirs[0], "{ours:?} vs {theirs:?}");
            }
        }
    }

    #[test]
    fn rank_deficient_singular_values_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = matmul(&Tensor::randn([30, 3], 1.0, &mut rng), &Tensor::randn([3, 12], 1.0, &mut rng)).unwrap();
        let sv = singular_values(&a).unwrap();
        assert!(sv[2] > 1e-3);
        assert!(sv[3..].iter().all(|&s| s <= 1e-12 * sv[0]), "{sv:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn trace_is_preserved(seed in 0u64..1000, n in 1usize..9) {
            let a = random_sym(n, seed);
            let e = sym_eigen(&a).unwrap();
            let trace: f64 = (0..n).map(|i| a.get(i, i)).sum();
            let sum: f64 = e.values.iter().sum();
            prop_assert!((trace - sum).abs() <= 1e-10 * trace.abs().max(1.0));
        }
    }
}
