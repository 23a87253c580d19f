//! Dense row-major kernels shared by the eager ops and the tape.
//!
//! Every product accumulates over the inner dimension in increasing index
//! order starting from `0.0`, so a 1×k row times a k×n matrix produces the
//! same bits as the corresponding row of a full m×k by k×n product.

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m×k] = g[m×n] · b[k×n]ᵀ`
pub fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[k×n] = a[m×k]ᵀ · g[m×n]`
pub fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh approximation:
/// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Column-wise maximum over `rows` (each of width `d`), returning the values
/// and, per column, the index of the winning row. Ties keep the lowest index.
pub fn rowwise_max<'a, I>(rows: I, d: usize) -> Option<(Vec<f64>, Vec<usize>)>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = rows.into_iter();
    let first = iter.next()?;
    let mut best = first.to_vec();
    let mut arg = vec![0usize; d];
    for (r, row) in iter.enumerate() {
        for c in 0..d {
            if row[c] > best[c] {
                best[c] = row[c];
                arg[c] = r + 1;
            }
        }
    }
    Some((best, arg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_zero_and_symmetry() {
        assert_eq!(gelu(0.0), 0.0);
        // gelu(x) - gelu(-x) = x
        for x in [0.3, 1.7, -2.2] {
            assert!((gelu(x) - gelu(-x) - x).abs() < 1e-15);
        }
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        let h = 1e-6;
        for x in [-3.0, -0.5, 0.0, 0.25, 2.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn transposed_products_agree_with_plain() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [0.5, -1.0, 2.0, 0.0, 1.0, 3.0]; // 3x2
        let ab = matmul(&a, &b, 2, 3, 2);
        assert_eq!(ab, vec![7.5, 8.0, 18.0, 14.0]);
        // bᵀ as 2x3
        let bt = [0.5, 2.0, 1.0, -1.0, 0.0, 3.0];
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 2), ab);
        // aᵀ stored 3x2, so (aᵀ)ᵀ·b via matmul_tn
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        assert_eq!(matmul_tn(&at, &b, 3, 2, 2), ab);
    }
}
