//! Small dense symmetric linear algebra on flat row-major buffers.
//!
//! Design matrices in this crate have at most a few dozen columns, so a
//! hand-rolled Cholesky factorization is simpler and faster than pulling in a
//! matrix library.

/// Cholesky factor (lower triangular, row-major) of a symmetric positive
/// definite matrix. Returns `None` when a pivot is not safely positive.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    let scale = (0..d)
        .map(|i| a[i * d + i].abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= scale * 1e-13 {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solve `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd(a: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, d)?;
    Some(solve_with_factor(&l, b, d))
}

fn solve_with_factor(l: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    // forward: L y = b
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * d + k] * y[k];
        }
        y[i] = sum / l[i * d + i];
    }
    // backward: L' x = y
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut sum = y[i];
        for k in (i + 1)..d {
            sum -= l[k * d + i] * x[k];
        }
        x[i] = sum / l[i * d + i];
    }
    x
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn inverse_spd(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, d)?;
    let mut inv = vec![0.0; d * d];
    let mut e = vec![0.0; d];
    for j in 0..d {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = solve_with_factor(&l, &e, d);
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    // symmetrize against rounding
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (inv[i * d + j] + inv[j * d + i]);
            inv[i * d + j] = m;
            inv[j * d + i] = m;
        }
    }
    Some(inv)
}

pub fn mat_vec(a: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d {
        let row = &a[i * d..(i + 1) * d];
        out[i] = dot(row, x);
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}
