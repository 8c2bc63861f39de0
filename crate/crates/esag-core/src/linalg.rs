//! Small dense linear algebra on flat row-major slices.
//!
//! Everything in this crate works on matrices of order 2..=8 (ambient
//! dimensions d in 3..=6 are typical), so the routines here favor
//! simplicity and determinism over asymptotic cleverness. The symmetric
//! eigensolver is a cyclic Jacobi sweep, which is accurate to machine
//! precision for matrices this small; 2x2 blocks are solved in closed
//! form.

/// Default off-diagonal tolerance for the Jacobi sweep, relative to the
/// Frobenius norm of the input.
pub const JACOBI_TOL: f64 = 1e-13;

/// Maximum number of Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major matrix-vector product: out = A (n x m) * x (m).
pub fn matvec(a: &[f64], n: usize, m: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(x.len(), m);
    debug_assert_eq!(out.len(), n);
    for i in 0..n {
        out[i] = dot(&a[i * m..(i + 1) * m], x);
    }
}

/// Quadratic form x^T A x for a square row-major A.
pub fn quadform(a: &[f64], n: usize, x: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(x.len(), n);
    let mut acc = 0.0;
    for i in 0..n {
        acc += x[i] * dot(&a[i * n..(i + 1) * n], x);
    }
    acc
}

/// C = A (n x k) * B (k x m), all row-major.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    c.fill(0.0);
    for i in 0..n {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i * m + j] += ail * b[l * m + j];
            }
        }
    }
}

/// Maximum absolute entry of `a - I`.
pub fn max_dev_from_identity(a: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((a[i * n + j] - target).abs());
        }
    }
    worst
}

/// Closed-form eigendecomposition of a symmetric 2x2 `[[a, b], [b, c]]`.
///
/// Returns eigenvalues ascending and the corresponding unit eigenvectors
/// as columns of a row-major 2x2.
fn eigen_2x2(a: f64, b: f64, c: f64) -> ([f64; 2], [f64; 4]) {
    if b == 0.0 {
        return if a <= c {
            ([a, c], [1.0, 0.0, 0.0, 1.0])
        } else {
            ([c, a], [0.0, 1.0, 1.0, 0.0])
        };
    }
    let half_tr = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let disc = half_diff.hypot(b);
    let lo = half_tr - disc;
    let hi = half_tr + disc;
    // Eigenvector for `hi`: pick the formula furthest from cancellation.
    let (vx, vy) = if half_diff >= 0.0 {
        (half_diff + disc, b)
    } else {
        (b, disc - half_diff)
    };
    let nrm = vx.hypot(vy);
    let (vx, vy) = (vx / nrm, vy / nrm);
    // Columns: [vec(lo) | vec(hi)], with vec(lo) orthogonal to vec(hi).
    ([lo, hi], [-vy, vx, vx, vy])
}

/// Cyclic Jacobi on a symmetric matrix stored row-major in `a` (order n).
///
/// On return `a` is (numerically) diagonal and `v` holds the accumulated
/// rotations: column j of `v` is the eigenvector for `a[j*n+j]`. Both
/// slices must have length n*n; `v` is overwritten with the identity
/// first. Returns the number of sweeps used.
pub fn jacobi_sym(a: &mut [f64], v: &mut [f64], n: usize, tol: f64, max_sweeps: usize) -> usize {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(v.len(), n * n);
    v.fill(0.0);
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    if n < 2 {
        return 0;
    }
    let mut fro = 0.0;
    for x in a.iter() {
        fro += x * x;
    }
    let fro = fro.sqrt().max(f64::MIN_POSITIVE);
    let thresh = tol * fro;

    for sweep in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p * n + q].abs());
            }
        }
        if off <= thresh {
            return sweep;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sgn / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = a[i * n + p];
                        let aiq = a[i * n + q];
                        let new_p = aip - s * (aiq + tau * aip);
                        let new_q = aiq + s * (aip - tau * aiq);
                        a[i * n + p] = new_p;
                        a[p * n + i] = new_p;
                        a[i * n + q] = new_q;
                        a[q * n + i] = new_q;
                    }
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = vip - s * (viq + tau * vip);
                    v[i * n + q] = viq + s * (vip - tau * viq);
                }
            }
        }
        if sweep + 1 == max_sweeps {
            return max_sweeps;
        }
    }
    max_sweeps
}

/// Symmetric eigendecomposition with eigenvalues ascending.
///
/// Returns `(values, vectors)` with eigenvector j stored as column j of
/// the row-major `vectors` matrix.
pub fn sym_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(a.len(), n * n);
    match n {
        0 => (vec![], vec![]),
        1 => (vec![a[0]], vec![1.0]),
        2 => {
            let (vals, vecs) = eigen_2x2(a[0], a[1], a[3]);
            (vals.to_vec(), vecs.to_vec())
        }
        _ => {
            let mut work = a.to_vec();
            let mut vecs = vec![0.0; n * n];
            jacobi_sym(&mut work, &mut vecs, n, JACOBI_TOL, JACOBI_MAX_SWEEPS);
            let mut vals: Vec<f64> = (0..n).map(|i| work[i * n + i]).collect();
            sort_eigen(&mut vals, &mut vecs, n);
            (vals, vecs)
        }
    }
}

/// Sort eigenvalues ascending, permuting eigenvector columns to match.
pub fn sort_eigen(vals: &mut [f64], vecs: &mut [f64], n: usize) {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let old_vals = vals.to_vec();
    let old_vecs = vecs.to_vec();
    for (new_col, &old_col) in order.iter().enumerate() {
        vals[new_col] = old_vals[old_col];
        for i in 0..n {
            vecs[i * n + new_col] = old_vecs[i * n + old_col];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_2x2_diagonal_and_rotation() {
        let (vals, vecs) = sym_eigen(&[3.0, 0.0, 0.0, -1.0], 2);
        assert_eq!(vals, vec![-1.0, 3.0]);
        // columns orthonormal
        let dot01 = vecs[0] * vecs[1] + vecs[2] * vecs[3];
        assert!(dot01.abs() < 1e-15);

        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let (vals, _) = sym_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // A = Q diag(1,2,5) Q^T for a Givens-built Q.
        let (c, s) = (0.6, 0.8);
        let q = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
        let d = [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let mut qd = vec![0.0; 9];
        matmul(&q, &d, 3, 3, 3, &mut qd);
        let mut qt = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                qt[i * 3 + j] = q[j * 3 + i];
            }
        }
        let mut a = vec![0.0; 9];
        matmul(&qd, &qt, 3, 3, 3, &mut a);

        let (vals, vecs) = sym_eigen(&a, 3);
        for (got, want) in vals.iter().zip([1.0, 2.0, 5.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // V^T V = I
        let mut vt = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                vt[i * 3 + j] = vecs[j * 3 + i];
            }
        }
        let mut vtv = vec![0.0; 9];
        matmul(&vt, &vecs, 3, 3, 3, &mut vtv);
        assert!(max_dev_from_identity(&vtv, 3) < 1e-13);
        // A v_j = lambda_j v_j
        for j in 0..3 {
            let col: Vec<f64> = (0..3).map(|i| vecs[i * 3 + j]).collect();
            let mut av = vec![0.0; 3];
            matvec(&a, 3, 3, &col, &mut av);
            for i in 0..3 {
                assert!((av[i] - vals[j] * col[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadform_matches_manual() {
        let a = [2.0, 1.0, 1.0, 3.0];
        let x = [1.0, -2.0];
        // 2*1 + 2*(1*-2) + 3*4 = 2 - 4 + 12 = 10
        assert!((quadform(&a, 2, &x) - 10.0).abs() < 1e-15);
    }
}
