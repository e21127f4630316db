//! Small dense matrices, stored row-major in `Vec<f64>` with an explicit
//! dimension. Sizes here are the spatial dimension (1 to 3), so nothing is
//! blocked or vectorized.

/// Identity matrix of size d.
pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// C = A B for d×d matrices.
pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                c[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    c
}

/// y = A x.
pub fn matvec(a: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| (0..d).map(|j| a[i * d + j] * x[j]).sum())
        .collect()
}

/// Solves A x = b by Gaussian elimination with partial pivoting. Both
/// arguments are overwritten. Returns `None` for a singular matrix.
pub fn solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let p = a[col * n + col];
        for i in col + 1..n {
            let f = a[i * n + col] / p;
            if f != 0.0 {
                for j in col..n {
                    a[i * n + j] -= f * a[col * n + j];
                }
                b[i] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Some(x)
}

/// Determinant via LU with partial pivoting.
pub fn det(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        _ => {
            let mut m = a.to_vec();
            let mut det = 1.0;
            for col in 0..d {
                let pivot = (col..d)
                    .max_by(|&i, &j| m[i * d + col].abs().total_cmp(&m[j * d + col].abs()))
                    .unwrap();
                if m[pivot * d + col] == 0.0 {
                    return 0.0;
                }
                if pivot != col {
                    for j in 0..d {
                        m.swap(col * d + j, pivot * d + j);
                    }
                    det = -det;
                }
                let p = m[col * d + col];
                det *= p;
                for i in col + 1..d {
                    let f = m[i * d + col] / p;
                    for j in col..d {
                        m[i * d + j] -= f * m[col * d + j];
                    }
                }
            }
            det
        }
    }
}

/// Inverse of a d×d matrix, `None` if singular.
pub fn inverse(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut out = vec![0.0; d * d];
    for j in 0..d {
        let mut m = a.to_vec();
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let x = solve(&mut m, &mut e, d)?;
        for i in 0..d {
            out[i * d + j] = x[i];
        }
    }
    Some(out)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..64 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum();
        let diag: f64 = (0..d).map(|i| m[i * d + i] * m[i * d + i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..d).map(|i| m[i * d + i]).collect()
}

/// Singular values, largest first.
pub fn singular_values(a: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![a[0].abs()];
    }
    let mut ata = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            ata[i * d + j] = (0..d).map(|k| a[k * d + i] * a[k * d + j]).sum();
        }
    }
    let mut s: Vec<f64> = symmetric_eigenvalues(&ata, d)
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Operator 2-norm (largest singular value). This is the matrix norm used for
/// every gradient bound in the crate.
pub fn op_norm(a: &[f64], d: usize) -> f64 {
    singular_values(a, d)[0]
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn expm(a: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![a[0].exp()];
    }
    let norm: f64 = a.iter().map(|v| v.abs()).sum::<f64>();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings);
    let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();
    let mut result = identity(d);
    let mut term = identity(d);
    for k in 1..=18 {
        term = matmul(&term, &scaled, d);
        let inv_k = 1.0 / k as f64;
        term.iter_mut().for_each(|v| *v *= inv_k);
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, d);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_and_inverse() {
        let a = [4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let inv = inverse(&a, 3).unwrap();
        let p = matmul(&a, &inv, 3);
        for (x, e) in p.iter().zip(identity(3)) {
            assert!((x - e).abs() < 1e-14);
        }
        assert!((det(&a, 3) - 18.0).abs() < 1e-12);
        assert!(inverse(&[1.0, 2.0, 2.0, 4.0], 2).is_none());
    }

    #[test]
    fn norms_of_rotation_and_shear() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        assert!((op_norm(&[c, -s, s, c], 2) - 1.0).abs() < 1e-14);
        // [[1, 1], [0, 1]] has singular values golden ratio and its inverse
        let sv = singular_values(&[1.0, 1.0, 0.0, 1.0], 2);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sv[0] - phi).abs() < 1e-12 && (sv[1] - 1.0 / phi).abs() < 1e-12);
    }

    #[test]
    fn expm_matches_rotation_and_diagonal() {
        let e = expm(&[0.0, -1.0, 1.0, 0.0], 2);
        assert!((e[0] - 1f64.cos()).abs() < 1e-14 && (e[2] - 1f64.sin()).abs() < 1e-14);
        let e = expm(&[-3.0, 0.0, 0.0, 2.0], 2);
        assert!(((e[0] - (-3f64).exp()) / (-3f64).exp()).abs() < 1e-13);
        assert!(((e[3] - 2f64.exp()) / 2f64.exp()).abs() < 1e-13);
        // det(exp A) = exp(tr A)
        let a = [0.3, 1.2, -0.7, -0.5];
        assert!((det(&expm(&a, 2), 2) - (-0.2f64).exp()).abs() < 1e-13);
    }
}
