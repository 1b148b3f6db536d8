//! Golub-Kahan-Reinsch singular value decomposition.
//!
//! Householder bidiagonalization followed by implicit-shift QR on the
//! bidiagonal form, accumulating the full orthogonal factors. Computes
//! `A = U * diag(sigma) * V^T` with U (m x m) and V (n x n); the full V is
//! what makes null-space extraction possible for wide matrices.

use super::{LinalgError, Matrix};

/// Reduce `a` (m x n, m >= n) to upper bidiagonal form, accumulating the
/// left transform into `u` (m x m) and the right transform into `v` (n x n).
///
/// On return `diag[0..n]` holds the bidiagonal diagonal and
/// `off_diag[0..n-1]` the superdiagonal, with `a` overwritten by the
/// Householder vectors used along the way.
fn bidiagonalize(a: &mut Matrix, diag: &mut [f64], off_diag: &mut [f64], u: &mut Matrix, v: &mut Matrix) {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);

    for i in 0..m {
        for j in 0..m {
            u.set(i, j, if i == j { 1.0 } else { 0.0 });
        }
    }
    for i in 0..n {
        for j in 0..n {
            v.set(i, j, if i == j { 1.0 } else { 0.0 });
        }
    }

    for k in 0..n {
        // Left Householder: zero out a[k+1..m, k].
        let mut norm_sq = 0.0;
        for i in k..m {
            let val = a.get(i, k);
            norm_sq += val * val;
        }

        if norm_sq > 0.0 {
            let norm = norm_sq.sqrt();
            let akk = a.get(k, k);
            let sigma = if akk >= 0.0 { norm } else { -norm };
            let v0 = akk + sigma;
            a.set(k, k, v0);
            for i in (k + 1)..m {
                let val = a.get(i, k) / v0;
                a.set(i, k, val);
            }
            let tau = v0 / sigma;

            // Apply H = I - tau*w*w^T (w = [1, a[k+1..m, k]]) to the trailing columns.
            for j in (k + 1)..n {
                let mut dot = a.get(k, j);
                for i in (k + 1)..m {
                    dot += a.get(i, k) * a.get(i, j);
                }
                dot *= tau;
                a.set(k, j, a.get(k, j) - dot);
                for i in (k + 1)..m {
                    let val = a.get(i, j) - dot * a.get(i, k);
                    a.set(i, j, val);
                }
            }

            // Accumulate U <- U * H.
            for row in 0..m {
                let mut dot = u.get(row, k);
                for i in (k + 1)..m {
                    dot += u.get(row, i) * a.get(i, k);
                }
                dot *= tau;
                u.set(row, k, u.get(row, k) - dot);
                for i in (k + 1)..m {
                    let val = u.get(row, i) - dot * a.get(i, k);
                    u.set(row, i, val);
                }
            }

            diag[k] = -sigma;
        } else {
            diag[k] = a.get(k, k);
        }

        // Right Householder: zero out a[k, k+2..n].
        if k + 2 < n {
            let mut norm_sq = 0.0;
            for j in (k + 1)..n {
                let val = a.get(k, j);
                norm_sq += val * val;
            }

            if norm_sq > 0.0 {
                let norm = norm_sq.sqrt();
                let ak1 = a.get(k, k + 1);
                let sigma = if ak1 >= 0.0 { norm } else { -norm };
                let v0 = ak1 + sigma;
                a.set(k, k + 1, v0);
                for j in (k + 2)..n {
                    let val = a.get(k, j) / v0;
                    a.set(k, j, val);
                }
                let tau = v0 / sigma;

                for i in (k + 1)..m {
                    let mut dot = a.get(i, k + 1);
                    for j in (k + 2)..n {
                        dot += a.get(i, j) * a.get(k, j);
                    }
                    dot *= tau;
                    a.set(i, k + 1, a.get(i, k + 1) - dot);
                    for j in (k + 2)..n {
                        let val = a.get(i, j) - dot * a.get(k, j);
                        a.set(i, j, val);
                    }
                }

                // Accumulate V <- V * H.
                for row in 0..n {
                    let mut dot = v.get(row, k + 1);
                    for j in (k + 2)..n {
                        dot += v.get(row, j) * a.get(k, j);
                    }
                    dot *= tau;
                    v.set(row, k + 1, v.get(row, k + 1) - dot);
                    for j in (k + 2)..n {
                        let val = v.get(row, j) - dot * a.get(k, j);
                        v.set(row, j, val);
                    }
                }

                off_diag[k] = -sigma;
            } else {
                off_diag[k] = a.get(k, k + 1);
            }
        } else if k + 1 < n {
            off_diag[k] = a.get(k, k + 1);
        }
    }
}

/// Givens rotation (c, s) with c*a + s*b = r and -s*a + c*b = 0.
fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0);
    }
    let r = a.hypot(b);
    (a / r, b / r)
}

fn rotate_columns(mat: &mut Matrix, j: usize, k: usize, c: f64, s: f64) {
    let rows = mat.rows();
    for row in 0..rows {
        let xj = mat.get(row, j);
        let xk = mat.get(row, k);
        mat.set(row, j, c * xj + s * xk);
        mat.set(row, k, c * xk - s * xj);
    }
}

/// Implicit-shift QR on the bidiagonal (diag, off_diag), driving the
/// superdiagonal to zero while accumulating rotations into `u` and `v`.
fn bidiagonal_qr(diag: &mut [f64], off_diag: &mut [f64], u: &mut Matrix, v: &mut Matrix) -> Result<(), LinalgError> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }

    let eps = f64::EPSILON;
    let scale = diag
        .iter()
        .chain(off_diag.iter())
        .fold(0.0f64, |acc, &x| acc.max(x.abs()))
        .max(f64::MIN_POSITIVE);

    let max_sweeps = 40 * n.max(8);
    let mut sweeps = 0usize;
    let mut hi = n - 1;

    while hi > 0 {
        // Deflate a negligible trailing off-diagonal entry. The scale term
        // keeps the threshold positive when both diagonal neighbours vanish.
        let threshold = eps * (diag[hi - 1].abs() + diag[hi].abs() + scale);
        if off_diag[hi - 1].abs() <= threshold {
            off_diag[hi - 1] = 0.0;
            hi -= 1;
            continue;
        }

        // Find the start of the unreduced block ending at hi.
        let mut lo = hi - 1;
        while lo > 0 {
            let threshold = eps * (diag[lo - 1].abs() + diag[lo].abs() + scale);
            if off_diag[lo - 1].abs() <= threshold {
                off_diag[lo - 1] = 0.0;
                break;
            }
            lo -= 1;
        }

        sweeps += 1;
        if sweeps > max_sweeps {
            return Err(LinalgError::SvdNonConvergence { sweeps });
        }

        // A vanishing diagonal entry breaks the shift formula; chase the
        // corresponding off-diagonal off the bottom with left rotations.
        let mut chased = false;
        for idx in lo..hi {
            if diag[idx].abs() <= eps * scale {
                diag[idx] = 0.0;
                let mut z = off_diag[idx];
                off_diag[idx] = 0.0;
                for j in (idx + 1)..=hi {
                    let (c, s) = givens(diag[j], z);
                    diag[j] = c * diag[j] + s * z;
                    if j < hi {
                        z = -s * off_diag[j];
                        off_diag[j] *= c;
                    }
                    // Left rotation mixes rows (j, idx) of B, so columns of U.
                    rotate_columns(u, j, idx, c, s);
                }
                chased = true;
                break;
            }
        }
        if chased {
            continue;
        }

        // Wilkinson shift from the trailing 2x2 of B^T B.
        let d_hi = diag[hi];
        let d_hi1 = diag[hi - 1];
        let e_hi1 = off_diag[hi - 1];
        let e_hi2 = if hi >= 2 && hi - 2 >= lo { off_diag[hi - 2] } else { 0.0 };

        let t11 = d_hi1 * d_hi1 + e_hi2 * e_hi2;
        let t12 = d_hi1 * e_hi1;
        let t22 = d_hi * d_hi + e_hi1 * e_hi1;

        let d = (t11 - t22) / 2.0;
        let sign_d = if d >= 0.0 { 1.0 } else { -1.0 };
        let mu = t22 - t12 * t12 / (d + sign_d * (d * d + t12 * t12).sqrt());

        // Implicit QR chase down the block.
        let mut x = diag[lo] * diag[lo] - mu;
        let mut z = diag[lo] * off_diag[lo];

        for k in lo..hi {
            let (c, s) = givens(x, z);
            if k > lo {
                off_diag[k - 1] = c * x + s * z;
            }

            let dk = diag[k];
            let ek = off_diag[k];
            let dk1 = diag[k + 1];

            diag[k] = c * dk + s * ek;
            off_diag[k] = c * ek - s * dk;
            let bulge = s * dk1;
            diag[k + 1] = c * dk1;

            rotate_columns(v, k, k + 1, c, s);

            let (c2, s2) = givens(diag[k], bulge);
            diag[k] = c2 * diag[k] + s2 * bulge;
            let old_ek = off_diag[k];
            let old_dk1 = diag[k + 1];
            off_diag[k] = c2 * old_ek + s2 * old_dk1;
            diag[k + 1] = c2 * old_dk1 - s2 * old_ek;

            if k + 1 < hi {
                let old_ek1 = off_diag[k + 1];
                x = off_diag[k];
                z = s2 * old_ek1;
                off_diag[k + 1] = c2 * old_ek1;
            }

            rotate_columns(u, k, k + 1, c2, s2);
        }
    }

    // Flip signs so every singular value is non-negative.
    for i in 0..n {
        if diag[i] < 0.0 {
            diag[i] = -diag[i];
            let rows = u.rows();
            for row in 0..rows {
                let val = -u.get(row, i);
                u.set(row, i, val);
            }
        }
    }

    // Selection-sort descending, permuting the U and V columns alongside.
    for i in 0..n {
        let mut max_idx = i;
        for j in (i + 1)..n {
            if diag[j] > diag[max_idx] {
                max_idx = j;
            }
        }
        if max_idx != i {
            diag.swap(i, max_idx);
            u.swap_columns(i, max_idx);
            v.swap_columns(i, max_idx);
        }
    }

    Ok(())
}

/// Full SVD of a tall-or-square matrix (m >= n).
///
/// Returns (U, sigma, V) with U (m x m), sigma of length n sorted
/// descending and non-negative, V (n x n).
pub(super) fn decompose_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix), LinalgError> {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n && n >= 1);

    let mut work = a.clone();
    let mut u = Matrix::zeros(m, m);
    let mut v = Matrix::zeros(n, n);
    let mut diag = vec![0.0; n];
    let mut off_diag = vec![0.0; n.saturating_sub(1)];

    bidiagonalize(&mut work, &mut diag, &mut off_diag, &mut u, &mut v);
    bidiagonal_qr(&mut diag, &mut off_diag, &mut u, &mut v)?;

    Ok((u, diag, v))
}
