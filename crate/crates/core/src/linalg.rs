//! Small dense linear-algebra kernel: Hessenberg reduction, Francis
//! double-shift QR for eigenvalues, LU with partial pivoting, and inverse
//! iteration.  Sized for the reduced patch matrices (dimension < 100), where
//! robustness and determinism matter more than asymptotic speed.

use ndarray::{Array1, Array2};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LinalgError {
    /// The QR iteration produced a genuinely complex conjugate pair.
    ComplexEigenvalues,
    /// QR or inverse iteration failed to converge.
    NoConvergence,
}

/// Infinity norm of a dense matrix.
pub(crate) fn inf_norm<T: Real>(a: &Array2<T>) -> T {
    let mut best = T::zero();
    for row in a.rows() {
        let s = row.iter().fold(T::zero(), |acc, v| acc + v.abs());
        if s > best {
            best = s;
        }
    }
    best
}

/// In-place Householder reduction to upper Hessenberg form.
pub(crate) fn hessenberg<T: Real>(a: &mut Array2<T>) {
    let m = a.nrows();
    if m < 3 {
        return;
    }
    let mut v = vec![T::zero(); m];
    for c in 0..m - 2 {
        let mut sigma = T::zero();
        for i in c + 2..m {
            sigma += a[[i, c]] * a[[i, c]];
        }
        let x0 = a[[c + 1, c]];
        if sigma == T::zero() {
            continue;
        }
        let mu = (x0 * x0 + sigma).sqrt();
        let v0 = if x0 <= T::zero() { x0 - mu } else { x0 + mu };
        let beta = T::two() * v0 * v0 / (sigma + v0 * v0);
        v[c + 1] = T::one();
        for i in c + 2..m {
            v[i] = a[[i, c]] / v0;
        }
        // Left application: A <- (I - beta v v^T) A on rows c+1..m.
        for j in c..m {
            let mut dot = T::zero();
            for i in c + 1..m {
                dot += v[i] * a[[i, j]];
            }
            let f = beta * dot;
            for i in c + 1..m {
                a[[i, j]] -= f * v[i];
            }
        }
        // Right application: A <- A (I - beta v v^T) on columns c+1..m.
        for i in 0..m {
            let mut dot = T::zero();
            for j in c + 1..m {
                dot += a[[i, j]] * v[j];
            }
            let f = beta * dot;
            for j in c + 1..m {
                a[[i, j]] -= f * v[j];
            }
        }
        // Enforce the exact zeros the reflection produced.
        for i in c + 2..m {
            a[[i, c]] = T::zero();
        }
    }
}

/// All eigenvalues of an upper Hessenberg matrix by Francis double-shift QR.
/// The matrices handled here have real spectra; a converged complex pair with
/// relative imaginary part above `1e-8` is reported as an error.
pub(crate) fn hessenberg_eigenvalues<T: Real>(mut a: Array2<T>) -> Result<Vec<T>, LinalgError> {
    let m = a.nrows();
    let mut eigs = Vec::with_capacity(m);
    if m == 0 {
        return Ok(eigs);
    }
    let eps = T::epsilon();
    let mut anorm = T::zero();
    for i in 0..m {
        for j in i.saturating_sub(1)..m {
            anorm += a[[i, j]].abs();
        }
    }
    if anorm == T::zero() {
        return Ok(vec![T::zero(); m]);
    }

    let mut t = T::zero();
    let mut nn = m as isize - 1;
    while nn >= 0 {
        let mut its = 0;
        'search: loop {
            let nnu = nn as usize;
            // Look for a negligible subdiagonal element.
            let mut l = 0usize;
            for cand in (1..=nnu).rev() {
                let mut s = a[[cand - 1, cand - 1]].abs() + a[[cand, cand]].abs();
                if s == T::zero() {
                    s = anorm;
                }
                if a[[cand, cand - 1]].abs() <= eps * s {
                    a[[cand, cand - 1]] = T::zero();
                    l = cand;
                    break;
                }
            }
            let mut x = a[[nnu, nnu]];
            if l == nnu {
                eigs.push(x + t);
                nn -= 1;
                break 'search;
            }
            let y = a[[nnu - 1, nnu - 1]];
            let w = a[[nnu, nnu - 1]] * a[[nnu - 1, nnu]];
            if l == nnu - 1 {
                let p = T::half() * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= T::zero() {
                    let z = p + if p >= T::zero() { z } else { -z };
                    let first = x + z;
                    eigs.push(first);
                    if z == T::zero() {
                        eigs.push(first);
                    } else {
                        eigs.push(x - w / z);
                    }
                } else if z <= T::lit(1e-8) * T::one().max((x + p).abs()) {
                    // Numerically-split double root; treat as coincident.
                    eigs.push(x + p);
                    eigs.push(x + p);
                } else {
                    return Err(LinalgError::ComplexEigenvalues);
                }
                nn -= 2;
                break 'search;
            }
            if its == 30 {
                return Err(LinalgError::NoConvergence);
            }
            let mut y = y;
            let mut w = w;
            if its == 10 || its == 20 {
                // Exceptional shift.
                t += x;
                for i in 0..=nnu {
                    a[[i, i]] -= x;
                }
                let s = a[[nnu, nnu - 1]].abs() + a[[nnu - 1, nnu - 2]].abs();
                x = T::lit(0.75) * s;
                y = x;
                w = T::lit(-0.4375) * s * s;
            }
            its += 1;

            // Find two consecutive small subdiagonal elements.
            let mut mm = nnu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[[mm, mm]];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[[mm + 1, mm]] + a[[mm, mm + 1]];
                q = a[[mm + 1, mm + 1]] - z - rr - ss;
                r = a[[mm + 2, mm + 1]];
                let scale = p.abs() + q.abs() + r.abs();
                p /= scale;
                q /= scale;
                r /= scale;
                if mm == l {
                    break;
                }
                let u = a[[mm, mm - 1]].abs() * (q.abs() + r.abs());
                let v =
                    p.abs() * (a[[mm - 1, mm - 1]].abs() + z.abs() + a[[mm + 1, mm + 1]].abs());
                if u <= eps * v {
                    break;
                }
                mm -= 1;
            }
            for i in mm + 2..=nnu {
                a[[i, i - 2]] = T::zero();
                if i > mm + 2 {
                    a[[i, i - 3]] = T::zero();
                }
            }

            // Double QR step with the implicit shift contained in (p, q, r).
            for k in mm..nnu {
                if k != mm {
                    p = a[[k, k - 1]];
                    q = a[[k + 1, k - 1]];
                    r = if k != nnu - 1 { a[[k + 2, k - 1]] } else { T::zero() };
                    x = p.abs() + q.abs() + r.abs();
                    if x != T::zero() {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let norm = (p * p + q * q + r * r).sqrt();
                let s = if p >= T::zero() { norm } else { -norm };
                if s == T::zero() {
                    continue;
                }
                if k == mm {
                    if l != mm {
                        a[[k, k - 1]] = -a[[k, k - 1]];
                    }
                } else {
                    a[[k, k - 1]] = -s * x;
                }
                p += s;
                x = p / s;
                let yy = q / s;
                let zz = r / s;
                q /= p;
                r /= p;
                for j in k..=nnu {
                    let mut f = a[[k, j]] + q * a[[k + 1, j]];
                    if k != nnu - 1 {
                        f += r * a[[k + 2, j]];
                    }
                    a[[k, j]] -= f * x;
                    a[[k + 1, j]] -= f * yy;
                    if k != nnu - 1 {
                        a[[k + 2, j]] -= f * zz;
                    }
                }
                let upper = nnu.min(k + 3);
                for i in l..=upper {
                    let mut f = x * a[[i, k]] + yy * a[[i, k + 1]];
                    if k != nnu - 1 {
                        f += zz * a[[i, k + 2]];
                    }
                    a[[i, k]] -= f;
                    a[[i, k + 1]] -= f * q;
                    if k != nnu - 1 {
                        a[[i, k + 2]] -= f * r;
                    }
                }
            }
        }
    }
    Ok(eigs)
}

/// Eigenvalues of a general dense matrix (real spectrum expected).
pub(crate) fn dense_eigenvalues<T: Real>(a: &Array2<T>) -> Result<Vec<T>, LinalgError> {
    let mut h = a.clone();
    hessenberg(&mut h);
    let mut eigs = hessenberg_eigenvalues(h)?;
    eigs.sort_by(|x, y| x.partial_cmp(y).expect("real eigenvalues"));
    Ok(eigs)
}

/// LU factorisation with partial pivoting; pivots smaller than `floor` are
/// replaced by `±floor` so that near-singular shifts (inverse iteration)
/// still factorise.
pub(crate) fn lu_in_place<T: Real>(a: &mut Array2<T>, perm: &mut [usize], floor: T) {
    let m = a.nrows();
    for c in 0..m {
        let mut pivot_row = c;
        let mut best = a[[c, c]].abs();
        for r in c + 1..m {
            let v = a[[r, c]].abs();
            if v > best {
                best = v;
                pivot_row = r;
            }
        }
        perm[c] = pivot_row;
        if pivot_row != c {
            for j in 0..m {
                let tmp = a[[c, j]];
                a[[c, j]] = a[[pivot_row, j]];
                a[[pivot_row, j]] = tmp;
            }
        }
        let mut piv = a[[c, c]];
        if piv.abs() < floor {
            piv = if piv >= T::zero() { floor } else { -floor };
            a[[c, c]] = piv;
        }
        for r in c + 1..m {
            let f = a[[r, c]] / piv;
            a[[r, c]] = f;
            for j in c + 1..m {
                let sub = f * a[[c, j]];
                a[[r, j]] -= sub;
            }
        }
    }
}

pub(crate) fn lu_solve_in_place<T: Real>(lu: &Array2<T>, perm: &[usize], b: &mut Array1<T>) {
    let m = lu.nrows();
    for c in 0..m {
        b.swap(c, perm[c]);
    }
    for r in 1..m {
        let mut acc = b[r];
        for j in 0..r {
            acc -= lu[[r, j]] * b[j];
        }
        b[r] = acc;
    }
    for r in (0..m).rev() {
        let mut acc = b[r];
        for j in r + 1..m {
            acc -= lu[[r, j]] * b[j];
        }
        b[r] = acc / lu[[r, r]];
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic pseudo-random start vector for inverse iteration.
fn start_vector<T: Real>(m: usize, seed: u64) -> Array1<T> {
    let mut state = seed ^ 0x5bf0_3635_dead_beef;
    let mut v = Array1::zeros(m);
    for i in 0..m {
        let bits = splitmix64(&mut state) >> 11;
        v[i] = T::lit(bits as f64 / (1u64 << 53) as f64 - 0.5);
    }
    v
}

/// Eigenvector for an isolated eigenvalue `lambda` of `a` (or of `a^T` when
/// `transpose` is set) by inverse iteration.  Returns a unit 2-norm vector.
pub(crate) fn inverse_iteration<T: Real>(
    a: &Array2<T>,
    lambda: T,
    transpose: bool,
    seed: u64,
) -> Result<Array1<T>, LinalgError> {
    let m = a.nrows();
    let anorm = inf_norm(a).max(T::one());
    let mut shifted = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            shifted[[i, j]] = if transpose { a[[j, i]] } else { a[[i, j]] };
        }
        shifted[[i, i]] -= lambda;
    }
    let mut lu = shifted.clone();
    let mut perm = vec![0usize; m];
    lu_in_place(&mut lu, &mut perm, T::epsilon() * anorm);

    let tol = T::epsilon() * anorm * T::lit(256.0);
    let mut x = start_vector::<T>(m, seed);
    let nrm = (x.iter().fold(T::zero(), |s, v| s + *v * *v)).sqrt();
    x.mapv_inplace(|v| v / nrm);

    let mut best = x.clone();
    let mut best_res = T::infinity();
    for _ in 0..12 {
        lu_solve_in_place(&lu, &perm, &mut x);
        let nrm = (x.iter().fold(T::zero(), |s, v| s + *v * *v)).sqrt();
        if !nrm.is_finite() || nrm == T::zero() {
            return Err(LinalgError::NoConvergence);
        }
        x.mapv_inplace(|v| v / nrm);
        // Residual of the unfloored shifted system.
        let mut res = T::zero();
        for i in 0..m {
            let mut acc = T::zero();
            for j in 0..m {
                acc += shifted[[i, j]] * x[j];
            }
            res = res.max(acc.abs());
        }
        if res < best_res {
            best_res = res;
            best.assign(&x);
        }
        if res <= tol {
            return Ok(x);
        }
    }
    if best_res <= tol * T::lit(64.0) {
        Ok(best)
    } else {
        Err(LinalgError::NoConvergence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tridiagonal (-2, 1) Dirichlet Laplacian: spectrum -2(1 - cos(k pi/(m+1))).
    fn dirichlet_laplacian(m: usize) -> Array2<f64> {
        let mut a = Array2::zeros((m, m));
        for i in 0..m {
            a[[i, i]] = -2.0;
            if i > 0 {
                a[[i, i - 1]] = 1.0;
            }
            if i + 1 < m {
                a[[i, i + 1]] = 1.0;
            }
        }
        a
    }

    #[test]
    fn laplacian_spectrum_matches_closed_form() {
        let m = 17;
        let eigs = dense_eigenvalues(&dirichlet_laplacian(m)).unwrap();
        for (k, lam) in eigs.iter().enumerate() {
            let exact =
                -2.0 * (1.0 - ((m - k) as f64 * std::f64::consts::PI / (m as f64 + 1.0)).cos());
            assert!((lam - exact).abs() < 1e-12, "k={k}, got {lam}, exact {exact}");
        }
    }

    #[test]
    fn nonsymmetric_real_spectrum() {
        // Companion-style matrix of (x-1)(x-2)(x-3)(x-5).
        let coeffs = [30.0f64, -61.0, 41.0, -11.0]; // monic poly x^4 -11x^3 +41x^2 -61x +30
        let m = 4;
        let mut a = Array2::zeros((m, m));
        for i in 1..m {
            a[[i, i - 1]] = 1.0;
        }
        for i in 0..m {
            a[[i, m - 1]] = -coeffs[i];
        }
        let eigs = dense_eigenvalues(&a).unwrap();
        let expect = [1.0, 2.0, 3.0, 5.0];
        for (lam, ex) in eigs.iter().zip(expect) {
            assert!((lam - ex).abs() < 1e-10, "got {lam}, expected {ex}");
        }
    }

    #[test]
    fn rotation_matrix_is_rejected() {
        let a = ndarray::array![[0.0, -1.0], [1.0, 0.0]];
        let mut h = a.clone();
        hessenberg(&mut h);
        assert_eq!(hessenberg_eigenvalues(h), Err(LinalgError::ComplexEigenvalues));
    }

    #[test]
    fn inverse_iteration_recovers_eigenvectors() {
        let m = 12;
        let a = dirichlet_laplacian(m);
        let eigs = dense_eigenvalues(&a).unwrap();
        for (idx, &lam) in eigs.iter().enumerate() {
            let v = inverse_iteration(&a, lam, false, idx as u64 + 1).unwrap();
            let mut res = 0.0f64;
            for i in 0..m {
                let mut acc = -lam * v[i];
                for j in 0..m {
                    acc += a[[i, j]] * v[j];
                }
                res = res.max(acc.abs());
            }
            assert!(res < 1e-12, "eigenpair {idx} residual {res}");
        }
    }

    #[test]
    fn transpose_iteration_gives_left_vectors() {
        // Lower-triangular matrix: right eigenvectors are not standard basis
        // vectors but left ones for the (0,0) entry are.
        let a = ndarray::array![[2.0f64, 0.0, 0.0], [1.0, 1.0, 0.0], [0.5, 0.25, -1.0]];
        let z = inverse_iteration(&a, 2.0, true, 7).unwrap();
        // z^T a = 2 z^T
        for j in 0..3 {
            let mut acc = -2.0 * z[j];
            for i in 0..3 {
                acc += z[i] * a[[i, j]];
            }
            assert!(acc.abs() < 1e-12);
        }
    }
}
