//! Nonnegative least squares and the problems built on it.
//!
//! Lawson-Hanson NNLS is the workhorse; least distance programming (LDP)
//! reduces to it, and both the minimal-norm barycentric coordinates and the
//! polytope projection reduce to LDP after eliminating their equality
//! constraints.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimizes `|e x - f|_2` over `x >= 0` (Lawson-Hanson active set).
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = e.shape();
    if f.len() != m {
        return Err(Error::Dimension {
            context: "nnls",
            expected: format!("rhs of length {m}"),
            found: format!("length {}", f.len()),
        });
    }
    let scale = e.amax().max(f.amax()).max(1e-300);
    let grad_tol = 1e-12 * scale * scale * (m.max(n) as f64);

    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut residual = f.clone();
    let max_outer = 10 * n + 50;

    for _ in 0..max_outer {
        // Most positive gradient of the decrease among free variables.
        let w = e.transpose() * &residual;
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !passive[j] && w[j] > grad_tol && best.is_none_or(|b| w[j] > w[b]) {
                best = Some(j);
            }
        }
        if best.is_none() {
            return Ok(x);
        }
        passive[best.unwrap()] = true;

        // Inner loop: restrict to the passive set until its least-squares
        // solution is componentwise positive.
        let max_inner = 3 * n + 10;
        let mut settled = false;
        for _ in 0..max_inner {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            if idx.is_empty() {
                x.fill(0.0);
                settled = true;
                break;
            }
            let sub = e.select_columns(idx.iter());
            let svd = sub.svd(true, true);
            let z_sub = svd
                .solve(f, 1e-13 * scale)
                .map_err(|msg| Error::NumericalBreakdown(msg.to_string()))?;
            if z_sub.iter().all(|&v| v > 1e-13) {
                x.fill(0.0);
                for (pos, &j) in idx.iter().enumerate() {
                    x[j] = z_sub[pos];
                }
                settled = true;
                break;
            }
            // Step toward z until the first passive variable hits zero.
            let mut alpha = 1.0f64;
            for (pos, &j) in idx.iter().enumerate() {
                if z_sub[pos] <= 1e-13 {
                    let denom = x[j] - z_sub[pos];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            let drop_tol = 1e-13 * (1.0 + z_sub.amax());
            for (pos, &j) in idx.iter().enumerate() {
                x[j] += alpha * (z_sub[pos] - x[j]);
                if x[j] <= drop_tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
        if !settled {
            return Err(Error::IterationLimit("nnls inner loop stalled".into()));
        }
        residual = f - e * &x;
    }
    Err(Error::IterationLimit("nnls outer loop stalled".into()))
}

/// Least distance programming: minimizes `|y|_2` subject to `g y >= h`.
/// Returns `None` when the constraint set is empty.
pub fn ldp(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    let (m, n) = g.shape();
    if h.len() != m {
        return Err(Error::Dimension {
            context: "ldp",
            expected: format!("rhs of length {m}"),
            found: format!("length {}", h.len()),
        });
    }
    // Lawson-Hanson reduction: NNLS on e = [g^T; h^T], f = e_{n+1}.
    let mut e = DMatrix::zeros(n + 1, m);
    for i in 0..m {
        for j in 0..n {
            e[(j, i)] = g[(i, j)];
        }
        e[(n, i)] = h[i];
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let u = nnls(&e, &f)?;
    let r = &e * &u - &f;
    if r.norm() <= 1e-10 || r[n] >= -1e-14 {
        return Ok(None);
    }
    let denom = r[n];
    Ok(Some(DVector::from_fn(n, |j, _| -r[j] / denom)))
}

/// Minimal-Euclidean-norm `lambda` with `w lambda = rho`, `sum lambda = 1`,
/// `lambda >= 0`. Returns `None` when no such combination exists.
pub fn min_norm_convex_combination(
    w: &DMatrix<f64>,
    rho: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    let (r, nv) = w.shape();
    if rho.len() != r {
        return Err(Error::Dimension {
            context: "barycentric system",
            expected: format!("point of length {r}"),
            found: format!("length {}", rho.len()),
        });
    }
    let mut a = DMatrix::zeros(r + 1, nv);
    a.view_mut((0, 0), (r, nv)).copy_from(w);
    for j in 0..nv {
        a[(r, j)] = 1.0;
    }
    let mut b = DVector::zeros(r + 1);
    b.rows_mut(0, r).copy_from(rho);
    b[r] = 1.0;

    let scale = a.amax().max(1.0);
    // Minimal-norm particular solution; it lies in the row space of `a`, so
    // it is orthogonal to the null space and minimizing |y| below also
    // minimizes |lambda|.
    let svd = a.clone().svd(true, true);
    let lambda_p = svd
        .solve(&b, 1e-12 * scale)
        .map_err(|msg| Error::NumericalBreakdown(msg.to_string()))?;
    // An inconsistent system means rho is not even in the affine hull.
    if (&a * &lambda_p - &b).amax() > 1e-7 * scale.max(rho.amax()) {
        return Ok(None);
    }

    // Orthonormal null-space basis from the spectral decomposition of a^T a.
    let gram = a.transpose() * &a;
    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.amax().max(1e-300);
    let mut null_cols: Vec<usize> = (0..nv)
        .filter(|&i| eig.eigenvalues[i] <= 1e-12 * lam_max * (nv as f64))
        .collect();
    null_cols.sort_unstable();
    if null_cols.is_empty() {
        return Ok(if lambda_p.min() >= -1e-10 {
            Some(lambda_p.map(|v| v.max(0.0)))
        } else {
            None
        });
    }
    let z = eig.eigenvectors.select_columns(null_cols.iter());
    match ldp(&z, &(-&lambda_p))? {
        None => Ok(None),
        Some(y) => Ok(Some(&lambda_p + &z * y)),
    }
}

/// Euclidean projection of `rho` onto the convex hull of the columns of `w`.
/// Returns `(lambda, w * lambda)`.
///
/// The simplex constraint is enforced by a quadratic penalty, turning the
/// projection into one NNLS solve on `[w; mu 1^T]`; the penalty error is
/// `O(scale / mu^2)` and the weights are renormalized afterwards.
pub fn project_to_hull(
    w: &DMatrix<f64>,
    rho: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (r, nv) = w.shape();
    if rho.len() != r {
        return Err(Error::Dimension {
            context: "hull projection",
            expected: format!("point of length {r}"),
            found: format!("length {}", rho.len()),
        });
    }
    if nv == 1 {
        return Ok((DVector::from_element(1, 1.0), w.column(0).into_owned()));
    }
    let scale = w.amax().max(rho.amax()).max(1.0);
    let mu = 1e4 * scale;

    let mut e = DMatrix::zeros(r + 1, nv);
    e.view_mut((0, 0), (r, nv)).copy_from(w);
    for j in 0..nv {
        e[(r, j)] = mu;
    }
    let mut f = DVector::zeros(r + 1);
    f.rows_mut(0, r).copy_from(rho);
    f[r] = mu;

    let mut lambda = nnls(&e, &f)?;
    let total = lambda.sum();
    if total <= 1e-8 {
        return Err(Error::NumericalBreakdown("projection produced zero weights".into()));
    }
    lambda /= total;
    let point = w * &lambda;
    Ok((lambda, point))
}
