//! Dense two-phase simplex with Bland's rule.
//!
//! Sized for the membership and feasibility LPs of this crate: a handful of
//! rows (2r + 1) and at most a few thousand columns. Bland's pivoting rule
//! rules out cycling, so the solver terminates without perturbation tricks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const COST_EPS: f64 = 1e-9;
const PIVOT_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub feasible: bool,
    pub objective: f64,
    pub x: DVector<f64>,
}

/// Minimizes `c^T x` subject to `A x = b`, `x >= 0`.
///
/// `b` may have any sign; rows are normalized internally. Returns
/// `feasible = false` when phase 1 cannot reach the constraint set.
pub fn solve_equality_lp(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<LpOutcome> {
    let (m, n) = a.shape();
    if b.len() != m || c.len() != n {
        return Err(Error::Dimension {
            context: "linear program",
            expected: format!("b of length {m}, c of length {n}"),
            found: format!("b of length {}, c of length {}", b.len(), c.len()),
        });
    }

    // Tableau columns: n structural, m artificial, then the right-hand side.
    let cols = n + m + 1;
    let rhs = n + m;
    let mut t = DMatrix::zeros(m, cols);
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = flip * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, rhs)] = flip * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase 1: minimize the sum of artificials. Reduced costs start as the
    // negated column sums because every basic (artificial) cost is one.
    let mut cost = DVector::zeros(cols);
    for j in 0..cols {
        let mut s = 0.0;
        for i in 0..m {
            s += t[(i, j)];
        }
        cost[j] = if (n..n + m).contains(&j) { 1.0 - s } else { -s };
    }
    let max_pivots = 200 * (m + n) + 200;
    run_simplex(&mut t, &mut cost, &mut basis, n + m, max_pivots)?;
    let phase1 = -cost[rhs];
    let b_scale = b.amax().max(1.0);
    if phase1 > 1e-8 * b_scale {
        return Ok(LpOutcome {
            feasible: false,
            objective: phase1,
            x: DVector::zeros(n),
        });
    }

    // Drive zero-valued artificials out of the basis where a structural
    // pivot exists; rows without one are redundant and stay inert because
    // their structural entries are all zero.
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[(i, j)].abs() > PIVOT_EPS) {
                pivot(&mut t, &mut cost, &mut basis, i, j);
            }
        }
    }

    // Phase 2: real costs priced against the current basis.
    for j in 0..cols {
        cost[j] = if j < n { c[j] } else { 0.0 };
    }
    let mut obj = 0.0;
    for i in 0..m {
        let cb = if basis[i] < n { c[basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..cols {
                cost[j] -= cb * t[(i, j)];
            }
            obj += cb * t[(i, rhs)];
        }
    }
    cost[rhs] = -obj;
    run_simplex(&mut t, &mut cost, &mut basis, n, max_pivots)?;

    let mut x = DVector::zeros(n);
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[(i, rhs)];
        }
    }
    Ok(LpOutcome {
        feasible: true,
        objective: c.dot(&x),
        x,
    })
}

/// Pivots to optimality. Columns at index `limit` and beyond never enter
/// (artificials in phase 2, everything past them always).
fn run_simplex(
    t: &mut DMatrix<f64>,
    cost: &mut DVector<f64>,
    basis: &mut [usize],
    limit: usize,
    max_pivots: usize,
) -> Result<()> {
    let m = t.nrows();
    let rhs = t.ncols() - 1;
    for _ in 0..max_pivots {
        // Bland: entering variable is the smallest improving index.
        let Some(enter) = (0..limit).find(|&j| cost[j] < -COST_EPS) else {
            return Ok(());
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let aij = t[(i, enter)];
            if aij > PIVOT_EPS {
                let ratio = t[(i, rhs)] / aij;
                // Bland again: among tied ratios take the smallest basis index.
                let better = ratio < best - 1e-12
                    || (ratio <= best + 1e-12 && leave.is_some_and(|l| basis[i] < basis[l]));
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return Err(Error::NumericalBreakdown("unbounded linear program".into()));
        };
        pivot(t, cost, basis, row, enter);
    }
    Err(Error::IterationLimit("simplex pivot budget exhausted".into()))
}

fn pivot(
    t: &mut DMatrix<f64>,
    cost: &mut DVector<f64>,
    basis: &mut [usize],
    row: usize,
    col: usize,
) {
    let m = t.nrows();
    let cols = t.ncols();
    let p = t[(row, col)];
    for j in 0..cols {
        t[(row, j)] /= p;
    }
    t[(row, col)] = 1.0;
    for i in 0..m {
        if i != row {
            let f = t[(i, col)];
            if f != 0.0 {
                for j in 0..cols {
                    t[(i, j)] -= f * t[(row, j)];
                }
                t[(i, col)] = 0.0;
            }
        }
    }
    let f = cost[col];
    if f != 0.0 {
        for j in 0..cols {
            cost[j] -= f * t[(row, j)];
        }
        cost[col] = 0.0;
    }
    basis[row] = col;
}

/// Distance of `rho` to the convex hull of the columns of `vertices` in the
/// scaled infinity norm: minimizes `t` over `lambda >= 0`, `sum lambda = 1`,
/// `|vertices * lambda - rho|_inf <= t`. Returns `(t*, lambda)`.
pub fn membership_lp(
    vertices: &DMatrix<f64>,
    rho: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let (r, nv) = vertices.shape();
    if rho.len() != r {
        return Err(Error::Dimension {
            context: "membership query",
            expected: format!("point of length {r}"),
            found: format!("length {}", rho.len()),
        });
    }
    if nv == 0 {
        return Err(Error::Dimension {
            context: "membership query",
            expected: "at least one vertex".into(),
            found: "empty vertex set".into(),
        });
    }
    // Work on O(1) numbers so the simplex tolerances stay meaningful.
    let scale = vertices.amax().max(rho.amax()).max(1e-300);

    // Variables: lambda (nv), t, slack_hi (r), slack_lo (r).
    let n = nv + 1 + 2 * r;
    let m = 2 * r + 1;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for i in 0..r {
        for j in 0..nv {
            a[(i, j)] = vertices[(i, j)] / scale;
            a[(r + i, j)] = -vertices[(i, j)] / scale;
        }
        a[(i, nv)] = -1.0;
        a[(r + i, nv)] = -1.0;
        a[(i, nv + 1 + i)] = 1.0;
        a[(r + i, nv + 1 + r + i)] = 1.0;
        b[i] = rho[i] / scale;
        b[r + i] = -rho[i] / scale;
    }
    for j in 0..nv {
        a[(2 * r, j)] = 1.0;
    }
    b[2 * r] = 1.0;
    let mut c = DVector::zeros(n);
    c[nv] = 1.0;

    let out = solve_equality_lp(&a, &b, &c)?;
    if !out.feasible {
        // Cannot happen: lambda = e_1 with a large t is always feasible.
        return Err(Error::NumericalBreakdown(
            "membership phase 1 failed on a feasible program".into(),
        ));
    }
    let lambda = DVector::from_fn(nv, |j, _| out.x[j].max(0.0));
    Ok((out.objective.max(0.0) * scale, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_a_small_known_program() {
        // min -x1 - 2 x2  s.t.  x1 + x2 + s = 4, x2 + u = 3, x >= 0.
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![4.0, 3.0]);
        let c = DVector::from_vec(vec![-1.0, -2.0, 0.0, 0.0]);
        let out = solve_equality_lp(&a, &b, &c).unwrap();
        assert!(out.feasible);
        assert_relative_eq!(out.objective, -7.0, epsilon = 1e-9);
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(out.x[1], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        // x1 + x2 = 2 and x1 + x2 = 1 cannot both hold.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 1.0]);
        let c = DVector::from_vec(vec![0.0, 0.0]);
        let out = solve_equality_lp(&a, &b, &c).unwrap();
        assert!(!out.feasible);
    }

    #[test]
    fn handles_negative_rhs_rows() {
        // -x1 = -2 with cost x1: objective 2.
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let b = DVector::from_vec(vec![-2.0]);
        let c = DVector::from_vec(vec![1.0]);
        let out = solve_equality_lp(&a, &b, &c).unwrap();
        assert!(out.feasible);
        assert_relative_eq!(out.x[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn membership_distance_is_zero_inside_and_positive_outside() {
        let square = DMatrix::from_row_slice(
            2,
            4,
            &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0],
        );
        let (t_in, lambda) = membership_lp(&square, &DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert!(t_in <= 1e-10, "center distance {t_in}");
        assert_relative_eq!(lambda.sum(), 1.0, epsilon = 1e-9);
        let (t_out, _) = membership_lp(&square, &DVector::from_vec(vec![1.5, 0.5])).unwrap();
        assert_relative_eq!(t_out, 0.5, epsilon = 1e-8);
        let (t_vertex, _) = membership_lp(&square, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(t_vertex <= 1e-10);
    }

    #[test]
    fn membership_scales_with_data_magnitude() {
        let seg = DMatrix::from_row_slice(1, 2, &[1e6, 3e6]);
        let (t, _) = membership_lp(&seg, &DVector::from_vec(vec![2e6])).unwrap();
        assert!(t <= 1e-4, "interior point of a huge segment, t = {t}");
        let (t, _) = membership_lp(&seg, &DVector::from_vec(vec![4e6])).unwrap();
        assert_relative_eq!(t, 1e6, epsilon = 1.0);
    }
}
