//! Scheduling-parameter polytopes: bounding boxes, PCA-rotated boxes,
//! GA-optimized polytopes, membership, volume, and barycentric coordinates.
//!
//! Vertices are stored in the polytope's own frame; `u_pc` (identity when
//! absent) maps that frame to ambient coordinates. Hulls are never
//! enumerated facet-wise: membership and vertex identification are LP-based
//! and volume is Monte Carlo, which stays tractable in any dimension the
//! scheduling parameter realistically takes.

mod ga;
mod nnls;
mod simplex_lp;
mod volume;

pub use ga::{optimize_polytope, GaParams};
pub use volume::polytope_volume;

pub(crate) use nnls::{min_norm_convex_combination, project_to_hull};
pub(crate) use simplex_lp::membership_lp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::seed::matrix_digest;

/// Hard cap on the parameter dimension for vertex enumeration (2^r).
pub const MAX_BOX_DIM: usize = 20;

/// Default membership tolerance on the infinity-norm reconstruction defect.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolytopeKind {
    Box,
    PcaBox,
    Optimized,
}

/// Where a polytope came from: digest of the generating point cloud and the
/// seed of any randomized step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ParamPolytope {
    /// Ambient parameter dimension.
    pub r: usize,
    /// Vertex columns in the polytope's own frame.
    pub vertices: DMatrix<f64>,
    pub kind: PolytopeKind,
    /// Rotation from own frame to ambient; identity when `None`.
    pub u_pc: Option<DMatrix<f64>>,
    pub provenance: Provenance,
    /// Set when an optimizer returned its fallback rather than a winner.
    pub fallback: bool,
    pub notes: Vec<String>,
}

impl ParamPolytope {
    /// Validating constructor, used by deserialization and tests. Box kinds
    /// must carry exactly 2^r vertices in Gray-code order.
    pub fn from_vertices(
        vertices: DMatrix<f64>,
        kind: PolytopeKind,
        u_pc: Option<DMatrix<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let r = vertices.nrows();
        if r == 0 || vertices.ncols() == 0 {
            return Err(Error::Dimension {
                context: "polytope vertices",
                expected: "nonempty vertex matrix".into(),
                found: format!("{}x{}", r, vertices.ncols()),
            });
        }
        if let Some(u) = &u_pc {
            if u.shape() != (r, r) {
                return Err(Error::Dimension {
                    context: "polytope rotation",
                    expected: format!("{r}x{r}"),
                    found: format!("{}x{}", u.nrows(), u.ncols()),
                });
            }
            let defect = (u.transpose() * u - DMatrix::identity(r, r)).amax();
            if defect > 1e-10 {
                return Err(Error::NumericalBreakdown(format!(
                    "rotation not orthogonal (defect {defect:.3e})"
                )));
            }
        }
        if matches!(kind, PolytopeKind::Box | PolytopeKind::PcaBox) {
            if r > MAX_BOX_DIM {
                return Err(Error::DimensionTooLarge(r));
            }
            let expect = 1usize << r;
            if vertices.ncols() != expect {
                return Err(Error::Dimension {
                    context: "box vertices",
                    expected: format!("{expect} columns"),
                    found: format!("{}", vertices.ncols()),
                });
            }
            let (lo, hi) = cloud_bounds(&vertices);
            let rebuilt = gray_box_vertices(&lo, &hi);
            if (&rebuilt - &vertices).amax() > 0.0 {
                return Err(Error::NumericalBreakdown(
                    "box vertices are not an axis-aligned Gray-code enumeration".into(),
                ));
            }
        }
        Ok(ParamPolytope {
            r,
            vertices,
            kind,
            u_pc,
            provenance,
            fallback: false,
            notes: Vec::new(),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn is_box(&self) -> bool {
        matches!(self.kind, PolytopeKind::Box | PolytopeKind::PcaBox)
    }

    /// Ambient point expressed in the polytope's own frame.
    pub fn to_own_frame(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        if rho.len() != self.r {
            return Err(Error::Dimension {
                context: "polytope query",
                expected: format!("point of length {}", self.r),
                found: format!("length {}", rho.len()),
            });
        }
        Ok(match &self.u_pc {
            Some(u) => u.transpose() * rho,
            None => rho.clone(),
        })
    }

    /// Own-frame point expressed in ambient coordinates.
    pub fn to_ambient(&self, own: &DVector<f64>) -> DVector<f64> {
        match &self.u_pc {
            Some(u) => u * own,
            None => own.clone(),
        }
    }

    /// Vertex columns in ambient coordinates.
    pub fn ambient_vertices(&self) -> DMatrix<f64> {
        match &self.u_pc {
            Some(u) => u * &self.vertices,
            None => self.vertices.clone(),
        }
    }

    /// Per-axis vertex bounds in the own frame.
    pub fn own_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        cloud_bounds(&self.vertices)
    }

    /// Infinity-norm defect of the best convex reconstruction of `rho`
    /// (zero inside, positive outside).
    pub fn membership_defect(&self, rho: &DVector<f64>) -> Result<f64> {
        let own = self.to_own_frame(rho)?;
        if self.is_box() {
            let (lo, hi) = self.own_bounds();
            let mut defect = 0.0f64;
            for i in 0..self.r {
                defect = defect.max(lo[i] - own[i]).max(own[i] - hi[i]);
            }
            Ok(defect.max(0.0))
        } else {
            Ok(membership_lp(&self.vertices, &own)?.0)
        }
    }

    /// Membership test: a convex combination reconstructs `rho` within
    /// `tol` in the infinity norm. For box kinds the LP reduces to the
    /// componentwise bound check, which is used directly.
    pub fn contains(&self, rho: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.membership_defect(rho)? <= tol)
    }

    /// Barycentric coordinates of `rho`: multilinear for boxes, minimal
    /// Euclidean norm for general polytopes. Points outside the polytope
    /// (beyond the membership tolerance) raise `OutsideDomain`.
    pub fn barycentric(&self, rho: &DVector<f64>) -> Result<DVector<f64>> {
        let own = self.to_own_frame(rho)?;
        let lambda = if self.is_box() {
            let defect = self.membership_defect(rho)?;
            if defect > MEMBERSHIP_TOL {
                return Err(Error::OutsideDomain { violation: defect });
            }
            let (lo, hi) = self.own_bounds();
            box_barycentric(&lo, &hi, &own)
        } else {
            match min_norm_convex_combination(&self.vertices, &own)? {
                Some(l) => l,
                None => {
                    let (defect, _) = membership_lp(&self.vertices, &own)?;
                    return Err(Error::OutsideDomain {
                        violation: defect.max(MEMBERSHIP_TOL),
                    });
                }
            }
        };
        // Contract checks shared by both paths.
        let residual = (&self.vertices * &lambda - &own).amax();
        if residual > MEMBERSHIP_TOL {
            return Err(Error::OutsideDomain { violation: residual });
        }
        let sum_defect = (lambda.sum() - 1.0).abs();
        if sum_defect > 1e-10 || lambda.min() < -1e-10 {
            return Err(Error::NumericalBreakdown(format!(
                "barycentric weights outside contract (sum defect {sum_defect:.3e}, min {:.3e})",
                lambda.min()
            )));
        }
        Ok(lambda)
    }

    /// Euclidean projection onto the polytope; returns the weights and the
    /// projected ambient point. Boxes project by componentwise clamping.
    pub fn project(&self, rho: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let own = self.to_own_frame(rho)?;
        if self.is_box() {
            let (lo, hi) = self.own_bounds();
            let clamped = DVector::from_fn(self.r, |i, _| own[i].clamp(lo[i], hi[i]));
            let lambda = box_barycentric(&lo, &hi, &clamped);
            return Ok((lambda, self.to_ambient(&clamped)));
        }
        let (lambda, point_own) = project_to_hull(&self.vertices, &own)?;
        Ok((lambda, self.to_ambient(&point_own)))
    }
}

/// Per-axis minima and maxima of a point cloud's columns.
pub(crate) fn cloud_bounds(points: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let (r, n) = points.shape();
    let mut lo = DVector::from_element(r, f64::INFINITY);
    let mut hi = DVector::from_element(r, f64::NEG_INFINITY);
    for j in 0..n {
        for i in 0..r {
            let v = points[(i, j)];
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    (lo, hi)
}

/// Applies the margin and the degenerate-axis policy to raw bounds.
pub(crate) fn expand_bounds(
    lo: &mut DVector<f64>,
    hi: &mut DVector<f64>,
    margin: f64,
) {
    let r = lo.len();
    let mut max_range = 0.0f64;
    for i in 0..r {
        max_range = max_range.max(hi[i] - lo[i]);
    }
    let delta = (1e-3 * max_range).max(1e-6);
    for i in 0..r {
        let range = hi[i] - lo[i];
        if range <= 1e-12 * lo[i].abs().max(hi[i].abs()).max(1.0) {
            lo[i] -= delta;
            hi[i] += delta;
        } else {
            lo[i] -= margin * range;
            hi[i] += margin * range;
        }
    }
}

/// Corners of `[lo, hi]` enumerated in Gray-code order, so consecutive
/// vertices differ along exactly one axis.
pub(crate) fn gray_box_vertices(lo: &DVector<f64>, hi: &DVector<f64>) -> DMatrix<f64> {
    let r = lo.len();
    let n = 1usize << r;
    DMatrix::from_fn(r, n, |i, j| {
        let g = j ^ (j >> 1);
        if (g >> i) & 1 == 1 {
            hi[i]
        } else {
            lo[i]
        }
    })
}

/// Multilinear box weights in the same Gray-code order as the vertices.
fn box_barycentric(lo: &DVector<f64>, hi: &DVector<f64>, own: &DVector<f64>) -> DVector<f64> {
    let r = lo.len();
    let t = DVector::from_fn(r, |i, _| {
        let side = hi[i] - lo[i];
        if side > 0.0 {
            ((own[i] - lo[i]) / side).clamp(0.0, 1.0)
        } else {
            0.5
        }
    });
    DVector::from_fn(1usize << r, |j, _| {
        let g = j ^ (j >> 1);
        let mut w = 1.0;
        for i in 0..r {
            w *= if (g >> i) & 1 == 1 { t[i] } else { 1.0 - t[i] };
        }
        w
    })
}

/// Axis-aligned bounding box of a point cloud, expanded by `margin` times
/// the per-axis range on each side (degenerate axes by an absolute delta).
pub fn bounding_box(points: &DMatrix<f64>, margin: f64) -> Result<ParamPolytope> {
    let (r, n) = points.shape();
    if r == 0 || n == 0 {
        return Err(Error::Dimension {
            context: "bounding box",
            expected: "nonempty point cloud".into(),
            found: format!("{r}x{n}"),
        });
    }
    if r > MAX_BOX_DIM {
        return Err(Error::DimensionTooLarge(r));
    }
    let (mut lo, mut hi) = cloud_bounds(points);
    expand_bounds(&mut lo, &mut hi, margin);
    Ok(ParamPolytope {
        r,
        vertices: gray_box_vertices(&lo, &hi),
        kind: PolytopeKind::Box,
        u_pc: None,
        provenance: Provenance {
            source_digest: matrix_digest(points),
            seed: 0,
        },
        fallback: false,
        notes: Vec::new(),
    })
}

/// PCA-rotated bounding box plus the matching retransformation of the
/// affine coefficient matrices: `A_pc,i = sum_j U_ji A_j`.
pub fn pca_box(
    points: &DMatrix<f64>,
    a_list: &[DMatrix<f64>],
) -> Result<(ParamPolytope, Vec<DMatrix<f64>>)> {
    let (r, n) = points.shape();
    if r == 0 || n == 0 {
        return Err(Error::Dimension {
            context: "pca box",
            expected: "nonempty point cloud".into(),
            found: format!("{r}x{n}"),
        });
    }
    if r > MAX_BOX_DIM {
        return Err(Error::DimensionTooLarge(r));
    }
    if a_list.len() != r {
        return Err(Error::Dimension {
            context: "pca box coefficients",
            expected: format!("{r} matrices"),
            found: format!("{}", a_list.len()),
        });
    }
    for a in a_list {
        if a.shape() != a_list[0].shape() || a.nrows() != a.ncols() {
            return Err(Error::Dimension {
                context: "pca box coefficients",
                expected: "square matrices of one size".into(),
                found: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
    }

    let mean = points.column_mean();
    let mut cov = DMatrix::zeros(r, r);
    if n > 1 {
        for j in 0..n {
            let d = points.column(j) - &mean;
            cov.ger(1.0 / (n as f64 - 1.0), &d, &d, 1.0);
        }
    }

    let mut notes = Vec::new();
    let scale = cov.amax();
    let u = if scale <= 1e-14 {
        notes.push("zero-variance cloud: falling back to the identity rotation".into());
        DMatrix::identity(r, r)
    } else {
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
                .then(a.cmp(&b))
        });
        let mut u = DMatrix::zeros(r, r);
        for (col, &src) in order.iter().enumerate() {
            u.set_column(col, &eig.eigenvectors.column(src));
            let mut pivot = 0;
            for i in 1..r {
                if u[(i, col)].abs() > u[(pivot, col)].abs() {
                    pivot = i;
                }
            }
            if u[(pivot, col)] < 0.0 {
                for i in 0..r {
                    u[(i, col)] = -u[(i, col)];
                }
            }
        }
        u
    };

    let rotated = u.transpose() * points;
    let (mut lo, mut hi) = cloud_bounds(&rotated);
    expand_bounds(&mut lo, &mut hi, 0.0);
    let poly = ParamPolytope {
        r,
        vertices: gray_box_vertices(&lo, &hi),
        kind: PolytopeKind::PcaBox,
        u_pc: Some(u.clone()),
        provenance: Provenance {
            source_digest: matrix_digest(points),
            seed: 0,
        },
        fallback: false,
        notes,
    };

    let (m, _) = a_list[0].shape();
    let mut transformed = Vec::with_capacity(r);
    for i in 0..r {
        let mut acc = DMatrix::zeros(m, m);
        for (j, aj) in a_list.iter().enumerate() {
            let w = u[(j, i)];
            acc.zip_apply(aj, |out, v| *out += w * v);
        }
        transformed.push(acc);
    }
    Ok((poly, transformed))
}

/// Indices of the points that are vertices of the convex hull: a point is a
/// vertex exactly when it is not a convex combination of the others.
/// Duplicate points keep their first occurrence only.
pub fn hull_vertex_filter(points: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (r, n) = points.shape();
    if r == 0 || n == 0 {
        return Err(Error::Dimension {
            context: "hull filter",
            expected: "nonempty point cloud".into(),
            found: format!("{r}x{n}"),
        });
    }
    let scale = points.amax().max(1.0);
    let mut unique: Vec<usize> = Vec::new();
    for j in 0..n {
        let dup = unique.iter().any(|&u| {
            (points.column(j) - points.column(u)).amax() <= 1e-12 * scale
        });
        if !dup {
            unique.push(j);
        }
    }
    if unique.len() == 1 {
        return Ok(unique);
    }

    let cloud = points.select_columns(unique.iter());
    let votes = par::map_indexed(unique.len(), |m| {
        let others: Vec<usize> = (0..unique.len()).filter(|&j| j != m).collect();
        let rest = cloud.select_columns(others.iter());
        let point = cloud.column(m).into_owned();
        let (defect, _) = membership_lp(&rest, &point).expect("well-formed membership LP");
        defect > MEMBERSHIP_TOL
    });
    Ok(unique
        .into_iter()
        .zip(votes)
        .filter_map(|(idx, keep)| keep.then_some(idx))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pod::{build_affine_lpv, pod_basis};
    use crate::sdc::make_benchmark;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn demo_provenance() -> Provenance {
        Provenance { source_digest: "test".into(), seed: 0 }
    }

    fn random_cloud(r: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        DMatrix::from_fn(r, n, |_, _| rng.gen_range(-1.0..1.5))
    }

    #[test]
    fn bounding_box_enumerates_gray_code_corners() {
        let cloud = random_cloud(6, 40, 1);
        let poly = bounding_box(&cloud, 0.05).unwrap();
        assert_eq!(poly.n_vertices(), 64);
        assert_eq!(poly.kind, PolytopeKind::Box);
        // Consecutive Gray-code vertices differ along exactly one axis.
        for j in 1..poly.n_vertices() {
            let diff = poly.vertices.column(j) - poly.vertices.column(j - 1);
            let changed = (0..6).filter(|&i| diff[i] != 0.0).count();
            assert_eq!(changed, 1, "columns {} and {}", j - 1, j);
        }
        // Every generating point is contained.
        for j in 0..cloud.ncols() {
            let p = cloud.column(j).into_owned();
            assert!(poly.contains(&p, MEMBERSHIP_TOL).unwrap());
        }
    }

    #[test]
    fn single_point_box_has_absolute_width() {
        let p = DMatrix::from_vec(3, 1, vec![0.4, -0.2, 1.0]);
        let poly = bounding_box(&p, 0.0).unwrap();
        let (lo, hi) = poly.own_bounds();
        for i in 0..3 {
            assert_relative_eq!(hi[i] - lo[i], 2e-6, epsilon = 1e-12);
            assert_relative_eq!((hi[i] + lo[i]) / 2.0, p[(i, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn vertex_enumeration_refuses_large_dimensions() {
        let cloud = DMatrix::zeros(21, 3);
        assert!(matches!(
            bounding_box(&cloud, 0.0),
            Err(Error::DimensionTooLarge(21))
        ));
    }

    #[test]
    fn box_membership_matches_componentwise_bounds() {
        let cloud = random_cloud(3, 25, 2);
        let poly = bounding_box(&cloud, 0.0).unwrap();
        let (lo, hi) = poly.own_bounds();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let p = DVector::from_fn(3, |i, _| {
                lo[i] - 0.3 + rng.gen_range(0.0..1.0) * (hi[i] - lo[i] + 0.6)
            });
            let closed_form = (0..3).all(|i| p[i] >= lo[i] - 1e-8 && p[i] <= hi[i] + 1e-8);
            assert_eq!(poly.contains(&p, MEMBERSHIP_TOL).unwrap(), closed_form);
        }
        // A point outside by twice the tolerance is rejected.
        let mut outside = poly.to_ambient(&lo);
        outside[0] = lo[0] - 2.0 * MEMBERSHIP_TOL;
        assert!(!poly.contains(&outside, MEMBERSHIP_TOL).unwrap());
        // Vertices are members.
        let verts = poly.ambient_vertices();
        for j in 0..poly.n_vertices() {
            assert!(poly.contains(&verts.column(j).into_owned(), MEMBERSHIP_TOL).unwrap());
        }
    }

    #[test]
    fn general_membership_uses_the_lp() {
        let tri = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let poly = ParamPolytope::from_vertices(
            tri,
            PolytopeKind::Optimized,
            None,
            demo_provenance(),
        )
        .unwrap();
        assert!(poly.contains(&DVector::from_vec(vec![0.2, 0.2]), 1e-8).unwrap());
        assert!(!poly.contains(&DVector::from_vec(vec![0.7, 0.7]), 1e-8).unwrap());
        assert!(poly.contains(&DVector::from_vec(vec![1.0, 0.0]), 1e-8).unwrap());
    }

    #[test]
    fn pca_box_recovers_axis_alignment_up_to_signed_permutation() {
        let mut rng = StdRng::seed_from_u64(4);
        // Whiten a random cloud, then stretch per axis: the sample
        // covariance becomes exactly diagonal with distinct entries, the
        // eigen-decomposition oracle for a signed-permutation rotation.
        let raw = DMatrix::from_fn(3, 400, |_, _| rng.gen_range(-1.0..1.0f64));
        let mean = raw.column_mean();
        let mut centered = raw.clone();
        for j in 0..400 {
            let mut col = centered.column_mut(j);
            col -= &mean;
        }
        let cov = &centered * centered.transpose() / 399.0;
        let eig = cov.symmetric_eigen();
        let mut white_map = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let q = eig.eigenvectors.column(k);
            white_map.ger(1.0 / eig.eigenvalues[k].sqrt(), &q, &q, 1.0);
        }
        let scales = [3.0, 1.0, 0.2];
        let mut cloud = white_map * centered;
        for i in 0..3 {
            for j in 0..400 {
                cloud[(i, j)] *= scales[i];
            }
        }
        let a_list: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let (poly, a_pc) = pca_box(&cloud, &a_list).unwrap();
        let u = poly.u_pc.clone().unwrap();
        // Orthogonality and signed-permutation structure.
        let defect = (u.transpose() * &u - DMatrix::identity(3, 3)).amax();
        assert!(defect <= 1e-10);
        for col in 0..3 {
            let mut big = 0;
            for i in 0..3 {
                if u[(i, col)].abs() > 0.999_999 {
                    big += 1;
                } else {
                    assert!(u[(i, col)].abs() < 1e-6, "not a signed permutation: {}", u[(i, col)]);
                }
            }
            assert_eq!(big, 1);
        }
        // The rotated box matches the plain bounding box up to vertex order.
        let plain = bounding_box(&cloud, 0.0).unwrap();
        let (lo_a, hi_a) = plain.own_bounds();
        let ambient = poly.ambient_vertices();
        let (lo_b, hi_b) = cloud_bounds(&ambient);
        for i in 0..3 {
            assert_relative_eq!(lo_a[i], lo_b[i], epsilon = 1e-8);
            assert_relative_eq!(hi_a[i], hi_b[i], epsilon = 1e-8);
        }
        // Reparametrization identity on random parameters.
        for _ in 0..50 {
            let rho = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let rho_pc = u.transpose() * &rho;
            let mut lhs: DMatrix<f64> = DMatrix::zeros(4, 4);
            let mut rhs: DMatrix<f64> = DMatrix::zeros(4, 4);
            for i in 0..3 {
                lhs.zip_apply(&a_list[i], |out, v| *out += rho[i] * v);
                rhs.zip_apply(&a_pc[i], |out, v| *out += rho_pc[i] * v);
            }
            assert!((lhs - rhs).amax() <= 1e-10);
        }
    }

    #[test]
    fn pca_coefficients_equal_operator_on_rotated_modes() {
        // A_pc,i must equal L(v_pc,i) where v_pc,i is the i-th column of
        // V_r U_pc; linearity of L makes this an end-to-end consistency
        // check against the SDC module.
        let mut p = BTreeMap::new();
        p.insert("n".to_string(), 16.0);
        let sys = make_benchmark("burgers", &p).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        let snap = DMatrix::from_fn(16, 60, |_, _| rng.gen_range(-1.0..1.0));
        let basis = pod_basis(&snap, 6).unwrap();
        let model = build_affine_lpv(&sys, &basis, 6, 3).unwrap();

        let cloud = DMatrix::from_fn(3, 300, |i, _| {
            [2.0, 0.7, 0.3][i] * rng.gen_range(-1.0..1.0) + 0.1 * rng.gen_range(-1.0..1.0)
        });
        let full = model.full_ai.clone().unwrap();
        let (poly, a_pc) = pca_box(&cloud, &full).unwrap();
        let u = poly.u_pc.clone().unwrap();
        for i in 0..3 {
            let v_pc = &model.v_r * u.column(i);
            let direct = sys.quad.coefficient_matrix(&v_pc.into_owned());
            assert!((&a_pc[i] - &direct).amax() <= 1e-10, "column {i}");
        }
    }

    #[test]
    fn pca_box_flags_zero_variance_clouds() {
        let cloud = DMatrix::from_fn(3, 5, |i, _| [1.0, 2.0, 3.0][i]);
        let a_list: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::identity(2, 2)).collect();
        let (poly, _) = pca_box(&cloud, &a_list).unwrap();
        assert_eq!(poly.u_pc.clone().unwrap(), DMatrix::identity(3, 3));
        assert!(!poly.notes.is_empty());
        // Degenerate axes still contain the generating points.
        let p = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(poly.contains(&p, MEMBERSHIP_TOL).unwrap());
    }

    #[test]
    fn hull_filter_keeps_square_corners_and_simplex_vertices() {
        let pts = DMatrix::from_row_slice(
            2,
            5,
            &[0.0, 1.0, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0, 1.0, 0.5],
        );
        assert_eq!(hull_vertex_filter(&pts).unwrap(), vec![0, 1, 2, 3]);

        let simplex = DMatrix::from_row_slice(
            3,
            4,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert_eq!(hull_vertex_filter(&simplex).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn hull_filter_matches_independent_nnls_oracle() {
        let cloud = random_cloud(3, 50, 7);
        let filtered = hull_vertex_filter(&cloud).unwrap();
        // Oracle: vertex iff the NNLS residual of expressing the point as a
        // convex combination of the others stays positive.
        let mut oracle = Vec::new();
        for m in 0..50 {
            let others: Vec<usize> = (0..50).filter(|&j| j != m).collect();
            let rest = cloud.select_columns(others.iter());
            let target = cloud.column(m).into_owned();
            let lambda =
                min_norm_convex_combination(&rest, &target).unwrap();
            let inside = match lambda {
                Some(l) => (&rest * &l - &target).amax() <= 1e-8,
                None => false,
            };
            if !inside {
                oracle.push(m);
            }
        }
        assert_eq!(filtered, oracle);
    }

    #[test]
    fn hull_filter_drops_duplicate_points() {
        let pts = DMatrix::from_row_slice(
            2,
            5,
            &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        );
        // Column 4 duplicates column 3; only the first occurrence stays.
        assert_eq!(hull_vertex_filter(&pts).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn box_barycentric_weights_are_multilinear() {
        let cloud = random_cloud(3, 30, 8);
        let poly = bounding_box(&cloud, 0.1).unwrap();
        let verts = poly.ambient_vertices();
        // Vertices map to unit weight on themselves.
        for j in 0..poly.n_vertices() {
            let lambda = poly.barycentric(&verts.column(j).into_owned()).unwrap();
            assert_relative_eq!(lambda[j], 1.0, epsilon = 1e-12);
            assert_relative_eq!(lambda.sum(), 1.0, epsilon = 1e-12);
        }
        // The center weighs every vertex equally.
        let (lo, hi) = poly.own_bounds();
        let center = poly.to_ambient(&DVector::from_fn(3, |i, _| 0.5 * (lo[i] + hi[i])));
        let lambda = poly.barycentric(&center).unwrap();
        for j in 0..8 {
            assert_relative_eq!(lambda[j], 0.125, epsilon = 1e-12);
        }
        // Random interior points reconstruct.
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..50 {
            let own = DVector::from_fn(3, |i, _| lo[i] + rng.gen_range(0.0..1.0) * (hi[i] - lo[i]));
            let p = poly.to_ambient(&own);
            let lambda = poly.barycentric(&p).unwrap();
            let rebuilt = poly.to_ambient(&(&poly.vertices * &lambda));
            assert!((rebuilt - &p).amax() <= 1e-8);
        }
    }

    #[test]
    fn barycentric_rejects_outside_points_with_magnitude() {
        let cloud = random_cloud(3, 30, 12);
        let poly = bounding_box(&cloud, 0.0).unwrap();
        let (lo, hi) = poly.own_bounds();
        let mut outside = DVector::from_fn(3, |i, _| 0.5 * (lo[i] + hi[i]));
        outside[1] = hi[1] + 0.25;
        match poly.barycentric(&poly.to_ambient(&outside)) {
            Err(Error::OutsideDomain { violation }) => {
                assert_relative_eq!(violation, 0.25, epsilon = 1e-9);
            }
            other => panic!("expected OutsideDomain, got {other:?}"),
        }
    }

    #[test]
    fn general_barycentric_meets_contract_on_interior_points() {
        let verts = DMatrix::from_row_slice(
            3,
            5,
            &[
                0.0, 2.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 2.0, 0.0, 1.0, //
                0.0, 0.0, 0.0, 2.0, 1.5,
            ],
        );
        let poly = ParamPolytope::from_vertices(
            verts.clone(),
            PolytopeKind::Optimized,
            None,
            demo_provenance(),
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(20);
        for _ in 0..200 {
            // Random convex combinations are interior or boundary points.
            let mut w = DVector::from_fn(5, |_, _| rng.gen_range(0.0..1.0f64));
            w /= w.sum();
            let p = &verts * &w;
            let lambda = poly.barycentric(&p).unwrap();
            assert!((&verts * &lambda - &p).amax() <= 1e-8);
            assert!((lambda.sum() - 1.0).abs() <= 1e-10);
            assert!(lambda.min() >= -1e-10);
        }
    }

    #[test]
    fn rotated_boxes_contain_their_generators() {
        let mut rng = StdRng::seed_from_u64(30);
        // A tilted cloud so the PCA rotation is non-trivial.
        let cloud = DMatrix::from_fn(3, 200, |i, j| {
            let t = j as f64 / 199.0 * 2.0 - 1.0;
            match i {
                0 => 2.0 * t + 0.05 * rng.gen_range(-1.0..1.0),
                1 => t + 0.3 * rng.gen_range(-1.0..1.0),
                _ => 0.2 * rng.gen_range(-1.0..1.0),
            }
        });
        let a_list: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::identity(2, 2)).collect();
        let (poly, _) = pca_box(&cloud, &a_list).unwrap();
        for j in 0..cloud.ncols() {
            let p = cloud.column(j).into_owned();
            assert!(poly.contains(&p, MEMBERSHIP_TOL).unwrap(), "point {j} escaped");
        }
        // Barycentric round trip in the rotated frame.
        let p = cloud.column(17).into_owned();
        let lambda = poly.barycentric(&p).unwrap();
        let rebuilt = poly.to_ambient(&(&poly.vertices * &lambda));
        assert!((rebuilt - &p).amax() <= 1e-8);
    }

    #[test]
    fn from_vertices_validates_box_structure() {
        let bad = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.5, 0.0, 0.0, 1.0]);
        assert!(ParamPolytope::from_vertices(
            bad,
            PolytopeKind::Box,
            None,
            demo_provenance()
        )
        .is_err());
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let tri = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(ParamPolytope::from_vertices(
            tri,
            PolytopeKind::Optimized,
            Some(skew),
            demo_provenance()
        )
        .is_err());
    }
}
