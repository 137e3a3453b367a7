//! Linear algebra of R^{2,2}, its hermitian complexification, and the
//! isometry group SO₀(2,2) acting on the AdS₃ quadric.
//!
//! Coordinates are ordered (x0, x1, x2, x3) with the form
//! `x0 y0 + x1 y1 - x2 y2 - x3 y3`, i.e. `J = diag(1, 1, -1, -1)`.
//!
//! The boundary quadric is identified with rank-one 2×2 matrices through
//!
//! ```text
//! M(x) = | x2 + x0   x1 + x3 |      det M(x) = -<x, x>
//!        | x1 - x3   x2 - x0 |
//! ```
//!
//! so an isometry acts as `M ↦ A M B⁻¹` with `(A, B) ∈ SL(2,R) × SL(2,R)`.
//! The left factor `A` moves the column vector `u` of `M = u wᵀ`; it acts on
//! the ruling containing the line through (1,0,1,0) and (0,1,0,1).

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// The Gram matrix of the (2,2) form.
pub fn form_matrix() -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, -1.0, -1.0))
}

/// A point of R^{2,2} in homogeneous coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec22(pub [f64; 4]);

impl Vec22 {
    pub const fn new(x0: f64, x1: f64, x2: f64, x3: f64) -> Self {
        Vec22([x0, x1, x2, x3])
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::from(self.0)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Vec22([v[0], v[1], v[2], v[3]])
    }

    pub fn norm_sq(self) -> f64 {
        bilinear_form(self, self)
    }

    pub fn is_ads_point(self, tol: f64) -> bool {
        (self.norm_sq() + 1.0).abs() <= tol
    }

    pub fn is_null(self, tol: f64) -> bool {
        self.norm_sq().abs() <= tol
    }

    /// The 2×2 matrix `M(x)` with `det M(x) = -<x,x>`.
    pub fn to_matrix2(self) -> Matrix2<f64> {
        let [x0, x1, x2, x3] = self.0;
        Matrix2::new(x2 + x0, x1 + x3, x1 - x3, x2 - x0)
    }

    pub fn from_matrix2(m: &Matrix2<f64>) -> Self {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        Vec22([(a - d) / 2.0, (b + c) / 2.0, (a + d) / 2.0, (b - c) / 2.0])
    }

    /// Null vector of the boundary point `u wᵀ` of the Segre quadric.
    pub fn segre(u: Vector2<f64>, w: Vector2<f64>) -> Self {
        Self::from_matrix2(&(u * w.transpose()))
    }
}

/// A vector of C⁴ carrying the hermitian extension of the (2,2) form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CVec4(pub [Complex64; 4]);

impl CVec4 {
    pub fn from_real(x: Vec22) -> Self {
        CVec4(x.0.map(|v| Complex64::new(v, 0.0)))
    }

    pub fn conj(self) -> Self {
        CVec4(self.0.map(|z| z.conj()))
    }
}

/// `x0 y0 + x1 y1 - x2 y2 - x3 y3`, evaluated left to right so that the
/// result is bitwise symmetric in its arguments.
pub fn bilinear_form(x: Vec22, y: Vec22) -> f64 {
    let (x, y) = (x.0, y.0);
    x[0] * y[0] + x[1] * y[1] - x[2] * y[2] - x[3] * y[3]
}

/// `z1 w̄1 + z2 w̄2 - z3 w̄3 - z4 w̄4`.
pub fn hermitian_form(z: CVec4, w: CVec4) -> Complex64 {
    let (z, w) = (z.0, w.0);
    z[0] * w[0].conj() + z[1] * w[1].conj() - z[2] * w[2].conj() - z[3] * w[3].conj()
}

/// Hermitian pairing of two columns of a complex 4×4 frame.
pub fn hermitian_columns(m: &Matrix4<Complex64>, a: usize, b: usize) -> Complex64 {
    let sign = [1.0, 1.0, -1.0, -1.0];
    (0..4).fold(Complex64::new(0.0, 0.0), |acc, k| {
        acc + m[(k, a)] * m[(k, b)].conj() * sign[k]
    })
}

/// Defects measured by [`is_isometry`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub passes: bool,
    /// `max |(mᵀ J m - J)_ij|`
    pub form_defect: f64,
    /// `|det m - 1|`
    pub det_defect: f64,
}

pub fn is_isometry(m: &Matrix4<f64>, tol: f64) -> IsometryReport {
    let j = form_matrix();
    let form_defect = (m.transpose() * j * m - j).amax();
    let det_defect = (m.determinant() - 1.0).abs();
    IsometryReport {
        passes: form_defect <= tol && det_defect <= tol,
        form_defect,
        det_defect,
    }
}

/// A matrix preserving the (2,2) form with unit determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Isometry22 {
    m: Matrix4<f64>,
}

impl Isometry22 {
    pub fn new(m: Matrix4<f64>, tol: f64) -> Result<Self> {
        let report = is_isometry(&m, tol);
        if !report.passes {
            return Err(LabError::Degenerate(format!(
                "not an isometry: form defect {:e}, det defect {:e}",
                report.form_defect, report.det_defect
            )));
        }
        Ok(Isometry22 { m })
    }

    /// Wraps a matrix without checking; callers record their own defects.
    pub fn from_matrix_unchecked(m: Matrix4<f64>) -> Self {
        Isometry22 { m }
    }

    pub fn identity() -> Self {
        Isometry22 {
            m: Matrix4::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn apply(&self, x: Vec22) -> Vec22 {
        Vec22::from_vector(&(self.m * x.to_vector()))
    }

    pub fn compose(&self, other: &Isometry22) -> Isometry22 {
        Isometry22 { m: self.m * other.m }
    }

    pub fn inverse(&self) -> Isometry22 {
        // m⁻¹ = J mᵀ J on the group
        let j = form_matrix();
        Isometry22 {
            m: j * self.m.transpose() * j,
        }
    }

    /// Rotation by `angle` in a coordinate plane of equal sign, (0,1) or (2,3).
    pub fn rotation(i: usize, j: usize, angle: f64) -> Self {
        assert!(
            matches!((i, j), (0, 1) | (2, 3)),
            "rotation planes are (0,1) or (2,3)"
        );
        let mut m = Matrix4::identity();
        let (s, c) = angle.sin_cos();
        m[(i, i)] = c;
        m[(j, j)] = c;
        m[(i, j)] = -s;
        m[(j, i)] = s;
        Isometry22 { m }
    }

    /// Boost with rapidity `s` in a mixed-sign plane `(i, j)`, `i ∈ {0,1}`, `j ∈ {2,3}`.
    pub fn boost(i: usize, j: usize, s: f64) -> Self {
        assert!(i < 2 && (2..4).contains(&j), "boost planes mix signs");
        let mut m = Matrix4::identity();
        m[(i, i)] = s.cosh();
        m[(j, j)] = s.cosh();
        m[(i, j)] = s.sinh();
        m[(j, i)] = s.sinh();
        Isometry22 { m }
    }
}

/// Membership predicate for the domain of discontinuity, evaluated on a
/// finite sample of the boundary curve: true iff `<x, c> ≠ 0` for every
/// sample. `tol` is used both for the incidence test and for the null check
/// of the samples.
pub fn dual_plane_disjoint(x: Vec22, curve: &[Vec22], tol: f64) -> Result<bool> {
    if curve.is_empty() {
        return Err(LabError::Degenerate("empty boundary curve sample".into()));
    }
    for (index, c) in curve.iter().enumerate() {
        let n = c.norm_sq();
        if n.abs() > tol {
            return Err(LabError::NotNull { index, value: n });
        }
    }
    Ok(curve.iter().all(|c| bilinear_form(x, *c).abs() > tol))
}

/// The pair `(A, B)` with `M(m x) = A M(x) B⁻¹`, normalized to `det = 1`
/// and `tr A ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psl2Pair {
    pub left: Matrix2<f64>,
    pub right: Matrix2<f64>,
}

impl Psl2Pair {
    pub fn traces(&self) -> (f64, f64) {
        (self.left.trace(), self.right.trace())
    }

    /// The isometry whose boundary action is `M ↦ A M B⁻¹`.
    pub fn to_isometry(&self) -> Isometry22 {
        let b_inv = self
            .right
            .try_inverse()
            .expect("SL(2,R) factor is invertible");
        let mut m = Matrix4::zeros();
        for k in 0..4 {
            let mut e = [0.0; 4];
            e[k] = 1.0;
            let image = self.left * Vec22(e).to_matrix2() * b_inv;
            m.set_column(k, &Vec22::from_matrix2(&image).to_vector());
        }
        Isometry22 { m }
    }

    /// Max defect of `Φ(M) = A M B⁻¹` over the basis of 2×2 matrices.
    pub fn boundary_action_defect(&self, iso: &Isometry22) -> f64 {
        (self.to_isometry().m - iso.m).amax()
    }
}

fn action_on_matrices(iso: &Isometry22, m: &Matrix2<f64>) -> Matrix2<f64> {
    iso.apply(Vec22::from_matrix2(m)).to_matrix2()
}

/// Splits an element of SO₀(2,2) into its two PSL(2,R) factors. `tol` is
/// relative to the largest entry of the matrix.
pub fn psl2_factors(iso: &Isometry22, tol: f64) -> Result<Psl2Pair> {
    let e = |i: usize, j: usize| {
        let mut m = Matrix2::zeros();
        m[(i, j)] = 1.0;
        m
    };
    // Φ(e_i e_1ᵀ) = (A e_i)(B⁻ᵀ e_1)ᵀ share the right vector b = B⁻ᵀ e_1.
    let images = [action_on_matrices(iso, &e(0, 0)), action_on_matrices(iso, &e(1, 0))];
    let b = images
        .iter()
        .flat_map(|m| [m.row(0).transpose(), m.row(1).transpose()])
        .max_by(|p, q| p.norm_squared().total_cmp(&q.norm_squared()))
        .expect("four candidate rows");
    let b_sq = b.norm_squared();
    if b_sq == 0.0 {
        return Err(LabError::OutsideIdentityComponent { defect: f64::INFINITY });
    }
    let col0 = images[0] * b / b_sq;
    let col1 = images[1] * b / b_sq;
    let scaled = Matrix2::from_columns(&[col0, col1]);
    let det = scaled.determinant();
    if det <= 0.0 {
        return Err(LabError::OutsideIdentityComponent { defect: det.abs() });
    }
    let mut left = scaled / det.sqrt();
    let image_of_id = action_on_matrices(iso, &Matrix2::identity());
    let inv = image_of_id
        .try_inverse()
        .ok_or(LabError::OutsideIdentityComponent { defect: f64::INFINITY })?;
    let mut right = inv * left;
    if left.trace() < 0.0 || (left.trace() == 0.0 && first_nonzero(&left) < 0.0) {
        left = -left;
        right = -right;
    }
    let pair = Psl2Pair { left, right };
    let defect = pair
        .boundary_action_defect(iso)
        .max((right.determinant() - 1.0).abs());
    if !(defect <= tol * iso.matrix().amax().max(1.0)) {
        return Err(LabError::OutsideIdentityComponent { defect });
    }
    Ok(pair)
}

fn first_nonzero(m: &Matrix2<f64>) -> f64 {
    m.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0)
}

/// Translation length of a hyperbolic element of PSL(2,R) from its trace.
pub fn translation_length(trace: f64) -> f64 {
    let t = trace.abs() / 2.0;
    if t <= 1.0 {
        0.0
    } else {
        2.0 * t.acosh()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bilinear_form_on_basis_vectors() {
        assert_eq!(bilinear_form(Vec22::new(1.0, 0.0, 0.0, 0.0), Vec22::new(1.0, 0.0, 0.0, 0.0)), 1.0);
        assert_eq!(bilinear_form(Vec22::new(0.0, 0.0, 1.0, 0.0), Vec22::new(0.0, 0.0, 1.0, 0.0)), -1.0);
        assert_eq!(bilinear_form(Vec22::new(1.0, 1.0, 1.0, 1.0), Vec22::new(1.0, -1.0, 1.0, -1.0)), 0.0);
    }

    #[test]
    fn hermitian_form_examples() {
        let i = Complex64::new(0.0, 1.0);
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let z = CVec4([i, zero, zero, zero]);
        assert_eq!(hermitian_form(z, z), one);
        let z = CVec4([one + i, zero, zero, zero]);
        let w = CVec4([one, zero, zero, zero]);
        assert_eq!(hermitian_form(z, w), one + i);
    }

    #[test]
    fn matrix_model_has_det_minus_form() {
        let x = Vec22::new(0.3, -1.2, 0.7, 2.0);
        assert_abs_diff_eq!(x.to_matrix2().determinant(), -x.norm_sq(), epsilon = 1e-14);
        assert_abs_diff_eq!(Vec22::from_matrix2(&x.to_matrix2()).0[..], x.0[..], epsilon = 1e-15);
    }

    #[test]
    fn identity_and_reflection() {
        let r = is_isometry(&Matrix4::identity(), 1e-12);
        assert!(r.passes);
        assert_eq!(r.form_defect, 0.0);
        assert_eq!(r.det_defect, 0.0);
        let refl = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -1.0));
        let r = is_isometry(&refl, 1e-12);
        assert!(!r.passes);
        assert_eq!(r.det_defect, 2.0);
    }

    #[test]
    fn rotation_sweep_is_isometric() {
        for k in 0..200 {
            let theta = -10.0 + 0.1 * k as f64;
            let r = is_isometry(Isometry22::rotation(0, 1, theta).matrix(), 1e-12);
            assert!(r.passes && r.form_defect < 1e-12 && r.det_defect < 1e-12);
        }
    }

    #[test]
    fn dual_plane_predicate() {
        let x = Vec22::new(0.0, 0.0, 0.0, 1.0);
        assert!(matches!(dual_plane_disjoint(x, &[], 1e-12), Err(LabError::Degenerate(_))));
        // incidence: c = (1,0,0,0)+(0,0,1,0) is null and orthogonal to x
        let c = Vec22::new(1.0, 0.0, 1.0, 0.0);
        assert!(!dual_plane_disjoint(x, &[c], 1e-12).unwrap());
        let bad = Vec22::new(1.0, 0.0, 0.0, 0.0);
        assert!(matches!(dual_plane_disjoint(x, &[bad], 1e-12), Err(LabError::NotNull { index: 0, .. })));
    }

    #[test]
    fn segre_ruling_samples_are_disjoint_from_generic_dual_plane() {
        // line through (1,0,1,0) and (0,1,0,1): u = e1 fixed, w varies
        let u = Vector2::new(1.0, 0.0);
        let curve: Vec<Vec22> = (0..64)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 64.0;
                Vec22::segre(u, Vector2::new(a.cos(), a.sin()))
            })
            .collect();
        assert_abs_diff_eq!(
            Vec22::segre(u, Vector2::new(1.0, 0.0)).0[..],
            [0.5, 0.0, 0.5, 0.0][..]
        );
        for c in &curve {
            assert!(c.is_null(1e-14));
        }
        // <x, u wᵀ> = -(1/2) wᵀ adj(M(x)) u, which vanishes only for w ⟂ (cos 0.3, -sin 0.3)
        let ang: f64 = 0.3;
        let m = Matrix2::new(ang.cos(), -ang.sin(), ang.sin(), ang.cos());
        let x = Vec22::from_matrix2(&m);
        assert!(x.is_ads_point(1e-14));
        let hit = curve.iter().any(|c| bilinear_form(x, *c).abs() < 1e-12);
        assert_eq!(dual_plane_disjoint(x, &curve, 1e-12).unwrap(), !hit);
        assert!(!hit);
    }

    #[test]
    fn identity_factors() {
        let p = psl2_factors(&Isometry22::identity(), 1e-12).unwrap();
        assert_abs_diff_eq!(p.left, Matrix2::identity(), epsilon = 1e-14);
        assert_abs_diff_eq!(p.right, Matrix2::identity(), epsilon = 1e-14);
    }

    #[test]
    fn boost_factors_are_hyperbolic_with_equal_traces() {
        let s = 0.8;
        let iso = Isometry22::boost(0, 2, s);
        let p = psl2_factors(&iso, 1e-10).unwrap();
        let (ta, tb) = p.traces();
        assert!(ta.abs() > 2.0 && tb.abs() > 2.0);
        assert_abs_diff_eq!(ta.abs(), tb.abs(), epsilon = 1e-12);
        // pointwise ruling action: image of u wᵀ is (A u)(B⁻ᵀ w)ᵀ
        let u = Vector2::new(0.3, 1.0);
        let w = Vector2::new(-0.7, 0.2);
        let image = iso.apply(Vec22::segre(u, w)).to_matrix2();
        let expected = (p.left * u) * (p.right.try_inverse().unwrap().transpose() * w).transpose();
        assert_abs_diff_eq!(image, expected, epsilon = 1e-12);
    }

    #[test]
    fn orientation_reversing_pair_is_rejected() {
        // M ↦ Mᵀ swaps the rulings
        let mut m = Matrix4::identity();
        m[(3, 3)] = -1.0;
        let mut m2 = m;
        m2[(0, 0)] = -1.0; // det +1, still swaps or flips components
        assert!(psl2_factors(&Isometry22::from_matrix_unchecked(m), 1e-10).is_err());
        assert!(psl2_factors(&Isometry22::from_matrix_unchecked(m2), 1e-10).is_err());
    }

    fn random_isometry(params: &[(u8, f64)]) -> Isometry22 {
        const ROT: [(usize, usize); 2] = [(0, 1), (2, 3)];
        const BOOST: [(usize, usize); 4] = [(0, 2), (0, 3), (1, 2), (1, 3)];
        params.iter().fold(Isometry22::identity(), |acc, &(kind, x)| {
            let g = match kind % 6 {
                k @ 0..=1 => Isometry22::rotation(ROT[k as usize].0, ROT[k as usize].1, x),
                k => {
                    let (i, j) = BOOST[(k - 2) as usize];
                    Isometry22::boost(i, j, x / 3.0)
                }
            };
            acc.compose(&g)
        })
    }

    proptest! {
        #[test]
        fn bilinear_form_is_symmetric(x in prop::array::uniform4(-1e3f64..1e3), y in prop::array::uniform4(-1e3f64..1e3)) {
            prop_assert_eq!(bilinear_form(Vec22(x), Vec22(y)), bilinear_form(Vec22(y), Vec22(x)));
        }

        #[test]
        fn hermitian_form_restricts_and_is_conjugate_symmetric(
            x in prop::array::uniform4(-10f64..10.0),
            y in prop::array::uniform4(-10f64..10.0),
            zi in prop::array::uniform4(-10f64..10.0),
        ) {
            let real = hermitian_form(CVec4::from_real(Vec22(x)), CVec4::from_real(Vec22(y)));
            prop_assert!((real.re - bilinear_form(Vec22(x), Vec22(y))).abs() <= 1e-13);
            prop_assert_eq!(real.im, 0.0);
            let z = CVec4([0, 1, 2, 3].map(|k| Complex64::new(x[k], zi[k])));
            let w = CVec4::from_real(Vec22(y));
            let d = hermitian_form(z, w) - hermitian_form(w, z).conj();
            prop_assert!(d.norm() <= 1e-12);
        }

        #[test]
        fn isometry_test_is_conjugation_stable(
            a in prop::collection::vec((0u8..6, -2.0f64..2.0), 1..6),
            b in prop::collection::vec((0u8..6, -2.0f64..2.0), 1..6),
        ) {
            let tol = 1e-9;
            let m = random_isometry(&a);
            let g = random_isometry(&b);
            prop_assume!(is_isometry(m.matrix(), tol).passes && is_isometry(g.matrix(), tol).passes);
            let conj = g.compose(&m).compose(&g.inverse());
            prop_assert!(is_isometry(conj.matrix(), 10.0 * tol).passes);
        }

        #[test]
        fn factors_reconstruct_boundary_action(params in prop::collection::vec((0u8..6, -2.0f64..2.0), 1..8)) {
            let iso = random_isometry(&params);
            let p = psl2_factors(&iso, 1e-7).unwrap();
            prop_assert!(p.boundary_action_defect(&iso) < 1e-7 * (1.0 + iso.matrix().amax()));
            prop_assert!((p.left.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
