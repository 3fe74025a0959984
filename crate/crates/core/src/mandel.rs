//! Mandel-notation tensor algebra.
//!
//! Symmetric second-order tensors are stored as 6-vectors ordered
//! `(11, 22, 33, √2·12, √2·23, √2·31)` and fourth-order tensors with minor
//! symmetries as 6×6 matrices acting on them. In this basis the Euclidean
//! inner product equals the double contraction and rotations act as
//! orthogonal 6×6 matrices.

use std::f64::consts::SQRT_2;
use std::io::Write;

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type MandelVector6 = SVector<f64, 6>;
pub type MandelMatrix6 = SMatrix<f64, 6, 6>;

/// Index pairs of the Mandel components.
pub const MANDEL_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (2, 0)];

/// Components lying in the lamination plane of a building block (normal e3).
pub const IN_PLANE: [usize; 3] = [0, 1, 3];
/// Components that carry interface tractions (33, 23, 31).
pub const NORMAL: [usize; 3] = [2, 4, 5];

#[inline]
fn scale(i: usize) -> f64 {
    if i < 3 {
        1.0
    } else {
        SQRT_2
    }
}

pub fn tensor_to_mandel(t: &Matrix3<f64>) -> Result<MandelVector6> {
    let norm = t.norm().max(f64::MIN_POSITIVE);
    let asym = (t - t.transpose()).norm() / norm;
    if asym > 1e-12 {
        return Err(Error::SymmetryViolation(asym));
    }
    Ok(tensor_to_mandel_unchecked(t))
}

/// Mandel vector of the symmetric part of `t`.
pub fn tensor_to_mandel_unchecked(t: &Matrix3<f64>) -> MandelVector6 {
    let mut v = MandelVector6::zeros();
    for (i, &(a, b)) in MANDEL_PAIRS.iter().enumerate() {
        v[i] = if a == b {
            t[(a, a)]
        } else {
            0.5 * SQRT_2 * (t[(a, b)] + t[(b, a)])
        };
    }
    v
}

pub fn mandel_to_tensor(v: &MandelVector6) -> Matrix3<f64> {
    let mut t = Matrix3::zeros();
    for (i, &(a, b)) in MANDEL_PAIRS.iter().enumerate() {
        let c = v[i] / scale(i);
        t[(a, b)] = c;
        t[(b, a)] = c;
    }
    t
}

/// Tensor components `(11, 22, 33, 12, 23, 31)` without the √2 factors.
pub fn mandel_to_components(v: &MandelVector6) -> [f64; 6] {
    std::array::from_fn(|i| v[i] / scale(i))
}

pub fn components_to_mandel(c: &[f64; 6]) -> MandelVector6 {
    MandelVector6::from_fn(|i, _| c[i] * scale(i))
}

/// Intrinsic Z–X–Z Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn rot_z(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_z_deriv(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn rot_x_deriv(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

impl EulerAngles {
    pub const ZERO: EulerAngles = EulerAngles {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn is_zero(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0
    }

    /// `Rz(α)·Rx(β)·Rz(γ)`.
    pub fn matrix(&self) -> Matrix3<f64> {
        rot_z(self.alpha) * rot_x(self.beta) * rot_z(self.gamma)
    }

    /// Partial derivatives of [`matrix`](Self::matrix) with respect to α, β, γ.
    pub fn matrix_derivatives(&self) -> [Matrix3<f64>; 3] {
        let (za, xb, zg) = (rot_z(self.alpha), rot_x(self.beta), rot_z(self.gamma));
        [
            rot_z_deriv(self.alpha) * xb * zg,
            za * rot_x_deriv(self.beta) * zg,
            za * xb * rot_z_deriv(self.gamma),
        ]
    }

    /// Angles of a proper rotation matrix. At the gimbal lock (β ∈ {0, π})
    /// the whole in-plane rotation is assigned to α.
    pub fn from_matrix(q: &Matrix3<f64>) -> Self {
        let cb = q[(2, 2)].clamp(-1.0, 1.0);
        let sb = (q[(2, 0)].powi(2) + q[(2, 1)].powi(2)).sqrt();
        if sb > 1e-12 {
            EulerAngles {
                alpha: q[(0, 2)].atan2(-q[(1, 2)]),
                beta: sb.atan2(cb),
                gamma: q[(2, 0)].atan2(q[(2, 1)]),
            }
        } else if cb > 0.0 {
            EulerAngles {
                alpha: q[(1, 0)].atan2(q[(0, 0)]),
                beta: 0.0,
                gamma: 0.0,
            }
        } else {
            EulerAngles {
                alpha: q[(0, 1)].atan2(q[(0, 0)]),
                beta: std::f64::consts::PI,
                gamma: 0.0,
            }
        }
    }

    /// Angles of `self.matrix() * other.matrix()`.
    pub fn compose(&self, other: &EulerAngles) -> EulerAngles {
        EulerAngles::from_matrix(&(self.matrix() * other.matrix()))
    }

    pub fn inverse(&self) -> EulerAngles {
        EulerAngles::from_matrix(&self.matrix().transpose())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

#[inline]
fn pair_product(a: &Matrix3<f64>, b: &Matrix3<f64>, i: usize, j: usize, col: usize) -> f64 {
    let (k, l) = MANDEL_PAIRS[col];
    if k == l {
        a[(i, k)] * b[(j, k)]
    } else {
        (a[(i, k)] * b[(j, l)] + a[(i, l)] * b[(j, k)]) / SQRT_2
    }
}

/// The 6×6 matrix `R` with `mandel(Q·T·Qᵀ) = R·mandel(T)`.
pub fn mandel_image(q: &Matrix3<f64>) -> MandelMatrix6 {
    MandelMatrix6::from_fn(|row, col| {
        let (i, j) = MANDEL_PAIRS[row];
        if i == j {
            pair_product(q, q, i, i, col)
        } else {
            // the symmetric part of Q·T·Qᵀ, scaled by √2
            SQRT_2 * pair_product(q, q, i, j, col)
        }
    })
}

/// Directional derivative of [`mandel_image`] at `q` along `dq`.
pub fn mandel_image_differential(q: &Matrix3<f64>, dq: &Matrix3<f64>) -> MandelMatrix6 {
    MandelMatrix6::from_fn(|row, col| {
        let (i, j) = MANDEL_PAIRS[row];
        let d = pair_product(dq, q, i, j, col) + pair_product(q, dq, i, j, col);
        if i == j {
            d
        } else {
            SQRT_2 * d
        }
    })
}

/// Orthogonal 6×6 rotation operator in the Mandel basis.
///
/// A quantity expressed in a node's local frame is brought to its parent's
/// frame by `C = Rᵀ·C̄·R` and `σ = Rᵀ·σ̄`; the reverse map is `ε̄ = R·ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6(pub MandelMatrix6);

impl Rotation6 {
    pub fn identity() -> Self {
        Rotation6(MandelMatrix6::identity())
    }

    pub fn from_matrix3(q: &Matrix3<f64>) -> Self {
        Rotation6(mandel_image(q))
    }

    pub fn matrix(&self) -> &MandelMatrix6 {
        &self.0
    }

    pub fn stiffness_to_parent(&self, c: &MandelMatrix6) -> MandelMatrix6 {
        self.0.tr_mul(&(c * self.0))
    }

    pub fn stiffness_to_local(&self, c: &MandelMatrix6) -> MandelMatrix6 {
        self.0 * c * self.0.transpose()
    }

    pub fn vector_to_parent(&self, v: &MandelVector6) -> MandelVector6 {
        self.0.tr_mul(v)
    }

    pub fn vector_to_local(&self, v: &MandelVector6) -> MandelVector6 {
        self.0 * v
    }
}

impl std::ops::Mul for Rotation6 {
    type Output = Rotation6;
    fn mul(self, rhs: Rotation6) -> Rotation6 {
        Rotation6(self.0 * rhs.0)
    }
}

pub fn rotation6(e: &EulerAngles) -> Rotation6 {
    Rotation6::from_matrix3(&e.matrix())
}

/// `C' = Rᵀ·C·R`.
pub fn rotate_stiffness(c: &MandelMatrix6, e: &EulerAngles) -> MandelMatrix6 {
    rotation6(e).stiffness_to_parent(c)
}

/// `v' = Rᵀ·v`, the vector counterpart of [`rotate_stiffness`].
pub fn rotate_vector(v: &MandelVector6, e: &EulerAngles) -> MandelVector6 {
    rotation6(e).vector_to_parent(v)
}

/// `(1, 1, 1, 0, 0, 0)`, the Mandel form of the identity tensor.
pub fn identity_vector() -> MandelVector6 {
    MandelVector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
}

/// Volumetric projector `m·mᵀ/3`.
pub fn volumetric_projector() -> MandelMatrix6 {
    let m = identity_vector();
    m * m.transpose() / 3.0
}

pub fn deviatoric_projector() -> MandelMatrix6 {
    MandelMatrix6::identity() - volumetric_projector()
}

pub fn deviator(v: &MandelVector6) -> MandelVector6 {
    let p = (v[0] + v[1] + v[2]) / 3.0;
    let mut d = *v;
    d[0] -= p;
    d[1] -= p;
    d[2] -= p;
    d
}

/// Bulk and shear moduli from Young's modulus and Poisson's ratio.
pub fn lame_moduli(e: f64, nu: f64) -> Result<(f64, f64)> {
    if !(e > 0.0) {
        return Err(Error::Parameter(format!("Young's modulus must be positive, got {e}")));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(Error::Incompressible(nu));
    }
    Ok((e / (3.0 * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu))))
}

/// `3κ·P_vol + 2μ·P_dev`.
pub fn isotropic_stiffness(e: f64, nu: f64) -> Result<MandelMatrix6> {
    let (kappa, mu) = lame_moduli(e, nu)?;
    Ok(3.0 * kappa * volumetric_projector() + 2.0 * mu * deviatoric_projector())
}

/// Orthotropic stiffness from engineering constants in the material axes.
/// `nu_ij` is the contraction along j under loading along i.
#[allow(clippy::too_many_arguments)]
pub fn orthotropic_stiffness(
    e: [f64; 3],
    nu12: f64,
    nu13: f64,
    nu23: f64,
    g12: f64,
    g23: f64,
    g31: f64,
) -> Result<MandelMatrix6> {
    let mut s = MandelMatrix6::zeros();
    s[(0, 0)] = 1.0 / e[0];
    s[(1, 1)] = 1.0 / e[1];
    s[(2, 2)] = 1.0 / e[2];
    s[(0, 1)] = -nu12 / e[0];
    s[(1, 0)] = s[(0, 1)];
    s[(0, 2)] = -nu13 / e[0];
    s[(2, 0)] = s[(0, 2)];
    s[(1, 2)] = -nu23 / e[1];
    s[(2, 1)] = s[(1, 2)];
    // Mandel shear compliance is 1/(2G)
    s[(3, 3)] = 1.0 / (2.0 * g12);
    s[(4, 4)] = 1.0 / (2.0 * g23);
    s[(5, 5)] = 1.0 / (2.0 * g31);
    if !is_spd(&s) {
        return Err(Error::Singular("orthotropic compliance is not positive definite".into()));
    }
    s.try_inverse()
        .ok_or_else(|| Error::Singular("orthotropic compliance".into()))
}

pub fn is_symmetric(m: &MandelMatrix6) -> bool {
    (m - m.transpose()).abs().max() <= 1e-9 * m.norm()
}

/// Symmetric and positive definite, checked by a Cholesky factorization
/// whose pivots must exceed `1e-9` times the largest diagonal entry.
pub fn is_spd(m: &MandelMatrix6) -> bool {
    if !m.iter().all(|x| x.is_finite()) || !is_symmetric(m) {
        return false;
    }
    let max_diag = m.diagonal().max();
    if !(max_diag > 0.0) {
        return false;
    }
    let tol = 1e-9 * max_diag;
    let mut l = MandelMatrix6::zeros();
    for j in 0..6 {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..6 {
            let mut s = 0.5 * (m[(i, j)] + m[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    true
}

pub fn symmetric_eigenvalues(m: &MandelMatrix6) -> SVector<f64, 6> {
    let sym = 0.5 * (m + m.transpose());
    let mut ev = sym.symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Uniform-strain (upper) energy bound of a two-phase mixture.
pub fn voigt_bound(c1: &MandelMatrix6, c2: &MandelMatrix6, vf2: f64) -> MandelMatrix6 {
    (1.0 - vf2) * c1 + vf2 * c2
}

/// Uniform-stress (lower) energy bound of a two-phase mixture.
pub fn reuss_bound(c1: &MandelMatrix6, c2: &MandelMatrix6, vf2: f64) -> Result<MandelMatrix6> {
    let s1 = c1
        .try_inverse()
        .ok_or_else(|| Error::Singular("phase 1 stiffness".into()))?;
    let s2 = c2
        .try_inverse()
        .ok_or_else(|| Error::Singular("phase 2 stiffness".into()))?;
    ((1.0 - vf2) * s1 + vf2 * s2)
        .try_inverse()
        .ok_or_else(|| Error::Singular("mixed compliance".into()))
}

/// Directional Young's modulus `E(d) = 1 / (d⊗d : S : d⊗d)`.
pub fn directional_modulus(compliance: &MandelMatrix6, d: &Vector3<f64>) -> f64 {
    let d = d.normalize();
    let n = tensor_to_mandel_unchecked(&(d * d.transpose()));
    1.0 / n.dot(&(compliance * n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub direction: Vector3<f64>,
    pub modulus: f64,
}

/// Young's modulus sampled on a latitude/longitude grid: `n_theta` polar
/// angles spanning `[0, π]` inclusive, `n_phi` azimuths in `[0, 2π)`.
pub fn modulus_surface(c: &MandelMatrix6, n_theta: usize, n_phi: usize) -> Result<Vec<SurfacePoint>> {
    if n_theta < 2 || n_phi < 1 {
        return Err(Error::Parameter("modulus surface needs n_theta >= 2 and n_phi >= 1".into()));
    }
    if !is_spd(c) {
        return Err(Error::Singular("stiffness is not SPD".into()));
    }
    let s = c
        .try_inverse()
        .ok_or_else(|| Error::Singular("stiffness inversion".into()))?;
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let theta = std::f64::consts::PI * i as f64 / (n_theta - 1) as f64;
        for j in 0..n_phi {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64;
            let d = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            out.push(SurfacePoint {
                direction: d,
                modulus: directional_modulus(&s, &d),
            });
        }
    }
    Ok(out)
}

pub fn write_modulus_surface_csv<W: Write>(mut w: W, surface: &[SurfacePoint]) -> Result<()> {
    writeln!(w, "nx,ny,nz,E_MPa")?;
    for p in surface {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?}",
            p.direction.x, p.direction.y, p.direction.z, p.modulus
        )?;
    }
    Ok(())
}

/// Fourth-order stiffness components `C_ijkl` of a Mandel matrix.
pub fn mandel_to_fourth_order(c: &MandelMatrix6) -> [[[[f64; 3]; 3]; 3]; 3] {
    let mut t = [[[[0.0; 3]; 3]; 3]; 3];
    for (a, &(i, j)) in MANDEL_PAIRS.iter().enumerate() {
        for (b, &(k, l)) in MANDEL_PAIRS.iter().enumerate() {
            let v = c[(a, b)] / (scale(a) * scale(b));
            for &(p, q) in &[(i, j), (j, i)] {
                for &(r, s) in &[(k, l), (l, k)] {
                    t[p][q][r][s] = v;
                }
            }
        }
    }
    t
}

pub fn fourth_order_to_mandel(t: &[[[[f64; 3]; 3]; 3]; 3]) -> MandelMatrix6 {
    MandelMatrix6::from_fn(|a, b| {
        let (i, j) = MANDEL_PAIRS[a];
        let (k, l) = MANDEL_PAIRS[b];
        t[i][j][k][l] * scale(a) * scale(b)
    })
}

/// Converts a 6×6 stiffness to the 21 upper-triangle entries, row-major.
pub fn upper_triangle(c: &MandelMatrix6) -> [f64; 21] {
    let mut out = [0.0; 21];
    let mut n = 0;
    for i in 0..6 {
        for j in i..6 {
            out[n] = c[(i, j)];
            n += 1;
        }
    }
    out
}

pub fn from_upper_triangle(v: &[f64]) -> Result<MandelMatrix6> {
    if v.len() != 21 {
        return Err(Error::Format(format!("expected 21 upper-triangle entries, got {}", v.len())));
    }
    let mut c = Matrix6::zeros();
    let mut n = 0;
    for i in 0..6 {
        for j in i..6 {
            c[(i, j)] = v[n];
            c[(j, i)] = v[n];
            n += 1;
        }
    }
    Ok(c)
}
