//! Trilinear hexahedron with 2×2×2 Gauss quadrature.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};

/// Natural coordinates of the eight corners.
pub const CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Strain-displacement matrix in Mandel form, acting on
/// `[u1x, u1y, u1z, u2x, ...]`.
pub type BMatrix = SMatrix<f64, 6, 24>;
pub type ElementVector = SVector<f64, 24>;

pub fn gauss_points() -> [[f64; 3]; 8] {
    let g = 1.0 / 3f64.sqrt();
    CORNERS.map(|c| c.map(|x| x * g))
}

pub fn shape_functions(xi: &[f64; 3]) -> [f64; 8] {
    CORNERS.map(|c| 0.125 * (1.0 + c[0] * xi[0]) * (1.0 + c[1] * xi[1]) * (1.0 + c[2] * xi[2]))
}

/// `∂N/∂ξ` for every corner.
pub fn shape_derivatives(xi: &[f64; 3]) -> [Vector3<f64>; 8] {
    CORNERS.map(|c| {
        let f = [1.0 + c[0] * xi[0], 1.0 + c[1] * xi[1], 1.0 + c[2] * xi[2]];
        0.125 * Vector3::new(c[0] * f[1] * f[2], c[1] * f[0] * f[2], c[2] * f[0] * f[1])
    })
}

/// Quadrature data of one Gauss point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadPoint {
    pub b: BMatrix,
    /// Quadrature weight times Jacobian determinant.
    pub weight: f64,
}

/// The eight quadrature points of an element with the given corners.
pub fn element_quadrature(x: &[Vector3<f64>; 8], element: usize) -> Result<[QuadPoint; 8]> {
    let gp = gauss_points();
    let mut out: Vec<QuadPoint> = Vec::with_capacity(8);
    for xi in &gp {
        let dn = shape_derivatives(xi);
        let mut jac = Matrix3::zeros();
        for (a, d) in dn.iter().enumerate() {
            jac += x[a] * d.transpose();
        }
        let det = jac.determinant();
        if !(det > 0.0) {
            return Err(Error::Mesh(format!(
                "element {element} has non-positive Jacobian {det:.3e} at a quadrature point"
            )));
        }
        let inv_t = jac.try_inverse().expect("positive determinant").transpose();
        let mut b = BMatrix::zeros();
        for (a, d) in dn.iter().enumerate() {
            let g = inv_t * d;
            let c = 3 * a;
            b[(0, c)] = g.x;
            b[(1, c + 1)] = g.y;
            b[(2, c + 2)] = g.z;
            b[(3, c)] = FRAC_1_SQRT_2 * g.y;
            b[(3, c + 1)] = FRAC_1_SQRT_2 * g.x;
            b[(4, c + 1)] = FRAC_1_SQRT_2 * g.z;
            b[(4, c + 2)] = FRAC_1_SQRT_2 * g.y;
            b[(5, c)] = FRAC_1_SQRT_2 * g.z;
            b[(5, c + 2)] = FRAC_1_SQRT_2 * g.x;
        }
        out.push(QuadPoint { b, weight: det });
    }
    Ok(out.try_into().expect("eight points"))
}
