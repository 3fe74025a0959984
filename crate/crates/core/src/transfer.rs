//! Fiber orientation descriptors and the anchor regression that builds a
//! network for any orientation state and fiber volume fraction.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

/// Eigenvalues closer than this are treated as equal when fixing the frame.
const TIE_TOL: f64 = 1e-9;

/// Second-order fiber orientation tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationTensor {
    a: Matrix3<f64>,
}

impl OrientationTensor {
    /// Checks symmetry, unit trace (within 1e-6) and eigenvalues in `[0, 1]`.
    pub fn new(a: Matrix3<f64>) -> Result<Self> {
        let asym = (a - a.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::InvalidOrientation(format!("not symmetric (asymmetry {asym:.3e})")));
        }
        let tr = a.trace();
        if (tr - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidOrientation(format!("trace {tr} differs from 1")));
        }
        let ev = a.symmetric_eigenvalues();
        if ev.iter().any(|&l| !(-1e-9..=1.0 + 1e-9).contains(&l)) {
            return Err(Error::InvalidOrientation(format!(
                "eigenvalues {:?} outside [0, 1]",
                ev.as_slice()
            )));
        }
        Ok(Self { a })
    }

    /// From components in the order `axx, ayy, azz, axy, ayz, azx`.
    pub fn from_components(c: [f64; 6]) -> Result<Self> {
        let [xx, yy, zz, xy, yz, zx] = c;
        Self::new(Matrix3::new(xx, xy, zx, xy, yy, yz, zx, yz, zz))
    }

    /// Same as [`from_components`](Self::from_components) but rescales the
    /// trace to 1 when it is within `tol` of 1.
    pub fn from_components_renormalized(c: [f64; 6], tol: f64) -> Result<Self> {
        let tr = c[0] + c[1] + c[2];
        if (tr - 1.0).abs() > tol {
            return Err(Error::InvalidOrientation(format!("trace {tr} differs from 1 by more than {tol}")));
        }
        Self::from_components(c.map(|x| x / tr))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.a
    }

    pub fn components(&self) -> [f64; 6] {
        let a = &self.a;
        [a[(0, 0)], a[(1, 1)], a[(2, 2)], a[(0, 1)], a[(1, 2)], a[(2, 0)]]
    }

    /// `Q·a·Qᵀ`.
    pub fn rotated(&self, q: &Matrix3<f64>) -> Self {
        let a = q * self.a * q.transpose();
        Self {
            a: 0.5 * (a + a.transpose()),
        }
    }

    pub fn isotropic() -> Self {
        Self {
            a: Matrix3::identity() / 3.0,
        }
    }
}

/// Empirical orientation tensor `mean(p ⊗ p)` of unit fiber directions.
pub fn orientation_from_fibers(directions: &[Vector3<f64>]) -> Result<OrientationTensor> {
    if directions.is_empty() {
        return Err(Error::InvalidOrientation("no fiber directions given".into()));
    }
    let mut a = Matrix3::zeros();
    for (i, p) in directions.iter().enumerate() {
        if (p.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidOrientation(format!("direction {i} is not a unit vector")));
        }
        a += p * p.transpose();
    }
    a /= a.trace();
    Ok(OrientationTensor {
        a: 0.5 * (a + a.transpose()),
    })
}

/// Fiber volume fraction and the two largest orientation eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub vf: f64,
    pub a11: f64,
    pub a22: f64,
}

impl Descriptor {
    pub fn new(vf: f64, a11: f64, a22: f64) -> Self {
        Self { vf, a11, a22 }
    }

    pub fn a33(&self) -> f64 {
        1.0 - self.a11 - self.a22
    }

    /// Regression features `[1, vf, a11, a22]`.
    pub fn features(&self) -> Vector4<f64> {
        Vector4::new(1.0, self.vf, self.a11, self.a22)
    }

    /// `a11 ≥ a22 ≥ a33 ≥ 0`, up to `tol`.
    pub fn in_triangle(&self, tol: f64) -> bool {
        self.a11 + tol >= self.a22 && self.a22 + tol >= self.a33() && self.a33() >= -tol
    }
}

/// Sign making the largest-magnitude component positive (first one on ties).
fn canonical_sign(v: &Vector3<f64>) -> Vector3<f64> {
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() > v[k].abs() + 1e-12 {
            k = i;
        }
    }
    if v[k] < 0.0 {
        -v
    } else {
        *v
    }
}

/// Unit vector in the plane normal to `n`: the projection of the first
/// global axis whose projection is long enough to be well defined.
fn in_plane_axis(n: &Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        let e = Vector3::ith(i, 1.0);
        let p = e - n * n.dot(&e);
        if p.norm() > 0.5 {
            return p.normalize();
        }
    }
    unreachable!("a unit vector cannot be within 60 degrees of all three axes")
}

/// Descriptor and principal frame of `a`. The frame `P` has the principal
/// axes as columns (descending eigenvalues, `det P = +1`), so that
/// `a = P·diag(a11, a22, a33)·Pᵀ`. Equal eigenvalues are resolved
/// deterministically; the isotropic state gives `P = I`.
pub fn descriptor_of(a: &OrientationTensor, vf: f64) -> Result<(Descriptor, Matrix3<f64>)> {
    if !(vf > 0.0 && vf < 1.0) {
        return Err(Error::Parameter(format!("fiber volume fraction must be in (0, 1), got {vf}")));
    }
    let tr = a.a.trace();
    if (tr - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidOrientation(format!("trace {tr} differs from 1")));
    }
    let eig = SymmetricEigen::new(a.a);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let l = idx.map(|i| eig.eigenvalues[i]);
    let v = idx.map(|i| canonical_sign(&eig.eigenvectors.column(i).into_owned()));

    let tie12 = l[0] - l[1] <= TIE_TOL;
    let tie23 = l[1] - l[2] <= TIE_TOL;
    let (e1, e2) = match (tie12, tie23) {
        (true, true) => (Vector3::x(), Vector3::y()),
        (true, false) => {
            let n = v[2];
            let e1 = in_plane_axis(&n);
            (e1, n.cross(&e1))
        }
        (false, true) => {
            let e1 = v[0];
            (e1, in_plane_axis(&e1))
        }
        (false, false) => (v[0], v[1] - v[0] * v[0].dot(&v[1])),
    };
    let e2 = e2.normalize();
    let p = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
    let d = Descriptor::new(vf, l[0], l[1]);
    Ok((d, p))
}

/// Four anchor networks with their descriptors and the per-parameter
/// affine regression `y = c0 + c1·vf + c2·a11 + c3·a22` through them.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    descriptors: [Descriptor; 4],
    networks: Vec<Network>,
    /// One `[c0, c1, c2, c3]` per trainable parameter.
    coefficients: Vec<Vector4<f64>>,
}

/// Anchor parameter spread beyond which an angle is flagged.
pub const ANGLE_SPREAD_LIMIT: f64 = std::f64::consts::FRAC_PI_2;

pub fn fit_anchor_regression(anchors: &[(Descriptor, Network)]) -> Result<AnchorSet> {
    if anchors.len() != 4 {
        return Err(Error::Parameter(format!("need exactly 4 anchors, got {}", anchors.len())));
    }
    let first = &anchors[0].1;
    if anchors.iter().any(|(_, n)| !n.same_topology(first)) {
        return Err(Error::Topology("anchor networks differ in topology".into()));
    }
    let x = Matrix4::from_rows(&[
        anchors[0].0.features().transpose(),
        anchors[1].0.features().transpose(),
        anchors[2].0.features().transpose(),
        anchors[3].0.features().transpose(),
    ]);
    let sv = x.singular_values();
    if !(sv.min() > 1e-10 * sv.max()) {
        return Err(Error::AnchorDegeneracy);
    }
    let lu = x.lu();
    let params: Vec<Vec<f64>> = anchors.iter().map(|(_, n)| n.params()).collect();
    let coefficients = (0..first.n_params())
        .map(|j| {
            let y = Vector4::new(params[0][j], params[1][j], params[2][j], params[3][j]);
            lu.solve(&y).ok_or(Error::AnchorDegeneracy)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = AnchorSet {
        descriptors: [anchors[0].0, anchors[1].0, anchors[2].0, anchors[3].0],
        networks: anchors.iter().map(|(_, n)| n.clone()).collect(),
        coefficients,
    };
    let flagged = set.wide_angle_parameters();
    if !flagged.is_empty() {
        log::warn!(
            "{} anchor angles spread more than pi/2 across anchors; interpolated rotations may be poor",
            flagged.len()
        );
    }
    Ok(set)
}

impl AnchorSet {
    pub fn descriptors(&self) -> &[Descriptor; 4] {
        &self.descriptors
    }

    pub fn networks(&self) -> &[Network] {
        &self.networks
    }

    pub fn coefficients(&self) -> &[Vector4<f64>] {
        &self.coefficients
    }

    /// Indices of angle parameters whose anchor values span more than π/2.
    pub fn wide_angle_parameters(&self) -> Vec<usize> {
        let nb = self.networks[0].n_bottom();
        let params: Vec<Vec<f64>> = self.networks.iter().map(|n| n.params()).collect();
        (nb..params[0].len())
            .filter(|&j| {
                let (lo, hi) = params
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[j]), hi.max(p[j])));
                hi - lo > ANGLE_SPREAD_LIMIT
            })
            .collect()
    }

    /// True when `vf` lies outside the anchors' volume-fraction range.
    pub fn is_extrapolation(&self, d: &Descriptor) -> bool {
        let lo = self.descriptors.iter().map(|d| d.vf).fold(f64::INFINITY, f64::min);
        let hi = self.descriptors.iter().map(|d| d.vf).fold(f64::NEG_INFINITY, f64::max);
        d.vf < lo || d.vf > hi
    }

    /// Regressed parameters at a descriptor, in the principal frame.
    pub fn evaluate(&self, d: &Descriptor) -> Result<Network> {
        let f = d.features();
        let p: Vec<f64> = self.coefficients.iter().map(|c| c.dot(&f)).collect();
        let mut net = self.networks[0].clone();
        net.set_params(&p)?;
        Ok(net)
    }
}

/// A network instantiated for one microstructure.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub network: Network,
    pub descriptor: Descriptor,
    /// Principal frame of the orientation tensor (columns are axes).
    pub frame: Matrix3<f64>,
    /// Volume fraction outside the anchor range.
    pub extrapolated: bool,
}

/// Regressed network for `(a, vf)`, expressed in the global frame.
pub fn instantiate_network(anchors: &AnchorSet, a: &OrientationTensor, vf: f64) -> Result<Instance> {
    let (descriptor, frame) = descriptor_of(a, vf)?;
    let extrapolated = anchors.is_extrapolation(&descriptor);
    if extrapolated {
        log::warn!("volume fraction {vf} is outside the anchor range; extrapolating");
    }
    let mut network = anchors.evaluate(&descriptor)?;
    if frame != Matrix3::identity() {
        network.compose_top_rotation(&frame);
    }
    Ok(Instance {
        network,
        descriptor,
        frame,
        extrapolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_network;
    use crate::test_oracle as oracle;

    fn rve1_orientation() -> OrientationTensor {
        OrientationTensor::from_components([0.5861, 0.3521, 0.0618, 0.05447, -0.0172, -0.0159]).unwrap()
    }

    #[test]
    fn vertex_states() {
        let ud = orientation_from_fibers(&[Vector3::x(); 5]).unwrap();
        assert_eq!(*ud.matrix(), Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)));
        let (d, p) = descriptor_of(&ud, 0.08).unwrap();
        assert_eq!((d.a11, d.a22), (1.0, 0.0));
        assert_eq!(p, Matrix3::identity());

        let (d, p) = descriptor_of(&OrientationTensor::isotropic(), 0.08).unwrap();
        assert!((d.a11 - 1.0 / 3.0).abs() < 1e-15 && (d.a22 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p, Matrix3::identity());

        let planar = OrientationTensor::from_components([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (d, p) = descriptor_of(&planar, 0.08).unwrap();
        assert_eq!((d.a11, d.a22), (0.5, 0.5));
        assert_eq!(p, Matrix3::identity());
    }

    #[test]
    fn rve1_eigenvalues_match_jacobi() {
        let a = rve1_orientation();
        let (d, p) = descriptor_of(&a, 0.194).unwrap();
        let (l, _) = oracle::jacobi_eigen(a.matrix());
        assert!((d.a11 - l[0]).abs() < 1e-12 && (d.a22 - l[1]).abs() < 1e-12);
        assert!(d.in_triangle(0.0));
        assert!((p.determinant() - 1.0).abs() < 1e-12);
        let back = p * Matrix3::from_diagonal(&Vector3::new(d.a11, d.a22, d.a33())) * p.transpose();
        assert!((back - a.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(OrientationTensor::from_components([0.6, 0.3, 0.2, 0.0, 0.0, 0.0]).is_err());
        assert!(orientation_from_fibers(&[]).is_err());
        assert!(orientation_from_fibers(&[Vector3::new(1.0, 1.0, 0.0)]).is_err());
        assert!(descriptor_of(&OrientationTensor::isotropic(), 1.2).is_err());
        let near = OrientationTensor::from_components_renormalized([0.5, 0.3, 0.2005, 0.0, 0.0, 0.0], 1e-3).unwrap();
        assert!((near.matrix().trace() - 1.0).abs() < 1e-15);
    }

    fn anchor_list() -> Vec<(Descriptor, Network)> {
        [
            Descriptor::new(0.08, 1.0 / 3.0, 1.0 / 3.0),
            Descriptor::new(0.08, 0.5, 0.5),
            Descriptor::new(0.08, 1.0, 0.0),
            Descriptor::new(0.35, 1.0, 0.0),
        ]
        .into_iter()
        .enumerate()
        .map(|(i, d)| (d, build_network(4, 10 + i as u64).unwrap()))
        .collect()
    }

    #[test]
    fn regression_interpolates_anchors() {
        let anchors = anchor_list();
        let set = fit_anchor_regression(&anchors).unwrap();
        for (d, n) in &anchors {
            let p = set.evaluate(d).unwrap().params();
            for (x, y) in p.iter().zip(n.params()) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_anchors_give_constant_model() {
        let net = build_network(3, 1).unwrap();
        let anchors: Vec<_> = anchor_list().into_iter().map(|(d, _)| (d, net.clone())).collect();
        let set = fit_anchor_regression(&anchors).unwrap();
        for c in set.coefficients() {
            assert!(c[1].abs() < 1e-12 && c[2].abs() < 1e-12 && c[3].abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_anchors_rejected() {
        let mut anchors = anchor_list();
        // all four at the same volume fraction
        anchors[3].0 = Descriptor::new(0.08, 0.75, 0.25);
        assert!(matches!(fit_anchor_regression(&anchors), Err(Error::AnchorDegeneracy)));
    }

    #[test]
    fn midpoint_matches_explicit_solve() {
        let anchors = anchor_list();
        let set = fit_anchor_regression(&anchors).unwrap();
        // midpoint of the two UD anchors: the other basis functions vanish
        let d = Descriptor::new((0.08 + 0.35) / 2.0, 1.0, 0.0);
        let p = set.evaluate(&d).unwrap().params();
        let (a, b) = (anchors[2].1.params(), anchors[3].1.params());
        for j in 0..p.len() {
            assert!((p[j] - 0.5 * (a[j] + b[j])).abs() < 1e-12);
        }
    }
}
