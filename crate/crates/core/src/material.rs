//! Constituent laws for the bottom nodes: linear elasticity and small-strain
//! J2 plasticity with isotropic hardening, integrated by radial return.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mandel::{
    deviator, deviatoric_projector, isotropic_stiffness, lame_moduli, volumetric_projector, MandelMatrix6,
    MandelVector6,
};

/// Maximum Newton iterations of the scalar return map.
pub const RETURN_MAP_MAX_ITER: usize = 50;

/// Isotropic hardening law `s_Y(ε̄p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Hardening {
    /// `s_Y = s1 + s2·ε̄p − s3·exp(−h0·ε̄p)`.
    Exponential { h0: f64, s1: f64, s2: f64, s3: f64 },
    /// Piecewise linear `(ε̄p, s_Y)` points, extrapolated with the last
    /// segment. A single point means perfect plasticity.
    Table { points: Vec<[f64; 2]> },
}

impl Hardening {
    pub fn validate(&self) -> Result<()> {
        if let Hardening::Table { points } = self {
            if points.is_empty() {
                return Err(Error::Parameter("hardening table is empty".into()));
            }
            if points[0][0] != 0.0 {
                return Err(Error::Parameter("hardening table must start at zero plastic strain".into()));
            }
            if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return Err(Error::Parameter("hardening table strains must increase".into()));
            }
        }
        let s0 = self.yield_stress(0.0);
        if !(s0 > 0.0) {
            return Err(Error::Parameter(format!("initial yield stress must be positive, got {s0}")));
        }
        Ok(())
    }

    fn table_segment(points: &[[f64; 2]], eps: f64) -> (f64, f64) {
        if points.len() == 1 {
            return (points[0][1], 0.0);
        }
        let i = points
            .windows(2)
            .position(|w| eps <= w[1][0])
            .unwrap_or(points.len() - 2);
        let ([e0, s0], [e1, s1]) = (points[i], points[i + 1]);
        let slope = (s1 - s0) / (e1 - e0);
        (s0 + slope * (eps - e0), slope)
    }

    pub fn yield_stress(&self, eps: f64) -> f64 {
        match self {
            Hardening::Exponential { h0, s1, s2, s3 } => s1 + s2 * eps - s3 * (-h0 * eps).exp(),
            Hardening::Table { points } => Self::table_segment(points, eps).0,
        }
    }

    /// `d s_Y / d ε̄p`.
    pub fn modulus(&self, eps: f64) -> f64 {
        match self {
            Hardening::Exponential { h0, s2, s3, .. } => s2 + s3 * h0 * (-h0 * eps).exp(),
            Hardening::Table { points } => Self::table_segment(points, eps).1,
        }
    }
}

/// Yield stress at `eps`, checking `eps ≥ 0` and a positive result.
pub fn yield_stress(eps: f64, hardening: &Hardening) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::Parameter(format!("equivalent plastic strain must be >= 0, got {eps}")));
    }
    let s = hardening.yield_stress(eps);
    if !(s > 0.0) {
        return Err(Error::Parameter(format!("non-positive yield stress {s} at plastic strain {eps}")));
    }
    Ok(s)
}

/// Material description as found in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum MaterialSpec {
    Elastic { e: f64, nu: f64 },
    J2 { e: f64, nu: f64, hardening: Hardening },
}

impl MaterialSpec {
    /// Glass fiber of the RVE comparison.
    pub fn rve_fiber() -> Self {
        MaterialSpec::Elastic { e: 72000.0, nu: 0.20 }
    }

    /// Thermoplastic matrix of the RVE comparison: initial yield 0.63 MPa,
    /// perfectly plastic.
    pub fn rve_matrix() -> Self {
        MaterialSpec::J2 {
            e: 1616.0,
            nu: 0.3545,
            hardening: Hardening::Table {
                points: vec![[0.0, 0.63]],
            },
        }
    }

    /// Fiber of the part-scale model.
    pub fn part_fiber() -> Self {
        MaterialSpec::Elastic { e: 80000.0, nu: 0.20 }
    }

    /// Part-scale matrix with the exponential hardening law.
    pub fn part_matrix() -> Self {
        MaterialSpec::J2 {
            e: 3800.0,
            nu: 0.39,
            hardening: Hardening::Exponential {
                h0: 140.0,
                s1: 120.0,
                s2: 0.0,
                s3: 90.0,
            },
        }
    }

    pub fn build(&self) -> Result<Arc<Constitutive>> {
        Constitutive::new(self).map(Arc::new)
    }

    pub fn elastic_stiffness(&self) -> Result<MandelMatrix6> {
        let (MaterialSpec::Elastic { e, nu } | MaterialSpec::J2 { e, nu, .. }) = self;
        isotropic_stiffness(*e, *nu)
    }
}

/// Precomputed constitutive data shared by every point of one material.
#[derive(Debug, Clone, PartialEq)]
pub struct Constitutive {
    pub stiffness: MandelMatrix6,
    pub bulk: f64,
    pub shear: f64,
    /// `None` for linear elasticity.
    pub hardening: Option<Hardening>,
}

impl Constitutive {
    pub fn new(spec: &MaterialSpec) -> Result<Self> {
        let (e, nu, hardening) = match spec {
            MaterialSpec::Elastic { e, nu } => (*e, *nu, None),
            MaterialSpec::J2 { e, nu, hardening } => {
                hardening.validate()?;
                (*e, *nu, Some(hardening.clone()))
            }
        };
        let (bulk, shear) = lame_moduli(e, nu)?;
        Ok(Self {
            stiffness: isotropic_stiffness(e, nu)?,
            bulk,
            shear,
            hardening,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MaterialState {
    pub stress: MandelVector6,
    pub eps_p: f64,
    pub plastic_strain: MandelVector6,
}

/// Result of one strain increment: `Δσ = C_t·Δε + dσ` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialResponse {
    pub dstress: MandelVector6,
    pub tangent: MandelMatrix6,
    pub correction: MandelVector6,
    pub state: MaterialState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialPoint {
    pub model: Arc<Constitutive>,
    pub state: MaterialState,
}

impl MaterialPoint {
    pub fn new(model: Arc<Constitutive>) -> Self {
        Self {
            model,
            state: MaterialState::default(),
        }
    }

    pub fn is_elastic(&self) -> bool {
        self.model.hardening.is_none()
    }

    pub fn update(&self, deps: &MandelVector6) -> Result<MaterialResponse> {
        material_update(self, deps)
    }

    pub fn commit(&mut self, r: &MaterialResponse) {
        self.state = r.state;
    }
}

/// Stress increment, algorithmic tangent and affine correction for the
/// strain increment `deps`, without modifying the point.
pub fn material_update(point: &MaterialPoint, deps: &MandelVector6) -> Result<MaterialResponse> {
    let m = &point.model;
    let c = &m.stiffness;
    let Some(hardening) = &m.hardening else {
        let ds = c * deps;
        let mut state = point.state;
        state.stress += ds;
        return Ok(MaterialResponse {
            dstress: ds,
            tangent: *c,
            correction: MandelVector6::zeros(),
            state,
        });
    };

    let old = point.state;
    let trial = old.stress + c * deps;
    let s_trial = deviator(&trial);
    let q_trial = (1.5f64).sqrt() * s_trial.norm();
    let sy0 = yield_stress(old.eps_p, hardening)?;
    if q_trial - sy0 <= 1e-12 * sy0 {
        return Ok(MaterialResponse {
            dstress: trial - old.stress,
            tangent: *c,
            correction: MandelVector6::zeros(),
            state: MaterialState { stress: trial, ..old },
        });
    }

    let mu = m.shear;
    let mut dg = 0.0;
    let mut converged = false;
    for _ in 0..RETURN_MAP_MAX_ITER {
        let g = q_trial - 3.0 * mu * dg - hardening.yield_stress(old.eps_p + dg);
        if g.abs() <= 1e-13 * sy0 {
            converged = true;
            break;
        }
        let dg_next = dg + g / (3.0 * mu + hardening.modulus(old.eps_p + dg));
        dg = if dg_next > 0.0 { dg_next } else { 0.5 * dg };
    }
    if !converged {
        return Err(Error::Material(format!(
            "return map did not converge in {RETURN_MAP_MAX_ITER} iterations"
        )));
    }

    let n = s_trial / s_trial.norm();
    let theta = 1.0 - 3.0 * mu * dg / q_trial;
    let stress = trial - (1.0 - theta) * s_trial;
    let eps_p = old.eps_p + dg;
    let h = hardening.modulus(eps_p);
    let theta_bar = 1.0 / (1.0 + h / (3.0 * mu)) - (1.0 - theta);
    let tangent = 3.0 * m.bulk * volumetric_projector() + 2.0 * mu * theta * deviatoric_projector()
        - 2.0 * mu * theta_bar * n * n.transpose();
    let dstress = stress - old.stress;
    Ok(MaterialResponse {
        dstress,
        tangent,
        correction: dstress - tangent * deps,
        state: MaterialState {
            stress,
            eps_p,
            plastic_strain: old.plastic_strain + dg * (1.5f64).sqrt() * n,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mandel::is_symmetric;

    fn linear(e: f64, nu: f64, s0: f64, h: f64) -> MaterialPoint {
        let spec = MaterialSpec::J2 {
            e,
            nu,
            hardening: Hardening::Exponential {
                h0: 1.0,
                s1: s0,
                s2: h,
                s3: 0.0,
            },
        };
        MaterialPoint::new(spec.build().unwrap())
    }

    #[test]
    fn exponential_law_values() {
        let h = Hardening::Exponential {
            h0: 140.0,
            s1: 120.0,
            s2: 0.0,
            s3: 90.0,
        };
        assert_eq!(yield_stress(0.0, &h).unwrap(), 30.0);
        assert!((yield_stress(0.2, &h).unwrap() - 120.0).abs() < 1e-6);
        assert!(yield_stress(-0.1, &h).is_err());
        let bad = Hardening::Exponential {
            h0: 1.0,
            s1: 10.0,
            s2: 0.0,
            s3: 10.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn table_interpolation() {
        let h = Hardening::Table {
            points: vec![[0.0, 10.0], [0.1, 20.0], [0.2, 25.0]],
        };
        assert!((h.yield_stress(0.05) - 15.0).abs() < 1e-12);
        assert!((h.yield_stress(0.3) - 30.0).abs() < 1e-12);
        assert_eq!(h.modulus(0.3), 50.0);
        let flat = Hardening::Table { points: vec![[0.0, 0.63]] };
        assert_eq!(flat.yield_stress(1.0), 0.63);
        assert_eq!(flat.modulus(1.0), 0.0);
    }

    #[test]
    fn elastic_has_no_correction() {
        let p = MaterialPoint::new(MaterialSpec::rve_fiber().build().unwrap());
        let d = MandelVector6::new(1e-3, -2e-4, 3e-4, 1e-4, 0.0, -5e-5);
        let r = p.update(&d).unwrap();
        assert_eq!(r.correction, MandelVector6::zeros());
        assert_eq!(r.dstress, p.model.stiffness * d);
    }

    /// Uniaxial strain `e` along x with linear hardening, in closed form.
    fn uniaxial_strain_oracle(e_total: f64, k: f64, mu: f64, s0: f64, h: f64) -> (f64, f64, f64) {
        let q_el = 2.0 * mu * e_total.abs();
        let ep = if q_el > s0 { (q_el - s0) / (3.0 * mu + h) } else { 0.0 };
        let q = (q_el - 3.0 * mu * ep) * e_total.signum();
        (k * e_total + 2.0 / 3.0 * q, k * e_total - q / 3.0, ep)
    }

    #[test]
    fn uniaxial_strain_matches_closed_form() {
        let (e, nu, s0, h) = (3800.0, 0.39, 30.0, 500.0);
        let mut p = linear(e, nu, s0, h);
        let (k, mu) = lame_moduli(e, nu).unwrap();
        let step = 2e-4;
        for i in 1..=60 {
            let r = p.update(&MandelVector6::new(step, 0.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
            p.commit(&r);
            let (sxx, syy, ep) = uniaxial_strain_oracle(step * i as f64, k, mu, s0, h);
            let s = p.state.stress;
            assert!((s[0] - sxx).abs() < 1e-10 * sxx.abs().max(1.0), "step {i}");
            assert!((s[1] - syy).abs() < 1e-10 * sxx.abs().max(1.0));
            assert!((s[2] - syy).abs() < 1e-10 * sxx.abs().max(1.0));
            assert!((p.state.eps_p - ep).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_matches_finite_differences_and_stays_symmetric() {
        let mut p = MaterialPoint::new(MaterialSpec::part_matrix().build().unwrap());
        let load = MandelVector6::new(8e-3, -2e-3, 1e-3, 3e-3, -1e-3, 2e-3);
        p.commit(&p.update(&load).unwrap());
        let d = MandelVector6::new(1e-3, 4e-4, -2e-4, 1e-4, 3e-4, -2e-4);
        let r = p.update(&d).unwrap();
        assert!(is_symmetric(&r.tangent));
        assert!((r.tangent * d + r.correction - r.dstress).norm() < 1e-12 * r.dstress.norm());
        let h = 1e-7;
        for j in 0..6 {
            let mut e = d;
            e[j] += h;
            let plus = p.update(&e).unwrap().dstress;
            e[j] -= 2.0 * h;
            let minus = p.update(&e).unwrap().dstress;
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - r.tangent.column(j)).norm() < 1e-5 * r.tangent.norm());
        }
    }

    #[test]
    fn unloading_is_elastic() {
        let mut p = linear(2000.0, 0.3, 20.0, 100.0);
        let d = MandelVector6::new(1e-3, 0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..30 {
            p.commit(&p.update(&d).unwrap());
        }
        let ep = p.state.eps_p;
        assert!(ep > 0.0);
        let r = p.update(&(-0.1 * d)).unwrap();
        assert_eq!(r.tangent, p.model.stiffness);
        assert_eq!(r.state.eps_p, ep);
        assert!((r.dstress - p.model.stiffness * (-0.1 * d)).norm() < 1e-9);
    }
}
