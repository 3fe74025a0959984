//! Structured teacher networks standing in for RVE homogenization data.
//!
//! Every group of four bottom nodes forms a fiber unit: a matrix/fiber
//! laminate turned edge-on and laminated again with pure matrix, which
//! is stiff along a single direction like an embedded fiber. The units
//! are pointed along a set of directions describing the orientation state.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::mandel::EulerAngles;
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrientationState {
    /// Directions spread evenly over the sphere.
    Random3d,
    /// Directions spread evenly over the x-y plane.
    Random2d,
    /// All directions along x.
    Unidirectional,
}

/// Rotation whose local axis `local` is carried onto the parent direction `d`.
/// The remaining two axes are rolled about `d` by `roll`.
fn aligning(local: usize, d: &Vector3<f64>, roll: f64) -> EulerAngles {
    let d = d.normalize();
    let helper = if d.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let a0 = helper.cross(&d).normalize();
    let b0 = d.cross(&a0);
    let (s, c) = roll.sin_cos();
    let a = c * a0 + s * b0;
    let b = c * b0 - s * a0;
    // rows of Q are the local axes written in parent coordinates
    let rows = match local {
        0 => [d, a, b],
        1 => [b, d, a],
        _ => [a, b, d],
    };
    let q = Matrix3::from_rows(&[rows[0].transpose(), rows[1].transpose(), rows[2].transpose()]);
    EulerAngles::from_matrix(&q)
}

/// Unit directions of the orientation state, one per fiber unit.
pub fn unit_directions(state: OrientationState, n: usize) -> Vec<Vector3<f64>> {
    match state {
        OrientationState::Unidirectional => vec![Vector3::x(); n],
        OrientationState::Random2d => (0..n)
            .map(|i| {
                let t = PI * i as f64 / n as f64;
                Vector3::new(t.cos(), t.sin(), 0.0)
            })
            .collect(),
        OrientationState::Random3d => {
            // Fibonacci lattice on the sphere
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2 * i + 1) as f64 / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    Vector3::new(r * t.cos(), r * t.sin(), z)
                })
                .collect()
        }
    }
}

/// Teacher network of `n_layers` layers with fiber volume fraction `vf`
/// and the given orientation state. Activations sum to `2^(N-2)`.
pub fn teacher_network(n_layers: usize, vf: f64, state: OrientationState) -> Result<Network> {
    if n_layers < 3 {
        return Err(Error::Topology(format!("teacher needs at least 3 layers, got {n_layers}")));
    }
    if !(vf > 0.0 && vf < 0.5) {
        return Err(Error::Parameter(format!("teacher volume fraction must be in (0, 0.5), got {vf}")));
    }
    let nb = 1usize << (n_layers - 1);
    let nn = (1usize << n_layers) - 1;
    let n_units = nb / 4;
    let mut z = Vec::with_capacity(nb);
    for _ in 0..n_units {
        z.extend_from_slice(&[1.0 - 2.0 * vf, 2.0 * vf, 1.0, 0.0]);
    }

    // Targets are absolute frames; each node stores its rotation relative
    // to the accumulated frame of its parent.
    let mut frames = vec![Matrix3::identity(); nn];
    let mut angles = vec![EulerAngles::ZERO; nn];
    fn place(node: usize, target: Matrix3<f64>, frames: &mut [Matrix3<f64>], angles: &mut [EulerAngles]) {
        let parent = if node == 0 { Matrix3::identity() } else { frames[(node - 1) / 2] };
        angles[node] = EulerAngles::from_matrix(&(target * parent.transpose()));
        frames[node] = target;
    }
    // upper blocks cycle their interface normal through x, y, z
    for layer in 1..=n_layers - 3 {
        let normal = match layer % 3 {
            0 => Vector3::z(),
            1 => Vector3::x(),
            _ => Vector3::y(),
        };
        for k in 1..=1usize << (layer - 1) {
            place(Network::node_index(layer, k), aligning(2, &normal, 0.0).matrix(), &mut frames, &mut angles);
        }
    }
    let unit_layer = n_layers - 2;
    let stack = aligning(2, &Vector3::x(), 0.0);
    let golden = PI * (3.0 - 5f64.sqrt());
    for (u, d) in unit_directions(state, n_units).iter().enumerate() {
        let roll = match state {
            OrientationState::Unidirectional => 0.0,
            _ => golden * u as f64,
        };
        place(Network::node_index(unit_layer, u + 1), aligning(1, d, roll).matrix(), &mut frames, &mut angles);
        // matrix/fiber laminate with its normal along the unit's x axis
        angles[Network::node_index(unit_layer + 1, 2 * u + 1)] = stack;
    }
    Network::new(n_layers, z, angles)
}

/// The four anchor teachers: random 3D, random 2D and unidirectional at
/// `vf = 0.08`, unidirectional at `vf = 0.35`. Returned with
/// `(vf, a11, a22)` of each state.
pub fn anchor_teachers(n_layers: usize) -> Result<Vec<([f64; 3], Network)>> {
    let specs = [
        ([0.08, 1.0 / 3.0, 1.0 / 3.0], OrientationState::Random3d),
        ([0.08, 0.5, 0.5], OrientationState::Random2d),
        ([0.08, 1.0, 0.0], OrientationState::Unidirectional),
        ([0.35, 1.0, 0.0], OrientationState::Unidirectional),
    ];
    specs
        .iter()
        .map(|(d, s)| Ok((*d, teacher_network(n_layers, d[0], *s)?)))
        .collect()
}
