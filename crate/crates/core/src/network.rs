//! Binary-tree material network: topology, the two-phase laminate building
//! block and the linear forward pass.
//!
//! Nodes are stored breadth-first: node `n` has children `2n+1` (left, the
//! phase-1 slot of its block) and `2n+2` (right, phase 2). Layer `i`
//! (1-based) holds nodes `2^(i-1)-1 .. 2^i-1`. In the bottom layer the
//! 1-based index `k` of a node decides its phase: even `k` is fiber, odd `k`
//! is matrix, so every bottom block laminates matrix (left) with fiber
//! (right).

use std::f64::consts::FRAC_PI_4;

use nalgebra::{Matrix3, Vector3, LU, U3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mandel::{rotation6, EulerAngles, MandelMatrix6, Rotation6, MandelVector6, NORMAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Matrix,
    Fiber,
}

impl Phase {
    /// Phase of bottom node `k` (1-based within the bottom layer).
    pub fn of_bottom(k: usize) -> Phase {
        if k.is_multiple_of(2) {
            Phase::Fiber
        } else {
            Phase::Matrix
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    n_layers: usize,
    z: Vec<f64>,
    angles: Vec<EulerAngles>,
}

impl Network {
    pub fn new(n_layers: usize, z: Vec<f64>, angles: Vec<EulerAngles>) -> Result<Self> {
        if n_layers < 2 {
            return Err(Error::Topology(format!("need at least 2 layers, got {n_layers}")));
        }
        if n_layers > 20 {
            return Err(Error::Topology(format!("{n_layers} layers is unreasonably deep")));
        }
        let nb = 1usize << (n_layers - 1);
        let nn = (1usize << n_layers) - 1;
        if z.len() != nb {
            return Err(Error::Topology(format!(
                "{n_layers} layers need {nb} activations, got {}",
                z.len()
            )));
        }
        if angles.len() != nn {
            return Err(Error::Topology(format!(
                "{n_layers} layers need {nn} angle triples, got {}",
                angles.len()
            )));
        }
        Ok(Self { n_layers, z, angles })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_nodes(&self) -> usize {
        (1 << self.n_layers) - 1
    }

    pub fn n_bottom(&self) -> usize {
        1 << (self.n_layers - 1)
    }

    /// Heap index of the first bottom node.
    pub fn bottom_offset(&self) -> usize {
        self.n_bottom() - 1
    }

    pub fn is_bottom(&self, node: usize) -> bool {
        node >= self.bottom_offset()
    }

    pub fn node_index(layer: usize, k: usize) -> usize {
        (1 << (layer - 1)) - 1 + (k - 1)
    }

    /// Phase of a bottom-layer heap node.
    pub fn phase_of(&self, node: usize) -> Phase {
        Phase::of_bottom(node - self.bottom_offset() + 1)
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn z_mut(&mut self) -> &mut [f64] {
        &mut self.z
    }

    pub fn angles(&self) -> &[EulerAngles] {
        &self.angles
    }

    pub fn angles_mut(&mut self) -> &mut [EulerAngles] {
        &mut self.angles
    }

    pub fn n_params(&self) -> usize {
        self.z.len() + 3 * self.angles.len()
    }

    /// Trainables packed as `[z..., α₀, β₀, γ₀, α₁, ...]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.z.clone();
        for a in &self.angles {
            p.extend_from_slice(&a.as_array());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Topology(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let nb = self.z.len();
        self.z.copy_from_slice(&p[..nb]);
        for (a, chunk) in self.angles.iter_mut().zip(p[nb..].chunks_exact(3)) {
            *a = EulerAngles::new(chunk[0], chunk[1], chunk[2]);
        }
        Ok(())
    }

    /// Nodal weights for every node: ReLU of the activations at the bottom,
    /// sums of children above.
    pub fn weights(&self) -> Vec<f64> {
        let nn = self.n_nodes();
        let off = self.bottom_offset();
        let mut w = vec![0.0; nn];
        for (k, z) in self.z.iter().enumerate() {
            w[off + k] = z.max(0.0);
        }
        for n in (0..off).rev() {
            w[n] = w[2 * n + 1] + w[2 * n + 2];
        }
        w
    }

    pub fn total_weight(&self) -> f64 {
        self.z.iter().map(|z| z.max(0.0)).sum()
    }

    /// Weight target of the activation penalty, `2^(N-2)`.
    pub fn weight_target(&self) -> f64 {
        (1u64 << (self.n_layers - 2)) as f64
    }

    pub fn same_topology(&self, other: &Network) -> bool {
        self.n_layers == other.n_layers
    }

    /// Replaces the top node's rotation `Q_top` by `Q_top·Qᵀ`, which expresses
    /// the network output in a frame rotated by `Q`.
    pub fn compose_top_rotation(&mut self, q: &Matrix3<f64>) {
        let top = self.angles[0].matrix() * q.transpose();
        self.angles[0] = EulerAngles::from_matrix(&top);
    }

    pub fn compile(&self) -> Result<CompiledNetwork> {
        CompiledNetwork::new(self)
    }
}

/// Random network: activations uniform in (0.4, 0.6), angles uniform in
/// (−π/4, π/4). Deterministic for a given seed.
pub fn build_network(n_layers: usize, seed: u64) -> Result<Network> {
    if n_layers < 2 {
        return Err(Error::Topology(format!("need at least 2 layers, got {n_layers}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = 1usize << (n_layers - 1);
    let nn = (1usize << n_layers) - 1;
    let z = (0..nb).map(|_| rng.random_range(0.4..0.6)).collect();
    let angles = (0..nn)
        .map(|_| {
            EulerAngles::new(
                rng.random_range(-FRAC_PI_4..FRAC_PI_4),
                rng.random_range(-FRAC_PI_4..FRAC_PI_4),
                rng.random_range(-FRAC_PI_4..FRAC_PI_4),
            )
        })
        .collect();
    Network::new(n_layers, z, angles)
}

/// How a node combines its children after pruning zero-weight subtrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    /// Bottom node carrying a material phase.
    Leaf(Phase),
    /// Both children alive; `vf2` is the right child's share.
    Block { vf2: f64 },
    /// Exactly one child alive; the node passes it through.
    PassLeft,
    PassRight,
    Dead,
}

/// Derived quantities of a [`Network`] needed by every evaluation: weights,
/// liveness, block fractions and 6×6 rotations.
#[derive(Debug, Clone)]
pub struct CompiledNetwork {
    n_layers: usize,
    pub weights: Vec<f64>,
    pub kinds: Vec<NodeKind>,
    pub rotations: Vec<Rotation6>,
    pub angles: Vec<EulerAngles>,
}

impl CompiledNetwork {
    pub fn new(net: &Network) -> Result<Self> {
        let weights = net.weights();
        if !(weights[0] > 0.0) {
            return Err(Error::EmptyNetwork);
        }
        let nn = net.n_nodes();
        let off = net.bottom_offset();
        let kinds = (0..nn)
            .map(|n| {
                if weights[n] <= 0.0 {
                    NodeKind::Dead
                } else if n >= off {
                    NodeKind::Leaf(net.phase_of(n))
                } else {
                    let (wl, wr) = (weights[2 * n + 1], weights[2 * n + 2]);
                    if wl <= 0.0 {
                        NodeKind::PassRight
                    } else if wr <= 0.0 {
                        NodeKind::PassLeft
                    } else {
                        NodeKind::Block { vf2: wr / (wl + wr) }
                    }
                }
            })
            .collect();
        let rotations = net.angles.iter().map(rotation6).collect();
        Ok(Self {
            n_layers: net.n_layers,
            weights,
            kinds,
            rotations,
            angles: net.angles.clone(),
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn bottom_offset(&self) -> usize {
        (1 << (self.n_layers - 1)) - 1
    }

    pub fn is_alive(&self, n: usize) -> bool {
        !matches!(self.kinds[n], NodeKind::Dead)
    }

    /// Alive bottom nodes (heap indices) with their phases.
    pub fn alive_leaves(&self) -> impl Iterator<Item = (usize, Phase)> + '_ {
        self.kinds.iter().enumerate().filter_map(|(n, k)| match k {
            NodeKind::Leaf(p) => Some((n, *p)),
            _ => None,
        })
    }

    /// Top-node stiffness `C₁¹` for the given fiber and matrix stiffnesses.
    pub fn forward_stiffness(&self, c_fiber: &MandelMatrix6, c_matrix: &MandelMatrix6) -> Result<MandelMatrix6> {
        let mut c = vec![MandelMatrix6::zeros(); self.n_nodes()];
        for n in (0..self.n_nodes()).rev() {
            let local = match self.kinds[n] {
                NodeKind::Dead => continue,
                NodeKind::Leaf(Phase::Fiber) => *c_fiber,
                NodeKind::Leaf(Phase::Matrix) => *c_matrix,
                NodeKind::PassLeft => c[2 * n + 1],
                NodeKind::PassRight => c[2 * n + 2],
                NodeKind::Block { vf2 } => block_homogenize(&c[2 * n + 1], &c[2 * n + 2], vf2)?,
            };
            c[n] = self.rotations[n].stiffness_to_parent(&local);
        }
        Ok(c[0])
    }
}

/// Result of the building-block interface solve.
#[derive(Debug, Clone)]
pub struct BlockSolve {
    /// Strain concentration `A`: phase-1 strain from the block strain.
    pub concentration: MandelMatrix6,
    /// Homogenized stiffness `C̄`.
    pub homogenized: MandelMatrix6,
    /// Inverse of the mixed normal block `Ĉ = vf2·C¹ + (1−vf2)·C²` on rows
    /// and columns (33, 23, 31), embedded in a zero 6×6 matrix.
    pub normal_inverse: MandelMatrix6,
    normal_lu: LU<f64, U3, U3>,
}

impl BlockSolve {
    /// `K·v` through the factorization of `Ĉ`.
    pub fn apply_normal_inverse(&self, v: &MandelVector6) -> MandelVector6 {
        let rhs = Vector3::from_fn(|i, _| v[NORMAL[i]]);
        let x = self.normal_lu.solve(&rhs).expect("pivots checked in solve_block");
        let mut out = MandelVector6::zeros();
        for (i, &r) in NORMAL.iter().enumerate() {
            out[r] = x[i];
        }
        out
    }
}

/// Inverse of the (33, 23, 31) block of `m`, embedded in a zero 6×6 matrix.
pub(crate) fn embedded_normal_inverse(m: &MandelMatrix6) -> Result<MandelMatrix6> {
    let block = Matrix3::from_fn(|i, j| m[(NORMAL[i], NORMAL[j])]);
    let scale = block.abs().max();
    let det = block.determinant();
    if !(scale > 0.0) || !(det.abs() > 1e-14 * scale.powi(3)) {
        return Err(Error::DegenerateInterface);
    }
    let inv = block.try_inverse().ok_or(Error::DegenerateInterface)?;
    let mut k = MandelMatrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            k[(NORMAL[i], NORMAL[j])] = inv[(i, j)];
        }
    }
    Ok(k)
}

/// Two-phase laminate with interface normal e3. Phase 2 occupies volume
/// fraction `vf2`.
///
/// Strain continuity fixes the in-plane components (11, 22, 12) of the
/// phase-1 strain to the average; traction continuity on (33, 23, 31) gives
/// `Ĉ·ε¹_N = vf2·(C² − C¹)_N·ε̄ + Ĉ·ε̄_N` with `Ĉ = vf2·C¹_NN + (1−vf2)·C²_NN`,
/// hence `A = I + vf2·K·(C² − C¹)` with `K` the embedded inverse of `Ĉ`.
/// This is the Mandel concentration form with the `vf2·(C² − C¹)` entries on
/// the in-plane columns and plain `C²` on the normal columns.
pub fn solve_block(c1: &MandelMatrix6, c2: &MandelMatrix6, vf2: f64) -> Result<BlockSolve> {
    if !(0.0..=1.0).contains(&vf2) {
        return Err(Error::Parameter(format!("volume fraction {vf2} outside [0, 1]")));
    }
    let mixed = vf2 * c1 + (1.0 - vf2) * c2;
    let k = embedded_normal_inverse(&mixed)?;
    let dc = c2 - c1;
    // factorized solve; the explicit inverse loses digits at high contrast
    let lu = Matrix3::from_fn(|i, j| mixed[(NORMAL[i], NORMAL[j])]).lu();
    let rhs = nalgebra::Matrix3x6::from_fn(|i, j| dc[(NORMAL[i], j)]);
    let x = lu.solve(&rhs).ok_or(Error::DegenerateInterface)?;
    let mut kdc = MandelMatrix6::zeros();
    for (i, &r) in NORMAL.iter().enumerate() {
        kdc.set_row(r, &x.row(i));
    }
    let a = MandelMatrix6::identity() + vf2 * kdc;
    let a2 = MandelMatrix6::identity() - (1.0 - vf2) * kdc;
    let homogenized = (1.0 - vf2) * (c1 * a) + vf2 * (c2 * a2);
    Ok(BlockSolve {
        concentration: a,
        homogenized,
        normal_inverse: k,
        normal_lu: lu,
    })
}

pub fn strain_concentration(c1: &MandelMatrix6, c2: &MandelMatrix6, vf2: f64) -> Result<MandelMatrix6> {
    Ok(solve_block(c1, c2, vf2)?.concentration)
}

/// `C̄ = C² − (1 − vf2)·(C² − C¹)·A`.
pub fn block_homogenize(c1: &MandelMatrix6, c2: &MandelMatrix6, vf2: f64) -> Result<MandelMatrix6> {
    Ok(solve_block(c1, c2, vf2)?.homogenized)
}

pub fn forward_stiffness(net: &Network, c_fiber: &MandelMatrix6, c_matrix: &MandelMatrix6) -> Result<MandelMatrix6> {
    net.compile()?.forward_stiffness(c_fiber, c_matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mandel::{is_spd, isotropic_stiffness, orthotropic_stiffness, reuss_bound, voigt_bound};
    use crate::test_oracle as oracle;
    use nalgebra::SVector;

    fn matrix_phase() -> MandelMatrix6 {
        isotropic_stiffness(1616.0, 0.3545).unwrap()
    }

    fn fiber_phase() -> MandelMatrix6 {
        isotropic_stiffness(72000.0, 0.20).unwrap()
    }

    fn rel(a: &MandelMatrix6, b: &MandelMatrix6) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn build_network_shapes_and_determinism() {
        let net = build_network(8, 7).unwrap();
        assert_eq!(net.z().len(), 128);
        assert_eq!(net.angles().len(), 255);
        assert!(net.z().iter().all(|z| (0.4..0.6).contains(z)));
        assert_eq!(net, build_network(8, 7).unwrap());
        let small = build_network(2, 1).unwrap();
        assert_eq!(small.z().len(), 2);
        assert_eq!(small.n_nodes(), 3);
        assert!(matches!(build_network(1, 0), Err(Error::Topology(_))));
    }

    #[test]
    fn weights_are_consistent_after_mutation() {
        let mut net = build_network(5, 3).unwrap();
        net.z_mut()[3] = -0.2;
        net.z_mut()[10] = 2.0;
        let w = net.weights();
        for n in 0..net.bottom_offset() {
            assert_eq!(w[n], w[2 * n + 1] + w[2 * n + 2]);
        }
        assert_eq!(w[net.bottom_offset() + 3], 0.0);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn phase_assignment_alternates() {
        let net = build_network(4, 0).unwrap();
        let off = net.bottom_offset();
        let fibers = (0..net.n_bottom()).filter(|k| net.phase_of(off + k) == Phase::Fiber).count();
        assert_eq!(fibers, net.n_bottom() / 2);
        assert_eq!(net.phase_of(off), Phase::Matrix);
        assert_eq!(net.phase_of(off + 1), Phase::Fiber);
    }

    #[test]
    fn identical_phases_give_identity_concentration() {
        let c = matrix_phase();
        let a = strain_concentration(&c, &c, 0.37).unwrap();
        assert!((a - MandelMatrix6::identity()).norm() < 1e-14);
        assert!(rel(&block_homogenize(&c, &c, 0.37).unwrap(), &c) < 1e-14);
    }

    #[test]
    fn degenerate_fractions() {
        let (cm, cf) = (matrix_phase(), fiber_phase());
        assert!(rel(&block_homogenize(&cm, &cf, 0.0).unwrap(), &cm) < 1e-14);
        assert!(rel(&block_homogenize(&cm, &cf, 1.0).unwrap(), &cf) < 1e-14);
        assert!(block_homogenize(&cm, &cf, 1.2).is_err());
    }

    #[test]
    fn concentration_rows_and_mixture_identity() {
        let (cm, cf) = (matrix_phase(), fiber_phase());
        let f = 0.5;
        let a = strain_concentration(&cm, &cf, f).unwrap();
        for &r in &[0usize, 1, 3] {
            for c in 0..6 {
                assert_eq!(a[(r, c)], if r == c { 1.0 } else { 0.0 });
            }
        }
        // phase-2 concentration from the mixture rule
        let a2 = (MandelMatrix6::identity() - (1.0 - f) * a) / f;
        let mix = (1.0 - f) * a + f * a2;
        assert!((mix - MandelMatrix6::identity()).norm() < 1e-14);
    }

    #[test]
    fn block_matches_interface_oracle_rve_phases() {
        let (cm, cf) = (matrix_phase(), fiber_phase());
        let (a_oracle, c_oracle) = oracle::block_oracle(&cm, &cf, 0.5);
        let solve = solve_block(&cm, &cf, 0.5).unwrap();
        assert!(rel(&solve.concentration, &a_oracle) < 1e-10);
        assert!(rel(&solve.homogenized, &c_oracle) < 1e-10);
        // transversely isotropic about the lamination normal
        let c = solve.homogenized;
        assert!((c[(0, 0)] - c[(1, 1)]).abs() < 1e-9 * c.norm());
        assert!((c[(4, 4)] - c[(5, 5)]).abs() < 1e-9 * c.norm());
        assert!(is_spd(&c));
    }

    #[test]
    fn block_respects_voigt_reuss() {
        let c1 = orthotropic_stiffness([30.0, 12.0, 5.0], 0.2, 0.3, 0.25, 4.0, 2.0, 3.0).unwrap();
        let c2 = fiber_phase();
        for &f in &[0.05, 0.3, 0.5, 0.8, 0.97] {
            let c = block_homogenize(&c1, &c2, f).unwrap();
            let v = voigt_bound(&c1, &c2, f);
            let r = reuss_bound(&c1, &c2, f).unwrap();
            for i in 0..50 {
                let x = SVector::<f64, 6>::from_fn(|r, _| ((r * 7 + i * 13) as f64).sin());
                let e = x.dot(&(c * x));
                assert!(x.dot(&(r * x)) <= e * (1.0 + 1e-9));
                assert!(e <= x.dot(&(v * x)) * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn two_layer_forward_equals_block() {
        let z = vec![0.7, 0.3];
        let net = Network::new(2, z, vec![EulerAngles::ZERO; 3]).unwrap();
        let (cm, cf) = (matrix_phase(), fiber_phase());
        let c = forward_stiffness(&net, &cf, &cm).unwrap();
        let b = block_homogenize(&cm, &cf, 0.3).unwrap();
        assert!(rel(&c, &b) < 1e-15);
    }

    #[test]
    fn indistinguishable_phases_pass_through() {
        let net = build_network(5, 11).unwrap();
        let c = matrix_phase();
        let out = forward_stiffness(&net, &c, &c).unwrap();
        assert!(rel(&out, &c) < 1e-12);
    }

    #[test]
    fn forward_matches_reference_evaluator() {
        let (cm, cf) = (matrix_phase(), fiber_phase());
        for seed in 0..5 {
            let net = build_network(4, seed).unwrap();
            let fast = forward_stiffness(&net, &cf, &cm).unwrap();
            let reference = oracle::reference_forward(&net, &cf, &cm);
            assert!(rel(&fast, &reference) < 1e-10, "seed {seed}");
            assert!(is_spd(&fast));
        }
    }

    #[test]
    fn pruning_matches_explicit_pruned_tree() {
        let (cm, cf) = (matrix_phase(), fiber_phase());
        let mut net = build_network(3, 5).unwrap();
        // kill bottom node 1 (matrix) of the first pair: block (1,2) collapses
        // onto the fiber leaf
        net.z_mut()[0] = -0.3;
        let pruned = forward_stiffness(&net, &cf, &cm).unwrap();
        let reference = oracle::reference_forward(&net, &cf, &cm);
        assert!(rel(&pruned, &reference) < 1e-12);
        net.z_mut()[0] = 0.0;
        assert!(rel(&forward_stiffness(&net, &cf, &cm).unwrap(), &pruned) < 1e-15);
    }

    #[test]
    fn empty_network_rejected() {
        let net = Network::new(2, vec![-1.0, 0.0], vec![EulerAngles::ZERO; 3]).unwrap();
        assert!(matches!(forward_stiffness(&net, &fiber_phase(), &matrix_phase()), Err(Error::EmptyNetwork)));
    }

    #[test]
    fn top_rotation_composition_rotates_output() {
        let (cm, cf) = (matrix_phase(), fiber_phase());
        let mut net = build_network(3, 2).unwrap();
        let base = forward_stiffness(&net, &cf, &cm).unwrap();
        let q = EulerAngles::new(0.3, 1.0, -0.7).matrix();
        net.compose_top_rotation(&q);
        let rotated = forward_stiffness(&net, &cf, &cm).unwrap();
        let expected = Rotation6::from_matrix3(&q.transpose()).stiffness_to_parent(&base);
        assert!(rel(&rotated, &expected) < 1e-12);
    }
}
