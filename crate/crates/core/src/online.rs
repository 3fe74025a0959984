//! Nonlinear evaluation of a trained network: affine building blocks with
//! stress corrections, strain de-homogenization, and the fixed-point
//! iteration over the bottom-layer strains.

use std::sync::Arc;

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{Constitutive, MaterialPoint, MaterialResponse, MaterialState};
use crate::mandel::{MandelMatrix6, MandelVector6};
use crate::network::{solve_block, CompiledNetwork, Network, NodeKind, Phase};

/// Affine response of one laminate block, `Δσ̄ = C̄·Δε̄ + dσ̄`, together with
/// the phase-1 strain map `Δε¹ = A·Δε̄ + a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineBlock {
    pub homogenized: MandelMatrix6,
    pub correction: MandelVector6,
    pub concentration: MandelMatrix6,
    pub shift: MandelVector6,
}

/// Block response for phase laws `Δσʲ = Cʲ·Δεʲ + dσʲ` with phase 2 at
/// volume fraction `vf2`. The correction enters the normal traction
/// balance, shifting the phase-1 strain by `a = vf2·K·(dσ² − dσ¹)`.
pub fn affine_block_homogenize(
    c1: &MandelMatrix6,
    d1: &MandelVector6,
    c2: &MandelMatrix6,
    d2: &MandelVector6,
    vf2: f64,
) -> Result<AffineBlock> {
    let solve = solve_block(c1, c2, vf2)?;
    let shift = vf2 * solve.apply_normal_inverse(&(d2 - d1));
    let correction = (1.0 - vf2) * d1 + vf2 * d2 - (1.0 - vf2) * ((c2 - c1) * shift);
    Ok(AffineBlock {
        homogenized: solve.homogenized,
        correction,
        concentration: solve.concentration,
        shift,
    })
}

/// Phase strains of a block from its average strain.
pub fn dehomogenize(eps_bar: &MandelVector6, block: &AffineBlock, vf2: f64) -> (MandelVector6, MandelVector6) {
    let e1 = block.concentration * eps_bar + block.shift;
    let e2 = (eps_bar - (1.0 - vf2) * e1) / vf2;
    (e1, e2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepOptions {
    /// Convergence tolerance, scaled by `max(1, ‖Δε‖)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Non-decreasing residuals tolerated before relaxation is switched on.
    pub relax_after: usize,
    pub relaxation: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            relax_after: 20,
            relaxation: 0.5,
        }
    }
}

/// Outcome of one macroscopic strain increment, not yet committed.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub dstress: MandelVector6,
    /// Top-node tangent `C₁¹` of the final sweep.
    pub tangent: MandelMatrix6,
    pub iterations: usize,
    pub residual: f64,
    deps: MandelVector6,
    responses: Vec<(usize, MaterialResponse)>,
    concentration: Vec<MandelMatrix6>,
}

/// Per-quadrature-point network state: material points at the alive
/// bottom nodes and the macroscopic stress.
#[derive(Debug, Clone)]
pub struct NetworkState {
    net: Arc<CompiledNetwork>,
    /// `(node, point)` for every alive bottom node.
    points: Vec<(usize, MaterialPoint)>,
    /// Phase-1 concentration of every block from the last converged sweep
    /// (identity elsewhere), used to predict the next bottom strains.
    concentration: Vec<MandelMatrix6>,
    stress: MandelVector6,
    strain: MandelVector6,
}

#[derive(Default)]
struct Sweep {
    c: Vec<MandelMatrix6>,
    d: Vec<MandelVector6>,
    blocks: Vec<Option<AffineBlock>>,
    eps: Vec<MandelVector6>,
}

impl Sweep {
    fn new(nn: usize) -> Self {
        Self {
            c: vec![MandelMatrix6::zeros(); nn],
            d: vec![MandelVector6::zeros(); nn],
            blocks: vec![None; nn],
            eps: vec![MandelVector6::zeros(); nn],
        }
    }
}

impl NetworkState {
    pub fn new(net: &Network, fiber: Arc<Constitutive>, matrix: Arc<Constitutive>) -> Result<Self> {
        Self::from_compiled(Arc::new(net.compile()?), fiber, matrix)
    }

    pub fn from_compiled(net: Arc<CompiledNetwork>, fiber: Arc<Constitutive>, matrix: Arc<Constitutive>) -> Result<Self> {
        let points: Vec<(usize, MaterialPoint)> = net
            .alive_leaves()
            .map(|(n, phase)| {
                let model = match phase {
                    Phase::Fiber => fiber.clone(),
                    Phase::Matrix => matrix.clone(),
                };
                (n, MaterialPoint::new(model))
            })
            .collect();
        let mut state = Self {
            concentration: vec![MandelMatrix6::identity(); net.n_nodes()],
            net,
            points,
            stress: MandelVector6::zeros(),
            strain: MandelVector6::zeros(),
        };
        // elastic concentrations seed the first strain prediction
        let mut sweep = Sweep::new(state.net.n_nodes());
        let elastic: Vec<(usize, MandelMatrix6, MandelVector6)> = state
            .points
            .iter()
            .map(|(n, p)| (*n, p.model.stiffness, MandelVector6::zeros()))
            .collect();
        state.forward(&elastic, &mut sweep)?;
        for (n, b) in sweep.blocks.iter().enumerate() {
            if let Some(b) = b {
                state.concentration[n] = b.concentration;
            }
        }
        Ok(state)
    }

    pub fn network(&self) -> &CompiledNetwork {
        &self.net
    }

    pub fn stress(&self) -> &MandelVector6 {
        &self.stress
    }

    pub fn strain(&self) -> &MandelVector6 {
        &self.strain
    }

    /// Alive bottom nodes with their material points.
    pub fn points(&self) -> &[(usize, MaterialPoint)] {
        &self.points
    }

    /// Forward sweep from bottom-node linearizations `(node, C, dσ)` in the
    /// node's local frame. Fills stiffness and correction of every node as
    /// seen from its parent.
    fn forward(&self, leaves: &[(usize, MandelMatrix6, MandelVector6)], s: &mut Sweep) -> Result<()> {
        let net = &*self.net;
        let mut li = leaves.len();
        for n in (0..net.n_nodes()).rev() {
            let (c, d) = match net.kinds[n] {
                NodeKind::Dead => continue,
                NodeKind::Leaf(_) => {
                    li -= 1;
                    debug_assert_eq!(leaves[li].0, n);
                    (leaves[li].1, leaves[li].2)
                }
                NodeKind::PassLeft => (s.c[2 * n + 1], s.d[2 * n + 1]),
                NodeKind::PassRight => (s.c[2 * n + 2], s.d[2 * n + 2]),
                NodeKind::Block { vf2 } => {
                    let (l, r) = (2 * n + 1, 2 * n + 2);
                    let b = affine_block_homogenize(&s.c[l], &s.d[l], &s.c[r], &s.d[r], vf2)?;
                    s.blocks[n] = Some(b);
                    (b.homogenized, b.correction)
                }
            };
            let rot = &net.rotations[n];
            s.c[n] = rot.stiffness_to_parent(&c);
            s.d[n] = rot.vector_to_parent(&d);
        }
        Ok(())
    }

    /// Backward sweep: local strain of every alive node from the macroscopic
    /// increment, through the given per-node strain maps.
    fn backward<F>(&self, deps: &MandelVector6, eps: &mut [MandelVector6], split: F)
    where
        F: Fn(usize, &MandelVector6, f64) -> (MandelVector6, MandelVector6),
    {
        let net = &*self.net;
        let mut incoming = vec![MandelVector6::zeros(); net.n_nodes()];
        incoming[0] = *deps;
        for n in 0..net.n_nodes() {
            if !net.is_alive(n) {
                continue;
            }
            let local = net.rotations[n].vector_to_local(&incoming[n]);
            eps[n] = local;
            match net.kinds[n] {
                NodeKind::Block { vf2 } => {
                    let (e1, e2) = split(n, &local, vf2);
                    incoming[2 * n + 1] = e1;
                    incoming[2 * n + 2] = e2;
                }
                NodeKind::PassLeft => incoming[2 * n + 1] = local,
                NodeKind::PassRight => incoming[2 * n + 2] = local,
                NodeKind::Leaf(_) | NodeKind::Dead => {}
            }
        }
    }

    /// Solves one macroscopic strain increment on trial copies of the
    /// material points. The state is unchanged until [`commit`](Self::commit).
    pub fn step(&self, deps: &MandelVector6, opts: &StepOptions) -> Result<StepOutcome> {
        let nn = self.net.n_nodes();
        let mut sweep = Sweep::new(nn);
        let mut predicted = vec![MandelVector6::zeros(); nn];
        self.backward(deps, &mut predicted, |n, e, vf2| {
            let e1 = self.concentration[n] * e;
            (e1, (e - (1.0 - vf2) * e1) / vf2)
        });
        let mut strains: Vec<MandelVector6> = self.points.iter().map(|(n, _)| predicted[*n]).collect();

        let scale = deps.norm().max(1.0);
        let mut prev = f64::INFINITY;
        let mut stalled = 0;
        let mut relax = 1.0;
        for iter in 1..=opts.max_iter {
            let responses = self
                .points
                .iter()
                .zip(&strains)
                .map(|((n, p), e)| p.update(e).map(|r| (*n, r)))
                .collect::<Result<Vec<_>>>()?;
            let leaves: Vec<_> = responses.iter().map(|(n, r)| (*n, r.tangent, r.correction)).collect();
            self.forward(&leaves, &mut sweep)?;
            let dstress = sweep.c[0] * deps + sweep.d[0];

            let blocks = &sweep.blocks;
            self.backward(deps, &mut sweep.eps, |n, e, vf2| {
                dehomogenize(e, blocks[n].as_ref().expect("block node without block data"), vf2)
            });
            let mut residual = 0.0;
            for ((n, _), e) in self.points.iter().zip(strains.iter_mut()) {
                let new = sweep.eps[*n];
                residual += (new - *e).norm();
                *e += relax * (new - *e);
            }
            if residual <= opts.tol * scale {
                let mut concentration = vec![MandelMatrix6::identity(); nn];
                for (n, b) in sweep.blocks.iter().enumerate() {
                    if let Some(b) = b {
                        concentration[n] = b.concentration;
                    }
                }
                return Ok(StepOutcome {
                    dstress,
                    tangent: sweep.c[0],
                    iterations: iter,
                    residual,
                    deps: *deps,
                    responses,
                    concentration,
                });
            }
            if !residual.is_finite() {
                break;
            }
            if residual >= prev {
                stalled += 1;
                if stalled >= opts.relax_after {
                    relax = opts.relaxation;
                }
            }
            prev = residual;
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            residual: prev,
        })
    }

    pub fn commit(&mut self, outcome: &StepOutcome) {
        for ((n, p), (m, r)) in self.points.iter_mut().zip(&outcome.responses) {
            debug_assert_eq!(n, m);
            p.commit(r);
        }
        self.concentration.clone_from(&outcome.concentration);
        self.stress += outcome.dstress;
        self.strain += outcome.deps;
    }

    /// Weight-averaged equivalent plastic strain of the matrix bottom nodes.
    pub fn homogenized_eps(&self) -> f64 {
        let (mut sum, mut w) = (0.0, 0.0);
        for (n, p) in &self.points {
            if let NodeKind::Leaf(Phase::Matrix) = self.net.kinds[*n] {
                sum += self.net.weights[*n] * p.state.eps_p;
                w += self.net.weights[*n];
            }
        }
        if w > 0.0 {
            sum / w
        } else {
            0.0
        }
    }
}

/// History-dependent part of a [`NetworkState`], for snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub stress: MandelVector6,
    pub strain: MandelVector6,
    pub points: Vec<MaterialState>,
    pub concentration: Vec<MandelMatrix6>,
}

impl NetworkState {
    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            stress: self.stress,
            strain: self.strain,
            points: self.points.iter().map(|(_, p)| p.state).collect(),
            concentration: self.concentration.clone(),
        }
    }

    pub fn restore(&mut self, s: &StateSnapshot) -> Result<()> {
        if s.points.len() != self.points.len() || s.concentration.len() != self.concentration.len() {
            return Err(Error::Format("snapshot does not match the network layout".into()));
        }
        for ((_, p), st) in self.points.iter_mut().zip(&s.points) {
            p.state = *st;
        }
        self.concentration.clone_from(&s.concentration);
        self.stress = s.stress;
        self.strain = s.strain;
        Ok(())
    }
}

/// Steps `state` by `deps` and commits. Returns the stress increment.
pub fn network_step(state: &mut NetworkState, deps: &MandelVector6, opts: &StepOptions) -> Result<MandelVector6> {
    let out = state.step(deps, opts)?;
    state.commit(&out);
    Ok(out.dstress)
}

/// Loading mode of the point driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Control {
    /// All six strain components prescribed.
    Strain,
    /// Only the normal strain along `axis` is prescribed; the other five
    /// are solved so their stresses stay zero.
    UniaxialStress { axis: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub step: usize,
    pub strain: MandelVector6,
    pub stress: MandelVector6,
    pub eps_hom: f64,
    pub iterations: usize,
}

/// Maximum Newton iterations on the free strains under stress control.
pub const MIXED_CONTROL_MAX_ITER: usize = 25;

fn mixed_step(state: &NetworkState, deps: &MandelVector6, axis: usize, opts: &StepOptions, guess: &mut MandelVector6) -> Result<StepOutcome> {
    let free: Vec<usize> = (0..6).filter(|&i| i != axis).collect();
    let mut d = *guess;
    d[axis] = deps[axis];
    let mut total = 0;
    for _ in 0..MIXED_CONTROL_MAX_ITER {
        let out = state.step(&d, opts)?;
        total += out.iterations;
        let sigma = state.stress + out.dstress;
        let r = Vector5::from_fn(|i, _| sigma[free[i]]);
        let scale = sigma.norm().max(1e-12);
        if r.norm() <= 1e-10 * scale {
            *guess = d;
            return Ok(StepOutcome {
                iterations: total,
                ..out
            });
        }
        let j = Matrix5::from_fn(|i, k| out.tangent[(free[i], free[k])]);
        let dx = j
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Singular("free-strain block of the top tangent".into()))?;
        for (i, &f) in free.iter().enumerate() {
            d[f] -= dx[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: MIXED_CONTROL_MAX_ITER,
        residual: f64::NAN,
    })
}

/// Runs a sequence of macroscopic strain increments and records the
/// committed response after every step.
pub fn simulate_path(
    state: &mut NetworkState,
    increments: &[MandelVector6],
    control: Control,
    opts: &StepOptions,
) -> Result<Vec<PointRecord>> {
    if let Control::UniaxialStress { axis } = control {
        if axis > 2 {
            return Err(Error::Parameter(format!("uniaxial axis must be 0, 1 or 2, got {axis}")));
        }
    }
    let mut guess = MandelVector6::zeros();
    let mut prev_axial = 0.0;
    let mut out = Vec::with_capacity(increments.len());
    for (i, deps) in increments.iter().enumerate() {
        let step = match control {
            Control::Strain => state.step(deps, opts)?,
            Control::UniaxialStress { axis } => {
                // scale the previous free strains to the new axial increment
                if prev_axial != 0.0 {
                    guess *= deps[axis] / prev_axial;
                }
                prev_axial = deps[axis];
                mixed_step(state, deps, axis, opts, &mut guess)?
            }
        };
        state.commit(&step);
        out.push(PointRecord {
            step: i + 1,
            strain: *state.strain(),
            stress: *state.stress(),
            eps_hom: state.homogenized_eps(),
            iterations: step.iterations,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::MaterialSpec;
    use crate::network::build_network;
    use crate::test_oracle as oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, scale: f64) -> MandelMatrix6 {
        let m = MandelMatrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        scale * (m * m.transpose() + MandelMatrix6::identity())
    }

    fn random_vec(rng: &mut ChaCha8Rng) -> MandelVector6 {
        MandelVector6::from_fn(|_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn affine_block_matches_interface_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (c1, c2) = (random_spd(&mut rng, 1.0), random_spd(&mut rng, 30.0));
            let (d1, d2) = (random_vec(&mut rng), random_vec(&mut rng));
            let f = rng.random_range(0.05..0.95);
            let b = affine_block_homogenize(&c1, &d1, &c2, &d2, f).unwrap();
            let (c, ds) = oracle::affine_block_oracle(&c1, &d1, &c2, &d2, f);
            assert!((b.homogenized - c).norm() <= 1e-10 * c.norm());
            assert!((b.correction - ds).norm() <= 1e-10 * ds.norm().max(1.0));
            let e = random_vec(&mut rng);
            let (e1, e2) = dehomogenize(&e, &b, f);
            let (o1, o2) = oracle::interface_solve(&c1, &d1, &c2, &d2, f, &e);
            assert!((e1 - o1).norm() <= 1e-10 * o1.norm().max(1.0));
            assert!((e2 - o2).norm() <= 1e-10 * o2.norm().max(1.0));
            assert!(((1.0 - f) * e1 + f * e2 - e).norm() <= 1e-12 * e.norm().max(1.0));
        }
    }

    #[test]
    fn affine_block_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c1, c2) = (random_spd(&mut rng, 1.0), random_spd(&mut rng, 5.0));
        let z = MandelVector6::zeros();
        let b = affine_block_homogenize(&c1, &z, &c2, &z, 0.3).unwrap();
        assert_eq!(b.correction, z);
        assert_eq!(b.homogenized, crate::network::block_homogenize(&c1, &c2, 0.3).unwrap());
        let (d1, d2) = (random_vec(&mut rng), random_vec(&mut rng));
        let b = affine_block_homogenize(&c1, &d1, &c1, &d2, 0.3).unwrap();
        assert!((b.correction - (0.7 * d1 + 0.3 * d2)).norm() < 1e-12);
        let e = random_vec(&mut rng);
        let (e1, e2) = dehomogenize(&e, &affine_block_homogenize(&c1, &z, &c1, &z, 0.3).unwrap(), 0.3);
        assert!((e1 - e).norm() < 1e-14 && (e2 - e).norm() < 1e-13);
    }

    fn elastic_state(net: &Network) -> NetworkState {
        let f = MaterialSpec::Elastic { e: 72000.0, nu: 0.2 }.build().unwrap();
        let m = MaterialSpec::Elastic { e: 1616.0, nu: 0.3545 }.build().unwrap();
        NetworkState::new(net, f, m).unwrap()
    }

    #[test]
    fn elastic_step_reproduces_linear_forward_pass() {
        let net = build_network(5, 3).unwrap();
        let mut state = elastic_state(&net);
        let c = net
            .compile()
            .unwrap()
            .forward_stiffness(&state.points()[1].1.model.stiffness, &state.points()[0].1.model.stiffness)
            .unwrap();
        let d = MandelVector6::new(1e-3, -3e-4, 2e-4, 5e-4, -1e-4, 2e-4);
        let out = state.step(&d, &StepOptions::default()).unwrap();
        assert!(out.iterations <= 2);
        assert!((out.dstress - c * d).norm() <= 1e-8 * (c * d).norm());
        state.commit(&out);
        let zero = state.step(&MandelVector6::zeros(), &StepOptions::default()).unwrap();
        assert_eq!(zero.dstress, MandelVector6::zeros());
    }

    #[test]
    fn homogenized_eps_weighted_mean() {
        // 3 layers: matrix leaves 3 and 5, fiber leaves dead
        let net = Network::new(3, vec![1.0, 0.0, 3.0, 0.0], vec![crate::mandel::EulerAngles::ZERO; 7]).unwrap();
        let mut state = elastic_state(&net);
        assert_eq!(state.homogenized_eps(), 0.0);
        state.points[0].1.state.eps_p = 0.1;
        state.points[1].1.state.eps_p = 0.2;
        assert!((state.homogenized_eps() - 0.175).abs() < 1e-15);
    }

    #[test]
    fn uniaxial_stress_control_zeroes_lateral_stress() {
        let net = build_network(4, 6).unwrap();
        let f = MaterialSpec::rve_fiber().build().unwrap();
        let m = MaterialSpec::rve_matrix().build().unwrap();
        let mut state = NetworkState::new(&net, f, m).unwrap();
        let incs = vec![MandelVector6::new(2e-4, 0.0, 0.0, 0.0, 0.0, 0.0); 20];
        let rec = simulate_path(&mut state, &incs, Control::UniaxialStress { axis: 0 }, &StepOptions::default()).unwrap();
        let last = rec.last().unwrap();
        assert!((last.strain[0] - 4e-3).abs() < 1e-15);
        for i in 1..6 {
            assert!(last.stress[i].abs() <= 1e-9 * last.stress[0].abs());
        }
        assert!(last.eps_hom > 0.0);
    }

    #[test]
    fn two_layer_network_matches_laminate_oracle() {
        use crate::mandel::{rotation6, EulerAngles};
        let angles = vec![
            EulerAngles::new(0.3, 0.7, -0.2),
            EulerAngles::new(-0.4, 0.2, 0.5),
            EulerAngles::new(0.1, -0.6, 0.9),
        ];
        let net = Network::new(2, vec![0.7, 0.3], angles.clone()).unwrap();
        let f = MaterialSpec::part_fiber().build().unwrap();
        let m = MaterialSpec::part_matrix().build().unwrap();
        let mut state = NetworkState::new(&net, f.clone(), m.clone()).unwrap();
        let mut phases = [MaterialPoint::new(m), MaterialPoint::new(f)];
        let rot = angles.iter().map(|a| *rotation6(a).matrix()).collect::<Vec<_>>();
        let d = MandelVector6::new(4e-4, -1e-4, -1e-4, 0.0, 0.0, 0.0);
        let mut sigma = MandelVector6::zeros();
        for step in 0..40 {
            let (ds, resp) = oracle::laminate_step([&phases[0], &phases[1]], [&rot[0], &rot[1], &rot[2]], 0.3, &d);
            sigma += ds;
            phases[0].commit(&resp[0]);
            phases[1].commit(&resp[1]);
            network_step(&mut state, &d, &StepOptions::default()).unwrap();
            assert!((state.stress() - sigma).norm() <= 1e-6 * sigma.norm(), "step {step}");
        }
        assert!(phases[0].state.eps_p > 0.0);
    }
}
