//! Cost function and its gradient by reverse-mode differentiation through
//! the network: rotations, laminate blocks, nodal weights and the ReLU.

use rayon::prelude::*;

use crate::error::Result;
use crate::mandel::{mandel_image_differential, MandelMatrix6};
use crate::network::{solve_block, CompiledNetwork, Network, NodeKind, Phase};
use crate::train::data::Sample;

/// Gradient of the cost, laid out like [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub flat: Vec<f64>,
    n_bottom: usize,
}

impl Gradients {
    pub fn dz(&self) -> &[f64] {
        &self.flat[..self.n_bottom]
    }

    /// `(dJ/dα, dJ/dβ, dJ/dγ)` of node `n`.
    pub fn dangles(&self, n: usize) -> [f64; 3] {
        let o = self.n_bottom + 3 * n;
        [self.flat[o], self.flat[o + 1], self.flat[o + 2]]
    }

    pub fn norm(&self) -> f64 {
        self.flat.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[inline]
fn frobenius_dot(a: &MandelMatrix6, b: &MandelMatrix6) -> f64 {
    a.component_mul(b).sum()
}

/// Squared-error term of one sample, `‖C − Ĉ‖² / ‖Ĉ‖²`.
fn sample_misfit(pred: &MandelMatrix6, target: &MandelMatrix6) -> f64 {
    (pred - target).norm_squared() / target.norm_squared()
}

fn penalty(net: &Network, lambda: f64) -> f64 {
    let d = net.total_weight() - net.weight_target();
    lambda * d * d
}

/// `J = 1/(2·Ns) Σ ‖f(Ĉᶠ, Ĉᵐ) − Ĉᶜ‖² / ‖Ĉᶜ‖² + λ·(Σ ReLU(z) − 2^(N−2))²`.
pub fn cost(net: &Network, batch: &[Sample], lambda: f64) -> Result<f64> {
    let compiled = net.compile()?;
    let misfit = batch
        .par_iter()
        .map(|s| {
            compiled
                .forward_stiffness(&s.c_fiber, &s.c_matrix)
                .map(|c| sample_misfit(&c, &s.c_composite))
        })
        .collect::<Result<Vec<f64>>>()?;
    let ns = batch.len().max(1) as f64;
    Ok(misfit.iter().sum::<f64>() / (2.0 * ns) + penalty(net, lambda))
}

#[derive(Clone, Copy)]
enum TapeEntry {
    None,
    Leaf,
    Pass,
    Block {
        vf2: f64,
        dc: MandelMatrix6,
        k: MandelMatrix6,
    },
}

/// Forward quantities kept for the reverse sweep of one sample.
struct Tape {
    local: Vec<MandelMatrix6>,
    out: Vec<MandelMatrix6>,
    entries: Vec<TapeEntry>,
}

fn record(net: &CompiledNetwork, s: &Sample) -> Result<Tape> {
    let nn = net.n_nodes();
    let mut local = vec![MandelMatrix6::zeros(); nn];
    let mut out = vec![MandelMatrix6::zeros(); nn];
    let mut entries = vec![TapeEntry::None; nn];
    for n in (0..nn).rev() {
        let (c, e) = match net.kinds[n] {
            NodeKind::Dead => continue,
            NodeKind::Leaf(Phase::Fiber) => (s.c_fiber, TapeEntry::Leaf),
            NodeKind::Leaf(Phase::Matrix) => (s.c_matrix, TapeEntry::Leaf),
            NodeKind::PassLeft => (out[2 * n + 1], TapeEntry::Pass),
            NodeKind::PassRight => (out[2 * n + 2], TapeEntry::Pass),
            NodeKind::Block { vf2 } => {
                let (c1, c2) = (&out[2 * n + 1], &out[2 * n + 2]);
                let solve = solve_block(c1, c2, vf2)?;
                (
                    solve.homogenized,
                    TapeEntry::Block {
                        vf2,
                        dc: c2 - c1,
                        k: solve.normal_inverse,
                    },
                )
            }
        };
        local[n] = c;
        out[n] = net.rotations[n].stiffness_to_parent(&c);
        entries[n] = e;
    }
    Ok(Tape { local, out, entries })
}

/// Per-sample adjoints: `∂L/∂R` for every node and `∂L/∂w` for every node.
struct SampleAdjoint {
    misfit: f64,
    d_rot: Vec<MandelMatrix6>,
    d_weight: Vec<f64>,
}

fn backpropagate(net: &CompiledNetwork, s: &Sample, scale: f64) -> Result<SampleAdjoint> {
    let tape = record(net, s)?;
    let nn = net.n_nodes();
    let target_sq = s.c_composite.norm_squared();
    let misfit = (tape.out[0] - s.c_composite).norm_squared() / target_sq;

    let mut g = vec![MandelMatrix6::zeros(); nn];
    let mut d_rot = vec![MandelMatrix6::zeros(); nn];
    let mut d_weight = vec![0.0; nn];
    g[0] = (tape.out[0] - s.c_composite) * (scale / target_sq);

    for n in 0..nn {
        if matches!(tape.entries[n], TapeEntry::None) {
            continue;
        }
        // C = Rᵀ C̄ R
        let r = net.rotations[n].matrix();
        let gn = g[n];
        let cl = tape.local[n];
        d_rot[n] = cl * r * gn.transpose() + cl.transpose() * r * gn;
        let gbar = r * gn * r.transpose();

        let (l, rc) = (2 * n + 1, 2 * n + 2);
        match tape.entries[n] {
            TapeEntry::None | TapeEntry::Leaf => {}
            TapeEntry::Pass => {
                let child = if matches!(net.kinds[n], NodeKind::PassLeft) { l } else { rc };
                g[child] = gbar;
                d_weight[child] += d_weight[n];
            }
            TapeEntry::Block { vf2: f, dc, k } => {
                let c = f * (1.0 - f);
                let kt = k.transpose();
                let dct = dc.transpose();
                let g_delta = -c * (gbar * dct * kt + kt * dct * gbar);
                let g_hat = c * (kt * dct * gbar * dct * kt);
                g[l] = (1.0 - f) * gbar - g_delta + f * g_hat;
                g[rc] = f * gbar + g_delta + (1.0 - f) * g_hat;
                let dkd = dc * k * dc;
                let gf = frobenius_dot(&gbar, &dc) - (1.0 - 2.0 * f) * frobenius_dot(&gbar, &dkd)
                    - frobenius_dot(&g_hat, &dc);
                let (wl, wr) = (net.weights[l], net.weights[rc]);
                let sum2 = (wl + wr) * (wl + wr);
                d_weight[l] += d_weight[n] - gf * wr / sum2;
                d_weight[rc] += d_weight[n] + gf * wl / sum2;
            }
        }
    }
    Ok(SampleAdjoint {
        misfit,
        d_rot,
        d_weight,
    })
}

/// Cost and gradient over a batch.
pub fn cost_and_gradients(net: &Network, batch: &[Sample], lambda: f64) -> Result<(f64, Gradients)> {
    let compiled = net.compile()?;
    let ns = batch.len().max(1) as f64;
    let scale = 1.0 / ns;
    // collected in order so the reduction is independent of scheduling
    let adjoints = batch
        .par_iter()
        .map(|s| backpropagate(&compiled, s, scale))
        .collect::<Result<Vec<_>>>()?;

    let nn = net.n_nodes();
    let nb = net.n_bottom();
    let off = net.bottom_offset();
    let mut d_rot = vec![MandelMatrix6::zeros(); nn];
    let mut d_weight = vec![0.0; nn];
    let mut misfit = 0.0;
    for a in &adjoints {
        misfit += a.misfit;
        for n in 0..nn {
            d_rot[n] += a.d_rot[n];
            d_weight[n] += a.d_weight[n];
        }
    }

    let mut flat = vec![0.0; net.n_params()];
    let excess = net.total_weight() - net.weight_target();
    for k in 0..nb {
        // ReLU subgradient is 0 at and below the kink
        if net.z()[k] > 0.0 {
            flat[k] = d_weight[off + k] + 2.0 * lambda * excess;
        }
    }
    for n in 0..nn {
        if !compiled.is_alive(n) {
            continue;
        }
        let e = &net.angles()[n];
        let q = e.matrix();
        for (j, dq) in e.matrix_derivatives().iter().enumerate() {
            let dr = mandel_image_differential(&q, dq);
            flat[nb + 3 * n + j] = frobenius_dot(&d_rot[n], &dr);
        }
    }
    let j = misfit / (2.0 * ns) + penalty(net, lambda);
    Ok((j, Gradients { flat, n_bottom: nb }))
}

pub fn gradients(net: &Network, batch: &[Sample], lambda: f64) -> Result<Gradients> {
    Ok(cost_and_gradients(net, batch, lambda)?.1)
}
