//! Linear-elastic training data: phase sampling, teacher-generated
//! composites and the scaled mean absolute error.

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mandel::{is_spd, orthotropic_stiffness, MandelMatrix6};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub c_fiber: MandelMatrix6,
    pub c_matrix: MandelMatrix6,
    pub c_composite: MandelMatrix6,
}

impl Sample {
    pub fn new(c_fiber: MandelMatrix6, c_matrix: MandelMatrix6, c_composite: MandelMatrix6) -> Self {
        Self {
            c_fiber,
            c_matrix,
            c_composite,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Hash of the network that generated the composite stiffnesses, if any.
    pub teacher_hash: Option<String>,
}

impl Dataset {
    /// 80/20 split in draw order (400/100 for 500 samples).
    pub fn split(samples: Vec<Sample>, teacher_hash: Option<String>) -> Self {
        let n_train = (samples.len() * 4).div_ceil(5);
        let mut train = samples;
        let test = train.split_off(n_train);
        Self {
            train,
            test,
            teacher_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bounded rejection sampling budget for [`generate_phase_pair`].
pub const MAX_PHASE_DRAWS: usize = 1000;

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo_exp: f64, hi_exp: f64) -> f64 {
    10f64.powf(rng.random_range(lo_exp..hi_exp))
}

fn orthotropic_draw<R: Rng + ?Sized>(rng: &mut R, lo_exp: f64, hi_exp: f64) -> Option<MandelMatrix6> {
    let e = [
        log_uniform(rng, lo_exp, hi_exp),
        log_uniform(rng, lo_exp, hi_exp),
        log_uniform(rng, lo_exp, hi_exp),
    ];
    let nu12 = rng.random_range(0.0..0.45);
    let nu13 = rng.random_range(0.0..0.45);
    let nu23 = rng.random_range(0.0..0.45);
    let shear = |rng: &mut R, a: f64, b: f64, nu: f64| (a * b).sqrt() / (2.0 * (1.0 + nu)) * log_uniform(rng, -0.3, 0.3);
    let g12 = shear(rng, e[0], e[1], nu12);
    let g23 = shear(rng, e[1], e[2], nu23);
    let g31 = shear(rng, e[2], e[0], nu13);
    orthotropic_stiffness(e, nu12, nu13, nu23, g12, g23, g31)
        .ok()
        .filter(is_spd)
}

/// Orthotropic fiber and matrix stiffnesses with axis moduli log-uniform in
/// `[1e2, 1e5]` and `[1, 1e2]`. Poisson couplings that break positive
/// definiteness are rejected.
pub fn generate_phase_pair<R: Rng + ?Sized>(rng: &mut R) -> Result<(MandelMatrix6, MandelMatrix6)> {
    let mut draw = |lo: f64, hi: f64| -> Result<MandelMatrix6> {
        for _ in 0..MAX_PHASE_DRAWS {
            if let Some(c) = orthotropic_draw(rng, lo, hi) {
                return Ok(c);
            }
        }
        Err(Error::Sampling(MAX_PHASE_DRAWS))
    };
    let fiber = draw(2.0, 5.0)?;
    let matrix = draw(0.0, 2.0)?;
    Ok((fiber, matrix))
}

/// Content hash of a network's parameters (hex, 16 characters).
pub fn network_hash(net: &Network) -> String {
    let mut h = Sha256::new();
    h.update((net.n_layers() as u64).to_le_bytes());
    for p in net.params() {
        h.update(p.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// `n` random phase pairs homogenized by `teacher`, split 80/20.
pub fn generate_teacher_dataset<R: Rng + ?Sized>(teacher: &Network, n: usize, rng: &mut R) -> Result<Dataset> {
    let compiled = teacher.compile()?;
    let pairs = (0..n)
        .map(|_| generate_phase_pair(rng))
        .collect::<Result<Vec<_>>>()?;
    let samples = pairs
        .into_par_iter()
        .map(|(cf, cm)| {
            compiled
                .forward_stiffness(&cf, &cm)
                .map(|cc| Sample::new(cf, cm, cc))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::split(samples, Some(network_hash(teacher))))
}

/// Mean over samples of `‖C_pred − Ĉᶜ‖_F / ‖Ĉᶜ‖_F`.
pub fn evaluate_error(net: &Network, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Parameter("cannot evaluate the error of an empty sample set".into()));
    }
    let compiled = net.compile()?;
    let errs = samples
        .par_iter()
        .map(|s| {
            compiled
                .forward_stiffness(&s.c_fiber, &s.c_matrix)
                .map(|c| (c - s.c_composite).norm() / s.c_composite.norm())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(errs.iter().sum::<f64>() / samples.len() as f64)
}
