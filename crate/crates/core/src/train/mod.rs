//! Offline training: mini-batch gradient descent with a bold-driver
//! learning rate, and the transfer-learning chain over anchor datasets.

pub mod data;
pub mod grad;
pub mod teacher;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

pub use data::{evaluate_error, generate_phase_pair, generate_teacher_dataset, network_hash, Dataset, Sample};
pub use grad::{cost, cost_and_gradients, gradients, Gradients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub n_batches: usize,
    pub lambda: f64,
    pub lr0: f64,
    pub bold_up: f64,
    pub bold_down: f64,
    pub seed: u64,
    /// Stop once both train and test error are at or below this value.
    pub target_error: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20000,
            n_batches: 10,
            lambda: 0.001,
            lr0: 0.05,
            bold_up: 1.05,
            bold_down: 0.5,
            seed: 0,
            target_error: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.bold_up > 1.0 && self.bold_down > 0.0 && self.bold_down < 1.0) {
            return Err(Error::Parameter(format!(
                "bold driver factors need up > 1 > down > 0, got {} / {}",
                self.bold_up, self.bold_down
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Parameter(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.n_batches == 0 {
            return Err(Error::Parameter("n_batches must be positive".into()));
        }
        Ok(())
    }
}

/// Errors after one epoch. `*_cost` is the data term of the cost (MSE),
/// `*_mae` the scaled mean absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub accepted: bool,
    pub train_mae: f64,
    pub test_mae: f64,
    pub train_cost: f64,
    pub test_cost: f64,
}

#[derive(Debug, Clone, Copy)]
struct Errors {
    mae: f64,
    cost: f64,
}

fn errors(net: &Network, samples: &[Sample]) -> Errors {
    if samples.is_empty() {
        return Errors { mae: 0.0, cost: 0.0 };
    }
    let Ok(compiled) = net.compile() else {
        return Errors {
            mae: f64::NAN,
            cost: f64::NAN,
        };
    };
    let per: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| match compiled.forward_stiffness(&s.c_fiber, &s.c_matrix) {
            Ok(c) => {
                let r = (c - s.c_composite).norm() / s.c_composite.norm();
                (r, r * r)
            }
            Err(_) => (f64::NAN, f64::NAN),
        })
        .collect();
    let n = samples.len() as f64;
    Errors {
        mae: per.iter().map(|p| p.0).sum::<f64>() / n,
        cost: per.iter().map(|p| p.1).sum::<f64>() / (2.0 * n),
    }
}

fn penalized(net: &Network, e: Errors, lambda: f64) -> f64 {
    let d = net.total_weight() - net.weight_target();
    e.cost + lambda * d * d
}

/// Consecutive rejected epochs with a non-finite cost before giving up.
const MAX_NONFINITE_EPOCHS: usize = 60;

fn run_epoch(net: &mut Network, train: &[Sample], order: &[usize], cfg: &TrainConfig, lr: f64) -> Result<()> {
    let n = order.len();
    let nb = cfg.n_batches.min(n).max(1);
    let mut batch = Vec::with_capacity(n / nb + 1);
    for b in 0..nb {
        let (lo, hi) = (b * n / nb, (b + 1) * n / nb);
        batch.clear();
        batch.extend(order[lo..hi].iter().map(|&i| train[i].clone()));
        let g = gradients(net, &batch, cfg.lambda)?;
        let mut p = net.params();
        for (x, d) in p.iter_mut().zip(&g.flat) {
            *x -= lr * d;
        }
        net.set_params(&p)?;
    }
    Ok(())
}

/// Mini-batch gradient descent. After every epoch the penalized training
/// cost is compared with the previous one: improvement multiplies the
/// learning rate by `bold_up`, anything else reverts the epoch and
/// multiplies it by `bold_down`.
pub fn train(net: &Network, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Network, Vec<EpochRecord>)> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = net.clone();
    let mut cur_train = errors(&current, &dataset.train);
    let mut cur_test = errors(&current, &dataset.test);
    let mut cur_j = penalized(&current, cur_train, cfg.lambda);
    if !cur_j.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            last_finite: Box::new(current),
        });
    }
    let mut lr = cfg.lr0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut nonfinite = 0;

    for epoch in 1..=cfg.epochs {
        let done = cfg
            .target_error
            .is_some_and(|t| cur_train.mae <= t && cur_test.mae <= t);
        if done {
            break;
        }
        order.shuffle(&mut rng);
        let mut trial = current.clone();
        let stepped = run_epoch(&mut trial, &dataset.train, &order, cfg, lr);
        let (tr, j) = match stepped {
            Ok(()) => {
                let tr = errors(&trial, &dataset.train);
                (tr, penalized(&trial, tr, cfg.lambda))
            }
            Err(e) if e.is_numeric() => (Errors { mae: f64::NAN, cost: f64::NAN }, f64::NAN),
            Err(e) => return Err(e),
        };
        let accepted = j.is_finite() && j < cur_j;
        if accepted {
            current = trial;
            cur_train = tr;
            cur_test = errors(&current, &dataset.test);
            cur_j = j;
            lr *= cfg.bold_up;
            nonfinite = 0;
        } else {
            lr *= cfg.bold_down;
            if j.is_finite() {
                nonfinite = 0;
            } else {
                nonfinite += 1;
                if nonfinite >= MAX_NONFINITE_EPOCHS {
                    return Err(Error::Divergence {
                        epoch,
                        last_finite: Box::new(current),
                    });
                }
            }
        }
        log::debug!(
            "epoch {epoch}: lr {lr:.3e} train {:.4e} test {:.4e}{}",
            cur_train.mae,
            cur_test.mae,
            if accepted { "" } else { " (reverted)" }
        );
        history.push(EpochRecord {
            epoch,
            lr,
            accepted,
            train_mae: cur_train.mae,
            test_mae: cur_test.mae,
            train_cost: cur_train.cost,
            test_cost: cur_test.cost,
        });
    }
    Ok((current, history))
}

/// Trains stage after stage, each initialized from the previous result.
pub fn transfer_train_chain(
    initial: &Network,
    stages: &[(Dataset, TrainConfig)],
) -> Result<Vec<(Network, Vec<EpochRecord>)>> {
    if stages.is_empty() {
        return Err(Error::Chain {
            stage: 0,
            reason: "no stages given".into(),
        });
    }
    let mut out: Vec<(Network, Vec<EpochRecord>)> = Vec::with_capacity(stages.len());
    for (i, (data, cfg)) in stages.iter().enumerate() {
        let init = out.last().map_or(initial, |s| &s.0);
        let (net, hist) = train(init, data, cfg).map_err(|e| Error::Chain {
            stage: i + 1,
            reason: e.to_string(),
        })?;
        if !net.same_topology(initial) {
            return Err(Error::Chain {
                stage: i + 1,
                reason: "network topology changed".into(),
            });
        }
        out.push((net, hist));
    }
    Ok(out)
}
