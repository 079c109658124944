//! Flow-matching pretraining with plain (optionally heavy-ball) SGD.

use rand::Rng as _;

use super::data::DataDist;
use super::mlp::{Mlp, MlpArchitecture};
use super::{mlp_fm_loss_and_grad, FmSample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, rng_from, standard_normal_point, stream, Rng};

const HOLDOUT: u64 = 0x484f_4c44;

#[derive(Debug, Clone, PartialEq)]
pub struct FmTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// 0 disables momentum.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for FmTrainConfig {
    fn default() -> Self {
        FmTrainConfig {
            steps: 10000,
            lr: 0.003,
            batch_size: 64,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedField {
    pub mlp: Mlp,
    /// Loss on a fixed held-out batch before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn draw_batch(data: &DataDist, n: usize, rng: &mut Rng) -> Vec<FmSample> {
    (0..n)
        .map(|_| {
            let x0 = data.sample(rng);
            let x1 = standard_normal_point(rng, x0.dim());
            let t = rng.random::<f64>();
            FmSample { x0, x1, t }
        })
        .collect()
}

/// Regresses an MLP onto `x1 - x0` along the linear interpolant. Fully
/// determined by `cfg.seed`.
pub fn train_fm(arch: &MlpArchitecture, data: &DataDist, cfg: &FmTrainConfig) -> Result<TrainedField> {
    if cfg.steps == 0 {
        return Err(Error::Domain("training needs at least one step".into()));
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::Domain(
            "need lr > 0, batch_size >= 1 and momentum in [0, 1)".into(),
        ));
    }
    data.validate()?;
    if data.dim() != arch.dim() {
        return Err(Error::Domain(format!(
            "data has dimension {}, network expects {}",
            data.dim(),
            arch.dim()
        )));
    }

    let seed = derive_seed(cfg.seed, stream::PRETRAIN);
    let mut mlp = Mlp::init(arch.clone(), &mut rng_for(seed, stream::INIT));
    let holdout = draw_batch(data, 512, &mut rng_for(seed, HOLDOUT));
    let mut rng = rng_from(seed);

    let initial_loss = mlp_fm_loss_and_grad(&mlp, &holdout)?.0;
    let mut velocity = vec![0.0; mlp.params().len()];
    for step in 0..cfg.steps {
        let batch = draw_batch(data, cfg.batch_size, &mut rng);
        let (loss, grad) = mlp_fm_loss_and_grad(&mlp, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        for ((p, v), g) in mlp.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v + g;
            *p -= cfg.lr * *v;
        }
    }
    let final_loss = mlp_fm_loss_and_grad(&mlp, &holdout)?.0;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: cfg.steps,
            loss: final_loss,
        });
    }
    Ok(TrainedField {
        mlp,
        initial_loss,
        final_loss,
    })
}
