//! Velocity fields `v(x, t)` for the linear interpolant
//! `x_t = (1 - t) x0 + t x1` between data `x0` and Gaussian noise `x1`.
//!
//! Two analytic fields serve as ground truth: a point mass at `c` and a
//! centred isotropic Gaussian with scale `s`. The trainable field is a small
//! MLP (see [`mlp`]).

pub mod data;
pub mod io;
pub mod mlp;
pub mod train;

pub use data::DataDist;
pub use mlp::{Activation, Mlp, MlpArchitecture};
pub use train::{train_fm, FmTrainConfig, TrainedField};

use crate::error::{Error, Result};
use crate::point::Point;

#[derive(Debug, Clone, PartialEq)]
pub enum VelocityField {
    /// Exact field for data concentrated at `c`: `(x - c) / t`.
    DeltaOracle(Point),
    /// Exact field for data `N(0, s^2 I)`.
    GaussianOracle(f64),
    Mlp(Mlp),
}

impl VelocityField {
    pub fn dim(&self) -> Option<usize> {
        match self {
            VelocityField::DeltaOracle(c) => Some(c.dim()),
            VelocityField::GaussianOracle(_) => None,
            VelocityField::Mlp(m) => Some(m.arch().dim()),
        }
    }

    pub fn as_mlp(&self) -> Option<&Mlp> {
        match self {
            VelocityField::Mlp(m) => Some(m),
            _ => None,
        }
    }

    pub fn eval(&self, x: &Point, t: f64) -> Result<Point> {
        eval_velocity(self, x, t)
    }
}

impl From<Mlp> for VelocityField {
    fn from(m: Mlp) -> Self {
        VelocityField::Mlp(m)
    }
}

/// Evaluates `f` at state `x` and noise level `t`.
pub fn eval_velocity(f: &VelocityField, x: &Point, t: f64) -> Result<Point> {
    match f {
        VelocityField::DeltaOracle(c) => {
            if !(t > 0.0 && t <= 1.0) {
                if t == 0.0 {
                    return Err(Error::Singularity {
                        t,
                        what: "point-mass velocity diverges at t = 0",
                    });
                }
                return Err(Error::Domain(format!("t must lie in (0, 1], got {t}")));
            }
            if c.dim() != x.dim() {
                return Err(Error::Domain(format!(
                    "state has dimension {}, oracle centre has {}",
                    x.dim(),
                    c.dim()
                )));
            }
            Ok(x.sub(c).scale(1.0 / t))
        }
        VelocityField::GaussianOracle(s) => {
            check_unit_interval(t)?;
            let s2 = s * s;
            let den = (1.0 - t) * (1.0 - t) * s2 + t * t;
            Ok(x.scale((t - (1.0 - t) * s2) / den))
        }
        VelocityField::Mlp(m) => {
            check_unit_interval(t)?;
            m.forward(x, t)
        }
    }
}

fn check_unit_interval(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("t must lie in [0, 1], got {t}")))
    }
}

/// Posterior means `(E[x0 | x_t], E[x1 | x_t])` for `N(0, s^2 I)` data.
pub fn gaussian_posterior_means(s: f64, x: &Point, t: f64) -> (Point, Point) {
    let s2 = s * s;
    let den = (1.0 - t) * (1.0 - t) * s2 + t * t;
    (x.scale((1.0 - t) * s2 / den), x.scale(t / den))
}

/// One flow-matching regression example.
#[derive(Debug, Clone, PartialEq)]
pub struct FmSample {
    pub x0: Point,
    pub x1: Point,
    pub t: f64,
}

impl FmSample {
    pub fn interpolant(&self) -> Point {
        Point::lincomb(1.0 - self.t, &self.x0, self.t, &self.x1)
    }

    pub fn target(&self) -> Point {
        self.x1.sub(&self.x0)
    }
}

/// Mean squared velocity error over `batch` and its parameter gradient.
pub fn fm_loss_and_grad(f: &VelocityField, batch: &[FmSample]) -> Result<(f64, Vec<f64>)> {
    match f {
        VelocityField::Mlp(m) => mlp_fm_loss_and_grad(m, batch),
        _ => Err(Error::Unsupported(
            "flow-matching gradients need a trainable field".into(),
        )),
    }
}

pub(crate) fn mlp_fm_loss_and_grad(m: &Mlp, batch: &[FmSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; m.params().len()];
    let mut loss = 0.0;
    for s in batch {
        let cache = m.forward_cached(&s.interpolant(), s.t)?;
        let resid = cache.output().sub(&s.target());
        loss += resid.norm_sq();
        let g: Vec<f64> = resid.coords().iter().map(|r| 2.0 * r / n).collect();
        m.backward(&cache, &g, &mut grad);
    }
    Ok((loss / n, grad))
}
