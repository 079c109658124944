//! Noise-level audits.
//!
//! The scheduler prescribes noise level `t - dt` after each step. A sampler
//! whose predicted-noise and fresh-noise coefficients `(b, c)` combine to
//! `sqrt(b^2 + c^2)` different from that level is mixing the wrong amount of
//! noise into the next state. The helpers here measure that gap analytically
//! (no sampling) and, where useful, by Monte-Carlo.

use crate::error::{Error, Result};
use crate::point::Point;
use crate::rng::{derive_seed, rng_for, standard_normal_point, stream};
use crate::samplers::{rollout, step, SamplerKind};
use crate::schedule::TimeGrid;
use crate::velocity::VelocityField;

/// `sqrt(pred^2 + fresh^2)`. A negative predicted-noise coefficient enters
/// through its square.
pub fn total_noise_level(coeff_pred_noise: f64, coeff_fresh_noise: f64) -> f64 {
    (coeff_pred_noise * coeff_pred_noise + coeff_fresh_noise * coeff_fresh_noise).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveFlag {
    Ok,
    /// Predicted-noise coefficient below zero; the total hides the sign.
    NegativePredNoise,
    /// The step is inadmissible (negative radicand); no value.
    Radicand,
}

impl CurveFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveFlag::Ok => "ok",
            CurveFlag::NegativePredNoise => "neg_pred",
            CurveFlag::Radicand => "radicand",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    /// Start of the step.
    pub t: f64,
    pub t_next: f64,
    /// The scheduler's level, `t_next`.
    pub ideal: f64,
    /// `None` on radicand gaps.
    pub actual: Option<f64>,
    pub flag: CurveFlag,
}

impl CurvePoint {
    pub fn error(&self) -> Option<f64> {
        self.actual.map(|a| a - self.ideal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCurve {
    pub sampler: SamplerKind,
    pub k: usize,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    /// Largest `|actual - ideal|`.
    pub max_error: f64,
    /// `t_next` where it occurs.
    pub argmax_t: f64,
    pub negative_pred_count: usize,
    pub gap_count: usize,
}

impl NoiseCurve {
    /// Error at the step starting at `t`, if the grid has such a step.
    pub fn error_at(&self, t: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.t - t).abs() < 1e-12)
            .and_then(CurvePoint::error)
    }

    pub fn summary(&self) -> CurveSummary {
        let mut s = CurveSummary {
            max_error: 0.0,
            argmax_t: f64::NAN,
            negative_pred_count: 0,
            gap_count: 0,
        };
        for p in &self.points {
            match p.flag {
                CurveFlag::NegativePredNoise => s.negative_pred_count += 1,
                CurveFlag::Radicand => s.gap_count += 1,
                CurveFlag::Ok => {}
            }
            if let Some(e) = p.error() {
                if s.argmax_t.is_nan() || e.abs() > s.max_error {
                    s.max_error = e.abs();
                    s.argmax_t = p.t_next;
                }
            }
        }
        s
    }

    /// `t_next,ideal,actual,flag`; gaps leave `actual` empty.
    pub fn to_csv(&self) -> String {
        use crate::fmt_f64 as g;
        let mut out = String::from("t_next,ideal,actual,flag\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                g(p.t_next),
                g(p.ideal),
                p.actual.map(g).unwrap_or_default(),
                p.flag.as_str()
            ));
        }
        out
    }

    /// `<kind>_K<steps>.csv`
    pub fn file_name(&self) -> String {
        format!("{}_K{}.csv", self.sampler.label(), self.k)
    }
}

/// Scheduler level versus the sampler's total noise level at every step.
/// Purely analytic.
pub fn noise_curve(kind: SamplerKind, grid: &TimeGrid) -> Result<NoiseCurve> {
    kind.validate()?;
    let mut points = Vec::with_capacity(grid.k());
    for (i, (t, dt)) in grid.intervals().enumerate() {
        let t_next = t - dt;
        let point = match kind.coefficients(t, dt) {
            Ok(c) => CurvePoint {
                t,
                t_next,
                ideal: t_next,
                actual: Some(total_noise_level(c.pred_noise, c.fresh_noise)),
                flag: if c.pred_noise < 0.0 {
                    CurveFlag::NegativePredNoise
                } else {
                    CurveFlag::Ok
                },
            },
            Err(Error::NegativeRadicand { .. }) => CurvePoint {
                t,
                t_next,
                ideal: t_next,
                actual: None,
                flag: CurveFlag::Radicand,
            },
            Err(e) => return Err(Error::at_step(i, e)),
        };
        points.push(point);
    }
    Ok(NoiseCurve {
        sampler: kind,
        k: grid.k(),
        points,
    })
}

/// Excess noise of the Flow-SDE step over its coefficients-preserving
/// counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBudget {
    pub t: f64,
    pub dt: f64,
    pub sigma: f64,
    /// `sqrt((sigma dt)^2 / t + (sigma^2 dt / (2t))^2)`
    pub predicted_error: f64,
}

/// Noise-level error of the first-order (Flow-SDE) approximation. Its square
/// equals `total^2 - (t - dt)^2` for the Flow-SDE coefficients.
pub fn theorem1_error(t: f64, dt: f64, sigma: f64) -> Result<ErrorBudget> {
    if !(t > 0.0 && dt > 0.0) {
        return Err(Error::Domain(format!("need t > 0 and dt > 0, got t = {t}, dt = {dt}")));
    }
    let a = sigma * dt;
    let b = sigma * sigma * dt / (2.0 * t);
    Ok(ErrorBudget {
        t,
        dt,
        sigma,
        predicted_error: (a * a / t + b * b).sqrt(),
    })
}

/// Deviation from 1 of the squared-coefficient sum of the linearised
/// variance-preserving forward step: `|(1 - beta dt / 2)^2 + beta dt - 1|`.
pub fn vp_sde_coeff_drift(beta: f64, dt: f64) -> Result<f64> {
    if !(beta >= 0.0 && dt >= 0.0) {
        return Err(Error::Domain(format!("need beta, dt >= 0, got {beta}, {dt}")));
    }
    if beta * dt >= 1.0 {
        return Err(Error::Domain(format!("need beta * dt < 1, got {}", beta * dt)));
    }
    let keep = 1.0 - beta * dt / 2.0;
    Ok((keep * keep + beta * dt - 1.0).abs())
}

/// RMS distance to the oracle's centre of `n` terminal samples, one
/// rollout per seed `derive_seed(seed, i)`.
pub fn terminal_variance_audit(
    kind: SamplerKind,
    f: &VelocityField,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let c = match f {
        VelocityField::DeltaOracle(c) => c,
        _ => {
            return Err(Error::Unsupported(
                "terminal audit needs a point-mass oracle".into(),
            ))
        }
    };
    if n < 1000 {
        return Err(Error::Domain(format!("audit needs n >= 1000, got {n}")));
    }
    let per_run = crate::par_map(n, |i| {
        rollout(kind, f, grid, derive_seed(seed, i as u64)).map(|traj| traj.terminal().dist_sq(c))
    });
    let mut sum = 0.0;
    for d in per_run {
        sum += d?;
    }
    Ok((sum / n as f64).sqrt())
}

/// Empirical per-coordinate standard deviation of one step's output, with
/// the predicted sample pinned at the origin and the predicted noise drawn
/// standard normal independently of the fresh noise. Returns the mean
/// standard deviation over coordinates and its standard error.
pub fn monte_carlo_step_std(
    kind: SamplerKind,
    t: f64,
    dt: f64,
    dim: usize,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 2 || dim == 0 {
        return Err(Error::Domain("need n >= 2 draws and dim >= 1".into()));
    }
    // With a point mass at the origin, x0_hat = 0 and x1_hat = x / t exactly.
    let f = VelocityField::DeltaOracle(Point::zeros(dim));
    let mut rng = rng_for(seed, stream::AUDIT);
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for _ in 0..n {
        let x1_hat = standard_normal_point(&mut rng, dim);
        let eps = standard_normal_point(&mut rng, dim);
        let x = x1_hat.scale(t);
        let (next, _) = step(kind, &f, &x, t, dt, &eps)?;
        for d in 0..dim {
            sum[d] += next[d];
            sum_sq[d] += next[d] * next[d];
        }
    }
    let nf = n as f64;
    let std = (0..dim)
        .map(|d| {
            let m = sum[d] / nf;
            ((sum_sq[d] / nf - m * m) * nf / (nf - 1.0)).sqrt()
        })
        .sum::<f64>()
        / dim as f64;
    // Standard error of a Gaussian sample standard deviation, averaged over
    // independent coordinates.
    let se = std / (2.0 * (nf - 1.0)).sqrt() / (dim as f64).sqrt();
    Ok((std, se))
}
