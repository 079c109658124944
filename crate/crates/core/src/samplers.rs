//! Step rules for flow-matching samplers.
//!
//! Every rule is written in predicted-endpoint form: with
//! `x0_hat = x - t v` and `x1_hat = x + (1 - t) v`, one step from `t` to
//! `t - dt` produces
//!
//! ```text
//! x_next = a * x0_hat + b * x1_hat + c * eps
//! ```
//!
//! and a [`StepReport`] records `(a, b, c)` so that noise levels can be
//! audited without sampling. The rules differ only in how they pick the
//! predicted-noise coefficient `b` and the fresh-noise coefficient `c`:
//!
//! | rule        | `b`                                  | `c`                  |
//! |-------------|--------------------------------------|----------------------|
//! | ODE         | `t - dt`                             | 0                    |
//! | Flow-SDE    | `t - dt - sigma^2 dt / (2t)`         | `sigma sqrt(dt)`     |
//! | CPS         | `(t - dt) cos(eta pi / 2)`           | `(t - dt) sin(eta pi / 2)` |
//! | CPS (sigma) | `sqrt((t - dt)^2 - sigma^2)`         | `sigma`              |
//! | CPWS        | `sqrt((t - dt)^2 - sigma^2 dt)`      | `sigma sqrt(dt)`     |
//! | patched SDE | `(t - dt)(1 - eta^2 dt / 2)`         | `eta (t - dt) sqrt(dt)` |
//!
//! The sample coefficient is always `a = 1 - (t - dt)`.
//!
//! Step functions never draw randomness: `eps` is an argument, and
//! [`rollout`] owns the generator.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::point::Point;
use crate::rng::{rng_from, standard_normal_point, Rng};
use crate::schedule::{check_step, SigmaKind, SigmaRule, TimeGrid};
use crate::spec::{parse_f64, parse_f64_args, split_call};
use crate::velocity::{eval_velocity, VelocityField};

/// Sampler variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    Ode,
    /// Euler-Maruyama discretisation of the Flow-GRPO / Dance-GRPO SDE.
    FlowSde(SigmaRule),
    /// Coefficients-preserving sampling with strength `eta` in `[0, 1]`.
    Cps(f64),
    /// Coefficients-preserving sampling with Wiener-scaled fresh noise.
    Cpws(SigmaRule),
    /// Flow-SDE with `sigma = eta (t - dt)`, exact first-order coefficients.
    PatchedSde(f64),
    /// DDIM with stochasticity `eta`, mapped into flow coordinates.
    DdimRef(f64),
}

/// The three coefficients of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoeffs {
    pub sample: f64,
    pub pred_noise: f64,
    pub fresh_noise: f64,
}

impl StepCoeffs {
    /// Root-sum-square of the two noise coefficients.
    pub fn total_noise(&self) -> f64 {
        crate::analysis::total_noise_level(self.pred_noise, self.fresh_noise)
    }
}

/// Auditable record of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub t: f64,
    pub dt: f64,
    pub coeff_sample: f64,
    pub coeff_pred_noise: f64,
    pub coeff_fresh_noise: f64,
    /// Deterministic part of the step, before fresh noise.
    pub mu: Point,
    /// The fresh standard-normal draw; zero for the ODE.
    pub eps: Point,
}

impl StepReport {
    pub fn coeffs(&self) -> StepCoeffs {
        StepCoeffs {
            sample: self.coeff_sample,
            pred_noise: self.coeff_pred_noise,
            fresh_noise: self.coeff_fresh_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: SamplerKind,
    /// `(t, x_t)` from `t = 1` down to `t = 0`.
    pub states: Vec<(f64, Point)>,
    pub reports: Vec<StepReport>,
    /// `-|x_next - mu|^2` per step; empty for the ODE.
    pub logprob_terms: Vec<f64>,
}

impl Trajectory {
    pub fn terminal(&self) -> &Point {
        &self.states.last().unwrap().1
    }

    pub fn initial(&self) -> &Point {
        &self.states[0].1
    }
}

/// `(x0_hat, x1_hat) = (x - t v, x + (1 - t) v)`.
pub fn predict_endpoints(x: &Point, t: f64, v: &Point) -> (Point, Point) {
    (x.add_scaled(-t, v), x.add_scaled(1.0 - t, v))
}

fn ode_coeffs(t: f64, dt: f64) -> StepCoeffs {
    let s = t - dt;
    StepCoeffs {
        sample: 1.0 - s,
        pred_noise: s,
        fresh_noise: 0.0,
    }
}

fn flow_sde_coeffs(t: f64, dt: f64, rule: SigmaRule) -> Result<StepCoeffs> {
    if !matches!(rule.kind, SigmaKind::FlowGrpo | SigmaKind::DanceGrpo) {
        return Err(Error::Domain(format!(
            "Flow-SDE takes the flow or dance sigma rule, got {rule}"
        )));
    }
    let sigma = rule.step_sigma(t, dt)?;
    let s = t - dt;
    Ok(StepCoeffs {
        sample: 1.0 - s,
        pred_noise: s - sigma * sigma * dt / (2.0 * t),
        fresh_noise: sigma * dt.sqrt(),
    })
}

fn check_cps_eta(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("CPS eta must lie in [0, 1], got {eta}")))
    }
}

fn cps_coeffs(t: f64, dt: f64, eta: f64) -> Result<StepCoeffs> {
    check_cps_eta(eta)?;
    let s = t - dt;
    let angle = eta * FRAC_PI_2;
    Ok(StepCoeffs {
        sample: 1.0 - s,
        pred_noise: s * angle.cos(),
        fresh_noise: s * angle.sin(),
    })
}

fn cps_sigma_coeffs(t: f64, dt: f64, sigma: f64) -> Result<StepCoeffs> {
    let s = t - dt;
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
    }
    let radicand = s * s - sigma * sigma;
    if sigma > s || radicand < 0.0 {
        return Err(Error::NegativeRadicand { t, dt, sigma });
    }
    Ok(StepCoeffs {
        sample: 1.0 - s,
        pred_noise: radicand.sqrt(),
        fresh_noise: sigma,
    })
}

fn cpws_coeffs(t: f64, dt: f64, rule: SigmaRule) -> Result<StepCoeffs> {
    let sigma = rule.step_sigma(t, dt)?;
    let s = t - dt;
    let radicand = s * s - sigma * sigma * dt;
    if radicand < 0.0 {
        return Err(Error::NegativeRadicand { t, dt, sigma });
    }
    Ok(StepCoeffs {
        sample: 1.0 - s,
        pred_noise: radicand.sqrt(),
        fresh_noise: sigma * dt.sqrt(),
    })
}

fn patched_coeffs(t: f64, dt: f64, eta: f64) -> Result<StepCoeffs> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!("eta must be non-negative, got {eta}")));
    }
    let s = t - dt;
    Ok(StepCoeffs {
        sample: 1.0 - s,
        pred_noise: s - eta * eta / 2.0 * s * dt,
        fresh_noise: eta * s * dt.sqrt(),
    })
}

/// `alpha(t)` of the variance-preserving process equivalent to the flow
/// interpolant: `x_t / lambda(t)` with `lambda = sqrt((1-t)^2 + t^2)`.
fn vp_alpha(t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    let lam2 = u * u + t * t;
    (u * u / lam2, lam2.sqrt())
}

/// DDIM's sigma for stochasticity `eta`.
pub fn ddim_sigma(eta: f64, alpha_t: f64, alpha_prev: f64) -> f64 {
    eta * ((1.0 - alpha_prev) / (1.0 - alpha_t)).sqrt() * (1.0 - alpha_t / alpha_prev).sqrt()
}

fn ddim_flow_coeffs(t: f64, dt: f64, eta: f64) -> Result<StepCoeffs> {
    check_cps_eta(eta)?;
    let s = t - dt;
    let (alpha_t, _) = vp_alpha(t);
    let (alpha_p, lam_p) = vp_alpha(s);
    let sigma = ddim_sigma(eta, alpha_t, alpha_p);
    // lambda_p * sqrt(1 - alpha_p) = s, so the predicted-noise coefficient
    // is taken against s directly.
    let fresh = lam_p * sigma;
    Ok(StepCoeffs {
        sample: 1.0 - s,
        pred_noise: (s * s - fresh * fresh).max(0.0).sqrt(),
        fresh_noise: fresh,
    })
}

/// DDIM step coefficients `sqrt(alpha_prev)`, `sqrt(1 - alpha_prev - sigma^2)`
/// and `sigma` in variance-preserving coordinates.
pub fn ddim_coeffs(alpha_prev: f64, sigma: f64) -> Result<StepCoeffs> {
    let radicand = 1.0 - alpha_prev - sigma * sigma;
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "DDIM needs sigma^2 <= 1 - alpha_prev, got sigma = {sigma}, alpha_prev = {alpha_prev}"
        )));
    }
    Ok(StepCoeffs {
        sample: alpha_prev.sqrt(),
        pred_noise: radicand.sqrt(),
        fresh_noise: sigma,
    })
}

impl SamplerKind {
    pub fn is_stochastic(&self) -> bool {
        !matches!(self, SamplerKind::Ode)
    }

    /// Checks parameters that do not depend on the step.
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplerKind::Ode => Ok(()),
            SamplerKind::FlowSde(rule) => {
                rule.validate()?;
                if matches!(rule.kind, SigmaKind::FlowGrpo | SigmaKind::DanceGrpo) {
                    Ok(())
                } else {
                    Err(Error::Domain(format!(
                        "Flow-SDE takes the flow or dance sigma rule, got {rule}"
                    )))
                }
            }
            SamplerKind::Cps(eta) | SamplerKind::DdimRef(eta) => check_cps_eta(eta),
            SamplerKind::Cpws(rule) => rule.validate(),
            SamplerKind::PatchedSde(eta) => patched_coeffs(1.0, 1.0, eta).map(|_| ()),
        }
    }

    /// Coefficients of the step from `t` to `t - dt`.
    pub fn coefficients(&self, t: f64, dt: f64) -> Result<StepCoeffs> {
        check_step(t, dt)?;
        match *self {
            SamplerKind::Ode => Ok(ode_coeffs(t, dt)),
            SamplerKind::FlowSde(rule) => flow_sde_coeffs(t, dt, rule),
            SamplerKind::Cps(eta) => cps_coeffs(t, dt, eta),
            SamplerKind::Cpws(rule) => cpws_coeffs(t, dt, rule),
            SamplerKind::PatchedSde(eta) => patched_coeffs(t, dt, eta),
            SamplerKind::DdimRef(eta) => ddim_flow_coeffs(t, dt, eta),
        }
    }

    /// The same kind with zero stochasticity.
    pub fn deterministic(&self) -> SamplerKind {
        match *self {
            SamplerKind::Ode => SamplerKind::Ode,
            SamplerKind::FlowSde(r) => SamplerKind::FlowSde(SigmaRule { eta: 0.0, ..r }),
            SamplerKind::Cps(_) => SamplerKind::Cps(0.0),
            SamplerKind::Cpws(r) => SamplerKind::Cpws(SigmaRule { eta: 0.0, ..r }),
            SamplerKind::PatchedSde(_) => SamplerKind::PatchedSde(0.0),
            SamplerKind::DdimRef(_) => SamplerKind::DdimRef(0.0),
        }
    }

    /// Short file-name friendly label, e.g. `flow_sde_dance_0.3`.
    pub fn label(&self) -> String {
        let rule = |r: &SigmaRule| {
            let name = r.to_string();
            let (n, _) = name.split_once('(').unwrap();
            format!("{n}_{}", r.eta)
        };
        match self {
            SamplerKind::Ode => "ode".into(),
            SamplerKind::FlowSde(r) => format!("flow_sde_{}", rule(r)),
            SamplerKind::Cps(eta) => format!("cps_{eta}"),
            SamplerKind::Cpws(r) => format!("cpws_{}", rule(r)),
            SamplerKind::PatchedSde(eta) => format!("patched_{eta}"),
            SamplerKind::DdimRef(eta) => format!("ddim_{eta}"),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rule = |r: &SigmaRule| {
            let name = r.to_string();
            let (n, _) = name.split_once('(').unwrap();
            format!("{n}, {}", r.eta)
        };
        match self {
            SamplerKind::Ode => f.write_str("ode"),
            SamplerKind::FlowSde(r) => write!(f, "flow_sde({})", rule(r)),
            SamplerKind::Cps(eta) => write!(f, "cps({eta})"),
            SamplerKind::Cpws(r) => write!(f, "cpws({})", rule(r)),
            SamplerKind::PatchedSde(eta) => write!(f, "patched({eta})"),
            SamplerKind::DdimRef(eta) => write!(f, "ddim({eta})"),
        }
    }
}

/// Text forms: `ode`, `cps(0.9)`, `flow_sde(dance, 0.3)`, `flow_sde(flow, 0.7)`,
/// `cpws(patched, 0.5)`, `patched(0.7)`, `ddim(1.0)`.
impl FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        let rule_arg = |args: &[String]| -> Result<SigmaRule> {
            if args.len() != 2 {
                return Err(Error::Domain(format!(
                    "expected `(rule, eta)` in `{}`",
                    s.trim()
                )));
            }
            Ok(SigmaRule {
                kind: args[0].parse()?,
                eta: parse_f64(&args[1], s)?,
            })
        };
        let kind = match name.as_str() {
            "ode" if args.is_empty() => SamplerKind::Ode,
            "flow_sde" | "sde" => SamplerKind::FlowSde(rule_arg(&args)?),
            "cpws" => SamplerKind::Cpws(rule_arg(&args)?),
            "cps" => SamplerKind::Cps(parse_f64_args::<1>(&args, s)?[0]),
            "patched" | "patched_sde" => SamplerKind::PatchedSde(parse_f64_args::<1>(&args, s)?[0]),
            "ddim" => SamplerKind::DdimRef(parse_f64_args::<1>(&args, s)?[0]),
            _ => return Err(Error::Domain(format!("unknown sampler `{}`", s.trim()))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

fn combine(c: StepCoeffs, x0_hat: &Point, x1_hat: &Point, eps: &Point) -> (Point, Point) {
    let mu = Point::lincomb(c.sample, x0_hat, c.pred_noise, x1_hat);
    let next = if c.fresh_noise == 0.0 {
        mu.clone()
    } else {
        mu.add_scaled(c.fresh_noise, eps)
    };
    (next, mu)
}

fn apply(
    f: &VelocityField,
    x: &Point,
    t: f64,
    dt: f64,
    coeffs: StepCoeffs,
    eps: &Point,
) -> Result<(Point, StepReport)> {
    if eps.dim() != x.dim() {
        return Err(Error::Domain(format!(
            "noise has dimension {}, state has {}",
            eps.dim(),
            x.dim()
        )));
    }
    let v = eval_velocity(f, x, t)?;
    let (x0_hat, x1_hat) = predict_endpoints(x, t, &v);
    let (next, mu) = combine(coeffs, &x0_hat, &x1_hat, eps);
    Ok((
        next,
        StepReport {
            t,
            dt,
            coeff_sample: coeffs.sample,
            coeff_pred_noise: coeffs.pred_noise,
            coeff_fresh_noise: coeffs.fresh_noise,
            mu,
            eps: eps.clone(),
        },
    ))
}

/// Deterministic Euler step `x - v dt`, written as an interpolation
/// between the predicted endpoints.
pub fn ode_step(f: &VelocityField, x: &Point, t: f64, dt: f64) -> Result<(Point, StepReport)> {
    check_step(t, dt)?;
    apply(f, x, t, dt, ode_coeffs(t, dt), &Point::zeros(x.dim()))
}

/// Flow-SDE step. The predicted-noise coefficient is reported as is, even
/// when it turns negative near `t = 0`.
pub fn flow_sde_step(
    f: &VelocityField,
    x: &Point,
    t: f64,
    dt: f64,
    rule: SigmaRule,
    eps: &Point,
) -> Result<(Point, StepReport)> {
    check_step(t, dt)?;
    apply(f, x, t, dt, flow_sde_coeffs(t, dt, rule)?, eps)
}

pub fn cps_step(
    f: &VelocityField,
    x: &Point,
    t: f64,
    dt: f64,
    eta: f64,
    eps: &Point,
) -> Result<(Point, StepReport)> {
    check_step(t, dt)?;
    apply(f, x, t, dt, cps_coeffs(t, dt, eta)?, eps)
}

/// CPS parameterised directly by the fresh-noise magnitude; requires
/// `0 <= sigma <= t - dt`.
pub fn cps_sigma_step(
    f: &VelocityField,
    x: &Point,
    t: f64,
    dt: f64,
    sigma: f64,
    eps: &Point,
) -> Result<(Point, StepReport)> {
    check_step(t, dt)?;
    apply(f, x, t, dt, cps_sigma_coeffs(t, dt, sigma)?, eps)
}

pub fn cpws_step(
    f: &VelocityField,
    x: &Point,
    t: f64,
    dt: f64,
    rule: SigmaRule,
    eps: &Point,
) -> Result<(Point, StepReport)> {
    check_step(t, dt)?;
    apply(f, x, t, dt, cpws_coeffs(t, dt, rule)?, eps)
}

pub fn patched_sde_step(
    f: &VelocityField,
    x: &Point,
    t: f64,
    dt: f64,
    eta: f64,
    eps: &Point,
) -> Result<(Point, StepReport)> {
    check_step(t, dt)?;
    apply(f, x, t, dt, patched_coeffs(t, dt, eta)?, eps)
}

/// One DDIM update from a supplied noise prediction:
///
/// ```text
/// x_prev = sqrt(a_prev) (x - sqrt(1 - a_t) e) / sqrt(a_t)
///        + sqrt(1 - a_prev - sigma^2) e + sigma eps
/// ```
///
/// The report's `t` and `dt` are in noise-level units
/// (`t = sqrt(1 - a_t)`, `t - dt = sqrt(1 - a_prev)`).
pub fn ddim_ref_step(
    eps_pred: &Point,
    x: &Point,
    alpha_t: f64,
    alpha_prev: f64,
    sigma: f64,
    eps: &Point,
) -> Result<(Point, StepReport)> {
    for (name, a) in [("alpha_t", alpha_t), ("alpha_prev", alpha_prev)] {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Domain(format!("{name} must lie in (0, 1], got {a}")));
        }
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
    }
    if eps_pred.dim() != x.dim() || eps.dim() != x.dim() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    let c = ddim_coeffs(alpha_prev, sigma)?;
    let x0_hat = x
        .add_scaled(-(1.0 - alpha_t).sqrt(), eps_pred)
        .scale(1.0 / alpha_t.sqrt());
    let (next, mu) = combine(c, &x0_hat, eps_pred, eps);
    let t = (1.0 - alpha_t).sqrt();
    Ok((
        next,
        StepReport {
            t,
            dt: t - (1.0 - alpha_prev).sqrt(),
            coeff_sample: c.sample,
            coeff_pred_noise: c.pred_noise,
            coeff_fresh_noise: c.fresh_noise,
            mu,
            eps: eps.clone(),
        },
    ))
}

/// Dispatches one step of `kind`.
pub fn step(
    kind: SamplerKind,
    f: &VelocityField,
    x: &Point,
    t: f64,
    dt: f64,
    eps: &Point,
) -> Result<(Point, StepReport)> {
    check_step(t, dt)?;
    let coeffs = kind.coefficients(t, dt)?;
    if kind.is_stochastic() {
        apply(f, x, t, dt, coeffs, eps)
    } else {
        apply(f, x, t, dt, coeffs, &Point::zeros(x.dim()))
    }
}

/// `-|x_next - mu|^2`, the per-step log-probability used for importance ratios.
pub fn step_logprob(x_next: &Point, mu: &Point) -> f64 {
    -x_next.dist_sq(mu)
}

/// Checks that every step of `grid` is admissible for `kind`.
pub fn validate_on_grid(kind: SamplerKind, grid: &TimeGrid) -> Result<Vec<StepCoeffs>> {
    kind.validate()?;
    grid.intervals()
        .enumerate()
        .map(|(i, (t, dt))| kind.coefficients(t, dt).map_err(|e| Error::at_step(i, e)))
        .collect()
}

/// Samples a trajectory from `x_init` at `t = 1`. Fresh noise comes from
/// `rng_from(seed)`.
pub fn rollout_from(
    kind: SamplerKind,
    f: &VelocityField,
    grid: &TimeGrid,
    x_init: Point,
    seed: u64,
) -> Result<Trajectory> {
    rollout_with(kind, f, grid, x_init, &mut rng_from(seed))
}

/// Samples a trajectory whose initial state and fresh noise all come from
/// `rng_from(seed)`. Needs a field with a known dimension.
pub fn rollout(kind: SamplerKind, f: &VelocityField, grid: &TimeGrid, seed: u64) -> Result<Trajectory> {
    let dim = f.dim().ok_or_else(|| {
        Error::Unsupported("field has no intrinsic dimension; use rollout_from".into())
    })?;
    let mut rng = rng_from(seed);
    let x_init = standard_normal_point(&mut rng, dim);
    rollout_with(kind, f, grid, x_init, &mut rng)
}

pub(crate) fn rollout_with(
    kind: SamplerKind,
    f: &VelocityField,
    grid: &TimeGrid,
    x_init: Point,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let coeffs = validate_on_grid(kind, grid)?;
    let dim = x_init.dim();
    let stochastic = kind.is_stochastic();
    let mut states = Vec::with_capacity(grid.k() + 1);
    let mut reports = Vec::with_capacity(grid.k());
    let mut logprob_terms = Vec::new();
    let mut x = x_init;
    for (i, ((t, dt), c)) in grid.intervals().zip(coeffs).enumerate() {
        let eps = if stochastic {
            standard_normal_point(rng, dim)
        } else {
            Point::zeros(dim)
        };
        let (next, report) = apply(f, &x, t, dt, c, &eps).map_err(|e| Error::at_step(i, e))?;
        if !next.is_finite() {
            return Err(Error::at_step(
                i,
                Error::NonFinite(format!("state after step from t = {t}")),
            ));
        }
        if stochastic {
            logprob_terms.push(step_logprob(&next, &report.mu));
        }
        states.push((t, std::mem::replace(&mut x, next)));
        reports.push(report);
    }
    states.push((0.0, x));
    Ok(Trajectory {
        kind,
        states,
        reports,
        logprob_terms,
    })
}

/// Per-step CSV: `t,dt,coeff_sample,coeff_pred_noise,coeff_fresh_noise,norm_x,logprob_term`.
/// `norm_x` is the norm of the state after the step; `logprob_term` is
/// empty for the ODE.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    use crate::fmt_f64 as g;
    let mut out =
        String::from("t,dt,coeff_sample,coeff_pred_noise,coeff_fresh_noise,norm_x,logprob_term\n");
    for (i, r) in traj.reports.iter().enumerate() {
        let lp = traj.logprob_terms.get(i).map(|v| g(*v)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            g(r.t),
            g(r.dt),
            g(r.coeff_sample),
            g(r.coeff_pred_noise),
            g(r.coeff_fresh_noise),
            g(traj.states[i + 1].1.norm()),
            lp
        ));
    }
    out
}

/// States as a `(K + 1) x (1 + D)` array of `[t, x...]` rows.
pub fn trajectory_states_array(traj: &Trajectory) -> Result<Vec<u8>> {
    let dim = traj.initial().dim();
    let mut data = Vec::with_capacity(traj.states.len() * (dim + 1));
    for (t, x) in &traj.states {
        data.push(*t);
        data.extend_from_slice(x.coords());
    }
    crate::velocity::io::encode_array(traj.states.len(), dim + 1, &data)
}
