//! Time grids and per-step noise magnitudes.
//!
//! The noise level `t` runs from 1 (pure noise) down to 0 (data). A grid is
//! the decreasing list of levels a sampler visits; a [`SigmaRule`] decides
//! how much fresh noise each step injects.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest `t` at which the Flow-GRPO rule is evaluated. The rule is
/// singular at `t = 1`, so steps starting there use this value instead.
pub const FLOW_GRPO_T_MAX: f64 = 1.0 - 1e-4;

/// Strictly decreasing noise levels `1 = t_K > ... > t_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    steps: Vec<f64>,
}

impl TimeGrid {
    /// Validates and wraps an explicit list of levels, ordered from 1 to 0.
    pub fn from_steps(steps: Vec<f64>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least two levels, got {}",
                steps.len()
            )));
        }
        if steps[0] != 1.0 || *steps.last().unwrap() != 0.0 {
            return Err(Error::InvalidGrid(
                "grid must start at exactly 1 and end at exactly 0".into(),
            ));
        }
        if let Some(w) = steps.windows(2).find(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidGrid(format!(
                "levels must strictly decrease, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(TimeGrid { steps })
    }

    /// Levels in visiting order, starting at 1.
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Number of transitions.
    pub fn k(&self) -> usize {
        self.steps.len() - 1
    }

    /// `(t, dt)` for every transition in visiting order, with `dt = t_k - t_{k-1}`.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.steps.windows(2).map(|w| (w[0], w[0] - w[1]))
    }
}

/// `t_k = k / K` for `k = K, ..., 0`.
pub fn uniform_grid(k: usize) -> Result<TimeGrid> {
    if k == 0 {
        return Err(Error::InvalidGrid("step count must be at least 1".into()));
    }
    let kf = k as f64;
    let steps = (0..=k).rev().map(|i| i as f64 / kf).collect();
    TimeGrid::from_steps(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SigmaKind {
    /// `eta * sqrt(t / (1 - t))`
    FlowGrpo,
    /// `eta`
    DanceGrpo,
    /// `(t - dt) * sin(eta * pi / 2)`, `eta` in `[0, 1]`
    CpsEta,
    /// `eta * (t - dt)`
    PatchedEta,
}

/// A noise-magnitude rule together with its stochastic strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaRule {
    pub kind: SigmaKind,
    pub eta: f64,
}

impl SigmaRule {
    pub fn new(kind: SigmaKind, eta: f64) -> Result<Self> {
        let rule = SigmaRule { kind, eta };
        rule.validate()?;
        Ok(rule)
    }

    pub fn flow_grpo(eta: f64) -> Self {
        SigmaRule { kind: SigmaKind::FlowGrpo, eta }
    }

    pub fn dance_grpo(eta: f64) -> Self {
        SigmaRule { kind: SigmaKind::DanceGrpo, eta }
    }

    pub fn cps_eta(eta: f64) -> Self {
        SigmaRule { kind: SigmaKind::CpsEta, eta }
    }

    pub fn patched_eta(eta: f64) -> Self {
        SigmaRule { kind: SigmaKind::PatchedEta, eta }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::Domain(format!(
                "eta must be finite and non-negative, got {}",
                self.eta
            )));
        }
        if self.kind == SigmaKind::CpsEta && self.eta > 1.0 {
            return Err(Error::Domain(format!(
                "CPS eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Same as [`sigma_at`], but a Flow-GRPO step starting at `t = 1` is
    /// evaluated at [`FLOW_GRPO_T_MAX`]. This is what the samplers use.
    pub fn step_sigma(&self, t: f64, dt: f64) -> Result<f64> {
        if self.kind == SigmaKind::FlowGrpo {
            check_step(t, dt)?;
            self.validate()?;
            let tc = t.min(FLOW_GRPO_T_MAX);
            return Ok(self.eta * (tc / (1.0 - tc)).sqrt());
        }
        sigma_at(*self, t, dt)
    }
}

pub(crate) fn check_step(t: f64, dt: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t must lie in (0, 1], got {t}")));
    }
    if !(dt > 0.0 && dt <= t) {
        return Err(Error::Domain(format!(
            "dt must lie in (0, t] with t = {t}, got {dt}"
        )));
    }
    Ok(())
}

/// Noise magnitude of `rule` for the step from `t` to `t - dt`.
pub fn sigma_at(rule: SigmaRule, t: f64, dt: f64) -> Result<f64> {
    check_step(t, dt)?;
    rule.validate()?;
    let eta = rule.eta;
    Ok(match rule.kind {
        SigmaKind::FlowGrpo => {
            if t >= 1.0 {
                return Err(Error::Singularity {
                    t,
                    what: "Flow-GRPO sigma diverges at t = 1",
                });
            }
            eta * (t / (1.0 - t)).sqrt()
        }
        SigmaKind::DanceGrpo => eta,
        SigmaKind::CpsEta => (t - dt) * (eta * std::f64::consts::FRAC_PI_2).sin(),
        SigmaKind::PatchedEta => eta * (t - dt),
    })
}

impl fmt::Display for SigmaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            SigmaKind::FlowGrpo => "flow",
            SigmaKind::DanceGrpo => "dance",
            SigmaKind::CpsEta => "cps",
            SigmaKind::PatchedEta => "patched",
        };
        write!(f, "{name}({})", self.eta)
    }
}

impl FromStr for SigmaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "flow" | "flow_grpo" => Ok(SigmaKind::FlowGrpo),
            "dance" | "dance_grpo" => Ok(SigmaKind::DanceGrpo),
            "cps" | "cps_eta" => Ok(SigmaKind::CpsEta),
            "patched" | "patched_eta" => Ok(SigmaKind::PatchedEta),
            other => Err(Error::Domain(format!("unknown sigma rule `{other}`"))),
        }
    }
}

/// Parses `dance(0.3)`, `flow(0.7)`, `cps(0.9)`, `patched(0.5)`.
impl FromStr for SigmaRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = crate::spec::split_call(s)?;
        let [eta] = crate::spec::parse_f64_args::<1>(&args, s)?;
        SigmaRule::new(name.parse()?, eta)
    }
}

/// Parses `uniform(K)`.
impl FromStr for TimeGrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = crate::spec::split_call(s)?;
        if name != "uniform" || args.len() != 1 {
            return Err(Error::Domain(format!(
                "expected `uniform(K)`, got `{}`",
                s.trim()
            )));
        }
        let k: usize = args[0]
            .parse()
            .map_err(|_| Error::Domain(format!("bad step count in `{}`", s.trim())))?;
        uniform_grid(k)
    }
}
