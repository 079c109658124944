//! Group-relative policy optimisation over sampler trajectories.
//!
//! A group of `G` trajectories is sampled with a frozen copy of the policy.
//! Terminal rewards are standardised within the group and the resulting
//! advantage is broadcast to every step of the member's trajectory. Each step
//! contributes a PPO-style clipped term whose importance ratio compares the
//! current and frozen policies through the simplified log-probability
//! `-|x_next - mu_theta(x_t, t)|^2`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::point::Point;
use crate::rng::{derive_seed, rng_for, standard_normal_point, stream};
use crate::samplers::{predict_endpoints, rollout, rollout_from, SamplerKind, Trajectory};
use crate::schedule::TimeGrid;
use crate::spec::{parse_f64, split_call};
use crate::velocity::{Mlp, VelocityField};

pub use crate::samplers::step_logprob;

/// Floor applied to the group standard deviation.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

/// Verifiable toy rewards on terminal samples.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardSpec {
    /// `-|x - target|`
    NegDistance(Point),
    /// 1 inside the ball, 0 outside.
    ModeIndicator { target: Point, radius: f64 },
}

impl RewardSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let target = match self {
            RewardSpec::NegDistance(p) => p,
            RewardSpec::ModeIndicator { target, radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Domain(format!("radius must be positive, got {radius}")));
                }
                target
            }
        };
        if target.dim() != dim {
            return Err(Error::Domain(format!(
                "reward target has dimension {}, samples have {dim}",
                target.dim()
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &Point) -> f64 {
        match self {
            RewardSpec::NegDistance(target) => -x.dist(target),
            RewardSpec::ModeIndicator { target, radius } => {
                if x.dist(target) <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `neg_distance(2 2)` or `mode(2 2, 0.5)`.
impl FromStr for RewardSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        let point = |a: &str| -> Result<Point> {
            Ok(Point(
                a.split_whitespace()
                    .map(|c| parse_f64(c, s))
                    .collect::<Result<Vec<_>>>()?,
            ))
        };
        match (name.as_str(), args.len()) {
            ("neg_distance", 1) => Ok(RewardSpec::NegDistance(point(&args[0])?)),
            ("mode", 2) => Ok(RewardSpec::ModeIndicator {
                target: point(&args[0])?,
                radius: parse_f64(&args[1], s)?,
            }),
            _ => Err(Error::Domain(format!("unknown reward `{}`", s.trim()))),
        }
    }
}

impl fmt::Display for RewardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = |p: &Point| {
            p.coords()
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        match self {
            RewardSpec::NegDistance(t) => write!(f, "neg_distance({})", p(t)),
            RewardSpec::ModeIndicator { target, radius } => {
                write!(f, "mode({}, {radius})", p(target))
            }
        }
    }
}

/// `(r_i - mean) / max(std, 1e-8)` with the population standard deviation.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Domain(format!(
            "advantages need at least two rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(ADVANTAGE_STD_FLOOR);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Isotropic Gaussian log-density of `x_next` around `mu`, summed over
/// coordinates.
pub fn full_logprob(x_next: &Point, mu: &Point, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let d = x_next.dim() as f64;
    let half_log_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    Ok(-x_next.dist_sq(mu) / (2.0 * sigma * sigma) - d * sigma.ln() - d * half_log_two_pi)
}

fn clip(ratio: f64, clip_eps: f64) -> f64 {
    ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps)
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(clip(ratio, clip_eps) * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to `ratio`.
fn clipped_surrogate_dratio(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    if ratio * advantage <= clip(ratio, clip_eps) * advantage {
        advantage
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    /// Must be stochastic; carries the stochastic strength.
    pub sampler: SamplerKind,
    /// Weight of the Gaussian KL penalty against the reference model; 0 disables it.
    pub kl_beta: f64,
    pub lr: f64,
    pub groups_per_iter: usize,
    pub iters: usize,
    pub seed: u64,
    /// Number of deterministic samples behind each evaluation reward.
    pub eval_samples: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            sampler: SamplerKind::Cps(0.7),
            kl_beta: 0.0,
            lr: 0.05,
            groups_per_iter: 4,
            iters: 200,
            seed: 0,
            eval_samples: 256,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if matches!(self.sampler, SamplerKind::Ode | SamplerKind::DdimRef(_)) {
            return Err(Error::Domain(format!(
                "GRPO needs a stochastic flow sampler, got {}",
                self.sampler
            )));
        }
        if self.group_size < 2 {
            return Err(Error::Domain("group size must be at least 2".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Domain(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps)));
        }
        if !(self.kl_beta >= 0.0) || !(self.lr > 0.0) {
            return Err(Error::Domain("need kl_beta >= 0 and lr > 0".into()));
        }
        if self.groups_per_iter == 0 || self.eval_samples == 0 {
            return Err(Error::Domain("groups_per_iter and eval_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub prompt_seed: u64,
    pub members: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Samples `G` trajectories under `policy`; member `i` uses seed
/// `derive_seed(prompt_seed, i)`.
pub fn sample_group(
    policy: &VelocityField,
    sampler: SamplerKind,
    group_size: usize,
    reward: &RewardSpec,
    grid: &TimeGrid,
    prompt_seed: u64,
) -> Result<GroupRollout> {
    let members = (0..group_size)
        .map(|i| rollout(sampler, policy, grid, derive_seed(prompt_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = members.iter().map(|m| reward.evaluate(m.terminal())).collect();
    let advantages = compute_advantages(&rewards)?;
    Ok(GroupRollout {
        prompt_seed,
        members,
        rewards,
        advantages,
    })
}

/// Per-batch diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateStats {
    pub objective: f64,
    pub mean_ratio: f64,
    pub clip_frac: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

struct GroupPart {
    objective: f64,
    kl: f64,
    ratio_sum: f64,
    clipped: usize,
    terms: usize,
    grad: Vec<f64>,
}

fn group_part(
    policy: &Mlp,
    reference: Option<&Mlp>,
    group: &GroupRollout,
    cfg: &GrpoConfig,
    scale: f64,
) -> Result<GroupPart> {
    let mut part = GroupPart {
        objective: 0.0,
        kl: 0.0,
        ratio_sum: 0.0,
        clipped: 0,
        terms: 0,
        grad: vec![0.0; policy.params().len()],
    };
    let use_kl = cfg.kl_beta > 0.0;
    for (traj, &adv) in group.members.iter().zip(&group.advantages) {
        let steps = traj.reports.len();
        if traj.logprob_terms.len() != steps {
            return Err(Error::Domain("trajectory lacks log-probabilities".into()));
        }
        let w = scale / steps as f64;
        for (i, rep) in traj.reports.iter().enumerate() {
            let (t, x) = (&traj.states[i].0, &traj.states[i].1);
            let x_next = &traj.states[i + 1].1;
            let (a, b) = (rep.coeff_sample, rep.coeff_pred_noise);

            let cache = policy.forward_cached(x, *t)?;
            let v = cache.output();
            let (x0_hat, x1_hat) = predict_endpoints(x, *t, &v);
            let mu = Point::lincomb(a, &x0_hat, b, &x1_hat);
            // d mu / d v
            let k = b * (1.0 - t) - a * t;

            let logp = step_logprob(x_next, &mu);
            let ratio = (logp - traj.logprob_terms[i]).exp();
            if !ratio.is_finite() {
                return Err(Error::NonFinite(format!(
                    "importance ratio at t = {t} (log-ratio {})",
                    logp - traj.logprob_terms[i]
                )));
            }
            part.objective += w * clipped_surrogate(ratio, adv, cfg.clip_eps);
            part.ratio_sum += ratio;
            part.terms += 1;
            if (ratio - 1.0).abs() > cfg.clip_eps {
                part.clipped += 1;
            }

            // d logp / d v = 2 k (x_next - mu)
            let dl = w * clipped_surrogate_dratio(ratio, adv, cfg.clip_eps) * ratio;
            let mut grad_v: Vec<f64> = x_next
                .coords()
                .iter()
                .zip(mu.coords())
                .map(|(xn, m)| dl * 2.0 * k * (xn - m))
                .collect();

            let c = rep.coeff_fresh_noise;
            if use_kl && c > 0.0 {
                let reference = reference.ok_or_else(|| {
                    Error::Domain("KL penalty needs a reference model".into())
                })?;
                let v_ref = reference.forward(x, *t)?;
                let (r0, r1) = predict_endpoints(x, *t, &v_ref);
                let mu_ref = Point::lincomb(a, &r0, b, &r1);
                let kl = mu.dist_sq(&mu_ref) / (2.0 * c * c);
                part.kl += w * kl;
                part.objective -= w * cfg.kl_beta * kl;
                for (g, (m, mr)) in grad_v.iter_mut().zip(mu.coords().iter().zip(mu_ref.coords())) {
                    *g -= w * cfg.kl_beta * k * (m - mr) / (c * c);
                }
            }

            policy.backward(&cache, &grad_v, &mut part.grad);
        }
    }
    Ok(part)
}

/// Clipped objective averaged over groups, members and steps (minus the
/// optional KL penalty), together with its exact parameter gradient.
pub fn surrogate_objective_and_grad(
    policy: &Mlp,
    reference: Option<&Mlp>,
    groups: &[GroupRollout],
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>, SurrogateStats)> {
    if groups.is_empty() {
        return Err(Error::Domain("no groups to optimise".into()));
    }
    let scale_of = |g: &GroupRollout| 1.0 / (groups.len() * g.members.len()) as f64;
    let parts = crate::par_map(groups.len(), |gi| {
        group_part(policy, reference, &groups[gi], cfg, scale_of(&groups[gi]))
    });
    let mut grad = vec![0.0; policy.params().len()];
    let (mut objective, mut kl, mut ratio_sum) = (0.0, 0.0, 0.0);
    let (mut clipped, mut terms) = (0usize, 0usize);
    for part in parts {
        let part = part?;
        objective += part.objective;
        kl += part.kl;
        ratio_sum += part.ratio_sum;
        clipped += part.clipped;
        terms += part.terms;
        for (g, p) in grad.iter_mut().zip(&part.grad) {
            *g += p;
        }
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let stats = SurrogateStats {
        objective,
        mean_ratio: ratio_sum / terms.max(1) as f64,
        clip_frac: clipped as f64 / terms.max(1) as f64,
        kl,
        grad_norm,
    };
    Ok((objective, grad, stats))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterStats {
    pub mean_train_reward: f64,
    pub surrogate: SurrogateStats,
}

/// Samples `groups_per_iter` groups under `old_policy`, then takes one
/// gradient-ascent step on `policy`. Group `g` uses
/// `derive_seed(seed, g)` as its prompt seed.
pub fn grpo_iteration(
    policy: &Mlp,
    old_policy: &Mlp,
    reference: Option<&Mlp>,
    cfg: &GrpoConfig,
    reward: &RewardSpec,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(Mlp, IterStats)> {
    cfg.validate()?;
    reward.validate(policy.arch().dim())?;
    let old = VelocityField::Mlp(old_policy.clone());
    let groups = crate::par_map(cfg.groups_per_iter, |g| {
        sample_group(&old, cfg.sampler, cfg.group_size, reward, grid, derive_seed(seed, g as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let (objective, grad, stats) = surrogate_objective_and_grad(policy, reference, &groups, cfg)?;
    if !objective.is_finite() || !stats.grad_norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective {objective}, gradient norm {}, mean ratio {}",
            stats.grad_norm, stats.mean_ratio
        )));
    }
    let mut updated = policy.clone();
    for (p, g) in updated.params_mut().iter_mut().zip(&grad) {
        *p += cfg.lr * g;
    }
    let n_rewards: usize = groups.iter().map(|g| g.rewards.len()).sum();
    let mean_train_reward =
        groups.iter().flat_map(|g| &g.rewards).sum::<f64>() / n_rewards as f64;
    Ok((
        updated,
        IterStats {
            mean_train_reward,
            surrogate: stats,
        },
    ))
}

/// Mean reward of `n` deterministic (ODE) samples from fixed initial noise.
pub fn eval_reward(policy: &Mlp, reward: &RewardSpec, grid: &TimeGrid, n: usize, seed: u64) -> Result<f64> {
    let field = VelocityField::Mlp(policy.clone());
    let dim = policy.arch().dim();
    let mut rng = rng_for(seed, stream::EVAL);
    let inits: Vec<Point> = (0..n).map(|_| standard_normal_point(&mut rng, dim)).collect();
    let rewards = crate::par_map(n, |i| {
        rollout_from(SamplerKind::Ode, &field, grid, inits[i].clone(), 0)
            .map(|traj| reward.evaluate(traj.terminal()))
    });
    let mut sum = 0.0;
    for r in rewards {
        sum += r?;
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub mean_train_reward: f64,
    /// Evaluation reward of the policy at the start of the iteration.
    pub mean_eval_reward: f64,
    pub clip_frac: f64,
    pub mean_ratio: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub config: GrpoConfig,
    pub records: Vec<IterRecord>,
    pub final_eval_reward: f64,
    pub final_policy: Mlp,
}

impl RunArtifact {
    /// Evaluation rewards at iterations `0..=iters`.
    pub fn eval_curve(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.records.iter().map(|r| r.mean_eval_reward).collect();
        c.push(self.final_eval_reward);
        c
    }

    pub fn initial_eval_reward(&self) -> f64 {
        self.eval_curve()[0]
    }

    /// Mean of the evaluation curve.
    pub fn eval_auc(&self) -> f64 {
        let c = self.eval_curve();
        c.iter().sum::<f64>() / c.len() as f64
    }

    /// `iter,mean_train_reward,mean_eval_reward,clip_frac,mean_ratio,grad_norm`.
    /// The last row carries only the final evaluation.
    pub fn to_csv(&self) -> String {
        use crate::fmt_f64 as g;
        let mut out =
            String::from("iter,mean_train_reward,mean_eval_reward,clip_frac,mean_ratio,grad_norm\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter,
                g(r.mean_train_reward),
                g(r.mean_eval_reward),
                g(r.clip_frac),
                g(r.mean_ratio),
                g(r.grad_norm)
            ));
        }
        out.push_str(&format!(
            "{},,{},,,\n",
            self.records.len(),
            g(self.final_eval_reward)
        ));
        out
    }
}

/// Runs `cfg.iters` GRPO iterations from `base`, refreshing the frozen
/// policy every iteration and evaluating with the ODE sampler on a fixed
/// set of initial states.
pub fn run_experiment(
    cfg: &GrpoConfig,
    reward: &RewardSpec,
    base: &Mlp,
    grid: &TimeGrid,
) -> Result<RunArtifact> {
    cfg.validate()?;
    reward.validate(base.arch().dim())?;
    let eval_seed = derive_seed(cfg.seed, stream::EVAL);
    let group_root = derive_seed(cfg.seed, stream::GROUP);
    let reference = (cfg.kl_beta > 0.0).then_some(base);

    let mut policy = base.clone();
    let mut records = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let eval = eval_reward(&policy, reward, grid, cfg.eval_samples, eval_seed)?;
        let old = policy.clone();
        let (next, stats) = grpo_iteration(
            &policy,
            &old,
            reference,
            cfg,
            reward,
            grid,
            derive_seed(group_root, iter as u64),
        )
        .map_err(|e| Error::at_step(iter, e))?;
        records.push(IterRecord {
            iter,
            mean_train_reward: stats.mean_train_reward,
            mean_eval_reward: eval,
            clip_frac: stats.surrogate.clip_frac,
            mean_ratio: stats.surrogate.mean_ratio,
            grad_norm: stats.surrogate.grad_norm,
        });
        policy = next;
    }
    let final_eval_reward = eval_reward(&policy, reward, grid, cfg.eval_samples, eval_seed)?;
    Ok(RunArtifact {
        config: cfg.clone(),
        records,
        final_eval_reward,
        final_policy: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::schedule::{uniform_grid, SigmaRule};
    use crate::velocity::{Activation, MlpArchitecture};
    use proptest::prelude::*;

    #[test]
    fn advantage_examples() {
        assert_eq!(compute_advantages(&[1.0, 1.0, 1.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(compute_advantages(&[0.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
        // Brute force: mean 2, population variance 2/3.
        let a = compute_advantages(&[1.0, 2.0, 3.0]).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        assert_eq!(a, vec![-1.0 / s, 0.0, 1.0 / s]);
        assert!((a[2] - 1.2247).abs() < 1e-4);
        assert!(compute_advantages(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn advantages_zero_mean_shift_invariant(
            rewards in prop::collection::vec(-10.0f64..10.0, 2..32),
            shift in -100.0f64..100.0,
        ) {
            let a = compute_advantages(&rewards).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9 * rewards.len() as f64);
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let b = compute_advantages(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn clip_bound(ratio in 0.01f64..5.0, adv in -5.0f64..5.0, eps in 0.01f64..0.99) {
            let s = clipped_surrogate(ratio, adv, eps);
            prop_assert!(s.abs() <= (adv.abs() * (1.0 + eps)).max((adv * ratio).abs()) + 1e-15);
        }

        #[test]
        fn logprob_translation_invariant(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0, s in -5.0f64..5.0) {
            let x = Point::from([a, b]);
            let m = Point::from([c, d]);
            let shift = Point::from([s, -s]);
            let l1 = step_logprob(&x, &m);
            let l2 = step_logprob(&x.add(&shift), &m.add(&shift));
            prop_assert!((l1 - l2).abs() < 1e-10);
        }

        /// With a shared sigma the dropped terms cancel: the ratio of
        /// full densities is the exponentiated difference of simplified
        /// log-probabilities, once those are scaled by 1 / (2 sigma^2).
        #[test]
        fn ratio_identity(x in -3.0f64..3.0, m1 in -3.0f64..3.0, m2 in -3.0f64..3.0, sigma in 0.1f64..2.0) {
            let xn = Point::from([x, -x]);
            let (a, b) = (Point::from([m1, 0.5]), Point::from([m2, 0.5]));
            let full = full_logprob(&xn, &a, sigma).unwrap() - full_logprob(&xn, &b, sigma).unwrap();
            let simple = (step_logprob(&xn, &a) - step_logprob(&xn, &b)) / (2.0 * sigma * sigma);
            prop_assert!((full - simple).abs() < 1e-9 * (1.0 + full.abs()));
        }
    }

    #[test]
    fn logprob_examples() {
        let m = Point::from([0.5, -0.5]);
        assert_eq!(step_logprob(&m, &m), 0.0);
        assert_eq!(step_logprob(&Point::from([1.5, 0.5]), &m), -2.0);
        let lp = full_logprob(&Point::from([0.0]), &Point::from([0.0]), 1.0).unwrap();
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((lp + 0.91894).abs() < 1e-5);
        assert!(full_logprob(&m, &m, 0.0).is_err());
        let x = Point::from([0.2, 0.1]);
        let r = (full_logprob(&x, &m, 0.3).unwrap() - full_logprob(&x, &m, 0.3).unwrap()).exp();
        assert_eq!(r, 1.0);
    }

    /// Brute-force evaluation of both branches of the clipped objective.
    #[test]
    fn clipped_surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        let brute = |r: f64, a: f64, e: f64| {
            let c = if r < 1.0 - e { 1.0 - e } else if r > 1.0 + e { 1.0 + e } else { r };
            let (u, v) = (r * a, c * a);
            if u < v { u } else { v }
        };
        // ratio 0.5, A = -1: branches -0.5 and -0.8, the minimum is -0.8.
        assert!((clipped_surrogate(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-15);
        for &(r, a) in &[(0.5, -1.0), (0.5, 1.0), (1.3, -2.0), (0.9, 0.3), (2.0, 1.0)] {
            assert_eq!(clipped_surrogate(r, a, 0.2), brute(r, a, 0.2));
        }
    }

    #[test]
    fn reward_text_forms() {
        let r: RewardSpec = "neg_distance(2 2)".parse().unwrap();
        assert_eq!(r.evaluate(&Point::from([2.0, 5.0])), -3.0);
        assert_eq!(r.to_string(), "neg_distance(2 2)");
        let m: RewardSpec = "mode(0 0, 0.5)".parse().unwrap();
        assert_eq!(m.evaluate(&Point::from([0.3, 0.3])), 1.0);
        assert_eq!(m.evaluate(&Point::from([0.4, 0.4])), 0.0);
        assert!(m.validate(2).is_ok());
        assert!(RewardSpec::ModeIndicator { target: Point::zeros(2), radius: 0.0 }
            .validate(2)
            .is_err());
        assert!(r.validate(3).is_err());
    }

    fn net(seed: u64) -> Mlp {
        let arch = MlpArchitecture::new(2, vec![8], Activation::Tanh).unwrap();
        Mlp::init(arch, &mut rng_from(seed))
    }

    fn cfg(sampler: SamplerKind) -> GrpoConfig {
        GrpoConfig {
            sampler,
            groups_per_iter: 2,
            group_size: 4,
            iters: 3,
            eval_samples: 16,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(SamplerKind::Ode).validate().is_err());
        assert!(GrpoConfig { group_size: 1, ..cfg(SamplerKind::Cps(0.5)) }.validate().is_err());
        assert!(GrpoConfig { clip_eps: 1.0, ..cfg(SamplerKind::Cps(0.5)) }.validate().is_err());
        assert!(cfg(SamplerKind::PatchedSde(0.5)).validate().is_ok());
    }

    #[test]
    fn unit_ratio_at_old_policy() {
        let p = net(1);
        let grid = uniform_grid(4).unwrap();
        let reward = RewardSpec::NegDistance(Point::from([1.0, 1.0]));
        let c = cfg(SamplerKind::Cps(0.7));
        let field = VelocityField::Mlp(p.clone());
        let groups: Vec<_> = (0..2)
            .map(|g| sample_group(&field, c.sampler, 4, &reward, &grid, g).unwrap())
            .collect();
        let (obj, _, stats) = surrogate_objective_and_grad(&p, None, &groups, &c).unwrap();
        assert_eq!(stats.mean_ratio, 1.0);
        assert_eq!(stats.clip_frac, 0.0);
        // Advantages have zero mean, so at unit ratio the objective vanishes.
        assert!(obj.abs() < 1e-12, "{obj}");
    }

    #[test]
    fn equal_rewards_give_zero_update() {
        let p = net(2);
        let grid = uniform_grid(4).unwrap();
        // A ball that contains everything: every member gets reward 1.
        let reward = RewardSpec::ModeIndicator { target: Point::zeros(2), radius: 1e9 };
        let (next, stats) =
            grpo_iteration(&p, &p, None, &cfg(SamplerKind::Cps(0.7)), &reward, &grid, 5).unwrap();
        assert_eq!(next, p);
        assert_eq!(stats.surrogate.grad_norm, 0.0);
    }

    #[test]
    fn iteration_is_deterministic() {
        let p = net(3);
        let grid = uniform_grid(4).unwrap();
        let reward = RewardSpec::NegDistance(Point::from([1.0, 0.0]));
        let c = cfg(SamplerKind::FlowSde(SigmaRule::dance_grpo(0.5)));
        let a = grpo_iteration(&p, &p, None, &c, &reward, &grid, 9).unwrap();
        let b = grpo_iteration(&p, &p, None, &c, &reward, &grid, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, p);
    }

    fn fd_check(policy: &Mlp, reference: Option<&Mlp>, groups: &[GroupRollout], c: &GrpoConfig) -> f64 {
        let (_, grad, _) = surrogate_objective_and_grad(policy, reference, groups, c).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (k, &g) in grad.iter().enumerate() {
            let mut p = policy.clone();
            p.params_mut()[k] += h;
            let up = surrogate_objective_and_grad(&p, reference, groups, c).unwrap().0;
            p.params_mut()[k] -= 2.0 * h;
            let dn = surrogate_objective_and_grad(&p, reference, groups, c).unwrap().0;
            let fd = (up - dn) / (2.0 * h);
            worst = worst.max((fd - g).abs() / fd.abs().max(1e-4));
        }
        worst
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let old = net(4);
        // Move the current policy away from the sampling policy so that
        // ratios differ from one and some terms clip.
        let mut cur = old.clone();
        let mut rng = rng_from(99);
        for p in cur.params_mut() {
            *p += 0.05 * crate::rng::standard_normal(&mut rng);
        }
        let grid = uniform_grid(4).unwrap();
        let reward = RewardSpec::NegDistance(Point::from([1.0, -1.0]));
        for sampler in [SamplerKind::Cps(0.7), SamplerKind::FlowSde(SigmaRule::dance_grpo(0.7))] {
            let c = GrpoConfig { kl_beta: 0.01, ..cfg(sampler) };
            let field = VelocityField::Mlp(old.clone());
            let groups: Vec<_> = (0..2)
                .map(|g| sample_group(&field, sampler, 4, &reward, &grid, 100 + g).unwrap())
                .collect();
            let err = fd_check(&cur, Some(&old), &groups, &c);
            assert!(err < 1e-3, "{sampler}: {err}");
        }
    }

    #[test]
    fn experiment_with_no_iterations_returns_base() {
        let base = net(6);
        let grid = uniform_grid(4).unwrap();
        let reward = RewardSpec::NegDistance(Point::from([1.0, 1.0]));
        let run = run_experiment(&GrpoConfig { iters: 0, ..cfg(SamplerKind::Cps(0.5)) }, &reward, &base, &grid)
            .unwrap();
        assert_eq!(run.final_policy, base);
        assert_eq!(run.eval_curve().len(), 1);
        assert_eq!(run.to_csv().lines().count(), 2);
    }

    #[test]
    fn experiment_is_reproducible() {
        let base = net(7);
        let grid = uniform_grid(4).unwrap();
        let reward = RewardSpec::NegDistance(Point::from([1.0, 1.0]));
        let c = cfg(SamplerKind::Cps(0.5));
        let a = run_experiment(&c, &reward, &base, &grid).unwrap();
        let b = run_experiment(&c, &reward, &base, &grid).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.final_policy, b.final_policy);
    }
}
