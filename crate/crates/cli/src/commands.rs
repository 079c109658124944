//! The four experiment commands. Each parses and validates its whole
//! configuration before touching the output directory, then writes its
//! artifacts and a `manifest.json` holding the resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use flowcps::analysis::noise_curve;
use flowcps::grpo::{run_experiment, GrpoConfig, RewardSpec, RunArtifact};
use flowcps::rng::{derive_seed, rng_from, standard_normal_point};
use flowcps::velocity::io::{load_mlp, save_mlp, ModelMeta};
use flowcps::velocity::{
    eval_velocity, train_fm, Activation, DataDist, FmTrainConfig, Mlp, MlpArchitecture,
    VelocityField,
};
use flowcps::{fmt_f64, uniform_grid, Point, SamplerKind, TimeGrid};
use serde_json::{json, Value};

use crate::config::{Ini, Reader, ROOT};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Audit,
    Pretrain,
    Grpo,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Audit => "audit",
            Command::Pretrain => "pretrain",
            Command::Grpo => "grpo",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub force: bool,
    pub seed: Option<u64>,
}

/// Files written by a command, relative to its output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads a config file, or the `config` object of a previous run's
/// `manifest.json`.
fn load_config(inv: &Invocation) -> CliResult<(Ini, PathBuf)> {
    let text = fs::read_to_string(&inv.config)
        .map_err(|e| usage(format!("cannot read config {}: {e}", inv.config.display())))?;
    let base = inv
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    if inv.config.extension().is_some_and(|e| e == "json") {
        let manifest: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("{} is not valid JSON: {e}", inv.config.display())))?;
        let command = manifest.get("command").and_then(Value::as_str);
        if command != Some(inv.command.name()) {
            return Err(usage(format!(
                "manifest records command {:?}, not `{}`",
                command.unwrap_or("?"),
                inv.command.name()
            )));
        }
        let config = manifest
            .get("config")
            .ok_or_else(|| usage("manifest lacks `config`"))?;
        return Ok((Ini::from_json(config)?, base));
    }
    Ok((Ini::parse(&text)?, base))
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn prepare(dir: &Path, force: bool) -> CliResult<Output> {
        if dir.is_file() {
            return Err(CliError::Conflict(format!("{} is a file", dir.display())));
        }
        if dir.is_dir() && !force {
            let mut entries = fs::read_dir(dir).map_err(CliError::io(dir.display().to_string()))?;
            if entries.next().is_some() {
                return Err(CliError::Conflict(format!(
                    "{} exists and is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
        }
        fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(CliError::io(format!("writing {}", path.display())))
    }

    fn write_json(&mut self, name: &str, value: &Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values serialise");
        text.push('\n');
        self.write(name, text)
    }

    fn finish(mut self, command: Command, seed: u64, resolved: &Ini) -> CliResult<Report> {
        let mut outputs = self.files.clone();
        outputs.push("manifest.json".into());
        let manifest = json!({
            "tool": "flowcps",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command.name(),
            "seed": seed,
            "config": resolved.to_json(),
            "outputs": outputs,
        });
        self.write_json("manifest.json", &manifest)?;
        Ok(Report {
            output_dir: self.dir,
            files: self.files,
        })
    }
}

pub fn run(inv: &Invocation) -> CliResult<Report> {
    let (ini, base) = load_config(inv)?;
    let r = Reader::new(&ini, &base);
    let seed = match inv.seed {
        Some(s) => r.overridden(ROOT, "seed", s),
        None => r.required(ROOT, "seed")?,
    };
    let output_dir = r.path(ROOT, "output_dir")?;
    match inv.command {
        Command::Audit => {
            let plan = AuditPlan::read(&r)?;
            let resolved = r.finish()?;
            let mut out = Output::prepare(&output_dir, inv.force)?;
            plan.execute(&mut out)?;
            out.finish(inv.command, seed, &resolved)
        }
        Command::Pretrain => {
            let plan = PretrainPlan::read(&r, seed)?;
            let resolved = r.finish()?;
            let mut out = Output::prepare(&output_dir, inv.force)?;
            plan.execute(&mut out)?;
            out.finish(inv.command, seed, &resolved)
        }
        Command::Grpo | Command::Compare => {
            let plan = GrpoPlan::read(&r, seed, inv.command == Command::Compare)?;
            let resolved = r.finish()?;
            let mut out = Output::prepare(&output_dir, inv.force)?;
            let result = plan.execute(&mut out, inv.command);
            // Partial results and the manifest are kept even when a later
            // variant fails.
            let report = out.finish(inv.command, seed, &resolved)?;
            result.map(|_| report)
        }
    }
}

fn grids(ks: &[usize]) -> CliResult<Vec<TimeGrid>> {
    ks.iter()
        .map(|&k| uniform_grid(k).map_err(|e| usage(format!("[schedule] steps: {e}"))))
        .collect()
}

fn validate_samplers(kinds: &[SamplerKind], key: &str) -> CliResult<()> {
    for k in kinds {
        k.validate().map_err(|e| usage(format!("{key}: {e}")))?;
    }
    Ok(())
}

struct AuditPlan {
    grids: Vec<TimeGrid>,
    samplers: Vec<SamplerKind>,
}

impl AuditPlan {
    fn read(r: &Reader) -> CliResult<Self> {
        let ks: Vec<usize> = r.list("schedule", "steps")?;
        let samplers: Vec<SamplerKind> = r.list("audit", "samplers")?;
        validate_samplers(&samplers, "[audit] samplers")?;
        Ok(AuditPlan {
            grids: grids(&ks)?,
            samplers,
        })
    }

    fn execute(&self, out: &mut Output) -> CliResult<()> {
        let mut curves = Vec::new();
        for &kind in &self.samplers {
            for grid in &self.grids {
                let curve = noise_curve(kind, grid)?;
                let file = curve.file_name();
                out.write(&file, curve.to_csv())?;
                let s = curve.summary();
                curves.push(json!({
                    "sampler": kind.to_string(),
                    "k": grid.k(),
                    "file": file,
                    "max_error": s.max_error,
                    "argmax_t": s.argmax_t,
                    "negative_pred_count": s.negative_pred_count,
                    "gap_count": s.gap_count,
                }));
            }
        }
        out.write_json("summary.json", &json!({ "curves": curves }))
    }
}

struct PretrainPlan {
    data: DataDist,
    arch: MlpArchitecture,
    train: FmTrainConfig,
}

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

impl PretrainPlan {
    fn read(r: &Reader, seed: u64) -> CliResult<Self> {
        let data: DataDist = r.required("velocity", "data")?;
        data.validate().map_err(|e| usage(format!("[velocity] data: {e}")))?;
        let hidden: Vec<usize> = r.list_or("velocity", "hidden", DEFAULT_HIDDEN.to_vec())?;
        let activation: Activation = r.or("velocity", "activation", Activation::Tanh)?;
        let arch = MlpArchitecture::new(data.dim(), hidden, activation)
            .map_err(|e| usage(format!("[velocity] hidden: {e}")))?;
        let d = FmTrainConfig::default();
        let train = FmTrainConfig {
            steps: r.or("train", "steps", d.steps)?,
            lr: r.or("train", "lr", d.lr)?,
            batch_size: r.or("train", "batch_size", d.batch_size)?,
            momentum: r.or("train", "momentum", d.momentum)?,
            seed,
        };
        if train.steps == 0 || !(train.lr > 0.0) || train.batch_size == 0 {
            return Err(usage("[train] needs steps >= 1, lr > 0 and batch_size >= 1"));
        }
        if !(0.0..1.0).contains(&train.momentum) {
            return Err(usage("[train] momentum must lie in [0, 1)"));
        }
        Ok(PretrainPlan { data, arch, train })
    }

    fn execute(&self, out: &mut Output) -> CliResult<()> {
        let trained = train_fm(&self.arch, &self.data, &self.train)?;
        let model = out.path("model.bin");
        save_mlp(&model, &trained.mlp)?;
        let meta = ModelMeta {
            seed: self.train.seed,
            steps: self.train.steps,
            final_loss: trained.final_loss,
            data: self.data.to_string(),
        };
        let sidecar = ModelMeta::sidecar_path(Path::new("model.bin"));
        out.write(&sidecar.display().to_string(), meta.to_text())?;
        let mut report = json!({
            "model": "model.bin",
            "params": trained.mlp.params().len(),
            "initial_loss": trained.initial_loss,
            "final_loss": trained.final_loss,
        });
        if let DataDist::Delta(c) = &self.data {
            report["probe_rms_error"] = json!(delta_probe_rms(&trained.mlp, c, self.train.seed)?);
        }
        out.write_json("pretrain.json", &report)
    }
}

/// RMS distance between the network and the point-mass field over 200
/// probes on the interpolant with `t` in `[0.2, 0.9]`.
pub fn delta_probe_rms(mlp: &Mlp, c: &Point, seed: u64) -> flowcps::Result<f64> {
    let net = VelocityField::Mlp(mlp.clone());
    let oracle = VelocityField::DeltaOracle(c.clone());
    let mut rng = rng_from(derive_seed(seed, 0x5052_4f42));
    let n = 200;
    let mut sq = 0.0;
    for i in 0..n {
        let t = 0.2 + 0.7 * i as f64 / (n - 1) as f64;
        let z = standard_normal_point(&mut rng, c.dim());
        let x = Point::lincomb(1.0 - t, c, t, &z);
        let e = eval_velocity(&net, &x, t)?.dist(&eval_velocity(&oracle, &x, t)?);
        sq += e * e;
    }
    Ok((sq / n as f64).sqrt())
}

struct GrpoPlan {
    base: Mlp,
    grid: TimeGrid,
    reward: RewardSpec,
    configs: Vec<GrpoConfig>,
}

impl GrpoPlan {
    fn read(r: &Reader, seed: u64, compare: bool) -> CliResult<Self> {
        let model_path = r.path("velocity", "model")?;
        if !model_path.is_file() {
            return Err(usage(format!("base model {} does not exist", model_path.display())));
        }
        let k: usize = r.or("schedule", "steps", 8)?;
        let grid = grids(&[k])?.remove(0);
        let reward: RewardSpec = r.required("grpo", "reward")?;
        let samplers: Vec<SamplerKind> = if compare {
            r.list("grpo", "variants")?
        } else {
            vec![r.required("grpo", "sampler")?]
        };
        let d = GrpoConfig::default();
        let template = GrpoConfig {
            group_size: r.or("grpo", "group_size", d.group_size)?,
            clip_eps: r.or("grpo", "clip_eps", d.clip_eps)?,
            kl_beta: r.or("grpo", "kl_beta", d.kl_beta)?,
            lr: r.or("grpo", "lr", d.lr)?,
            groups_per_iter: r.or("grpo", "groups_per_iter", d.groups_per_iter)?,
            iters: r.or("grpo", "iters", d.iters)?,
            eval_samples: r.or("grpo", "eval_samples", d.eval_samples)?,
            seed,
            sampler: d.sampler,
        };
        let mut labels = Vec::new();
        let configs = samplers
            .into_iter()
            .map(|sampler| {
                let cfg = GrpoConfig { sampler, ..template.clone() };
                cfg.validate().map_err(|e| usage(format!("[grpo] {e}")))?;
                if labels.contains(&sampler.label()) {
                    return Err(usage(format!("[grpo] variant {sampler} is listed twice")));
                }
                labels.push(sampler.label());
                Ok(cfg)
            })
            .collect::<CliResult<Vec<_>>>()?;

        let base = load_mlp(&model_path).map_err(|e| usage(format!("[velocity] model: {e}")))?;
        reward
            .validate(base.arch().dim())
            .map_err(|e| usage(format!("[grpo] reward: {e}")))?;
        Ok(GrpoPlan {
            base,
            grid,
            reward,
            configs,
        })
    }

    fn execute(&self, out: &mut Output, command: Command) -> CliResult<()> {
        if command == Command::Grpo {
            let run = run_experiment(&self.configs[0], &self.reward, &self.base, &self.grid)?;
            out.write("rewards.csv", run.to_csv())?;
            save_mlp(&out.path("final_model.bin"), &run.final_policy)?;
            return out.write_json("run.json", &run_summary(&run, None));
        }

        let mut runs: Vec<RunArtifact> = Vec::new();
        let mut failure = None;
        for cfg in &self.configs {
            let label = cfg.sampler.label();
            match run_experiment(cfg, &self.reward, &self.base, &self.grid) {
                Ok(run) => {
                    out.write(&format!("rewards_{label}.csv"), run.to_csv())?;
                    runs.push(run);
                }
                Err(e) => {
                    failure = Some((cfg.sampler, e));
                    break;
                }
            }
        }
        if !runs.is_empty() {
            out.write("curves.csv", aligned_curves(&runs))?;
        }
        let variants: Vec<Value> = runs
            .iter()
            .map(|r| run_summary(r, Some(format!("rewards_{}.csv", r.config.sampler.label()))))
            .collect();
        let mut verdict = json!({
            "degenerate": self.configs.len() < 2,
            "variants": variants,
        });
        if let Some(first) = runs.first() {
            let same = runs
                .iter()
                .all(|r| r.initial_eval_reward().to_bits() == first.initial_eval_reward().to_bits());
            verdict["initial_eval_equal"] = json!(same);
            let best = runs
                .iter()
                .max_by(|a, b| a.eval_auc().total_cmp(&b.eval_auc()))
                .map(|r| r.config.sampler.to_string());
            if self.configs.len() >= 2 && failure.is_none() {
                verdict["best_auc"] = json!(best);
            }
        }
        if let Some((sampler, e)) = &failure {
            verdict["aborted"] = json!(format!("{sampler}: {e}"));
        }
        out.write_json("verdict.json", &verdict)?;
        match failure {
            Some((_, e)) => Err(e.into()),
            None => Ok(()),
        }
    }
}

fn run_summary(run: &RunArtifact, file: Option<String>) -> Value {
    let mut v = json!({
        "sampler": run.config.sampler.to_string(),
        "iters": run.records.len(),
        "initial_eval_reward": run.initial_eval_reward(),
        "final_eval_reward": run.final_eval_reward,
        "eval_auc": run.eval_auc(),
    });
    if let Some(f) = file {
        v["file"] = json!(f);
    }
    v
}

/// `iter,eval_<label>...` with one row per evaluation point.
fn aligned_curves(runs: &[RunArtifact]) -> String {
    let curves: Vec<Vec<f64>> = runs.iter().map(RunArtifact::eval_curve).collect();
    let mut out = String::from("iter");
    for r in runs {
        out.push_str(&format!(",eval_{}", r.config.sampler.label()));
    }
    out.push('\n');
    let rows = curves.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..rows {
        out.push_str(&i.to_string());
        for c in &curves {
            out.push(',');
            if let Some(v) = c.get(i) {
                out.push_str(&fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}
