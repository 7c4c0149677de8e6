//! Command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hapfuse_core::analysis::eval::{ablation_suite, generalization_suite, mi_suite, run_eval, EvalReport};
use hapfuse_core::analysis::metrics::{cabinet_score, CABINET_WEIGHTS};
use hapfuse_core::io::{checkpoint, dataset};
use hapfuse_core::policy::train::{pretrain_encoders, TrainSet, Trainer};
use hapfuse_core::world::{generate_episodes, shift_container};
use hapfuse_core::{Error, FusionMode, Policy, RunConfig};

use crate::meta::RunMeta;
use crate::{AblateArgs, Command, EvalArgs, EvalOverrides, GenDataArgs, MetricArgs, MultiEvalArgs, TrainArgs};

/// Bad invocation or configuration; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(
                c.downcast_ref::<Error>(),
                Some(Error::Config { .. } | Error::UnknownMode(_) | Error::UnknownVariant(_) | Error::InvalidArgument(_))
            )
    });
    if usage {
        1
    } else {
        2
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Generalize(a) => generalize(a),
        Command::Mi(a) => mi(a),
        Command::Plot(a) => crate::plot::plot(&a.input, &a.out),
        Command::Metric(a) => metric(a),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => anyhow::Error::new(UsageError(format!("cannot read config: {e}"))),
        other => anyhow::Error::new(other),
    })
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_checkpoint(path: &Path) -> Result<Trainer> {
    if !path.exists() {
        bail!(UsageError(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(checkpoint::read(path)?)
}

fn read_data(dir: &Path) -> Result<Vec<hapfuse_core::Episode>> {
    if !dir.join(dataset::MANIFEST).exists() {
        bail!(UsageError(format!("{} is not a dataset directory", dir.display())));
    }
    Ok(dataset::read_dataset(dir)?)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = load_config(&a.common.config)?;
    if a.n == 0 {
        bail!(UsageError("--n must be at least 1".into()));
    }
    let seed = a.common.seed.unwrap_or(0);
    let episodes = generate_episodes(&cfg.world, a.n, seed)?;
    prepare_out(&a.common.out)?;
    let manifest = dataset::write_dataset(&a.common.out, &episodes)?;
    write_text(&a.common.out.join("config.toml"), &cfg.to_toml_string())?;
    RunMeta::start("gen-data", &cfg.hash()).seed("data", seed).write(&a.common.out)?;
    println!("wrote {} episodes ({} steps) to {}", manifest.n_episodes, manifest.total_steps, a.common.out.display());
    Ok(())
}

/// The config with command-line overrides applied.
fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&a.common.config)?;
    if let Some(m) = a.mode {
        cfg.model.fusion = m.as_str().to_string();
    }
    if let Some(s) = a.common.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A fresh policy for `cfg`, optionally initialized from a checkpoint.
fn initial_policy(cfg: &RunConfig, data: &TrainSet, init: Option<&PathBuf>) -> Result<Policy> {
    let mut policy = Policy::new(cfg, data.fit_norm()?)?;
    if let Some(p) = init {
        let src = read_checkpoint(p)?;
        if src.policy.cfg.world.task != cfg.world.task {
            return Err(Error::TaskMismatch {
                expected: cfg.world.task.to_string(),
                got: src.policy.cfg.world.task.to_string(),
            }
            .into());
        }
        policy.store.load_matching(&src.policy.store);
    }
    Ok(policy)
}

fn pretrain(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let data = TrainSet::new(&read_data(&a.data)?, &cfg)?;
    let mut policy = initial_policy(&cfg, &data, a.init.as_ref())?;
    let losses = pretrain_encoders(&mut policy, &data)?;
    prepare_out(&a.common.out)?;
    let mut log = String::from("step\tloss\n");
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{}\t{l:.8e}\n", i + 1));
    }
    write_text(&a.common.out.join("pretrain.tsv"), &log)?;
    checkpoint::write(&a.common.out.join("pretrained.ckpt"), &Trainer::new(policy))?;
    RunMeta::start("pretrain", &cfg.hash()).seed("train", cfg.train.seed).write(&a.common.out)?;
    if let Some(l) = losses.last() {
        println!("pretraining finished, final loss {l:.6}");
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let data = TrainSet::new(&read_data(&a.data)?, &cfg)?;
    let mut policy = initial_policy(&cfg, &data, a.init.as_ref())?;
    if cfg.train.pretrain && a.init.is_none() {
        pretrain_encoders(&mut policy, &data)?;
    }
    let out = &a.common.out;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    write_text(&out.join("config.toml"), &cfg.to_toml_string())?;
    let mut log = String::from("step\tloss\tlr\n");
    let every = cfg.train.checkpoint_every;
    let mut trainer = Trainer::new(policy);
    trainer.run(&data, |t, loss, lr| {
        log.push_str(&format!("{}\t{loss:.8e}\t{lr:.8e}\n", t.step));
        if every > 0 && t.step % every == 0 {
            checkpoint::write(&ckpt_dir.join(format!("step_{:06}.ckpt", t.step)), t)?;
        }
        Ok(())
    })?;
    write_text(&out.join("metrics.tsv"), &log)?;
    checkpoint::write(&out.join("policy.ckpt"), &trainer)?;
    RunMeta::start("train", &cfg.hash()).seed("train", cfg.train.seed).write(out)?;
    println!("trained {} for {} steps; checkpoint {}", trainer.policy.mode.as_str(), trainer.step, out.join("policy.ckpt").display());
    Ok(())
}

fn apply_overrides(policy: &mut Policy, o: &EvalOverrides) {
    let e = &mut policy.cfg.eval;
    if let Some(s) = o.seed {
        e.seed = s;
        e.seeds.clear();
    }
    if let Some(n) = o.trials {
        e.trials = n;
        e.seeds.clear();
    }
    if let Some(s) = o.exec_slice {
        policy.cfg.model.exec_slice = s.into();
    }
}

fn summary(r: &EvalReport) -> String {
    format!("{:<20} {:.4} ± {:.4} over {} trials", r.method, r.mean, r.std, r.n_trials)
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut policy = read_checkpoint(&a.checkpoint)?.policy;
    apply_overrides(&mut policy, &a.overrides);
    let world = match a.variant {
        Some(v) => shift_container(&policy.cfg.world, v)?,
        None => policy.cfg.world.clone(),
    };
    let seeds = policy.cfg.eval.seed_list();
    let report = run_eval(&policy, &world, &seeds)?;
    prepare_out(&a.out)?;
    write_json(&a.out.join("eval.json"), &report)?;
    RunMeta::start("eval", &policy.cfg.hash()).seed("eval", policy.cfg.eval.seed).write(&a.out)?;
    println!("{}", summary(&report));
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = load_config(&a.common.config)?;
    if let Some(s) = a.common.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.trials {
        cfg.eval.trials = n;
        cfg.eval.seeds.clear();
    }
    cfg.validate()?;
    let modes: Vec<FusionMode> = if a.modes.is_empty() {
        FusionMode::ALL.to_vec()
    } else {
        a.modes.iter().map(|m| FusionMode::parse(m.as_str())).collect::<hapfuse_core::Result<_>>()?
    };
    let episodes = read_data(&a.data)?;
    let rows = ablation_suite(&episodes, &cfg, &modes)?;
    prepare_out(&a.common.out)?;
    let mut reports = Vec::new();
    for row in &rows {
        checkpoint::write(&a.common.out.join(format!("{}.ckpt", row.report.method)), &row.trainer)?;
        println!("{}", summary(&row.report));
        reports.push(row.report.clone());
    }
    write_json(&a.common.out.join("ablation.json"), &reports)?;
    RunMeta::start("ablate", &cfg.hash())
        .seed("train", cfg.train.seed)
        .seed("eval", cfg.eval.seed)
        .write(&a.common.out)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct MethodGeneralization {
    method: String,
    rows: Vec<hapfuse_core::analysis::eval::GeneralizationRow>,
}

fn generalize(a: MultiEvalArgs) -> Result<()> {
    let mut tables = Vec::new();
    let mut hash = String::new();
    for path in &a.checkpoint {
        let mut policy = read_checkpoint(path)?.policy;
        apply_overrides(&mut policy, &a.overrides);
        let rows = generalization_suite(&policy, &policy.cfg.world, &policy.cfg.eval.variants, &policy.cfg.eval.seed_list())?;
        for r in &rows {
            println!("variant {} {} (degradation {:+.4})", r.variant, summary(&r.report), r.degradation);
        }
        hash = policy.cfg.hash();
        tables.push(MethodGeneralization {
            method: policy.mode.as_str().to_string(),
            rows,
        });
    }
    prepare_out(&a.out)?;
    write_json(&a.out.join("generalization.json"), &tables)?;
    RunMeta::start("generalize", &hash).write(&a.out)?;
    Ok(())
}

fn mi(a: MultiEvalArgs) -> Result<()> {
    let mut policies = Vec::new();
    for path in &a.checkpoint {
        let mut p = read_checkpoint(path)?.policy;
        apply_overrides(&mut p, &a.overrides);
        policies.push(p);
    }
    let first = &policies[0].cfg;
    let world = first.world.clone();
    if let Some(p) = policies.iter().find(|p| p.cfg.world.task != world.task) {
        return Err(Error::TaskMismatch {
            expected: world.task.to_string(),
            got: p.cfg.world.task.to_string(),
        }
        .into());
    }
    let seeds: Vec<u64> = (0..first.mi.rollouts as u64).map(|i| first.eval.seed + i).collect();
    let (k, d) = (first.mi.k, first.mi.d_reduce);
    let named: Vec<(&str, &Policy)> = policies.iter().map(|p| (p.mode.as_str(), p)).collect();
    let rows = mi_suite(&named, &world, &seeds, k, d)?;
    for r in &rows {
        match &r.result {
            Ok(m) => println!("{:<20} {:.4} nats ({} samples)", r.method, m.mi, m.n_samples),
            Err(e) => println!("{:<20} unavailable: {e}", r.method),
        }
    }
    prepare_out(&a.out)?;
    write_json(&a.out.join("mi.json"), &rows)?;
    RunMeta::start("mi", &first.hash()).seed("eval", first.eval.seed).write(&a.out)?;
    Ok(())
}

fn metric(a: MetricArgs) -> Result<()> {
    let (alpha, beta, gamma) = match a.weights.as_deref() {
        Some([x, y, z]) => (*x, *y, *z),
        Some(_) => bail!(UsageError("--weights takes exactly three values".into())),
        None => CABINET_WEIGHTS,
    };
    let s = cabinet_score(a.d_slide, a.d_disp, a.theta_rot, alpha, beta, gamma)?;
    println!("{s:.4}");
    Ok(())
}
