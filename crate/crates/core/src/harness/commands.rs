//! The five harness commands. Each writes its tables and a manifest into an
//! output directory and returns the same data to the caller.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::gradcheck::{gradcheck_suite, GradcheckReport};
use super::manifest::RunManifest;
use super::runner::{run_episode, Controller, EvalContext, FaultPlan};
use super::{ExperimentConfig, HarnessError, Strategy};
use crate::autodiff::Checkpoint;
use crate::baselines::CrParams;
use crate::gridmap::GridMap;
use crate::mappo::{RoundLog, Trainer};
use crate::metrics::{
    battery_stats, daily_series, fault_tolerance_schedule, mean_std, summarize_patrol, DailyRow,
    EpisodeTrace, FaultSchedule,
};
use crate::policy::PolicySet;
use crate::seed::{derive_rng, derive_seed};

fn write_file(dir: &Path, rel: &str, text: &str) -> Result<(), HarnessError> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

fn load_map(cfg: &ExperimentConfig) -> Result<Arc<GridMap>, HarnessError> {
    Ok(Arc::new(GridMap::load(&cfg.experiment.map)?))
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub log: Vec<RoundLog>,
    /// Checkpoint files relative to the output directory.
    pub checkpoints: Vec<String>,
}

fn checkpoint_files(policy: &PolicySet, stem: &str, individual: bool) -> Vec<(String, String)> {
    if !individual {
        return vec![(
            format!("checkpoints/{stem}.ckpt"),
            policy.to_checkpoint().to_text(),
        )];
    }
    let k = policy.actors.len();
    (0..k)
        .map(|i| {
            let single = PolicySet {
                arch: policy.arch.clone(),
                actors: vec![policy.actors[i].clone()],
                critic: policy.critic.clone(),
            };
            let mut ckpt = single.to_checkpoint();
            ckpt.meta.insert("group_index".into(), i.to_string());
            ckpt.meta.insert("group_size".into(), k.to_string());
            (format!("checkpoints/{stem}.agent{i}.ckpt"), ckpt.to_text())
        })
        .collect()
}

/// Loads a policy checkpoint. A file from an individual-learner run pulls in
/// its sibling files so every agent gets its own actor back.
pub fn load_policy(path: &Path) -> Result<PolicySet, HarnessError> {
    let ckpt = Checkpoint::load(path)?;
    let Some(size) = ckpt.meta.get("group_size") else {
        return Ok(PolicySet::from_checkpoint(&ckpt)?);
    };
    let size: usize = size
        .parse()
        .map_err(|_| HarnessError::Config(format!("{}: bad group_size", path.display())))?;
    let index = ckpt.meta.get("group_index").cloned().unwrap_or_default();
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let marker = format!(".agent{index}.");
    if !name.contains(&marker) {
        return Err(HarnessError::Config(format!(
            "{}: expected '{marker}' in the file name",
            path.display()
        )));
    }
    let mut set: Option<PolicySet> = None;
    for j in 0..size {
        let sibling = path.with_file_name(name.replace(&marker, &format!(".agent{j}.")));
        let part = PolicySet::from_checkpoint(&Checkpoint::load(&sibling)?)?;
        match &mut set {
            None => set = Some(part),
            Some(s) => s.actors.extend(part.actors),
        }
    }
    Ok(set.expect("group_size is at least one"))
}

const TRAIN_HEADER: &str = "round,episode_agents,mean_cumulative_reward,mean_recharge_battery,recharges,failures,steps,actor_loss,critic_loss,entropy,lr,entropy_coef\n";

fn train_row(r: &RoundLog) -> String {
    let agents: Vec<String> = r.agent_counts.iter().map(|n| n.to_string()).collect();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.round,
        agents.join(";"),
        r.mean_cumulative_reward,
        r.mean_recharge_battery,
        r.recharge_events.len(),
        r.failures,
        r.steps,
        r.actor_loss,
        r.critic_loss,
        r.entropy,
        r.lr,
        r.entropy_coef
    )
}

/// Trains a MARL or individual-learner policy, writing `train_log.csv`,
/// periodic checkpoints and a manifest to `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary, HarnessError> {
    let individual = match cfg.experiment.strategy {
        Strategy::Cr => {
            return Err(HarnessError::Config(
                "the cr strategy has nothing to train".into(),
            ))
        }
        Strategy::Individual => true,
        Strategy::Marl => false,
    };
    let map = load_map(cfg)?;
    let tc = cfg.train_config()?;
    let rounds = tc.rounds;
    let every = cfg.train.checkpoint_every;
    let mut trainer = Trainer::new(
        map,
        cfg.train_env(),
        cfg.reward.clone(),
        tc,
        cfg.experiment.seed,
    )?;
    let mut checkpoints = Vec::new();
    let save =
        |policy: &PolicySet, stem: &str, list: &mut Vec<String>| -> Result<(), HarnessError> {
            for (rel, text) in checkpoint_files(policy, stem, individual) {
                write_file(out, &rel, &text)?;
                list.push(rel);
            }
            Ok(())
        };
    save(&trainer.policy, "round00000", &mut checkpoints)?;
    let mut csv = String::from(TRAIN_HEADER);
    let mut log = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let row = trainer.run_round()?;
        let done = row.round + 1;
        csv += &train_row(&row);
        log.push(row);
        if (every > 0 && done % every == 0) || done == rounds {
            save(
                &trainer.policy,
                &format!("round{done:05}"),
                &mut checkpoints,
            )?;
        }
    }
    save(&trainer.policy, "final", &mut checkpoints)?;
    write_file(out, "train_log.csv", &csv)?;
    let mut manifest = RunManifest::new("train", cfg.experiment.seed, Some(cfg.to_toml()));
    manifest.add_output(out, "train_log.csv")?;
    for rel in &checkpoints {
        manifest.add_output(out, rel)?;
    }
    manifest.write(out)?;
    Ok(TrainSummary { log, checkpoints })
}

enum Owned {
    Policy(PolicySet),
    Cr(CrParams),
}

impl Owned {
    fn controller(&self) -> Controller<'_> {
        match self {
            Owned::Policy(p) => Controller::Policy(p),
            Owned::Cr(c) => Controller::Cr(*c),
        }
    }
}

fn strategy_controller(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<Owned, HarnessError> {
    match cfg.experiment.strategy {
        Strategy::Cr => Ok(Owned::Cr(cfg.cr_params())),
        _ => {
            let path = checkpoint.ok_or_else(|| {
                HarnessError::Config("a checkpoint is required for learned strategies".into())
            })?;
            Ok(Owned::Policy(load_policy(path)?))
        }
    }
}

fn eval_ctx(cfg: &ExperimentConfig, capacity: usize) -> Result<EvalContext, HarnessError> {
    Ok(EvalContext {
        map: load_map(cfg)?,
        env: cfg.eval_env(capacity),
        c_norm: cfg.reward.c_norm,
    })
}

fn finish(
    cfg: &ExperimentConfig,
    out: &Path,
    command: &str,
    files: &[(&str, String)],
) -> Result<(), HarnessError> {
    let mut manifest = RunManifest::new(command, cfg.experiment.seed, Some(cfg.to_toml()));
    for (rel, text) in files {
        write_file(out, rel, text)?;
        manifest.add_output(out, rel)?;
    }
    manifest.write(out)
}

/// One line of the battery table. `None` marks an empty statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryRow {
    pub n: usize,
    pub b_c: Option<f64>,
    pub d_bc: Option<f64>,
    pub f: Option<f64>,
    pub d_f: Option<f64>,
}

/// Battery level at recharge and failure rate per agent count, written to
/// `battery.csv` with `NaN` for statistics that have no events.
pub fn cmd_eval_battery(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<Vec<BatteryRow>, HarnessError> {
    let owned = strategy_controller(cfg, checkpoint)?;
    let e = &cfg.eval;
    let ctx = eval_ctx(cfg, e.agent_counts.iter().copied().max().unwrap_or(1))?;
    let mut rows = Vec::new();
    for &n in &e.agent_counts {
        let jobs: Vec<(usize, usize)> = (0..e.tests)
            .flat_map(|t| (0..e.episodes).map(move |k| (t, k)))
            .collect();
        let traces: Vec<EpisodeTrace> = jobs
            .par_iter()
            .map(|&(t, k)| {
                let seed = derive_seed(cfg.experiment.seed, &[10, n as u64, t as u64, k as u64]);
                run_episode(&ctx, owned.controller(), n, e.horizon, seed, None)
            })
            .collect::<Result<_, _>>()?;
        let tests: Vec<Vec<EpisodeTrace>> = traces.chunks(e.episodes).map(|c| c.to_vec()).collect();
        let s = battery_stats(&tests);
        rows.push(BatteryRow {
            n,
            b_c: s.mean_battery,
            d_bc: s.std_battery,
            f: s.failure_rate,
            d_f: s.failure_rate_std,
        });
    }
    let mut csv = String::from("n,b_c,d_bc,F,d_F\n");
    for r in &rows {
        csv += &format!(
            "{},{},{},{},{}\n",
            r.n,
            opt(r.b_c),
            opt(r.d_bc),
            opt(r.f),
            opt(r.d_f)
        );
    }
    finish(cfg, out, "eval-battery", &[("battery.csv", csv)])?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatrolRow {
    pub strategy: String,
    pub n: usize,
    pub avg: f64,
    pub avg_std: f64,
    pub max_bar: f64,
    pub max_bar_std: f64,
    pub max: f64,
    pub episodes: usize,
    /// Episodes discarded for battery failures.
    pub reruns: usize,
    /// Mean battery at intentional landings over the kept episodes.
    pub mean_recharge_battery: Option<f64>,
}

fn patrol_rows(
    cfg: &ExperimentConfig,
    ctx: &EvalContext,
    controller: Controller<'_>,
    label: &str,
    stream: u64,
) -> Result<Vec<PatrolRow>, HarnessError> {
    let e = &cfg.eval;
    let mut rows = Vec::new();
    for &n in &e.agent_counts {
        let seed_of = |k: usize| derive_seed(cfg.experiment.seed, &[stream, n as u64, k as u64]);
        let mut kept: Vec<EpisodeTrace> = Vec::new();
        let mut next = 0usize;
        let mut reruns = 0usize;
        while kept.len() < e.episodes {
            let want = e.episodes - kept.len();
            let batch: Vec<EpisodeTrace> = (next..next + want)
                .into_par_iter()
                .map(|k| run_episode(ctx, controller, n, e.horizon, seed_of(k), None))
                .collect::<Result<_, _>>()?;
            if next > 0 {
                reruns += want;
            }
            next += want;
            kept.extend(batch.into_iter().filter(|t| t.failures.is_empty()));
            if kept.len() < e.episodes && next - e.episodes >= e.max_retries {
                return Err(HarnessError::QuotaUnreachable {
                    n,
                    clean: kept.len(),
                    needed: e.episodes,
                    attempts: next,
                });
            }
        }
        let sums = kept
            .iter()
            .map(|t| summarize_patrol(t, e.warmup))
            .collect::<Result<Vec<_>, _>>()?;
        let (avg, avg_std) =
            mean_std(&sums.iter().map(|s| s.avg).collect::<Vec<_>>()).expect("episodes > 0");
        let (max_bar, max_bar_std) =
            mean_std(&sums.iter().map(|s| s.max_bar).collect::<Vec<_>>()).expect("episodes > 0");
        let batteries: Vec<f64> = kept
            .iter()
            .flat_map(|t| t.recharges.iter().map(|r| r.battery))
            .collect();
        rows.push(PatrolRow {
            strategy: label.to_string(),
            n,
            avg,
            avg_std,
            max_bar,
            max_bar_std,
            max: sums.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max),
            episodes: kept.len(),
            reruns,
            mean_recharge_battery: mean_std(&batteries).map(|x| x.0),
        });
    }
    Ok(rows)
}

/// Idleness summaries per agent count over failure-free episodes. Learned
/// strategies are followed by the reactive baseline, with its margin
/// calibrated to the learned policy's mean landing battery unless the config
/// pins a target.
pub fn cmd_eval_patrol(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<Vec<PatrolRow>, HarnessError> {
    let owned = strategy_controller(cfg, checkpoint)?;
    let ctx = eval_ctx(
        cfg,
        cfg.eval.agent_counts.iter().copied().max().unwrap_or(1),
    )?;
    let label = match cfg.experiment.strategy {
        Strategy::Marl => "marl",
        Strategy::Individual => "individual",
        Strategy::Cr => "cr",
    };
    let mut rows = patrol_rows(cfg, &ctx, owned.controller(), label, 20)?;
    if cfg.experiment.strategy != Strategy::Cr {
        let params = match cfg.eval.cr_target_battery {
            Some(_) => cfg.cr_params(),
            None => {
                let b: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| r.mean_recharge_battery)
                    .collect();
                match mean_std(&b) {
                    Some((target, _)) => CrParams::calibrated(cfg.env.b_l, cfg.env.b_max, target),
                    None => cfg.cr_params(),
                }
            }
        };
        rows.extend(patrol_rows(cfg, &ctx, Controller::Cr(params), "cr", 21)?);
    }
    let mut csv = String::from(
        "strategy,n,avg,avg_std,max_bar,max_bar_std,max,episodes,reruns,mean_recharge_battery\n",
    );
    for r in &rows {
        csv += &format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.strategy,
            r.n,
            r.avg,
            r.avg_std,
            r.max_bar,
            r.max_bar_std,
            r.max,
            r.episodes,
            r.reruns,
            opt(r.mean_recharge_battery)
        );
    }
    finish(cfg, out, "eval-patrol", &[("patrol.csv", csv)])?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultReport {
    pub schedule: FaultSchedule,
    pub rows: Vec<DailyRow>,
    pub battery_failures: usize,
}

fn fault_schedule(cfg: &ExperimentConfig) -> Result<FaultSchedule, HarnessError> {
    let f = &cfg.fault;
    if f.initial.is_none() && f.events.is_empty() {
        let mut rng = derive_rng(cfg.experiment.seed, &[30]);
        return Ok(fault_tolerance_schedule(
            f.days,
            f.interval_days,
            f.max_total,
            &mut rng,
        ));
    }
    let initial = f
        .initial
        .ok_or_else(|| HarnessError::Config("fault.events requires fault.initial".into()))?;
    let mut events = f.scripted_events();
    events.sort_by_key(|e| e.day);
    let mut n = initial;
    if n == 0 || n > f.max_total {
        return Err(HarnessError::Config("fault.initial out of range".into()));
    }
    for e in &events {
        if e.day == 0 || e.day >= f.days || e.fail >= n || n - e.fail + e.add > f.max_total {
            return Err(HarnessError::Config(format!(
                "fault event on day {} is out of range",
                e.day
            )));
        }
        n = n - e.fail + e.add;
    }
    Ok(FaultSchedule { initial, events })
}

/// One long episode under a fault schedule, bucketed into days and written
/// to `fault.csv`. The agent-count column is checked against the schedule.
pub fn cmd_eval_fault(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<FaultReport, HarnessError> {
    let owned = strategy_controller(cfg, checkpoint)?;
    let f = &cfg.fault;
    let ctx = eval_ctx(cfg, f.max_total)?;
    let schedule = fault_schedule(cfg)?;
    let plan = FaultPlan {
        schedule: schedule.clone(),
        steps_per_day: f.steps_per_day,
    };
    let seed = derive_seed(cfg.experiment.seed, &[31]);
    let trace = run_episode(
        &ctx,
        owned.controller(),
        schedule.initial,
        f.days * f.steps_per_day,
        seed,
        Some(&plan),
    )?;
    let rows = daily_series(&trace, f.steps_per_day, cfg.eval.warmup);
    for r in &rows {
        let start = r.day * f.steps_per_day;
        let lost = trace.failures.iter().filter(|(s, _)| *s < start).count();
        let expect = schedule.count_on(r.day).saturating_sub(lost);
        let tolerance = trace.failures.iter().filter(|(s, _)| *s == start).count();
        if r.agent_count + tolerance < expect || r.agent_count > expect {
            return Err(HarnessError::Invariant(format!(
                "day {}: {} agents flying, schedule says {expect}",
                r.day, r.agent_count
            )));
        }
    }
    let mut csv = String::from("day,agent_count,avg,max_bar,mean_recharge_battery\n");
    for r in &rows {
        csv += &format!(
            "{},{},{},{},{}\n",
            r.day,
            r.agent_count,
            r.avg,
            r.max_bar,
            opt(r.mean_recharge_battery)
        );
    }
    let mut sched = String::from("day,fail,add,count\n");
    sched += &format!("0,0,0,{}\n", schedule.initial);
    for e in &schedule.events {
        sched += &format!(
            "{},{},{},{}\n",
            e.day,
            e.fail,
            e.add,
            schedule.count_on(e.day)
        );
    }
    finish(
        cfg,
        out,
        "eval-fault",
        &[("fault.csv", csv), ("schedule.csv", sched)],
    )?;
    Ok(FaultReport {
        schedule,
        rows,
        battery_failures: trace.failures.len(),
    })
}

/// Gradient-check suite; writes `gradcheck.csv` and a manifest when `out`
/// is given.
pub fn cmd_gradcheck(
    seeds: u64,
    hidden: &[usize],
    fault: bool,
    out: Option<&Path>,
) -> Result<GradcheckReport, HarnessError> {
    if seeds == 0 {
        return Err(HarnessError::Config(
            "gradcheck needs at least one seed".into(),
        ));
    }
    let report = gradcheck_suite(seeds, hidden, fault)?;
    if let Some(dir) = out {
        write_file(dir, "gradcheck.csv", &report.to_csv())?;
        let mut m = RunManifest::new("gradcheck", seeds, None);
        m.add_output(dir, "gradcheck.csv")?;
        m.write(dir)?;
    }
    Ok(report)
}

/// Output directory: explicit override or the config's.
pub fn out_dir(cfg: &ExperimentConfig, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.experiment.out.clone())
}
