//! Experiment configuration files (TOML, one table per concern).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::StepSchedule;
use crate::baselines::{individual_learner_config, CrParams};
use crate::environment::EnvConfig;
use crate::mappo::{EpisodeSpec, TrainConfig};
use crate::metrics::{FaultEvent, DEFAULT_WARMUP};
use crate::rewards::RewardParams;

/// Upper bound on agents during evaluation.
pub const MAX_EVAL_AGENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Marl,
    Cr,
    Individual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub map: PathBuf,
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub batches: usize,
    pub lr: StepSchedule,
    pub entropy: StepSchedule,
    /// Divides both schedule periods.
    pub schedule_compression: u64,
    pub rounds: u64,
    pub horizon: usize,
    /// Agent count of each episode in a homogeneous round.
    pub episode_agents: Vec<usize>,
    pub max_agents: usize,
    pub hidden: Vec<usize>,
    pub normalize_advantages: bool,
    /// Global gradient-norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Write a checkpoint every this many rounds (0: only the first and last).
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            gamma: t.gamma,
            lambda: t.lambda,
            clip: t.clip,
            epochs: t.epochs,
            batches: t.batches,
            lr: t.lr,
            entropy: t.entropy,
            schedule_compression: 1,
            rounds: t.rounds,
            horizon: t.horizon,
            episode_agents: vec![1, 1, 1, 1, 2, 3, 4, 5],
            max_agents: t.max_agents,
            hidden: t.hidden,
            normalize_advantages: t.normalize_advantages,
            max_grad_norm: t.max_grad_norm.unwrap_or(0.0),
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tests: usize,
    pub episodes: usize,
    pub horizon: usize,
    pub agent_counts: Vec<usize>,
    pub warmup: usize,
    /// Extra episodes allowed per agent count when replacing failed ones.
    pub max_retries: usize,
    /// Reserve steps for the reactive baseline's return trigger.
    pub cr_margin: f64,
    /// When set, the reactive baseline's margin is calibrated to land with
    /// about this much battery instead of using `cr_margin`.
    pub cr_target_battery: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            tests: 10,
            episodes: 100,
            horizon: 14_400,
            agent_counts: (1..=MAX_EVAL_AGENTS).collect(),
            warmup: DEFAULT_WARMUP,
            max_retries: 100,
            cr_margin: 5.0,
            cr_target_battery: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEventSpec {
    pub day: usize,
    #[serde(default)]
    pub fail: usize,
    #[serde(default)]
    pub add: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSection {
    pub days: usize,
    pub steps_per_day: usize,
    pub interval_days: usize,
    pub max_total: usize,
    /// Fixed initial count; random when absent.
    pub initial: Option<usize>,
    /// Fixed events; a random schedule is drawn when empty.
    pub events: Vec<FaultEventSpec>,
}

impl Default for FaultSection {
    fn default() -> Self {
        FaultSection {
            days: 200,
            steps_per_day: 14_400,
            interval_days: 10,
            max_total: MAX_EVAL_AGENTS,
            initial: None,
            events: Vec::new(),
        }
    }
}

impl FaultSection {
    pub fn scripted_events(&self) -> Vec<FaultEvent> {
        self.events
            .iter()
            .map(|e| FaultEvent {
                day: e.day,
                fail: e.fail,
                add: e.add,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub fault: FaultSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; a relative map path is resolved against the working
    /// directory first and the config file's directory second.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative map paths: the working directory first, then the config's
        // directory and its ancestors.
        if !cfg.experiment.map.is_absolute() && !cfg.experiment.map.exists() {
            if let Some(alt) = path
                .parent()
                .into_iter()
                .flat_map(Path::ancestors)
                .map(|dir| dir.join(&cfg.experiment.map))
                .find(|p| p.exists())
            {
                cfg.experiment.map = alt;
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.env
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.reward.c_norm > 0.0) {
            return bad("reward.c_norm must be positive".into());
        }
        if (self.reward.b_l - self.env.b_l).abs() > 1e-12 {
            return bad("reward.b_l and env.b_l must agree".into());
        }
        if self
            .eval
            .agent_counts
            .iter()
            .any(|&n| n == 0 || n > MAX_EVAL_AGENTS)
        {
            return bad(format!(
                "evaluation agent counts must lie in 1..={MAX_EVAL_AGENTS}"
            ));
        }
        if self.eval.tests == 0 || self.eval.episodes == 0 || self.eval.horizon <= self.eval.warmup
        {
            return bad("evaluation needs tests, episodes and a horizon beyond the warmup".into());
        }
        if self.fault.steps_per_day == 0
            || self.fault.interval_days == 0
            || self.fault.max_total == 0
        {
            return bad("fault section needs positive day length, interval and capacity".into());
        }
        if self.fault.max_total > MAX_EVAL_AGENTS {
            return bad(format!("fault.max_total must not exceed {MAX_EVAL_AGENTS}"));
        }
        if self.train.schedule_compression == 0 {
            return bad("train.schedule_compression must be at least 1".into());
        }
        self.train_config()?
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig, HarnessError> {
        let t = &self.train;
        let base = TrainConfig {
            gamma: t.gamma,
            lambda: t.lambda,
            clip: t.clip,
            epochs: t.epochs,
            batches: t.batches,
            lr: t.lr,
            entropy: t.entropy,
            rounds: t.rounds,
            horizon: t.horizon,
            plan: t
                .episode_agents
                .iter()
                .map(|&n| EpisodeSpec::Shared(n))
                .collect(),
            actors: 1,
            max_agents: t.max_agents,
            hidden: t.hidden.clone(),
            normalize_advantages: t.normalize_advantages,
            max_grad_norm: (t.max_grad_norm > 0.0).then_some(t.max_grad_norm),
        }
        .compress_schedules(t.schedule_compression);
        Ok(match self.experiment.strategy {
            Strategy::Individual => individual_learner_config(&base),
            _ => base,
        })
    }

    /// Environment settings used while training.
    pub fn train_env(&self) -> EnvConfig {
        EnvConfig {
            max_agents: self.train.max_agents,
            ..self.env.clone()
        }
    }

    /// Environment settings used during evaluation, sized for `capacity`.
    pub fn eval_env(&self, capacity: usize) -> EnvConfig {
        EnvConfig {
            max_agents: capacity.max(1),
            ..self.env.clone()
        }
    }

    pub fn cr_params(&self) -> CrParams {
        match self.eval.cr_target_battery {
            Some(target) => CrParams::calibrated(self.env.b_l, self.env.b_max, target),
            None => CrParams {
                b_l: self.env.b_l,
                b_max: self.env.b_max,
                margin: self.eval.cr_margin,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
map = "maps/fig1.map"
strategy = "marl"
seed = 3
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.env, EnvConfig::default());
        assert_eq!(c.train_config().unwrap().plan.len(), 8);
        assert_eq!(c.eval.agent_counts.len(), 8);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}\n[env]\nbogus = 1\n")).is_err());
        assert!(
            ExperimentConfig::parse(&format!("{MINIMAL}\n[eval]\nagent_counts = [9]\n")).is_err()
        );
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}\n[train]\ngamma = 1.5\n")).is_err());
    }

    #[test]
    fn individual_strategy_plan() {
        let text = MINIMAL.replace("marl", "individual");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.train_config().unwrap().actors, 5);
    }
}
