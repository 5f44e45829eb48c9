use std::sync::Arc;

use rand::seq::index::sample;

use super::collect::{collect_round, EpisodeRequest};
use super::gae::{compute_gae, compute_v_targ_prime};
use super::trajectory::reconstruct_swap_gaps;
use super::update::{
    normalize_advantages, ppo_update, ActorSample, CriticSample, LossReport, UpdateParams,
};
use super::MappoError;
use crate::autodiff::{Adam, StepSchedule};
use crate::environment::EnvConfig;
use crate::gridmap::GridMap;
use crate::policy::{PolicyArch, PolicySet};
use crate::rewards::RewardParams;
use crate::seed::{derive_rng, derive_seed};

/// How the agents of one training episode map onto actors.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeSpec {
    /// `n` agents all driven by actor 0.
    Shared(usize),
    /// One agent per listed actor index.
    Learners(Vec<usize>),
    /// `k` distinct actors drawn at random each round.
    RandomSubset(usize),
}

impl EpisodeSpec {
    pub fn agent_count(&self) -> usize {
        match self {
            EpisodeSpec::Shared(n) | EpisodeSpec::RandomSubset(n) => *n,
            EpisodeSpec::Learners(l) => l.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub batches: usize,
    pub lr: StepSchedule,
    pub entropy: StepSchedule,
    pub rounds: u64,
    pub horizon: usize,
    pub plan: Vec<EpisodeSpec>,
    /// Number of actor parameter sets (1 for the shared policy).
    pub actors: usize,
    pub max_agents: usize,
    pub hidden: Vec<usize>,
    pub normalize_advantages: bool,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.95,
            lambda: 0.95,
            clip: 0.15,
            epochs: 3,
            batches: 50,
            lr: StepSchedule {
                start: 2e-4,
                step: 5e-5,
                every: 1000,
                floor: 5e-5,
            },
            entropy: StepSchedule {
                start: 0.04,
                step: 0.01,
                every: 500,
                floor: 0.005,
            },
            rounds: 3000,
            horizon: 5000,
            plan: [1, 1, 1, 1, 2, 3, 4, 5]
                .into_iter()
                .map(EpisodeSpec::Shared)
                .collect(),
            actors: 1,
            max_agents: 5,
            hidden: vec![512, 341, 227],
            normalize_advantages: true,
            max_grad_norm: Some(0.5),
        }
    }
}

impl TrainConfig {
    /// Shrinks the schedule periods by `factor` (e.g. 10 for desk-scale runs).
    pub fn compress_schedules(mut self, factor: u64) -> Self {
        self.lr.every = (self.lr.every / factor).max(1);
        self.entropy.every = (self.entropy.every / factor).max(1);
        self
    }

    pub fn validate(&self) -> Result<(), MappoError> {
        let bad = |m: String| Err(MappoError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1)".into());
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive".into());
        }
        if self.epochs == 0 || self.batches == 0 || self.horizon == 0 {
            return bad("epochs, batches and horizon must be positive".into());
        }
        if self.plan.is_empty() || self.actors == 0 {
            return bad("episode plan and actor count must be non-empty".into());
        }
        for spec in &self.plan {
            let n = spec.agent_count();
            if n == 0 || n > self.max_agents {
                return bad(format!(
                    "episode with {n} agents exceeds 1..={}",
                    self.max_agents
                ));
            }
            match spec {
                EpisodeSpec::Learners(l) if l.iter().any(|&i| i >= self.actors) => {
                    return bad(format!("learner index out of range in {l:?}"));
                }
                EpisodeSpec::RandomSubset(k) if *k > self.actors => {
                    return bad(format!(
                        "cannot draw {k} distinct actors from {}",
                        self.actors
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: u64,
    pub agent_counts: Vec<usize>,
    /// Mean over (episode, agent) of the agent's own summed reward.
    pub mean_cumulative_reward: f64,
    /// Mean over episodes of their mean landing battery (1 when none).
    pub mean_recharge_battery: f64,
    pub recharge_events: Vec<f64>,
    pub failures: usize,
    pub steps: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub lr: f64,
    pub entropy_coef: f64,
}

pub struct Trainer {
    pub policy: PolicySet,
    actor_opts: Vec<Adam>,
    critic_opt: Adam,
    pub cfg: TrainConfig,
    map: Arc<GridMap>,
    env_cfg: EnvConfig,
    reward: RewardParams,
    seed: u64,
    round: u64,
}

impl Trainer {
    pub fn new(
        map: Arc<GridMap>,
        env_cfg: EnvConfig,
        reward: RewardParams,
        cfg: TrainConfig,
        seed: u64,
    ) -> Result<Self, MappoError> {
        cfg.validate()?;
        env_cfg.validate()?;
        if env_cfg.max_agents != cfg.max_agents {
            return Err(MappoError::InvalidConfig(
                "environment and trainer disagree on max_agents".into(),
            ));
        }
        let arch = PolicyArch::new(map.rows(), map.cols(), cfg.max_agents, cfg.hidden.clone());
        let policy = PolicySet::new(arch, cfg.actors, derive_seed(seed, &[0]))?;
        let actor_opts = policy
            .actors
            .iter()
            .map(|a| Adam::new(a.params()))
            .collect();
        let critic_opt = Adam::new(policy.critic.params());
        Ok(Trainer {
            policy,
            actor_opts,
            critic_opt,
            cfg,
            map,
            env_cfg,
            reward,
            seed,
            round: 0,
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn requests(&self, round: u64) -> Vec<EpisodeRequest> {
        self.cfg
            .plan
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let seed = derive_seed(self.seed, &[4, round, i as u64]);
                let learners = match spec {
                    EpisodeSpec::Shared(n) => vec![0; *n],
                    EpisodeSpec::Learners(l) => l.clone(),
                    EpisodeSpec::RandomSubset(k) => {
                        let mut rng = derive_rng(seed, &[9]);
                        let mut v = sample(&mut rng, self.cfg.actors, *k).into_vec();
                        v.sort_unstable();
                        v
                    }
                };
                EpisodeRequest { learners, seed }
            })
            .collect()
    }

    pub fn run_round(&mut self) -> Result<RoundLog, MappoError> {
        let round = self.round;
        let requests = self.requests(round);
        let mut episodes = collect_round(
            &self.policy,
            &self.map,
            &self.env_cfg,
            &self.reward,
            self.cfg.horizon,
            &requests,
        )?;
        let mut actor_samples = Vec::new();
        let mut critic_samples = Vec::new();
        let mut returns = Vec::new();
        let mut recharge_means = Vec::new();
        let mut recharge_events = Vec::new();
        let mut failures = 0;
        let mut steps = 0;
        for ep in &mut episodes {
            for t in &ep.trajectories {
                returns.push(t.own_return());
            }
            reconstruct_swap_gaps(&mut ep.trajectories);
            for t in &ep.trajectories {
                let adv = compute_gae(
                    &t.rewards(),
                    &t.values(),
                    0.0,
                    self.cfg.gamma,
                    self.cfg.lambda,
                )?;
                for (r, a) in t.records.iter().zip(adv) {
                    if !r.filled {
                        actor_samples.push(ActorSample {
                            input: Arc::clone(&r.actor_input),
                            action: r.action,
                            old_prob: r.prob,
                            advantage: a,
                            learner: t.learner,
                        });
                    }
                }
            }
            critic_samples.extend(
                compute_v_targ_prime(&ep.trajectories, self.cfg.gamma)
                    .into_iter()
                    .map(|c| CriticSample {
                        input: c.input,
                        target: c.target,
                    }),
            );
            recharge_means.push(if ep.recharge_batteries.is_empty() {
                1.0
            } else {
                ep.recharge_batteries.iter().sum::<f64>() / ep.recharge_batteries.len() as f64
            });
            recharge_events.extend_from_slice(&ep.recharge_batteries);
            failures += ep.failures;
            steps += ep.steps;
        }
        if self.cfg.normalize_advantages {
            normalize_advantages(&mut actor_samples);
        }
        let params = UpdateParams {
            clip: self.cfg.clip,
            epochs: self.cfg.epochs,
            batches: self.cfg.batches,
            lr: self.cfg.lr.value(round),
            entropy_coef: self.cfg.entropy.value(round),
            max_grad_norm: self.cfg.max_grad_norm,
        };
        let report = if actor_samples.is_empty() || critic_samples.is_empty() {
            LossReport::default()
        } else {
            let mut rng = derive_rng(self.seed, &[3, round]);
            ppo_update(
                &mut self.policy,
                &mut self.actor_opts,
                &mut self.critic_opt,
                &actor_samples,
                &critic_samples,
                &params,
                &mut rng,
            )?
        };
        self.round += 1;
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(RoundLog {
            round,
            agent_counts: requests.iter().map(|r| r.learners.len()).collect(),
            mean_cumulative_reward: mean(&returns),
            mean_recharge_battery: mean(&recharge_means),
            recharge_events,
            failures,
            steps,
            actor_loss: report.actor_loss,
            critic_loss: report.critic_loss,
            entropy: report.entropy,
            lr: params.lr,
            entropy_coef: params.entropy_coef,
        })
    }
}

/// Runs `cfg.rounds` rounds, calling `on_round` after each update.
pub fn train(
    map: Arc<GridMap>,
    env_cfg: EnvConfig,
    reward: RewardParams,
    cfg: TrainConfig,
    seed: u64,
    mut on_round: impl FnMut(&RoundLog, &PolicySet) -> Result<(), MappoError>,
) -> Result<(PolicySet, Vec<RoundLog>), MappoError> {
    let rounds = cfg.rounds;
    let mut trainer = Trainer::new(map, env_cfg, reward, cfg, seed)?;
    let mut log = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let row = trainer.run_round()?;
        on_round(&row, &trainer.policy)?;
        log.push(row);
    }
    Ok((trainer.policy, log))
}
