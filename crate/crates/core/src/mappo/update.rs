use std::sync::Arc;

use rand::seq::SliceRandom;

use super::MappoError;
use crate::autodiff::{clip_grad_norm, Adam, Graph, Tensor, Var};
use crate::gridmap::Action;
use crate::policy::{
    batch_actor, batch_critic, EncodedActor, EncodedCritic, PolicyArch, PolicyNet, PolicySet,
};
use crate::seed::SimRng;

#[derive(Debug, Clone)]
pub struct ActorSample {
    pub input: Arc<EncodedActor>,
    pub action: Action,
    pub old_prob: f64,
    pub advantage: f64,
    pub learner: usize,
}

#[derive(Debug, Clone)]
pub struct CriticSample {
    pub input: Arc<EncodedCritic>,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateParams {
    pub clip: f64,
    pub epochs: usize,
    pub batches: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    /// Mean minimised actor loss (negated clipped objective minus entropy bonus).
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Mean masked-policy entropy.
    pub entropy: f64,
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)` for one record.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Handles produced by [`actor_loss`].
pub struct ActorLoss {
    pub loss: Var,
    pub surrogate: Var,
    pub entropy: Var,
    pub params: Vec<Var>,
}

/// Records the clipped-surrogate loss with entropy bonus for `samples`.
pub fn actor_loss<'p>(
    net: &'p PolicyNet,
    arch: &PolicyArch,
    g: &mut Graph<'p>,
    samples: &[&ActorSample],
    clip: f64,
    entropy_coef: f64,
) -> Result<ActorLoss, MappoError> {
    let batch = batch_actor(arch, samples.iter().map(|s| s.input.as_ref()))?;
    let n = samples.len();
    let conv = g.input(batch.conv);
    let extras = g.input(batch.extras);
    let (logits, params) = net.forward(g, conv, extras)?;
    let logp = g.masked_log_softmax(logits, batch.mask.clone())?;
    let chosen = g.gather_cols(logp, samples.iter().map(|s| s.action.index()).collect())?;
    let old = g.input(Tensor::new(
        vec![n],
        samples.iter().map(|s| s.old_prob.ln()).collect(),
    )?);
    let diff = g.sub(chosen, old)?;
    let ratio = g.exp(diff);
    let adv = g.input(Tensor::new(
        vec![n],
        samples.iter().map(|s| s.advantage).collect(),
    )?);
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = g.mul(clipped_ratio, adv)?;
    let surr = g.minimum(unclipped, clipped)?;
    let surrogate = g.mean(surr);
    let ent = g.masked_entropy(logits, batch.mask)?;
    let entropy = g.mean(ent);
    let bonus = g.scale(entropy, entropy_coef);
    let objective = g.add(surrogate, bonus)?;
    let loss = g.scale(objective, -1.0);
    Ok(ActorLoss {
        loss,
        surrogate,
        entropy,
        params,
    })
}

fn apply(
    net: &mut PolicyNet,
    opt: &mut Adam,
    mut grads: Vec<Vec<f64>>,
    p: &UpdateParams,
) -> Result<(), MappoError> {
    if let Some(max) = p.max_grad_norm {
        clip_grad_norm(&mut grads, max);
    }
    opt.step(&mut net.params_mut(), &grads, p.lr)?;
    Ok(())
}

fn take_grads(
    grads: &mut crate::autodiff::Gradients,
    params: &[Var],
    net: &PolicyNet,
) -> Vec<Vec<f64>> {
    params
        .iter()
        .zip(net.params())
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect()
}

/// One gradient step on actor `net` over `samples`. Returns (loss, entropy).
pub fn actor_step(
    net: &mut PolicyNet,
    arch: &PolicyArch,
    opt: &mut Adam,
    samples: &[&ActorSample],
    p: &UpdateParams,
) -> Result<(f64, f64), MappoError> {
    let (grads, loss, ent) = {
        let mut g = Graph::new();
        let l = actor_loss(net, arch, &mut g, samples, p.clip, p.entropy_coef)?;
        let mut grads = g.backward(l.loss)?;
        let gr = take_grads(&mut grads, &l.params, net);
        (gr, g.value(l.loss).data()[0], g.value(l.entropy).data()[0])
    };
    apply(net, opt, grads, p)?;
    Ok((loss, ent))
}

/// One gradient step on the critic's squared error. Returns the loss.
pub fn critic_step(
    net: &mut PolicyNet,
    arch: &PolicyArch,
    opt: &mut Adam,
    samples: &[&CriticSample],
    p: &UpdateParams,
) -> Result<f64, MappoError> {
    let (grads, loss) = {
        let (conv, extras) = batch_critic(arch, samples.iter().map(|s| s.input.as_ref()))?;
        let mut g = Graph::new();
        let c = g.input(conv);
        let e = g.input(extras);
        let (out, params) = net.forward(&mut g, c, e)?;
        let n = samples.len();
        let v = g.reshape(out, vec![n])?;
        let targets = g.input(Tensor::new(
            vec![n],
            samples.iter().map(|s| s.target).collect(),
        )?);
        let err = g.sub(v, targets)?;
        let sq = g.square(err);
        let loss = g.mean(sq);
        let mut grads = g.backward(loss)?;
        (
            take_grads(&mut grads, &params, net),
            g.value(loss).data()[0],
        )
    };
    apply(net, opt, grads, p)?;
    Ok(loss)
}

/// Splits `0..n` (shuffled) into `batches` nearly equal chunks, dropping
/// empty ones.
fn minibatches(n: usize, batches: usize, rng: &mut SimRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let b = batches.max(1).min(n.max(1));
    (0..b)
        .map(|i| idx[i * n / b..(i + 1) * n / b].to_vec())
        .filter(|c| !c.is_empty())
        .collect()
}

/// Clipped PPO update: `epochs` passes, each over `batches` shuffled
/// minibatches of actor and critic samples. Each actor only sees samples
/// whose `learner` is its index.
pub fn ppo_update(
    policy: &mut PolicySet,
    actor_opts: &mut [Adam],
    critic_opt: &mut Adam,
    actor_samples: &[ActorSample],
    critic_samples: &[CriticSample],
    p: &UpdateParams,
    rng: &mut SimRng,
) -> Result<LossReport, MappoError> {
    if actor_samples.is_empty() || critic_samples.is_empty() {
        return Err(MappoError::EmptyBatch);
    }
    if actor_opts.len() != policy.actors.len() {
        return Err(MappoError::InvalidConfig(
            "one optimiser per actor required".into(),
        ));
    }
    let mut report = LossReport::default();
    let (mut n_actor, mut n_critic) = (0usize, 0usize);
    for _ in 0..p.epochs {
        let a_batches = minibatches(actor_samples.len(), p.batches, rng);
        let c_batches = minibatches(critic_samples.len(), p.batches, rng);
        for i in 0..a_batches.len().max(c_batches.len()) {
            if let Some(chunk) = a_batches.get(i) {
                for learner in 0..policy.actors.len() {
                    let group: Vec<&ActorSample> = chunk
                        .iter()
                        .map(|&j| &actor_samples[j])
                        .filter(|s| s.learner == learner)
                        .collect();
                    if group.is_empty() {
                        continue;
                    }
                    let arch = policy.arch.clone();
                    let (loss, ent) = actor_step(
                        &mut policy.actors[learner],
                        &arch,
                        &mut actor_opts[learner],
                        &group,
                        p,
                    )?;
                    report.actor_loss += loss;
                    report.entropy += ent;
                    n_actor += 1;
                }
            }
            if let Some(chunk) = c_batches.get(i) {
                let group: Vec<&CriticSample> = chunk.iter().map(|&j| &critic_samples[j]).collect();
                let arch = policy.arch.clone();
                report.critic_loss +=
                    critic_step(&mut policy.critic, &arch, critic_opt, &group, p)?;
                n_critic += 1;
            }
        }
    }
    report.actor_loss /= n_actor.max(1) as f64;
    report.entropy /= n_actor.max(1) as f64;
    report.critic_loss /= n_critic.max(1) as f64;
    Ok(report)
}

/// Rescales advantages to zero mean and unit variance.
pub fn normalize_advantages(samples: &mut [ActorSample]) {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return;
    }
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|s| (s.advantage - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt() + 1e-8;
    for s in samples.iter_mut() {
        s.advantage = (s.advantage - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_clip_arithmetic() {
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.15), 2.0);
        assert!((clipped_surrogate(1.5, 2.0, 0.15) - 2.3).abs() < 1e-12);
        assert_eq!(clipped_surrogate(1.5, -2.0, 0.15), -3.0);
        assert!((clipped_surrogate(0.5, -2.0, 0.15) + 1.7).abs() < 1e-12);
        assert_eq!(clipped_surrogate(0.5, 2.0, 0.15), 1.0);
    }

    #[test]
    fn minibatches_partition() {
        let mut rng = crate::seed::rng_from_seed(1);
        let b = minibatches(103, 50, &mut rng);
        assert_eq!(b.len(), 50);
        let mut all: Vec<usize> = b.into_iter().flatten().collect();
        all.sort();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert_eq!(minibatches(3, 50, &mut rng).len(), 3);
    }
}
