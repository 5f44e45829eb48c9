//! Observation encoding plus the actor and centralised critic networks.
//!
//! Both networks share one shape: two 3x3 convolutions over a two-channel
//! grid (cell kinds and normalised idleness), flattened, concatenated with a
//! small vector of extras, then a tanh MLP. The actor ends in four action
//! logits, the critic in a single value.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{
    masked_softmax_rows, AutodiffError, Checkpoint, CheckpointError, Graph, LayerSpec, Network,
    Tensor, Var,
};
use crate::gridmap::{Action, ActionMask};
use crate::seed::{derive_rng, SimRng};

/// Location (2) + battery (1) + action mask (4).
pub const ACTOR_EXTRAS: usize = 7;
pub const ACTOR_HEAD_GAIN: f64 = 0.01;
pub const CRITIC_HEAD_GAIN: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("map of {rows}x{cols} is too small for the convolution stack")]
    MapTooSmall { rows: usize, cols: usize },
    #[error("no actor with index {0}")]
    UnknownActor(usize),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorObservation {
    pub rows: usize,
    pub cols: usize,
    /// Cell-kind codes as reals, row-major.
    pub map: Vec<f64>,
    /// Normalised idleness with occupied cells zeroed; obstacles hold -1.
    pub idleness: Vec<f64>,
    pub battery: f64,
    pub location: [f64; 2],
    pub mask: ActionMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticObservation {
    pub rows: usize,
    pub cols: usize,
    pub map: Vec<f64>,
    pub idleness: Vec<f64>,
    /// One entry per slot; vacant slots hold 1.
    pub batteries: Vec<f64>,
    /// Two entries per slot.
    pub locations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedActor {
    /// `[2, rows, cols]`.
    pub conv: Vec<f64>,
    pub extras: [f64; ACTOR_EXTRAS],
    pub mask: ActionMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCritic {
    pub conv: Vec<f64>,
    pub extras: Vec<f64>,
}

fn stack_channels(
    rows: usize,
    cols: usize,
    map: &[f64],
    idle: &[f64],
) -> Result<Vec<f64>, PolicyError> {
    if map.len() != rows * cols || idle.len() != rows * cols {
        return Err(PolicyError::ShapeMismatch(format!(
            "{rows}x{cols} grid with channels of {} and {}",
            map.len(),
            idle.len()
        )));
    }
    let mut conv = Vec::with_capacity(2 * rows * cols);
    conv.extend_from_slice(map);
    conv.extend_from_slice(idle);
    Ok(conv)
}

pub fn encode_actor(obs: &ActorObservation) -> Result<EncodedActor, PolicyError> {
    let conv = stack_channels(obs.rows, obs.cols, &obs.map, &obs.idleness)?;
    let m = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(EncodedActor {
        conv,
        extras: [
            obs.location[0],
            obs.location[1],
            obs.battery,
            m(obs.mask[0]),
            m(obs.mask[1]),
            m(obs.mask[2]),
            m(obs.mask[3]),
        ],
        mask: obs.mask,
    })
}

pub fn encode_critic(obs: &CriticObservation, slots: usize) -> Result<EncodedCritic, PolicyError> {
    if obs.batteries.len() != slots || obs.locations.len() != 2 * slots {
        return Err(PolicyError::ShapeMismatch(format!(
            "critic observation with {} batteries and {} coordinates for {slots} slots",
            obs.batteries.len(),
            obs.locations.len()
        )));
    }
    let conv = stack_channels(obs.rows, obs.cols, &obs.map, &obs.idleness)?;
    let mut extras = obs.batteries.clone();
    extras.extend_from_slice(&obs.locations);
    Ok(EncodedCritic { conv, extras })
}

/// Softmax over unmasked logits; masked entries are exactly 0.
pub fn masked_softmax(logits: &[f64; 4], mask: &ActionMask) -> Result<[f64; 4], AutodiffError> {
    if !mask.iter().any(|&m| m) {
        return Err(AutodiffError::AllMasked);
    }
    let mut out = [0.0; 4];
    masked_softmax_rows(logits, mask, 4, &mut out);
    Ok(out)
}

/// Zeroes masked entries of a distribution and rescales the rest to sum to 1.
pub fn renormalize_masked(dist: &[f64; 4], mask: &ActionMask) -> Result<[f64; 4], AutodiffError> {
    let total: f64 = dist
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| p)
        .sum();
    if !mask.iter().any(|&m| m) || total <= 0.0 {
        return Err(AutodiffError::AllMasked);
    }
    let mut out = [0.0; 4];
    for i in 0..4 {
        if mask[i] {
            out[i] = dist[i] / total;
        }
    }
    Ok(out)
}

/// Categorical draw; returns the action and its probability. Zero-probability
/// entries are never chosen.
pub fn sample_action(dist: &[f64; 4], rng: &mut SimRng) -> (Action, f64) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return (Action::from_index(i).expect("index < 4"), p);
        }
    }
    let i = last.expect("distribution has positive mass");
    (Action::from_index(i).expect("index < 4"), dist[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyArch {
    pub rows: usize,
    pub cols: usize,
    pub max_agents: usize,
    pub conv_channels: [usize; 2],
    pub hidden: Vec<usize>,
}

impl PolicyArch {
    pub fn new(rows: usize, cols: usize, max_agents: usize, hidden: Vec<usize>) -> Self {
        PolicyArch {
            rows,
            cols,
            max_agents,
            conv_channels: [4, 8],
            hidden,
        }
    }

    pub fn conv_specs(&self) -> Vec<LayerSpec> {
        let [c1, c2] = self.conv_channels;
        let conv = |in_ch, out_ch| LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            pad: 0,
        };
        vec![
            conv(2, c1),
            LayerSpec::Tanh,
            conv(c1, c2),
            LayerSpec::Tanh,
            LayerSpec::Flatten,
        ]
    }

    /// Width of the flattened convolution output.
    pub fn conv_out(&self) -> Result<usize, PolicyError> {
        if self.rows < 5 || self.cols < 5 {
            return Err(PolicyError::MapTooSmall {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.conv_channels[1] * (self.rows - 4) * (self.cols - 4))
    }

    pub fn critic_extras(&self) -> usize {
        3 * self.max_agents
    }

    pub fn dense_specs(
        &self,
        extras: usize,
        outputs: usize,
    ) -> Result<Vec<LayerSpec>, PolicyError> {
        let mut specs = Vec::new();
        let mut width = self.conv_out()? + extras;
        for &h in &self.hidden {
            specs.push(LayerSpec::Dense {
                input: width,
                output: h,
            });
            specs.push(LayerSpec::Tanh);
            width = h;
        }
        specs.push(LayerSpec::Dense {
            input: width,
            output: outputs,
        });
        Ok(specs)
    }
}

/// Convolution trunk followed by an MLP over `[flattened conv, extras]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub conv: Network,
    pub dense: Network,
}

impl PolicyNet {
    pub fn new(
        arch: &PolicyArch,
        extras: usize,
        outputs: usize,
        head_gain: f64,
        rng: &mut SimRng,
    ) -> Result<Self, PolicyError> {
        let gain = 2f64.sqrt();
        let conv = Network::new(&arch.conv_specs(), gain, gain, rng);
        let dense = Network::new(&arch.dense_specs(extras, outputs)?, gain, head_gain, rng);
        Ok(PolicyNet { conv, dense })
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.conv.params().chain(self.dense.params())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.conv.params_mut();
        v.extend(self.dense.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.dense.param_count()
    }

    /// Records the forward pass; returns the output and parameter handles in
    /// [`PolicyNet::params`] order.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p>,
        conv_in: Var,
        extras: Var,
    ) -> Result<(Var, Vec<Var>), PolicyError> {
        let (features, mut handles) = self.conv.forward(g, conv_in)?;
        let joined = g.concat_cols(features, extras)?;
        let (out, dense_handles) = self.dense.forward(g, joined)?;
        handles.extend(dense_handles);
        Ok((out, handles))
    }

    pub fn infer(&self, conv_in: &Tensor, extras: &Tensor) -> Result<Tensor, PolicyError> {
        let features = self.conv.infer(conv_in)?;
        let (b, f) = features.dims2()?;
        let (b2, e) = extras.dims2()?;
        if b != b2 {
            return Err(PolicyError::ShapeMismatch(format!(
                "batch {b} vs extras batch {b2}"
            )));
        }
        let mut joined = Vec::with_capacity(b * (f + e));
        for (fr, er) in features
            .data()
            .chunks(f)
            .zip(extras.data().chunks(e.max(1)))
        {
            joined.extend_from_slice(fr);
            joined.extend_from_slice(&er[..e]);
        }
        Ok(self.dense.infer(&Tensor::new(vec![b, f + e], joined)?)?)
    }
}

/// Batched network inputs for a set of actor samples.
pub struct ActorBatch {
    pub conv: Tensor,
    pub extras: Tensor,
    pub mask: Vec<bool>,
}

pub fn batch_actor<'a>(
    arch: &PolicyArch,
    samples: impl IntoIterator<Item = &'a EncodedActor>,
) -> Result<ActorBatch, PolicyError> {
    let mut conv = Vec::new();
    let mut extras = Vec::new();
    let mut mask = Vec::new();
    let mut n = 0;
    for s in samples {
        conv.extend_from_slice(&s.conv);
        extras.extend_from_slice(&s.extras);
        mask.extend_from_slice(&s.mask);
        n += 1;
    }
    Ok(ActorBatch {
        conv: Tensor::new(vec![n, 2, arch.rows, arch.cols], conv)?,
        extras: Tensor::new(vec![n, ACTOR_EXTRAS], extras)?,
        mask,
    })
}

pub fn batch_critic<'a>(
    arch: &PolicyArch,
    samples: impl IntoIterator<Item = &'a EncodedCritic>,
) -> Result<(Tensor, Tensor), PolicyError> {
    let mut conv = Vec::new();
    let mut extras = Vec::new();
    let mut n = 0;
    for s in samples {
        conv.extend_from_slice(&s.conv);
        extras.extend_from_slice(&s.extras);
        n += 1;
    }
    Ok((
        Tensor::new(vec![n, 2, arch.rows, arch.cols], conv)?,
        Tensor::new(vec![n, arch.critic_extras()], extras)?,
    ))
}

/// Actor parameter sets plus one centralised critic. The homogeneous
/// configuration holds a single actor shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    pub arch: PolicyArch,
    pub actors: Vec<PolicyNet>,
    pub critic: PolicyNet,
}

impl PolicySet {
    pub fn new(arch: PolicyArch, n_actors: usize, seed: u64) -> Result<Self, PolicyError> {
        let actors = (0..n_actors.max(1))
            .map(|i| {
                let mut rng = derive_rng(seed, &[1, i as u64]);
                PolicyNet::new(&arch, ACTOR_EXTRAS, 4, ACTOR_HEAD_GAIN, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rng = derive_rng(seed, &[2]);
        let critic = PolicyNet::new(&arch, arch.critic_extras(), 1, CRITIC_HEAD_GAIN, &mut rng)?;
        Ok(PolicySet {
            arch,
            actors,
            critic,
        })
    }

    pub fn actor(&self, idx: usize) -> Result<&PolicyNet, PolicyError> {
        self.actors.get(idx).ok_or(PolicyError::UnknownActor(idx))
    }

    /// Masked action distribution from actor `idx`.
    pub fn action_probs(&self, idx: usize, enc: &EncodedActor) -> Result<[f64; 4], PolicyError> {
        let batch = batch_actor(&self.arch, [enc])?;
        let logits = self.actor(idx)?.infer(&batch.conv, &batch.extras)?;
        let l: [f64; 4] = logits
            .data()
            .try_into()
            .map_err(|_| PolicyError::ShapeMismatch("actor head must emit 4 logits".into()))?;
        Ok(masked_softmax(&l, &enc.mask)?)
    }

    pub fn value(&self, enc: &EncodedCritic) -> Result<f64, PolicyError> {
        Ok(self.values([enc])?[0])
    }

    pub fn values<'a>(
        &self,
        encs: impl IntoIterator<Item = &'a EncodedCritic>,
    ) -> Result<Vec<f64>, PolicyError> {
        let (conv, extras) = batch_critic(&self.arch, encs)?;
        Ok(self.critic.infer(&conv, &extras)?.into_data())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        let a = &self.arch;
        ckpt.meta.insert("rows".into(), a.rows.to_string());
        ckpt.meta.insert("cols".into(), a.cols.to_string());
        ckpt.meta
            .insert("max_agents".into(), a.max_agents.to_string());
        ckpt.meta.insert(
            "conv_channels".into(),
            format!("{} {}", a.conv_channels[0], a.conv_channels[1]),
        );
        let hidden: Vec<String> = a.hidden.iter().map(|h| h.to_string()).collect();
        ckpt.meta.insert("hidden".into(), hidden.join(" "));
        ckpt.meta
            .insert("actors".into(), self.actors.len().to_string());
        for (i, actor) in self.actors.iter().enumerate() {
            ckpt.networks
                .push((format!("actor{i}.conv"), actor.conv.clone()));
            ckpt.networks
                .push((format!("actor{i}.dense"), actor.dense.clone()));
        }
        ckpt.networks
            .push(("critic.conv".into(), self.critic.conv.clone()));
        ckpt.networks
            .push(("critic.dense".into(), self.critic.dense.clone()));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PolicyError> {
        let get = |k: &str| {
            ckpt.meta
                .get(k)
                .ok_or_else(|| PolicyError::Metadata(format!("missing {k}")))
        };
        let num = |k: &str| -> Result<usize, PolicyError> {
            get(k)?
                .parse()
                .map_err(|_| PolicyError::Metadata(format!("{k} is not an integer")))
        };
        let list = |k: &str| -> Result<Vec<usize>, PolicyError> {
            get(k)?
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| PolicyError::Metadata(format!("bad {k}")))
                })
                .collect()
        };
        let channels = list("conv_channels")?;
        let &[c1, c2] = channels.as_slice() else {
            return Err(PolicyError::Metadata(
                "conv_channels needs two entries".into(),
            ));
        };
        let arch = PolicyArch {
            rows: num("rows")?,
            cols: num("cols")?,
            max_agents: num("max_agents")?,
            conv_channels: [c1, c2],
            hidden: list("hidden")?,
        };
        let net = |name: &str| -> Result<PolicyNet, PolicyError> {
            Ok(PolicyNet {
                conv: ckpt.network(&format!("{name}.conv"))?.clone(),
                dense: ckpt.network(&format!("{name}.dense"))?.clone(),
            })
        };
        let actors = (0..num("actors")?)
            .map(|i| net(&format!("actor{i}")))
            .collect::<Result<Vec<_>, _>>()?;
        let set = PolicySet {
            critic: net("critic")?,
            actors,
            arch,
        };
        set.check_shapes()?;
        Ok(set)
    }

    fn check_shapes(&self) -> Result<(), PolicyError> {
        let a = &self.arch;
        let conv = a.conv_specs();
        let expect_actor = a.dense_specs(ACTOR_EXTRAS, 4)?;
        let expect_critic = a.dense_specs(a.critic_extras(), 1)?;
        let ok =
            |n: &PolicyNet, dense: &[LayerSpec]| n.conv.specs() == conv && n.dense.specs() == dense;
        if !self.actors.iter().all(|n| ok(n, &expect_actor)) || !ok(&self.critic, &expect_critic) {
            return Err(PolicyError::ShapeMismatch(
                "checkpoint layers disagree with its architecture".into(),
            ));
        }
        Ok(())
    }
}

pub fn actor_forward(
    policy: &PolicySet,
    actor: usize,
    obs: &ActorObservation,
) -> Result<[f64; 4], PolicyError> {
    policy.action_probs(actor, &encode_actor(obs)?)
}

pub fn critic_forward(policy: &PolicySet, obs: &CriticObservation) -> Result<f64, PolicyError> {
    policy.value(&encode_critic(obs, policy.arch.max_agents)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn arch6() -> PolicyArch {
        PolicyArch::new(6, 6, 5, vec![16, 8])
    }

    fn sym_obs() -> ActorObservation {
        ActorObservation {
            rows: 6,
            cols: 6,
            map: vec![0.0; 36],
            idleness: vec![0.5; 36],
            battery: 0.7,
            location: [0.4, 0.6],
            mask: [true; 4],
        }
    }

    #[test]
    fn paper_sized_widths() {
        let a = PolicyArch::new(12, 12, 5, vec![512, 341, 227]);
        assert_eq!(a.conv_out().unwrap() + ACTOR_EXTRAS, 519);
        assert_eq!(a.conv_out().unwrap() + a.critic_extras(), 527);
        let specs = a.dense_specs(ACTOR_EXTRAS, 4).unwrap();
        assert_eq!(
            specs.last(),
            Some(&LayerSpec::Dense {
                input: 227,
                output: 4
            })
        );
    }

    #[test]
    fn encodings_have_expected_shape() {
        let e = encode_actor(&sym_obs()).unwrap();
        assert_eq!(e.conv.len(), 2 * 36);
        assert_eq!(e.extras.len(), 7);
        assert_eq!(e, encode_actor(&sym_obs()).unwrap());
    }

    #[test]
    fn renormalisation_example() {
        let p = renormalize_masked(&[0.4, 0.1, 0.3, 0.2], &[true, true, false, false]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
        assert_eq!((p[2], p[3]), (0.0, 0.0));
        assert!(renormalize_masked(&[0.4, 0.1, 0.3, 0.2], &[false; 4]).is_err());
    }

    #[test]
    fn fresh_actor_is_near_uniform() {
        for seed in 0..20 {
            let set = PolicySet::new(arch6(), 1, seed).unwrap();
            let p = actor_forward(&set, 0, &sym_obs()).unwrap();
            assert!(p.iter().all(|&v| (0.15..=0.35).contains(&v)), "{p:?}");
        }
    }

    #[test]
    fn masked_actions_get_zero_and_single_valid_is_certain() {
        let set = PolicySet::new(arch6(), 1, 3).unwrap();
        let mut obs = sym_obs();
        obs.mask = [true, true, false, false];
        let p = actor_forward(&set, 0, &obs).unwrap();
        assert_eq!((p[2], p[3]), (0.0, 0.0));
        obs.mask = [false, false, true, false];
        let p = actor_forward(&set, 0, &obs).unwrap();
        assert_eq!(p, [0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = rng_from_seed(9);
        let dist = [0.8, 0.2, 0.0, 0.0];
        let n = 10_000;
        let mut ups = 0;
        for _ in 0..n {
            let (a, p) = sample_action(&dist, &mut rng);
            assert!(a == Action::Up || a == Action::Down);
            assert_eq!(p, dist[a.index()]);
            ups += (a == Action::Up) as usize;
        }
        assert!((ups as f64 / n as f64 - 0.8).abs() < 0.02);
        assert_eq!(sample_action(&[1.0, 0.0, 0.0, 0.0], &mut rng).0, Action::Up);
    }

    #[test]
    fn critic_is_pure_and_sensitive() {
        let set = PolicySet::new(arch6(), 1, 5).unwrap();
        let obs = CriticObservation {
            rows: 6,
            cols: 6,
            map: vec![0.0; 36],
            idleness: (0..36).map(|i| i as f64 / 40.0).collect(),
            batteries: vec![0.5, 0.6, 1.0, 1.0, 1.0],
            locations: vec![0.2; 10],
        };
        let v = critic_forward(&set, &obs).unwrap();
        assert_eq!(v, critic_forward(&set, &obs).unwrap());
        let mut other = obs.clone();
        other.batteries[1] = 0.3;
        assert_ne!(v, critic_forward(&set, &other).unwrap());
    }

    #[test]
    fn graph_and_inference_agree() {
        let set = PolicySet::new(arch6(), 1, 6).unwrap();
        let enc = encode_actor(&sym_obs()).unwrap();
        let batch = batch_actor(&set.arch, [&enc, &enc]).unwrap();
        let direct = set.actors[0].infer(&batch.conv, &batch.extras).unwrap();
        let mut g = Graph::new();
        let c = g.input(batch.conv.clone());
        let e = g.input(batch.extras.clone());
        let (out, handles) = set.actors[0].forward(&mut g, c, e).unwrap();
        assert_eq!(handles.len(), set.actors[0].params().count());
        assert_eq!(g.value(out), &direct);
    }

    #[test]
    fn checkpoint_round_trip() {
        let set = PolicySet::new(arch6(), 2, 7).unwrap();
        let text = set.to_checkpoint().to_text();
        let back = PolicySet::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        assert_eq!(back, set);
        let _ = rng_from_seed(0);
    }
}
