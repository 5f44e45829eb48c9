//! Gradient checks over every layer kind, the full actor and critic stacks
//! at a reduced map size, and the clipped actor loss.

use rand::Rng;
use rayon::prelude::*;

use super::HarnessError;
use crate::autodiff::{
    check_gradients, check_stack, forward_layers, single_layer_cases, AutodiffError, Fault,
    GradcheckConfig, Graph, LayerSpec, Tensor, Var,
};
use crate::policy::{PolicyArch, PolicyNet, ACTOR_EXTRAS, ACTOR_HEAD_GAIN, CRITIC_HEAD_GAIN};
use crate::seed::{derive_rng, SimRng};

/// Map side used for the full-stack cases.
const STACK_SIDE: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub name: String,
    pub seeds: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub tol: f64,
    pub fault_injected: bool,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.max_rel_error < self.tol)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,seeds,max_rel_error,pass\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{:e},{}\n",
                r.name,
                r.seeds,
                r.max_rel_error,
                r.max_rel_error < self.tol
            );
        }
        s
    }
}

fn uniform_tensor(shape: Vec<usize>, scale: f64, rng: &mut SimRng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Tensor::new(shape, data).expect("sized from shape")
}

struct StackCase {
    conv: Vec<LayerSpec>,
    dense: Vec<LayerSpec>,
    n_conv: usize,
    /// Parameters, then conv input and extras.
    tensors: Vec<Tensor>,
}

fn stack_case(
    arch: &PolicyArch,
    extras: usize,
    outputs: usize,
    gain: f64,
    batch: usize,
    rng: &mut SimRng,
) -> Result<StackCase, HarnessError> {
    let net = PolicyNet::new(arch, extras, outputs, gain, rng)?;
    let n_conv = net.conv.params().count();
    let mut tensors: Vec<Tensor> = net.params().cloned().collect();
    tensors.push(uniform_tensor(
        vec![batch, 2, arch.rows, arch.cols],
        1.0,
        rng,
    ));
    tensors.push(uniform_tensor(vec![batch, extras], 1.0, rng));
    Ok(StackCase {
        conv: arch.conv_specs(),
        dense: arch.dense_specs(extras, outputs)?,
        n_conv,
        tensors,
    })
}

fn stack_forward(
    g: &mut Graph<'_>,
    v: &[Var],
    conv: &[LayerSpec],
    dense: &[LayerSpec],
    n_conv: usize,
) -> Result<Var, AutodiffError> {
    let n_params = v.len() - 2;
    let features = forward_layers(conv, g, v[n_params], &v[..n_conv])?;
    let joined = g.concat_cols(features, v[n_params + 1])?;
    forward_layers(dense, g, joined, &v[n_conv..n_params])
}

fn check_policy_stack(
    arch: &PolicyArch,
    critic: bool,
    seed: u64,
    cfg: &GradcheckConfig,
    fault: Option<Fault>,
) -> Result<f64, HarnessError> {
    let mut rng = derive_rng(seed, &[0x73_74_61_63_6b, critic as u64]);
    let (extras, outputs, gain) = if critic {
        (arch.critic_extras(), 1, CRITIC_HEAD_GAIN)
    } else {
        (ACTOR_EXTRAS, 4, ACTOR_HEAD_GAIN)
    };
    let batch = 2;
    let mut case = stack_case(arch, extras, outputs, gain, batch, &mut rng)?;
    let proj = uniform_tensor(vec![batch * outputs], 1.0, &mut rng);
    let (conv, dense, n_conv) = (case.conv, case.dense, case.n_conv);
    let r = check_gradients(
        &mut case.tensors,
        |g, v| {
            let out = stack_forward(g, v, &conv, &dense, n_conv)?;
            let flat = g.reshape(out, vec![batch * outputs])?;
            let w = g.input(proj.clone());
            let weighted = g.mul(flat, w)?;
            Ok(g.sum(weighted))
        },
        cfg,
        &mut rng,
        fault,
    )?;
    Ok(r.max_rel_error)
}

/// Clipped surrogate with entropy bonus through a small actor, with behaviour
/// probabilities perturbed so some ratios fall outside the clip range.
fn check_actor_loss(
    seed: u64,
    cfg: &GradcheckConfig,
    fault: Option<Fault>,
) -> Result<f64, HarnessError> {
    let mut rng = derive_rng(seed, &[0x6c_6f_73_73]);
    let arch = PolicyArch::new(STACK_SIDE, STACK_SIDE, 2, vec![16, 8]);
    let batch = 6;
    let mut case = stack_case(&arch, ACTOR_EXTRAS, 4, 0.5, batch, &mut rng)?;
    let mut mask = Vec::with_capacity(batch * 4);
    let mut actions = Vec::with_capacity(batch);
    for _ in 0..batch {
        let row: Vec<bool> = (0..4).map(|_| rng.random_bool(0.7)).collect();
        let row = if row.iter().any(|&b| b) {
            row
        } else {
            vec![true; 4]
        };
        let valid: Vec<usize> = (0..4).filter(|&i| row[i]).collect();
        actions.push(valid[rng.random_range(0..valid.len())]);
        mask.extend(row);
    }
    let advantages = uniform_tensor(vec![batch], 1.0, &mut rng);
    let log_noise: Vec<f64> = (0..batch)
        .map(|_| 0.4 * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let (conv, dense, n_conv) = (case.conv, case.dense, case.n_conv);
    // Behaviour log-probs: current ones shifted by fixed noise.
    let old_logp: Vec<f64> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = case.tensors.iter().map(|t| g.input(t.clone())).collect();
        let logits = stack_forward(&mut g, &vars, &conv, &dense, n_conv)?;
        let logp = g.masked_log_softmax(logits, mask.clone())?;
        let chosen = g.gather_cols(logp, actions.clone())?;
        g.value(chosen)
            .data()
            .iter()
            .zip(&log_noise)
            .map(|(a, b)| a + b)
            .collect()
    };
    let old = Tensor::new(vec![batch], old_logp)?;
    let clip = 0.15;
    let r = check_gradients(
        &mut case.tensors,
        |g, v| {
            let logits = stack_forward(g, v, &conv, &dense, n_conv)?;
            let logp = g.masked_log_softmax(logits, mask.clone())?;
            let chosen = g.gather_cols(logp, actions.clone())?;
            let old = g.input(old.clone());
            let diff = g.sub(chosen, old)?;
            let ratio = g.exp(diff);
            let adv = g.input(advantages.clone());
            let a = g.mul(ratio, adv)?;
            let clipped = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
            let b = g.mul(clipped, adv)?;
            let surr = g.minimum(a, b)?;
            let surr = g.mean(surr);
            let ent = g.masked_entropy(logits, mask.clone())?;
            let ent = g.mean(ent);
            let bonus = g.scale(ent, 0.04);
            g.add(surr, bonus)
        },
        cfg,
        &mut rng,
        fault,
    )?;
    Ok(r.max_rel_error)
}

fn worst(errors: Vec<Result<f64, HarnessError>>) -> Result<f64, HarnessError> {
    errors.into_iter().try_fold(0.0f64, |acc, e| {
        e.map(|v| {
            if v.is_nan() {
                f64::INFINITY
            } else {
                acc.max(v)
            }
        })
    })
}

/// Runs every case over `seeds` seeds. `hidden` sets the MLP widths of the
/// full-stack cases; `fault` corrupts the tanh derivative as a negative
/// control.
pub fn gradcheck_suite(
    seeds: u64,
    hidden: &[usize],
    fault: bool,
) -> Result<GradcheckReport, HarnessError> {
    let cfg = GradcheckConfig::default();
    let fault = fault.then_some(Fault::TanhGrad);
    let mut rows = Vec::new();
    for (name, specs, shape) in single_layer_cases() {
        let errs = (0..seeds)
            .into_par_iter()
            .map(|s| {
                check_stack(&specs, &shape, s, &cfg, fault)
                    .map(|r| r.max_rel_error)
                    .map_err(HarnessError::from)
            })
            .collect();
        rows.push(GradcheckRow {
            name: name.to_string(),
            seeds: seeds as usize,
            max_rel_error: worst(errs)?,
        });
    }
    let arch = PolicyArch::new(STACK_SIDE, STACK_SIDE, 5, hidden.to_vec());
    for (name, critic) in [("actor-stack", false), ("critic-stack", true)] {
        let errs = (0..seeds)
            .into_par_iter()
            .map(|s| check_policy_stack(&arch, critic, s, &cfg, fault))
            .collect();
        rows.push(GradcheckRow {
            name: name.to_string(),
            seeds: seeds as usize,
            max_rel_error: worst(errs)?,
        });
    }
    let errs = (0..seeds)
        .into_par_iter()
        .map(|s| check_actor_loss(s, &cfg, fault))
        .collect();
    rows.push(GradcheckRow {
        name: "actor-loss".to_string(),
        seeds: seeds as usize,
        max_rel_error: worst(errs)?,
    });
    Ok(GradcheckReport {
        rows,
        tol: cfg.tol,
        fault_injected: fault.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_fault_is_caught() {
        let ok = gradcheck_suite(2, &[16, 8], false).unwrap();
        assert!(ok.passed(), "{ok:?}");
        let bad = gradcheck_suite(1, &[16, 8], true).unwrap();
        assert!(!bad.passed());
        assert!(bad.to_csv().contains("actor-stack"));
    }
}
