use std::hint::black_box;
use std::path::Path;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use patrol_core::autodiff::{Graph, Tensor};
use patrol_core::gridmap::{Action, GridMap};
use patrol_core::policy::{encode_actor, PolicyArch, PolicyNet, ACTOR_EXTRAS};
use patrol_core::seed::derive_rng;
use patrol_core::{AgentId, EnvConfig, EnvState, PolicySet};
use rand::Rng;

fn map(name: &str) -> Arc<GridMap> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../maps")
        .join(name);
    Arc::new(GridMap::load(path).unwrap())
}

fn env_step(c: &mut Criterion) {
    let m = map("city12.map");
    let cfg = EnvConfig {
        max_agents: 5,
        ..EnvConfig::default()
    };
    let mut rng = derive_rng(1, &[]);
    let mut env = EnvState::reset(Arc::clone(&m), cfg, 5, 1).unwrap();
    c.bench_function("env_step_12x12_5_agents", |b| {
        b.iter(|| {
            let acts: Vec<(AgentId, Action)> = env
                .acting_agents()
                .into_iter()
                .map(|id| {
                    let mask = m.valid_actions(env.agent(id).unwrap().loc).unwrap();
                    let valid: Vec<Action> = Action::ALL
                        .into_iter()
                        .filter(|a| mask[a.index()])
                        .collect();
                    (id, valid[rng.random_range(0..valid.len())])
                })
                .collect();
            for &(id, _) in &acts {
                env.set_battery(id, 1.0).unwrap();
            }
            black_box(env.step(&acts).unwrap());
        })
    });
}

fn bfs(c: &mut Criterion) {
    let m = map("city12.map");
    c.bench_function("bfs_12x12", |b| {
        b.iter(|| black_box(m.distances_from(black_box((0, 11)))))
    });
}

fn actor_inference(c: &mut Criterion) {
    let m = map("city12.map");
    let arch = PolicyArch::new(12, 12, 5, vec![512, 341, 227]);
    let policy = PolicySet::new(arch, 1, 3).unwrap();
    let env = EnvState::reset(Arc::clone(&m), EnvConfig::default(), 3, 2).unwrap();
    let enc = encode_actor(&env.observe_actor(AgentId(0), 150.0).unwrap()).unwrap();
    c.bench_function("actor_probs_paper_widths", |b| {
        b.iter(|| black_box(policy.action_probs(0, &enc).unwrap()))
    });
}

fn actor_forward_backward(c: &mut Criterion) {
    let arch = PolicyArch::new(12, 12, 5, vec![512, 341, 227]);
    let mut rng = derive_rng(4, &[]);
    let net = PolicyNet::new(&arch, ACTOR_EXTRAS, 4, 0.01, &mut rng).unwrap();
    let batch = 32;
    let conv = Tensor::new(
        vec![batch, 2, 12, 12],
        (0..batch * 288).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap();
    let extras = Tensor::new(
        vec![batch, ACTOR_EXTRAS],
        (0..batch * ACTOR_EXTRAS)
            .map(|_| rng.random::<f64>())
            .collect(),
    )
    .unwrap();
    c.bench_function("actor_forward_backward_batch32", |b| {
        b.iter_batched(
            || (conv.clone(), extras.clone()),
            |(x, e)| {
                let mut g = Graph::new();
                let x = g.input(x);
                let e = g.input(e);
                let (out, _) = net.forward(&mut g, x, e).unwrap();
                let loss = g.sum(out);
                black_box(g.backward(loss).unwrap());
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    env_step,
    bfs,
    actor_inference,
    actor_forward_backward
);
criterion_main!(benches);
