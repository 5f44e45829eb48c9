//! Reproduction index: one entry per acceptance check, with the command
//! that regenerates it and the state of its run manifest.

use std::path::Path;

use crate::harness::RunManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct ReproEntry {
    pub criterion: usize,
    pub artifact: &'static str,
    pub command: &'static str,
    pub config: Option<&'static str>,
    pub expected: &'static str,
    /// Run directory (relative to the index root) holding a manifest, for
    /// entries backed by a harness run.
    pub run_dir: Option<&'static str>,
}

const TEST: &str = "cargo test -p patrol-core --test acceptance -- --nocapture";

pub fn repro_entries() -> Vec<ReproEntry> {
    let t = |criterion, artifact, expected| ReproEntry {
        criterion,
        artifact,
        command: TEST,
        config: None,
        expected,
        run_dir: None,
    };
    vec![
        t(1, "Masked action renormalisation", "<0.4,0.1,0.3,0.2> under mask <1,1,0,0> becomes <0.8,0.2,0,0> within 1e-12"),
        t(2, "Hot-swap trajectory reconstruction", "both agents' return from s0 equals r0+r1+r2+r7+r8+r9"),
        ReproEntry {
            criterion: 3,
            artifact: "Gradient check report",
            command: "patrol gradcheck --seeds 20 --out out/desk/gradcheck",
            config: None,
            expected: "every case below 1e-4 relative error; the --inject-fault run fails",
            run_dir: Some("out/desk/gradcheck"),
        },
        t(4, "Advantage and critic-target oracles", "GAE and averaged targets match direct summation within 1e-10"),
        t(5, "Reward analytic points", "closed-form reward values hold and the base reward stays in [0,1]"),
        t(6, "Difference-reward re-simulation", "every two-agent placement on a 3x3 map matches the oracle"),
        t(7, "Environment invariants", "static cells fixed, visits reset idleness, perturbation rate 0.05 +- 0.01, replay identical"),
        ReproEntry {
            criterion: 8,
            artifact: "Desk training log and battery table",
            command: "patrol train --config configs/desk/train.toml && patrol eval-battery --config configs/desk/train.toml --checkpoint out/desk/train/checkpoints/final.ckpt --out out/desk/train-eval",
            config: Some("configs/desk/train.toml"),
            expected: "reward trend up at least 20%, landing battery near b_l, failure rate at most 5%",
            run_dir: Some("out/desk/train"),
        },
        ReproEntry {
            criterion: 9,
            artifact: "Fault-tolerance daily series",
            command: "patrol eval-fault --config configs/desk/fault_cr.toml",
            config: Some("configs/desk/fault_cr.toml"),
            expected: "agent counts 3,3,2,2,3,3 by day; per-day AVG within 20% of the steady state",
            run_dir: Some("out/desk/fault_cr"),
        },
        ReproEntry {
            criterion: 10,
            artifact: "Reactive baseline idleness table",
            command: "patrol eval-patrol --config configs/desk/patrol_cr.toml",
            config: Some("configs/desk/patrol_cr.toml"),
            expected: "no failures with dynamics off; AVG non-increasing in the agent count",
            run_dir: Some("out/desk/patrol_cr"),
        },
        ReproEntry {
            criterion: 11,
            artifact: "Battery table schema",
            command: "patrol eval-battery --config configs/desk/battery_cr.toml",
            config: Some("configs/desk/battery_cr.toml"),
            expected: "rows n = 1..8 with columns n,b_c,d_bc,F,d_F; NaN where a cell has no events",
            run_dir: Some("out/desk/battery_cr"),
        },
    ]
}

/// Status of one entry with respect to the files under `root`.
pub fn entry_status(entry: &ReproEntry, root: &Path) -> String {
    let Some(dir) = entry.run_dir else {
        return "test".to_string();
    };
    let dir = root.join(dir);
    match RunManifest::read(&dir) {
        Err(_) => "incomplete (no manifest)".to_string(),
        Ok(m) => {
            let stale = m.stale_outputs(&dir);
            if stale.is_empty() {
                format!("complete ({} outputs verified)", m.outputs.len())
            } else {
                format!("stale: {}", stale.join(", "))
            }
        }
    }
}

/// Markdown table of every entry. The output depends only on the entries
/// and the files under `root`, so regenerating it is idempotent.
pub fn generate_repro_index(entries: &[ReproEntry], root: &Path) -> String {
    let mut s = String::from("# Reproduction index\n\n| # | Artifact | Command | Config | Expected | Status |\n|---|---|---|---|---|---|\n");
    for e in entries {
        s += &format!(
            "| {} | {} | `{}` | {} | {} | {} |\n",
            e.criterion,
            e.artifact,
            e.command,
            e.config
                .map(|c| format!("`{c}`"))
                .unwrap_or_else(|| "-".into()),
            e.expected,
            entry_status(e, root)
        );
    }
    s
}
