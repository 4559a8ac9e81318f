//! The `eval` command: load a checkpoint, embed every task in a manifest
//! with the frozen parameters, and print accuracy (where labels exist) and
//! distortion per task.
//!
//! The accuracy numbers go through the same code path as `run`'s matrix, so
//! evaluating a run's final checkpoint against its own manifest reproduces
//! the matrix's last row exactly.

use std::path::Path;

use curvgcl::checkpoint;
use curvgcl::eval::{distortion, embed_task, eval_task};
use curvgcl::graph::load_sequence;
use curvgcl::Result;

use crate::config::{resolve_curvature_mode, CurvatureModeCfg};

pub fn cmd_eval(
    ckpt_path: &Path,
    manifest_path: &Path,
    mode_cfg: CurvatureModeCfg,
    fixed_kappa: Option<f64>,
) -> Result<()> {
    let mode = resolve_curvature_mode(mode_cfg, fixed_kappa)?;
    let (state, meta) = checkpoint::load(ckpt_path)?;
    let seq = load_sequence(manifest_path)?;

    println!(
        "checkpoint: after task {}, seed {}, config hash {:016x}",
        meta.task_index, meta.seed, meta.config_hash
    );

    let mut accuracies: Vec<f64> = Vec::new();
    for task in seq.tasks() {
        let g = task.load()?;
        let (emb, kappa) = embed_task(&state, &g, mode)?;
        let d = distortion(&g, &emb)?;
        let labeled = g.labels().is_some() && g.train_mask().is_some() && g.test_mask().is_some();
        let acc_text = if labeled {
            let a = eval_task(&state, &g, mode)?;
            accuracies.push(a);
            format!("accuracy {a}")
        } else {
            "accuracy n/a (no labels)".to_string()
        };
        println!(
            "task {}: kappa {}, {acc_text}, distortion {} ({} pairs used, {} skipped)",
            task.name,
            kappa.value(),
            d.value,
            d.pairs_used,
            d.pairs_skipped
        );
    }
    if !accuracies.is_empty() {
        let row: Vec<String> = accuracies.iter().map(|a| a.to_string()).collect();
        let pm = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        println!("accuracy row: {}", row.join(","));
        println!("accuracy mean: {pm}");
    }
    Ok(())
}
