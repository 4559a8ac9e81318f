//! The `run` command: train a task sequence once per seed, evaluate every
//! seen task after every session, and leave a complete, reproducible paper
//! trail in the output directory.
//!
//! Layout written for a run with seeds 0 and 1 over three tasks:
//!
//! ```text
//! out/
//!   config.toml            exact merged configuration (provenance)
//!   metrics.csv            per-seed PM/FM plus mean and spread rows
//!   report.txt             human-readable summary
//!   seed_0/
//!     task_0.ckpt …        state after each session
//!     loss_task_0.csv …    per-epoch loss and κ trace
//!     kappa.csv            final κ per task
//!     accuracy_matrix.csv  accuracy of state t on tasks 0..=t
//!     distortion.csv       final-state distortion per task
//!   seed_1/ …
//! ```
//!
//! Nothing written here depends on wall-clock time or scheduling, so a rerun
//! with the same config produces bit-identical files — with or without
//! `--parallel-seeds`.

use std::fmt::Write as _;
use std::path::Path;

use curvgcl::distill::{run_sequence, StudentState};
use curvgcl::eval::{distortion, embed_task, eval_task, pm_fm, AccuracyMatrix, DistortionReport};
use curvgcl::graph::{load_sequence, synth_sequence, Graph, TaskSequence};
use curvgcl::{Error, Result};

use crate::config::RunConfig;

/// Everything one seed contributes to the cross-seed summary. The per-seed
/// files are already on disk by the time this is returned.
struct SeedOutcome {
    seed: u64,
    pm: f64,
    /// `None` for single-task sequences, where forgetting is undefined.
    fm: Option<f64>,
    final_kappas: Vec<f64>,
    distortions: Vec<DistortionReport>,
}

pub fn cmd_run(cfg: &RunConfig, parallel_seeds: bool) -> Result<()> {
    let seq = match &cfg.manifest {
        Some(path) => load_sequence(path)?,
        None => synth_sequence(&cfg.synth)?,
    };

    // Materialize every task once for validation and evaluation. The training
    // loop still loads and drops graphs one at a time — only this harness
    // holds the full set.
    let graphs: Vec<Graph> = seq
        .tasks()
        .iter()
        .map(|t| t.load())
        .collect::<Result<_>>()?;
    preflight(cfg, &seq, &graphs)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.echo_toml())?;

    let outcomes: Vec<SeedOutcome> = if parallel_seeds {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let (seq, graphs) = (&seq, &graphs);
                    scope.spawn(move || run_one_seed(cfg, seq, graphs, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        cfg.seeds
            .iter()
            .map(|&seed| run_one_seed(cfg, &seq, &graphs, seed))
            .collect::<Result<_>>()?
    };

    std::fs::write(cfg.out_dir.join("metrics.csv"), metrics_csv(&outcomes))?;
    std::fs::write(cfg.out_dir.join("report.txt"), report(cfg, &seq, &graphs, &outcomes))?;
    println!(
        "run complete: {} task(s) x {} seed(s) -> {}",
        seq.len(),
        cfg.seeds.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

/// Rejects, before any training, every problem that would otherwise surface
/// mid-run: unlabeled tasks (the accuracy matrix needs labels) and feature
/// widths that do not match the encoder's input layer.
fn preflight(cfg: &RunConfig, seq: &TaskSequence, graphs: &[Graph]) -> Result<()> {
    let d_in = cfg.layer_dims[0];
    for (task, g) in seq.tasks().iter().zip(graphs) {
        let width = g.input_features().ncols();
        if width != d_in {
            return Err(Error::ConfigInvalid {
                detail: format!(
                    "task '{}' has input width {width} but layer_dims starts at {d_in}",
                    task.name
                ),
            });
        }
        if g.labels().is_none() || g.train_mask().is_none() || g.test_mask().is_none() {
            return Err(Error::ConfigInvalid {
                detail: format!(
                    "task '{}' has no labels/masks; `run` evaluates every task and needs them",
                    task.name
                ),
            });
        }
    }
    Ok(())
}

/// One full continual pass for one seed: train the sequence, then score
/// every prefix. Writes the seed's files and returns its summary numbers.
fn run_one_seed(
    cfg: &RunConfig,
    seq: &TaskSequence,
    graphs: &[Graph],
    seed: u64,
) -> Result<SeedOutcome> {
    let dcfg = cfg.to_distill(seed)?;
    let seed_dir = cfg.out_dir.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&seed_dir)?;

    let init = StudentState::init(&cfg.layer_dims, cfg.curvnet_hidden, cfg.kappa_scale, seed);
    let (states, logs) = run_sequence(seq, init, &dcfg, Some(&seed_dir))?;

    for (t, log) in logs.iter().enumerate() {
        std::fs::write(seed_dir.join(format!("loss_task_{t}.csv")), log.to_csv())?;
    }
    write_kappa_csv(&seed_dir, seq, &states)?;

    // Accuracy of the state after session t on every task seen so far. The
    // harness re-opens old graphs; the learner never did.
    let mut acc = AccuracyMatrix::new();
    for (t, state) in states.iter().enumerate() {
        let row: Vec<f64> = (0..=t)
            .map(|i| eval_task(state, &graphs[i], dcfg.curvature_mode))
            .collect::<Result<_>>()?;
        acc.push_row(row)?;
    }
    std::fs::write(seed_dir.join("accuracy_matrix.csv"), acc.to_csv())?;

    let last = states.last().expect("sequences are non-empty");
    let mut distortions = Vec::with_capacity(graphs.len());
    let mut dist_csv = String::from("task,name,distortion,pairs_used,pairs_skipped\n");
    for (i, g) in graphs.iter().enumerate() {
        let (emb, _) = embed_task(last, g, dcfg.curvature_mode)?;
        let d = distortion(g, &emb)?;
        let _ = writeln!(
            dist_csv,
            "{i},{},{},{},{}",
            seq.tasks()[i].name,
            d.value,
            d.pairs_used,
            d.pairs_skipped
        );
        distortions.push(d);
    }
    std::fs::write(seed_dir.join("distortion.csv"), dist_csv)?;

    let (pm, fm) = match pm_fm(&acc) {
        Ok((pm, fm)) => (pm, Some(fm)),
        Err(Error::FmUndefined) => (
            acc.performance_mean().expect("at least one task"),
            None,
        ),
        Err(e) => return Err(e),
    };
    Ok(SeedOutcome {
        seed,
        pm,
        fm,
        final_kappas: states.iter().map(|s| s.kappa.value()).collect(),
        distortions,
    })
}

fn write_kappa_csv(seed_dir: &Path, seq: &TaskSequence, states: &[StudentState]) -> Result<()> {
    let mut text = String::from("task,name,kappa\n");
    for (t, state) in states.iter().enumerate() {
        let _ = writeln!(text, "{t},{},{}", seq.tasks()[t].name, state.kappa.value());
    }
    std::fs::write(seed_dir.join("kappa.csv"), text)?;
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; 0 for a single value.
fn spread(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// `metrics.csv`: one row per seed, then `mean` and `spread` rows. FM cells
/// stay empty for single-task sequences.
fn metrics_csv(outcomes: &[SeedOutcome]) -> String {
    let mut text = String::from("seed,pm,fm\n");
    for o in outcomes {
        let fm = o.fm.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(text, "{},{},{fm}", o.seed, o.pm);
    }
    let pms: Vec<f64> = outcomes.iter().map(|o| o.pm).collect();
    let fms: Vec<f64> = outcomes.iter().filter_map(|o| o.fm).collect();
    if fms.is_empty() {
        let _ = writeln!(text, "mean,{},", mean(&pms));
        let _ = writeln!(text, "spread,{},", spread(&pms));
    } else {
        let _ = writeln!(text, "mean,{},{}", mean(&pms), mean(&fms));
        let _ = writeln!(text, "spread,{},{}", spread(&pms), spread(&fms));
    }
    text
}

fn mode_label<T: clap::ValueEnum>(v: T) -> String {
    v.to_possible_value()
        .expect("mode variants are not skipped")
        .get_name()
        .to_string()
}

fn report(
    cfg: &RunConfig,
    seq: &TaskSequence,
    graphs: &[Graph],
    outcomes: &[SeedOutcome],
) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "continual run: {} task(s), {} seed(s)", seq.len(), outcomes.len());
    let _ = writeln!(r);
    let _ = writeln!(r, "tasks");
    for (i, (task, g)) in seq.tasks().iter().zip(graphs).enumerate() {
        let _ = writeln!(
            r,
            "  {i}: {} — {} nodes, {} edges, {} classes",
            task.name,
            g.n_nodes(),
            g.n_edges(),
            task.classes
        );
    }
    let _ = writeln!(r);
    let _ = writeln!(
        r,
        "encoder dims {:?}, curvnet hidden {}, kappa scale {}",
        cfg.layer_dims, cfg.curvnet_hidden, cfg.kappa_scale
    );
    let _ = writeln!(
        r,
        "lambda {}, tau {}, lr {}, epochs_max {}, patience {}",
        cfg.lambda, cfg.tau, cfg.lr, cfg.epochs_max, cfg.patience
    );
    let fixed = cfg
        .fixed_kappa
        .map(|k| format!(" (kappa = {k})"))
        .unwrap_or_default();
    let _ = writeln!(
        r,
        "curvature {}{fixed}, similarity {}, denominator {}",
        mode_label(cfg.curvature_mode),
        mode_label(cfg.similarity_mode),
        mode_label(cfg.denominator_mode)
    );
    let _ = writeln!(r);
    let _ = writeln!(r, "per-seed results");
    for o in outcomes {
        let fm = o
            .fm
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined (single task)".into());
        let _ = writeln!(r, "  seed {}: pm {:.4}, fm {fm}", o.seed, o.pm);
        let kappas: Vec<String> = o.final_kappas.iter().map(|k| format!("{k:.4}")).collect();
        let _ = writeln!(r, "    final kappa per task: {}", kappas.join(", "));
        let dist: Vec<String> = o
            .distortions
            .iter()
            .map(|d| format!("{:.4}", d.value))
            .collect();
        let _ = writeln!(r, "    final-state distortion per task: {}", dist.join(", "));
    }
    let _ = writeln!(r);
    let pms: Vec<f64> = outcomes.iter().map(|o| o.pm).collect();
    let fms: Vec<f64> = outcomes.iter().filter_map(|o| o.fm).collect();
    let _ = writeln!(r, "summary over seeds (spread = sample standard deviation)");
    let _ = writeln!(r, "  pm: mean {:.4}, spread {:.4}", mean(&pms), spread(&pms));
    if fms.is_empty() {
        let _ = writeln!(r, "  fm: undefined (single task)");
    } else {
        let _ = writeln!(r, "  fm: mean {:.4}, spread {:.4}", mean(&fms), spread(&fms));
    }
    r
}
