//! The `synth` command: materialize synthetic tasks as plain files plus a
//! manifest, so the same dataset can be rerun, shared, or hand-inspected.
//!
//! Input is a TOML file of `[[task]]` tables, each one a synthetic-task
//! description (the same schema as `[[synth]]` entries in a run config):
//!
//! ```text
//! [[task]]
//! generator = "balanced_tree"
//! branching = 2
//! depth = 4
//! feature_dim = 8
//! seed = 7
//! ```

use std::path::Path;

use curvgcl::graph::{save_sequence_manifest, save_task, SynthSpec, TaskFiles};
use curvgcl::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthManifest {
    #[serde(default)]
    task: Vec<SynthSpec>,
}

pub fn cmd_synth(spec_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)?;
    let manifest: SynthManifest = toml::from_str(&text).map_err(|e| Error::ConfigInvalid {
        detail: e.to_string(),
    })?;
    if manifest.task.is_empty() {
        return Err(Error::ConfigInvalid {
            detail: "synth spec lists no [[task]] tables".into(),
        });
    }

    let mut entries: Vec<(String, usize, TaskFiles)> = Vec::with_capacity(manifest.task.len());
    for (i, spec) in manifest.task.iter().enumerate() {
        let name = format!("task{}", i + 1);
        let g = spec.generate()?;
        let files = save_task(out, &name, &g)?;
        println!(
            "wrote {name}: {} nodes, {} edges, {} classes",
            g.n_nodes(),
            g.n_edges(),
            spec.resolved_classes()?
        );
        entries.push((name, spec.resolved_classes()?, files));
    }
    let manifest_path = save_sequence_manifest(out, &entries)?;
    println!("manifest: {}", manifest_path.display());
    Ok(())
}
