//! The `curvature` command: standalone curvature inspection for graph files.
//!
//! For each edge list this prints the raw mean edge curvature and the
//! combinatorial κ estimate derived from it; with `--checkpoint` it adds the
//! learned estimator's κ, so a trained run can be compared against the
//! structural baseline graph by graph.

use std::path::Path;

use curvgcl::checkpoint;
use curvgcl::curvature::{curvnet_forward, forman_graph_curvature, forman_oracle};
use curvgcl::graph::load_edge_list;
use curvgcl::Result;

pub fn cmd_curvature(graphs: &[std::path::PathBuf], ckpt: Option<&Path>) -> Result<()> {
    let state = match ckpt {
        Some(path) => Some(checkpoint::load(path)?.0),
        None => None,
    };
    for path in graphs {
        let g = load_edge_list(path)?;
        let raw = forman_graph_curvature(&g)?;
        let oracle = forman_oracle(&g)?;
        let learned = match &state {
            Some(s) => format!(", learned kappa {}", curvnet_forward(&g, &s.curvnet)?.value()),
            None => String::new(),
        };
        println!(
            "{}: {} nodes, {} edges, mean edge curvature {raw}, combinatorial kappa {}{learned}",
            path.display(),
            g.n_nodes(),
            g.n_edges(),
            oracle.value()
        );
    }
    Ok(())
}
