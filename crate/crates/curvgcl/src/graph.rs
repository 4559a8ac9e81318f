//! Graph storage, task sequences, file formats, and synthetic generators.
//!
//! Graphs here are undirected, unweighted, self-loop-free, and immutable once
//! built. A continual-learning run consumes a [`TaskSequence`]: an ordered
//! list of task descriptors, each of which can produce a [`Graph`] on demand —
//! either by reading files referenced from a manifest or by running a seeded
//! synthetic generator. Only one task's graph is ever held by the trainer;
//! re-opening earlier tasks is the evaluation harness's business.
//!
//! # File formats
//!
//! - **Edge list** (`.txt`): UTF-8 text, one `u v` pair of 0-based node ids
//!   per line, whitespace separated. Lines starting with `#` are comments;
//!   the directive comment `# nodes: N` (first such line wins) declares the
//!   node count explicitly, which matters when trailing nodes are isolated.
//!   Duplicate and reversed pairs are deduplicated; self-loops are dropped
//!   with a warning on stderr.
//! - **Features** (`.csv`): one row per node, numeric cells, no header.
//! - **Labels** (`.csv`): one non-negative integer per row.
//! - **Masks** (`.csv`): one `0`/`1` per row.
//! - **Manifest** (`.toml`): a `[[task]]` array; each task names its files
//!   (paths relative to the manifest) and optionally its label-set size.
//!   See [`load_sequence`].
//!
//! # Labels are evaluation-only
//!
//! Training in this crate is self-supervised. To make that checkable rather
//! than aspirational, [`Graph::labels`] panics if called while a training
//! session is active (see [`LabelAccessGuard`]); the evaluation harness reads
//! labels only outside sessions.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sampling::{component_seed, normal, seeded_rng};
use crate::{Error, Result};

// ===== core graph type =====

/// An immutable undirected graph with optional node features, labels, masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Option<Array2<f64>>,
    labels: Option<Vec<usize>>,
    train_mask: Option<Vec<bool>>,
    test_mask: Option<Vec<bool>>,
}

impl Graph {
    /// Builds a graph from an edge list. Edges are normalized to `u < v`,
    /// deduplicated, and sorted. Self-loops and out-of-range ids are errors.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::GraphInvalid {
                detail: "graph must have at least one node".into(),
            });
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u == v {
                return Err(Error::GraphInvalid {
                    detail: format!("self-loop on node {u} is not allowed"),
                });
            }
            for id in [u, v] {
                if id >= n_nodes {
                    return Err(Error::NodeIndexOutOfRange {
                        context: "edge list",
                        index: id,
                        n_nodes,
                    });
                }
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n_nodes];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n_nodes,
            edges,
            neighbors,
            features: None,
            labels: None,
            train_mask: None,
            test_mask: None,
        })
    }

    /// Attaches a node-feature matrix (row per node).
    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.n_nodes {
            return Err(Error::GraphInvalid {
                detail: format!(
                    "feature matrix has {} rows for a graph with {} nodes",
                    features.nrows(),
                    self.n_nodes
                ),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::GraphInvalid {
                detail: "feature matrix contains non-finite values".into(),
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    /// Attaches per-node labels (evaluation-only data).
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n_nodes {
            return Err(Error::GraphInvalid {
                detail: format!(
                    "{} labels for a graph with {} nodes",
                    labels.len(),
                    self.n_nodes
                ),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attaches disjoint train/test masks.
    pub fn with_masks(mut self, train: Vec<bool>, test: Vec<bool>) -> Result<Self> {
        if train.len() != self.n_nodes || test.len() != self.n_nodes {
            return Err(Error::GraphInvalid {
                detail: format!(
                    "mask lengths ({}, {}) must equal the node count {}",
                    train.len(),
                    test.len(),
                    self.n_nodes
                ),
            });
        }
        if train.iter().zip(&test).any(|(a, b)| *a && *b) {
            return Err(Error::GraphInvalid {
                detail: "train and test masks overlap".into(),
            });
        }
        self.train_mask = Some(train);
        self.test_mask = Some(test);
        Ok(self)
    }

    /// Number of nodes.
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of (undirected) edges.
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// The normalized edge list (`u < v`, sorted, deduplicated).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list `N_i` (self excluded).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Degree of node `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Node features, if any were attached.
    pub fn features(&self) -> Option<&Array2<f64>> {
        self.features.as_ref()
    }

    /// The feature matrix training actually uses: attached features if
    /// present, otherwise [`degree_features`] as a structural fallback.
    pub fn input_features(&self) -> Array2<f64> {
        match &self.features {
            Some(f) => f.clone(),
            None => degree_features(self),
        }
    }

    /// Per-node labels.
    ///
    /// # Panics
    /// Panics if called while a [`LabelAccessGuard`] is armed on this thread,
    /// i.e. from inside a training session. Training is self-supervised; any
    /// label read on the training path is a bug, and this is the tripwire
    /// that turns it into a loud one.
    pub fn labels(&self) -> Option<&[usize]> {
        if label_guard_armed() {
            panic!(
                "labels were read during a training session; training is \
                 self-supervised and must never touch labels"
            );
        }
        self.labels.as_deref()
    }

    /// Training mask, if attached.
    pub fn train_mask(&self) -> Option<&[bool]> {
        self.train_mask.as_deref()
    }

    /// Test mask, if attached.
    pub fn test_mask(&self) -> Option<&[bool]> {
        self.test_mask.as_deref()
    }

    /// Dense adjacency matrix, optionally with ones on the diagonal
    /// (the `N̄_i = N_i ∪ {i}` convention used by attention masks).
    pub fn adjacency_matrix(&self, include_self: bool) -> Array2<f64> {
        let mut a = Array2::zeros((self.n_nodes, self.n_nodes));
        for &(u, v) in &self.edges {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        if include_self {
            for i in 0..self.n_nodes {
                a[(i, i)] = 1.0;
            }
        }
        a
    }
}

// ===== label access guard =====

thread_local! {
    static LABEL_GUARD_DEPTH: Cell<usize> = const { Cell::new(0) };
}

fn label_guard_armed() -> bool {
    LABEL_GUARD_DEPTH.with(|c| c.get() > 0)
}

/// RAII guard marking "a training session is running on this thread".
///
/// While any guard is alive, [`Graph::labels`] panics. The training loop arms
/// one for its whole duration; nothing else should.
pub struct LabelAccessGuard(());

impl LabelAccessGuard {
    /// Arms the guard for the current thread.
    pub fn arm() -> Self {
        LABEL_GUARD_DEPTH.with(|c| c.set(c.get() + 1));
        LabelAccessGuard(())
    }
}

impl Drop for LabelAccessGuard {
    fn drop(&mut self) {
        LABEL_GUARD_DEPTH.with(|c| c.set(c.get() - 1));
    }
}

// ===== degree features =====

/// Fixed-width structural node features:
/// `[degree, mean neighbor degree, max neighbor degree, min neighbor degree]`.
///
/// Isolated nodes get all zeros. This is both the fallback input
/// representation when a task has no node features and the input to the
/// learned curvature estimator.
pub fn degree_features(g: &Graph) -> Array2<f64> {
    let mut out = Array2::zeros((g.n_nodes(), 4));
    for i in 0..g.n_nodes() {
        let nbrs = g.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let degs: Vec<f64> = nbrs.iter().map(|&j| g.degree(j) as f64).collect();
        let sum: f64 = degs.iter().sum();
        out[(i, 0)] = nbrs.len() as f64;
        out[(i, 1)] = sum / degs.len() as f64;
        out[(i, 2)] = degs.iter().copied().fold(f64::MIN, f64::max);
        out[(i, 3)] = degs.iter().copied().fold(f64::MAX, f64::min);
    }
    out
}

// ===== loaders =====

/// Parses an edge-list file. See the module docs for the format.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();

    let mut declared_nodes: Option<usize> = None;
    let mut raw_edges: Vec<(usize, usize)> = Vec::new();
    let mut dropped_self_loops = 0usize;
    let mut max_id = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if declared_nodes.is_none() {
                if let Some(rest) = comment.trim().strip_prefix("nodes:") {
                    declared_nodes = rest.trim().parse::<usize>().ok();
                }
            }
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => {
                let parse = |tok: &str| {
                    tok.parse::<usize>().map_err(|_| Error::GraphFormat {
                        path: display.clone(),
                        line: lineno,
                        detail: format!("expected a node id, found '{tok}'"),
                    })
                };
                (parse(a)?, parse(b)?)
            }
            _ => {
                return Err(Error::GraphFormat {
                    path: display,
                    line: lineno,
                    detail: format!("expected 'u v', found '{trimmed}'"),
                })
            }
        };
        if u == v {
            dropped_self_loops += 1;
            continue;
        }
        max_id = max_id.max(u).max(v);
        raw_edges.push((u, v));
    }

    if dropped_self_loops > 0 {
        eprintln!("warning: {display}: dropped {dropped_self_loops} self-loop(s)");
    }
    let before_dedup = raw_edges.len();
    let n_nodes = match declared_nodes {
        Some(n) => n,
        None if raw_edges.is_empty() => {
            return Err(Error::GraphFormat {
                path: display,
                line: 0,
                detail: "no edges and no '# nodes: N' directive".into(),
            });
        }
        None => max_id + 1,
    };
    let g = Graph::new(n_nodes, &raw_edges).map_err(|e| match e {
        Error::NodeIndexOutOfRange { index, n_nodes, .. } => Error::GraphFormat {
            path: display.clone(),
            line: 0,
            detail: format!("node id {index} exceeds the declared node count {n_nodes}"),
        },
        other => other,
    })?;
    if g.n_edges() < before_dedup {
        eprintln!(
            "warning: {display}: deduplicated {} repeated/reversed edge(s) (graphs are undirected)",
            before_dedup - g.n_edges()
        );
    }
    Ok(g)
}

/// Reads a headerless numeric CSV into an `n × d` matrix.
pub fn load_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::GraphFormat {
            path: display.clone(),
            line: 0,
            detail: e.to_string(),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::GraphFormat {
            path: display.clone(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        let row: Vec<f64> = record
            .iter()
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| Error::GraphFormat {
                    path: display.clone(),
                    line: idx + 1,
                    detail: format!("non-numeric cell '{cell}'"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::GraphFormat {
                    path: display,
                    line: idx + 1,
                    detail: format!(
                        "ragged row: {} cells where earlier rows had {}",
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::GraphFormat {
            path: display,
            line: 0,
            detail: "empty feature file".into(),
        });
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / d;
    Array2::from_shape_vec((n, d), flat).map_err(|e| Error::GraphInvalid {
        detail: e.to_string(),
    })
}

/// Reads a one-integer-per-row CSV of class labels.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    read_single_column(path.as_ref(), "label", |cell, err| {
        cell.parse::<usize>().map_err(|_| err)
    })
}

/// Reads a one-`0`/`1`-per-row CSV mask.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    read_single_column(path.as_ref(), "mask value", |cell, err| match cell {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(err),
    })
}

fn read_single_column<T>(
    path: &Path,
    what: &str,
    parse: impl Fn(&str, Error) -> Result<T>,
) -> Result<Vec<T>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let err = Error::GraphFormat {
            path: display.clone(),
            line: lineno + 1,
            detail: format!("expected a {what}, found '{trimmed}'"),
        };
        out.push(parse(trimmed, err)?);
    }
    if out.is_empty() {
        return Err(Error::GraphFormat {
            path: display,
            line: 0,
            detail: format!("empty {what} file"),
        });
    }
    Ok(out)
}

// ===== task sequences =====

/// One task in a sequence: a name, its label-set size, and a recipe for
/// producing the graph (files on disk or a seeded generator).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSource {
    pub name: String,
    /// Label-set size `k`. Zero when the task carries no labels.
    pub classes: usize,
    kind: TaskKind,
}

#[derive(Debug, Clone, PartialEq)]
enum TaskKind {
    Files {
        edges: PathBuf,
        features: Option<PathBuf>,
        labels: Option<PathBuf>,
        train_mask: Option<PathBuf>,
        test_mask: Option<PathBuf>,
    },
    Synth(SynthSpec),
}

impl TaskSource {
    /// Materializes the task's graph. File tasks read from disk; synthetic
    /// tasks regenerate deterministically from their seed.
    pub fn load(&self) -> Result<Graph> {
        match &self.kind {
            TaskKind::Files {
                edges,
                features,
                labels,
                train_mask,
                test_mask,
            } => {
                let mut g = load_edge_list(edges)?;
                if let Some(f) = features {
                    g = g.with_features(load_features(f)?)?;
                }
                if let Some(l) = labels {
                    g = g.with_labels(load_labels(l)?)?;
                }
                if let (Some(tr), Some(te)) = (train_mask, test_mask) {
                    g = g.with_masks(load_mask(tr)?, load_mask(te)?)?;
                }
                Ok(g)
            }
            TaskKind::Synth(spec) => spec.generate(),
        }
    }
}

/// An ordered, non-empty list of tasks. Tasks arrive one at a time during
/// training; index 0 is the first task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    tasks: Vec<TaskSource>,
}

impl TaskSequence {
    /// Wraps a non-empty task list.
    pub fn new(tasks: Vec<TaskSource>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::ManifestInvalid {
                detail: "a task sequence needs at least one task".into(),
            });
        }
        Ok(Self { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tasks(&self) -> &[TaskSource] {
        &self.tasks
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    #[serde(default)]
    task: Vec<ManifestTask>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTask {
    name: Option<String>,
    classes: Option<usize>,
    edges: String,
    features: Option<String>,
    labels: Option<String>,
    train_mask: Option<String>,
    test_mask: Option<String>,
}

/// Parses a task-sequence manifest and validates that every referenced file
/// exists and that labeled tasks carry both masks.
///
/// Paths inside the manifest are resolved relative to the manifest file.
pub fn load_sequence(manifest_path: impl AsRef<Path>) -> Result<TaskSequence> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)?;
    let doc: ManifestDoc = toml::from_str(&text).map_err(|e| Error::ManifestInvalid {
        detail: e.to_string(),
    })?;
    if doc.task.is_empty() {
        return Err(Error::ManifestInvalid {
            detail: "manifest lists no tasks".into(),
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut tasks = Vec::with_capacity(doc.task.len());
    for (idx, t) in doc.task.into_iter().enumerate() {
        let name = t.name.unwrap_or_else(|| format!("task{}", idx + 1));
        let resolve = |rel: &str, what: &str| -> Result<PathBuf> {
            let p = base.join(rel);
            if !p.is_file() {
                return Err(Error::ManifestInvalid {
                    detail: format!("task '{name}': {what} file '{rel}' does not exist"),
                });
            }
            Ok(p)
        };
        let edges = resolve(&t.edges, "edge-list")?;
        let features = t.features.as_deref().map(|p| resolve(p, "feature")).transpose()?;
        let labels_path = t.labels.as_deref().map(|p| resolve(p, "label")).transpose()?;
        let train_mask = t
            .train_mask
            .as_deref()
            .map(|p| resolve(p, "train-mask"))
            .transpose()?;
        let test_mask = t
            .test_mask
            .as_deref()
            .map(|p| resolve(p, "test-mask"))
            .transpose()?;
        if labels_path.is_some() && (train_mask.is_none() || test_mask.is_none()) {
            return Err(Error::ManifestInvalid {
                detail: format!(
                    "task '{name}' has labels but is missing a train/test mask; \
                     labeled tasks need both for evaluation"
                ),
            });
        }
        let classes = match (t.classes, &labels_path) {
            (Some(k), _) => k,
            (None, Some(p)) => {
                let labels = load_labels(p)?;
                labels.iter().copied().max().map_or(0, |m| m + 1)
            }
            (None, None) => 0,
        };
        tasks.push(TaskSource {
            name,
            classes,
            kind: TaskKind::Files {
                edges,
                features,
                labels: labels_path,
                train_mask,
                test_mask,
            },
        });
    }
    TaskSequence::new(tasks)
}

// ===== synthetic generators =====

/// The graph family a synthetic task draws from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum TaskGenerator {
    /// A rooted tree where every internal node has `branching` children and
    /// leaves sit at depth `depth`. Communities: the root's subtrees.
    BalancedTree { branching: usize, depth: usize },
    /// `n_cliques` complete graphs of size `clique_size`, joined in a ring by
    /// single bridge edges. Communities: the cliques.
    CliqueRing { clique_size: usize, n_cliques: usize },
    /// G(n, p) with independent edges. Communities: a round-robin partition
    /// into `classes` groups (this family has no structural communities).
    ErdosRenyi { n: usize, p: f64 },
}

/// Specification of one synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub generator: TaskGenerator,
    /// Feature dimension d_in.
    pub feature_dim: usize,
    /// Number of classes. `0` means "derive from the generator" (branching
    /// count / clique count); Erdős–Rényi tasks must set it explicitly.
    #[serde(default)]
    pub classes: usize,
    /// Distance between per-class feature means (classes are separable
    /// Gaussians; 0 makes features uninformative).
    #[serde(default = "default_feature_offset")]
    pub feature_offset: f64,
    /// Fraction of each class assigned to the train mask.
    #[serde(default = "default_train_ratio")]
    pub train_ratio: f64,
    /// Seed for the graph, features, and masks. Same seed, same task.
    pub seed: u64,
}

fn default_feature_offset() -> f64 {
    1.0
}

fn default_train_ratio() -> f64 {
    0.5
}

impl SynthSpec {
    /// Number of classes after resolving the "derive from generator" default.
    pub fn resolved_classes(&self) -> Result<usize> {
        let k = match self.generator {
            TaskGenerator::BalancedTree { branching, .. } => {
                if self.classes == 0 {
                    branching
                } else {
                    self.classes
                }
            }
            TaskGenerator::CliqueRing { n_cliques, .. } => {
                if self.classes == 0 {
                    n_cliques
                } else {
                    self.classes
                }
            }
            TaskGenerator::ErdosRenyi { .. } => self.classes,
        };
        if k == 0 {
            return Err(Error::ConfigInvalid {
                detail: "erdos_renyi tasks must set 'classes' explicitly".into(),
            });
        }
        Ok(k)
    }

    /// Generates the task graph: topology, community labels, class-separable
    /// Gaussian features, and a stratified train/test split. Deterministic in
    /// `seed`.
    pub fn generate(&self) -> Result<Graph> {
        self.validate()?;
        let k = self.resolved_classes()?;
        let (n, edges, labels) = match self.generator {
            TaskGenerator::BalancedTree { branching, depth } => {
                generate_balanced_tree(branching, depth)
            }
            TaskGenerator::CliqueRing {
                clique_size,
                n_cliques,
            } => generate_clique_ring(clique_size, n_cliques),
            TaskGenerator::ErdosRenyi { n, p } => {
                let mut rng = seeded_rng(component_seed(self.seed, "synth.edges"));
                let mut edges = Vec::new();
                for u in 0..n {
                    for v in (u + 1)..n {
                        if rng.gen::<f64>() < p {
                            edges.push((u, v));
                        }
                    }
                }
                let labels = (0..n).map(|i| i % k).collect();
                (n, edges, labels)
            }
        };
        let labels: Vec<usize> = labels.into_iter().map(|c| c % k).collect();

        // Class-separable features: standard normal around a per-class mean
        // sitting `feature_offset` along a class-specific axis.
        let mut rng = seeded_rng(component_seed(self.seed, "synth.features"));
        let d = self.feature_dim;
        let mut features = Array2::zeros((n, d));
        for (i, &c) in labels.iter().enumerate() {
            for j in 0..d {
                let mean = if j == c % d { self.feature_offset } else { 0.0 };
                features[(i, j)] = mean + normal(&mut rng);
            }
        }

        // Stratified split: each class contributes ~train_ratio of its nodes
        // to the train mask, always at least one.
        let mut rng = seeded_rng(component_seed(self.seed, "synth.masks"));
        let mut train = vec![false; n];
        let mut test = vec![false; n];
        for c in 0..k {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            members.shuffle(&mut rng);
            let n_train = ((members.len() as f64 * self.train_ratio).round() as usize)
                .clamp(1, members.len());
            for (pos, &node) in members.iter().enumerate() {
                if pos < n_train {
                    train[node] = true;
                } else {
                    test[node] = true;
                }
            }
        }

        Graph::new(n, &edges)?
            .with_features(features)?
            .with_labels(labels)?
            .with_masks(train, test)
    }

    fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::ConfigInvalid { detail });
        match self.generator {
            TaskGenerator::BalancedTree { branching, depth } => {
                if branching < 2 {
                    return bad(format!("balanced_tree branching must be >= 2, got {branching}"));
                }
                if depth < 1 {
                    return bad("balanced_tree depth must be >= 1".into());
                }
            }
            TaskGenerator::CliqueRing {
                clique_size,
                n_cliques,
            } => {
                if clique_size < 3 {
                    return bad(format!("clique_ring clique_size must be >= 3, got {clique_size}"));
                }
                if n_cliques < 2 {
                    return bad(format!("clique_ring n_cliques must be >= 2, got {n_cliques}"));
                }
            }
            TaskGenerator::ErdosRenyi { n, p } => {
                if n < 2 {
                    return bad(format!("erdos_renyi n must be >= 2, got {n}"));
                }
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("erdos_renyi p must be in [0,1], got {p}"));
                }
            }
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.train_ratio) {
            return bad(format!("train_ratio must be in [0,1], got {}", self.train_ratio));
        }
        if !self.feature_offset.is_finite() {
            return bad("feature_offset must be finite".into());
        }
        Ok(())
    }
}

fn generate_balanced_tree(branching: usize, depth: usize) -> (usize, Vec<(usize, usize)>, Vec<usize>) {
    // Level-order ids: root 0, children of node i are b*i+1 .. b*i+b.
    let mut n = 1usize;
    let mut level = 1usize;
    for _ in 0..depth {
        level *= branching;
        n += level;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for child in 1..n {
        let parent = (child - 1) / branching;
        edges.push((parent, child));
    }
    // Community = which subtree of the root a node falls in; the root itself
    // joins community 0.
    let mut labels = vec![0usize; n];
    for node in 1..n {
        let mut cur = node;
        while (cur - 1) / branching != 0 {
            cur = (cur - 1) / branching;
        }
        labels[node] = cur - 1;
    }
    (n, edges, labels)
}

fn generate_clique_ring(clique_size: usize, n_cliques: usize) -> (usize, Vec<(usize, usize)>, Vec<usize>) {
    let n = clique_size * n_cliques;
    let mut edges = Vec::new();
    for c in 0..n_cliques {
        let base = c * clique_size;
        for a in 0..clique_size {
            for b in (a + 1)..clique_size {
                edges.push((base + a, base + b));
            }
        }
        // Bridge: this clique's anchor to the next clique's anchor.
        let next = ((c + 1) % n_cliques) * clique_size;
        edges.push((base, next));
    }
    let labels = (0..n).map(|i| i / clique_size).collect();
    (n, edges, labels)
}

/// Builds an in-memory synthetic task sequence from per-task specs.
pub fn synth_sequence(specs: &[SynthSpec]) -> Result<TaskSequence> {
    let mut tasks = Vec::with_capacity(specs.len());
    for (idx, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let classes = spec.resolved_classes()?;
        tasks.push(TaskSource {
            name: format!("task{}", idx + 1),
            classes,
            kind: TaskKind::Synth(spec.clone()),
        });
    }
    TaskSequence::new(tasks)
}

// ===== writers =====

/// The files written for one task by [`save_task`], as manifest-relative
/// path strings.
#[derive(Debug, Clone)]
pub struct TaskFiles {
    pub edges: String,
    pub features: Option<String>,
    pub labels: Option<String>,
    pub train_mask: Option<String>,
    pub test_mask: Option<String>,
}

/// Writes a graph's files under `dir/name/` and returns their relative paths.
pub fn save_task(dir: impl AsRef<Path>, name: &str, g: &Graph) -> Result<TaskFiles> {
    let dir = dir.as_ref();
    let task_dir = dir.join(name);
    std::fs::create_dir_all(&task_dir)?;

    let mut edge_text = format!("# nodes: {}\n", g.n_nodes());
    for &(u, v) in g.edges() {
        let _ = writeln!(edge_text, "{u} {v}");
    }
    std::fs::write(task_dir.join("edges.txt"), edge_text)?;

    let rel = |file: &str| format!("{name}/{file}");
    let mut files = TaskFiles {
        edges: rel("edges.txt"),
        features: None,
        labels: None,
        train_mask: None,
        test_mask: None,
    };

    if let Some(f) = g.features() {
        let mut text = String::new();
        for row in f.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(text, "{}", cells.join(","));
        }
        std::fs::write(task_dir.join("features.csv"), text)?;
        files.features = Some(rel("features.csv"));
    }
    if let Some(labels) = g.labels() {
        let mut text = String::new();
        for l in labels {
            let _ = writeln!(text, "{l}");
        }
        std::fs::write(task_dir.join("labels.csv"), text)?;
        files.labels = Some(rel("labels.csv"));
    }
    let write_mask = |mask: &[bool], file: &str| -> Result<()> {
        let mut text = String::new();
        for m in mask {
            let _ = writeln!(text, "{}", if *m { 1 } else { 0 });
        }
        std::fs::write(task_dir.join(file), text)?;
        Ok(())
    };
    if let Some(m) = g.train_mask() {
        write_mask(m, "train_mask.csv")?;
        files.train_mask = Some(rel("train_mask.csv"));
    }
    if let Some(m) = g.test_mask() {
        write_mask(m, "test_mask.csv")?;
        files.test_mask = Some(rel("test_mask.csv"));
    }
    Ok(files)
}

/// Writes a manifest for tasks previously written with [`save_task`].
/// Returns the manifest path.
pub fn save_sequence_manifest(
    dir: impl AsRef<Path>,
    tasks: &[(String, usize, TaskFiles)],
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut text = String::new();
    for (name, classes, files) in tasks {
        let _ = writeln!(text, "[[task]]");
        let _ = writeln!(text, "name = {name:?}");
        if *classes > 0 {
            let _ = writeln!(text, "classes = {classes}");
        }
        let _ = writeln!(text, "edges = {:?}", files.edges);
        if let Some(p) = &files.features {
            let _ = writeln!(text, "features = {p:?}");
        }
        if let Some(p) = &files.labels {
            let _ = writeln!(text, "labels = {p:?}");
        }
        if let Some(p) = &files.train_mask {
            let _ = writeln!(text, "train_mask = {p:?}");
        }
        if let Some(p) = &files.test_mask {
            let _ = writeln!(text, "test_mask = {p:?}");
        }
        text.push('\n');
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2)]).unwrap()
    }

    // ===== construction and invariants =====

    #[test]
    fn construction_normalizes_and_dedups_edges() {
        let g = Graph::new(3, &[(1, 0), (0, 1), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.degree(0), 1);
    }

    #[test]
    fn construction_rejects_self_loops_and_bad_ids() {
        assert!(Graph::new(3, &[(1, 1)]).is_err());
        assert!(Graph::new(3, &[(0, 3)]).is_err());
        assert!(Graph::new(0, &[]).is_err());
    }

    #[test]
    fn degree_sum_is_twice_the_edge_count() {
        let spec = SynthSpec {
            generator: TaskGenerator::ErdosRenyi { n: 40, p: 0.15 },
            feature_dim: 4,
            classes: 2,
            feature_offset: 1.0,
            train_ratio: 0.5,
            seed: 3,
        };
        let g = spec.generate().unwrap();
        let degree_sum: usize = (0..g.n_nodes()).map(|i| g.degree(i)).sum();
        assert_eq!(degree_sum, 2 * g.n_edges());
    }

    #[test]
    fn masks_must_be_disjoint() {
        let g = p3();
        assert!(g
            .clone()
            .with_masks(vec![true, true, false], vec![true, false, false])
            .is_err());
        assert!(g
            .with_masks(vec![true, false, false], vec![false, true, true])
            .is_ok());
    }

    // ===== label guard =====

    #[test]
    fn label_guard_trips_reads_during_training() {
        let g = p3().with_labels(vec![0, 1, 0]).unwrap();
        assert!(g.labels().is_some(), "reads outside a session are fine");
        let result = std::panic::catch_unwind(|| {
            let _guard = LabelAccessGuard::arm();
            let _ = g.labels();
        });
        assert!(result.is_err(), "armed guard must panic on label access");
        // Guard must have disarmed on unwind.
        assert!(g.labels().is_some());
    }

    // ===== degree features =====

    #[test]
    fn degree_features_match_hand_counts() {
        let g = p3();
        let f = degree_features(&g);
        assert_eq!(f.row(1).to_vec(), vec![2.0, 1.0, 1.0, 1.0]);
        assert_eq!(f.row(0).to_vec(), vec![1.0, 2.0, 2.0, 2.0]);

        let triangle = Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let f = degree_features(&triangle);
        assert_eq!(f.row(0).to_vec(), vec![2.0, 2.0, 2.0, 2.0]);

        let isolated = Graph::new(2, &[]).unwrap();
        let f = degree_features(&isolated);
        assert_eq!(f.row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0]);
    }

    // ===== loaders =====

    #[test]
    fn edge_list_parses_dedups_and_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.txt");

        std::fs::write(&path, "0 1\n1 2\n").unwrap();
        let g = load_edge_list(&path).unwrap();
        assert_eq!((g.n_nodes(), g.n_edges()), (3, 2));

        std::fs::write(&path, "0 1\n1 0\n").unwrap();
        let g = load_edge_list(&path).unwrap();
        assert_eq!(g.n_edges(), 1);

        std::fs::write(&path, "0 1\n0 x\n").unwrap();
        match load_edge_list(&path) {
            Err(Error::GraphFormat { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error with line number, got {other:?}"),
        }
    }

    #[test]
    fn edge_list_nodes_directive_preserves_isolated_tail_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.txt");
        std::fs::write(&path, "# nodes: 5\n0 1\n").unwrap();
        let g = load_edge_list(&path).unwrap();
        assert_eq!(g.n_nodes(), 5);
        assert_eq!(g.degree(4), 0);
    }

    #[test]
    fn feature_loader_rejects_ragged_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");

        std::fs::write(&path, "1.0,2.0\n3.0,4.0\n5.5,-1.25\n").unwrap();
        let m = load_features(&path).unwrap();
        assert_eq!(m.shape(), &[3, 2]);
        assert_eq!(m[(2, 1)], -1.25);

        std::fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        assert!(load_features(&path).is_err());

        std::fs::write(&path, "").unwrap();
        assert!(load_features(&path).is_err());
    }

    // ===== manifest =====

    #[test]
    fn manifest_round_trips_through_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            generator: TaskGenerator::CliqueRing {
                clique_size: 4,
                n_cliques: 3,
            },
            feature_dim: 5,
            classes: 0,
            feature_offset: 1.0,
            train_ratio: 0.5,
            seed: 9,
        };
        let g = spec.generate().unwrap();
        let files = save_task(dir.path(), "ringy", &g).unwrap();
        let manifest =
            save_sequence_manifest(dir.path(), &[("ringy".into(), 3, files)]).unwrap();

        let seq = load_sequence(&manifest).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.tasks()[0].classes, 3);
        let reloaded = seq.tasks()[0].load().unwrap();
        assert_eq!(reloaded.n_nodes(), g.n_nodes());
        assert_eq!(reloaded.edges(), g.edges());
        assert_eq!(reloaded.labels(), g.labels());
        assert_eq!(reloaded.train_mask(), g.train_mask());
        // Feature text goes through shortest-round-trip float formatting, so
        // reloaded values are bit-identical.
        assert_eq!(reloaded.features().unwrap(), g.features().unwrap());
    }

    #[test]
    fn manifest_errors_name_the_offending_task() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("e.txt"), "0 1\n").unwrap();
        std::fs::write(dir.path().join("l.csv"), "0\n1\n").unwrap();
        let manifest = dir.path().join("manifest.toml");

        std::fs::write(
            &manifest,
            "[[task]]\nname = \"broken\"\nedges = \"missing.txt\"\n",
        )
        .unwrap();
        match load_sequence(&manifest) {
            Err(Error::ManifestInvalid { detail }) => assert!(detail.contains("broken")),
            other => panic!("expected ManifestInvalid, got {other:?}"),
        }

        std::fs::write(
            &manifest,
            "[[task]]\nname = \"nomask\"\nedges = \"e.txt\"\nlabels = \"l.csv\"\n",
        )
        .unwrap();
        match load_sequence(&manifest) {
            Err(Error::ManifestInvalid { detail }) => assert!(detail.contains("nomask")),
            other => panic!("expected ManifestInvalid, got {other:?}"),
        }
    }

    // ===== generators =====

    #[test]
    fn balanced_tree_has_the_textbook_node_and_edge_count() {
        let spec = SynthSpec {
            generator: TaskGenerator::BalancedTree { branching: 2, depth: 4 },
            feature_dim: 3,
            classes: 0,
            feature_offset: 1.0,
            train_ratio: 0.5,
            seed: 1,
        };
        let g = spec.generate().unwrap();
        assert_eq!(g.n_nodes(), 31);
        assert_eq!(g.n_edges(), 30);
        assert_eq!(spec.resolved_classes().unwrap(), 2);
        // Root subtree communities are near-balanced.
        let labels = g.labels().unwrap();
        let ones = labels.iter().filter(|&&c| c == 1).count();
        assert_eq!(ones, 15);
    }

    #[test]
    fn clique_ring_is_complete_per_clique_plus_bridges() {
        let spec = SynthSpec {
            generator: TaskGenerator::CliqueRing {
                clique_size: 4,
                n_cliques: 3,
            },
            feature_dim: 3,
            classes: 0,
            feature_offset: 1.0,
            train_ratio: 0.5,
            seed: 1,
        };
        let g = spec.generate().unwrap();
        assert_eq!(g.n_nodes(), 12);
        assert_eq!(g.n_edges(), 3 * 6 + 3);
        // Every intra-clique pair is connected.
        for c in 0..3 {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let (u, v) = (c * 4 + a, c * 4 + b);
                    assert!(g.neighbors(u).contains(&v), "missing clique edge {u}-{v}");
                }
            }
        }
    }

    #[test]
    fn same_seed_regenerates_identical_tasks() {
        let spec = SynthSpec {
            generator: TaskGenerator::ErdosRenyi { n: 30, p: 0.2 },
            feature_dim: 6,
            classes: 3,
            feature_offset: 1.5,
            train_ratio: 0.6,
            seed: 42,
        };
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a, b);

        let different = SynthSpec { seed: 43, ..spec }.generate().unwrap();
        assert_ne!(a.features().unwrap(), different.features().unwrap());
    }

    #[test]
    fn stratified_split_gives_every_class_a_train_node() {
        let spec = SynthSpec {
            generator: TaskGenerator::CliqueRing {
                clique_size: 5,
                n_cliques: 4,
            },
            feature_dim: 4,
            classes: 0,
            feature_offset: 1.0,
            train_ratio: 0.4,
            seed: 5,
        };
        let g = spec.generate().unwrap();
        let labels = g.labels().unwrap();
        let train = g.train_mask().unwrap();
        for c in 0..4 {
            let has_train = (0..g.n_nodes()).any(|i| labels[i] == c && train[i]);
            assert!(has_train, "class {c} has no training node");
        }
    }

    #[test]
    fn synth_sequence_validates_and_orders_tasks() {
        let specs = vec![
            SynthSpec {
                generator: TaskGenerator::BalancedTree { branching: 2, depth: 3 },
                feature_dim: 4,
                classes: 0,
                feature_offset: 1.0,
                train_ratio: 0.5,
                seed: 0,
            },
            SynthSpec {
                generator: TaskGenerator::ErdosRenyi { n: 20, p: 0.3 },
                feature_dim: 4,
                classes: 2,
                feature_offset: 1.0,
                train_ratio: 0.5,
                seed: 1,
            },
        ];
        let seq = synth_sequence(&specs).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.tasks()[0].name, "task1");
        assert_eq!(seq.tasks()[1].classes, 2);

        let bad = vec![SynthSpec {
            generator: TaskGenerator::ErdosRenyi { n: 20, p: 0.3 },
            feature_dim: 4,
            classes: 0, // ER cannot derive a class count
            feature_offset: 1.0,
            train_ratio: 0.5,
            seed: 1,
        }];
        assert!(synth_sequence(&bad).is_err());
    }
}
