//! Frozen-encoder evaluation: distance-based classification, the continual
//! metrics (performance mean, forgetting mean), embedding distortion, and
//! the tangent-space ablation bridge.
//!
//! Evaluation is the only place labels are read. The trained encoder is
//! frozen; class prototypes are uniform-weight manifold centroids of each
//! class's training embeddings, and a node is assigned to the nearest
//! prototype by geodesic distance. Accuracies collect into a
//! lower-triangular [`AccuracyMatrix`] `a[t][i]` — task `i`'s test accuracy
//! after training through task `t` — from which
//!
//! ```text
//! PM = (1/T)·Σ_i a[T][i]              (how well everything works now)
//! FM = (1/(T−1))·Σ_{i<T} (a[T][i] − a[i][i])   (negative ⇒ forgetting)
//! ```
//!
//! Distortion measures how faithfully an embedding preserves the graph
//! metric: edge lengths are geodesic distances between endpoint embeddings,
//! `d_G` is the shortest-path metric over those lengths, and
//! `D = (1/|V|²)·Σ |1 − d_M/d_G|` over ordered pairs. Self-pairs and
//! unreachable pairs are skipped but the denominator stays `|V|²` (the
//! formula read literally); the report carries both counts so the skipped
//! mass is visible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::curvature::{curvnet_forward, forman_oracle};
use crate::distill::{CurvatureMode, StudentState};
use crate::encoder::{aggregate, encode};
use crate::geometry::{distance_matrix, exp0_rows, log0_rows};
use crate::graph::Graph;
use crate::manifold::{distance, Curvature, ManifoldPoint};
use crate::{Error, Result};

// ===== accuracy bookkeeping =====

/// Lower-triangular accuracy record: `row t` holds task `0..=t`'s test
/// accuracies measured after training through task `t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the row measured after one more training session. Row `t`
    /// must hold exactly `t+1` accuracies, each in `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::DimensionMismatch {
                context: "accuracy matrix row",
                expected: self.rows.len() + 1,
                actual: row.len(),
            });
        }
        if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::ConfigInvalid {
                detail: format!("accuracies must lie in [0,1], got {row:?}"),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of completed training sessions (rows).
    pub fn n_tasks(&self) -> usize {
        self.rows.len()
    }

    /// `a[t][i]`: task `i`'s accuracy after training task `t` (`i ≤ t`).
    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.rows[t][i]
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        self.rows.last().map(|r| r.as_slice())
    }

    /// Mean of the final row — defined for any `T ≥ 1`.
    pub fn performance_mean(&self) -> Option<f64> {
        self.last_row()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
    }

    /// CSV with one row per session; upper-triangle cells stay empty.
    pub fn to_csv(&self) -> String {
        let t = self.rows.len();
        let mut out = String::from("after_task");
        for i in 0..t {
            out.push_str(&format!(",task_{i}"));
        }
        out.push('\n');
        for (ti, row) in self.rows.iter().enumerate() {
            out.push_str(&ti.to_string());
            for i in 0..t {
                out.push(',');
                if let Some(a) = row.get(i) {
                    out.push_str(&a.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Performance mean and forgetting mean of a completed run.
///
/// Errors with [`Error::FmUndefined`] when only one task exists — there is
/// nothing to forget yet.
pub fn pm_fm(acc: &AccuracyMatrix) -> Result<(f64, f64)> {
    let t = acc.n_tasks();
    assert!(t >= 1, "accuracy matrix must have at least one row");
    let pm = acc.performance_mean().unwrap();
    if t == 1 {
        return Err(Error::FmUndefined);
    }
    let last = acc.last_row().unwrap();
    let fm = (0..t - 1)
        .map(|i| last[i] - acc.get(i, i))
        .sum::<f64>()
        / (t - 1) as f64;
    Ok((pm, fm))
}

// ===== classification =====

/// Nearest-prototype classification on the manifold. Prototypes are
/// uniform-weight centroids of each class's training embeddings; ties go to
/// the smaller class id.
pub fn classify(
    train: &[ManifoldPoint],
    labels: &[usize],
    test: &[ManifoldPoint],
    n_classes: usize,
    kappa: Curvature,
) -> Result<Vec<usize>> {
    assert_eq!(train.len(), labels.len(), "one label per training point");
    assert!(n_classes >= 1, "need at least one class");
    let mut prototypes = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let members: Vec<ManifoldPoint> = train
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p.clone())
            .collect();
        if members.is_empty() {
            return Err(Error::ClassEmpty { class: c });
        }
        let weights = vec![1.0 / members.len() as f64; members.len()];
        prototypes.push(aggregate(&members, &weights, kappa)?);
    }
    let mut out = Vec::with_capacity(test.len());
    for p in test {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, proto) in prototypes.iter().enumerate() {
            let d = distance(p, proto)?;
            // Strict less-than keeps the first (smallest) class on ties.
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

// ===== distortion =====

/// Distortion value plus the pair census behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionReport {
    /// `(1/|V|²)·Σ |1 − d_M/d_G|` over the used pairs.
    pub value: f64,
    /// Ordered pairs with finite positive shortest-path distance.
    pub pairs_used: usize,
    /// Self-pairs, disconnected pairs, and zero-length paths.
    pub pairs_skipped: usize,
}

/// How far the embedding's geodesic metric strays from the shortest-path
/// metric it induces on the graph.
pub fn distortion(g: &Graph, embeddings: &[ManifoldPoint]) -> Result<DistortionReport> {
    let n = g.n_nodes();
    assert_eq!(embeddings.len(), n, "one embedding per node");

    // Edge lengths: geodesic distances between endpoint embeddings.
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(u, v) in g.edges() {
        let w = distance(&embeddings[u], &embeddings[v])?;
        adj[u].push((v, w));
        adj[v].push((u, w));
    }

    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut total = 0.0;
    for src in 0..n {
        let dist_g = shortest_paths(n, &adj, src);
        for dst in 0..n {
            if src == dst || !dist_g[dst].is_finite() || dist_g[dst] <= 0.0 {
                skipped += 1;
                continue;
            }
            let dm = distance(&embeddings[src], &embeddings[dst])?;
            total += (1.0 - dm / dist_g[dst]).abs();
            used += 1;
        }
    }
    Ok(DistortionReport {
        value: total / (n * n) as f64,
        pairs_used: used,
        pairs_skipped: skipped,
    })
}

/// Min-heap entry for Dijkstra (std's heap is a max-heap, so the ordering
/// is reversed).
struct HeapEntry(f64, usize);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}

fn shortest_paths(n: usize, adj: &[Vec<(usize, f64)>], src: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; n];
    dist[src] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry(0.0, src));
    while let Some(HeapEntry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let cand = d + w;
            if cand < dist[v] {
                dist[v] = cand;
                heap.push(HeapEntry(cand, v));
            }
        }
    }
    dist
}

// ===== tangent-space ablation bridge =====

/// The parameter-free stand-in for the Lorentz projection: log at the
/// source origin, pad/truncate the spatial vector to the target width, exp
/// at the target origin, then negated distance.
pub fn tangent_baseline_similarity(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    let kappa_in = x.curvature();
    let kappa_out = y.curvature();
    let o_in = crate::manifold::origin(x.dim(), kappa_in);
    let t = crate::manifold::log_map(&o_in, x)?;
    let mut resized = ndarray::Array1::zeros(y.dim() + 1);
    let keep = x.dim().min(y.dim());
    for j in 0..keep {
        resized[j + 1] = t.coords()[j + 1];
    }
    let o_out = crate::manifold::origin(y.dim(), kappa_out);
    let v = crate::manifold::TangentVector::new(resized, o_out.clone())?;
    let z = crate::manifold::exp_map(&o_out, &v);
    Ok(-distance(&z, y)?)
}

/// Tape form of the ablation bridge over row stacks:
/// `Sim_ij = −d(exp_O^{κ_out}(resize(log_O^{κ_in}(x_i))), y_j)`.
pub fn tangent_similarity_matrix(
    tape: &mut Tape,
    x: Var,
    y: Var,
    kappa_in: Var,
    kappa_out: Var,
) -> Var {
    let (n, x_cols) = tape.shape(x);
    let (_, y_cols) = tape.shape(y);
    let d_in = x_cols - 1;
    let d_out = y_cols - 1;
    let t = log0_rows(tape, x, kappa_in);
    let resized = match d_out.cmp(&d_in) {
        Ordering::Equal => t,
        Ordering::Less => tape.slice(t, 0..n, 0..d_out),
        Ordering::Greater => {
            let pad = tape.constant(Array2::zeros((n, d_out - d_in)));
            tape.concat_cols(t, pad)
        }
    };
    let z = exp0_rows(tape, resized, kappa_out);
    let d = distance_matrix(tape, z, y, kappa_out);
    tape.neg(d)
}

// ===== the evaluation harness =====

/// κ the frozen model uses for a given graph: the curvature network's
/// estimate, the pinned constant, or the combinatorial oracle — matching
/// how the model was trained.
pub fn resolve_kappa(state: &StudentState, g: &Graph, mode: CurvatureMode) -> Result<Curvature> {
    match mode {
        CurvatureMode::Curvnet => curvnet_forward(g, &state.curvnet),
        CurvatureMode::Fixed(k) => Curvature::new(k),
        CurvatureMode::FormanOracle => forman_oracle(g),
    }
}

/// Embeds a graph under a frozen state: resolves κ, runs the encoder, and
/// returns the high-view embeddings with the κ used.
pub fn embed_task(
    state: &StudentState,
    g: &Graph,
    mode: CurvatureMode,
) -> Result<(Vec<ManifoldPoint>, Curvature)> {
    let kappa = resolve_kappa(state, g, mode)?;
    let feats = g.input_features();
    let (_, high) = encode(g, &feats, &state.layers, kappa, state.leaky_slope)?;
    Ok((high, kappa))
}

/// Test accuracy of the frozen state on one labeled task graph.
///
/// Requires labels and both masks; embeddings are classified by nearest
/// class prototype.
pub fn eval_task(state: &StudentState, g: &Graph, mode: CurvatureMode) -> Result<f64> {
    let labels = g.labels().ok_or(Error::GraphInvalid {
        detail: "evaluation needs labels".into(),
    })?;
    let train_mask = g.train_mask().ok_or(Error::GraphInvalid {
        detail: "evaluation needs a train mask".into(),
    })?;
    let test_mask = g.test_mask().ok_or(Error::GraphInvalid {
        detail: "evaluation needs a test mask".into(),
    })?;
    let (high, kappa) = embed_task(state, g, mode)?;

    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train_pts = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_pts = Vec::new();
    let mut test_labels = Vec::new();
    for i in 0..g.n_nodes() {
        if train_mask[i] {
            train_pts.push(high[i].clone());
            train_labels.push(labels[i]);
        }
        if test_mask[i] {
            test_pts.push(high[i].clone());
            test_labels.push(labels[i]);
        }
    }
    if test_pts.is_empty() {
        return Err(Error::GraphInvalid {
            detail: "test mask selects no nodes".into(),
        });
    }
    let preds = classify(&train_pts, &train_labels, &test_pts, n_classes, kappa)?;
    let hits = preds
        .iter()
        .zip(&test_labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / test_pts.len() as f64)
}
