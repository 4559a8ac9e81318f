//! Graph curvature: the analytic Forman-style oracle and the learned
//! two-layer estimator ("CurvNet").
//!
//! A single scalar curvature κ per graph drives every manifold operation in
//! this crate. Two ways to get one:
//!
//! - **Analytic.** A combinatorial Forman-Ricci-style edge curvature built
//!   from degree-derived node weights, averaged edge → node → graph and
//!   squashed into the legal κ window. Cheap, deterministic, not trainable —
//!   used for inspection, for the `forman_oracle` curvature mode, and as a
//!   reference point in tests.
//! - **Learned.** A small GCN over fixed-width structural features whose
//!   mean-pooled readout is squashed by `kappa_scale · tanh(·)`. Trained
//!   jointly with the encoder through the distillation loss; this is the
//!   curvature the full model actually adapts per task.
//!
//! # Conventions the formulas pin down
//!
//! Node weights are neighbor-degree sums `w_i = Σ_{j∈N_i} d_j`. The pair
//! weight `γ_ij = w_i/√(w_i² + w_j²)` is defined for *arbitrary* node pairs
//! (an edge between them is not required) and is deliberately asymmetric.
//! The edge curvature excludes the opposite endpoint from each neighbor sum;
//! including it would cancel one of the leading `w` terms and degenerate the
//! formula. Worth knowing: under these conventions a triangle's edges score
//! exactly 0 and large cliques score *negative* (K₄ edges: −18), so "cliques
//! are positively curved" holds against trees only for triangle-sized
//! cliques — which is what the synthetic clique-ring tasks use.
//!
//! # The dead zone
//!
//! |κ| below [`KAPPA_MIN`] has no usable geometry (operators lose precision
//! as 1/√|κ| blows up), so both estimators push their output outside it:
//! the value is replaced by `sign·KAPPA_MIN`. On the tape this replacement
//! is a *constant* — a pinned curvature contributes no gradient, exactly as
//! a clamped value shouldn't. Training can still move the estimator's
//! parameters only while |κ| sits outside the dead zone; random
//! initialization starts it there with overwhelming probability, and the
//! squash keeps |κ| ≤ `kappa_scale` ≤ [`KAPPA_MAX`] on the high side.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::graph::{degree_features, Graph};
use crate::manifold::Curvature;
use crate::sampling::seeded_rng;
use crate::{Error, Result, KAPPA_MAX, KAPPA_MIN};

/// Default output scale for both estimators: κ ranges over
/// `(-kappa_scale, kappa_scale)` before the dead-zone push.
pub const DEFAULT_KAPPA_SCALE: f64 = 2.0;

// ===== analytic (Forman-style) curvature =====

/// Degree-derived node weights `w_i = Σ_{j∈N_i} d_j` (0 for isolated nodes).
pub fn node_weights(g: &Graph) -> Vec<f64> {
    (0..g.n_nodes())
        .map(|i| g.neighbors(i).iter().map(|&j| g.degree(j) as f64).sum())
        .collect()
}

/// Pair weight `γ_ij = w_i / √(w_i² + w_j²)`, defined for any node pair and
/// asymmetric by construction. Errors only when both weights vanish.
pub fn edge_weight_gamma(w_i: f64, w_j: f64) -> Result<f64> {
    let denom_sq = w_i * w_i + w_j * w_j;
    if denom_sq == 0.0 {
        return Err(Error::DegenerateEdgeWeight);
    }
    Ok(w_i / denom_sq.sqrt())
}

/// Edge curvature under the conventions in the module docs:
///
/// `F_ij = w_i + w_j − Σ_{l∈N_i∖{j}} √(γ_ij/γ_il)·w_l
///                   − Σ_{k∈N_j∖{i}} √(γ_ij/γ_ik)·w_k`
pub fn forman_edge_curvature(g: &Graph, edge: (usize, usize)) -> Result<f64> {
    let weights = node_weights(g);
    forman_edge_with_weights(g, edge, &weights)
}

fn forman_edge_with_weights(g: &Graph, (i, j): (usize, usize), w: &[f64]) -> Result<f64> {
    for id in [i, j] {
        if id >= g.n_nodes() {
            return Err(Error::NodeIndexOutOfRange {
                context: "forman_edge_curvature",
                index: id,
                n_nodes: g.n_nodes(),
            });
        }
    }
    if !g.neighbors(i).contains(&j) {
        return Err(Error::GraphInvalid {
            detail: format!("({i}, {j}) is not an edge"),
        });
    }
    let gamma_ij = edge_weight_gamma(w[i], w[j])?;
    let side = |anchor: usize, skip: usize| -> Result<f64> {
        let mut acc = 0.0;
        for &nb in g.neighbors(anchor) {
            if nb == skip {
                continue;
            }
            // Both γ's originate at i — also in the j-side sum, where the
            // pair (i, nb) need not be an edge.
            let gamma_inb = edge_weight_gamma(w[i], w[nb])?;
            acc += (gamma_ij / gamma_inb).sqrt() * w[nb];
        }
        Ok(acc)
    };
    Ok(w[i] + w[j] - side(i, j)? - side(j, i)?)
}

/// Graph-level curvature: each node averages the `F` of its incident edges,
/// and the graph averages those node values (nodes with no edges do not
/// participate). Errors on edgeless graphs.
pub fn forman_graph_curvature(g: &Graph) -> Result<f64> {
    if g.n_edges() == 0 {
        return Err(Error::EdgelessGraph {
            context: "forman_graph_curvature",
        });
    }
    let weights = node_weights(g);
    let mut edge_f = std::collections::HashMap::new();
    for &e in g.edges() {
        edge_f.insert(e, forman_edge_with_weights(g, e, &weights)?);
    }
    let mut node_sum = 0.0;
    let mut node_count = 0usize;
    for i in 0..g.n_nodes() {
        let nbrs = g.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let incident: f64 = nbrs
            .iter()
            .map(|&j| edge_f[&(i.min(j), i.max(j))])
            .sum();
        node_sum += incident / nbrs.len() as f64;
        node_count += 1;
    }
    Ok(node_sum / node_count as f64)
}

/// The analytic curvature estimate as a legal [`Curvature`]:
/// the raw graph value is normalized by the mean node weight (a density
/// scale, so sparse and dense graphs land on comparable footing), squashed
/// by `tanh` into `(-DEFAULT_KAPPA_SCALE, DEFAULT_KAPPA_SCALE)`, and pushed
/// out of the dead zone.
pub fn forman_oracle(g: &Graph) -> Result<Curvature> {
    let raw = forman_graph_curvature(g)?;
    let weights = node_weights(g);
    let active: Vec<f64> = weights.into_iter().filter(|&w| w > 0.0).collect();
    let mean_w = active.iter().sum::<f64>() / active.len() as f64;
    let kappa = DEFAULT_KAPPA_SCALE * (raw / mean_w).tanh();
    Curvature::new(push_out_of_dead_zone(kappa))
}

/// Applies the dead-zone rule: values with `|κ| < KAPPA_MIN` become
/// `sign·KAPPA_MIN`, with `+KAPPA_MIN` for exact zero.
pub fn push_out_of_dead_zone(kappa: f64) -> f64 {
    if kappa.abs() >= KAPPA_MIN {
        kappa
    } else if kappa < 0.0 {
        -KAPPA_MIN
    } else {
        KAPPA_MIN
    }
}

// ===== learned curvature (CurvNet) =====

/// Parameters of the two-layer curvature estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvNetParams {
    /// First layer: `4 × hidden` (input is [`degree_features`], width 4).
    pub m1: Array2<f64>,
    /// Second layer: `hidden × 1`.
    pub m2: Array2<f64>,
    /// Output scale; κ lies in `(-kappa_scale, kappa_scale)`. Fixed, not
    /// trained: it is a range declaration, not a degree of freedom.
    pub kappa_scale: f64,
}

impl CurvNetParams {
    /// Uniform `U(±1/√fan_in)` initialization of both layers.
    pub fn init(hidden: usize, kappa_scale: f64, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::ConfigInvalid {
                detail: "curvature estimator hidden width must be >= 1".into(),
            });
        }
        let mut rng = seeded_rng(seed);
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
        };
        let m1 = uniform(4, hidden, 4);
        let m2 = uniform(hidden, 1, hidden);
        Self::new(m1, m2, kappa_scale)
    }

    /// Validates shapes and the scale window.
    pub fn new(m1: Array2<f64>, m2: Array2<f64>, kappa_scale: f64) -> Result<Self> {
        if m1.nrows() != 4 || m2.nrows() != m1.ncols() || m2.ncols() != 1 {
            return Err(Error::ConfigInvalid {
                detail: format!(
                    "curvature estimator shapes must be 4xh and hx1, got {:?} and {:?}",
                    m1.shape(),
                    m2.shape()
                ),
            });
        }
        if !(kappa_scale > 0.0 && kappa_scale <= KAPPA_MAX && kappa_scale.is_finite()) {
            return Err(Error::ConfigInvalid {
                detail: format!("kappa_scale must be in (0, {KAPPA_MAX}], got {kappa_scale}"),
            });
        }
        if m1.iter().chain(m2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid {
                detail: "curvature estimator parameters must be finite".into(),
            });
        }
        Ok(Self { m1, m2, kappa_scale })
    }

    pub fn hidden(&self) -> usize {
        self.m1.ncols()
    }
}

/// Symmetric-normalized adjacency with self-loops:
/// `Â = D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` counts the self-loop, so no
/// degree is ever zero.
pub fn normalized_adjacency(g: &Graph) -> Array2<f64> {
    let n = g.n_nodes();
    let mut a = g.adjacency_matrix(true);
    let dinv: Array1<f64> = (0..n)
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    for ((i, j), v) in a.indexed_iter_mut() {
        *v *= dinv[i] * dinv[j];
    }
    a
}

fn curvnet_raw_kernel(g: &Graph, params: &CurvNetParams) -> f64 {
    let a_hat = normalized_adjacency(g);
    let z0 = degree_features(g);
    let h1 = a_hat.dot(&z0).dot(&params.m1).mapv(|x| x.max(0.0));
    let z2 = a_hat.dot(&h1).dot(&params.m2);
    z2.mean().expect("graphs are non-empty")
}

/// Learned curvature, kernel form: two normalized-adjacency GCN layers over
/// [`degree_features`], mean-pooled, squashed, dead-zone pushed.
pub fn curvnet_forward(g: &Graph, params: &CurvNetParams) -> Result<Curvature> {
    let raw = curvnet_raw_kernel(g, params);
    Curvature::new(push_out_of_dead_zone(params.kappa_scale * raw.tanh()))
}

/// Learned curvature, tape form: identical arithmetic to [`curvnet_forward`]
/// recorded through the autodiff engine, so the distillation loss can train
/// `m1`/`m2`. Returns a `1×1` variable.
///
/// When the squashed value lands in the dead zone the returned variable is a
/// detached constant `sign·KAPPA_MIN` (see the module docs).
pub fn curvnet_forward_tape(
    tape: &mut Tape,
    g: &Graph,
    m1: Var,
    m2: Var,
    kappa_scale: f64,
) -> Var {
    let a_hat = tape.constant(normalized_adjacency(g));
    let z0 = tape.constant(degree_features(g));
    let az = tape.matmul(a_hat, z0);
    let pre1 = tape.matmul(az, m1);
    let h1 = tape.leaky_relu(pre1, 0.0); // slope 0 = plain ReLU
    let ah = tape.matmul(a_hat, h1);
    let z2 = tape.matmul(ah, m2);
    let raw = tape.mean_all(z2);
    let squashed = tape.tanh(raw);
    let kappa = tape.scale(squashed, kappa_scale);
    let value = tape.value(kappa)[(0, 0)];
    if value.abs() < KAPPA_MIN {
        let pinned = push_out_of_dead_zone(value);
        tape.scalar(pinned)
    } else {
        kappa
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::graph::{SynthSpec, TaskGenerator};

    fn p3() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2)]).unwrap()
    }

    fn triangle() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    fn tree(branching: usize, depth: usize) -> Graph {
        SynthSpec {
            generator: TaskGenerator::BalancedTree { branching, depth },
            feature_dim: 2,
            classes: 0,
            feature_offset: 0.0,
            train_ratio: 0.5,
            seed: 0,
        }
        .generate()
        .unwrap()
    }

    fn clique_ring(clique_size: usize, n_cliques: usize) -> Graph {
        SynthSpec {
            generator: TaskGenerator::CliqueRing { clique_size, n_cliques },
            feature_dim: 2,
            classes: 0,
            feature_offset: 0.0,
            train_ratio: 0.5,
            seed: 0,
        }
        .generate()
        .unwrap()
    }

    // ===== node and pair weights =====

    #[test]
    fn node_weights_match_hand_sums() {
        assert_eq!(node_weights(&p3()), vec![2.0, 2.0, 2.0]);
        let star = Graph::new(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(node_weights(&star), vec![3.0, 3.0, 3.0, 3.0]);
        let isolated = Graph::new(2, &[]).unwrap();
        assert_eq!(node_weights(&isolated), vec![0.0, 0.0]);
    }

    #[test]
    fn gamma_hand_values_and_asymmetry() {
        assert!((edge_weight_gamma(2.0, 2.0).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((edge_weight_gamma(3.0, 4.0).unwrap() - 0.6).abs() < 1e-15);
        assert!((edge_weight_gamma(4.0, 3.0).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            edge_weight_gamma(0.0, 0.0),
            Err(Error::DegenerateEdgeWeight)
        ));
    }

    // ===== edge curvature =====

    #[test]
    fn forman_edge_hand_values() {
        // P3: every node weight is 2, every γ is 1/√2, F(A,B) = 2+2-0-2.
        assert!((forman_edge_curvature(&p3(), (0, 1)).unwrap() - 2.0).abs() < 1e-12);
        // K2: both neighbor sums are empty, F = w_A + w_B = 1 + 1.
        let k2 = Graph::new(2, &[(0, 1)]).unwrap();
        assert!((forman_edge_curvature(&k2, (0, 1)).unwrap() - 2.0).abs() < 1e-12);
        // Triangle: perfectly symmetric, so all edges agree — and equal 0.
        let t = triangle();
        for &e in t.edges() {
            assert!(
                forman_edge_curvature(&t, e).unwrap().abs() < 1e-12,
                "triangle edge {e:?} should have zero curvature"
            );
        }
    }

    #[test]
    fn forman_edge_rejects_non_edges() {
        assert!(forman_edge_curvature(&p3(), (0, 2)).is_err());
        assert!(forman_edge_curvature(&p3(), (0, 9)).is_err());
    }

    // ===== graph curvature =====

    #[test]
    fn forman_graph_composes_node_means() {
        // P3: both edges have F = 2, so every node mean is 2.
        assert!((forman_graph_curvature(&p3()).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            forman_graph_curvature(&Graph::new(3, &[]).unwrap()),
            Err(Error::EdgelessGraph { .. })
        ));
    }

    #[test]
    fn vertex_transitive_graphs_have_uniform_node_values() {
        // C5 is vertex-transitive: the graph value equals any single edge's F.
        let c5 = Graph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]).unwrap();
        let any_edge = forman_edge_curvature(&c5, (0, 1)).unwrap();
        let graph = forman_graph_curvature(&c5).unwrap();
        assert!((graph - any_edge).abs() < 1e-12);
    }

    #[test]
    fn disjoint_union_preserves_the_graph_value() {
        let one = forman_graph_curvature(&triangle()).unwrap();
        let two = Graph::new(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        let both = forman_graph_curvature(&two).unwrap();
        assert!((one - both).abs() < 1e-12);
    }

    #[test]
    fn trees_score_negative_and_pure_cliques_score_higher() {
        // Degree-homogeneous cliques and cycles sit at exactly 0; trees are
        // firmly negative. (Mixed-degree graphs like clique *rings* can score
        // below trees — the bridge nodes dominate every neighbor sum — so the
        // "clique-heavy beats tree" comparison uses an actual clique.)
        let tree_val = forman_graph_curvature(&tree(2, 5)).unwrap();
        let clique_val = forman_graph_curvature(&triangle()).unwrap();
        let cycle = Graph::new(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]).unwrap();
        let cycle_val = forman_graph_curvature(&cycle).unwrap();
        assert!(tree_val < 0.0, "balanced tree scored {tree_val}, want < 0");
        assert!(clique_val.abs() < 1e-12, "triangle scored {clique_val}, want 0");
        assert!(cycle_val.abs() < 1e-12, "C6 scored {cycle_val}, want 0");
        assert!(clique_val > tree_val);
    }

    #[test]
    fn forman_oracle_lands_in_the_legal_window_with_the_right_ordering() {
        let tree_k = forman_oracle(&tree(2, 5)).unwrap().value();
        let clique_k = forman_oracle(&triangle()).unwrap().value();
        assert!(tree_k < 0.0, "tree κ = {tree_k}");
        assert!(clique_k > tree_k, "clique κ = {clique_k} vs tree κ = {tree_k}");
        for k in [tree_k, clique_k] {
            assert!((KAPPA_MIN..=KAPPA_MAX).contains(&k.abs()));
        }
    }

    // ===== dead zone =====

    #[test]
    fn dead_zone_pushes_to_the_signed_boundary() {
        assert_eq!(push_out_of_dead_zone(0.0), KAPPA_MIN);
        assert_eq!(push_out_of_dead_zone(0.004), KAPPA_MIN);
        assert_eq!(push_out_of_dead_zone(-0.004), -KAPPA_MIN);
        assert_eq!(push_out_of_dead_zone(0.5), 0.5);
        assert_eq!(push_out_of_dead_zone(-1.7), -1.7);
    }

    // ===== learned estimator =====

    #[test]
    fn zero_second_layer_pins_kappa_at_the_positive_boundary() {
        let params = CurvNetParams::new(
            Array2::from_elem((4, 3), 0.1),
            Array2::zeros((3, 1)),
            2.0,
        )
        .unwrap();
        let k = curvnet_forward(&p3(), &params).unwrap();
        assert_eq!(k.value(), KAPPA_MIN);
    }

    #[test]
    fn curvnet_output_always_lands_in_the_window() {
        for seed in 0..20 {
            let params = CurvNetParams::init(8, 2.0, seed).unwrap();
            let k = curvnet_forward(&tree(2, 3), &params).unwrap().value();
            assert!(
                (KAPPA_MIN..=2.0).contains(&k.abs()),
                "seed {seed}: κ = {k} escaped the window"
            );
        }
    }

    #[test]
    fn curvnet_is_permutation_invariant() {
        let g = clique_ring(4, 3);
        // Relabel nodes by a fixed permutation.
        let n = g.n_nodes();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let edges: Vec<(usize, usize)> =
            g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let h = Graph::new(n, &edges).unwrap();
        let params = CurvNetParams::init(6, 2.0, 11).unwrap();
        let kg = curvnet_forward(&g, &params).unwrap().value();
        let kh = curvnet_forward(&h, &params).unwrap().value();
        assert!(
            (kg - kh).abs() < 1e-12,
            "relabeled graph moved κ: {kg} vs {kh}"
        );
    }

    #[test]
    fn tape_and_kernel_forms_agree() {
        let g = tree(3, 3);
        for seed in [2, 9, 41] {
            let params = CurvNetParams::init(5, 2.0, seed).unwrap();
            let kernel = curvnet_forward(&g, &params).unwrap().value();
            let mut tape = Tape::new();
            let m1 = tape.parameter(params.m1.clone());
            let m2 = tape.parameter(params.m2.clone());
            let kv = curvnet_forward_tape(&mut tape, &g, m1, m2, params.kappa_scale);
            let taped = tape.value(kv)[(0, 0)];
            assert!(
                (kernel - taped).abs() < 1e-14,
                "seed {seed}: kernel {kernel} vs tape {taped}"
            );
        }
    }

    #[test]
    fn kappa_gradient_matches_finite_differences() {
        let g = clique_ring(3, 3);
        // Pick parameters whose output is comfortably outside the dead zone
        // so the differentiable branch is exercised.
        let params = CurvNetParams::init(5, 2.0, 7).unwrap();
        let k = curvnet_forward(&g, &params).unwrap().value();
        assert!(k.abs() > KAPPA_MIN, "test setup needs a live κ, got {k}");
        grad_check(
            |t, p| curvnet_forward_tape(t, &g, p[0], p[1], 2.0),
            &[params.m1.clone(), params.m2.clone()],
            1e-5,
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn pinned_kappa_contributes_no_gradient() {
        let params = CurvNetParams::new(
            Array2::from_elem((4, 3), 0.1),
            Array2::zeros((3, 1)),
            2.0,
        )
        .unwrap();
        let g = p3();
        let mut tape = Tape::new();
        let m1 = tape.parameter(params.m1.clone());
        let m2 = tape.parameter(params.m2.clone());
        let kv = curvnet_forward_tape(&mut tape, &g, m1, m2, 2.0);
        assert_eq!(tape.value(kv)[(0, 0)], KAPPA_MIN);
        assert!(!tape.requires_grad(kv), "dead-zone κ must be detached");
    }
}
