//! Self-supervised continual graph representation learning in adaptive
//! constant-curvature spaces.
//!
//! `curvgcl` trains a graph encoder over a *sequence* of graph tasks, without
//! ever reading labels during training. Each task is embedded into a model
//! space whose curvature is itself estimated from the graph, so tree-like
//! tasks can land in hyperbolic space, clique-heavy tasks on a sphere, and
//! everything in between at whatever curvature fits. Knowledge is carried
//! across tasks by contrastive distillation: the previous task's trained
//! encoder (the *teacher*) pins down the geometry the current *student* should
//! preserve, even though the two live on different manifolds.
//!
//! The crate is organised around a small number of moving parts:
//!
//! - [`manifold`] — the κ-parametric model space `M^{d,κ}` (hyperboloid for
//!   κ < 0, hypersphere for κ > 0) and its exact kernel operators: curvature
//!   trigonometry, exponential/logarithmic maps, geodesic distance.
//! - [`graph`] — graph storage, file formats, synthetic task generators and
//!   the task-sequence abstraction.
//! - [`autodiff`] — a minimal reverse-mode tape over dense `f64` tensors;
//!   everything trainable in this crate differentiates through it, including
//!   the curvature itself.
//! - [`geometry`] — tape-recorded, batched versions of the manifold operators
//!   (row-wise exp/log at the origin, pairwise geodesic distances).
//! - [`encoder`] — the curvature-aware graph convolution: κ-left matrix
//!   multiplication, tangent-space attention and the closed-form weighted
//!   centroid aggregator.
//! - [`curvature`] — discrete (Forman-style) edge curvature and the small
//!   learned network that maps a graph to the curvature of its model space.
//! - [`lorentz`] — the generalized Lorentz projection that carries points
//!   between manifolds of different dimension *and* curvature in one linear
//!   map, plus the similarity built on it.
//! - [`distill`] — the training loop: intra-model and teacher–student
//!   contrastive losses, session driver, teacher promotion.
//! - [`eval`] — distance-based classification, continual-learning metrics
//!   (performance/forgetting means) and metric distortion.
//! - [`checkpoint`] — a versioned binary container for trained states.
//!
//! # Quick start
//!
//! ```
//! use curvgcl::distill::{run_session, DistillConfig, StudentState};
//! use curvgcl::graph::{SynthSpec, TaskGenerator};
//!
//! // A 31-node balanced binary tree with class-separable features.
//! let spec = SynthSpec {
//!     generator: TaskGenerator::BalancedTree { branching: 2, depth: 4 },
//!     feature_dim: 8,
//!     classes: 0, // derived from the generator
//!     feature_offset: 1.5,
//!     train_ratio: 0.5,
//!     seed: 7,
//! };
//! let g = spec.generate().unwrap();
//!
//! let cfg = DistillConfig { epochs_max: 5, ..DistillConfig::default() };
//! let init = StudentState::init(&[8, 16, 16], 16, 2.0, 0);
//! let (trained, log) = run_session(&g, None, init, &cfg).unwrap();
//! assert_eq!(log.epochs.len(), 5);
//! assert!(trained.kappa.value().is_finite());
//! ```

pub mod autodiff;
pub mod checkpoint;
pub mod curvature;
pub mod distill;
pub mod encoder;
pub mod eval;
pub mod geometry;
pub mod graph;
mod guide;
pub mod lorentz;
pub mod manifold;
pub mod sampling;

pub use manifold::{Curvature, ManifoldPoint, TangentVector};

/// Maximum tolerated residual `|⟨x,x⟩_κ − 1/κ|` for a point to count as lying
/// on the manifold, read relative to the magnitude of the inner product's
/// terms (floored at 1, so ordinary-sized points see it as absolute). The
/// same tolerance gates tangency checks.
pub const TOL_MANIFOLD: f64 = 1e-8;

/// Smallest admissible curvature magnitude. Curvatures below this would make
/// the model space numerically indistinguishable from flat space while
/// blowing up the `1/√|κ|` factors, so they are rejected (or, in the learned
/// estimator, pushed back to this magnitude).
pub const KAPPA_MIN: f64 = 1e-2;

/// Largest admissible curvature magnitude.
pub const KAPPA_MAX: f64 = 1e1;

/// Degeneracy threshold for the closed-form centroid: aggregation fails if
/// the weighted combination has `|⟨u,u⟩_κ| ≤ EPS_AGG`.
pub const EPS_AGG: f64 = 1e-12;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in this crate.
///
/// Variants are deliberately specific: callers distinguish recoverable data
/// problems (bad files, invalid configs) from numeric faults that indicate a
/// diverging computation or a bug.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A vector or matrix had the wrong size for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Two manifold objects that must share a curvature do not.
    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },

    /// Curvature magnitude outside `[KAPPA_MIN, KAPPA_MAX]`, zero, or non-finite.
    #[error("curvature {value} is outside the legal window ({KAPPA_MIN} <= |kappa| <= {KAPPA_MAX})")]
    CurvatureOutOfRange { value: f64 },

    /// Coordinates do not satisfy `⟨x,x⟩_κ = 1/κ` within [`TOL_MANIFOLD`]
    /// (scaled by the magnitude of the constraint's terms).
    #[error("point is off the manifold: constraint residual {residual:.3e} exceeds the scaled tolerance")]
    OffManifold { residual: f64 },

    /// A hyperboloid point landed on the lower sheet (first coordinate ≤ 0).
    #[error("hyperboloid point is on the wrong sheet: first coordinate {coord0:.3e} must be positive")]
    WrongSheet { coord0: f64 },

    /// A claimed tangent vector is not orthogonal to its base point.
    #[error("vector is not tangent at its base point: <v,x>_kappa = {residual:.3e}")]
    NotTangent { residual: f64 },

    /// An argument drifted too far outside a legal numeric domain, or a
    /// computation produced a non-finite value.
    #[error("numeric fault in {context}: {detail}")]
    NumericFault {
        context: &'static str,
        detail: String,
    },

    /// Two κ>0 points are (near-)antipodal, so the geodesic between them is
    /// not unique and the logarithmic map is undefined.
    #[error("antipodal pair: kappa*<x,y> = {beta:.9} admits no unique geodesic")]
    AntipodalPair { beta: f64 },

    /// The weighted centroid collapsed: `|⟨u,u⟩_κ|` fell below [`EPS_AGG`].
    #[error("degenerate aggregation: |<u,u>_kappa| = {norm:.3e} is below {EPS_AGG:.1e}")]
    DegenerateAggregation { norm: f64 },

    /// A graph file could not be parsed.
    #[error("{path}:{line}: {detail}")]
    GraphFormat {
        path: String,
        line: usize,
        detail: String,
    },

    /// A node index referenced something outside the graph.
    #[error("node index {index} out of range for graph with {n_nodes} nodes ({context})")]
    NodeIndexOutOfRange {
        context: &'static str,
        index: usize,
        n_nodes: usize,
    },

    /// A graph invariant (mask shapes, label/mask pairing, …) was violated.
    #[error("invalid graph data: {detail}")]
    GraphInvalid { detail: String },

    /// The task manifest was malformed.
    #[error("invalid task manifest: {detail}")]
    ManifestInvalid { detail: String },

    /// A synthetic-task or training configuration was rejected.
    #[error("invalid configuration: {detail}")]
    ConfigInvalid { detail: String },

    /// Graph has no edges but the operation needs at least one.
    #[error("graph has no edges; {context} requires at least one")]
    EdgelessGraph { context: &'static str },

    /// Both endpoints of an edge-weight ratio have zero weight.
    #[error("edge weight undefined: node weights w_i and w_j are both zero")]
    DegenerateEdgeWeight,

    /// Tape operation applied to tensors of incompatible shapes.
    #[error("tape shape mismatch in {op}: {detail}")]
    TapeShape { op: &'static str, detail: String },

    /// `backward` was called on a non-scalar value.
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    /// The forward pass produced a non-finite value.
    #[error("non-finite value produced by tape op #{op_index} ({op_name})")]
    NonFiniteForward { op_index: usize, op_name: &'static str },

    /// A gradient or optimizer-state update turned non-finite.
    #[error("non-finite gradient for parameter '{name}'")]
    NonFiniteGradient { name: String },

    /// Training loss became non-finite.
    #[error("training diverged: loss is non-finite at epoch {epoch}; lower the learning rate or check the input graph")]
    NonFiniteLoss { epoch: usize },

    /// Strict-mode Lorentz projection onto a sphere hit an infeasible input.
    #[error("lorentz projection infeasible: kappa2*l(W,x) = {value:.6} exceeds 1 (spherical target); use lenient mode or shrink the layer weights")]
    LorentzInfeasible { value: f64 },

    /// A class referenced by the label set has no training node.
    #[error("class {class} has no training node; every class needs at least one to form a prototype")]
    ClassEmpty { class: usize },

    /// The forgetting measure needs at least two tasks.
    #[error("forgetting measure undefined for a single task")]
    FmUndefined,

    /// A checkpoint file was truncated, corrupt, or not a checkpoint at all.
    #[error("invalid checkpoint: {detail}")]
    CheckpointInvalid { detail: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
