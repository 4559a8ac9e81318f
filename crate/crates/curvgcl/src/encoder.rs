//! The curvature-parametric graph convolutional encoder.
//!
//! One layer does four things, all expressed through the tangent space at
//! the origin so that a single κ parameter controls the geometry:
//!
//! 1. **Transform**: `x = W ⊠_κ h = exp_O([0 ‖ W·(log_O h)_spatial])` — a
//!    linear map applied between the log/exp pair (κ-left-multiplication).
//! 2. **Attend**: logits `θᵀ[log_O x_i ‖ log_O x_j]`, softmax-normalized
//!    over the closed neighborhood `N̄_i = N_i ∪ {i}` (self included, so no
//!    node ever has an empty attention row).
//! 3. **Aggregate**: the closed-form weighted centroid
//!    `AGG_κ = u / (√|κ|·‖u‖_κ)` with `u = Σ_j ν_ij x_j` — the Fréchet mean
//!    of the neighborhood under the κ-geometry (the property the
//!    aggregation oracle in the acceptance suite checks).
//! 4. **Activate**: `δ_κ(h) = exp_O(leaky_relu((log_O h)_spatial))`,
//!    applied after every layer, final layer included.
//!
//! Encoding a graph lifts raw features onto the manifold with `Γ_κ` and
//! runs the layer stack; the caller gets two views per node — the first
//! layer's output (*low view*) and the last layer's (*high view*) — which
//! the distillation loss contrasts against each other.
//!
//! Everything exists twice, by design:
//! - a **kernel** form on [`ManifoldPoint`]s — validating, per-node,
//!   gradient-free; used for frozen teachers and evaluation;
//! - a **tape** form on row-stacked matrices via [`crate::geometry`] —
//!   differentiable in every parameter *and* in κ; used for training.
//!
//! A consistency test pins the two to each other, so the teacher (kernel)
//! and student (tape) of the continual loop always speak the same geometry.
//!
//! Attention parameters θ are stored full-width, `2(d+1)` entries per
//! layer, matching the concatenated ambient log vectors. The two entries
//! that multiply the (identically zero) time coordinates are inert: their
//! gradient is zero, exactly as finite differences see it.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::geometry::{exp0_rows, lift_rows, log0_rows, rowwise_inner};
use crate::graph::Graph;
use crate::manifold::{exp_map, inner, log_map, origin, Curvature, ManifoldPoint, TangentVector};
use crate::sampling::{component_seed, seeded_rng};
use crate::{Error, Result, EPS_AGG};

/// Default negative-side slope of the `δ_κ` nonlinearity.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

// ===== parameters =====

/// One layer's trainable state: the transform `W` (`d_out × d_in`) and the
/// attention vector θ (`2(d_out+1) × 1`, stored as a column for the tape).
#[derive(Debug, Clone, PartialEq)]
pub struct RgcnLayerParams {
    pub w: Array2<f64>,
    pub theta: Array2<f64>,
}

impl RgcnLayerParams {
    /// Validates shape consistency and finiteness.
    pub fn new(w: Array2<f64>, theta: Array2<f64>) -> Result<Self> {
        let d_out = w.nrows();
        if theta.nrows() != 2 * (d_out + 1) || theta.ncols() != 1 {
            return Err(Error::ConfigInvalid {
                detail: format!(
                    "attention vector must be {}x1 for a {}-dim layer output, got {:?}",
                    2 * (d_out + 1),
                    d_out,
                    theta.shape()
                ),
            });
        }
        if w.iter().chain(theta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid {
                detail: "encoder parameters must be finite".into(),
            });
        }
        Ok(Self { w, theta })
    }

    /// `W ~ U(±1/√d_in)`, θ = 0. Zero attention makes the first forward
    /// pass a plain neighborhood centroid — a stable place to start.
    pub fn init(d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = Array2::from_shape_fn((d_out, d_in), |_| (rng.gen::<f64>() * 2.0 - 1.0) * bound);
        let theta = Array2::zeros((2 * (d_out + 1), 1));
        Self { w, theta }
    }

    pub fn d_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w.nrows()
    }
}

/// Architecture of the encoder: `layer_dims = [d_in, hidden…, d_out]`
/// (at least two layers, i.e. three entries) plus the `δ_κ` slope.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub layer_dims: Vec<usize>,
    pub leaky_slope: f64,
}

impl EncoderConfig {
    pub fn new(layer_dims: Vec<usize>, leaky_slope: f64) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::ConfigInvalid {
                detail: format!(
                    "need at least two layers ([d_in, hidden, d_out]), got dims {layer_dims:?}"
                ),
            });
        }
        if layer_dims.iter().any(|&d| d < 2) {
            return Err(Error::ConfigInvalid {
                detail: format!("every layer dimension must be >= 2, got {layer_dims:?}"),
            });
        }
        if !leaky_slope.is_finite() || !(0.0..1.0).contains(&leaky_slope) {
            return Err(Error::ConfigInvalid {
                detail: format!("leaky slope must be in [0, 1), got {leaky_slope}"),
            });
        }
        Ok(Self {
            layer_dims,
            leaky_slope,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Fresh per-layer parameters; each layer draws from its own seed stream
    /// so adding a layer never reshuffles the others.
    pub fn init_params(&self, seed: u64) -> Vec<RgcnLayerParams> {
        (0..self.n_layers())
            .map(|l| {
                RgcnLayerParams::init(
                    self.layer_dims[l],
                    self.layer_dims[l + 1],
                    component_seed(seed, &format!("rgcn.layer{l}")),
                )
            })
            .collect()
    }
}

// ===== kernel ops (single points, validating, gradient-free) =====

/// κ-left-multiplication `W ⊠_κ h`: transform in the tangent space at `O`,
/// land on the (possibly different-dimension) manifold of the same κ.
pub fn kappa_left_mul(w: &Array2<f64>, h: &ManifoldPoint) -> Result<ManifoldPoint> {
    if w.ncols() != h.dim() {
        return Err(Error::DimensionMismatch {
            context: "kappa_left_mul",
            expected: h.dim(),
            actual: w.ncols(),
        });
    }
    let kappa = h.curvature();
    let o_in = origin(h.dim(), kappa);
    let tangent = log_map(&o_in, h)?;
    // [log_O(h)]₀ = 0 always; only the spatial block feeds W.
    let spatial = tangent.coords().slice(ndarray::s![1..]).to_owned();
    let mapped = w.dot(&spatial);
    let d_out = w.nrows();
    let mut v = Array1::zeros(d_out + 1);
    v.slice_mut(ndarray::s![1..]).assign(&mapped);
    let o_out = origin(d_out, kappa);
    let vt = TangentVector::new(v, o_out.clone())?;
    Ok(exp_map(&o_out, &vt))
}

/// `f_κ`: apply an elementwise function in the tangent space at `O`.
pub fn apply_fn(f: impl Fn(f64) -> f64, h: &ManifoldPoint) -> Result<ManifoldPoint> {
    let kappa = h.curvature();
    let o = origin(h.dim(), kappa);
    let tangent = log_map(&o, h)?;
    let mut v = tangent.coords().to_owned();
    for x in v.iter_mut().skip(1) {
        *x = f(*x);
    }
    v[0] = 0.0;
    let vt = TangentVector::new(v, o.clone())?;
    Ok(exp_map(&o, &vt))
}

/// Leaky rectifier with the given slope, as a plain function.
pub fn leaky_relu(slope: f64) -> impl Fn(f64) -> f64 {
    move |x| if x >= 0.0 { x } else { slope * x }
}

/// Tangent-space attention logit `θᵀ [log_O(x_i) ‖ log_O(x_j)]`.
pub fn attention_logit(
    x_i: &ManifoldPoint,
    x_j: &ManifoldPoint,
    theta: &Array2<f64>,
) -> Result<f64> {
    let d = x_i.dim();
    if theta.nrows() != 2 * (d + 1) || theta.ncols() != 1 {
        return Err(Error::DimensionMismatch {
            context: "attention_logit",
            expected: 2 * (d + 1),
            actual: theta.nrows(),
        });
    }
    let o = origin(d, x_i.curvature());
    let li = log_map(&o, x_i)?;
    let lj = log_map(&o, x_j)?;
    let mut acc = 0.0;
    for (k, &v) in li.coords().iter().enumerate() {
        acc += theta[(k, 0)] * v;
    }
    for (k, &v) in lj.coords().iter().enumerate() {
        acc += theta[(d + 1 + k, 0)] * v;
    }
    Ok(acc)
}

/// Numerically stable softmax over one neighborhood's logits.
pub fn attention_weights(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "attention needs a non-empty neighborhood");
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Closed-form weighted centroid `AGG_κ`: normalize `u = Σ ν_j h_j` back to
/// the manifold. For κ < 0 the upper sheet is enforced by sign.
pub fn aggregate(
    points: &[ManifoldPoint],
    weights: &[f64],
    kappa: Curvature,
) -> Result<ManifoldPoint> {
    assert_eq!(points.len(), weights.len(), "one weight per point");
    assert!(!points.is_empty(), "aggregation needs at least one point");
    let d = points[0].dim();
    let mut u = Array1::<f64>::zeros(d + 1);
    for (p, &w) in points.iter().zip(weights) {
        if p.curvature() != kappa {
            return Err(Error::CurvatureMismatch {
                left: kappa.value(),
                right: p.curvature().value(),
            });
        }
        u.scaled_add(w, &p.coords());
    }
    let norm_sq = inner(u.view(), u.view(), kappa)?;
    let norm_abs = norm_sq.abs();
    if norm_abs <= EPS_AGG {
        return Err(Error::DegenerateAggregation { norm: norm_abs });
    }
    if kappa.is_hyperbolic() && u[0] < 0.0 {
        u.mapv_inplace(|x| -x);
    }
    let scale = 1.0 / (kappa.sqrt_abs() * norm_abs.sqrt());
    ManifoldPoint::new(u * scale, kappa)
}

/// One message-passing layer on explicit points. `slope` is the `δ_κ`
/// negative-side slope.
pub fn layer_forward(
    g: &Graph,
    points: &[ManifoldPoint],
    params: &RgcnLayerParams,
    kappa: Curvature,
    slope: f64,
) -> Result<Vec<ManifoldPoint>> {
    assert_eq!(points.len(), g.n_nodes(), "one point per node");
    let transformed: Vec<ManifoldPoint> = points
        .iter()
        .map(|h| kappa_left_mul(&params.w, h))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(g.n_nodes());
    for i in 0..g.n_nodes() {
        // Closed neighborhood, self first — the softmax is order-invariant.
        let mut hood = vec![i];
        hood.extend_from_slice(g.neighbors(i));
        let logits: Vec<f64> = hood
            .iter()
            .map(|&j| attention_logit(&transformed[i], &transformed[j], &params.theta))
            .collect::<Result<_>>()?;
        let nu = attention_weights(&logits);
        let members: Vec<ManifoldPoint> = hood.iter().map(|&j| transformed[j].clone()).collect();
        let agg = aggregate(&members, &nu, kappa)?;
        out.push(apply_fn(leaky_relu(slope), &agg)?);
    }
    Ok(out)
}

/// Full encoder, kernel form: lift → layers → (low view, high view).
/// The low view is the first layer's output, the high view the last's.
pub fn encode(
    g: &Graph,
    features: &Array2<f64>,
    layers: &[RgcnLayerParams],
    kappa: Curvature,
    slope: f64,
) -> Result<(Vec<ManifoldPoint>, Vec<ManifoldPoint>)> {
    assert!(layers.len() >= 2, "encoder needs at least two layers");
    assert_eq!(features.nrows(), g.n_nodes(), "one feature row per node");
    let mut h: Vec<ManifoldPoint> = features
        .rows()
        .into_iter()
        .map(|row| crate::manifold::lift_feature(row, kappa))
        .collect();
    let mut low = None;
    for (l, params) in layers.iter().enumerate() {
        h = layer_forward(g, &h, params, kappa, slope)?;
        if l == 0 {
            low = Some(h.clone());
        }
    }
    Ok((low.expect("at least two layers"), h))
}

/// Stacks per-node points into the row-matrix layout the tape uses.
pub fn points_to_rows(points: &[ManifoldPoint]) -> Array2<f64> {
    assert!(!points.is_empty());
    let w = points[0].coords().len();
    Array2::from_shape_fn((points.len(), w), |(i, j)| points[i].coords()[j])
}

// ===== tape form (row-stacked, differentiable) =====

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w: Var,
    pub theta: Var,
}

/// Differentiable encoder forward pass. `features` is an `n×d_in` variable
/// (constant for data, parameter for probing), `kappa` a `1×1` variable.
/// Returns `(low view, high view)` as `n×(d+1)` row stacks.
///
/// Fails with [`Error::DegenerateAggregation`] if any node's weighted sum
/// collapses (only possible on spheres with near-antipodal neighborhoods).
pub fn encode_tape(
    tape: &mut Tape,
    g: &Graph,
    features: Var,
    layers: &[LayerVars],
    kappa: Var,
    slope: f64,
) -> Result<(Var, Var)> {
    assert!(layers.len() >= 2, "encoder needs at least two layers");
    let mask = tape.constant(g.adjacency_matrix(true));
    let mut h = lift_rows(tape, features, kappa);
    let mut low = None;
    for (l, layer) in layers.iter().enumerate() {
        h = layer_forward_tape(tape, layer, h, mask, kappa, slope)?;
        if l == 0 {
            low = Some(h);
        }
    }
    Ok((low.expect("at least two layers"), h))
}

fn layer_forward_tape(
    tape: &mut Tape,
    layer: &LayerVars,
    h: Var,
    mask: Var,
    kappa: Var,
    slope: f64,
) -> Result<Var> {
    let kappa_val = tape.value(kappa)[(0, 0)];

    // Transform: x = exp_O(log_O(h) · Wᵀ), all rows at once.
    let tangent_in = log0_rows(tape, h, kappa);
    let mapped = tape.matmul_nt(tangent_in, layer.w);
    let x = exp0_rows(tape, mapped, kappa);

    // Attention: logits are rank-one, L_ij = a_i + b_j with
    // a = T·θ_left, b = T·θ_right over the transformed tangents T.
    // θ's two time-slot entries multiply the zero time coordinate and are
    // skipped outright — their gradient is zero either way.
    let (n, _) = tape.shape(x);
    let d_out = {
        let (rows, _) = tape.shape(layer.w);
        rows
    };
    let t_spatial = log0_rows(tape, x, kappa); // n×d_out
    let theta_left = tape.slice(layer.theta, 1..(d_out + 1), 0..1);
    let theta_right = tape.slice(layer.theta, (d_out + 2)..(2 * d_out + 2), 0..1);
    let a = tape.matmul(t_spatial, theta_left); // n×1
    let b_t = tape.record(
        crate::autodiff::PrimitiveOp::MatMul {
            transpose_a: true,
            transpose_b: true,
        },
        &[theta_right, t_spatial],
    )?; // 1×n
    let logits = tape.add(a, b_t); // n×n via row+column broadcast
    let nu = tape.masked_softmax(logits, mask);

    // Aggregate: u_i = Σ_j ν_ij x_j, then normalize back to the manifold.
    let u = tape.matmul(nu, x); // n×(d_out+1)
    let norm_signed = rowwise_inner(tape, u, u, kappa);
    let norm_abs = tape.abs(norm_signed);
    let norms = tape.value(norm_abs);
    if let Some(&v) = norms.iter().find(|&&v| v <= EPS_AGG) {
        return Err(Error::DegenerateAggregation { norm: v });
    }
    // Sheet selection (κ<0): flip rows whose time coordinate went negative.
    // The sign is data, not function — it enters as a detached constant.
    let u = if kappa_val < 0.0 {
        let signs = Array2::from_shape_fn((n, 1), |(i, _)| {
            if tape.value(u)[(i, 0)] < 0.0 {
                -1.0
            } else {
                1.0
            }
        });
        let s = tape.constant(signs);
        tape.mul(u, s)
    } else {
        u
    };
    let kabs = tape.abs(kappa);
    let ksqrt = tape.sqrt(kabs);
    let unorm = tape.sqrt(norm_abs);
    let denom = tape.mul(unorm, ksqrt); // n×1
    let agg = tape.div(u, denom); // column broadcast

    // δ_κ: leaky rectifier in the tangent space at O.
    let tg = log0_rows(tape, agg, kappa);
    let act = tape.leaky_relu(tg, slope);
    Ok(exp0_rows(tape, act, kappa))
}
