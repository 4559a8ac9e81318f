//! Differentiable, row-vectorized manifold operations on the tape.
//!
//! [`crate::manifold`] defines the constant-curvature operators one point at
//! a time, with strict validation — that is the *kernel*. Training needs the
//! same operators applied to whole node batches with gradients, including a
//! gradient in the curvature κ itself. This module builds them from
//! [`crate::autodiff`] primitives, with every point stored as a matrix row
//! `[x₀ | x_spatial]`.
//!
//! Two conventions keep kernel and tape numerically interchangeable:
//!
//! - **Identical clamping.** Inverse-trig arguments are clamped into the same
//!   margin-inset windows the kernel uses (`[-1+1e-12, 1-1e-12]` for κ > 0,
//!   `[1+1e-12, ∞)` for κ < 0), so both paths compute bit-equal values on the
//!   shared domain. The tape differs in one way: where the kernel *faults*
//!   on arguments that drifted far outside the window, the tape only clamps —
//!   a training step that diverges shows up as NaN poisoning or a stuck
//!   loss, not a hard error in the middle of an epoch.
//! - **Branch-by-sign at record time.** κ is a `1×1` tape variable; its sign
//!   selects the trig family (circular vs hyperbolic) when an op is
//!   recorded. Within one tape the sign is fixed — the curvature window
//!   `KAPPA_MIN ≤ |κ| ≤ KAPPA_MAX` keeps every usable κ away from 0 — so
//!   each epoch differentiates a single smooth branch.
//!
//! All operators anchor at the origin `O = (|κ|^{-1/2}, 0, …, 0)`, where the
//! exponential and logarithmic maps collapse to closed forms with no
//! reference to `O`'s coordinates:
//!
//! - `exp_O(v)` row form: time `cos_κ(α)/√|κ|`, spatial `(sin_κ(α)/α)·v`,
//!   with `α = √(|κ|·‖v‖²)` (the ambient time component of a tangent vector
//!   at `O` is always 0, so rows carry only the spatial part).
//! - `log_O(y)` row form: spatial `c·y_s` with `β = √|κ|·y₀` (this single
//!   expression is correct for both curvature signs) and
//!   `c = acos_κ(β)/√(|β²−1|)`.

use crate::autodiff::{Tape, Var};
use crate::manifold::CLAMP_MARGIN;

/// Smallest squared tangent norm that participates in `α = √(|κ|‖v‖²)`.
/// Rows below it are treated as exactly collapsed: the clamp zeroes their
/// α-gradient, and `α ≥ 1e-7` keeps `sin_κ(α)/α` a well-conditioned division
/// (its value differs from the α → 0 limit by under 2e-15 there).
const ALPHA_SQ_FLOOR: f64 = 1e-14;

fn kappa_value(tape: &Tape, kappa: Var) -> f64 {
    assert_eq!(
        tape.shape(kappa),
        (1, 1),
        "curvature must be a 1x1 tape variable"
    );
    let k = tape.value(kappa)[(0, 0)];
    assert!(
        k.is_finite() && k != 0.0,
        "curvature on the tape must be finite and nonzero, got {k}"
    );
    k
}

/// `|κ|` and `√|κ|` as tape values.
fn kappa_abs_sqrt(tape: &mut Tape, kappa: Var) -> (Var, Var) {
    let kabs = tape.abs(kappa);
    let ksqrt = tape.sqrt(kabs);
    (kabs, ksqrt)
}

/// Exponential map at the origin, one point per row.
///
/// `spatial` is `n×d` (tangent vectors at `O`, spatial part only — their
/// time component is identically 0); the result is `n×(d+1)` rows on the
/// manifold of curvature `kappa`.
pub fn exp0_rows(tape: &mut Tape, spatial: Var, kappa: Var) -> Var {
    let k = kappa_value(tape, kappa);
    let (kabs, ksqrt) = kappa_abs_sqrt(tape, kappa);

    let sq = tape.mul(spatial, spatial);
    let rowsq = tape.row_sums(sq); // n×1: ‖v‖² per row
    let scaled = tape.mul(rowsq, kabs);
    let floored = tape.clamp(scaled, ALPHA_SQ_FLOOR, f64::INFINITY);
    let alpha = tape.sqrt(floored); // n×1, ≥ 1e-7

    let (cos_a, sin_a) = if k > 0.0 {
        (tape.cos(alpha), tape.sin(alpha))
    } else {
        (tape.cosh(alpha), tape.sinh(alpha))
    };
    let time = tape.div(cos_a, ksqrt); // n×1
    let ratio = tape.div(sin_a, alpha); // n×1
    let out_spatial = tape.mul(spatial, ratio); // column broadcast
    tape.concat_cols(time, out_spatial)
}

/// Logarithmic map at the origin, one point per row: `n×(d+1) → n×d`
/// (tangent vectors at `O` have zero time component, so only the spatial
/// part is returned).
pub fn log0_rows(tape: &mut Tape, points: Var, kappa: Var) -> Var {
    let k = kappa_value(tape, kappa);
    let (_, ksqrt) = kappa_abs_sqrt(tape, kappa);

    let y0 = tape.time_col(points); // n×1
    let ys = tape.spatial(points); // n×d
    let beta = tape.mul(y0, ksqrt); // √|κ|·y₀, correct for both signs

    let (bcl, num) = if k > 0.0 {
        let bcl = tape.clamp(beta, -1.0 + CLAMP_MARGIN, 1.0 - CLAMP_MARGIN);
        (bcl, tape.arccos(bcl))
    } else {
        let bcl = tape.clamp(beta, 1.0 + CLAMP_MARGIN, f64::INFINITY);
        (bcl, tape.arcosh(bcl))
    };
    // √|β²−1|: the inset clamp keeps |β²−1| ≥ ~2e-12, so no extra floor.
    let bsq = tape.mul(bcl, bcl);
    let one = tape.scalar(1.0);
    let diff = tape.sub(bsq, one);
    let den = {
        let a = tape.abs(diff);
        tape.sqrt(a)
    };
    let c = tape.div(num, den); // n×1, → 1 as y → O
    tape.mul(ys, c)
}

/// Feature lift `Γ_κ(x) = exp_O([0 ‖ x])`: plain feature rows become
/// manifold rows. Identical to [`exp0_rows`]; named for call-site clarity.
pub fn lift_rows(tape: &mut Tape, features: Var, kappa: Var) -> Var {
    exp0_rows(tape, features, kappa)
}

/// Row-by-row curvature inner product `⟨x_i, y_i⟩_κ` of two aligned
/// `n×(d+1)` stacks, as `n×1`.
pub fn rowwise_inner(tape: &mut Tape, x: Var, y: Var, kappa: Var) -> Var {
    let k = kappa_value(tape, kappa);
    let xt = tape.time_col(x);
    let yt = tape.time_col(y);
    let xs = tape.spatial(x);
    let ys = tape.spatial(y);
    let tprod = tape.mul(xt, yt); // n×1
    let sq = tape.mul(xs, ys);
    let sprod = tape.row_sums(sq); // n×1
    if k > 0.0 {
        tape.add(sprod, tprod)
    } else {
        tape.sub(sprod, tprod)
    }
}

/// All-pairs curvature inner products `⟨x_i, y_j⟩_κ` of an `n×(d+1)` stack
/// against an `m×(d+1)` stack, as `n×m`.
pub fn pairwise_inner(tape: &mut Tape, x: Var, y: Var, kappa: Var) -> Var {
    let k = kappa_value(tape, kappa);
    let xt = tape.time_col(x);
    let yt = tape.time_col(y);
    let xs = tape.spatial(x);
    let ys = tape.spatial(y);
    let tprod = tape.matmul_nt(xt, yt); // n×m
    let sprod = tape.matmul_nt(xs, ys); // n×m
    if k > 0.0 {
        tape.add(sprod, tprod)
    } else {
        tape.sub(sprod, tprod)
    }
}

/// Geodesic distance from precomputed inner products:
/// `d = acos_κ(κ·⟨x,y⟩_κ) / √|κ|`, clamped into the same inset windows the
/// kernel uses.
pub fn distance_from_inner(tape: &mut Tape, inner: Var, kappa: Var) -> Var {
    let k = kappa_value(tape, kappa);
    let (kabs, _) = kappa_abs_sqrt(tape, kappa);
    let arg = tape.mul(inner, kappa);
    let raw = if k > 0.0 {
        let acl = tape.clamp(arg, -1.0 + CLAMP_MARGIN, 1.0 - CLAMP_MARGIN);
        tape.arccos(acl)
    } else {
        let acl = tape.clamp(arg, 1.0 + CLAMP_MARGIN, f64::INFINITY);
        tape.arcosh(acl)
    };
    let ksqrt = tape.sqrt(kabs);
    tape.div(raw, ksqrt)
}

/// All-pairs geodesic distances between two row stacks on the same manifold.
pub fn distance_matrix(tape: &mut Tape, x: Var, y: Var, kappa: Var) -> Var {
    let inner = pairwise_inner(tape, x, y, kappa);
    distance_from_inner(tape, inner, kappa)
}

/// Row-aligned geodesic distances `d(x_i, y_i)` as `n×1`.
pub fn distance_rows(tape: &mut Tape, x: Var, y: Var, kappa: Var) -> Var {
    let inner = rowwise_inner(tape, x, y, kappa);
    distance_from_inner(tape, inner, kappa)
}
