//! Cross-manifold projection and similarity.
//!
//! Contrastive distillation needs to compare points that live on *different*
//! manifolds — the student's low and high views (different dimensions), or a
//! frozen teacher's space against the current student's (different κ). The
//! bridge is a generalized Lorentz projection: a learnable linear map on the
//! spatial coordinates whose time coordinate is then *forced analytically* so
//! the image lands exactly on the target manifold,
//!
//! ```text
//! y = ( y₀ , W·x_s + b )         with  ℓ = ‖W·x_s + b‖²
//! y₀ = sign(x₀) · √( (1 − κ₂·ℓ) / |κ₂| )
//! ```
//!
//! which gives `⟨y,y⟩_{κ₂} = sign(κ₂)·y₀² + ℓ = 1/κ₂` identically — closure
//! is an algebraic fact, not a numerical hope. The time form above is the
//! on-manifold simplification of `w₀·x₀` (using `1 − κ₁⟨x_s,x_s⟩ = |κ₁|·x₀²`,
//! true for both curvature signs); it stays finite at a sphere's equator
//! where the raw `w₀` factor diverges, and it needs no reference to κ₁ at
//! all. When the target is hyperbolic the sign is forced positive so the
//! image lands on the upper sheet.
//!
//! **Feasibility.** A spherical target caps the spatial norm: `1 − κ₂·ℓ ≥ 0`.
//! [`FeasibilityMode::Strict`] (the default) treats a violation as an error;
//! [`FeasibilityMode::Lenient`] rescales the offending spatial image onto the
//! boundary (shrunk by 1e-9) and logs it, capping the log at a few lines per
//! process — the right behavior inside a training loop, where a gradient
//! step can transiently overshoot, possibly for many epochs in a row.
//!
//! Similarity is negated geodesic distance on the target manifold:
//! `Sim(x, y) = −d(L(x), y) ≤ 0`, maximal (≈ 0) when `y` is exactly the
//! projection of `x`. Larger means more similar, which is the orientation
//! the contrastive losses need.

use ndarray::{Array1, Array2};

use crate::autodiff::{Tape, Var};
use crate::geometry::distance_matrix;
use crate::manifold::{distance, Curvature, ManifoldPoint};
use crate::sampling::{orthonormal_rows, seeded_rng};
use crate::{Error, Result};

/// Relative inset applied when a spatial image is rescaled onto the
/// feasibility boundary of a spherical target.
pub const FEASIBILITY_INSET: f64 = 1e-9;

/// Tiny additive regularizer for the rescale ratio `ℓ̃/ℓ`, so an exactly-zero
/// spatial image divides cleanly (0/0 → 1, a no-op rescale).
const RESCALE_EPS: f64 = 1e-300;

/// Roundoff slack for the strict feasibility test: a point *exactly on* the
/// boundary (a sphere's equator) computes `1 − κ₂·ℓ` as ±few ulps, which is
/// feasible, not a violation.
const STRICT_SLACK: f64 = 1e-12;

/// Per-process cap on rescale warnings. A training loop can brush the
/// feasibility boundary every epoch for hundreds of epochs; the first few
/// lines carry all the signal.
const RESCALE_WARN_LIMIT: usize = 8;
static RESCALE_WARNINGS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

fn warn_rescaled(ell: f64, cap: f64) {
    let seen = RESCALE_WARNINGS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    if seen < RESCALE_WARN_LIMIT {
        eprintln!(
            "warning: rescaled infeasible spatial image onto the \
             target boundary (norm² {ell:.6e} > cap {cap:.6e})"
        );
        if seen + 1 == RESCALE_WARN_LIMIT {
            eprintln!("warning: further rescale warnings suppressed");
        }
    }
}

/// What to do when a spherical target's spatial norm cap is violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeasibilityMode {
    /// Fail with [`Error::LorentzInfeasible`]. The right mode for frozen
    /// parameters that are supposed to be valid.
    #[default]
    Strict,
    /// Rescale the spatial image onto the boundary (minus an inset) and log
    /// to stderr. The right mode while parameters are moving.
    Lenient,
}

/// Trainable state of one projection: `W` (`d2 × d1`), bias `b` (`d2`), and
/// the declared source/target manifolds.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzLayerParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub kappa_in: Curvature,
    pub kappa_out: Curvature,
}

impl LorentzLayerParams {
    pub fn new(
        w: Array2<f64>,
        b: Array1<f64>,
        kappa_in: Curvature,
        kappa_out: Curvature,
    ) -> Result<Self> {
        if b.len() != w.nrows() {
            return Err(Error::ConfigInvalid {
                detail: format!(
                    "bias length {} does not match the {} output rows of W",
                    b.len(),
                    w.nrows()
                ),
            });
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid {
                detail: "projection parameters must be finite".into(),
            });
        }
        Ok(Self {
            w,
            b,
            kappa_in,
            kappa_out,
        })
    }

    /// Orthogonal `W` (orthonormal rows when shrinking, orthonormal columns
    /// when growing — a near-isometry either way, so the initial map is
    /// feasible for any legal target), zero bias.
    pub fn init(
        d_in: usize,
        d_out: usize,
        kappa_in: Curvature,
        kappa_out: Curvature,
        seed: u64,
    ) -> Self {
        let mut rng = seeded_rng(seed);
        let w = if d_out <= d_in {
            orthonormal_rows(d_out, d_in, &mut rng)
        } else {
            orthonormal_rows(d_in, d_out, &mut rng).t().to_owned()
        };
        Self {
            w,
            b: Array1::zeros(d_out),
            kappa_in,
            kappa_out,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w.nrows()
    }
}

// ===== kernel form =====

/// Shared core: given the raw spatial image `s = W·x_s (+ b)`, force the
/// time coordinate and assemble the target-manifold point.
fn project_with_spatial(
    x: &ManifoldPoint,
    mut s: Array1<f64>,
    kappa_out: Curvature,
    mode: FeasibilityMode,
) -> Result<ManifoldPoint> {
    let k2 = kappa_out.value();
    let mut ell = s.dot(&s);
    if k2 > 0.0 {
        match mode {
            FeasibilityMode::Strict => {
                let radicand = 1.0 - k2 * ell;
                if radicand < -STRICT_SLACK {
                    return Err(Error::LorentzInfeasible { value: radicand });
                }
            }
            FeasibilityMode::Lenient => {
                let cap = (1.0 - FEASIBILITY_INSET) / k2;
                if ell > cap {
                    warn_rescaled(ell, cap);
                    let scale = ((ell + RESCALE_EPS) / (cap + RESCALE_EPS)).sqrt();
                    s.mapv_inplace(|v| v / scale);
                    ell = s.dot(&s);
                }
            }
        }
    }
    let radicand = (1.0 - k2 * ell) / k2.abs();
    debug_assert!(radicand >= 0.0, "time radicand must be nonnegative");
    let sign = if k2 < 0.0 {
        // Hyperbolic target: always the upper sheet.
        1.0
    } else if x.coords()[0] < 0.0 {
        -1.0
    } else {
        1.0
    };
    let mut y = Array1::zeros(s.len() + 1);
    y[0] = sign * radicand.max(0.0).sqrt();
    y.slice_mut(ndarray::s![1..]).assign(&s);
    ManifoldPoint::new(y, kappa_out)
}

/// Generalized Lorentz projection `x ↦ (sign(x₀)·√((1−κ₂ℓ)/|κ₂|), W·x_s)`.
pub fn glp_apply(
    x: &ManifoldPoint,
    w: &Array2<f64>,
    kappa_out: Curvature,
    mode: FeasibilityMode,
) -> Result<ManifoldPoint> {
    if w.ncols() != x.dim() {
        return Err(Error::DimensionMismatch {
            context: "glp_apply",
            expected: x.dim(),
            actual: w.ncols(),
        });
    }
    let s = w.dot(&x.spatial());
    project_with_spatial(x, s, kappa_out, mode)
}

/// The biased projection: spatial image `W·x_s + b`, same forced time.
pub fn lorentz_layer(
    x: &ManifoldPoint,
    params: &LorentzLayerParams,
    mode: FeasibilityMode,
) -> Result<ManifoldPoint> {
    if params.d_in() != x.dim() {
        return Err(Error::DimensionMismatch {
            context: "lorentz_layer",
            expected: params.d_in(),
            actual: x.dim(),
        });
    }
    if x.curvature() != params.kappa_in {
        return Err(Error::CurvatureMismatch {
            left: params.kappa_in.value(),
            right: x.curvature().value(),
        });
    }
    let s = params.w.dot(&x.spatial()) + &params.b;
    project_with_spatial(x, s, params.kappa_out, mode)
}

/// Negated geodesic distance between `lorentz_layer(x)` and `y` on the
/// target manifold. Zero is the maximum, attained when `y` is exactly the
/// projection of `x`.
pub fn lorentz_similarity(
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    params: &LorentzLayerParams,
    mode: FeasibilityMode,
) -> Result<f64> {
    if y.curvature() != params.kappa_out {
        return Err(Error::CurvatureMismatch {
            left: params.kappa_out.value(),
            right: y.curvature().value(),
        });
    }
    let z = lorentz_layer(x, params, mode)?;
    Ok(-distance(&z, y)?)
}

// ===== tape form =====

/// Differentiable projection of a row stack: `x` is `n×(d1+1)` on the source
/// manifold, the output `n×(d2+1)` lies on the manifold of `kappa_out` (a
/// live `1×1` variable — gradients flow into the target curvature too).
///
/// Strict mode errors at record time if any row violates the spherical cap;
/// lenient mode splices in the boundary rescale, which is itself
/// differentiable, and logs the first offending row.
pub fn lorentz_rows(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    kappa_out: Var,
    mode: FeasibilityMode,
) -> Result<Var> {
    let k2 = tape.value(kappa_out)[(0, 0)];
    let (n, _) = tape.shape(x);
    let xs = tape.spatial(x);
    let wx = tape.matmul_nt(xs, w);
    let s = tape.add(wx, b); // b is 1×d2, row-broadcast
    let s_sq = tape.mul(s, s);
    let mut ell = tape.row_sums(s_sq); // n×1

    let mut s_eff = s;
    if k2 > 0.0 {
        let worst = tape
            .value(ell)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if mode == FeasibilityMode::Strict {
            let radicand = 1.0 - k2 * worst;
            if radicand < -STRICT_SLACK {
                return Err(Error::LorentzInfeasible { value: radicand });
            }
        } else {
            let cap_val = (1.0 - FEASIBILITY_INSET) / k2;
            if worst > cap_val {
                warn_rescaled(worst, cap_val);
            }
            // ℓ̃ = ℓ − relu(ℓ − cap): identity when feasible, the boundary
            // when not — and the cap tracks κ₂ differentiably.
            let inset = tape.scalar(1.0 - FEASIBILITY_INSET);
            let cap = tape.div(inset, kappa_out); // 1×1
            let over = tape.sub(ell, cap);
            let over_pos = tape.leaky_relu(over, 0.0);
            let ell_clamped = tape.sub(ell, over_pos);
            let eps = tape.scalar(RESCALE_EPS);
            let num = tape.add(ell_clamped, eps);
            let den = tape.add(ell, eps);
            let ratio = tape.div(num, den);
            let shrink = tape.sqrt(ratio); // n×1, exactly 1 on feasible rows
            s_eff = tape.mul(s_eff, shrink); // column broadcast
            let s_eff_sq = tape.mul(s_eff, s_eff);
            ell = tape.row_sums(s_eff_sq);
        }
    }

    // Forced time coordinate: sign(x₀)·√((1 − κ₂·ℓ)/|κ₂|). The sign is data
    // (detached); a hyperbolic target forces the upper sheet.
    let signs = if k2 < 0.0 {
        Array2::ones((n, 1))
    } else {
        let xv = tape.value(x);
        Array2::from_shape_fn((n, 1), |(i, _)| if xv[(i, 0)] < 0.0 { -1.0 } else { 1.0 })
    };
    let sign = tape.constant(signs);
    let kl = tape.mul(ell, kappa_out);
    let one = tape.scalar(1.0);
    let mut radicand = tape.sub(one, kl); // n×1
    if k2 > 0.0 {
        // Boundary points (a sphere's equator) compute 1−κ₂ℓ as ±ulps;
        // clamp the roundoff negative so the sqrt stays real. Lenient
        // rescaling keeps rows strictly inside, so gradients still flow.
        radicand = tape.clamp(radicand, 0.0, f64::INFINITY);
    }
    let kabs = tape.abs(kappa_out);
    let scaled = tape.div(radicand, kabs);
    let t_mag = tape.sqrt(scaled);
    let t = tape.mul(sign, t_mag);
    Ok(tape.concat_cols(t, s_eff))
}

/// Similarity matrix `Sim_ij = −d(L(x_i), y_j)` on the target manifold.
/// `y` must already live on the manifold of `kappa_out`.
pub fn lorentz_similarity_matrix(
    tape: &mut Tape,
    x: Var,
    y: Var,
    w: Var,
    b: Var,
    kappa_out: Var,
    mode: FeasibilityMode,
) -> Result<Var> {
    let z = lorentz_rows(tape, x, w, b, kappa_out, mode)?;
    let d = distance_matrix(tape, z, y, kappa_out);
    Ok(tape.neg(d))
}
