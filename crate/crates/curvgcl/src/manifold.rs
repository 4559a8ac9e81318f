//! Constant-curvature model spaces and their exact kernel operators.
//!
//! A single coordinate model covers every curvature this crate supports. For
//! a curvature κ ≠ 0 the space is
//!
//! ```text
//! M^{d,κ} = { x ∈ R^{d+1} : ⟨x,x⟩_κ = 1/κ },
//! ⟨x,y⟩_κ = sign(κ)·x₀y₀ + x₁y₁ + … + x_d y_d,
//! ```
//!
//! which is the upper sheet of a hyperboloid when κ < 0 (the inner product is
//! Minkowski) and a sphere of radius `1/√κ` when κ > 0 (the inner product is
//! Euclidean). The *origin* `O = (1/√|κ|, 0, …, 0)` lies on the manifold for
//! either sign, and all tangent vectors at `O` have a zero first coordinate.
//!
//! The operators below are the geodesic toolkit shared by the rest of the
//! crate:
//!
//! - `distance(x,y) = (1/√|κ|)·acos_κ(κ⟨x,y⟩_κ)`
//! - `exp_map(x,v) = cos_κ(α)·x + (sin_κ(α)/α)·v` with `α = √|κ|·‖v‖_κ`
//! - `log_map(x,y) = (acos_κ(β)/sin_κ(acos_κ(β)))·(y − βx)` with `β = κ⟨x,y⟩_κ`
//! - `scalar_mul(r,x) = exp_O(r·log_O(x))`
//!
//! where `cos_κ/sin_κ/acos_κ` are circular for κ > 0 and hyperbolic for
//! κ < 0, and `‖v‖_κ = √|⟨v,v⟩_κ|`.
//!
//! # Numerics
//!
//! Everything is `f64`. Two guard rails keep the trigonometry well defined:
//!
//! - Arguments of `acos_κ` are clamped to `[−1+1e-12, 1−1e-12]` (κ > 0) or
//!   `[1+1e-12, ∞)` (κ < 0). Drift up to [`DRIFT_TOL`] outside the legal
//!   domain is clamped silently — unavoidable float noise — while anything
//!   beyond that is reported as a numeric fault, because it means a bug or a
//!   diverging computation, not roundoff. A consequence of the clamp margin
//!   is that `distance(x, x)` is of order `1e-6/√|κ|` rather than exactly
//!   zero; tests compare against `0` at `1e-5` tolerance.
//! - The ratio `sin_κ(α)/α` is evaluated by its series limit `1` when
//!   `α <` [`SMALL_ALPHA`], avoiding 0/0 for vanishing tangents.
//! - Every residual check (manifold constraint, tangency, drift) is read
//!   relative to the magnitude of the products it sums, floored at the plain
//!   absolute tolerance. A hyperboloid point at geodesic radius `t` has
//!   coordinates of size `e^t`; its constraint can only hold to `~e^{2t}·ε`
//!   in absolute terms, and an absolute gate would reject every point past a
//!   radius f64 represents perfectly well. Contrastive training pushes
//!   embeddings exactly there.

use ndarray::{Array1, ArrayView1};

use crate::{Error, Result, KAPPA_MAX, KAPPA_MIN, TOL_MANIFOLD};

/// Margin by which `acos_κ` arguments are kept away from the singular ends of
/// the legal domain.
pub const CLAMP_MARGIN: f64 = 1e-12;

/// Tolerated drift outside the legal `acos_κ` domain before an input is
/// treated as a numeric fault instead of roundoff.
pub const DRIFT_TOL: f64 = 1e-6;

/// Below this geodesic "angle" the ratio `sin_κ(α)/α` is evaluated as its
/// series limit 1.
pub const SMALL_ALPHA: f64 = 1e-7;

/// Nonzero sectional curvature with magnitude inside the legal window.
///
/// The window (`|κ| ∈ [KAPPA_MIN, KAPPA_MAX]`) exists for numeric reasons:
/// the operators scale with `1/√|κ|`, so near-flat curvatures blow up, while
/// huge curvatures shrink the whole space below float resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    /// Validates `|κ| ∈ [KAPPA_MIN, KAPPA_MAX]`, κ ≠ 0 and finite.
    pub fn new(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa == 0.0 || kappa.abs() < KAPPA_MIN || kappa.abs() > KAPPA_MAX
        {
            return Err(Error::CurvatureOutOfRange { value: kappa });
        }
        Ok(Self(kappa))
    }

    /// The signed curvature value κ.
    pub fn value(self) -> f64 {
        self.0
    }

    /// `sign(κ)`: `+1.0` or `-1.0`.
    pub fn sign(self) -> f64 {
        if self.0 > 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `|κ|`.
    pub fn abs(self) -> f64 {
        self.0.abs()
    }

    /// `√|κ|`, the reciprocal of the manifold radius.
    pub fn sqrt_abs(self) -> f64 {
        self.0.abs().sqrt()
    }

    /// True for κ > 0 (hypersphere).
    pub fn is_spherical(self) -> bool {
        self.0 > 0.0
    }

    /// True for κ < 0 (hyperboloid).
    pub fn is_hyperbolic(self) -> bool {
        self.0 < 0.0
    }
}

/// A point on `M^{d,κ}`, stored in the ambient `R^{d+1}` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    coords: Array1<f64>,
    curvature: Curvature,
}

impl ManifoldPoint {
    /// Validates the manifold constraint `⟨x,x⟩_κ = 1/κ` (within
    /// [`TOL_MANIFOLD`]) and, for κ < 0, upper-sheet membership.
    pub fn new(coords: Array1<f64>, curvature: Curvature) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DimensionMismatch {
                context: "ManifoldPoint::new (ambient dimension must be >= 2)",
                expected: 2,
                actual: coords.len(),
            });
        }
        let q = inner(coords.view(), coords.view(), curvature)?;
        let residual = (q - 1.0 / curvature.value()).abs();
        // Relative to the coordinate magnitude: far-out hyperboloid points
        // (time coordinate e^t) cannot satisfy the constraint to better than
        // ~‖x‖²·ε in absolute terms, and demanding more would reject every
        // point past a radius f64 can in fact represent faithfully.
        if residual > TOL_MANIFOLD * term_scale(coords.view(), coords.view()) {
            return Err(Error::OffManifold { residual });
        }
        if curvature.is_hyperbolic() && coords[0] <= 0.0 {
            return Err(Error::WrongSheet { coord0: coords[0] });
        }
        Ok(Self { coords, curvature })
    }

    /// Constructs without validating; callers must guarantee the invariant.
    /// Debug builds still check it.
    pub(crate) fn new_unchecked(coords: Array1<f64>, curvature: Curvature) -> Self {
        debug_assert!(
            {
                let q = inner(coords.view(), coords.view(), curvature).unwrap();
                let scale = term_scale(coords.view(), coords.view());
                (q - 1.0 / curvature.value()).abs() <= 1e-6 * scale
            },
            "new_unchecked given off-manifold coordinates"
        );
        Self { coords, curvature }
    }

    /// Ambient coordinates (length d+1).
    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.coords.view()
    }

    /// Manifold dimension d (one less than the ambient length).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    /// The curvature this point lives under.
    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    /// The spatial part `x_{1..d}` (everything after the first coordinate).
    pub fn spatial(&self) -> ArrayView1<'_, f64> {
        self.coords.slice(ndarray::s![1..])
    }
}

/// A tangent vector attached to a base point, satisfying `⟨v, base⟩_κ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Array1<f64>,
    base: ManifoldPoint,
}

impl TangentVector {
    /// Validates the tangency constraint against the base point.
    pub fn new(coords: Array1<f64>, base: ManifoldPoint) -> Result<Self> {
        if coords.len() != base.coords.len() {
            return Err(Error::DimensionMismatch {
                context: "TangentVector::new",
                expected: base.coords.len(),
                actual: coords.len(),
            });
        }
        let residual = inner(coords.view(), base.coords(), base.curvature())?.abs();
        if residual > TOL_MANIFOLD * term_scale(coords.view(), base.coords()) {
            return Err(Error::NotTangent { residual });
        }
        Ok(Self { coords, base })
    }

    /// Ambient coordinates of the vector.
    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.coords.view()
    }

    /// The point this vector is tangent at.
    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    /// The curvature-aware norm `√|⟨v,v⟩_κ|`.
    pub fn norm(&self) -> f64 {
        let q = inner(self.coords.view(), self.coords.view(), self.base.curvature()).unwrap();
        q.abs().sqrt()
    }

    /// The zero vector at `base`.
    pub fn zero(base: ManifoldPoint) -> Self {
        Self {
            coords: Array1::zeros(base.coords.len()),
            base,
        }
    }
}

/// Which curvature-aware trigonometric function [`curv_trig`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrigKind {
    Cos,
    Sin,
    Acos,
}

/// The curvature-aware inner product `⟨x,y⟩_κ = xᵀ diag(sign κ, 1, …, 1) y`.
///
/// Minkowski for κ < 0, plain Euclidean for κ > 0.
pub fn inner(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, kappa: Curvature) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "inner",
            expected: x.len(),
            actual: y.len(),
        });
    }
    let mut acc = kappa.sign() * x[0] * y[0];
    for i in 1..x.len() {
        acc += x[i] * y[i];
    }
    Ok(acc)
}

/// The magnitude of the terms an inner product sums — the scale its roundoff
/// lives on. A sum of terms of size `s` carries absolute error `~s·ε`, so
/// residual checks have to be read relative to this quantity. Floored at 1 so
/// points of ordinary size keep the plain absolute tolerances.
fn term_scale(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        acc += (a * b).abs();
    }
    acc.max(1.0)
}

/// The origin `O = (1/√|κ|, 0, …, 0)` of `M^{d,κ}`.
///
/// # Panics
/// Panics if `d == 0`.
pub fn origin(d: usize, kappa: Curvature) -> ManifoldPoint {
    assert!(d >= 1, "manifold dimension must be at least 1");
    let mut coords = Array1::zeros(d + 1);
    coords[0] = 1.0 / kappa.sqrt_abs();
    ManifoldPoint::new_unchecked(coords, kappa)
}

/// Curvature-aware trigonometry: circular for κ > 0, hyperbolic for κ < 0.
///
/// `Acos` clamps its argument into the margin-inset legal domain first, and
/// reports a numeric fault when the argument sits further than [`DRIFT_TOL`]
/// outside the legal domain (that is no longer roundoff).
pub fn curv_trig(kind: TrigKind, kappa: Curvature, t: f64) -> Result<f64> {
    match kind {
        TrigKind::Cos => Ok(if kappa.is_spherical() {
            t.cos()
        } else {
            t.cosh()
        }),
        TrigKind::Sin => Ok(if kappa.is_spherical() {
            t.sin()
        } else {
            t.sinh()
        }),
        TrigKind::Acos => {
            let clamped = clamp_acos_argument(kappa, t, DRIFT_TOL, "curv_trig(acos)")?;
            Ok(if kappa.is_spherical() {
                clamped.acos()
            } else {
                clamped.acosh()
            })
        }
    }
}

/// Clamps an `acos_κ` argument into the inset legal domain, faulting when it
/// has drifted more than `drift` outside.
///
/// Callers that know the magnitude of the cancelling terms behind `t` widen
/// the window proportionally (far-apart hyperboloid points compute `β` from
/// differences of `e^{2t}`-sized products); bare uses pass [`DRIFT_TOL`].
pub(crate) fn clamp_acos_argument(
    kappa: Curvature,
    t: f64,
    drift: f64,
    context: &'static str,
) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NumericFault {
            context,
            detail: format!("acos_kappa argument is {t}"),
        });
    }
    if kappa.is_spherical() {
        if t > 1.0 + drift || t < -1.0 - drift {
            return Err(Error::NumericFault {
                context,
                detail: format!("acos argument {t} outside [-1,1] by more than {drift:.1e}"),
            });
        }
        Ok(t.clamp(-1.0 + CLAMP_MARGIN, 1.0 - CLAMP_MARGIN))
    } else {
        if t < 1.0 - drift {
            return Err(Error::NumericFault {
                context,
                detail: format!("acosh argument {t} below 1 by more than {drift:.1e}"),
            });
        }
        Ok(t.max(1.0 + CLAMP_MARGIN))
    }
}

/// Geodesic distance `d_M(x,y) = (1/√|κ|)·acos_κ(κ⟨x,y⟩_κ)`.
pub fn distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    check_same_manifold(x, y, "distance")?;
    let kappa = x.curvature();
    let t = kappa.value() * inner(x.coords(), y.coords(), kappa)?;
    // The drift window scales with the size of the products behind t:
    // near-coincident far-out hyperboloid points land below 1 by honest
    // cancellation roundoff, not by any bug.
    let drift = DRIFT_TOL * (kappa.abs() * term_scale(x.coords(), y.coords())).max(1.0);
    let clamped = clamp_acos_argument(kappa, t, drift, "distance")?;
    let angle = if kappa.is_spherical() {
        clamped.acos()
    } else {
        clamped.acosh()
    };
    Ok(angle / kappa.sqrt_abs())
}

/// Geodesic shot: `exp_x(v) = cos_κ(α)·x + (sin_κ(α)/α)·v`, `α = √|κ|·‖v‖_κ`.
///
/// # Panics
/// Panics if `v` is not tangent at `x` (wrong curvature, wrong dimension, or
/// `⟨v,x⟩_κ` visibly nonzero) — those are contract violations, not data
/// conditions.
pub fn exp_map(x: &ManifoldPoint, v: &TangentVector) -> ManifoldPoint {
    assert_eq!(
        x.curvature(),
        v.base().curvature(),
        "exp_map: tangent vector carries a different curvature than the base point"
    );
    assert_eq!(
        x.coords().len(),
        v.coords().len(),
        "exp_map: dimension mismatch between point and tangent vector"
    );
    let kappa = x.curvature();
    let cross = inner(v.coords(), x.coords(), kappa).unwrap();
    assert!(
        cross.abs() <= 1e-6 * term_scale(v.coords(), x.coords()),
        "exp_map: vector is not tangent at the given point (<v,x> = {cross:.3e})"
    );

    let q = inner(v.coords(), v.coords(), kappa).unwrap();
    let alpha = kappa.sqrt_abs() * q.abs().sqrt();
    let (c, ratio) = if alpha < SMALL_ALPHA {
        (1.0, 1.0)
    } else {
        let c = curv_trig(TrigKind::Cos, kappa, alpha).unwrap();
        let s = curv_trig(TrigKind::Sin, kappa, alpha).unwrap();
        (c, s / alpha)
    };
    let coords = c * &x.coords + ratio * &v.coords;
    ManifoldPoint::new_unchecked(coords, kappa)
}

/// Geodesic inverse: the tangent at `x` that `exp_map`s to `y`.
///
/// `log_x(y) = (acos_κ(β)/sin_κ(acos_κ(β)))·(y − βx)` with `β = κ⟨x,y⟩_κ`.
/// For κ > 0 an antipodal `y` has no unique geodesic and is rejected. The
/// rejection window is [`CLAMP_MARGIN`]: below that, `β` cannot be told
/// apart from −1 at f64 precision (its roundoff is ~(d+1)·ε) and the
/// direction `y − βx` is pure cancellation noise; above it the direction is
/// meaningful, and the differentiable path clamps at the same inset, so both
/// paths agree on the computable domain.
pub fn log_map(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<TangentVector> {
    check_same_manifold(x, y, "log_map")?;
    let kappa = x.curvature();
    let beta_raw = kappa.value() * inner(x.coords(), y.coords(), kappa)?;
    if kappa.is_spherical() && beta_raw <= -1.0 + CLAMP_MARGIN {
        return Err(Error::AntipodalPair { beta: beta_raw });
    }
    let drift = DRIFT_TOL * (kappa.abs() * term_scale(x.coords(), y.coords())).max(1.0);
    let beta = clamp_acos_argument(kappa, beta_raw, drift, "log_map")?;
    let angle = if kappa.is_spherical() {
        beta.acos()
    } else {
        beta.acosh()
    };
    // sin_κ(acos_κ(β)) in closed form; β is inside the inset domain, so the
    // root argument is at least ~2e-12 and the ratio stays finite.
    let s = if kappa.is_spherical() {
        (1.0 - beta * beta).sqrt()
    } else {
        (beta * beta - 1.0).sqrt()
    };
    let coef = angle / s;
    let coords = coef * (&y.coords - beta * &x.coords);
    // Tangency holds by construction; route through the validating
    // constructor anyway so drift can never leak out silently.
    TangentVector::new(coords, x.clone())
}

/// Geodesic dilation through the origin: `r ⊗_κ x = exp_O(r·log_O(x))`.
pub fn scalar_mul(r: f64, x: &ManifoldPoint) -> Result<ManifoldPoint> {
    let o = origin(x.dim(), x.curvature());
    let v = log_map(&o, x)?;
    let scaled = TangentVector::new(r * &v.coords, o.clone())?;
    Ok(exp_map(&o, &scaled))
}

/// Lifts a Euclidean feature vector onto the manifold: `Γ_κ(x) = exp_O([0 ‖ x])`.
///
/// The zero vector lifts to the origin itself.
pub fn lift_feature(x_eucl: ArrayView1<'_, f64>, kappa: Curvature) -> ManifoldPoint {
    let d = x_eucl.len();
    assert!(d >= 1, "lift_feature needs at least one feature column");
    let norm = x_eucl.dot(&x_eucl).sqrt();
    let alpha = kappa.sqrt_abs() * norm;
    let (c, ratio) = if alpha < SMALL_ALPHA {
        (1.0, 1.0)
    } else {
        let c = curv_trig(TrigKind::Cos, kappa, alpha).unwrap();
        let s = curv_trig(TrigKind::Sin, kappa, alpha).unwrap();
        (c, s / alpha)
    };
    let mut coords = Array1::zeros(d + 1);
    coords[0] = c / kappa.sqrt_abs();
    for i in 0..d {
        coords[i + 1] = ratio * x_eucl[i];
    }
    ManifoldPoint::new_unchecked(coords, kappa)
}

/// Renormalizes drifted coordinates back onto the manifold.
///
/// For κ > 0 the whole vector is rescaled to the sphere radius; for κ < 0 the
/// first coordinate is recomputed from the spatial part as
/// `√(1/|κ| + ‖x_s‖²)` (upper sheet).
pub fn project_to_manifold(raw: ArrayView1<'_, f64>, kappa: Curvature) -> Result<ManifoldPoint> {
    if raw.len() < 2 {
        return Err(Error::DimensionMismatch {
            context: "project_to_manifold",
            expected: 2,
            actual: raw.len(),
        });
    }
    if kappa.is_spherical() {
        let norm = raw.dot(&raw).sqrt();
        if norm < 1e-300 {
            return Err(Error::NumericFault {
                context: "project_to_manifold",
                detail: "cannot project the zero vector onto a sphere".into(),
            });
        }
        let coords = raw.to_owned() * (1.0 / (kappa.sqrt_abs() * norm));
        Ok(ManifoldPoint::new_unchecked(coords, kappa))
    } else {
        let spatial = raw.slice(ndarray::s![1..]);
        let mut coords = raw.to_owned();
        coords[0] = (1.0 / kappa.abs() + spatial.dot(&spatial)).sqrt();
        Ok(ManifoldPoint::new_unchecked(coords, kappa))
    }
}

fn check_same_manifold(x: &ManifoldPoint, y: &ManifoldPoint, context: &'static str) -> Result<()> {
    if x.curvature() != y.curvature() {
        return Err(Error::CurvatureMismatch {
            left: x.curvature().value(),
            right: y.curvature().value(),
        });
    }
    if x.coords().len() != y.coords().len() {
        return Err(Error::DimensionMismatch {
            context,
            expected: x.coords().len(),
            actual: y.coords().len(),
        });
    }
    Ok(())
}
