//! A small reverse-mode automatic-differentiation engine over `f64` matrices.
//!
//! Everything trainable in this crate — the curvature-aware encoder, the
//! curvature estimator, the cross-manifold projection layer, the contrastive
//! loss — is expressed as a composition of the primitives in [`PrimitiveOp`].
//! The engine is deliberately minimal:
//!
//! - **Tape-based.** A [`Tape`] owns every intermediate value as a dense
//!   [`Array2<f64>`] (scalars are `1×1`). Recording an op evaluates it
//!   eagerly; [`Tape::backward`] then walks the tape in reverse.
//! - **Matrix-valued.** All values are 2-D. Model code vectorizes over graph
//!   nodes (rows) instead of looping, which keeps tapes short (hundreds of
//!   ops per epoch, not hundreds of thousands).
//! - **Poisoning, not panicking.** If a forward value turns non-finite the
//!   tape remembers the first offending op; `backward` refuses to run and
//!   reports the op index and name. This localizes NaN bugs to the op that
//!   created them instead of the loss that observed them.
//!
//! Gradients never flow into constants ([`Tape::constant`]); only nodes
//! reachable from a [`Tape::parameter`] are tracked. A handful of ops make
//! deliberate non-differentiable choices (clamp edges, masked softmax masks,
//! detached row maxima); those choices are documented on the op and covered
//! by the finite-difference suite at the bottom of this file.
//!
//! Parameters live *outside* the tape between epochs: training code keeps
//! master `Array2<f64>` copies, registers them on a fresh tape every epoch,
//! and applies [`AdamState::step`] to the master copies. A tape is therefore
//! a single-use object: build, backward, drop.

use ndarray::{Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// How a reduction collapses a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumAxis {
    /// Sum every entry into a `1×1` scalar.
    All,
    /// Sum each row: `n×m → n×1`.
    Row,
    /// Sum each column: `n×m → 1×m`.
    Col,
}

/// Which way a concatenation stacks its two inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatAxis {
    /// Stack vertically: `(n1×m, n2×m) → (n1+n2)×m`.
    Rows,
    /// Stack horizontally: `(n×m1, n×m2) → n×(m1+m2)`.
    Cols,
}

/// The complete primitive vocabulary of the engine.
///
/// Elementwise binary ops broadcast: shapes must agree per axis or one side
/// must be `1` along it (scalar, row vector, column vector). The adjoint of a
/// broadcast is a sum over the broadcast axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveOp {
    /// Elementwise `a + b` (broadcasting).
    Add,
    /// Elementwise `a - b` (broadcasting).
    Sub,
    /// Elementwise `a * b` (broadcasting).
    Mul,
    /// Elementwise `a / b` (broadcasting).
    Div,
    /// `op(a) · op(b)` where each flag transposes its operand first.
    MatMul { transpose_a: bool, transpose_b: bool },
    /// Two-input concatenation along the given axis.
    Concat { axis: CatAxis },
    /// Rectangular sub-block `[r0..r1) × [c0..c1)`; adjoint zero-pads.
    Slice { r0: usize, r1: usize, c0: usize, c1: usize },
    /// Reduction along [`SumAxis`].
    Sum { axis: SumAxis },
    /// Elementwise `exp`.
    Exp,
    /// Elementwise natural log.
    Log,
    /// Elementwise square root.
    Sqrt,
    /// Elementwise absolute value (derivative at 0 taken as 0).
    Abs,
    /// Elementwise hyperbolic cosine.
    Cosh,
    /// Elementwise hyperbolic sine.
    Sinh,
    /// Elementwise cosine.
    Cos,
    /// Elementwise sine.
    Sin,
    /// Elementwise arccosine; callers clamp into `(-1, 1)` first so the
    /// derivative `-1/sqrt(1-x^2)` stays bounded.
    Arccos,
    /// Elementwise inverse hyperbolic cosine; callers clamp into `(1, ∞)`.
    Arcosh,
    /// Elementwise hyperbolic tangent.
    Tanh,
    /// `x` for `x >= 0`, `slope * x` otherwise.
    LeakyRelu { slope: f64 },
    /// Row-wise masked softmax. Inputs: `[logits, mask]` where the mask is a
    /// 0/1 *constant*. Masked entries get probability 0; each row's maximum
    /// unmasked logit is subtracted before exponentiation as a detached
    /// constant, which leaves the gradient exact (softmax is shift
    /// invariant) while preventing overflow.
    MaskedSoftmax,
    /// Elementwise clamp into `[min, max]`. The gradient passes through
    /// strictly inside the window and is 0 where the value was clamped,
    /// which is exactly what the numeric guards want: a guarded quantity
    /// pinned at its safety bound stops producing gradient pressure.
    Clamp { min: f64, max: f64 },
}

impl PrimitiveOp {
    fn name(&self) -> &'static str {
        match self {
            PrimitiveOp::Add => "add",
            PrimitiveOp::Sub => "sub",
            PrimitiveOp::Mul => "mul",
            PrimitiveOp::Div => "div",
            PrimitiveOp::MatMul { .. } => "matmul",
            PrimitiveOp::Concat { .. } => "concat",
            PrimitiveOp::Slice { .. } => "slice",
            PrimitiveOp::Sum { .. } => "sum",
            PrimitiveOp::Exp => "exp",
            PrimitiveOp::Log => "log",
            PrimitiveOp::Sqrt => "sqrt",
            PrimitiveOp::Abs => "abs",
            PrimitiveOp::Cosh => "cosh",
            PrimitiveOp::Sinh => "sinh",
            PrimitiveOp::Cos => "cos",
            PrimitiveOp::Sin => "sin",
            PrimitiveOp::Arccos => "arccos",
            PrimitiveOp::Arcosh => "arcosh",
            PrimitiveOp::Tanh => "tanh",
            PrimitiveOp::LeakyRelu { .. } => "leaky_relu",
            PrimitiveOp::MaskedSoftmax => "masked_softmax",
            PrimitiveOp::Clamp { .. } => "clamp",
        }
    }

    fn arity(&self) -> usize {
        match self {
            PrimitiveOp::Add
            | PrimitiveOp::Sub
            | PrimitiveOp::Mul
            | PrimitiveOp::Div
            | PrimitiveOp::MatMul { .. }
            | PrimitiveOp::Concat { .. }
            | PrimitiveOp::MaskedSoftmax => 2,
            _ => 1,
        }
    }
}

/// Handle to a value on a [`Tape`]. Cheap to copy; only valid for the tape
/// that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

impl Var {
    /// The node index on the owning tape (also the op index reported by
    /// poisoning errors).
    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Clone, Copy)]
enum NodeKind {
    Leaf,
    Op { op: PrimitiveOp, inputs: [usize; 2] },
}

struct Node {
    value: Array2<f64>,
    kind: NodeKind,
    requires_grad: bool,
}

/// The recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_fault: Option<(usize, &'static str)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The first op that produced a non-finite value, if any.
    pub fn first_fault(&self) -> Option<(usize, &'static str)> {
        self.first_fault
    }

    fn push(&mut self, value: Array2<f64>, kind: NodeKind, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.first_fault.is_none() && value.iter().any(|v| !v.is_finite()) {
            let name = match &kind {
                NodeKind::Leaf => "leaf",
                NodeKind::Op { op, .. } => op.name(),
            };
            self.first_fault = Some((id, name));
        }
        self.nodes.push(Node {
            value,
            kind,
            requires_grad,
        });
        Var { id }
    }

    /// Registers a value gradients will NOT flow into.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, NodeKind::Leaf, false)
    }

    /// Registers a trainable value; [`Tape::backward`] produces its gradient.
    pub fn parameter(&mut self, value: Array2<f64>) -> Var {
        self.push(value, NodeKind::Leaf, true)
    }

    /// A `1×1` constant.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// The current value of a variable.
    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.id].value.view()
    }

    /// Shape of a variable as `(rows, cols)`.
    pub fn shape(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.id].value.shape();
        (s[0], s[1])
    }

    /// Whether gradients flow into this variable.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// A gradient-stopped copy: same value, recorded as a constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.id].value.clone();
        self.constant(value)
    }

    /// Records one primitive op applied to `inputs`, evaluating it eagerly.
    ///
    /// Shape problems are reported as [`Error::TapeShape`]; non-finite
    /// results are recorded silently and surface at [`Tape::backward`].
    pub fn record(&mut self, op: PrimitiveOp, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != op.arity() {
            return Err(Error::TapeShape {
                op: op.name(),
                detail: format!("expected {} inputs, got {}", op.arity(), inputs.len()),
            });
        }
        for v in inputs {
            if v.id >= self.nodes.len() {
                return Err(Error::TapeShape {
                    op: op.name(),
                    detail: format!("input id {} is not on this tape", v.id),
                });
            }
        }
        let a = &self.nodes[inputs[0].id].value;
        let b = inputs.get(1).map(|v| &self.nodes[v.id].value);
        let value = eval(op, a, b)?;
        let mut requires_grad = inputs.iter().any(|v| self.nodes[v.id].requires_grad);
        if let PrimitiveOp::MaskedSoftmax = op {
            if self.nodes[inputs[1].id].requires_grad {
                return Err(Error::TapeShape {
                    op: "masked_softmax",
                    detail: "the mask must be a constant, not a trainable value".into(),
                });
            }
            requires_grad = self.nodes[inputs[0].id].requires_grad;
        }
        let stored = [inputs[0].id, inputs.get(1).map_or(usize::MAX, |v| v.id)];
        Ok(self.push(value, NodeKind::Op { op, inputs: stored }, requires_grad))
    }

    /// Reverse pass from a `1×1` loss. Consumes nothing; the tape can still
    /// be read afterwards. Fails if the forward pass was poisoned.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if let Some((op_index, op_name)) = self.first_fault {
            return Err(Error::NonFiniteForward { op_index, op_name });
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.id].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let kind = self.nodes[id].kind;
            let NodeKind::Op { op, inputs } = kind else {
                continue; // leaves keep whatever accumulated in `grads`
            };
            let Some(g) = grads[id].take() else { continue };
            let a_id = inputs[0];
            let b_id = inputs[1];
            let out_val = &self.nodes[id].value;
            let a_val = &self.nodes[a_id].value;
            let b_val = (b_id != usize::MAX).then(|| &self.nodes[b_id].value);
            let (ga, gb) = adjoints(op, &g, out_val, a_val, b_val);
            let mut accumulate = |input_id: usize, contrib: Array2<f64>| {
                if !self.nodes[input_id].requires_grad {
                    return;
                }
                match &mut grads[input_id] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            };
            accumulate(a_id, ga);
            if let Some(gb) = gb {
                accumulate(b_id, gb);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by one [`Tape::backward`] call, addressed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// The gradient w.r.t. `v`, if any reached it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Moves the gradient out, substituting zeros of the given shape when no
    /// gradient reached the variable (an unused parameter still needs an
    /// optimizer step so its moment estimates keep decaying).
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.grads
            .get_mut(v.id)
            .and_then(Option::take)
            .unwrap_or_else(|| Array2::zeros(shape))
    }
}

// ===== forward evaluation =====

fn broadcast_shape(
    op: &'static str,
    a: &Array2<f64>,
    b: &Array2<f64>,
) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Result<usize> {
        if x == y || y == 1 {
            Ok(x)
        } else if x == 1 {
            Ok(y)
        } else {
            Err(Error::TapeShape {
                op,
                detail: format!(
                    "cannot broadcast {:?} with {:?}",
                    a.shape(),
                    b.shape()
                ),
            })
        }
    };
    Ok((dim(a.nrows(), b.nrows())?, dim(a.ncols(), b.ncols())?))
}

fn broadcast_binary(
    op: &'static str,
    a: &Array2<f64>,
    b: &Array2<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Array2<f64>> {
    let shape = broadcast_shape(op, a, b)?;
    let ab = a.broadcast(shape).expect("checked broadcast");
    let bb = b.broadcast(shape).expect("checked broadcast");
    let mut out = Array2::zeros(shape);
    ndarray::Zip::from(&mut out)
        .and(&ab)
        .and(&bb)
        .for_each(|o, &x, &y| *o = f(x, y));
    Ok(out)
}

/// Sums `g` back down to `shape` along any axis that was broadcast.
fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    debug_assert_eq!((g.nrows(), g.ncols()), shape);
    g
}

fn eval(op: PrimitiveOp, a: &Array2<f64>, b: Option<&Array2<f64>>) -> Result<Array2<f64>> {
    use PrimitiveOp as P;
    let unary = |f: fn(f64) -> f64| a.mapv(f);
    Ok(match op {
        P::Add => broadcast_binary("add", a, b.unwrap(), |x, y| x + y)?,
        P::Sub => broadcast_binary("sub", a, b.unwrap(), |x, y| x - y)?,
        P::Mul => broadcast_binary("mul", a, b.unwrap(), |x, y| x * y)?,
        P::Div => broadcast_binary("div", a, b.unwrap(), |x, y| x / y)?,
        P::MatMul {
            transpose_a,
            transpose_b,
        } => {
            let b = b.unwrap();
            let (ar, ac) = if transpose_a {
                (a.ncols(), a.nrows())
            } else {
                (a.nrows(), a.ncols())
            };
            let (br, bc) = if transpose_b {
                (b.ncols(), b.nrows())
            } else {
                (b.nrows(), b.ncols())
            };
            if ac != br {
                return Err(Error::TapeShape {
                    op: "matmul",
                    detail: format!(
                        "inner dimensions disagree: ({ar}x{ac}) . ({br}x{bc})"
                    ),
                });
            }
            match (transpose_a, transpose_b) {
                (false, false) => a.dot(b),
                (true, false) => a.t().dot(b),
                (false, true) => a.dot(&b.t()),
                (true, true) => a.t().dot(&b.t()),
            }
        }
        P::Concat { axis } => {
            let b = b.unwrap();
            let (ax, same) = match axis {
                CatAxis::Rows => (Axis(0), a.ncols() == b.ncols()),
                CatAxis::Cols => (Axis(1), a.nrows() == b.nrows()),
            };
            if !same {
                return Err(Error::TapeShape {
                    op: "concat",
                    detail: format!(
                        "off-axis sizes disagree: {:?} vs {:?}",
                        a.shape(),
                        b.shape()
                    ),
                });
            }
            ndarray::concatenate(ax, &[a.view(), b.view()]).expect("checked concat")
        }
        P::Slice { r0, r1, c0, c1 } => {
            if r0 >= r1 || c0 >= c1 || r1 > a.nrows() || c1 > a.ncols() {
                return Err(Error::TapeShape {
                    op: "slice",
                    detail: format!(
                        "block [{r0}..{r1}) x [{c0}..{c1}) does not fit in {:?}",
                        a.shape()
                    ),
                });
            }
            a.slice(ndarray::s![r0..r1, c0..c1]).to_owned()
        }
        P::Sum { axis } => match axis {
            SumAxis::All => Array2::from_elem((1, 1), a.sum()),
            SumAxis::Row => a.sum_axis(Axis(1)).insert_axis(Axis(1)),
            SumAxis::Col => a.sum_axis(Axis(0)).insert_axis(Axis(0)),
        },
        P::Exp => unary(f64::exp),
        P::Log => unary(f64::ln),
        P::Sqrt => unary(f64::sqrt),
        P::Abs => unary(f64::abs),
        P::Cosh => unary(f64::cosh),
        P::Sinh => unary(f64::sinh),
        P::Cos => unary(f64::cos),
        P::Sin => unary(f64::sin),
        P::Arccos => unary(f64::acos),
        P::Arcosh => unary(f64::acosh),
        P::Tanh => unary(f64::tanh),
        P::LeakyRelu { slope } => a.mapv(|x| if x >= 0.0 { x } else { slope * x }),
        P::MaskedSoftmax => {
            let mask = b.unwrap();
            if a.shape() != mask.shape() {
                return Err(Error::TapeShape {
                    op: "masked_softmax",
                    detail: format!(
                        "logits {:?} and mask {:?} differ",
                        a.shape(),
                        mask.shape()
                    ),
                });
            }
            let mut out = Array2::zeros(a.raw_dim());
            for i in 0..a.nrows() {
                let live: Vec<usize> =
                    (0..a.ncols()).filter(|&j| mask[(i, j)] > 0.5).collect();
                if live.is_empty() {
                    return Err(Error::TapeShape {
                        op: "masked_softmax",
                        detail: format!("row {i} has no unmasked entries"),
                    });
                }
                // Detached row max: exact by shift invariance.
                let m = live
                    .iter()
                    .map(|&j| a[(i, j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for &j in &live {
                    let e = (a[(i, j)] - m).exp();
                    out[(i, j)] = e;
                    denom += e;
                }
                for &j in &live {
                    out[(i, j)] /= denom;
                }
            }
            out
        }
        P::Clamp { min, max } => {
            if !(min <= max) {
                return Err(Error::TapeShape {
                    op: "clamp",
                    detail: format!("empty window [{min}, {max}]"),
                });
            }
            a.mapv(|x| x.clamp(min, max))
        }
    })
}

// ===== adjoints =====

/// Computes the gradients an op pushes into its inputs: `(d_input0,
/// Some(d_input1))` for binary ops, `(d_input0, None)` for unary ops and for
/// the masked softmax (whose mask is constant by contract).
fn adjoints(
    op: PrimitiveOp,
    g: &Array2<f64>,
    out: &Array2<f64>,
    a: &Array2<f64>,
    b: Option<&Array2<f64>>,
) -> (Array2<f64>, Option<Array2<f64>>) {
    use PrimitiveOp as P;
    let ashape = (a.nrows(), a.ncols());
    let unary = |da: Array2<f64>| (da, None);

    match op {
        P::Add => {
            let bv = b.unwrap();
            let bshape = (bv.nrows(), bv.ncols());
            (
                reduce_to(g.clone(), ashape),
                Some(reduce_to(g.clone(), bshape)),
            )
        }
        P::Sub => {
            let bv = b.unwrap();
            let bshape = (bv.nrows(), bv.ncols());
            (
                reduce_to(g.clone(), ashape),
                Some(reduce_to(-g.clone(), bshape)),
            )
        }
        P::Mul => {
            let bv = b.unwrap();
            let bshape = (bv.nrows(), bv.ncols());
            let shape = (out.nrows(), out.ncols());
            let ab = a.broadcast(shape).unwrap();
            let bb = bv.broadcast(shape).unwrap();
            (
                reduce_to(g * &bb, ashape),
                Some(reduce_to(g * &ab, bshape)),
            )
        }
        P::Div => {
            let bv = b.unwrap();
            let bshape = (bv.nrows(), bv.ncols());
            let shape = (out.nrows(), out.ncols());
            let ab = a.broadcast(shape).unwrap();
            let bb = bv.broadcast(shape).unwrap();
            let ga = g / &bb;
            let gb = -(g * &ab) / (&bb.to_owned() * &bb);
            (reduce_to(ga, ashape), Some(reduce_to(gb, bshape)))
        }
        P::MatMul {
            transpose_a,
            transpose_b,
        } => {
            let bv = b.unwrap();
            let (ga, gb) = match (transpose_a, transpose_b) {
                (false, false) => (g.dot(&bv.t()), a.t().dot(g)),
                (true, false) => (bv.dot(&g.t()), a.dot(g)),
                (false, true) => (g.dot(bv), g.t().dot(a)),
                (true, true) => (bv.t().dot(&g.t()), g.t().dot(&a.t())),
            };
            (ga, Some(gb))
        }
        P::Concat { axis } => {
            let (ar, ac) = ashape;
            let (ga, gb) = match axis {
                CatAxis::Rows => (
                    g.slice(ndarray::s![..ar, ..]).to_owned(),
                    g.slice(ndarray::s![ar.., ..]).to_owned(),
                ),
                CatAxis::Cols => (
                    g.slice(ndarray::s![.., ..ac]).to_owned(),
                    g.slice(ndarray::s![.., ac..]).to_owned(),
                ),
            };
            (ga, Some(gb))
        }
        P::Slice { r0, r1, c0, c1 } => {
            let mut da = Array2::zeros(ashape);
            da.slice_mut(ndarray::s![r0..r1, c0..c1]).assign(g);
            unary(da)
        }
        P::Sum { axis } => {
            let da = match axis {
                SumAxis::All => Array2::from_elem(ashape, g[(0, 0)]),
                SumAxis::Row | SumAxis::Col => g.broadcast(ashape).unwrap().to_owned(),
            };
            unary(da)
        }
        P::Exp => unary(g * out),
        P::Log => unary(g / a),
        P::Sqrt => unary(g / &(2.0 * out)),
        P::Abs => unary(
            g * &a.mapv(|x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
        ),
        P::Cosh => unary(g * &a.mapv(f64::sinh)),
        P::Sinh => unary(g * &a.mapv(f64::cosh)),
        P::Cos => unary(-(g * &a.mapv(f64::sin))),
        P::Sin => unary(g * &a.mapv(f64::cos)),
        P::Arccos => unary(g * &a.mapv(|x| -1.0 / (1.0 - x * x).sqrt())),
        P::Arcosh => unary(g * &a.mapv(|x| 1.0 / (x * x - 1.0).sqrt())),
        P::Tanh => unary(g * &out.mapv(|y| 1.0 - y * y)),
        P::LeakyRelu { slope } => unary(g * &a.mapv(|x| if x >= 0.0 { 1.0 } else { slope })),
        P::MaskedSoftmax => {
            // Per row: dl_j = y_j * (g_j - sum_k g_k y_k). Masked entries
            // have y = 0, so their gradient vanishes naturally.
            let mut da = Array2::zeros(ashape);
            for i in 0..out.nrows() {
                let s: f64 = (0..out.ncols()).map(|j| g[(i, j)] * out[(i, j)]).sum();
                for j in 0..out.ncols() {
                    da[(i, j)] = out[(i, j)] * (g[(i, j)] - s);
                }
            }
            unary(da)
        }
        P::Clamp { min, max } => {
            unary(g * &a.mapv(|x| if x > min && x < max { 1.0 } else { 0.0 }))
        }
    }
}

// ===== convenience methods (panic on misuse, like ndarray's operators) =====

macro_rules! op_method {
    ($(#[$doc:meta])* $name:ident, $op:expr, unary) => {
        $(#[$doc])*
        pub fn $name(&mut self, a: Var) -> Var {
            self.record($op, &[a]).unwrap_or_else(|e| panic!("{e}"))
        }
    };
    ($(#[$doc:meta])* $name:ident, $op:expr, binary) => {
        $(#[$doc])*
        pub fn $name(&mut self, a: Var, b: Var) -> Var {
            self.record($op, &[a, b]).unwrap_or_else(|e| panic!("{e}"))
        }
    };
}

impl Tape {
    op_method!(
        /// `a + b`, broadcasting. Panics on incompatible shapes.
        add, PrimitiveOp::Add, binary);
    op_method!(
        /// `a - b`, broadcasting. Panics on incompatible shapes.
        sub, PrimitiveOp::Sub, binary);
    op_method!(
        /// Elementwise `a * b`, broadcasting. Panics on incompatible shapes.
        mul, PrimitiveOp::Mul, binary);
    op_method!(
        /// Elementwise `a / b`, broadcasting. Panics on incompatible shapes.
        div, PrimitiveOp::Div, binary);
    op_method!(
        /// Matrix product `a · b`. Panics on incompatible shapes.
        matmul, PrimitiveOp::MatMul { transpose_a: false, transpose_b: false }, binary);
    op_method!(
        /// Matrix product `a · bᵀ`. Panics on incompatible shapes.
        matmul_nt, PrimitiveOp::MatMul { transpose_a: false, transpose_b: true }, binary);
    op_method!(
        /// Matrix product `aᵀ · b`. Panics on incompatible shapes.
        matmul_tn, PrimitiveOp::MatMul { transpose_a: true, transpose_b: false }, binary);
    op_method!(
        /// Column concatenation `[a ‖ b]`. Panics on row-count mismatch.
        concat_cols, PrimitiveOp::Concat { axis: CatAxis::Cols }, binary);
    op_method!(
        /// Row concatenation (stack `b` under `a`). Panics on column mismatch.
        concat_rows, PrimitiveOp::Concat { axis: CatAxis::Rows }, binary);
    op_method!(exp, PrimitiveOp::Exp, unary);
    op_method!(ln, PrimitiveOp::Log, unary);
    op_method!(sqrt, PrimitiveOp::Sqrt, unary);
    op_method!(abs, PrimitiveOp::Abs, unary);
    op_method!(cosh, PrimitiveOp::Cosh, unary);
    op_method!(sinh, PrimitiveOp::Sinh, unary);
    op_method!(cos, PrimitiveOp::Cos, unary);
    op_method!(sin, PrimitiveOp::Sin, unary);
    op_method!(arccos, PrimitiveOp::Arccos, unary);
    op_method!(arcosh, PrimitiveOp::Arcosh, unary);
    op_method!(tanh, PrimitiveOp::Tanh, unary);

    /// Leaky ReLU with the given negative-side slope.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.record(PrimitiveOp::LeakyRelu { slope }, &[a])
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Clamp into `[min, max]`.
    pub fn clamp(&mut self, a: Var, min: f64, max: f64) -> Var {
        self.record(PrimitiveOp::Clamp { min, max }, &[a])
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Row-wise masked softmax; `mask` must be a 0/1 constant.
    pub fn masked_softmax(&mut self, logits: Var, mask: Var) -> Var {
        self.record(PrimitiveOp::MaskedSoftmax, &[logits, mask])
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Sub-block `[r0..r1) × [c0..c1)`.
    pub fn slice(&mut self, a: Var, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Var {
        self.record(
            PrimitiveOp::Slice {
                r0: rows.start,
                r1: rows.end,
                c0: cols.start,
                c1: cols.end,
            },
            &[a],
        )
        .unwrap_or_else(|e| panic!("{e}"))
    }

    /// All columns except the first — the "spatial part" of row-stacked
    /// manifold points.
    pub fn spatial(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        self.slice(a, 0..r, 1..c)
    }

    /// The first column — the "time part" of row-stacked manifold points.
    pub fn time_col(&mut self, a: Var) -> Var {
        let (r, _) = self.shape(a);
        self.slice(a, 0..r, 0..1)
    }

    /// Sum of every entry, as a `1×1` scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        self.record(PrimitiveOp::Sum { axis: SumAxis::All }, &[a])
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Per-row sums: `n×m → n×1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        self.record(PrimitiveOp::Sum { axis: SumAxis::Row }, &[a])
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Per-column sums: `n×m → 1×m`.
    pub fn col_sums(&mut self, a: Var) -> Var {
        self.record(PrimitiveOp::Sum { axis: SumAxis::Col }, &[a])
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Mean of every entry, as a `1×1` scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum_all(a);
        let inv = self.scalar(1.0 / (r * c) as f64);
        self.mul(s, inv)
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = self.scalar(factor);
        self.mul(a, f)
    }

    /// `-a`.
    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }
}

// ===== optimizer =====

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
///
/// State is positional: `step` must always receive the same parameters in
/// the same order, which is how training code keeps optimizer state alive
/// across the fresh tape it builds every epoch.
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamState {
    /// Fresh state for the given parameter list.
    pub fn new(lr: f64, params: &[Array2<f64>]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
        }
    }

    /// One update step, in place. `grads[i]` must match `params[i]` in shape;
    /// a non-finite gradient aborts the step before touching anything.
    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: format!("#{i}"),
                });
            }
            assert_eq!(
                g.shape(),
                params[i].shape(),
                "gradient/parameter shape mismatch at #{i}"
            );
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
        Ok(())
    }
}

// ===== finite-difference checking =====

/// Verifies analytic gradients against central finite differences.
///
/// `f` must be a pure function of its parameters: it receives a fresh tape
/// and the registered parameter [`Var`]s, and returns a scalar loss. Every
/// parameter entry is perturbed by `±h` and the relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)` is compared to
/// `tol` (the `1e-3` floor keeps near-zero gradients from demanding absurd
/// absolute accuracy from an O(h²) scheme).
pub fn grad_check(
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    params: &[Array2<f64>],
    h: f64,
    tol: f64,
) -> Result<()> {
    let eval_loss = |params: &[Array2<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.parameter(p.clone())).collect();
        let loss = f(&mut tape, &vars);
        if let Some((op_index, op_name)) = tape.first_fault() {
            return Err(Error::NonFiniteForward { op_index, op_name });
        }
        Ok(tape.value(loss)[(0, 0)])
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.parameter(p.clone())).collect();
    let loss = f(&mut tape, &vars);
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Array2<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.take_or_zeros(*v, (p.nrows(), p.ncols())))
        .collect();

    // Numeric pass, one entry at a time.
    let mut work: Vec<Array2<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ((r, c), _) in p.indexed_iter() {
            work[pi][(r, c)] = p[(r, c)] + h;
            let up = eval_loss(&work)?;
            work[pi][(r, c)] = p[(r, c)] - h;
            let down = eval_loss(&work)?;
            work[pi][(r, c)] = p[(r, c)];
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][(r, c)];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            if rel > tol {
                return Err(Error::NumericFault {
                    context: "grad_check",
                    detail: format!(
                        "parameter {pi} entry ({r},{c}): analytic {a:.9e} vs numeric {numeric:.9e} (rel {rel:.3e})"
                    ),
                });
            }
        }
    }
    Ok(())
}
