//! Label-free contrastive distillation and the continual training loop.
//!
//! Training never sees a label. The signal is agreement between two
//! encodings of the same node:
//!
//! - **intra-distillation** contrasts the student's low view (first encoder
//!   layer) against its high view (last layer) on the current graph;
//! - **inter-distillation** contrasts a frozen teacher's high view against
//!   the student's, carrying knowledge across tasks.
//!
//! Both are InfoNCE sums over anchors `i`:
//!
//! ```text
//! J = Σ_i −log( exp(Sim(x_i, y_i)/τ) / Σ_{j≠i} exp(Sim(x_i, y_j)/τ) )
//! ```
//!
//! with `Sim` the negated geodesic distance after a cross-manifold bridge
//! (the Lorentz projection of [`crate::lorentz`], or the tangent-space
//! resize map of [`crate::eval`] in the ablation). The default denominator
//! excludes the positive pair — the `i ≠ j` indicator read literally
//! ([`DenominatorMode::NegativesOnly`], `|V|·(|V|−1)` pairs per loss term);
//! [`DenominatorMode::Standard`] includes it, which bounds the loss below
//! by zero.
//!
//! A continual **session** trains a student on one graph: every epoch
//! re-estimates κ (when the curvature is learned), re-encodes both views,
//! assembles `J = J_intra + λ·J_inter`, and takes an Adam step. The teacher
//! is encoded exactly once per session — its parameters and κ are frozen —
//! and when λ = 0 or no teacher exists, the inter term is skipped outright,
//! so a λ = 0 run is bit-identical to a no-teacher run. After a session the
//! student is promoted into the next session's teacher and the old graph is
//! dropped; nothing is replayed.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::autodiff::{AdamState, Tape, Var};
use crate::curvature::{curvnet_forward_tape, forman_oracle, CurvNetParams};
use crate::encoder::{encode, encode_tape, EncoderConfig, LayerVars, RgcnLayerParams,
                     points_to_rows, DEFAULT_LEAKY_SLOPE};
use crate::graph::{Graph, LabelAccessGuard, TaskSequence};
use crate::lorentz::{lorentz_similarity_matrix, FeasibilityMode};
use crate::manifold::Curvature;
use crate::sampling::{component_seed, orthonormal_rows, seeded_rng};
use crate::{Error, Result};

/// Plateau threshold: an epoch counts toward convergence when the absolute
/// loss change falls below this.
pub const CONVERGENCE_TOL: f64 = 1e-5;

/// Which pairs the InfoNCE denominator sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenominatorMode {
    /// Negatives only (`j ≠ i`), the indicator read literally. Default.
    #[default]
    NegativesOnly,
    /// Positives included — the common InfoNCE form, loss ≥ 0.
    Standard,
}

/// Number of similarity pairs one loss term sums over in its denominators.
pub const fn denominator_pair_count(n: usize, mode: DenominatorMode) -> usize {
    match mode {
        DenominatorMode::NegativesOnly => n * (n - 1),
        DenominatorMode::Standard => n * n,
    }
}

/// Where κ comes from during a session.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CurvatureMode {
    /// Re-estimated by the trainable curvature network every epoch.
    #[default]
    Curvnet,
    /// Pinned to a constant for the whole session (no gradient).
    Fixed(f64),
    /// Pinned to the combinatorial curvature estimate of the session graph.
    FormanOracle,
}

/// Which cross-manifold bridge the similarity uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityMode {
    /// The trainable Lorentz projection. Default.
    #[default]
    Glp,
    /// The parameter-free log → resize → exp fallback (ablation).
    Tangent,
}

/// Session hyperparameters. `..Default::default()` gives the reference
/// configuration: λ = 1, τ = 1, lr = 0.01, 500 epochs, patience 20.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Balance between intra- and inter-distillation.
    pub lambda: f64,
    /// Similarity temperature.
    pub tau: f64,
    /// Adam learning rate.
    pub lr: f64,
    /// Hard epoch cap per session.
    pub epochs_max: usize,
    /// Consecutive sub-threshold epochs required to declare convergence.
    pub patience: usize,
    /// Provenance seed recorded in checkpoints (initialization happens in
    /// [`StudentState::init`], which takes its own seed).
    pub seed: u64,
    pub denominator_mode: DenominatorMode,
    pub curvature_mode: CurvatureMode,
    pub similarity_mode: SimilarityMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 1.0,
            lr: 0.01,
            epochs_max: 500,
            patience: 20,
            seed: 0,
            denominator_mode: DenominatorMode::default(),
            curvature_mode: CurvatureMode::default(),
            similarity_mode: SimilarityMode::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_max < 1 {
            return Err(Error::ConfigInvalid {
                detail: "epochs_max must be at least 1".into(),
            });
        }
        if self.patience < 1 {
            return Err(Error::ConfigInvalid {
                detail: "patience must be at least 1".into(),
            });
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::ConfigInvalid {
                detail: format!("lambda must be finite and >= 0, got {}", self.lambda),
            });
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::ConfigInvalid {
                detail: format!("tau must be finite and > 0, got {}", self.tau),
            });
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::ConfigInvalid {
                detail: format!("learning rate must be finite and > 0, got {}", self.lr),
            });
        }
        if let CurvatureMode::Fixed(k) = self.curvature_mode {
            Curvature::new(k)?;
        }
        Ok(())
    }
}

// ===== model state =====

/// Everything the student trains: encoder layers, the curvature network,
/// and the two Lorentz bridges (intra: low → high view; inter: teacher high
/// → student high). `kappa` tracks the latest estimate — it is an output of
/// training, not a trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentState {
    pub layers: Vec<RgcnLayerParams>,
    pub curvnet: CurvNetParams,
    pub intra_w: Array2<f64>,
    pub intra_b: Array1<f64>,
    pub inter_w: Array2<f64>,
    pub inter_b: Array1<f64>,
    pub leaky_slope: f64,
    pub kappa: Curvature,
}

impl StudentState {
    /// Fresh state: encoder per [`EncoderConfig`] rules, curvature network
    /// with `curvnet_hidden` units, Lorentz bridges, κ seeded hyperbolic (−1)
    /// until the first estimate replaces it.
    ///
    /// The intra bridge relates two *different* views with no canonical
    /// correspondence, so it starts as a random isometry. The inter bridge
    /// relates the *same* view across two model generations — at promotion
    /// the teacher equals the student — so it starts at the identity, which
    /// makes the teacher anchor bind from the first gradient step instead of
    /// after the optimizer has un-scrambled a random rotation.
    ///
    /// Panics on invalid dimensions — this mirrors the array constructors;
    /// file-driven configuration goes through the validating paths instead.
    pub fn init(layer_dims: &[usize], curvnet_hidden: usize, kappa_scale: f64, seed: u64) -> Self {
        let cfg = EncoderConfig::new(layer_dims.to_vec(), DEFAULT_LEAKY_SLOPE)
            .expect("invalid encoder dimensions");
        let layers = cfg.init_params(component_seed(seed, "encoder"));
        let curvnet = CurvNetParams::init(
            curvnet_hidden,
            kappa_scale,
            component_seed(seed, "curvnet"),
        )
        .expect("invalid curvature network shape");
        let d_low = layer_dims[1];
        let d_high = *layer_dims.last().unwrap();
        let intra_w = orthogonal_bridge(d_low, d_high, component_seed(seed, "bridge.intra"));
        let inter_w = Array2::eye(d_high);
        Self {
            layers,
            curvnet,
            intra_w,
            intra_b: Array1::zeros(d_high),
            inter_w,
            inter_b: Array1::zeros(d_high),
            leaky_slope: cfg.leaky_slope,
            kappa: Curvature::new(-1.0).unwrap(),
        }
    }

    /// `[d_in, hidden…, d_out]` as the encoder sees it.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].d_in()];
        dims.extend(self.layers.iter().map(|l| l.d_out()));
        dims
    }

    pub fn d_low(&self) -> usize {
        self.layers[0].d_out()
    }

    pub fn d_high(&self) -> usize {
        self.layers.last().unwrap().d_out()
    }
}

fn orthogonal_bridge(d_in: usize, d_out: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded_rng(seed);
    if d_out <= d_in {
        orthonormal_rows(d_out, d_in, &mut rng)
    } else {
        orthonormal_rows(d_in, d_out, &mut rng).t().to_owned()
    }
}

/// A frozen student. Immutable by construction — there is no mutable access,
/// and a session only ever reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    state: StudentState,
}

impl TeacherState {
    pub fn student(&self) -> &StudentState {
        &self.state
    }

    pub fn kappa(&self) -> Curvature {
        self.state.kappa
    }
}

/// Deep, frozen copy of the student — the handoff between sessions.
pub fn promote(student: &StudentState) -> TeacherState {
    TeacherState {
        state: student.clone(),
    }
}

// ===== losses =====

/// The bridge a similarity matrix is computed through.
#[derive(Debug, Clone, Copy)]
pub enum SimilarityBridge {
    /// Trainable Lorentz projection onto the manifold of `kappa_out`.
    Glp { w: Var, b: Var, kappa_out: Var },
    /// Parameter-free tangent resize between the two manifolds.
    Tangent { kappa_in: Var, kappa_out: Var },
}

/// `Sim_ij = −d(bridge(x_i), y_j)`; `y` must live on the target manifold.
pub fn similarity_matrix(tape: &mut Tape, x: Var, y: Var, bridge: SimilarityBridge) -> Result<Var> {
    match bridge {
        SimilarityBridge::Glp { w, b, kappa_out } => {
            lorentz_similarity_matrix(tape, x, y, w, b, kappa_out, FeasibilityMode::Lenient)
        }
        SimilarityBridge::Tangent { kappa_in, kappa_out } => {
            Ok(crate::eval::tangent_similarity_matrix(tape, x, y, kappa_in, kappa_out))
        }
    }
}

/// InfoNCE over a square similarity matrix: anchors index rows, the positive
/// of anchor `i` is column `i`.
///
/// The row-wise max is subtracted as a *detached* shift before
/// exponentiating — exact by the shift invariance of logsumexp, and it keeps
/// `exp` in range no matter how the similarities scale.
pub fn contrastive_loss(
    tape: &mut Tape,
    sim: Var,
    tau: f64,
    mode: DenominatorMode,
) -> Result<Var> {
    let (n, m) = tape.shape(sim);
    if n != m {
        return Err(Error::TapeShape {
            op: "contrastive_loss",
            detail: format!("similarity matrix must be square, got {n}x{m}"),
        });
    }
    if n < 2 {
        return Err(Error::GraphInvalid {
            detail: "contrastive loss needs at least two nodes (one anchor has no negatives)"
                .into(),
        });
    }
    assert!(tau.is_finite() && tau > 0.0, "temperature must be positive");

    let s = tape.scale(sim, 1.0 / tau);
    let eye = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let mask_arr = match mode {
        DenominatorMode::NegativesOnly => Array2::from_elem((n, n), 1.0) - &eye,
        DenominatorMode::Standard => Array2::from_elem((n, n), 1.0),
    };

    // Detached row maxima over the masked entries.
    let sv = tape.value(s);
    let shift_arr = Array2::from_shape_fn((n, 1), |(i, _)| {
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {
            if mask_arr[(i, j)] > 0.0 {
                best = best.max(sv[(i, j)]);
            }
        }
        best
    });
    let shift = tape.constant(shift_arr);
    let mask = tape.constant(mask_arr);
    let eye_c = tape.constant(eye);

    let centered = tape.sub(s, shift); // column broadcast
    let e = tape.exp(centered);
    let masked = tape.mul(e, mask);
    let sums = tape.row_sums(masked);
    let ln_sums = tape.ln(sums);
    let lse = tape.add(ln_sums, shift); // n×1

    let diag_terms = tape.mul(s, eye_c);
    let positives = tape.row_sums(diag_terms); // S_ii/τ as n×1

    let per_anchor = tape.sub(lse, positives);
    Ok(tape.sum_all(per_anchor))
}

/// Agreement between the student's own two views of the current graph.
pub fn intra_loss(
    tape: &mut Tape,
    low: Var,
    high: Var,
    bridge: SimilarityBridge,
    tau: f64,
    mode: DenominatorMode,
) -> Result<Var> {
    let sim = similarity_matrix(tape, low, high, bridge)?;
    contrastive_loss(tape, sim, tau, mode)
}

/// Agreement between the frozen teacher's high view (anchors) and the
/// student's (candidates). The teacher rows enter as constants — no
/// gradient can reach teacher parameters by construction.
pub fn inter_loss(
    tape: &mut Tape,
    teacher_high: Var,
    student_high: Var,
    bridge: SimilarityBridge,
    tau: f64,
    mode: DenominatorMode,
) -> Result<Var> {
    let sim = similarity_matrix(tape, teacher_high, student_high, bridge)?;
    contrastive_loss(tape, sim, tau, mode)
}

// ===== session plumbing =====

/// How a session's flat tensor list maps onto model parts. The order is
/// frozen for the whole session — the optimizer state is positional.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLayout {
    pub n_layers: usize,
    pub train_curvnet: bool,
    pub intra_bridge: bool,
    pub inter_bridge: bool,
    pub kappa_scale: f64,
    pub leaky_slope: f64,
    /// `Some` pins κ for the whole session (fixed / oracle modes).
    pub fixed_kappa: Option<f64>,
}

impl SessionLayout {
    /// Decides which tensor groups train, given the config and whether a
    /// teacher participates. Pinned-κ modes resolve their value here.
    pub fn plan(
        state: &StudentState,
        cfg: &DistillConfig,
        g: &Graph,
        has_teacher: bool,
    ) -> Result<Self> {
        let fixed_kappa = match cfg.curvature_mode {
            CurvatureMode::Curvnet => None,
            CurvatureMode::Fixed(k) => Some(Curvature::new(k)?.value()),
            CurvatureMode::FormanOracle => Some(forman_oracle(g)?.value()),
        };
        let glp = cfg.similarity_mode == SimilarityMode::Glp;
        Ok(Self {
            n_layers: state.layers.len(),
            train_curvnet: fixed_kappa.is_none(),
            intra_bridge: glp,
            inter_bridge: glp && has_teacher && cfg.lambda > 0.0,
            kappa_scale: state.curvnet.kappa_scale,
            leaky_slope: state.leaky_slope,
            fixed_kappa,
        })
    }

    /// Flattens the trainable tensors in session order. Biases are carried
    /// as `1×d` rows (the tape's broadcasting layout).
    pub fn tensors(&self, state: &StudentState) -> Vec<Array2<f64>> {
        let mut out = Vec::new();
        for layer in &state.layers {
            out.push(layer.w.clone());
            out.push(layer.theta.clone());
        }
        if self.train_curvnet {
            out.push(state.curvnet.m1.clone());
            out.push(state.curvnet.m2.clone());
        }
        if self.intra_bridge {
            out.push(state.intra_w.clone());
            out.push(row(&state.intra_b));
        }
        if self.inter_bridge {
            out.push(state.inter_w.clone());
            out.push(row(&state.inter_b));
        }
        out
    }

    /// Writes trained tensors back into the state, inverting [`tensors`].
    ///
    /// [`tensors`]: SessionLayout::tensors
    pub fn write_back(&self, state: &mut StudentState, tensors: &[Array2<f64>]) {
        let mut it = tensors.iter();
        for layer in &mut state.layers {
            layer.w = it.next().expect("layer weight").clone();
            layer.theta = it.next().expect("layer attention").clone();
        }
        if self.train_curvnet {
            state.curvnet.m1 = it.next().expect("curvnet m1").clone();
            state.curvnet.m2 = it.next().expect("curvnet m2").clone();
        }
        if self.intra_bridge {
            state.intra_w = it.next().expect("intra w").clone();
            state.intra_b = unrow(it.next().expect("intra b"));
        }
        if self.inter_bridge {
            state.inter_w = it.next().expect("inter w").clone();
            state.inter_b = unrow(it.next().expect("inter b"));
        }
        assert!(it.next().is_none(), "tensor list longer than the layout");
    }
}

fn row(b: &Array1<f64>) -> Array2<f64> {
    b.clone().insert_axis(ndarray::Axis(0))
}

fn unrow(b: &Array2<f64>) -> Array1<f64> {
    b.row(0).to_owned()
}

/// The teacher's contribution to a session, computed once up front: its
/// high view of the session graph (kernel encoding — no tape, no gradient)
/// and its frozen κ.
#[derive(Debug, Clone)]
pub struct TeacherContext {
    pub high_rows: Array2<f64>,
    pub kappa: f64,
}

/// Encodes the session graph under the teacher's frozen parameters.
pub fn teacher_context(
    teacher: &TeacherState,
    g: &Graph,
    feats: &Array2<f64>,
) -> Result<TeacherContext> {
    let t = teacher.student();
    let (_, high) = encode(g, feats, &t.layers, t.kappa, t.leaky_slope)?;
    Ok(TeacherContext {
        high_rows: points_to_rows(&high),
        kappa: t.kappa.value(),
    })
}

/// Builds one epoch's full objective on the tape: κ estimate → encoder →
/// intra loss (→ inter loss) → weighted sum. `vars` must follow `layout`
/// ordering; the returned scalar is ready for `backward`.
///
/// This is the exact computation `run_session` differentiates — exposed so
/// the objective can be verified externally (finite differences) against
/// precisely what training optimizes.
pub fn epoch_loss(
    tape: &mut Tape,
    g: &Graph,
    feats: &Array2<f64>,
    vars: &[Var],
    layout: &SessionLayout,
    teacher: Option<&TeacherContext>,
    cfg: &DistillConfig,
) -> Result<Var> {
    let mut it = vars.iter().copied();
    let layers: Vec<LayerVars> = (0..layout.n_layers)
        .map(|_| LayerVars {
            w: it.next().expect("layer weight var"),
            theta: it.next().expect("layer attention var"),
        })
        .collect();
    let curvnet_vars = if layout.train_curvnet {
        Some((
            it.next().expect("curvnet m1 var"),
            it.next().expect("curvnet m2 var"),
        ))
    } else {
        None
    };
    let intra_vars = if layout.intra_bridge {
        Some((it.next().expect("intra w var"), it.next().expect("intra b var")))
    } else {
        None
    };
    let inter_vars = if layout.inter_bridge {
        Some((it.next().expect("inter w var"), it.next().expect("inter b var")))
    } else {
        None
    };
    assert!(it.next().is_none(), "var list longer than the layout");

    let kappa = match (layout.fixed_kappa, curvnet_vars) {
        (Some(k), _) => tape.constant(Array2::from_elem((1, 1), k)),
        (None, Some((m1, m2))) => curvnet_forward_tape(tape, g, m1, m2, layout.kappa_scale),
        (None, None) => unreachable!("layout trains curvnet or pins kappa"),
    };

    let f = tape.constant(feats.clone());
    let (low, high) = encode_tape(tape, g, f, &layers, kappa, layout.leaky_slope)?;

    let intra_bridge = match intra_vars {
        Some((w, b)) => SimilarityBridge::Glp { w, b, kappa_out: kappa },
        None => SimilarityBridge::Tangent { kappa_in: kappa, kappa_out: kappa },
    };
    let mut loss = intra_loss(tape, low, high, intra_bridge, cfg.tau, cfg.denominator_mode)?;

    if let Some(tc) = teacher {
        if cfg.lambda > 0.0 {
            let t_rows = tape.constant(tc.high_rows.clone());
            let t_kappa = tape.constant(Array2::from_elem((1, 1), tc.kappa));
            let inter_bridge = match inter_vars {
                Some((w, b)) => SimilarityBridge::Glp { w, b, kappa_out: kappa },
                None => SimilarityBridge::Tangent { kappa_in: t_kappa, kappa_out: kappa },
            };
            let j_inter = inter_loss(
                tape,
                t_rows,
                high,
                inter_bridge,
                cfg.tau,
                cfg.denominator_mode,
            )?;
            let weighted = tape.scale(j_inter, cfg.lambda);
            loss = tape.add(loss, weighted);
        }
    }
    Ok(loss)
}

// ===== the session loop =====

/// One epoch's record: the loss *before* that epoch's step, and the κ the
/// epoch trained under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub kappa: f64,
}

/// Per-epoch training trace of one session.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_kappa(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.kappa)
    }

    /// `epoch,loss,kappa` rows — the loss-curve CSV format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,kappa\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.kappa));
        }
        out
    }
}

/// Trains one continual session on `g`.
///
/// Per epoch: estimate κ, encode both views, assemble
/// `J = J_intra + λ·J_inter` (the inter term exists only with a teacher and
/// λ > 0), backpropagate, Adam-step. Stops at `epochs_max` or once the loss
/// change stays below [`CONVERGENCE_TOL`] for `patience` consecutive epochs.
///
/// Labels are never read — a guard makes any access panic loudly.
pub fn run_session(
    g: &Graph,
    teacher: Option<&TeacherState>,
    init: StudentState,
    cfg: &DistillConfig,
) -> Result<(StudentState, TrainingLog)> {
    cfg.validate()?;
    let _labels_off_limits = LabelAccessGuard::arm();

    let mut state = init;
    let feats = g.input_features();
    if feats.ncols() != state.layers[0].d_in() {
        return Err(Error::DimensionMismatch {
            context: "run_session: input feature width vs first encoder layer",
            expected: state.layers[0].d_in(),
            actual: feats.ncols(),
        });
    }

    let tc = match teacher {
        Some(t) if cfg.lambda > 0.0 => {
            let ctx = teacher_context(t, g, &feats)?;
            if ctx.high_rows.ncols() != state.inter_w.ncols() + 1 {
                return Err(Error::DimensionMismatch {
                    context: "run_session: teacher high view vs inter bridge",
                    expected: state.inter_w.ncols() + 1,
                    actual: ctx.high_rows.ncols(),
                });
            }
            Some(ctx)
        }
        _ => None,
    };

    let layout = SessionLayout::plan(&state, cfg, g, tc.is_some())?;
    let mut tensors = layout.tensors(&state);
    let mut adam = AdamState::new(cfg.lr, &tensors);

    let mut log = TrainingLog::default();
    let mut prev_loss = f64::INFINITY;
    let mut calm_epochs = 0usize;

    for epoch in 1..=cfg.epochs_max {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.parameter(t.clone())).collect();
        let loss_var = epoch_loss(&mut tape, g, &feats, &vars, &layout, tc.as_ref(), cfg)?;
        let loss = tape.value(loss_var)[(0, 0)];
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log.epochs.push(EpochRecord {
            epoch,
            loss,
            kappa: epoch_kappa(&tape, &vars, &layout, g),
        });

        let mut grads_by_var = tape.backward(loss_var)?;
        let grads: Vec<Array2<f64>> = vars
            .iter()
            .zip(&tensors)
            .map(|(v, t)| grads_by_var.take_or_zeros(*v, (t.nrows(), t.ncols())))
            .collect();
        adam.step(&mut tensors, &grads)?;

        if (loss - prev_loss).abs() < CONVERGENCE_TOL {
            calm_epochs += 1;
            if calm_epochs >= cfg.patience {
                break;
            }
        } else {
            calm_epochs = 0;
        }
        prev_loss = loss;
    }

    layout.write_back(&mut state, &tensors);
    // The log keeps per-epoch (pre-step) estimates; the returned state
    // carries the estimate of the *final* parameters on this graph, which
    // is what a later evaluation of the same graph will resolve.
    state.kappa = match layout.fixed_kappa {
        Some(k) => Curvature::new(k)?,
        None => crate::curvature::curvnet_forward(g, &state.curvnet)?,
    };
    Ok((state, log))
}

/// Reads the κ an epoch trained under, without rebuilding anything: pinned
/// modes have it in the layout; the learned mode recomputes the (cheap)
/// kernel forward from the *current* tensor values.
fn epoch_kappa(tape: &Tape, vars: &[Var], layout: &SessionLayout, g: &Graph) -> f64 {
    if let Some(k) = layout.fixed_kappa {
        return k;
    }
    // The curvnet vars sit right after the encoder pairs.
    let m1 = vars[2 * layout.n_layers];
    let m2 = vars[2 * layout.n_layers + 1];
    let params = CurvNetParams::new(
        tape.value(m1).to_owned(),
        tape.value(m2).to_owned(),
        layout.kappa_scale,
    )
    .expect("curvnet tensors stay shape-valid during training");
    crate::curvature::curvnet_forward(g, &params)
        .expect("curvnet forward on the session graph")
        .value()
}

/// Chains sessions across a task sequence: train task 0 without a teacher,
/// promote, train task 1 under that teacher, and so on. Task graphs are
/// loaded one at a time and dropped before the next loads. When `ckpt_dir`
/// is given, each session's result is persisted as `task_<t>.ckpt`.
///
/// Returns the student after every session plus the per-session logs.
pub fn run_sequence(
    seq: &TaskSequence,
    init: StudentState,
    cfg: &DistillConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(Vec<StudentState>, Vec<TrainingLog>)> {
    let mut states = Vec::with_capacity(seq.len());
    let mut logs = Vec::with_capacity(seq.len());
    let mut student = init;
    let mut teacher: Option<TeacherState> = None;

    for (t, task) in seq.tasks().iter().enumerate() {
        let g = task.load()?;
        let (trained, log) = run_session(&g, teacher.as_ref(), student, cfg)?;
        drop(g); // continual contract: the historical graph is gone
        if let Some(dir) = ckpt_dir {
            crate::checkpoint::save(
                &dir.join(format!("task_{t}.ckpt")),
                &trained,
                cfg.seed,
                t as u32,
                crate::checkpoint::config_hash(cfg),
            )?;
        }
        teacher = Some(promote(&trained));
        states.push(trained.clone());
        logs.push(log);
        student = trained;
    }
    Ok((states, logs))
}
