//! Independent oracles for the acceptance suite.
//!
//! Everything here recomputes a quantity the library produces in closed or
//! batched form by a deliberately different route — iterative descent where
//! the library uses a formula, scalar double loops where the library uses
//! masked matrix ops. Agreement between the two routes is what certifies the
//! fast path; nothing in this module calls the code it is checking.

use curvgcl::manifold::{distance, exp_map, log_map, ManifoldPoint, TangentVector};
use ndarray::{Array1, Array2};

/// Weighted Fréchet objective `Σ νᵢ·d(z, xᵢ)²`.
pub fn frechet_objective(z: &ManifoldPoint, points: &[ManifoldPoint], weights: &[f64]) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(x, &w)| {
            let d = distance(z, x).expect("objective points share one manifold");
            w * d * d
        })
        .sum()
}

/// Projected-gradient minimizer of the Fréchet objective.
///
/// The Riemannian gradient at `z` is `−2·Σ νᵢ·log_z(xᵢ)`, so every step walks
/// along `exp_z(η·Σ νᵢ·log_z(xᵢ))`. The step count is deliberately far past
/// convergence — this is the reference the closed-form aggregation is judged
/// against, so overshooting on iterations is the cheap side to err on.
pub fn frechet_pgd(
    points: &[ManifoldPoint],
    weights: &[f64],
    steps: usize,
    step_size: f64,
) -> ManifoldPoint {
    let mut z = points[0].clone();
    for _ in 0..steps {
        let mut dir = Array1::<f64>::zeros(z.coords().len());
        for (x, &w) in points.iter().zip(weights) {
            let lg = log_map(&z, x).expect("oracle sets stay within one injectivity radius");
            dir.scaled_add(w, &lg.coords());
        }
        let v = TangentVector::new(dir * step_size, z.clone())
            .expect("a weighted sum of tangents is tangent");
        z = exp_map(&z, &v);
    }
    z
}

/// InfoNCE by scalar double loops, straight from the definition: for each
/// anchor `i`, `−S_ii/τ + ln Σ_j exp(S_ij/τ)`, the denominator running over
/// the pairs the mode admits (every `j`, or every `j ≠ i`).
///
/// The log-sum-exp is stabilized with its own row maximum, computed here —
/// independent of whatever shift the batched path subtracts. Returns the loss
/// and the number of denominator pairs actually visited.
pub fn naive_infonce(sim: &Array2<f64>, tau: f64, include_diagonal: bool) -> (f64, usize) {
    let n = sim.nrows();
    assert_eq!(n, sim.ncols(), "similarity matrix must be square");
    let mut loss = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        let mut row_max = f64::NEG_INFINITY;
        for j in 0..n {
            if include_diagonal || j != i {
                row_max = row_max.max(sim[(i, j)] / tau);
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            if include_diagonal || j != i {
                denom += (sim[(i, j)] / tau - row_max).exp();
                pairs += 1;
            }
        }
        loss += denom.ln() + row_max - sim[(i, i)] / tau;
    }
    (loss, pairs)
}
