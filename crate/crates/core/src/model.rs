//! Ground truth: a sparse Erdős–Rényi precision matrix, its covariance,
//! Gaussian samples drawn from it, and the dual fixed point `Γ*`.

use crate::error::{Error, Result};
use crate::matx::{cholesky, eig_sym, frob_dist, inverse_spd, SymMatrix};
use crate::rng::{Prng, STREAM_DATA, STREAM_GRAPH};
use crate::solver::{dual_update, StepSize, SolverState, BATCH_MAX_ITERS, DEFAULT_SAFETY};

/// Off-diagonal magnitudes on Erdős–Rényi edges are drawn from this range.
pub const EDGE_WEIGHT_RANGE: (f64, f64) = (0.4, 0.8);
/// Smallest eigenvalue the generated precision matrix is shifted to.
pub const DIAGONAL_MARGIN: f64 = 0.5;
pub const GAMMA_STAR_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub precision_true: SymMatrix,
    pub covariance_true: SymMatrix,
    /// Set by [`GroundTruth::with_gamma_star`].
    pub gamma_star: Option<SymMatrix>,
    /// Upper-triangle pairs `(i, j)`, `i < j`, with a nonzero precision entry.
    pub edge_set: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn from_precision(precision: SymMatrix) -> Result<Self> {
        let covariance_true = inverse_spd(&precision)?;
        let p = precision.dim();
        let edge_set = (0..p)
            .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
            .filter(|&(i, j)| precision.get(i, j) != 0.0)
            .collect();
        Ok(GroundTruth {
            precision_true: precision,
            covariance_true,
            gamma_star: None,
            edge_set,
        })
    }

    pub fn p(&self) -> usize {
        self.precision_true.dim()
    }

    pub fn with_gamma_star(mut self, lambda: f64, tol: f64) -> Result<Self> {
        self.gamma_star = Some(compute_gamma_star(&self.covariance_true, lambda, tol)?);
        Ok(self)
    }
}

/// Sparse precision matrix on an Erdős–Rényi graph.
///
/// Each pair `i < j` (row-major order) becomes an edge with probability
/// `edge_prob`; edges get weight `±u`, `u ~ U[0.4, 0.8]`, with a fair sign.
/// The diagonal is then set to `|λ_min(offdiag)| + 0.5`, so the result has
/// smallest eigenvalue exactly `0.5` up to rounding.
pub fn gen_er_precision(p: usize, edge_prob: f64, seed: u64) -> Result<GroundTruth> {
    if p < 2 {
        return Err(Error::Validation(format!("p must be at least 2, got {p}")));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::Validation(format!("edge_prob must lie in [0, 1], got {edge_prob}")));
    }
    let mut rng = Prng::new(seed, STREAM_GRAPH);
    let mut off = SymMatrix::zeros(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if rng.uniform() < edge_prob {
                let magnitude = rng.uniform_in(EDGE_WEIGHT_RANGE.0, EDGE_WEIGHT_RANGE.1);
                let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                off.set(i, j, sign * magnitude);
            }
        }
    }
    let min = eig_sym(&off)?[0];
    let precision = off.shift_diag(min.abs() + DIAGONAL_MARGIN);
    GroundTruth::from_precision(precision)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataStream {
    pub p: usize,
    pub samples: Vec<Vec<f64>>,
    /// `None` for replayed data.
    pub seed: Option<u64>,
}

impl DataStream {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `T` draws `x = L z` with `L L ᵀ = S*` and `z` standard normal.
pub fn sample_gaussian(gt: &GroundTruth, t_max: usize, seed: u64) -> Result<DataStream> {
    let l = cholesky(&gt.covariance_true)?;
    let p = gt.p();
    let mut rng = Prng::new(seed, STREAM_DATA);
    let samples = (0..t_max)
        .map(|_| {
            let z: Vec<f64> = (0..p).map(|_| rng.standard_normal()).collect();
            (0..p)
                .map(|i| (0..=i).map(|k| l.get(i, k) * z[k]).sum())
                .collect()
        })
        .collect();
    Ok(DataStream {
        p,
        samples,
        seed: Some(seed),
    })
}

/// Fixed point of the dual update under `s_star`, iterated from
/// `S* + λI` with `ζ = 0.9 λ_min(Γ)²` until consecutive iterates are within
/// `tol` in Frobenius norm.
pub fn compute_gamma_star(s_star: &SymMatrix, lambda: f64, tol: f64) -> Result<SymMatrix> {
    if lambda < 0.0 {
        return Err(Error::Validation(format!("lambda must be >= 0, got {lambda}")));
    }
    let step = StepSize::Adaptive {
        safety: DEFAULT_SAFETY,
    };
    let mut state = SolverState::initialize(s_star, lambda, step)?;
    for _ in 0..BATCH_MAX_ITERS {
        let prev = state.gamma.clone();
        state.dual_step(s_star, step)?;
        if frob_dist(&prev, &state.gamma)? <= tol {
            return Ok(state.gamma);
        }
    }
    Err(Error::NonConvergence {
        routine: "gamma-star fixed point",
        iterations: BATCH_MAX_ITERS,
    })
}

/// `‖dual_update(Γ, S, ζ, λ) − Γ‖_F` with the default adaptive `ζ`.
pub fn fixed_point_residual(gamma: &SymMatrix, s: &SymMatrix, lambda: f64) -> Result<f64> {
    let zeta = crate::solver::choose_zeta(gamma, DEFAULT_SAFETY)?;
    frob_dist(&dual_update(gamma, s, zeta, lambda)?, gamma)
}
