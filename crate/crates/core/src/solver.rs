//! Graphical alternating minimization.
//!
//! The dual iterate `Γ` is kept entrywise within `λ` of the sample covariance
//! `S`; the primal pair is recovered in closed form as `Ω = Γ⁻¹` and
//! `Φ = S_λ(ζΩ − S + Γ) / ζ`. The dual step itself is
//!
//! ```text
//! Γ ← C_λ(Γ − S + ζ Γ⁻¹) + S
//! ```
//!
//! [`Ogama`] drives the online variant (K dual steps per arriving sample),
//! [`gama_batch`] iterates to a fixed point for one fixed `S`.

use log::warn;

use crate::error::{Error, Result};
use crate::matx::{self, clip_scalar, eig_sym, frob_dist, soft_threshold, SymMatrix};

pub const DEFAULT_SAFETY: f64 = 0.9;
pub const BATCH_MAX_ITERS: usize = 100_000;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Step-size policy for the dual update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    /// `ζ = safety · λ_min(Γ)²`, re-chosen after every dual step.
    Adaptive { safety: f64 },
    /// The same `ζ` for every step and every time.
    Constant(f64),
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Adaptive {
            safety: DEFAULT_SAFETY,
        }
    }
}

impl StepSize {
    fn choose(&self, gamma_min_eig: f64) -> Result<f64> {
        if !(gamma_min_eig > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: 0,
                pivot: gamma_min_eig,
            });
        }
        Ok(match *self {
            StepSize::Adaptive { safety } => safety * gamma_min_eig * gamma_min_eig,
            StepSize::Constant(zeta) => zeta,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub gamma: SymMatrix,
    pub omega: SymMatrix,
    pub phi: SymMatrix,
    /// Step size chosen after the latest dual step.
    pub zeta: f64,
    pub lambda: f64,
    /// Total dual steps taken.
    pub iteration: usize,
    /// Extreme eigenvalues of `gamma`.
    pub eig_min: f64,
    pub eig_max: f64,
}

/// One dual iterate as seen by the step-size rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterateInfo {
    pub eig_min: f64,
    pub eig_max: f64,
    pub zeta: f64,
}

/// Running sample covariance `S_t = ((t − 1) S_{t−1} + x xᵀ) / t`.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineCovariance {
    pub s: SymMatrix,
    pub t: usize,
}

impl OnlineCovariance {
    pub fn new(p: usize) -> Self {
        OnlineCovariance {
            s: SymMatrix::zeros(p),
            t: 0,
        }
    }

    pub fn update(&self, x: &[f64]) -> Result<Self> {
        online_cov_update(self, x)
    }
}

pub fn online_cov_update(prev: &OnlineCovariance, x: &[f64]) -> Result<OnlineCovariance> {
    let p = prev.s.dim();
    if x.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: x.len(),
        });
    }
    let t = prev.t + 1;
    let s = SymMatrix::from_fn(p, |i, j| recursive_mean(prev.s.get(i, j), x[i] * x[j], t));
    Ok(OnlineCovariance { s, t })
}

/// `((t − 1) prev + sample) / t`. Shared by every covariance recursion so
/// agent-side and centralized estimates round identically.
#[inline]
pub(crate) fn recursive_mean(prev: f64, sample: f64, t: usize) -> f64 {
    ((t - 1) as f64 * prev + sample) / t as f64
}

/// `C_λ(Γ − S + ζΓ⁻¹) + S`, exactly dual-feasible: every returned entry
/// satisfies `|Γ(i,j) − S(i,j)| ≤ λ` in floating point.
pub fn dual_update(gamma: &SymMatrix, s: &SymMatrix, zeta: f64, lambda: f64) -> Result<SymMatrix> {
    if gamma.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: gamma.dim(),
            found: s.dim(),
        });
    }
    let gamma_inv = matx::inverse_spd(gamma)?;
    Ok(SymMatrix::from_fn(gamma.dim(), |i, j| {
        let sij = s.get(i, j);
        let x = gamma.get(i, j) - sij + zeta * gamma_inv.get(i, j);
        feasible_sum(clip_scalar(x, lambda), sij, lambda)
    }))
}

/// `clipped + s`, nudged toward `s` by single ulps when rounding pushed the
/// difference past `lambda`.
fn feasible_sum(clipped: f64, s: f64, lambda: f64) -> f64 {
    let mut v = clipped + s;
    while (v - s).abs() > lambda {
        v = if v > s { v.next_down() } else { v.next_up() };
    }
    v
}

/// `Ω = Γ⁻¹`
pub fn omega_update(gamma: &SymMatrix) -> Result<SymMatrix> {
    matx::inverse_spd(gamma)
}

/// `Φ = S_λ(ζΩ − S + Γ) / ζ`
pub fn phi_update(
    omega_next: &SymMatrix,
    gamma: &SymMatrix,
    s: &SymMatrix,
    zeta: f64,
    lambda: f64,
) -> SymMatrix {
    let arg = SymMatrix::from_fn(s.dim(), |i, j| {
        zeta * omega_next.get(i, j) - s.get(i, j) + gamma.get(i, j)
    });
    soft_threshold(&arg, lambda).scale(1.0 / zeta)
}

/// `safety · λ_min(Γ)²`
pub fn choose_zeta(gamma: &SymMatrix, safety: f64) -> Result<f64> {
    let min = eig_sym(gamma)?[0];
    StepSize::Adaptive { safety }.choose(min)
}

fn eig_extremes(m: &SymMatrix) -> Result<(f64, f64)> {
    let ev = eig_sym(m)?;
    Ok((ev[0], ev[ev.len() - 1]))
}

impl SolverState {
    /// `Γ = S + λI` with `Ω, Φ` refreshed. The diagonal is rounded so that
    /// `Γ − S` stays within `λ`.
    pub fn initialize(s: &SymMatrix, lambda: f64, step: StepSize) -> Result<Self> {
        let gamma = SymMatrix::from_fn(s.dim(), |i, j| {
            if i == j {
                feasible_sum(lambda, s.get(i, i), lambda)
            } else {
                s.get(i, j)
            }
        });
        let (eig_min, eig_max) = eig_extremes(&gamma)?;
        let zeta = step.choose(eig_min)?;
        let mut state = SolverState {
            omega: SymMatrix::zeros(s.dim()),
            phi: SymMatrix::zeros(s.dim()),
            gamma,
            zeta,
            lambda,
            iteration: 0,
            eig_min,
            eig_max,
        };
        state.refresh_primal(s)?;
        Ok(state)
    }

    /// One dual step against `s`, then a new step size for the next one.
    pub fn dual_step(&mut self, s: &SymMatrix, step: StepSize) -> Result<IterateInfo> {
        self.gamma = dual_update(&self.gamma, s, self.zeta, self.lambda)?;
        let (eig_min, eig_max) = eig_extremes(&self.gamma)?;
        self.eig_min = eig_min;
        self.eig_max = eig_max;
        self.zeta = step.choose(eig_min)?;
        self.iteration += 1;
        Ok(IterateInfo {
            eig_min,
            eig_max,
            zeta: self.zeta,
        })
    }

    /// Closed-form `Ω, Φ` for the current `Γ` and `ζ`.
    pub fn refresh_primal(&mut self, s: &SymMatrix) -> Result<()> {
        self.omega = omega_update(&self.gamma)?;
        self.phi = phi_update(&self.omega, &self.gamma, s, self.zeta, self.lambda);
        Ok(())
    }
}

/// Online graphical alternating minimization for a single estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ogama {
    /// Dual steps per time step.
    pub k: usize,
    pub t0: usize,
    pub lambda: f64,
    pub step: StepSize,
}

/// What one call to [`Ogama::step`] did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepTrace {
    /// Set at `t = t0`: the initial iterate.
    pub init: Option<IterateInfo>,
    /// One entry per dual step.
    pub iterates: Vec<IterateInfo>,
}

impl Ogama {
    /// Advances the estimator to time `t` given the current covariance
    /// estimate. Returns `None` while `t < t0`.
    ///
    /// At `t = t0` the previous state is ignored and `Γ = S + λI`. For
    /// `t > t0` the previous state is warm-started through `k` dual steps.
    pub fn step(
        &self,
        state: Option<SolverState>,
        s: &SymMatrix,
        t: usize,
    ) -> Result<(Option<SolverState>, StepTrace)> {
        let mut trace = StepTrace::default();
        if t < self.t0 {
            return Ok((None, trace));
        }
        if self.lambda < 0.0 {
            return Err(Error::Validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if t == self.t0 {
            let state = SolverState::initialize(s, self.lambda, self.step)?;
            trace.init = Some(IterateInfo {
                eig_min: state.eig_min,
                eig_max: state.eig_max,
                zeta: state.zeta,
            });
            return Ok((Some(state), trace));
        }
        let mut state = state.ok_or_else(|| {
            Error::MissingLog(format!("no solver state carried into t = {t}"))
        })?;
        for _ in 0..self.k {
            trace.iterates.push(state.dual_step(s, self.step)?);
        }
        state.refresh_primal(s)?;
        Ok((Some(state), trace))
    }
}

/// Logs a warning when `λ` is outside the range for which the iterates are
/// known to stay in a positive eigenvalue box.
pub fn check_lambda_validity(s: &SymMatrix, lambda: f64) -> Result<bool> {
    let min = eig_sym(s)?[0];
    let limit = min / s.dim() as f64;
    let valid = lambda < limit;
    if !valid {
        warn!("lambda = {lambda} is not below lambda_min(S)/p = {limit:.4}; eigenvalue box may be vacuous");
    }
    Ok(valid)
}

/// Batch alternating minimization: iterate the dual step with adaptive `ζ`
/// from `Γ = S + λI` until consecutive iterates differ by at most `tol`.
pub fn gama_batch(s: &SymMatrix, lambda: f64, tol: f64) -> Result<SolverState> {
    if lambda < 0.0 {
        return Err(Error::Validation(format!("lambda must be >= 0, got {lambda}")));
    }
    let step = StepSize::default();
    let mut state = SolverState::initialize(s, lambda, step)?;
    for _ in 0..BATCH_MAX_ITERS {
        let prev = state.gamma.clone();
        state.dual_step(s, step)?;
        if frob_dist(&prev, &state.gamma)? <= tol {
            state.refresh_primal(s)?;
            return Ok(state);
        }
    }
    Err(Error::NonConvergence {
        routine: "batch alternating minimization",
        iterations: BATCH_MAX_ITERS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matx::frob_norm;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn dual_update_identity_example() {
        let i2 = SymMatrix::identity(2);
        let g = dual_update(&i2, &i2, 0.5, 0.15).unwrap();
        assert!(frob_dist(&g, &i2.scale(1.15)).unwrap() < 1e-15);
    }

    #[test]
    fn dual_update_lambda_zero_returns_s() {
        let gamma = sym(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let s = sym(&[&[1.2, -0.4], &[-0.4, 0.9]]);
        assert_eq!(dual_update(&gamma, &s, 0.4, 0.0).unwrap(), s);
    }

    #[test]
    fn dual_update_rejects_indefinite() {
        let gamma = sym(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            dual_update(&gamma, &SymMatrix::identity(2), 0.1, 0.1),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn feasible_sum_never_overshoots() {
        // Values where `(λ + s) − s` rounds above λ.
        for &(s, lambda) in &[(0.1, 0.15), (0.7, 0.1), (-0.3, 0.2), (1e8, 0.15), (3.3, 0.15)] {
            for &c in &[lambda, -lambda] {
                let v = feasible_sum(c, s, lambda);
                assert!((v - s).abs() <= lambda, "s={s} lambda={lambda} v={v}");
            }
        }
    }

    #[test]
    fn initial_iterate_is_feasible() {
        let s = SymMatrix::from_fn(3, |i, j| if i == j { 0.1 + 0.7 * i as f64 + 3.3 * j as f64 } else { 0.2 });
        let st = SolverState::initialize(&s, 0.15, StepSize::default()).unwrap();
        for i in 0..3 {
            assert!((st.gamma.get(i, i) - s.get(i, i)).abs() <= 0.15);
            let ulp = f64::EPSILON * s.get(i, i).abs();
            assert!((st.gamma.get(i, i) - (s.get(i, i) + 0.15)).abs() <= ulp);
        }
    }

    #[test]
    fn omega_examples() {
        let o = omega_update(&SymMatrix::identity(3).scale(2.0)).unwrap();
        assert!(frob_dist(&o, &SymMatrix::identity(3).scale(0.5)).unwrap() < 1e-15);
        assert_eq!(omega_update(&SymMatrix::identity(3)).unwrap(), SymMatrix::identity(3));
        let o = omega_update(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let expected = sym(&[&[2.0 / 3.0, -1.0 / 3.0], &[-1.0 / 3.0, 2.0 / 3.0]]);
        assert!(frob_dist(&o, &expected).unwrap() < 1e-15);
    }

    #[test]
    fn phi_examples() {
        let gamma = sym(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let s = sym(&[&[1.2, -0.4], &[-0.4, 0.9]]);
        let omega = omega_update(&gamma).unwrap();
        let zeta = 0.3;
        // λ = 0: Φ = Ω + (Γ − S)/ζ
        let phi = phi_update(&omega, &gamma, &s, zeta, 0.0);
        let expected = SymMatrix::from_fn(2, |i, j| {
            omega.get(i, j) + (gamma.get(i, j) - s.get(i, j)) / zeta
        });
        assert!(frob_dist(&phi, &expected).unwrap() < 1e-12);

        // Argument inside [−λ, λ] everywhere.
        let tiny = SymMatrix::from_fn(2, |_, _| 0.01);
        let phi = phi_update(&tiny, &SymMatrix::zeros(2), &SymMatrix::zeros(2), 1.0, 0.15);
        assert_eq!(phi, SymMatrix::zeros(2));
    }

    #[test]
    fn choose_zeta_examples() {
        assert!((choose_zeta(&SymMatrix::identity(3), 0.9).unwrap() - 0.9).abs() < 1e-15);
        assert!((choose_zeta(&SymMatrix::identity(3).scale(2.0), 0.5).unwrap() - 2.0).abs() < 1e-15);
        let z = choose_zeta(&sym(&[&[2.0, 1.0], &[1.0, 2.0]]), 0.9).unwrap();
        assert!((z - 0.9).abs() < 1e-12);
        assert!(choose_zeta(&sym(&[&[1.0, 2.0], &[2.0, 1.0]]), 0.9).is_err());
    }

    #[test]
    fn online_cov_examples() {
        let c = OnlineCovariance::new(2).update(&[3.0, -1.0]).unwrap();
        assert_eq!(c.s, SymMatrix::outer(&[3.0, -1.0]));
        assert_eq!(c.t, 1);

        let c = OnlineCovariance::new(2)
            .update(&[1.0, 0.0])
            .unwrap()
            .update(&[0.0, 1.0])
            .unwrap();
        assert_eq!(c.s, SymMatrix::identity(2).scale(0.5));

        assert!(matches!(
            OnlineCovariance::new(2).update(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ogama_initialization_rule() {
        let ogama = Ogama {
            k: 3,
            t0: 10,
            lambda: 0.15,
            step: StepSize::default(),
        };
        let (state, _) = ogama.step(None, &SymMatrix::identity(4), 9).unwrap();
        assert!(state.is_none());
        let (state, trace) = ogama.step(None, &SymMatrix::identity(4), 10).unwrap();
        let state = state.unwrap();
        assert_eq!(state.gamma, SymMatrix::identity(4).scale(1.15));
        assert!(trace.init.is_some() && trace.iterates.is_empty());
    }

    #[test]
    fn ogama_zero_iterations_only_refreshes_primal() {
        let s0 = sym(&[&[1.0, 0.2], &[0.2, 1.5]]);
        let s1 = sym(&[&[1.1, 0.25], &[0.25, 1.4]]);
        let ogama = Ogama {
            k: 0,
            t0: 1,
            lambda: 0.1,
            step: StepSize::default(),
        };
        let (state, _) = ogama.step(None, &s0, 1).unwrap();
        let state = state.unwrap();
        let (next, trace) = ogama.step(Some(state.clone()), &s1, 2).unwrap();
        let next = next.unwrap();
        assert!(trace.iterates.is_empty());
        assert_eq!(next.gamma, state.gamma);
        assert_eq!(next.zeta, state.zeta);
        let expected_phi = phi_update(&state.omega, &state.gamma, &s1, state.zeta, 0.1);
        assert_eq!(next.phi, expected_phi);
    }

    #[test]
    fn batch_identity_decouples() {
        let state = gama_batch(&SymMatrix::identity(5), 0.15, 1e-10).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(state.phi.get(i, j), 0.0);
                    assert!(state.omega.get(i, j).abs() < 1e-14);
                }
            }
        }
        assert!(frob_dist(&state.gamma, &SymMatrix::identity(5).scale(1.15)).unwrap() < 1e-12);
    }

    #[test]
    fn batch_lambda_zero_is_inverse() {
        let s = sym(&[&[2.0, 0.5, 0.1], &[0.5, 1.0, -0.2], &[0.1, -0.2, 1.5]]);
        let state = gama_batch(&s, 0.0, 1e-10).unwrap();
        let inv = matx::inverse_spd(&s).unwrap();
        assert!(frob_dist(&state.omega, &inv).unwrap() < 1e-10);
    }

    #[test]
    fn batch_primal_consensus() {
        let s = sym(&[&[2.0, 0.5, 0.1], &[0.5, 1.0, -0.2], &[0.1, -0.2, 1.5]]);
        let state = gama_batch(&s, 0.1, 1e-12).unwrap();
        assert!(frob_dist(&state.omega, &state.phi).unwrap() < 1e-8 * frob_norm(&state.omega));
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(matches!(
            gama_batch(&SymMatrix::identity(2), -0.1, 1e-10),
            Err(Error::Validation(_))
        ));
    }
}
