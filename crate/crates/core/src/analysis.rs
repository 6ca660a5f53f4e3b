//! Theoretical bounds evaluated against logged trajectories.
//!
//! Every evaluator is a pure function of logged values and constants. The
//! report CSV has columns `bound,t,agent,lhs,rhs,satisfied`; for the
//! consensus probe `t` holds the round index `w`.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dgama::History;
use crate::error::{Error, Result};
use crate::matx::{eig_sym, SymMatrix};

/// Absolute slack allowed between a measured value and its bound.
pub const SLACK: f64 = 1e-9;
pub const DEFAULT_DELTA: f64 = 0.25;
/// Multiplier of `p · max_j S*(j, j)` in the concentration inequality.
pub const CONCENTRATION_FACTOR: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Dual error versus `Γ*` driven by covariance errors.
    DualError,
    /// Asymptotic envelope of the dual error past `t̄`.
    RateEnvelope,
    /// Agent covariance error versus the centralized recursion.
    CovarianceRecursion,
    /// Frozen-data consensus probe.
    Consensus,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::DualError => "dual_error",
            BoundKind::RateEnvelope => "rate_envelope",
            BoundKind::CovarianceRecursion => "covariance_recursion",
            BoundKind::Consensus => "consensus",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundRow {
    pub bound: BoundKind,
    pub t: usize,
    /// 0-based; `None` for network-wide rows.
    pub agent: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl BoundRow {
    pub fn new(bound: BoundKind, t: usize, agent: Option<usize>, lhs: f64, rhs: f64) -> Self {
        BoundRow {
            bound,
            t,
            agent,
            lhs,
            rhs,
            satisfied: rhs.is_finite() && lhs <= rhs + SLACK,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxKind {
    /// Derived from covariance eigenvalues and `pλ`.
    Theory,
    /// Observed extremes of all `Γ` iterates and `Γ*`.
    Empirical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenBox {
    pub a: f64,
    pub b: f64,
    pub kind: BoxKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constants {
    pub eigen_box: Option<EigenBox>,
    /// The theory box, reported even when vacuous.
    pub theory_box: Option<(f64, f64)>,
    pub zeta: Option<f64>,
    pub beta: Option<f64>,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: f64,
    pub t_bar: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub constants: Constants,
}

impl BoundReport {
    /// `(satisfied, total)` rows of one bound.
    pub fn tally(&self, bound: BoundKind) -> (usize, usize) {
        let rows = self.rows.iter().filter(|r| r.bound == bound);
        let total = rows.clone().count();
        (rows.filter(|r| r.satisfied).count(), total)
    }

    pub fn all_satisfied(&self, bound: BoundKind) -> bool {
        let (ok, total) = self.tally(bound);
        ok == total
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bound", "t", "agent", "lhs", "rhs", "satisfied"])?;
        for r in &self.rows {
            w.write_record([
                r.bound.name().to_string(),
                r.t.to_string(),
                r.agent.map(|a| (a + 1).to_string()).unwrap_or_default(),
                format_float(r.lhs),
                format_float(r.rhs),
                r.satisfied.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("bounds.csv", e))?;
        Ok(())
    }
}

/// Shortest decimal that round-trips.
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

/// `max(|1 − ζ/a²|, |1 − ζ/b²|)`
pub fn beta(zeta: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b >= a) {
        return Err(Error::InvalidBox { a, b });
    }
    if !(zeta > 0.0) {
        return Err(Error::Validation(format!("zeta must be positive, got {zeta}")));
    }
    Ok((1.0 - zeta / (a * a)).abs().max((1.0 - zeta / (b * b)).abs()))
}

/// Theory box from covariance eigenvalue extremes: everything observed,
/// widened by `pλ` on each side. The result may have `a ≤ 0`.
pub fn theory_box(
    s_star: (f64, f64),
    estimates: impl IntoIterator<Item = (f64, f64)>,
    lambda: f64,
    p: usize,
) -> (f64, f64) {
    let (lo, hi) = estimates
        .into_iter()
        .fold(s_star, |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
    let pad = p as f64 * lambda;
    (lo - pad, hi + pad)
}

/// [`theory_box`] over every agent's `S_{i,t}^w` for `t ≥ t0`.
pub fn ab_box(history: &History, s_star: &SymMatrix, lambda: f64, t0: usize) -> Result<(f64, f64)> {
    let ev = eig_sym(s_star)?;
    let extremes = history
        .agents
        .iter()
        .filter(|r| r.t >= t0)
        .map(|r| (r.s_round_min, r.s_round_max));
    Ok(theory_box((ev[0], ev[ev.len() - 1]), extremes, lambda, s_star.dim()))
}

/// Observed eigenvalue extremes of every logged `Γ` iterate and of `Γ*`.
pub fn empirical_box(history: &History, gamma_star: &SymMatrix) -> Result<(f64, f64)> {
    let ev = eig_sym(gamma_star)?;
    let mut lo = ev[0];
    let mut hi = ev[ev.len() - 1];
    for r in &history.agents {
        if let (Some(a), Some(b)) = (r.gamma_iter_min, r.gamma_iter_max) {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    Ok((lo, hi))
}

/// Uses the theory box when it is non-vacuous and contains every observed
/// iterate, otherwise the empirical box.
pub fn select_box(theory: (f64, f64), empirical: (f64, f64)) -> EigenBox {
    let (a, b) = theory;
    if a > 0.0 && a <= empirical.0 && empirical.1 <= b {
        EigenBox {
            a,
            b,
            kind: BoxKind::Theory,
        }
    } else {
        EigenBox {
            a: empirical.0,
            b: empirical.1,
            kind: BoxKind::Empirical,
        }
    }
}

fn inner_weight(beta: f64, k: usize) -> f64 {
    (1..=k).map(|m| beta.powi((k - m) as i32)).sum()
}

/// Dual error bound at `t = t0 + s_errs.len()`:
/// `β^{K(t−t0)} g0 + 2 Σ_m β^{K−m} Σ_l β^{K(t−l)} e_l`
/// where `s_errs[l − t0 − 1] = ‖S_{i,l}^W − S*‖_F`.
pub fn dual_error_rhs(gamma_t0_err: f64, s_errs: &[f64], beta: f64, k: usize) -> f64 {
    let bk = beta.powi(k as i32);
    let acc = s_errs.iter().fold(0.0, |acc, &e| bk * acc + e);
    bk.powi(s_errs.len() as i32) * gamma_t0_err + 2.0 * inner_weight(beta, k) * acc
}

/// [`dual_error_rhs`] fed from the logged history of one agent.
pub fn dual_error_rhs_at(history: &History, agent: usize, t: usize, t0: usize, beta: f64, k: usize) -> Result<f64> {
    if t < t0 {
        return Err(Error::Validation(format!("t = {t} precedes t0 = {t0}")));
    }
    let g0 = logged(history, agent, t0, |r| r.gamma_err, "gamma error")?;
    let s_errs = ((t0 + 1)..=t)
        .map(|l| logged(history, agent, l, |r| r.s_err_star, "covariance error"))
        .collect::<Result<Vec<_>>>()?;
    Ok(dual_error_rhs(g0, &s_errs, beta, k))
}

fn logged(
    history: &History,
    agent: usize,
    t: usize,
    field: impl Fn(&crate::dgama::AgentRecord) -> Option<f64>,
    what: &str,
) -> Result<f64> {
    history
        .agent(t, agent)
        .and_then(field)
        .ok_or_else(|| Error::MissingLog(format!("{what} for agent {} at t = {t}", agent + 1)))
}

/// Constants of the asymptotic envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    pub delta: f64,
    pub t_bar: usize,
    /// `c σ^W`
    pub consensus_factor: f64,
    pub k: usize,
    pub beta: f64,
    /// `40 p max_j S*(j, j)`
    pub concentration: f64,
}

impl Envelope {
    pub fn new(delta: f64, t_bar: usize, c: f64, sigma: f64, w: usize, k: usize, beta: f64, s_diag_max: f64, p: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(Envelope {
            delta,
            t_bar,
            consensus_factor: c * sigma.powi(w as i32),
            k,
            beta,
            concentration: concentration_constant(s_diag_max, p),
        })
    }

    /// Envelope values for `t = t̄+1 ..= t_max` given `‖Γ_{i,t̄} − Γ*‖_F`
    /// and `‖S_{i,t̄}^W − S_{t̄}‖_F`.
    pub fn series(&self, gamma_bar_err: f64, s_bar_err: f64, t_max: usize) -> Vec<f64> {
        let e = 0.5 - self.delta;
        let q = self.consensus_factor;
        let bk = self.beta.powi(self.k as i32);
        let weight = 2.0 * inner_weight(self.beta, self.k);
        let mut inner = 0.0;
        let mut outer = 0.0;
        let mut q_pow = 1.0;
        let mut out = Vec::with_capacity(t_max.saturating_sub(self.t_bar));
        for l in (self.t_bar + 1)..=t_max {
            inner = q * ((1.0 / (l - 1) as f64).powf(e) + inner);
            q_pow *= q;
            let bracket = q_pow * s_bar_err + self.concentration * ((1.0 / l as f64).powf(e) + 2.0 * inner);
            outer = bk * outer + bracket;
            let lead = self.beta.powi((self.k * (l + 1 - self.t_bar)) as i32) * gamma_bar_err;
            out.push(lead + weight * outer);
        }
        out
    }

    pub fn rhs(&self, gamma_bar_err: f64, s_bar_err: f64, t: usize) -> Result<f64> {
        if t <= self.t_bar {
            return Err(Error::Validation(format!("envelope needs t > t_bar = {}, got {t}", self.t_bar)));
        }
        Ok(*self.series(gamma_bar_err, s_bar_err, t).last().expect("t > t_bar"))
    }
}

/// `40 p max_j S*(j, j)`
pub fn concentration_constant(s_diag_max: f64, p: usize) -> f64 {
    CONCENTRATION_FACTOR * p as f64 * s_diag_max
}

/// Envelope at `t` for one agent, fed from the logged history.
pub fn rate_envelope_rhs(history: &History, agent: usize, t: usize, env: &Envelope) -> Result<f64> {
    let g = logged(history, agent, env.t_bar, |r| r.gamma_err, "gamma error")?;
    let s = logged(history, agent, env.t_bar, |r| Some(r.s_err_t), "covariance deviation")?;
    env.rhs(g, s, t)
}

/// First logged `t` from which `‖S_t − S*‖_F ≤ C t^{−(1/2 − Δ)}` holds at
/// every later logged time. `errs[t − 1] = ‖S_t − S*‖_F`.
pub fn find_t_bar(errs: &[f64], concentration: f64, delta: f64) -> Result<Option<usize>> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidDelta(delta));
    }
    let mut t_bar = None;
    for t in (1..=errs.len()).rev() {
        if errs[t - 1] <= concentration * (1.0 / t as f64).powf(0.5 - delta) {
            t_bar = Some(t);
        } else {
            break;
        }
    }
    Ok(t_bar)
}

/// Covariance recursion bound:
/// `‖S_{i,t}^W − S*‖ ≤ ‖S_t − S*‖ + Σ_{j ≤ t} (cσ^W)^{t+1−j} ‖e_j‖`
/// with `e_j = S_j − S_{j−1}`. Inputs are indexed by `t − 1`.
pub fn covariance_recursion_rhs(central_err: &[f64], increments: &[f64], factor: f64) -> Vec<f64> {
    let mut acc = 0.0;
    central_err
        .iter()
        .zip(increments)
        .map(|(&s, &e)| {
            acc = factor * (acc + e);
            s + acc
        })
        .collect()
}

/// Frozen-data consensus probe: `errors[w][i] ≤ c σ^w errors[0][i]` for
/// every `w ≥ 1`.
pub fn consensus_check(errors: &[Vec<f64>], c: f64, sigma: f64) -> Result<Vec<BoundRow>> {
    let first = errors
        .first()
        .ok_or_else(|| Error::MissingLog("consensus probe has no rounds".into()))?;
    let mut rows = Vec::new();
    for (w, errs) in errors.iter().enumerate().skip(1) {
        if errs.len() != first.len() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                found: errs.len(),
            });
        }
        let scale = c * sigma.powi(w as i32);
        for (i, (&e, &e0)) in errs.iter().zip(first).enumerate() {
            rows.push(BoundRow::new(BoundKind::Consensus, w, Some(i), e, scale * e0));
        }
    }
    Ok(rows)
}

/// Everything the trajectory bounds need besides the history itself.
#[derive(Clone, Debug)]
pub struct AnalysisInputs<'a> {
    pub gamma_star: &'a SymMatrix,
    pub s_star: &'a SymMatrix,
    pub lambda: f64,
    pub t0: usize,
    pub k: usize,
    pub w: usize,
    /// Constant step size, if the run used one.
    pub zeta: Option<f64>,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: f64,
}

/// Evaluates the requested trajectory bounds.
///
/// The dual error bound and the envelope need a constant step size and are
/// skipped otherwise. The recursion bound and the envelope need
/// `c σ^W < 1`.
pub fn analyze(history: &History, inputs: &AnalysisInputs, bounds: &[BoundKind]) -> Result<BoundReport> {
    let t_max = history.last_t();
    let n = history.n;
    let mut report = BoundReport::default();
    let consts = &mut report.constants;
    consts.delta = inputs.delta;
    consts.c = inputs.c;
    consts.sigma = inputs.sigma;
    consts.zeta = inputs.zeta;

    let theory = ab_box(history, inputs.s_star, inputs.lambda, inputs.t0)?;
    let empirical = empirical_box(history, inputs.gamma_star)?;
    let eigen_box = select_box(theory, empirical);
    consts.theory_box = Some(theory);
    consts.eigen_box = Some(eigen_box);
    if eigen_box.kind == BoxKind::Empirical {
        warn!("theory eigenvalue box [{:.4}, {:.4}] unusable; using observed box", theory.0, theory.1);
    }
    consts.beta = match inputs.zeta {
        Some(z) => Some(beta(z, eigen_box.a, eigen_box.b)?),
        None => None,
    };
    let factor = match (inputs.c, inputs.sigma) {
        (Some(c), Some(s)) => Some(c * s.powi(inputs.w as i32)),
        _ => None,
    };
    let central_err = history
        .central
        .iter()
        .map(|r| r.s_err_star.ok_or_else(|| Error::MissingLog(format!("covariance error at t = {}", r.t))))
        .collect::<Result<Vec<_>>>()?;
    let concentration = concentration_constant(
        inputs.s_star.diag().into_iter().fold(f64::NEG_INFINITY, f64::max),
        inputs.s_star.dim(),
    );
    consts.t_bar = find_t_bar(&central_err, concentration, inputs.delta)?.map(|t| t.max(inputs.t0));

    for &bound in bounds {
        match bound {
            BoundKind::DualError => {
                let Some(beta) = report.constants.beta else {
                    warn!("dual error bound needs a constant step size; skipped");
                    continue;
                };
                for i in 0..n {
                    let g0 = logged(history, i, inputs.t0, |r| r.gamma_err, "gamma error")?;
                    let bk = beta.powi(inputs.k as i32);
                    let weight = 2.0 * inner_weight(beta, inputs.k);
                    let mut acc = 0.0;
                    let mut lead = g0;
                    for t in (inputs.t0 + 1)..=t_max {
                        let e = logged(history, i, t, |r| r.s_err_star, "covariance error")?;
                        acc = bk * acc + e;
                        lead *= bk;
                        let lhs = logged(history, i, t, |r| r.gamma_err, "gamma error")?;
                        report.rows.push(BoundRow::new(bound, t, Some(i), lhs, lead + weight * acc));
                    }
                }
            }
            BoundKind::RateEnvelope => {
                let (Some(beta), Some(t_bar), Some(c), Some(sigma)) =
                    (report.constants.beta, report.constants.t_bar, inputs.c, inputs.sigma)
                else {
                    warn!("rate envelope needs a constant step size, a measured t_bar and consensus constants; skipped");
                    continue;
                };
                if factor.map_or(true, |f| f >= 1.0) {
                    warn!("rate envelope needs c * sigma^W < 1; skipped");
                    continue;
                }
                let s_diag_max = inputs.s_star.diag().into_iter().fold(f64::NEG_INFINITY, f64::max);
                let env = Envelope::new(inputs.delta, t_bar, c, sigma, inputs.w, inputs.k, beta, s_diag_max, inputs.s_star.dim())?;
                for i in 0..n {
                    let g = logged(history, i, t_bar, |r| r.gamma_err, "gamma error")?;
                    let s = logged(history, i, t_bar, |r| Some(r.s_err_t), "covariance deviation")?;
                    for (offset, rhs) in env.series(g, s, t_max).into_iter().enumerate() {
                        let t = t_bar + 1 + offset;
                        let lhs = logged(history, i, t, |r| r.gamma_err, "gamma error")?;
                        report.rows.push(BoundRow::new(bound, t, Some(i), lhs, rhs));
                    }
                }
            }
            BoundKind::CovarianceRecursion => {
                let Some(f) = factor.filter(|&f| f < 1.0) else {
                    warn!("covariance recursion bound needs c * sigma^W < 1; skipped");
                    continue;
                };
                let increments: Vec<f64> = history.central.iter().map(|r| r.increment).collect();
                let rhs = covariance_recursion_rhs(&central_err, &increments, f);
                for (idx, &r) in rhs.iter().enumerate() {
                    let t = idx + 1;
                    for i in 0..n {
                        let lhs = logged(history, i, t, |r| r.s_err_star, "covariance error")?;
                        report.rows.push(BoundRow::new(bound, t, Some(i), lhs, r));
                    }
                }
            }
            BoundKind::Consensus => {
                warn!("consensus bound is evaluated by the frozen-data probe, not on trajectories; skipped");
            }
        }
    }
    Ok(report)
}
