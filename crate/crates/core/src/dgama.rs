//! Distributed orchestration: every time step runs `W` consensus rounds
//! across all agents, then `K` dual steps per agent warm-started from the
//! previous step. A centralized estimator runs alongside on the pooled
//! stream as the reference curve.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::consensus::Network;
use crate::error::{Error, Result};
use crate::matx::{eig_sym, frob_dist, SymMatrix};
use crate::model::{DataStream, GroundTruth};
use crate::network::{consensus_rate, Topology};
use crate::solver::{check_lambda_validity, IterateInfo, Ogama, OnlineCovariance, SolverState, StepSize, StepTrace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaMode {
    /// `ζ = safety · λ_min(Γ)²` after every dual step.
    Adaptive,
    /// One `ζ` for all agents, steps and times. `None` picks
    /// `safety · min λ_min(Γ_{t0})²` over all estimators at `t0`.
    Constant(Option<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Params {
    pub k: usize,
    pub w: usize,
    pub lambda: f64,
    pub t0: usize,
    pub t_max: usize,
    pub zeta_mode: ZetaMode,
    pub zeta_safety: f64,
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.w == 0 {
            return Err(Error::Validation("W must be at least 1".into()));
        }
        if self.t0 == 0 || self.t0 >= self.t_max {
            return Err(Error::Validation(format!(
                "need 1 <= t0 < T, got t0 = {} and T = {}",
                self.t0, self.t_max
            )));
        }
        if !(self.zeta_safety > 0.0 && self.zeta_safety < 1.0) {
            return Err(Error::Validation(format!("zeta safety must lie in (0, 1), got {}", self.zeta_safety)));
        }
        if let ZetaMode::Constant(Some(z)) = self.zeta_mode {
            if !(z > 0.0) {
                return Err(Error::Validation(format!("constant zeta must be positive, got {z}")));
            }
        }
        Ok(())
    }

    fn ogama(&self, step: StepSize) -> Ogama {
        Ogama {
            k: self.k,
            t0: self.t0,
            lambda: self.lambda,
            step,
        }
    }
}

/// Per-(t, agent) metrics. Errors against `S*` and `Γ*` are absent without
/// a ground truth; solver quantities are absent before `t0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRecord {
    pub t: usize,
    pub agent: usize,
    /// `‖Γ_{i,t}^K − Γ*‖_F`
    pub gamma_err: Option<f64>,
    /// `‖Γ_{i,t}^K − Γ_{c,t}^K‖_F` against the centralized estimator.
    pub central_gap: Option<f64>,
    /// `‖S_{i,t}^W − S*‖_F`
    pub s_err_star: Option<f64>,
    /// `‖S_{i,t}^W − S_t‖_F`
    pub s_err_t: f64,
    pub zeta: Option<f64>,
    pub lambda_min_gamma: Option<f64>,
    /// Eigenvalue extremes over every `Γ` iterate produced this step.
    pub gamma_iter_min: Option<f64>,
    pub gamma_iter_max: Option<f64>,
    /// Eigenvalue extremes of `S_{i,t}^w` over the rounds `w = 1..=W`.
    pub s_round_min: f64,
    pub s_round_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralRecord {
    pub t: usize,
    /// `‖S_t − S*‖_F`
    pub s_err_star: Option<f64>,
    /// `‖S_t − S_{t−1}‖_F`
    pub increment: f64,
    pub gamma_err: Option<f64>,
    pub zeta: Option<f64>,
    pub lambda_min_gamma: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub n: usize,
    /// Ordered by `t`, then agent.
    pub agents: Vec<AgentRecord>,
    /// One record per `t`.
    pub central: Vec<CentralRecord>,
}

impl History {
    pub fn agent(&self, t: usize, agent: usize) -> Option<&AgentRecord> {
        let idx = t.checked_sub(1)? * self.n + agent;
        self.agents.get(idx).filter(|r| r.t == t && r.agent == agent)
    }

    pub fn central(&self, t: usize) -> Option<&CentralRecord> {
        self.central.get(t.checked_sub(1)?).filter(|r| r.t == t)
    }

    pub fn last_t(&self) -> usize {
        self.central.last().map_or(0, |r| r.t)
    }

    pub fn agent_series(&self, agent: usize) -> impl Iterator<Item = &AgentRecord> {
        self.agents.iter().filter(move |r| r.agent == agent)
    }
}

pub struct Simulation {
    network: Network,
    params: Params,
    step_size: Option<StepSize>,
    central_cov: OnlineCovariance,
    central: Option<SolverState>,
    gamma_star: Option<SymMatrix>,
    s_star: Option<SymMatrix>,
    history: History,
}

impl Simulation {
    /// Fails with `NotJointlyObservable` before any work when some covariance
    /// pair is visible to no agent.
    pub fn new(topo: Topology, params: Params, truth: Option<&GroundTruth>) -> Result<Self> {
        params.validate()?;
        if let Some(gt) = truth {
            if gt.p() != topo.p() {
                return Err(Error::DimensionMismatch {
                    expected: topo.p(),
                    found: gt.p(),
                });
            }
        }
        let report = crate::network::check_joint_observability(&topo);
        if let Some((l, m)) = report.first_unobserved() {
            return Err(Error::NotJointlyObservable { l, m });
        }
        let rate = consensus_rate(&topo)?;
        if let Some(factor) = rate.consensus_factor(params.w) {
            if factor >= 1.0 {
                warn!("c * sigma^W = {factor:.4} >= 1 for W = {}; covariance convergence is not covered", params.w);
            }
        }
        let step_size = match params.zeta_mode {
            ZetaMode::Adaptive => Some(StepSize::Adaptive {
                safety: params.zeta_safety,
            }),
            ZetaMode::Constant(Some(z)) => Some(StepSize::Constant(z)),
            ZetaMode::Constant(None) => None,
        };
        let p = topo.p();
        let n = topo.n();
        Ok(Simulation {
            network: Network::new(topo),
            params,
            step_size,
            central_cov: OnlineCovariance::new(p),
            central: None,
            gamma_star: truth.and_then(|gt| gt.gamma_star.clone()),
            s_star: truth.map(|gt| gt.covariance_true.clone()),
            history: History {
                n,
                ..History::default()
            },
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_history(self) -> History {
        self.history
    }

    pub fn central_state(&self) -> Option<&SolverState> {
        self.central.as_ref()
    }

    pub fn central_covariance(&self) -> &OnlineCovariance {
        &self.central_cov
    }

    /// The step size actually in force (resolved at `t0` for automatic
    /// constant mode).
    pub fn step_size(&self) -> Option<StepSize> {
        self.step_size
    }

    pub fn time(&self) -> usize {
        self.network.time()
    }

    /// Advances one time step with sample `x`.
    pub fn step(&mut self, x: &[f64]) -> Result<()> {
        let t = self.network.time() + 1;
        let n = self.network.topology().n();
        let p = self.network.topology().p();

        let mut s_min = vec![f64::INFINITY; n];
        let mut s_max = vec![f64::NEG_INFINITY; n];
        for w in 1..=self.params.w {
            self.network.com(t, w, x)?;
            for (i, agent) in self.network.agents().iter().enumerate() {
                let ev = eig_sym(&agent.s_est)?;
                s_min[i] = s_min[i].min(ev[0]);
                s_max[i] = s_max[i].max(ev[p - 1]);
            }
        }
        let prev_central = self.central_cov.s.clone();
        self.central_cov = self.central_cov.update(x)?;

        if t == self.params.t0 {
            check_lambda_validity(&self.central_cov.s, self.params.lambda)?;
            if self.step_size.is_none() {
                self.step_size = Some(self.auto_constant_step()?);
            }
        }

        let mut traces = vec![StepTrace::default(); n];
        if let Some(step) = self.step_size {
            let ogama = self.params.ogama(step);
            for (i, agent) in self.network.agents_mut().iter_mut().enumerate() {
                let (state, trace) = ogama
                    .step(agent.solver.take(), &agent.s_est, t)
                    .map_err(|e| Error::AgentFailure {
                        agent: i,
                        t,
                        source: Box::new(e),
                    })?;
                agent.solver = state;
                traces[i] = trace;
            }
            let (state, _) = ogama.step(self.central.take(), &self.central_cov.s, t)?;
            self.central = state;
        }

        let central_gamma = self.central.as_ref().map(|s| &s.gamma);
        for (i, agent) in self.network.agents().iter().enumerate() {
            let solver = agent.solver.as_ref();
            let (iter_min, iter_max) = trace_extremes(&traces[i]);
            self.history.agents.push(AgentRecord {
                t,
                agent: i,
                gamma_err: dist_opt(solver.map(|s| &s.gamma), self.gamma_star.as_ref())?,
                central_gap: dist_opt(solver.map(|s| &s.gamma), central_gamma)?,
                s_err_star: dist_opt(Some(&agent.s_est), self.s_star.as_ref())?,
                s_err_t: frob_dist(&agent.s_est, &self.central_cov.s)?,
                zeta: solver.map(|s| s.zeta),
                lambda_min_gamma: solver.map(|s| s.eig_min),
                gamma_iter_min: iter_min,
                gamma_iter_max: iter_max,
                s_round_min: s_min[i],
                s_round_max: s_max[i],
            });
        }
        self.history.central.push(CentralRecord {
            t,
            s_err_star: dist_opt(Some(&self.central_cov.s), self.s_star.as_ref())?,
            increment: frob_dist(&self.central_cov.s, &prev_central)?,
            gamma_err: dist_opt(central_gamma, self.gamma_star.as_ref())?,
            zeta: self.central.as_ref().map(|s| s.zeta),
            lambda_min_gamma: self.central.as_ref().map(|s| s.eig_min),
        });
        Ok(())
    }

    fn auto_constant_step(&self) -> Result<StepSize> {
        let lambda = self.params.lambda;
        let t = self.network.time();
        let mut min = eig_sym(&self.central_cov.s.shift_diag(lambda))?[0];
        for (i, agent) in self.network.agents().iter().enumerate() {
            let ev = eig_sym(&agent.s_est.shift_diag(lambda))?[0];
            if !(ev > 0.0) {
                return Err(Error::AgentFailure {
                    agent: i,
                    t,
                    source: Box::new(Error::NotPositiveDefinite { index: 0, pivot: ev }),
                });
            }
            min = min.min(ev);
        }
        Ok(StepSize::Constant(self.params.zeta_safety * min * min))
    }
}

fn dist_opt(a: Option<&SymMatrix>, b: Option<&SymMatrix>) -> Result<Option<f64>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some(frob_dist(a, b)?)),
        _ => Ok(None),
    }
}

fn trace_extremes(trace: &StepTrace) -> (Option<f64>, Option<f64>) {
    let all: Vec<&IterateInfo> = trace.init.iter().chain(&trace.iterates).collect();
    if all.is_empty() {
        return (None, None);
    }
    (
        Some(all.iter().map(|i| i.eig_min).fold(f64::INFINITY, f64::min)),
        Some(all.iter().map(|i| i.eig_max).fold(f64::NEG_INFINITY, f64::max)),
    )
}

/// Runs a full trajectory over `stream`.
pub fn run(topo: Topology, params: Params, truth: Option<&GroundTruth>, stream: &DataStream) -> Result<Simulation> {
    if stream.p != topo.p() {
        return Err(Error::DimensionMismatch {
            expected: topo.p(),
            found: stream.p,
        });
    }
    if stream.len() < params.t_max {
        return Err(Error::Validation(format!(
            "stream holds {} samples but T = {}",
            stream.len(),
            params.t_max
        )));
    }
    let mut sim = Simulation::new(topo, params, truth)?;
    for x in stream.samples.iter().take(params.t_max) {
        sim.step(x)?;
    }
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_er_precision, sample_gaussian};

    fn params() -> Params {
        Params {
            k: 1,
            w: 1,
            lambda: 0.15,
            t0: 10,
            t_max: 40,
            zeta_mode: ZetaMode::Adaptive,
            zeta_safety: 0.9,
        }
    }

    #[test]
    fn validation() {
        assert!(params().validate().is_ok());
        assert!(Params { w: 0, ..params() }.validate().is_err());
        assert!(Params { t0: 40, ..params() }.validate().is_err());
        assert!(Params { t0: 0, ..params() }.validate().is_err());
        assert!(Params { lambda: -1.0, ..params() }.validate().is_err());
        assert!(Params {
            zeta_mode: ZetaMode::Constant(Some(0.0)),
            ..params()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn unobservable_topology_rejected_up_front() {
        let topo = Topology::new(3, 2, &[(0, 1)], vec![vec![0], vec![]]).unwrap();
        assert!(matches!(
            Simulation::new(topo, params(), None),
            Err(Error::NotJointlyObservable { .. })
        ));
    }

    #[test]
    fn zero_iterations_freeze_gamma() {
        let gt = gen_er_precision(4, 0.5, 1).unwrap().with_gamma_star(0.15, 1e-10).unwrap();
        let stream = sample_gaussian(&gt, 30, 2).unwrap();
        let topo = Topology::random_jointly_observable(3, 4, 0.3, 0.5, 4);
        let p = Params { k: 0, t_max: 30, ..params() };
        let mut sim = Simulation::new(topo, p, Some(&gt)).unwrap();
        for x in &stream.samples[..p.t0] {
            sim.step(x).unwrap();
        }
        let at_t0: Vec<SymMatrix> = sim
            .network()
            .agents()
            .iter()
            .map(|a| a.solver.as_ref().unwrap().gamma.clone())
            .collect();
        for (a, g) in sim.network().agents().iter().zip(&at_t0) {
            assert!(frob_dist(g, &a.s_est.shift_diag(0.15)).unwrap() < 1e-14);
        }
        for x in &stream.samples[p.t0..] {
            sim.step(x).unwrap();
        }
        for (a, g) in sim.network().agents().iter().zip(&at_t0) {
            assert_eq!(a.solver.as_ref().unwrap().gamma, *g);
        }
    }

    #[test]
    fn single_agent_matches_centralized() {
        let gt = gen_er_precision(5, 0.4, 3).unwrap().with_gamma_star(0.15, 1e-10).unwrap();
        let stream = sample_gaussian(&gt, 60, 8).unwrap();
        let topo = Topology::centralized(5);
        let p = Params { k: 2, w: 3, t_max: 60, ..params() };
        let sim = run(topo, p, Some(&gt), &stream).unwrap();
        let agent = sim.network().agents()[0].solver.as_ref().unwrap();
        assert_eq!(agent.gamma, sim.central_state().unwrap().gamma);
        for r in &sim.history().agents {
            if r.t >= p.t0 {
                assert_eq!(r.central_gap, Some(0.0));
            }
            assert_eq!(r.s_err_t, 0.0);
        }
    }

    #[test]
    fn history_lookup() {
        let gt = gen_er_precision(4, 0.5, 1).unwrap().with_gamma_star(0.15, 1e-10).unwrap();
        let stream = sample_gaussian(&gt, 20, 2).unwrap();
        let topo = Topology::random_jointly_observable(3, 4, 0.3, 0.5, 4);
        let sim = run(topo, Params { t_max: 20, ..params() }, Some(&gt), &stream).unwrap();
        let h = sim.history();
        assert_eq!(h.last_t(), 20);
        assert_eq!(h.agents.len(), 60);
        let r = h.agent(12, 2).unwrap();
        assert_eq!((r.t, r.agent), (12, 2));
        assert!(h.agent(9, 0).unwrap().gamma_err.is_none());
        assert!(h.agent(10, 0).unwrap().gamma_err.is_some());
        assert!(h.agent(21, 0).is_none());
    }

    #[test]
    fn automatic_constant_zeta() {
        let gt = gen_er_precision(4, 0.5, 1).unwrap().with_gamma_star(0.15, 1e-10).unwrap();
        let stream = sample_gaussian(&gt, 20, 2).unwrap();
        let topo = Topology::random_jointly_observable(3, 4, 0.3, 0.5, 4);
        let p = Params {
            t_max: 20,
            zeta_mode: ZetaMode::Constant(None),
            ..params()
        };
        let sim = run(topo, p, Some(&gt), &stream).unwrap();
        let Some(StepSize::Constant(z)) = sim.step_size() else {
            panic!("step size not resolved")
        };
        for r in &sim.history().agents {
            if r.t >= p.t0 {
                assert_eq!(r.zeta, Some(z));
            }
        }
    }
}
