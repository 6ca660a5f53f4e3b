//! Covariance consensus: per-step data exchange followed by rounds of
//! neighborhood fusion.
//!
//! Round 1 of every time step exchanges raw measurements, folds the masked
//! outer product into the agent's running covariance, and fills the entries
//! the agent cannot observe with the neighborhood average of last step's
//! final estimates. Later rounds keep the observable block and re-average the
//! rest. All agents read the previous round's published estimates and write
//! their own next estimate, so a round is order-independent.

use crate::error::{Error, Result};
use crate::matx::{frob_dist, SymMatrix};
use crate::network::Topology;
use crate::solver::{recursive_mean, SolverState};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub id: usize,
    /// Variables the agent can observe (own plus one-hop).
    pub mask: Vec<bool>,
    /// `N_i ∪ {i}`
    pub neighborhood: Vec<usize>,
    /// Local running covariance of the observable block.
    pub s_local: SymMatrix,
    /// Current estimate after the latest round.
    pub s_est: SymMatrix,
    /// Masked sample of the current time step.
    pub chi: Vec<f64>,
    pub solver: Option<SolverState>,
}

impl AgentState {
    pub fn new(topo: &Topology, id: usize) -> Self {
        let p = topo.p();
        AgentState {
            id,
            mask: topo.observable_mask(id),
            neighborhood: topo.closed_neighborhood(id),
            s_local: SymMatrix::zeros(p),
            s_est: SymMatrix::zeros(p),
            chi: vec![0.0; p],
            solver: None,
        }
    }

    pub fn observes_entry(&self, l: usize, m: usize) -> bool {
        self.mask[l] && self.mask[m]
    }
}

/// Values one agent measured at time `t`: `(variable, value)` pairs.
pub type Measurement = Vec<(usize, f64)>;

/// Extracts agent `agent`'s own measurements from the full sample.
pub fn measure(topo: &Topology, agent: usize, x: &[f64]) -> Measurement {
    topo.measured(agent).iter().map(|&v| (v, x[v])).collect()
}

/// Assembles `χ`: observable variables carry their value, the rest are 0.
/// Two sources reporting different values for the same variable is an error.
pub fn build_chi(agent: &AgentState, received: &[&Measurement]) -> Result<Vec<f64>> {
    let p = agent.mask.len();
    let mut chi: Vec<Option<f64>> = vec![None; p];
    for msg in received {
        for &(v, value) in msg.iter() {
            if v >= p {
                return Err(Error::DimensionMismatch { expected: p, found: v + 1 });
            }
            match chi[v] {
                Some(prev) if prev.to_bits() != value.to_bits() => {
                    return Err(Error::InconsistentData {
                        agent: agent.id,
                        variable: v,
                        a: prev,
                        b: value,
                    });
                }
                _ => chi[v] = Some(value),
            }
        }
    }
    Ok(chi
        .into_iter()
        .zip(&agent.mask)
        .map(|(v, &seen)| if seen { v.unwrap_or(0.0) } else { 0.0 })
        .collect())
}

/// `((t − 1) V S_prev V + χχᵀ) / t`
pub fn local_cov_update(mask: &[bool], prev_est: &SymMatrix, chi: &[f64], t: usize) -> SymMatrix {
    SymMatrix::from_fn(mask.len(), |l, m| {
        if mask[l] && mask[m] {
            recursive_mean(prev_est.get(l, m), chi[l] * chi[m], t)
        } else {
            0.0
        }
    })
}

/// Mean of the neighborhood's matrices on unobservable entries, `base` on
/// observable ones.
fn fuse(mask: &[bool], base: &SymMatrix, neighbor_mats: &[&SymMatrix]) -> Result<SymMatrix> {
    let p = mask.len();
    if base.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, found: base.dim() });
    }
    if let Some(bad) = neighbor_mats.iter().find(|m| m.dim() != p) {
        return Err(Error::DimensionMismatch { expected: p, found: bad.dim() });
    }
    if neighbor_mats.is_empty() {
        return Err(Error::Validation("fusion needs at least the agent's own matrix".into()));
    }
    let count = neighbor_mats.len() as f64;
    Ok(SymMatrix::from_fn(p, |l, m| {
        if mask[l] && mask[m] {
            base.get(l, m)
        } else {
            neighbor_mats.iter().map(|s| s.get(l, m)).sum::<f64>() / count
        }
    }))
}

/// `S¹ = S_local + (Σ S_prev − V Σ S_prev V) / |N_i|`, where `neighbor_mats`
/// are last step's final estimates of `N_i ∪ {i}`.
pub fn fuse_first_round(mask: &[bool], s_local: &SymMatrix, neighbor_mats: &[&SymMatrix]) -> Result<SymMatrix> {
    fuse(mask, s_local, neighbor_mats)
}

/// `Sʷ = V Sʷ⁻¹ V + (Σ Sʷ⁻¹ − V Σ Sʷ⁻¹ V) / |N_i|`
pub fn fuse_round(mask: &[bool], own_prev: &SymMatrix, neighbor_mats: &[&SymMatrix]) -> Result<SymMatrix> {
    fuse(mask, own_prev, neighbor_mats)
}

/// All agents plus the double buffer of published estimates.
#[derive(Clone, Debug)]
pub struct Network {
    topo: Topology,
    agents: Vec<AgentState>,
    /// Estimates visible to neighbors: the last completed round.
    published: Vec<SymMatrix>,
    /// Round index of `published` within time step `t`.
    round: usize,
    t: usize,
}

impl Network {
    pub fn new(topo: Topology) -> Self {
        let agents = (0..topo.n()).map(|i| AgentState::new(&topo, i)).collect();
        let published = vec![SymMatrix::zeros(topo.p()); topo.n()];
        Network {
            topo,
            agents,
            published,
            round: 0,
            t: 0,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentState] {
        &mut self.agents
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// One synchronous round. `w = 1` opens time step `t` with sample `x`;
    /// later rounds must follow in order within the same step.
    pub fn com(&mut self, t: usize, w: usize, x: &[f64]) -> Result<()> {
        let p = self.topo.p();
        if w == 1 {
            if t != self.t + 1 {
                return Err(Error::Validation(format!(
                    "time step {t} does not follow {}",
                    self.t
                )));
            }
            if x.len() != p {
                return Err(Error::DimensionMismatch { expected: p, found: x.len() });
            }
            let outbound: Vec<Measurement> = (0..self.topo.n()).map(|i| measure(&self.topo, i, x)).collect();
            let mut next = Vec::with_capacity(self.agents.len());
            for agent in &mut self.agents {
                let received: Vec<&Measurement> = agent.neighborhood.iter().map(|&j| &outbound[j]).collect();
                agent.chi = build_chi(agent, &received)?;
                agent.s_local = local_cov_update(&agent.mask, &agent.s_est, &agent.chi, t);
                let prev: Vec<&SymMatrix> = agent.neighborhood.iter().map(|&j| &self.published[j]).collect();
                next.push(fuse_first_round(&agent.mask, &agent.s_local, &prev)?);
            }
            self.t = t;
            self.publish(next);
        } else {
            if t != self.t || w != self.round + 1 {
                return Err(Error::Validation(format!(
                    "round ({t}, {w}) out of order after ({}, {})",
                    self.t, self.round
                )));
            }
            let mut next = Vec::with_capacity(self.agents.len());
            for agent in &self.agents {
                let prev: Vec<&SymMatrix> = agent.neighborhood.iter().map(|&j| &self.published[j]).collect();
                next.push(fuse_round(&agent.mask, &agent.s_est, &prev)?);
            }
            self.publish(next);
        }
        self.round = w;
        Ok(())
    }

    fn publish(&mut self, next: Vec<SymMatrix>) {
        for (agent, s) in self.agents.iter_mut().zip(&next) {
            agent.s_est = s.clone();
        }
        self.published = next;
    }

    /// Runs rounds `1..=rounds` of time step `t`.
    pub fn exchange(&mut self, t: usize, rounds: usize, x: &[f64]) -> Result<()> {
        for w in 1..=rounds {
            self.com(t, w, x)?;
        }
        Ok(())
    }
}

/// Frozen-data consensus probe: at round 0 each agent holds the exact
/// observable block of `s` and zeros elsewhere; each round keeps the
/// observable block and averages the rest. Returns `errors[w][i] =
/// ‖S_i^w − s‖_F` for `w = 0..=rounds`.
pub fn probe_frozen(topo: &Topology, s: &SymMatrix, rounds: usize) -> Result<Vec<Vec<f64>>> {
    let agents: Vec<AgentState> = (0..topo.n()).map(|i| AgentState::new(topo, i)).collect();
    let mut state: Vec<SymMatrix> = agents
        .iter()
        .map(|a| SymMatrix::from_fn(s.dim(), |l, m| if a.observes_entry(l, m) { s.get(l, m) } else { 0.0 }))
        .collect();
    let errors_of = |state: &[SymMatrix]| -> Result<Vec<f64>> { state.iter().map(|m| frob_dist(m, s)).collect() };
    let mut errors = vec![errors_of(&state)?];
    for _ in 0..rounds {
        let next = agents
            .iter()
            .map(|a| {
                let hood: Vec<&SymMatrix> = a.neighborhood.iter().map(|&j| &state[j]).collect();
                fuse_round(&a.mask, &state[a.id], &hood)
            })
            .collect::<Result<Vec<_>>>()?;
        state = next;
        errors.push(errors_of(&state)?);
    }
    Ok(errors)
}
