//! Agent communication graph, observability, and the leader/follower
//! consensus matrices.
//!
//! Agent `i` observes variable `x_j` when it measures `x_j` itself or one of
//! its one-hop neighbors does. For a covariance entry `(l, m)` the agents that
//! observe both `x_l` and `x_m` are its *leaders*; all others are followers
//! and average their closed neighborhood every round. Stacking the follower
//! rows of `D⁻¹(I + A)` gives `P_F = [P_FL  P_FF]`.
//!
//! # Topology files
//!
//! Plain text, one directive per line, `#` starts a comment. Agents and
//! variables are numbered from 1.
//!
//! ```text
//! agents 4
//! variables 5
//! edge 1 2          # undirected communication link
//! observe 1 1 2     # agent 1 measures x1 and x2
//! ```
//!
//! Every agent needs an `observe` line (possibly with no variables). The graph
//! must be connected.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matx::{eig_general_spectral_radius, Matrix};
use crate::rng::{Prng, STREAM_TOPOLOGY};

/// Longest unit probe used when estimating the amplification constant.
const UNIT_PROBE_MAX_ROUNDS: usize = 5_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    p: usize,
    adjacency: Vec<Vec<bool>>,
    observed: Vec<BTreeSet<usize>>,
}

impl Topology {
    /// `edges` and `observed` use 0-based indices.
    pub fn new(p: usize, n: usize, edges: &[(usize, usize)], observed: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("topology needs at least one agent".into()));
        }
        if observed.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: observed.len(),
            });
        }
        let mut adjacency = vec![vec![false; n]; n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Validation(format!("edge ({}, {}) names an unknown agent", a + 1, b + 1)));
            }
            if a == b {
                return Err(Error::Validation(format!("self-loop on agent {}", a + 1)));
            }
            adjacency[a][b] = true;
            adjacency[b][a] = true;
        }
        let mut sets = Vec::with_capacity(n);
        for (i, vars) in observed.into_iter().enumerate() {
            if let Some(&bad) = vars.iter().find(|&&v| v >= p) {
                return Err(Error::Validation(format!(
                    "agent {} observes x{} but p = {p}",
                    i + 1,
                    bad + 1
                )));
            }
            sets.push(vars.into_iter().collect());
        }
        let topo = Topology {
            n,
            p,
            adjacency,
            observed: sets,
        };
        if !topo.is_connected() {
            return Err(Error::Validation("communication graph is not connected".into()));
        }
        Ok(topo)
    }

    /// A single agent measuring every variable.
    pub fn centralized(p: usize) -> Self {
        Topology::new(p, 1, &[], vec![(0..p).collect()]).expect("valid single-agent topology")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j]
    }

    pub fn measured(&self, agent: usize) -> &BTreeSet<usize> {
        &self.observed[agent]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| ((i + 1)..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[i][j])
            .collect()
    }

    /// `N_i`, excluding `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.adjacency[i][j]).collect()
    }

    /// `N_i ∪ {i}`, ascending.
    pub fn closed_neighborhood(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| j == i || self.adjacency[i][j]).collect()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Variables agent `i` measures or receives from a neighbor.
    pub fn observable_set(&self, agent: usize) -> BTreeSet<usize> {
        self.closed_neighborhood(agent)
            .into_iter()
            .flat_map(|j| self.observed[j].iter().copied())
            .collect()
    }

    /// Diagonal of the observation mask as booleans.
    pub fn observable_mask(&self, agent: usize) -> Vec<bool> {
        let set = self.observable_set(agent);
        (0..self.p).map(|v| set.contains(&v)).collect()
    }

    /// Agents that observe both `x_l` and `x_m`.
    pub fn leaders(&self, l: usize, m: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| {
                let set = self.observable_set(i);
                set.contains(&l) && set.contains(&m)
            })
            .collect()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            origin: origin.to_string(),
            line,
            message,
        };
        let mut n = None;
        let mut p = None;
        let mut edges = Vec::new();
        let mut observe: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap_or_default();
            let nums = parts
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| err(lineno, format!("expected a positive integer, found `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let one_based = |v: usize| {
                v.checked_sub(1)
                    .ok_or_else(|| err(lineno, "indices start at 1".into()))
            };
            match keyword {
                "agents" | "variables" => {
                    let [count] = nums[..] else {
                        return Err(err(lineno, format!("`{keyword}` takes one count")));
                    };
                    if keyword == "agents" {
                        n = Some(count);
                    } else {
                        p = Some(count);
                    }
                }
                "edge" => {
                    let [a, b] = nums[..] else {
                        return Err(err(lineno, "`edge` takes two agent indices".into()));
                    };
                    edges.push((one_based(a)?, one_based(b)?));
                }
                "observe" => {
                    let Some((&agent, vars)) = nums.split_first() else {
                        return Err(err(lineno, "`observe` needs an agent index".into()));
                    };
                    let vars = vars.iter().map(|&v| one_based(v)).collect::<Result<Vec<_>>>()?;
                    if observe.insert(one_based(agent)?, vars).is_some() {
                        return Err(err(lineno, format!("agent {agent} observed twice")));
                    }
                }
                other => return Err(err(lineno, format!("unknown directive `{other}`"))),
            }
        }
        let n = n.ok_or_else(|| err(0, "missing `agents` line".into()))?;
        let p = p.ok_or_else(|| err(0, "missing `variables` line".into()))?;
        let mut observed = Vec::with_capacity(n);
        for i in 0..n {
            observed.push(
                observe
                    .remove(&i)
                    .ok_or_else(|| err(0, format!("no `observe` line for agent {}", i + 1)))?,
            );
        }
        if let Some((&extra, _)) = observe.iter().next() {
            return Err(err(0, format!("`observe` for unknown agent {}", extra + 1)));
        }
        Topology::new(p, n, &edges, observed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Topology::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "agents {}", self.n);
        let _ = writeln!(out, "variables {}", self.p);
        for (a, b) in self.edges() {
            let _ = writeln!(out, "edge {} {}", a + 1, b + 1);
        }
        for (i, vars) in self.observed.iter().enumerate() {
            let _ = write!(out, "observe {}", i + 1);
            for v in vars {
                let _ = write!(out, " {}", v + 1);
            }
            out.push('\n');
        }
        out
    }

    /// Random connected, jointly observable topology: a random spanning tree
    /// plus extra links with probability `link_prob`, each agent measuring
    /// each variable with probability `measure_prob`. Redraws until jointly
    /// observable.
    pub fn random_jointly_observable(
        n: usize,
        p: usize,
        link_prob: f64,
        measure_prob: f64,
        seed: u64,
    ) -> Self {
        let mut rng = Prng::new(seed, STREAM_TOPOLOGY);
        loop {
            let mut edges = Vec::new();
            for i in 1..n {
                edges.push((rng.below(i), i));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.uniform() < link_prob && !edges.contains(&(i, j)) {
                        edges.push((i, j));
                    }
                }
            }
            let observed = (0..n)
                .map(|_| (0..p).filter(|_| rng.uniform() < measure_prob).collect())
                .collect();
            let topo = Topology::new(p, n, &edges, observed).expect("spanning tree keeps the graph connected");
            if check_joint_observability(&topo).jointly_observable {
                return topo;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityReport {
    pub jointly_observable: bool,
    /// Leader set for every entry `(l, m)` with `l <= m`.
    pub leader_sets: BTreeMap<(usize, usize), Vec<usize>>,
    /// Consensus rate `max λ_max(P_FF)`; filled by [`consensus_rate`].
    pub sigma: Option<f64>,
    /// Amplification constant; filled by [`consensus_rate`].
    pub c: Option<f64>,
}

impl ObservabilityReport {
    pub fn first_unobserved(&self) -> Option<(usize, usize)> {
        self.leader_sets
            .iter()
            .find(|(_, leaders)| leaders.is_empty())
            .map(|(&lm, _)| lm)
    }

    /// `c σ^W`
    pub fn consensus_factor(&self, rounds: usize) -> Option<f64> {
        Some(self.c? * self.sigma?.powi(rounds as i32))
    }
}

/// `X_{N_i}` for one agent.
pub fn observable_set(topo: &Topology, agent: usize) -> BTreeSet<usize> {
    topo.observable_set(agent)
}

pub fn check_joint_observability(topo: &Topology) -> ObservabilityReport {
    let sets: Vec<BTreeSet<usize>> = (0..topo.n()).map(|i| topo.observable_set(i)).collect();
    let mut leader_sets = BTreeMap::new();
    for l in 0..topo.p() {
        for m in l..topo.p() {
            let leaders = (0..topo.n())
                .filter(|&i| sets[i].contains(&l) && sets[i].contains(&m))
                .collect();
            leader_sets.insert((l, m), leaders);
        }
    }
    let jointly_observable = leader_sets.values().all(|v: &Vec<usize>| !v.is_empty());
    ObservabilityReport {
        jointly_observable,
        leader_sets,
        sigma: None,
        c: None,
    }
}

/// Follower dynamics for one leader/follower partition.
#[derive(Clone, Debug, PartialEq)]
pub struct PffBlock {
    pub leaders: Vec<usize>,
    pub followers: Vec<usize>,
    pub p_ff: Matrix,
    pub p_fl: Matrix,
}

impl PffBlock {
    pub fn spectral_radius(&self) -> Result<f64> {
        eig_general_spectral_radius(&self.p_ff)
    }

    /// `max_i (P_FF^w 1)_i` for `w = 1..=rounds`: the follower error left
    /// after `w` rounds when leaders sit at 1 and followers start at 0.
    pub fn unit_probe(&self, rounds: usize) -> Vec<f64> {
        let mut e = vec![1.0; self.followers.len()];
        (0..rounds)
            .map(|_| {
                e = self.p_ff.mul_vec(&e);
                e.iter().fold(0.0_f64, |acc, &v| acc.max(v))
            })
            .collect()
    }
}

/// `P_F` rows for the followers of an arbitrary leader set.
pub fn build_pff_for_leaders(topo: &Topology, leaders: &[usize]) -> PffBlock {
    let leaders: Vec<usize> = leaders.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let followers: Vec<usize> = (0..topo.n()).filter(|i| !leaders.contains(i)).collect();
    let mut p_ff = Matrix::zeros(followers.len(), followers.len());
    let mut p_fl = Matrix::zeros(followers.len(), leaders.len());
    for (r, &i) in followers.iter().enumerate() {
        let hood = topo.closed_neighborhood(i);
        let weight = 1.0 / hood.len() as f64;
        for j in hood {
            if let Some(c) = followers.iter().position(|&f| f == j) {
                p_ff.set(r, c, weight);
            } else if let Some(c) = leaders.iter().position(|&l| l == j) {
                p_fl.set(r, c, weight);
            }
        }
    }
    PffBlock {
        leaders,
        followers,
        p_ff,
        p_fl,
    }
}

pub fn build_pff(topo: &Topology, entry: (usize, usize)) -> Result<PffBlock> {
    let (l, m) = entry;
    let leaders = topo.leaders(l, m);
    if leaders.is_empty() {
        return Err(Error::NoLeader { l, m });
    }
    Ok(build_pff_for_leaders(topo, &leaders))
}

/// Distinct leader/follower partitions of a jointly observable topology.
pub fn partitions(topo: &Topology) -> Result<Vec<PffBlock>> {
    let report = check_joint_observability(topo);
    if let Some((l, m)) = report.first_unobserved() {
        return Err(Error::NoLeader { l, m });
    }
    let distinct: BTreeSet<Vec<usize>> = report.leader_sets.into_values().collect();
    Ok(distinct
        .into_iter()
        .map(|leaders| build_pff_for_leaders(topo, &leaders))
        .collect())
}

/// Amplification constant for a set of partitions at rate `sigma`:
/// `sup_w max_i (P_FF^w 1)_i / σ^w`, floored at 1.
pub fn amplification_constant(blocks: &[PffBlock], sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let mut c: f64 = 1.0;
    for block in blocks.iter().filter(|b| !b.followers.is_empty()) {
        let mut e = vec![1.0; block.followers.len()];
        let mut scale = 1.0;
        for _ in 0..UNIT_PROBE_MAX_ROUNDS {
            e = block.p_ff.mul_vec(&e);
            scale *= sigma;
            let worst = e.iter().fold(0.0_f64, |acc, &v| acc.max(v));
            if worst == 0.0 || scale < 1e-280 {
                break;
            }
            c = c.max(worst / scale);
        }
    }
    c
}

/// Observability plus the consensus rate `σ` and constant `c`.
pub fn consensus_rate(topo: &Topology) -> Result<ObservabilityReport> {
    let mut report = check_joint_observability(topo);
    if let Some((l, m)) = report.first_unobserved() {
        return Err(Error::NoLeader { l, m });
    }
    let blocks = partitions(topo)?;
    let mut sigma: f64 = 0.0;
    for block in &blocks {
        sigma = sigma.max(block.spectral_radius()?);
    }
    report.c = Some(amplification_constant(&blocks, sigma));
    report.sigma = Some(sigma);
    Ok(report)
}
