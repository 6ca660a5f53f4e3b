//! Experiment configuration, orchestration and CSV persistence.
//!
//! # Configuration
//!
//! TOML. Only `p`, `n`, `T` and `seed` are required:
//!
//! ```toml
//! p = 5
//! n = 4
//! T = 40
//! seed = 1
//! K = 1                  # dual steps per time step
//! W = 1                  # consensus rounds per time step
//! lambda = 0.15
//! t0 = 10
//! edge_prob = 0.4        # ground-truth precision graph density
//! topology = "generate"  # or a topology file, relative to the config
//! zeta_mode = "adaptive" # or "constant"; `zeta` optional in constant mode
//! outputs = "out"
//! bounds = ["dual_error", "covariance_recursion"]
//! ```
//!
//! # Output files
//!
//! * `trajectory.csv`: `t,agent,gamma_err,s_err_star,s_err_t,centralized_gamma_err,zeta,lambda_min_gamma`.
//!   Agents are numbered from 1; undefined values (before `t0`, or without
//!   ground truth) are empty fields.
//! * `bounds.csv`: `bound,t,agent,lhs,rhs,satisfied`.
//! * `summary.csv`: `metric,value`.
//! * `plot.gp`: gnuplot script for the error curves.
//!
//! Floats are written in the shortest form that parses back to the same
//! value.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, format_float, AnalysisInputs, BoundKind, BoundReport, DEFAULT_DELTA};
use crate::dgama::{self, History, Params, ZetaMode};
use crate::error::{Error, Result};
use crate::matx::SymMatrix;
use crate::model::{gen_er_precision, sample_gaussian, DataStream, GroundTruth, GAMMA_STAR_TOL};
use crate::network::{consensus_rate, ObservabilityReport, Topology};
use crate::solver::{StepSize, DEFAULT_SAFETY};

pub const TRAJECTORY_HEADER: [&str; 8] = [
    "t",
    "agent",
    "gamma_err",
    "s_err_star",
    "s_err_t",
    "centralized_gamma_err",
    "zeta",
    "lambda_min_gamma",
];

pub const SWEEP_HEADER: [&str; 8] = [
    "K",
    "W",
    "seed",
    "final_mean_gamma_err",
    "final_max_gamma_err",
    "decreased",
    "mean_centralized_gap",
    "failure",
];

pub const GENERATE: &str = "generate";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaModeName {
    Adaptive,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_max: usize,
    pub seed: u64,
    #[serde(rename = "K", default = "defaults::k")]
    pub k: usize,
    #[serde(rename = "W", default = "defaults::w")]
    pub w: usize,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::t0")]
    pub t0: usize,
    #[serde(default = "defaults::edge_prob")]
    pub edge_prob: f64,
    #[serde(default = "defaults::topology")]
    pub topology: String,
    /// Extra-link probability for generated topologies.
    #[serde(default = "defaults::link_prob")]
    pub link_prob: f64,
    /// Per-variable measurement probability for generated topologies.
    #[serde(default = "defaults::measure_prob")]
    pub measure_prob: f64,
    #[serde(default = "defaults::zeta_mode")]
    pub zeta_mode: ZetaModeName,
    /// Constant step size; chosen at `t0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default = "defaults::zeta_safety")]
    pub zeta_safety: f64,
    #[serde(default = "defaults::outputs")]
    pub outputs: PathBuf,
    #[serde(default = "defaults::bounds")]
    pub bounds: Vec<BoundKind>,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    /// Replay a CSV stream instead of sampling; disables ground-truth metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<PathBuf>,
}

mod defaults {
    use super::*;

    pub fn k() -> usize {
        1
    }
    pub fn w() -> usize {
        1
    }
    pub fn lambda() -> f64 {
        0.15
    }
    pub fn t0() -> usize {
        10
    }
    pub fn edge_prob() -> f64 {
        0.4
    }
    pub fn topology() -> String {
        GENERATE.into()
    }
    pub fn link_prob() -> f64 {
        0.3
    }
    pub fn measure_prob() -> f64 {
        0.4
    }
    pub fn zeta_mode() -> ZetaModeName {
        ZetaModeName::Adaptive
    }
    pub fn zeta_safety() -> f64 {
        DEFAULT_SAFETY
    }
    pub fn outputs() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn bounds() -> Vec<BoundKind> {
        vec![BoundKind::DualError, BoundKind::CovarianceRecursion]
    }
    pub fn delta() -> f64 {
        DEFAULT_DELTA
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |span| text[..span.start].matches('\n').count() + 1);
            Error::Parse {
                origin: origin.into(),
                line,
                message: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Validation(format!("p must be at least 2, got {}", self.p)));
        }
        if self.n == 0 {
            return Err(Error::Validation("n must be at least 1".into()));
        }
        for (name, v) in [("edge_prob", self.edge_prob), ("link_prob", self.link_prob), ("measure_prob", self.measure_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Validation(format!("delta must lie in (0, 1/2), got {}", self.delta)));
        }
        if self.zeta.is_some() && self.zeta_mode == ZetaModeName::Adaptive {
            return Err(Error::Validation("zeta is only meaningful with zeta_mode = \"constant\"".into()));
        }
        self.params().validate()
    }

    pub fn params(&self) -> Params {
        Params {
            k: self.k,
            w: self.w,
            lambda: self.lambda,
            t0: self.t0,
            t_max: self.t_max,
            zeta_mode: match self.zeta_mode {
                ZetaModeName::Adaptive => ZetaMode::Adaptive,
                ZetaModeName::Constant => ZetaMode::Constant(self.zeta),
            },
            zeta_safety: self.zeta_safety,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.topology != GENERATE {
            self.topology = base.join(&self.topology).to_string_lossy().into_owned();
        }
        if let Some(stream) = &self.stream {
            self.stream = Some(base.join(stream));
        }
    }
}

/// Reads and validates a config; relative topology and stream paths are
/// taken relative to the config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = ExperimentConfig::parse(&text, &path.display().to_string())?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

/// Ground truth, topology and data for one configuration.
#[derive(Clone, Debug)]
pub struct Setup {
    pub truth: Option<GroundTruth>,
    pub topology: Topology,
    pub stream: DataStream,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Setup> {
    config.validate()?;
    let topology = if config.topology == GENERATE {
        Topology::random_jointly_observable(config.n, config.p, config.link_prob, config.measure_prob, config.seed)
    } else {
        Topology::load(Path::new(&config.topology))?
    };
    if topology.p() != config.p || topology.n() != config.n {
        return Err(Error::Validation(format!(
            "topology has {} agents and {} variables but the config asks for n = {} and p = {}",
            topology.n(),
            topology.p(),
            config.n,
            config.p
        )));
    }
    let (truth, stream) = match &config.stream {
        Some(path) => (None, replay_stream(path, Some(config.p))?),
        None => {
            let gt = gen_er_precision(config.p, config.edge_prob, config.seed)?.with_gamma_star(config.lambda, GAMMA_STAR_TOL)?;
            let stream = sample_gaussian(&gt, config.t_max, config.seed)?;
            (Some(gt), stream)
        }
    };
    Ok(Setup {
        truth,
        topology,
        stream,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub history: History,
    pub rate: ObservabilityReport,
    /// Constant step size in force, if any.
    pub zeta: Option<f64>,
    pub report: Option<BoundReport>,
    pub summary: Vec<(String, String)>,
}

/// Runs one experiment in memory.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let setup = prepare(config)?;
    let rate = consensus_rate(&setup.topology)?;
    let sim = dgama::run(setup.topology, config.params(), setup.truth.as_ref(), &setup.stream)?;
    let zeta = match sim.step_size() {
        Some(StepSize::Constant(z)) => Some(z),
        _ => None,
    };
    let history = sim.into_history();
    let report = match &setup.truth {
        Some(gt) => {
            let gamma_star = gt.gamma_star.as_ref().expect("prepared with the fixed point");
            let inputs = AnalysisInputs {
                gamma_star,
                s_star: &gt.covariance_true,
                lambda: config.lambda,
                t0: config.t0,
                k: config.k,
                w: config.w,
                zeta,
                c: rate.c,
                sigma: rate.sigma,
                delta: config.delta,
            };
            Some(analyze(&history, &inputs, &config.bounds)?)
        }
        None => None,
    };
    let summary = summarize(config, &history, &rate, zeta, report.as_ref());
    Ok(ExperimentOutcome {
        history,
        rate,
        zeta,
        report,
        summary,
    })
}

/// Runs one experiment and writes its outputs under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    let outcome = execute(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("trajectory.csv"), |w| write_trajectory(&outcome.history, w))?;
    write_file(&out_dir.join("bounds.csv"), |w| match &outcome.report {
        Some(report) => report.write_csv(w),
        None => BoundReport::default().write_csv(w),
    })?;
    write_file(&out_dir.join("summary.csv"), |w| write_summary(&outcome.summary, w))?;
    write_file(&out_dir.join("plot.gp"), |w| {
        w.write_all(plot_script(config.n).as_bytes())
            .map_err(|e| Error::io("plot.gp", e))
    })?;
    Ok(outcome)
}

fn write_file(path: &Path, body: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    body(&mut file)?;
    file.flush().map_err(|e| Error::io(path, e))
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

pub fn write_trajectory<W: Write>(history: &History, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in &history.agents {
        let central = history.central(r.t).and_then(|c| c.gamma_err);
        w.write_record([
            r.t.to_string(),
            (r.agent + 1).to_string(),
            opt(r.gamma_err),
            opt(r.s_err_star),
            format_float(r.s_err_t),
            opt(central),
            opt(r.zeta),
            opt(r.lambda_min_gamma),
        ])?;
    }
    w.flush().map_err(|e| Error::io("trajectory.csv", e))
}

pub fn write_summary<W: Write>(summary: &[(String, String)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "value"])?;
    for (k, v) in summary {
        w.write_record([k, v])?;
    }
    w.flush().map_err(|e| Error::io("summary.csv", e))
}

fn summarize(
    config: &ExperimentConfig,
    history: &History,
    rate: &ObservabilityReport,
    zeta: Option<f64>,
    report: Option<&BoundReport>,
) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let t = history.last_t();
    out.push(("t_final".into(), t.to_string()));
    for i in 0..history.n {
        let r = history.agent(t, i);
        out.push((format!("final_gamma_err_agent{}", i + 1), opt(r.and_then(|r| r.gamma_err))));
        out.push((format!("final_s_err_star_agent{}", i + 1), opt(r.and_then(|r| r.s_err_star))));
        out.push((format!("final_centralized_gap_agent{}", i + 1), opt(r.and_then(|r| r.central_gap))));
    }
    let central = history.central(t);
    out.push(("final_centralized_gamma_err".into(), opt(central.and_then(|c| c.gamma_err))));
    out.push(("sigma".into(), opt(rate.sigma)));
    out.push(("c".into(), opt(rate.c)));
    out.push(("consensus_factor".into(), opt(rate.consensus_factor(config.w))));
    out.push(("zeta".into(), opt(zeta)));
    if let Some(report) = report {
        let c = &report.constants;
        out.push(("beta".into(), opt(c.beta)));
        out.push(("box_a".into(), opt(c.eigen_box.map(|b| b.a))));
        out.push(("box_b".into(), opt(c.eigen_box.map(|b| b.b))));
        let kind = c.eigen_box.map(|b| format!("{:?}", b.kind).to_lowercase());
        out.push(("box_kind".into(), kind.unwrap_or_default()));
        out.push(("theory_box_a".into(), opt(c.theory_box.map(|b| b.0))));
        out.push(("theory_box_b".into(), opt(c.theory_box.map(|b| b.1))));
        out.push(("delta".into(), format_float(c.delta)));
        out.push(("t_bar".into(), c.t_bar.map(|t| t.to_string()).unwrap_or_default()));
        for &bound in &config.bounds {
            let (ok, total) = report.tally(bound);
            out.push((format!("{}_satisfied", bound.name()), ok.to_string()));
            out.push((format!("{}_rows", bound.name()), total.to_string()));
        }
    }
    out
}

pub fn plot_script(n: usize) -> String {
    let mut s = String::from(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 't'\n\
         set ylabel 'gamma error (Frobenius)'\n\
         set logscale y\n\
         plot \\\n",
    );
    for i in 1..=n {
        s.push_str(&format!(
            "  'trajectory.csv' using 1:($2=={i} ? $3 : NaN) with lines title 'agent {i}', \\\n"
        ));
    }
    s.push_str("  'trajectory.csv' using 1:($2==1 ? $6 : NaN) with lines dashtype 2 title 'centralized'\n");
    s
}

/// One row of a parameter sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub w: usize,
    pub seed: u64,
    pub final_mean_gamma_err: f64,
    pub final_max_gamma_err: f64,
    /// Every agent ended below its error at `t0 + 1`.
    pub decreased: bool,
    /// Mean over agents and `t ∈ [T/2, T]` of the gap to the centralized
    /// estimate.
    pub mean_centralized_gap: f64,
    /// Set when an agent aborted; the metrics are then NaN.
    pub failure: Option<String>,
}

/// Runs the configuration for every `(K, W)` pair and seeds
/// `seed, seed + 1, …`. Each seed has its own ground truth and stream.
/// A run in which an agent aborts is kept as a failed row; any other error
/// ends the sweep.
pub fn sweep(config: &ExperimentConfig, ks: &[usize], ws: &[usize], seeds: usize) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        for &w in ws {
            for s in 0..seeds as u64 {
                let cfg = ExperimentConfig {
                    k,
                    w,
                    seed: config.seed + s,
                    bounds: Vec::new(),
                    ..config.clone()
                };
                let setup = prepare(&cfg)?;
                if setup.truth.is_none() {
                    return Err(Error::Validation("sweeps need generated data with a ground truth".into()));
                }
                match dgama::run(setup.topology, cfg.params(), setup.truth.as_ref(), &setup.stream) {
                    Ok(sim) => rows.push(sweep_row(&cfg, sim.history())?),
                    Err(e @ Error::AgentFailure { .. }) => {
                        warn!("K = {k}, W = {w}, seed {}: {e}", cfg.seed);
                        rows.push(SweepRow {
                            k,
                            w,
                            seed: cfg.seed,
                            final_mean_gamma_err: f64::NAN,
                            final_max_gamma_err: f64::NAN,
                            decreased: false,
                            mean_centralized_gap: f64::NAN,
                            failure: Some(e.to_string()),
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(rows)
}

fn sweep_row(cfg: &ExperimentConfig, h: &History) -> Result<SweepRow> {
    let missing = |t: usize| Error::MissingLog(format!("gamma error at t = {t}"));
    let t_final = cfg.t_max;
    let mut finals = Vec::with_capacity(h.n);
    let mut decreased = true;
    for i in 0..h.n {
        let last = h.agent(t_final, i).and_then(|r| r.gamma_err).ok_or_else(|| missing(t_final))?;
        let first = h.agent(cfg.t0 + 1, i).and_then(|r| r.gamma_err).ok_or_else(|| missing(cfg.t0 + 1))?;
        decreased &= last < first;
        finals.push(last);
    }
    let lo = (t_final / 2).max(cfg.t0);
    let gaps: Vec<f64> = h
        .agents
        .iter()
        .filter(|r| r.t >= lo)
        .filter_map(|r| r.central_gap)
        .collect();
    Ok(SweepRow {
        k: cfg.k,
        w: cfg.w,
        seed: cfg.seed,
        final_mean_gamma_err: finals.iter().sum::<f64>() / finals.len() as f64,
        final_max_gamma_err: finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        decreased,
        mean_centralized_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
        failure: None,
    })
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.w.to_string(),
            r.seed.to_string(),
            format_float(r.final_mean_gamma_err),
            format_float(r.final_max_gamma_err),
            r.decreased.to_string(),
            format_float(r.mean_centralized_gap),
            r.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("sweep.csv", e))
}

/// Per-`(K, W)` means over completed seeds:
/// `K,W,runs,failed,decreased,mean_final_gamma_err,mean_centralized_gap`.
pub fn write_sweep_summary<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["K", "W", "runs", "failed", "decreased", "mean_final_gamma_err", "mean_centralized_gap"])?;
    let mut keys: Vec<(usize, usize)> = rows.iter().map(|r| (r.k, r.w)).collect();
    keys.dedup();
    for (k, w_) in keys {
        let all: Vec<&SweepRow> = rows.iter().filter(|r| r.k == k && r.w == w_).collect();
        let group: Vec<&SweepRow> = all.iter().copied().filter(|r| r.failure.is_none()).collect();
        let runs = group.len() as f64;
        w.write_record([
            k.to_string(),
            w_.to_string(),
            all.len().to_string(),
            (all.len() - group.len()).to_string(),
            group.iter().filter(|r| r.decreased).count().to_string(),
            format_float(group.iter().map(|r| r.final_mean_gamma_err).sum::<f64>() / runs),
            format_float(group.iter().map(|r| r.mean_centralized_gap).sum::<f64>() / runs),
        ])?;
    }
    w.flush().map_err(|e| Error::io("sweep_summary.csv", e))
}

/// Stream CSV: a header row `x1,…,xp` then one sample per row.
pub fn write_stream<W: Write>(stream: &DataStream, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=stream.p).map(|j| format!("x{j}")))?;
    for x in &stream.samples {
        w.write_record(x.iter().map(|&v| format_float(v)))?;
    }
    w.flush().map_err(|e| Error::io("stream.csv", e))
}

/// Reads a stream written by [`write_stream`]. With `p` given, every row must
/// have exactly `p` values.
pub fn read_stream<R: std::io::Read>(input: R, origin: &str, p: Option<usize>) -> Result<DataStream> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let width = r.headers()?.len();
    let p = p.unwrap_or(width);
    if width != p {
        return Err(Error::DimensionMismatch { expected: p, found: width });
    }
    let mut samples = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: rec.len(),
            });
        }
        let row = rec
            .iter()
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    origin: origin.into(),
                    line: idx + 2,
                    message: format!("{v:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(row);
    }
    Ok(DataStream { p, samples, seed: None })
}

pub fn replay_stream(path: &Path, p: Option<usize>) -> Result<DataStream> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_stream(file, &path.display().to_string(), p)
}

/// Dense matrix as headerless CSV, one row per line.
pub fn write_matrix<W: Write>(m: &SymMatrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in m.rows() {
        w.write_record(row.iter().map(|&v| format_float(v)))?;
    }
    w.flush().map_err(|e| Error::io("matrix", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "p = 5\nn = 4\nT = 40\nseed = 3\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(MINIMAL, "test").unwrap();
        assert_eq!((c.k, c.w, c.t0), (1, 1, 10));
        assert_eq!(c.lambda, 0.15);
        assert_eq!(c.delta, 0.25);
        assert_eq!(c.topology, GENERATE);
        assert_eq!(c.zeta_mode, ZetaModeName::Adaptive);
    }

    #[test]
    fn config_round_trip() {
        let mut c = ExperimentConfig::parse(MINIMAL, "test").unwrap();
        c.zeta_mode = ZetaModeName::Constant;
        c.zeta = Some(0.1 + 0.2);
        c.lambda = 1.0 / 3.0;
        let back = ExperimentConfig::parse(&c.to_toml().unwrap(), "round trip").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_configs() {
        let w0 = format!("{MINIMAL}W = 0\n");
        assert!(matches!(ExperimentConfig::parse(&w0, "t"), Err(Error::Validation(_))));
        let late = format!("{MINIMAL}t0 = 40\n");
        assert!(matches!(ExperimentConfig::parse(&late, "t"), Err(Error::Validation(_))));
        let neg = format!("{MINIMAL}lambda = -0.1\n");
        assert!(matches!(ExperimentConfig::parse(&neg, "t"), Err(Error::Validation(_))));
    }

    #[test]
    fn parse_error_reports_line() {
        let bad = "p = 5\nn = 4\nT = = 40\nseed = 1\n";
        match ExperimentConfig::parse(bad, "bad.toml") {
            Err(Error::Parse { line, origin, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(origin, "bad.toml");
            }
            other => panic!("{other:?}"),
        }
        let unknown = format!("{MINIMAL}colour = 1\n");
        assert!(matches!(ExperimentConfig::parse(&unknown, "t"), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn stream_round_trip() {
        let stream = DataStream {
            p: 2,
            samples: vec![vec![0.1, -2.5e-17], vec![1.0 / 3.0, 7.0]],
            seed: None,
        };
        let mut buf = Vec::new();
        write_stream(&stream, &mut buf).unwrap();
        assert_eq!(read_stream(&buf[..], "mem", Some(2)).unwrap(), stream);
    }

    #[test]
    fn stream_width_checked() {
        let text = "x1,x2,x3\n1,2,3\n";
        assert!(matches!(
            read_stream(text.as_bytes(), "mem", Some(2)),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
        let ragged = "x1,x2\n1,2\n3\n";
        assert!(matches!(
            read_stream(ragged.as_bytes(), "mem", None),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        let junk = "x1,x2\n1,abc\n";
        assert!(matches!(read_stream(junk.as_bytes(), "mem", None), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn sweep_keeps_aborted_runs() {
        let mut cfg = load_config(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/data/ring.toml"))).unwrap();
        cfg.seed = 10;
        let rows = sweep(&cfg, &[1], &[1, 2], 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].failure.as_deref().unwrap().contains("t = 10"));
        assert!(rows[0].final_mean_gamma_err.is_nan() && !rows[0].decreased);
        assert!(rows[1].failure.is_none());
        let mut buf = Vec::new();
        write_sweep_summary(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("1,1,1,1,0,NaN"));
    }

    #[test]
    fn matrix_csv() {
        let m = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0.5\n0.5,2\n");
    }
}
