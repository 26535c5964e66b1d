//! Seeded Monte Carlo experiments over several controller arms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ArmSpec, RunConfig};
use super::fixture::Fixture;
use crate::controller::{run_observed, Baseline, CentralizedDelay, ControllerConfig, Mode};
use crate::error::{Error, Result};
use crate::objective::Normalization;
use crate::plant::GridProvenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub name: String,
    pub tau: usize,
    pub eta: f64,
    pub delta: f64,
    pub baseline: Baseline,
    pub centralized_delay: CentralizedDelay,
}

impl ArmParams {
    pub fn resolve(cfg: &RunConfig, arm: &ArmSpec) -> Self {
        let c = &cfg.controller;
        Self {
            name: arm.name.clone(),
            tau: arm.tau.unwrap_or(c.tau),
            eta: arm.eta.unwrap_or(c.eta),
            delta: arm.delta.unwrap_or(c.delta),
            baseline: arm.baseline.unwrap_or(c.baseline),
            centralized_delay: arm.centralized_delay.unwrap_or(c.centralized_delay),
        }
    }

    pub fn controller_config(&self, cfg: &RunConfig, fixture: &Fixture, seed: u64) -> ControllerConfig {
        let mut cc = ControllerConfig::new(self.eta, self.delta, self.tau, cfg.controller.horizon, seed);
        cc.baseline = self.baseline;
        cc.centralized_delay = self.centralized_delay;
        cc.mode = cfg.mode();
        if cc.mode == Mode::Projected {
            cc.constraint = fixture.constraint.clone();
        }
        cc
    }
}

/// One exported trace row. `probe`, `objective` and `e_norm` are absent on
/// the final row `k = T` and `e_norm` before it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub u: Vec<f64>,
    pub probe: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub rel_err: f64,
    pub e_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub arm: String,
    pub seed: Option<u64>,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetadata {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub horizon: usize,
    pub u_star: Vec<f64>,
    pub optimum_method: String,
    pub unconstrained_u_star: Vec<f64>,
    /// Denominator of the relative error; 1 when `u* = 0`.
    pub rel_err_denominator: f64,
    pub constraint_lower: Option<Vec<Option<f64>>>,
    pub constraint_upper: Option<Vec<Option<f64>>>,
    pub local_scale: f64,
    pub normalization: Normalization,
    pub plant_provenance: Option<GridProvenance>,
    pub trace_stride: usize,
    pub mean_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaStats {
    pub seed: u64,
    pub initial_rel_err: f64,
    pub final_rel_err: f64,
    pub plateau_rel_err: f64,
    pub max_nominal_violation: f64,
    pub max_probe_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub params: ArmParams,
    pub replicas_ok: usize,
    pub failures: Vec<ReplicaFailure>,
    pub initial_mean_rel_err: f64,
    pub final_mean_rel_err: f64,
    /// Average of the mean curve over the plateau window.
    pub plateau_mean_rel_err: f64,
    pub median_plateau_rel_err: f64,
    pub mean_final_u: Vec<f64>,
    pub max_nominal_violation: f64,
    pub max_probe_violation: f64,
    pub replicas: Vec<ReplicaStats>,
}

#[derive(Debug, Clone)]
pub struct ReplicaResult {
    pub stats: ReplicaStats,
    /// Thinned trace for export.
    pub trace: RunTrace,
    /// `‖u_k − u*‖` for `k = 0..=T`.
    pub gap: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub summary: ArmSummary,
    /// Mean over successful replicas, thinned by `mean_stride`.
    pub mean: RunTrace,
    /// Full-resolution mean relative error.
    pub mean_rel_err: Vec<f64>,
    /// Full-resolution mean input, `(T+1) × N` row-major.
    pub mean_u: Vec<f64>,
    pub replicas: Vec<ReplicaResult>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metadata: ExperimentMetadata,
    pub arms: Vec<ArmResult>,
}

impl ExperimentResult {
    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.summary.params.name == name)
    }

    pub fn failures(&self) -> usize {
        self.arms.iter().map(|a| a.summary.failures.len()).sum()
    }
}

struct Series {
    u: Vec<f64>,
    probe: Vec<f64>,
    objective: Vec<f64>,
    gap: Vec<f64>,
    e_norm: Vec<Option<f64>>,
    max_nominal_violation: f64,
    max_probe_violation: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn run_replica(cfg: &RunConfig, fixture: &Fixture, params: &ArmParams, seed: u64) -> Result<Series> {
    let n = fixture.n();
    let t = cfg.controller.horizon;
    let weights = fixture.weights(params.tau)?;
    let cc = params.controller_config(cfg, fixture, seed);
    let u_star = &fixture.optimum.u;
    let constraint = fixture.constraint.as_ref().filter(|_| cc.mode == Mode::Projected);
    let mut s = Series {
        u: Vec::with_capacity((t + 1) * n),
        probe: Vec::with_capacity(t * n),
        objective: Vec::with_capacity(t),
        gap: Vec::with_capacity(t + 1),
        e_norm: Vec::with_capacity(t),
        max_nominal_violation: 0.0,
        max_probe_violation: 0.0,
    };
    let final_u = run_observed(cc, fixture.plant.clone(), fixture.objectives(), &weights, &fixture.u0, |r| {
        s.u.extend_from_slice(&r.u);
        s.probe.extend_from_slice(&r.probe);
        s.objective.push(r.objective);
        s.gap.push(distance(&r.u, u_star));
        s.e_norm.push(r.e_norm);
        if let Some(c) = constraint {
            s.max_nominal_violation = s.max_nominal_violation.max(c.violation(&r.u));
        }
        s.max_probe_violation = s.max_probe_violation.max(r.probe_violation);
    })?;
    if let Some(c) = constraint {
        s.max_nominal_violation = s.max_nominal_violation.max(c.violation(&final_u));
    }
    s.gap.push(distance(&final_u, u_star));
    s.u.extend_from_slice(&final_u);
    Ok(s)
}

fn keep_row(k: usize, t: usize, stride: usize) -> bool {
    k % stride == 0 || k == t
}

fn rows_from(s: &Series, n: usize, t: usize, denom: f64, stride: usize) -> Vec<TraceRow> {
    (0..=t)
        .filter(|&k| keep_row(k, t, stride))
        .map(|k| TraceRow {
            k,
            u: s.u[k * n..(k + 1) * n].to_vec(),
            probe: (k < t).then(|| s.probe[k * n..(k + 1) * n].to_vec()),
            objective: (k < t).then(|| s.objective[k]),
            rel_err: s.gap[k] / denom,
            e_norm: if k < t { s.e_norm[k] } else { None },
        })
        .collect()
}

fn plateau(values: &[f64], fraction: f64) -> f64 {
    let w = ((values.len() as f64 * fraction).ceil() as usize).clamp(1, values.len());
    values[values.len() - w..].iter().sum::<f64>() / w as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Sums accumulated in replica order so the reduction is deterministic.
struct MeanAccumulator {
    count: usize,
    u: Vec<f64>,
    probe: Vec<f64>,
    objective: Vec<f64>,
    rel_err: Vec<f64>,
    e_norm: Vec<f64>,
    e_count: Vec<usize>,
}

impl MeanAccumulator {
    fn new(n: usize, t: usize) -> Self {
        Self {
            count: 0,
            u: vec![0.0; (t + 1) * n],
            probe: vec![0.0; t * n],
            objective: vec![0.0; t],
            rel_err: vec![0.0; t + 1],
            e_norm: vec![0.0; t],
            e_count: vec![0; t],
        }
    }

    fn add(&mut self, s: &Series, denom: f64) {
        self.count += 1;
        let add = |acc: &mut [f64], x: &[f64]| acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        add(&mut self.u, &s.u);
        add(&mut self.probe, &s.probe);
        add(&mut self.objective, &s.objective);
        self.rel_err.iter_mut().zip(&s.gap).for_each(|(a, g)| *a += g / denom);
        for (k, e) in s.e_norm.iter().enumerate() {
            if let Some(e) = e {
                self.e_norm[k] += e;
                self.e_count[k] += 1;
            }
        }
    }

    fn finish(self, n: usize, t: usize, stride: usize, arm: &str) -> (RunTrace, Vec<f64>, Vec<f64>) {
        let c = self.count.max(1) as f64;
        let scale = |v: Vec<f64>| v.into_iter().map(|x| x / c).collect::<Vec<f64>>();
        let u = scale(self.u);
        let probe = scale(self.probe);
        let objective = scale(self.objective);
        let rel_err = scale(self.rel_err);
        let rows = (0..=t)
            .filter(|&k| keep_row(k, t, stride))
            .map(|k| TraceRow {
                k,
                u: u[k * n..(k + 1) * n].to_vec(),
                probe: (k < t).then(|| probe[k * n..(k + 1) * n].to_vec()),
                objective: (k < t).then(|| objective[k]),
                rel_err: rel_err[k],
                e_norm: (k < t && self.e_count[k] > 0).then(|| self.e_norm[k] / self.e_count[k] as f64),
            })
            .collect();
        (RunTrace { arm: arm.to_string(), seed: None, rows }, rel_err, u)
    }
}

pub fn experiment_metadata(cfg: &RunConfig, fixture: &Fixture) -> ExperimentMetadata {
    let norm = fixture.optimum.norm();
    let finite = |v: &[f64]| v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>();
    ExperimentMetadata {
        config_hash: cfg.hash(),
        seeds: cfg.experiment.seed_list(),
        n: fixture.n(),
        horizon: cfg.controller.horizon,
        u_star: fixture.optimum.u.clone(),
        optimum_method: fixture.optimum.method.clone(),
        unconstrained_u_star: fixture.unconstrained_optimum.clone(),
        rel_err_denominator: if norm > 0.0 { norm } else { 1.0 },
        constraint_lower: fixture.constraint.as_ref().map(|c| finite(c.lower())),
        constraint_upper: fixture.constraint.as_ref().map(|c| finite(c.upper())),
        local_scale: fixture.model.scale,
        normalization: cfg.objective.normalization,
        plant_provenance: fixture.plant.provenance().cloned(),
        trace_stride: cfg.experiment.trace_stride,
        mean_stride: cfg.experiment.mean_stride,
    }
}

/// Runs every selected arm over every seed. Replica failures are recorded
/// in the arm summary rather than aborting the experiment; an arm with no
/// successful replica is an error.
pub fn run_experiment(cfg: &RunConfig, arm_filter: Option<&[String]>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let fixture = Fixture::build(cfg)?;
    let metadata = experiment_metadata(cfg, &fixture);
    let arms: Vec<&ArmSpec> = match arm_filter {
        Some(names) => {
            for name in names {
                if !cfg.experiment.arms.iter().any(|a| &a.name == name) {
                    return Err(Error::Config(format!("unknown arm '{name}'")));
                }
            }
            cfg.experiment.arms.iter().filter(|a| names.contains(&a.name)).collect()
        }
        None => cfg.experiment.arms.iter().collect(),
    };
    let default_arm;
    let arms = if arms.is_empty() {
        default_arm = ArmSpec::named("default");
        vec![&default_arm]
    } else {
        arms
    };

    let mut results = Vec::with_capacity(arms.len());
    for arm in arms {
        let params = ArmParams::resolve(cfg, arm);
        log::info!("arm {} (tau = {}, {:?})", params.name, params.tau, params.baseline);
        results.push(run_arm(cfg, &fixture, &metadata, params)?);
    }
    Ok(ExperimentResult { metadata, arms: results })
}

fn run_arm(cfg: &RunConfig, fixture: &Fixture, meta: &ExperimentMetadata, params: ArmParams) -> Result<ArmResult> {
    let n = fixture.n();
    let t = cfg.controller.horizon;
    let exp = &cfg.experiment;
    let denom = meta.rel_err_denominator;
    let seeds = exp.seed_list();
    let chunk = rayon::current_num_threads().max(1);

    let mut acc = MeanAccumulator::new(n, t);
    let mut replicas = Vec::new();
    let mut failures = Vec::new();
    for block in seeds.chunks(chunk) {
        let outs: Vec<(u64, Result<Series>)> =
            block.par_iter().map(|&seed| (seed, run_replica(cfg, fixture, &params, seed))).collect();
        for (seed, out) in outs {
            match out {
                Ok(s) => {
                    acc.add(&s, denom);
                    let rel: Vec<f64> = s.gap.iter().map(|g| g / denom).collect();
                    let stats = ReplicaStats {
                        seed,
                        initial_rel_err: rel[0],
                        final_rel_err: rel[t],
                        plateau_rel_err: plateau(&rel, exp.plateau_fraction),
                        max_nominal_violation: s.max_nominal_violation,
                        max_probe_violation: s.max_probe_violation,
                    };
                    let trace = RunTrace { arm: params.name.clone(), seed: Some(seed), rows: rows_from(&s, n, t, denom, exp.trace_stride) };
                    replicas.push(ReplicaResult { stats, trace, gap: s.gap });
                }
                Err(e) => {
                    log::error!("arm {} seed {seed} failed: {e}", params.name);
                    failures.push(ReplicaFailure { seed, error: e.to_string() });
                }
            }
        }
    }
    if replicas.is_empty() {
        return Err(Error::SolverStalled(format!("every replica of arm '{}' failed", params.name)));
    }
    let (mean, mean_rel_err, mean_u) = acc.finish(n, t, exp.mean_stride, &params.name);
    let summary = ArmSummary {
        replicas_ok: replicas.len(),
        failures,
        initial_mean_rel_err: mean_rel_err[0],
        final_mean_rel_err: mean_rel_err[t],
        plateau_mean_rel_err: plateau(&mean_rel_err, exp.plateau_fraction),
        median_plateau_rel_err: median(replicas.iter().map(|r| r.stats.plateau_rel_err).collect()),
        mean_final_u: mean_u[t * n..].to_vec(),
        max_nominal_violation: replicas.iter().map(|r| r.stats.max_nominal_violation).fold(0.0, f64::max),
        max_probe_violation: replicas.iter().map(|r| r.stats.max_probe_violation).fold(0.0, f64::max),
        replicas: replicas.iter().map(|r| r.stats.clone()).collect(),
        params,
    };
    Ok(ArmResult { summary, mean, mean_rel_err, mean_u, replicas })
}
