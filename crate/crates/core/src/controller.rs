//! The distributed model-free feedback controller.
//!
//! Every agent keeps a queue of `τ` scalar objective values. Each iteration
//! it probes the plant at its perturbed input, averages every queue slot
//! with its neighbors, appends the fresh local value and uses the difference
//! of successive queue heads as a one-point residual gradient estimate. After
//! `τ` rounds a value has been averaged `τ` times, so the head at iteration
//! `k ≥ τ` is `(W^τ φ_{k−τ})_i`.
//!
//! The controller only sees the plant through [`SteadyStateMap::measure`]
//! and each agent only uses its own scalars plus what its neighbors send.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::WeightMatrix;
use crate::objective::{BoxConstraint, SharedObjective};
use crate::plant::SteadyStateMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Unconstrained,
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Distributed,
    /// Exact network-wide averaging in place of consensus.
    Centralized,
}

/// Information delay of the centralized baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentralizedDelay {
    /// Residual estimate from the two most recent probes.
    #[default]
    None,
    /// Same `τ`-step delay as the distributed controller.
    Tau,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub eta: f64,
    pub delta: f64,
    pub tau: usize,
    pub horizon: usize,
    pub mode: Mode,
    /// Required in projected mode, ignored otherwise.
    pub constraint: Option<BoxConstraint>,
    pub seed: u64,
    pub baseline: Baseline,
    pub centralized_delay: CentralizedDelay,
}

impl ControllerConfig {
    pub fn new(eta: f64, delta: f64, tau: usize, horizon: usize, seed: u64) -> Self {
        Self {
            eta,
            delta,
            tau,
            horizon,
            mode: Mode::Unconstrained,
            constraint: None,
            seed,
            baseline: Baseline::Distributed,
            centralized_delay: CentralizedDelay::None,
        }
    }

    pub fn projected(mut self, constraint: BoxConstraint) -> Self {
        self.mode = Mode::Projected;
        self.constraint = Some(constraint);
        self
    }

    pub fn centralized(mut self) -> Self {
        self.baseline = Baseline::Centralized;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size eta = {} must be positive", self.eta)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("smoothing delta = {} must be positive", self.delta)));
        }
        if self.tau == 0 {
            return Err(Error::InvalidParameter("consensus depth tau must be >= 1".into()));
        }
        if self.mode == Mode::Projected {
            match &self.constraint {
                None => return Err(Error::InvalidParameter("projected mode needs a constraint".into())),
                Some(c) if c.dim() != n => return Err(Error::DimensionMismatch { expected: n, found: c.dim() }),
                _ => {}
            }
        }
        Ok(())
    }

    /// Checks `η < δ / sqrt(4 N L0² tr[W^{2τ}])`. A violated condition is
    /// reported, not rejected: the simulator may explore such regimes.
    pub fn step_size_check(&self, n: usize, l0: f64, tr_w2tau: f64) -> StepSizeCheck {
        let threshold = self.delta / (4.0 * n as f64 * l0 * l0 * tr_w2tau).sqrt();
        StepSizeCheck { threshold, satisfied: self.eta > 0.0 && self.eta < threshold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeCheck {
    pub threshold: f64,
    pub satisfied: bool,
}

/// Deterministic random streams: one per agent plus one for initialization
/// vectors, all derived from a master seed.
#[derive(Debug, Clone)]
pub struct SeedStreams {
    pub init: ChaCha8Rng,
    pub agents: Vec<ChaCha8Rng>,
}

impl SeedStreams {
    pub fn new(seed: u64, n: usize) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self { init: stream(0), agents: (0..n as u64).map(|i| stream(i + 1)).collect() }
    }

    pub fn init_vector(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.init.sample(StandardNormal)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub u: f64,
    /// Objective-value queue, `τ` entries between iterations.
    pub queue: VecDeque<f64>,
    /// Exploration scalars not yet consumed: `v^init_0..v^init_{τ−1}`
    /// followed by the online `v_0, v_1, …`. The front is the scalar the
    /// current iteration's update multiplies.
    pub exploration: VecDeque<f64>,
    /// Head of the extended queue at the previous iteration.
    pub prev_head: f64,
}

/// Counts scalars exchanged during consensus rounds.
#[derive(Debug, Clone, Default)]
pub struct Transport {
    /// `sent[i][j]` scalars agent `i` sent to agent `j` in the last round.
    last_round: Vec<Vec<usize>>,
    total_scalars: u64,
    rounds: u64,
}

impl Transport {
    fn new(n: usize) -> Self {
        Self { last_round: vec![vec![0; n]; n], total_scalars: 0, rounds: 0 }
    }

    fn begin_round(&mut self) {
        for row in &mut self.last_round {
            row.iter_mut().for_each(|c| *c = 0);
        }
        self.rounds += 1;
    }

    fn deliver<'a>(&mut self, from: usize, to: usize, payload: &'a [f64]) -> &'a [f64] {
        self.last_round[from][to] += payload.len();
        self.total_scalars += payload.len() as u64;
        payload
    }

    /// Scalars agent `from` sent to agent `to` in the most recent round.
    pub fn sent_last_round(&self, from: usize, to: usize) -> usize {
        self.last_round[from][to]
    }

    pub fn total_scalars(&self) -> u64 {
        self.total_scalars
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }
}

/// Everything that happened in one iteration `k → k+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Nominal input `u_k`.
    pub u: Vec<f64>,
    /// Applied input `u_k + δ v_k`.
    pub probe: Vec<f64>,
    pub exploration: Vec<f64>,
    /// `φ_k`, local objective values at the probe.
    pub local_values: Vec<f64>,
    /// Global objective realized at the probe, `mean(φ_k)`.
    pub objective: f64,
    /// Queue heads `Z_k(1)` used by the update.
    pub heads: Vec<f64>,
    pub delta_k: Vec<f64>,
    /// `‖e_{k−τ}‖` when defined (`k ≥ τ+1`).
    pub e_norm: Option<f64>,
    /// How far the probe left the constraint set (projected mode).
    pub probe_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterationRecord>,
    pub final_u: Vec<f64>,
}

impl Trajectory {
    /// `u_0, …, u_T`.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.records.iter().map(|r| r.u.clone()).collect();
        out.push(self.final_u.clone());
        out
    }
}

/// Recent `φ` and `v` vectors kept for the consensus-error diagnostic.
/// Uses global knowledge; never consulted by the update.
#[derive(Debug, Clone)]
struct Diagnostics {
    deviation: DMatrix<f64>,
    phi: VecDeque<Vec<f64>>,
    v: VecDeque<Vec<f64>>,
    capacity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDecomposition {
    /// `(1/δ) (11ᵀ/N)(φ_{k−τ} − φ_{k−τ−1}) ⊙ v_{k−τ}`
    pub centralized_estimate: Vec<f64>,
    /// `(1/δ) (W^τ − 11ᵀ/N)(φ_{k−τ} − φ_{k−τ−1}) ⊙ v_{k−τ}`
    pub consensus_error: Vec<f64>,
}

enum Engine {
    /// Queue protocol; `exact` swaps consensus for exact averaging.
    Queue { agents: Vec<AgentState>, weights: WeightMatrix, exact: bool, transport: Transport },
    /// Centralized residual estimator without delay.
    Immediate { u: Vec<f64>, prev_mean: f64 },
}

/// All agents of one synchronous run together with the plant they share.
pub struct SwarmState<P> {
    config: ControllerConfig,
    plant: P,
    objectives: Vec<SharedObjective>,
    streams: SeedStreams,
    engine: Engine,
    k: usize,
    probes: u64,
    diagnostics: Diagnostics,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

impl<P: SteadyStateMap> SwarmState<P> {
    /// Validates the configuration and performs the initialization probes:
    /// `τ` probes at `u0 + δ v^init_l` for the queue protocol, one for the
    /// undelayed centralized baseline.
    pub fn initialize(
        config: ControllerConfig,
        u0: &[f64],
        mut plant: P,
        objectives: Vec<SharedObjective>,
        weights: &WeightMatrix,
    ) -> Result<Self> {
        let n = plant.dim();
        config.validate(n)?;
        for len in [u0.len(), objectives.len(), weights.n()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        let mut u0 = u0.to_vec();
        if let (Mode::Projected, Some(c)) = (config.mode, &config.constraint) {
            if !c.contains(&u0) {
                log::warn!("initial input outside the constraint set; projecting it");
                c.project_in_place(&mut u0);
            }
        }

        let mut streams = SeedStreams::new(config.seed, n);
        let tau = config.tau;
        let mut probes = 0;
        let mut evaluate = |plant: &mut P, probe: &[f64]| -> Result<Vec<f64>> {
            let y = plant.measure(probe)?;
            probes += 1;
            Ok((0..n).map(|i| objectives[i].evaluate(probe[i], y[i])).collect())
        };

        let immediate =
            config.baseline == Baseline::Centralized && config.centralized_delay == CentralizedDelay::None;
        let (engine, delay) = if immediate {
            let v = streams.init_vector(n);
            let probe: Vec<f64> = (0..n).map(|i| u0[i] + config.delta * v[i]).collect();
            let phi = evaluate(&mut plant, &probe)?;
            (Engine::Immediate { u: u0.clone(), prev_mean: mean(&phi) }, 0)
        } else {
            let mut agents: Vec<AgentState> = (0..n)
                .map(|i| AgentState {
                    id: i,
                    u: u0[i],
                    queue: VecDeque::with_capacity(tau + 1),
                    exploration: VecDeque::with_capacity(tau + 1),
                    prev_head: 0.0,
                })
                .collect();
            for _ in 0..tau {
                let v = streams.init_vector(n);
                let probe: Vec<f64> = (0..n).map(|i| u0[i] + config.delta * v[i]).collect();
                let phi = evaluate(&mut plant, &probe)?;
                for (i, a) in agents.iter_mut().enumerate() {
                    a.queue.push_back(phi[i]);
                    a.exploration.push_back(v[i]);
                }
            }
            let exact = config.baseline == Baseline::Centralized;
            (Engine::Queue { agents, weights: weights.clone(), exact, transport: Transport::new(n) }, tau)
        };

        let deviation = match &engine {
            Engine::Queue { exact: false, .. } => {
                weights.power(tau) - DMatrix::from_element(n, n, 1.0 / n as f64)
            }
            _ => DMatrix::zeros(n, n),
        };
        Ok(Self {
            config,
            plant,
            objectives,
            streams,
            engine,
            k: 0,
            probes,
            diagnostics: Diagnostics {
                deviation,
                phi: VecDeque::with_capacity(delay + 2),
                v: VecDeque::with_capacity(delay + 2),
                capacity: delay + 2,
            },
        })
    }

    pub fn n(&self) -> usize {
        self.objectives.len()
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    /// Plant probes performed so far, initialization included.
    pub fn probes(&self) -> u64 {
        self.probes
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn into_plant(self) -> P {
        self.plant
    }

    pub fn agents(&self) -> Option<&[AgentState]> {
        match &self.engine {
            Engine::Queue { agents, .. } => Some(agents),
            Engine::Immediate { .. } => None,
        }
    }

    pub fn transport(&self) -> Option<&Transport> {
        match &self.engine {
            Engine::Queue { transport, .. } => Some(transport),
            Engine::Immediate { .. } => None,
        }
    }

    pub fn inputs(&self) -> Vec<f64> {
        match &self.engine {
            Engine::Queue { agents, .. } => agents.iter().map(|a| a.u).collect(),
            Engine::Immediate { u, .. } => u.clone(),
        }
    }

    /// One synchronous iteration. Dispatches to [`centralized_step`](Self::centralized_step)
    /// for the undelayed centralized baseline.
    pub fn step(&mut self) -> Result<IterationRecord> {
        if matches!(self.engine, Engine::Immediate { .. }) {
            return self.centralized_step();
        }
        let n = self.n();
        let k = self.k;
        let (eta, delta) = (self.config.eta, self.config.delta);
        let tau = self.config.tau;
        let constraint = match self.config.mode {
            Mode::Projected => self.config.constraint.clone(),
            Mode::Unconstrained => None,
        };

        let Engine::Queue { agents, weights, exact, transport } = &mut self.engine else {
            unreachable!()
        };

        // (1) local exploration draws, (2) one collective probe
        let u: Vec<f64> = agents.iter().map(|a| a.u).collect();
        let v: Vec<f64> = self.streams.agents.iter_mut().map(|r| r.sample(StandardNormal)).collect();
        let probe: Vec<f64> = (0..n).map(|i| u[i] + delta * v[i]).collect();
        let y = self.plant.measure(&probe)?;
        self.probes += 1;
        let phi: Vec<f64> = (0..n).map(|i| self.objectives[i].evaluate(probe[i], y[i])).collect();

        // (3) consensus on the pre-append queues, double-buffered
        let snapshot: Vec<Vec<f64>> = agents.iter().map(|a| a.queue.iter().copied().collect()).collect();
        transport.begin_round();
        if *exact {
            for l in 0..tau {
                let avg = snapshot.iter().map(|q| q[l]).sum::<f64>() / n as f64;
                for a in agents.iter_mut() {
                    a.queue[l] = avg;
                }
            }
        } else {
            for i in 0..n {
                let own = weights.get(i, i);
                let mut mixed: Vec<f64> = snapshot[i].iter().map(|x| own * x).collect();
                for &j in weights.neighbors(i) {
                    let msg = transport.deliver(j, i, &snapshot[j]);
                    let w = weights.get(i, j);
                    for (m, x) in mixed.iter_mut().zip(msg) {
                        *m += w * x;
                    }
                }
                agents[i].queue = mixed.into();
            }
        }

        // (4) append, (5) Δ_k, (6) update, (7) shift
        let mut heads = Vec::with_capacity(n);
        let mut delta_k = Vec::with_capacity(n);
        for (i, a) in agents.iter_mut().enumerate() {
            a.queue.push_back(phi[i]);
            a.exploration.push_back(v[i]);
            debug_assert_eq!(a.queue.len(), tau + 1);
            debug_assert_eq!(a.exploration.len(), tau + 1);
            let head = a.queue[0];
            let scalar = a.exploration.pop_front().expect("exploration history holds tau + 1 scalars");
            let d = if k == 0 { head * scalar } else { (head - a.prev_head) * scalar };
            let mut next = a.u - eta / delta * d;
            if let Some(c) = &constraint {
                next = c.clamp(i, next);
            }
            a.u = next;
            a.prev_head = head;
            a.queue.pop_front();
            heads.push(head);
            delta_k.push(d);
        }

        let probe_violation = constraint.as_ref().map_or(0.0, |c| c.violation(&probe));
        let objective = mean(&phi);
        self.push_diagnostics(phi.clone(), v.clone());
        let e_norm = self.e_norm();
        self.k += 1;
        Ok(IterationRecord {
            k,
            u,
            probe,
            exploration: v,
            local_values: phi,
            objective,
            heads,
            delta_k,
            e_norm,
            probe_violation,
        })
    }

    /// Centralized iteration with exact averaging and no delay:
    /// `u_{k+1} = u_k − (η/δ)(mean φ_k − mean φ_{k−1}) v_k`.
    ///
    /// Uses the same per-agent exploration streams as the distributed run.
    /// With a `τ` delay configured the centralized baseline runs through the
    /// queue protocol and this forwards to [`step`](Self::step).
    pub fn centralized_step(&mut self) -> Result<IterationRecord> {
        if matches!(self.engine, Engine::Queue { .. }) {
            return self.step();
        }
        let n = self.n();
        let k = self.k;
        let (eta, delta) = (self.config.eta, self.config.delta);
        let constraint = match self.config.mode {
            Mode::Projected => self.config.constraint.clone(),
            Mode::Unconstrained => None,
        };
        let Engine::Immediate { u, prev_mean } = &mut self.engine else { unreachable!() };

        let u_k = u.clone();
        let v: Vec<f64> = self.streams.agents.iter_mut().map(|r| r.sample(StandardNormal)).collect();
        let probe: Vec<f64> = (0..n).map(|i| u_k[i] + delta * v[i]).collect();
        let y = self.plant.measure(&probe)?;
        self.probes += 1;
        let phi: Vec<f64> = (0..n).map(|i| self.objectives[i].evaluate(probe[i], y[i])).collect();
        let avg = mean(&phi);
        let diff = avg - *prev_mean;
        let delta_k: Vec<f64> = v.iter().map(|vi| diff * vi).collect();
        for i in 0..n {
            let mut next = u[i] - eta / delta * delta_k[i];
            if let Some(c) = &constraint {
                next = c.clamp(i, next);
            }
            u[i] = next;
        }
        *prev_mean = avg;

        let probe_violation = constraint.as_ref().map_or(0.0, |c| c.violation(&probe));
        self.push_diagnostics(phi.clone(), v.clone());
        let e_norm = self.e_norm();
        self.k += 1;
        Ok(IterationRecord {
            k,
            u: u_k,
            probe,
            exploration: v,
            local_values: phi,
            objective: avg,
            heads: vec![avg; n],
            delta_k,
            e_norm,
            probe_violation,
        })
    }

    fn push_diagnostics(&mut self, phi: Vec<f64>, v: Vec<f64>) {
        let d = &mut self.diagnostics;
        if d.phi.len() == d.capacity {
            d.phi.pop_front();
            d.v.pop_front();
        }
        d.phi.push_back(phi);
        d.v.push_back(v);
    }

    fn e_norm(&self) -> Option<f64> {
        self.consensus_error_diagnostic().map(|d| d.consensus_error.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    /// Splits the most recent update into the centralized gradient estimate
    /// and the consensus error `e_{k−τ}`, reconstructed from recorded `φ`
    /// and `v`. Defined once `k ≥ τ+1` (`k ≥ 1` without delay).
    pub fn consensus_error_diagnostic(&self) -> Option<UpdateDecomposition> {
        let d = &self.diagnostics;
        if d.phi.len() < d.capacity {
            return None;
        }
        let n = self.n();
        let delta = self.config.delta;
        let diff = DVector::from_iterator(n, d.phi[1].iter().zip(&d.phi[0]).map(|(a, b)| a - b));
        let v = &d.v[1];
        let avg = diff.sum() / n as f64;
        let dev = &d.deviation * &diff;
        Some(UpdateDecomposition {
            centralized_estimate: v.iter().map(|vi| avg * vi / delta).collect(),
            consensus_error: (0..n).map(|i| dev[i] * v[i] / delta).collect(),
        })
    }
}

/// One-point residual feedback estimate `(φ_now − φ_prev)/δ · v`, with `v`
/// the exploration vector that produced `φ_now`.
pub fn residual_feedback_estimate(current: f64, previous: f64, v: &[f64], delta: f64) -> Vec<f64> {
    let s = (current - previous) / delta;
    v.iter().map(|vi| s * vi).collect()
}

/// Runs `horizon` iterations, handing every record to `observer`.
/// Returns the final input `u_T`.
pub fn run_observed<P, F>(
    config: ControllerConfig,
    plant: P,
    objectives: Vec<SharedObjective>,
    weights: &WeightMatrix,
    u0: &[f64],
    mut observer: F,
) -> Result<Vec<f64>>
where
    P: SteadyStateMap,
    F: FnMut(&IterationRecord),
{
    let horizon = config.horizon;
    let mut swarm = SwarmState::initialize(config, u0, plant, objectives, weights)?;
    for _ in 0..horizon {
        let rec = swarm.step()?;
        observer(&rec);
    }
    Ok(swarm.inputs())
}

pub fn run<P: SteadyStateMap>(
    config: ControllerConfig,
    plant: P,
    objectives: Vec<SharedObjective>,
    weights: &WeightMatrix,
    u0: &[f64],
) -> Result<Trajectory> {
    let mut records = Vec::with_capacity(config.horizon);
    let final_u = run_observed(config, plant, objectives, weights, u0, |r| records.push(r.clone()))?;
    Ok(Trajectory { records, final_u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{metropolis_weights, standard_graph, GraphKind};
    use crate::objective::tracking_objectives;
    use crate::plant::AffinePlant;

    fn path_setup(n: usize, tau: usize) -> (WeightMatrix, AffinePlant, Vec<SharedObjective>) {
        let g = standard_graph(GraphKind::Path, n).unwrap();
        let w = metropolis_weights(&g, tau).unwrap();
        let refs: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 - 0.2).collect();
        (w, AffinePlant::identity(n), tracking_objectives(&refs, 1.0))
    }

    fn phi_of(objs: &[SharedObjective], plant: &AffinePlant, probe: &[f64]) -> Vec<f64> {
        let y = plant.eval(&DVector::from_column_slice(probe));
        (0..probe.len()).map(|i| objs[i].evaluate(probe[i], y[i])).collect()
    }

    #[test]
    fn zero_horizon_keeps_only_u0() {
        let (w, plant, objs) = path_setup(3, 2);
        let tr = run(ControllerConfig::new(0.01, 0.1, 2, 0, 1), plant, objs, &w, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(tr.inputs(), vec![vec![0.1, 0.2, 0.3]]);
    }

    #[test]
    fn initial_queue_holds_local_evaluations() {
        let w = WeightMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0), 1).unwrap();
        let objs: Vec<SharedObjective> =
            vec![std::sync::Arc::new(crate::objective::FnObjective(|u: f64, _y: f64| u * u))];
        let cfg = ControllerConfig::new(0.1, 1.0, 1, 0, 12);
        let swarm = SwarmState::initialize(cfg, &[0.0], AffinePlant::identity(1), objs, &w).unwrap();
        let v = SeedStreams::new(12, 1).init_vector(1)[0];
        let a = &swarm.agents().unwrap()[0];
        assert_eq!(a.queue.iter().copied().collect::<Vec<_>>(), vec![v * v]);
        assert_eq!(swarm.probes(), 1);
    }

    #[test]
    fn centralized_step_uses_the_residual_estimate() {
        let (w, plant, objs) = path_setup(3, 1);
        let delta = 0.1;
        let tr = run(ControllerConfig::new(0.01, delta, 1, 5, 3).centralized(), plant, objs, &w, &[0.0; 3]).unwrap();
        for k in 1..5 {
            let r = &tr.records;
            let g = residual_feedback_estimate(r[k].objective, r[k - 1].objective, &r[k].exploration, delta);
            for i in 0..3 {
                assert!((r[k].delta_k[i] / delta - g[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_agent_reduces_to_delayed_residual_rule() {
        let w = WeightMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0), 1).unwrap();
        let objs = tracking_objectives(&[0.4], 1.0);
        let (eta, delta) = (0.01, 0.1);
        let cfg = ControllerConfig::new(eta, delta, 1, 40, 9);
        let tr = run(cfg, AffinePlant::identity(1), objs, &w, &[1.0]).unwrap();
        let us = tr.inputs();
        for k in 2..40 {
            let r = &tr.records;
            let expect = us[k][0]
                - eta / delta * (r[k - 1].local_values[0] - r[k - 2].local_values[0]) * r[k - 1].exploration[0];
            assert!((us[k + 1][0] - expect).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn two_agent_heads_are_one_round_of_averaging() {
        let g = standard_graph(GraphKind::Complete, 2).unwrap();
        let w = metropolis_weights(&g, 1).unwrap();
        let objs = tracking_objectives(&[0.1, -0.3], 1.0);
        let cfg = ControllerConfig::new(0.01, 0.1, 1, 30, 4);
        let tr = run(cfg, AffinePlant::identity(2), objs, &w, &[0.5, 0.5]).unwrap();
        for k in 2..30 {
            let prev = DVector::from_column_slice(&tr.records[k - 1].local_values);
            let expect = w.entries() * prev;
            for i in 0..2 {
                assert!((tr.records[k].heads[i] - expect[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn heads_match_matrix_powers_including_warm_up() {
        let n = 5;
        for tau in [1, 3, 6] {
            let (w, plant, objs) = path_setup(n, tau);
            let delta = 0.2;
            let u0 = vec![0.3; n];
            let cfg = ControllerConfig::new(0.005, delta, tau, 3 * tau + 5, 77);
            let tr = run(cfg, plant.clone(), objs.clone(), &w, &u0).unwrap();

            let mut streams = SeedStreams::new(77, n);
            let phi_init: Vec<Vec<f64>> = (0..tau)
                .map(|_| {
                    let v = streams.init_vector(n);
                    let p: Vec<f64> = (0..n).map(|i| u0[i] + delta * v[i]).collect();
                    phi_of(&objs, &plant, &p)
                })
                .collect();
            for (k, rec) in tr.records.iter().enumerate() {
                let expect = if k < tau {
                    w.power(k + 1) * DVector::from_column_slice(&phi_init[k])
                } else {
                    w.power(tau) * DVector::from_column_slice(&tr.records[k - tau].local_values)
                };
                for i in 0..n {
                    assert!((rec.heads[i] - expect[i]).abs() < 1e-12, "tau={tau} k={k} i={i}");
                }
            }
        }
    }

    #[test]
    fn update_splits_into_centralized_estimate_and_consensus_error() {
        let n = 6;
        let tau = 3;
        let (w, plant, objs) = path_setup(n, tau);
        let (eta, delta) = (0.01, 0.1);
        let cfg = ControllerConfig::new(eta, delta, tau, 40, 5);
        let mut swarm = SwarmState::initialize(cfg, &[0.2; 6], plant, objs, &w).unwrap();
        for k in 0..40 {
            let before = swarm.inputs();
            let rec = swarm.step().unwrap();
            let after = swarm.inputs();
            let diag = swarm.consensus_error_diagnostic();
            if k < tau + 1 {
                assert!(diag.is_none() && rec.e_norm.is_none());
                continue;
            }
            let d = diag.unwrap();
            for i in 0..n {
                let step = after[i] - before[i];
                let split = -eta * (d.centralized_estimate[i] + d.consensus_error[i]);
                assert!((step - split).abs() < 1e-12 * (1.0 + step.abs()), "k={k}");
            }
        }
    }

    #[test]
    fn every_agent_sends_tau_scalars_to_each_neighbor() {
        let n = 7;
        let tau = 4;
        let g = standard_graph(GraphKind::Star, n).unwrap();
        let w = metropolis_weights(&g, tau).unwrap();
        let cfg = ControllerConfig::new(0.01, 0.1, tau, 10, 1);
        let objs = tracking_objectives(&[0.0; 7], 1.0);
        let mut swarm = SwarmState::initialize(cfg, &[0.0; 7], AffinePlant::identity(n), objs, &w).unwrap();
        for round in 1..=10u64 {
            swarm.step().unwrap();
            let t = swarm.transport().unwrap();
            for i in 0..n {
                for j in 0..n {
                    let expect = if g.neighbors(i).contains(&j) { tau } else { 0 };
                    assert_eq!(t.sent_last_round(i, j), expect);
                }
            }
            assert_eq!(t.rounds(), round);
            assert_eq!(t.total_scalars(), round * (2 * g.edges().len() * tau) as u64);
        }
    }

    #[test]
    fn probe_count_is_tau_plus_iterations() {
        let (w, plant, objs) = path_setup(4, 5);
        let cfg = ControllerConfig::new(0.01, 0.1, 5, 0, 1);
        let mut swarm = SwarmState::initialize(cfg, &[0.0; 4], plant.clone(), objs.clone(), &w).unwrap();
        assert_eq!(swarm.probes(), 5);
        for _ in 0..12 {
            swarm.step().unwrap();
        }
        assert_eq!(swarm.probes(), 17);

        let cfg = ControllerConfig::new(0.01, 0.1, 5, 0, 1).centralized();
        let mut swarm = SwarmState::initialize(cfg, &[0.0; 4], plant, objs, &w).unwrap();
        assert_eq!(swarm.probes(), 1);
        swarm.step().unwrap();
        assert_eq!(swarm.probes(), 2);
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        let (w, plant, objs) = path_setup(4, 2);
        let go = |seed| run(ControllerConfig::new(0.01, 0.1, 2, 50, seed), plant.clone(), objs.clone(), &w, &[0.1; 4]).unwrap();
        assert_eq!(go(3), go(3));
        assert_ne!(go(3).final_u, go(4).final_u);
    }

    #[test]
    fn centralized_arm_shares_exploration_streams() {
        let (w, plant, objs) = path_setup(4, 3);
        let dist = run(ControllerConfig::new(0.01, 0.1, 3, 20, 8), plant.clone(), objs.clone(), &w, &[0.1; 4]).unwrap();
        let cen = run(ControllerConfig::new(0.01, 0.1, 3, 20, 8).centralized(), plant, objs, &w, &[0.1; 4]).unwrap();
        for (a, b) in dist.records.iter().zip(&cen.records) {
            assert_eq!(a.exploration, b.exploration);
        }
    }

    #[test]
    fn centralized_baseline_follows_residual_rule() {
        let (w, plant, objs) = path_setup(4, 3);
        let (eta, delta) = (0.02, 0.1);
        let tr = run(ControllerConfig::new(eta, delta, 3, 25, 2).centralized(), plant, objs, &w, &[0.1; 4]).unwrap();
        let us = tr.inputs();
        for k in 1..25 {
            let r = &tr.records;
            for i in 0..4 {
                let expect = us[k][i] - eta / delta * (r[k].objective - r[k - 1].objective) * r[k].exploration[i];
                assert!((us[k + 1][i] - expect).abs() < 1e-13);
            }
            assert_eq!(r[k].e_norm, Some(0.0));
        }
    }

    #[test]
    fn delayed_centralized_heads_are_exact_means() {
        let tau = 4;
        let (w, plant, objs) = path_setup(5, tau);
        let mut cfg = ControllerConfig::new(0.01, 0.1, tau, 20, 6).centralized();
        cfg.centralized_delay = CentralizedDelay::Tau;
        let tr = run(cfg, plant, objs, &w, &[0.0; 5]).unwrap();
        for k in tau..20 {
            let m = tr.records[k - tau].objective;
            for h in &tr.records[k].heads {
                assert!((h - m).abs() < 1e-13);
            }
            assert_eq!(tr.records[k].e_norm.unwrap_or(0.0), 0.0);
        }
    }

    #[test]
    fn projected_iterates_stay_feasible() {
        let (w, plant, objs) = path_setup(4, 2);
        let c = BoxConstraint::uniform(4, -0.05, 0.05).unwrap();
        let cfg = ControllerConfig::new(0.5, 0.1, 2, 200, 3).projected(c.clone());
        let tr = run(cfg, plant, objs, &w, &[1.0; 4]).unwrap();
        for u in tr.inputs() {
            assert!(c.contains(&u));
        }
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let (w, plant, objs) = path_setup(3, 2);
        let bad = [
            ControllerConfig::new(0.0, 0.1, 2, 1, 0),
            ControllerConfig::new(0.1, -1.0, 2, 1, 0),
            ControllerConfig::new(0.1, 0.1, 0, 1, 0),
            ControllerConfig { mode: Mode::Projected, ..ControllerConfig::new(0.1, 0.1, 2, 1, 0) },
        ];
        for cfg in bad {
            assert!(SwarmState::initialize(cfg, &[0.0; 3], plant.clone(), objs.clone(), &w).is_err());
        }
        let cfg = ControllerConfig::new(0.1, 0.1, 2, 1, 0);
        assert!(matches!(
            SwarmState::initialize(cfg, &[0.0; 2], plant, objs, &w),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn step_size_threshold() {
        let cfg = ControllerConfig::new(0.01, 0.2, 1, 1, 0);
        let chk = cfg.step_size_check(4, 2.0, 1.0);
        assert!((chk.threshold - 0.2 / 8.0).abs() < 1e-15);
        assert!(chk.satisfied);
        assert!(!ControllerConfig::new(0.03, 0.2, 1, 1, 0).step_size_check(4, 2.0, 1.0).satisfied);
    }
}
