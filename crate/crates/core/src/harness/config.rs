//! Run configuration. Documented field by field in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{Baseline, CentralizedDelay, Mode};
use crate::error::{Error, Result};
use crate::netgraph::GraphKind;
use crate::objective::Normalization;
use crate::plant::DcGridParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "source")]
pub enum GraphSpec {
    Standard { kind: GraphKind, nodes: usize },
    Edges { nodes: usize, edges: Vec<(usize, usize)> },
    /// Edge-list file; relative paths resolve against the config file.
    File { path: PathBuf },
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Standard { kind: GraphKind::GridTree, nodes: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "type")]
pub enum PlantSpec {
    /// DC grid on the communication tree.
    DcGrid(DcGridParams),
    /// `y = H u + b`; the offset defaults to zero.
    Affine {
        sensitivity: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec::DcGrid(DcGridParams::default())
    }
}

/// Upper bound on one input at a fraction of its unconstrained optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveBound {
    pub node: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSpec {
    /// Positive factor `c` on every local objective.
    pub scale: f64,
    pub normalization: Normalization,
    /// Tracking reference per node; defaults to the plant's zero-input
    /// nominal output (`V_ref` for the grid, `b` for an affine plant).
    pub reference: Option<Vec<f64>>,
    pub constraint: Option<BoxSpec>,
    pub active_bound: Option<ActiveBound>,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self { scale: 1.0, normalization: Normalization::Average, reference: None, constraint: None, active_bound: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSpec {
    pub eta: f64,
    pub delta: f64,
    pub tau: usize,
    pub horizon: usize,
    /// `projected` needs a constraint in the objective block.
    pub mode: Option<Mode>,
    pub baseline: Baseline,
    pub centralized_delay: CentralizedDelay,
    /// Initial input; zeros when absent.
    pub u0: Option<Vec<f64>>,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            eta: 0.001,
            delta: 0.002,
            tau: 5,
            horizon: 50_000,
            mode: None,
            baseline: Baseline::Distributed,
            centralized_delay: CentralizedDelay::None,
            u0: None,
        }
    }
}

/// One experimental arm; unset fields inherit from the controller block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    #[serde(default)]
    pub tau: Option<usize>,
    #[serde(default)]
    pub baseline: Option<Baseline>,
    #[serde(default)]
    pub centralized_delay: Option<CentralizedDelay>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl ArmSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.into(), tau: None, baseline: None, centralized_delay: None, eta: None, delta: None }
    }
}

pub fn default_arms() -> Vec<ArmSpec> {
    vec![
        ArmSpec { tau: Some(5), ..ArmSpec::named("tau5") },
        ArmSpec { tau: Some(50), ..ArmSpec::named("tau50") },
        ArmSpec { baseline: Some(Baseline::Centralized), ..ArmSpec::named("centralized") },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub replicas: usize,
    pub base_seed: u64,
    /// Explicit seeds; overrides `replicas` and `base_seed`.
    pub seeds: Option<Vec<u64>>,
    pub arms: Vec<ArmSpec>,
    pub output_dir: PathBuf,
    /// Keep every `trace_stride`-th row of per-replica traces (the last row
    /// is always kept).
    pub trace_stride: usize,
    /// Same for the mean trace.
    pub mean_stride: usize,
    pub write_replica_traces: bool,
    /// Fraction of the horizon averaged for the plateau error.
    pub plateau_fraction: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            replicas: 20,
            base_seed: 1,
            seeds: None,
            arms: default_arms(),
            output_dir: PathBuf::from("out"),
            trace_stride: 100,
            mean_stride: 1,
            write_replica_traces: true,
            plateau_fraction: 0.1,
        }
    }
}

impl ExperimentSpec {
    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.replicas as u64).map(|r| self.base_seed + r).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSpec {
    /// Target accuracy for the parameter selection; skipped when absent.
    pub epsilon: Option<f64>,
    pub e0_samples: usize,
    pub e0_seed: u64,
    /// Radius of the ball around `u0` used for `L0` when unconstrained;
    /// defaults to `2‖u* − u0‖`.
    pub region_radius: Option<f64>,
    /// Rescale so the strong convexity modulus exceeds one.
    pub auto_scale: bool,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        Self { epsilon: None, e0_samples: 20_000, e0_seed: 0, region_radius: None, auto_scale: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub graph: GraphSpec,
    pub plant: PlantSpec,
    pub objective: ObjectiveSpec,
    pub controller: ControllerSpec,
    pub experiment: ExperimentSpec,
    pub bounds: BoundsSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative graph file path is resolved against
    /// the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let GraphSpec::File { path: p } = &mut cfg.graph {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.controller;
        let bad = |m: String| Err(Error::Config(m));
        if !(c.eta > 0.0) || !(c.delta > 0.0) {
            return bad(format!("eta and delta must be positive (eta = {}, delta = {})", c.eta, c.delta));
        }
        if c.tau == 0 {
            return bad("tau must be >= 1".into());
        }
        if !(self.objective.scale > 0.0) {
            return bad("objective scale must be positive".into());
        }
        if let Some(ab) = &self.objective.active_bound {
            if !(ab.fraction > 0.0) {
                return bad("active_bound.fraction must be positive".into());
            }
            if self.objective.constraint.is_some() {
                return bad("give either constraint or active_bound, not both".into());
            }
        }
        let e = &self.experiment;
        if e.seeds.as_ref().map_or(e.replicas == 0, |s| s.is_empty()) {
            return bad("experiment needs at least one replica".into());
        }
        if e.trace_stride == 0 || e.mean_stride == 0 {
            return bad("strides must be >= 1".into());
        }
        if !(e.plateau_fraction > 0.0 && e.plateau_fraction <= 1.0) {
            return bad("plateau_fraction must lie in (0, 1]".into());
        }
        let mut names: Vec<&str> = e.arms.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("arm names must be unique".into());
        }
        if e.arms.iter().any(|a| a.tau == Some(0)) {
            return bad("arm tau must be >= 1".into());
        }
        Ok(())
    }

    pub fn is_constrained(&self) -> bool {
        self.objective.constraint.is_some() || self.objective.active_bound.is_some()
    }

    pub fn mode(&self) -> Mode {
        self.controller.mode.unwrap_or(if self.is_constrained() { Mode::Projected } else { Mode::Unconstrained })
    }

    /// SHA-256 of the canonical JSON serialization.
    /// Content hash of the experiment definition. The output directory is
    /// left out so that the same experiment written elsewhere hashes equal.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.experiment.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
