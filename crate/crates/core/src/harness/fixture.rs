//! Turns a [`RunConfig`] into graph, plant, objectives and ground truth.

use nalgebra::{DMatrix, DVector};

use super::config::{GraphSpec, PlantSpec, RunConfig};
use super::optimum::{solve_optimum, Optimum};
use crate::error::{Error, Result};
use crate::netgraph::{metropolis_weights, read_edge_list, standard_graph, CommGraph, WeightMatrix};
use crate::objective::{BoxConstraint, QuadraticModel, SharedObjective};
use crate::plant::{AffinePlant, DcGridPlant, GridProvenance, SteadyStateMap};

/// The plant a fixture drives.
#[derive(Debug, Clone)]
pub enum PlantInstance {
    Grid(DcGridPlant),
    Affine(AffinePlant),
}

impl PlantInstance {
    pub fn affine_oracle(&self) -> AffinePlant {
        match self {
            PlantInstance::Grid(g) => g.affine_oracle(),
            PlantInstance::Affine(a) => a.clone(),
        }
    }

    pub fn provenance(&self) -> Option<&GridProvenance> {
        match self {
            PlantInstance::Grid(g) => Some(g.provenance()),
            PlantInstance::Affine(_) => None,
        }
    }
}

impl SteadyStateMap for PlantInstance {
    fn dim(&self) -> usize {
        match self {
            PlantInstance::Grid(g) => g.dim(),
            PlantInstance::Affine(a) => a.dim(),
        }
    }

    fn measure(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        match self {
            PlantInstance::Grid(g) => g.measure(u),
            PlantInstance::Affine(a) => a.measure(u),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub graph: CommGraph,
    pub plant: PlantInstance,
    /// Oracle model of the reduced objective, with the effective local scale.
    pub model: QuadraticModel,
    pub constraint: Option<BoxConstraint>,
    pub u0: Vec<f64>,
    pub optimum: Optimum,
    pub unconstrained_optimum: Vec<f64>,
}

impl Fixture {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let graph = match &cfg.graph {
            GraphSpec::Standard { kind, nodes } => standard_graph(*kind, *nodes)?,
            GraphSpec::Edges { nodes, edges } => CommGraph::new(*nodes, edges)?,
            GraphSpec::File { path } => read_edge_list(path)?,
        };
        let n = graph.node_count();
        let plant = match &cfg.plant {
            PlantSpec::DcGrid(params) => PlantInstance::Grid(DcGridPlant::build(&graph, params)?),
            PlantSpec::Affine { sensitivity, offset } => {
                if sensitivity.len() != n || sensitivity.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("affine sensitivity must be {n}x{n}")));
                }
                let h = DMatrix::from_fn(n, n, |i, j| sensitivity[i][j]);
                let b = match offset {
                    Some(o) => DVector::from_column_slice(o),
                    None => DVector::zeros(n),
                };
                PlantInstance::Affine(AffinePlant::new(h, b)?)
            }
        };
        let oracle = plant.affine_oracle();
        let reference = match &cfg.objective.reference {
            Some(r) if r.len() == n => DVector::from_column_slice(r),
            Some(r) => return Err(Error::Config(format!("reference needs {n} values, got {}", r.len()))),
            None => match &plant {
                PlantInstance::Grid(g) => g.sensitivity_oracle().1,
                PlantInstance::Affine(a) => a.offset().clone(),
            },
        };
        let local_scale = cfg.objective.scale * cfg.objective.normalization.local_factor(n);
        let model = QuadraticModel::new(&oracle, reference, local_scale)?;
        let unconstrained_optimum = model.unconstrained_minimizer()?.as_slice().to_vec();

        let constraint = if let Some(b) = &cfg.objective.constraint {
            if b.lower.len() != n || b.upper.len() != n {
                return Err(Error::Config(format!("constraint needs {n} lower and upper values")));
            }
            let lo = b.lower.iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect();
            let hi = b.upper.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
            Some(BoxConstraint::new(lo, hi).map_err(|e| Error::Config(e.to_string()))?)
        } else if let Some(ab) = &cfg.objective.active_bound {
            if ab.node >= n {
                return Err(Error::Config(format!("active_bound.node {} out of range for {n} nodes", ab.node)));
            }
            let mut hi = vec![f64::INFINITY; n];
            hi[ab.node] = ab.fraction * unconstrained_optimum[ab.node];
            Some(BoxConstraint::new(vec![f64::NEG_INFINITY; n], hi)?)
        } else {
            None
        };

        let u0 = match &cfg.controller.u0 {
            Some(u) if u.len() == n => u.clone(),
            Some(u) => return Err(Error::Config(format!("u0 needs {n} values, got {}", u.len()))),
            None => vec![0.0; n],
        };
        let optimum = solve_optimum(&model, constraint.as_ref())?;
        Ok(Self { graph, plant, model, constraint, u0, optimum, unconstrained_optimum })
    }

    pub fn n(&self) -> usize {
        self.graph.node_count()
    }

    pub fn weights(&self, tau: usize) -> Result<WeightMatrix> {
        metropolis_weights(&self.graph, tau)
    }

    pub fn objectives(&self) -> Vec<SharedObjective> {
        self.model.local_objectives()
    }
}
