#![allow(dead_code)]

use ofonet::controller::Mode;
use ofonet::harness::config::{ArmSpec, BoxSpec, GraphSpec, PlantSpec};
use ofonet::harness::RunConfig;
use ofonet::netgraph::GraphKind;

/// Three agents on a path, affine plant, objective scaled so that `m > 1`.
pub fn path3_config(constrained: bool) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.graph = GraphSpec::Standard { kind: GraphKind::Path, nodes: 3 };
    cfg.plant = PlantSpec::Affine {
        sensitivity: vec![vec![1.0, 0.2, 0.0], vec![0.2, 1.0, 0.2], vec![0.0, 0.2, 1.0]],
        offset: None,
    };
    cfg.objective.scale = 3.0;
    cfg.objective.reference = Some(vec![0.5, -0.3, 0.2]);
    if constrained {
        cfg.objective.constraint = Some(BoxSpec {
            lower: vec![Some(-0.1), Some(-0.1), Some(-0.1)],
            upper: vec![Some(0.15), Some(0.1), Some(0.1)],
        });
        cfg.controller.mode = Some(Mode::Projected);
    }
    cfg.controller.eta = 1e-4;
    cfg.controller.delta = 0.01;
    cfg.controller.tau = 4;
    cfg.controller.horizon = 20_000;
    cfg.experiment.replicas = 200;
    cfg.experiment.arms = vec![ArmSpec::named("tau4")];
    cfg.experiment.write_replica_traces = false;
    cfg.bounds.e0_samples = 20_000;
    cfg
}
