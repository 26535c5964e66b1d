//! Theoretical bounds for a configured fixture, and their comparison with
//! simulated trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::fixture::Fixture;
use crate::bounds::{estimate_e0, BoundInputs, BoundReport};
use crate::error::{Error, Result};
use crate::objective::{estimate_constants, tracking_objectives, Region};

/// Which bound a comparison uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `E‖u_k − u*‖²` against the unconstrained theorem.
    SquaredGap,
    /// `E‖u_k − u*‖` against the constrained theorem.
    Gap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub k: usize,
    pub empirical_mean: f64,
    pub standard_error: f64,
    pub bound: f64,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    pub kind: BoundKind,
    pub rows: Vec<ComparisonRow>,
    /// `None` when the bound's hypotheses fail.
    pub verdict: Option<bool>,
    pub banner: Option<String>,
}

impl BoundComparison {
    pub fn worst_margin(&self) -> Option<(usize, f64)> {
        self.rows
            .iter()
            .map(|r| (r.k, r.bound - (r.empirical_mean - 3.0 * r.standard_error)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Compares per-replica gap series `‖u_k − u*‖` (`k = 0..=T`) with the
/// requested bound for every `k ≥ τ+1`, allowing 3 standard errors of slack.
/// The initial term `E‖u_{τ+1} − u*‖^{(2)}` is the sample mean.
pub fn compare_bounds(gaps: &[Vec<f64>], kind: BoundKind, report: &BoundReport) -> Result<BoundComparison> {
    if gaps.is_empty() || gaps[0].is_empty() {
        return Err(Error::EmptyInput);
    }
    let len = gaps[0].len();
    if gaps.iter().any(|g| g.len() != len) {
        return Err(Error::DimensionMismatch { expected: len, found: gaps.iter().map(Vec::len).min().unwrap_or(0) });
    }
    let tau = report.inputs.tau;
    let s = gaps.len() as f64;
    let stat = |k: usize| {
        let xs = gaps.iter().map(|g| if kind == BoundKind::SquaredGap { g[k] * g[k] } else { g[k] });
        let mean = xs.clone().sum::<f64>() / s;
        let var = if gaps.len() > 1 { xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (s - 1.0) } else { 0.0 };
        (mean, (var / s).sqrt())
    };
    let curve: Option<Box<dyn Fn(f64, usize) -> f64>> = match kind {
        BoundKind::SquaredGap => report.theorem1.filter(|t| !t.vacuous).map(|t| Box::new(move |g, j| t.curve(g, j)) as _),
        BoundKind::Gap => report.theorem2.filter(|t| !t.vacuous).map(|t| Box::new(move |g, j| t.curve(g, j)) as _),
    };
    let hypotheses_ok = report.step_size_ok && curve.is_some();
    let initial = if tau + 1 < len { stat(tau + 1).0 } else { f64::NAN };
    let rows: Vec<ComparisonRow> = (tau + 1..len)
        .map(|k| {
            let (mean, se) = stat(k);
            let bound = curve.as_ref().map_or(f64::NAN, |c| c(initial, k));
            ComparisonRow { k, empirical_mean: mean, standard_error: se, bound, dominated: mean - 3.0 * se <= bound }
        })
        .collect();
    if hypotheses_ok {
        let verdict = rows.iter().all(|r| r.dominated);
        Ok(BoundComparison { kind, rows, verdict: Some(verdict), banner: None })
    } else {
        let why: Vec<String> = report.notes.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let banner = format!("hypotheses violated; no verdict ({})", why.join("; "));
        Ok(BoundComparison { kind, rows, verdict: None, banner: Some(banner) })
    }
}

/// Evaluates the calculator for the configured fixture and the controller
/// block's `τ`, `η`, `δ`.
///
/// `L0` is taken over the constraint box when it is bounded, otherwise over
/// a ball around `u0`; either region is inflated by `6δ√N`. With
/// `auto_scale` the objective is multiplied by `c = ⌈1/m⌉ + 1` whenever
/// `m ≤ 1` and `E0` is estimated for the scaled objective.
pub fn bound_report(cfg: &RunConfig, fixture: &Fixture) -> Result<BoundReport> {
    let c = &cfg.controller;
    let b = &cfg.bounds;
    let n = fixture.n();
    let weights = fixture.weights(c.tau)?;

    let bounded = fixture.constraint.as_ref().filter(|k| k.is_bounded());
    let region = match bounded {
        Some(k) => Region::Box(k.clone()),
        None => {
            let radius = b.region_radius.unwrap_or_else(|| {
                2.0 * fixture.u0.iter().zip(&fixture.optimum.u).map(|(a, s)| (a - s).powi(2)).sum::<f64>().sqrt()
            });
            Region::Ball { center: fixture.u0.clone(), radius }
        }
    };
    let region = region.inflated_for_exploration(c.delta)?;
    let mut constants = estimate_constants(&fixture.model, &region)?;
    let mut extra = 1.0;
    if b.auto_scale {
        let (scaled, factor) = constants.auto_scaled();
        constants = scaled;
        extra = factor;
    }
    let objectives = tracking_objectives(fixture.model.reference.as_slice(), fixture.model.scale * extra);
    let mut plant = fixture.plant.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(b.e0_seed);
    let e0 = estimate_e0(&mut plant, &objectives, &weights, &fixture.u0, c.delta, c.tau, b.e0_samples, &mut rng)?;

    let mut inputs = BoundInputs::new(&weights, c.tau, c.eta, c.delta, &constants, e0.value);
    if let Some(k) = bounded {
        inputs = inputs.with_diameter(k.diameter());
    }
    let mut report = BoundReport::compute(inputs, b.epsilon, &weights);
    report.add_note("region", region.describe());
    report.add_note("auto_scale_factor", extra.to_string());
    report.add_note(
        "e0_method",
        format!(
            "monte_carlo samples={} max_cell={:?} mean={} se={} margin=3se",
            e0.samples, e0.argmax, e0.max_cell_mean, e0.max_cell_se
        ),
    );
    report.add_note("weights", "lazy_metropolis w_ij = 1/(1+max(deg_i,deg_j))");
    if n < 2 {
        report.add_note("graph", "single node");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundInputs;
    use crate::netgraph::WeightMatrix;

    fn report(eta: f64) -> (BoundReport, WeightMatrix) {
        let w = WeightMatrix::complete_averaging(3, 1).unwrap();
        let inp = BoundInputs {
            n: 3,
            tau: 1,
            eta,
            delta: 1.0,
            tr_w2tau: 1.0,
            tr_dev2: 0.0,
            lambda2: 0.0,
            l0: 1.0,
            l1: 2.0,
            m: 1.5,
            scale: 1.0,
            e0: 1.0,
            d_u: Some(1.0),
        };
        (BoundReport::compute(inp, None, &w), w)
    }

    #[test]
    fn empty_input_is_rejected() {
        let (rep, _) = report(0.01);
        assert!(matches!(compare_bounds(&[], BoundKind::SquaredGap, &rep), Err(Error::EmptyInput)));
    }

    #[test]
    fn violated_step_size_gives_banner_without_verdict() {
        let (rep, _) = report(10.0);
        let cmp = compare_bounds(&[vec![1.0; 10]], BoundKind::Gap, &rep).unwrap();
        assert!(cmp.verdict.is_none());
        assert!(cmp.banner.unwrap().starts_with("hypotheses violated"));
    }

    #[test]
    fn dominated_series_passes() {
        let (rep, _) = report(0.01);
        let gaps = vec![vec![0.5; 20], vec![0.3; 20]];
        let cmp = compare_bounds(&gaps, BoundKind::SquaredGap, &rep).unwrap();
        assert_eq!(cmp.verdict, Some(true));
        assert_eq!(cmp.rows.first().unwrap().k, 2);
        assert_eq!(cmp.rows.len(), 18);
    }
}
