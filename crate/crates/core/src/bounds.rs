//! Closed-form convergence constants and bounds for the distributed
//! controller, plus a Monte Carlo estimator for the initial estimate moment.
//!
//! Every formula is transcribed as stated. Nothing here repairs a loose
//! constant; regimes where a bound is vacuous are flagged instead.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::WeightMatrix;
use crate::objective::{RegularityConstants, SharedObjective};
use crate::plant::SteadyStateMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub tau: usize,
    pub eta: f64,
    pub delta: f64,
    /// `tr[W^{2τ}]`
    pub tr_w2tau: f64,
    /// `tr[(W^τ − 11ᵀ/N)²]`
    pub tr_dev2: f64,
    pub lambda2: f64,
    pub l0: f64,
    pub l1: f64,
    pub m: f64,
    /// Objective scaling already folded into `l0`, `l1`, `m`.
    pub scale: f64,
    /// Second moment of the first estimate, see [`estimate_e0`].
    pub e0: f64,
    /// Diameter of the constraint set, constrained case only.
    pub d_u: Option<f64>,
}

impl BoundInputs {
    pub fn new(
        weights: &WeightMatrix,
        tau: usize,
        eta: f64,
        delta: f64,
        constants: &RegularityConstants,
        e0: f64,
    ) -> Self {
        let traces = weights.consensus_deviation(tau);
        Self {
            n: weights.n(),
            tau,
            eta,
            delta,
            tr_w2tau: traces.tr_w2tau,
            tr_dev2: traces.tr_dev2,
            lambda2: weights.lambda2(),
            l0: constants.l0,
            l1: constants.l1,
            m: constants.m,
            scale: constants.scale,
            e0,
            d_u: None,
        }
    }

    pub fn with_diameter(mut self, d_u: f64) -> Self {
        self.d_u = Some(d_u);
        self
    }

    pub fn alpha(&self) -> f64 {
        4.0 * self.n as f64 / (self.delta * self.delta) * self.l0 * self.l0 * self.eta * self.eta * self.tr_w2tau
    }

    /// `δ / sqrt(4 N L0² tr[W^{2τ}])`
    pub fn eta_threshold(&self) -> f64 {
        self.delta / (4.0 * self.n as f64 * self.l0 * self.l0 * self.tr_w2tau).sqrt()
    }

    pub fn step_size_ok(&self) -> bool {
        self.eta > 0.0 && self.eta < self.eta_threshold()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1 {
    pub alpha: f64,
    pub r: f64,
    pub r_f: f64,
    pub r_e: f64,
}

pub fn lemma1_constants(inp: &BoundInputs) -> Result<Lemma1> {
    let alpha = inp.alpha();
    if !(alpha < 1.0) {
        return Err(Error::StepSizeConditionViolated { alpha });
    }
    let tr = inp.tr_w2tau;
    let n4 = inp.n as f64 + 4.0;
    // E0/α is taken as 0 when E0 = 0 so the η → 0 limit is representable
    let init = if inp.e0 == 0.0 { 0.0 } else { inp.e0 / alpha };
    let r = init + 16.0 * inp.l0 * inp.l0 * tr * n4 * n4 / (1.0 - alpha);
    let r_f = alpha * r / (2.0 * tr) + 8.0 * inp.l0 * inp.l0 * n4 * n4;
    let r_e = inp.tr_dev2 * r_f;
    Ok(Lemma1 { alpha, r, r_f, r_e })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1 {
    pub lemma: Lemma1,
    pub rho: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub p: f64,
    /// `p(η)/(1−ρ)`, infinite when `ρ ≥ 1`.
    pub limit: f64,
    pub tau: usize,
    /// `ρ ≥ 1`: the bound carries no information.
    pub vacuous: bool,
}

impl Theorem1 {
    /// Bound on `E‖u_j − u*‖²` for `j ≥ τ+1`, given the measured
    /// `E‖u_{τ+1} − u*‖²`.
    pub fn curve(&self, initial_gap: f64, j: usize) -> f64 {
        assert!(j > self.tau, "bound holds from index tau + 1 on");
        self.rho.powi((j - 1 - self.tau) as i32) * initial_gap + self.limit
    }
}

pub fn theorem1_bound(inp: &BoundInputs) -> Result<Theorem1> {
    if !(inp.m > 1.0) {
        return Err(Error::RequiresStrongConvexityAboveOne { m: inp.m });
    }
    let lemma = lemma1_constants(inp)?;
    let (eta, m, tau) = (inp.eta, inp.m, inp.tau as f64);
    let (l0, l1, d, n) = (inp.l0, inp.l1, inp.delta, inp.n as f64);
    let Lemma1 { r, r_f, r_e, .. } = lemma;

    let rho = 1.0 - (m - 1.0) * eta + m * eta * eta;
    let a1 = 2.0 * m * tau * r;
    let a2 = 2.0 * tau * l0 * r.sqrt() + d * d * l1 * l1 * n + 2.0 * tau * r + 4.0 * r_f + m * tau * r + r;
    let a3 = r_e + l1 * d * d * n;
    let p = if eta == 0.0 { 0.0 } else { a1 * eta.powi(3) + a2 * eta * eta + a3 * eta };
    let vacuous = !(rho < 1.0);
    let limit = if vacuous { f64::INFINITY } else { p / (1.0 - rho) };
    Ok(Theorem1 { lemma, rho, a1, a2, a3, p, limit, tau: inp.tau, vacuous })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2 {
    pub rho: f64,
    pub r_prime: f64,
    /// `ηR′/(1−ρ′)`
    pub limit: f64,
    pub tau: usize,
    pub vacuous: bool,
}

impl Theorem2 {
    /// Bound on `E‖u_j − u*‖` for `j ≥ τ+1`, given the measured
    /// `E‖u_{τ+1} − u*‖`.
    pub fn curve(&self, initial_gap: f64, j: usize) -> f64 {
        assert!(j > self.tau, "bound holds from index tau + 1 on");
        self.rho.powi((j - 1 - self.tau) as i32) * initial_gap + self.limit
    }
}

pub fn theorem2_bound(inp: &BoundInputs) -> Result<Theorem2> {
    let d_u = match inp.d_u {
        Some(d) if d.is_finite() => d,
        _ => return Err(Error::UnboundedConstraintSet),
    };
    let alpha = inp.alpha();
    if !inp.step_size_ok() {
        return Err(Error::StepSizeConditionViolated { alpha });
    }
    let (eta, m, l0, l1, n) = (inp.eta, inp.m, inp.l0, inp.l1, inp.n as f64);
    let arg = 1.0 - 2.0 * m * eta + l1 * l1 * eta * eta;
    if arg < 0.0 {
        return Err(Error::InvalidParameter(format!("1 - 2 m eta + L1^2 eta^2 = {arg} < 0")));
    }
    let rho = arg.sqrt();
    let n4 = n + 4.0;
    let r_prime =
        2.0 * l0 + 4.0 * l0 * (inp.tr_w2tau * (n * d_u / (inp.delta * inp.delta) + 4.0 * n4 * n4)).sqrt();
    let vacuous = !(rho < 1.0);
    let limit = if vacuous { f64::INFINITY } else { eta * r_prime / (1.0 - rho) };
    Ok(Theorem2 { rho, r_prime, limit, tau: inp.tau, vacuous })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary1 {
    pub epsilon: f64,
    pub eta: f64,
    pub delta: f64,
    pub tau: usize,
    pub rounds: usize,
    /// `p(η_ε)/(1−ρ)` evaluated directly at the returned parameters.
    pub achieved: f64,
}

const COROLLARY_MAX_ROUNDS: usize = 100;

/// Picks `(η_ε, δ_ε, τ_min)` so that `p(η_ε)/(1−ρ) < ε`.
///
/// `η_ε` depends on `a1`, `a2` and `tr[W^{2τ}]`, which depend on `δ` and
/// `τ`, which depend on `η_ε`. The system is solved by fixed-point
/// iteration starting from `τ = 1`, holding `e0`, `l0`, `l1`, `m` fixed,
/// and the result is checked by evaluating the bound directly.
pub fn corollary1_select(epsilon: f64, base: &BoundInputs, weights: &WeightMatrix) -> Result<Corollary1> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must be positive")));
    }
    if !(base.m > 1.0) {
        return Err(Error::RequiresStrongConvexityAboveOne { m: base.m });
    }
    let n = base.n as f64;
    let (l0, l1, m) = (base.l0, base.l1, base.m);
    let lambda2 = weights.lambda2();

    let mut tau = 1usize;
    let mut eta = 0.0f64;
    for round in 1..=COROLLARY_MAX_ROUNDS {
        let traces = weights.consensus_deviation(tau);
        let delta_per_eta = 2.0 * (4.0 * n * l0 * l0 * traces.tr_w2tau).sqrt();
        let mut inp = BoundInputs { tau, tr_w2tau: traces.tr_w2tau, tr_dev2: traces.tr_dev2, ..base.clone() };

        // inner loop: η_ε ↔ δ through the δ² terms of a2
        let mut next_eta = eta;
        for _ in 0..COROLLARY_MAX_ROUNDS {
            inp.eta = if next_eta > 0.0 { next_eta } else { 1e-12 };
            inp.delta = delta_per_eta * inp.eta;
            let t = theorem1_bound(&inp)?;
            let denom = 2.0 * t.a1 + 32.0 * n * n * l1 * l0 * l0 * traces.tr_w2tau;
            let b = t.a2 + 0.5 * epsilon * m;
            let disc = b * b + denom * (m - 1.0) * epsilon;
            let cand = (disc.sqrt() - b) / denom;
            if !(cand > 0.0 && cand.is_finite()) {
                return Err(Error::EpsilonTooLarge(epsilon));
            }
            let settled = (cand - next_eta).abs() <= 1e-14 * cand;
            next_eta = cand;
            if settled {
                break;
            }
        }
        eta = next_eta;
        if m - 1.0 - m * eta <= 0.0 {
            return Err(Error::EpsilonTooLarge(epsilon));
        }
        inp.eta = eta;
        inp.delta = delta_per_eta * eta;
        let lemma = lemma1_constants(&inp)?;

        let new_tau = if lambda2 <= 0.0 || base.n < 2 {
            1
        } else {
            let num = ((m - 1.0 - m * eta) * epsilon / (2.0 * lemma.r_f * (n - 1.0))).ln();
            let bound = num / (lambda2 * lambda2).ln();
            // strict inequality τ > bound
            if bound < 1.0 {
                1
            } else {
                bound.floor() as usize + 1
            }
        };
        if new_tau == tau {
            let achieved = theorem1_bound(&inp)?.limit;
            if !(achieved < epsilon) {
                return Err(Error::EpsilonTooLarge(epsilon));
            }
            return Ok(Corollary1 { epsilon, eta, delta: inp.delta, tau, rounds: round, achieved });
        }
        tau = new_tau;
    }
    Err(Error::FixedPointDiverged(COROLLARY_MAX_ROUNDS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E0Estimate {
    /// `max_cell + 3·SE(max_cell)`
    pub value: f64,
    pub max_cell_mean: f64,
    pub max_cell_se: f64,
    pub argmax: (usize, usize),
    pub samples: usize,
}

/// Monte Carlo estimate of `max_{p,q ∈ 1..=τ} E‖(1/δ)(W^p φ₀ − W^q φ₀^init) ⊙ v₀‖²`
/// with `φ₀` measured at `u0 + δv₀` and `φ₀^init` at `u0 + δv^init`,
/// `v₀` and `v^init` independent standard normal.
#[allow(clippy::too_many_arguments)]
pub fn estimate_e0<P: SteadyStateMap, R: Rng>(
    plant: &mut P,
    objectives: &[SharedObjective],
    weights: &WeightMatrix,
    u0: &[f64],
    delta: f64,
    tau: usize,
    samples: usize,
    rng: &mut R,
) -> Result<E0Estimate> {
    let n = u0.len();
    if samples < 2 {
        return Err(Error::InvalidParameter("E0 estimation needs at least 2 samples".into()));
    }
    if tau == 0 {
        return Err(Error::InvalidParameter("tau must be >= 1".into()));
    }
    if objectives.len() != n || weights.n() != n || plant.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: objectives.len() });
    }
    let phi_at = |v: &[f64], plant: &mut P| -> Result<DVector<f64>> {
        let probe: Vec<f64> = (0..n).map(|i| u0[i] + delta * v[i]).collect();
        let y = plant.measure(&probe)?;
        Ok(DVector::from_iterator(n, (0..n).map(|i| objectives[i].evaluate(probe[i], y[i]))))
    };
    let w = weights.entries();
    let mut sum = vec![0.0; tau * tau];
    let mut sum_sq = vec![0.0; tau * tau];
    let mut pa = Vec::with_capacity(tau);
    let mut pb = Vec::with_capacity(tau);
    for _ in 0..samples {
        let v0: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let vi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut a = phi_at(&v0, plant)?;
        let mut b = phi_at(&vi, plant)?;
        pa.clear();
        pb.clear();
        for _ in 0..tau {
            a = w * a;
            b = w * b;
            pa.push(a.clone());
            pb.push(b.clone());
        }
        for p in 0..tau {
            for qi in 0..tau {
                let s: f64 = (0..n)
                    .map(|i| {
                        let x = (pa[p][i] - pb[qi][i]) * v0[i] / delta;
                        x * x
                    })
                    .sum();
                sum[p * tau + qi] += s;
                sum_sq[p * tau + qi] += s * s;
            }
        }
    }
    let ns = samples as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, (0, 0));
    for p in 0..tau {
        for qi in 0..tau {
            let c = p * tau + qi;
            let mean = sum[c] / ns;
            let var = ((sum_sq[c] - ns * mean * mean) / (ns - 1.0)).max(0.0);
            if mean > best.0 {
                best = (mean, (var / ns).sqrt(), (p + 1, qi + 1));
            }
        }
    }
    Ok(E0Estimate {
        value: best.0 + 3.0 * best.1,
        max_cell_mean: best.0,
        max_cell_se: best.1,
        argmax: best.2,
        samples,
    })
}

/// Everything the calculator can say about one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub eta_threshold: f64,
    pub step_size_ok: bool,
    pub lemma1: Option<Lemma1>,
    pub theorem1: Option<Theorem1>,
    pub theorem2: Option<Theorem2>,
    pub corollary1: Option<Corollary1>,
    /// Why a section is missing, or how an input was obtained.
    pub notes: Vec<(String, String)>,
}

impl BoundReport {
    pub fn compute(inputs: BoundInputs, epsilon: Option<f64>, weights: &WeightMatrix) -> Self {
        let mut notes = Vec::new();
        let mut section = |name: &str, r: Result<()>| {
            if let Err(e) = r {
                notes.push((name.to_string(), e.to_string()));
            }
        };
        let mut lemma1 = None;
        let mut theorem1 = None;
        let mut theorem2 = None;
        let mut corollary1 = None;
        section("lemma1", lemma1_constants(&inputs).map(|l| lemma1 = Some(l)));
        section("theorem1", theorem1_bound(&inputs).map(|t| theorem1 = Some(t)));
        if inputs.d_u.is_some() {
            section("theorem2", theorem2_bound(&inputs).map(|t| theorem2 = Some(t)));
        }
        if let Some(eps) = epsilon {
            section("corollary1", corollary1_select(eps, &inputs, weights).map(|c| corollary1 = Some(c)));
        }
        if inputs.step_size_ok() && inputs.e0 / inputs.alpha() > 1e6 * inputs.e0.max(1.0) {
            notes.push(("small_eta".into(), "E0/alpha dominates R; bound is loose in this regime".into()));
        }
        Self {
            eta_threshold: inputs.eta_threshold(),
            step_size_ok: inputs.step_size_ok(),
            inputs,
            lemma1,
            theorem1,
            theorem2,
            corollary1,
            notes,
        }
    }

    /// True when a requested bound could not be evaluated because its
    /// hypotheses fail.
    pub fn hypotheses_violated(&self) -> bool {
        !self.step_size_ok
            || self.theorem1.is_none()
            || (self.inputs.d_u.is_some() && self.theorem2.is_none())
            || self.notes.iter().any(|(k, _)| k == "corollary1")
    }

    pub fn add_note(&mut self, key: &str, value: impl Into<String>) {
        self.notes.push((key.to_string(), value.into()));
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let i = &self.inputs;
        kv("n", i.n.to_string());
        kv("tau", i.tau.to_string());
        kv("eta", i.eta.to_string());
        kv("delta", i.delta.to_string());
        kv("tr_w2tau", i.tr_w2tau.to_string());
        kv("tr_dev2", i.tr_dev2.to_string());
        kv("lambda2", i.lambda2.to_string());
        kv("l0", i.l0.to_string());
        kv("l1", i.l1.to_string());
        kv("m", i.m.to_string());
        kv("scale", i.scale.to_string());
        kv("e0", i.e0.to_string());
        if let Some(d) = i.d_u {
            kv("d_u", d.to_string());
        }
        kv("eta_threshold", self.eta_threshold.to_string());
        kv("step_size_ok", self.step_size_ok.to_string());
        if let Some(l) = &self.lemma1 {
            kv("alpha", l.alpha.to_string());
            kv("r", l.r.to_string());
            kv("r_f", l.r_f.to_string());
            kv("r_e", l.r_e.to_string());
        }
        if let Some(t) = &self.theorem1 {
            kv("rho", t.rho.to_string());
            kv("a1", t.a1.to_string());
            kv("a2", t.a2.to_string());
            kv("a3", t.a3.to_string());
            kv("p_eta", t.p.to_string());
            kv("limit_unconstrained", t.limit.to_string());
        }
        if let Some(c) = &self.corollary1 {
            kv("epsilon", c.epsilon.to_string());
            kv("eta_eps", c.eta.to_string());
            kv("delta_eps", c.delta.to_string());
            kv("tau_min", c.tau.to_string());
            kv("corollary_achieved", c.achieved.to_string());
        }
        if let Some(t) = &self.theorem2 {
            kv("rho_prime", t.rho.to_string());
            kv("r_prime", t.r_prime.to_string());
            kv("limit_constrained", t.limit.to_string());
        }
        for (k, v) in &self.notes {
            kv(&format!("note.{k}"), v.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{metropolis_weights, standard_graph, GraphKind};
    use crate::objective::tracking_objectives;
    use crate::plant::AffinePlant;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_inputs(rng: &mut ChaCha8Rng) -> BoundInputs {
        let n = rng.random_range(2..12);
        let tr_w2tau = rng.random_range(1.0..n as f64);
        let l0 = rng.random_range(0.1..5.0);
        let delta = rng.random_range(1e-3..1.0);
        let threshold = delta / (4.0 * n as f64 * l0 * l0 * tr_w2tau).sqrt();
        let m = rng.random_range(1.01..5.0);
        BoundInputs {
            n,
            tau: rng.random_range(1..60),
            eta: threshold * rng.random_range(0.01..0.99),
            delta,
            tr_w2tau,
            tr_dev2: tr_w2tau - 1.0,
            lambda2: rng.random_range(0.0..1.0),
            l0,
            l1: m * rng.random_range(1.0..3.0),
            m,
            scale: 1.0,
            e0: rng.random_range(0.0..100.0),
            d_u: Some(rng.random_range(0.0..10.0)),
        }
    }

fn q(inp: &BoundInputs) -> f64 {
        let n4 = inp.n as f64 + 4.0;
        inp.l0 * inp.l0 * n4 * n4
    }

    // Algebraically rearranged forms, kept apart from the transcribed ones.
    fn factored(inp: &BoundInputs) -> (f64, f64, f64, f64, f64, f64, f64, f64, f64, f64, f64) {
        let n = inp.n as f64;
        let tau = inp.tau as f64;
        let alpha = (2.0 * inp.l0 * inp.eta / inp.delta).powi(2) * n * inp.tr_w2tau;
        let qv = q(inp);
        let r = (inp.e0 * (1.0 - alpha) + 16.0 * qv * inp.tr_w2tau * alpha) / (alpha * (1.0 - alpha));
        let r_f = 2.0 * n * (inp.l0 * inp.eta / inp.delta).powi(2) * r + 8.0 * qv;
        let r_e = inp.tr_dev2 * r_f;
        let rho = 1.0 - inp.eta * (inp.m - 1.0 - inp.m * inp.eta);
        let a1 = 2.0 * inp.m * tau * r;
        let a2 = tau * (2.0 * inp.l0 * r.sqrt() + (2.0 + inp.m) * r) + r + 4.0 * r_f + n * (inp.delta * inp.l1).powi(2);
        let a3 = r_e + n * inp.l1 * inp.delta * inp.delta;
        let p = inp.eta * (a3 + inp.eta * (a2 + inp.eta * a1));
        let rho2 = ((1.0 - inp.m * inp.eta).powi(2) + (inp.l1 * inp.l1 - inp.m * inp.m) * inp.eta * inp.eta).sqrt();
        let inner = inp.tr_w2tau * (n * inp.d_u.unwrap() / (inp.delta * inp.delta) + 4.0 * (n + 4.0).powi(2));
        let rp = 2.0 * inp.l0 * (1.0 + 2.0 * inner.sqrt());
        (alpha, r, r_f, r_e, rho, a1, a2, a3, p, rho2, rp)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn direct_and_factored_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let inp = sample_inputs(&mut rng);
            let t1 = theorem1_bound(&inp).unwrap();
            let t2 = theorem2_bound(&inp).unwrap();
            let f = factored(&inp);
            let l = t1.lemma;
            let pairs = [
                (l.alpha, f.0),
                (l.r, f.1),
                (l.r_f, f.2),
                (l.r_e, f.3),
                (t1.rho, f.4),
                (t1.a1, f.5),
                (t1.a2, f.6),
                (t1.a3, f.7),
                (t1.p, f.8),
                (t2.rho, f.9),
                (t2.r_prime, f.10),
            ];
            for (k, (a, b)) in pairs.iter().enumerate() {
                assert!(rel(*a, *b) < 1e-12, "constant #{k}: {a} vs {b} for {inp:?}");
            }
        }
    }

    #[test]
    fn reported_constants_are_nonnegative_and_rates_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let mut inp = sample_inputs(&mut rng);
            // keep η in the contraction window of both theorems
            let cap = ((inp.m - 1.0) / inp.m).min(2.0 * inp.m / (inp.l1 * inp.l1));
            inp.eta = inp.eta.min(0.99 * cap);
            let t1 = theorem1_bound(&inp).unwrap();
            let t2 = theorem2_bound(&inp).unwrap();
            for v in [t1.lemma.r, t1.lemma.r_f, t1.lemma.r_e, t1.a1, t1.a2, t1.a3, t1.p, t2.r_prime] {
                assert!(v >= 0.0);
            }
            assert!(t1.rho < 1.0 && t2.rho < 1.0);
        }
    }

    #[test]
    fn arithmetic_examples() {
        let base = BoundInputs {
            n: 2,
            tau: 1,
            eta: 0.1,
            delta: 100.0,
            tr_w2tau: 1.0,
            tr_dev2: 0.0,
            lambda2: 0.0,
            l0: 1.0,
            l1: 2.0,
            m: 2.0,
            scale: 1.0,
            e0: 1.0,
            d_u: Some(1.0),
        };
        let t = theorem1_bound(&base).unwrap();
        assert!((t.rho - 0.92).abs() < 1e-15);
        assert_eq!(t.lemma.r_e, 0.0);

        let t2 = theorem2_bound(&BoundInputs { m: 1.0, l1: 1.0, ..base.clone() }).unwrap();
        assert!((t2.rho - 0.9).abs() < 1e-15);

        let zero = BoundInputs { eta: 0.0, e0: 0.0, ..base.clone() };
        let t0 = theorem1_bound(&zero).unwrap();
        assert_eq!(t0.p, 0.0);
        assert_eq!(t0.rho, 1.0);
        assert!(t0.vacuous);
        let l = lemma1_constants(&zero).unwrap();
        assert_eq!(l.alpha, 0.0);
        assert!((l.r - 16.0 * 36.0).abs() < 1e-9);
    }

    #[test]
    fn hypothesis_gates() {
        let base = BoundInputs {
            n: 3,
            tau: 2,
            eta: 0.5,
            delta: 0.01,
            tr_w2tau: 1.5,
            tr_dev2: 0.5,
            lambda2: 0.5,
            l0: 1.0,
            l1: 2.0,
            m: 2.0,
            scale: 1.0,
            e0: 1.0,
            d_u: None,
        };
        assert!(matches!(lemma1_constants(&base), Err(Error::StepSizeConditionViolated { .. })));
        assert!(matches!(theorem1_bound(&base), Err(Error::StepSizeConditionViolated { .. })));
        let ok = BoundInputs { eta: 1e-4, ..base.clone() };
        assert!(matches!(theorem2_bound(&ok), Err(Error::UnboundedConstraintSet)));
        assert!(matches!(
            theorem2_bound(&BoundInputs { d_u: Some(1.0), ..base.clone() }),
            Err(Error::StepSizeConditionViolated { .. })
        ));
        assert!(matches!(
            theorem1_bound(&BoundInputs { m: 1.0, ..ok }),
            Err(Error::RequiresStrongConvexityAboveOne { .. })
        ));
    }

    #[test]
    fn e0_vanishes_for_constant_objectives() {
        let g = standard_graph(GraphKind::Path, 3).unwrap();
        let w = metropolis_weights(&g, 2).unwrap();
        let objs: Vec<SharedObjective> = (0..3)
            .map(|_| std::sync::Arc::new(crate::objective::FnObjective(|_u: f64, _y: f64| 4.0)) as SharedObjective)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = estimate_e0(&mut AffinePlant::identity(3), &objs, &w, &[0.0; 3], 10.0, 2, 100, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn e0_matches_gaussian_moments_for_scalar_quadratic() {
        // φ = c u² (tracking to 0 through an identity plant):
        // E[((φ(u0+δv) − φ(u0+δw)) v / δ)²] = c²(16 u0² + 12 δ²)
        let w = WeightMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0), 1).unwrap();
        let c = 1.5;
        let objs = tracking_objectives(&[0.0], c);
        let (u0, delta) = (0.7, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let est = estimate_e0(&mut AffinePlant::identity(1), &objs, &w, &[u0], delta, 1, 200_000, &mut rng).unwrap();
        let exact = c * c * (16.0 * u0 * u0 + 12.0 * delta * delta);
        assert_eq!(est.argmax, (1, 1));
        assert!((est.max_cell_mean - exact).abs() < 3.0 * est.max_cell_se, "{est:?} vs {exact}");
        assert!(est.value >= est.max_cell_mean);
    }

    #[test]
    fn report_text_is_key_value_lines() {
        let g = standard_graph(GraphKind::Path, 3).unwrap();
        let w = metropolis_weights(&g, 2).unwrap();
        let consts = RegularityConstants { l0: 1.0, l1: 3.0, m: 2.0, scale: 1.0, estimated: false, region: String::new() };
        let inp = BoundInputs::new(&w, 2, 1e-4, 0.05, &consts, 1.0);
        let rep = BoundReport::compute(inp, None, &w);
        let text = rep.to_text();
        assert!(text.lines().all(|l| l.split_once(" = ").is_some()));
        assert!(text.contains("rho = "));
        assert!(!rep.hypotheses_violated());
    }
}
