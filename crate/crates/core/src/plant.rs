//! Physical plants seen through their steady-state map `y = h(u, d)`.
//!
//! The controller only ever talks to a [`SteadyStateMap`]. Two realizations
//! are provided: [`AffinePlant`] (`y = H u + b`, exact) and [`DcGridPlant`],
//! a forward-Euler discretized DC grid that is stepped with the input held
//! until its state settles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::CommGraph;

/// Black-box plant: apply an input, wait for steady state, read the output.
pub trait SteadyStateMap {
    fn dim(&self) -> usize;
    fn measure(&mut self, u: &[f64]) -> Result<Vec<f64>>;
}

impl<P: SteadyStateMap + ?Sized> SteadyStateMap for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn measure(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        (**self).measure(u)
    }
}

fn check_dim(expected: usize, u: &[f64]) -> Result<()> {
    if u.len() != expected {
        return Err(Error::DimensionMismatch { expected, found: u.len() });
    }
    if let Some(bad) = u.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite input {bad}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinePlant {
    sensitivity: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffinePlant {
    pub fn new(sensitivity: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let n = sensitivity.nrows();
        if sensitivity.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: sensitivity.ncols() });
        }
        if offset.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: offset.len() });
        }
        Ok(Self { sensitivity, offset })
    }

    pub fn identity(n: usize) -> Self {
        Self { sensitivity: DMatrix::identity(n, n), offset: DVector::zeros(n) }
    }

    pub fn sensitivity(&self) -> &DMatrix<f64> {
        &self.sensitivity
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.sensitivity * u + &self.offset
    }
}

impl SteadyStateMap for AffinePlant {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn measure(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), u)?;
        Ok(self.eval(&DVector::from_column_slice(u)).as_slice().to_vec())
    }
}

/// A diagonal given either as one value for every element or explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diagonal {
    Uniform(f64),
    Values(Vec<f64>),
}

impl Diagonal {
    pub fn expand(&self, len: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            Diagonal::Uniform(v) => Ok(vec![*v; len]),
            Diagonal::Values(v) if v.len() == len => Ok(v.clone()),
            Diagonal::Values(v) => Err(Error::Config(format!("{what}: expected {len} values, got {}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettlePolicy {
    /// Stop once `‖x_{t+1} − x_t‖∞` falls to this value.
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for SettlePolicy {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_steps: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcGridParams {
    pub node_capacitance: Diagonal,
    pub node_conductance: Diagonal,
    pub line_inductance: Diagonal,
    pub line_resistance: Diagonal,
    pub reference_injection: Diagonal,
    pub load_change: Diagonal,
    pub disturbance: Diagonal,
    pub discretization_step: f64,
    pub settle: SettlePolicy,
}

impl Default for DcGridParams {
    fn default() -> Self {
        Self {
            node_capacitance: Diagonal::Uniform(1.0),
            node_conductance: Diagonal::Uniform(1.0),
            line_inductance: Diagonal::Uniform(1.0),
            line_resistance: Diagonal::Uniform(10.0),
            reference_injection: Diagonal::Uniform(1.0),
            load_change: Diagonal::Uniform(1.0),
            disturbance: Diagonal::Uniform(0.1),
            discretization_step: 0.1,
            settle: SettlePolicy::default(),
        }
    }
}

/// Which sign convention the stepped grid dynamics use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRealization {
    /// `C V̇ = G V − B f + I`, `L ḟ = Bᵀ V − R f`.
    AsPrinted,
    /// `C V̇ = −G V − B f + I`, `L ḟ = Bᵀ V − R f` (droop-stabilized).
    StableDroop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProvenance {
    pub realization: GridRealization,
    /// Spectral radius of the Euler matrix of the printed convention.
    pub printed_spectral_radius: f64,
    /// Spectral radius of the Euler matrix actually stepped.
    pub spectral_radius: f64,
    /// Whether `[I 0][G −B; Bᵀ −R]⁻¹[I; 0]` equals the steady-state
    /// sensitivity of the stepped dynamics.
    pub printed_sensitivity_matches: bool,
}

#[derive(Debug, Clone)]
pub struct DcGridPlant {
    edges: Vec<(usize, usize)>,
    cap: Vec<f64>,
    cond: Vec<f64>,
    ind: Vec<f64>,
    res: Vec<f64>,
    /// `I* − ΔI`
    base_injection: Vec<f64>,
    reference_injection: Vec<f64>,
    disturbance: Vec<f64>,
    step: f64,
    settle: SettlePolicy,
    /// −1 for the droop-stabilized form, +1 for the printed one.
    conductance_sign: f64,
    voltage: Vec<f64>,
    current: Vec<f64>,
    sensitivity: DMatrix<f64>,
    incidence: DMatrix<f64>,
    provenance: GridProvenance,
    inner_steps: u64,
}

/// Incidence matrix of the graph, edge `(a, b)` oriented from `a` to `b`.
pub fn incidence_matrix(graph: &CommGraph) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(graph.node_count(), graph.edges().len());
    for (e, &(a, c)) in graph.edges().iter().enumerate() {
        b[(a, e)] = 1.0;
        b[(c, e)] = -1.0;
    }
    b
}

fn system_matrix(g: &[f64], r: &[f64], b: &DMatrix<f64>, conductance_sign: f64) -> DMatrix<f64> {
    let (n, m) = b.shape();
    let mut a = DMatrix::zeros(n + m, n + m);
    for i in 0..n {
        a[(i, i)] = conductance_sign * g[i];
    }
    for e in 0..m {
        a[(n + e, n + e)] = -r[e];
    }
    a.view_mut((0, n), (n, m)).copy_from(&(-b));
    a.view_mut((n, 0), (m, n)).copy_from(&b.transpose());
    a
}

fn euler_matrix(a: &DMatrix<f64>, cap: &[f64], ind: &[f64], step: f64) -> DMatrix<f64> {
    let dim = a.nrows();
    let mut m = DMatrix::identity(dim, dim);
    for row in 0..dim {
        let mass = if row < cap.len() { cap[row] } else { ind[row - cap.len()] };
        for col in 0..dim {
            m[(row, col)] += step * a[(row, col)] / mass;
        }
    }
    m
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `[I 0] (−A)⁻¹ [I; 0]`: node-voltage response to node injections at the
/// equilibrium of `ẋ = A x + [I; 0]`.
fn steady_sensitivity(a: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let dim = a.nrows();
    let lu = (-a).lu();
    let mut rhs = DMatrix::zeros(dim, n);
    rhs.view_mut((0, 0), (n, n)).fill_with_identity();
    let sol = lu.solve(&rhs).ok_or(Error::SingularSystemMatrix)?;
    Ok(sol.rows(0, n).into_owned())
}

/// `[I 0][G −B; Bᵀ −R]⁻¹[I; 0]` taken literally.
fn printed_sensitivity(a_printed: &DMatrix<f64>, n: usize) -> Option<DMatrix<f64>> {
    let dim = a_printed.nrows();
    let mut rhs = DMatrix::zeros(dim, n);
    rhs.view_mut((0, 0), (n, n)).fill_with_identity();
    a_printed.clone().lu().solve(&rhs).map(|s| s.rows(0, n).into_owned())
}

impl DcGridPlant {
    /// Builds the grid on a tree. The printed sign convention is tried first;
    /// if its Euler matrix is not Schur stable the droop-stabilized form is
    /// used instead. Fails if neither is stable.
    pub fn build(tree: &CommGraph, params: &DcGridParams) -> Result<Self> {
        if !tree.is_tree() {
            return Err(Error::NotATree { nodes: tree.node_count(), edges: tree.edges().len() });
        }
        let n = tree.node_count();
        let m = tree.edges().len();
        let cap = params.node_capacitance.expand(n, "node_capacitance")?;
        let cond = params.node_conductance.expand(n, "node_conductance")?;
        let ind = params.line_inductance.expand(m, "line_inductance")?;
        let res = params.line_resistance.expand(m, "line_resistance")?;
        let i_ref = params.reference_injection.expand(n, "reference_injection")?;
        let load = params.load_change.expand(n, "load_change")?;
        let disturbance = params.disturbance.expand(n, "disturbance")?;
        if cap.iter().chain(&ind).any(|&x| x <= 0.0) {
            return Err(Error::InvalidParameter("capacitances and inductances must be positive".into()));
        }
        if params.discretization_step <= 0.0 {
            return Err(Error::InvalidParameter("discretization step must be positive".into()));
        }

        let incidence = incidence_matrix(tree);
        let a_printed = system_matrix(&cond, &res, &incidence, 1.0);
        let printed_radius = spectral_radius(&euler_matrix(&a_printed, &cap, &ind, params.discretization_step));

        let (realization, a, radius) = if printed_radius < 1.0 {
            (GridRealization::AsPrinted, a_printed.clone(), printed_radius)
        } else {
            let a_stable = system_matrix(&cond, &res, &incidence, -1.0);
            let r = spectral_radius(&euler_matrix(&a_stable, &cap, &ind, params.discretization_step));
            if r >= 1.0 {
                return Err(Error::UnstableDiscretization { spectral_radius: r });
            }
            log::info!(
                "printed grid convention unstable (radius {printed_radius:.4}); using droop-stabilized form (radius {r:.4})"
            );
            (GridRealization::StableDroop, a_stable, r)
        };

        let sensitivity = steady_sensitivity(&a, n)?;
        let printed_sensitivity_matches = printed_sensitivity(&a_printed, n)
            .map(|hp| (hp - &sensitivity).amax() < 1e-10)
            .unwrap_or(false);

        let base_injection = i_ref.iter().zip(&load).map(|(a, b)| a - b).collect();
        Ok(Self {
            edges: tree.edges().to_vec(),
            cap,
            cond,
            ind,
            res,
            base_injection,
            reference_injection: i_ref,
            disturbance,
            step: params.discretization_step,
            settle: params.settle,
            conductance_sign: match realization {
                GridRealization::AsPrinted => 1.0,
                GridRealization::StableDroop => -1.0,
            },
            voltage: vec![0.0; n],
            current: vec![0.0; m],
            sensitivity,
            incidence,
            provenance: GridProvenance {
                realization,
                printed_spectral_radius: printed_radius,
                spectral_radius: radius,
                printed_sensitivity_matches,
            },
            inner_steps: 0,
        })
    }

    pub fn provenance(&self) -> &GridProvenance {
        &self.provenance
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn state(&self) -> (&[f64], &[f64]) {
        (&self.voltage, &self.current)
    }

    pub fn reset_state(&mut self) {
        self.voltage.iter_mut().for_each(|v| *v = 0.0);
        self.current.iter_mut().for_each(|f| *f = 0.0);
    }

    pub fn set_settle_policy(&mut self, settle: SettlePolicy) {
        self.settle = settle;
    }

    /// Total Euler steps taken so far.
    pub fn inner_steps(&self) -> u64 {
        self.inner_steps
    }

    /// Steady-state sensitivity `H` and the reference `V_ref = H I* + d`.
    ///
    /// Oracle access for tests, the optimum solver and the bound calculator;
    /// never handed to the controller.
    pub fn sensitivity_oracle(&self) -> (DMatrix<f64>, DVector<f64>) {
        let h = self.sensitivity.clone();
        let v_ref = &h * DVector::from_column_slice(&self.reference_injection)
            + DVector::from_column_slice(&self.disturbance);
        (h, v_ref)
    }

    /// The affine map `u ↦ H(u + I* − ΔI) + d` this plant settles to.
    pub fn affine_oracle(&self) -> AffinePlant {
        let h = self.sensitivity.clone();
        let offset = &h * DVector::from_column_slice(&self.base_injection)
            + DVector::from_column_slice(&self.disturbance);
        AffinePlant { sensitivity: h, offset }
    }

    /// One forward-Euler step with injection `base + u`; returns the largest
    /// absolute state increment.
    fn euler_step(&mut self, u: &[f64], node_rate: &mut [f64]) -> f64 {
        let n = self.voltage.len();
        for i in 0..n {
            node_rate[i] = self.conductance_sign * self.cond[i] * self.voltage[i] + self.base_injection[i] + u[i];
        }
        let mut inc = 0.0_f64;
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let f = self.current[e];
            node_rate[a] -= f;
            node_rate[b] += f;
            let df = self.step * (self.voltage[a] - self.voltage[b] - self.res[e] * f) / self.ind[e];
            self.current[e] = f + df;
            inc = inc.max(df.abs());
        }
        for i in 0..n {
            let dv = self.step * node_rate[i] / self.cap[i];
            self.voltage[i] += dv;
            inc = inc.max(dv.abs());
        }
        inc
    }
}

impl SteadyStateMap for DcGridPlant {
    fn dim(&self) -> usize {
        self.voltage.len()
    }

    fn measure(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), u)?;
        let mut scratch = vec![0.0; self.voltage.len()];
        let mut last = f64::INFINITY;
        let mut settled = false;
        for _ in 0..self.settle.max_steps {
            last = self.euler_step(u, &mut scratch);
            self.inner_steps += 1;
            if last <= self.settle.tolerance {
                settled = true;
                break;
            }
        }
        if !settled {
            return Err(Error::NotSettled { steps: self.settle.max_steps, last_increment: last });
        }
        Ok(self.voltage.iter().zip(&self.disturbance).map(|(v, d)| v + d).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{standard_graph, GraphKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tree8() -> CommGraph {
        standard_graph(GraphKind::GridTree, 8).unwrap()
    }

    #[test]
    fn identity_affine_plant() {
        let mut p = AffinePlant::identity(3);
        assert_eq!(p.measure(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert!(matches!(p.measure(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(p.measure(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn incidence_is_valid() {
        let b = incidence_matrix(&tree8());
        assert_eq!(b.shape(), (8, 7));
        for e in 0..7 {
            assert_eq!(b.column(e).sum(), 0.0);
            assert_eq!(b.column(e).iter().filter(|x| **x != 0.0).count(), 2);
        }
        assert!(b.iter().all(|x| [-1.0, 0.0, 1.0].contains(x)));
    }

    #[test]
    fn default_grid_falls_back_to_stable_form() {
        let p = DcGridPlant::build(&tree8(), &DcGridParams::default()).unwrap();
        let prov = p.provenance();
        assert_eq!(prov.realization, GridRealization::StableDroop);
        // the all-ones voltage mode of the printed matrix sits at 1 + 0.1 * 1
        assert!((prov.printed_spectral_radius - 1.1).abs() < 1e-9);
        assert!(prov.spectral_radius < 1.0);
        assert!(!prov.printed_sensitivity_matches);
    }

    #[test]
    fn zero_input_measures_reference_when_no_load_change() {
        let params = DcGridParams { load_change: Diagonal::Uniform(0.0), ..Default::default() };
        let mut p = DcGridPlant::build(&tree8(), &params).unwrap();
        let (_, v_ref) = p.sensitivity_oracle();
        let y = p.measure(&[0.0; 8]).unwrap();
        for i in 0..8 {
            assert!((y[i] - v_ref[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn stepped_dynamics_match_affine_oracle() {
        let mut p = DcGridPlant::build(&tree8(), &DcGridParams::default()).unwrap();
        let oracle = p.affine_oracle();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let u: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = p.measure(&u).unwrap();
            let y_ref = oracle.eval(&DVector::from_column_slice(&u));
            for i in 0..8 {
                assert!((y[i] - y_ref[i]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn sensitivity_is_symmetric_and_matches_direct_formula() {
        let p = DcGridPlant::build(&tree8(), &DcGridParams::default()).unwrap();
        let (h, _) = p.sensitivity_oracle();
        assert!((&h - h.transpose()).amax() < 1e-12);
        // (G + B R⁻¹ Bᵀ)⁻¹ with G = I, R = 10 I
        let b = incidence_matrix(&tree8());
        let direct = (DMatrix::identity(8, 8) + &b * b.transpose() / 10.0).try_inverse().unwrap();
        assert!((h - direct).amax() < 1e-12);
    }

    #[test]
    fn two_node_grid_is_stable() {
        let g = standard_graph(GraphKind::Path, 2).unwrap();
        let p = DcGridPlant::build(&g, &DcGridParams::default()).unwrap();
        let (h, _) = p.sensitivity_oracle();
        assert_eq!(h.shape(), (2, 2));
        // Euler matrix of the stable form, eigenvalues computed independently
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, -1.0, 0.0, -1.0, 1.0, 1.0, -1.0, -10.0]);
        let m = DMatrix::identity(3, 3) + a * 0.1;
        let radius = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(radius < 1.0);
        assert!((p.provenance().spectral_radius - radius).abs() < 1e-12);
    }

    #[test]
    fn large_step_is_unstable() {
        let params = DcGridParams { discretization_step: 10.0, ..Default::default() };
        assert!(matches!(
            DcGridPlant::build(&tree8(), &params),
            Err(Error::UnstableDiscretization { .. })
        ));
    }

    #[test]
    fn not_a_tree() {
        let g = standard_graph(GraphKind::Complete, 4).unwrap();
        assert!(matches!(DcGridPlant::build(&g, &DcGridParams::default()), Err(Error::NotATree { .. })));
    }

    #[test]
    fn exhausted_settle_budget_reports_not_settled() {
        let mut p = DcGridPlant::build(&tree8(), &DcGridParams::default()).unwrap();
        p.set_settle_policy(SettlePolicy { tolerance: 1e-10, max_steps: 3 });
        assert!(matches!(p.measure(&[1.0; 8]), Err(Error::NotSettled { steps: 3, .. })));
    }

    #[test]
    fn settling_is_insensitive_to_step_budget() {
        let mut a = DcGridPlant::build(&tree8(), &DcGridParams::default()).unwrap();
        let mut b = a.clone();
        b.set_settle_policy(SettlePolicy { tolerance: 1e-10, max_steps: 200_000 });
        let u = [0.3, -0.1, 0.2, 0.0, 0.5, 0.4, -0.3, 0.1];
        let ya = a.measure(&u).unwrap();
        let yb = b.measure(&u).unwrap();
        for i in 0..8 {
            assert!((ya[i] - yb[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn superposition() {
        let mut p = DcGridPlant::build(&tree8(), &DcGridParams::default()).unwrap();
        let u1 = [0.5, 0.0, -0.2, 0.1, 0.3, 0.0, 0.2, -0.4];
        let u2 = [-0.1, 0.2, 0.3, 0.0, -0.5, 0.6, 0.1, 0.0];
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let y1 = p.measure(&u1).unwrap();
        let y2 = p.measure(&u2).unwrap();
        let y0 = p.measure(&[0.0; 8]).unwrap();
        let y12 = p.measure(&sum).unwrap();
        for i in 0..8 {
            assert!((y1[i] + y2[i] - y0[i] - y12[i]).abs() < 1e-8);
        }
    }
}
