//! Local objectives, reduced objectives, input constraints and the
//! regularity constants `(L0, L1, m)` the bounds are stated in.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{AffinePlant, SteadyStateMap};

/// Per-agent objective `Φ_i(u_i, y_i)` evaluated from local scalars only.
pub trait LocalObjective: Debug + Send + Sync {
    fn evaluate(&self, u: f64, y: f64) -> f64;
}

/// `c · ½(u² + (y − r)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTracking {
    pub reference: f64,
    pub scale: f64,
}

impl QuadraticTracking {
    pub fn new(reference: f64) -> Self {
        Self { reference, scale: 1.0 }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self { scale: self.scale * c, ..self }
    }
}

impl LocalObjective for QuadraticTracking {
    fn evaluate(&self, u: f64, y: f64) -> f64 {
        let e = y - self.reference;
        self.scale * 0.5 * (u * u + e * e)
    }
}

/// Wraps a closure as a local objective (black-box tests, custom costs).
pub struct FnObjective<F>(pub F);

impl<F> Debug for FnObjective<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FnObjective")
    }
}

impl<F: Fn(f64, f64) -> f64 + Send + Sync> LocalObjective for FnObjective<F> {
    fn evaluate(&self, u: f64, y: f64) -> f64 {
        (self.0)(u, y)
    }
}

pub type SharedObjective = Arc<dyn LocalObjective>;

pub fn tracking_objectives(reference: &[f64], scale: f64) -> Vec<SharedObjective> {
    reference
        .iter()
        .map(|&r| Arc::new(QuadraticTracking { reference: r, scale }) as SharedObjective)
        .collect()
}

/// How the sum of local costs relates to the optimized global objective.
///
/// The consensus protocol always tracks the average of the local values, so
/// `Sum` is realized by scaling every local objective by `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Average,
    Sum,
}

impl Normalization {
    pub fn local_factor(self, n: usize) -> f64 {
        match self {
            Normalization::Average => 1.0,
            Normalization::Sum => n as f64,
        }
    }
}

/// `Φ̃(u) = (1/N) Σ Φ_i(u_i, h_i(u))`, evaluated through the plant.
pub struct ReducedObjective<P> {
    plant: P,
    locals: Vec<SharedObjective>,
}

impl<P: SteadyStateMap> ReducedObjective<P> {
    pub fn new(plant: P, locals: Vec<SharedObjective>) -> Result<Self> {
        if locals.len() != plant.dim() {
            return Err(Error::DimensionMismatch { expected: plant.dim(), found: locals.len() });
        }
        Ok(Self { plant, locals })
    }

    pub fn dim(&self) -> usize {
        self.locals.len()
    }

    pub fn plant_mut(&mut self) -> &mut P {
        &mut self.plant
    }

    pub fn local_values(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let y = self.plant.measure(u)?;
        Ok(self.locals.iter().zip(u.iter().zip(&y)).map(|(o, (&ui, &yi))| o.evaluate(ui, yi)).collect())
    }

    pub fn value(&mut self, u: &[f64]) -> Result<f64> {
        let v = self.local_values(u)?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Monte Carlo estimate of `Φ̃_δ(u) = E_v Φ̃(u + δ v)` with its standard error.
    pub fn smoothed_value_mc<R: Rng + ?Sized>(
        &mut self,
        u: &[f64],
        delta: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let n = self.dim();
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut probe = vec![0.0; n];
        for s in 0..samples {
            for i in 0..n {
                let v: f64 = rng.sample(StandardNormal);
                probe[i] = u[i] + delta * v;
            }
            let x = self.value(&probe)?;
            let d = x - mean;
            mean += d / (s + 1) as f64;
            m2 += d * (x - mean);
        }
        let var = m2 / (samples.saturating_sub(1)).max(1) as f64;
        Ok((mean, (var / samples as f64).sqrt()))
    }
}

/// Closed form of the quadratic tracking problem on an affine plant:
/// `Φ̃(u) = (c/N) Σ ½(u_i² + (H u + b − r)_i²)`.
///
/// This is oracle knowledge (it contains `H`); it feeds test oracles, the
/// optimum solver and the bound calculator, never the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub sensitivity: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub reference: DVector<f64>,
    pub scale: f64,
}

impl QuadraticModel {
    pub fn new(plant: &AffinePlant, reference: DVector<f64>, scale: f64) -> Result<Self> {
        if reference.len() != plant.offset().len() {
            return Err(Error::DimensionMismatch { expected: plant.offset().len(), found: reference.len() });
        }
        Ok(Self {
            sensitivity: plant.sensitivity().clone(),
            offset: plant.offset().clone(),
            reference,
            scale,
        })
    }

    pub fn n(&self) -> usize {
        self.offset.len()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { scale: self.scale * c, ..self.clone() }
    }

    pub fn plant(&self) -> AffinePlant {
        AffinePlant::new(self.sensitivity.clone(), self.offset.clone()).expect("dimensions checked")
    }

    pub fn local_objectives(&self) -> Vec<SharedObjective> {
        tracking_objectives(self.reference.as_slice(), self.scale)
    }

    fn residual(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.sensitivity * u + &self.offset - &self.reference
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        let r = self.residual(u);
        self.scale * 0.5 * (u.norm_squared() + r.norm_squared()) / self.n() as f64
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        let r = self.residual(u);
        (u + self.sensitivity.transpose() * r) * (self.scale / self.n() as f64)
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let n = self.n();
        (DMatrix::identity(n, n) + self.sensitivity.transpose() * &self.sensitivity) * (self.scale / n as f64)
    }

    /// Gradient of the reduced local objective `Φ̃_i`.
    pub fn local_gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        let r = self.residual(u);
        let mut g = self.sensitivity.row(i).transpose() * r[i];
        g[i] += u[i];
        g * self.scale
    }

    pub fn local_hessian(&self, i: usize) -> DMatrix<f64> {
        let h = self.sensitivity.row(i).transpose();
        let mut m = &h * h.transpose();
        m[(i, i)] += 1.0;
        m * self.scale
    }

    /// `Φ̃_δ(u) = Φ̃(u) + (δ²/2) tr ∇²Φ̃` (exact for quadratics).
    pub fn smoothed_value(&self, u: &DVector<f64>, delta: f64) -> f64 {
        self.value(u) + 0.5 * delta * delta * self.hessian().trace()
    }

    /// Unconstrained minimizer from the first-order condition.
    pub fn unconstrained_minimizer(&self) -> Result<DVector<f64>> {
        let n = self.n();
        let a = DMatrix::identity(n, n) + self.sensitivity.transpose() * &self.sensitivity;
        let rhs = self.sensitivity.transpose() * (&self.reference - &self.offset);
        a.lu().solve(&rhs).ok_or(Error::SingularSystemMatrix)
    }
}

/// Per-agent intervals `[lo_i, hi_i]`; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        for (i, (l, h)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(Error::InvalidParameter(format!("interval {i} is [{l}, {h}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|x| x.is_finite())
    }

    pub fn diameters(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, h)| h - l).collect()
    }

    /// `D_U = sqrt(Σ D_i²)`; infinite if any interval is unbounded.
    pub fn diameter(&self) -> f64 {
        self.diameters().iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    #[inline]
    pub fn clamp(&self, i: usize, x: f64) -> f64 {
        x.max(self.lower[i]).min(self.upper[i])
    }

    pub fn project_in_place(&self, u: &mut [f64]) {
        for (i, x) in u.iter_mut().enumerate() {
            *x = self.clamp(i, *x);
        }
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(i, &x)| self.clamp(i, x)).collect()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter().enumerate().all(|(i, &x)| x >= self.lower[i] && x <= self.upper[i])
    }

    /// Largest amount by which any coordinate leaves its interval.
    pub fn violation(&self, u: &[f64]) -> f64 {
        u.iter()
            .enumerate()
            .map(|(i, &x)| (self.lower[i] - x).max(x - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Region over which Lipschitz constants are taken.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Box(BoxConstraint),
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    /// Enlarges the region by `6 δ √N` so exploration probes stay inside.
    pub fn inflated_for_exploration(&self, delta: f64) -> Result<Region> {
        let n = self.dim();
        let pad = 6.0 * delta * (n as f64).sqrt();
        Ok(match self {
            Region::Box(b) => Region::Box(BoxConstraint::new(
                b.lower.iter().map(|l| l - pad).collect(),
                b.upper.iter().map(|h| h + pad).collect(),
            )?),
            Region::Ball { center, radius } => Region::Ball { center: center.clone(), radius: radius + pad },
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box(b) => b.dim(),
            Region::Ball { center, .. } => center.len(),
        }
    }

    /// Center and radius of a ball containing the region.
    pub fn enclosing_ball(&self) -> Result<(DVector<f64>, f64)> {
        match self {
            Region::Box(b) => {
                if !b.is_bounded() {
                    return Err(Error::UnboundedRegion);
                }
                let c = b.lower.iter().zip(&b.upper).map(|(l, h)| 0.5 * (l + h));
                Ok((DVector::from_iterator(b.dim(), c), 0.5 * b.diameter()))
            }
            Region::Ball { center, radius } => {
                if !radius.is_finite() {
                    return Err(Error::UnboundedRegion);
                }
                Ok((DVector::from_column_slice(center), *radius))
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        match self {
            Region::Box(b) => {
                if !b.is_bounded() {
                    return Err(Error::UnboundedRegion);
                }
                Ok(DVector::from_iterator(
                    b.dim(),
                    b.lower.iter().zip(&b.upper).map(|(l, h)| if h > l { rng.random_range(*l..*h) } else { *l }),
                ))
            }
            Region::Ball { center, radius } => {
                let n = center.len();
                let dir = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                Ok(DVector::from_column_slice(center) + dir.normalize() * r)
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Region::Box(b) => format!("box lower={:?} upper={:?}", b.lower, b.upper),
            Region::Ball { center, radius } => format!("ball center={center:?} radius={radius}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub l0: f64,
    pub l1: f64,
    pub m: f64,
    /// Cumulative positive scale applied to the objective.
    pub scale: f64,
    /// True when obtained by sampling a black box rather than exactly.
    pub estimated: bool,
    pub region: String,
}

impl RegularityConstants {
    pub fn scaled(&self, c: f64) -> Self {
        Self { l0: self.l0 * c, l1: self.l1 * c, m: self.m * c, scale: self.scale * c, ..self.clone() }
    }

    /// Rescales so that `m > 1` when needed, with `c = ⌈1/m⌉ + 1`.
    /// Returns the constants together with the extra factor applied.
    pub fn auto_scaled(&self) -> (Self, f64) {
        if self.m > 1.0 {
            (self.clone(), 1.0)
        } else {
            let c = (1.0 / self.m).ceil() + 1.0;
            (self.scaled(c), c)
        }
    }
}

fn max_eigenvalue(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Exact constants of a quadratic model over `region`.
///
/// `m` and `L1` are the extreme eigenvalues of the Hessian of `Φ̃`; `L0`
/// bounds every local gradient over the region by its value at the center
/// plus the local Hessian norm times the radius.
pub fn estimate_constants(model: &QuadraticModel, region: &Region) -> Result<RegularityConstants> {
    let (center, radius) = region.enclosing_ball()?;
    let eig = SymmetricEigen::new(model.hessian());
    let m = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let l1 = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let l0 = (0..model.n())
        .map(|i| model.local_gradient(i, &center).norm() + max_eigenvalue(model.local_hessian(i)) * radius)
        .fold(0.0, f64::max);
    Ok(RegularityConstants { l0, l1, m, scale: model.scale, estimated: false, region: region.describe() })
}

/// Sampled constants for a black-box reduced objective (central finite
/// differences at `sample_count` points of the region).
pub fn estimate_constants_sampled<P: SteadyStateMap, R: Rng + ?Sized>(
    reduced: &mut ReducedObjective<P>,
    region: &Region,
    sample_count: usize,
    rng: &mut R,
) -> Result<RegularityConstants> {
    let n = reduced.dim();
    let h = 1e-4;
    let mut l0 = 0.0_f64;
    let mut l1 = 0.0_f64;
    let mut m = f64::INFINITY;
    for _ in 0..sample_count.max(1) {
        let u = region.sample(rng)?;
        let mut plus = vec![Vec::new(); n];
        let mut minus = vec![Vec::new(); n];
        for k in 0..n {
            let mut up = u.clone();
            up[k] += h;
            plus[k] = reduced.local_values(up.as_slice())?;
            let mut dn = u.clone();
            dn[k] -= h;
            minus[k] = reduced.local_values(dn.as_slice())?;
        }
        for i in 0..n {
            let g: f64 = (0..n).map(|k| ((plus[k][i] - minus[k][i]) / (2.0 * h)).powi(2)).sum();
            l0 = l0.max(g.sqrt());
        }
        let mut hess = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let mut pts = [u.clone(), u.clone(), u.clone(), u.clone()];
                pts[0][a] += h;
                pts[0][b] += h;
                pts[1][a] += h;
                pts[1][b] -= h;
                pts[2][a] -= h;
                pts[2][b] += h;
                pts[3][a] -= h;
                pts[3][b] -= h;
                let f: Vec<f64> =
                    pts.iter().map(|p| reduced.value(p.as_slice())).collect::<Result<_>>()?;
                let v = (f[0] - f[1] - f[2] + f[3]) / (4.0 * h * h);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(hess);
        for &e in eig.eigenvalues.iter() {
            m = m.min(e);
            l1 = l1.max(e);
        }
    }
    Ok(RegularityConstants { l0, l1, m, scale: 1.0, estimated: true, region: region.describe() })
}
