//! Ground-truth optimum of the oracle model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{BoxConstraint, QuadraticModel};

const KKT_TOL: f64 = 1e-8;
const MAX_PG_ITERS: usize = 1_000_000;
/// Largest dimension for which the active-set cross-check enumerates faces.
const ACTIVE_SET_MAX_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub u: Vec<f64>,
    pub method: String,
    /// `‖∇Φ̃(u*)‖` unconstrained, `‖u* − P(u* − ∇Φ̃(u*))‖` constrained.
    pub kkt_residual: f64,
    /// Max-norm gap to the active-set solution, when it was computed.
    pub cross_check_gap: Option<f64>,
}

impl Optimum {
    pub fn norm(&self) -> f64 {
        self.u.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn kkt_residual(model: &QuadraticModel, c: &BoxConstraint, u: &DVector<f64>) -> f64 {
    let g = model.gradient(u);
    let step: Vec<f64> = (0..u.len()).map(|i| u[i] - g[i]).collect();
    let p = c.project(&step);
    (0..u.len()).map(|i| (u[i] - p[i]).powi(2)).sum::<f64>().sqrt()
}

pub fn solve_optimum(model: &QuadraticModel, constraint: Option<&BoxConstraint>) -> Result<Optimum> {
    let unconstrained = model.unconstrained_minimizer()?;
    let c = match constraint {
        Some(c) if c.contains(unconstrained.as_slice()) || c.lower().iter().chain(c.upper()).all(|x| !x.is_finite()) => {
            // the constraint is inactive; the linear solve is exact
            let r = kkt_residual(model, c, &unconstrained);
            return Ok(Optimum { u: unconstrained.as_slice().to_vec(), method: "linear_solve".into(), kkt_residual: r, cross_check_gap: None });
        }
        Some(c) => c,
        None => {
            let r = model.gradient(&unconstrained).norm();
            if r > 1e-10 {
                return Err(Error::SolverStalled(format!("gradient norm {r:e} at linear-solve optimum")));
            }
            return Ok(Optimum { u: unconstrained.as_slice().to_vec(), method: "linear_solve".into(), kkt_residual: r, cross_check_gap: None });
        }
    };

    let u = projected_gradient(model, c)?;
    let r = kkt_residual(model, c, &u);
    if r > KKT_TOL {
        return Err(Error::SolverStalled(format!("KKT residual {r:e} after projected gradient")));
    }
    let cross_check_gap = if model.n() <= ACTIVE_SET_MAX_DIM {
        let w = active_set(model, c)?;
        let gap = (&u - &w).amax();
        if gap > KKT_TOL {
            return Err(Error::SolverStalled(format!("projected gradient and active set disagree by {gap:e}")));
        }
        Some(gap)
    } else {
        None
    };
    Ok(Optimum { u: u.as_slice().to_vec(), method: "projected_gradient".into(), kkt_residual: r, cross_check_gap })
}

fn projected_gradient(model: &QuadraticModel, c: &BoxConstraint) -> Result<DVector<f64>> {
    let l1 = SymmetricEigen::new(model.hessian()).eigenvalues.max();
    let step = 1.0 / l1;
    let mut u = DVector::from_vec(c.project(&vec![0.0; model.n()]));
    for _ in 0..MAX_PG_ITERS {
        let g = model.gradient(&u);
        let next: Vec<f64> = (0..u.len()).map(|i| u[i] - step * g[i]).collect();
        let next = DVector::from_vec(c.project(&next));
        let moved = (&next - &u).amax();
        u = next;
        if moved <= 1e-15 * (1.0 + u.amax()) {
            return Ok(u);
        }
    }
    Err(Error::SolverStalled(format!("projected gradient did not settle in {MAX_PG_ITERS} iterations")))
}

#[derive(Clone, Copy, PartialEq)]
enum Face {
    Free,
    Lower,
    Upper,
}

/// Enumerates every assignment of coordinates to {free, lower face, upper
/// face} and returns the one satisfying the KKT conditions.
fn active_set(model: &QuadraticModel, c: &BoxConstraint) -> Result<DVector<f64>> {
    let n = model.n();
    let a = model.hessian();
    let b = model.gradient(&DVector::zeros(n));
    let options: Vec<Vec<Face>> = (0..n)
        .map(|i| {
            let mut f = vec![Face::Free];
            if c.lower()[i].is_finite() {
                f.push(Face::Lower);
            }
            if c.upper()[i].is_finite() {
                f.push(Face::Upper);
            }
            f
        })
        .collect();
    let mut idx = vec![0usize; n];
    loop {
        let faces: Vec<Face> = (0..n).map(|i| options[i][idx[i]]).collect();
        if let Some(u) = try_faces(&a, &b, c, &faces) {
            return Ok(u);
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return Err(Error::SolverStalled("active-set enumeration found no KKT point".into()));
            }
            idx[pos] += 1;
            if idx[pos] < options[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn try_faces(a: &DMatrix<f64>, b: &DVector<f64>, c: &BoxConstraint, faces: &[Face]) -> Option<DVector<f64>> {
    let n = faces.len();
    let tol = 1e-12;
    let mut u = DVector::zeros(n);
    let free: Vec<usize> = (0..n).filter(|&i| faces[i] == Face::Free).collect();
    for i in 0..n {
        match faces[i] {
            Face::Lower => u[i] = c.lower()[i],
            Face::Upper => u[i] = c.upper()[i],
            Face::Free => {}
        }
    }
    if !free.is_empty() {
        let k = free.len();
        let aff = DMatrix::from_fn(k, k, |r, s| a[(free[r], free[s])]);
        let rhs = DVector::from_fn(k, |r, _| {
            let i = free[r];
            -b[i] - (0..n).filter(|j| faces[*j] != Face::Free).map(|j| a[(i, j)] * u[j]).sum::<f64>()
        });
        let sol = aff.lu().solve(&rhs)?;
        for (r, &i) in free.iter().enumerate() {
            u[i] = sol[r];
        }
    }
    let g = a * &u + b;
    for i in 0..n {
        let ok = match faces[i] {
            Face::Free => u[i] >= c.lower()[i] - tol && u[i] <= c.upper()[i] + tol,
            Face::Lower => g[i] >= -tol,
            Face::Upper => g[i] <= tol,
        };
        if !ok {
            return None;
        }
    }
    Some(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::AffinePlant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pure_quadratic_optimum_is_zero() {
        let plant = AffinePlant::new(DMatrix::zeros(4, 4), DVector::zeros(4)).unwrap();
        let model = QuadraticModel::new(&plant, DVector::zeros(4), 1.0).unwrap();
        let opt = solve_optimum(&model, None).unwrap();
        assert!(opt.u.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn random_boxes_agree_across_methods() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(2..7);
            let h = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let r = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let model = QuadraticModel::new(&AffinePlant::new(h, b).unwrap(), r, 1.0).unwrap();
            let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.01..0.5)).collect();
            let c = BoxConstraint::new(lo, hi).unwrap();
            let opt = solve_optimum(&model, Some(&c)).unwrap();
            assert!(opt.kkt_residual <= 1e-8);
            assert!(c.contains(&opt.u));
            if let Some(gap) = opt.cross_check_gap {
                assert!(gap <= 1e-8);
            }
        }
    }

    #[test]
    fn inactive_constraint_uses_linear_solve() {
        let plant = AffinePlant::identity(3);
        let model = QuadraticModel::new(&plant, DVector::from_vec(vec![0.2, 0.0, -0.2]), 1.0).unwrap();
        let c = BoxConstraint::uniform(3, -1.0, 1.0).unwrap();
        let opt = solve_optimum(&model, Some(&c)).unwrap();
        assert_eq!(opt.method, "linear_solve");
        assert!((opt.u[0] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn scaling_does_not_move_the_optimum() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        let plant = AffinePlant::new(h, DVector::zeros(2)).unwrap();
        let model = QuadraticModel::new(&plant, DVector::from_vec(vec![1.0, -0.5]), 1.0).unwrap();
        let c = BoxConstraint::new(vec![-1.0, -1.0], vec![0.1, 1.0]).unwrap();
        let a = solve_optimum(&model, Some(&c)).unwrap();
        let b = solve_optimum(&model.scaled(7.0), Some(&c)).unwrap();
        for i in 0..2 {
            assert!((a.u[i] - b.u[i]).abs() < 1e-10);
        }
    }
}
