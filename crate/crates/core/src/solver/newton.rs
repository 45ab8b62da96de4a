//! Projected Newton method for bound-constrained minimization.
//!
//! Bounds that are nearly active with an outward-pointing gradient are held
//! fixed; the Newton system is solved on the remaining variables with a
//! diagonal shift whenever the reduced Hessian is not positive definite, and
//! the step is projected onto the box with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::lbfgs::{proj_grad_norm, InnerResult, InnerStop};
use super::nlp::project;

pub struct ProjectedNewton {
    pub max_iter: usize,
    pub tol: f64,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 50;
const ACTIVE_EPS: f64 = 1e-3;

/// Solve `H d = rhs` with the smallest shift `H + delta I` that admits a
/// Cholesky factorization.
fn shifted_solve(h: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut delta = 0.0;
    for _ in 0..40 {
        let mut m = h.clone();
        if delta > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += delta;
            }
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        delta = if delta == 0.0 { 1e-10 * scale } else { delta * 10.0 };
    }
    None
}

impl ProjectedNewton {
    /// Minimize over the box starting from `z` (modified in place). `fg`
    /// returns the value and writes the gradient; `hess` returns the dense
    /// Hessian.
    pub fn minimize<F, H>(
        &self,
        z: &mut [f64],
        lower: &[f64],
        upper: &[f64],
        mut fg: F,
        mut hess: H,
    ) -> Result<InnerResult>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
        H: FnMut(&[f64]) -> Result<DMatrix<f64>>,
    {
        let n = z.len();
        project(z, lower, upper);
        let mut g = vec![0.0; n];
        let mut f = fg(z, &mut g)?;
        let mut pg = proj_grad_norm(z, &g, lower, upper);
        let mut trial = vec![0.0; n];
        let mut g_trial = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut iterations = 0;

        while iterations < self.max_iter {
            if pg <= self.tol {
                return Ok(InnerResult { value: f, proj_grad: pg, iterations, stop: InnerStop::Converged });
            }
            iterations += 1;
            let eps = ACTIVE_EPS.min(pg);
            let free: Vec<usize> = (0..n)
                .filter(|&i| !((z[i] - lower[i] <= eps && g[i] > 0.0) || (upper[i] - z[i] <= eps && g[i] < 0.0)))
                .collect();
            let h = hess(z)?;
            for (i, di) in d.iter_mut().enumerate() {
                *di = -g[i];
            }
            if !free.is_empty() {
                let h_ff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
                let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
                if let Some(step) = shifted_solve(h_ff, &rhs) {
                    for (a, &i) in free.iter().enumerate() {
                        d[i] = step[a];
                    }
                }
            }

            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACK {
                for i in 0..n {
                    trial[i] = (z[i] + t * d[i]).clamp(lower[i], upper[i]);
                }
                let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - z[i])).sum();
                if decrease < 0.0 {
                    // a trial point outside the models' domain is a rejected step
                    match fg(&trial, &mut g_trial) {
                        Ok(f_trial) if f_trial.is_finite() && f_trial <= f + ARMIJO * decrease => {
                            f = f_trial;
                            accepted = true;
                            break;
                        }
                        Ok(_) | Err(Error::NonFinite(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                return Ok(InnerResult { value: f, proj_grad: pg, iterations, stop: InnerStop::Stalled });
            }
            z.copy_from_slice(&trial);
            g.copy_from_slice(&g_trial);
            pg = proj_grad_norm(z, &g, lower, upper);
        }
        let stop = if pg <= self.tol { InnerStop::Converged } else { InnerStop::MaxIter };
        Ok(InnerResult { value: f, proj_grad: pg, iterations, stop })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(z: &[f64], g: &mut [f64]) -> Result<f64> {
        let (x, y) = (z[0], z[1]);
        g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
        g[1] = 200.0 * (y - x * x);
        Ok((1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2))
    }

    fn rosenbrock_hess(z: &[f64]) -> Result<DMatrix<f64>> {
        let (x, y) = (z[0], z[1]);
        Ok(DMatrix::from_row_slice(2, 2, &[2.0 - 400.0 * (y - 3.0 * x * x), -400.0 * x, -400.0 * x, 200.0]))
    }

    #[test]
    fn rosenbrock_converges_quickly() {
        let mut z = [-1.2, 1.0];
        let pn = ProjectedNewton { max_iter: 100, tol: 1e-10 };
        let r = pn.minimize(&mut z, &[-5.0; 2], &[5.0; 2], rosenbrock, rosenbrock_hess).unwrap();
        assert_eq!(r.stop, InnerStop::Converged);
        assert!((z[0] - 1.0).abs() < 1e-8 && (z[1] - 1.0).abs() < 1e-8);
        assert!(r.iterations < 40, "{}", r.iterations);
    }

    #[test]
    fn bound_constrained_rosenbrock() {
        // with x <= 0.5 the minimizer sits on the bound at (0.5, 0.25)
        let mut z = [-1.2, 1.0];
        let pn = ProjectedNewton { max_iter: 100, tol: 1e-10 };
        let r = pn.minimize(&mut z, &[-5.0; 2], &[0.5, 5.0], rosenbrock, rosenbrock_hess).unwrap();
        assert_eq!(r.stop, InnerStop::Converged);
        assert_eq!(z[0], 0.5);
        assert!((z[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn indefinite_start_still_descends() {
        // f = x^4/4 - x^2/2 + y^2, Hessian indefinite at the origin region
        let f = |z: &[f64], g: &mut [f64]| -> Result<f64> {
            g[0] = z[0].powi(3) - z[0];
            g[1] = 2.0 * z[1];
            Ok(z[0].powi(4) / 4.0 - z[0] * z[0] / 2.0 + z[1] * z[1])
        };
        let h = |z: &[f64]| -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(2, 2, &[3.0 * z[0] * z[0] - 1.0, 0.0, 0.0, 2.0]))
        };
        let mut z = [0.1, 1.0];
        let pn = ProjectedNewton { max_iter: 100, tol: 1e-10 };
        let r = pn.minimize(&mut z, &[-5.0; 2], &[5.0; 2], f, h).unwrap();
        assert_eq!(r.stop, InnerStop::Converged);
        assert!((z[0] - 1.0).abs() < 1e-8 && z[1].abs() < 1e-8);
    }
}
