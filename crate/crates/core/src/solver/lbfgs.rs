//! Projected limited-memory BFGS for bound-constrained minimization.
//!
//! Variables within `eps` of a bound whose gradient pushes outward form the
//! active set; the quasi-Newton direction is computed on the remaining free
//! variables and the active ones take a scaled gradient step, after which the
//! trial point is projected back onto the box. Step lengths follow a projected
//! Armijo backtracking rule.

use std::collections::VecDeque;

use crate::error::Result;

use super::nlp::project;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStop {
    Converged,
    MaxIter,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub value: f64,
    pub proj_grad: f64,
    pub iterations: usize,
    pub stop: InnerStop,
}

pub struct Lbfgs {
    pub memory: usize,
    pub max_iter: usize,
    pub tol: f64,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

pub(crate) fn proj_grad_norm(z: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..z.len() {
        let p = (z[i] - g[i]).clamp(lower[i], upper[i]);
        m = m.max((z[i] - p).abs());
    }
    m
}

fn dot_masked(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|((x, y), _)| x * y)
        .sum()
}

impl Lbfgs {
    /// Minimize `f` over the box starting from `z` (modified in place).
    /// `fg` returns the value and writes the gradient.
    pub fn minimize<F>(&self, z: &mut [f64], lower: &[f64], upper: &[f64], mut fg: F) -> Result<InnerResult>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
    {
        let n = z.len();
        project(z, lower, upper);
        let mut g = vec![0.0; n];
        let mut f = fg(z, &mut g)?;
        let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(self.memory);
        let mut free = vec![true; n];
        let mut d = vec![0.0; n];
        let mut alpha_buf = vec![0.0; self.memory];
        let mut trial = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut pg = proj_grad_norm(z, &g, lower, upper);
        let mut iterations = 0;

        while iterations < self.max_iter {
            if pg <= self.tol {
                return Ok(InnerResult { value: f, proj_grad: pg, iterations, stop: InnerStop::Converged });
            }
            iterations += 1;
            let eps = pg.min(1e-3);
            for i in 0..n {
                let at_lo = z[i] - lower[i] <= eps && g[i] > 0.0;
                let at_hi = upper[i] - z[i] <= eps && g[i] < 0.0;
                free[i] = !(at_lo || at_hi);
            }
            let gamma = mem
                .back()
                .map(|(s, y, _)| {
                    let yy = dot_masked(y, y, &free);
                    if yy > 0.0 {
                        (dot_masked(s, y, &free) / yy).max(1e-12)
                    } else {
                        1.0
                    }
                })
                .unwrap_or_else(|| 1.0 / super::nlp::inf_norm(&g).max(1.0));

            // two-loop recursion on the free subspace
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            for (k, (s, y, _)) in mem.iter().enumerate().rev() {
                let sy = dot_masked(s, y, &free);
                if sy <= 0.0 {
                    alpha_buf[k] = 0.0;
                    continue;
                }
                let a = dot_masked(s, &d, &free) / sy;
                alpha_buf[k] = a;
                for i in 0..n {
                    if free[i] {
                        d[i] -= a * y[i];
                    }
                }
            }
            for (v, &fr) in d.iter_mut().zip(&free) {
                if fr {
                    *v *= gamma;
                }
            }
            for (k, (s, y, _)) in mem.iter().enumerate() {
                let sy = dot_masked(s, y, &free);
                if sy <= 0.0 {
                    continue;
                }
                let b = dot_masked(y, &d, &free) / sy;
                for i in 0..n {
                    if free[i] {
                        d[i] += (alpha_buf[k] - b) * s[i];
                    }
                }
            }
            for i in 0..n {
                if !free[i] {
                    d[i] = -gamma * g[i];
                }
            }
            let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if !(gd < 0.0) {
                mem.clear();
                let scale = 1.0 / super::nlp::inf_norm(&g).max(1e-300);
                for i in 0..n {
                    d[i] = -g[i] * scale.min(1.0);
                }
            }

            // projected backtracking
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACK {
                for i in 0..n {
                    trial[i] = (z[i] + step * d[i]).clamp(lower[i], upper[i]);
                }
                let decrease: f64 = g.iter().zip(trial.iter().zip(z.iter())).map(|(gi, (t, zi))| gi * (t - zi)).sum();
                match fg(&trial, &mut g_new) {
                    Ok(ft) if ft.is_finite() && ft <= f + ARMIJO * decrease && decrease <= 0.0 => {
                        accepted = Some(ft);
                        break;
                    }
                    Ok(_) => {}
                    Err(crate::error::Error::NonFinite(_)) => {}
                    Err(e) => return Err(e),
                }
                step *= 0.5;
            }
            let Some(f_new) = accepted else {
                if mem.is_empty() {
                    return Ok(InnerResult { value: f, proj_grad: pg, iterations, stop: InnerStop::Stalled });
                }
                mem.clear();
                continue;
            };

            let s: Vec<f64> = trial.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            let yy: f64 = y.iter().map(|a| a * a).sum();
            if sy > 1e-12 * (ss * yy).sqrt() && sy > 0.0 {
                if mem.len() == self.memory {
                    mem.pop_front();
                }
                mem.push_back((s, y, sy));
            }
            z.copy_from_slice(&trial);
            std::mem::swap(&mut g, &mut g_new);
            let f_old = f;
            f = f_new;
            pg = proj_grad_norm(z, &g, lower, upper);
            if (f_old - f).abs() <= 1e-16 * f.abs().max(1.0) && step < 1e-12 {
                return Ok(InnerResult { value: f, proj_grad: pg, iterations, stop: InnerStop::Stalled });
            }
        }
        let stop = if pg <= self.tol { InnerStop::Converged } else { InnerStop::MaxIter };
        Ok(InnerResult { value: f, proj_grad: pg, iterations, stop })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained() {
        let solver = Lbfgs { memory: 10, max_iter: 2000, tol: 1e-10 };
        let mut z = vec![-1.2, 1.0];
        let big = vec![f64::INFINITY; 2];
        let small = vec![f64::NEG_INFINITY; 2];
        let r = solver
            .minimize(&mut z, &small, &big, |x, g| {
                g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
                g[1] = 200.0 * (x[1] - x[0] * x[0]);
                Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
            })
            .unwrap();
        assert_eq!(r.stop, InnerStop::Converged);
        assert!((z[0] - 1.0).abs() < 1e-8 && (z[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn separable_quadratic_is_clipped_optimum() {
        let target = [3.0, -2.0, 0.5, 10.0];
        let lo = vec![0.0, -1.0, 0.0, -5.0];
        let hi = vec![1.0, 1.0, 1.0, 5.0];
        let solver = Lbfgs { memory: 5, max_iter: 200, tol: 1e-12 };
        let mut z = vec![0.5; 4];
        let w = [1.0, 10.0, 100.0, 0.1];
        solver
            .minimize(&mut z, &lo, &hi, |x, g| {
                let mut f = 0.0;
                for i in 0..4 {
                    g[i] = 2.0 * w[i] * (x[i] - target[i]);
                    f += w[i] * (x[i] - target[i]).powi(2);
                }
                Ok(f)
            })
            .unwrap();
        for i in 0..4 {
            assert!((z[i] - target[i].clamp(lo[i], hi[i])).abs() < 1e-10);
        }
    }
}
