use serde::Serialize;

use crate::error::Result;

use super::nlp::NlpProblem;

/// Comparison of exact derivatives against central finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    /// Largest `|fd - exact| / max(1, |exact|)` over the objective gradient.
    pub objective_rel_err: f64,
    /// Same measure over both constraint Jacobians.
    pub jacobian_rel_err: f64,
    /// Finite-difference entries above `pattern_tol` that fall outside the
    /// declared sparsity pattern.
    pub pattern_violations: usize,
}

impl DerivativeCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.objective_rel_err.max(self.jacobian_rel_err)
    }
}

fn dense(structure: &[(usize, usize)], values: &[f64], rows: usize, n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut m = vec![0.0; rows * n];
    let mut mask = vec![false; rows * n];
    for (&(r, c), v) in structure.iter().zip(values) {
        m[r * n + c] += v;
        mask[r * n + c] = true;
    }
    (m, mask)
}

/// Check all first derivatives at `z` with central differences of relative step `step`.
pub fn check_derivatives<P: NlpProblem + ?Sized>(p: &P, z: &[f64], step: f64) -> Result<DerivativeCheck> {
    let n = p.n();
    let (me, mi) = (p.n_eq(), p.n_ineq());
    let mut grad = vec![0.0; n];
    p.objective_grad(z, &mut grad)?;
    let sc = p.eq_jacobian_structure();
    let sg = p.ineq_jacobian_structure();
    let mut vc = vec![0.0; sc.len()];
    let mut vg = vec![0.0; sg.len()];
    p.eq_jacobian(z, &mut vc)?;
    p.ineq_jacobian(z, &mut vg)?;
    let (jc, mask_c) = dense(&sc, &vc, me, n);
    let (jg, mask_g) = dense(&sg, &vg, mi, n);

    let mut obj_err = 0.0f64;
    let mut jac_err = 0.0f64;
    let mut pattern_violations = 0;
    let pattern_tol = 1e-8;
    let (mut cp, mut cm) = (vec![0.0; me], vec![0.0; me]);
    let (mut gp, mut gm) = (vec![0.0; mi], vec![0.0; mi]);
    let mut zp = z.to_vec();
    for j in 0..n {
        let h = step * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        let fp = p.objective(&zp)?;
        p.eq_constraints(&zp, &mut cp)?;
        p.ineq_constraints(&zp, &mut gp)?;
        zp[j] = z[j] - h;
        let fm = p.objective(&zp)?;
        p.eq_constraints(&zp, &mut cm)?;
        p.ineq_constraints(&zp, &mut gm)?;
        zp[j] = z[j];

        let fd = (fp - fm) / (2.0 * h);
        obj_err = obj_err.max((fd - grad[j]).abs() / grad[j].abs().max(1.0));
        for (rows, plus, minus, jac, mask) in [(me, &cp, &cm, &jc, &mask_c), (mi, &gp, &gm, &jg, &mask_g)] {
            for r in 0..rows {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                let exact = jac[r * n + j];
                jac_err = jac_err.max((fd - exact).abs() / exact.abs().max(1.0));
                if !mask[r * n + j] && fd.abs() > pattern_tol {
                    pattern_violations += 1;
                }
            }
        }
    }
    Ok(DerivativeCheck {
        objective_rel_err: obj_err,
        jacobian_rel_err: jac_err,
        pattern_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_problems::Circle;
    use super::*;

    #[test]
    fn exact_derivatives_of_quadratic() {
        let p = Circle::new(Some(0.1));
        let r = check_derivatives(&p, &[0.3, -0.7], 1e-6).unwrap();
        assert!(r.max_rel_err() < 1e-8, "{r:?}");
        assert_eq!(r.pattern_violations, 0);
        // gradient of (z1-1)^2 + (z2-2)^2 is 2 (z - (1, 2))
        let (g, _, _) = super::super::gradients(&p, &[0.3, -0.7]).unwrap();
        assert!((g[0] + 1.4).abs() < 1e-14 && (g[1] + 5.4).abs() < 1e-14);
    }
}
