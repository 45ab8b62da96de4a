use crate::error::Result;

/// A smooth nonlinear program
///
/// ```text
/// min f(z)  s.t.  c(z) = 0,  g(z) <= 0,  lower <= z <= upper
/// ```
///
/// Jacobians are sparse; `*_jacobian` fills values in the order of the
/// `(row, col)` pairs returned by the matching `*_structure` method.
pub trait NlpProblem: Sync {
    fn n(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn lower_bounds(&self) -> &[f64];
    fn upper_bounds(&self) -> &[f64];
    fn initial_point(&self) -> Vec<f64>;

    fn objective(&self, z: &[f64]) -> Result<f64>;
    fn objective_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<()>;
    fn eq_constraints(&self, z: &[f64], c: &mut [f64]) -> Result<()>;
    fn ineq_constraints(&self, z: &[f64], g: &mut [f64]) -> Result<()>;

    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn eq_jacobian(&self, z: &[f64], values: &mut [f64]) -> Result<()>;
    fn ineq_jacobian(&self, z: &[f64], values: &mut [f64]) -> Result<()>;

    /// Entries of the Hessian of `sigma f + eq_w^T c + ineq_w^T g`, or `None`
    /// if the problem does not provide second derivatives. Both triangles are
    /// listed and repeated entries are summed.
    fn hessian_structure(&self) -> Option<Vec<(usize, usize)>> {
        None
    }

    fn lagrangian_hessian(
        &self,
        _z: &[f64],
        _sigma: f64,
        _eq_w: &[f64],
        _ineq_w: &[f64],
        _values: &mut [f64],
    ) -> Result<()> {
        Err(crate::error::Error::Domain("problem provides no Hessian".into()))
    }
}

/// Clip `z` into the box.
pub fn project(z: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in z.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// `y += J^T w` for a triplet Jacobian.
pub(crate) fn add_jt_times(structure: &[(usize, usize)], values: &[f64], w: &[f64], y: &mut [f64]) {
    for (&(r, c), v) in structure.iter().zip(values) {
        y[c] += v * w[r];
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
