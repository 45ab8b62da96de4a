use crate::ad::Scalar;
use crate::error::Result;

/// One classical Runge-Kutta step of length `h` with the controls held by the
/// caller. `rhs(offset, x)` receives the offset of the stage within the step
/// (`0`, `h/2` or `h`).
pub fn rk4_step<S, const N: usize, F>(mut rhs: F, x: [S; N], h: f64) -> Result<[S; N]>
where
    S: Scalar,
    F: FnMut(f64, &[S; N]) -> Result<[S; N]>,
{
    let axpy = |a: &[S; N], k: &[S; N], c: f64| -> [S; N] {
        let mut out = *a;
        for i in 0..N {
            out[i] += k[i] * c;
        }
        out
    };
    let k1 = rhs(0.0, &x)?;
    let k2 = rhs(0.5 * h, &axpy(&x, &k1, 0.5 * h))?;
    let k3 = rhs(0.5 * h, &axpy(&x, &k2, 0.5 * h))?;
    let k4 = rhs(h, &axpy(&x, &k3, h))?;
    let mut out = x;
    for i in 0..N {
        out[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_step() {
        let x = rk4_step(|_, x: &[f64; 1]| Ok([-x[0]]), [1.0], 0.1).unwrap();
        let h: f64 = 0.1;
        let closed = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x[0] - closed).abs() < 1e-15);
        assert!((x[0] - 0.90483750).abs() < 5e-9);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn constant_rhs_is_exact() {
        let x = rk4_step(|_, _: &[f64; 2]| Ok([3.0, -0.5]), [1.0, 2.0], 0.25).unwrap();
        assert_eq!(x, [1.75, 1.875]);
    }

    #[test]
    fn fourth_order_on_linear_system() {
        // x' = A x with a rotation-plus-decay matrix, integrated to t = 1
        let rhs = |_: f64, x: &[f64; 2]| Ok([-0.3 * x[0] + x[1], -x[0] - 0.3 * x[1]]);
        let exact = {
            let t: f64 = 1.0;
            let d = (-0.3 * t).exp();
            [d * t.cos(), -d * t.sin()]
        };
        let err = |n: usize| {
            let mut x = [1.0, 0.0];
            for _ in 0..n {
                x = rk4_step(rhs, x, 1.0 / n as f64).unwrap();
            }
            ((x[0] - exact[0]).powi(2) + (x[1] - exact[1]).powi(2)).sqrt()
        };
        let errs: Vec<f64> = [4, 8, 16, 32].iter().map(|&n| err(n)).collect();
        let order = (errs[0] / errs[3]).log2() / 3.0;
        assert!(order >= 3.9, "observed order {order}");
    }
}
