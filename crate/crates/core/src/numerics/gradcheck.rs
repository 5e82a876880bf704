use crate::error::{Error, Result};

/// Result of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub params: usize,
}

/// `|fd − g| / (|fd| + |g|)`, with the denominator floored at `floor`.
fn rel_error(fd: f64, g: f64, floor: f64) -> f64 {
    (fd - g).abs() / (fd.abs() + g.abs()).max(floor)
}

/// Compares the analytic gradient returned by `f` against finite differences.
///
/// `f` maps a parameter vector to `(value, gradient)`. Each coordinate is
/// checked with a central difference and with second-order one-sided
/// stencils; the coordinate's error is the smallest of the three, so a
/// piecewise-smooth function (ramps, bilinear cell crossings) is not
/// penalised for a kink that lies within one step of the evaluation point.
///
/// The denominator is floored at `1e−6 · max(1, |f|)`. A difference
/// quotient carries roundoff near `|f| · 2⁻⁵² / eps`, so components far
/// below the objective's own scale are compared on an absolute footing
/// instead of producing spurious relative errors.
pub fn grad_check<F>(mut f: F, params: &[f64], eps: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (f0, grad) = f(params)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite("objective at the base point".into()));
    }
    if grad.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    let floor = 1e-6 * f0.abs().max(1.0);
    let mut x = params.to_vec();
    let mut eval = |x: &[f64]| -> Result<f64> {
        let v = f(x)?.0;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("objective during finite differencing".into()))
        }
    };
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        params: params.len(),
    };
    for i in 0..params.len() {
        let x0 = x[i];
        let mut at = |k: f64, x: &mut Vec<f64>| -> Result<f64> {
            x[i] = x0 + k * eps;
            let v = eval(x);
            x[i] = x0;
            v
        };
        let fp1 = at(1.0, &mut x)?;
        let fm1 = at(-1.0, &mut x)?;
        let central = (fp1 - fm1) / (2.0 * eps);
        let mut err = rel_error(central, grad[i], floor);
        if err > 0.0 {
            let fp2 = at(2.0, &mut x)?;
            let fm2 = at(-2.0, &mut x)?;
            let forward = (-3.0 * f0 + 4.0 * fp1 - fp2) / (2.0 * eps);
            let backward = (3.0 * f0 - 4.0 * fm1 + fm2) / (2.0 * eps);
            err = err
                .min(rel_error(forward, grad[i], floor))
                .min(rel_error(backward, grad[i], floor));
        }
        if err > worst.max_rel_error {
            worst.max_rel_error = err;
            worst.worst_index = i;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum();
        let g = x.iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v).collect();
        Ok((v, g))
    }

    #[test]
    fn quadratic_passes() {
        let r = grad_check(quad, &[0.3, -1.2, 0.7], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let bad = |x: &[f64]| {
            let (v, mut g) = quad(x)?;
            g[1] *= 1.1;
            Ok((v, g))
        };
        let r = grad_check(bad, &[0.3, -1.2, 0.7], 1e-5).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn kink_within_step_is_tolerated() {
        // |x| evaluated just right of its kink
        let abs = |x: &[f64]| Ok((x[0].abs(), vec![x[0].signum()]));
        let r = grad_check(abs, &[3e-6], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn tiny_components_are_judged_against_the_objective_scale() {
        // f = 5 + 1e−8·x: the quotient's roundoff is comparable to the slope
        let f = |x: &[f64]| Ok((5.0 + 1e-8 * x[0] + 0.5 * x[1] * x[1], vec![1e-8, x[1]]));
        assert!(grad_check(f, &[0.3, 0.7], 1e-5).unwrap().max_rel_error < 1e-4);
        let wrong = |x: &[f64]| Ok((5.0 + 1e-8 * x[0] + 0.5 * x[1] * x[1], vec![1e-8, 1.001 * x[1]]));
        assert!(grad_check(wrong, &[0.3, 0.7], 1e-5).unwrap().max_rel_error > 1e-4);
    }

    #[test]
    fn non_finite_objective_is_error() {
        let nan = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(grad_check(nan, &[1.0], 1e-5).is_err());
    }
}
