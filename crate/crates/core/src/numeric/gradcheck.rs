use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub per_parameter_errors: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error with denominator `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks the gradient of a scalar function of a single tensor.
pub fn grad_check<F>(f: F, point: &Tensor, epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_params(|g, vars| f(g, vars[0]), &[("x", point.clone())], epsilon, tolerance)
}

/// Checks the gradient of a scalar function with respect to several named
/// tensors at once, perturbing one coordinate at a time.
pub fn grad_check_params<F>(f: F, params: &[(&str, Tensor)], epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t)).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("function returned {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|(_, t)| g.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone().with_requires_grad(false)).collect();
    let mut per_parameter_errors = Vec::with_capacity(params.len());
    let mut max_relative_error: f64 = 0.0;
    for (pi, (name, _)) in params.iter().enumerate() {
        let analytic = grads
            .get(vars[pi])
            .ok_or_else(|| Error::ContractViolation(format!("no gradient for {name}")))?
            .to_vec();
        let mut worst: f64 = 0.0;
        for (ci, &a) in analytic.iter().enumerate() {
            let orig = values[pi].data()[ci];
            values[pi].data_mut()[ci] = orig + epsilon;
            let plus = eval(&values)?;
            values[pi].data_mut()[ci] = orig - epsilon;
            let minus = eval(&values)?;
            values[pi].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(a, numeric));
        }
        max_relative_error = max_relative_error.max(worst);
        per_parameter_errors.push((name.to_string(), worst));
    }
    Ok(GradCheckReport {
        max_relative_error,
        per_parameter_errors,
        tolerance,
        passed: max_relative_error <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_is_exact() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let report = grad_check(
            |g, v| {
                let sq = g.mul(v, v)?;
                g.sum(sq)
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn plain_sum_has_unit_gradient() {
        let x = Tensor::from_vec(vec![-4.0, 0.5, 7.0, 1e3]).unwrap();
        let report = grad_check(|g, v| g.sum(v), &x, 1e-5, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-6);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let x = Tensor::from_vec(vec![700.0]).unwrap();
        let res = grad_check(
            |g, v| {
                let e = g.exp(v)?;
                let e = g.exp(e)?;
                g.sum(e)
            },
            &x,
            1e-5,
            1e-4,
        );
        assert!(matches!(res, Err(Error::Evaluation(_))));
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        assert!(grad_check(|g, v| g.sum(v), &x, 0.0, 1e-4).is_err());
    }
}
