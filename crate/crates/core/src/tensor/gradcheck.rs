//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic - numeric| / max(1, |analytic|, |numeric|)`
    pub max_relative_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Checks the gradient of a scalar function of several tensors against
/// central differences with step `eps`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument {
            op: "grad_check",
            msg: format!("eps must lie in (0, 1e-2], got {eps}"),
        });
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {value}")));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..grad.numel() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coordinates += 1;
            if err > report.max_relative_error || report.coordinates == 1 {
                report.max_relative_error = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`]; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)?;
    Ok(report.max_relative_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.7, 2.2, 0.0]);
        let err = grad_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                let s = tape.sum(sq);
                Ok(tape.scale(s, 0.5))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detects_sign_error() {
        // sin with the derivative's sign flipped.
        let x = Tensor::vector(vec![0.4, 1.1, -0.8]);
        let err = grad_check(
            |tape, v| {
                let val = tape.value(v);
                let out = Tensor::vector(val.data().iter().map(|a| a.sin()).collect());
                let y = tape.custom(
                    &[v],
                    out,
                    Box::new(|inp, _, g| {
                        vec![inp[0].data().iter().zip(g).map(|(a, g)| -a.cos() * g).collect()]
                    }),
                );
                Ok(tape.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check(|t, v| Ok(t.sum(v)), &x, 0.1).is_err());
        let inf = Tensor::vector(vec![f64::INFINITY]);
        assert!(matches!(
            grad_check(|t, v| Ok(t.sum(v)), &inf, 1e-5),
            Err(Error::NonFinite(_))
        ));
    }
}
