use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Magnitude floor for the relative error denominator, so that entries whose
/// true gradient is ~0 are judged on absolute error.
const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error per parameter tensor.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars = params.iter().map(|p| tape.constant(p.clone())).collect::<Result<Vec<_>>>()?;
    let root = f(&tape, &vars)?;
    tape.item(root)
}

/// Compares tape gradients of `f` against central differences with `step`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
    }
    let first = evaluate(&f, params)?;
    let second = evaluate(&f, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let tape = Tape::new();
    let vars = params.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
    let root = f(&tape, &vars)?;
    tape.backward(root)?;

    let mut probe = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var)?.unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        let mut worst: f64 = 0.0;
        for j in 0..params[pi].len() {
            let base = params[pi].data()[j];
            probe[pi].data_mut()[j] = base + step;
            let plus = evaluate(&f, &probe)?;
            probe[pi].data_mut()[j] = base - step;
            let minus = evaluate(&f, &probe)?;
            probe[pi].data_mut()[j] = base;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
        max_rel_error.push(worst);
    }
    let passed = max_rel_error.iter().all(|&e| e <= tol);
    Ok(GradCheckReport { max_rel_error, tol, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn constant_function_passes() {
        let p = Tensor::vector(vec![1.0, -2.0]);
        let report = grad_check(|t, _| t.constant(Tensor::scalar(4.0)), &[p], 1e-6, 1e-5).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_error, vec![0.0]);
    }

    #[test]
    fn linear_layer_norm_passes() {
        let x = Tensor::matrix(3, 4, (0..12).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let w = Tensor::matrix(4, 2, (0..8).map(|v| (v as f64 * 0.91).cos()).collect()).unwrap();
        let b = Tensor::vector(vec![0.1, -0.3]);
        let report = grad_check(
            |t, p| {
                let y = t.add_row(t.matmul(p[0], p[1])?, p[2])?;
                let sq = t.sum(t.mul(y, y)?)?;
                t.pow(sq, 0.5)
            },
            &[x, w, b],
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn nondeterministic_function_aborts() {
        let counter = Cell::new(0.0);
        let p = Tensor::scalar(1.0);
        let res = grad_check(
            |t, v| {
                counter.set(counter.get() + 1.0);
                t.add_scalar(v[0], counter.get())
            },
            &[p],
            1e-6,
            1e-5,
        );
        assert!(matches!(res, Err(Error::NonDeterministic)));
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = Tensor::scalar(1.0);
        assert!(grad_check(|_, v| Ok(v[0]), &[p], 0.0, 1e-5).is_err());
    }
}
