use super::{Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A scalar-valued function that can be recorded on a tape of any precision.
pub trait ScalarFunction {
    fn eval<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var>;
}

/// Worst relative disagreement between the tape gradient of `f` at `point`
/// and a central-difference estimate with step `eps`.
///
/// The analytic gradient is computed in `T`. The central differences are
/// always evaluated in `f64` so that single-precision gradients are compared
/// against a reference that is not itself dominated by rounding.
/// Per coordinate: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<T: Element, F: ScalarFunction>(
    f: &F,
    point: &Tensor<T>,
    eps: f64,
) -> Result<f64> {
    let mut tape = Tape::<T>::new();
    let x = tape.param(point);
    let y = f.eval(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let zeros = vec![T::zero(); point.numel()];
    let analytic = grads.get(x).unwrap_or(&zeros);

    let base: Tensor<f64> = point.cast();
    let eval_at = |p: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(p);
        let y = f.eval(&mut tape, x)?;
        match tape.value(y) {
            [v] => Ok(*v),
            other => Err(Error::Contract(format!(
                "grad_check function returned {} values",
                other.len()
            ))),
        }
    };
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = base.clone();
        plus.data_mut()[i] += eps;
        let mut minus = base.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval_at(&plus)? - eval_at(&minus)?) / (2.0 * eps);
        let a = a.as_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl ScalarFunction for Quadratic {
        fn eval<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
            let sq = tape.mul(x, x)?;
            let s = tape.scale(sq, 1.5)?;
            tape.sum(s)
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::<f64>::new([4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        assert!(grad_check(&Quadratic, &p, 1e-4).unwrap() < 1e-7);
    }
}
