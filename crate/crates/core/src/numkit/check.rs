use super::{NumError, Tape, Tensor, TensorId};

/// Compare the tape's analytic gradient of `f` at `x` against central
/// differences, coordinate by coordinate, at 64-bit precision.
///
/// Returns `max over coordinates of |analytic - fd| / max(1, |analytic|)`.
/// `f` must build a scalar loss from the given input id on the given tape.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64, NumError>
where
    F: Fn(&mut Tape<f64>, TensorId) -> Result<TensorId, NumError>,
{
    let mut tape = Tape::new();
    let xid = tape.param("__input", x);
    let loss = f(&mut tape, xid)?;
    let grads = tape.backward(loss)?;
    let analytic = &grads["__input"];

    let eval = |point: &Tensor<f64>| -> Result<f64, NumError> {
        let mut t = Tape::new();
        let id = t.param("__input", point);
        let out = f(&mut t, id)?;
        let v = t.value(out).item();
        if !v.is_finite() {
            return Err(NumError::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };

    let mut max_err = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - fd).abs() / a.abs().max(1.0);
        if !err.is_finite() {
            return Err(NumError::NonFinite { op: "grad_check" });
        }
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_square_checks_tightly() {
        // f(x) = x^2 at x = 3
        let x = Tensor::vector(vec![3.0]);
        let err = grad_check(
            |t, id| {
                let sq = t.mul(id, id)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn tanh_checks_at_0_7() {
        let x = Tensor::vector(vec![0.7]);
        let err = grad_check(
            |t, id| {
                let y = t.tanh(id)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "err = {err}");
    }
}
