use super::{Result, Tape, Tensor, TensorError, Var};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences and returns the worst relative error
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..input.len()).collect();
    grad_check_at(f, input, eps, &all)
}

/// Like [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_at<F>(f: F, input: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(TensorError::NonFinite(format!("step {eps}")));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let y = f(&mut tape, x)?;
    let y0 = tape.value(y).first().copied().unwrap_or(f64::NAN);
    if !y0.is_finite() {
        return Err(TensorError::NonFinite("function value".into()));
    }
    tape.backward(y)?;
    let analytic = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.len()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t, false);
        let y = f(&mut tape, x)?;
        let v = tape.value(y)[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TensorError::NonFinite("perturbed function value".into()))
        }
    };

    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let ad = analytic[i];
        let err = (ad - numeric).abs() / (ad.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Moves every entry closer than `margin` to zero out to `±margin`, so a
/// finite-difference stencil never straddles the kink of ELU/ReLU.
pub fn nudge_off_kinks(t: &mut Tensor, margin: f64) {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    }
}
