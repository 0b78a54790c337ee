//! Central-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error used by [`grad_check`]:
/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, element by element over every input. Returns the largest
/// relative error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if tape.shape(out) != (1, 1) {
        return Err(Error::invalid("grad_check needs a scalar-valued function"));
    }
    let grads = tape.backward(out);

    let eval = |point: &[Tensor]| -> Result<f64> {
        let t = Tape::new();
        let vs: Vec<Var> = point.iter().map(|x| t.param(x.clone())).collect();
        let y = f(&t, &vs)?;
        Ok(t.scalar(y))
    };

    let mut worst = 0.0f64;
    let mut point = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            point[k].data_mut()[i] = x0 + eps;
            let up = eval(&point)?;
            point[k].data_mut()[i] = x0 - eps;
            let down = eval(&point)?;
            point[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}
