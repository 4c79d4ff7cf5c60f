//! Central finite-difference gradient checking.

use super::{Real, Result, Tape, Tensor, Var};

/// Step size for central differences. Meant for `f64` tapes.
pub const FD_STEP: f64 = 1e-4;

/// Compare reverse-mode gradients of a scalar-valued function against
/// central finite differences at `point`. Returns the worst relative
/// error over all coordinates.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    grad_check_multi(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
    )
}

/// Multi-input variant: every coordinate of every input is perturbed.
pub fn grad_check_multi<T, F>(f: F, points: &[Tensor<T>]) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.constant(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let eval = |pts: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(super::TensorError::NonFinite("grad_check"));
        }
        Ok(v.into_f64())
    };

    let h = FD_STEP;
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<T>> = points.to_vec();
    for (pi, p) in points.iter().enumerate() {
        for k in 0..p.len() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + T::from_f64(h);
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - T::from_f64(h);
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].data()[k].into_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            let err = (a - numeric).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
