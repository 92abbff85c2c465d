use super::{AdError, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|).
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

fn eval_scalar<F>(f: &F, point: &[Tensor]) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Central-difference gradient of a scalar tape function.
pub fn fd_gradient<F>(f: &F, point: &[Tensor], eps: f64) -> Result<Vec<Tensor>, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let mut work: Vec<Tensor> = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut g = Tensor::zeros(point[i].shape());
        for j in 0..point[i].len() {
            let x0 = point[i].data()[j];
            work[i].data_mut()[j] = x0 + eps;
            let fp = eval_scalar(f, &work)?;
            work[i].data_mut()[j] = x0 - eps;
            let fm = eval_scalar(f, &work)?;
            work[i].data_mut()[j] = x0;
            let d = (fp - fm) / (2.0 * eps);
            if !d.is_finite() {
                return Err(AdError::NonFinite(format!("finite difference of input {} coordinate {}", i, j)));
            }
            g.data_mut()[j] = d;
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares reverse-mode gradients of `f` at `point` with central
/// differences of step `eps`.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<GradCheckReport, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item()?;
    if !value.is_finite() {
        return Err(AdError::NonFinite("function value".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    for (i, a) in analytic.iter().enumerate() {
        if let Some(j) = a.data().iter().position(|x| !x.is_finite()) {
            return Err(AdError::NonFinite(format!("analytic gradient of input {} coordinate {}", i, j)));
        }
    }
    drop(tape);
    let numeric = fd_gradient(&f, point, eps)?;
    let mut max_rel_error = 0.0;
    let mut worst = (0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (x, y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = (x - y).abs() / y.abs().max(1.0);
            if e > max_rel_error {
                max_rel_error = e;
                worst = (i, j);
            }
        }
    }
    Ok(GradCheckReport { max_rel_error, worst, analytic, numeric })
}
