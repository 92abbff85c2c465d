use crate::autodiff::{AdError, Tape, Tensor, Var};

use super::{ArchConfig, PolicyError, PolicyParams, OUTPUT_DIM, STATE_DIM};

/// Parameters placed on a tape, as leaves (trainable) or constants.
#[derive(Debug, Clone)]
pub struct PolicyVars {
    pub vars: Vec<Var>,
    n_conv: usize,
    strides: Vec<[usize; 2]>,
    input: [usize; 2],
    d_h: usize,
}

impl PolicyVars {
    pub fn bind(tape: &mut Tape, params: &PolicyParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let a = &params.arch;
        Self {
            vars,
            n_conv: a.channels.len(),
            strides: a.strides.clone(),
            input: [a.input_height, a.input_width],
            d_h: a.d_h,
        }
    }

    /// Wraps nodes already on a tape, in canonical parameter order.
    pub fn from_vars(vars: Vec<Var>, arch: &ArchConfig) -> Self {
        Self {
            vars,
            n_conv: arch.channels.len(),
            strides: arch.strides.clone(),
            input: [arch.input_height, arch.input_width],
            d_h: arch.d_h,
        }
    }

    fn at(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn tail(&self, k: usize) -> Var {
        self.vars[2 * self.n_conv + k]
    }

    pub fn d_h(&self) -> usize {
        self.d_h
    }
}

/// Encoder output plus the pre-flatten feature map of every conv layer.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub z: Var,
    pub feature_maps: Vec<Var>,
}

/// Circular-padded conv stack, flatten and linear projection. `x` is
/// `[N, 1, H, W]`.
pub fn encode(tape: &mut Tape, pv: &PolicyVars, x: Var) -> Result<Encoding, PolicyError> {
    match tape.value(x).shape() {
        [_, 1, hh, ww] if [*hh, *ww] == pv.input => {}
        s => {
            return Err(PolicyError::Shape(format!(
                "encoder input {:?}, expected [N, 1, {}, {}]",
                s, pv.input[0], pv.input[1]
            )))
        }
    }
    let mut h = x;
    let mut maps = Vec::with_capacity(pv.n_conv);
    for i in 0..pv.n_conv {
        let c = tape.conv2d_circular(h, pv.at(2 * i), pv.at(2 * i + 1), pv.strides[i])?;
        h = tape.elu(c);
        maps.push(h);
    }
    let n = tape.value(h).shape()[0];
    let flat_len = tape.value(h).len() / n.max(1);
    let flat = tape.reshape(h, vec![n, flat_len])?;
    let z = tape.matmul(flat, pv.tail(0))?;
    let z = tape.add_bias(z, pv.tail(1))?;
    Ok(Encoding { z, feature_maps: maps })
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub h: Var,
    /// `[N, 3]` acceleration command in the yaw frame, before clamping.
    pub a_pred: Var,
    /// `[N, 3]` velocity estimate in the yaw frame.
    pub v_hat: Var,
}

/// One recurrent step: `e = W_s s`, `h' = GRU(h, elu(z + e))`,
/// `u = W_u elu(h')` split into acceleration and velocity estimate.
pub fn policy_step(tape: &mut Tape, pv: &PolicyVars, h: Var, z: Var, s: Var) -> Result<StepOutput, PolicyError> {
    let dh = pv.d_h;
    if let Some(bad) = tape.value(h).data().iter().position(|v| !v.is_finite()) {
        return Err(PolicyError::NonFinite(format!("hidden state entry {}", bad)));
    }
    if tape.value(s).shape().get(1) != Some(&STATE_DIM) {
        return Err(PolicyError::Shape(format!("state {:?}, expected [N, {}]", tape.value(s).shape(), STATE_DIM)));
    }
    let e = tape.matmul(s, pv.tail(2))?;
    let x = tape.add(z, e)?;
    let x = tape.elu(x);
    let gi = tape.matmul(x, pv.tail(3))?;
    let gi = tape.add_bias(gi, pv.tail(5))?;
    let gh = tape.matmul(h, pv.tail(4))?;
    let gh = tape.add_bias(gh, pv.tail(6))?;
    let (gi_r, gh_r) = (tape.slice_cols(gi, 0, dh)?, tape.slice_cols(gh, 0, dh)?);
    let (gi_u, gh_u) = (tape.slice_cols(gi, dh, dh)?, tape.slice_cols(gh, dh, dh)?);
    let (gi_n, gh_n) = (tape.slice_cols(gi, 2 * dh, dh)?, tape.slice_cols(gh, 2 * dh, dh)?);
    let r = tape.add(gi_r, gh_r)?;
    let r = tape.sigmoid(r);
    let u = tape.add(gi_u, gh_u)?;
    let u = tape.sigmoid(u);
    let rn = tape.mul(r, gh_n)?;
    let n = tape.add(gi_n, rn)?;
    let n = tape.tanh(n);
    // h' = n + u ⊙ (h − n)
    let hn = tape.sub(h, n)?;
    let uhn = tape.mul(u, hn)?;
    let h_new = tape.add(n, uhn)?;
    let act = tape.elu(h_new);
    let out = tape.matmul(act, pv.tail(7))?;
    debug_assert_eq!(tape.value(out).shape()[1], OUTPUT_DIM);
    let a_pred = tape.slice_cols(out, 0, 3)?;
    let v_hat = tape.slice_cols(out, 3, 3)?;
    Ok(StepOutput { h: h_new, a_pred, v_hat })
}

/// Pads a `[H, W]` map to `[H + 2·rows, W + 2k]`: columns wrap modulo W,
/// added rows are zero.
pub fn circular_pad(x: &[f64], h: usize, w: usize, k: usize, rows: usize) -> Vec<f64> {
    let pw = w + 2 * k;
    let mut out = vec![0.0; (h + 2 * rows) * pw];
    for i in 0..h {
        for j in 0..pw {
            let src = (j as isize - k as isize).rem_euclid(w as isize) as usize;
            out[(i + rows) * pw + j] = x[i * w + src];
        }
    }
    out
}

/// Single-step inference without gradients: returns `(h', a_pred, v_hat)`
/// rows for a batch of `n` agents.
pub fn infer(
    params: &PolicyParams,
    h: &Tensor,
    input: &Tensor,
    state: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), PolicyError> {
    let mut tape = Tape::new();
    let pv = PolicyVars::bind(&mut tape, params, false);
    let hv = tape.constant(h.clone());
    let xv = tape.constant(input.clone());
    let sv = tape.constant(state.clone());
    let enc = encode(&mut tape, &pv, xv)?;
    let out = policy_step(&mut tape, &pv, hv, enc.z, sv)?;
    let take = |v: Var| -> Tensor { tape.value(v).clone() };
    let res = (take(out.h), take(out.a_pred), take(out.v_hat));
    if !res.1.all_finite() || !res.2.all_finite() || !res.0.all_finite() {
        return Err(PolicyError::NonFinite("policy output".into()));
    }
    Ok(res)
}

impl From<AdError> for PolicyError {
    fn from(e: AdError) -> Self {
        match e {
            AdError::NonFinite(s) => PolicyError::NonFinite(s),
            other => PolicyError::Shape(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ArchConfig {
        ArchConfig { input_height: 8, input_width: 16, channels: vec![3, 4], strides: vec![[2, 2], [1, 2]], d_z: 6, d_h: 5, ..Default::default() }
    }

    #[test]
    fn pad_examples() {
        assert_eq!(circular_pad(&[1.0, 2.0, 3.0, 4.0], 1, 4, 1, 0), vec![4.0, 1.0, 2.0, 3.0, 4.0, 1.0]);
        assert_eq!(circular_pad(&[1.0, 2.0], 1, 2, 0, 0), vec![1.0, 2.0]);
        let x = [1.0, 2.0, 3.0];
        assert_eq!(circular_pad(&x, 1, 3, 3, 0), [x, x, x].concat());
        assert_eq!(circular_pad(&[5.0], 1, 1, 0, 1), vec![0.0, 5.0, 0.0]);
    }

    #[test]
    fn zero_params_halve_hidden() {
        let p = PolicyParams::zeros(&arch()).unwrap();
        let h = Tensor::new(vec![2, 5], (0..10).map(|i| i as f64 - 3.0).collect()).unwrap();
        let x = Tensor::full(&[2, 1, 8, 16], 0.7);
        let s = Tensor::full(&[2, 10], 1.3);
        let (h2, a, v) = infer(&p, &h, &x, &s).unwrap();
        for (o, i) in h2.data().iter().zip(h.data()) {
            assert_eq!(*o, 0.5 * i);
        }
        assert!(a.data().iter().chain(v.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn output_shapes_and_determinism() {
        let p = PolicyParams::init(7, &arch()).unwrap();
        let h = Tensor::zeros(&[3, 5]);
        let x = Tensor::new(vec![3, 1, 8, 16], (0..384).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let s = Tensor::full(&[3, 10], 0.2);
        let r1 = infer(&p, &h, &x, &s).unwrap();
        let r2 = infer(&p, &h, &x, &s).unwrap();
        assert_eq!(r1.1.shape(), &[3, 3]);
        assert_eq!(r1.0, r2.0);
        assert_eq!(r1.1, r2.1);
        let mut tape = Tape::new();
        let pv = PolicyVars::bind(&mut tape, &p, false);
        let xv = tape.constant(x);
        let enc = encode(&mut tape, &pv, xv).unwrap();
        assert_eq!(tape.value(enc.z).shape(), &[3, 6]);
    }

    #[test]
    fn nan_hidden_rejected() {
        let p = PolicyParams::zeros(&arch()).unwrap();
        let h = Tensor::full(&[1, 5], f64::NAN);
        let r = infer(&p, &h, &Tensor::zeros(&[1, 1, 8, 16]), &Tensor::zeros(&[1, 10]));
        assert!(matches!(r, Err(PolicyError::NonFinite(_))));
    }

    #[test]
    fn wrong_input_dims_error() {
        let p = PolicyParams::init(1, &arch()).unwrap();
        let r = infer(&p, &Tensor::zeros(&[1, 5]), &Tensor::zeros(&[1, 1, 8, 12]), &Tensor::zeros(&[1, 10]));
        assert!(r.is_err());
    }
}
