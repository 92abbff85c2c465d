use super::{AdError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    /// Leaf or constant, or any node none of whose inputs needed gradients.
    Source,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Var, stride: [usize; 2] },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Relu(Var),
    Softplus(Var),
    Square(Var),
    SmoothL1(Var),
    Concat { parts: Vec<Var>, widths: Vec<usize> },
    SliceCols { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowNorm(Var),
    RowDot(Var, Var),
    MulCol(Var, Var),
    Gather { x: Var, idx: Vec<usize> },
    Reshape(Var),
    Decay { x: Var, gamma: f64 },
    RotateRows { x: Var, mats: Vec<[f64; 9]>, transpose: bool },
    ClampNorm { x: Var, max: f64 },
    SpeedClamp { diff: Var, vmax: Vec<f64>, kp: f64 },
    Approach { rel_p: Var, rel_v: Var, fallback: Vec<[f64; 3]> },
    Minimum(Var, Var),
    MinScalar(Var, f64),
    IntegratePosition { p: Var, v: Var, a: Var, dt: f64 },
    IntegrateVelocity { v: Var, a0: Var, a1: Var, dt: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record. Creation order is a valid topological
/// order, so backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the leaves after [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`; zero when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> AdError {
    AdError::Shape { op, detail }
}

fn norm3(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Returns `γ·grad`, the attenuation applied to a state adjoint at each
/// rollout step boundary.
pub fn decay_state_gradient(grad: &Tensor, gamma: f64) -> Result<Tensor, AdError> {
    check_gamma(gamma)?;
    let data = grad.data().iter().map(|g| g * gamma).collect();
    Tensor::new(grad.shape().to_vec(), data)
}

fn check_gamma(gamma: f64) -> Result<(), AdError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(AdError::DecayFactor(gamma))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Source, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Source, false)
    }

    /// Copies the value of `v` as a gradient-free constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Source };
        self.push_raw(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AdError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(())
        } else {
            Err(shape_err(op, format!("{:?} vs {:?}", sa, sb)))
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), AdError> {
        match self.value(v).shape() {
            [n, k] => Ok((*n, *k)),
            s => Err(shape_err(op, format!("expected a matrix, got {:?}", s))),
        }
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.push(value, op, &[a, b])
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| f(*v)).collect();
        let value = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.push(value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `x[n, j] + b[j]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AdError> {
        let (n, k) = self.dims2("add_bias", x)?;
        if self.value(b).shape() != [k] {
            return Err(shape_err("add_bias", format!("bias {:?} for width {}", self.value(b).shape(), k)));
        }
        let bv = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(k) {
            for (d, bj) in row.iter_mut().zip(bv) {
                *d += bj;
            }
        }
        let value = Tensor::new(vec![n, k], data)?;
        Ok(self.push(value, Op::AddBias(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Shift(x), |v| v + c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// `[n, k] × [k, m] → [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (n, k) = self.dims2("matmul", a)?;
        let (k2, m) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{}, {}] × [{}, {}]", n, k, k2, m)));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for (p, &aip) in va[i * k..(i + 1) * k].iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                for (o, bpj) in orow.iter_mut().zip(&vb[p * m..(p + 1) * m]) {
                    *o += aip * bpj;
                }
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// 2-D convolution over `[N, C, H, W]` with wrap-around padding along the
    /// width axis and zero padding along the height axis; kernel half-widths
    /// are the padding widths. `w` is `[O, C, KH, KW]`, `b` is `[O]`,
    /// `stride` is `[height, width]`.
    pub fn conv2d_circular(&mut self, x: Var, w: Var, b: Var, stride: [usize; 2]) -> Result<Var, AdError> {
        let geo = ConvGeometry::new(self.value(x).shape(), self.value(w).shape(), self.value(b).shape(), stride)?;
        let out = geo.forward(self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = Tensor::new(vec![geo.n, geo.o, geo.oh, geo.ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, stride }, &[x, w, b]))
    }

    /// Non-overlapping `k × k` max pooling of `[N, C, H, W]`.
    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Result<Var, AdError> {
        let vx = self.value(x);
        let [n, c, h, w] = match vx.shape() {
            [n, c, h, w] => [*n, *c, *h, *w],
            s => return Err(shape_err("maxpool2d", format!("expected [N, C, H, W], got {:?}", s))),
        };
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err("maxpool2d", format!("window {} does not tile {}×{}", k, h, w)));
        }
        let (oh, ow) = (h / k, w / k);
        let xd = vx.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = base;
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = base + (i * k + di) * w + j * k + dj;
                            if xd[idx] > best {
                                best = xd[idx];
                                arg = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(arg);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, x: Var) -> Var {
        self.map(x, Op::Elu(x), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, Op::Softplus(x), softplus)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AdError> {
        Ok(self.map(x, Op::Square(x), |v| v * v))
    }

    /// Huber loss with unit threshold, applied elementwise.
    pub fn smooth_l1(&mut self, x: Var) -> Var {
        self.map(x, Op::SmoothL1(x), |v| if v.abs() < 1.0 { 0.5 * v * v } else { v.abs() - 0.5 })
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let n = self.dims2("concat", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pk) = self.dims2("concat", p)?;
            if pn != n {
                return Err(shape_err("concat", format!("row counts {} vs {}", n, pn)));
            }
            widths.push(pk);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &k) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * k..(i + 1) * k]);
            }
        }
        let value = Tensor::new(vec![n, total], out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), widths }, parts))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let (n, k) = self.dims2("slice", x)?;
        if start + len > k {
            return Err(shape_err("slice", format!("columns {}..{} of width {}", start, start + len, k)));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&xd[i * k + start..i * k + start + len]);
        }
        let value = Tensor::new(vec![n, len], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// `[N, k] → [N]` row sums.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, AdError> {
        let (n, k) = self.dims2("row_sum", x)?;
        let out = self.value(x).data().chunks(k.max(1)).map(|r| r.iter().sum()).take(n).collect();
        Ok(self.push(Tensor::vector(out), Op::RowSum(x), &[x]))
    }

    /// `[N, k] → [N]` Euclidean row norms; the gradient at a zero row is zero.
    pub fn row_norm(&mut self, x: Var) -> Result<Var, AdError> {
        let (_, k) = self.dims2("row_norm", x)?;
        let out = self.value(x).data().chunks(k).map(norm3).collect();
        Ok(self.push(Tensor::vector(out), Op::RowNorm(x), &[x]))
    }

    /// `[N, k] · [N, k] → [N]` row-wise inner products.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("row_dot", a, b)?;
        let (_, k) = self.dims2("row_dot", a)?;
        let out = self
            .value(a)
            .data()
            .chunks(k)
            .zip(self.value(b).data().chunks(k))
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Tensor::vector(out), Op::RowDot(a, b), &[a, b]))
    }

    /// `x[n, j] · c[n]`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var, AdError> {
        let (n, k) = self.dims2("mul_col", x)?;
        if self.value(c).shape() != [n] {
            return Err(shape_err("mul_col", format!("column {:?} for {} rows", self.value(c).shape(), n)));
        }
        let cd = self.value(c).data();
        let out = self
            .value(x)
            .data()
            .chunks(k)
            .zip(cd)
            .flat_map(|(r, ci)| r.iter().map(move |v| v * ci))
            .collect();
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(value, Op::MulCol(x, c), &[x, c]))
    }

    /// Rows of `x` selected by `idx` (repetition allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AdError> {
        let (n, k) = self.dims2("gather", x)?;
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("row {} of {}", bad, n)));
        }
        let xd = self.value(x).data();
        let out = idx.iter().flat_map(|&i| xd[i * k..(i + 1) * k].iter().copied()).collect();
        let value = Tensor::new(vec![idx.len(), k], out)?;
        Ok(self.push(value, Op::Gather { x, idx: idx.to_vec() }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AdError> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Identity in the forward pass; multiplies the adjoint by `gamma` in the
    /// backward pass.
    pub fn decay_hook(&mut self, x: Var, gamma: f64) -> Result<Var, AdError> {
        check_gamma(gamma)?;
        let value = self.value(x).clone();
        Ok(self.push(value, Op::Decay { x, gamma }, &[x]))
    }

    /// Applies a per-row constant 3×3 matrix (row-major) to `[N, 3]`, or its
    /// transpose.
    pub fn rotate_rows(&mut self, x: Var, mats: &[[f64; 9]], transpose: bool) -> Result<Var, AdError> {
        let (n, k) = self.dims2("rotate_rows", x)?;
        if k != 3 || mats.len() != n {
            return Err(shape_err("rotate_rows", format!("[{}, {}] with {} matrices", n, k, mats.len())));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * 3);
        for (r, m) in xd.chunks(3).zip(mats) {
            out.extend_from_slice(&apply3(m, r, transpose));
        }
        let value = Tensor::new(vec![n, 3], out)?;
        Ok(self.push(value, Op::RotateRows { x, mats: mats.to_vec(), transpose }, &[x]))
    }

    /// Scales each row down to Euclidean norm at most `max`.
    pub fn clamp_norm_rows(&mut self, x: Var, max: f64) -> Result<Var, AdError> {
        let (n, k) = self.dims2("clamp_norm", x)?;
        let mut out = self.value(x).data().to_vec();
        for r in out.chunks_mut(k) {
            let nrm = norm3(r);
            if nrm > max {
                r.iter_mut().for_each(|v| *v *= max / nrm);
            }
        }
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(value, Op::ClampNorm { x, max }, &[x]))
    }

    /// Row `i` becomes `diff_i · min(kp, vmax_i / |diff_i|)`: a
    /// proportional command whose magnitude saturates at `vmax_i`.
    pub fn speed_clamp_rows(&mut self, diff: Var, vmax: &[f64], kp: f64) -> Result<Var, AdError> {
        let (n, k) = self.dims2("speed_clamp", diff)?;
        if vmax.len() != n {
            return Err(shape_err("speed_clamp", format!("{} limits for {} rows", vmax.len(), n)));
        }
        let mut out = self.value(diff).data().to_vec();
        for (r, &vm) in out.chunks_mut(k).zip(vmax) {
            let nrm = norm3(r);
            let s = if kp * nrm <= vm { kp } else { vm / nrm };
            r.iter_mut().for_each(|v| *v *= s);
        }
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(value, Op::SpeedClamp { diff, vmax: vmax.to_vec(), kp }, &[diff]))
    }

    /// `max(0, −rel_v · rel_p / |rel_p|)` per row, i.e. the rate at which the
    /// separation `|rel_p|` shrinks. `fallback` supplies the separation
    /// direction for coincident rows.
    pub fn approach_speed(&mut self, rel_p: Var, rel_v: Var, fallback: &[[f64; 3]]) -> Result<Var, AdError> {
        self.same_shape("approach_speed", rel_p, rel_v)?;
        let (n, k) = self.dims2("approach_speed", rel_p)?;
        if k != 3 || fallback.len() != n {
            return Err(shape_err("approach_speed", format!("[{}, {}] with {} fallbacks", n, k, fallback.len())));
        }
        let (pd, vd) = (self.value(rel_p).data(), self.value(rel_v).data());
        let out = (0..n)
            .map(|i| {
                let u = approach_dir(&pd[i * 3..i * 3 + 3], &fallback[i]);
                let s = -(vd[i * 3] * u[0] + vd[i * 3 + 1] * u[1] + vd[i * 3 + 2] * u[2]);
                s.max(0.0)
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::Approach { rel_p, rel_v, fallback: fallback.to_vec() }, &[rel_p, rel_v]))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("minimum", a, b)?;
        Ok(self.zip(a, b, Op::Minimum(a, b), f64::min))
    }

    pub fn min_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::MinScalar(x, c), |v| v.min(c))
    }

    /// `p + v·dt + ½·a·dt²`.
    pub fn integrate_position(&mut self, p: Var, v: Var, a: Var, dt: f64) -> Result<Var, AdError> {
        self.same_shape("integrate_position", p, v)?;
        self.same_shape("integrate_position", p, a)?;
        let (pd, vd, ad) = (self.value(p).data(), self.value(v).data(), self.value(a).data());
        let out = (0..pd.len()).map(|i| pd[i] + vd[i] * dt + 0.5 * ad[i] * dt * dt).collect();
        let value = Tensor::new(self.value(p).shape().to_vec(), out)?;
        Ok(self.push(value, Op::IntegratePosition { p, v, a, dt }, &[p, v, a]))
    }

    /// `v + ½·(a0 + a1)·dt`.
    pub fn integrate_velocity(&mut self, v: Var, a0: Var, a1: Var, dt: f64) -> Result<Var, AdError> {
        self.same_shape("integrate_velocity", v, a0)?;
        self.same_shape("integrate_velocity", v, a1)?;
        let (vd, d0, d1) = (self.value(v).data(), self.value(a0).data(), self.value(a1).data());
        let out = (0..vd.len()).map(|i| vd[i] + 0.5 * (d0[i] + d1[i]) * dt).collect();
        let value = Tensor::new(self.value(v).shape().to_vec(), out)?;
        Ok(self.push(value, Op::IntegrateVelocity { v, a0, a1, dt }, &[v, a0, a1]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AdError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AdError::NonScalarLoss(lv.shape().to_vec()));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Source) {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            backprop_node(nodes, node, &g, &mut grads);
        }
        Ok(Gradients { grads, shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }
}

fn apply3(m: &[f64; 9], r: &[f64], transpose: bool) -> [f64; 3] {
    let mut o = [0.0; 3];
    for (i, oi) in o.iter_mut().enumerate() {
        for j in 0..3 {
            let mij = if transpose { m[j * 3 + i] } else { m[i * 3 + j] };
            *oi += mij * r[j];
        }
    }
    o
}

const COINCIDENT: f64 = 1e-12;

fn approach_dir(p: &[f64], fallback: &[f64; 3]) -> [f64; 3] {
    let n = norm3(p);
    if n < COINCIDENT {
        *fallback
    } else {
        [p[0] / n, p[1] / n, p[2] / n]
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn acc_scaled(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: &[f64], c: f64) {
    if let Some(s) = slot(grads, nodes, v) {
        for (d, gi) in s.iter_mut().zip(g) {
            *d += c * gi;
        }
    }
}

fn acc_map(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: &[f64], f: impl Fn(usize) -> f64) {
    if let Some(s) = slot(grads, nodes, v) {
        for (i, (d, gi)) in s.iter_mut().zip(g).enumerate() {
            *d += gi * f(i);
        }
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| nodes[v.0].value.data();
    let out = node.value.data();
    match &node.op {
        Op::Source => {}
        Op::Add(a, b) => {
            acc_scaled(grads, nodes, *a, g, 1.0);
            acc_scaled(grads, nodes, *b, g, 1.0);
        }
        Op::Sub(a, b) => {
            acc_scaled(grads, nodes, *a, g, 1.0);
            acc_scaled(grads, nodes, *b, g, -1.0);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            acc_map(grads, nodes, *a, g, |i| vb[i]);
            acc_map(grads, nodes, *b, g, |i| va[i]);
        }
        Op::AddBias(x, b) => {
            acc_scaled(grads, nodes, *x, g, 1.0);
            let k = nodes[b.0].value.len();
            if let Some(s) = slot(grads, nodes, *b) {
                for row in g.chunks(k) {
                    for (d, gi) in s.iter_mut().zip(row) {
                        *d += gi;
                    }
                }
            }
        }
        Op::Scale(x, c) => acc_scaled(grads, nodes, *x, g, *c),
        Op::Shift(x) | Op::Reshape(x) => acc_scaled(grads, nodes, *x, g, 1.0),
        Op::Decay { x, gamma } => acc_scaled(grads, nodes, *x, g, *gamma),
        Op::MatMul(a, b) => {
            let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
            let (n, k, m) = (sa[0], sa[1], sb[1]);
            let (va, vb) = (val(*a), val(*b));
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &vb[p * m..(p + 1) * m];
                        s[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(s) = slot(grads, nodes, *b) {
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let aip = va[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (d, gj) in s[p * m..(p + 1) * m].iter_mut().zip(grow) {
                            *d += aip * gj;
                        }
                    }
                }
            }
        }
        Op::Conv2d { x, w, b, stride } => {
            let geo = ConvGeometry::new(
                nodes[x.0].value.shape(),
                nodes[w.0].value.shape(),
                nodes[b.0].value.shape(),
                *stride,
            )
            .expect("validated in forward");
            let (vx, vw) = (val(*x), val(*w));
            if let Some(s) = slot(grads, nodes, *b) {
                for n in 0..geo.n {
                    for o in 0..geo.o {
                        let plane = &g[(n * geo.o + o) * geo.oh * geo.ow..][..geo.oh * geo.ow];
                        s[o] += plane.iter().sum::<f64>();
                    }
                }
            }
            if let Some(s) = slot(grads, nodes, *w) {
                geo.backward_weights(vx, g, s);
            }
            if let Some(s) = slot(grads, nodes, *x) {
                geo.backward_input(vw, g, s);
            }
        }
        Op::MaxPool2d { x, argmax } => {
            if let Some(s) = slot(grads, nodes, *x) {
                for (gi, &a) in g.iter().zip(argmax) {
                    s[a] += gi;
                }
            }
        }
        Op::Sigmoid(x) => acc_map(grads, nodes, *x, g, |i| out[i] * (1.0 - out[i])),
        Op::Tanh(x) => acc_map(grads, nodes, *x, g, |i| 1.0 - out[i] * out[i]),
        Op::Elu(x) => {
            let vx = val(*x);
            acc_map(grads, nodes, *x, g, |i| if vx[i] > 0.0 { 1.0 } else { out[i] + 1.0 })
        }
        Op::Relu(x) => {
            let vx = val(*x);
            acc_map(grads, nodes, *x, g, |i| if vx[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Op::Softplus(x) => {
            let vx = val(*x);
            acc_map(grads, nodes, *x, g, |i| sigmoid(vx[i]))
        }
        Op::Square(x) => {
            let vx = val(*x);
            acc_map(grads, nodes, *x, g, |i| 2.0 * vx[i])
        }
        Op::SmoothL1(x) => {
            let vx = val(*x);
            acc_map(grads, nodes, *x, g, |i| if vx[i].abs() < 1.0 { vx[i] } else { vx[i].signum() })
        }
        Op::Concat { parts, widths } => {
            let total: usize = widths.iter().sum();
            let n = g.len() / total.max(1);
            let mut off = 0;
            for (&p, &k) in parts.iter().zip(widths) {
                if let Some(s) = slot(grads, nodes, p) {
                    for i in 0..n {
                        for j in 0..k {
                            s[i * k + j] += g[i * total + off + j];
                        }
                    }
                }
                off += k;
            }
        }
        Op::SliceCols { x, start } => {
            let k = nodes[x.0].value.shape()[1];
            let len = node.value.shape()[1];
            if let Some(s) = slot(grads, nodes, *x) {
                for (i, grow) in g.chunks(len.max(1)).enumerate() {
                    for (j, gj) in grow.iter().enumerate() {
                        s[i * k + start + j] += gj;
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                s.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                let c = g[0] / s.len().max(1) as f64;
                s.iter_mut().for_each(|d| *d += c);
            }
        }
        Op::RowSum(x) => {
            let k = nodes[x.0].value.shape()[1];
            acc_map(grads, nodes, *x, &expand_rows(g, k), |_| 1.0);
        }
        Op::RowNorm(x) => {
            let k = nodes[x.0].value.shape()[1];
            let vx = val(*x);
            acc_map(grads, nodes, *x, &expand_rows(g, k), |i| {
                let n = out[i / k];
                if n > 0.0 {
                    vx[i] / n
                } else {
                    0.0
                }
            });
        }
        Op::RowDot(a, b) => {
            let k = nodes[a.0].value.shape()[1];
            let (va, vb) = (val(*a), val(*b));
            let ge = expand_rows(g, k);
            acc_map(grads, nodes, *a, &ge, |i| vb[i]);
            acc_map(grads, nodes, *b, &ge, |i| va[i]);
        }
        Op::MulCol(x, c) => {
            let k = nodes[x.0].value.shape()[1];
            let (vx, vc) = (val(*x), val(*c));
            acc_map(grads, nodes, *x, g, |i| vc[i / k]);
            if let Some(s) = slot(grads, nodes, *c) {
                for (r, d) in s.iter_mut().enumerate() {
                    *d += (0..k).map(|j| g[r * k + j] * vx[r * k + j]).sum::<f64>();
                }
            }
        }
        Op::Gather { x, idx } => {
            let k = nodes[x.0].value.shape()[1];
            if let Some(s) = slot(grads, nodes, *x) {
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..k {
                        s[src * k + j] += g[r * k + j];
                    }
                }
            }
        }
        Op::RotateRows { x, mats, transpose } => {
            if let Some(s) = slot(grads, nodes, *x) {
                for (r, m) in mats.iter().enumerate() {
                    let gx = apply3(m, &g[r * 3..r * 3 + 3], !transpose);
                    for j in 0..3 {
                        s[r * 3 + j] += gx[j];
                    }
                }
            }
        }
        Op::ClampNorm { x, max } => {
            let vx = val(*x);
            let k = nodes[x.0].value.shape()[1];
            if let Some(s) = slot(grads, nodes, *x) {
                for r in 0..vx.len() / k {
                    let xr = &vx[r * k..(r + 1) * k];
                    let gr = &g[r * k..(r + 1) * k];
                    let n = norm3(xr);
                    if n <= *max {
                        for j in 0..k {
                            s[r * k + j] += gr[j];
                        }
                    } else {
                        let xg: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            s[r * k + j] += (max / n) * (gr[j] - xr[j] * xg / (n * n));
                        }
                    }
                }
            }
        }
        Op::SpeedClamp { diff, vmax, kp } => {
            let vd = val(*diff);
            let k = nodes[diff.0].value.shape()[1];
            if let Some(s) = slot(grads, nodes, *diff) {
                for (r, &vm) in vmax.iter().enumerate() {
                    let xr = &vd[r * k..(r + 1) * k];
                    let gr = &g[r * k..(r + 1) * k];
                    let n = norm3(xr);
                    if kp * n <= vm {
                        for j in 0..k {
                            s[r * k + j] += kp * gr[j];
                        }
                    } else {
                        let xg: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            s[r * k + j] += (vm / n) * (gr[j] - xr[j] * xg / (n * n));
                        }
                    }
                }
            }
        }
        Op::Approach { rel_p, rel_v, fallback } => {
            let (pd, vd) = (val(*rel_p), val(*rel_v));
            let n = fallback.len();
            let mut gp = vec![0.0; n * 3];
            let mut gv = vec![0.0; n * 3];
            for r in 0..n {
                if out[r] <= 0.0 {
                    continue;
                }
                let pr = &pd[r * 3..r * 3 + 3];
                let vr = &vd[r * 3..r * 3 + 3];
                let u = approach_dir(pr, &fallback[r]);
                for j in 0..3 {
                    gv[r * 3 + j] = -g[r] * u[j];
                }
                let dist = norm3(pr);
                if dist >= COINCIDENT {
                    let uv = u[0] * vr[0] + u[1] * vr[1] + u[2] * vr[2];
                    for j in 0..3 {
                        gp[r * 3 + j] = -g[r] * (vr[j] - u[j] * uv) / dist;
                    }
                }
            }
            acc_scaled(grads, nodes, *rel_p, &gp, 1.0);
            acc_scaled(grads, nodes, *rel_v, &gv, 1.0);
        }
        Op::Minimum(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            acc_map(grads, nodes, *a, g, |i| if va[i] <= vb[i] { 1.0 } else { 0.0 });
            acc_map(grads, nodes, *b, g, |i| if va[i] <= vb[i] { 0.0 } else { 1.0 });
        }
        Op::MinScalar(x, c) => {
            let vx = val(*x);
            acc_map(grads, nodes, *x, g, |i| if vx[i] < *c { 1.0 } else { 0.0 });
        }
        Op::IntegratePosition { p, v, a, dt } => {
            acc_scaled(grads, nodes, *p, g, 1.0);
            acc_scaled(grads, nodes, *v, g, *dt);
            acc_scaled(grads, nodes, *a, g, 0.5 * dt * dt);
        }
        Op::IntegrateVelocity { v, a0, a1, dt } => {
            acc_scaled(grads, nodes, *v, g, 1.0);
            acc_scaled(grads, nodes, *a0, g, 0.5 * dt);
            acc_scaled(grads, nodes, *a1, g, 0.5 * dt);
        }
    }
}

fn expand_rows(g: &[f64], k: usize) -> Vec<f64> {
    g.iter().flat_map(|&v| std::iter::repeat(v).take(k)).collect()
}

/// Index bookkeeping shared by the convolution forward and backward passes.
struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    oh: usize,
    ow: usize,
    /// `cols[kx * ow + j]` is the wrapped input column feeding output column
    /// `j` through kernel column `kx`.
    cols: Vec<usize>,
}

impl ConvGeometry {
    fn new(xs: &[usize], ws: &[usize], bs: &[usize], stride: [usize; 2]) -> Result<Self, AdError> {
        let ([n, c, h, w], [o, wc, kh, kw]) = match (xs, ws) {
            ([n, c, h, w], [o, wc, kh, kw]) => ([*n, *c, *h, *w], [*o, *wc, *kh, *kw]),
            _ => {
                return Err(shape_err(
                    "conv2d_circular",
                    format!("input {:?}, kernel {:?}; need [N, C, H, W] and [O, C, KH, KW]", xs, ws),
                ))
            }
        };
        if wc != c || bs != [o] {
            return Err(shape_err(
                "conv2d_circular",
                format!("input channels {} vs kernel {:?}, bias {:?}", c, ws, bs),
            ));
        }
        let [sh, sw] = stride;
        if sh == 0 || sw == 0 || kh % 2 == 0 || kw % 2 == 0 || kw > w || h == 0 {
            return Err(shape_err(
                "conv2d_circular",
                format!("stride {:?}, kernel {}×{} on {}×{}", stride, kh, kw, h, w),
            ));
        }
        let (ph, pw) = (kh / 2, kw / 2);
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        let mut cols = Vec::with_capacity(kw * ow);
        for kx in 0..kw {
            for j in 0..ow {
                let col = (j * sw + kx) as isize - pw as isize;
                cols.push(col.rem_euclid(w as isize) as usize);
            }
        }
        Ok(Self { n, c, h, w, o, kh, kw, sh, oh, ow, cols })
    }

    fn row(&self, i: usize, ky: usize) -> Option<usize> {
        let r = (i * self.sh + ky) as isize - (self.kh / 2) as isize;
        (r >= 0 && (r as usize) < self.h).then_some(r as usize)
    }

    fn forward(&self, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (oh, ow) = (self.oh, self.ow);
        let mut out = vec![0.0; self.n * self.o * oh * ow];
        for n in 0..self.n {
            for o in 0..self.o {
                let oplane = &mut out[(n * self.o + o) * oh * ow..][..oh * ow];
                oplane.iter_mut().for_each(|v| *v = b[o]);
                for c in 0..self.c {
                    let iplane = &x[(n * self.c + c) * self.h * self.w..][..self.h * self.w];
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let wv = w[((o * self.c + c) * self.kh + ky) * self.kw + kx];
                            let cols = &self.cols[kx * ow..(kx + 1) * ow];
                            for i in 0..oh {
                                let Some(r) = self.row(i, ky) else { continue };
                                let irow = &iplane[r * self.w..(r + 1) * self.w];
                                let orow = &mut oplane[i * ow..(i + 1) * ow];
                                for (ov, &col) in orow.iter_mut().zip(cols) {
                                    *ov += wv * irow[col];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward_weights(&self, x: &[f64], g: &[f64], gw: &mut [f64]) {
        let (oh, ow) = (self.oh, self.ow);
        for n in 0..self.n {
            for o in 0..self.o {
                let gplane = &g[(n * self.o + o) * oh * ow..][..oh * ow];
                for c in 0..self.c {
                    let iplane = &x[(n * self.c + c) * self.h * self.w..][..self.h * self.w];
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let cols = &self.cols[kx * ow..(kx + 1) * ow];
                            let mut acc = 0.0;
                            for i in 0..oh {
                                let Some(r) = self.row(i, ky) else { continue };
                                let irow = &iplane[r * self.w..(r + 1) * self.w];
                                let grow = &gplane[i * ow..(i + 1) * ow];
                                for (gv, &col) in grow.iter().zip(cols) {
                                    acc += gv * irow[col];
                                }
                            }
                            gw[((o * self.c + c) * self.kh + ky) * self.kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }

    fn backward_input(&self, w: &[f64], g: &[f64], gx: &mut [f64]) {
        let (oh, ow) = (self.oh, self.ow);
        for n in 0..self.n {
            for o in 0..self.o {
                let gplane = &g[(n * self.o + o) * oh * ow..][..oh * ow];
                for c in 0..self.c {
                    let xplane = &mut gx[(n * self.c + c) * self.h * self.w..][..self.h * self.w];
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let wv = w[((o * self.c + c) * self.kh + ky) * self.kw + kx];
                            let cols = &self.cols[kx * ow..(kx + 1) * ow];
                            for i in 0..oh {
                                let Some(r) = self.row(i, ky) else { continue };
                                let grow = &gplane[i * ow..(i + 1) * ow];
                                let xrow = &mut xplane[r * self.w..(r + 1) * self.w];
                                for (gv, &col) in grow.iter().zip(cols) {
                                    xrow[col] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.softplus(x);
        assert!((t.value(y).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((t.value(y).data()[0] - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = t.constant(Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        let v = t.leaf(Tensor::new(vec![3, 1], vec![1.5, -2.0, 7.25]).unwrap());
        let y = t.matmul(eye, v).unwrap();
        assert_eq!(t.value(y).data(), &[1.5, -2.0, 7.25]);
    }

    #[test]
    fn maxpool_constant_image() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 2, 4, 6], 3.5));
        let y = t.maxpool2d(x, 2).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 2, 2, 3]);
        assert!(t.value(y).data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn square_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(x).data(), &[6.0]);
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 3, 4]));
        let y = t.sum(x);
        let g = t.backward(y).unwrap().wrt(x);
        assert_eq!(g.shape(), &[2, 3, 4]);
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unused_leaf_gets_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0));
        let unused = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(AdError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[4, 2]));
        let err = t.matmul(a, b).unwrap_err();
        assert!(err.to_string().starts_with("matmul"), "{}", err);
        let err = t.add(a, b).unwrap_err();
        assert!(err.to_string().starts_with("add"), "{}", err);
    }

    #[test]
    fn decay_factor_validated() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0));
        assert!(t.decay_hook(x, 1.0).is_err());
        assert!(t.decay_hook(x, 0.0).is_err());
        assert!(decay_state_gradient(&Tensor::scalar(1.0), 1.5).is_err());
        let g = decay_state_gradient(&Tensor::scalar(1.0), 0.4).unwrap();
        assert_eq!(g.data(), &[0.4]);
    }

    #[test]
    fn decay_near_one_leaves_gradient_nearly_unchanged() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let h = t.decay_hook(x, 1.0 - 1e-12).unwrap();
        let y = t.square(h).unwrap();
        let g = t.backward(y).unwrap().wrt(x).data()[0];
        assert!((g - 4.0).abs() < 1e-10);
    }

    #[test]
    fn decay_scales_by_power_of_steps() {
        // x_{k+1} = 2 x_k for three steps, with and without a hook per step.
        let run = |gamma: Option<f64>| {
            let mut t = Tape::new();
            let x0 = t.leaf(Tensor::scalar(1.0));
            let mut x = x0;
            for _ in 0..3 {
                if let Some(g) = gamma {
                    x = t.decay_hook(x, g).unwrap();
                }
                x = t.scale(x, 2.0);
            }
            t.backward(x).unwrap().wrt(x0).data()[0]
        };
        let plain = run(None);
        let decayed = run(Some(0.4));
        assert_eq!(plain, 8.0);
        assert!((decayed - 8.0 * 0.4f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn circular_conv_wraps_columns() {
        // 1×3 kernel [1, 0, 0] picks the left neighbour, which wraps at column 0.
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1, 1, 4], vec![1., 2., 3., 4.]).unwrap());
        let w = t.constant(Tensor::new(vec![1, 1, 1, 3], vec![1., 0., 0.]).unwrap());
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv2d_circular(x, w, b, [1, 1]).unwrap();
        assert_eq!(t.value(y).data(), &[4., 1., 2., 3.]);
    }

    #[test]
    fn conv_vertical_padding_is_zero() {
        // 3×1 kernel of ones on a 2-row image: edge rows see one zero row.
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1, 2, 1], vec![1., 10.]).unwrap());
        let w = t.constant(Tensor::new(vec![1, 1, 3, 1], vec![1., 1., 1.]).unwrap());
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv2d_circular(x, w, b, [1, 1]).unwrap();
        assert_eq!(t.value(y).data(), &[11., 11.]);
    }

    #[test]
    fn clamp_norm_limits_rows() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[[3.0, 4.0, 0.0], [0.1, 0.0, 0.0]]));
        let y = t.clamp_norm_rows(x, 1.0).unwrap();
        let v = t.value(y).data();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(v[3], 0.1);
    }

    #[test]
    fn approach_speed_cases() {
        let mut t = Tape::new();
        // Head-on at 1 m/s each, receding, and perpendicular at closest approach.
        let rel_p = t.constant(Tensor::from_rows(&[[-2.0, 0.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 1.0, 0.0]]));
        let rel_v = t.constant(Tensor::from_rows(&[[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0], [1.0, 0.0, 0.0]]));
        let s = t.approach_speed(rel_p, rel_v, &[[1.0, 0.0, 0.0]; 3]).unwrap();
        assert_eq!(t.value(s).data(), &[2.0, 0.0, 0.0]);
    }
}
