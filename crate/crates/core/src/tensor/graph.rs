use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    MatMul(Var, Var),
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    Relu(Var),
    Log(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
    Sharpen(Var, F),
    StopGradient(#[allow(dead_code)] Var),
    BroadcastRows(Var),
    BroadcastChannels(Var),
    MeanPool2(Var),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScaleRows(Var, Vec<F>),
}

#[derive(Clone, Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    grad: Option<Tensor<F>>,
}

/// A single-use computation tape.
///
/// Nodes are appended in creation order, which is a topological order, so
/// the backward pass is a reverse scan. Leaf gradients accumulate across
/// repeated [`backward`](Graph::backward) calls until [`zero_grad`](Graph::zero_grad).
#[derive(Clone, Debug, Default)]
pub struct Graph<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

fn last_axis<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<usize> {
    match t.shape().last() {
        Some(&w) if w >= 2 => Ok(w),
        _ => Err(Error::InvalidShape {
            op,
            msg: format!("needs a trailing axis of at least 2, got {:?}", t.shape()),
        }),
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any path reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F, node: Op<F>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(value, node, &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, node: Op<F>) -> Var {
        let value = self.value(a).map(f);
        self.push(value, node, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, s: F) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.zip("mul", a, a, |x, y| x * y, Op::Mul(a, a))
            .expect("operand shapes trivially agree")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        kernels::matmul_into(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Stride-1 convolution with symmetric zero padding.
    ///
    /// `input: [N,C,H,W]`, `kernel: [O,C,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(Error::shape("conv2d", si, sk));
        }
        if si[2] + 2 * padding < sk[2] || si[3] + 2 * padding < sk[3] {
            return Err(Error::shape("conv2d", si, sk));
        }
        let geom = ConvGeom {
            batch: si[0],
            in_ch: si[1],
            height: si[2],
            width: si[3],
            out_ch: sk[0],
            kh: sk[2],
            kw: sk[3],
            pad: padding,
        };
        let out = kernels::conv_forward(&geom, self.value(input).data(), self.value(kernel).data());
        let value = Tensor::from_parts(vec![geom.batch, geom.out_ch, geom.out_h(), geom.out_w()], out);
        Ok(self.push(value, Op::Conv2d { input, kernel, geom }, &[input, kernel]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > F::zero() { x } else { F::zero() }, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, F::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, F::exp, Op::Exp(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().fold(F::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let total = v.data().iter().fold(F::zero(), |acc, &x| acc + x);
        let n = F::from_usize(v.len()).expect("length fits in a float");
        self.push(Tensor::scalar(total / n), Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidShape {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let tail = self.shape(first)[1..].to_vec();
        if self.shape(first).is_empty() {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: "cannot concatenate scalars".into(),
            });
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), parts))
    }

    fn check_finite(&self, op: &'static str, a: Var) -> Result<()> {
        if !self.value(a).all_finite() {
            return Err(Error::NonFinite { op });
        }
        Ok(())
    }

    /// Softmax over the trailing axis, stabilized by max subtraction.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let width = last_axis("softmax", self.value(logits))?;
        self.check_finite("softmax", logits)?;
        let v = self.value(logits);
        let value = Tensor::from_parts(v.shape().to_vec(), kernels::softmax_rows(v.data(), width));
        Ok(self.push(value, Op::Softmax(logits), &[logits]))
    }

    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let width = last_axis("log_softmax", self.value(logits))?;
        self.check_finite("log_softmax", logits)?;
        let v = self.value(logits);
        let value = Tensor::from_parts(v.shape().to_vec(), kernels::log_softmax_rows(v.data(), width));
        Ok(self.push(value, Op::LogSoftmax(logits), &[logits]))
    }

    /// Row-wise `p^(1/T) / Σ p^(1/T)` over the trailing axis.
    pub fn sharpen(&mut self, probs: Var, temperature: F) -> Result<Var> {
        if !(temperature > F::zero()) {
            return Err(Error::InvalidArgument(format!(
                "sharpen: temperature must be > 0, got {temperature}"
            )));
        }
        let width = last_axis("sharpen", self.value(probs))?;
        let v = self.value(probs);
        if v.data().iter().any(|&p| !(p >= F::zero()) || !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "sharpen: probabilities must be finite and non-negative".into(),
            ));
        }
        let inv_t = F::one() / temperature;
        let mut out = vec![F::zero(); v.len()];
        for (src, dst) in v.data().chunks(width).zip(out.chunks_mut(width)) {
            kernels::sharpen_row(src, inv_t, dst);
        }
        let value = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push(value, Op::Sharpen(probs, inv_t), &[probs]))
    }

    /// Identity on values; blocks every gradient path through it.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.nodes.push(Node {
            value,
            op: Op::StopGradient(a),
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Repeats a vector `[n]` as the rows of an `[rows, n]` matrix.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let s = self.shape(v);
        if s.len() != 1 || rows == 0 {
            return Err(Error::InvalidShape {
                op: "broadcast_rows",
                msg: format!("expected a vector and positive row count, got {s:?} x {rows}"),
            });
        }
        let row = self.value(v).data().to_vec();
        let mut data = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            data.extend_from_slice(&row);
        }
        let value = Tensor::from_parts(vec![rows, row.len()], data);
        Ok(self.push(value, Op::BroadcastRows(v), &[v]))
    }

    /// Expands a per-channel vector `[C]` to `[N,C,H,W]`.
    pub fn broadcast_channels(&mut self, v: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(v);
        if s.len() != 1 || shape.len() != 4 || shape[1] != s[0] {
            return Err(Error::shape("broadcast_channels", s, shape));
        }
        let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let src = self.value(v).data();
        let mut data = Vec::with_capacity(n * c * plane);
        for _ in 0..n {
            for &b in src.iter().take(c) {
                data.extend(std::iter::repeat_n(b, plane));
            }
        }
        let value = Tensor::from_parts(shape.to_vec(), data);
        Ok(self.push(value, Op::BroadcastChannels(v), &[v]))
    }

    /// 2×2 average pooling with stride 2 on `[N,C,H,W]` (H, W even).
    pub fn mean_pool2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(Error::InvalidShape {
                op: "mean_pool2",
                msg: format!("expected [N,C,H,W] with even H and W, got {s:?}"),
            });
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let quarter = F::from_f64_lossy(0.25);
        let src = self.value(a).data();
        let mut out = vec![F::zero(); planes * oh * ow];
        for p in 0..planes {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    out[(p * oh + y) * ow + x] = (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter;
                }
            }
        }
        let value = Tensor::from_parts(vec![s[0], s[1], oh, ow], out);
        Ok(self.push(value, Op::MeanPool2(a), &[a]))
    }

    /// Rows `start..end` along axis 0.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if v.rank() == 0 || start >= end || end > v.rows() {
            return Err(Error::InvalidShape {
                op: "slice_rows",
                msg: format!("range {start}..{end} out of bounds for {:?}", v.shape()),
            });
        }
        let w = v.row_len();
        let data = v.data()[start * w..end * w].to_vec();
        let mut shape = v.shape().to_vec();
        shape[0] = end - start;
        Ok(self.push(Tensor::from_parts(shape, data), Op::SliceRows(a, start), &[a]))
    }

    /// Selects rows by index along axis 0 (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if v.rank() == 0 || indices.is_empty() || indices.iter().any(|&i| i >= v.rows()) {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                msg: format!("indices out of bounds for {:?}", v.shape()),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * v.row_len());
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let mut shape = v.shape().to_vec();
        shape[0] = indices.len();
        let value = Tensor::from_parts(shape, data);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), &[a]))
    }

    /// Multiplies row `i` by the constant `weights[i]`.
    pub fn scale_rows(&mut self, a: Var, weights: &[F]) -> Result<Var> {
        let v = self.value(a);
        if v.rank() == 0 || weights.len() != v.rows() {
            return Err(Error::shape("scale_rows", v.shape(), &[weights.len()]));
        }
        let w = v.row_len();
        let data = v.data().iter().enumerate().map(|(i, &x)| x * weights[i / w]).collect();
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        Ok(self.push(value, Op::ScaleRows(a, weights.to_vec()), &[a]))
    }

    /// Reverse-mode sweep from a scalar output.
    ///
    /// Adds `∂output/∂leaf` into the gradient of every leaf that requires
    /// one. Intermediate gradients live only for the duration of the call.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.shape(output);
        if !out_shape.is_empty() {
            return Err(Error::NotScalar(out_shape.to_vec()));
        }
        if !self.requires_grad(output) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![F::one()]);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(existing) => {
                        for (e, d) in existing.data_mut().iter_mut().zip(&g) {
                            *e = *e + *d;
                        }
                    }
                    slot @ None => *slot = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                }
                continue;
            }
            let op = &self.nodes[id].op;
            let contributions = self.local_grads(id, op, &g);
            for (input, d) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, x) in acc.iter_mut().zip(&d) {
                            *a = *a + *x;
                        }
                    }
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of one node for each of its inputs.
    fn local_grads(&self, id: usize, op: &Op<F>, g: &[F]) -> Vec<(Var, Vec<F>)> {
        let out = &self.nodes[id].value;
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf | Op::StopGradient(_) => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&x| -x).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut res = Vec::with_capacity(2);
                if needs(*a) {
                    res.push((*a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect()));
                }
                if needs(*b) {
                    res.push((*b, g.iter().zip(va).map(|(&d, &x)| d * x).collect()));
                }
                res
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|&d| d * *s).collect())],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut res = Vec::with_capacity(2);
                if needs(*a) {
                    // dA = G · Bᵀ
                    let mut d = vec![F::zero(); m * k];
                    F::gemm(m, n, k, g, (n as isize, 1), val(*b), (1, n as isize), &mut d, false);
                    res.push((*a, d));
                }
                if needs(*b) {
                    // dB = Aᵀ · G
                    let mut d = vec![F::zero(); k * n];
                    F::gemm(k, m, n, val(*a), (1, k as isize), g, (n as isize, 1), &mut d, false);
                    res.push((*b, d));
                }
                res
            }
            Op::Conv2d { input, kernel, geom } => {
                let (di, dk) =
                    kernels::conv_backward(geom, val(*input), val(*kernel), g, needs(*input), needs(*kernel));
                let mut res = Vec::with_capacity(2);
                if let Some(d) = di {
                    res.push((*input, d));
                }
                if let Some(d) = dk {
                    res.push((*kernel, d));
                }
                res
            }
            Op::Relu(a) => vec![(
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&d, &x)| if x > F::zero() { d } else { F::zero() })
                    .collect(),
            )],
            Op::Log(a) => vec![(*a, g.iter().zip(val(*a)).map(|(&d, &x)| d / x).collect())],
            Op::Exp(a) => vec![(*a, g.iter().zip(out.data()).map(|(&d, &y)| d * y).collect())],
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::Mean(a) => {
                let n = F::from_usize(val(*a).len()).expect("length fits in a float");
                vec![(*a, vec![g[0] / n; val(*a).len()])]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let len = val(p).len();
                        let chunk = g[offset..offset + len].to_vec();
                        offset += len;
                        (p, chunk)
                    })
                    .collect()
            }
            Op::Softmax(a) => {
                let w = *out.shape().last().expect("softmax output has a trailing axis");
                let mut d = vec![F::zero(); g.len()];
                for ((s, gr), dr) in out.data().chunks(w).zip(g.chunks(w)).zip(d.chunks_mut(w)) {
                    let dot = s.iter().zip(gr).fold(F::zero(), |acc, (&si, &gi)| acc + si * gi);
                    for ((di, &si), &gi) in dr.iter_mut().zip(s).zip(gr) {
                        *di = si * (gi - dot);
                    }
                }
                vec![(*a, d)]
            }
            Op::LogSoftmax(a) => {
                let w = *out.shape().last().expect("log_softmax output has a trailing axis");
                let mut d = vec![F::zero(); g.len()];
                for ((y, gr), dr) in out.data().chunks(w).zip(g.chunks(w)).zip(d.chunks_mut(w)) {
                    let total = gr.iter().fold(F::zero(), |acc, &x| acc + x);
                    for ((di, &yi), &gi) in dr.iter_mut().zip(y).zip(gr) {
                        *di = gi - yi.exp() * total;
                    }
                }
                vec![(*a, d)]
            }
            Op::Sharpen(a, inv_t) => {
                // ∂s_i/∂p_j = (1/T)·s_i(δ_ij − s_j)/p_j
                let w = *out.shape().last().expect("sharpen output has a trailing axis");
                let mut d = vec![F::zero(); g.len()];
                for (((s, gr), p), dr) in out
                    .data()
                    .chunks(w)
                    .zip(g.chunks(w))
                    .zip(val(*a).chunks(w))
                    .zip(d.chunks_mut(w))
                {
                    let dot = s.iter().zip(gr).fold(F::zero(), |acc, (&si, &gi)| acc + si * gi);
                    for (((di, &sj), &gj), &pj) in dr.iter_mut().zip(s).zip(gr).zip(p) {
                        *di = if pj > F::zero() {
                            *inv_t * sj * (gj - dot) / pj
                        } else {
                            F::zero()
                        };
                    }
                }
                vec![(*a, d)]
            }
            Op::BroadcastRows(v) => {
                let n = val(*v).len();
                let mut d = vec![F::zero(); n];
                for row in g.chunks(n) {
                    for (di, &x) in d.iter_mut().zip(row) {
                        *di = *di + x;
                    }
                }
                vec![(*v, d)]
            }
            Op::BroadcastChannels(v) => {
                let s = out.shape();
                let (c, plane) = (s[1], s[2] * s[3]);
                let mut d = vec![F::zero(); c];
                for (i, chunk) in g.chunks(plane).enumerate() {
                    let total = chunk.iter().fold(F::zero(), |acc, &x| acc + x);
                    d[i % c] = d[i % c] + total;
                }
                vec![(*v, d)]
            }
            Op::MeanPool2(a) => {
                let s = self.shape(*a);
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = F::from_f64_lossy(0.25);
                let mut d = vec![F::zero(); planes * h * w];
                for p in 0..planes {
                    for y in 0..oh {
                        for x in 0..ow {
                            let share = g[(p * oh + y) * ow + x] * quarter;
                            let i = p * h * w + 2 * y * w + 2 * x;
                            d[i] = share;
                            d[i + 1] = share;
                            d[i + w] = share;
                            d[i + w + 1] = share;
                        }
                    }
                }
                vec![(*a, d)]
            }
            Op::SliceRows(a, start) => {
                let src = &self.nodes[a.0].value;
                let w = src.row_len();
                let mut d = vec![F::zero(); src.len()];
                d[start * w..start * w + g.len()].copy_from_slice(g);
                vec![(*a, d)]
            }
            Op::GatherRows(a, indices) => {
                let src = &self.nodes[a.0].value;
                let w = src.row_len();
                let mut d = vec![F::zero(); src.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..w {
                        d[i * w + j] = d[i * w + j] + g[r * w + j];
                    }
                }
                vec![(*a, d)]
            }
            Op::ScaleRows(a, weights) => {
                let w = out.row_len();
                vec![(*a, g.iter().enumerate().map(|(i, &d)| d * weights[i / w]).collect())]
            }
        }
    }
}
