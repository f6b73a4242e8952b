use std::sync::Arc;

use super::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Neg(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Affine(Var, Var, Var),
    ScaleRows(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Swish(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    LogSumExpAxis(Var, usize),
    L1(Var),
    L2(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Reshape(Var),
    PairwiseGaussian(Var, Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation record.
///
/// Every operation appends a node whose operands already exist, so the node
/// list is a topological order. A graph supports exactly one backward pass.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    checked: bool,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Split a shape around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `c = a · b` for row-major matrices with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover the strided index
    // ranges implied by (m, k, n) and the strides; `c` is row-major m x n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            checked: true,
            consumed: false,
        }
    }

    /// Disable NaN/Inf and log-domain checks.
    pub fn unchecked() -> Self {
        Self {
            checked: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.data(v)[0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an input. Gradients are tracked when `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let t = Tensor::from_arc(tensor.shape().to_vec(), Arc::clone(tensor.arc()));
        let rg = tensor.requires_grad;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a parameter, tracking its gradient only when `track` is set.
    pub fn param(&mut self, tensor: &Tensor, track: bool) -> Var {
        self.nodes.push(Node {
            value: Tensor::from_arc(tensor.shape().to_vec(), Arc::clone(tensor.arc())),
            op: Op::Leaf,
            requires_grad: track,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant (never differentiated).
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node {
            value: Tensor::from_arc(tensor.shape().to_vec(), Arc::clone(tensor.arc())),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a differentiable input from raw parts.
    pub fn variable(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?.with_grad();
        Ok(self.leaf(&t))
    }

    fn unary(&mut self, x: Var, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = &self.node(x).value;
        let data: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::from_arc(xv.shape().to_vec(), Arc::new(data));
        let rg = self.rg(x);
        self.push(t, op, rg, name)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        same_shape(name, av, bv)?;
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_arc(av.shape().to_vec(), Arc::new(data));
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", Op::Div(a, b), |x, y| x / y)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, "add_scalar", Op::AddScalar(x), |v| v + c)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, "mul_scalar", Op::MulScalar(x, c), |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "neg", Op::Neg(x), |v| -v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "tanh", Op::Tanh(x), f64::tanh)
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "swish", Op::Swish(x), |v| v * sigmoid(v))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "softplus", Op::Softplus(x), softplus)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.checked {
            if let Some(&bad) = self.data(x).iter().find(|&&v| v <= 0.0) {
                return Err(TensorError::LogDomain { value: bad });
            }
        }
        self.unary(x, "log", Op::Log(x), f64::ln)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "exp", Op::Exp(x), f64::exp)
    }

    /// Square root; the derivative at zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.checked {
            if let Some(&bad) = self.data(x).iter().find(|&&v| v < 0.0) {
                return Err(TensorError::BadArgument {
                    op: "sqrt",
                    message: format!("negative operand {bad}"),
                });
            }
        }
        self.unary(x, "sqrt", Op::Sqrt(x), f64::sqrt)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "square", Op::Square(x), |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "abs", Op::Abs(x), f64::abs)
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, "clamp", Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg, "mean")
    }

    /// Sum of absolute values.
    pub fn l1_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().map(|v| v.abs()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::L1(x), rg, "l1_norm")
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::L2(x), rg, "l2_norm")
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s: Vec<usize> = shape.iter().copied().enumerate().filter(|&(i, _)| i != axis).map(|(_, v)| v).collect();
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    fn check_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(TensorError::BadArgument {
                op,
                message: format!("axis {axis} out of range for shape {:?}", self.shape(x)),
            });
        }
        Ok(())
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "sum_axis")?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_extents(&shape, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let t = Tensor::from_arc(Self::reduced_shape(&shape, axis), Arc::new(out));
        let rg = self.rg(x);
        self.push(t, Op::SumAxis(x, axis), rg, "sum_axis")
    }

    /// Numerically stable `ln Σ exp` over one axis, removing it.
    pub fn logsumexp_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "logsumexp_axis")?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_extents(&shape, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| d[(o * len + l) * inner + i];
                let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..len).map(|l| (at(l) - m).exp()).sum();
                out[o * inner + i] = m + s.ln();
            }
        }
        let t = Tensor::from_arc(Self::reduced_shape(&shape, axis), Arc::new(out));
        let rg = self.rg(x);
        self.push(t, Op::LogSumExpAxis(x, axis), rg, "logsumexp_axis")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), k as isize, 1, self.data(b), n as isize, 1, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_arc(vec![m, n], Arc::new(out)), Op::Matmul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::BadArgument {
                op: "transpose",
                message: format!("expected rank 2, got {s:?}"),
            });
        }
        let (r, c) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::from_arc(vec![c, r], Arc::new(out)), Op::Transpose(x), rg, "transpose")
    }

    /// `x · w + b` with `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: sx,
                rhs: sw,
            });
        }
        if sb != [sw[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "affine(bias)",
                lhs: vec![sw[1]],
                rhs: sb,
            });
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let bias = self.data(b);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm(m, k, n, self.data(x), k as isize, 1, self.data(w), n as isize, 1, 1.0, &mut out);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::from_arc(vec![m, n], Arc::new(out)), Op::Affine(x, w, b), rg, "affine")
    }

    /// Multiply row `i` of `x: [rows, cols]` by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x).to_vec(), self.shape(s).to_vec());
        if sx.len() != 2 || ss != [sx[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: sx,
                rhs: ss,
            });
        }
        let cols = sx[1];
        let (xd, sd) = (self.data(x), self.data(s));
        let out: Vec<f64> = xd.iter().enumerate().map(|(i, &v)| v * sd[i / cols]).collect();
        let rg = self.rg(x) || self.rg(s);
        self.push(Tensor::from_arc(sx, Arc::new(out)), Op::ScaleRows(x, s), rg, "scale_rows")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(&p) => self.shape(p).to_vec(),
            None => {
                return Err(TensorError::BadArgument {
                    op: "concat",
                    message: "no operands".into(),
                })
            }
        };
        if axis >= first.len() {
            return Err(TensorError::BadArgument {
                op: "concat",
                message: format!("axis {axis} out of range for {first:?}"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let d = self.data(p);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_arc(shape, Arc::new(out)), Op::Concat(parts.to_vec(), axis), rg, "concat")
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis(x, axis, "slice")?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::BadArgument {
                op: "slice",
                message: format!("range {start}..{} out of bounds for axis of size {}", start + len, shape[axis]),
            });
        }
        let (outer, full, inner) = axis_extents(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(x);
        self.push(Tensor::from_arc(new_shape, Arc::new(out)), Op::Slice(x, axis, start), rg, "slice")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push(Tensor::from_arc(t.shape().to_vec(), Arc::clone(t.arc())), Op::Reshape(x), rg, "reshape")
    }

    /// Log-density of every sample under every diagonal Gaussian:
    /// `out[i, j, k] = ln N(z[i,k]; mu[j,k], exp(logvar[j,k]))`,
    /// shaped `[batch, batch, dim]`.
    pub fn pairwise_gaussian_log_density(&mut self, z: Var, mu: Var, logvar: Var) -> Result<Var> {
        let (sz, sm, sl) = (self.shape(z).to_vec(), self.shape(mu).to_vec(), self.shape(logvar).to_vec());
        if sz.len() != 2 || sz != sm || sz != sl {
            return Err(TensorError::ShapeMismatch {
                op: "pairwise_gaussian_log_density",
                lhs: sz,
                rhs: if sm != sl { sl } else { sm },
            });
        }
        let (b, d) = (sz[0], sz[1]);
        let (zd, md, ld) = (self.data(z), self.data(mu), self.data(logvar));
        let mut out = vec![0.0; b * b * d];
        for i in 0..b {
            for j in 0..b {
                for k in 0..d {
                    let diff = zd[i * d + k] - md[j * d + k];
                    let lv = ld[j * d + k];
                    out[(i * b + j) * d + k] = -0.5 * (LN_2PI + lv + diff * diff * (-lv).exp());
                }
            }
        }
        let rg = self.rg(z) || self.rg(mu) || self.rg(logvar);
        self.push(
            Tensor::from_arc(vec![b, b, d], Arc::new(out)),
            Op::PairwiseGaussian(z, mu, logvar),
            rg,
            "pairwise_gaussian_log_density",
        )
    }

    /// Gradient of the last backward pass for `v`, if it was tracked.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copy the gradient of `v` onto a parameter tensor's grad slot.
    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grad(v)
            .map(|g| Tensor::from_arc(self.shape(v).to_vec(), Arc::new(g.to_vec())))
    }

    /// Move each leaf's gradient into the matching parameter.
    pub fn write_grads(&mut self, pairs: &mut [(&mut Tensor, Var)]) {
        for (t, v) in pairs.iter_mut() {
            t.grad = self.grads.get_mut(v.0).and_then(Option::take);
        }
    }

    /// Reverse-mode pass from a scalar `loss`. Gradients of leaves that
    /// require them are retained; intermediate gradients are dropped.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;

        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(&contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let map1 = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            val(x)
                .iter()
                .zip(out)
                .zip(g)
                .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                .collect()
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if rg(*a) {
                    acc(*a, g.to_vec());
                }
                if rg(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    acc(*a, g.to_vec());
                }
                if rg(*b) {
                    acc(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(gi, bi)| gi * bi).collect());
                }
                if rg(*b) {
                    acc(*b, g.iter().zip(val(*a)).map(|(gi, ai)| gi * ai).collect());
                }
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                if rg(*a) {
                    acc(*a, g.iter().zip(bd).map(|(gi, bi)| gi / bi).collect());
                }
                if rg(*b) {
                    acc(
                        *b,
                        g.iter()
                            .zip(ad.iter().zip(bd))
                            .map(|(gi, (ai, bi))| -gi * ai / (bi * bi))
                            .collect(),
                    );
                }
            }
            Op::AddScalar(x) => acc(*x, g.to_vec()),
            Op::MulScalar(x, c) => acc(*x, g.iter().map(|gi| gi * c).collect()),
            Op::Neg(x) => acc(*x, g.iter().map(|gi| -gi).collect()),
            Op::Sigmoid(x) => acc(*x, map1(*x, &|_, y, gi| gi * y * (1.0 - y))),
            Op::Tanh(x) => acc(*x, map1(*x, &|_, y, gi| gi * (1.0 - y * y))),
            Op::Swish(x) => acc(
                *x,
                map1(*x, &|xi, _, gi| {
                    let s = sigmoid(xi);
                    gi * (s + xi * s * (1.0 - s))
                }),
            ),
            Op::Softplus(x) => acc(*x, map1(*x, &|xi, _, gi| gi * sigmoid(xi))),
            Op::Log(x) => acc(*x, map1(*x, &|xi, _, gi| gi / xi)),
            Op::Exp(x) => acc(*x, map1(*x, &|_, y, gi| gi * y)),
            Op::Sqrt(x) => acc(*x, map1(*x, &|_, y, gi| if y > 0.0 { gi * 0.5 / y } else { 0.0 })),
            Op::Square(x) => acc(*x, map1(*x, &|xi, _, gi| 2.0 * xi * gi)),
            Op::Abs(x) => acc(*x, map1(*x, &|xi, _, gi| gi * sign(xi))),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(*x, map1(*x, &|xi, _, gi| if xi >= lo && xi <= hi { gi } else { 0.0 }))
            }
            Op::Sum(x) => acc(*x, vec![g[0]; val(*x).len()]),
            Op::Mean(x) => {
                let n = val(*x).len();
                acc(*x, vec![g[0] / n as f64; n])
            }
            Op::L1(x) => acc(*x, val(*x).iter().map(|&v| g[0] * sign(v)).collect()),
            Op::L2(x) => {
                let norm = out[0];
                let c = if norm > 0.0 { g[0] / norm } else { 0.0 };
                acc(*x, val(*x).iter().map(|&v| c * v).collect())
            }
            Op::SumAxis(x, axis) => {
                let (outer, len, inner) = axis_extents(self.nodes[x.0].value.shape(), *axis);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gx[(o * len + l) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                acc(*x, gx)
            }
            Op::LogSumExpAxis(x, axis) => {
                let (outer, len, inner) = axis_extents(self.nodes[x.0].value.shape(), *axis);
                let xd = val(*x);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            let at = (o * len + l) * inner + i;
                            let r = o * inner + i;
                            gx[at] = g[r] * (xd[at] - out[r]).exp();
                        }
                    }
                }
                acc(*x, gx)
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if rg(*a) {
                    // dA = dC · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, n as isize, 1, val(*b), 1, n as isize, 0.0, &mut ga);
                    acc(*a, ga);
                }
                if rg(*b) {
                    // dB = Aᵀ · dC
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(*a), 1, k as isize, g, n as isize, 1, 0.0, &mut gb);
                    acc(*b, gb);
                }
            }
            Op::Transpose(x) => {
                let s = self.nodes[x.0].value.shape();
                let (r, c) = (s[0], s[1]);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                acc(*x, gx)
            }
            Op::Affine(x, w, b) => {
                let (sx, sw) = (self.nodes[x.0].value.shape(), self.nodes[w.0].value.shape());
                let (m, k, n) = (sx[0], sx[1], sw[1]);
                if rg(*x) {
                    let mut gx = vec![0.0; m * k];
                    gemm(m, n, k, g, n as isize, 1, val(*w), 1, n as isize, 0.0, &mut gx);
                    acc(*x, gx);
                }
                if rg(*w) {
                    let mut gw = vec![0.0; k * n];
                    gemm(k, m, n, val(*x), 1, k as isize, g, n as isize, 1, 0.0, &mut gw);
                    acc(*w, gw);
                }
                if rg(*b) {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (acc_j, gj) in gb.iter_mut().zip(row) {
                            *acc_j += gj;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::ScaleRows(x, s) => {
                let cols = self.nodes[x.0].value.shape()[1];
                let (xd, sd) = (val(*x), val(*s));
                if rg(*x) {
                    acc(*x, g.iter().enumerate().map(|(i, gi)| gi * sd[i / cols]).collect());
                }
                if rg(*s) {
                    let gs = g
                        .chunks_exact(cols)
                        .zip(xd.chunks_exact(cols))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*s, gs);
                }
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let total = shape[*axis];
                let (outer, _, inner) = axis_extents(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    if rg(p) {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        acc(p, gp);
                    }
                    offset += len;
                }
            }
            Op::Slice(x, axis, start) => {
                let xs = self.nodes[x.0].value.shape();
                let (outer, full, inner) = axis_extents(xs, *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, gx)
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::PairwiseGaussian(z, mu, logvar) => {
                let s = self.nodes[z.0].value.shape();
                let (b, d) = (s[0], s[1]);
                let (zd, md, ld) = (val(*z), val(*mu), val(*logvar));
                let mut gz = vec![0.0; b * d];
                let mut gm = vec![0.0; b * d];
                let mut gl = vec![0.0; b * d];
                for i in 0..b {
                    for j in 0..b {
                        for k in 0..d {
                            let gi = g[(i * b + j) * d + k];
                            let diff = zd[i * d + k] - md[j * d + k];
                            let inv_var = (-ld[j * d + k]).exp();
                            gz[i * d + k] -= gi * diff * inv_var;
                            gm[j * d + k] += gi * diff * inv_var;
                            gl[j * d + k] += gi * 0.5 * (diff * diff * inv_var - 1.0);
                        }
                    }
                }
                acc(*z, gz);
                acc(*mu, gm);
                acc(*logvar, gl);
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
