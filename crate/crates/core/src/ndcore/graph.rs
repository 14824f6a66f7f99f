use std::borrow::Cow;

use rand::{Rng, RngCore};

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Ln { input: Var, lo: f64, hi: f64 },
    Softplus { input: Var, cap: f64 },
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Transpose(Var),
    Slice { input: Var, start: usize },
    Dropout { input: Var, mask: Vec<f64> },
    Sum(Var),
    Dot(Var, Var),
    Cosine(Var, Var),
    Normalize(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::Ln { .. } => "ln",
            Op::Softplus { .. } => "softplus",
            Op::Concat(_) => "concat",
            Op::Stack(_) => "stack",
            Op::Transpose(_) => "transpose",
            Op::Slice { .. } => "slice",
            Op::Dropout { .. } => "dropout",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::Cosine(..) => "cosine_similarity",
            Op::Normalize(_) => "l2_normalize",
        }
    }
}

#[derive(Debug)]
struct Node<'a> {
    op: Op,
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    requires_grad: bool,
}

/// The primitive kinds exposed through [`Graph::apply`].
pub enum Primitive<'r> {
    MatMul,
    Add,
    Tanh,
    Sigmoid,
    Softmax,
    Concat,
    Dropout {
        keep: f64,
        train: bool,
        rng: &'r mut dyn RngCore,
    },
    Scale(f64),
}

/// Tape of executed primitives. Nodes are appended in execution order, so
/// the node list is always topologically sorted.
///
/// Leaves borrow their values from the caller's tensors, so binding large
/// parameter matrices costs nothing.
#[derive(Debug)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    check_finite: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the NaN/Inf guard run after every primitive.
    /// On by default in debug builds only.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Binds a tensor as a leaf. Gradients flow to it iff the tensor
    /// requires them.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.values()),
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that owns its values; used for finite-difference perturbations
    /// and for detached intermediate results fed into a second graph.
    pub fn owned_leaf(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if shape.is_empty() || numel(&shape) != values.len() {
            return Err(Error::shape("leaf", &[&shape, &[values.len()]]));
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            shape,
            value: Cow::Owned(values),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        let shape = vec![values.len()];
        self.owned_leaf(shape, values, false)
            .expect("constant vector must be nonempty")
    }

    pub fn constant_ref(&mut self, values: &'a [f64]) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: vec![values.len()],
            value: Cow::Borrowed(values),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len());
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Dot(a, b)
            | Op::Cosine(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Normalize(a) => self.requires_grad(*a),
            Op::Ln { input, .. }
            | Op::Softplus { input, .. }
            | Op::Slice { input, .. }
            | Op::Dropout { input, .. } => {
                self.requires_grad(*input)
            }
            Op::Concat(vs) | Op::Stack(vs) => vs.iter().any(|v| self.requires_grad(*v)),
        };
        self.nodes.push(Node {
            op,
            shape,
            value: Cow::Owned(value),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Generic dispatch over the core primitive kinds.
    pub fn apply(&mut self, kind: Primitive<'_>, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize, op: &'static str| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{op} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match kind {
            Primitive::MatMul => {
                arity(2, "matmul")?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                arity(2, "add")?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Tanh => {
                arity(1, "tanh")?;
                self.tanh(inputs[0])
            }
            Primitive::Sigmoid => {
                arity(1, "sigmoid")?;
                self.sigmoid(inputs[0])
            }
            Primitive::Softmax => {
                arity(1, "softmax")?;
                self.softmax(inputs[0])
            }
            Primitive::Concat => self.concat(inputs),
            Primitive::Dropout { keep, train, rng } => {
                arity(1, "dropout")?;
                self.dropout(inputs[0], keep, train, rng)
            }
            Primitive::Scale(c) => {
                arity(1, "scale")?;
                self.scale(inputs[0], c)
            }
        }
    }

    /// `[m,k]·[k] -> [m]` or `[m,k]·[k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let err = || Error::shape("matmul", &[sa, sb]);
        if sa.len() != 2 {
            return Err(err());
        }
        let (m, k) = (sa[0], sa[1]);
        let av = self.value(a);
        let bv = self.value(b);
        let (shape, out) = match sb.len() {
            1 if sb[0] == k => {
                let out: Vec<f64> = av.chunks_exact(k).map(|row| dot_slice(row, bv)).collect();
                (vec![m], out)
            }
            2 if sb[0] == k => {
                let n = sb[1];
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (o, bpj) in orow.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                            *o += aip * bpj;
                        }
                    }
                }
                (vec![m, n], out)
            }
            _ => return Err(err()),
        };
        self.push(Op::MatMul(a, b), shape, out)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, out)
    }

    fn map(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(Op::Scale(a, c), a, |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(Op::AddScalar(a), a, |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Tanh(a), a, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Sigmoid(a), a, sigmoid)
    }

    /// `max(0, x)` elementwise.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(Op::Relu(a), a, |x| x.max(0.0))
    }

    /// Natural log of the input clamped to `[lo, hi]`.
    pub fn ln_clamped(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("ln clamp range [{lo}, {hi}]")));
        }
        self.map(Op::Ln { input: a, lo, hi }, a, |x| x.clamp(lo, hi).ln())
    }

    /// `min(ln(1 + eˣ), cap)` elementwise, computed without overflow or
    /// cancellation. The gradient is zero where the cap is active.
    pub fn softplus_capped(&mut self, a: Var, cap: f64) -> Result<Var> {
        if !(cap > 0.0) {
            return Err(Error::InvalidArgument(format!("softplus cap {cap}")));
        }
        self.map(Op::Softplus { input: a, cap }, a, |x| softplus(x).min(cap))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = *shape.last().expect("nonempty shape");
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(Op::Softmax(a), shape, out)
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() || parts.iter().any(|p| self.shape(*p).len() != 1) {
            let shapes: Vec<&[usize]> = parts.iter().map(|p| self.shape(*p)).collect();
            return Err(Error::shape("concat", &shapes));
        }
        let out: Vec<f64> = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        let n = out.len();
        self.push(Op::Concat(parts.to_vec()), vec![n], out)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows.first().map(|r| self.shape(*r).to_vec());
        let ok = match &first {
            Some(s) if s.len() == 1 => rows.iter().all(|r| self.shape(*r) == s.as_slice()),
            _ => false,
        };
        if !ok {
            let shapes: Vec<&[usize]> = rows.iter().map(|p| self.shape(*p)).collect();
            return Err(Error::shape("stack", &shapes));
        }
        let n = first.unwrap()[0];
        let out: Vec<f64> = rows.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        self.push(Op::Stack(rows.to_vec()), vec![rows.len(), n], out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", &[s]));
        }
        let (m, n) = (s[0], s[1]);
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.push(Op::Transpose(a), vec![n, m], out)
    }

    /// Contiguous sub-vector `[start, start+len)`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::shape("slice", &[s, &[start, len]]));
        }
        let out = self.value(a)[start..start + len].to_vec();
        self.push(Op::Slice { input: a, start }, vec![len], out)
    }

    /// Inverted dropout: surviving units are scaled by `1/keep` so that
    /// evaluation mode is the identity (and returns the input node itself).
    pub fn dropout<R: RngCore + ?Sized>(&mut self, a: Var, keep: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::InvalidArgument(format!("dropout keep-probability {keep}")));
        }
        if !train || keep == 1.0 {
            return Ok(a);
        }
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Dropout { input: a, mask }, shape, out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).iter().sum();
        self.push(Op::Sum(a), vec![1], vec![s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::shape("dot", &[self.shape(a), self.shape(b)]));
        }
        self.same_shape("dot", a, b)?;
        let d = dot_slice(self.value(a), self.value(b));
        self.push(Op::Dot(a, b), vec![1], vec![d])
    }

    /// Differentiable cosine similarity of two vectors.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::shape("cosine_similarity", &[self.shape(a), self.shape(b)]));
        }
        self.same_shape("cosine_similarity", a, b)?;
        let s = super::tensor::cosine(self.value(a), self.value(b))?;
        self.push(Op::Cosine(a, b), vec![1], vec![s])
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::shape("l2_normalize", &[self.shape(a)]));
        }
        let out = super::tensor::l2_normalize(self.value(a))?;
        let shape = self.shape(a).to_vec();
        self.push(Op::Normalize(a), shape, out)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Reverse pass seeded with an explicit upstream gradient for `output`.
    pub fn backward_from(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        if seed.len() != self.value(output).len() {
            return Err(Error::shape("backward", &[self.shape(output), &[seed.len()]]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.to_vec());
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = self.shape(*a);
                let (m, k) = (sa[0], sa[1]);
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = if self.shape(*b).len() == 1 { 1 } else { self.shape(*b)[1] };
                if self.requires_grad(*a) {
                    let da = slot(grads, *a, m * k);
                    // da = g · bᵀ
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let drow = &mut da[i * k..(i + 1) * k];
                        for p in 0..k {
                            drow[p] += dot_slice(grow, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let db = slot(grads, *b, k * n);
                    // db = aᵀ · g
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            for (d, gij) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * gij;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, g.iter().zip(bv).map(|(g, b)| g * b));
                self.acc(grads, *b, g.iter().zip(av).map(|(g, a)| g * a));
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.iter().map(|x| c * x)),
            Op::AddScalar(a) => self.acc(grads, *a, g.iter().copied()),
            Op::Tanh(a) => self.acc(grads, *a, g.iter().zip(y.iter()).map(|(g, y)| g * (1.0 - y * y))),
            Op::Sigmoid(a) => self.acc(grads, *a, g.iter().zip(y.iter()).map(|(g, y)| g * y * (1.0 - y))),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }))
            }
            Op::Softplus { input, cap } => {
                let x = self.value(*input);
                self.acc(
                    grads,
                    *input,
                    g.iter()
                        .zip(x)
                        .map(|(g, x)| if softplus(*x) < *cap { g * sigmoid(*x) } else { 0.0 }),
                )
            }
            Op::Ln { input, lo, hi } => {
                let x = self.value(*input);
                self.acc(
                    grads,
                    *input,
                    g.iter()
                        .zip(x)
                        .map(|(g, x)| if *x >= *lo && *x <= *hi { g / x } else { 0.0 }),
                )
            }
            Op::Softmax(a) => {
                let width = *node.shape.last().unwrap();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks_exact(width).zip(g.chunks_exact(width)) {
                    let inner = dot_slice(yr, gr);
                    dx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - inner)));
                }
                self.acc(grads, *a, dx.into_iter());
            }
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.acc(grads, *p, g[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (m, n) = (s[0], s[1]);
                // output is [n, m]; out[j*m+i] = a[i*n+j]
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                self.acc(grads, *a, dx.into_iter());
            }
            Op::Slice { input, start } => {
                if self.requires_grad(*input) {
                    let n = self.value(*input).len();
                    let d = slot(grads, *input, n);
                    for (dst, src) in d[*start..*start + g.len()].iter_mut().zip(g) {
                        *dst += src;
                    }
                }
            }
            Op::Dropout { input, mask } => {
                self.acc(grads, *input, g.iter().zip(mask).map(|(g, m)| g * m))
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, std::iter::repeat_n(g[0], n));
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, bv.iter().map(|b| g[0] * b));
                self.acc(grads, *b, av.iter().map(|a| g[0] * a));
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let na = dot_slice(av, av).sqrt();
                let nb = dot_slice(bv, bv).sqrt();
                let s = dot_slice(av, bv) / (na * nb);
                let inv = 1.0 / (na * nb);
                self.acc(
                    grads,
                    *a,
                    av.iter().zip(bv).map(|(x, y)| g[0] * (y * inv - s * x / (na * na))),
                );
                self.acc(
                    grads,
                    *b,
                    av.iter().zip(bv).map(|(x, y)| g[0] * (x * inv - s * y / (nb * nb))),
                );
            }
            Op::Normalize(a) => {
                let x = self.value(*a);
                let n = dot_slice(x, x).sqrt();
                let yg = dot_slice(y, g);
                self.acc(grads, *a, y.iter().zip(g).map(|(y, g)| (g - y * yg) / n));
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: impl Iterator<Item = f64>) {
        if !self.requires_grad(v) {
            return;
        }
        let n = self.value(v).len();
        for (d, x) in slot(grads, v, n).iter_mut().zip(delta) {
            *d += x;
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of a reverse pass: one optional gradient buffer per node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. `v`, zero-filled when nothing reached it.
    pub fn wrt(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

/// Runs the reverse pass from `loss` and returns one gradient buffer per
/// binding, in binding order. Parameters the loss does not depend on get
/// exactly zero. The caller adds these into its tensors (see
/// [`Tensor::accumulate_grad`]) once the graph's borrows are released.
pub fn reverse_accumulate(graph: &Graph<'_>, loss: Var, bindings: &[Var]) -> Result<Vec<Vec<f64>>> {
    let grads = graph.backward(loss)?;
    Ok(bindings
        .iter()
        .map(|v| grads.wrt(*v, graph.value(*v).len()))
        .collect())
}
