use super::{Real, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Maximum,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    Affine { a: Var, scale: T },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Sum { a: Var, axis: Option<usize>, scale: T },
    Max { a: Var, argmax: Vec<usize> },
    Softmax(Var),
    LogSoftmax(Var),
    HardTanh { a: Var, lo: Tensor<T>, hi: Tensor<T> },
    GatherRows { a: Var, index: Vec<usize> },
    Pick { a: Var, index: Vec<usize> },
    SegmentSum { a: Var, segment: Vec<usize> },
    SegmentSoftmax { a: Var, segment: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in topological order for reverse-mode differentiation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients from [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `v`; zero if `v` has no influence.
    pub fn get(&self, v: Var) -> Tensor<T> {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> TensorError {
    TensorError::ShapeMismatch { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let one = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    Some((one(a.0, b.0)?, one(a.1, b.1)?))
}

/// Sums `g` (shape `out`) down to `target` dims along broadcast axes.
fn reduce_to<T: Real>(g: Vec<T>, out: (usize, usize), target: (usize, usize)) -> Vec<T> {
    if out == target {
        return g;
    }
    let mut r = vec![T::zero(); target.0 * target.1];
    for i in 0..out.0 {
        let ti = if target.0 == 1 { 0 } else { i };
        for j in 0..out.1 {
            let tj = if target.1 == 1 { 0 } else { j };
            r[ti * target.1 + tj] = r[ti * target.1 + tj] + g[i * out.1 + j];
        }
    }
    r
}

#[inline]
fn bidx(d: (usize, usize), i: usize, j: usize) -> usize {
    (if d.0 == 1 { 0 } else { i }) * d.1 + if d.1 == 1 { 0 } else { j }
}

fn log_clamp<T: Real>() -> T {
    T::from_f64(1e-12)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, x: T) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let x = &self.nodes[a.0].value;
        let f: fn(T) -> T = match kind {
            Unary::Sigmoid => |x: T| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            Unary::Tanh => |x: T| x.tanh(),
            Unary::Relu => |x: T| x.max(T::zero()),
            Unary::Exp => |x: T| x.exp(),
            Unary::Log => |x: T| x.max(log_clamp()).ln(),
            Unary::Sqrt => |x: T| x.max(T::zero()).sqrt(),
            Unary::Sin => |x: T| x.sin(),
            Unary::Cos => |x: T| x.cos(),
        };
        let value = Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| f(v)).collect() };
        self.push(value, Op::Unary(a, kind), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    /// Natural log with the input clamped below at 1e-12.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary, name: &'static str) -> Result<Var, TensorError> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (da, db) = (x.dims(), y.dims());
        let out = broadcast_dims(da, db).ok_or_else(|| mismatch(name, &[&x.shape, &y.shape]))?;
        let f: fn(T, T) -> T = match kind {
            Binary::Add => |p, q| p + q,
            Binary::Sub => |p, q| p - q,
            Binary::Mul => |p, q| p * q,
            Binary::Div => |p, q| p / q,
            Binary::Maximum => |p, q| if q > p { q } else { p },
        };
        let data: Vec<T> = if da == db {
            x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect()
        } else {
            let mut d = Vec::with_capacity(out.0 * out.1);
            for i in 0..out.0 {
                for j in 0..out.1 {
                    d.push(f(x.data[bidx(da, i, j)], y.data[bidx(db, i, j)]));
                }
            }
            d
        };
        let shape = if da == out {
            x.shape.clone()
        } else if db == out {
            y.shape.clone()
        } else {
            vec![out.0, out.1]
        };
        Ok(self.push(Tensor { shape, data }, Op::Binary(a, b, kind), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Div, "div")
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, Binary::Maximum, "maximum")
    }

    /// `scale * a + shift` with scalar constants.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let x = &self.nodes[a.0].value;
        let value = Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| scale * v + shift).collect() };
        self.push(value, Op::Affine { a, scale }, &[a])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.affine(a, s, T::zero())
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -T::one(), T::zero())
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -T::one(), T::one())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let ((m, k), (k2, n)) = (x.dims(), y.dims());
        if k != k2 {
            return Err(mismatch("matmul", &[&x.shape, &y.shape]));
        }
        let mut data = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), &x.data, k as isize, 1, &y.data, n as isize, 1, T::zero(), &mut data, n as isize, 1);
        Ok(self.push(Tensor::matrix(m, n, data), Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(x.data[i * c + j]);
            }
        }
        self.push(Tensor::matrix(c, r, data), Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        if shape.len() > 2 || shape.iter().product::<usize>() != x.len() {
            return Err(mismatch("reshape", &[&x.shape, shape]));
        }
        let value = Tensor { shape: shape.to_vec(), data: x.data.clone() };
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let shapes: Vec<&[usize]> = parts.iter().map(|v| self.shape(*v)).collect();
        let dims: Vec<(usize, usize)> = parts.iter().map(|v| self.dims(*v)).collect();
        if parts.is_empty() || axis > 1 {
            return Err(mismatch("concat", &shapes));
        }
        let value = if axis == 0 {
            let c = dims[0].1;
            if dims.iter().any(|d| d.1 != c) {
                return Err(mismatch("concat", &shapes));
            }
            let rows = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c);
            for v in parts {
                data.extend_from_slice(&self.nodes[v.0].value.data);
            }
            Tensor::matrix(rows, c, data)
        } else {
            let r = dims[0].0;
            if dims.iter().any(|d| d.0 != r) {
                return Err(mismatch("concat", &shapes));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r * cols);
            for i in 0..r {
                for (v, d) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.nodes[v.0].value.data[i * d.1..(i + 1) * d.1]);
                }
            }
            Tensor::matrix(r, cols, data)
        };
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        if start > end || end > r {
            return Err(mismatch("slice_rows", &[&x.shape, &[start, end]]));
        }
        let value = Tensor::matrix(end - start, c, x.data[start * c..end * c].to_vec());
        Ok(self.push(value, Op::SliceRows { a, start }, &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        if start > end || end > c {
            return Err(mismatch("slice_cols", &[&x.shape, &[start, end]]));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&x.data[i * c + start..i * c + end]);
        }
        Ok(self.push(Tensor::matrix(r, end - start, data), Op::SliceCols { a, start }, &[a]))
    }

    fn reduce(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        let (value, count) = match axis {
            None => (Tensor::scalar(x.data.iter().fold(T::zero(), |s, &v| s + v)), r * c),
            Some(0) => {
                let mut d = vec![T::zero(); c];
                for i in 0..r {
                    for (acc, &v) in d.iter_mut().zip(&x.data[i * c..(i + 1) * c]) {
                        *acc = *acc + v;
                    }
                }
                (Tensor::matrix(1, c, d), r)
            }
            Some(1) => {
                let d = (0..r).map(|i| x.data[i * c..(i + 1) * c].iter().fold(T::zero(), |s, &v| s + v)).collect();
                (Tensor::matrix(r, 1, d), c)
            }
            Some(_) => return Err(mismatch("sum", &[&x.shape])),
        };
        let scale = if mean { T::one() / T::from_f64(count.max(1) as f64) } else { T::one() };
        let value = if mean {
            Tensor { shape: value.shape, data: value.data.into_iter().map(|v| v * scale).collect() }
        } else {
            value
        };
        Ok(self.push(value, Op::Sum { a, axis, scale }, &[a]))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, None, false).expect("sum over all elements")
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(a, Some(axis), false)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, None, true).expect("mean over all elements")
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(a, Some(axis), true)
    }

    /// Maximum along `axis`; the first maximal element gets the gradient.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        let (value, argmax) = match axis {
            0 => {
                let mut best = vec![0usize; c];
                for (j, b) in best.iter_mut().enumerate() {
                    for i in 1..r {
                        if x.data[i * c + j] > x.data[*b * c + j] {
                            *b = i;
                        }
                    }
                }
                let d = best.iter().enumerate().map(|(j, &i)| x.data[i * c + j]).collect();
                let flat = best.iter().enumerate().map(|(j, &i)| i * c + j).collect();
                (Tensor::matrix(1, c, d), flat)
            }
            1 => {
                let mut flat = Vec::with_capacity(r);
                for i in 0..r {
                    let row = &x.data[i * c..(i + 1) * c];
                    let mut b = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[b] {
                            b = j;
                        }
                    }
                    flat.push(i * c + b);
                }
                let d = flat.iter().map(|&k| x.data[k]).collect();
                (Tensor::matrix(r, 1, d), flat)
            }
            _ => return Err(mismatch("max", &[&x.shape])),
        };
        if r == 0 || c == 0 {
            return Err(mismatch("max", &[&x.shape]));
        }
        Ok(self.push(value, Op::Max { a, argmax }, &[a]))
    }

    /// Softmax over each row.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = row_softmax(&self.nodes[a.0].value, false);
        self.push(value, Op::Softmax(a), &[a])
    }

    /// Log-softmax over each row.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = row_softmax(&self.nodes[a.0].value, true);
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    /// Clamps each element to `[lo, hi]`; bounds broadcast like [`Tape::add`].
    /// The gradient is 1 on the closed interval and 0 outside.
    pub fn hard_tanh(&mut self, a: Var, lo: &Tensor<T>, hi: &Tensor<T>) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let d = x.dims();
        for b in [lo, hi] {
            if broadcast_dims(d, b.dims()) != Some(d) {
                return Err(mismatch("hard_tanh", &[&x.shape, &b.shape]));
            }
        }
        let (dl, dh) = (lo.dims(), hi.dims());
        let mut data = Vec::with_capacity(x.len());
        for i in 0..d.0 {
            for j in 0..d.1 {
                let v = x.data[i * d.1 + j];
                data.push(v.max(lo.data[bidx(dl, i, j)]).min(hi.data[bidx(dh, i, j)]));
            }
        }
        let value = Tensor { shape: x.shape.clone(), data };
        Ok(self.push(value, Op::HardTanh { a, lo: lo.clone(), hi: hi.clone() }, &[a]))
    }

    /// Rows `index[k]` of `a`, stacked.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: i, len: r });
            }
            data.extend_from_slice(&x.data[i * c..(i + 1) * c]);
        }
        let value = Tensor::matrix(index.len(), c, data);
        Ok(self.push(value, Op::GatherRows { a, index: index.to_vec() }, &[a]))
    }

    /// Element `a[i, index[i]]` of each row, as an `r x 1` column.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        if index.len() != r {
            return Err(mismatch("pick", &[&x.shape, &[index.len()]]));
        }
        let mut data = Vec::with_capacity(r);
        for (i, &j) in index.iter().enumerate() {
            if j >= c {
                return Err(TensorError::IndexOutOfRange { op: "pick", index: j, len: c });
            }
            data.push(x.data[i * c + j]);
        }
        let value = Tensor::matrix(r, 1, data);
        Ok(self.push(value, Op::Pick { a, index: index.to_vec() }, &[a]))
    }

    /// Sums rows of `a` into `segments` output rows; row `i` goes to `segment[i]`.
    pub fn segment_sum(&mut self, a: Var, segment: &[usize], segments: usize) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        if segment.len() != r {
            return Err(mismatch("segment_sum", &[&x.shape, &[segment.len()]]));
        }
        let mut data = vec![T::zero(); segments * c];
        for (i, &s) in segment.iter().enumerate() {
            if s >= segments {
                return Err(TensorError::IndexOutOfRange { op: "segment_sum", index: s, len: segments });
            }
            for j in 0..c {
                data[s * c + j] = data[s * c + j] + x.data[i * c + j];
            }
        }
        let value = Tensor::matrix(segments, c, data);
        Ok(self.push(value, Op::SegmentSum { a, segment: segment.to_vec() }, &[a]))
    }

    /// Softmax over the rows sharing a segment, separately per column.
    pub fn segment_softmax(&mut self, a: Var, segment: &[usize], segments: usize) -> Result<Var, TensorError> {
        let x = &self.nodes[a.0].value;
        let (r, c) = x.dims();
        if segment.len() != r {
            return Err(mismatch("segment_softmax", &[&x.shape, &[segment.len()]]));
        }
        if let Some(&s) = segment.iter().find(|&&s| s >= segments) {
            return Err(TensorError::IndexOutOfRange { op: "segment_softmax", index: s, len: segments });
        }
        let mut max = vec![T::neg_infinity(); segments * c];
        for (i, &s) in segment.iter().enumerate() {
            for j in 0..c {
                max[s * c + j] = max[s * c + j].max(x.data[i * c + j]);
            }
        }
        let mut data: Vec<T> = Vec::with_capacity(r * c);
        let mut total = vec![T::zero(); segments * c];
        for (i, &s) in segment.iter().enumerate() {
            for j in 0..c {
                let e = (x.data[i * c + j] - max[s * c + j]).exp();
                total[s * c + j] = total[s * c + j] + e;
                data.push(e);
            }
        }
        for (i, &s) in segment.iter().enumerate() {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] / total[s * c + j];
            }
        }
        let value = Tensor { shape: x.shape.clone(), data };
        Ok(self.push(value, Op::SegmentSoftmax { a, segment: segment.to_vec() }, &[a]))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, TensorError> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(TensorError::NonScalarRoot(rv.shape.clone()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor { shape: rv.shape.clone(), data: vec![T::one()] });
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, data: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, b) in t.data.iter_mut().zip(data) {
                        *a = *a + b;
                    }
                }
                slot @ None => *slot = Some(Tensor { shape: self.nodes[v.0].value.shape.clone(), data }),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(a, kind) => {
                let x = val(*a);
                let d: Vec<T> = match kind {
                    Unary::Sigmoid => g.data.iter().zip(&y.data).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
                    Unary::Tanh => g.data.iter().zip(&y.data).map(|(&g, &y)| g * (T::one() - y * y)).collect(),
                    Unary::Relu => {
                        g.data.iter().zip(&x.data).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect()
                    }
                    Unary::Exp => g.data.iter().zip(&y.data).map(|(&g, &y)| g * y).collect(),
                    Unary::Log => g
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(&g, &x)| if x > log_clamp() { g / x } else { T::zero() })
                        .collect(),
                    Unary::Sqrt => g
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(&g, &y)| if y > T::zero() { g * T::from_f64(0.5) / y } else { T::zero() })
                        .collect(),
                    Unary::Sin => g.data.iter().zip(&x.data).map(|(&g, &x)| g * x.cos()).collect(),
                    Unary::Cos => g.data.iter().zip(&x.data).map(|(&g, &x)| -g * x.sin()).collect(),
                };
                acc(*a, d);
            }
            Op::Binary(a, b, kind) => {
                let (x, z) = (val(*a), val(*b));
                let (da, db, out) = (x.dims(), z.dims(), y.dims());
                let mut ga = vec![T::zero(); out.0 * out.1];
                let mut gb = vec![T::zero(); out.0 * out.1];
                for i in 0..out.0 {
                    for j in 0..out.1 {
                        let k = i * out.1 + j;
                        let (p, q, gk) = (x.data[bidx(da, i, j)], z.data[bidx(db, i, j)], g.data[k]);
                        let (u, w) = match kind {
                            Binary::Add => (gk, gk),
                            Binary::Sub => (gk, -gk),
                            Binary::Mul => (gk * q, gk * p),
                            Binary::Div => (gk / q, -gk * p / (q * q)),
                            Binary::Maximum => {
                                if q > p {
                                    (T::zero(), gk)
                                } else {
                                    (gk, T::zero())
                                }
                            }
                        };
                        ga[k] = u;
                        gb[k] = w;
                    }
                }
                if wants(*a) {
                    acc(*a, reduce_to(ga, out, da));
                }
                if wants(*b) {
                    acc(*b, reduce_to(gb, out, db));
                }
            }
            Op::Affine { a, scale } => acc(*a, g.data.iter().map(|&v| v * *scale).collect()),
            Op::MatMul(a, b) => {
                let (x, z) = (val(*a), val(*b));
                let ((m, k), (_, n)) = (x.dims(), z.dims());
                if wants(*a) {
                    let mut d = vec![T::zero(); m * k];
                    // dA = G * B^T
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &g.data,
                        n as isize,
                        1,
                        &z.data,
                        1,
                        n as isize,
                        T::zero(),
                        &mut d,
                        k as isize,
                        1,
                    );
                    acc(*a, d);
                }
                if wants(*b) {
                    let mut d = vec![T::zero(); k * n];
                    // dB = A^T * G
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        &x.data,
                        1,
                        k as isize,
                        &g.data,
                        n as isize,
                        1,
                        T::zero(),
                        &mut d,
                        n as isize,
                        1,
                    );
                    acc(*b, d);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = y.dims();
                let mut d = Vec::with_capacity(r * c);
                for j in 0..c {
                    for i in 0..r {
                        d.push(g.data[i * c + j]);
                    }
                }
                acc(*a, d);
            }
            Op::Reshape(a) => acc(*a, g.data.clone()),
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for v in parts {
                        let len = val(*v).len();
                        if wants(*v) {
                            acc(*v, g.data[off..off + len].to_vec());
                        }
                        off += len;
                    }
                } else {
                    let (r, total) = y.dims();
                    let mut off = 0;
                    for v in parts {
                        let c = val(*v).cols();
                        if wants(*v) {
                            let mut d = Vec::with_capacity(r * c);
                            for i in 0..r {
                                d.extend_from_slice(&g.data[i * total + off..i * total + off + c]);
                            }
                            acc(*v, d);
                        }
                        off += c;
                    }
                }
            }
            Op::SliceRows { a, start } => {
                let x = val(*a);
                let c = x.cols();
                let mut d = vec![T::zero(); x.len()];
                d[start * c..start * c + g.len()].copy_from_slice(&g.data);
                acc(*a, d);
            }
            Op::SliceCols { a, start } => {
                let x = val(*a);
                let (r, c) = x.dims();
                let w = y.cols();
                let mut d = vec![T::zero(); x.len()];
                for i in 0..r {
                    d[i * c + start..i * c + start + w].copy_from_slice(&g.data[i * w..(i + 1) * w]);
                }
                acc(*a, d);
            }
            Op::Sum { a, axis, scale } => {
                let (r, c) = val(*a).dims();
                let d = match axis {
                    None => vec![g.data[0] * *scale; r * c],
                    Some(0) => (0..r * c).map(|k| g.data[k % c] * *scale).collect(),
                    _ => (0..r * c).map(|k| g.data[k / c.max(1)] * *scale).collect(),
                };
                acc(*a, d);
            }
            Op::Max { a, argmax } => {
                let mut d = vec![T::zero(); val(*a).len()];
                for (k, &flat) in argmax.iter().enumerate() {
                    d[flat] = d[flat] + g.data[k];
                }
                acc(*a, d);
            }
            Op::Softmax(a) => {
                let (r, c) = y.dims();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let (ys, gs) = (&y.data[i * c..(i + 1) * c], &g.data[i * c..(i + 1) * c]);
                    let dot = ys.iter().zip(gs).fold(T::zero(), |s, (&p, &q)| s + p * q);
                    for j in 0..c {
                        d[i * c + j] = ys[j] * (gs[j] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LogSoftmax(a) => {
                let (r, c) = y.dims();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let (ys, gs) = (&y.data[i * c..(i + 1) * c], &g.data[i * c..(i + 1) * c]);
                    let total = gs.iter().fold(T::zero(), |s, &q| s + q);
                    for j in 0..c {
                        d[i * c + j] = gs[j] - ys[j].exp() * total;
                    }
                }
                acc(*a, d);
            }
            Op::HardTanh { a, lo, hi } => {
                let x = val(*a);
                let dx = x.dims();
                let (dl, dh) = (lo.dims(), hi.dims());
                let mut d = vec![T::zero(); x.len()];
                for i in 0..dx.0 {
                    for j in 0..dx.1 {
                        let k = i * dx.1 + j;
                        let v = x.data[k];
                        if v >= lo.data[bidx(dl, i, j)] && v <= hi.data[bidx(dh, i, j)] {
                            d[k] = g.data[k];
                        }
                    }
                }
                acc(*a, d);
            }
            Op::GatherRows { a, index } => {
                let x = val(*a);
                let c = x.cols();
                let mut d = vec![T::zero(); x.len()];
                for (k, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] = d[i * c + j] + g.data[k * c + j];
                    }
                }
                acc(*a, d);
            }
            Op::Pick { a, index } => {
                let x = val(*a);
                let c = x.cols();
                let mut d = vec![T::zero(); x.len()];
                for (i, &j) in index.iter().enumerate() {
                    d[i * c + j] = g.data[i];
                }
                acc(*a, d);
            }
            Op::SegmentSum { a, segment } => {
                let c = val(*a).cols();
                let mut d = Vec::with_capacity(segment.len() * c);
                for &s in segment {
                    d.extend_from_slice(&g.data[s * c..(s + 1) * c]);
                }
                acc(*a, d);
            }
            Op::SegmentSoftmax { a, segment } => {
                let c = y.cols();
                let segments = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![T::zero(); segments * c];
                for (i, &s) in segment.iter().enumerate() {
                    for j in 0..c {
                        dot[s * c + j] = dot[s * c + j] + y.data[i * c + j] * g.data[i * c + j];
                    }
                }
                let mut d = Vec::with_capacity(y.len());
                for (i, &s) in segment.iter().enumerate() {
                    for j in 0..c {
                        d.push(y.data[i * c + j] * (g.data[i * c + j] - dot[s * c + j]));
                    }
                }
                acc(*a, d);
            }
        }
    }
}

fn row_softmax<T: Real>(x: &Tensor<T>, log: bool) -> Tensor<T> {
    let (r, c) = x.dims();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = &x.data[i * c..(i + 1) * c];
        let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let total = row.iter().fold(T::zero(), |s, &v| s + (v - m).exp());
        if log {
            let lse = m + total.ln();
            data.extend(row.iter().map(|&v| v - lse));
        } else {
            data.extend(row.iter().map(|&v| (v - m).exp() / total));
        }
    }
    Tensor { shape: x.shape.clone(), data }
}
