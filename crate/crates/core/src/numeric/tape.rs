use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::{NumericError, Scalar, ShapeError, Tensor};

/// Named parameter tensors, ordered by name.
pub type ParamSet<T> = BTreeMap<String, Tensor<T>>;

/// Loss gradients for the parameters a tape touched, by name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(String),
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    ScatterSum(Var, Rc<[usize]>),
    ScatterMean(Var, Rc<[usize]>, Rc<[T]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    RowScale(Var, Var),
    SelectRows(Rc<[bool]>, Var, Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropyRows(Var, Rc<[usize]>, Tensor<T>),
}

/// Records a computation for reverse-mode differentiation. Parameter
/// values are borrowed, so a forward pass allocates only intermediates.
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    values: Vec<Cow<'p, Tensor<T>>>,
    ops: Vec<Op<T>>,
    needs_grad: Vec<bool>,
    param_vars: HashMap<String, Var>,
}

fn check(op: &'static str, ok: bool, a: &[usize], b: &[usize]) -> Result<(), ShapeError> {
    if ok {
        Ok(())
    } else {
        Err(ShapeError::new(op, a.to_vec(), b.to_vec()))
    }
}

fn same_len<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), ShapeError> {
    check(op, a.rows() == b.rows() && a.cols() == b.cols(), a.shape(), b.shape())
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape { params, values: Vec::new(), ops: Vec::new(), needs_grad: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.needs_grad[v.0]);
        self.push_cow(Cow::Owned(value), op, needs)
    }

    fn push_cow(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, needs: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs);
        Var(self.ops.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_cow(Cow::Owned(t), Op::Leaf, false)
    }

    /// The named parameter. Repeated lookups return the same handle, so a
    /// parameter used at several places accumulates a single gradient.
    pub fn param(&mut self, name: &str) -> Result<Var, NumericError> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let params: &'p ParamSet<T> = self.params;
        let t = params.get(name).ok_or_else(|| NumericError::UnknownParam(name.to_string()))?;
        let v = self.push_cow(Cow::Borrowed(t), Op::Param(name.to_string()), true);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// `op(a) * op(b)` with optional transposes.
    pub fn matmul_ex(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, ShapeError> {
        let out = Tensor::matmul_ex(self.value(a), ta, self.value(b), tb)?;
        Ok(self.push(out, Op::MatMul { a, ta, b, tb }, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.matmul_ex(a, false, b, false)
    }

    /// `x * w^T`, the layout used for all weight matrices (`[out, in]`).
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, ShapeError> {
        self.matmul_ex(x, false, w, true)
    }

    /// `x * w^T + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, ShapeError> {
        let y = self.linear(x, w)?;
        self.add_row(y, b)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        same_len(name, x, y)?;
        Ok(x.zip_map(y, f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Add a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        check("add_row", y.len() == x.cols(), x.shape(), y.shape())?;
        let mut out = x.clone();
        let c = x.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + y.data()[i % c];
        }
        Ok(self.push(out, Op::AddRow(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() - x);
        self.push(out, Op::OneMinus(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let rows = self.value(parts[0]).rows();
        for p in parts {
            let t = self.value(*p);
            check("concat_cols", t.rows() == rows, self.value(parts[0]).shape(), t.shape())?;
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            check("concat_rows", t.cols() == cols, self.value(parts[0]).shape(), t.shape())?;
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let t = self.value(a);
        check("slice_cols", start + len <= t.cols(), t.shape(), &[start, len])?;
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(rows, len, data), Op::SliceCols(a, start), &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let t = self.value(a);
        check("slice_rows", start + len <= t.rows(), t.shape(), &[start, len])?;
        let c = t.cols();
        let out = Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec());
        Ok(self.push(out, Op::SliceRows(a, start), &[a]))
    }

    /// Row `i` of the result is row `idx[i]` of `a` (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var, ShapeError> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(ShapeError::new("gather_rows", t.shape().to_vec(), vec![bad]));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(t.row(i));
        }
        Ok(self.push(Tensor::matrix(idx.len(), c, data), Op::GatherRows(a, idx), &[a]))
    }

    fn scatter_checked(&self, a: Var, idx: &[usize], rows: usize) -> Result<Tensor<T>, ShapeError> {
        let t = self.value(a);
        check("scatter", idx.len() == t.rows() && idx.iter().all(|&i| i < rows), t.shape(), &[idx.len(), rows])?;
        let c = t.cols();
        let mut out = Tensor::zeros(&[rows, c]);
        for (e, &d) in idx.iter().enumerate() {
            let src = t.row(e);
            for (o, &s) in out.row_mut(d).iter_mut().zip(src) {
                *o = *o + s;
            }
        }
        Ok(out)
    }

    /// Row `d` of the result is the sum of the rows `e` of `a` with `idx[e] == d`.
    pub fn scatter_sum(&mut self, a: Var, idx: Rc<[usize]>, rows: usize) -> Result<Var, ShapeError> {
        let out = self.scatter_checked(a, &idx, rows)?;
        Ok(self.push(out, Op::ScatterSum(a, idx), &[a]))
    }

    /// Like [`Tape::scatter_sum`] but averaged; rows receiving nothing are zero.
    pub fn scatter_mean(&mut self, a: Var, idx: Rc<[usize]>, rows: usize) -> Result<Var, ShapeError> {
        let mut out = self.scatter_checked(a, &idx, rows)?;
        let mut counts = vec![0usize; rows];
        for &d in idx.iter() {
            counts[d] += 1;
        }
        let inv: Rc<[T]> =
            counts.iter().map(|&c| if c == 0 { T::zero() } else { T::one() / T::from_usize(c).unwrap() }).collect();
        for (d, &s) in inv.iter().enumerate() {
            for v in out.row_mut(d) {
                *v = *v * s;
            }
        }
        Ok(self.push(out, Op::ScatterMean(a, idx, inv), &[a]))
    }

    /// Softmax of a column of scores within each group `idx[e]`.
    pub fn segment_softmax(&mut self, a: Var, idx: Rc<[usize]>, groups: usize) -> Result<Var, ShapeError> {
        let t = self.value(a);
        check("segment_softmax", t.cols() == 1 && t.rows() == idx.len(), t.shape(), &[idx.len(), 1])?;
        let mut max = vec![T::neg_infinity(); groups];
        for (e, &g) in idx.iter().enumerate() {
            max[g] = max[g].max(t.data()[e]);
        }
        let mut total = vec![T::zero(); groups];
        let mut exps: Vec<T> = Vec::with_capacity(idx.len());
        for (e, &g) in idx.iter().enumerate() {
            let x = (t.data()[e] - max[g]).exp();
            total[g] = total[g] + x;
            exps.push(x);
        }
        for (e, &g) in idx.iter().enumerate() {
            exps[e] = exps[e] / total[g];
        }
        let out = Tensor::matrix(idx.len(), 1, exps);
        Ok(self.push(out, Op::SegmentSoftmax(a, idx), &[a]))
    }

    /// Multiply row `i` of `a` by the scalar `s[i]` (`s` is a column).
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(s));
        check("row_scale", y.len() == x.rows(), x.shape(), y.shape())?;
        let mut out = x.clone();
        for r in 0..x.rows() {
            let f = y.data()[r];
            for v in out.row_mut(r) {
                *v = *v * f;
            }
        }
        Ok(self.push(out, Op::RowScale(a, s), &[a, s]))
    }

    /// Row `i` from `a` where `mask[i]`, otherwise from `b`.
    pub fn select_rows(&mut self, mask: Rc<[bool]>, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        same_len("select_rows", x, y)?;
        check("select_rows", mask.len() == x.rows(), x.shape(), &[mask.len()])?;
        let mut out = y.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(r).copy_from_slice(x.row(r));
            }
        }
        Ok(self.push(out, Op::SelectRows(mask, a, b), &[a, b]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(&[t.rows(), t.cols()]);
        for r in 0..t.rows() {
            out.row_mut(r).copy_from_slice(&super::softmax(t.row(r)));
        }
        let out = out.reshape(t.shape()).expect("same size");
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / T::from_usize(t.len().max(1)).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean over rows of `-log softmax(logits[i])[labels[i]]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: Rc<[usize]>) -> Result<Var, NumericError> {
        let t = self.value(logits);
        if labels.len() != t.rows() {
            return Err(ShapeError::new("cross_entropy_rows", t.shape().to_vec(), vec![labels.len()]).into());
        }
        let c = t.cols();
        let mut probs = Tensor::zeros(&[t.rows(), c]);
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            total = total + super::cross_entropy(t.row(r), l)?;
            probs.row_mut(r).copy_from_slice(&super::softmax(t.row(r)));
        }
        let loss = total / T::from_usize(labels.len().max(1)).unwrap();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropyRows(logits, labels, probs), &[logits]))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let seed = Tensor::filled(self.value(loss).shape(), T::one());
        self.backward_with(loss, seed)
    }

    /// Reverse pass seeded with `seed` as the gradient of `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor<T>) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.ops.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        let mut result = Gradients::new();
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.needs_grad[i] {
                continue;
            }
            self.backprop_op(i, g, &mut grads, &mut result);
        }
        result
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs_grad[v.0] {
            return;
        }
        let g = if g.shape() == self.values[v.0].shape() {
            g
        } else {
            g.reshape(self.values[v.0].shape()).expect("gradient size matches value")
        };
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_op(&self, i: usize, g: Tensor<T>, grads: &mut [Option<Tensor<T>>], result: &mut Gradients<T>) {
        let y = &self.values[i];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Param(name) => {
                match result.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        result.insert(name.clone(), g);
                    }
                }
            }
            &Op::MatMul { a, ta, b, tb } => {
                let (av, bv) = (self.value(a), self.value(b));
                let g = g.reshape(&[y.rows(), y.cols()]).expect("matmul output is a matrix");
                if self.needs_grad[a.0] {
                    let da = if ta {
                        Tensor::matmul_ex(bv, tb, &g, true)
                    } else {
                        Tensor::matmul_ex(&g, false, bv, !tb)
                    };
                    self.acc(grads, a, da.expect("shapes checked in forward"));
                }
                if self.needs_grad[b.0] {
                    let db = if tb {
                        Tensor::matmul_ex(&g, true, av, ta)
                    } else {
                        Tensor::matmul_ex(av, !ta, &g, false)
                    };
                    self.acc(grads, b, db.expect("shapes checked in forward"));
                }
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, g.clone());
                self.acc(grads, b, g);
            }
            &Op::Sub(a, b) => {
                self.acc(grads, b, g.map(|x| -x));
                self.acc(grads, a, g);
            }
            &Op::Mul(a, b) => {
                self.acc(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                self.acc(grads, b, g.zip_map(self.value(a), |x, y| x * y));
            }
            &Op::AddRow(a, b) => {
                if self.needs_grad[b.0] {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for (k, &v) in g.data().iter().enumerate() {
                        db[k % c] = db[k % c] + v;
                    }
                    self.acc(grads, b, Tensor::from_vec(db));
                }
                self.acc(grads, a, g);
            }
            &Op::Scale(a, c) => self.acc(grads, a, g.map(|x| x * c)),
            &Op::OneMinus(a) => self.acc(grads, a, g.map(|x| -x)),
            &Op::Sigmoid(a) => self.acc(grads, a, g.zip_map(y, |g, y| g * y * (T::one() - y))),
            &Op::Tanh(a) => self.acc(grads, a, g.zip_map(y, |g, y| g * (T::one() - y * y))),
            &Op::Relu(a) => self.acc(grads, a, g.zip_map(y, |g, y| if y > T::zero() { g } else { T::zero() })),
            &Op::LeakyRelu(a, slope) => {
                let x = self.value(a);
                self.acc(grads, a, g.zip_map(x, |g, x| if x > T::zero() { g } else { g * slope }));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs_grad[p.0] {
                        let mut d = Vec::with_capacity(g.rows() * w);
                        for r in 0..g.rows() {
                            d.extend_from_slice(&g.row(r)[start..start + w]);
                        }
                        self.acc(grads, p, Tensor::matrix(g.rows(), w, d));
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.needs_grad[p.0] {
                        self.acc(grads, p, Tensor::matrix(h, c, g.data()[start * c..(start + h) * c].to_vec()));
                    }
                    start += h;
                }
            }
            &Op::SliceCols(a, start) => {
                let x = self.value(a);
                let mut d = Tensor::zeros(&[x.rows(), x.cols()]);
                let w = g.cols();
                for r in 0..g.rows() {
                    d.row_mut(r)[start..start + w].copy_from_slice(g.row(r));
                }
                self.acc(grads, a, d);
            }
            &Op::SliceRows(a, start) => {
                let x = self.value(a);
                let c = x.cols();
                let mut d = Tensor::zeros(&[x.rows(), c]);
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.acc(grads, a, d);
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(&[x.rows(), x.cols()]);
                for (r, &src) in idx.iter().enumerate() {
                    for (o, &v) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o = *o + v;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::ScatterSum(a, idx) => {
                let c = g.cols();
                let mut d = Vec::with_capacity(idx.len() * c);
                for &dst in idx.iter() {
                    d.extend_from_slice(g.row(dst));
                }
                self.acc(grads, *a, Tensor::matrix(idx.len(), c, d));
            }
            Op::ScatterMean(a, idx, inv) => {
                let c = g.cols();
                let mut d = Vec::with_capacity(idx.len() * c);
                for &dst in idx.iter() {
                    d.extend(g.row(dst).iter().map(|&v| v * inv[dst]));
                }
                self.acc(grads, *a, Tensor::matrix(idx.len(), c, d));
            }
            Op::SegmentSoftmax(a, idx) => {
                let groups = idx.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![T::zero(); groups];
                for (e, &grp) in idx.iter().enumerate() {
                    dot[grp] = dot[grp] + g.data()[e] * y.data()[e];
                }
                let d: Vec<T> = idx.iter().enumerate().map(|(e, &grp)| y.data()[e] * (g.data()[e] - dot[grp])).collect();
                self.acc(grads, *a, Tensor::matrix(idx.len(), 1, d));
            }
            &Op::RowScale(a, s) => {
                let (x, sv) = (self.value(a), self.value(s));
                if self.needs_grad[s.0] {
                    let ds: Vec<T> = (0..x.rows())
                        .map(|r| g.row(r).iter().zip(x.row(r)).fold(T::zero(), |acc, (&p, &q)| acc + p * q))
                        .collect();
                    self.acc(grads, s, Tensor::from_vec(ds));
                }
                if self.needs_grad[a.0] {
                    let mut da = g;
                    for r in 0..x.rows() {
                        let f = sv.data()[r];
                        for v in da.row_mut(r) {
                            *v = *v * f;
                        }
                    }
                    self.acc(grads, a, da);
                }
            }
            Op::SelectRows(mask, a, b) => {
                let mut da = g.clone();
                let mut db = g;
                for (r, &m) in mask.iter().enumerate() {
                    let zero_in = if m { &mut db } else { &mut da };
                    for v in zero_in.row_mut(r) {
                        *v = T::zero();
                    }
                }
                self.acc(grads, *a, da);
                self.acc(grads, *b, db);
            }
            &Op::SoftmaxRows(a) => {
                let mut d = g.clone();
                for r in 0..y.rows() {
                    let dot = g.row(r).iter().zip(y.row(r)).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                    for (k, v) in d.row_mut(r).iter_mut().enumerate() {
                        *v = y.row(r)[k] * (g.row(r)[k] - dot);
                    }
                }
                self.acc(grads, a, d);
            }
            &Op::Sum(a) => {
                let x = self.value(a);
                self.acc(grads, a, Tensor::filled(x.shape(), g.data()[0]));
            }
            &Op::Mean(a) => {
                let x = self.value(a);
                let s = g.data()[0] / T::from_usize(x.len().max(1)).unwrap();
                self.acc(grads, a, Tensor::filled(x.shape(), s));
            }
            Op::CrossEntropyRows(a, labels, probs) => {
                let scale = g.data()[0] / T::from_usize(labels.len().max(1)).unwrap();
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    let row = d.row_mut(r);
                    row[l] = row[l] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                self.acc(grads, *a, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(entries: &[(&str, Tensor<f64>)]) -> ParamSet<f64> {
        entries.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }

    #[test]
    fn shared_parameter_accumulates() {
        let p = params(&[("w", Tensor::from_vec(vec![2.0, 3.0]))]);
        let mut t = Tape::new(&p);
        let a = t.param("w").unwrap();
        let b = t.param("w").unwrap();
        assert_eq!(a, b);
        let m = t.mul(a, b).unwrap();
        let s = t.sum(m);
        let g = t.backward(s);
        assert_eq!(g["w"].data(), &[4.0, 6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let p = params(&[("w", Tensor::from_vec(vec![1.0]))]);
        let mut t = Tape::new(&p);
        let c = t.constant(Tensor::from_vec(vec![5.0]));
        let w = t.param("w").unwrap();
        let m = t.mul(c, w).unwrap();
        let g = t.backward(m);
        assert_eq!(g.len(), 1);
        assert_eq!(g["w"].data(), &[5.0]);
    }

    #[test]
    fn scatter_mean_leaves_empty_rows_zero() {
        let p = ParamSet::<f64>::new();
        let mut t = Tape::new(&p);
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let m = t.scatter_mean(a, vec![0, 0].into(), 2).unwrap();
        assert_eq!(t.value(m).data(), &[2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn segment_softmax_groups_sum_to_one() {
        let p = ParamSet::<f64>::new();
        let mut t = Tape::new(&p);
        let a = t.constant(Tensor::matrix(5, 1, vec![0.3, -2.0, 7.0, 1.0, 1.0]));
        let s = t.segment_softmax(a, vec![0, 1, 0, 1, 2].into(), 3).unwrap();
        let v = t.value(s).data();
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[1] + v[3] - 1.0).abs() < 1e-12);
        assert!((v[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_parameter_is_an_error() {
        let p = ParamSet::<f32>::new();
        let mut t = Tape::new(&p);
        assert!(matches!(t.param("nope"), Err(NumericError::UnknownParam(_))));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = vec![0.5, -1.0, 2.0, 0.0];
        let p = params(&[("x", Tensor::matrix(1, 4, logits.clone()))]);
        let mut t = Tape::new(&p);
        let x = t.param("x").unwrap();
        let l = t.cross_entropy_rows(x, vec![1].into()).unwrap();
        let g = t.backward(l);
        let mut expect = crate::numeric::softmax(&logits);
        expect[1] -= 1.0;
        for (a, b) in g["x"].data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
