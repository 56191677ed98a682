//! Tape of tensor operations with reverse-mode differentiation.

use rand::Rng;

use super::params::{Gradients, ParamId, ParamSet};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{DiffError, Tensor};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    MaxOverRows(Var, Vec<usize>),
    Dropout(Var, Tensor<T>),
    SoftmaxRows(Var),
    SoftmaxCe {
        logits: Var,
        probs: Tensor<T>,
        targets: Vec<Option<usize>>,
    },
    Sum(Var),
    Gather(Var, Vec<usize>),
    /// Scalar-valued op whose input gradients were computed during the forward pass.
    Custom(Vec<(Var, Tensor<T>)>),
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// One forward computation over a borrowed [`ParamSet`].
///
/// Parameter values are read in place; gradients come back from
/// [`Graph::backward`] as a [`Gradients`] value for the caller to accumulate.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> DiffError {
    DiffError::Shape { op, left, right }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let trainable = self.params.get(id).trainable;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        matmul_into(av, bv, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Elementwise sum; a single-row `b` is broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        if av.shape() == bv.shape() {
            let mut out = av.clone();
            out.add_assign(bv);
            Ok(self.push(out, Op::Add(a, b), ng))
        } else if bv.rows() == 1 && bv.cols() == av.cols() {
            let mut out = av.clone();
            for r in 0..out.rows() {
                for (o, &x) in out.row_mut(r).iter_mut().zip(bv.data()) {
                    *o = *o + x;
                }
            }
            Ok(self.push(out, Op::AddRow(a, b), ng))
        } else {
            Err(shape_err("add", av.shape(), bv.shape()))
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("sub", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() - x);
        let ng = self.ng(a);
        self.push(out, Op::OneMinus(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Stacks along rows; all parts must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("concat_rows", (rows, cols), pv.shape()));
            }
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(shape_err("slice_cols", av.shape(), (start, len)));
        }
        let mut out = Tensor::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r)
                .copy_from_slice(&av.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(shape_err("slice_rows", av.shape(), (start, len)));
        }
        let c = av.cols();
        let out = Tensor::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec());
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Column-wise maximum over rows (max-over-time pooling); `1 × cols`.
    pub fn max_over_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(shape_err("max_over_rows", av.shape(), (1, av.cols())));
        }
        let mut arg = vec![0usize; av.cols()];
        let mut out = Tensor::zeros(1, av.cols());
        for c in 0..av.cols() {
            let mut best = 0;
            for r in 1..av.rows() {
                if av.get(r, c) > av.get(best, c) {
                    best = r;
                }
            }
            arg[c] = best;
            out.set(0, c, av.get(best, c));
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::MaxOverRows(a, arg), ng))
    }

    /// Multiplies by a fixed mask (already scaled by `1 / (1 - rate)`).
    pub fn dropout_with_mask(&mut self, a: Var, mask: Tensor<T>) -> Result<Var, DiffError> {
        let av = self.value(a);
        if av.shape() != mask.shape() {
            return Err(shape_err("dropout", av.shape(), mask.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&x, &m)| x * m)
            .collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Dropout(a, mask), ng))
    }

    /// Inverted dropout; `rate == 0` returns `a` unchanged.
    pub fn dropout<R: Rng>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var, DiffError> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let (r, c) = self.shape(a);
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask = (0..r * c)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.dropout_with_mask(a, Tensor::from_vec(r, c, mask))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Summed cross-entropy of row-wise softmax against `targets`; `None` rows are skipped.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
    ) -> Result<Var, DiffError> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() {
            return Err(shape_err(
                "softmax_cross_entropy",
                lv.shape(),
                (targets.len(), 1),
            ));
        }
        let probs = softmax_rows(lv);
        let mut loss = T::zero();
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= lv.cols() {
                    return Err(DiffError::TargetOutOfRange {
                        target: t,
                        classes: lv.cols(),
                    });
                }
                let row = lv.row(r);
                let lse = crate::scalar::log_sum_exp(row.iter().copied());
                loss = loss + (lse - row[t]);
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, DiffError> {
        let mut it = terms.iter();
        let mut acc = match it.next() {
            Some(&v) => v,
            None => return Ok(self.constant(Tensor::scalar(T::zero()))),
        };
        for &t in it {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Rows `indices` of `table`, stacked.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, DiffError> {
        let tv = self.value(table);
        let c = tv.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= tv.rows() {
                return Err(shape_err("gather_rows", tv.shape(), (i, c)));
            }
            data.extend_from_slice(tv.row(i));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::from_vec(indices.len(), c, data),
            Op::Gather(table, indices.to_vec()),
            ng,
        ))
    }

    /// Scalar node whose gradient w.r.t. each input is supplied by the caller.
    pub fn custom_scalar(
        &mut self,
        value: T,
        input_grads: Vec<(Var, Tensor<T>)>,
    ) -> Result<Var, DiffError> {
        for (v, g) in &input_grads {
            if self.shape(*v) != g.shape() {
                return Err(shape_err("custom_scalar", self.shape(*v), g.shape()));
            }
        }
        let ng = input_grads.iter().any(|(v, _)| self.ng(*v));
        Ok(self.push(Tensor::scalar(value), Op::Custom(input_grads), ng))
    }

    /// Back-propagates from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, DiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(DiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut by_param: Vec<Option<Tensor<T>>> = (0..self.params.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            if let Op::Param(id) = node.op {
                by_param[id.0] = Some(g);
            }
        }
        Ok(Gradients { by_param })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.as_ref();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    let ga = slot(grads, *a, self.shape(*a));
                    matmul_nt_into(g, bv, ga);
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let gb = slot(grads, *b, self.shape(*b));
                    matmul_tn_into(av, g, gb);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g);
                self.acc(grads, *b, g);
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g);
                if self.ng(*b) {
                    let gb = slot(grads, *b, self.shape(*b));
                    for r in 0..g.rows() {
                        for (o, &x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o = *o + x;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g);
                if self.ng(*b) {
                    let gb = slot(grads, *b, g.shape());
                    for (o, &x) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o = *o - x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    self.acc_zip(grads, *a, g, bv, |g, y| g * y);
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    self.acc_zip(grads, *b, g, av, |g, x| g * x);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc_zip(grads, *a, g, g, |g, _| g * c);
            }
            Op::OneMinus(a) => {
                self.acc_zip(grads, *a, g, g, |g, _| -g);
            }
            Op::Tanh(a) => {
                let y = out.unwrap();
                self.acc_zip(grads, *a, g, y, |g, y| g * (T::one() - y * y));
            }
            Op::Sigmoid(a) => {
                let y = out.unwrap();
                self.acc_zip(grads, *a, g, y, |g, y| g * y * (T::one() - y));
            }
            Op::Relu(a) => {
                let y = out.unwrap();
                self.acc_zip(
                    grads,
                    *a,
                    g,
                    y,
                    |g, y| if y > T::zero() { g } else { T::zero() },
                );
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    if self.ng(p) {
                        let gp = slot(grads, p, (pr, pc));
                        for r in 0..pr {
                            for (o, &x) in
                                gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + pc])
                            {
                                *o = *o + x;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    if self.ng(p) {
                        let gp = slot(grads, p, (pr, pc));
                        let src = &g.data()[offset * pc..(offset + pr) * pc];
                        for (o, &x) in gp.data_mut().iter_mut().zip(src) {
                            *o = *o + x;
                        }
                    }
                    offset += pr;
                }
            }
            Op::SliceCols(a, start) => {
                let ga = slot(grads, *a, self.shape(*a));
                for r in 0..g.rows() {
                    let dst = &mut ga.row_mut(r)[*start..*start + g.cols()];
                    for (o, &x) in dst.iter_mut().zip(g.row(r)) {
                        *o = *o + x;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let shape = self.shape(*a);
                let ga = slot(grads, *a, shape);
                let c = shape.1;
                let dst = &mut ga.data_mut()[start * c..(start + g.rows()) * c];
                for (o, &x) in dst.iter_mut().zip(g.data()) {
                    *o = *o + x;
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.acc(grads, *a, &gt);
            }
            Op::MaxOverRows(a, arg) => {
                let ga = slot(grads, *a, self.shape(*a));
                for (c, &r) in arg.iter().enumerate() {
                    let v = ga.get(r, c) + g.get(0, c);
                    ga.set(r, c, v);
                }
            }
            Op::Dropout(a, mask) => {
                self.acc_zip(grads, *a, g, mask, |g, m| g * m);
            }
            Op::SoftmaxRows(a) => {
                let y = out.unwrap();
                let ga = slot(grads, *a, y.shape());
                for r in 0..y.rows() {
                    let dot: T = g
                        .row(r)
                        .iter()
                        .zip(y.row(r))
                        .map(|(&gv, &yv)| gv * yv)
                        .sum();
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = *o + yv * (gv - dot);
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                probs,
                targets,
            } => {
                let up = g.item();
                let gl = slot(grads, *logits, probs.shape());
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        for (c, (o, &p)) in gl.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let ind = if c == t { T::one() } else { T::zero() };
                            *o = *o + up * (p - ind);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let up = g.item();
                let ga = slot(grads, *a, self.shape(*a));
                for o in ga.data_mut() {
                    *o = *o + up;
                }
            }
            Op::Gather(table, indices) => {
                let gt = slot(grads, *table, self.shape(*table));
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &x) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o = *o + x;
                    }
                }
            }
            Op::Custom(inputs) => {
                let up = g.item();
                for (v, d) in inputs {
                    if self.ng(*v) {
                        self.acc_zip(grads, *v, d, d, |d, _| up * d);
                    }
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: &Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(g),
            empty => *empty = Some(g.clone()),
        }
    }

    fn acc_zip(
        &self,
        grads: &mut [Option<Tensor<T>>],
        v: Var,
        g: &Tensor<T>,
        other: &Tensor<T>,
        f: impl Fn(T, T) -> T,
    ) {
        if !self.ng(v) {
            return;
        }
        let dst = slot(grads, v, g.shape());
        for ((o, &gv), &ov) in dst.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
            *o = *o + f(gv, ov);
        }
    }
}

fn slot<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    shape: (usize, usize),
) -> &mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_rows<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum = sum + *x;
        }
        for x in row.iter_mut() {
            *x = *x / sum;
        }
    }
    out
}
