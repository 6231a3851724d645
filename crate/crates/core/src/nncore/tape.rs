//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records every operation of a forward pass together with its
//! value. [`backward`] walks the records in reverse and accumulates partial
//! derivatives into the leaves registered with [`Tape::param`].

use std::collections::BTreeMap;

use super::tensor::{affine, affine_backward, Tensor};
use crate::error::{Error, Result};

/// Identity of a trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub u32);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    AddConst(Var),
    Scale(Var, f64),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    Max(Var, Var),
    SumRows(Var),
    Sum(Var),
    Pick(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients keyed by parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.map.insert(id, grad);
    }

    pub fn remove(&mut self, id: ParamId) -> Option<Tensor> {
        self.map.remove(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.map.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise sum; keys missing on one side are taken from the other.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.map {
            match self.map.get_mut(id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.map.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn retain(&mut self, keep: impl Fn(ParamId) -> bool) {
        self.map.retain(|id, _| keep(*id));
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(Tensor::all_finite)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value no gradient flows into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `x · w (+ b)`, bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() {
            return Err(Error::Config(format!(
                "input width {} does not match layer input {}",
                xv.cols(),
                wv.rows()
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != wv.cols() {
                return Err(Error::Config("bias width does not match layer".into()));
            }
        }
        let out = affine(xv, wv, b.map(|b| self.value(b)));
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Affine { x, w, b }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let ng = self.needs(x);
        self.push(out, Op::Tanh(x), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = log_softmax_rows(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::LogSoftmax(x), ng)
    }

    fn check_same(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::Usage(format!(
                "shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Elementwise product with a constant tensor (dropout masks, weights).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.value(a).len() != c.len() {
            return Err(Error::Usage("constant shape mismatch".into()));
        }
        let out = self.value(a).zip(&c, |x, y| x * y);
        let ng = self.needs(a);
        Ok(self.push(out, Op::MulConst(a, c), ng))
    }

    pub fn add_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.value(a).len() != c.len() {
            return Err(Error::Usage("constant shape mismatch".into()));
        }
        let out = self.value(a).zip(&c, |x, y| x + y);
        let ng = self.needs(a);
        Ok(self.push(out, Op::AddConst(a), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(out, Op::Square(a), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let out = self.value(a).zip(self.value(b), f64::min);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Min(a, b), ng))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let out = self.value(a).zip(self.value(b), f64::max);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Max(a, b), ng))
    }

    /// `[n, c] -> [n, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data: Vec<f64> = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let out = Tensor::column(&data);
        let ng = self.needs(a);
        self.push(out, Op::SumRows(a), ng)
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// Select column `cols[r]` from each row `r`: `[n, c] -> [n, 1]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if cols.len() != v.rows() {
            return Err(Error::Usage("one index per row required".into()));
        }
        if cols.iter().any(|&c| c >= v.cols()) {
            return Err(Error::Usage("column index out of range".into()));
        }
        let data: Vec<f64> = cols.iter().enumerate().map(|(r, &c)| v.row(r)[c]).collect();
        let out = Tensor::column(&data);
        let ng = self.needs(a);
        Ok(self.push(out, Op::Pick(a, cols.to_vec()), ng))
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Gradients of the scalar `loss` with respect to every registered
/// parameter. Parameters the loss does not depend on get zero tensors.
pub fn backward(tape: &Tape, loss: Var) -> Result<Gradients> {
    let loss_value = tape.value(loss);
    if loss_value.len() != 1 {
        return Err(Error::Usage(format!(
            "loss must be a scalar, shape is {:?}",
            loss_value.shape()
        )));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
    grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

    for idx in (0..=loss.0).rev() {
        let node = &tape.nodes[idx];
        if !node.needs_grad {
            continue;
        }
        let Some(dy) = grads[idx].take() else {
            continue;
        };
        let send = |grads: &mut Vec<Option<Tensor>>, v: Var, g: Tensor| {
            if !tape.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {
                grads[idx] = Some(dy);
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (tape.value(*x), tape.value(*w));
                let (dx, dw) = affine_backward(xv, wv, &dy, tape.needs(*x));
                if let Some(b) = b {
                    let m = dy.cols();
                    let mut db = vec![0.0; m];
                    for r in 0..dy.rows() {
                        for (d, g) in db.iter_mut().zip(dy.row(r)) {
                            *d += g;
                        }
                    }
                    let shape = tape.value(*b).shape().to_vec();
                    send(&mut grads, *b, Tensor::new(shape, db)?);
                }
                send(&mut grads, *w, dw);
                if let Some(dx) = dx {
                    send(&mut grads, *x, dx);
                }
            }
            Op::Relu(x) => {
                let g = tape.value(*x).zip(&dy, |v, g| if v > 0.0 { g } else { 0.0 });
                send(&mut grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = node.value.zip(&dy, |y, g| g * (1.0 - y * y));
                send(&mut grads, *x, g);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut g = dy.clone();
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row(r), dy.row(r));
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        g.data_mut()[r * c + j] = yr[j] * (dr[j] - dot);
                    }
                }
                send(&mut grads, *x, g);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut g = dy.clone();
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row(r), dy.row(r));
                    let total: f64 = dr.iter().sum();
                    for j in 0..c {
                        g.data_mut()[r * c + j] = dr[j] - yr[j].exp() * total;
                    }
                }
                send(&mut grads, *x, g);
            }
            Op::Add(a, b) => {
                send(&mut grads, *a, dy.clone());
                send(&mut grads, *b, dy);
            }
            Op::Sub(a, b) => {
                send(&mut grads, *b, dy.map(|g| -g));
                send(&mut grads, *a, dy);
            }
            Op::Mul(a, b) => {
                let ga = dy.zip(tape.value(*b), |g, v| g * v);
                let gb = dy.zip(tape.value(*a), |g, v| g * v);
                send(&mut grads, *a, ga);
                send(&mut grads, *b, gb);
            }
            Op::MulConst(a, c) => {
                send(&mut grads, *a, dy.zip(c, |g, v| g * v));
            }
            Op::AddConst(a) => send(&mut grads, *a, dy),
            Op::Scale(a, k) => send(&mut grads, *a, dy.map(|g| g * k)),
            Op::Exp(a) => send(&mut grads, *a, node.value.zip(&dy, |y, g| y * g)),
            Op::Square(a) => {
                send(&mut grads, *a, tape.value(*a).zip(&dy, |x, g| 2.0 * x * g));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let g = tape
                    .value(*a)
                    .zip(&dy, |x, g| if x >= lo && x <= hi { g } else { 0.0 });
                send(&mut grads, *a, g);
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (av, bv) = (tape.value(*a), tape.value(*b));
                let take_a: Vec<bool> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, y)| if is_min { x <= y } else { x >= y })
                    .collect();
                let mut ga = dy.clone();
                let mut gb = dy;
                for (i, &ta) in take_a.iter().enumerate() {
                    if ta {
                        gb.data_mut()[i] = 0.0;
                    } else {
                        ga.data_mut()[i] = 0.0;
                    }
                }
                send(&mut grads, *a, ga);
                send(&mut grads, *b, gb);
            }
            Op::SumRows(a) => {
                let av = tape.value(*a);
                let c = av.cols();
                let data: Vec<f64> = (0..av.rows())
                    .flat_map(|r| std::iter::repeat_n(dy.data()[r], c))
                    .collect();
                send(&mut grads, *a, Tensor::new(av.shape().to_vec(), data)?);
            }
            Op::Sum(a) => {
                let g = dy.data()[0];
                send(&mut grads, *a, Tensor::full(tape.value(*a).shape(), g));
            }
            Op::Pick(a, cols) => {
                let av = tape.value(*a);
                let c = av.cols();
                let mut g = Tensor::zeros(av.shape());
                for (r, &col) in cols.iter().enumerate() {
                    g.data_mut()[r * c + col] = dy.data()[r];
                }
                send(&mut grads, *a, g);
            }
        }
    }

    let mut out = Gradients::new();
    for (id, v) in &tape.params {
        let g = if v.0 < grads.len() {
            grads[v.0].take()
        } else {
            None
        };
        let g = g.unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()));
        match out.map.get_mut(id) {
            Some(acc) => acc.add_assign(&g),
            None => {
                out.map.insert(*id, g);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = backward(&tape, y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut tape = Tape::new();
        let _x = tape.param(ParamId(7), Tensor::full(&[2, 2], 1.5));
        let c = tape.constant(Tensor::scalar(4.0));
        let g = backward(&tape, c).unwrap();
        assert_eq!(g.get(ParamId(7)).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::full(&[3], 1.0));
        assert!(matches!(backward(&tape, x), Err(Error::Usage(_))));
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap();
        let p = softmax_rows(&x);
        for r in 0..2 {
            let row = p.row(r);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn min_routes_gradient_to_smaller_argument() {
        let mut tape = Tape::new();
        let a = tape.param(ParamId(0), Tensor::new(vec![2], vec![1.0, 5.0]).unwrap());
        let b = tape.param(ParamId(1), Tensor::new(vec![2], vec![2.0, 3.0]).unwrap());
        let m = tape.min(a, b).unwrap();
        let s = tape.sum(m);
        let g = backward(&tape, s).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(g.get(ParamId(1)).unwrap().data(), &[0.0, 1.0]);
    }
}
