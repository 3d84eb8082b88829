//! Tape-based reverse-mode differentiation. Forward calls append nodes to an
//! append-only sequence; every node keeps its full output value, so backward
//! needs no recomputation and `verify_replay` can prove the record is faithful.
//! Node ids are topologically ordered by construction (an op only consumes
//! already-recorded ids), and backward walks ids in strictly decreasing order,
//! which fixes the gradient accumulation order and makes repeated backward
//! passes bit-identical.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a node on a tape. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Reshape { x: VarId },
    Permute { x: VarId, axes: Vec<usize> },
    Concat { parts: Vec<VarId>, axis: usize },
    Slice { x: VarId, axis: usize, start: usize, len: usize },
    BroadcastAdd { a: VarId, b: VarId },
    BroadcastMul { a: VarId, b: VarId },
    Matmul { a: VarId, b: VarId },
    Conv2d { x: VarId, w: VarId, bias: VarId, stride: usize, padding: usize },
    AvgPoolWidth { x: VarId },
    AvgPoolHeight { x: VarId },
    Gap2d { x: VarId },
    Sigmoid { x: VarId },
    Relu { x: VarId },
    Scale { x: VarId, factor: f64 },
    SumAll { x: VarId },
    SoftmaxAxis { x: VarId, axis: usize },
    SoftmaxCrossEntropy { logits: VarId, labels: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by one backward pass, indexed by node id. Nodes the
/// output does not depend on hold no gradient.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a recorded node.
    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn check(&self, id: VarId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "node id {} not on this tape (len {})",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    /// Record an input tensor. Leaves are where backward deposits gradients.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(Op::Leaf, value)
    }

    pub fn reshape(&mut self, x: VarId, dims: &[usize]) -> Result<VarId> {
        self.check(x)?;
        let v = ops::reshape(self.value(x), dims)?;
        Ok(self.push(Op::Reshape { x }, v))
    }

    pub fn permute(&mut self, x: VarId, axes: &[usize]) -> Result<VarId> {
        self.check(x)?;
        let v = ops::permute(self.value(x), axes)?;
        Ok(self.push(Op::Permute { x, axes: axes.to_vec() }, v))
    }

    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> Result<VarId> {
        for &p in parts {
            self.check(p)?;
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat(&tensors, axis)?;
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, v))
    }

    pub fn slice(&mut self, x: VarId, axis: usize, start: usize, len: usize) -> Result<VarId> {
        self.check(x)?;
        let v = ops::slice(self.value(x), axis, start, len)?;
        Ok(self.push(Op::Slice { x, axis, start, len }, v))
    }

    /// Split one axis into consecutive chunks; each chunk is its own node.
    pub fn split(&mut self, x: VarId, axis: usize, sizes: &[usize]) -> Result<Vec<VarId>> {
        self.check(x)?;
        if axis >= self.value(x).rank() {
            return Err(Error::Shape(format!(
                "split axis {axis} out of range for rank {}",
                self.value(x).rank()
            )));
        }
        let extent = self.value(x).dims()[axis];
        if sizes.iter().sum::<usize>() != extent || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Shape(format!(
                "split sizes {sizes:?} do not partition extent {extent}"
            )));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            out.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check(a)?;
        self.check(b)?;
        let v = ops::broadcast_add(self.value(a), self.value(b))?;
        Ok(self.push(Op::BroadcastAdd { a, b }, v))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check(a)?;
        self.check(b)?;
        let v = ops::broadcast_mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::BroadcastMul { a, b }, v))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check(a)?;
        self.check(b)?;
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul { a, b }, v))
    }

    pub fn conv2d(&mut self, x: VarId, w: VarId, bias: VarId, stride: usize, padding: usize) -> Result<VarId> {
        self.check(x)?;
        self.check(w)?;
        self.check(bias)?;
        let v = ops::conv2d(self.value(x), self.value(w), self.value(bias), stride, padding)?;
        Ok(self.push(Op::Conv2d { x, w, bias, stride, padding }, v))
    }

    pub fn avgpool_width(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        let v = ops::avgpool_width(self.value(x))?;
        Ok(self.push(Op::AvgPoolWidth { x }, v))
    }

    pub fn avgpool_height(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        let v = ops::avgpool_height(self.value(x))?;
        Ok(self.push(Op::AvgPoolHeight { x }, v))
    }

    pub fn gap2d(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        let v = ops::gap2d(self.value(x))?;
        Ok(self.push(Op::Gap2d { x }, v))
    }

    pub fn sigmoid(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        let v = ops::sigmoid(self.value(x));
        Ok(self.push(Op::Sigmoid { x }, v))
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        let v = ops::relu(self.value(x));
        Ok(self.push(Op::Relu { x }, v))
    }

    pub fn scale(&mut self, x: VarId, factor: f64) -> Result<VarId> {
        self.check(x)?;
        let v = ops::scale(self.value(x), factor);
        Ok(self.push(Op::Scale { x, factor }, v))
    }

    pub fn sum_all(&mut self, x: VarId) -> Result<VarId> {
        self.check(x)?;
        let v = ops::sum_all(self.value(x));
        Ok(self.push(Op::SumAll { x }, v))
    }

    pub fn softmax_axis(&mut self, x: VarId, axis: usize) -> Result<VarId> {
        self.check(x)?;
        let v = ops::softmax_axis(self.value(x), axis)?;
        Ok(self.push(Op::SoftmaxAxis { x, axis }, v))
    }

    /// Mean softmax cross-entropy over a batch of logits (N, K) against class
    /// indices. Fused so the backward rule is the well-conditioned
    /// (softmax - onehot)/N instead of a chain through log and gather.
    pub fn softmax_cross_entropy(&mut self, logits: VarId, labels: &[usize]) -> Result<VarId> {
        self.check(logits)?;
        let v = cross_entropy_forward(self.value(logits), labels)?;
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() }, v))
    }

    /// Reverse accumulation from `output`, seeded with `seed` (same shape as
    /// the output value). Interior gradients are consumed as they are routed
    /// backward; the result keeps one gradient per leaf the output touches.
    pub fn backward(&self, output: VarId, seed: &Tensor) -> Result<Gradients> {
        self.check(output)?;
        if seed.dims() != self.value(output).dims() {
            return Err(Error::Shape(format!(
                "seed shape {} does not match output shape {}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());

        for id in (0..=output.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                // Leaves keep their accumulated gradient; interior nodes give
                // theirs up once routed to their inputs.
                Op::Leaf => grads[id] = Some(g),
                Op::Reshape { x } => {
                    let gx = ops::reshape(&g, self.value(*x).dims())?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Permute { x, axes } => {
                    let mut inv = vec![0usize; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inv[a] = i;
                    }
                    accumulate(&mut grads, *x, ops::permute(&g, &inv)?);
                }
                Op::Concat { parts, axis } => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.value(p).dims()[*axis];
                        accumulate(&mut grads, p, ops::slice(&g, *axis, start, len)?);
                        start += len;
                    }
                }
                Op::Slice { x, axis, start, len } => {
                    let xv = self.value(*x);
                    let extent = xv.dims()[*axis];
                    let outer: usize = xv.dims()[..*axis].iter().product();
                    let inner: usize = xv.dims()[*axis + 1..].iter().product();
                    let mut gx = vec![0.0; xv.numel()];
                    let gd = g.data();
                    for o in 0..outer {
                        let src = o * len * inner;
                        let dst = (o * extent + start) * inner;
                        gx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().clone(), gx)?);
                }
                Op::BroadcastAdd { a, b } => {
                    accumulate(&mut grads, *a, ops::reduce_to_shape(&g, self.value(*a).shape())?);
                    accumulate(&mut grads, *b, ops::reduce_to_shape(&g, self.value(*b).shape())?);
                }
                Op::BroadcastMul { a, b } => {
                    let ga = ops::broadcast_mul(&g, self.value(*b))?;
                    accumulate(&mut grads, *a, ops::reduce_to_shape(&ga, self.value(*a).shape())?);
                    let gb = ops::broadcast_mul(&g, self.value(*a))?;
                    accumulate(&mut grads, *b, ops::reduce_to_shape(&gb, self.value(*b).shape())?);
                }
                Op::Matmul { a, b } => {
                    let bt = ops::permute(self.value(*b), &[0, 2, 1])?;
                    accumulate(&mut grads, *a, ops::matmul(&g, &bt)?);
                    let at = ops::permute(self.value(*a), &[0, 2, 1])?;
                    accumulate(&mut grads, *b, ops::matmul(&at, &g)?);
                }
                Op::Conv2d { x, w, bias, stride, padding } => {
                    let (gx, gw, gb) = conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        *stride,
                        *padding,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::AvgPoolWidth { x } => {
                    let xv = self.value(*x);
                    let w = xv.dims()[3];
                    let gd = g.data();
                    let mut gx = Vec::with_capacity(xv.numel());
                    for &v in gd {
                        let share = v / w as f64;
                        gx.extend(std::iter::repeat(share).take(w));
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().clone(), gx)?);
                }
                Op::AvgPoolHeight { x } => {
                    let xv = self.value(*x);
                    let (h, w) = (xv.dims()[2], xv.dims()[3]);
                    let gd = g.data();
                    let mut gx = vec![0.0; xv.numel()];
                    for bc in 0..xv.dims()[0] * xv.dims()[1] {
                        for i in 0..h {
                            for j in 0..w {
                                gx[(bc * h + i) * w + j] = gd[bc * w + j] / h as f64;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().clone(), gx)?);
                }
                Op::Gap2d { x } => {
                    let xv = self.value(*x);
                    let hw = xv.dims()[2] * xv.dims()[3];
                    let gd = g.data();
                    let mut gx = Vec::with_capacity(xv.numel());
                    for &v in gd {
                        let share = v / hw as f64;
                        gx.extend(std::iter::repeat(share).take(hw));
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().clone(), gx)?);
                }
                Op::Sigmoid { x } => {
                    let s = &self.nodes[id].value;
                    let gx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(s.data())
                        .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(s.shape().clone(), gx)?);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let gx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().clone(), gx)?);
                }
                Op::Scale { x, factor } => {
                    accumulate(&mut grads, *x, ops::scale(&g, *factor));
                }
                Op::SumAll { x } => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, Tensor::full(xv.dims(), g.item()));
                }
                Op::SoftmaxAxis { x, axis } => {
                    // dx = s * (g - sum(g * s)) along the softmax axis.
                    let s = &self.nodes[id].value;
                    let n = s.dims()[*axis];
                    let outer: usize = s.dims()[..*axis].iter().product();
                    let inner: usize = s.dims()[*axis + 1..].iter().product();
                    let (sd, gd) = (s.data(), g.data());
                    let mut gx = vec![0.0; s.numel()];
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |i: usize| (o * n + i) * inner + j;
                            let dot: f64 = (0..n).map(|i| gd[at(i)] * sd[at(i)]).sum();
                            for i in 0..n {
                                gx[at(i)] = sd[at(i)] * (gd[at(i)] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(s.shape().clone(), gx)?);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let lv = self.value(*logits);
                    let (n, k) = (lv.dims()[0], lv.dims()[1]);
                    let gscale = g.item() / n as f64;
                    let mut gx = vec![0.0; lv.numel()];
                    for (row_i, (row, &label)) in lv.data().chunks_exact(k).zip(labels).enumerate() {
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                        for (col, &v) in row.iter().enumerate() {
                            let p = (v - m).exp() / denom;
                            let onehot = if col == label { 1.0 } else { 0.0 };
                            gx[row_i * k + col] = gscale * (p - onehot);
                        }
                    }
                    accumulate(&mut grads, *logits, Tensor::new(lv.shape().clone(), gx)?);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Recompute every non-leaf node from its recorded inputs and demand bit
    /// equality with the stored value. Validates the append-only record.
    pub fn verify_replay(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            let recomputed = match &node.op {
                Op::Leaf => continue,
                Op::Reshape { x } => ops::reshape(self.value(*x), node.value.dims())?,
                Op::Permute { x, axes } => ops::permute(self.value(*x), axes)?,
                Op::Concat { parts, axis } => {
                    let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
                    ops::concat(&tensors, *axis)?
                }
                Op::Slice { x, axis, start, len } => ops::slice(self.value(*x), *axis, *start, *len)?,
                Op::BroadcastAdd { a, b } => ops::broadcast_add(self.value(*a), self.value(*b))?,
                Op::BroadcastMul { a, b } => ops::broadcast_mul(self.value(*a), self.value(*b))?,
                Op::Matmul { a, b } => ops::matmul(self.value(*a), self.value(*b))?,
                Op::Conv2d { x, w, bias, stride, padding } => {
                    ops::conv2d(self.value(*x), self.value(*w), self.value(*bias), *stride, *padding)?
                }
                Op::AvgPoolWidth { x } => ops::avgpool_width(self.value(*x))?,
                Op::AvgPoolHeight { x } => ops::avgpool_height(self.value(*x))?,
                Op::Gap2d { x } => ops::gap2d(self.value(*x))?,
                Op::Sigmoid { x } => ops::sigmoid(self.value(*x)),
                Op::Relu { x } => ops::relu(self.value(*x)),
                Op::Scale { x, factor } => ops::scale(self.value(*x), *factor),
                Op::SumAll { x } => ops::sum_all(self.value(*x)),
                Op::SoftmaxAxis { x, axis } => ops::softmax_axis(self.value(*x), *axis)?,
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    cross_entropy_forward(self.value(*logits), labels)?
                }
            };
            if recomputed.data() != node.value.data() || recomputed.dims() != node.value.dims() {
                return Err(Error::Tape(format!("replay mismatch at node {i}")));
            }
        }
        Ok(())
    }
}

fn cross_entropy_forward(lv: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if lv.rank() != 2 {
        return Err(Error::Shape(format!(
            "softmax_cross_entropy expects (N, K) logits, got {}",
            lv.shape()
        )));
    }
    let (n, k) = (lv.dims()[0], lv.dims()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    let mut total = 0.0;
    for (row, &label) in lv.data().chunks_exact(k).zip(labels) {
        if label >= k {
            return Err(Error::Config(format!("label {label} out of range for {k} classes")));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(Tensor::scalar(total / n as f64))
}

fn accumulate(grads: &mut [Option<Tensor>], id: VarId, contribution: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            debug_assert_eq!(existing.dims(), contribution.dims());
            let summed: Vec<f64> = existing
                .data()
                .iter()
                .zip(contribution.data())
                .map(|(&a, &b)| a + b)
                .collect();
            *existing = Tensor::new(existing.shape().clone(), summed).expect("gradient shapes agree");
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// Input, weight, and bias gradients of conv2d in one traversal of the output
/// gradient. Same index conventions as the forward routine.
fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let (b, cin, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let (cout, k) = (w.dims()[0], w.dims()[2]);
    let (oh, ow) = (g.dims()[2], g.dims()[3]);
    let (xd, wdat, gd) = (x.data(), w.data(), g.data());
    let mut gx = vec![0.0; x.numel()];
    let mut gw = vec![0.0; w.numel()];
    let mut gb = vec![0.0; cout];
    for bi in 0..b {
        for co in 0..cout {
            let gbase = (bi * cout + co) * oh * ow;
            for p in 0..oh {
                for q in 0..ow {
                    let gv = gd[gbase + p * ow + q];
                    if gv == 0.0 {
                        continue;
                    }
                    gb[co] += gv;
                    for ci in 0..cin {
                        let xbase = (bi * cin + ci) * h * wd;
                        let wbase = (co * cin + ci) * k * k;
                        for r in 0..k {
                            let ih = (p * stride + r) as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = xbase + ih as usize * wd;
                            let wrow = wbase + r * k;
                            for s in 0..k {
                                let iw = (q * stride + s) as isize - padding as isize;
                                if iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                gx[xrow + iw as usize] += gv * wdat[wrow + s];
                                gw[wrow + s] += gv * xd[xrow + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().clone(), gx).expect("input gradient shape"),
        Tensor::new(w.shape().clone(), gw).expect("weight gradient shape"),
        Tensor::from_vec(&[cout], gb).expect("bias gradient shape"),
    )
}
