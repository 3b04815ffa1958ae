//! Reverse-mode autodiff on a linear operation tape.
//!
//! Every primitive records its inputs and a backward rule when executed.
//! Nodes are appended in execution order, so inputs always precede the
//! operations that consume them and a single reverse sweep propagates
//! gradients from the loss to every tracked leaf.

use super::tensor::{Real, Tensor};
use super::AutodiffError;

/// Handle to a value living on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

enum Rule<F> {
    Leaf,
    Conv2d {
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
    },
    MaxPool2d {
        input: ValueId,
        // Flat input index of the window maximum, per output element.
        argmax: Vec<u32>,
    },
    Relu {
        input: ValueId,
    },
    GlobalAvgPool {
        input: ValueId,
    },
    Linear {
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
    },
    SoftmaxVec {
        input: ValueId,
    },
    Sigmoid {
        input: ValueId,
    },
    WeightedSumRows {
        rows: ValueId,
        weights: ValueId,
    },
    MseLoss {
        pred: ValueId,
        target: ValueId,
    },
    Add {
        lhs: ValueId,
        rhs: ValueId,
    },
    Scale {
        input: ValueId,
        factor: F,
    },
    Sum {
        input: ValueId,
    },
    Reshape {
        input: ValueId,
    },
    ConcatRows {
        parts: Vec<ValueId>,
    },
    SelectCoords {
        input: ValueId,
        coords: Vec<usize>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    requires_grad: bool,
    rule: Rule<F>,
}

/// Linear record of primitive operations plus their values and gradients.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    backward_run: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_run: false,
        }
    }

    /// Insert a value with no producing operation.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> ValueId {
        self.push(value, requires_grad, Rule::Leaf)
    }

    /// Insert a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> ValueId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Gradient populated by [`Tape::backward`], if any.
    pub fn grad(&self, id: ValueId) -> Option<&Tensor<F>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all gradients and allow another backward pass.
    pub fn clear_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_run = false;
    }

    /// True when every recorded value is finite.
    pub fn all_values_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.value.is_finite())
    }

    fn push(&mut self, value: Tensor<F>, requires_grad: bool, rule: Rule<F>) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            rule,
        });
        id
    }

    fn needs_grad(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn check_distinct(&self, ids: &[ValueId]) -> Result<(), AutodiffError> {
        for (i, a) in ids.iter().enumerate() {
            if ids[i + 1..].contains(a) {
                return Err(AutodiffError::Usage(
                    "operation inputs must be distinct tape values".into(),
                ));
            }
        }
        Ok(())
    }

    // ── Primitives ──────────────────────────────────────────────────────

    /// 3×3 cross-correlation, stride 1, zero padding 1: `[n,h,w,cin]` with
    /// kernel `[3,3,cin,cout]` and bias `[cout]` gives `[n,h,w,cout]`.
    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
    ) -> Result<ValueId, AutodiffError> {
        self.check_distinct(&[input, kernel, bias])?;
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let (xs, ks) = (x.shape(), k.shape());
        if xs.len() != 4 || ks.len() != 4 {
            return Err(AutodiffError::Shape(format!(
                "conv2d expects 4-d input and kernel, got {:?} and {:?}",
                xs, ks
            )));
        }
        if ks[0] != 3 || ks[1] != 3 {
            return Err(AutodiffError::Shape(format!(
                "conv2d kernel must be 3x3 spatially, got {:?}",
                ks
            )));
        }
        if xs[3] != ks[2] {
            return Err(AutodiffError::Shape(format!(
                "conv2d channel mismatch: input has {} channels, kernel expects {}",
                xs[3], ks[2]
            )));
        }
        if b.shape() != [ks[3]] {
            return Err(AutodiffError::Shape(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                b.shape(),
                ks[3]
            )));
        }
        let (n, h, w, cin, cout) = (xs[0], xs[1], xs[2], xs[3], ks[3]);
        let mut out = Tensor::zeros(&[n, h, w, cout]);
        conv2d_forward(
            x.data(),
            k.data(),
            b.data(),
            out.data_mut(),
            n,
            h,
            w,
            cin,
            cout,
        );
        let rg = self.needs_grad(&[input, kernel, bias]);
        Ok(self.push(
            out,
            rg,
            Rule::Conv2d {
                input,
                kernel,
                bias,
            },
        ))
    }

    /// 2×2 max pooling, stride 2. Gradient routes to the first maximum in
    /// row-major window order.
    pub fn maxpool2d(&mut self, input: ValueId) -> Result<ValueId, AutodiffError> {
        let x = self.value(input);
        let xs = x.shape();
        if xs.len() != 4 {
            return Err(AutodiffError::Shape(format!(
                "maxpool2d expects 4-d input, got {:?}",
                xs
            )));
        }
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(AutodiffError::Shape(format!(
                "maxpool2d needs even spatial dims, got {}x{}",
                h, w
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, oh, ow, c]);
        let mut argmax = vec![0u32; out.numel()];
        let data = x.data();
        let od = out.data_mut();
        for i in 0..n {
            for oy in 0..oh {
                let row0_base = (i * h + 2 * oy) * w * c;
                let row1_base = row0_base + w * c;
                let row0 = &data[row0_base..row0_base + w * c];
                let row1 = &data[row1_base..row1_base + w * c];
                let out_base = (i * oh + oy) * ow * c;
                let out_row = &mut od[out_base..out_base + ow * c];
                let arg_row = &mut argmax[out_base..out_base + ow * c];
                for ox in 0..ow {
                    let b = 2 * ox * c;
                    for ch in 0..c {
                        let (v0, v1) = (row0[b + ch], row0[b + c + ch]);
                        let (v2, v3) = (row1[b + ch], row1[b + c + ch]);
                        let best = v0.max(v1).max(v2.max(v3));
                        // first maximum in row-major window order wins ties:
                        // assign candidates in reverse so the earliest match
                        // overwrites last (branchless selects)
                        let mut arg = row1_base + b + c + ch;
                        if v2 == best {
                            arg = row1_base + b + ch;
                        }
                        if v1 == best {
                            arg = row0_base + b + c + ch;
                        }
                        if v0 == best {
                            arg = row0_base + b + ch;
                        }
                        out_row[ox * c + ch] = best;
                        arg_row[ox * c + ch] = arg as u32;
                    }
                }
            }
        }
        let rg = self.needs_grad(&[input]);
        Ok(self.push(out, rg, Rule::MaxPool2d { input, argmax }))
    }

    /// Elementwise `max(0, x)`. Subgradient at 0 is 0.
    pub fn relu(&mut self, input: ValueId) -> ValueId {
        let out = self.value(input).map(|v| v.max(F::zero()));
        let rg = self.needs_grad(&[input]);
        self.push(out, rg, Rule::Relu { input })
    }

    /// `[n,h,w,d]` → `[n,d]` by per-channel spatial mean.
    pub fn global_avg_pool(&mut self, input: ValueId) -> Result<ValueId, AutodiffError> {
        let x = self.value(input);
        let xs = x.shape();
        if xs.len() != 4 {
            return Err(AutodiffError::Shape(format!(
                "global_avg_pool expects 4-d input, got {:?}",
                xs
            )));
        }
        let (n, h, w, d) = (xs[0], xs[1], xs[2], xs[3]);
        let mut out = Tensor::zeros(&[n, d]);
        let inv = F::of_f64(1.0 / (h * w) as f64);
        let data = x.data();
        let od = out.data_mut();
        for i in 0..n {
            let orow = &mut od[i * d..(i + 1) * d];
            for p in 0..h * w {
                let irow = &data[(i * h * w + p) * d..(i * h * w + p + 1) * d];
                for (o, v) in orow.iter_mut().zip(irow) {
                    *o += *v;
                }
            }
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        let rg = self.needs_grad(&[input]);
        Ok(self.push(out, rg, Rule::GlobalAvgPool { input }))
    }

    /// `input · weightᵀ + bias`: `[n,p]` with `[q,p]` and `[q]` gives `[n,q]`.
    pub fn linear(
        &mut self,
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
    ) -> Result<ValueId, AutodiffError> {
        self.check_distinct(&[input, weight, bias])?;
        let x = self.value(input);
        let wt = self.value(weight);
        let b = self.value(bias);
        if x.rank() != 2 || wt.rank() != 2 {
            return Err(AutodiffError::Shape(format!(
                "linear expects 2-d input and weight, got {:?} and {:?}",
                x.shape(),
                wt.shape()
            )));
        }
        let (n, p) = (x.shape()[0], x.shape()[1]);
        let (q, p2) = (wt.shape()[0], wt.shape()[1]);
        if p != p2 {
            return Err(AutodiffError::Shape(format!(
                "linear dimension mismatch: input [{},{}] vs weight [{},{}]",
                n, p, q, p2
            )));
        }
        if b.shape() != [q] {
            return Err(AutodiffError::Shape(format!(
                "linear bias shape {:?} does not match {} outputs",
                b.shape(),
                q
            )));
        }
        let mut out = Tensor::zeros(&[n, q]);
        let (xd, wd, bd) = (x.data(), wt.data(), b.data());
        let od = out.data_mut();
        for i in 0..n {
            let xrow = &xd[i * p..(i + 1) * p];
            for j in 0..q {
                let wrow = &wd[j * p..(j + 1) * p];
                let mut acc = F::zero();
                for (a, b) in xrow.iter().zip(wrow) {
                    acc += *a * *b;
                }
                od[i * q + j] = acc + bd[j];
            }
        }
        let rg = self.needs_grad(&[input, weight, bias]);
        Ok(self.push(
            out,
            rg,
            Rule::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Softmax over a 1-d vector, computed with max subtraction.
    pub fn softmax_vector(&mut self, input: ValueId) -> Result<ValueId, AutodiffError> {
        let x = self.value(input);
        if x.rank() != 1 {
            return Err(AutodiffError::Shape(format!(
                "softmax_vector expects a 1-d tensor, got {:?}",
                x.shape()
            )));
        }
        let mut out = x.clone();
        let d = out.data_mut();
        let mut max = F::neg_infinity();
        for v in d.iter() {
            if *v > max {
                max = *v;
            }
        }
        let mut sum = F::zero();
        for v in d.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in d.iter_mut() {
            *v /= sum;
        }
        let rg = self.needs_grad(&[input]);
        Ok(self.push(out, rg, Rule::SoftmaxVec { input }))
    }

    /// Elementwise logistic function.
    pub fn sigmoid(&mut self, input: ValueId) -> ValueId {
        let out = self
            .value(input)
            .map(|v| F::one() / (F::one() + (-v).exp()));
        let rg = self.needs_grad(&[input]);
        self.push(out, rg, Rule::Sigmoid { input })
    }

    /// `Σᵢ weights[i] · rows[i]`: `[m,d]` with `[m]` gives `[d]`.
    pub fn weighted_sum_rows(
        &mut self,
        rows: ValueId,
        weights: ValueId,
    ) -> Result<ValueId, AutodiffError> {
        self.check_distinct(&[rows, weights])?;
        let r = self.value(rows);
        let w = self.value(weights);
        if r.rank() != 2 || w.rank() != 1 {
            return Err(AutodiffError::Shape(format!(
                "weighted_sum_rows expects [m,d] rows and [m] weights, got {:?} and {:?}",
                r.shape(),
                w.shape()
            )));
        }
        let (m, d) = (r.shape()[0], r.shape()[1]);
        if w.shape()[0] != m {
            return Err(AutodiffError::Shape(format!(
                "weighted_sum_rows length mismatch: {} rows vs {} weights",
                m,
                w.shape()[0]
            )));
        }
        let mut out = Tensor::zeros(&[d]);
        let (rd, wd) = (r.data(), w.data());
        let od = out.data_mut();
        for i in 0..m {
            let wi = wd[i];
            let row = &rd[i * d..(i + 1) * d];
            for (o, v) in od.iter_mut().zip(row) {
                *o += wi * *v;
            }
        }
        let rg = self.needs_grad(&[rows, weights]);
        Ok(self.push(out, rg, Rule::WeightedSumRows { rows, weights }))
    }

    /// Squared L2 norm of `pred - target` (sum over coordinates), as `[1]`.
    pub fn mse_loss(
        &mut self,
        pred: ValueId,
        target: ValueId,
    ) -> Result<ValueId, AutodiffError> {
        self.check_distinct(&[pred, target])?;
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(AutodiffError::Shape(format!(
                "mse_loss length mismatch: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let mut acc = F::zero();
        for (a, b) in p.data().iter().zip(t.data()) {
            let d = *a - *b;
            acc += d * d;
        }
        let rg = self.needs_grad(&[pred, target]);
        Ok(self.push(Tensor::scalar(acc), rg, Rule::MseLoss { pred, target }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, lhs: ValueId, rhs: ValueId) -> Result<ValueId, AutodiffError> {
        self.check_distinct(&[lhs, rhs])?;
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.shape() != b.shape() {
            return Err(AutodiffError::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = a.clone();
        for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
            *o += *v;
        }
        let rg = self.needs_grad(&[lhs, rhs]);
        Ok(self.push(out, rg, Rule::Add { lhs, rhs }))
    }

    /// Sum of all elements, as `[1]`.
    pub fn sum(&mut self, input: ValueId) -> ValueId {
        let acc = self.value(input).data().iter().copied().sum();
        let rg = self.needs_grad(&[input]);
        self.push(Tensor::scalar(acc), rg, Rule::Sum { input })
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, input: ValueId, factor: F) -> ValueId {
        let out = self.value(input).map(|v| v * factor);
        let rg = self.needs_grad(&[input]);
        self.push(out, rg, Rule::Scale { input, factor })
    }

    /// Same data, different shape.
    pub fn reshape(&mut self, input: ValueId, shape: &[usize]) -> Result<ValueId, AutodiffError> {
        let out = self.value(input).reshaped(shape)?;
        let rg = self.needs_grad(&[input]);
        Ok(self.push(out, rg, Rule::Reshape { input }))
    }

    /// Concatenate along the leading axis. All parts must share trailing dims.
    pub fn concat_rows(&mut self, parts: &[ValueId]) -> Result<ValueId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::Usage("concat_rows needs at least one part".into()));
        }
        let trailing: Vec<usize> = self.value(parts[0]).shape()[1..].to_vec();
        let mut rows = 0usize;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != trailing[..] {
                return Err(AutodiffError::Shape(format!(
                    "concat_rows trailing dims differ: {:?} vs {:?}",
                    &t.shape()[1..],
                    trailing
                )));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&trailing);
        let out = Tensor::new(shape, data)?;
        let rg = self.needs_grad(parts);
        Ok(self.push(
            out,
            rg,
            Rule::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Gather coordinates of a 1-d tensor.
    pub fn select_coords(
        &mut self,
        input: ValueId,
        coords: &[usize],
    ) -> Result<ValueId, AutodiffError> {
        let x = self.value(input);
        if x.rank() != 1 {
            return Err(AutodiffError::Shape(format!(
                "select_coords expects a 1-d tensor, got {:?}",
                x.shape()
            )));
        }
        let m = x.shape()[0];
        if coords.is_empty() {
            return Err(AutodiffError::Usage("select_coords needs at least one coordinate".into()));
        }
        if let Some(&bad) = coords.iter().find(|&&c| c >= m) {
            return Err(AutodiffError::Shape(format!(
                "select_coords index {} out of bounds for length {}",
                bad, m
            )));
        }
        let data: Vec<F> = coords.iter().map(|&c| x.data()[c]).collect();
        let rg = self.needs_grad(&[input]);
        Ok(self.push(
            Tensor::from_vec(data),
            rg,
            Rule::SelectCoords {
                input,
                coords: coords.to_vec(),
            },
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Populate gradients of every tracked value reachable from `loss`.
    ///
    /// `loss` must hold exactly one element. A second call without
    /// [`Tape::clear_grads`] is an error.
    pub fn backward(&mut self, loss: ValueId) -> Result<(), AutodiffError> {
        if self.backward_run {
            return Err(AutodiffError::Usage(
                "backward already run on this tape; call clear_grads first".into(),
            ));
        }
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| AutodiffError::Usage("loss id not on this tape".into()))?;
        if loss_node.value.numel() != 1 {
            return Err(AutodiffError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        self.backward_run = true;
        if !loss_node.requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::full(&[1], F::one()));

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = node.grad.as_ref() else {
                continue;
            };
            backprop_node(before, &node.rule, &node.value, grad)?;
        }
        Ok(())
    }
}

// Ensure a gradient buffer exists and return the (value, grad) pair of a node.
fn value_and_grad<F: Real>(node: &mut Node<F>) -> (&Tensor<F>, Option<&mut Tensor<F>>) {
    let Node {
        value,
        grad,
        requires_grad,
        ..
    } = node;
    if *requires_grad {
        let shape: Vec<usize> = value.shape().to_vec();
        (value, Some(grad.get_or_insert_with(|| Tensor::zeros(&shape))))
    } else {
        (value, None)
    }
}

fn disjoint<'a, F, const N: usize>(
    arena: &'a mut [Node<F>],
    ids: [ValueId; N],
) -> Result<[&'a mut Node<F>; N], AutodiffError> {
    arena
        .get_disjoint_mut(ids.map(|id| id.0))
        .map_err(|_| AutodiffError::Usage("aliased operands in backward".into()))
}

fn backprop_node<F: Real>(
    arena: &mut [Node<F>],
    rule: &Rule<F>,
    out_value: &Tensor<F>,
    g: &Tensor<F>,
) -> Result<(), AutodiffError> {
    match rule {
        Rule::Leaf => {}
        Rule::Conv2d {
            input,
            kernel,
            bias,
        } => {
            let [xn, kn, bn] = disjoint(arena, [*input, *kernel, *bias])?;
            let xs: Vec<usize> = xn.value.shape().to_vec();
            let cout = kn.value.shape()[3];
            let (n, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
            let (xv, xg) = value_and_grad(xn);
            let (kv, kg) = value_and_grad(kn);
            let (_, bg) = value_and_grad(bn);
            conv2d_backward(
                xv.data(),
                kv.data(),
                g.data(),
                xg.map(|t| t.data_mut()),
                kg.map(|t| t.data_mut()),
                bg.map(|t| t.data_mut()),
                n,
                h,
                w,
                cin,
                cout,
            );
        }
        Rule::MaxPool2d { input, argmax } => {
            let node = &mut arena[input.0];
            let (_, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            let xg = xg.data_mut();
            for (gi, &src) in g.data().iter().zip(argmax) {
                xg[src as usize] += *gi;
            }
        }
        Rule::Relu { input } => {
            let node = &mut arena[input.0];
            let (xv, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            for ((gi, xi), go) in xg.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                if *xi > F::zero() {
                    *gi += *go;
                }
            }
        }
        Rule::GlobalAvgPool { input } => {
            let node = &mut arena[input.0];
            let (xv, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            let (n, h, w, d) = {
                let s = xv.shape();
                (s[0], s[1], s[2], s[3])
            };
            let inv = F::of_f64(1.0 / (h * w) as f64);
            let gd = g.data();
            let xg = xg.data_mut();
            for i in 0..n {
                let grow = &gd[i * d..(i + 1) * d];
                for p in 0..h * w {
                    let row = &mut xg[(i * h * w + p) * d..(i * h * w + p + 1) * d];
                    for (o, v) in row.iter_mut().zip(grow) {
                        *o += *v * inv;
                    }
                }
            }
        }
        Rule::Linear {
            input,
            weight,
            bias,
        } => {
            let [xn, wn, bn] = disjoint(arena, [*input, *weight, *bias])?;
            let (n, p) = (xn.value.shape()[0], xn.value.shape()[1]);
            let q = wn.value.shape()[0];
            let (xv, xg) = value_and_grad(xn);
            let (wv, wg) = value_and_grad(wn);
            let (_, bg) = value_and_grad(bn);
            let gd = g.data();
            if let Some(xg) = xg {
                let xg = xg.data_mut();
                let wd = wv.data();
                for i in 0..n {
                    let xrow = &mut xg[i * p..(i + 1) * p];
                    for j in 0..q {
                        let gij = gd[i * q + j];
                        let wrow = &wd[j * p..(j + 1) * p];
                        for (o, v) in xrow.iter_mut().zip(wrow) {
                            *o += gij * *v;
                        }
                    }
                }
            }
            if let Some(wg) = wg {
                let wg = wg.data_mut();
                let xd = xv.data();
                for i in 0..n {
                    let xrow = &xd[i * p..(i + 1) * p];
                    for j in 0..q {
                        let gij = gd[i * q + j];
                        let wrow = &mut wg[j * p..(j + 1) * p];
                        for (o, v) in wrow.iter_mut().zip(xrow) {
                            *o += gij * *v;
                        }
                    }
                }
            }
            if let Some(bg) = bg {
                let bg = bg.data_mut();
                for i in 0..n {
                    for j in 0..q {
                        bg[j] += gd[i * q + j];
                    }
                }
            }
        }
        Rule::SoftmaxVec { input } => {
            let node = &mut arena[input.0];
            let (_, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            let y = out_value.data();
            let gd = g.data();
            let mut dot = F::zero();
            for (yi, gi) in y.iter().zip(gd) {
                dot += *yi * *gi;
            }
            for ((o, yi), gi) in xg.data_mut().iter_mut().zip(y).zip(gd) {
                *o += *yi * (*gi - dot);
            }
        }
        Rule::Sigmoid { input } => {
            let node = &mut arena[input.0];
            let (_, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            for ((o, yi), gi) in xg.data_mut().iter_mut().zip(out_value.data()).zip(g.data()) {
                *o += *gi * *yi * (F::one() - *yi);
            }
        }
        Rule::WeightedSumRows { rows, weights } => {
            let [rn, wn] = disjoint(arena, [*rows, *weights])?;
            let (m, d) = (rn.value.shape()[0], rn.value.shape()[1]);
            let (rv, rg) = value_and_grad(rn);
            let (wv, wg) = value_and_grad(wn);
            let gd = g.data();
            if let Some(rg) = rg {
                let rg = rg.data_mut();
                let wd = wv.data();
                for i in 0..m {
                    let wi = wd[i];
                    let row = &mut rg[i * d..(i + 1) * d];
                    for (o, v) in row.iter_mut().zip(gd) {
                        *o += wi * *v;
                    }
                }
            }
            if let Some(wg) = wg {
                let wg = wg.data_mut();
                let rd = rv.data();
                for i in 0..m {
                    let row = &rd[i * d..(i + 1) * d];
                    let mut acc = F::zero();
                    for (a, b) in row.iter().zip(gd) {
                        acc += *a * *b;
                    }
                    wg[i] += acc;
                }
            }
        }
        Rule::MseLoss { pred, target } => {
            let [pn, tn] = disjoint(arena, [*pred, *target])?;
            let g0 = g.data()[0];
            let two = F::of_f64(2.0);
            let (pv, pg) = value_and_grad(pn);
            let (tv, tg) = value_and_grad(tn);
            if let Some(pg) = pg {
                for ((o, a), b) in pg.data_mut().iter_mut().zip(pv.data()).zip(tv.data()) {
                    *o += g0 * two * (*a - *b);
                }
            }
            if let Some(tg) = tg {
                for ((o, a), b) in tg.data_mut().iter_mut().zip(pv.data()).zip(tv.data()) {
                    *o += g0 * two * (*b - *a);
                }
            }
        }
        Rule::Add { lhs, rhs } => {
            let [ln, rn] = disjoint(arena, [*lhs, *rhs])?;
            for n in [ln, rn] {
                let (_, Some(ng)) = value_and_grad(n) else {
                    continue;
                };
                for (o, v) in ng.data_mut().iter_mut().zip(g.data()) {
                    *o += *v;
                }
            }
        }
        Rule::Scale { input, factor } => {
            let node = &mut arena[input.0];
            let (_, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            for (o, v) in xg.data_mut().iter_mut().zip(g.data()) {
                *o += *factor * *v;
            }
        }
        Rule::Sum { input } => {
            let node = &mut arena[input.0];
            let (_, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            let g0 = g.data()[0];
            for o in xg.data_mut() {
                *o += g0;
            }
        }
        Rule::Reshape { input } => {
            let node = &mut arena[input.0];
            let (_, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            for (o, v) in xg.data_mut().iter_mut().zip(g.data()) {
                *o += *v;
            }
        }
        Rule::ConcatRows { parts } => {
            let mut offset = 0usize;
            for &p in parts {
                let node = &mut arena[p.0];
                let len = node.value.numel();
                let (_, Some(pg)) = value_and_grad(node) else {
                    offset += len;
                    continue;
                };
                for (o, v) in pg.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                    *o += *v;
                }
                offset += len;
            }
        }
        Rule::SelectCoords { input, coords } => {
            let node = &mut arena[input.0];
            let (_, Some(xg)) = value_and_grad(node) else {
                return Ok(());
            };
            let xg = xg.data_mut();
            for (gi, &c) in g.data().iter().zip(coords) {
                xg[c] += *gi;
            }
        }
    }
    Ok(())
}

// ── Convolution kernels ─────────────────────────────────────────────────
//
// NHWC layout with the kernel stored [ky,kx,cin,cout] keeps the innermost
// loop contiguous over output channels on both sides, which is what the
// autovectorizer needs.

// Spatial range of output pixels whose input pixel (offset by d ∈ {-1,0,1})
// stays inside [0, len).
fn valid_range(d: isize, len: usize) -> (usize, usize) {
    match d {
        -1 => (1, len),
        1 => (0, len - 1),
        _ => (0, len),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<F: Real>(
    input: &[F],
    kernel: &[F],
    bias: &[F],
    out: &mut [F],
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) {
    for pix in out.chunks_exact_mut(cout) {
        pix.copy_from_slice(bias);
    }
    for i in 0..n {
        let in_img = &input[i * h * w * cin..(i + 1) * h * w * cin];
        let out_img = &mut out[i * h * w * cout..(i + 1) * h * w * cout];
        for ky in 0..3usize {
            let dy = ky as isize - 1;
            let (y_lo, y_hi) = valid_range(dy, h);
            for kx in 0..3usize {
                let dx = kx as isize - 1;
                let (x_lo, x_hi) = valid_range(dx, w);
                let kslab = &kernel[(ky * 3 + kx) * cin * cout..(ky * 3 + kx + 1) * cin * cout];
                for y in y_lo..y_hi {
                    let iy = (y as isize + dy) as usize;
                    let in_row = &in_img[iy * w * cin..(iy + 1) * w * cin];
                    let out_row = &mut out_img[y * w * cout..(y + 1) * w * cout];
                    // 4 output pixels at a time: four independent FMA
                    // streams hide the accumulator latency.
                    let mut x = x_lo;
                    while x + 4 <= x_hi {
                        let ix = (x as isize + dx) as usize;
                        let itile = &in_row[ix * cin..(ix + 4) * cin];
                        let otile = &mut out_row[x * cout..(x + 4) * cout];
                        let (o0, rest) = otile.split_at_mut(cout);
                        let (o1, rest) = rest.split_at_mut(cout);
                        let (o2, o3) = rest.split_at_mut(cout);
                        for (ci, krow) in kslab.chunks_exact(cout).enumerate() {
                            let v0 = itile[ci];
                            let v1 = itile[cin + ci];
                            let v2 = itile[2 * cin + ci];
                            let v3 = itile[3 * cin + ci];
                            for ((((a0, a1), a2), a3), &k) in o0
                                .iter_mut()
                                .zip(o1.iter_mut())
                                .zip(o2.iter_mut())
                                .zip(o3.iter_mut())
                                .zip(krow)
                            {
                                *a0 += v0 * k;
                                *a1 += v1 * k;
                                *a2 += v2 * k;
                                *a3 += v3 * k;
                            }
                        }
                        x += 4;
                    }
                    while x < x_hi {
                        let ix = (x as isize + dx) as usize;
                        let ipix = &in_row[ix * cin..(ix + 1) * cin];
                        let opix = &mut out_row[x * cout..(x + 1) * cout];
                        for (krow, &v) in kslab.chunks_exact(cout).zip(ipix) {
                            for (o, &k) in opix.iter_mut().zip(krow) {
                                *o += v * k;
                            }
                        }
                        x += 1;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<F: Real>(
    input: &[F],
    kernel: &[F],
    g_out: &[F],
    mut g_input: Option<&mut [F]>,
    mut g_kernel: Option<&mut [F]>,
    g_bias: Option<&mut [F]>,
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) {
    if let Some(gb) = g_bias {
        for grow in g_out.chunks_exact(cout) {
            for (o, v) in gb.iter_mut().zip(grow) {
                *o += *v;
            }
        }
    }
    for i in 0..n {
        let in_img = &input[i * h * w * cin..(i + 1) * h * w * cin];
        let gout_img = &g_out[i * h * w * cout..(i + 1) * h * w * cout];
        for ky in 0..3usize {
            let dy = ky as isize - 1;
            let (y_lo, y_hi) = valid_range(dy, h);
            for kx in 0..3usize {
                let dx = kx as isize - 1;
                let (x_lo, x_hi) = valid_range(dx, w);
                let kbase = (ky * 3 + kx) * cin * cout;
                for y in y_lo..y_hi {
                    let iy = (y as isize + dy) as usize;
                    let in_row = &in_img[iy * w * cin..(iy + 1) * w * cin];
                    let gout_row = &gout_img[y * w * cout..(y + 1) * w * cout];
                    if let Some(gk) = g_kernel.as_deref_mut() {
                        let gslab = &mut gk[kbase..kbase + cin * cout];
                        let mut x = x_lo;
                        while x + 4 <= x_hi {
                            let ix = (x as isize + dx) as usize;
                            let itile = &in_row[ix * cin..(ix + 4) * cin];
                            let gtile = &gout_row[x * cout..(x + 4) * cout];
                            let (g0, rest) = gtile.split_at(cout);
                            let (g1, rest) = rest.split_at(cout);
                            let (g2, g3) = rest.split_at(cout);
                            for (ci, gkrow) in gslab.chunks_exact_mut(cout).enumerate() {
                                let v0 = itile[ci];
                                let v1 = itile[cin + ci];
                                let v2 = itile[2 * cin + ci];
                                let v3 = itile[3 * cin + ci];
                                for ((((o, &a), &b), &c), &d) in gkrow
                                    .iter_mut()
                                    .zip(g0)
                                    .zip(g1)
                                    .zip(g2)
                                    .zip(g3)
                                {
                                    *o += v0 * a + v1 * b + v2 * c + v3 * d;
                                }
                            }
                            x += 4;
                        }
                        while x < x_hi {
                            let ix = (x as isize + dx) as usize;
                            let ipix = &in_row[ix * cin..(ix + 1) * cin];
                            let grow = &gout_row[x * cout..(x + 1) * cout];
                            for (gkrow, &v) in gslab.chunks_exact_mut(cout).zip(ipix) {
                                for (o, &go) in gkrow.iter_mut().zip(grow) {
                                    *o += v * go;
                                }
                            }
                            x += 1;
                        }
                    }
                    if let Some(gi) = g_input.as_deref_mut() {
                        let kslab = &kernel[kbase..kbase + cin * cout];
                        let gin_row = &mut gi[(i * h + iy) * w * cin..(i * h + iy + 1) * w * cin];
                        let mut x = x_lo;
                        while x + 4 <= x_hi {
                            let ix = (x as isize + dx) as usize;
                            let ptile = &mut gin_row[ix * cin..(ix + 4) * cin];
                            let gtile = &gout_row[x * cout..(x + 4) * cout];
                            let (g0, rest) = gtile.split_at(cout);
                            let (g1, rest) = rest.split_at(cout);
                            let (g2, g3) = rest.split_at(cout);
                            for (ci, krow) in kslab.chunks_exact(cout).enumerate() {
                                let mut a0 = F::zero();
                                let mut a1 = F::zero();
                                let mut a2 = F::zero();
                                let mut a3 = F::zero();
                                for ((((&k, &b0), &b1), &b2), &b3) in
                                    krow.iter().zip(g0).zip(g1).zip(g2).zip(g3)
                                {
                                    a0 += k * b0;
                                    a1 += k * b1;
                                    a2 += k * b2;
                                    a3 += k * b3;
                                }
                                ptile[ci] += a0;
                                ptile[cin + ci] += a1;
                                ptile[2 * cin + ci] += a2;
                                ptile[3 * cin + ci] += a3;
                            }
                            x += 4;
                        }
                        while x < x_hi {
                            let ix = (x as isize + dx) as usize;
                            let gpix = &mut gin_row[ix * cin..(ix + 1) * cin];
                            let grow = &gout_row[x * cout..(x + 1) * cout];
                            for (krow, gv) in kslab.chunks_exact(cout).zip(gpix.iter_mut()) {
                                let mut acc = F::zero();
                                for (&k, &go) in krow.iter().zip(grow) {
                                    acc += k * go;
                                }
                                *gv += acc;
                            }
                            x += 1;
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
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t1(data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(data.to_vec())
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    // Quadruple-loop reference convolution, independent of the tape kernel.
    fn conv_reference(
        x: &Tensor<f64>,
        k: &Tensor<f64>,
        b: &Tensor<f64>,
    ) -> Tensor<f64> {
        let (n, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let cout = k.shape()[3];
        let mut out = Tensor::zeros(&[n, h, w, cout]);
        for i in 0..n {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    for co in 0..cout {
                        let mut acc = b.data()[co];
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (iy, ix) = (y + ky - 1, xx + kx - 1);
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv = x.data()
                                        [((i * h + iy as usize) * w + ix as usize) * cin + ci];
                                    let kv = k.data()
                                        [((ky as usize * 3 + kx as usize) * cin + ci) * cout + co];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out.data_mut()[((i * h + y as usize) * w + xx as usize) * cout + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_all_ones_counts_window_overlap() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 3, 3, 1], 1.0));
        let k = tape.constant(Tensor::full(&[3, 3, 1, 1], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b).unwrap();
        // corner 4, edge 6, center 9
        let expect = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(tape.value(y).data(), &expect);
    }

    #[test]
    fn conv2d_zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4, 3]));
        let k = tape.constant(random_tensor(&[3, 3, 3, 5], &mut rng));
        let b = tape.constant(Tensor::zeros(&[5]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_matches_quadruple_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[1, 5, 5, 2], &mut rng);
        let k = random_tensor(&[3, 3, 2, 4], &mut rng);
        let b = random_tensor(&[4], &mut rng);
        let expect = conv_reference(&x, &k, &b);
        let mut tape = Tape::new();
        let (xi, ki, bi) = (tape.constant(x), tape.constant(k), tape.constant(b));
        let y = tape.conv2d(xi, ki, bi).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn conv2d_channel_mismatch_is_shape_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4, 3]));
        let k = tape.constant(Tensor::zeros(&[3, 3, 2, 4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        assert!(matches!(tape.conv2d(x, k, b), Err(AutodiffError::Shape(_))));
    }

    #[test]
    fn maxpool_single_window() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.maxpool2d(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
    }

    #[test]
    fn maxpool_constant_input_stays_constant() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 4, 4, 2], 3.25));
        let y = tape.maxpool2d(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn maxpool_matches_window_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[1, 4, 4, 3], &mut rng);
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let y = tape.maxpool2d(xi).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                for c in 0..3 {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x.data()[((oy * 2 + dy) * 4 + ox * 2 + dx) * 3 + c];
                            best = best.max(v);
                        }
                    }
                    assert_eq!(tape.value(y).data()[(oy * 2 + ox) * 3 + c], best);
                }
            }
        }
    }

    #[test]
    fn maxpool_odd_dims_is_shape_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 1]));
        assert!(matches!(tape.maxpool2d(x), Err(AutodiffError::Shape(_))));
    }

    #[test]
    fn maxpool_gradient_routes_to_first_max_on_ties() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 2, 2, 1], 2.0), true);
        let y = tape.maxpool2d(x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        // tied window: only the first element (row-major) receives the gradient
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_clamps_and_routes_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[-1.0, 0.0, 2.0]), true);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        // subgradient at 0 is 0
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_gives_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[-5.0, -0.1, -1e9]));
        let y = tape.relu(x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_gradient_of_sum_at_minus_one_and_two() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[-1.0, 2.0]), true);
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn gap_constant_channel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 3, 3, 4], 1.5));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 4]);
        assert!(tape.value(y).data().iter().all(|&v: &f64| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn gap_two_by_two_channel_mean() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
    }

    #[test]
    fn gap_matches_per_channel_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[2, 3, 5, 4], &mut rng);
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let y = tape.global_avg_pool(xi).unwrap();
        for i in 0..2 {
            for c in 0..4 {
                let mut acc = 0.0;
                for p in 0..15 {
                    acc += x.data()[(i * 15 + p) * 4 + c];
                }
                let got = tape.value(y).data()[i * 4 + c];
                assert!((got - acc / 15.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_identity_weight_passes_input_through() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let w = tape.constant(eye);
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn linear_zero_weight_gives_bias_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![9.0; 6]).unwrap());
        let w = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(t1(&[0.5, -0.5]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn linear_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[3, 4], &mut rng);
        let w = random_tensor(&[2, 4], &mut rng);
        let b = random_tensor(&[2], &mut rng);
        let mut tape = Tape::new();
        let (xi, wi, bi) = (
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            tape.constant(b.clone()),
        );
        let y = tape.linear(xi, wi, bi).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = b.data()[j];
                for p in 0..4 {
                    acc += x.data()[i * 4 + p] * w.data()[j * 4 + p];
                }
                assert!((tape.value(y).data()[i * 2 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_dimension_mismatch_is_shape_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let w = tape.constant(Tensor::zeros(&[2, 4]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.linear(x, w, b), Err(AutodiffError::Shape(_))));
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        for c in [-100.0, 0.0, 3.7, 500.0] {
            let mut tape = Tape::new();
            let x = tape.constant(t1(&[c, c, c]));
            let y = tape.softmax_vector(x).unwrap();
            for v in tape.value(y).data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_closed_form_quarters() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[0.0, 3.0f64.ln()]));
        let y = tape.softmax_vector(x).unwrap();
        let got = tape.value(y).data();
        assert!((got[0] - 0.25).abs() < 1e-15);
        assert!((got[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_single_element_is_one() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[42.0]));
        let y = tape.softmax_vector(x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0]);
    }

    #[test]
    fn sigmoid_values_and_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[0.0]), true);
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data(), &[0.5]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!((tape.grad(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[-80.0, -1000.0]));
        let y = tape.sigmoid(x);
        for v in tape.value(y).data() {
            assert!(v.is_finite() && *v < 1e-6 && *v >= 0.0);
        }
    }

    #[test]
    fn weighted_sum_selects_first_row() {
        let mut tape = Tape::new();
        let rows = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let w = tape.constant(t1(&[1.0, 0.0]));
        let y = tape.weighted_sum_rows(rows, w).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn weighted_sum_equal_rows_scales_by_weight_sum() {
        let mut tape = Tape::new();
        let rows = tape.constant(Tensor::new(vec![3, 2], vec![2.0, -1.0].repeat(3)).unwrap());
        let w = tape.constant(t1(&[0.2, 0.5, 0.8]));
        let y = tape.weighted_sum_rows(rows, w).unwrap();
        let got = tape.value(y).data();
        assert!((got[0] - 3.0).abs() < 1e-12);
        assert!((got[1] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows = random_tensor(&[4, 3], &mut rng);
        let w = random_tensor(&[4], &mut rng);
        let mut tape = Tape::new();
        let (ri, wi) = (tape.constant(rows.clone()), tape.constant(w.clone()));
        let y = tape.weighted_sum_rows(ri, wi).unwrap();
        for d in 0..3 {
            let mut acc = 0.0;
            for i in 0..4 {
                acc += w.data()[i] * rows.data()[i * 3 + d];
            }
            assert!((tape.value(y).data()[d] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_sum_length_mismatch_is_shape_error() {
        let mut tape = Tape::<f64>::new();
        let rows = tape.constant(Tensor::zeros(&[3, 2]));
        let w = tape.constant(Tensor::zeros(&[4]));
        assert!(matches!(
            tape.weighted_sum_rows(rows, w),
            Err(AutodiffError::Shape(_))
        ));
    }

    #[test]
    fn mse_zero_when_equal_and_sums_squares() {
        let mut tape = Tape::new();
        let p = tape.constant(t1(&[0.3; 9]));
        let t = tape.constant(t1(&[0.3; 9]));
        let l = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        // uniform difference 0.1 over 9 attributes -> 9 * 0.01
        let mut tape = Tape::new();
        let p = tape.constant(t1(&[0.6; 9]));
        let t = tape.constant(t1(&[0.5; 9]));
        let l = tape.mse_loss(p, t).unwrap();
        assert!((tape.value(l).item() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn mse_gradient_is_two_times_difference() {
        let mut tape = Tape::new();
        let p = tape.leaf(t1(&[1.0, 2.0]), true);
        let t = tape.constant(t1(&[0.5, 2.5]));
        let l = tape.mse_loss(p, t).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn mse_length_mismatch_is_shape_error() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::zeros(&[3]));
        let t = tape.constant(Tensor::zeros(&[4]));
        assert!(matches!(tape.mse_loss(p, t), Err(AutodiffError::Shape(_))));
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, -2.0, 3.0]), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // sum(x^2) expressed as squared distance to zero
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        let zero = tape.constant(t1(&[0.0, 0.0]));
        let l = tape.mse_loss(x, zero).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_without_reset_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0]), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(AutodiffError::Usage(_))));
        tape.clear_grads();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(AutodiffError::Usage(_))));
    }

    #[test]
    fn concat_select_reshape_round_trip() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), true);
        let b = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(), true);
        let cat = tape.concat_rows(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).shape(), &[2, 2]);
        let flat = tape.reshape(cat, &[4]).unwrap();
        let picked = tape.select_coords(flat, &[3, 0]).unwrap();
        assert_eq!(tape.value(picked).data(), &[4.0, 1.0]);
        let s = tape.sum(picked);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn add_and_scale_combine_losses() {
        let mut tape = Tape::new();
        let a = tape.leaf(t1(&[0.2]), true);
        let b = tape.leaf(t1(&[0.7]), true);
        let sa = tape.scale(a, 0.1);
        let total = tape.add(sa, b).unwrap();
        assert!((tape.value(total).item() - 0.72).abs() < 1e-15);
        tape.backward(total).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[0.1]);
        assert_eq!(tape.grad(b).unwrap().data(), &[1.0]);
    }

    #[test]
    fn aliased_operands_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        assert!(matches!(tape.add(x, x), Err(AutodiffError::Usage(_))));
    }
}
