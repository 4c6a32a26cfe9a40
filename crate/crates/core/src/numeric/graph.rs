//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves copy their
//! values in, so parameters can be mutated freely between passes. A node
//! records gradient work only when at least one of its inputs requires a
//! gradient; everything downstream of frozen or constant leaves is skipped
//! during [`Graph::backward`].

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Floor on the norm used by `l2_normalize`.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Softmax { x: Var, axis: usize },
    L2Normalize { x: Var, axis: usize, norms: Vec<f64> },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, padding: usize },
    /// Scalar-valued function with its gradient precomputed at forward time.
    Fused { input: Var, local_grad: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) lane extents.
fn lanes(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Argument(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies `t` in as a leaf; it requires a gradient iff `t` does.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.push_node(value, Op::Leaf, t.requires_grad())
    }

    /// Adds a leaf that never requires a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        self.push_node(value, Op::Leaf, false)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "{name}: non-finite output {} at flat index {pos}",
                data[pos]
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(Tensor::from_parts(shape, data), op, requires_grad))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`c` bias to every row of an `(r, c)` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::Dimension {
                op: "add_row",
                left: sx,
                right: sb,
            });
        }
        let c = sx[1];
        let bd = self.data(bias);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % c])
            .collect();
        self.push("add_row", sx, out, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v * factor).collect();
        self.push("scale", self.shape(x).to_vec(), out, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.push("relu", self.shape(x).to_vec(), out, Op::Relu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v.exp()).collect();
        self.push("exp", self.shape(x).to_vec(), out, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(v) = self.data(x).iter().find(|&&v| v <= 0.0) {
            return Err(Error::Evaluation(format!("log of non-positive value {v}")));
        }
        let out = self.data(x).iter().map(|v| v.ln()).collect();
        self.push("log", self.shape(x).to_vec(), out, Op::Log(x), &[x])
    }

    /// Sum of all elements, accumulated left to right.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().fold(0.0, |acc, v| acc + v);
        self.push("sum", vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.data(x).len() as f64;
        let s = self.data(x).iter().fold(0.0, |acc, v| acc + v);
        self.push("mean", vec![1], vec![s / n], Op::Mean(x), &[x])
    }

    /// Softmax along `axis`, computed with the lane maximum subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = lanes(&shape, axis)?;
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| xd[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (xd[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        self.push("softmax", shape, out, Op::Softmax { x, axis }, &[x])
    }

    /// Scales every lane along `axis` to unit Euclidean norm. Norms below
    /// `NORM_EPS` are clamped, so a dead (all-zero) lane maps to zero instead
    /// of NaN.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = lanes(&shape, axis)?;
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        let mut norms = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let norm = (0..len).map(|k| xd[idx(k)] * xd[idx(k)]).sum::<f64>().sqrt();
                for k in 0..len {
                    out[idx(k)] = xd[idx(k)] / norm.max(NORM_EPS);
                }
                norms.push(norm);
            }
        }
        self.push("l2_normalize", shape, out, Op::L2Normalize { x, axis, norms }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != self.data(x).len() {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape,
            });
        }
        let out = self.data(x).to_vec();
        self.push("reshape", shape, out, Op::Reshape(x), &[x])
    }

    /// 2-D convolution of `(n, c, h, w)` input with `(o, c, k, k)` weights and
    /// a length-`o` bias, zero padding on every border.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        let bad = || Error::Dimension {
            op: "conv2d",
            left: sx.clone(),
            right: sw.clone(),
        };
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || sb != [sw[0]] {
            return Err(bad());
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (oc, k) = (sw[0], sw[2]);
        let oh = conv_out(h, k, stride, padding).ok_or_else(bad)?;
        let ow = conv_out(wd, k, stride, padding).ok_or_else(bad)?;
        let (xd, wdat, bd) = (self.data(x), self.data(w), self.data(b));
        let mut out = vec![0.0; n * oc * oh * ow];
        for ni in 0..n {
            for o in 0..oc {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = bd[o];
                        for ci in 0..c {
                            for ki in 0..k {
                                let iy = (y * stride + ki) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kj in 0..k {
                                    let ix = (xo * stride + kj) as isize - padding as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = xd[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                    let wv = wdat[((o * c + ci) * k + ki) * k + kj];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((ni * oc + o) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
        self.push(
            "conv2d",
            vec![n, oc, oh, ow],
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            &[x, w, b],
        )
    }

    /// Records a scalar-valued function of `input` whose gradient was
    /// computed alongside its value.
    pub(crate) fn fused_scalar(&mut self, name: &str, input: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.data(input).len() {
            return Err(Error::Dimension {
                op: "fused_scalar",
                left: self.shape(input).to_vec(),
                right: vec![local_grad.len()],
            });
        }
        if let Some(g) = local_grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Evaluation(format!("{name}: non-finite gradient {g}")));
        }
        self.push(name, vec![1], vec![value], Op::Fused { input, local_grad }, &[input])
    }

    /// Propagates d`output`/d(node) back through the tape.
    ///
    /// `output` must be a one-element node. Leaves that require a gradient
    /// but are unreachable from `output` receive zeros.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.data(output).len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &dout, &mut grads);
            grads[idx] = Some(dout);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(buf);
    }

    fn backward_node(&self, node: &Node, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let (ad, bd) = (self.data(a), self.data(b));
                self.accumulate(grads, a, |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += dout[i * n + j] * bd[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let av = ad[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += av * dout[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    self.accumulate(grads, v, |g| g.iter_mut().zip(dout).for_each(|(g, d)| *g += d));
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                self.accumulate(grads, a, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * bd[i];
                    }
                });
                self.accumulate(grads, b, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * ad[i];
                    }
                });
            }
            Op::AddRow(x, bias) => {
                let c = self.shape(bias)[0];
                self.accumulate(grads, x, |g| g.iter_mut().zip(dout).for_each(|(g, d)| *g += d));
                self.accumulate(grads, bias, |g| {
                    for (i, d) in dout.iter().enumerate() {
                        g[i % c] += d;
                    }
                });
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, x, |g| g.iter_mut().zip(dout).for_each(|(g, d)| *g += d * factor));
            }
            Op::Relu(x) => {
                let xd = self.data(x);
                self.accumulate(grads, x, |g| {
                    for i in 0..g.len() {
                        if xd[i] > 0.0 {
                            g[i] += dout[i];
                        }
                    }
                });
            }
            Op::Exp(x) => {
                self.accumulate(grads, x, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * out[i];
                    }
                });
            }
            Op::Log(x) => {
                let xd = self.data(x);
                self.accumulate(grads, x, |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] / xd[i];
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, x, |g| g.iter_mut().for_each(|g| *g += dout[0]));
            }
            Op::Mean(x) => {
                let scale = dout[0] / self.data(x).len() as f64;
                self.accumulate(grads, x, |g| g.iter_mut().for_each(|g| *g += scale));
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = lanes(self.shape(x), axis).expect("validated in forward");
                self.accumulate(grads, x, |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + i;
                            let dot: f64 = (0..len).map(|k| dout[idx(k)] * out[idx(k)]).sum();
                            for k in 0..len {
                                g[idx(k)] += out[idx(k)] * (dout[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::L2Normalize { x, axis, ref norms } => {
                let (outer, len, inner) = lanes(self.shape(x), axis).expect("validated in forward");
                self.accumulate(grads, x, |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + i;
                            let norm = norms[o * inner + i];
                            if norm < NORM_EPS {
                                // clamped: the op is a plain scaling here
                                for k in 0..len {
                                    g[idx(k)] += dout[idx(k)] / NORM_EPS;
                                }
                                continue;
                            }
                            let dot: f64 = (0..len).map(|k| dout[idx(k)] * out[idx(k)]).sum();
                            for k in 0..len {
                                g[idx(k)] += (dout[idx(k)] - out[idx(k)] * dot) / norm;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, x, |g| g.iter_mut().zip(dout).for_each(|(g, d)| *g += d));
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (sx, sw) = (self.shape(x), self.shape(w));
                let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let (oc, k) = (sw[0], sw[2]);
                let (oh, ow) = (node.value.shape()[2], node.value.shape()[3]);
                let (xd, wdat) = (self.data(x), self.data(w));
                // Visits every (output, kernel tap, input) triple that contributed.
                let each_tap = |f: &mut dyn FnMut(usize, usize, usize)| {
                    for ni in 0..n {
                        for o in 0..oc {
                            for y in 0..oh {
                                for xo in 0..ow {
                                    let oi = ((ni * oc + o) * oh + y) * ow + xo;
                                    for ci in 0..c {
                                        for ki in 0..k {
                                            let iy = (y * stride + ki) as isize - padding as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kj in 0..k {
                                                let ix = (xo * stride + kj) as isize - padding as isize;
                                                if ix < 0 || ix >= wd as isize {
                                                    continue;
                                                }
                                                let xi = ((ni * c + ci) * h + iy as usize) * wd + ix as usize;
                                                let wi = ((o * c + ci) * k + ki) * k + kj;
                                                f(oi, xi, wi);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                };
                self.accumulate(grads, x, |g| each_tap(&mut |oi, xi, wi| g[xi] += dout[oi] * wdat[wi]));
                self.accumulate(grads, w, |g| each_tap(&mut |oi, xi, wi| g[wi] += dout[oi] * xd[xi]));
                self.accumulate(grads, b, |g| {
                    let plane = oh * ow;
                    for (oi, d) in dout.iter().enumerate() {
                        g[(oi / plane) % oc] += d;
                    }
                });
            }
            Op::Fused { input, ref local_grad } => {
                self.accumulate(grads, input, |g| {
                    for (g, l) in g.iter_mut().zip(local_grad) {
                        *g += dout[0] * l;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let col = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let r = g.matmul(eye, col).unwrap();
        assert_eq!(g.value(r).data(), &[3.0, 4.0]);

        let row = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let r = g.matmul(row, col).unwrap();
        assert_eq!(g.value(r).shape(), &[1, 1]);
        assert_eq!(g.value(r).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn elementwise_definitions() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let v = g.constant(t(&[1, 2], &[3.0, 4.0]));
        let n = g.l2_normalize(v, 1).unwrap();
        assert_eq!(g.value(n).data(), &[0.6, 0.8]);

        let z = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let s = g.softmax(z, 1).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_norm_row_maps_to_zero() {
        let mut g = Graph::new();
        let v = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let n = g.l2_normalize(v, 1).unwrap();
        assert_eq!(g.value(n).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let v = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.log(v), Err(Error::Evaluation(_))));
    }

    #[test]
    fn overflow_is_reported() {
        let mut g = Graph::new();
        let v = g.constant(t(&[1], &[1000.0]));
        assert!(matches!(g.exp(v), Err(Error::Evaluation(_))));
    }

    #[test]
    fn constants_record_no_gradient_work() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let w = g.leaf(&t(&[2], &[3.0, 4.0]).with_requires_grad(true));
        let p = g.mul(a, w).unwrap();
        let s = g.sum(p).unwrap();
        assert!(!g.requires_grad(a));
        assert!(g.requires_grad(s));
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0, 2.0]);
        assert!(grads.get(a).is_none());
    }

    #[test]
    fn unreachable_leaves_get_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let unused = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true));
        let s = g.sum(a).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn conv_output_shape() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 3, 8, 8]));
        let w = g.constant(Tensor::zeros(vec![4, 3, 3, 3]));
        let b = g.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4, 4, 4]);
        assert_eq!(g.value(y).data()[16], 2.0);
    }

    #[test]
    fn sums_are_deterministic() {
        let data: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_vec(data.clone()).unwrap());
            let s = g.sum(x).unwrap();
            g.value(s).data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
