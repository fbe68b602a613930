use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
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
    Conv2d { input: Var, weight: Var, geom: ConvGeom },
    TConv2d { input: Var, weight: Var, geom: ConvGeom },
    Dense { input: Var, weight: Var, rows: usize, inner: usize, cols: usize },
    LeakyRelu { input: Var, slope: f64 },
    Mse { a: Var, b: Var },
    Reshape { input: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: f64 },
    Sum { input: Var },
    SphereHinge { input: Var, center: Vec<f64>, radius_sq: f64, nu: f64 },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, .. }
            | Op::TConv2d { input, weight, .. }
            | Op::Dense { input, weight, .. } => vec![*input, *weight],
            Op::Mse { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::LeakyRelu { input, .. }
            | Op::Reshape { input }
            | Op::Scale { input, .. }
            | Op::Sum { input }
            | Op::SphereHinge { input, .. } => vec![*input],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward sweep is a single reverse scan.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Accumulates the gradient of `var` into `tensor.grad`.
    ///
    /// Calling this twice without [`Tensor::zero_grad`] adds both contributions.
    pub fn write_into(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        let g = self
            .get(var)
            .ok_or_else(|| Error::Gradient(format!("no gradient recorded for node {}", var.0)))?;
        tensor.accumulate_grad(g)
    }
}

fn shape_err(op: &str, msg: String) -> Error {
    Error::Shape(format!("{op}: {msg}"))
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copies the node value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph nodes hold consistent shapes")
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::Gradient("graph already consumed by backward".into()));
        }
        if cfg!(debug_assertions) && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {:?}",
                std::mem::discriminant(&op)
            )));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { shape, value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf copied from `t`; it participates in backward iff `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf from raw parts.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.input(&t))
    }

    /// Bias-free 2-D convolution of an NCHW input with an `(O, I, K, K)` weight.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(shape_err("conv2d", format!("input has {} channels, weight expects {}", xs[1], ws[1])));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        let k = ws[2];
        let (Some(oh), Some(ow)) =
            (conv::conv_out_len(xs[2], k, stride, padding), conv::conv_out_len(xs[3], k, stride, padding))
        else {
            return Err(shape_err("conv2d", format!("kernel {k} larger than padded input {xs:?} (p={padding})")));
        };
        let geom = ConvGeom {
            batch: xs[0],
            big_channels: xs[1],
            big_h: xs[2],
            big_w: xs[3],
            small_channels: ws[0],
            small_h: oh,
            small_w: ow,
            kernel: k,
            stride,
            padding,
        };
        let value = conv::corr_forward(self.value(input), self.value(weight), &geom);
        self.push(vec![xs[0], ws[0], oh, ow], value, Op::Conv2d { input, weight, geom })
    }

    /// Transposed convolution with an `(I, O, K, K)` weight; the output side
    /// is `(H - 1) s - 2p + K + output_padding`.
    pub fn tconv2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(shape_err("tconv2d", format!("input {xs:?}, weight {ws:?}")));
        }
        if xs[1] != ws[0] {
            return Err(shape_err("tconv2d", format!("input has {} channels, weight expects {}", xs[1], ws[0])));
        }
        if stride == 0 || output_padding >= stride {
            return Err(Error::InvalidArgument(format!(
                "tconv2d: need stride >= 1 and output_padding < stride (got s={stride}, op={output_padding})"
            )));
        }
        let k = ws[2];
        let (Some(oh), Some(ow)) = (
            conv::tconv_out_len(xs[2], k, stride, padding, output_padding),
            conv::tconv_out_len(xs[3], k, stride, padding, output_padding),
        ) else {
            return Err(shape_err("tconv2d", format!("empty output for input {xs:?}, k={k}, p={padding}")));
        };
        if conv::conv_out_len(oh, k, stride, padding) != Some(xs[2])
            || conv::conv_out_len(ow, k, stride, padding) != Some(xs[3])
        {
            return Err(shape_err("tconv2d", format!("kernel {k} larger than padded output {oh}x{ow}")));
        }
        let geom = ConvGeom {
            batch: xs[0],
            big_channels: ws[1],
            big_h: oh,
            big_w: ow,
            small_channels: ws[0],
            small_h: xs[2],
            small_w: xs[3],
            kernel: k,
            stride,
            padding,
        };
        let value = conv::corr_backward_input(self.value(input), self.value(weight), &geom);
        self.push(vec![xs[0], ws[1], oh, ow], value, Op::TConv2d { input, weight, geom })
    }

    /// Matrix product `input (N, D) x weight (D, M)`, no bias.
    pub fn dense(&mut self, input: Var, weight: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(shape_err("dense", format!("cannot multiply {xs:?} by {ws:?}")));
        }
        let (rows, inner, cols) = (xs[0], xs[1], ws[1]);
        let x = self.value(input);
        let w = self.value(weight);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let out_row = &mut out[r * cols..(r + 1) * cols];
            for i in 0..inner {
                let xv = x[r * inner + i];
                if xv == 0.0 {
                    continue;
                }
                let w_row = &w[i * cols..(i + 1) * cols];
                for (o, wv) in out_row.iter_mut().zip(w_row) {
                    *o += xv * wv;
                }
            }
        }
        self.push(vec![rows, cols], out, Op::Dense { input, weight, rows, inner, cols })
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::InvalidArgument(format!("leaky_relu slope {slope} outside (0, 1)")));
        }
        let value = self.value(input).iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
        self.push(self.shape(input).to_vec(), value, Op::LeakyRelu { input, slope })
    }

    /// Mean squared difference, a scalar node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mse", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let sum: f64 = va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = sum / va.len() as f64;
        self.push(vec![1], vec![value], Op::Mse { a, b })
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(input).len() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(input))));
        }
        let value = self.value(input).to_vec();
        self.push(shape, value, Op::Reshape { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(self.shape(a).to_vec(), value, Op::Add { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(self.shape(a).to_vec(), value, Op::Mul { a, b })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let value = self.value(input).iter().map(|v| v * factor).collect();
        self.push(self.shape(input).to_vec(), value, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).iter().sum();
        self.push(vec![1], vec![value], Op::Sum { input })
    }

    /// Soft-boundary hypersphere objective over a `(B, P)` embedding batch:
    /// `R^2 + 1/(nu B) * sum_i max(0, |phi_i - c|^2 - R^2)`.
    ///
    /// The centre and radius are constants of the node; only the embeddings
    /// receive gradient.
    pub fn sphere_hinge(&mut self, input: Var, center: &[f64], radius_sq: f64, nu: f64) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 2 || xs[1] != center.len() {
            return Err(shape_err(
                "sphere_hinge",
                format!("embeddings {xs:?} against a centre of length {}", center.len()),
            ));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::InvalidArgument(format!("nu {nu} outside (0, 1]")));
        }
        let p = center.len();
        let x = self.value(input);
        let hinge: f64 = x
            .chunks_exact(p)
            .map(|row| (sq_dist(row, center) - radius_sq).max(0.0))
            .sum();
        let value = radius_sq + hinge / (nu * xs[0] as f64);
        self.push(
            vec![1],
            vec![value],
            Op::SphereHinge { input, center: center.to_vec(), radius_sq, nu },
        )
    }

    /// Which side of every non-differentiable point each recorded value lies
    /// on (leaky-ReLU sign, hinge activity). Two evaluations with equal
    /// patterns are on one smooth piece of the function.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { input, .. } => {
                    bits.extend(self.nodes[input.0].value.iter().map(|&v| v >= 0.0));
                }
                Op::SphereHinge { input, center, radius_sq, .. } => {
                    bits.extend(
                        self.nodes[input.0]
                            .value
                            .chunks_exact(center.len())
                            .map(|row| sq_dist(row, center) > *radius_sq),
                    );
                }
                _ => {}
            }
        }
        bits
    }

    /// Reverse sweep from a scalar `loss`. Consumes the graph: a second call
    /// (or recording new ops) fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Gradient("graph already consumed by backward".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Gradient(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = Some(gout);
                continue;
            }
            let contributions = self.local_grads(node, &gout);
            grads[id] = Some(gout);
            for (var, g) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, gout: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: &Var| self.nodes[v.0].value.as_slice();
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, geom } => {
                let mut out = Vec::with_capacity(2);
                if wants(input) {
                    out.push((*input, conv::corr_backward_input(gout, val(weight), geom)));
                }
                if wants(weight) {
                    out.push((*weight, conv::corr_backward_weight(val(input), gout, geom)));
                }
                out
            }
            Op::TConv2d { input, weight, geom } => {
                let mut out = Vec::with_capacity(2);
                if wants(input) {
                    out.push((*input, conv::corr_forward(gout, val(weight), geom)));
                }
                if wants(weight) {
                    out.push((*weight, conv::corr_backward_weight(gout, val(input), geom)));
                }
                out
            }
            Op::Dense { input, weight, rows, inner, cols } => {
                let (rows, inner, cols) = (*rows, *inner, *cols);
                let (x, w) = (val(input), val(weight));
                let mut out = Vec::with_capacity(2);
                if wants(input) {
                    let mut gx = vec![0.0; rows * inner];
                    for r in 0..rows {
                        let g_row = &gout[r * cols..(r + 1) * cols];
                        for i in 0..inner {
                            let w_row = &w[i * cols..(i + 1) * cols];
                            gx[r * inner + i] = g_row.iter().zip(w_row).map(|(a, b)| a * b).sum();
                        }
                    }
                    out.push((*input, gx));
                }
                if wants(weight) {
                    let mut gw = vec![0.0; inner * cols];
                    for r in 0..rows {
                        let g_row = &gout[r * cols..(r + 1) * cols];
                        for i in 0..inner {
                            let xv = x[r * inner + i];
                            if xv == 0.0 {
                                continue;
                            }
                            for (acc, g) in gw[i * cols..(i + 1) * cols].iter_mut().zip(g_row) {
                                *acc += xv * g;
                            }
                        }
                    }
                    out.push((*weight, gw));
                }
                out
            }
            Op::LeakyRelu { input, slope } => {
                let g = val(input)
                    .iter()
                    .zip(gout)
                    .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
                    .collect();
                vec![(*input, g)]
            }
            Op::Mse { a, b } => {
                let (va, vb) = (val(a), val(b));
                let k = 2.0 * gout[0] / va.len() as f64;
                let ga: Vec<f64> = va.iter().zip(vb).map(|(x, y)| k * (x - y)).collect();
                let gb = ga.iter().map(|v| -v).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Reshape { input } => vec![(*input, gout.to_vec())],
            Op::Add { a, b } => vec![(*a, gout.to_vec()), (*b, gout.to_vec())],
            Op::Mul { a, b } => {
                let ga = val(b).iter().zip(gout).map(|(x, g)| x * g).collect();
                let gb = val(a).iter().zip(gout).map(|(x, g)| x * g).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale { input, factor } => vec![(*input, gout.iter().map(|g| g * factor).collect())],
            Op::Sum { input } => vec![(*input, vec![gout[0]; val(input).len()])],
            Op::SphereHinge { input, center, radius_sq, nu } => {
                let x = val(input);
                let p = center.len();
                let batch = x.len() / p;
                let k = 2.0 * gout[0] / (nu * batch as f64);
                let mut g = vec![0.0; x.len()];
                for (row, grow) in x.chunks_exact(p).zip(g.chunks_exact_mut(p)) {
                    if sq_dist(row, center) > *radius_sq {
                        for ((gv, xv), cv) in grow.iter_mut().zip(row).zip(center) {
                            *gv = k * (xv - cv);
                        }
                    }
                }
                vec![(*input, g)]
            }
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
