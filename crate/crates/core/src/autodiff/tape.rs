use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::imaging::RGB_TO_YUV;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    L2Norm,
}

/// Reduce over every element (scalar result) or over each leading-axis slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    All,
    PerChannel,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        kernel: usize,
        cols: Vec<T>,
    },
    Activation(Var, Activation),
    Elementwise(Var, Var, Elementwise),
    Scale(Var, T),
    Reduce(Var, Reduction),
    ColorTransform(Var),
    ChannelAffine {
        input: Var,
        scale: Var,
        shift: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a computation. Node order is a valid topological
/// order, so the backward pass simply walks it in reverse.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every reachable leaf.
#[derive(Debug, Clone)]
pub struct GradReport<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> GradReport<T> {
    /// Gradient of a leaf. Leaves the loss does not depend on get zeros;
    /// constants and interior nodes get `None`.
    pub fn grad(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a differentiable leaf (an input or a parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Stride-1 cross-correlation with zero "same" padding.
    ///
    /// `input` is `[cin, h, w]`, `weight` is `[k, k, cin, cout]` with odd `k`,
    /// `bias` is `[cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        let bshape = self.shape(bias).to_vec();
        let [cin, h, w] = ishape[..] else {
            return Err(shape_err(format!(
                "conv2d input must be 3-D, got {ishape:?}"
            )));
        };
        let [k, k2, wcin, cout] = wshape[..] else {
            return Err(shape_err(format!(
                "conv2d weight must be 4-D, got {wshape:?}"
            )));
        };
        if k != k2 || k % 2 == 0 {
            return Err(shape_err(format!(
                "conv2d kernel must be square and odd, got {k}x{k2}"
            )));
        }
        if wcin != cin {
            return Err(shape_err(format!(
                "conv2d input has {cin} channels, weight expects {wcin}"
            )));
        }
        if bshape != [cout] {
            return Err(shape_err(format!(
                "conv2d bias must be [{cout}], got {bshape:?}"
            )));
        }

        let hw = h * w;
        let rows = k * k * cin;
        let cols = im2col(self.value(input).data(), cin, h, w, k);
        let mut out = vec![T::zero(); cout * hw];
        let bias_vals = self.value(bias).data();
        for (co, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(bias_vals[co]);
        }
        T::gemm(
            cout,
            rows,
            hw,
            self.value(weight).data(),
            1,
            cout,
            &cols,
            hw,
            1,
            T::one(),
            &mut out,
            hw,
            1,
        );
        let requires = self.needs(input) || self.needs(weight) || self.needs(bias);
        let value = Tensor::new(vec![cout, h, w], out)?;
        // Only the weight gradient reads the unfolded input.
        let cols = if self.needs(weight) { cols } else { Vec::new() };
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                kernel: k,
                cols,
            },
            requires,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let src = self.value(x);
        let data = match kind {
            Activation::Relu => src
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect(),
            Activation::Sigmoid => src.data().iter().map(|&v| sigmoid(v)).collect(),
        };
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let requires = self.needs(x);
        self.push(value, Op::Activation(x, kind), requires)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(format!(
                "elementwise {:?} on {:?} and {:?}",
                kind,
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&p, &q)| match kind {
                Elementwise::Add => p + q,
                Elementwise::Sub => p - q,
                Elementwise::Mul => p * q,
            })
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let requires = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Elementwise(a, b, kind), requires))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| v * s).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let requires = self.needs(a);
        self.push(value, Op::Scale(a, s), requires)
    }

    /// Sum, mean or Euclidean norm, accumulated in `f64`.
    pub fn reduce(&mut self, x: Var, kind: Reduction, region: Region) -> Result<Var> {
        let src = self.value(x);
        if src.is_empty() {
            return Err(shape_err("reduction over an empty region"));
        }
        let groups = match region {
            Region::All => 1,
            Region::PerChannel => src.shape()[0],
        };
        let per = src.len() / groups;
        if per == 0 {
            return Err(shape_err("reduction over an empty region"));
        }
        let out: Vec<T> = src
            .data()
            .chunks(per)
            .map(|chunk| {
                let r = match kind {
                    Reduction::Sum => chunk.iter().map(|v| v.as_f64()).sum::<f64>(),
                    Reduction::Mean => chunk.iter().map(|v| v.as_f64()).sum::<f64>() / per as f64,
                    Reduction::L2Norm => chunk
                        .iter()
                        .map(|v| {
                            let v = v.as_f64();
                            v * v
                        })
                        .sum::<f64>()
                        .sqrt(),
                };
                T::of(r)
            })
            .collect();
        let value = Tensor::new(vec![groups], out)?;
        let requires = self.needs(x);
        Ok(self.push(value, Op::Reduce(x, kind), requires))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Sum, Region::All)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Mean, Region::All)
    }

    /// Linear RGB → YUV map on a `[3, h, w]` tensor, sharing coefficients
    /// with [`crate::imaging::rgb_to_yuv`].
    pub fn color_transform(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.shape().len() != 3 || src.shape()[0] != 3 {
            return Err(shape_err(format!(
                "color transform needs [3, h, w], got {:?}",
                src.shape()
            )));
        }
        let n = src.len() / 3;
        let d = src.data();
        let m = coefficient_matrix::<T>();
        let mut out = vec![T::zero(); 3 * n];
        for i in 0..n {
            let (r, g, b) = (d[i], d[n + i], d[2 * n + i]);
            for row in 0..3 {
                out[row * n + i] = m[row][0] * r + m[row][1] * g + m[row][2] * b;
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let requires = self.needs(x);
        Ok(self.push(value, Op::ColorTransform(x), requires))
    }

    /// On/off state of every ReLU unit recorded so far, in tape order.
    ///
    /// Two evaluations with equal patterns lie in the same linear region of
    /// every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Activation(x, Activation::Relu) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// `out[c] = input[c] · scale[c] + shift[c]` for `[c, h, w]` input and
    /// `[c]` scale and shift.
    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let src = self.value(input);
        let c = src.shape()[0];
        if src.shape().len() != 3 || self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(shape_err(format!(
                "channel affine on {:?} with scale {:?} and shift {:?}",
                src.shape(),
                self.shape(scale),
                self.shape(shift)
            )));
        }
        let per = src.len() / c;
        let (s, b) = (self.value(scale).data(), self.value(shift).data());
        let data = src
            .data()
            .chunks(per)
            .enumerate()
            .flat_map(|(ch, chunk)| chunk.iter().map(move |&v| v * s[ch] + b[ch]))
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let requires = self.needs(input) || self.needs(scale) || self.needs(shift);
        Ok(self.push(
            value,
            Op::ChannelAffine {
                input,
                scale,
                shift,
            },
            requires,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<GradReport<T>> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                if matches!(node.op, Op::Leaf) {
                    leaves[idx] = Some(Tensor::zeros(node.value.shape().to_vec()));
                }
                continue;
            };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaves[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(GradReport { grads: leaves })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                kernel,
                cols,
            } => {
                let [cin, h, w] = self.shape(*input)[..] else {
                    unreachable!("checked in forward")
                };
                let cout = node.value.shape()[0];
                let hw = h * w;
                let rows = kernel * kernel * cin;
                if self.needs(*weight) {
                    let dw = slot(grads, *weight, rows * cout);
                    T::gemm(rows, hw, cout, cols, hw, 1, g, 1, hw, T::one(), dw, cout, 1);
                }
                if self.needs(*bias) {
                    let db = slot(grads, *bias, cout);
                    for (co, chunk) in g.chunks(hw).enumerate() {
                        db[co] += chunk.iter().copied().sum::<T>();
                    }
                }
                if self.needs(*input) {
                    let mut dcols = vec![T::zero(); rows * hw];
                    let wdata = self.value(*weight).data();
                    T::gemm(
                        rows,
                        cout,
                        hw,
                        wdata,
                        cout,
                        1,
                        g,
                        hw,
                        1,
                        T::zero(),
                        &mut dcols,
                        hw,
                        1,
                    );
                    let din = slot(grads, *input, cin * hw);
                    col2im_add(&dcols, din, cin, h, w, *kernel);
                }
            }
            Op::Activation(x, kind) => {
                if !self.needs(*x) {
                    return;
                }
                let primal = self.value(*x).data();
                let out = node.value.data();
                let dx = slot(grads, *x, primal.len());
                match kind {
                    Activation::Relu => {
                        for i in 0..dx.len() {
                            if primal[i] > T::zero() {
                                dx[i] += g[i];
                            }
                        }
                    }
                    Activation::Sigmoid => {
                        for i in 0..dx.len() {
                            let s = out[i];
                            dx[i] += g[i] * s * (T::one() - s);
                        }
                    }
                }
            }
            Op::Elementwise(a, b, kind) => {
                let n = g.len();
                if self.needs(*a) {
                    let other = self.value(*b).data();
                    let da = slot(grads, *a, n);
                    for i in 0..n {
                        da[i] += match kind {
                            Elementwise::Add | Elementwise::Sub => g[i],
                            Elementwise::Mul => g[i] * other[i],
                        };
                    }
                }
                if self.needs(*b) {
                    let other = self.value(*a).data();
                    let db = slot(grads, *b, n);
                    for i in 0..n {
                        db[i] += match kind {
                            Elementwise::Add => g[i],
                            Elementwise::Sub => -g[i],
                            Elementwise::Mul => g[i] * other[i],
                        };
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.needs(*a) {
                    let da = slot(grads, *a, g.len());
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi * *s;
                    }
                }
            }
            Op::Reduce(x, kind) => {
                if !self.needs(*x) {
                    return;
                }
                let primal = self.value(*x).data();
                let per = primal.len() / g.len();
                let dx = slot(grads, *x, primal.len());
                for (grp, (dchunk, pchunk)) in
                    dx.chunks_mut(per).zip(primal.chunks(per)).enumerate()
                {
                    let gi = g[grp];
                    match kind {
                        Reduction::Sum => dchunk.iter_mut().for_each(|d| *d += gi),
                        Reduction::Mean => {
                            let scale = gi / T::of(per as f64);
                            dchunk.iter_mut().for_each(|d| *d += scale);
                        }
                        Reduction::L2Norm => {
                            let norm = node.value.data()[grp];
                            // Zero subgradient at the origin.
                            if norm > T::zero() {
                                let scale = gi / norm;
                                for (d, &p) in dchunk.iter_mut().zip(pchunk) {
                                    *d += scale * p;
                                }
                            }
                        }
                    }
                }
            }
            Op::ColorTransform(x) => {
                if !self.needs(*x) {
                    return;
                }
                let n = g.len() / 3;
                let m = coefficient_matrix::<T>();
                let dx = slot(grads, *x, 3 * n);
                for i in 0..n {
                    let gy = [g[i], g[n + i], g[2 * n + i]];
                    for c in 0..3 {
                        dx[c * n + i] += m[0][c] * gy[0] + m[1][c] * gy[1] + m[2][c] * gy[2];
                    }
                }
            }
            Op::ChannelAffine {
                input,
                scale,
                shift,
            } => {
                let c = self.shape(*scale)[0];
                let per = g.len() / c;
                if self.needs(*input) {
                    let s = self.value(*scale).data();
                    let dx = slot(grads, *input, g.len());
                    for (ch, (dchunk, gchunk)) in dx.chunks_mut(per).zip(g.chunks(per)).enumerate()
                    {
                        for (d, &gi) in dchunk.iter_mut().zip(gchunk) {
                            *d += gi * s[ch];
                        }
                    }
                }
                if self.needs(*scale) {
                    let x = self.value(*input).data();
                    let ds = slot(grads, *scale, c);
                    for ch in 0..c {
                        let range = ch * per..(ch + 1) * per;
                        ds[ch] += g[range.clone()]
                            .iter()
                            .zip(&x[range])
                            .map(|(&gi, &xi)| gi * xi)
                            .sum::<T>();
                    }
                }
                if self.needs(*shift) {
                    let db = slot(grads, *shift, c);
                    for (ch, gchunk) in g.chunks(per).enumerate() {
                        db[ch] += gchunk.iter().copied().sum::<T>();
                    }
                }
            }
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn coefficient_matrix<T: Real>() -> [[T; 3]; 3] {
    RGB_TO_YUV.map(|row| row.map(T::lift))
}

/// Unfolds `[cin, h, w]` into `[(ky, kx, ci), h·w]` with zero padding.
fn im2col<T: Real>(input: &[T], cin: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![T::zero(); k * k * cin * hw];
    for ky in 0..k {
        for kx in 0..k {
            let dx = kx as isize - pad;
            let x_lo = (-dx).max(0) as usize;
            let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
            for ci in 0..cin {
                let row = (ky * k + kx) * cin + ci;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let plane = &input[ci * hw..(ci + 1) * hw];
                for y in 0..h {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src_row = iy as usize * w;
                    let src = &plane[(src_row as isize + x_lo as isize + dx) as usize
                        ..(src_row as isize + x_hi as isize + dx) as usize];
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(cols: &[T], out: &mut [T], cin: usize, h: usize, w: usize, k: usize) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ky in 0..k {
        for kx in 0..k {
            let dx = kx as isize - pad;
            let x_lo = (-dx).max(0) as usize;
            let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
            for ci in 0..cin {
                let row = (ky * k + kx) * cin + ci;
                let src = &cols[row * hw..(row + 1) * hw];
                let plane = &mut out[ci * hw..(ci + 1) * hw];
                for y in 0..h {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let base = (iy as usize * w) as isize + dx;
                    for x in x_lo..x_hi {
                        plane[(base + x as isize) as usize] += src[y * w + x];
                    }
                }
            }
        }
    }
}
