use super::conv::{self, ConvGeom};
use super::tensor::{reflect_index, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ewise {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    AvgPool2,
    NearestUp2,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Act { kind: Activation, x: Var },
    Ewise { kind: Ewise, a: Var, b: Var, broadcast: bool },
    Gap { x: Var },
    Resample { kind: Resample, x: Var },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    Mse { a: Var, b: Var },
    Scale { x: Var, factor: f32 },
    ReflectPad { x: Var, top: usize, left: usize },
    Crop { x: Var, top: usize, left: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of forward operations; [`Tape::backward`] replays it in
/// exact reverse order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    frozen_relu: Option<FrozenRelu>,
}

#[derive(Default)]
struct FrozenRelu {
    pattern: Vec<u64>,
    cursor: usize,
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` as `ln(1 + e^{-|x|}) + max(x, 0)`.
#[inline]
pub fn softplus(x: f32) -> f32 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A forward-only tape whose ReLUs pass or block by `pattern` (as from
    /// [`Tape::relu_pattern`]) instead of by the sign of their inputs. The
    /// graph then matches the ordinary one on that pattern's linear region
    /// but is smooth everywhere. Backward on such a tape is meaningless.
    pub fn with_frozen_relu(pattern: Vec<u64>) -> Self {
        Tape { frozen_relu: Some(FrozenRelu { pattern, cursor: 0 }), ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a constant input (never receives a gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Records a trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f32>> {
        self.nodes[v.0].value.take_grad()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, ci, h, wd] = self.shape(x);
        let [co, wci, kh, kw] = self.shape(w);
        if wci != ci || kh != kw {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} vs weight {:?}", self.shape(x), self.shape(w)),
            ));
        }
        if self.value(b).numel() != co {
            return Err(Error::shape("conv2d", format!("bias has {} values for {co} outputs", self.value(b).numel())));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        let k = kh;
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", format!("kernel {k} larger than padded input {h}x{wd}+{pad}")));
        }
        if !self.value(x).is_finite() {
            return Err(Error::NonFinite { op: "conv2d" });
        }
        let geom = ConvGeom {
            n,
            ci,
            h,
            w: wd,
            co,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        };
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = Tensor::new([n, co, geom.ho, geom.wo], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Conv { x, w, b, geom }, rg))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let f: fn(f32) -> f32 = match kind {
            Activation::Relu => |v| v.max(0.0),
            Activation::Sigmoid => sigmoid,
            Activation::Softplus => softplus,
        };
        let value = match (&mut self.frozen_relu, kind) {
            (Some(fr), Activation::Relu) => {
                let start = fr.cursor;
                fr.cursor += self.nodes[x.0].value.numel();
                let src = &self.nodes[x.0].value;
                let data = src
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let i = start + j;
                        let on = fr.pattern.get(i / 64).is_some_and(|b| b >> (i % 64) & 1 == 1);
                        if on { v } else { 0.0 }
                    })
                    .collect();
                Tensor::new(src.shape(), data).expect("same shape")
            }
            _ => self.value(x).map(f),
        };
        let rg = self.rg(x);
        self.push(value, Op::Act { kind, x }, rg)
    }

    /// Bitset of `x > 0` over every ReLU input recorded so far, in tape order.
    /// Two evaluations with equal patterns lie on the same linear piece of
    /// every ReLU.
    pub fn relu_pattern(&self) -> Vec<u64> {
        let mut bits = Vec::new();
        let mut i = 0usize;
        for node in &self.nodes {
            if let Op::Act { kind: Activation::Relu, x } = node.op {
                for &v in self.value(x).data() {
                    if i.is_multiple_of(64) {
                        bits.push(0u64);
                    }
                    if v > 0.0 {
                        *bits.last_mut().unwrap() |= 1 << (i % 64);
                    }
                    i += 1;
                }
            }
        }
        bits
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.activation(Activation::Softplus, x)
    }

    /// Elementwise `a ∘ b`. `b` may also be `(n, c, 1, 1)`, broadcast over H and W.
    pub fn ewise(&mut self, kind: Ewise, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let broadcast = if sa == sb {
            false
        } else if sb == [sa[0], sa[1], 1, 1] {
            true
        } else {
            return Err(Error::shape("ewise", format!("{sa:?} vs {sb:?}")));
        };
        let f: fn(f32, f32) -> f32 = match kind {
            Ewise::Add => |x, y| x + y,
            Ewise::Sub => |x, y| x - y,
            Ewise::Mul => |x, y| x * y,
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data: Vec<f32> = if broadcast {
            let plane = sa[2] * sa[3];
            av.chunks_exact(plane)
                .zip(bv)
                .flat_map(|(row, &s)| row.iter().map(move |&x| f(x, s)))
                .collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(sa, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Ewise { kind, a, b, broadcast }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(Ewise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(Ewise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(Ewise::Mul, a, b)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        if h * w == 0 {
            return Err(Error::shape("global_avg_pool", "empty spatial extent"));
        }
        let data: Vec<f32> = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|p| (p.iter().map(|&v| f64::from(v)).sum::<f64>() / (h * w) as f64) as f32)
            .collect();
        let value = Tensor::new([n, c, 1, 1], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Gap { x }, rg))
    }

    pub fn resample(&mut self, kind: Resample, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        let src = self.value(x).data();
        let value = match kind {
            Resample::AvgPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape("avgpool2", format!("odd spatial dims {h}x{w}")));
                }
                let (ho, wo) = (h / 2, w / 2);
                let mut out = Vec::with_capacity(n * c * ho * wo);
                for p in src.chunks_exact(h * w) {
                    for y in 0..ho {
                        for x in 0..wo {
                            let i = 2 * y * w + 2 * x;
                            out.push(0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]));
                        }
                    }
                }
                Tensor::new([n, c, ho, wo], out)?
            }
            Resample::NearestUp2 => {
                let (ho, wo) = (2 * h, 2 * w);
                let mut out = Vec::with_capacity(n * c * ho * wo);
                for p in src.chunks_exact(h * w) {
                    for y in 0..ho {
                        let row = &p[(y / 2) * w..(y / 2 + 1) * w];
                        out.extend(row.iter().flat_map(|&v| [v, v]));
                    }
                }
                Tensor::new([n, c, ho, wo], out)?
            }
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Resample { kind, x }, rg))
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.shape(a);
        let [nb, cb, hb, wb] = self.shape(b);
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape("concat_channels", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (ia, ib) = (ca * h * w, cb * h * w);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ia + ib));
        for i in 0..n {
            data.extend_from_slice(&av[i * ia..(i + 1) * ia]);
            data.extend_from_slice(&bv[i * ib..(i + 1) * ib]);
        }
        let value = Tensor::new([n, ca + cb, h, w], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).channels(start, len)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    /// Mean squared error over all elements, as a `(1,1,1,1)` tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_finite() || !bv.is_finite() {
            return Err(Error::NonFinite { op: "mse" });
        }
        let sum: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum();
        let value = Tensor::scalar((sum / av.numel().max(1) as f64) as f32);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mse { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn reflect_pad(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Var {
        let value = self.value(x).reflect_pad(top, bottom, left, right);
        let rg = self.rg(x);
        self.push(value, Op::ReflectPad { x, top, left }, rg)
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let value = self.value(x).crop(top, left, h, w)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Crop { x, top, left }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients are summed into the
    /// grad slot of every leaf that requires one; intermediates keep none. A
    /// tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.shape(loss);
        if shape != [1, 1, 1, 1] {
            return Err(Error::NotScalar(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &dy, &mut grads);
            // Intermediates drop their gradient once propagated; only inputs keep one.
            if !matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let slot = &mut self.nodes[idx].value;
            match slot.take_grad() {
                Some(mut existing) => {
                    for (e, d) in existing.iter_mut().zip(&dy) {
                        *e += d;
                    }
                    slot.set_grad(existing)?;
                }
                None => slot.set_grad(dy)?,
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, dy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let out = &self.nodes[idx].value;
        match self.nodes[idx].op.clone() {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let g = conv::backward(&geom, self.value(x).data(), self.value(w).data(), dy, self.rg(x));
                if let Some(dx) = g.dx {
                    self.accumulate(grads, x, dx);
                }
                self.accumulate(grads, w, g.dw);
                self.accumulate(grads, b, g.db);
            }
            Op::Act { kind, x } => {
                let xv = self.value(x).data();
                let dx: Vec<f32> = match kind {
                    Activation::Relu => {
                        xv.iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect()
                    }
                    Activation::Sigmoid => {
                        out.data().iter().zip(dy).map(|(&s, &d)| d * s * (1.0 - s)).collect()
                    }
                    Activation::Softplus => xv.iter().zip(dy).map(|(&v, &d)| d * sigmoid(v)).collect(),
                };
                self.accumulate(grads, x, dx);
            }
            Op::Ewise { kind, a, b, broadcast } => {
                let plane = if broadcast { out.h() * out.w() } else { 1 };
                let expand = |bv: &[f32]| -> Vec<f32> {
                    if broadcast {
                        bv.iter().flat_map(|&s| std::iter::repeat_n(s, plane)).collect()
                    } else {
                        bv.to_vec()
                    }
                };
                let reduce = |full: Vec<f32>| -> Vec<f32> {
                    if broadcast {
                        full.chunks_exact(plane).map(|c| c.iter().sum()).collect()
                    } else {
                        full
                    }
                };
                match kind {
                    Ewise::Add => {
                        self.accumulate(grads, a, dy.to_vec());
                        self.accumulate(grads, b, reduce(dy.to_vec()));
                    }
                    Ewise::Sub => {
                        self.accumulate(grads, a, dy.to_vec());
                        self.accumulate(grads, b, reduce(dy.iter().map(|d| -d).collect()));
                    }
                    Ewise::Mul => {
                        if self.rg(a) {
                            let bx = expand(self.value(b).data());
                            self.accumulate(grads, a, dy.iter().zip(&bx).map(|(d, s)| d * s).collect());
                        }
                        if self.rg(b) {
                            let av = self.value(a).data();
                            self.accumulate(grads, b, reduce(dy.iter().zip(av).map(|(d, f)| d * f).collect()));
                        }
                    }
                }
            }
            Op::Gap { x } => {
                let [_, _, h, w] = self.shape(x);
                let inv = 1.0 / (h * w) as f32;
                let dx = dy.iter().flat_map(|&d| std::iter::repeat_n(d * inv, h * w)).collect();
                self.accumulate(grads, x, dx);
            }
            Op::Resample { kind, x } => {
                let [n, c, h, w] = self.shape(x);
                let mut dx = vec![0.0f32; n * c * h * w];
                match kind {
                    Resample::AvgPool2 => {
                        let (ho, wo) = (h / 2, w / 2);
                        for (p, dp) in dx.chunks_exact_mut(h * w).zip(dy.chunks_exact(ho * wo)) {
                            for y in 0..h {
                                for xx in 0..w {
                                    p[y * w + xx] = 0.25 * dp[(y / 2) * wo + xx / 2];
                                }
                            }
                        }
                    }
                    Resample::NearestUp2 => {
                        let wo = 2 * w;
                        for (p, dp) in dx.chunks_exact_mut(h * w).zip(dy.chunks_exact(4 * h * w)) {
                            for y in 0..h {
                                for xx in 0..w {
                                    let i = 2 * y * wo + 2 * xx;
                                    p[y * w + xx] = dp[i] + dp[i + 1] + dp[i + wo] + dp[i + wo + 1];
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, x, dx);
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = self.shape(a);
                let cb = self.shape(b)[1];
                let (ia, ib) = (ca * h * w, cb * h * w);
                let mut da = Vec::with_capacity(n * ia);
                let mut db = Vec::with_capacity(n * ib);
                for item in dy.chunks_exact(ia + ib) {
                    da.extend_from_slice(&item[..ia]);
                    db.extend_from_slice(&item[ia..]);
                }
                self.accumulate(grads, a, da);
                self.accumulate(grads, b, db);
            }
            Op::Slice { x, start } => {
                let [n, c, h, w] = self.shape(x);
                let len = out.c();
                let plane = h * w;
                let mut dx = vec![0.0f32; n * c * plane];
                for i in 0..n {
                    let dst = (i * c + start) * plane;
                    let src = i * len * plane;
                    dx[dst..dst + len * plane].copy_from_slice(&dy[src..src + len * plane]);
                }
                self.accumulate(grads, x, dx);
            }
            Op::Mse { a, b } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let k = 2.0 * dy[0] / av.len() as f32;
                let da: Vec<f32> = av.iter().zip(bv).map(|(&x, &y)| k * (x - y)).collect();
                if self.rg(b) {
                    self.accumulate(grads, b, da.iter().map(|v| -v).collect());
                }
                self.accumulate(grads, a, da);
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, x, dy.iter().map(|d| d * factor).collect());
            }
            Op::ReflectPad { x, top, left } => {
                let [n, c, h, w] = self.shape(x);
                let (ho, wo) = (out.h(), out.w());
                let rows: Vec<usize> = (0..ho).map(|y| reflect_index(y as isize - top as isize, h)).collect();
                let cols: Vec<usize> = (0..wo).map(|x| reflect_index(x as isize - left as isize, w)).collect();
                let mut dx = vec![0.0f32; n * c * h * w];
                for (p, dp) in dx.chunks_exact_mut(h * w).zip(dy.chunks_exact(ho * wo)) {
                    for (y, &ry) in rows.iter().enumerate() {
                        for (xx, &rx) in cols.iter().enumerate() {
                            p[ry * w + rx] += dp[y * wo + xx];
                        }
                    }
                }
                self.accumulate(grads, x, dx);
            }
            Op::Crop { x, top, left } => {
                let [n, c, h, w] = self.shape(x);
                let (ho, wo) = (out.h(), out.w());
                let mut dx = vec![0.0f32; n * c * h * w];
                for (p, dp) in dx.chunks_exact_mut(h * w).zip(dy.chunks_exact(ho * wo)) {
                    for y in 0..ho {
                        p[(top + y) * w + left..(top + y) * w + left + wo]
                            .copy_from_slice(&dp[y * wo..(y + 1) * wo]);
                    }
                }
                self.accumulate(grads, x, dx);
            }
        }
    }
}
