use std::fmt;

use crate::error::{Error, Result};

/// Dense `(n, c, h, w)` array of `f32`, row-major N→C→H→W.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let numel = shape.iter().product::<usize>();
        if data.len() != numel {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel], grad: None, requires_grad: false }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([ni, ci, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data, grad: None, requires_grad: false }
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape("set_grad", format!("{} vs {}", grad.len(), self.data.len())));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f32>> {
        self.grad.take()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    /// One `(c, h, w)` plane block for batch item `n`.
    pub fn item(&self, n: usize) -> &[f32] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    /// Copies batch item `n` out as a `(1, c, h, w)` tensor.
    pub fn select(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        Tensor { shape: [1, c, h, w], data: self.item(n).to_vec(), grad: None, requires_grad: false }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::numel).sum());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::shape("stack", format!("{:?} vs {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
            n += t.shape[0];
        }
        Tensor::new([n, c, h, w], data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Channel range `[start, start + len)` as a new tensor.
    pub fn channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if start + len > c {
            return Err(Error::shape("channels", format!("[{start}, {}) of {c}", start + len)));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for ni in 0..n {
            let base = (ni * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Tensor::new([n, len, h, w], data)
    }

    /// Spatial window `[top, top + h) × [left, left + w)` of every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        let [n, c, hs, ws] = self.shape;
        if top + h > hs || left + w > ws {
            return Err(Error::shape(
                "crop",
                format!("window {h}x{w} at ({top},{left}) exceeds {hs}x{ws}"),
            ));
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for plane in self.data.chunks_exact(hs * ws) {
            for y in top..top + h {
                data.extend_from_slice(&plane[y * ws + left..y * ws + left + w]);
            }
        }
        Tensor::new([n, c, h, w], data)
    }

    /// Reflection padding (mirror without repeating the edge pixel). Pads larger
    /// than the image keep bouncing between the edges.
    pub fn reflect_pad(&self, top: usize, bottom: usize, left: usize, right: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        let (ho, wo) = (h + top + bottom, w + left + right);
        let rows: Vec<usize> = (0..ho).map(|y| reflect_index(y as isize - top as isize, h)).collect();
        let cols: Vec<usize> = (0..wo).map(|x| reflect_index(x as isize - left as isize, w)).collect();
        let mut data = Vec::with_capacity(n * c * ho * wo);
        for plane in self.data.chunks_exact(h * w) {
            for &ry in &rows {
                let row = &plane[ry * w..(ry + 1) * w];
                data.extend(cols.iter().map(|&rx| row[rx]));
            }
        }
        Tensor { shape: [n, c, ho, wo], data, grad: None, requires_grad: false }
    }

    /// Order-sensitive 64-bit checksum of the shape and raw bits.
    pub fn checksum(&self) -> u64 {
        let crc = crc::Crc::<u64>::new(&crc::CRC_64_ECMA_182);
        let mut digest = crc.digest();
        for d in self.shape {
            digest.update(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            digest.update(&v.to_bits().to_le_bytes());
        }
        digest.finalize()
    }
}

/// Maps a possibly out-of-range coordinate onto `0..len` by mirror reflection
/// about the edge pixels (`-1 → 1`, `len → len - 2`).
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data[..8]", &preview)
            .field("grad", &self.grad.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new([1, 2, 2, 2], vec![0.0; 7]).is_err());
        assert_eq!(Tensor::new([1, 2, 2, 2], vec![0.0; 8]).unwrap().numel(), 8);
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn reflect_pad_then_crop_recovers() {
        let t = Tensor::from_fn([1, 2, 3, 5], |[_, c, y, x]| (c * 100 + y * 10 + x) as f32);
        let p = t.reflect_pad(2, 7, 1, 3);
        assert_eq!(p.shape(), [1, 2, 12, 9]);
        assert_eq!(p.crop(2, 1, 3, 5).unwrap(), t);
        // row -1 mirrors to row 1
        assert_eq!(p.at(0, 0, 1, 1), t.at(0, 0, 1, 0));
    }

    #[test]
    fn channels_and_stack() {
        let a = Tensor::from_fn([2, 3, 2, 2], |[n, c, y, x]| (n * 1000 + c * 100 + y * 10 + x) as f32);
        let mid = a.channels(1, 1).unwrap();
        assert_eq!(mid.shape(), [2, 1, 2, 2]);
        assert_eq!(mid.at(1, 0, 1, 0), 1110.0);
        let s = Tensor::stack(&[a.select(0), a.select(1)]).unwrap();
        assert_eq!(s, a);
    }

    #[test]
    fn checksum_sees_bits() {
        let a = Tensor::zeros([1, 1, 2, 2]);
        let mut b = a.clone();
        b.data_mut()[3] = -0.0;
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.checksum(), a.clone().checksum());
    }
}
