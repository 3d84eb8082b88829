use crate::error::{Error, Result};

/// Ordered list of axis extents. Rank 0 (empty list) is a scalar holding one
/// element. Every extent must be >= 1 and the element count must fit in usize.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        let mut numel: usize = 1;
        for (axis, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(Error::Shape(format!(
                    "extent of axis {axis} is 0; every extent must be >= 1"
                )));
            }
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Shape(format!("element count overflows usize: {dims:?}")))?;
        }
        Ok(Shape { dims })
    }

    /// Panicking constructor for literal shapes known to be valid.
    pub fn of(dims: &[usize]) -> Self {
        Shape::new(dims).expect("invalid literal shape")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major strides: the last axis is contiguous.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.dims[i + 1];
        }
        strides
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Dense row-major tensor of f64 values. Tensors are immutable once built;
/// every operation allocates a fresh output, which keeps aliasing out of the
/// autodiff tape entirely.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "buffer holds {} elements but shape {} needs {}",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        Tensor::new(Shape::new(dims)?, data)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let shape = Shape::of(dims);
        let n = shape.numel();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let shape = Shape::of(dims);
        let n = shape.numel();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn ones(dims: &[usize]) -> Self {
        Tensor::full(dims, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Shape::of(&[]), data: vec![value] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let shape = Shape::of(dims);
        let n = shape.numel();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for axis in (0..dims.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < dims[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value at a full multi-index. Intended for tests and small-scale reads;
    /// hot loops index the flat buffer directly.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(self.dims()).zip(self.shape.strides()) {
            assert!(i < d, "index {i} out of range for extent {d}");
            off += i * s;
        }
        self.data[off]
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() needs a one-element tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rejects_zero_extent() {
        assert!(Shape::new(vec![2, 0, 3]).is_err());
    }

    #[test]
    fn shape_allows_scalar_rank_zero() {
        let s = Shape::new(Vec::new()).unwrap();
        assert_eq!(s.rank(), 0);
        assert_eq!(s.numel(), 1);
    }

    #[test]
    fn shape_rejects_overflowing_product() {
        assert!(Shape::new(vec![usize::MAX, 2]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(Shape::of(&[2, 3, 4]).strides(), vec![12, 4, 1]);
        assert_eq!(Shape::of(&[5]).strides(), vec![1]);
        assert!(Shape::of(&[]).strides().is_empty());
    }

    #[test]
    fn tensor_rejects_mismatched_buffer() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 5]).is_err());
    }

    #[test]
    fn from_fn_walks_row_major() {
        let t = Tensor::from_fn(&[2, 3], |idx| (idx[0] * 10 + idx[1]) as f64);
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(t.at(&[1, 2]), 12.0);
    }

    #[test]
    fn scalar_roundtrip() {
        let s = Tensor::scalar(7.5);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item(), 7.5);
    }
}
