//! Dense 4-D `(n, c, h, w)` tensors, row-major with `w` fastest.

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Storage element of a [`Tensor`].
///
/// `f32` is the default storage type; `f64` exists so gradient checks can run
/// with full double precision end to end. Reductions always accumulate in
/// `f64` regardless of the storage type.
pub trait Element: Float + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Tensor dimensions `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    /// Single-image shape `(1, c, h, w)`.
    pub const fn image(c: usize, h: usize, w: usize) -> Self {
        Self::new(1, c, h, w)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial positions per channel (`h * w`).
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Result<Self> {
        check_dims(shape)?;
        Ok(Self {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        check_dims(shape)?;
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                context: "tensor data length".into(),
                expected: format!("{} elements for {shape}", shape.len()),
                found: format!("{} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        check_dims(shape)?;
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    /// Element type conversion, e.g. promoting an `f32` image for an `f64` check.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// `self += other`, requiring identical shapes.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.require_same_shape(other, "tensor addition")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn require_same_shape(&self, other: &Tensor<T>, context: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context: context.into(),
                expected: self.shape.to_string(),
                found: other.shape.to_string(),
            });
        }
        Ok(())
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of squared elements, accumulated in `f64`.
    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// Data of sample `n`, channel `c` as a contiguous plane of `h * w` values.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }
}

fn check_dims(shape: Shape) -> Result<()> {
    if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
        return Err(Error::InvalidShape(format!(
            "all dims must be at least 1, got {shape}"
        )));
    }
    Ok(())
}
