//! Dense row-major arrays over `f64` or `Complex64`.
//!
//! The element type is a type parameter, so a complex array can only become a
//! real one through an explicit projection ([`NdArray::re`], [`NdArray::im`]).

use num_complex::Complex64;
use std::fmt;

use crate::error::{NumError, Result};

/// Runtime tag for the element type of an [`NdArray`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real64,
    Complex128,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::Real64 => f.write_str("f64"),
            DType::Complex128 => f.write_str("c128"),
        }
    }
}

/// Element types an [`NdArray`] may hold.
pub trait Element: Copy + Default + PartialEq + Send + Sync + fmt::Debug + 'static {
    const DTYPE: DType;
}

impl Element for f64 {
    const DTYPE: DType = DType::Real64;
}

impl Element for Complex64 {
    const DTYPE: DType = DType::Complex128;
}

/// A dense, row-major n-dimensional array.
///
/// `shape.iter().product() == data.len()` holds for every constructed value.
#[derive(Clone, PartialEq)]
pub struct NdArray<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type ComplexArray = NdArray<Complex64>;

impl<T: Element> NdArray<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::ShapeData {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::default())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    /// 1-D array from a slice.
    pub fn vector(values: &[T]) -> Self {
        Self {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {i} out of bounds for extent {d}");
            off = off * d + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Contiguous row `i` of a 2-D array.
    pub fn row(&self, i: usize) -> &[T] {
        assert_eq!(self.ndim(), 2, "row() needs a 2-D array");
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        assert_eq!(self.ndim(), 2, "row_mut() needs a 2-D array");
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> NdArray<U> {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Transpose of a 2-D array.
    pub fn transpose(&self) -> Self {
        assert_eq!(self.ndim(), 2, "transpose() needs a 2-D array");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(self.data[i * c + j]);
            }
        }
        Self {
            shape: vec![c, r],
            data,
        }
    }
}

impl NdArray<f64> {
    pub fn to_complex(&self) -> ComplexArray {
        self.map(|x| Complex64::new(x, 0.0))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(NumError::NonScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }
}

impl ComplexArray {
    pub fn re(&self) -> NdArray<f64> {
        self.map(|z| z.re)
    }

    pub fn im(&self) -> NdArray<f64> {
        self.map(|z| z.im)
    }

    pub fn from_parts(re: &NdArray<f64>, im: &NdArray<f64>) -> Result<Self> {
        if re.shape != im.shape {
            return Err(NumError::ShapeMismatch {
                left: re.shape.clone(),
                right: im.shape.clone(),
            });
        }
        Ok(Self {
            shape: re.shape.clone(),
            data: re
                .data
                .iter()
                .zip(&im.data)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        })
    }
}

impl<T: Element> fmt::Debug for NdArray<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview = 8.min(self.data.len());
        write!(
            f,
            "NdArray<{}>{:?} {:?}{}",
            T::DTYPE,
            self.shape,
            &self.data[..preview],
            if self.data.len() > preview {
                " …"
            } else {
                ""
            }
        )
    }
}
