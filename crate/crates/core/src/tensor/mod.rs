//! Dense row-major tensors with a runtime dtype tag.
//!
//! Four-dimensional tensors always use batch-major `N x C x H x W` layout. Storage is
//! reference counted, so clones and reshapes are cheap and tensors are immutable once built.

pub(crate) mod fixture;
pub(crate) mod ops;

use std::fmt::Debug;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{shape_err, Error, Result};

pub use fixture::{decode_fixture, encode_fixture, read_fixture, write_fixture};
pub use ops::{global_avg_pool, matmul, softmax};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[doc(hidden)]
pub enum Storage {
    F32(Arc<Vec<f32>>),
    F64(Arc<Vec<f64>>),
}

/// Scalar types a [`Tensor`] can hold.
pub trait Element: Float + Default + Debug + Sum + Send + Sync + 'static {
    const DTYPE: DType;

    fn of(v: f64) -> Self;
    fn widen(self) -> f64;
    fn view(t: &Tensor) -> Option<&[Self]>;
    fn into_storage(data: Vec<Self>) -> Storage;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn of(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
    fn view(t: &Tensor) -> Option<&[Self]> {
        match &t.storage {
            Storage::F32(d) => Some(d.as_slice()),
            Storage::F64(_) => None,
        }
    }
    fn into_storage(data: Vec<Self>) -> Storage {
        Storage::F32(Arc::new(data))
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn of(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
    fn view(t: &Tensor) -> Option<&[Self]> {
        match &t.storage {
            Storage::F64(d) => Some(d.as_slice()),
            Storage::F32(_) => None,
        }
    }
    fn into_storage(data: Vec<Self>) -> Storage {
        Storage::F64(Arc::new(data))
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Run `$body` with `$T` bound to the Rust scalar type matching `$dt`.
macro_rules! with_dtype {
    ($dt:expr, $T:ident => $body:expr) => {
        match $dt {
            $crate::tensor::DType::F32 => {
                #[allow(dead_code)]
                type $T = f32;
                $body
            }
            $crate::tensor::DType::F64 => {
                #[allow(dead_code)]
                type $T = f64;
                $body
            }
        }
    };
}
pub(crate) use with_dtype;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Storage,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() {
        return shape_err("tensor", "rank must be at least 1");
    }
    if shape.iter().any(|&d| d == 0) {
        return shape_err("tensor", format!("zero extent in {shape:?}"));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return shape_err(
            "tensor",
            format!("shape {shape:?} needs {numel} elements, buffer has {len}"),
        );
    }
    Ok(())
}

impl Tensor {
    pub fn new<T: Element>(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape, data.len())?;
        Ok(Tensor {
            shape,
            storage: T::into_storage(data),
        })
    }

    /// Build a tensor of the requested dtype from `f64` values.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64], dtype: DType) -> Result<Self> {
        with_dtype!(dtype, T => Tensor::new(shape, data.iter().map(|&v| T::of(v)).collect::<Vec<T>>()))
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64, dtype: DType) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        with_dtype!(dtype, T => Tensor::new(shape, vec![T::of(value); n]))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>, dtype: DType) -> Result<Self> {
        Self::full(shape, 0.0, dtype)
    }

    pub fn scalar(value: f64, dtype: DType) -> Self {
        Self::full([1], value, dtype).expect("scalar shape is valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn dtype(&self) -> DType {
        match self.storage {
            Storage::F32(_) => DType::F32,
            Storage::F64(_) => DType::F64,
        }
    }

    /// Borrow the buffer as `T`; fails if the tensor holds a different dtype.
    pub fn data<T: Element>(&self) -> Result<&[T]> {
        T::view(self).ok_or(Error::DType {
            op: "data",
            left: self.dtype(),
            right: T::DTYPE,
        })
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.storage {
            Storage::F32(d) => d.iter().map(|&v| v as f64).collect(),
            Storage::F64(d) => d.as_ref().clone(),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return shape_err("item", format!("tensor has shape {:?}", self.shape));
        }
        Ok(self.to_f64_vec()[0])
    }

    /// Element at a full multi-index, widened to `f64`.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        match &self.storage {
            Storage::F32(d) => d[flat] as f64,
            Storage::F64(d) => d[flat],
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape, self.numel())?;
        Ok(Tensor {
            shape,
            storage: self.storage.clone(),
        })
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype() {
            return self.clone();
        }
        Tensor::from_f64(self.shape.clone(), &self.to_f64_vec(), dtype).expect("same shape")
    }

    /// `[N, C, H, W]` extents, or an error if the tensor is not 4-D.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => shape_err("dims4", format!("expected rank 4, got {:?}", self.shape)),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        with_dtype!(self.dtype(), T => {
            let d = self.data::<T>().expect("dtype matches");
            Tensor::new(self.shape.clone(), d.iter().map(|&v| T::of(f(v.widen()))).collect::<Vec<T>>())
                .expect("same shape")
        })
    }

    pub fn all_finite(&self) -> bool {
        match &self.storage {
            Storage::F32(d) => d.iter().all(|v| v.is_finite()),
            Storage::F64(d) => d.iter().all(|v| v.is_finite()),
        }
    }

    /// True when shapes, dtypes and every bit of the buffers agree.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.storage, &other.storage) {
            (Storage::F32(a), Storage::F32(b)) => {
                a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Storage::F64(a), Storage::F64(b)) => {
                a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.to_f64_vec()
            .iter()
            .zip(other.to_f64_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn same_dtype(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.dtype() != other.dtype() {
            return Err(Error::DType {
                op,
                left: self.dtype(),
                right: other.dtype(),
            });
        }
        Ok(())
    }
}
