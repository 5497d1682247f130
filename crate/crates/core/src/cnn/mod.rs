//! Minimal tensor engine and the C(5×5)-S(2×2)-C(5×5)-S(2×2)-FC(120)-FC(3)
//! gaze network.
//!
//! Training and inference run in `f32`; every routine is generic over
//! [`Scalar`] so gradients can be checked in `f64`.

mod io;
mod layers;
mod network;

pub use io::{load_model, load_model_file, save_model, save_model_file, MAGIC, MODEL_VERSION};
pub use layers::{
    conv_backward, conv_forward, fc_backward, fc_forward, pool_backward, pool_forward, relu_backward, relu_forward,
    softmax, softmax_xent, ConvGrads, FcGrads,
};
pub use network::{argmax, param_count, ArchConfig, Network, SampleTrace, Signature, PARAM_NAMES};

use std::fmt::Debug;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("label {0} out of range for {1} classes")]
    Label(usize, usize),
    #[error("bad model magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported model version {0}")]
    Version(u16),
    #[error("model parameter `{param}` has {found} values, architecture needs {expected}")]
    ParamShape { param: &'static str, expected: usize, found: usize },
    #[error("model parameter `{param}` holds non-finite value at index {index}")]
    NonFinite { param: &'static str, index: usize },
    #[error("model file truncated: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CnnError>;

pub trait Scalar:
    num_traits::Float + Default + Debug + Send + Sync + std::iter::Sum + std::ops::AddAssign + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CnnError::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() == rank {
            Ok(())
        } else {
            Err(CnnError::Shape(format!("{what} must have rank {rank}, got shape {:?}", self.shape)))
        }
    }
}
