use std::fmt;

use super::NnError;

/// Dimensions of a dense row-major tensor.
///
/// Image-like tensors use `[height, width, channels]` with channels varying
/// fastest, so pixel `(y, x)` channel `c` lives at `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorShape {
    dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self, NnError> {
        if dims.is_empty() {
            return Err(NnError::Shape("tensor shape needs at least one dimension".into()));
        }
        if dims.contains(&0) {
            return Err(NnError::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        let mut count: usize = 1;
        for &d in &dims {
            count = count
                .checked_mul(d)
                .ok_or_else(|| NnError::Shape(format!("element count of {dims:?} overflows")))?;
        }
        Ok(Self { dims })
    }

    /// `[height, width, channels]` shape.
    pub fn image(height: usize, width: usize, channels: usize) -> Result<Self, NnError> {
        Self::new(vec![height, width, channels])
    }

    pub fn flat(len: usize) -> Result<Self, NnError> {
        Self::new(vec![len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Returns `(height, width, channels)` for rank-3 shapes.
    pub fn as_image(&self) -> Option<(usize, usize, usize)> {
        match self.dims.as_slice() {
            &[h, w, c] => Some((h, w, c)),
            _ => None,
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// A shaped buffer of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self, NnError> {
        if shape.len() != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let data = vec![0.0; shape.len()];
        Self { shape, data }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}
