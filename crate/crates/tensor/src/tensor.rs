use crate::element::Element;
use crate::error::{Result, TensorError};

/// Dense row-major N-D array.
///
/// Images use the `[batch, channels, height, width]` layout. A rank-0
/// tensor (empty shape) holds a single scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Shape {
                op: "tensor",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self { data: (0..numel).map(&mut f).collect(), shape }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    /// Interprets the tensor as `[batch, channels, height, width]`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(TensorError::Shape {
                op,
                detail: format!("expected rank-4 tensor, got shape {:?}", self.shape),
            }),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of all elements, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }

    /// Align-corners bilinear resampling of the two trailing axes, outside
    /// any graph. Same-size targets return an exact copy.
    pub fn resized(&self, out_h: usize, out_w: usize) -> Result<Self> {
        use crate::kernels::resample::{resample_forward, AxisTaps};
        if self.rank() < 2 || out_h == 0 || out_w == 0 {
            return Err(TensorError::Invalid {
                op: "resized",
                detail: format!("cannot resample {:?} to {out_h}x{out_w}", self.shape),
            });
        }
        let r = self.rank();
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        let planes: usize = self.shape[..r - 2].iter().product();
        let data = resample_forward(&self.data, planes, h, w, &AxisTaps::new(h, out_h), &AxisTaps::new(w, out_w));
        let mut shape = self.shape[..r - 2].to_vec();
        shape.extend([out_h, out_w]);
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn rank_zero_is_scalar() {
        let t = Tensor::scalar(3.5f32);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.item().unwrap(), 3.5);
    }

    #[test]
    fn reshape_checks_numel() {
        let t = Tensor::<f64>::zeros(vec![2, 2]);
        assert!(t.clone().reshape(vec![4]).is_ok());
        assert!(t.reshape(vec![3]).is_err());
    }
}
