use ndarray::{Array3, Array4, Axis};

use crate::{Error, Real, Result};

/// `(batch, channel, height, width)` activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T: Real = f32> {
    data: Array4<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(data: Array4<T>) -> Result<Self> {
        let (n, c, h, w) = data.dim();
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidDimension(format!("tensor dims {:?} must all be >= 1", data.dim())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("tensor has non-finite entries".into()));
        }
        Ok(Self { data: data.as_standard_layout().into_owned() })
    }

    /// Stack `(C, H, W)` images into a batch.
    pub fn from_images(images: &[&Array3<T>]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::InvalidDimension("empty batch".into()))?;
        let (c, h, w) = first.dim();
        let mut data = Array4::zeros((images.len(), c, h, w));
        for (i, img) in images.iter().enumerate() {
            if img.dim() != (c, h, w) {
                return Err(Error::DimensionMismatch(format!(
                    "batch item {i} is {:?}, expected {:?}",
                    img.dim(),
                    (c, h, w)
                )));
            }
            data.index_axis_mut(Axis(0), i).assign(img);
        }
        Self::new(data)
    }

    pub fn data(&self) -> &Array4<T> {
        &self.data
    }

    pub fn into_data(self) -> Array4<T> {
        self.data
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_nan() {
        assert!(Tensor4::<f32>::new(Array4::zeros((0, 1, 2, 2))).is_err());
        let mut a = Array4::<f32>::zeros((1, 1, 2, 2));
        a[[0, 0, 1, 1]] = f32::NAN;
        assert!(Tensor4::new(a).is_err());
    }

    #[test]
    fn stacks_images() {
        let a = Array3::<f32>::ones((3, 4, 5));
        let b = Array3::<f32>::zeros((3, 4, 5));
        let t = Tensor4::from_images(&[&a, &b]).unwrap();
        assert_eq!(t.dim(), (2, 3, 4, 5));
        assert_eq!(t.data()[[0, 2, 3, 4]], 1.0);
        assert_eq!(t.data()[[1, 2, 3, 4]], 0.0);
        assert!(Tensor4::from_images(&[&a, &Array3::zeros((3, 4, 4))]).is_err());
    }
}
