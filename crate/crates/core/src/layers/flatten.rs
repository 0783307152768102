use super::{check_grad_shape, missing_cache, Mode};
use crate::error::Result;
use crate::tensor::{Real, Shape, Tensor};

/// `[N, C, H, W] -> [N, C·H·W]`, row-major per sample.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cache: Option<Shape>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten::default()
    }

    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        let (n, c, h, w) = input.nchw()?;
        Shape::new(vec![n, c * h * w])
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = self.infer(x)?;
        if mode == Mode::Train {
            self.cache = Some(x.shape().clone());
        }
        Ok(out)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.output_shape(x.shape())?;
        x.reshape(out.dims().to_vec())
    }

    pub fn backward<T: Real>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or_else(|| missing_cache("flatten"))?;
        check_grad_shape("flatten", grad_out.shape(), &self.output_shape(&input)?)?;
        grad_out.reshape(input.dims().to_vec())
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn row_major_order_and_round_trip() {
        let mut f = Flatten::new();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = f.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.dims(), &[1, 4]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.backward(&y).unwrap(), x);
    }

    #[test]
    fn proposed_model_flatten_width() {
        let f = Flatten::new();
        let s = f.output_shape(&Shape::new(vec![3, 128, 2, 2]).unwrap()).unwrap();
        assert_eq!(s.dims(), &[3, 512]);
    }

    #[test]
    fn wrong_rank_is_dimension_error() {
        let f = Flatten::new();
        let x = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        assert!(matches!(f.infer(&x), Err(Error::Dimension(_))));
    }
}
