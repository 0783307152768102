use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_grad_shape, missing_cache, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Inverted dropout: in train mode each element survives with probability
/// `1 − rate` and is scaled by `1 / (1 − rate)`; eval mode is the identity.
///
/// Masks come from the layer's own seeded generator, so cloning a layer
/// clones its future masks.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
    cache: Option<(Shape, Vec<bool>)>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} must be in [0, 1)")));
        }
        Ok(Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        Ok(input.clone())
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<bool> = (0..x.numel()).map(|_| self.rng.gen::<f64>() < keep).collect();
        let out = apply(x.data(), &mask, T::from_f64(1.0 / keep));
        self.cache = Some((x.shape().clone(), mask));
        Tensor::from_vec(x.dims().to_vec(), out)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.clone())
    }

    pub fn backward<T: Real>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, mask) = self.cache.take().ok_or_else(|| missing_cache("dropout"))?;
        check_grad_shape("dropout", grad_out.shape(), &shape)?;
        let out = apply(grad_out.data(), &mask, T::from_f64(1.0 / (1.0 - self.rate)));
        Tensor::from_vec(shape.dims().to_vec(), out)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

fn apply<T: Real>(values: &[T], mask: &[bool], scale: T) -> Vec<T> {
    values
        .iter()
        .zip(mask)
        .map(|(&v, &keep)| if keep { v * scale } else { T::zero() })
        .collect()
}
