use rand::Rng;

use super::{check_grad_shape, he_uniform, missing_cache, relu_keeps, xavier_uniform, Activation, Mode};
use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone)]
struct DenseCache<T: Real> {
    input: Tensor<T>,
    relu_mask: Option<Vec<bool>>,
}

/// Fully connected layer `y = xW + b` with an optional fused activation.
///
/// With [`Activation::Softmax`] the layer is a classification head and
/// emits raw logits.
#[derive(Debug, Clone)]
pub struct Dense<T: Real> {
    pub activation: Activation,
    /// `[D, M]`
    pub weight: Tensor<T>,
    /// `[M]`
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    cache: Option<DenseCache<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(activation: Activation, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, m) = weight.shape().matrix()?;
        if bias.dims() != [m] {
            return Err(Error::Dimension(format!(
                "dense bias must be [{m}], got {}",
                bias.shape()
            )));
        }
        Ok(Dense {
            grad_weight: Tensor::zeros_like(&weight),
            grad_bias: Tensor::zeros_like(&bias),
            activation,
            weight,
            bias,
            cache: None,
        })
    }

    /// He-uniform for ReLU layers, Xavier-uniform otherwise; zero bias.
    pub fn init<R: Rng>(in_features: usize, out_features: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config(format!(
                "dense {in_features}->{out_features}: widths must be >= 1"
            )));
        }
        let dims = vec![in_features, out_features];
        let weight = match activation {
            Activation::Relu => he_uniform(dims, in_features, rng)?,
            _ => xavier_uniform(dims, in_features, out_features, rng)?,
        };
        Self::new(activation, weight, Tensor::zeros(vec![out_features])?)
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        let (n, d) = input.matrix()?;
        if d != self.in_features() {
            return Err(Error::Dimension(format!(
                "dense expects {} input features, got {d}",
                self.in_features()
            )));
        }
        Shape::new(vec![n, self.out_features()])
    }

    fn affine(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let (n, _) = self.output_shape(x.shape())?.matrix()?;
        let (d, m) = (self.in_features(), self.out_features());
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.bias.data());
        }
        gemm_nn(n, d, m, x.data(), self.weight.data(), &mut out);
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let mut out = self.affine(x)?;
        let relu_mask = (self.activation == Activation::Relu).then(|| {
            let mask: Vec<bool> = out.iter().map(|&v| relu_keeps(v)).collect();
            for (v, &keep) in out.iter_mut().zip(&mask) {
                if !keep {
                    *v = T::zero();
                }
            }
            mask
        });
        self.cache = Some(DenseCache {
            input: x.clone(),
            relu_mask,
        });
        Tensor::from_vec(vec![x.dims()[0], self.out_features()], out)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = self.affine(x)?;
        if self.activation == Activation::Relu {
            for v in out.iter_mut() {
                if *v <= T::zero() {
                    *v = T::zero();
                }
            }
        }
        Tensor::from_vec(vec![x.dims()[0], self.out_features()], out)
    }

    /// `grad_x = g·Wᵀ`, `grad_W += xᵀ·g`, `grad_b += column sums of g`.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("dense"))?;
        let (n, d) = cache.input.shape().matrix()?;
        let m = self.out_features();
        check_grad_shape("dense", grad_out.shape(), &Shape::new(vec![n, m])?)?;

        let mut g = grad_out.data().to_vec();
        if let Some(mask) = &cache.relu_mask {
            for (v, &keep) in g.iter_mut().zip(mask) {
                if !keep {
                    *v = T::zero();
                }
            }
        }

        gemm_tn(d, n, m, cache.input.data(), &g, self.grad_weight.data_mut());
        for row in g.chunks_exact(m) {
            for (acc, &v) in self.grad_bias.data_mut().iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut grad_in = vec![T::zero(); n * d];
        gemm_nt(n, m, d, &g, self.weight.data(), &mut grad_in);
        Tensor::from_vec(vec![n, d], grad_in)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
