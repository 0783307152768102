use super::{check_grad_shape, missing_cache, Computed, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone)]
struct PoolCache {
    input_dims: [usize; 4],
    out_hw: (usize, usize),
    /// Flat input index of the winning element for every output element.
    argmax: Vec<usize>,
}

/// Max pooling over square windows, no padding.
///
/// Ties resolve to the first element in row-major window order.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
    cache: Option<PoolCache>,
}

impl MaxPool2d {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "maxpool window ({window}) and stride ({stride}) must be >= 1"
            )));
        }
        Ok(MaxPool2d {
            window,
            stride,
            cache: None,
        })
    }

    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        (extent >= self.window).then(|| (extent - self.window) / self.stride + 1)
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (self.output_extent(h), self.output_extent(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Config(format!(
                "maxpool window {} exceeds spatial extent {h}x{w}",
                self.window
            ))),
        }
    }

    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        let (n, c, h, w) = input.nchw()?;
        let (oh, ow) = self.out_hw(h, w)?;
        Shape::new(vec![n, c, oh, ow])
    }

    fn compute<T: Real>(&self, x: &Tensor<T>) -> Result<Computed<T, usize>> {
        let (n, c, h, w) = x.shape().nchw()?;
        let (oh, ow) = self.out_hw(h, w)?;
        let data = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * self.stride * w + j * self.stride;
                    for u in 0..self.window {
                        for v in 0..self.window {
                            let idx = base + (i * self.stride + u) * w + j * self.stride + v;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        Ok((out, argmax, [n, c, h, w], (oh, ow)))
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let (out, argmax, input_dims, out_hw) = self.compute(x)?;
        self.cache = Some(PoolCache {
            input_dims,
            out_hw,
            argmax,
        });
        Tensor::from_vec(vec![input_dims[0], input_dims[1], out_hw.0, out_hw.1], out)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, _, [n, c, ..], (oh, ow)) = self.compute(x)?;
        Tensor::from_vec(vec![n, c, oh, ow], out)
    }

    /// Routes each output gradient to its window's argmax; overlapping
    /// windows accumulate.
    pub fn backward<T: Real>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("maxpool2d"))?;
        let [n, c, h, w] = cache.input_dims;
        let expected = Shape::new(vec![n, c, cache.out_hw.0, cache.out_hw.1])?;
        check_grad_shape("maxpool2d", grad_out.shape(), &expected)?;
        let mut grad_in = vec![T::zero(); n * c * h * w];
        for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
            grad_in[idx] += g;
        }
        Tensor::from_vec(vec![n, c, h, w], grad_in)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{seq::SliceRandom, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_window_and_constant_input() {
        let pool = MaxPool2d::new(2, 2).unwrap();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pool.infer(&x).unwrap().data(), &[4.0]);
        let c = Tensor::full(vec![1, 2, 4, 4], 0.3f32).unwrap();
        let y = pool.infer(&c).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut vals: Vec<f64> = (0..36).map(|v| v as f64).collect();
        vals.shuffle(&mut rng);
        let x = Tensor::from_vec(vec![1, 1, 6, 6], vals.clone()).unwrap();
        let y = MaxPool2d::new(2, 2).unwrap().infer(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let m = [vals[(2 * i) * 6 + 2 * j], vals[(2 * i) * 6 + 2 * j + 1], vals[(2 * i + 1) * 6 + 2 * j], vals[(2 * i + 1) * 6 + 2 * j + 1]]
                    .into_iter()
                    .fold(f64::MIN, f64::max);
                assert_eq!(y.data()[i * 3 + j], m);
            }
        }
    }

    #[test]
    fn backward_routes_one_per_window_and_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut vals: Vec<f64> = (0..32).map(|v| v as f64 * 0.5).collect();
        vals.shuffle(&mut rng);
        let x = Tensor::from_vec(vec![2, 1, 4, 4], vals).unwrap();
        let mut pool = MaxPool2d::new(2, 2).unwrap();
        let y = pool.forward(&x, Mode::Train).unwrap();
        let g = Tensor::full(y.dims().to_vec(), 1.0).unwrap();
        let gin = pool.backward(&g).unwrap();
        assert_eq!(gin.data().iter().filter(|&&v| v != 0.0).count(), y.numel());
        assert_eq!(gin.sum(), y.numel() as f64);
    }

    #[test]
    fn ties_resolve_to_first_in_scan() {
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![5.0f64, 5.0, 5.0, 5.0]).unwrap();
        let mut pool = MaxPool2d::new(2, 2).unwrap();
        let y = pool.forward(&x, Mode::Train).unwrap();
        let gin = pool.backward(&Tensor::full(y.dims().to_vec(), 1.0).unwrap()).unwrap();
        assert_eq!(gin.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn overlapping_windows_accumulate() {
        // centre element wins all four 2x2 windows at stride 1
        let x = Tensor::from_vec(vec![1, 1, 3, 3], vec![0.0f64, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut pool = MaxPool2d::new(2, 1).unwrap();
        let y = pool.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[9.0; 4]);
        let gin = pool.backward(&Tensor::full(vec![1, 1, 2, 2], 1.0).unwrap()).unwrap();
        assert_eq!(gin.data()[4], 4.0);
    }

    #[test]
    fn window_larger_than_input_is_config_error() {
        let pool = MaxPool2d::new(3, 1).unwrap();
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 5]).unwrap();
        assert!(matches!(pool.infer(&x), Err(Error::Config(_))));
    }
}
