use rand::Rng;
use rayon::prelude::*;

use super::{check_grad_shape, he_uniform, missing_cache, relu_keeps, Activation, Computed, Mode};
use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Real, Shape, Tensor};

/// Square-kernel convolution geometry with zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "conv spec {self:?}: channels, kernel and stride must be >= 1"
            )));
        }
        Ok(())
    }

    /// `floor((extent + 2p - k) / s) + 1`, or `None` when the padded input
    /// is smaller than the kernel.
    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        let padded = extent + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    input_dims: [usize; 4],
    out_hw: (usize, usize),
    /// One im2col matrix `[C·k·k, H'·W']` per sample, concatenated.
    cols: Vec<T>,
    /// `pre-activation > 0`, present only for the ReLU variant.
    relu_mask: Option<Vec<bool>>,
}

/// 2-D convolution with an optional fused activation.
///
/// Implemented as per-sample im2col followed by GEMM; samples run in
/// parallel and parameter gradients are reduced in sample order.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub spec: ConvSpec,
    pub activation: Activation,
    /// `[F, C, k, k]`
    pub weight: Tensor<T>,
    /// `[F]`
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(spec: ConvSpec, activation: Activation, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        spec.validate()?;
        if activation == Activation::Softmax {
            return Err(Error::Config("conv2d does not support a softmax activation".into()));
        }
        let want_w = [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel];
        if weight.dims() != want_w {
            return Err(Error::Dimension(format!(
                "conv2d weight must be {:?}, got {}",
                want_w,
                weight.shape()
            )));
        }
        if bias.dims() != [spec.out_channels] {
            return Err(Error::Dimension(format!(
                "conv2d bias must be [{}], got {}",
                spec.out_channels,
                bias.shape()
            )));
        }
        Ok(Conv2d {
            grad_weight: Tensor::zeros_like(&weight),
            grad_bias: Tensor::zeros_like(&bias),
            spec,
            activation,
            weight,
            bias,
            cache: None,
        })
    }

    /// He-uniform weights, zero bias.
    pub fn init<R: Rng>(spec: ConvSpec, activation: Activation, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let dims = vec![spec.out_channels, spec.in_channels, spec.kernel, spec.kernel];
        let weight = he_uniform(dims, spec.patch_len(), rng)?;
        let bias = Tensor::zeros(vec![spec.out_channels])?;
        Self::new(spec, activation, weight, bias)
    }

    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        let (n, c, h, w) = input.nchw()?;
        self.check_channels(c)?;
        let (oh, ow) = self.out_hw(h, w)?;
        Shape::new(vec![n, self.spec.out_channels, oh, ow])
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        if c != self.spec.in_channels {
            return Err(Error::Dimension(format!(
                "conv2d expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        Ok(())
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (self.spec.output_extent(h), self.spec.output_extent(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Dimension(format!(
                "conv2d: input {h}x{w} with padding {} is smaller than kernel {}",
                self.spec.padding, self.spec.kernel
            ))),
        }
    }

    /// Returns `(pre-activation output, im2col columns)` per sample.
    fn compute(&self, x: &Tensor<T>) -> Result<Computed<T, T>> {
        let (n, c, h, w) = x.shape().nchw()?;
        self.check_channels(c)?;
        let (oh, ow) = self.out_hw(h, w)?;
        let f = self.spec.out_channels;
        let patch = self.spec.patch_len();
        let positions = oh * ow;
        let in_len = c * h * w;

        let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let xs = &x.data()[s * in_len..(s + 1) * in_len];
                let col = im2col(xs, (c, h, w), &self.spec, (oh, ow));
                let mut out = vec![T::zero(); f * positions];
                for (fi, row) in out.chunks_exact_mut(positions).enumerate() {
                    row.fill(self.bias.data()[fi]);
                }
                gemm_nn(f, patch, positions, self.weight.data(), &col, &mut out);
                (out, col)
            })
            .collect();

        let mut out = Vec::with_capacity(n * f * positions);
        let mut cols = Vec::with_capacity(n * patch * positions);
        for (o, col) in per_sample {
            out.extend(o);
            cols.extend(col);
        }
        Ok((out, cols, [n, c, h, w], (oh, ow)))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let (mut out, cols, input_dims, out_hw) = self.compute(x)?;
        let relu_mask = match self.activation {
            Activation::Relu => {
                let mask: Vec<bool> = out.iter().map(|&v| relu_keeps(v)).collect();
                for (v, &keep) in out.iter_mut().zip(&mask) {
                    if !keep {
                        *v = T::zero();
                    }
                }
                Some(mask)
            }
            _ => None,
        };
        self.cache = Some(ConvCache {
            input_dims,
            out_hw,
            cols,
            relu_mask,
        });
        let dims = vec![input_dims[0], self.spec.out_channels, out_hw.0, out_hw.1];
        Tensor::from_vec(dims, out)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut out, _, [n, ..], (oh, ow)) = self.compute(x)?;
        if self.activation == Activation::Relu {
            for v in out.iter_mut() {
                if *v <= T::zero() {
                    *v = T::zero();
                }
            }
        }
        Tensor::from_vec(vec![n, self.spec.out_channels, oh, ow], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("conv2d"))?;
        let [n, c, h, w] = cache.input_dims;
        let (oh, ow) = cache.out_hw;
        let f = self.spec.out_channels;
        let expected = Shape::new(vec![n, f, oh, ow])?;
        check_grad_shape("conv2d", grad_out.shape(), &expected)?;

        let mut grad = grad_out.data().to_vec();
        if let Some(mask) = &cache.relu_mask {
            for (g, &keep) in grad.iter_mut().zip(mask) {
                if !keep {
                    *g = T::zero();
                }
            }
        }

        let patch = self.spec.patch_len();
        let positions = oh * ow;
        let weight = self.weight.data();
        let spec = self.spec;
        let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let g = &grad[s * f * positions..(s + 1) * f * positions];
                let col = &cache.cols[s * patch * positions..(s + 1) * patch * positions];
                let mut dw = vec![T::zero(); f * patch];
                gemm_nt(f, positions, patch, g, col, &mut dw);
                let db: Vec<T> = g.chunks_exact(positions).map(|r| r.iter().copied().sum()).collect();
                let mut dcol = vec![T::zero(); patch * positions];
                gemm_tn(patch, f, positions, weight, g, &mut dcol);
                let gin = col2im(&dcol, (c, h, w), &spec, (oh, ow));
                (dw, db, gin)
            })
            .collect();

        let mut grad_in = Vec::with_capacity(n * c * h * w);
        for (dw, db, gin) in per_sample {
            for (acc, v) in self.grad_weight.data_mut().iter_mut().zip(dw) {
                *acc += v;
            }
            for (acc, v) in self.grad_bias.data_mut().iter_mut().zip(db) {
                *acc += v;
            }
            grad_in.extend(gin);
        }
        Tensor::from_vec(vec![n, c, h, w], grad_in)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Unfolds one `[C, H, W]` sample into `[C·k·k, H'·W']`.
fn im2col<T: Real>(x: &[T], (c, h, w): (usize, usize, usize), spec: &ConvSpec, (oh, ow): (usize, usize)) -> Vec<T> {
    let k = spec.kernel;
    let positions = oh * ow;
    let mut col = vec![T::zero(); c * k * k * positions];
    for ci in 0..c {
        for u in 0..k {
            for v in 0..k {
                let row = (ci * k + u) * k + v;
                let dst = &mut col[row * positions..(row + 1) * positions];
                for i in 0..oh {
                    let y = (i * spec.stride + u) as isize - spec.padding as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src_row = &x[(ci * h + y as usize) * w..(ci * h + y as usize + 1) * w];
                    for j in 0..ow {
                        let xx = (j * spec.stride + v) as isize - spec.padding as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[i * ow + j] = src_row[xx as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto `[C, H, W]`.
fn col2im<T: Real>(col: &[T], (c, h, w): (usize, usize, usize), spec: &ConvSpec, (oh, ow): (usize, usize)) -> Vec<T> {
    let k = spec.kernel;
    let positions = oh * ow;
    let mut x = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for u in 0..k {
            for v in 0..k {
                let row = (ci * k + u) * k + v;
                let src = &col[row * positions..(row + 1) * positions];
                for i in 0..oh {
                    let y = (i * spec.stride + u) as isize - spec.padding as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for j in 0..ow {
                        let xx = (j * spec.stride + v) as isize - spec.padding as isize;
                        if xx >= 0 && xx < w as isize {
                            x[(ci * h + y as usize) * w + xx as usize] += src[i * ow + j];
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Six-nested-loop direct convolution.
    fn direct(x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Vec<f64> {
        let (n, c, h, w) = x.shape().nchw().unwrap();
        let (f, _, k, _) = wt.shape().nchw().unwrap();
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; n * f * oh * ow];
        for ni in 0..n {
            for fi in 0..f {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b.data()[fi];
                        for ci in 0..c {
                            for u in 0..k {
                                for v in 0..k {
                                    let y = (i * s + u) as isize - p as isize;
                                    let xx = (j * s + v) as isize - p as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                        acc += x.data()[((ni * c + ci) * h + y as usize) * w + xx as usize]
                                            * wt.data()[((fi * c + ci) * k + u) * k + v];
                                    }
                                }
                            }
                        }
                        out[((ni * f + fi) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn random(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let spec = ConvSpec::new(1, 1, 1, 1, 0).unwrap();
        let conv = Conv2d::new(
            spec,
            Activation::None,
            Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0f32]).unwrap(),
            Tensor::zeros(vec![1]).unwrap(),
        )
        .unwrap();
        let x = Tensor::from_vec(vec![1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        assert_eq!(conv.infer(&x).unwrap(), x);
    }

    #[test]
    fn same_padding_shape() {
        let spec = ConvSpec::new(3, 16, 3, 1, 1).unwrap();
        assert_eq!(spec.output_extent(64), Some(64));
        assert_eq!(spec.output_extent(1), Some(1));
        assert_eq!(ConvSpec::new(1, 1, 5, 1, 0).unwrap().output_extent(3), None);
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ConvSpec::new(3, 4, 3, 1, 1).unwrap();
        let conv = Conv2d::<f64>::init(spec, Activation::None, &mut rng).unwrap();
        let x = random(vec![2, 3, 8, 8], &mut rng);
        let got = conv.infer(&x).unwrap();
        let want = direct(&x, &conv.weight, &conv.bias, 1, 1);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads_and_bias_grad_is_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = ConvSpec::new(2, 3, 3, 2, 1).unwrap();
        let mut conv = Conv2d::<f64>::init(spec, Activation::None, &mut rng).unwrap();
        let x = random(vec![2, 2, 5, 5], &mut rng);
        let y = conv.forward(&x, Mode::Train).unwrap();
        let gin = conv.backward(&Tensor::zeros_like(&y)).unwrap();
        assert!(gin.data().iter().all(|&v| v == 0.0));
        assert!(conv.grad_weight.data().iter().all(|&v| v == 0.0));
        assert!(conv.grad_bias.data().iter().all(|&v| v == 0.0));

        conv.forward(&x, Mode::Train).unwrap();
        let g = random(y.dims().to_vec(), &mut rng);
        conv.backward(&g).unwrap();
        let (n, f, oh, ow) = g.shape().nchw().unwrap();
        for fi in 0..f {
            let mut sum = 0.0;
            for ni in 0..n {
                for p in 0..oh * ow {
                    sum += g.data()[(ni * f + fi) * oh * ow + p];
                }
            }
            assert!((conv.grad_bias.data()[fi] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = ConvSpec::new(1, 2, 3, 1, 0).unwrap();
        let mut conv = Conv2d::<f64>::init(spec, Activation::None, &mut rng).unwrap();
        let x = random(vec![1, 1, 4, 4], &mut rng);
        let y = conv.forward(&x, Mode::Train).unwrap();
        let g = random(y.dims().to_vec(), &mut rng);
        conv.backward(&g).unwrap();
        let once = conv.grad_weight.clone();
        conv.forward(&x, Mode::Train).unwrap();
        conv.backward(&g).unwrap();
        for (a, b) in conv.grad_weight.data().iter().zip(once.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let spec = ConvSpec::new(1, 1, 3, 1, 1).unwrap();
        let mut conv = Conv2d::<f32>::init(spec, Activation::Relu, &mut rng).unwrap();
        let g = Tensor::zeros(vec![1, 1, 3, 3]).unwrap();
        assert!(matches!(conv.backward(&g), Err(Error::State(_))));
        // eval-mode forward does not arm backward
        conv.forward(&Tensor::zeros(vec![1, 1, 3, 3]).unwrap(), Mode::Eval).unwrap();
        assert!(matches!(conv.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let conv = Conv2d::<f32>::init(ConvSpec::new(3, 2, 3, 1, 1).unwrap(), Activation::None, &mut rng).unwrap();
        let x = Tensor::zeros(vec![1, 2, 4, 4]).unwrap();
        assert!(matches!(conv.infer(&x), Err(Error::Dimension(_))));
    }
}
