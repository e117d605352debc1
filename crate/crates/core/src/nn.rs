//! Fixed-weight layers used by the toy networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Shape;

/// 2-D convolution with zero padding. Weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    /// Gaussian weights with std `gain / sqrt(fan_in)` and zero bias.
    pub fn random(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let fan_in = (in_c * kernel * kernel) as f64;
        let std = gain / fan_in.sqrt();
        let weight = (0..out_c * in_c * kernel * kernel)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            pad: kernel / 2,
            weight,
            bias: vec![0.0; out_c],
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_c + i) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn w_mut(&mut self, o: usize, i: usize, ky: usize, kx: usize) -> &mut f64 {
        &mut self.weight[((o * self.in_c + i) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn output_shape(&self, s: Shape) -> Shape {
        let oh = (s.h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (s.w + 2 * self.pad - self.kernel) / self.stride + 1;
        Shape::new(self.out_c, oh, ow)
    }

    pub fn forward(&self, input: &[f64], s: Shape) -> (Vec<f64>, Shape) {
        assert_eq!(s.c, self.in_c, "conv input channels");
        let os = self.output_shape(s);
        let mut out = vec![0.0; os.numel()];
        for o in 0..self.out_c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = self.bias[o];
                    for i in 0..self.in_c {
                        for ky in 0..self.kernel {
                            let Some(iy) = self.source(oy, ky, s.h) else {
                                continue;
                            };
                            for kx in 0..self.kernel {
                                let Some(ix) = self.source(ox, kx, s.w) else {
                                    continue;
                                };
                                acc += self.w(o, i, ky, kx) * input[(i * s.h + iy) * s.w + ix];
                            }
                        }
                    }
                    out[(o * os.h + oy) * os.w + ox] = acc;
                }
            }
        }
        (out, os)
    }

    pub fn backward_input(&self, grad_out: &[f64], s: Shape, grad_in: &mut [f64]) {
        let os = self.output_shape(s);
        for o in 0..self.out_c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = grad_out[(o * os.h + oy) * os.w + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..self.in_c {
                        for ky in 0..self.kernel {
                            let Some(iy) = self.source(oy, ky, s.h) else {
                                continue;
                            };
                            for kx in 0..self.kernel {
                                let Some(ix) = self.source(ox, kx, s.w) else {
                                    continue;
                                };
                                grad_in[(i * s.h + iy) * s.w + ix] += self.w(o, i, ky, kx) * g;
                            }
                        }
                    }
                }
            }
        }
    }

    #[inline]
    fn source(&self, out_pos: usize, k: usize, len: usize) -> Option<usize> {
        let p = (out_pos * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < len).then_some(p as usize)
    }
}

/// Fully connected layer, weights laid out `[out][in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn random(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        let std = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.in_dim, "dense input length");
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn backward_input(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for (o, g) in grad_out.iter().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (d, w) in grad_in.iter_mut().zip(row) {
                *d += w * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::rng::RngState;
    use std::sync::Arc;

    #[test]
    fn strided_conv_output_shape() {
        let mut rng = RngState::new(0, "nn").rng();
        let conv = Conv2d::random(&mut rng, 3, 8, 3, 2, 1.0);
        assert_eq!(conv.output_shape(Shape::new(3, 32, 32)), Shape::new(8, 16, 16));
        let conv5 = Conv2d::random(&mut rng, 3, 4, 5, 1, 1.0);
        assert_eq!(conv5.output_shape(Shape::new(3, 16, 16)), Shape::new(4, 16, 16));
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut rng = RngState::new(0, "nn").rng();
        let mut conv = Conv2d::random(&mut rng, 1, 1, 3, 1, 1.0);
        conv.weight.iter_mut().for_each(|w| *w = 0.0);
        *conv.w_mut(0, 0, 1, 1) = 1.0;
        let input: Vec<f64> = (0..16).map(f64::from).collect();
        let (out, _) = conv.forward(&input, Shape::new(1, 4, 4));
        assert_eq!(out, input);
    }

    #[test]
    fn conv_and_dense_input_gradients_match_finite_differences() {
        let mut rng = RngState::new(5, "nn").rng();
        let conv = Arc::new(Conv2d::random(&mut rng, 2, 3, 3, 2, 1.0));
        let dense = Arc::new(Dense::random(&mut rng, 3 * 3 * 3, 4));
        let shape = Shape::new(2, 5, 5);
        let x: Vec<f64> = (0..shape.numel()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let f = |v: &[f64]| {
            let mut t = Tape::new();
            let xv = t.input(v.to_vec(), shape);
            let c = t.conv(xv, &conv);
            let a = t.tanh(c);
            let d = t.dense(a, &dense);
            let s = t.sum_squares(d);
            (t, xv, s)
        };
        let (t, xv, s) = f(&x);
        let g = t.backward(s).wrt(xv, &t);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += 1e-5;
            let mut xm = x.clone();
            xm[i] -= 1e-5;
            let (tp, _, sp) = f(&xp);
            let (tm, _, sm) = f(&xm);
            let fd = (tp.scalar(sp) - tm.scalar(sm)) / 2e-5;
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }
}
