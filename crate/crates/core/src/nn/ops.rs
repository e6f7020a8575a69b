//! Convolution kernels on channel-major batches.
//!
//! Activations are stored `C × B × H × W` so that a convolution over the whole
//! batch is one GEMM against an `im2col` matrix and channel concatenation is a
//! plain buffer append.

use rand::Rng as _;

use super::scalar::{matmul, Mat, Scalar};
use crate::rng::Rng;

/// Channel-major activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self { channels, batch, height, width, data: vec![T::zero(); channels * batch * height * width] }
    }

    pub fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }

    /// Stacks `self` on top of `other` along the channel axis.
    pub fn concat(mut self, other: &Act<T>) -> Act<T> {
        assert_eq!((self.batch, self.height, self.width), (other.batch, other.height, other.width));
        self.data.extend_from_slice(&other.data);
        self.channels += other.channels;
        self
    }

    /// Splits off the trailing channels starting at `at`.
    pub fn split_channels(mut self, at: usize) -> (Act<T>, Act<T>) {
        let tail = self.data.split_off(at * self.plane());
        let rest = Act { channels: self.channels - at, batch: self.batch, height: self.height, width: self.width, data: tail };
        self.channels = at;
        (self, rest)
    }
}

/// Convolution geometry: a `k × k` window moved with `stride` over an input
/// zero-padded by `pad` on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// Unfolds every receptive field into a column: result is `(C·k·k) × (B·Ho·Wo)`.
pub fn im2col<T: Scalar>(x: &Act<T>, win: Window, ho: usize, wo: usize) -> Vec<T> {
    let (c, b, h, w) = (x.channels, x.batch, x.height, x.width);
    let k = win.k;
    let ncols = b * ho * wo;
    let mut col = vec![T::zero(); c * k * k * ncols];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = valid_range(kx, win, w, wo);
                for bi in 0..b {
                    let src = &x.data[(ci * b + bi) * h * w..(ci * b + bi + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[(bi * ho + oy) * wo..(bi * ho + oy + 1) * wo];
                        if win.stride == 1 {
                            let ix0 = ox_lo + kx - win.pad;
                            drow[ox_lo..ox_hi].copy_from_slice(&srow[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                drow[ox] = srow[ox * win.stride + kx - win.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub fn col2im<T: Scalar>(col: &[T], x: &mut Act<T>, win: Window, ho: usize, wo: usize) {
    let (c, b, h, w) = (x.channels, x.batch, x.height, x.width);
    let k = win.k;
    let ncols = b * ho * wo;
    debug_assert_eq!(col.len(), c * k * k * ncols);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = valid_range(kx, win, w, wo);
                for bi in 0..b {
                    let dst = &mut x.data[(ci * b + bi) * h * w..(ci * b + bi + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let srow = &src[(bi * ho + oy) * wo..(bi * ho + oy + 1) * wo];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * win.stride + kx - win.pad;
                            drow[ix] = drow[ix] + srow[ox];
                        }
                    }
                }
            }
        }
    }
}

// Output columns `ox` whose tap `kx` lands inside `[0, w)`.
fn valid_range(kx: usize, win: Window, w: usize, wo: usize) -> (usize, usize) {
    let lo = if kx >= win.pad { 0 } else { (win.pad - kx).div_ceil(win.stride) };
    // ox * stride + kx - pad <= w - 1
    let hi = if w + win.pad > kx { ((w + win.pad - kx - 1) / win.stride + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in y.chunks_exact_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Scalar>(dy: &[T], plane: usize) -> Vec<T> {
    dy.chunks_exact(plane).map(|chunk| chunk.iter().copied().sum()).collect()
}

/// Cached input columns of a convolution, needed for its weight gradient.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    col: Vec<T>,
    input_dims: (usize, usize, usize, usize),
}

/// Convolution with weight `[cout, cin·k·k]` and bias `[cout]`.
pub fn conv_forward<T: Scalar>(
    x: &Act<T>,
    weight: &[T],
    bias: &[T],
    cout: usize,
    win: Window,
    keep: bool,
) -> (Act<T>, Option<ConvCache<T>>) {
    let ho = win.output_size(x.height);
    let wo = win.output_size(x.width);
    let rows = x.channels * win.k * win.k;
    let col = im2col(x, win, ho, wo);
    let mut y = Act::zeros(cout, x.batch, ho, wo);
    let plane = y.plane();
    matmul(Mat::new(weight, cout, rows), Mat::new(&col, rows, plane), T::zero(), &mut y.data);
    add_bias(&mut y.data, bias, plane);
    let cache = keep.then(|| ConvCache { col, input_dims: (x.channels, x.batch, x.height, x.width) });
    (y, cache)
}

/// Returns `(d_weight, d_bias, d_input)`; the input gradient is skipped when not needed.
pub fn conv_backward<T: Scalar>(
    dy: &Act<T>,
    weight: &[T],
    cache: &ConvCache<T>,
    win: Window,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Act<T>>) {
    let (cin, b, h, w) = cache.input_dims;
    let cout = dy.channels;
    let rows = cin * win.k * win.k;
    let plane = dy.plane();
    let mut dw = vec![T::zero(); cout * rows];
    matmul(Mat::new(&dy.data, cout, plane), Mat::new(&cache.col, rows, plane).t(), T::zero(), &mut dw);
    let db = bias_grad(&dy.data, plane);
    let dx = need_dx.then(|| {
        let mut dcol = vec![T::zero(); rows * plane];
        matmul(Mat::new(weight, cout, rows).t(), Mat::new(&dy.data, cout, plane), T::zero(), &mut dcol);
        let mut dx = Act::zeros(cin, b, h, w);
        col2im(&dcol, &mut dx, win, dy.height, dy.width);
        dx
    });
    (dw, db, dx)
}

/// Transposed convolution with weight `[cin, cout·k·k]`. The output is
/// `out_size × out_size`, the input being the result of convolving that output
/// size with `win`.
pub fn conv_transpose_forward<T: Scalar>(
    x: &Act<T>,
    weight: &[T],
    bias: &[T],
    cout: usize,
    win: Window,
    out_h: usize,
    out_w: usize,
) -> Act<T> {
    debug_assert_eq!(win.output_size(out_h), x.height);
    let rows = cout * win.k * win.k;
    let plane = x.plane();
    let mut cols = vec![T::zero(); rows * plane];
    matmul(Mat::new(weight, x.channels, rows).t(), Mat::new(&x.data, x.channels, plane), T::zero(), &mut cols);
    let mut y = Act::zeros(cout, x.batch, out_h, out_w);
    col2im(&cols, &mut y, win, x.height, x.width);
    let out_plane = y.plane();
    add_bias(&mut y.data, bias, out_plane);
    y
}

pub fn conv_transpose_backward<T: Scalar>(
    dy: &Act<T>,
    x: &Act<T>,
    weight: &[T],
    win: Window,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Act<T>>) {
    let cin = x.channels;
    let rows = dy.channels * win.k * win.k;
    let plane = x.plane();
    let dcols = im2col(dy, win, x.height, x.width);
    let mut dw = vec![T::zero(); cin * rows];
    matmul(Mat::new(&x.data, cin, plane), Mat::new(&dcols, rows, plane).t(), T::zero(), &mut dw);
    let db = bias_grad(&dy.data, dy.plane());
    let dx = need_dx.then(|| {
        let mut dx = Act::zeros(cin, x.batch, x.height, x.width);
        matmul(Mat::new(weight, cin, rows), Mat::new(&dcols, rows, plane), T::zero(), &mut dx.data);
        dx
    });
    (dw, db, dx)
}

pub fn leaky_relu<T: Scalar>(x: &mut [T], slope: T) {
    for v in x {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Multiplies `dy` by the leaky-ReLU derivative, read off the activation output.
pub fn leaky_relu_backward<T: Scalar>(dy: &mut [T], output: &[T], slope: T) {
    for (g, &y) in dy.iter_mut().zip(output) {
        if y < T::zero() {
            *g = *g * slope;
        }
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`. Returns the mask.
pub fn dropout<T: Scalar>(x: &mut [T], rate: f64, rng: &mut Rng) -> Vec<T> {
    let scale = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale }).collect();
    x.iter_mut().zip(&mask).for_each(|(v, &m)| *v = *v * m);
    mask
}

pub fn apply_mask<T: Scalar>(x: &mut [T], mask: &[T]) {
    x.iter_mut().zip(mask).for_each(|(v, &m)| *v = *v * m);
}

/// Logistic function, kept strictly inside `(0, 1)` at the type's precision.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    let one = T::one();
    let p = one / (one + (-z).exp());
    let hi = one - T::epsilon() / T::lit(2.0);
    p.max(T::min_positive_value()).min(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ramp(c: usize, b: usize, h: usize, w: usize) -> Act<f64> {
        let n = c * b * h * w;
        Act { channels: c, batch: b, height: h, width: w, data: (0..n).map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0).collect() }
    }

    // Direct nested-loop convolution, independent of im2col.
    fn direct_conv(x: &Act<f64>, wt: &[f64], bias: &[f64], cout: usize, win: Window) -> Act<f64> {
        let ho = win.output_size(x.height);
        let wo = win.output_size(x.width);
        let mut y = Act::zeros(cout, x.batch, ho, wo);
        for co in 0..cout {
            for bi in 0..x.batch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = bias[co];
                        for ci in 0..x.channels {
                            for ky in 0..win.k {
                                for kx in 0..win.k {
                                    let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                                    let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.height && (ix as usize) < x.width {
                                        let xv = x.data[((ci * x.batch + bi) * x.height + iy as usize) * x.width + ix as usize];
                                        s += xv * wt[((co * x.channels + ci) * win.k + ky) * win.k + kx];
                                    }
                                }
                            }
                        }
                        y.data[((co * x.batch + bi) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        for win in [Window { k: 5, stride: 2, pad: 2 }, Window { k: 5, stride: 1, pad: 2 }, Window { k: 7, stride: 1, pad: 0 }] {
            let x = ramp(3, 2, 8, 8);
            let cout = 4;
            let wt: Vec<f64> = (0..cout * 3 * win.k * win.k).map(|i| ((i * 13 % 17) as f64 - 8.0) / 10.0).collect();
            let bias = vec![0.1, -0.2, 0.3, 0.0];
            let (y, _) = conv_forward(&x, &wt, &bias, cout, win, false);
            let want = direct_conv(&x, &wt, &bias, cout, win);
            assert_eq!((y.height, y.width), (want.height, want.width));
            assert!(y.data.iter().zip(&want.data).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn transposed_conv_doubles_size() {
        let win = Window { k: 3, stride: 2, pad: 1 };
        let x = ramp(2, 1, 4, 4);
        let wt: Vec<f64> = (0..2 * 3 * 9).map(|i| i as f64 / 54.0).collect();
        let y = conv_transpose_forward(&x, &wt, &[0.0; 3], 3, win, 8, 8);
        assert_eq!((y.channels, y.height, y.width), (3, 8, 8));

        // adjoint identity: <convT(x), z> = <x, conv(z)> with shared weights
        let z = ramp(3, 1, 8, 8);
        // conv from 3 channels to 2 reads weight [2, 3·9], the same buffer as [cin=2, cout·9]
        let (cz, _) = conv_forward(&z, &wt, &[0.0; 2], 2, win, false);
        let lhs: f64 = y.data.iter().zip(&z.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&cz.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let win = Window { k: 5, stride: 2, pad: 2 };
        let x = ramp(2, 2, 9, 9);
        let (ho, wo) = (win.output_size(9), win.output_size(9));
        let col = im2col(&x, win, ho, wo);
        let r: Vec<f64> = (0..col.len()).map(|i| ((i * 7 % 23) as f64) / 23.0).collect();
        let mut back = Act::zeros(2, 2, 9, 9);
        col2im(&r, &mut back, win, ho, wo);
        let lhs: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn concat_and_split_invert() {
        let a = ramp(2, 3, 4, 4);
        let b = ramp(1, 3, 4, 4);
        let (a2, b2) = a.clone().concat(&b).split_channels(2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn sigmoid_stays_open() {
        assert_eq!(sigmoid(0.0f32), 0.5);
        assert!(sigmoid(100.0f32) < 1.0);
        assert!(sigmoid(-200.0f32) > 0.0);
        assert!(sigmoid(40.0f64) < 1.0);
    }

    #[test]
    fn dropout_rate_and_scale() {
        let mut x = vec![1.0f64; 100_000];
        let mask = dropout(&mut x, 0.1, &mut rng::seeded(2));
        let dropped = mask.iter().filter(|&&m| m == 0.0).count() as f64 / mask.len() as f64;
        assert!((dropped - 0.1).abs() < 0.01);
        let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
        assert!((mean - 1.0).abs() < 0.02);
    }
}
