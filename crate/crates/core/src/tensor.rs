//! Dense CHW feature maps and the two kernels the scorer needs: convolution
//! and ReLU.
//!
//! Layout is channel-major, then rows, then columns:
//! `data[(c * height + y) * width + x]`.
//!
//! Convolution lowers each group to im2col followed by a small blocked GEMM.
//! Every output element is accumulated over `(input channel, ky, kx)` in that
//! order, sequentially, so results are bit-identical run to run.

use crate::rng::SeededRng;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("data length {len} does not match {channels}x{height}x{width}")]
    Length { len: usize, channels: usize, height: usize, width: usize },
    #[error("input has {found} channels, weights expect {expected}")]
    Channels { expected: usize, found: usize },
    #[error("kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("invalid grouping: {groups} groups for {cin} -> {cout} channels")]
    Groups { groups: usize, cin: usize, cout: usize },
    #[error("stride must be positive")]
    ZeroStride,
    #[error("feature maps differ in shape")]
    Mismatch,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if data.len() != channels * height * width {
            return Err(ShapeError::Length { len: data.len(), channels, height, width });
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &FeatureMap) -> Result<(), ShapeError> {
        if self.shape() != other.shape() {
            return Err(ShapeError::Mismatch);
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// Divides every element by `gamma`.
    pub fn scale_down(&mut self, gamma: f64) {
        let g = gamma as f32;
        for v in &mut self.data {
            *v /= g;
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Sum of squares, accumulated in f64.
    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }

    /// Population mean and (biased) variance over all elements, in f64.
    pub fn mean_variance(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = f64::from(v) - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        (mean, var)
    }
}

/// Image of i.i.d. standard normal noise.
pub fn gaussian_input(channels: usize, height: usize, width: usize, rng: &mut SeededRng) -> FeatureMap {
    let mut map = FeatureMap::zeros(channels, height, width);
    rng.fill_normal(&mut map.data);
    map
}

/// Convolution weights, laid out `[out][in / groups][ky][kx]`. Bias is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    groups: usize,
    data: Vec<f32>,
}

impl ConvWeights {
    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        groups: usize,
        data: Vec<f32>,
    ) -> Result<Self, ShapeError> {
        if kernel % 2 == 0 {
            return Err(ShapeError::EvenKernel(kernel));
        }
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(ShapeError::Groups { groups, cin: in_channels, cout: out_channels });
        }
        let expected = out_channels * (in_channels / groups) * kernel * kernel;
        if data.len() != expected {
            return Err(ShapeError::Length {
                len: data.len(),
                channels: out_channels,
                height: in_channels / groups,
                width: kernel * kernel,
            });
        }
        Ok(ConvWeights { out_channels, in_channels, kernel, groups, data })
    }

    /// Weights drawn i.i.d. from N(0, 1).
    pub fn gaussian(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        groups: usize,
        rng: &mut SeededRng,
    ) -> Result<Self, ShapeError> {
        let len = out_channels * (in_channels / groups.max(1)) * kernel * kernel;
        let mut data = vec![0.0; len];
        rng.fill_normal(&mut data);
        Self::from_vec(out_channels, in_channels, kernel, groups, data)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

// Output columns processed per tile; keeps a tile of the im2col matrix in cache.
const COL_TILE: usize = 128;

/// Cross-correlation with "same" padding (`kernel / 2` on each side); output
/// size is `ceil(in / stride)` in both dimensions.
pub fn conv2d(x: &FeatureMap, w: &ConvWeights, stride: usize) -> Result<FeatureMap, ShapeError> {
    if stride == 0 {
        return Err(ShapeError::ZeroStride);
    }
    if x.channels != w.in_channels {
        return Err(ShapeError::Channels { expected: w.in_channels, found: x.channels });
    }
    let k = w.kernel;
    let oh = x.height.div_ceil(stride);
    let ow = x.width.div_ceil(stride);
    let positions = oh * ow;
    let cin_g = w.in_channels / w.groups;
    let cout_g = w.out_channels / w.groups;
    let rows = cin_g * k * k;
    let mut out = FeatureMap::zeros(w.out_channels, oh, ow);

    let direct = k == 1 && stride == 1;
    let mut cols = if direct { Vec::new() } else { vec![0f32; rows * positions] };
    for g in 0..w.groups {
        let input = &x.data[g * cin_g * x.height * x.width..(g + 1) * cin_g * x.height * x.width];
        let cols: &[f32] = if direct {
            input
        } else {
            im2col(input, cin_g, x.height, x.width, k, stride, oh, ow, &mut cols);
            &cols
        };
        let weights = &w.data[g * cout_g * rows..(g + 1) * cout_g * rows];
        let output = &mut out.data[g * cout_g * positions..(g + 1) * cout_g * positions];
        gemm(weights, cols, output, cout_g, rows, positions);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f32],
) {
    let pad = k / 2;
    let positions = oh * ow;
    for c in 0..channels {
        let plane = &input[c * height * width..(c + 1) * height * width];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * positions..][..positions];
                for oy in 0..oh {
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= height as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * width..(iy as usize + 1) * width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix >= 0 && ix < width as isize { src[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

/// `out[m][p] += Σ_j a[m][j] * b[j][p]`, summing over `j` in increasing order.
fn gemm(a: &[f32], b: &[f32], out: &mut [f32], m: usize, inner: usize, n: usize) {
    let mut start = 0;
    while start < n {
        let end = (start + COL_TILE).min(n);
        let mut mi = 0;
        while mi + 4 <= m {
            let (r0, rest) = out[mi * n..(mi + 4) * n].split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            let (o0, o1, o2, o3) = (&mut r0[start..end], &mut r1[start..end], &mut r2[start..end], &mut r3[start..end]);
            let a0 = &a[mi * inner..(mi + 1) * inner];
            let a1 = &a[(mi + 1) * inner..(mi + 2) * inner];
            let a2 = &a[(mi + 2) * inner..(mi + 3) * inner];
            let a3 = &a[(mi + 3) * inner..(mi + 4) * inner];
            for j in 0..inner {
                let (w0, w1, w2, w3) = (a0[j], a1[j], a2[j], a3[j]);
                let col = &b[j * n + start..j * n + end];
                let len = col.len();
                let (o0, o1, o2, o3) = (&mut o0[..len], &mut o1[..len], &mut o2[..len], &mut o3[..len]);
                for p in 0..len {
                    let v = col[p];
                    o0[p] += w0 * v;
                    o1[p] += w1 * v;
                    o2[p] += w2 * v;
                    o3[p] += w3 * v;
                }
            }
            mi += 4;
        }
        while mi < m {
            let o = &mut out[mi * n + start..mi * n + end];
            let row = &a[mi * inner..(mi + 1) * inner];
            for (j, &w) in row.iter().enumerate() {
                let col = &b[j * n + start..j * n + end];
                for (o, &v) in o.iter_mut().zip(col) {
                    *o += w * v;
                }
            }
            mi += 1;
        }
        start = end;
    }
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub fn relu_in_place(x: &mut FeatureMap) {
    for v in &mut x.data {
        *v = v.max(0.0);
    }
}
