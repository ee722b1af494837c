//! 3D convolution (cross-correlation orientation, no kernel flip).
//!
//! With learned kernels, convolution and cross-correlation differ only by a
//! flip of the kernel; the unflipped form is used everywhere, including LRP.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv3dSpec {
    pub fn valid(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Conv3dSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            padding: 0,
        }
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let k = self.kernel_size;
        [self.out_channels, self.in_channels, k, k, k]
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size.pow(3) + self.out_channels
    }

    /// Output extent along one axis, or an error when it would be < 1.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::InvalidShape(format!(
                "kernel size and stride must be >= 1 (got {} and {})",
                self.kernel_size, self.stride
            )));
        }
        let padded = input + 2 * self.padding;
        if padded < self.kernel_size {
            return Err(Error::InvalidShape(format!(
                "conv3d kernel {} does not fit padded extent {padded}",
                self.kernel_size
            )));
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }

    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        Ok([
            self.output_extent(input[0])?,
            self.output_extent(input[1])?,
            self.output_extent(input[2])?,
        ])
    }
}

/// Resolved sizes of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn resolve(input_shape: &[usize], spec: &Conv3dSpec) -> Result<Self> {
        if input_shape.len() != 5 {
            return Err(Error::InvalidShape(format!(
                "conv3d expects (N, C, D, H, W) input, got {input_shape:?}"
            )));
        }
        if input_shape[1] != spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv3d channels",
                expected: vec![spec.in_channels],
                actual: vec![input_shape[1]],
            });
        }
        let input = [input_shape[2], input_shape[3], input_shape[4]];
        Ok(ConvDims {
            batch: input_shape[0],
            in_ch: spec.in_channels,
            out_ch: spec.out_channels,
            input,
            output: spec.output_extents(input)?,
            k: spec.kernel_size,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    pub fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.out_ch,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    /// Output index range `[lo, hi)` along `axis` whose input tap `kk` lies in bounds.
    #[inline]
    pub fn valid_range(&self, axis: usize, kk: usize) -> (usize, usize) {
        let (n_in, n_out) = (self.input[axis], self.output[axis]);
        let lo = if self.pad > kk {
            (self.pad - kk).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if n_in + self.pad > kk {
            ((n_in - 1 + self.pad - kk) / self.stride + 1).min(n_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Input coordinate of output `o` at tap `kk`; only valid inside `valid_range`.
    #[inline]
    pub fn tap(&self, o: usize, kk: usize) -> usize {
        o * self.stride + kk - self.pad
    }
}

/// Input coordinate of output `o` at tap `kk` along `axis`, if in bounds.
#[inline]
fn tap_in(dims: &ConvDims, axis: usize, o: usize, kk: usize) -> Option<usize> {
    let i = (o * dims.stride + kk).checked_sub(dims.pad)?;
    (i < dims.input[axis]).then_some(i)
}

/// Valid output range along the width axis for every kernel column.
fn width_ranges(dims: &ConvDims) -> Vec<(usize, usize)> {
    (0..dims.k).map(|kw| dims.valid_range(2, kw)).collect()
}

/// Accumulates every tap of one output row before moving on, so the row stays
/// in cache. Per output voxel the summation order is channel, then kernel
/// depth, height, width.
pub(crate) fn forward_raw(dims: &ConvDims, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let k = dims.k;
    let k3 = k * k * k;
    let [_, ih, iw] = dims.input;
    let [od, oh, ow] = dims.output;
    let in_vol = dims.in_volume();
    let out_vol = dims.out_volume();
    let stride = dims.stride;
    let xr = width_ranges(dims);
    for n in 0..dims.batch {
        for o in 0..dims.out_ch {
            let out_block = &mut out[(n * dims.out_ch + o) * out_vol..][..out_vol];
            out_block.fill(bias[o]);
            for c in 0..dims.in_ch {
                let in_block = &input[(n * dims.in_ch + c) * in_vol..][..in_vol];
                let w_block = &weight[(o * dims.in_ch + c) * k3..][..k3];
                for z in 0..od {
                    for y in 0..oh {
                        let dst = &mut out_block[(z * oh + y) * ow..][..ow];
                        for kd in 0..k {
                            let Some(iz) = tap_in(dims, 0, z, kd) else { continue };
                            for kh in 0..k {
                                let Some(iy) = tap_in(dims, 1, y, kh) else { continue };
                                let src = &in_block[(iz * ih + iy) * iw..][..iw];
                                let w_row = &w_block[(kd * k + kh) * k..][..k];
                                for (kw, &wv) in w_row.iter().enumerate() {
                                    let (x_lo, x_hi) = xr[kw];
                                    if x_lo >= x_hi {
                                        continue;
                                    }
                                    let ix = dims.tap(x_lo, kw);
                                    let d = &mut dst[x_lo..x_hi];
                                    if stride == 1 {
                                        for (dv, &sv) in d.iter_mut().zip(&src[ix..ix + x_hi - x_lo]) {
                                            *dv += wv * sv;
                                        }
                                    } else {
                                        for (i, dv) in d.iter_mut().enumerate() {
                                            *dv += wv * src[ix + i * stride];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn backward_raw(
    dims: &ConvDims,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> ConvGrads {
    let k = dims.k;
    let k3 = k * k * k;
    let [_, ih, iw] = dims.input;
    let [od, oh, ow] = dims.output;
    let in_vol = dims.in_volume();
    let out_vol = dims.out_volume();
    let stride = dims.stride;
    let xr = width_ranges(dims);
    let mut g_in = need_input.then(|| vec![0.0; input.len()]);
    let mut g_w = vec![0.0; weight.len()];
    let mut g_b = vec![0.0; dims.out_ch];
    for n in 0..dims.batch {
        for o in 0..dims.out_ch {
            let go_block = &grad_out[(n * dims.out_ch + o) * out_vol..][..out_vol];
            g_b[o] += go_block.iter().sum::<f64>();
            for c in 0..dims.in_ch {
                let in_off = (n * dims.in_ch + c) * in_vol;
                let in_block = &input[in_off..][..in_vol];
                let w_off = (o * dims.in_ch + c) * k3;
                for z in 0..od {
                    for y in 0..oh {
                        let go = &go_block[(z * oh + y) * ow..][..ow];
                        for kd in 0..k {
                            let Some(iz) = tap_in(dims, 0, z, kd) else { continue };
                            for kh in 0..k {
                                let Some(iy) = tap_in(dims, 1, y, kh) else { continue };
                                let row_off = (iz * ih + iy) * iw;
                                let src = &in_block[row_off..][..iw];
                                for (kw, &(x_lo, x_hi)) in xr.iter().enumerate() {
                                    if x_lo >= x_hi {
                                        continue;
                                    }
                                    let widx = w_off + (kd * k + kh) * k + kw;
                                    let ix = dims.tap(x_lo, kw);
                                    let g = &go[x_lo..x_hi];
                                    let mut acc = 0.0;
                                    if stride == 1 {
                                        for (&gv, &sv) in g.iter().zip(&src[ix..ix + g.len()]) {
                                            acc += gv * sv;
                                        }
                                    } else {
                                        for (i, &gv) in g.iter().enumerate() {
                                            acc += gv * src[ix + i * stride];
                                        }
                                    }
                                    g_w[widx] += acc;
                                    if let Some(g_in) = g_in.as_mut() {
                                        let wv = weight[widx];
                                        let gi = &mut g_in[in_off + row_off..][..iw];
                                        if stride == 1 {
                                            for (d, &gv) in gi[ix..ix + g.len()].iter_mut().zip(g) {
                                                *d += wv * gv;
                                            }
                                        } else {
                                            for (i, &gv) in g.iter().enumerate() {
                                                gi[ix + i * stride] += wv * gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: g_in,
        weight: g_w,
        bias: g_b,
    }
}

fn check_params(spec: &Conv3dSpec, weight: &Tensor, bias: &Tensor) -> Result<()> {
    if weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv3d weight",
            expected: spec.weight_shape().to_vec(),
            actual: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::ShapeMismatch {
            op: "conv3d bias",
            expected: vec![spec.out_channels],
            actual: bias.shape().to_vec(),
        });
    }
    Ok(())
}

/// Eager convolution of `(N, C, D, H, W)` input.
pub fn conv3d(input: &Tensor, spec: &Conv3dSpec, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_params(spec, weight, bias)?;
    let dims = ConvDims::resolve(input.shape(), spec)?;
    let shape = dims.output_shape();
    let mut out = vec![0.0; shape.iter().product()];
    forward_raw(&dims, input.data(), weight.data(), bias.data(), &mut out);
    let out = Tensor::new(shape, out)?;
    out.check_finite("conv3d")?;
    Ok(out)
}

impl Graph {
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, spec: Conv3dSpec) -> Result<Var> {
        let out = conv3d(self.value(input), &spec, self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Conv3d { input, weight, bias, spec }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_all_ones_kernel() {
        let spec = Conv3dSpec::valid(1, 1, 3);
        let input = Tensor::full(&[1, 1, 5, 5, 5], 2.0);
        let w = Tensor::full(&[1, 1, 3, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let out = conv3d(&input, &spec, &w, &b).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 54.0));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let spec = Conv3dSpec::valid(2, 2, 1);
        let data: Vec<f64> = (0..2 * 27).map(|i| i as f64 * 0.5 - 3.0).collect();
        let input = Tensor::new(vec![1, 2, 3, 3, 3], data).unwrap();
        let w = Tensor::new(vec![2, 2, 1, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = conv3d(&input, &spec, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn channel_mismatch_and_empty_output_are_errors() {
        let spec = Conv3dSpec::valid(2, 1, 3);
        let input = Tensor::zeros(&[1, 1, 4, 4, 4]);
        let w = Tensor::zeros(&[1, 2, 3, 3, 3]);
        assert!(matches!(
            conv3d(&input, &spec, &w, &Tensor::zeros(&[1])),
            Err(Error::ShapeMismatch { .. })
        ));
        let spec = Conv3dSpec::valid(1, 1, 5);
        let input = Tensor::zeros(&[1, 1, 4, 4, 4]);
        let w = Tensor::zeros(&[1, 1, 5, 5, 5]);
        assert!(matches!(
            conv3d(&input, &spec, &w, &Tensor::zeros(&[1])),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn padding_and_stride_extents() {
        let spec = Conv3dSpec {
            in_channels: 1,
            out_channels: 1,
            kernel_size: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!(spec.output_extent(7).unwrap(), 4);
        assert_eq!(spec.output_extent(1).unwrap(), 1);
    }
}
