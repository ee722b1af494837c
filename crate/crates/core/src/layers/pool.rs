use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unpadded max pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel_size: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(kernel_size: usize, stride: usize) -> Self {
        PoolSpec { kernel_size, stride }
    }

    pub fn output_extent(&self, input: usize) -> Result<usize> {
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::InvalidShape(format!(
                "pool kernel and stride must be >= 1 (got {} and {})",
                self.kernel_size, self.stride
            )));
        }
        if self.kernel_size > input {
            return Err(Error::InvalidShape(format!(
                "pool window {} larger than input extent {input}",
                self.kernel_size
            )));
        }
        Ok((input - self.kernel_size) / self.stride + 1)
    }

    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        Ok([
            self.output_extent(input[0])?,
            self.output_extent(input[1])?,
            self.output_extent(input[2])?,
        ])
    }
}

/// Windowed maximum over `(N, C, D, H, W)`.
///
/// Returns the pooled tensor and, per output element, the flat input offset of
/// the winner. Ties go to the first element in row-major scan order.
pub fn maxpool3d(input: &Tensor, spec: &PoolSpec) -> Result<(Tensor, Vec<usize>)> {
    let shape = input.shape();
    if shape.len() != 5 {
        return Err(Error::InvalidShape(format!(
            "maxpool3d expects (N, C, D, H, W), got {shape:?}"
        )));
    }
    let full = [shape[2], shape[3], shape[4]];
    let [od, oh, ow] = spec.output_extents(full)?;
    let planes = shape[0] * shape[1];
    let plane_len: usize = full.iter().product();
    let k = spec.kernel_size;
    let s = spec.stride;
    let data = input.data();
    let mut out = Vec::with_capacity(planes * od * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for p in 0..planes {
        let base = p * plane_len;
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for dz in 0..k {
                        for dy in 0..k {
                            let row = base + ((z * s + dz) * full[1] + y * s + dy) * full[2] + x * s;
                            for dx in 0..k {
                                let v = data[row + dx];
                                if best_at == usize::MAX || v > best {
                                    best = v;
                                    best_at = row + dx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    let out = Tensor::new(vec![shape[0], shape[1], od, oh, ow], out)?;
    out.check_finite("maxpool3d")?;
    Ok((out, argmax))
}

impl Graph {
    pub fn maxpool3d(&mut self, input: Var, spec: PoolSpec) -> Result<Var> {
        let (out, argmax) = maxpool3d(self.value(input), &spec)?;
        Ok(self.push(out, Op::MaxPool3d { input, argmax }))
    }

    /// Winner offsets recorded by a max-pool node.
    pub fn pool_argmax(&self, v: Var) -> Option<&[usize]> {
        match self.op(v) {
            Op::MaxPool3d { argmax, .. } => Some(argmax),
            _ => None,
        }
    }
}
