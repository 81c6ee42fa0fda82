//! 2x2 spatial max pooling over `(maps, x, y, z)` tensors, the matching
//! switch-based unpooling, and nearest-neighbour upsampling.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Pooled values plus, for every pooled cell, the flat input index that
/// held the window maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolRecord<T: Scalar = f32> {
    pub output: Tensor<T>,
    pub argmax_indices: Vec<usize>,
    pub input_shape: Vec<usize>,
}

pub fn pooled_shape(shape: &[usize]) -> Vec<usize> {
    vec![shape[0], shape[1].div_ceil(2), shape[2].div_ceil(2), shape[3]]
}

/// Max over each 2x2 spatial window; the spectral axis is untouched.
/// Windows that overhang an odd extent treat the missing cells as `-inf`.
/// Ties resolve to the lowest flat index.
pub fn maxpool3d<T: Scalar>(input: &Tensor<T>) -> Result<PoolRecord<T>> {
    input.expect_rank("maxpool3d", 4)?;
    let s = input.shape();
    let (c, nx, ny, nz) = (s[0], s[1], s[2], s[3]);
    let out_shape = pooled_shape(s);
    let (ox, oy) = (out_shape[1], out_shape[2]);
    let data = input.data();
    let mut values = Vec::with_capacity(c * ox * oy * nz);
    let mut argmax = Vec::with_capacity(values.capacity());
    for ch in 0..c {
        for x in 0..ox {
            for y in 0..oy {
                for z in 0..nz {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for dx in 0..2 {
                        let sx = 2 * x + dx;
                        if sx >= nx {
                            continue;
                        }
                        for dy in 0..2 {
                            let sy = 2 * y + dy;
                            if sy >= ny {
                                continue;
                            }
                            let idx = ((ch * nx + sx) * ny + sy) * nz + z;
                            if best_idx == usize::MAX || data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    values.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok(PoolRecord {
        output: Tensor::new(out_shape, values)?,
        argmax_indices: argmax,
        input_shape: s.to_vec(),
    })
}

impl<T: Scalar> PoolRecord<T> {
    /// Checks that each stored index lies inside its own pooling window.
    pub fn validate(&self) -> Result<()> {
        let s = &self.input_shape;
        if s.len() != 4 || self.output.shape() != pooled_shape(s).as_slice() {
            return Err(Error::Corrupt("pool record shapes disagree".into()));
        }
        if self.argmax_indices.len() != self.output.len() {
            return Err(Error::Corrupt("pool record index count".into()));
        }
        let (nx, ny, nz) = (s[1], s[2], s[3]);
        let o = self.output.shape();
        let (ox, oy) = (o[1], o[2]);
        for (k, &idx) in self.argmax_indices.iter().enumerate() {
            let z = k % nz;
            let y = (k / nz) % oy;
            let x = (k / (nz * oy)) % ox;
            let ch = k / (nz * oy * ox);
            let iz = idx % nz;
            let iy = (idx / nz) % ny;
            let ix = (idx / (nz * ny)) % nx;
            let ic = idx / (nz * ny * nx);
            if ic != ch || iz != z || ix / 2 != x || iy / 2 != y || idx >= s.iter().product() {
                return Err(Error::Corrupt(format!(
                    "argmax index {idx} outside pooling window of cell {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Places each value at its recorded argmax location; zeros elsewhere.
/// Also the gradient of [`maxpool3d`] with respect to its input.
pub fn unpool3d<T: Scalar>(record: &PoolRecord<T>, values: &Tensor<T>) -> Result<Tensor<T>> {
    values.expect_shape("unpool3d", record.output.shape())?;
    record.validate()?;
    let mut out = Tensor::zeros(record.input_shape.clone());
    let data = out.data_mut();
    for (&idx, &v) in record.argmax_indices.iter().zip(values.data()) {
        data[idx] = v;
    }
    Ok(out)
}

/// Gradient of [`unpool3d`] with respect to the pooled values.
pub fn unpool3d_backward<T: Scalar>(record: &PoolRecord<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape("unpool3d_backward", &record.input_shape)?;
    let g = grad_out.data();
    let values = record.argmax_indices.iter().map(|&i| g[i]).collect();
    Tensor::new(record.output.shape(), values)
}

/// Replicates each coarse cell over the 2x2 window it pooled, cropping to
/// `fine_shape` when the fine extent is odd.
pub fn upsample_nearest<T: Scalar>(coarse: &Tensor<T>, fine_shape: &[usize]) -> Result<Tensor<T>> {
    coarse.expect_shape("upsample_nearest", &pooled_shape(fine_shape))?;
    let (c, nx, ny, nz) = (fine_shape[0], fine_shape[1], fine_shape[2], fine_shape[3]);
    let oy = coarse.shape()[2];
    let src = coarse.data();
    let mut out = Vec::with_capacity(c * nx * ny * nz);
    for ch in 0..c {
        for x in 0..nx {
            for y in 0..ny {
                let base = ((ch * coarse.shape()[1] + x / 2) * oy + y / 2) * nz;
                out.extend_from_slice(&src[base..base + nz]);
            }
        }
    }
    Tensor::new(fine_shape, out)
}

/// Adjoint of [`upsample_nearest`]: sums each window back into its cell.
pub fn upsample_nearest_adjoint<T: Scalar>(fine: &Tensor<T>) -> Result<Tensor<T>> {
    fine.expect_rank("upsample_nearest_adjoint", 4)?;
    let s = fine.shape();
    let (c, nx, ny, nz) = (s[0], s[1], s[2], s[3]);
    let cs = pooled_shape(s);
    let (ox, oy) = (cs[1], cs[2]);
    let mut acc = vec![0.0f64; c * ox * oy * nz];
    let src = fine.data();
    for ch in 0..c {
        for x in 0..nx {
            for y in 0..ny {
                let dst = ((ch * ox + x / 2) * oy + y / 2) * nz;
                let from = ((ch * nx + x) * ny + y) * nz;
                for z in 0..nz {
                    acc[dst + z] += src[from + z].to_f64();
                }
            }
        }
    }
    Tensor::new(cs, crate::tensor::store(acc))
}
